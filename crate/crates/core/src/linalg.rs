//! Small dense helpers and the block-tridiagonal Cholesky solver used by the
//! structured Gauss-Newton steps.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Returns `S` with `S^T S = m`, i.e. `|S e|^2 = e^T m e`, or `None` if `m` is
/// not symmetric positive definite.
pub fn sqrt_factor(m: &Matrix) -> Option<Matrix> {
    if !m.is_square() || !is_symmetric(m, 1e-10) {
        return None;
    }
    Cholesky::new(m.clone()).map(|c| c.l().transpose())
}

pub fn is_symmetric(m: &Matrix, rel_tol: f64) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= rel_tol * scale
}

pub fn is_spd(m: &Matrix) -> bool {
    sqrt_factor(m).is_some()
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn sym_eigenvalues(m: &Matrix) -> Vector {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub fn lambda_max(m: &Matrix) -> f64 {
    sym_eigenvalues(m).max()
}

pub fn lambda_min(m: &Matrix) -> f64 {
    sym_eigenvalues(m).min()
}

pub fn spectral_radius(a: &Matrix) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &Matrix) -> Option<Matrix> {
    Cholesky::new(symmetrize(m)).map(|c| c.inverse())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite {
    pub block: usize,
}

/// Symmetric block-tridiagonal matrix with square diagonal blocks of equal size.
///
/// `sub[j]` is the block at position `(j + 1, j)`; the block at `(j, j + 1)` is
/// its transpose.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    pub diag: Vec<Matrix>,
    pub sub: Vec<Matrix>,
}

/// Cholesky factor of a [`BlockTridiagonal`] matrix: lower block-bidiagonal
/// with lower-triangular diagonal blocks `l[j]` and off-diagonal blocks `c[j]`
/// at `(j + 1, j)`.
#[derive(Debug, Clone)]
pub struct BlockTridiagonalCholesky {
    l: Vec<Cholesky<f64, Dyn>>,
    c: Vec<Matrix>,
}

impl BlockTridiagonal {
    pub fn zeros(blocks: usize, size: usize) -> Self {
        Self {
            diag: vec![Matrix::zeros(size, size); blocks],
            sub: vec![Matrix::zeros(size, size); blocks.saturating_sub(1)],
        }
    }

    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn factor(&self) -> Result<BlockTridiagonalCholesky, NotPositiveDefinite> {
        let mut l = Vec::with_capacity(self.diag.len());
        let mut c = Vec::with_capacity(self.sub.len());
        let mut pivot = self.diag[0].clone();
        for j in 0..self.diag.len() {
            let chol = Cholesky::new(symmetrize(&pivot)).ok_or(NotPositiveDefinite { block: j })?;
            if j + 1 < self.diag.len() {
                // C_j = B_j L_j^{-T}  <=>  L_j C_j^T = B_j^T
                let ct = chol
                    .l_dirty()
                    .solve_lower_triangular(&self.sub[j].transpose())
                    .ok_or(NotPositiveDefinite { block: j })?;
                let cj = ct.transpose();
                pivot = &self.diag[j + 1] - &cj * &ct;
                c.push(cj);
            }
            l.push(chol);
        }
        Ok(BlockTridiagonalCholesky { l, c })
    }

    pub fn solve(&self, rhs: &[Vector]) -> Result<Vec<Vector>, NotPositiveDefinite> {
        Ok(self.factor()?.solve(rhs))
    }

    pub fn to_dense(&self) -> Matrix {
        let k = self.diag.len();
        let s = self.diag[0].nrows();
        let mut m = Matrix::zeros(k * s, k * s);
        for j in 0..k {
            m.view_mut((j * s, j * s), (s, s)).copy_from(&self.diag[j]);
            if j + 1 < k {
                m.view_mut(((j + 1) * s, j * s), (s, s)).copy_from(&self.sub[j]);
                m.view_mut((j * s, (j + 1) * s), (s, s))
                    .copy_from(&self.sub[j].transpose());
            }
        }
        m
    }
}

impl BlockTridiagonalCholesky {
    pub fn solve(&self, rhs: &[Vector]) -> Vec<Vector> {
        let k = self.l.len();
        let mut z: Vec<Vector> = Vec::with_capacity(k);
        for j in 0..k {
            let mut b = rhs[j].clone();
            if j > 0 {
                b -= &self.c[j - 1] * &z[j - 1];
            }
            let lj = self.l[j].l_dirty();
            z.push(lj.solve_lower_triangular(&b).expect("nonsingular factor"));
        }
        let mut x = z;
        for j in (0..k).rev() {
            let mut b = x[j].clone();
            if j + 1 < k {
                b -= self.c[j].transpose() * &x[j + 1];
            }
            let lj = self.l[j].l_dirty();
            x[j] = lj.tr_solve_lower_triangular(&b).expect("nonsingular factor");
        }
        x
    }
}
