//! Gauss-Newton/Levenberg-Marquardt step for additive-disturbance models,
//! assembled in state-increment coordinates where the normal equations are
//! block tridiagonal.
//!
//! With `δw_j = δx_{j+1} - A_j δx_j` the condensed step over `(δx_0, δw)` is
//! an invertible change of variables of `(δx_0, ..., δx_N)`, so solving the
//! tridiagonal system gives exactly the condensed step.

use crate::linalg::{BlockTridiagonal, Matrix, NotPositiveDefinite, Vector};

use super::residuals::WindowLinearization;

pub fn assemble(lin: &WindowLinearization, lambda: f64) -> (BlockTridiagonal, Vec<Vector>) {
    let n_h = lin.horizon();
    let n = lin.stages[0].jx.ncols();
    let mut h = BlockTridiagonal::zeros(n_h + 1, n);
    let mut g = vec![Vector::zeros(n); n_h + 1];
    if let Some((rp, lp)) = &lin.prior {
        h.diag[0] += lp.tr_mul(lp);
        g[0] += lp.tr_mul(rp);
    }
    h.diag[0] += Matrix::identity(n, n) * lambda;
    for (j, st) in lin.stages.iter().enumerate() {
        h.diag[j] += st.jx.tr_mul(&st.jx);
        g[j] += st.jx.tr_mul(&st.rx);
        if j < n_h {
            let m = st.jw.tr_mul(&st.jw) + Matrix::identity(n, n) * lambda;
            let mv = st.jw.tr_mul(&st.rw);
            let ma = &m * &st.a;
            h.diag[j + 1] += &m;
            h.diag[j] += st.a.tr_mul(&ma);
            h.sub[j] -= &ma;
            g[j + 1] += &mv;
            g[j] -= st.a.tr_mul(&mv);
        }
    }
    (h, g)
}

/// Returns `(δx_0, δw)`.
pub fn step(lin: &WindowLinearization, lambda: f64) -> Result<(Vector, Vec<Vector>), NotPositiveDefinite> {
    let (h, g) = assemble(lin, lambda);
    let rhs: Vec<Vector> = g.iter().map(|v| -v).collect();
    let dx = h.solve(&rhs)?;
    let dw = (0..lin.horizon())
        .map(|j| &dx[j + 1] - &lin.stages[j].a * &dx[j])
        .collect();
    Ok((dx[0].clone(), dw))
}
