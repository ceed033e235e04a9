//! Dense condensed Gauss-Newton step via forward sensitivities. Works for any
//! disturbance structure; used for non-additive models and as a reference.

use nalgebra::Cholesky;

use crate::linalg::{Matrix, Vector};

use super::residuals::WindowLinearization;

/// Stacked residual and its Jacobian with respect to `(x_0, w_0, ..., w_{N-1})`.
pub fn condensed_jacobian(lin: &WindowLinearization) -> (Vector, Matrix) {
    let n_h = lin.horizon();
    let n = lin.stages[0].jx.ncols();
    let q = lin.stages[0].jw.ncols();
    let cols = n + n_h * q;
    let mut rows: Vec<(Vector, Matrix)> = Vec::new();
    let mut sens = Matrix::zeros(n, cols);
    sens.view_mut((0, 0), (n, n)).fill_with_identity();
    if let Some((rp, lp)) = &lin.prior {
        rows.push((rp.clone(), lp * &sens));
    }
    for (j, st) in lin.stages.iter().enumerate() {
        rows.push((st.rx.clone(), &st.jx * &sens));
        if j < n_h {
            let mut jw = Matrix::zeros(st.rw.len(), cols);
            jw.view_mut((0, n + j * q), (st.rw.len(), q)).copy_from(&st.jw);
            rows.push((st.rw.clone(), jw));
            let mut next = &st.a * &sens;
            let mut cols_w = next.view_mut((0, n + j * q), (n, q));
            cols_w += &st.e;
            sens = next;
        }
    }
    let total: usize = rows.iter().map(|(r, _)| r.len()).sum();
    let mut r = Vector::zeros(total);
    let mut jac = Matrix::zeros(total, cols);
    let mut at = 0;
    for (ri, ji) in rows {
        r.rows_mut(at, ri.len()).copy_from(&ri);
        jac.view_mut((at, 0), (ri.len(), cols)).copy_from(&ji);
        at += ri.len();
    }
    (r, jac)
}

pub fn step(lin: &WindowLinearization, lambda: f64) -> Option<(Vector, Vec<Vector>)> {
    let n_h = lin.horizon();
    let n = lin.stages[0].jx.ncols();
    let q = lin.stages[0].jw.ncols();
    let (r, jac) = condensed_jacobian(lin);
    let mut h = jac.tr_mul(&jac);
    for i in 0..h.nrows() {
        h[(i, i)] += lambda;
    }
    let d = Cholesky::new(h)?.solve(&(-jac.tr_mul(&r)));
    let dx0 = d.rows(0, n).into_owned();
    let dw = (0..n_h).map(|j| d.rows(n + j * q, q).into_owned()).collect();
    Some((dx0, dw))
}
