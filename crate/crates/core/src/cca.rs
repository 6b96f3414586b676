//! Canonical correlation analysis restricted to one subnetwork.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::association::StudyData;
use crate::error::{MoatError, Result};
use crate::graph::Subnetwork;

/// Default ridge, as a fraction of the mean within-set variance.
pub const DEFAULT_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaResult {
    /// Canonical correlations, descending.
    pub correlations: Vec<f64>,
    /// One column of predictor weights per canonical pair (`weights[pair][var]`).
    pub x_weights: Vec<Vec<f64>>,
    pub y_weights: Vec<Vec<f64>>,
    pub k: usize,
    pub predictor_names: Vec<String>,
    /// 1-based region pairs of the outcome columns.
    pub edge_pairs: Vec<(usize, usize)>,
}

/// Residualizes `m` against `[1, eta]`.
fn residualize(m: &DMatrix<f64>, eta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    let c = DMatrix::from_fn(d, eta.ncols() + 1, |r, j| {
        if j == 0 {
            1.0
        } else {
            eta[(r, j - 1)]
        }
    });
    let qr = c.qr();
    let r = qr.r();
    if (0..r.ncols()).any(|i| r[(i, i)].abs() < 1e-10 * (d as f64).sqrt()) {
        return Err(MoatError::SingularDesign {
            columns: vec!["confounders".into()],
        });
    }
    let q = qr.q();
    let proj = q.tr_mul(m);
    Ok(m - q * proj)
}

/// `S^{-1/2}` of a symmetric positive definite matrix.
fn inverse_sqrt(s: &DMatrix<f64>, which: &str, ridge: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(s.clone());
    let max = eig.eigenvalues.max().max(0.0);
    let min = eig.eigenvalues.min();
    if !(min > 1e-12 * max) || max == 0.0 {
        let hint = if ridge == 0.0 {
            "; use a ridge > 0"
        } else {
            ""
        };
        return Err(MoatError::SingularCovariance(format!(
            "{which} covariance is rank deficient (eigenvalues {min:.3e} .. {max:.3e}){hint}"
        )));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

fn regularize(mut s: DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    if ridge > 0.0 {
        let shift = ridge * s.trace() / s.nrows() as f64;
        for i in 0..s.nrows() {
            s[(i, i)] += shift;
        }
    }
    s
}

/// CCA between two already-aligned sets, after residualizing both against
/// `[1, eta]`. `ridge` is added to each within-set covariance diagonal,
/// scaled by that set's mean variance.
pub fn cca(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    eta: &DMatrix<f64>,
    k: usize,
    ridge: f64,
) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let d = x.nrows();
    let (p, q) = (x.ncols(), y.ncols());
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(MoatError::Config(format!(
            "ridge = {ridge} must be finite and >= 0"
        )));
    }
    if k == 0 || k > p.min(q) {
        return Err(MoatError::Config(format!(
            "k = {k} must lie in 1..={} for {p} x {q} sets",
            p.min(q)
        )));
    }
    if ridge == 0.0 && d <= p + q {
        return Err(MoatError::InsufficientData(format!(
            "{d} subjects for {p} + {q} variables; unregularized CCA needs more subjects than variables"
        )));
    }
    if d < 10 {
        return Err(MoatError::InsufficientData(format!(
            "{d} subjects; CCA needs at least 10"
        )));
    }
    let xr = residualize(x, eta)?;
    let yr = residualize(y, eta)?;
    let scale = 1.0 / (d as f64 - 1.0);
    let sxx = regularize(xr.tr_mul(&xr) * scale, ridge);
    let syy = regularize(yr.tr_mul(&yr) * scale, ridge);
    let sxy = xr.tr_mul(&yr) * scale;
    let wx = inverse_sqrt(&sxx, "predictor", ridge)?;
    let wy = inverse_sqrt(&syy, "outcome", ridge)?;
    let kmat = &wx * sxy * &wy;
    let svd = kmat.svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let corr: Vec<f64> = order[..k]
        .iter()
        .map(|&i| svd.singular_values[i].min(1.0))
        .collect();
    let xw = DMatrix::from_fn(p, k, |r, c| (&wx * u.column(order[c]))[r]);
    let yw = DMatrix::from_fn(q, k, |r, c| (&wy * vt.row(order[c]).transpose())[r]);
    Ok((corr, xw, yw))
}

/// CCA between the subnetwork's predictors and its outcome edges.
pub fn cca_on_subnetwork(
    data: &StudyData,
    subnet: &Subnetwork,
    k: usize,
    ridge: f64,
) -> Result<CcaResult> {
    if subnet.s_nodes.iter().any(|&s| s >= data.n_predictors())
        || subnet.f_nodes.iter().any(|&e| e >= data.n_edges())
    {
        return Err(MoatError::DimensionMismatch(
            "subnetwork indexes outside the study".into(),
        ));
    }
    let x = data.predictors().select_columns(&subnet.s_nodes);
    let y = data.outcomes().select_columns(&subnet.f_nodes);
    let (correlations, xw, yw) = cca(&x, &y, data.confounders(), k, ridge)?;
    let cols = |m: &DMatrix<f64>| {
        m.column_iter()
            .map(|c| c.iter().copied().collect())
            .collect()
    };
    Ok(CcaResult {
        correlations,
        x_weights: cols(&xw),
        y_weights: cols(&yw),
        k,
        predictor_names: subnet
            .s_nodes
            .iter()
            .map(|&s| data.predictor_names[s].clone())
            .collect(),
        edge_pairs: subnet
            .f_nodes
            .iter()
            .map(|&e| data.index().flat_to_pair(e + 1).expect("valid edge"))
            .collect(),
    })
}
