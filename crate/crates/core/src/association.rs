//! Mass-univariate association scan: one confounder-adjusted least-squares fit
//! per (predictor, outcome edge) pair, summarized as a score matrix.
//!
//! The batched path factorizes the confounder block `[1, eta]` once, projects
//! it out of every predictor and outcome column, and then reads every pair's
//! slope, t statistic and p-value off a single cross-product matrix. This is
//! algebraically identical to fitting `y ~ 1 + x + eta` for each pair
//! (Frisch-Waugh-Lovell).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{MoatError, Result};
use crate::graph::RegionPairIndex;

/// Ceiling for `-ln p` when the fit is exact and the p-value is zero.
pub const NEG_LOG_P_CEILING: f64 = 745.0;

/// Relative size below which a column's residual norm counts as collinear.
const COLLINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `-log(p)` of the predictor's slope.
    NegLogP,
    /// Absolute t statistic.
    AbsT,
    /// Partial correlation of predictor and outcome given the confounders.
    PartialCorr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Ten,
}

impl LogBase {
    fn ln(self) -> f64 {
        match self {
            LogBase::Natural => 1.0,
            LogBase::Ten => std::f64::consts::LN_10,
        }
    }

    /// `-log_base(p)`.
    pub fn neg_log(self, p: f64) -> f64 {
        -p.ln() / self.ln()
    }
}

/// Per-subject measurements: predictors `X` (D x m), vectorized upper-triangle
/// outcomes `Y` (D x n(n-1)/2, lexicographic edge order) and confounders
/// `eta` (D x P, possibly P = 0).
#[derive(Debug, Clone)]
pub struct StudyData {
    predictors: DMatrix<f64>,
    outcomes: DMatrix<f64>,
    confounders: DMatrix<f64>,
    index: RegionPairIndex,
    pub predictor_names: Vec<String>,
    pub confounder_names: Vec<String>,
}

impl StudyData {
    pub fn new(
        predictors: DMatrix<f64>,
        outcomes: DMatrix<f64>,
        confounders: DMatrix<f64>,
    ) -> Result<Self> {
        let d = predictors.nrows();
        if outcomes.nrows() != d || confounders.nrows() != d {
            return Err(MoatError::DimensionMismatch(format!(
                "row counts differ: predictors {d}, outcomes {}, confounders {}",
                outcomes.nrows(),
                confounders.nrows()
            )));
        }
        if predictors.ncols() == 0 {
            return Err(MoatError::DimensionMismatch("no predictor columns".into()));
        }
        let index = RegionPairIndex::from_edge_count(outcomes.ncols())?;
        for (name, m) in [
            ("predictors", &predictors),
            ("outcomes", &outcomes),
            ("confounders", &confounders),
        ] {
            if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
                return Err(MoatError::Format(format!(
                    "non-finite value in {name} at row {}, column {}",
                    pos % d.max(1),
                    pos / d.max(1)
                )));
            }
        }
        let predictor_names = (1..=predictors.ncols()).map(|k| format!("x{k}")).collect();
        let confounder_names = (1..=confounders.ncols())
            .map(|p| format!("eta{p}"))
            .collect();
        Ok(Self {
            predictors,
            outcomes,
            confounders,
            index,
            predictor_names,
            confounder_names,
        })
    }

    pub fn with_names(mut self, predictors: Vec<String>, confounders: Vec<String>) -> Result<Self> {
        if predictors.len() != self.n_predictors() || confounders.len() != self.n_confounders() {
            return Err(MoatError::DimensionMismatch(
                "name lists do not match column counts".into(),
            ));
        }
        self.predictor_names = predictors;
        self.confounder_names = confounders;
        Ok(self)
    }

    pub fn n_subjects(&self) -> usize {
        self.predictors.nrows()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictors.ncols()
    }

    pub fn n_edges(&self) -> usize {
        self.outcomes.ncols()
    }

    pub fn n_confounders(&self) -> usize {
        self.confounders.ncols()
    }

    pub fn index(&self) -> &RegionPairIndex {
        &self.index
    }

    pub fn predictors(&self) -> &DMatrix<f64> {
        &self.predictors
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn confounders(&self) -> &DMatrix<f64> {
        &self.confounders
    }

    /// Same outcomes and confounders with predictor rows reordered:
    /// subject `d` receives predictor row `perm[d]`.
    pub fn with_permuted_predictors(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        out.predictors = permute_rows(&self.predictors, perm);
        out
    }

    /// All three matrices with subject rows reordered.
    pub fn with_permuted_subjects(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        out.predictors = permute_rows(&self.predictors, perm);
        out.outcomes = permute_rows(&self.outcomes, perm);
        out.confounders = permute_rows(&self.confounders, perm);
        out
    }
}

pub(crate) fn permute_rows(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(perm[r], c)])
}

/// Scores `a_(ij),k`, stored predictor-major: row `k` holds all edges.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMatrix {
    kind: ScoreKind,
    log_base: LogBase,
    index: RegionPairIndex,
    n_predictors: usize,
    scores: Vec<f64>,
    pub predictor_names: Vec<String>,
    /// Threshold applied by [`threshold_scores`], if any.
    pub epsilon: Option<f64>,
}

impl AssociationMatrix {
    pub fn from_scores(
        kind: ScoreKind,
        index: RegionPairIndex,
        n_predictors: usize,
        scores: Vec<f64>,
    ) -> Result<Self> {
        if scores.len() != n_predictors * index.len() {
            return Err(MoatError::DimensionMismatch(format!(
                "{} scores for {n_predictors} x {} matrix",
                scores.len(),
                index.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
            return Err(MoatError::Format(format!("non-finite score {bad}")));
        }
        match kind {
            ScoreKind::NegLogP | ScoreKind::AbsT if scores.iter().any(|&v| v < 0.0) => {
                return Err(MoatError::Format(format!("{kind:?} scores must be >= 0")));
            }
            ScoreKind::PartialCorr if scores.iter().any(|v| v.abs() > 1.0) => {
                return Err(MoatError::Format(
                    "partial correlations must lie in [-1, 1]".into(),
                ));
            }
            _ => {}
        }
        Ok(Self {
            kind,
            log_base: LogBase::Natural,
            index,
            n_predictors,
            scores,
            predictor_names: (1..=n_predictors).map(|k| format!("x{k}")).collect(),
            epsilon: None,
        })
    }

    pub fn with_log_base(mut self, base: LogBase) -> Self {
        self.log_base = base;
        self
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn log_base(&self) -> LogBase {
        self.log_base
    }

    pub fn index(&self) -> &RegionPairIndex {
        &self.index
    }

    pub fn n_predictors(&self) -> usize {
        self.n_predictors
    }

    pub fn n_edges(&self) -> usize {
        self.index.len()
    }

    pub fn n_regions(&self) -> usize {
        self.index.n_regions()
    }

    #[inline]
    pub fn get(&self, k: usize, e: usize) -> f64 {
        self.scores[k * self.index.len() + e]
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        let f = self.index.len();
        &self.scores[k * f..(k + 1) * f]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.scores
    }

    pub fn max(&self) -> f64 {
        self.scores
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Median over every entry (mean of the two middle values for even counts).
    pub fn median(&self) -> f64 {
        let mut v = self.scores.clone();
        let n = v.len();
        let (_, hi, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
        let hi = *hi;
        if n % 2 == 1 {
            hi
        } else {
            let lo = v[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            0.5 * (lo + hi)
        }
    }
}

/// Least-squares fit of `y ~ 1 + x + eta` for a single pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleFit {
    pub beta: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub df: usize,
}

/// Ordinary least squares with identity link for one outcome column against
/// one predictor and the confounders; t test on the predictor's slope with
/// `D - P - 2` degrees of freedom.
pub fn fit_single(y: &[f64], x: &[f64], eta: &DMatrix<f64>) -> Result<SingleFit> {
    let d = y.len();
    let p = eta.ncols();
    if x.len() != d || eta.nrows() != d {
        return Err(MoatError::DimensionMismatch(format!(
            "y has {d} rows, x {}, eta {}",
            x.len(),
            eta.nrows()
        )));
    }
    if d <= p + 2 {
        return Err(MoatError::InsufficientData(format!(
            "{d} subjects cannot fit {} coefficients with positive residual df",
            p + 2
        )));
    }
    let design = DMatrix::from_fn(d, p + 2, |r, c| match c {
        0 => 1.0,
        1 => x[r],
        _ => eta[(r, c - 2)],
    });
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = design
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let bad: Vec<String> = (0..p + 2)
        .filter(|&c| r[(c, c)].abs() <= COLLINEAR_TOL * scale * (d as f64).sqrt())
        .map(|c| design_column_name(c, p))
        .collect();
    if !bad.is_empty() {
        return Err(MoatError::SingularDesign { columns: bad });
    }
    let qty = qr.q().tr_mul(&DVector::from_column_slice(y));
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| MoatError::SingularDesign {
            columns: vec!["design".into()],
        })?;
    let fitted = &design * &coef;
    let rss: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let df = d - p - 2;
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| MoatError::SingularDesign {
            columns: vec!["design".into()],
        })?;
    // Var(beta) = sigma^2 (R^T R)^{-1} = sigma^2 R^{-1} R^{-T}
    let v11: f64 = r_inv.row(1).iter().map(|v| v * v).sum();
    let beta = coef[1];
    let sigma2 = rss / df as f64;
    let t_stat = if sigma2 > 0.0 {
        beta / (sigma2 * v11).sqrt()
    } else if beta == 0.0 {
        0.0
    } else {
        beta.signum() * f64::INFINITY
    };
    let (p_value, _) = two_sided_p(t_stat, df as f64);
    Ok(SingleFit {
        beta,
        t_stat,
        p_value,
        df,
    })
}

fn design_column_name(c: usize, _p: usize) -> String {
    match c {
        0 => "intercept".into(),
        1 => "predictor".into(),
        c => format!("confounder[{}]", c - 2),
    }
}

/// Two-sided Student-t p-value and its natural log. The log stays finite
/// after the p-value underflows.
pub fn two_sided_p(t: f64, df: f64) -> (f64, f64) {
    if t.is_nan() {
        return (f64::NAN, f64::NAN);
    }
    if t.is_infinite() {
        return (0.0, f64::NEG_INFINITY);
    }
    let x = df / (df + t * t);
    let p = beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0);
    if p > 1e-300 {
        (p, p.ln())
    } else {
        (p, ln_p_tail(t, df))
    }
}

/// `ln p` from the hypergeometric form of the incomplete beta function,
/// `I_x(a,b) = x^a (1-x)^b / (a B(a,b)) * 2F1(a+b, 1; a+1; x)`, which
/// converges quickly in the far tail where `x` is small.
fn ln_p_tail(t: f64, df: f64) -> f64 {
    let t2 = t * t;
    let x = df / (df + t2);
    let (a, b) = (df / 2.0, 0.5);
    let mut series = 1.0;
    let mut term = 1.0;
    for n in 0..100_000 {
        let n = n as f64;
        term *= (a + b + n) / (a + 1.0 + n) * x;
        series += term;
        if term < 1e-17 * series {
            break;
        }
    }
    a * x.ln() + b * (t2 / (df + t2)).ln() - a.ln() - ln_beta(a, b) + series.ln()
}

/// Score for one pair from its partial correlation.
#[inline]
fn score_from_r(r: f64, df: f64, kind: ScoreKind, base: LogBase) -> f64 {
    match kind {
        ScoreKind::PartialCorr => r,
        ScoreKind::AbsT => t_from_r(r, df).abs().min(f64::MAX),
        ScoreKind::NegLogP => {
            let (_, ln_p) = two_sided_p(t_from_r(r, df), df);
            if ln_p.is_finite() {
                (-ln_p / base.ln()).max(0.0)
            } else {
                NEG_LOG_P_CEILING / base.ln()
            }
        }
    }
}

#[inline]
fn t_from_r(r: f64, df: f64) -> f64 {
    let r = r.clamp(-1.0, 1.0);
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        r.signum() * f64::INFINITY
    } else {
        r * (df / denom).sqrt()
    }
}

/// Orthonormal basis of `[1, eta]` with a rank check.
fn confounder_basis(eta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = eta.nrows();
    let p = eta.ncols();
    let c = DMatrix::from_fn(
        d,
        p + 1,
        |r, col| if col == 0 { 1.0 } else { eta[(r, col - 1)] },
    );
    let scale = c.column_iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
    let qr = c.qr();
    let r = qr.r();
    let bad: Vec<String> = (0..=p)
        .filter(|&i| r[(i, i)].abs() <= COLLINEAR_TOL * scale)
        .map(|i| {
            if i == 0 {
                "intercept".into()
            } else {
                format!("confounder[{}]", i - 1)
            }
        })
        .collect();
    if !bad.is_empty() {
        return Err(MoatError::SingularDesign { columns: bad });
    }
    Ok(qr.q())
}

fn residualize(q: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let proj = q.tr_mul(m);
    m - q * proj
}

/// Outcome-side state shared by every scan on the same study: the confounder
/// basis and the residualized outcomes. Permutation replicas reuse it.
#[derive(Debug, Clone)]
pub struct PreparedStudy {
    basis: DMatrix<f64>,
    outcome_resid: DMatrix<f64>,
    outcome_ss: Vec<f64>,
    df: usize,
    index: RegionPairIndex,
}

impl PreparedStudy {
    pub fn new(data: &StudyData) -> Result<Self> {
        let d = data.n_subjects();
        let p = data.n_confounders();
        if d <= p + 2 {
            return Err(MoatError::InsufficientData(format!(
                "{d} subjects cannot fit {} coefficients with positive residual df",
                p + 2
            )));
        }
        let basis = confounder_basis(data.confounders())?;
        let outcome_resid = residualize(&basis, data.outcomes());
        let outcome_ss = outcome_resid
            .column_iter()
            .map(|c| c.norm_squared())
            .collect();
        Ok(Self {
            basis,
            outcome_resid,
            outcome_ss,
            df: d - p - 2,
            index: data.index().clone(),
        })
    }

    pub fn df(&self) -> usize {
        self.df
    }

    /// Scores for the given predictor matrix (rows aligned with the
    /// prepared outcomes). With `epsilon`, entries below it are zeroed and
    /// the expensive p-value evaluation is skipped for pairs that cannot
    /// reach it.
    pub fn scan(
        &self,
        predictors: &DMatrix<f64>,
        kind: ScoreKind,
        base: LogBase,
        epsilon: Option<f64>,
    ) -> Result<AssociationMatrix> {
        let m = predictors.ncols();
        let f = self.index.len();
        let resid = residualize(&self.basis, predictors);
        let mut x_ss = Vec::with_capacity(m);
        for (k, (raw, res)) in predictors
            .column_iter()
            .zip(resid.column_iter())
            .enumerate()
        {
            let ss = res.norm_squared();
            let centered_raw = {
                let mean = raw.mean();
                raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            };
            if ss <= COLLINEAR_TOL * COLLINEAR_TOL * raw.norm_squared().max(centered_raw)
                || ss == 0.0
            {
                return Err(MoatError::AtPair {
                    predictor: k,
                    edge: 0,
                    source: Box::new(MoatError::SingularDesign {
                        columns: vec![format!("predictor[{k}]")],
                    }),
                });
            }
            x_ss.push(ss);
        }
        // (F x m) column-major == predictor-major m x F.
        let cross = self.outcome_resid.tr_mul(&resid);
        let df = self.df as f64;
        let r_floor = match epsilon {
            Some(eps) => min_abs_r(kind, base, eps, df),
            None => 0.0,
        };
        let mut scores = cross.data.as_vec().clone();
        let y_ss = &self.outcome_ss;
        scores
            .par_chunks_mut(f)
            .zip(x_ss.par_iter())
            .for_each(|(row, &xs)| {
                for (e, v) in row.iter_mut().enumerate() {
                    let ys = y_ss[e];
                    let r = if ys > 0.0 { *v / (xs * ys).sqrt() } else { 0.0 };
                    *v = match epsilon {
                        Some(eps) => {
                            if kind != ScoreKind::PartialCorr && r.abs() < r_floor {
                                0.0
                            } else {
                                let a = score_from_r(r, df, kind, base);
                                if a < eps {
                                    0.0
                                } else {
                                    a
                                }
                            }
                        }
                        None => score_from_r(r, df, kind, base),
                    };
                }
            });
        let mut out = AssociationMatrix::from_scores(kind, self.index.clone(), m, scores)?;
        out.log_base = base;
        out.epsilon = epsilon;
        Ok(out)
    }
}

/// Smallest |r| whose score can reach `eps`, shrunk slightly so that pairs
/// near the boundary are still evaluated exactly.
fn min_abs_r(kind: ScoreKind, base: LogBase, eps: f64, df: f64) -> f64 {
    let t = match kind {
        ScoreKind::PartialCorr => return f64::NEG_INFINITY,
        ScoreKind::AbsT => eps.max(0.0),
        ScoreKind::NegLogP => critical_t(-eps * base.ln(), df),
    };
    t / (df + t * t).sqrt() * (1.0 - 1e-9)
}

/// Smallest `|t|` whose two-sided p-value has natural log at most `ln_p`.
pub fn critical_t(ln_p: f64, df: f64) -> f64 {
    if ln_p >= 0.0 {
        return 0.0;
    }
    let ln_p_of = |t: f64| two_sided_p(t, df).1;
    let mut hi = 1.0;
    while ln_p_of(hi) > ln_p && hi < 1e12 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ln_p_of(mid) > ln_p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    hi
}

/// How the hard threshold on scores is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Keep pairs with two-sided p below this value.
    PValue(f64),
    /// Keep pairs with p below `alpha / (number of pairs)`.
    Bonferroni(f64),
    /// Threshold given directly on the score scale.
    Score(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::PValue(1e-3)
    }
}

impl Threshold {
    /// Threshold on the score scale for `n_tests` fits with `df` residual
    /// degrees of freedom.
    pub fn resolve(self, kind: ScoreKind, base: LogBase, df: usize, n_tests: usize) -> Result<f64> {
        let p = match self {
            Threshold::Score(v) => {
                return if v > 0.0 && v.is_finite() {
                    Ok(v)
                } else {
                    Err(MoatError::Config(format!(
                        "score threshold {v} must be positive"
                    )))
                }
            }
            Threshold::PValue(p) => p,
            Threshold::Bonferroni(alpha) => alpha / n_tests.max(1) as f64,
        };
        if !(p > 0.0 && p < 1.0) {
            return Err(MoatError::Config(format!(
                "threshold p-value {p} must lie in (0, 1)"
            )));
        }
        let df = df as f64;
        Ok(match kind {
            ScoreKind::NegLogP => base.neg_log(p),
            ScoreKind::AbsT => critical_t(p.ln(), df),
            ScoreKind::PartialCorr => {
                let t = critical_t(p.ln(), df);
                t / (df + t * t).sqrt()
            }
        })
    }
}

/// Full score matrix: one fit per (predictor, edge) pair.
pub fn build_association_matrix(data: &StudyData, kind: ScoreKind) -> Result<AssociationMatrix> {
    build_association_matrix_with_base(data, kind, LogBase::Natural)
}

pub fn build_association_matrix_with_base(
    data: &StudyData,
    kind: ScoreKind,
    base: LogBase,
) -> Result<AssociationMatrix> {
    let prepared = PreparedStudy::new(data)?;
    let mut a = prepared.scan(data.predictors(), kind, base, None)?;
    a.predictor_names = data.predictor_names.clone();
    Ok(a)
}

/// Hard-thresholding: entries below `epsilon` become zero, the rest are kept.
pub fn threshold_scores(a: &AssociationMatrix, epsilon: f64) -> Result<AssociationMatrix> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(MoatError::domain(format!(
            "threshold must be positive, got {epsilon}"
        )));
    }
    let mut out = a.clone();
    for v in out.scores.iter_mut() {
        if *v < epsilon {
            *v = 0.0;
        }
    }
    out.epsilon = Some(epsilon);
    Ok(out)
}

/// Default threshold: keep p < 0.001.
pub fn default_epsilon(base: LogBase) -> f64 {
    base.neg_log(1e-3)
}
