//! Planted-subnetwork generator and recovery scoring.
//!
//! Predictors and outcomes are jointly Gaussian with unit variances. Every
//! predictor-outcome pair has cross-correlation `rho0`, except pairs inside a
//! planted block `S_c x F_c`, which have `rho_c`. The covariance is realized
//! by a factor model: one global factor shared by all variables (loading
//! `sqrt|rho0|`, with the sign of `rho0` on the outcome side) and one factor
//! per block shared by that block's predictors and outcomes (loading
//! `sqrt(rho_c - rho0)`), plus independent noise filling the unit variance.
//! The matrix is positive semidefinite by construction and the planted
//! cross-correlations are exact.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::association::StudyData;
use crate::error::{MoatError, Result};
use crate::graph::{pairs, RegionPairIndex, Subnetwork};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedBlock {
    pub s_size: usize,
    pub v_size: usize,
    pub rho: f64,
}

/// Planted blocks occupy consecutive predictors and consecutive regions in
/// list order: block 0 uses predictors `0..s_0` and regions `0..v_0`, block 1
/// the next ones, and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedDesign {
    pub m: usize,
    pub n: usize,
    pub blocks: Vec<PlantedBlock>,
    pub rho0: f64,
    pub subjects: usize,
}

impl PlantedDesign {
    /// Two-block layout: 40 predictors x 30 regions, and 60 x 20.
    pub fn two_block(rho0: f64, rho1: f64, rho2: f64, subjects: usize) -> Self {
        Self {
            m: 500,
            n: 100,
            blocks: vec![
                PlantedBlock {
                    s_size: 40,
                    v_size: 30,
                    rho: rho1,
                },
                PlantedBlock {
                    s_size: 60,
                    v_size: 20,
                    rho: rho2,
                },
            ],
            rho0,
            subjects,
        }
    }

    pub fn n_edges(&self) -> usize {
        pairs(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        let s_total: usize = self.blocks.iter().map(|b| b.s_size).sum();
        let v_total: usize = self.blocks.iter().map(|b| b.v_size).sum();
        if self.m == 0 || self.n < 2 {
            return Err(MoatError::Config("design needs m >= 1 and n >= 2".into()));
        }
        if s_total > self.m || v_total > self.n {
            return Err(MoatError::Config(format!(
                "blocks need {s_total} predictors and {v_total} regions; design has {} and {}",
                self.m, self.n
            )));
        }
        if !(self.rho0 > -1.0 && self.rho0 < 1.0) {
            return Err(MoatError::Config(format!(
                "rho0 = {} must lie in (-1, 1)",
                self.rho0
            )));
        }
        if self.subjects < 3 {
            return Err(MoatError::Config("design needs at least 3 subjects".into()));
        }
        for (c, b) in self.blocks.iter().enumerate() {
            if b.s_size == 0 || b.v_size < 2 {
                return Err(MoatError::Config(format!(
                    "block {c} needs at least one predictor and two regions"
                )));
            }
            if !(b.rho >= self.rho0 && b.rho < 1.0) {
                return Err(MoatError::Config(format!(
                    "block {c}: rho = {} must lie in [rho0, 1) = [{}, 1)",
                    b.rho, self.rho0
                )));
            }
        }
        Ok(())
    }

    /// Predictor and region ranges of each block.
    pub fn block_ranges(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let (mut s0, mut v0) = (0, 0);
        self.blocks
            .iter()
            .map(|b| {
                let r = (s0..s0 + b.s_size, v0..v0 + b.v_size);
                s0 += b.s_size;
                v0 += b.v_size;
                r
            })
            .collect()
    }

    /// Planted `(S_c, F_c)` sets, 0-based.
    pub fn planted_sets(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let index = RegionPairIndex::new(self.n).expect("n >= 2");
        self.block_ranges()
            .into_iter()
            .map(|(s, v)| {
                let regions: Vec<usize> = v.collect();
                let mut f = Vec::with_capacity(pairs(regions.len()));
                for (x, &i) in regions.iter().enumerate() {
                    for &j in &regions[x + 1..] {
                        f.push(index.edge(i, j));
                    }
                }
                f.sort_unstable();
                (s.collect(), f)
            })
            .collect()
    }
}

/// Loadings of the factor model realizing a [`PlantedDesign`].
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredCovariance {
    m: usize,
    f: usize,
    /// Global loading per variable (predictors first, then outcomes).
    global: Vec<f64>,
    /// Block membership per variable.
    block: Vec<Option<usize>>,
    block_loading: Vec<f64>,
    noise_sd: Vec<f64>,
}

/// Covariance of the design's joint `(X, Y)` vector. The mean is zero.
pub fn build_covariance(design: &PlantedDesign) -> Result<StructuredCovariance> {
    design.validate()?;
    let (m, f) = (design.m, design.n_edges());
    let a0 = design.rho0.abs().sqrt();
    let sign = design.rho0.signum();
    let mut global = vec![a0; m + f];
    for g in &mut global[m..] {
        *g = sign * a0;
    }
    let mut block = vec![None; m + f];
    let block_loading: Vec<f64> = design
        .blocks
        .iter()
        .map(|b| (b.rho - design.rho0).sqrt())
        .collect();
    for (c, (s, fs)) in design.planted_sets().into_iter().enumerate() {
        for k in s {
            block[k] = Some(c);
        }
        for e in fs {
            block[m + e] = Some(c);
        }
    }
    let mut noise_sd = Vec::with_capacity(m + f);
    for v in 0..m + f {
        let shared = global[v].powi(2) + block[v].map_or(0.0, |c| block_loading[c].powi(2));
        let residual = 1.0 - shared;
        if residual <= 0.0 {
            let c = block[v].unwrap_or(0);
            return Err(MoatError::InfeasibleDesign {
                block: c,
                residual,
                shift: -residual,
            });
        }
        noise_sd.push(residual.sqrt());
    }
    Ok(StructuredCovariance {
        m,
        f,
        global,
        block,
        block_loading,
        noise_sd,
    })
}

impl StructuredCovariance {
    pub fn dim(&self) -> usize {
        self.m + self.f
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        let mut v = self.global[i] * self.global[j];
        if let (Some(a), Some(b)) = (self.block[i], self.block[j]) {
            if a == b {
                v += self.block_loading[a].powi(2);
            }
        }
        v
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| self.entry(i, j))
    }

    /// One draw of the joint vector into `out`.
    fn sample_into(&self, rng: &mut impl Rng, factors: &mut [f64], out: &mut [f64]) {
        let zg: f64 = rng.sample(StandardNormal);
        for z in factors.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        for (v, o) in out.iter_mut().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            let mut x = self.global[v] * zg + self.noise_sd[v] * eps;
            if let Some(c) = self.block[v] {
                x += self.block_loading[c] * factors[c];
            }
            *o = x;
        }
    }
}

/// `subjects` independent draws split into predictors and outcomes, with no
/// confounders.
pub fn generate(design: &PlantedDesign, seed: u64) -> Result<StudyData> {
    let cov = build_covariance(design)?;
    let (m, f, d) = (design.m, design.n_edges(), design.subjects);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(d, m);
    let mut y = DMatrix::zeros(d, f);
    let mut row = vec![0.0; m + f];
    let mut factors = vec![0.0; design.blocks.len()];
    for s in 0..d {
        cov.sample_into(&mut rng, &mut factors, &mut row);
        for k in 0..m {
            x[(s, k)] = row[k];
        }
        for e in 0..f {
            y[(s, e)] = row[m + e];
        }
    }
    StudyData::new(x, y, DMatrix::zeros(d, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    pub tpr_si: f64,
    pub tnr_si: f64,
    pub tpr_fc: f64,
    pub tnr_fc: f64,
    pub tpr_edge: f64,
    pub tnr_edge: f64,
}

impl RecoveryScore {
    pub const FIELDS: [&'static str; 6] = [
        "tpr_si", "tnr_si", "tpr_fc", "tnr_fc", "tpr_edge", "tnr_edge",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.tpr_si,
            self.tnr_si,
            self.tpr_fc,
            self.tnr_fc,
            self.tpr_edge,
            self.tnr_edge,
        ]
    }
}

fn rates(truth: &[bool], found: &[bool]) -> (f64, f64) {
    let (mut tp, mut p, mut tn, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &f) in truth.iter().zip(found) {
        if t {
            p += 1;
            tp += f as usize;
        } else {
            n += 1;
            tn += !f as usize;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    (ratio(tp, p), ratio(tn, n))
}

/// Membership masks of the union of `(S_c, F_c)` blocks over predictors,
/// edges and predictor-edge cells.
fn membership<'a>(
    m: usize,
    f: usize,
    blocks: impl Iterator<Item = (&'a [usize], &'a [usize])>,
) -> (Vec<bool>, Vec<bool>, Vec<bool>) {
    let mut s_mask = vec![false; m];
    let mut f_mask = vec![false; f];
    let mut cells = vec![false; m * f];
    for (s, fs) in blocks {
        for &k in s {
            s_mask[k] = true;
            for &e in fs {
                cells[k * f + e] = true;
            }
        }
        for &e in fs {
            f_mask[e] = true;
        }
    }
    (s_mask, f_mask, cells)
}

/// Node- and cell-level recovery of the planted blocks by `recovered` (the
/// subnetworks judged significant).
pub fn score_recovery(recovered: &[Subnetwork], design: &PlantedDesign) -> RecoveryScore {
    let (m, f) = (design.m, design.n_edges());
    let planted = design.planted_sets();
    let truth = membership(
        m,
        f,
        planted.iter().map(|(s, e)| (s.as_slice(), e.as_slice())),
    );
    let found = membership(
        m,
        f,
        recovered
            .iter()
            .map(|s| (s.s_nodes.as_slice(), s.f_nodes.as_slice())),
    );
    let (tpr_si, tnr_si) = rates(&truth.0, &found.0);
    let (tpr_fc, tnr_fc) = rates(&truth.1, &found.1);
    let (tpr_edge, tnr_edge) = rates(&truth.2, &found.2);
    RecoveryScore {
        tpr_si,
        tnr_si,
        tpr_fc,
        tnr_fc,
        tpr_edge,
        tnr_edge,
    }
}

/// `||U* - U_hat||_F` over predictor-edge cells.
pub fn membership_error(recovered: &[Subnetwork], design: &PlantedDesign) -> f64 {
    let (m, f) = (design.m, design.n_edges());
    let planted = design.planted_sets();
    let truth = membership(
        m,
        f,
        planted.iter().map(|(s, e)| (s.as_slice(), e.as_slice())),
    )
    .2;
    let found = membership(
        m,
        f,
        recovered
            .iter()
            .map(|s| (s.s_nodes.as_slice(), s.f_nodes.as_slice())),
    )
    .2;
    (truth.iter().zip(&found).filter(|(a, b)| a != b).count() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small() -> PlantedDesign {
        PlantedDesign {
            m: 12,
            n: 8,
            blocks: vec![
                PlantedBlock {
                    s_size: 3,
                    v_size: 4,
                    rho: 0.6,
                },
                PlantedBlock {
                    s_size: 2,
                    v_size: 3,
                    rho: 0.5,
                },
            ],
            rho0: 0.1,
            subjects: 50,
        }
    }

    #[test]
    fn no_signal_is_identity() {
        let d = PlantedDesign {
            blocks: vec![PlantedBlock {
                s_size: 2,
                v_size: 3,
                rho: 0.0,
            }],
            rho0: 0.0,
            ..small()
        };
        let cov = build_covariance(&d).unwrap().to_dense();
        assert_relative_eq!(
            cov,
            DMatrix::identity(cov.nrows(), cov.nrows()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn two_block_layout_sizes() {
        let d = PlantedDesign::two_block(0.15, 0.55, 0.60, 200);
        assert_eq!(d.n_edges(), 4950);
        let sets = d.planted_sets();
        assert_eq!((sets[0].0.len(), sets[0].1.len()), (40, 435));
        assert_eq!((sets[1].0.len(), sets[1].1.len()), (60, 190));
        assert_eq!(sets[1].0[0], 40);
        assert!(build_covariance(&d).is_ok());
    }

    #[test]
    fn cross_correlations_are_exact_and_matrix_is_psd() {
        let d = small();
        let cov = build_covariance(&d).unwrap();
        let dense = cov.to_dense();
        let m = d.m;
        let sets = d.planted_sets();
        for k in 0..m {
            for e in 0..d.n_edges() {
                let expected = sets
                    .iter()
                    .zip(&d.blocks)
                    .find(|((s, f), _)| s.contains(&k) && f.contains(&e))
                    .map_or(d.rho0, |(_, b)| b.rho);
                assert_relative_eq!(dense[(k, m + e)], expected, epsilon = 1e-12);
            }
        }
        let eig = dense.symmetric_eigenvalues();
        assert!(eig.min() >= -1e-10, "min eigenvalue {}", eig.min());
        for i in 0..dense.nrows() {
            assert_eq!(dense[(i, i)], 1.0);
        }
    }

    #[test]
    fn infeasible_design_reports_block() {
        let d = PlantedDesign {
            rho0: -0.4,
            blocks: vec![PlantedBlock {
                s_size: 2,
                v_size: 3,
                rho: 0.5,
            }],
            ..small()
        };
        match build_covariance(&d) {
            Err(MoatError::InfeasibleDesign {
                block, residual, ..
            }) => {
                assert_eq!(block, 0);
                assert!(residual <= 0.0);
            }
            other => panic!("expected infeasible design, got {other:?}"),
        }
    }

    #[test]
    fn seeds_control_generation() {
        let d = small();
        let a = generate(&d, 1).unwrap();
        assert_eq!(a.predictors(), generate(&d, 1).unwrap().predictors());
        assert_ne!(a.predictors(), generate(&d, 2).unwrap().predictors());
        assert_eq!(
            (a.n_subjects(), a.n_predictors(), a.n_edges()),
            (50, 12, 28)
        );
    }

    #[test]
    fn recovery_examples() {
        let d = PlantedDesign::two_block(0.15, 0.55, 0.60, 200);
        let index = RegionPairIndex::new(d.n).unwrap();
        let empty = score_recovery(&[], &d);
        assert_eq!(empty.values(), [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);

        let planted: Vec<Subnetwork> = d
            .planted_sets()
            .into_iter()
            .map(|(s, f)| sub(s, f, &index))
            .collect();
        assert_eq!(score_recovery(&planted, &d).values(), [1.0; 6]);
        assert_eq!(membership_error(&planted, &d), 0.0);

        let mut extra = planted.clone();
        extra[0].s_nodes.extend(200..210);
        let r = score_recovery(&extra, &d);
        assert_relative_eq!(r.tnr_si, 390.0 / 400.0);
        assert_eq!(r.tpr_si, 1.0);

        let mut reversed = planted;
        reversed.reverse();
        assert_eq!(score_recovery(&reversed, &d).values(), [1.0; 6]);
    }

    fn sub(s: Vec<usize>, f: Vec<usize>, index: &RegionPairIndex) -> Subnetwork {
        let v = crate::graph::induced_clique(index, &f)
            .unwrap()
            .vertices()
            .to_vec();
        Subnetwork {
            s_nodes: s,
            f_nodes: f,
            v_nodes: v,
            gamma1: 1.0,
            gamma2: 1.0,
            objective_value: 0.0,
        }
    }
}
