//! Network-level significance of extracted subnetworks.
//!
//! The statistic `T = exp(-zeta(g1,p1)|S||F|/4 - zeta(g2,p2)|V|^2/4)` bounds
//! the probability of seeing a block this dense by chance, so smaller values
//! are more extreme. Everything is kept as `ln T` because realistic block
//! sizes underflow `f64`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{LogBase, PreparedStudy, ScoreKind, StudyData};
use crate::error::{MoatError, Result};
use crate::extraction::{extract_all, ExtractionConfig, ExtractionResult};
use crate::graph::Subnetwork;

/// Smallest permutation count accepted by [`permutation_test`].
pub const MIN_PERMUTATIONS: usize = 100;

/// `[1/(a-b)^2 + 1/(3(a-b))]^-1`, defined for `a > b` in `[0, 1]`.
pub fn zeta(a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        return Err(MoatError::domain(format!(
            "densities ({a}, {b}) must lie in [0, 1]"
        )));
    }
    if a <= b {
        return Err(MoatError::domain(format!(
            "zeta needs a > b, got a = {a}, b = {b}"
        )));
    }
    let g = a - b;
    // Algebraically equal to 1 / (1/g^2 + 1/(3g)), without overflow for tiny g.
    Ok(3.0 * g * g / (3.0 + g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestStatistic {
    pub log_value: f64,
    /// `exp(log_value)`; zero once it underflows.
    pub value: f64,
    pub gamma1: f64,
    pub p1: f64,
    pub gamma2: f64,
    pub p2: f64,
    pub sizes: (usize, usize, usize),
}

impl TestStatistic {
    pub fn new(
        gamma1: f64,
        p1: f64,
        gamma2: f64,
        p2: f64,
        sizes: (usize, usize, usize),
    ) -> Result<Self> {
        if !(gamma1 > p1) || !(gamma2 > p2) {
            return Err(MoatError::NotTestable(format!(
                "densities (gamma1 {gamma1:.4} vs p1 {p1:.4}, gamma2 {gamma2:.4} vs p2 {p2:.4}) \
                 do not exceed the background"
            )));
        }
        let (s, f, v) = sizes;
        let log_value =
            -0.25 * zeta(gamma1, p1)? * (s * f) as f64 - 0.25 * zeta(gamma2, p2)? * (v * v) as f64;
        Ok(Self {
            log_value,
            value: log_value.exp(),
            gamma1,
            p1,
            gamma2,
            p2,
            sizes,
        })
    }
}

pub fn test_statistic(subnet: &Subnetwork, p1: f64, p2: f64) -> Result<TestStatistic> {
    TestStatistic::new(subnet.gamma1, p1, subnet.gamma2, p2, subnet.sizes())
}

/// Natural log of `2 m n^2 (n-1) exp(-zeta1 m0 n0 (n0-1)/8 - zeta2 n0^2/4)`,
/// not clamped.
#[allow(clippy::too_many_arguments)]
pub fn lemma1_log_bound(
    m0: usize,
    n0: usize,
    gamma1: f64,
    p1: f64,
    gamma2: f64,
    p2: f64,
    m: usize,
    n: usize,
) -> Result<f64> {
    if m0 > m || n0 > n {
        return Err(MoatError::domain(format!(
            "block ({m0}, {n0}) larger than graph ({m}, {n})"
        )));
    }
    let (m0f, n0f, mf, nf) = (m0 as f64, n0 as f64, m as f64, n as f64);
    Ok((2.0 * mf * nf * nf * (nf - 1.0)).ln()
        - zeta(gamma1, p1)? * m0f * n0f * (n0f - 1.0) / 8.0
        - zeta(gamma2, p2)? * n0f * n0f / 4.0)
}

/// Probability bound on a dense `(m0, n0)` block appearing in a random
/// multi-level graph, clamped to `[0, 1]`.
#[allow(clippy::too_many_arguments)]
pub fn lemma1_bound(
    m0: usize,
    n0: usize,
    gamma1: f64,
    p1: f64,
    gamma2: f64,
    p2: f64,
    m: usize,
    n: usize,
) -> Result<f64> {
    let log = lemma1_log_bound(m0, n0, gamma1, p1, gamma2, p2, m, n)?;
    Ok(log.min(0.0).exp())
}

/// How each permutation replica turns raw data into subnetworks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSettings {
    pub score_kind: ScoreKind,
    pub log_base: LogBase,
    pub epsilon: f64,
    pub extraction: ExtractionConfig,
}

/// Smallest `ln T` over the testable subnetworks of one extraction, or 0
/// (`T = 1`) when there are none.
pub fn most_extreme_log_t(result: &ExtractionResult) -> f64 {
    result
        .subnetworks
        .iter()
        .filter_map(|s| test_statistic(s, result.background_p1, result.background_p2).ok())
        .map(|t| t.log_value)
        .fold(0.0, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    /// Per observed subnetwork; `None` when it is not denser than background.
    pub observed: Vec<Option<TestStatistic>>,
    /// `ln T` per observed subnetwork (0 for untestable ones).
    pub observed_log_t: Vec<f64>,
    /// Most extreme `ln T` of each permutation, in permutation order.
    pub null_log_extremes: Vec<f64>,
    pub q_values: Vec<f64>,
    pub permutations: usize,
    pub seed: u64,
    pub lambdas: (f64, f64),
}

impl PermutationReport {
    /// Indices of subnetworks with `q < alpha`.
    pub fn significant(&self, alpha: f64) -> Vec<usize> {
        (0..self.q_values.len())
            .filter(|&c| self.q_values[c] < alpha)
            .collect()
    }
}

/// `(1 + #{l : T_l <= T0}) / (L + 1)` in log space.
pub fn permutation_q(observed_log_t: f64, null_log_extremes: &[f64]) -> f64 {
    let hits = null_log_extremes
        .iter()
        .filter(|&&t| t <= observed_log_t)
        .count();
    (1 + hits) as f64 / (null_log_extremes.len() + 1) as f64
}

/// Subject permutation for replica `l`, from its own stream of `seed`.
pub fn replica_permutation(n: usize, seed: u64, l: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(l as u64);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Family-wise permutation test. Each replica permutes the predictor rows
/// against fixed outcomes and confounders, re-runs association, thresholding
/// and extraction at the observed `(lambda1, lambda2)`, and records the most
/// extreme statistic.
pub fn permutation_test(
    data: &StudyData,
    observed: &ExtractionResult,
    settings: &ScanSettings,
    permutations: usize,
    seed: u64,
) -> Result<PermutationReport> {
    let prepared = PreparedStudy::new(data)?;
    permutation_test_prepared(data, &prepared, observed, settings, permutations, seed)
}

pub fn permutation_test_prepared(
    data: &StudyData,
    prepared: &PreparedStudy,
    observed: &ExtractionResult,
    settings: &ScanSettings,
    permutations: usize,
    seed: u64,
) -> Result<PermutationReport> {
    if permutations < MIN_PERMUTATIONS {
        return Err(MoatError::Config(format!(
            "{permutations} permutations requested; at least {MIN_PERMUTATIONS} are needed"
        )));
    }
    let (l1, l2) = observed.selected_lambdas;
    let cfg = settings.extraction.with_lambdas(l1, l2);
    cfg.validate()?;
    let observed_stats: Vec<Option<TestStatistic>> = observed
        .subnetworks
        .iter()
        .map(|s| test_statistic(s, observed.background_p1, observed.background_p2).ok())
        .collect();
    let observed_log_t: Vec<f64> = observed_stats
        .iter()
        .map(|t| t.map_or(0.0, |t| t.log_value))
        .collect();
    let null_log_extremes = (0..permutations)
        .into_par_iter()
        .map(|l| {
            let perm = replica_permutation(data.n_subjects(), seed, l);
            let x = crate::association::permute_rows(data.predictors(), &perm);
            let a = prepared.scan(
                &x,
                settings.score_kind,
                settings.log_base,
                Some(settings.epsilon),
            )?;
            Ok(most_extreme_log_t(&extract_all(&a, &cfg)?))
        })
        .collect::<Result<Vec<f64>>>()?;
    let q_values = observed_log_t
        .iter()
        .map(|&t| permutation_q(t, &null_log_extremes))
        .collect();
    Ok(PermutationReport {
        observed: observed_stats,
        observed_log_t,
        null_log_extremes,
        q_values,
        permutations,
        seed,
        lambdas: (l1, l2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zeta_examples() {
        assert_relative_eq!(zeta(1.0, 0.0).unwrap(), 0.75, max_relative = 1e-12);
        assert_relative_eq!(
            zeta(0.5, 0.25).unwrap(),
            0.057692307692307696,
            max_relative = 1e-12
        );
        assert!(zeta(0.3 + 1e-6, 0.3).unwrap() < 1e-11);
        assert!(matches!(zeta(0.2, 0.2), Err(MoatError::Domain(_))));
        assert!(matches!(zeta(0.1, 0.2), Err(MoatError::Domain(_))));
        assert!(zeta(1.5, 0.2).is_err());
    }

    #[test]
    fn statistic_example() {
        let t = TestStatistic::new(1.0, 0.5, 1.0, 0.5, (2, 3, 3)).unwrap();
        assert_relative_eq!(t.log_value, -0.8035714285714286, max_relative = 1e-12);
        assert_relative_eq!(t.value, 0.44772708002678984, max_relative = 1e-12);
        assert!(matches!(
            TestStatistic::new(0.4, 0.5, 1.0, 0.5, (2, 3, 3)),
            Err(MoatError::NotTestable(_))
        ));
    }

    #[test]
    fn doubling_block_squares_first_factor() {
        let z = zeta(0.9, 0.2).unwrap();
        let a = TestStatistic::new(0.9, 0.2, 0.5, 0.49, (4, 10, 5)).unwrap();
        let b = TestStatistic::new(0.9, 0.2, 0.5, 0.49, (8, 10, 5)).unwrap();
        assert_relative_eq!(
            b.log_value - a.log_value,
            -0.25 * z * 40.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn paper_scale_statistic_stays_finite_in_log_space() {
        let t = TestStatistic::new(0.6, 0.5, 0.6, 0.5, (23, 1316, 79)).unwrap();
        assert_relative_eq!(t.log_value, -88.32822580645162, max_relative = 1e-12);
        let u = TestStatistic::new(1.0, 0.5, 1.0, 0.5, (23, 1316, 79)).unwrap();
        assert_eq!(u.value, 0.0);
        assert!(u.log_value.is_finite() && u.log_value < -700.0);
    }

    #[test]
    fn lemma_bound_values() {
        let log = lemma1_log_bound(10, 10, 0.9, 0.1, 0.9, 0.1, 500, 100).unwrap();
        assert_relative_eq!(log, -48.760468709433406, max_relative = 1e-12);
        assert!(lemma1_bound(10, 10, 0.9, 0.1, 0.9, 0.1, 500, 100).unwrap() < 1e-16);
        assert_eq!(
            lemma1_bound(5, 5, 0.300001, 0.3, 0.300001, 0.3, 30, 12).unwrap(),
            1.0
        );
        assert!(lemma1_bound(40, 5, 0.9, 0.1, 0.9, 0.1, 30, 12).is_err());
    }

    #[test]
    fn q_value_plug_in() {
        let null: Vec<f64> = (0..100).map(|i| -(i as f64) / 10.0).collect();
        assert_relative_eq!(permutation_q(-50.0, &null), 1.0 / 101.0);
        assert_relative_eq!(permutation_q(0.0, &null), 1.0);
        assert_relative_eq!(permutation_q(-5.0, &null), 51.0 / 101.0);
    }

    #[test]
    fn replica_streams_are_distinct_and_reproducible() {
        let a = replica_permutation(50, 7, 0);
        assert_eq!(a, replica_permutation(50, 7, 0));
        assert_ne!(a, replica_permutation(50, 7, 1));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn statistic_decreases_with_size_and_density(
            p1 in 0.0..0.5f64, p2 in 0.0..0.5f64,
            g1 in 0.5..0.99f64, g2 in 0.5..0.99f64,
            s in 1usize..50, f in 1usize..200, v in 2usize..30,
        ) {
            let base = TestStatistic::new(g1, p1, g2, p2, (s, f, v)).unwrap().log_value;
            for sizes in [(s + 1, f, v), (s, f + 1, v), (s, f, v + 1)] {
                prop_assert!(TestStatistic::new(g1, p1, g2, p2, sizes).unwrap().log_value < base);
            }
            prop_assert!(TestStatistic::new(g1 + 0.01, p1, g2, p2, (s, f, v)).unwrap().log_value < base);
            prop_assert!(TestStatistic::new(g1, p1, g2 + 0.01, p2, (s, f, v)).unwrap().log_value < base);
        }

        #[test]
        fn zeta_positive_and_increasing_in_gap(b in 0.0..0.9f64, gap in 1e-6..0.1f64) {
            let z1 = zeta(b + gap, b).unwrap();
            let z2 = zeta((b + 2.0 * gap).min(1.0), b).unwrap();
            prop_assert!(z1 > 0.0);
            prop_assert!(z2 >= z1);
        }
    }
}
