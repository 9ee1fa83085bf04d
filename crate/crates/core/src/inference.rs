//! Region-index permutation tests and image-level bootstrap intervals.
//!
//! Both engines are deterministic functions of their inputs and seed: each
//! replicate draws from its own stream (see [`crate::seed`]) and the
//! reductions (counting, sorting) do not depend on evaluation order, so the
//! results are identical for any number of worker threads.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlations::{statistic, Kind, Method, Roles};
use crate::error::{Error, Result};
use crate::interchange::ModelTag;
use crate::rank_profiles::{quantile_sorted, ProfileRule, RankMatrix};
use crate::seed::{replicate_rng, stage, stage_seed};

/// Permuted statistics within this distance of the observed magnitude count
/// as at least as extreme. Absorbs rounding in permutations that leave the
/// data unchanged (e.g. swaps of tied entries).
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Largest profile length for which complete enumeration is attempted.
pub const MAX_EXHAUSTIVE_REGIONS: usize = 8;

/// Which profiles are shuffled in each permutation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationScheme {
    /// Shuffle the B profile only; A and C keep their alignment.
    #[default]
    BOnly,
    /// Shuffle A and B with independent permutations.
    AAndB,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationOutcome {
    pub p_value: f64,
    /// Number of permuted statistics evaluated.
    pub n_permutations: usize,
    /// Permuted statistics at least as extreme as the observed one.
    pub n_extreme: usize,
    /// Whether all `n!` orderings were enumerated (p-value is exact).
    pub exhaustive: bool,
}

fn factorial(n: usize) -> Option<usize> {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k))
}

/// Next permutation in lexicographic order; false after the last one.
fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn permuted(v: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&i| v[i]).collect()
}

/// Two-sided region-index permutation test.
///
/// Monte-Carlo p-values use the add-one estimator
/// `(1 + #{|rho_perm| >= |rho_obs|}) / (1 + n_perm)`. When the B-only scheme
/// is used, `n <= 8` and `n! <= n_perm`, every ordering is enumerated instead
/// (the identity included) and the p-value is exact.
///
/// If B is constant no permutation changes the data and the p-value is 1.
#[allow(clippy::too_many_arguments)]
pub fn permutation_test(
    a: &[f64],
    b: &[f64],
    c: Option<&[f64]>,
    kind: Kind,
    method: Method,
    n_perm: usize,
    seed: u64,
    scheme: PermutationScheme,
) -> Result<PermutationOutcome> {
    if n_perm == 0 {
        return Err(Error::BadConfig("need at least one permutation".into()));
    }
    let n = b.len();
    if b.iter().all(|&v| v == b[0]) {
        return Ok(PermutationOutcome {
            p_value: 1.0,
            n_permutations: n_perm,
            n_extreme: n_perm,
            exhaustive: false,
        });
    }
    let observed = statistic(kind, method, a, b, c)?.abs();
    let extreme = |r: Result<f64>| match r {
        Ok(r) => r.abs() >= observed - TIE_TOLERANCE,
        Err(_) => false,
    };

    let exhaustive_count = factorial(n).filter(|&f| f <= n_perm);
    if scheme == PermutationScheme::BOnly && n <= MAX_EXHAUSTIVE_REGIONS {
        if let Some(total) = exhaustive_count {
            let mut perm: Vec<usize> = (0..n).collect();
            let mut hits = 0usize;
            loop {
                if extreme(statistic(kind, method, a, &permuted(b, &perm), c)) {
                    hits += 1;
                }
                if !next_permutation(&mut perm) {
                    break;
                }
            }
            return Ok(PermutationOutcome {
                p_value: hits as f64 / total as f64,
                n_permutations: total,
                n_extreme: hits,
                exhaustive: true,
            });
        }
    }

    let hits: usize = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let mut pb: Vec<usize> = (0..n).collect();
            pb.shuffle(&mut rng);
            let bp = permuted(b, &pb);
            let stat = match scheme {
                PermutationScheme::BOnly => statistic(kind, method, a, &bp, c),
                PermutationScheme::AAndB => {
                    let mut pa: Vec<usize> = (0..n).collect();
                    pa.shuffle(&mut rng);
                    statistic(kind, method, &permuted(a, &pa), &bp, c)
                }
            };
            usize::from(extreme(stat))
        })
        .sum();
    Ok(PermutationOutcome {
        p_value: (1 + hits) as f64 / (1 + n_perm) as f64,
        n_permutations: n_perm,
        n_extreme: hits,
        exhaustive: false,
    })
}

/// Lower and upper percentile bounds of a central interval at `level`,
/// using linear interpolation between order statistics (position
/// `q * (N - 1)` in the sorted replicates).
pub fn percentile_interval(replicates: &[f64], level: f64) -> Result<(f64, f64)> {
    if replicates.is_empty() {
        return Err(Error::EmptyInput("no replicates"));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(Error::BadConfig(format!("confidence level {level} outside [0, 1)")));
    }
    let mut sorted = replicates.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&sorted, tail), quantile_sorted(&sorted, 1.0 - tail)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_bootstrap: usize,
    /// Replicates whose statistic was undefined; these are excluded.
    pub n_dropped: usize,
}

/// Per-image rows for each model, aligned on the same image order.
#[derive(Clone, Copy, Debug)]
pub struct ModelRows<'a> {
    pub ba: &'a RankMatrix,
    pub ts: &'a RankMatrix,
    pub sa: &'a RankMatrix,
}

impl<'a> ModelRows<'a> {
    pub fn get(&self, tag: ModelTag) -> &'a RankMatrix {
        match tag {
            ModelTag::BA => self.ba,
            ModelTag::TS => self.ts,
            ModelTag::SA => self.sa,
        }
    }

    fn check(&self) -> Result<usize> {
        let m = self.ba.n_images();
        for x in [self.ts, self.sa] {
            if x.n_images() != m {
                return Err(Error::LengthMismatch(m, x.n_images()));
            }
            if x.n_regions != self.ba.n_regions {
                return Err(Error::LengthMismatch(self.ba.n_regions, x.n_regions));
            }
        }
        if m == 0 {
            return Err(Error::EmptyInput("no images to resample"));
        }
        Ok(m)
    }
}

/// Statistic for the profiles built from the given image rows.
fn resampled_statistic(
    rows: &ModelRows<'_>,
    idx: &[usize],
    roles: Roles,
    kind: Kind,
    method: Method,
    rule: ProfileRule,
    scratch: &mut Vec<f64>,
) -> Result<f64> {
    let a = rows.get(roles.a).profile_rows(idx, rule, scratch);
    let b = rows.get(roles.b).profile_rows(idx, rule, scratch);
    let c = if kind.needs_reference() {
        let tag = roles
            .c
            .ok_or_else(|| Error::BadConfig("reference role missing".into()))?;
        Some(rows.get(tag).profile_rows(idx, rule, scratch))
    } else {
        None
    };
    statistic(kind, method, &a, &b, c.as_deref())
}

/// Image-level percentile bootstrap.
///
/// Each replicate draws `m` image indices with replacement, shared by all
/// three models, rebuilds the profiles with `rule` and recomputes the
/// statistic.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_ci(
    rows: ModelRows<'_>,
    roles: Roles,
    kind: Kind,
    method: Method,
    rule: ProfileRule,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapOutcome> {
    let (stats, n_dropped) = bootstrap_replicates(rows, roles, kind, method, rule, n_boot, seed)?;
    if stats.is_empty() {
        return Err(Error::AllDegenerate);
    }
    let (ci_low, ci_high) = percentile_interval(&stats, level)?;
    Ok(BootstrapOutcome {
        ci_low,
        ci_high,
        n_bootstrap: n_boot,
        n_dropped,
    })
}

/// Replicate statistics in replicate order plus the number dropped.
pub fn bootstrap_replicates(
    rows: ModelRows<'_>,
    roles: Roles,
    kind: Kind,
    method: Method,
    rule: ProfileRule,
    n_boot: usize,
    seed: u64,
) -> Result<(Vec<f64>, usize)> {
    let m = rows.check()?;
    if n_boot == 0 {
        return Err(Error::BadConfig("need at least one bootstrap replicate".into()));
    }
    let results: Vec<Option<f64>> = (0..n_boot)
        .into_par_iter()
        .map_init(Vec::new, |scratch, i| {
            let mut rng = replicate_rng(seed, i as u64);
            let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
            resampled_statistic(&rows, &idx, roles, kind, method, rule, scratch).ok()
        })
        .collect();
    let stats: Vec<f64> = results.iter().flatten().copied().collect();
    Ok((stats.clone(), n_boot - stats.len()))
}

/// Settings shared by [`infer`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceSettings {
    pub n_perm: usize,
    pub n_boot: usize,
    pub level: f64,
    pub scheme: PermutationScheme,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        InferenceSettings {
            n_perm: 10_000,
            n_boot: 10_000,
            level: 0.95,
            scheme: PermutationScheme::BOnly,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub rho_obs: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_permutations: usize,
    pub n_bootstrap: usize,
    pub n_dropped: usize,
    pub exhaustive: bool,
    pub scheme: PermutationScheme,
    /// Master seed; the permutation and bootstrap stages derive their own.
    pub seed: u64,
}

/// Observed statistic, permutation p-value and bootstrap interval. The
/// permutation and bootstrap stages derive their seeds from `seed`.
pub fn infer(
    rows: ModelRows<'_>,
    roles: Roles,
    kind: Kind,
    method: Method,
    rule: ProfileRule,
    settings: &InferenceSettings,
    seed: u64,
) -> Result<InferenceResult> {
    let m = rows.check()?;
    let all: Vec<usize> = (0..m).collect();
    let mut scratch = Vec::new();
    let profile = |tag: ModelTag, scratch: &mut Vec<f64>| rows.get(tag).profile_rows(&all, rule, scratch);
    let a = profile(roles.a, &mut scratch);
    let b = profile(roles.b, &mut scratch);
    let c = match (kind.needs_reference(), roles.c) {
        (true, Some(tag)) => Some(profile(tag, &mut scratch)),
        (true, None) => return Err(Error::BadConfig("reference role missing".into())),
        (false, _) => None,
    };
    let rho_obs = statistic(kind, method, &a, &b, c.as_deref())?;
    let perm = permutation_test(
        &a,
        &b,
        c.as_deref(),
        kind,
        method,
        settings.n_perm,
        stage_seed(seed, stage::PERMUTATION),
        settings.scheme,
    )?;
    let boot = bootstrap_ci(
        rows,
        roles,
        kind,
        method,
        rule,
        settings.n_boot,
        settings.level,
        stage_seed(seed, stage::BOOTSTRAP),
    )?;
    Ok(InferenceResult {
        rho_obs,
        p_value: perm.p_value,
        ci_low: boot.ci_low,
        ci_high: boot.ci_high,
        n_permutations: perm.n_permutations,
        n_bootstrap: boot.n_bootstrap,
        n_dropped: boot.n_dropped,
        exhaustive: perm.exhaustive,
        scheme: settings.scheme,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rank_profiles::{Aggregation, RankVector};

    #[test]
    fn next_permutation_enumerates_all() {
        let mut p = vec![0, 1, 2, 3];
        let mut count = 1;
        while next_permutation(&mut p) {
            count += 1;
        }
        assert_eq!(count, 24);
        assert_eq!(p, vec![3, 2, 1, 0]);
    }

    #[test]
    fn exhaustive_three_regions() {
        // only the identity and the reversal reach |rho| = 1
        let out = permutation_test(
            &[1., 2., 3.],
            &[1., 2., 3.],
            None,
            Kind::Pairwise,
            Method::Pearson,
            6,
            0,
            PermutationScheme::BOnly,
        )
        .unwrap();
        assert!(out.exhaustive);
        assert_eq!(out.n_permutations, 6);
        assert_eq!(out.p_value, 2.0 / 6.0);
    }

    #[test]
    fn monte_carlo_when_enumeration_too_large() {
        let out = permutation_test(
            &[1., 2., 3.],
            &[1., 2., 3.],
            None,
            Kind::Pairwise,
            Method::Pearson,
            5,
            0,
            PermutationScheme::BOnly,
        )
        .unwrap();
        assert!(!out.exhaustive);
        assert!(out.p_value >= 1.0 / 6.0 && out.p_value <= 1.0);
    }

    #[test]
    fn constant_b_gives_unit_p() {
        let out = permutation_test(
            &[1., 2., 3., 4.],
            &[2., 2., 2., 2.],
            None,
            Kind::Pairwise,
            Method::Pearson,
            100,
            3,
            PermutationScheme::BOnly,
        )
        .unwrap();
        assert_eq!(out.p_value, 1.0);
    }

    #[test]
    fn p_value_bounds_and_determinism() {
        let a: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..20)
            .map(|i| (i as f64) + if i % 2 == 0 { 0.5 } else { -0.5 })
            .collect();
        let run = |seed| {
            permutation_test(
                &a,
                &b,
                None,
                Kind::Pairwise,
                Method::Pearson,
                999,
                seed,
                PermutationScheme::BOnly,
            )
            .unwrap()
        };
        let x = run(11);
        assert_eq!(x, run(11));
        // strongly aligned profiles: nothing beats the observed statistic
        assert_eq!(x.p_value, 1.0 / 1000.0);
        let joint = permutation_test(
            &a,
            &b,
            None,
            Kind::Pairwise,
            Method::Pearson,
            999,
            11,
            PermutationScheme::AAndB,
        )
        .unwrap();
        assert!(joint.p_value >= 1.0 / 1000.0);
    }

    #[test]
    fn result_independent_of_thread_count() {
        let a: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| ((i * 5) % 13) as f64).collect();
        let c: Vec<f64> = (0..30).map(|i| ((i * 3) % 17) as f64).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    permutation_test(
                        &a,
                        &b,
                        Some(&c),
                        Kind::Partial,
                        Method::Pearson,
                        2000,
                        5,
                        PermutationScheme::BOnly,
                    )
                    .unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn percentile_routine_on_injected_replicates() {
        // {0.1 i : i = 1..100}; positions 0.025*99 = 2.475 and 0.975*99 = 96.525
        // interpolate 0.3..0.4 and 9.7..9.8 in the sorted list
        let reps: Vec<f64> = (1..=100).map(|i| 0.1 * i as f64).collect();
        let (lo, hi) = percentile_interval(&reps, 0.95).unwrap();
        assert!((lo - 0.3475).abs() < 1e-12, "{lo}");
        assert!((hi - 9.7525).abs() < 1e-12, "{hi}");
    }

    fn matrix(rows: &[&[f64]]) -> RankMatrix {
        RankMatrix::from_vectors(
            &rows
                .iter()
                .map(|r| RankVector {
                    image_id: String::new(),
                    ranks: r.to_vec(),
                })
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn single_image_gives_point_interval() {
        let ba = matrix(&[&[1., 3., 2., 4.]]);
        let ts = matrix(&[&[1., 2., 3., 4.]]);
        let sa = matrix(&[&[2., 1., 4., 3.]]);
        let rows = ModelRows {
            ba: &ba,
            ts: &ts,
            sa: &sa,
        };
        let rule = ProfileRule::RankAgg(Aggregation::Median);
        let res = infer(
            rows,
            Roles::SHORTCUT,
            Kind::Partial,
            Method::Pearson,
            rule,
            &InferenceSettings {
                n_perm: 24,
                n_boot: 50,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        assert!((res.rho_obs - 1.0).abs() < 1e-12);
        assert_eq!(res.ci_low, res.rho_obs);
        assert_eq!(res.ci_high, res.rho_obs);
        assert!(res.exhaustive);
    }

    #[test]
    fn all_degenerate_bootstrap() {
        // TS equals BA in every image: residuals vanish in every replicate
        let ba = matrix(&[&[1., 3., 2., 4.], &[2., 1., 3., 4.]]);
        let sa = matrix(&[&[4., 3., 2., 1.], &[1., 2., 3., 4.]]);
        let rows = ModelRows {
            ba: &ba,
            ts: &ba,
            sa: &sa,
        };
        let err = bootstrap_ci(
            rows,
            Roles::SHORTCUT,
            Kind::Partial,
            Method::Pearson,
            ProfileRule::RankAgg(Aggregation::Mean),
            20,
            0.95,
            1,
        );
        assert!(matches!(err, Err(Error::AllDegenerate)));
    }
}
