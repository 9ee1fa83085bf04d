//! Test-time feature attenuation guided by an RCS* map.
//!
//! The map is resized to the feature grid, scaled to `[-1, 1]`, and turned
//! into spatial pooling weights: task-aligned (negative) cells are boosted
//! by `alpha`, shortcut-aligned cells damped by `beta`. Pooled features go
//! through the exported linear head unchanged.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::{FeatureBundle, GroupLabels};
use crate::rcs::shuffle_rcs;
use crate::seed::{replicate_rng, stage, stage_seed};

pub const EPSILON: f64 = 1e-8;

/// Bilinear resampling with pixel centres aligned (half-pixel offsets,
/// edge values replicated).
pub fn bilinear_resize(src: ArrayView2<'_, f64>, shape: (usize, usize)) -> Array2<f64> {
    let (h, w) = src.dim();
    let (oh, ow) = shape;
    let coord = |i: usize, out: usize, len: usize| {
        let x = ((i as f64 + 0.5) * len as f64 / out as f64 - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, x - lo as f64)
    };
    Array2::from_shape_fn(shape, |(r, c)| {
        let (r0, r1, fr) = coord(r, oh, h);
        let (c0, c1, fc) = coord(c, ow, w);
        let top = src[[r0, c0]] * (1.0 - fc) + src[[r0, c1]] * fc;
        let bottom = src[[r1, c0]] * (1.0 - fc) + src[[r1, c1]] * fc;
        top * (1.0 - fr) + bottom * fr
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttenuationMask {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    /// Pooling weights on the feature grid, shared by every image.
    pub weights: Array2<f64>,
}

impl AttenuationMask {
    /// All-ones mask: plain global average pooling.
    pub fn identity(shape: (usize, usize)) -> Self {
        AttenuationMask {
            alpha: 0.0,
            beta: 0.0,
            epsilon: EPSILON,
            weights: Array2::ones(shape),
        }
    }
}

/// Scaled map `W / (max|W| + eps)` on the feature grid.
pub fn scaled_map(rcs_star: ArrayView2<'_, f64>, feature_shape: (usize, usize)) -> Result<Array2<f64>> {
    let (h, w) = rcs_star.dim();
    if h == 0 || w == 0 || feature_shape.0 == 0 || feature_shape.1 == 0 {
        return Err(Error::BadShape(format!(
            "cannot resize {h}x{w} map to {}x{}",
            feature_shape.0, feature_shape.1
        )));
    }
    if rcs_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadShape("RCS* map has non-finite values".into()));
    }
    let resized = bilinear_resize(rcs_star, feature_shape);
    let scale = resized.iter().fold(0.0f64, |m, v| m.max(v.abs())) + EPSILON;
    Ok(resized.mapv(|v| v / scale))
}

/// Mask from an already scaled map: `A = 1 - W * S`, with `S = alpha` where
/// `W < 0` and `beta` elsewhere.
pub fn mask_from_scaled(scaled: &Array2<f64>, alpha: f64, beta: f64) -> AttenuationMask {
    AttenuationMask {
        alpha,
        beta,
        epsilon: EPSILON,
        weights: scaled.mapv(|v| 1.0 - v * if v < 0.0 { alpha } else { beta }),
    }
}

pub fn build_mask(
    rcs_star: ArrayView2<'_, f64>,
    feature_shape: (usize, usize),
    alpha: f64,
    beta: f64,
) -> Result<AttenuationMask> {
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(Error::BadConfig(format!(
            "alpha and beta must be non-negative, got ({alpha}, {beta})"
        )));
    }
    Ok(mask_from_scaled(&scaled_map(rcs_star, feature_shape)?, alpha, beta))
}

/// Weighted global pooling followed by the linear head; returns `B x K`.
pub fn weighted_pool_and_classify(features: &FeatureBundle, mask: &AttenuationMask) -> Result<Array2<f64>> {
    let (hs, ws) = features.spatial_shape();
    if mask.weights.dim() != (hs, ws) {
        return Err(Error::ShapeMismatch {
            expected: vec![hs, ws],
            found: mask.weights.shape().to_vec(),
        });
    }
    let (b, c, _, _) = features.features.dim();
    let k = features.bias.len();
    let denom = mask.weights.sum() + mask.epsilon;
    let rows: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let z: Vec<f64> = (0..c)
                .map(|ch| {
                    let f = features.features.slice(ndarray::s![i, ch, .., ..]);
                    f.iter().zip(mask.weights.iter()).map(|(x, a)| x * a).sum::<f64>() / denom
                })
                .collect();
            (0..k)
                .map(|j| features.bias[j] + z.iter().zip(features.weights.row(j)).map(|(x, w)| x * w).sum::<f64>())
                .collect()
        })
        .collect();
    Ok(Array2::from_shape_fn((b, k), |(i, j)| rows[i][j]))
}

/// Index of the largest logit per row; ties go to the lower class.
pub fn predict(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (j, &v)| if v > best.1 { (j, v) } else { best },
                )
                .0
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    /// Accuracy per group, indexed `2 * y + a`.
    pub group_accuracy: [f64; 4],
    pub balanced_accuracy: f64,
    pub worst_group_accuracy: f64,
}

pub fn group_metrics(predictions: &[usize], labels: &GroupLabels) -> Result<GroupMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch(labels.len(), predictions.len()));
    }
    let mut correct = [0usize; 4];
    let mut total = [0usize; 4];
    for (i, &p) in predictions.iter().enumerate() {
        let g = labels.group(i);
        total[g] += 1;
        correct[g] += usize::from(p == labels.y[i] as usize);
    }
    if let Some(g) = (0..4).find(|&g| total[g] == 0) {
        return Err(Error::EmptyGroup {
            y: (g / 2) as u8,
            a: (g % 2) as u8,
        });
    }
    let group_accuracy: [f64; 4] = std::array::from_fn(|g| correct[g] as f64 / total[g] as f64);
    let recall = |y: usize| (correct[2 * y] + correct[2 * y + 1]) as f64 / (total[2 * y] + total[2 * y + 1]) as f64;
    Ok(GroupMetrics {
        group_accuracy,
        balanced_accuracy: (recall(0) + recall(1)) / 2.0,
        worst_group_accuracy: group_accuracy.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// Splits images into `k` folds, stratified by `(y, a)` group.
pub fn assign_folds(labels: &GroupLabels, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::BadConfig(format!("need at least two folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    for g in 0..4 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels.group(i) == g).collect();
        members.shuffle(&mut rng);
        for (j, i) in members.into_iter().enumerate() {
            fold[i] = j % k;
        }
    }
    Ok(fold)
}

/// `lo:hi:step` inclusive range, e.g. `"0:2:0.25"`, or a comma list.
pub fn parse_axis(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::BadConfig(format!("bad grid axis {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let (lo, hi, step) = (v[0], v[1], v[2]);
        if step.is_nan() || step <= 0.0 || hi < lo {
            return Err(bad());
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|i| lo + i as f64 * step).collect());
    }
    spec.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

/// Cartesian product of `axis` with itself as `(alpha, beta)` pairs.
pub fn square_grid(axis: &[f64]) -> Vec<(f64, f64)> {
    axis.iter().flat_map(|&a| axis.iter().map(move |&b| (a, b))).collect()
}

pub fn default_grid() -> Vec<(f64, f64)> {
    square_grid(&(0..=8).map(|i| i as f64 * 0.25).collect::<Vec<_>>())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub folds: usize,
    /// Allowed balanced-accuracy shortfall, as a fraction (0.005 = 0.5 points).
    pub ba_tolerance: f64,
    pub n_shuffles: usize,
    pub min_frac: f64,
    pub seed: u64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            folds: 4,
            ba_tolerance: 0.005,
            n_shuffles: 10,
            min_frac: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub alpha: f64,
    pub beta: f64,
    /// False when no grid point met the constraints and the identity mask
    /// was used.
    pub feasible: bool,
    pub tuning_baseline: GroupMetrics,
    pub tuning_selected: GroupMetrics,
    pub test_baseline: GroupMetrics,
    pub test_selected: GroupMetrics,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub balanced_accuracy: f64,
    pub worst_group_accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffledSummary {
    pub n_shuffles: usize,
    pub balanced_accuracy: Spread,
    pub worst_group_accuracy: Spread,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub folds: Vec<FoldReport>,
    /// Held-out metrics averaged over folds.
    pub baseline: Summary,
    pub selected: Summary,
}

/// One row per mask type, as in the fold report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttenuationReport {
    pub interpolation: String,
    pub epsilon: f64,
    pub grid: Vec<(f64, f64)>,
    pub settings: SearchSettings,
    pub rcs_star: SearchOutcome,
    pub shuffled: Option<ShuffledSummary>,
}

fn mean_summary(folds: &[FoldReport], pick: impl Fn(&FoldReport) -> GroupMetrics) -> Summary {
    let n = folds.len() as f64;
    Summary {
        balanced_accuracy: folds.iter().map(|f| pick(f).balanced_accuracy).sum::<f64>() / n,
        worst_group_accuracy: folds.iter().map(|f| pick(f).worst_group_accuracy).sum::<f64>() / n,
    }
}

/// Fold-wise grid search over `(alpha, beta)`.
///
/// For each held-out fold, the remaining folds are the tuning set. A grid
/// point is admissible when its tuning worst-group accuracy is at least the
/// identity mask's and its tuning balanced accuracy is within
/// `ba_tolerance` of the larger of the identity's and the best grid
/// point's. Among admissible points the highest tuning worst-group accuracy
/// wins, then the smaller `alpha + beta`, then the smaller `(alpha, beta)`.
pub fn grid_search_alpha_beta(
    features: &FeatureBundle,
    labels: &GroupLabels,
    rcs_star: ArrayView2<'_, f64>,
    grid: &[(f64, f64)],
    folds: &[usize],
    ba_tolerance: f64,
) -> Result<SearchOutcome> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if labels.len() != features.len() || folds.len() != features.len() {
        return Err(Error::LengthMismatch(features.len(), labels.len().min(folds.len())));
    }
    let scaled = scaled_map(rcs_star, features.spatial_shape())?;
    let baseline = predict(&weighted_pool_and_classify(
        features,
        &AttenuationMask::identity(features.spatial_shape()),
    )?);
    let preds: Vec<Vec<usize>> = grid
        .par_iter()
        .map(|&(a, b)| {
            if !(a >= 0.0 && b >= 0.0) {
                return Err(Error::BadConfig(format!("negative grid point ({a}, {b})")));
            }
            Ok(predict(&weighted_pool_and_classify(
                features,
                &mask_from_scaled(&scaled, a, b),
            )?))
        })
        .collect::<Result<_>>()?;

    let k = folds.iter().copied().max().map_or(0, |m| m + 1);
    let metrics_on = |p: &[usize], idx: &[usize]| -> Result<GroupMetrics> {
        let sub: Vec<usize> = idx.iter().map(|&i| p[i]).collect();
        group_metrics(&sub, &labels.subset(idx))
    };
    let mut reports = Vec::with_capacity(k);
    for f in 0..k {
        let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == f).collect();
        let tune: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != f).collect();
        let base_tune = metrics_on(&baseline, &tune)?;
        let tuned: Vec<GroupMetrics> = preds.iter().map(|p| metrics_on(p, &tune)).collect::<Result<_>>()?;
        let best_ba = tuned
            .iter()
            .map(|m| m.balanced_accuracy)
            .fold(base_tune.balanced_accuracy, f64::max);
        let mut choice: Option<usize> = None;
        for (g, m) in tuned.iter().enumerate() {
            if m.worst_group_accuracy < base_tune.worst_group_accuracy
                || m.balanced_accuracy < best_ba - ba_tolerance - 1e-12
            {
                continue;
            }
            let better = match choice {
                None => true,
                Some(c) => {
                    let (mc, (ac, bc), (ag, bg)) = (&tuned[c], grid[c], grid[g]);
                    (m.worst_group_accuracy, -(ag + bg), -ag, -bg).partial_cmp(&(
                        mc.worst_group_accuracy,
                        -(ac + bc),
                        -ac,
                        -bc,
                    )) == Some(std::cmp::Ordering::Greater)
                }
            };
            if better {
                choice = Some(g);
            }
        }
        let (alpha, beta, sel_pred, sel_tune) = match choice {
            Some(g) => (grid[g].0, grid[g].1, &preds[g], tuned[g]),
            None => (0.0, 0.0, &baseline, base_tune),
        };
        reports.push(FoldReport {
            fold: f,
            alpha,
            beta,
            feasible: choice.is_some(),
            tuning_baseline: base_tune,
            tuning_selected: sel_tune,
            test_baseline: metrics_on(&baseline, &test)?,
            test_selected: metrics_on(sel_pred, &test)?,
        });
    }
    Ok(SearchOutcome {
        baseline: mean_summary(&reports, |f| f.test_baseline),
        selected: mean_summary(&reports, |f| f.test_selected),
        folds: reports,
    })
}

fn spread(values: &[f64]) -> Spread {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Spread { mean, sd }
}

/// Grid search with the RCS* map, then the same protocol on `n_shuffles`
/// spatially shuffled copies of it.
pub fn attenuate(
    features: &FeatureBundle,
    labels: &GroupLabels,
    rcs_star: ArrayView2<'_, f64>,
    grid: &[(f64, f64)],
    settings: &SearchSettings,
) -> Result<AttenuationReport> {
    let folds = assign_folds(labels, settings.folds, stage_seed(settings.seed, stage::FOLDS))?;
    let main = grid_search_alpha_beta(features, labels, rcs_star, grid, &folds, settings.ba_tolerance)?;
    let shuffled = if settings.n_shuffles > 0 {
        let (h, w) = rcs_star.dim();
        let flat: Vec<f64> = rcs_star.iter().copied().collect();
        let shuffle_seed = stage_seed(settings.seed, stage::SHUFFLE);
        let outcomes: Vec<Summary> = (0..settings.n_shuffles)
            .map(|i| {
                let s = rand::Rng::random::<u64>(&mut replicate_rng(shuffle_seed, i as u64));
                let map = Array2::from_shape_vec((h, w), shuffle_rcs(&flat, h, w, settings.min_frac, s)?)
                    .expect("shape checked by shuffle");
                Ok(grid_search_alpha_beta(features, labels, map.view(), grid, &folds, settings.ba_tolerance)?.selected)
            })
            .collect::<Result<_>>()?;
        Some(ShuffledSummary {
            n_shuffles: settings.n_shuffles,
            balanced_accuracy: spread(&outcomes.iter().map(|s| s.balanced_accuracy).collect::<Vec<_>>()),
            worst_group_accuracy: spread(&outcomes.iter().map(|s| s.worst_group_accuracy).collect::<Vec<_>>()),
        })
    } else {
        None
    };
    Ok(AttenuationReport {
        interpolation: "bilinear".into(),
        epsilon: EPSILON,
        grid: grid.to_vec(),
        settings: *settings,
        rcs_star: main,
        shuffled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array1, Array4};

    fn bundle(features: Array4<f64>, weights: Array2<f64>) -> FeatureBundle {
        let b = features.dim().0;
        let k = weights.dim().0;
        FeatureBundle::new(
            features,
            weights,
            Array1::zeros(k),
            (0..b).map(|i| i.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn worked_mask_example() {
        let w = arr2(&[[-1.0, 0.5]]);
        let m = build_mask(w.view(), (1, 2), 1.0, 1.0).unwrap();
        assert!((m.weights[[0, 0]] - 2.0).abs() < 1e-6);
        assert!((m.weights[[0, 1]] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn trivial_masks_are_ones() {
        let zero = Array2::zeros((3, 3));
        assert!(build_mask(zero.view(), (3, 3), 2.0, 2.0)
            .unwrap()
            .weights
            .iter()
            .all(|&v| v == 1.0));
        let w = arr2(&[[-1.0, 0.3], [0.7, -0.2]]);
        assert!(build_mask(w.view(), (2, 2), 0.0, 0.0)
            .unwrap()
            .weights
            .iter()
            .all(|&v| v == 1.0));
        assert!(build_mask(w.view(), (2, 2), -1.0, 0.0).is_err());
    }

    #[test]
    fn alpha_monotone_on_negative_cells() {
        let w = arr2(&[[-1.0, 0.3], [0.7, -0.2]]);
        let lo = build_mask(w.view(), (2, 2), 0.5, 1.0).unwrap();
        let hi = build_mask(w.view(), (2, 2), 0.75, 1.0).unwrap();
        assert!(hi.weights[[0, 0]] > lo.weights[[0, 0]]);
        assert!(hi.weights[[1, 1]] > lo.weights[[1, 1]]);
        assert_eq!(hi.weights[[0, 1]], lo.weights[[0, 1]]);
    }

    #[test]
    fn bilinear_matches_hand_values() {
        let src = arr2(&[[0.0, 1.0], [2.0, 3.0]]);
        let up = bilinear_resize(src.view(), (4, 4));
        // sample positions -0.25, 0.25, 0.75, 1.25 clamp to [0, 1]
        assert_eq!(up.row(0).to_vec(), vec![0.0, 0.25, 0.75, 1.0]);
        assert_eq!(up.column(0).to_vec(), vec![0.0, 0.5, 1.5, 2.0]);
        assert_eq!(bilinear_resize(src.view(), (2, 2)), src);
        // block-constant maps survive downsampling by an even factor
        let blocks = Array2::from_shape_fn((8, 8), |(r, c)| (r / 4 * 2 + c / 4) as f64);
        assert_eq!(bilinear_resize(blocks.view(), (2, 2)), arr2(&[[0.0, 1.0], [2.0, 3.0]]));
    }

    #[test]
    fn pooled_example() {
        let f = Array4::from_shape_vec((1, 1, 2, 2), vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let fb = bundle(f, arr2(&[[1.0], [0.0]]));
        let mask = AttenuationMask {
            weights: arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            ..AttenuationMask::identity((2, 2))
        };
        let logits = weighted_pool_and_classify(&fb, &mask).unwrap();
        assert!((logits[[0, 0]] - 8.0 / (2.0 + EPSILON)).abs() < 1e-12);
        let plain = weighted_pool_and_classify(&fb, &AttenuationMask::identity((2, 2))).unwrap();
        assert!((plain[[0, 0]] - 4.0).abs() < 1e-7);
        let wrong = AttenuationMask::identity((3, 2));
        assert!(matches!(
            weighted_pool_and_classify(&fb, &wrong),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn single_location_pools_to_itself() {
        let f = Array4::from_shape_vec((1, 2, 1, 1), vec![0.3, -2.0]).unwrap();
        let fb = bundle(f, arr2(&[[1.0, 0.0], [0.0, 1.0]]));
        let mask = AttenuationMask {
            weights: arr2(&[[5.0]]),
            ..AttenuationMask::identity((1, 1))
        };
        let logits = weighted_pool_and_classify(&fb, &mask).unwrap();
        assert!((logits[[0, 0]] - 0.3).abs() < 1e-8);
        assert!((logits[[0, 1]] + 2.0).abs() < 1e-8);
    }

    fn labels() -> GroupLabels {
        // 2 samples per group, in group order
        GroupLabels::new(vec![0, 0, 0, 0, 1, 1, 1, 1], vec![0, 0, 1, 1, 0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn metrics() {
        let l = labels();
        let all = group_metrics(&[0, 0, 0, 0, 1, 1, 1, 1], &l).unwrap();
        assert_eq!(all.worst_group_accuracy, 1.0);
        assert_eq!(all.balanced_accuracy, 1.0);
        // y=0 recall 3/4, y=1 recall 1/4
        let m = group_metrics(&[0, 0, 0, 1, 0, 0, 1, 0], &l).unwrap();
        assert_eq!(m.group_accuracy, [1.0, 0.5, 0.0, 0.5]);
        assert_eq!(m.worst_group_accuracy, 0.0);
        assert_eq!(m.balanced_accuracy, 0.5);
        let short = GroupLabels::new(vec![0, 1], vec![0, 1]).unwrap();
        assert!(matches!(
            group_metrics(&[0, 1], &short),
            Err(Error::EmptyGroup { y: 0, a: 1 })
        ));
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_axis("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_axis("0,0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_axis("1:0:0.5").is_err());
        assert_eq!(default_grid().len(), 81);
    }

    #[test]
    fn folds_are_stratified() {
        let l = labels();
        let f = assign_folds(&l, 2, 7).unwrap();
        for g in 0..4 {
            let mut fs: Vec<usize> = (0..8).filter(|&i| l.group(i) == g).map(|i| f[i]).collect();
            fs.sort();
            assert_eq!(fs, vec![0, 1]);
        }
    }

    #[test]
    fn identity_grid_returns_baseline() {
        let f = Array4::from_shape_fn((8, 1, 1, 2), |(b, _, _, j)| (b as f64 - 3.5) * (j as f64 + 1.0));
        let fb = bundle(f, arr2(&[[-1.0], [1.0]]));
        let l = labels();
        let folds = assign_folds(&l, 2, 0).unwrap();
        let map = arr2(&[[0.5, -0.5]]);
        let out = grid_search_alpha_beta(&fb, &l, map.view(), &[(0.0, 0.0)], &folds, 0.005).unwrap();
        for r in &out.folds {
            assert_eq!((r.alpha, r.beta), (0.0, 0.0));
            assert!(r.feasible);
            assert_eq!(r.test_selected, r.test_baseline);
        }
        assert!(matches!(
            grid_search_alpha_beta(&fb, &l, map.view(), &[], &folds, 0.005),
            Err(Error::EmptyGrid)
        ));
    }

    #[test]
    fn infeasible_grid_falls_back() {
        // location 0 carries the signal, location 1 anti-signal; boosting
        // location 1 (beta on a positive map) only hurts
        let f = Array4::from_shape_fn((8, 1, 1, 2), |(b, _, _, j)| {
            let s = if b < 4 { -1.0 } else { 1.0 };
            if j == 0 {
                s
            } else {
                -0.5 * s
            }
        });
        let fb = bundle(f, arr2(&[[-1.0], [1.0]]));
        let l = labels();
        let folds = assign_folds(&l, 2, 0).unwrap();
        let map = arr2(&[[1.0, -1.0]]);
        let out = grid_search_alpha_beta(&fb, &l, map.view(), &[(2.0, 2.0)], &folds, 0.005).unwrap();
        for r in &out.folds {
            assert!(!r.feasible);
            assert_eq!((r.alpha, r.beta), (0.0, 0.0));
        }
        assert_eq!(out.selected, out.baseline);
    }
}
