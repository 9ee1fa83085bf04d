//! Synthetic attribution datasets with planted task and shortcut regions.
//!
//! The image is a square grid of `side x side` regions, each `block` pixels
//! wide. Two latent templates put unit mass on the task and shortcut
//! regions over a shared smooth background. Per image:
//!
//! ```text
//! BA = t_task + noise
//! SA = t_shortcut + noise
//! TS = (1 - lambda) t_task + lambda t_shortcut + noise
//! ```
//!
//! with independent Gaussian pixel noise per model, followed by ReLU and
//! l1 normalisation. The companion feature bundle lives on the region grid:
//! channel 0 carries the label on task cells, channel 1 the attribute on
//! shortcut cells, and the linear head weights the shortcut channel by
//! `shortcut_gain * lambda`, so minority groups are misclassified more as
//! lambda grows.

use std::path::Path;

use ndarray::{Array1, Array2, Array4, ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::manifest::write_bundle;
use crate::interchange::{
    preprocess_in_place, AttributionMap, FeatureBundle, GroupLabels, Manifest, ModelTag, PreprocessMode,
};
use crate::partitioning::{grid_partition, Partition};
use crate::seed::{replicate_rng, stage, stage_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Number of regions; must be a perfect square.
    pub n_regions: usize,
    /// Region side length in pixels.
    pub block: usize,
    pub m: usize,
    pub lambda: f64,
    pub noise_sigma: f64,
    /// Amplitude of the smooth background shared by all templates.
    pub background: f64,
    /// Defaults to a 2x2 patch below and left of centre.
    pub task_regions: Option<Vec<usize>>,
    /// Defaults to a 2x2 patch in the top-right corner.
    pub shortcut_regions: Option<Vec<usize>>,
    /// Probability that the attribute equals the label.
    pub agreement: f64,
    /// Feature value on signal cells (sign carries the label or attribute).
    pub feature_signal: f64,
    pub feature_noise: f64,
    pub shortcut_gain: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_regions: 64,
            block: 4,
            m: 200,
            lambda: 0.5,
            noise_sigma: 0.1,
            background: 0.0,
            task_regions: None,
            shortcut_regions: None,
            agreement: 0.8,
            feature_signal: 4.0,
            feature_noise: 1.0,
            shortcut_gain: 2.0,
            seed: 0,
        }
    }
}

/// Cells of the `side x side` grid covered by the `size x size` patch at
/// `(row, col)`.
fn patch(side: usize, row: usize, col: usize, size: usize) -> Vec<usize> {
    (row..row + size)
        .flat_map(|r| (col..col + size).map(move |c| r * side + c))
        .collect()
}

impl SynthConfig {
    pub fn side(&self) -> usize {
        (self.n_regions as f64).sqrt().round() as usize
    }

    pub fn image_shape(&self) -> [usize; 2] {
        let s = self.side() * self.block;
        [s, s]
    }

    pub fn task_set(&self) -> Vec<usize> {
        let s = self.side();
        self.task_regions.clone().unwrap_or_else(|| patch(s, s / 2, s / 4, 2))
    }

    pub fn shortcut_set(&self) -> Vec<usize> {
        let s = self.side();
        self.shortcut_regions.clone().unwrap_or_else(|| patch(s, 0, s - 2, 2))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadConfig(msg));
        let s = self.side();
        if s * s != self.n_regions || s < 4 {
            return bad(format!("n_regions {} must be a square of at least 16", self.n_regions));
        }
        if self.block == 0 || self.m == 0 {
            return bad("block and m must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.noise_sigma >= 0.0 && self.feature_noise >= 0.0 && self.background >= 0.0) {
            return bad("noise levels and background must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.agreement) {
            return bad(format!("agreement {} outside [0, 1]", self.agreement));
        }
        let (task, shortcut) = (self.task_set(), self.shortcut_set());
        if task.is_empty() || shortcut.is_empty() {
            return bad("task and shortcut region sets must be nonempty".into());
        }
        if task.iter().chain(&shortcut).any(|&r| r >= self.n_regions) {
            return bad("region index out of range".into());
        }
        if task.iter().any(|r| shortcut.contains(r)) {
            return bad("task and shortcut regions overlap".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub image_ids: Vec<String>,
    pub partition: Partition,
    /// Preprocessed maps per model, in `BA, TS, SA` order.
    pub maps: [Vec<ArrayD<f64>>; 3],
    pub labels: GroupLabels,
    pub features: FeatureBundle,
}

impl SynthDataset {
    pub fn attribution_maps(&self, model: ModelTag) -> Vec<AttributionMap> {
        let k = ModelTag::ALL.iter().position(|&t| t == model).expect("known tag");
        self.image_ids
            .iter()
            .zip(&self.maps[k])
            .map(|(id, values)| AttributionMap {
                image_id: id.clone(),
                model,
                values: values.clone(),
            })
            .collect()
    }

    /// Writes the maps, the feature arrays and a manifest under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let refs = self.features.save_npy(dir)?;
        write_bundle(
            dir,
            &self.image_ids,
            [&self.maps[0], &self.maps[1], &self.maps[2]],
            Some(&self.labels),
            Some(refs),
        )
    }
}

fn indicator(partition: &Partition, regions: &[usize]) -> Vec<f64> {
    let mut on = vec![false; partition.n_regions()];
    for &r in regions {
        on[r] = true;
    }
    partition
        .labels()
        .iter()
        .map(|&l| if on[l as usize] { 1.0 } else { 0.0 })
        .collect()
}

struct Sample {
    maps: [ArrayD<f64>; 3],
    y: u8,
    a: u8,
    features: Vec<f64>,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let shape = cfg.image_shape();
    let side = cfg.side();
    let partition = grid_partition(&shape, &[cfg.block, cfg.block])?;
    let (task, shortcut) = (cfg.task_set(), cfg.shortcut_set());
    let (h, w) = (shape[0], shape[1]);
    let background: Vec<f64> = (0..h * w)
        .map(|p| {
            let (r, c) = ((p / w) as f64 / h as f64, (p % w) as f64 / w as f64);
            let t = std::f64::consts::TAU;
            cfg.background * 0.5 * (1.0 + (t * r).sin() * (t * c).cos())
        })
        .collect();
    let with_bg = |t: Vec<f64>| -> Vec<f64> { t.iter().zip(&background).map(|(x, b)| x + b).collect() };
    let t_task = with_bg(indicator(&partition, &task));
    let t_short = with_bg(indicator(&partition, &shortcut));
    let t_ts: Vec<f64> = t_task
        .iter()
        .zip(&t_short)
        .map(|(a, b)| (1.0 - cfg.lambda) * a + cfg.lambda * b)
        .collect();

    let n_channels = 4;
    let seed = stage_seed(cfg.seed, stage::SYNTH);
    let samples: Vec<Sample> = (0..cfg.m)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let mut noisy = |t: &[f64]| -> Result<ArrayD<f64>> {
                let v: Vec<f64> = t
                    .iter()
                    .map(|x| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x + cfg.noise_sigma * z
                    })
                    .collect();
                let mut arr = ArrayD::from_shape_vec(IxDyn(&shape), v).expect("shape matches");
                preprocess_in_place(&mut arr, PreprocessMode::ReluL1)?;
                Ok(arr)
            };
            let maps = [noisy(&t_task)?, noisy(&t_ts)?, noisy(&t_short)?];
            let y = u8::from(rng.random_bool(0.5));
            let a = if rng.random_bool(cfg.agreement) { y } else { 1 - y };
            let sign = |v: u8| if v == 1 { 1.0 } else { -1.0 };
            let mut features = vec![0.0; n_channels * side * side];
            for ch in 0..n_channels {
                for cell in 0..side * side {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let mean = match ch {
                        0 if task.contains(&cell) => cfg.feature_signal * sign(y),
                        1 if shortcut.contains(&cell) => cfg.feature_signal * sign(a),
                        _ => 0.0,
                    };
                    features[ch * side * side + cell] = mean + cfg.feature_noise * z;
                }
            }
            Ok(Sample { maps, y, a, features })
        })
        .collect::<Result<_>>()?;

    let image_ids: Vec<String> = (0..cfg.m).map(|i| format!("img{i:05}")).collect();
    let labels = GroupLabels::new(
        samples.iter().map(|s| s.y).collect(),
        samples.iter().map(|s| s.a).collect(),
    )?;
    let feature_values: Vec<f64> = samples.iter().flat_map(|s| s.features.iter().copied()).collect();
    let features =
        Array4::from_shape_vec((cfg.m, n_channels, side, side), feature_values).expect("feature length matches");
    let gamma = cfg.shortcut_gain * cfg.lambda;
    let mut weights = Array2::zeros((2, n_channels));
    weights[[0, 0]] = -1.0;
    weights[[1, 0]] = 1.0;
    weights[[0, 1]] = -gamma;
    weights[[1, 1]] = gamma;
    let features = FeatureBundle::new(features, weights, Array1::zeros(2), image_ids.clone())?;

    let mut maps: [Vec<ArrayD<f64>>; 3] = Default::default();
    for s in samples {
        for (slot, map) in maps.iter_mut().zip(s.maps) {
            slot.push(map);
        }
    }
    Ok(SynthDataset {
        config: cfg.clone(),
        image_ids,
        partition,
        maps,
        labels,
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlations::{partial_corr, Method};
    use crate::interchange::load_manifest;
    use crate::rank_profiles::{Aggregation, RankMatrix, Statistic};

    fn small(lambda: f64, sigma: f64) -> SynthConfig {
        SynthConfig {
            n_regions: 16,
            m: 12,
            lambda,
            noise_sigma: sigma,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_regions() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.image_shape(), [32, 32]);
        assert_eq!(cfg.task_set(), vec![34, 35, 42, 43]);
        assert_eq!(cfg.shortcut_set(), vec![6, 7, 14, 15]);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            SynthConfig {
                n_regions: 60,
                ..Default::default()
            },
            SynthConfig {
                lambda: 1.5,
                ..Default::default()
            },
            SynthConfig {
                task_regions: Some(vec![6]),
                ..Default::default()
            },
            SynthConfig {
                shortcut_regions: Some(vec![64]),
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::BadConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn lambda_zero_without_noise_copies_baseline() {
        let d = generate_synthetic(&small(0.0, 0.0)).unwrap();
        assert_eq!(d.maps[0], d.maps[1]);
        for m in &d.maps[1] {
            assert!((m.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_one_without_noise_aligns_with_sa() {
        let d = generate_synthetic(&small(1.0, 0.0)).unwrap();
        let profile = |tag| {
            RankMatrix::from_maps(&d.attribution_maps(tag), &d.partition, Statistic::Mean)
                .unwrap()
                .aggregate(Aggregation::Median)
        };
        let (ba, ts, sa) = (profile(ModelTag::BA), profile(ModelTag::TS), profile(ModelTag::SA));
        let rho = partial_corr(&ts, &sa, &ba, Method::Pearson).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_threads_agnostic() {
        let cfg = small(0.5, 0.1);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| generate_synthetic(&cfg).unwrap());
        let many = generate_synthetic(&cfg).unwrap();
        assert_eq!(one.maps, many.maps);
        assert_eq!(one.labels, many.labels);
        assert_eq!(one.features, many.features);
    }

    #[test]
    fn written_bundle_loads() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_synthetic(&small(0.25, 0.1)).unwrap();
        d.write(dir.path()).unwrap();
        let m = load_manifest(dir.path().join("manifest.json")).unwrap();
        assert_eq!(m.len(), 12);
        let ts = m.load_maps(ModelTag::TS, PreprocessMode::None).unwrap();
        assert_eq!(ts[3].values, d.maps[1][3]);
        let f = FeatureBundle::load(m.features.as_ref().unwrap(), m.image_ids()).unwrap();
        assert_eq!(f, d.features);
        assert_eq!(m.labels().unwrap(), d.labels);
    }
}
