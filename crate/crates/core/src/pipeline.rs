//! End-to-end audit: load, partition, profile, correlate, infer, score
//! regions and, when features are available, attenuate.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attenuation::{attenuate, parse_axis, square_grid, AttenuationReport, SearchSettings};
use crate::correlations::{Kind, Method, Roles};
use crate::error::{Error, Result};
use crate::inference::{infer, InferenceSettings, ModelRows};
use crate::interchange::report::{Heatmap, Palette, ReportBundle, Table};
use crate::interchange::{load_manifest, npy, write_report, FeatureBundle, Manifest, ModelTag, PreprocessMode};
use crate::partitioning::{atlas_partition, average_sobel, grid_partition, slic_partition, Partition, SlicParams};
use crate::rank_profiles::{Aggregation, Order, ProfileRule, RankMatrix, Statistic};
use crate::rcs::{compute_rcs, rasterize_rcs};
use crate::seed::{stage, stage_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PartitionSpec {
    /// Regular blocks of the given size per axis.
    Grid { block: Vec<usize> },
    /// Superpixels on the averaged Sobel edge map of the manifest's raw
    /// images.
    Slic {
        k: usize,
        #[serde(default = "default_compactness")]
        compactness: f64,
        #[serde(default = "default_iters")]
        iters: usize,
    },
    /// Integer label volume; `background` marks unlabelled voxels.
    Atlas {
        path: PathBuf,
        #[serde(default)]
        background: i64,
    },
    /// A partition saved by `Partition::save`.
    File { path: PathBuf },
}

fn default_compactness() -> f64 {
    SlicParams::default().compactness
}

fn default_iters() -> usize {
    SlicParams::default().iters
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub kind: Kind,
    pub roles: Roles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttenuationConfig {
    pub enabled: bool,
    /// Axis shared by alpha and beta, `lo:hi:step` or a comma list.
    pub grid: String,
    pub folds: usize,
    pub ba_tolerance: f64,
    pub n_shuffles: usize,
    pub min_frac: f64,
}

impl Default for AttenuationConfig {
    fn default() -> Self {
        let s = SearchSettings::default();
        AttenuationConfig {
            enabled: true,
            grid: "0:2:0.25".into(),
            folds: s.folds,
            ba_tolerance: s.ba_tolerance,
            n_shuffles: s.n_shuffles,
            min_frac: s.min_frac,
        }
    }
}

fn default_correlations() -> Vec<CorrelationSpec> {
    vec![
        CorrelationSpec {
            kind: Kind::Partial,
            roles: Roles::SHORTCUT,
        },
        CorrelationSpec {
            kind: Kind::Partial,
            roles: Roles::TASK,
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub output: PathBuf,
    pub partition: PartitionSpec,
    #[serde(default)]
    pub preprocess: PreprocessMode,
    #[serde(default)]
    pub statistic: Statistic,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub order: Order,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_correlations")]
    pub correlations: Vec<CorrelationSpec>,
    #[serde(default)]
    pub inference: InferenceSettings,
    #[serde(default)]
    pub attenuation: AttenuationConfig,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(manifest: impl Into<PathBuf>, output: impl Into<PathBuf>, partition: PartitionSpec) -> Self {
        PipelineConfig {
            manifest: manifest.into(),
            output: output.into(),
            partition,
            preprocess: PreprocessMode::default(),
            statistic: Statistic::default(),
            aggregation: Aggregation::default(),
            order: Order::default(),
            method: Method::default(),
            correlations: default_correlations(),
            inference: InferenceSettings::default(),
            attenuation: AttenuationConfig::default(),
            seed: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self =
            serde_json::from_str(&text).map_err(|e| Error::BadConfig(format!("{}: {e}", path.display())))?;
        // relative paths in a config file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut config.manifest);
        rebase(&mut config.output);
        match &mut config.partition {
            PartitionSpec::Atlas { path, .. } | PartitionSpec::File { path } => rebase(path),
            _ => {}
        }
        Ok(config)
    }

    pub fn rule(&self) -> ProfileRule {
        ProfileRule::new(self.order, self.aggregation)
    }
}

/// Builds the partition described by `spec` for maps of `shape`.
pub fn build_partition(spec: &PartitionSpec, manifest: &Manifest) -> Result<Partition> {
    let partition = match spec {
        PartitionSpec::Grid { block } => grid_partition(&manifest.shape, block)?,
        PartitionSpec::Slic { k, compactness, iters } => {
            let raw = manifest
                .raw_paths()
                .ok_or_else(|| Error::BadConfig("SLIC partitions need raw images in the manifest".into()))?;
            let images = raw.iter().map(npy::read_f64).collect::<Result<Vec<_>>>()?;
            let edge = average_sobel(&images)?;
            slic_partition(
                &edge,
                SlicParams {
                    k: *k,
                    compactness: *compactness,
                    iters: *iters,
                },
            )?
        }
        PartitionSpec::Atlas { path, background } => atlas_partition(&npy::read_int(path)?, *background)?,
        PartitionSpec::File { path } => Partition::load(path)?,
    };
    if partition.shape() != manifest.shape.as_slice() {
        return Err(Error::ShapeMismatch {
            expected: manifest.shape.clone(),
            found: partition.shape().to_vec(),
        });
    }
    Ok(partition)
}

/// Per-image rows for each model in `BA, TS, SA` order. Rows hold ranks, or
/// region scores under the aggregate-then-rank order.
pub fn model_rows(manifest: &Manifest, partition: &Partition, config: &PipelineConfig) -> Result<[RankMatrix; 3]> {
    let build = |tag: ModelTag| -> Result<RankMatrix> {
        let maps = manifest.load_maps(tag, config.preprocess)?;
        match config.order {
            Order::RankAgg => RankMatrix::from_maps(&maps, partition, config.statistic),
            Order::AggRank => RankMatrix::scores_from_maps(&maps, partition, config.statistic),
        }
    };
    Ok([build(ModelTag::BA)?, build(ModelTag::TS)?, build(ModelTag::SA)?])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub kind: Kind,
    pub method: Method,
    pub roles: Roles,
    pub rho: Option<f64>,
    pub p: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub level: f64,
    pub n_regions: usize,
    pub n_images: usize,
    pub n_permutations: usize,
    pub exhaustive: bool,
    pub n_bootstrap: usize,
    pub n_dropped: usize,
    pub seed: u64,
    /// Why the statistic is missing, when it is.
    pub error: Option<String>,
}

/// Errors that leave one statistic undefined without invalidating the run.
fn is_statistical(e: &Error) -> bool {
    matches!(e.stage(), "correlations" | "inference")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcsSummary {
    pub shortcut_raw: Vec<f64>,
    pub shortcut: Vec<f64>,
    pub task_raw: Vec<f64>,
    pub task: Vec<f64>,
    pub star: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub permutation: u64,
    pub bootstrap: u64,
    pub shuffle: u64,
    pub folds: u64,
}

impl Seeds {
    pub fn new(master: u64) -> Self {
        Seeds {
            master,
            permutation: stage_seed(master, stage::PERMUTATION),
            bootstrap: stage_seed(master, stage::BOOTSTRAP),
            shuffle: stage_seed(master, stage::SHUFFLE),
            folds: stage_seed(master, stage::FOLDS),
        }
    }
}

/// Everything the pipeline computes; serialised as `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub version: String,
    pub config: PipelineConfig,
    pub seeds: Seeds,
    pub n_images: usize,
    pub n_regions: usize,
    pub region_sizes: Vec<usize>,
    pub profiles: Profiles,
    pub correlations: Vec<CorrelationEntry>,
    pub rcs: Option<RcsSummary>,
    pub attenuation: Option<AttenuationReport>,
    /// Stages skipped and why.
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct Profiles {
    pub BA: Vec<f64>,
    pub TS: Vec<f64>,
    pub SA: Vec<f64>,
}

impl Profiles {
    pub fn get(&self, tag: ModelTag) -> &[f64] {
        match tag {
            ModelTag::BA => &self.BA,
            ModelTag::TS => &self.TS,
            ModelTag::SA => &self.SA,
        }
    }
}

/// Runs the audit and returns the report without writing anything.
pub fn audit(config: &PipelineConfig) -> Result<(PipelineReport, Partition)> {
    let manifest = load_manifest(&config.manifest)?;
    let partition = build_partition(&config.partition, &manifest)?;
    let [ba, ts, sa] = model_rows(&manifest, &partition, config)?;
    let rows = ModelRows {
        ba: &ba,
        ts: &ts,
        sa: &sa,
    };
    let all: Vec<usize> = (0..manifest.len()).collect();
    let rule = config.rule();
    let mut scratch = Vec::new();
    let profiles = Profiles {
        BA: ba.profile_rows(&all, rule, &mut scratch),
        TS: ts.profile_rows(&all, rule, &mut scratch),
        SA: sa.profile_rows(&all, rule, &mut scratch),
    };

    let correlations = config
        .correlations
        .iter()
        .map(|spec| {
            let mut entry = CorrelationEntry {
                kind: spec.kind,
                method: config.method,
                roles: spec.roles,
                rho: None,
                p: None,
                ci_lo: None,
                ci_hi: None,
                level: config.inference.level,
                n_regions: partition.n_regions(),
                n_images: manifest.len(),
                n_permutations: 0,
                exhaustive: false,
                n_bootstrap: 0,
                n_dropped: 0,
                seed: config.seed,
                error: None,
            };
            match infer(
                rows,
                spec.roles,
                spec.kind,
                config.method,
                rule,
                &config.inference,
                config.seed,
            ) {
                Ok(r) => {
                    entry.rho = Some(r.rho_obs);
                    entry.p = Some(r.p_value);
                    entry.ci_lo = Some(r.ci_low);
                    entry.ci_hi = Some(r.ci_high);
                    entry.n_permutations = r.n_permutations;
                    entry.exhaustive = r.exhaustive;
                    entry.n_bootstrap = r.n_bootstrap;
                    entry.n_dropped = r.n_dropped;
                }
                Err(e) if is_statistical(&e) => entry.error = Some(format!("{}: {e}", e.stage())),
                Err(e) => return Err(e),
            }
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut notes = Vec::new();
    let (ts_p, sa_p, ba_p) = (&profiles.TS, &profiles.SA, &profiles.BA);
    let rcs = match (
        compute_rcs(ts_p, sa_p, ba_p, Roles::SHORTCUT),
        compute_rcs(ts_p, ba_p, sa_p, Roles::TASK),
    ) {
        (Ok(shortcut), Ok(task)) => {
            let star = shortcut
                .normalised
                .iter()
                .zip(&task.normalised)
                .map(|(s, t)| s - t)
                .collect();
            Some(RcsSummary {
                shortcut_raw: shortcut.raw,
                shortcut: shortcut.normalised,
                task_raw: task.raw,
                task: task.normalised,
                star,
            })
        }
        (Err(e), _) | (_, Err(e)) if is_statistical(&e) => {
            notes.push(format!("region contribution scores skipped: {e}"));
            None
        }
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };

    let attenuation = match (&manifest.features, manifest.labels(), &rcs) {
        _ if !config.attenuation.enabled => {
            notes.push("attenuation disabled".to_string());
            None
        }
        (_, _, None) => {
            notes.push("attenuation skipped: no RCS* map".to_string());
            None
        }
        (Some(refs), Some(labels), Some(rcs)) if partition.shape().len() == 2 => {
            let features = FeatureBundle::load(refs, manifest.image_ids())?;
            let (h, w) = (partition.shape()[0], partition.shape()[1]);
            let map = Array2::from_shape_vec((h, w), rasterize_rcs(&rcs.star, &partition)?).expect("partition is 2-D");
            let a = &config.attenuation;
            let grid = square_grid(&parse_axis(&a.grid)?);
            let settings = SearchSettings {
                folds: a.folds,
                ba_tolerance: a.ba_tolerance,
                n_shuffles: a.n_shuffles,
                min_frac: a.min_frac,
                seed: config.seed,
            };
            match attenuate(&features, &labels, map.view(), &grid, &settings) {
                Ok(r) => Some(r),
                Err(e) if e.stage() == "attenuation" => {
                    notes.push(format!("attenuation skipped: {e}"));
                    None
                }
                Err(e) => return Err(e),
            }
        }
        (Some(_), Some(_), _) => {
            notes.push("attenuation skipped: partition is not 2-D".to_string());
            None
        }
        _ => {
            notes.push("attenuation skipped: manifest has no features or labels".to_string());
            None
        }
    };

    let report = PipelineReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seeds: Seeds::new(config.seed),
        n_images: manifest.len(),
        n_regions: partition.n_regions(),
        region_sizes: partition.region_sizes().to_vec(),
        profiles,
        correlations,
        rcs,
        attenuation,
        notes,
    };
    Ok((report, partition))
}

/// Report files for a finished audit: the JSON summary, one CSV per
/// profile and RCS vector, and heatmaps for 2-D partitions.
pub fn report_bundle(report: &PipelineReport, partition: &Partition) -> Result<ReportBundle> {
    let mut tables = Vec::new();
    for tag in ModelTag::ALL {
        tables.push(Table {
            name: format!("profile_{tag}"),
            values: report.profiles.get(tag).to_vec(),
        });
    }
    let mut heatmaps = Vec::new();
    if let Some(rcs) = &report.rcs {
        for (name, values) in [
            ("rcs_shortcut", &rcs.shortcut),
            ("rcs_task", &rcs.task),
            ("rcs_star", &rcs.star),
        ] {
            tables.push(Table {
                name: name.to_string(),
                values: values.clone(),
            });
            if partition.shape().len() == 2 {
                heatmaps.push(Heatmap {
                    name: name.to_string(),
                    values: rasterize_rcs(values, partition)?,
                    height: partition.shape()[0],
                    width: partition.shape()[1],
                    palette: Palette::Diverging,
                });
            }
        }
    }
    Ok(ReportBundle {
        summary: serde_json::to_value(report)?,
        tables,
        heatmaps,
    })
}

/// Runs the audit and writes the report bundle and partition into
/// `config.output`. Returns the report.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    let (report, partition) = audit(config)?;
    write_report(&config.output, &report_bundle(&report, &partition)?)?;
    partition.save(config.output.join("partition.npy"))?;
    Ok(report)
}
