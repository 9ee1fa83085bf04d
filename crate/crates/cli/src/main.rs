use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use oscar_core::attenuation::{attenuate, parse_axis, square_grid, SearchSettings};
use oscar_core::correlations::{CorrelationResult, Kind, Method, Roles};
use oscar_core::inference::{infer, InferenceSettings, ModelRows, PermutationScheme};
use oscar_core::interchange::report::{write_heatmap, write_json, write_table, Heatmap, Palette};
use oscar_core::interchange::{load_manifest, npy, FeatureBundle, ModelTag, PreprocessMode};
use oscar_core::partitioning::{atlas_partition, average_sobel, grid_partition, slic_partition, Partition, SlicParams};
use oscar_core::pipeline::{report_bundle, run_pipeline, PipelineConfig, PipelineReport};
use oscar_core::rank_profiles::{Aggregation, Order, ProfileRule, RankMatrix, RankVector, Statistic};
use oscar_core::rcs::{compute_rcs, rasterize_rcs, shuffle_rcs};
use oscar_core::synth::{generate_synthetic, SynthConfig};
use oscar_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "oscar",
    version,
    about = "Audit classifiers for shortcut learning from attribution maps"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "OSCAR_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a region partition for the manifest's map shape.
    Partition(PartitionArgs),
    /// Rank regions per image and aggregate into per-model profiles.
    Profile(ProfileArgs),
    /// Correlation between two profiles, optionally given a third.
    Correlate(CorrelateArgs),
    /// Permutation p-value and bootstrap interval for one correlation.
    Infer(InferArgs),
    /// Region contribution scores.
    Rcs(RcsArgs),
    /// Fold-wise attenuation search on exported features.
    Attenuate(AttenuateArgs),
    /// Write a synthetic bundle with planted task and shortcut regions.
    Synth(SynthArgs),
    /// Run the full audit from a config file.
    Run(RunArgs),
    /// Re-render CSV tables and heatmaps from a saved report.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Block size per axis, e.g. `16x16`.
    #[arg(long, group = "method")]
    grid: Option<String>,
    /// Number of SLIC superpixels (needs raw images in the manifest).
    #[arg(long, group = "method")]
    slic: Option<usize>,
    /// Integer atlas label array.
    #[arg(long, group = "method")]
    atlas: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    compactness: f64,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Atlas label treated as background.
    #[arg(long, default_value_t = 0)]
    background: i64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    partition: PathBuf,
    #[arg(long, default_value = "mean")]
    stat: Statistic,
    #[arg(long, default_value = "median")]
    agg: Aggregation,
    #[arg(long, default_value = "rank-agg")]
    order: Order,
    #[arg(long, default_value = "relu_l1")]
    preprocess: PreprocessMode,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatArgs {
    /// Directory written by `oscar profile`.
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long, default_value = "partial")]
    kind: Kind,
    #[arg(long, default_value = "pearson")]
    method: Method,
    /// `A,B` or `A,B,C` model tags.
    #[arg(long, default_value = "TS,SA,BA")]
    roles: Roles,
}

#[derive(Args)]
struct CorrelateArgs {
    #[command(flatten)]
    stat: StatArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    stat: StatArgs,
    #[arg(long, default_value_t = 10_000)]
    n_perm: usize,
    #[arg(long, default_value_t = 10_000)]
    n_boot: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// `b-only` or `a-and-b`.
    #[arg(long, default_value = "b-only")]
    scheme: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RcsArgs {
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long, default_value = "TS,SA,BA")]
    roles: Roles,
    /// Shortcut-aligned minus task-aligned map instead of a single map.
    #[arg(long)]
    star: bool,
    /// Partition used to paint the map onto pixels.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Also write a spatially shuffled copy of the painted map.
    #[arg(long, requires = "partition")]
    shuffle: bool,
    #[arg(long, default_value_t = 0.5)]
    min_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttenuateArgs {
    /// `.npz` with features, weights, bias, y and a.
    #[arg(long)]
    features: PathBuf,
    /// 2-D RCS* array.
    #[arg(long)]
    rcs_star: PathBuf,
    #[arg(long, default_value = "0:2:0.25")]
    grid: String,
    #[arg(long, default_value_t = 4)]
    folds: usize,
    #[arg(long, default_value_t = 0.005)]
    ba_tolerance: f64,
    #[arg(long, default_value_t = 10)]
    shuffles: usize,
    #[arg(long, default_value_t = 0.5)]
    min_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 200)]
    m: usize,
    /// Number of regions (a perfect square).
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 4)]
    block: usize,
    #[arg(long, default_value_t = 0.0)]
    background: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json written by `oscar run`.
    #[arg(long)]
    from: PathBuf,
    #[arg(long)]
    partition: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Metadata written next to the profile arrays.
#[derive(Serialize, Deserialize)]
struct ProfileIndex {
    statistic: Statistic,
    aggregation: Aggregation,
    order: Order,
    preprocess: PreprocessMode,
    n_regions: usize,
    image_ids: Vec<String>,
    /// `ranks`, or `scores` for the aggregate-then-rank order.
    rows: String,
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value)?;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                }),
                _ => Ok(()),
            }
        }
    }
}

fn parse_block(spec: &str) -> Result<Vec<usize>> {
    spec.split(['x', ','])
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::BadConfig(format!("bad block size {spec:?}")))
        })
        .collect()
}

fn partition(a: PartitionArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let p = if let Some(g) = &a.grid {
        grid_partition(&manifest.shape, &parse_block(g)?)?
    } else if let Some(k) = a.slic {
        let raw = manifest
            .raw_paths()
            .ok_or_else(|| Error::BadConfig("SLIC needs raw images in the manifest".into()))?;
        let images = raw.iter().map(npy::read_f64).collect::<Result<Vec<_>>>()?;
        let params = SlicParams {
            k,
            compactness: a.compactness,
            iters: a.iters,
        };
        slic_partition(&average_sobel(&images)?, params)?
    } else if let Some(path) = &a.atlas {
        atlas_partition(&npy::read_int(path)?, a.background)?
    } else {
        return Err(Error::BadConfig("choose one of --grid, --slic, --atlas".into()));
    };
    p.save(&a.out)?;
    eprintln!("{} regions -> {}", p.n_regions(), a.out.display());
    Ok(())
}

fn profile(a: ProfileArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let partition = Partition::load(&a.partition)?;
    if partition.shape() != manifest.shape.as_slice() {
        return Err(Error::ShapeMismatch {
            expected: manifest.shape.clone(),
            found: partition.shape().to_vec(),
        });
    }
    mkdir(&a.out)?;
    let rule = ProfileRule::new(a.order, a.agg);
    for tag in ModelTag::ALL {
        let maps = manifest.load_maps(tag, a.preprocess)?;
        let rows = match a.order {
            Order::RankAgg => RankMatrix::from_maps(&maps, &partition, a.stat)?,
            Order::AggRank => RankMatrix::scores_from_maps(&maps, &partition, a.stat)?,
        };
        let all: Vec<usize> = (0..rows.n_images()).collect();
        let values = rows.profile_rows(&all, rule, &mut Vec::new());
        npy::write(
            a.out.join(format!("rows_{tag}.npy")),
            &[rows.n_images(), rows.n_regions],
            rows.ranks.iter().copied(),
        )?;
        npy::write(
            a.out.join(format!("profile_{tag}.npy")),
            &[values.len()],
            values.iter().copied(),
        )?;
        write_table(&a.out.join(format!("profile_{tag}.csv")), &values)?;
    }
    let index = ProfileIndex {
        statistic: a.stat,
        aggregation: a.agg,
        order: a.order,
        preprocess: a.preprocess,
        n_regions: partition.n_regions(),
        image_ids: manifest.image_ids(),
        rows: match a.order {
            Order::RankAgg => "ranks".into(),
            Order::AggRank => "scores".into(),
        },
    };
    write_json(&a.out.join("profiles.json"), &index)
}

struct Loaded {
    index: ProfileIndex,
    rows: [RankMatrix; 3],
    profiles: [Vec<f64>; 3],
}

impl Loaded {
    fn open(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("profiles.json")).map_err(|e| Error::Io {
            path: dir.join("profiles.json"),
            source: e,
        })?;
        let index: ProfileIndex = serde_json::from_str(&text)?;
        let read_rows = |tag: ModelTag| -> Result<RankMatrix> {
            let arr = npy::read_f64(dir.join(format!("rows_{tag}.npy")))?;
            let shape = arr.shape().to_vec();
            if shape.len() != 2 || shape[0] != index.image_ids.len() {
                return Err(Error::ShapeMismatch {
                    expected: vec![index.image_ids.len(), index.n_regions],
                    found: shape,
                });
            }
            let flat: Vec<f64> = arr.iter().copied().collect();
            let vectors: Vec<RankVector> = index
                .image_ids
                .iter()
                .zip(flat.chunks(shape[1]))
                .map(|(id, r)| RankVector {
                    image_id: id.clone(),
                    ranks: r.to_vec(),
                })
                .collect();
            RankMatrix::from_vectors(&vectors)
        };
        let read_profile = |tag: ModelTag| -> Result<Vec<f64>> {
            Ok(npy::read_f64(dir.join(format!("profile_{tag}.npy")))?
                .iter()
                .copied()
                .collect())
        };
        Ok(Loaded {
            rows: [
                read_rows(ModelTag::BA)?,
                read_rows(ModelTag::TS)?,
                read_rows(ModelTag::SA)?,
            ],
            profiles: [
                read_profile(ModelTag::BA)?,
                read_profile(ModelTag::TS)?,
                read_profile(ModelTag::SA)?,
            ],
            index,
        })
    }

    fn profile(&self, tag: ModelTag) -> &[f64] {
        &self.profiles[ModelTag::ALL.iter().position(|&t| t == tag).unwrap()]
    }

    fn model_rows(&self) -> ModelRows<'_> {
        ModelRows {
            ba: &self.rows[0],
            ts: &self.rows[1],
            sa: &self.rows[2],
        }
    }

    fn rule(&self) -> ProfileRule {
        ProfileRule::new(self.index.order, self.index.aggregation)
    }
}

fn correlate(a: CorrelateArgs) -> Result<()> {
    let loaded = Loaded::open(&a.stat.profiles)?;
    let r = CorrelationResult::compute(a.stat.kind, a.stat.method, a.stat.roles, |t| loaded.profile(t))?;
    emit(&r, a.out.as_deref())
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    let loaded = Loaded::open(&a.stat.profiles)?;
    let scheme = match a.scheme.as_str() {
        "b-only" => PermutationScheme::BOnly,
        "a-and-b" => PermutationScheme::AAndB,
        s => return Err(Error::BadConfig(format!("unknown permutation scheme {s:?}"))),
    };
    let settings = InferenceSettings {
        n_perm: a.n_perm,
        n_boot: a.n_boot,
        level: a.level,
        scheme,
    };
    let r = infer(
        loaded.model_rows(),
        a.stat.roles,
        a.stat.kind,
        a.stat.method,
        loaded.rule(),
        &settings,
        a.seed,
    )?;
    emit(&r, a.out.as_deref())
}

/// Heatmap layout for a region vector without a partition: square if
/// possible, otherwise one row.
fn vector_layout(n: usize) -> (usize, usize) {
    let s = (n as f64).sqrt().round() as usize;
    if s * s == n {
        (s, s)
    } else {
        (1, n)
    }
}

fn rcs_cmd(a: RcsArgs) -> Result<()> {
    let loaded = Loaded::open(&a.profiles)?;
    mkdir(&a.out)?;
    let (name, values) = if a.star {
        let p = |t| loaded.profile(t);
        let shortcut = compute_rcs(p(ModelTag::TS), p(ModelTag::SA), p(ModelTag::BA), Roles::SHORTCUT)?;
        let task = compute_rcs(p(ModelTag::TS), p(ModelTag::BA), p(ModelTag::SA), Roles::TASK)?;
        let star: Vec<f64> = shortcut
            .normalised
            .iter()
            .zip(&task.normalised)
            .map(|(s, t)| s - t)
            .collect();
        write_json(
            &a.out.join("rcs_star.json"),
            &serde_json::json!({
                "shortcut": shortcut, "task": task, "star": star
            }),
        )?;
        ("rcs_star", star)
    } else {
        let c = a
            .roles
            .c
            .ok_or_else(|| Error::BadConfig("RCS needs a reference model: --roles A,B,C".into()))?;
        let map = compute_rcs(
            loaded.profile(a.roles.a),
            loaded.profile(a.roles.b),
            loaded.profile(c),
            a.roles,
        )?;
        write_json(&a.out.join("rcs.json"), &map)?;
        ("rcs", map.normalised)
    };
    write_table(&a.out.join(format!("{name}.csv")), &values)?;

    let (h, w, painted) = match &a.partition {
        Some(path) => {
            let p = Partition::load(path)?;
            if p.shape().len() != 2 {
                return Err(Error::Not2D(p.shape().len()));
            }
            (p.shape()[0], p.shape()[1], rasterize_rcs(&values, &p)?)
        }
        None => {
            let (h, w) = vector_layout(values.len());
            (h, w, values.clone())
        }
    };
    npy::write(a.out.join(format!("{name}.npy")), &[h, w], painted.iter().copied())?;
    write_heatmap(
        &a.out.join(format!("{name}.png")),
        &Heatmap {
            name: name.into(),
            values: painted.clone(),
            height: h,
            width: w,
            palette: Palette::Diverging,
        },
    )?;
    if a.shuffle {
        let shuffled = shuffle_rcs(&painted, h, w, a.min_frac, a.seed)?;
        npy::write(
            a.out.join(format!("{name}_shuffled.npy")),
            &[h, w],
            shuffled.iter().copied(),
        )?;
    }
    Ok(())
}

fn attenuate_cmd(a: AttenuateArgs) -> Result<()> {
    let (features, labels) = FeatureBundle::load_npz(&a.features)?;
    let labels = labels.ok_or_else(|| Error::BadConfig("feature archive has no y/a labels".into()))?;
    let map = npy::read_f64(&a.rcs_star)?;
    if map.ndim() != 2 {
        return Err(Error::Not2D(map.ndim()));
    }
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let map = Array2::from_shape_vec((h, w), map.iter().copied().collect()).expect("2-D");
    let settings = SearchSettings {
        folds: a.folds,
        ba_tolerance: a.ba_tolerance,
        n_shuffles: a.shuffles,
        min_frac: a.min_frac,
        seed: a.seed,
    };
    let report = attenuate(
        &features,
        &labels,
        map.view(),
        &square_grid(&parse_axis(&a.grid)?),
        &settings,
    )?;
    emit(&report, a.out.as_deref())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_regions: a.n,
        block: a.block,
        m: a.m,
        lambda: a.lambda,
        noise_sigma: a.sigma,
        background: a.background,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&cfg)?;
    data.write(&a.out)?;
    data.features
        .save_npz(&a.out.join("features.npz"), Some(&data.labels))?;
    data.partition.save(a.out.join("partition.npy"))?;
    write_json(&a.out.join("synth.json"), &cfg)?;
    eprintln!("{} images x 3 models -> {}", cfg.m, a.out.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut config = PipelineConfig::load(&a.config)?;
    if let Some(out) = a.out {
        config.output = out;
    }
    let report = run_pipeline(&config)?;
    for c in &report.correlations {
        match (c.rho, c.p) {
            (Some(rho), Some(p)) => eprintln!(
                "{:?} {},{}|{}: rho = {rho:.4}, p = {p:.4}",
                c.kind,
                c.roles.a,
                c.roles.b,
                c.roles.c.map(|t| t.to_string()).unwrap_or_default()
            ),
            _ => eprintln!("{:?}: {}", c.kind, c.error.as_deref().unwrap_or("undefined")),
        }
    }
    eprintln!("report -> {}", config.output.join("report.json").display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.from).map_err(|e| Error::Io {
        path: a.from.clone(),
        source: e,
    })?;
    let parsed: PipelineReport = serde_json::from_str(&text)?;
    let partition = Partition::load(&a.partition)?;
    let bundle = report_bundle(&parsed, &partition)?;
    oscar_core::interchange::write_report(&a.out, &bundle)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::BadConfig("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::BadConfig(e.to_string()))?;
    }
    match cli.command {
        Command::Partition(a) => partition(a),
        Command::Profile(a) => profile(a),
        Command::Correlate(a) => correlate(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Rcs(a) => rcs_cmd(a),
        Command::Attenuate(a) => attenuate_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", e.stage());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
