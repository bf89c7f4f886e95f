//! The `ktcuda` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::adapt::{adapt, AdaptConfig};
use crate::checkpoint::Checkpoint;
use crate::embed::{AffineEmbedder, AnyEmbedder, IdentityEmbedder, MlpEmbedder};
use crate::error::{Error, Result};
use crate::eval::{
    classify_clusters, cmc, inter_intra_distances, mean_average_precision, rank_manifest, rank_query_gallery,
    ClusterDistance, ClusterQuality,
};
use crate::graph::{cluster, ClusterParams, ClusterSet, Connectivity};
use crate::io::{
    read_assignments, read_manifest, read_manifest_unchecked, write_assignments, write_manifest,
    write_manifest_with_sidecar,
};
use crate::merge::{merge_domains, MergePolicy};
use crate::model::{validate_manifest, DomainManifest};
use crate::synth::{generate_synthetic_domain, SyntheticSpec};
use crate::train::{train_source, TrainConfig};
use crate::triplet::Margin;

#[derive(Debug, Parser)]
#[command(
    name = "ktcuda",
    version,
    about = "k-reciprocal tracklet clustering for re-id domain adaptation"
)]
struct Cli {
    /// Worker threads for index construction and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled multi-camera domain.
    Synth(SynthArgs),
    /// Merge labeled source manifests under curation rules.
    Merge(MergeArgs),
    /// Train an embedder on a labeled manifest.
    TrainSource(TrainSourceArgs),
    /// Cluster a manifest into pseudo-identities.
    Cluster(ClusterArgs),
    /// Adapt a checkpoint to an unlabeled target manifest.
    Adapt(AdaptArgs),
    /// Score retrieval and cluster quality on a labeled manifest.
    Eval(EvalArgs),
    /// Report every invariant violation in a manifest.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConnectivityArg {
    Weak,
    Strong,
}

#[derive(Debug, Args)]
struct ClusterOpts {
    /// Reciprocal-rank threshold (default: 2 for more than two cameras, else 1).
    #[arg(long = "K")]
    k: Option<u32>,
    /// Cardinality threshold; clusters need more than T tracklets (default as K).
    #[arg(long = "T")]
    t: Option<usize>,
    /// Out-degree of the neighbor graph (default: K).
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long, value_enum, default_value = "weak")]
    connectivity: ConnectivityArg,
    /// L2-normalize tracklet embeddings before ranking.
    #[arg(long)]
    normalize: bool,
}

impl ClusterOpts {
    fn resolve(&self, m: &DomainManifest) -> ClusterParams {
        let mut p = ClusterParams::for_cameras(m.cameras().len());
        if let Some(k) = self.k {
            p.k = k;
            p.k1 = k as usize;
        }
        if let Some(t) = self.t {
            p.t = t;
        }
        if let Some(k1) = self.k1 {
            p.k1 = k1;
        }
        p.connectivity = match self.connectivity {
            ConnectivityArg::Weak => Connectivity::Weak,
            ConnectivityArg::Strong => Connectivity::Strong,
        };
        p.normalize = self.normalize;
        p
    }
}

#[derive(Debug, Args)]
struct TrainOpts {
    /// SGD steps (default: 50000 for source training, 25000 per adaptation round).
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value_t = 8)]
    batch_p: usize,
    #[arg(long, default_value_t = 4)]
    batch_k: usize,
    /// `soft` or a non-negative hinge margin.
    #[arg(long, default_value = "soft", value_parser = parse_margin)]
    margin: Margin,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Learning rate at the last step, as a fraction of `--lr`.
    #[arg(long, default_value_t = 0.1)]
    final_lr_fraction: f64,
}

impl TrainOpts {
    fn resolve(&self, base: TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations.unwrap_or(base.iterations),
            batch_p: self.batch_p,
            batch_k: self.batch_k,
            margin: self.margin,
            learning_rate: self.lr,
            final_lr_fraction: self.final_lr_fraction,
            seed,
        }
    }
}

fn parse_margin(s: &str) -> std::result::Result<Margin, String> {
    if s.eq_ignore_ascii_case("soft") {
        return Ok(Margin::Soft);
    }
    match s.parse::<f64>() {
        Ok(m) if m.is_finite() && m >= 0.0 => Ok(Margin::Hard(m)),
        _ => Err(format!("expected `soft` or a non-negative number, got {s:?}")),
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Also write frames to this binary sidecar instead of inline.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long, default_value = "synthetic")]
    name: String,
    #[arg(long, default_value_t = 20)]
    identities: usize,
    #[arg(long, default_value_t = 4)]
    cameras: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    frames_min: usize,
    #[arg(long, default_value_t = 4)]
    frames_max: usize,
    #[arg(long, default_value_t = 1)]
    tracklets_min: usize,
    #[arg(long, default_value_t = 1)]
    tracklets_max: usize,
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// Half-width of the centroid box (default: scaled to fit the identities).
    #[arg(long)]
    extent: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    camera_shift: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct MergeArgs {
    /// Labeled source manifests.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Per-source summary as JSON lines.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 201)]
    min_identities: usize,
    /// Keep identities seen by a single camera.
    #[arg(long)]
    allow_single_camera: bool,
    /// Source name to leave out; repeatable.
    #[arg(long = "exclude")]
    exclude: Vec<String>,
    /// Keep raw ids instead of prefixing them with the source name.
    #[arg(long)]
    no_namespace: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EmbedderKind {
    Affine,
    Mlp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitKind {
    Random,
    Identity,
}

#[derive(Debug, Args)]
struct TrainSourceArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "affine")]
    embedder: EmbedderKind,
    #[arg(long, default_value_t = 128)]
    output_dim: usize,
    /// Hidden width of the two-layer embedder.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Initial affine weights; `identity` needs matching input and output dims.
    #[arg(long, value_enum, default_value = "random")]
    init: InitKind,
    #[command(flatten)]
    train: TrainOpts,
    /// Loss per step as JSON.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Embedder checkpoint; raw features are clustered when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Assignment file: `cluster_id<TAB>tracklet_id`, `-1` for unclustered.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cluster: ClusterOpts,
}

#[derive(Debug, Args)]
struct AdaptArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Adaptation report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Adaptation rounds.
    #[arg(long = "I", default_value_t = 2)]
    rounds: usize,
    /// Stop when a round yields more clusters than this.
    #[arg(long, default_value_t = 850)]
    cap: usize,
    #[command(flatten)]
    cluster: ClusterOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DistanceArg {
    TrackletCentroid,
    FrameCentroid,
    MinimumPairwise,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Labeled manifest; every tracklet is a query.
    #[arg(long)]
    manifest: PathBuf,
    /// Separate labeled gallery; without it queries search the manifest itself.
    #[arg(long)]
    gallery: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Existing assignments to grade; otherwise the manifest is clustered.
    #[arg(long)]
    assignments: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20")]
    ranks: Vec<usize>,
    /// Drop queries without any relevant gallery entry instead of failing.
    #[arg(long)]
    skip_unmatched: bool,
    #[arg(long, value_enum, default_value = "tracklet-centroid")]
    distance: DistanceArg,
    /// Machine-readable summary (JSON).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Plot data: `series,x,y` rows for the CMC curve and cluster distances.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    cluster: ClusterOpts,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    manifest: PathBuf,
}

/// Parses `argv` (including the program name), runs the command and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| execute(cli.command)),
        Err(e) => Err(Error::Validation(format!("cannot start thread pool: {e}"))),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Merge(a) => merge(a),
        Command::TrainSource(a) => train_source_cmd(a),
        Command::Cluster(a) => cluster_cmd(a),
        Command::Adapt(a) => adapt_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Validate(a) => validate_cmd(a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_manifest(m: &DomainManifest, out: &Path, sidecar: Option<&Path>) -> Result<()> {
    match sidecar {
        Some(s) => write_manifest_with_sidecar(out, s, m),
        None => write_manifest(out, m),
    }
}

fn load_embedder(path: Option<&Path>, m: &DomainManifest) -> Result<AnyEmbedder> {
    match path {
        Some(p) => Ok(Checkpoint::load(p)?.embedder),
        None => {
            let dim = m
                .dim()
                .ok_or_else(|| Error::Structure("manifest has no frames".into()))?;
            Ok(AnyEmbedder::Identity(IdentityEmbedder::new(dim)))
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = SyntheticSpec::new(a.name, a.identities, a.cameras, a.dim, a.seed).with_separation(a.separation);
    if let Some(extent) = a.extent {
        spec.extent = extent;
    }
    spec.frames_per_tracklet = (a.frames_min, a.frames_max);
    spec.tracklets_per_identity_per_camera = (a.tracklets_min, a.tracklets_max);
    spec.camera_shift = a.camera_shift;
    spec.noise_sigma = a.noise;
    let m = generate_synthetic_domain(&spec)?;
    save_manifest(&m, &a.out, a.sidecar.as_deref())?;
    println!(
        "wrote {} tracklets ({} identities, {} cameras) to {}",
        m.len(),
        spec.identities,
        spec.cameras,
        a.out.display()
    );
    Ok(())
}

fn merge(a: MergeArgs) -> Result<()> {
    let sources = a.inputs.iter().map(read_manifest).collect::<Result<Vec<_>>>()?;
    let policy = MergePolicy {
        min_identities: a.min_identities,
        require_cross_camera: !a.allow_single_camera,
        exclusion_list: a.exclude.into_iter().collect(),
        namespace_ids: !a.no_namespace,
    };
    let (merged, report) = merge_domains(&sources, &policy)?;
    save_manifest(&merged, &a.out, a.sidecar.as_deref())?;
    if let Some(path) = &a.report {
        write_text(path, &report.to_jsonl())?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn train_source_cmd(a: TrainSourceArgs) -> Result<()> {
    let m = read_manifest(&a.manifest)?;
    let input = m
        .dim()
        .ok_or_else(|| Error::Structure("manifest has no frames".into()))?;
    let initial = match (a.embedder, a.init) {
        (EmbedderKind::Affine, InitKind::Random) => {
            AnyEmbedder::Affine(AffineEmbedder::random(input, a.output_dim, a.seed))
        }
        (EmbedderKind::Affine, InitKind::Identity) => {
            AnyEmbedder::Affine(AffineEmbedder::identity(input, a.output_dim))
        }
        (EmbedderKind::Mlp, InitKind::Random) => {
            AnyEmbedder::Mlp(MlpEmbedder::random(input, a.hidden, a.output_dim, a.seed))
        }
        (EmbedderKind::Mlp, InitKind::Identity) => {
            return Err(Error::Validation(
                "identity initialization applies to the affine embedder only".into(),
            ))
        }
    };
    let cfg = a.train.resolve(TrainConfig::source(), a.seed);
    let (trained, stats) = train_source(&initial, &m, &cfg)?;
    Checkpoint::new(trained, a.seed, 0).save(&a.out)?;
    if let Some(path) = &a.log {
        write_text(path, &serde_json::to_string(&stats).expect("serializable"))?;
    }
    println!(
        "trained {} steps: loss {:.4} -> {:.4}; checkpoint {}",
        stats.losses.len(),
        stats.head_mean(100).unwrap_or(f64::NAN),
        stats.tail_mean(100).unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

fn cluster_cmd(a: ClusterArgs) -> Result<()> {
    let m = read_manifest(&a.manifest)?;
    let embedder = load_embedder(a.checkpoint.as_deref(), &m)?;
    let params = a.cluster.resolve(&m);
    let clusters = cluster(&m, &params, &embedder)?;
    write_assignments(&a.out, &clusters)?;
    println!(
        "K={} T={} k1={}: {} clusters covering {} of {} tracklets",
        params.k,
        params.t,
        params.k1,
        clusters.len(),
        clusters.clustered_count(),
        m.len()
    );
    Ok(())
}

fn adapt_cmd(a: AdaptArgs) -> Result<()> {
    let source = Checkpoint::load(&a.checkpoint)?;
    let m = read_manifest(&a.manifest)?;
    let cfg = AdaptConfig {
        clustering: a.cluster.resolve(&m),
        rounds: a.rounds,
        cluster_cap: a.cap,
        train: a.train.resolve(TrainConfig::adaptation(), a.seed),
        seed: a.seed,
    };
    let (adapted, report) = adapt(&source.embedder, &m, &cfg)?;
    let trained = report.rounds.iter().filter(|r| r.trained).count() as u32;
    let out = if trained == 0 {
        source
    } else {
        Checkpoint::new(adapted, a.seed, source.round + trained)
    };
    out.save(&a.out)?;
    if let Some(path) = &a.report {
        write_text(path, &serde_json::to_string_pretty(&report).expect("serializable"))?;
    }
    for r in &report.rounds {
        println!(
            "round {}: {} clusters, {:.1}% clustered{}",
            r.round,
            r.clusters,
            100.0 * r.clustered_fraction,
            if r.trained { "" } else { ", not trained" }
        );
    }
    println!(
        "stop reason: {}; checkpoint {}",
        report.stop_reason, report.checkpoint_id
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalSummary {
    queries: usize,
    ranks: Vec<usize>,
    cmc: Vec<f64>,
    map: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    cluster_quality: Option<ClusterQuality>,
    #[serde(skip_serializing_if = "Option::is_none")]
    intra_distances: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inter_distances: Option<Vec<f64>>,
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let m = read_manifest(&a.manifest)?;
    let embedder = load_embedder(a.checkpoint.as_deref(), &m)?;
    let normalize = a.cluster.normalize;
    let mut ranking = match &a.gallery {
        Some(g) => rank_query_gallery(&embedder, &m, &read_manifest(g)?, normalize)?,
        None => rank_manifest(&embedder, &m, normalize)?,
    };
    if a.skip_unmatched {
        ranking = ranking.without_unmatched_queries();
    }
    let curve = cmc(&ranking, &a.ranks)?;
    let map = mean_average_precision(&ranking)?;

    let clusters: Option<ClusterSet> = match &a.assignments {
        Some(p) => Some(read_assignments(p)?),
        None if m.cameras().len() >= 2 => Some(cluster(&m, &a.cluster.resolve(&m), &embedder)?),
        None => None,
    };
    let quality = clusters.as_ref().map(|c| classify_clusters(c, &m)).transpose()?;
    let mode = match a.distance {
        DistanceArg::TrackletCentroid => ClusterDistance::TrackletCentroid,
        DistanceArg::FrameCentroid => ClusterDistance::FrameCentroid,
        DistanceArg::MinimumPairwise => ClusterDistance::MinimumPairwise,
    };
    let distances = match &clusters {
        Some(c) if c.len() >= 2 => Some(inter_intra_distances(c, &m, &embedder, mode)?),
        _ => None,
    };

    let mut text = format!("queries: {}\n", ranking.queries.len());
    for (k, v) in a.ranks.iter().zip(&curve) {
        let _ = writeln!(text, "R{k}={v:.6}");
    }
    let _ = writeln!(text, "mAP={map:.6}");
    if let Some(q) = &quality {
        let _ = writeln!(
            text,
            "clusters: {}  GC={} MC={} DC={} MC+DC={}  purity={:.4}",
            q.clusters.len(),
            q.good,
            q.mixed,
            q.divided,
            q.mixed_divided,
            q.purity
        );
    }
    if let Some((intra, inter)) = &distances {
        let mean = |v: &[f64]| {
            if v.is_empty() {
                "n/a".to_string()
            } else {
                format!("{:.4}", v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        let _ = writeln!(
            text,
            "cluster distances: intra mean {} (n={}), inter mean {} (n={})",
            mean(intra),
            intra.len(),
            mean(inter),
            inter.len()
        );
    }
    print!("{text}");

    if let Some(path) = &a.csv {
        let mut csv = String::from("series,x,y\n");
        for (k, v) in a.ranks.iter().zip(&curve) {
            let _ = writeln!(csv, "cmc,{k},{v}");
        }
        if let Some((intra, inter)) = &distances {
            for (i, d) in intra.iter().enumerate() {
                let _ = writeln!(csv, "intra,{i},{d}");
            }
            for (i, d) in inter.iter().enumerate() {
                let _ = writeln!(csv, "inter,{i},{d}");
            }
        }
        write_text(path, &csv)?;
    }
    if let Some(path) = &a.summary {
        let (intra, inter) = distances.map_or((None, None), |(i, o)| (Some(i), Some(o)));
        let summary = EvalSummary {
            queries: ranking.queries.len(),
            ranks: a.ranks.clone(),
            cmc: curve,
            map,
            cluster_quality: quality,
            intra_distances: intra,
            inter_distances: inter,
        };
        write_text(path, &serde_json::to_string_pretty(&summary).expect("serializable"))?;
    }
    Ok(())
}

fn validate_cmd(a: ValidateArgs) -> Result<()> {
    let m = read_manifest_unchecked(&a.manifest)?;
    let report = validate_manifest(&m);
    if report.is_empty() {
        println!(
            "{}: {} tracklets, {} cameras, valid",
            m.name,
            m.len(),
            m.cameras().len()
        );
        return Ok(());
    }
    for v in &report.violations {
        println!("{v}");
    }
    Err(Error::Validation(format!("{} violation(s)", report.violations.len())))
}
