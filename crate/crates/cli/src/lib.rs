//! `talkmesh` subcommands. Exit codes: 0 success, 1 usage, 2 data error,
//! 3 numerical failure.

pub mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use talkmesh_core::audio::{load_features, mfcc_extract, read_wav, save_features};
use talkmesh_core::manifest::{file_sha256, sha256_hex, RunManifest};
use talkmesh_core::mesh::{load_mask, load_mesh, load_sequence, MaskLabel};
use talkmesh_core::metrics::{evaluate_sequences, motion_heatmap, save_heatmap};
use talkmesh_core::model::{animate_to_dir, load_checkpoint, AnimateOptions, OperatorSource};
use talkmesh_core::operators::{compute_operators, store_cache};
use talkmesh_core::training::{load_dataset, synth_dataset_with, train_to_dir, write_dataset};
use talkmesh_core::{Error, Result};

use config::FileConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "talkmesh", version, about = "Audio-driven animation of arbitrary triangle meshes")]
pub struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible runs
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// TOML configuration file; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the Laplacian eigenbasis and gradient operators for a mesh and cache them
    Ops(OpsArgs),
    /// Compute mel-cepstral features from a WAV file and write them as STFX
    Extract(ExtractArgs),
    /// Train a model on a dataset manifest
    Train(TrainArgs),
    /// Animate a neutral mesh from a feature file
    Animate(AnimateArgs),
    /// Compare a predicted sequence with ground truth
    Eval(EvalArgs),
    /// Per-vertex motion heatmap of a sequence
    Heatmap(HeatmapArgs),
    /// Write a synthetic training dataset
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct OpsArgs {
    /// Input mesh (OBJ or PLY)
    #[arg(long)]
    pub mesh: PathBuf,
    /// Number of eigenpairs, clipped to V - 1 [config: ops.k]
    #[arg(long)]
    pub k: Option<usize>,
    /// Output cache file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Input WAV file (mono or multichannel, averaged)
    #[arg(long)]
    pub wav: PathBuf,
    /// Output STFX file
    #[arg(long)]
    pub out: PathBuf,
    /// Analysis window length in milliseconds [config: extract.window_ms]
    #[arg(long)]
    pub window_ms: Option<f64>,
    /// Hop between windows in milliseconds [config: extract.hop_ms]
    #[arg(long)]
    pub hop_ms: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest (TOML with [[sample]] entries)
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for best.stpm, last.stpm and loss.csv
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Passes over the training set [config: train.epochs]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam step size [config: train.learning_rate]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Seed for initialization, shuffling and the validation split [config: train.seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Latent width [config: model.hidden]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Eigenbasis size [config: model.k]
    #[arg(long)]
    pub k: Option<usize>,
    /// Print one line per epoch to stderr
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct AnimateArgs {
    /// Model checkpoint (.stpm)
    #[arg(long)]
    pub model: PathBuf,
    /// Neutral mesh (OBJ or PLY)
    #[arg(long)]
    pub neutral: PathBuf,
    /// Feature file (STFX)
    #[arg(long)]
    pub features: PathBuf,
    /// Output frame rate [config: animate.fps]
    #[arg(long)]
    pub fps: Option<f64>,
    /// Directory for frame_XXXX.obj files
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Operator cache reused when it matches the mesh and k, rebuilt otherwise
    #[arg(long, value_name = "FILE", conflicts_with = "ops")]
    pub ops_cache: Option<PathBuf>,
    /// Precomputed operator file used as-is
    #[arg(long, value_name = "FILE")]
    pub ops: Option<PathBuf>,
    /// Frames x vertices decoded at once [config: animate.chunk_rows]
    #[arg(long)]
    pub chunk_rows: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted sequence directory
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Ground-truth sequence directory
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Neutral mesh the dynamics are measured against
    #[arg(long)]
    pub neutral: PathBuf,
    /// Lip vertex indices, one per line
    #[arg(long)]
    pub lip_mask: PathBuf,
    /// Upper-face vertex indices, one per line
    #[arg(long)]
    pub upper_mask: PathBuf,
    /// Summary file; per-frame values go to the same path with a .csv extension
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// Sequence directory
    #[arg(long)]
    pub seq_dir: PathBuf,
    /// Colored OBJ; values go to the same path with a .txt extension
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset seed [config: train.seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of samples
    #[arg(long)]
    pub n: usize,
    /// Output directory; manifest.toml is written here
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Frames per sample [config: synth.frames]
    #[arg(long)]
    pub frames: Option<usize>,
}

/// Parses `argv` and runs; never panics on bad input.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        // Fails only if a pool already exists in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(hint) = hint(&e) {
                eprintln!("hint: {hint}");
            }
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_DATA
            }
        }
    }
}

fn hint(e: &Error) -> Option<&'static str> {
    match e {
        Error::VertexCountMismatch { .. } => Some("operator caches and masks must be built from the same mesh"),
        Error::HashMismatch => Some("rebuild the cache with `talkmesh ops`"),
        Error::NonConvergence { .. } => Some("try a smaller --k"),
        Error::Config(_) => Some("check the configuration file against configs/example.toml"),
        _ => None,
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    let mut m = RunManifest::new();
    m.set("command", command_name(&cli.command))
        .set("version", env!("CARGO_PKG_VERSION"))
        .set("threads", cli.threads.map(|n| n.to_string()).unwrap_or_else(|| "default".into()));
    if let Some(p) = &cli.config {
        m.set("config_sha256", file_sha256(p)?);
    }
    match &cli.command {
        Command::Ops(a) => ops(a, &cfg, m),
        Command::Extract(a) => extract(a, &cfg, m),
        Command::Train(a) => train(a, cfg, m),
        Command::Animate(a) => animate(a, &cfg, m),
        Command::Eval(a) => eval(a, m),
        Command::Heatmap(a) => heatmap(a, m),
        Command::Synth(a) => synth(a, &cfg, m),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ops(_) => "ops",
        Command::Extract(_) => "extract",
        Command::Train(_) => "train",
        Command::Animate(_) => "animate",
        Command::Eval(_) => "eval",
        Command::Heatmap(_) => "heatmap",
        Command::Synth(_) => "synth",
    }
}

/// `<path>.manifest.txt` next to a single-file output.
fn sidecar_manifest(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.txt");
    PathBuf::from(s)
}

fn timed(m: &mut RunManifest, key: &str, start: Instant) {
    m.set(key, format!("{:.6}", start.elapsed().as_secs_f64()));
}

fn write_manifest(m: &RunManifest, path: &Path) -> Result<()> {
    m.write(path)?;
    println!("manifest: {}", path.display());
    Ok(())
}

/// Hash over every regular file in `dir`, by sorted name then content.
fn dir_sha256(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != "run_manifest.txt"))
        .collect();
    names.sort();
    let mut all = String::new();
    for p in names {
        all.push_str(&p.file_name().unwrap().to_string_lossy());
        all.push(':');
        all.push_str(&file_sha256(&p)?);
        all.push('\n');
    }
    Ok(sha256_hex(all.as_bytes()))
}

fn ops(a: &OpsArgs, cfg: &FileConfig, mut m: RunManifest) -> Result<()> {
    let mesh = load_mesh(&a.mesh)?;
    let k = a.k.unwrap_or(cfg.ops.k).min(mesh.num_vertices().saturating_sub(1)).max(1);
    let start = Instant::now();
    let ops = compute_operators(&mesh, k)?;
    store_cache(&ops, &mesh, &a.out)?;
    m.set("mesh_sha256", file_sha256(&a.mesh)?)
        .set("vertices", mesh.num_vertices())
        .set("faces", mesh.num_faces())
        .set("k", ops.k())
        .set("output_sha256", file_sha256(&a.out)?);
    timed(&mut m, "time_total_s", start);
    println!("wrote {} (V = {}, k = {})", a.out.display(), mesh.num_vertices(), ops.k());
    write_manifest(&m, &sidecar_manifest(&a.out))
}

fn extract(a: &ExtractArgs, cfg: &FileConfig, mut m: RunManifest) -> Result<()> {
    let mut mc = cfg.extract.mfcc();
    if let Some(w) = a.window_ms {
        mc.window_ms = w;
    }
    if let Some(h) = a.hop_ms {
        mc.hop_ms = h;
    }
    let start = Instant::now();
    let (samples, rate) = read_wav(&a.wav)?;
    let feats = mfcc_extract(&samples, rate, &mc)?;
    save_features(&feats, &a.out)?;
    m.set("wav_sha256", file_sha256(&a.wav)?)
        .set("sample_rate", rate)
        .set("window_ms", mc.window_ms)
        .set("hop_ms", mc.hop_ms)
        .set("n_mels", mc.n_mels)
        .set("n_ceps", mc.n_ceps)
        .set("delta_width", mc.delta_width)
        .set("frames", feats.frames())
        .set("feature_dim", feats.dim())
        .set("feature_rate", feats.source_rate())
        .set("output_sha256", file_sha256(&a.out)?);
    timed(&mut m, "time_total_s", start);
    println!("wrote {} ({} x {} at {} Hz)", a.out.display(), feats.frames(), feats.dim(), feats.source_rate());
    write_manifest(&m, &sidecar_manifest(&a.out))
}

fn train(a: &TrainArgs, mut cfg: FileConfig, mut m: RunManifest) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(x) = a.epochs {
        t.epochs = x;
    }
    if let Some(x) = a.learning_rate {
        t.learning_rate = x;
    }
    if let Some(x) = a.seed {
        t.seed = x;
    }
    if let Some(x) = a.hidden {
        cfg.model.hidden = x;
    }
    if let Some(x) = a.k {
        cfg.model.k = x;
    }
    let samples = load_dataset(&a.manifest)?;
    if !cfg.feature_dim_set {
        cfg.model.feature_dim = samples[0].features.dim();
    }
    let start = Instant::now();
    let verbose = a.verbose;
    let out = train_to_dir(&samples, &cfg.model, &cfg.train, &a.out_dir, &mut |r| {
        if verbose {
            eprintln!(
                "epoch {:>4}  train_mse {:.6e}  val_mse {}  grad_norm {:.3e}",
                r.epoch,
                r.train_mse,
                r.val_mse.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into()),
                r.grad_norm
            );
        }
    })?;
    let mc = &cfg.model;
    let tc = &cfg.train;
    m.set("manifest_sha256", file_sha256(&a.manifest)?)
        .set("samples", samples.len())
        .set("train_ids", out.train_ids.join(","))
        .set("val_ids", out.val_ids.join(","))
        .set("hidden", mc.hidden)
        .set("blocks", mc.blocks)
        .set("k", mc.k)
        .set("cell", mc.cell.name())
        .set("rnn_hidden", mc.rnn_hidden)
        .set("rnn_layers", mc.rnn_layers)
        .set("feature_dim", mc.feature_dim)
        .set("epochs", tc.epochs)
        .set("learning_rate", tc.learning_rate)
        .set("seed", tc.seed)
        .set("w_mse", tc.w_mse)
        .set("w_mask", tc.w_mask)
        .set("w_vel", tc.w_vel)
        .set("clip_norm", tc.clip_norm)
        .set("validation_fraction", tc.validation_fraction)
        .set("best_epoch", out.best_epoch)
        .set("best_sha256", file_sha256(&a.out_dir.join("best.stpm"))?)
        .set("last_sha256", file_sha256(&a.out_dir.join("last.stpm"))?)
        .set("loss_csv_sha256", file_sha256(&a.out_dir.join("loss.csv"))?);
    timed(&mut m, "time_total_s", start);
    if let Some(last) = out.history.last() {
        println!(
            "trained {} epochs on {} samples; final train_mse {:.6e}; best epoch {}",
            last.epoch,
            out.train_ids.len(),
            last.train_mse,
            out.best_epoch
        );
    }
    write_manifest(&m, &a.out_dir.join("run_manifest.txt"))
}

fn animate(a: &AnimateArgs, cfg: &FileConfig, mut m: RunManifest) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let neutral = load_mesh(&a.neutral)?;
    let features = load_features(&a.features)?;
    let opts = AnimateOptions {
        fps: a.fps.unwrap_or(cfg.animate.fps),
        chunk_rows: a.chunk_rows.unwrap_or(cfg.animate.chunk_rows),
        operators: match (&a.ops, &a.ops_cache) {
            (Some(p), _) => OperatorSource::Explicit(p.clone()),
            (None, Some(p)) => OperatorSource::Cache(p.clone()),
            (None, None) => OperatorSource::Compute,
        },
    };
    let report = animate_to_dir(&neutral, &features, &model, &a.out_dir, &opts)?;
    // Library manifest first, then the CLI's file-level hashes.
    let mut full = report.manifest.clone();
    for (k, v) in m.entries() {
        if k != "command" {
            full.set(k, v);
        }
    }
    full.set("output_sha256", dir_sha256(&a.out_dir)?);
    m = full;
    println!(
        "wrote {} frames to {} (operator cache: {})",
        report.files.len(),
        a.out_dir.display(),
        report.cache
    );
    write_manifest(&m, &report.manifest_path)
}

fn eval(a: &EvalArgs, mut m: RunManifest) -> Result<()> {
    let (pred, pred_faces) = load_sequence(&a.pred_dir)?;
    let (gt, gt_faces) = load_sequence(&a.gt_dir)?;
    let neutral = load_mesh(&a.neutral)?;
    let v = neutral.num_vertices();
    for (what, n) in [("predicted sequence", pred.dim().1), ("ground-truth sequence", gt.dim().1)] {
        if n != v {
            return Err(Error::VertexCountMismatch {
                context: what.into(),
                expected: v,
                found: n,
            });
        }
    }
    if pred_faces != gt_faces {
        return Err(Error::InvalidArgument("predicted and ground-truth face lists differ".into()));
    }
    if pred.dim().0 != gt.dim().0 {
        return Err(Error::Shape(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.dim().0,
            gt.dim().0
        )));
    }
    let lip = load_mask(&a.lip_mask, MaskLabel::Lip, v)?;
    let upper = load_mask(&a.upper_mask, MaskLabel::UpperFace, v)?;
    let r = evaluate_sequences(pred.view(), gt.view(), neutral.positions().view(), &lip, &upper)?;
    let summary = r.summary();
    write_text(&a.report, &summary)?;
    let csv = a.report.with_extension("csv");
    write_text(&csv, &r.frames_csv())?;
    m.set("pred_sha256", dir_sha256(&a.pred_dir)?)
        .set("gt_sha256", dir_sha256(&a.gt_dir)?)
        .set("neutral_sha256", file_sha256(&a.neutral)?)
        .set("lip_mask_sha256", file_sha256(&a.lip_mask)?)
        .set("upper_mask_sha256", file_sha256(&a.upper_mask)?)
        .set("report_sha256", file_sha256(&a.report)?)
        .set("frames_csv_sha256", file_sha256(&csv)?);
    print!("{summary}");
    write_manifest(&m, &sidecar_manifest(&a.report))
}

fn heatmap(a: &HeatmapArgs, mut m: RunManifest) -> Result<()> {
    let (seq, faces) = load_sequence(&a.seq_dir)?;
    let values = motion_heatmap(seq.view())?;
    let first = talkmesh_core::mesh::Mesh::new(
        (0..seq.dim().1).map(|k| [seq[[0, k, 0]], seq[[0, k, 1]], seq[[0, k, 2]]]).collect(),
        faces,
    )?;
    let values_path = a.out.with_extension("txt");
    save_heatmap(&first, &values, &values_path, &a.out)?;
    let max = values.iter().cloned().fold(0.0, f64::max);
    m.set("seq_sha256", dir_sha256(&a.seq_dir)?)
        .set("frames", seq.dim().0)
        .set("vertices", seq.dim().1)
        .set("max", format!("{max:e}"))
        .set("values_sha256", file_sha256(&values_path)?)
        .set("obj_sha256", file_sha256(&a.out)?);
    println!("wrote {} and {} (max {max:.6e})", a.out.display(), values_path.display());
    write_manifest(&m, &sidecar_manifest(&a.out))
}

fn synth(a: &SynthArgs, cfg: &FileConfig, mut m: RunManifest) -> Result<()> {
    let mut sc = cfg.synth.clone();
    if let Some(f) = a.frames {
        sc.frames = f;
    }
    let seed = a.seed.unwrap_or(cfg.train.seed);
    if a.n == 0 {
        return Err(Error::InvalidArgument("--n must be at least 1".into()));
    }
    let data = synth_dataset_with(seed, a.n, &sc)?;
    let manifest = write_dataset(&data, &a.out_dir)?;
    m.set("seed", seed)
        .set("n", a.n)
        .set("frames", sc.frames)
        .set("fps", sc.fps)
        .set("feature_dim", sc.feature_dim)
        .set("radius", sc.radius)
        .set(
            "subdivisions",
            sc.subdivisions.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        )
        .set("manifest_sha256", file_sha256(&manifest)?);
    for s in &data {
        m.set(&format!("{}_vertices", s.id), s.num_vertices());
    }
    println!("wrote {} samples to {}", data.len(), manifest.display());
    write_manifest(&m, &a.out_dir.join("run_manifest.txt"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
