//! The `sar` command line: graph export, data preparation, training,
//! inference and evaluation.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataio::{
    load_manifest, load_motion, load_split, save_motion, slice_windows, split_dataset, synth_generate, write_dataset,
    FrameratePolicy,
};
use crate::depgraph::{
    build_binary_search, build_original_ar, build_three_stage_with, derive_fdam, export_dot, topological_schedule,
    DependencyGraph, Schedule, Stage2Deps,
};
use crate::error::SarError;
use crate::inference::{interpolate_slerp, run_schedule, run_without_smoothing};
use crate::metrics::{eval_csv, evaluate, EvalRow};
use crate::model::{ModelConfig, SarModel};
use crate::motion::{Motion, Pose, Skeleton};
use crate::training::{train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "sar", version, about = "Shuffled autoregressive motion interpolation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build dependency graphs and their schedules.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Prepare motion data.
    #[command(subcommand)]
    Data(DataCommand),
    /// Teacher-forced training followed by smoothing fine-tuning.
    Train(TrainArgs),
    /// Generate in-between frames.
    Infer(InferArgs),
    /// Compute the evaluation table.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleKind {
    Ar,
    Binary,
    ThreeStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage2 {
    /// Interval frames see every keyframe.
    AllKeyframes,
    /// Interval frames see only the two keyframes bounding their interval.
    Bounds,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Graph family.
    #[arg(long, value_enum)]
    pub schedule: ScheduleKind,
    /// Number of in-between frames T.
    #[arg(long)]
    pub frames: usize,
    /// Comma-separated keyframe positions (three-stage only).
    #[arg(long, value_delimiter = ',')]
    pub keyframes: Option<Vec<usize>>,
    /// Keyframe visibility for interval frames (three-stage only).
    #[arg(long, value_enum, default_value = "all-keyframes")]
    pub stage2: Stage2,
}

#[derive(Debug, Subcommand)]
pub enum GraphCommand {
    /// Write the schedule JSON (and optionally the DOT rendering).
    Build {
        #[command(flatten)]
        graph: GraphArgs,
        /// Schedule JSON output path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the graph in DOT format here.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Write the graph in DOT format.
    Export {
        #[command(flatten)]
        graph: GraphArgs,
        /// DOT output path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Generate a synthetic dataset with a manifest.
    Synth {
        /// Number of sequences.
        #[arg(long, default_value_t = 240)]
        count: usize,
        #[arg(long, default_value_t = 4)]
        joints: usize,
        /// Frames per sequence, including both given frames.
        #[arg(long, default_value_t = 31)]
        frames: usize,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train/validation/test ratios.
        #[arg(long, value_delimiter = ',', default_value = "0.7,0.1,0.2")]
        ratios: Vec<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut motion files into fixed-length windows and split them by source.
    Slice {
        /// Source motion files.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 31)]
        window: usize,
        #[arg(long, default_value_t = 15)]
        stride: usize,
        /// Motions at or above this rate also yield half-rate windows.
        #[arg(long, default_value_t = 60.0)]
        threshold_fps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "0.7,0.1,0.2")]
        ratios: Vec<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Schedule JSON from `graph build`.
    #[arg(long)]
    pub schedule: PathBuf,
    /// Model configuration JSON; defaults to the desk configuration.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Training configuration JSON; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps1: Option<usize>,
    #[arg(long)]
    pub steps2: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Sar,
    SarNosmooth,
    Slerp,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_enum, default_value = "sar")]
    pub method: Method,
    /// Model checkpoint (not needed for slerp).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Schedule JSON (not needed for slerp).
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Ground-truth motion; only its first and last frames are used.
    #[arg(long, conflicts_with = "manifest")]
    pub input: Option<PathBuf>,
    /// Dataset manifest; every sequence of `--split` is processed.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output motion file (with --input) or directory (with --manifest).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of ground-truth motion files.
    #[arg(long)]
    pub truth: PathBuf,
    /// Prediction directories as name=dir, one per method.
    #[arg(long = "pred", required = true, num_args = 1..)]
    pub preds: Vec<String>,
    /// body22, chain, or a skeleton JSON file.
    #[arg(long, default_value = "chain")]
    pub skeleton: String,
    /// Report CSV path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(SarError),
}

impl From<SarError> for Failure {
    fn from(e: SarError) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Graph(g) => cmd_graph(g, out),
        Command::Data(d) => cmd_data(d, out),
        Command::Train(t) => cmd_train(t, out),
        Command::Infer(i) => cmd_infer(i, out),
        Command::Eval(e) => cmd_eval(e, out),
    }
}

fn say(out: &mut dyn Write, text: impl std::fmt::Display) {
    let _ = writeln!(out, "{text}");
}

fn build_graph(args: &GraphArgs) -> std::result::Result<DependencyGraph, Failure> {
    if args.frames == 0 {
        return Err(Failure::Usage("--frames must be at least 1".into()));
    }
    match (args.schedule, &args.keyframes) {
        (ScheduleKind::ThreeStage, None) => Err(Failure::Usage("--schedule three-stage requires --keyframes".into())),
        (ScheduleKind::Ar | ScheduleKind::Binary, Some(_)) => {
            Err(Failure::Usage("--keyframes only applies to --schedule three-stage".into()))
        }
        (ScheduleKind::Ar, None) => Ok(build_original_ar(args.frames)?),
        (ScheduleKind::Binary, None) => Ok(build_binary_search(args.frames)?),
        (ScheduleKind::ThreeStage, Some(k)) => {
            let mode = match args.stage2 {
                Stage2::AllKeyframes => Stage2Deps::AllKeyframes,
                Stage2::Bounds => Stage2Deps::IntervalBounds,
            };
            Ok(build_three_stage_with(args.frames, k, mode)?)
        }
    }
}

fn write_file(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| SarError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| SarError::io(path, e))?;
    Ok(())
}

fn cmd_graph(cmd: GraphCommand, out: &mut dyn Write) -> CliResult {
    match cmd {
        GraphCommand::Build { graph, out: path, dot } => {
            let g = build_graph(&graph)?;
            let s = topological_schedule(&g)?;
            write_file(&path, &s.to_json())?;
            if let Some(dot) = dot {
                write_file(&dot, &export_dot(&g))?;
            }
            say(out, format!("levels: {}", s.levels.len()));
            let order: Vec<String> = s.order.iter().map(usize::to_string).collect();
            say(out, format!("order: {}", order.join(",")));
            Ok(())
        }
        GraphCommand::Export { graph, out: path } => {
            let g = build_graph(&graph)?;
            g.validate_dag().map_err(SarError::Cycle)?;
            write_file(&path, &export_dot(&g))?;
            say(out, format!("wrote {}", path.display()));
            Ok(())
        }
    }
}

fn ratios(v: &[f64]) -> std::result::Result<[f64; 3], Failure> {
    <[f64; 3]>::try_from(v).map_err(|_| Failure::Usage(format!("--ratios needs 3 values, got {}", v.len())))
}

fn cmd_data(cmd: DataCommand, out: &mut dyn Write) -> CliResult {
    match cmd {
        DataCommand::Synth {
            count,
            joints,
            frames,
            fps,
            seed,
            ratios: r,
            out: dir,
        } => {
            let r = ratios(&r)?;
            if count == 0 || joints == 0 || frames == 0 || !(fps > 0.0) {
                return Err(Failure::Usage("--count, --joints, --frames and --fps must be positive".into()));
            }
            let data = synth_generate(count, joints, frames, fps, seed)?;
            let split = split_dataset(data.into_iter().map(|m| vec![m]).collect(), r, seed)?;
            let manifest = write_dataset(&dir, &split)?;
            say(
                out,
                format!(
                    "train {} / val {} / test {} -> {}",
                    split.train.len(),
                    split.val.len(),
                    split.test.len(),
                    manifest.display()
                ),
            );
            Ok(())
        }
        DataCommand::Slice {
            input,
            window,
            stride,
            threshold_fps,
            seed,
            ratios: r,
            out: dir,
        } => {
            let r = ratios(&r)?;
            if window == 0 || stride == 0 {
                return Err(Failure::Usage("--window and --stride must be positive".into()));
            }
            let policy = FrameratePolicy { threshold_fps };
            let groups = input
                .iter()
                .map(|p| slice_windows(&load_motion(p)?, window, stride, policy))
                .collect::<crate::Result<Vec<_>>>()?;
            let split = split_dataset(groups, r, seed)?;
            let manifest = write_dataset(&dir, &split)?;
            say(
                out,
                format!(
                    "train {} / val {} / test {} windows -> {}",
                    split.train.len(),
                    split.val.len(),
                    split.test.len(),
                    manifest.display()
                ),
            );
            Ok(())
        }
    }
}

fn train_config(args: &TrainArgs) -> crate::Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| SarError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| SarError::Parse {
                context: p.display().to_string(),
                message: e.to_string(),
            })?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.steps1 {
        cfg.steps1 = v;
    }
    if let Some(v) = args.steps2 {
        cfg.steps2 = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.log_every {
        cfg.log_every = v;
    }
    cfg.out_dir = Some(args.out.clone());
    Ok(cfg)
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write) -> CliResult {
    let cfg = train_config(&args)?;
    let schedule = Schedule::load(&args.schedule)?;
    let n = schedule.n_positions;
    let fdam = derive_fdam(&schedule, n)?;
    let mut model = match (&args.resume, &args.model_config) {
        (Some(ckpt), _) => SarModel::load(ckpt)?,
        (None, Some(p)) => SarModel::new(ModelConfig::load(p)?, cfg.seed)?,
        (None, None) => SarModel::new(ModelConfig::desk(n), cfg.seed)?,
    };
    let train_set = load_split(&args.data, "train")?;
    let val_set = load_split(&args.data, "val")?;
    let report = train(&mut model, &train_set, &val_set, &schedule, &fdam, &cfg)?;
    for r in &report.records {
        say(out, format!("step {} {} {:.6e}", r.step, r.split, r.loss));
    }
    if let Some(l) = report.last_train_loss() {
        say(out, format!("final loss {l:.6e}"));
    }
    say(out, format!("checkpoint {}", args.out.join("final.ckpt").display()));
    Ok(())
}

struct Generator {
    method: Method,
    model: Option<(SarModel, Schedule, crate::depgraph::Fdam)>,
}

impl Generator {
    fn new(args: &InferArgs) -> std::result::Result<Self, Failure> {
        if args.method == Method::Slerp {
            return Ok(Generator { method: args.method, model: None });
        }
        let (Some(ckpt), Some(sched)) = (&args.checkpoint, &args.schedule) else {
            return Err(Failure::Usage(
                "--method sar and sar-nosmooth need --checkpoint and --schedule".into(),
            ));
        };
        let model = SarModel::load(ckpt)?;
        let schedule = Schedule::load(sched)?;
        if model.config().positions != schedule.n_positions {
            return Err(SarError::invalid(format!(
                "checkpoint expects {} positions, schedule has {}",
                model.config().positions,
                schedule.n_positions
            ))
            .into());
        }
        let fdam = derive_fdam(&schedule, schedule.n_positions)?;
        Ok(Generator {
            method: args.method,
            model: Some((model, schedule, fdam)),
        })
    }

    fn generate(&self, truth: &Motion) -> crate::Result<Motion> {
        if truth.len() < 3 {
            return Err(SarError::invalid(format!("motion has {} frames, need at least 3", truth.len())));
        }
        let (start, end) = (&truth.frames[0], &truth.frames[truth.len() - 1]);
        let frames = match (&self.model, self.method) {
            (None, _) => interpolate_slerp(start, end, truth.len() - 2)?,
            (Some((m, s, f)), Method::Sar) => run_schedule(start, end, m, s, f)?,
            (Some((m, s, f)), _) => run_without_smoothing(start, end, m, s, f)?,
        };
        let mut full = Vec::with_capacity(truth.len());
        full.push(start.clone());
        full.extend(frames);
        full.push(end.clone());
        Motion::new(full, truth.fps)
    }
}

fn cmd_infer(args: InferArgs, out: &mut dyn Write) -> CliResult {
    let gen = Generator::new(&args)?;
    match (&args.input, &args.manifest) {
        (Some(input), None) => {
            let m = gen.generate(&load_motion(input)?)?;
            if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| SarError::io(dir, e))?;
            }
            save_motion(&m, &args.out)?;
            say(out, format!("wrote {} frames to {}", m.len(), args.out.display()));
            Ok(())
        }
        (None, Some(manifest)) => {
            let base = manifest.parent().unwrap_or(Path::new("."));
            std::fs::create_dir_all(&args.out).map_err(|e| SarError::io(&args.out, e))?;
            let mut count = 0;
            for entry in load_manifest(manifest)?.into_iter().filter(|e| e.split == args.split) {
                let m = gen.generate(&load_motion(base.join(&entry.path))?)?;
                let name = entry.path.file_name().map(PathBuf::from).unwrap_or_else(|| entry.path.clone());
                save_motion(&m, args.out.join(name))?;
                count += 1;
            }
            say(out, format!("wrote {count} motions to {}", args.out.display()));
            Ok(())
        }
        _ => Err(Failure::Usage("exactly one of --input or --manifest is required".into())),
    }
}

fn motion_dir(dir: &Path) -> crate::Result<BTreeMap<String, Motion>> {
    let entries = std::fs::read_dir(dir).map_err(|e| SarError::io(dir, e))?;
    let mut out = BTreeMap::new();
    for e in entries {
        let p = e.map_err(|e| SarError::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "manifest.json") {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, load_motion(&p)?);
        }
    }
    Ok(out)
}

fn skeleton(spec: &str, joints: usize) -> crate::Result<Skeleton> {
    match spec {
        "body22" => Ok(Skeleton::body22()),
        "chain" => Skeleton::chain(joints, 0.1),
        path => Skeleton::load(path),
    }
}

fn inner(frames: &[Pose]) -> Vec<Pose> {
    match frames.len() {
        0..=2 => frames.to_vec(),
        n => frames[1..n - 1].to_vec(),
    }
}

/// Generated and ground-truth interior frames. Predictions may be complete
/// motions or interior frames only.
fn aligned(truth: &Motion, pred: &Motion) -> (Vec<Pose>, Vec<Pose>) {
    if pred.len() + 2 == truth.len() {
        (pred.frames.clone(), inner(&truth.frames))
    } else {
        (inner(&pred.frames), inner(&truth.frames))
    }
}

fn cmd_eval(args: EvalArgs, out: &mut dyn Write) -> CliResult {
    let truth = motion_dir(&args.truth)?;
    if truth.is_empty() {
        return Err(SarError::invalid(format!("no motion files in {}", args.truth.display())).into());
    }
    let joints = truth.values().next().unwrap().joints();
    let skel = skeleton(&args.skeleton, joints)?;
    let mut rows: Vec<EvalRow> = Vec::new();
    let all: Vec<Vec<Pose>> = truth.values().map(|m| inner(&m.frames)).collect();
    rows.push(evaluate("ground_truth", &all, &all, &skel)?);
    for spec in &args.preds {
        let Some((name, dir)) = spec.split_once('=') else {
            return Err(Failure::Usage(format!("--pred expects name=dir, got {spec}")));
        };
        let preds = motion_dir(Path::new(dir))?;
        let missing: Vec<&String> = truth.keys().filter(|k| !preds.contains_key(*k)).collect();
        let extra: Vec<&String> = preds.keys().filter(|k| !truth.contains_key(*k)).collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(SarError::invalid(format!(
                "{name}: sequence sets differ; missing {missing:?}, unexpected {extra:?}"
            ))
            .into());
        }
        let (gen, gt): (Vec<Vec<Pose>>, Vec<Vec<Pose>>) = preds.iter().map(|(k, m)| aligned(&truth[k], m)).unzip();
        rows.push(evaluate(name, &gen, &gt, &skel)?);
    }
    let csv = eval_csv(&rows);
    match &args.out {
        Some(p) => {
            write_file(p, &csv)?;
            say(out, format!("wrote {}", p.display()));
        }
        None => {
            let _ = write!(out, "{csv}");
        }
    }
    Ok(())
}
