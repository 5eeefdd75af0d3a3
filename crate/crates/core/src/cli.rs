//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 on invalid input or configuration, 1 when a
//! computation fails (or `verify-lemma` finds a failing row).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{verify_lemma, EnsembleConfig};
use crate::curvature::CurvatureReport;
use crate::error::{Error, Result};
use crate::graph::Trajectory;
use crate::processor::{evaluate, rollout_with_boundary, train, Activation, Checkpoint, FeatureLayout, ModelConfig, TrainConfig};
use crate::rewiring::{RewireParams, Rewirer, Variant};
use crate::synth::{gen_synthetic, Field, InflowPattern, InflowProfile, Obstacle, RmseBreakdown, SynthConfig};

/// Hyperparameter presets for the rewiring stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// `α = 3 %`, `β = 1`.
    Laminar,
    /// `α = 5 %`, `β = 2`.
    Turbulent,
}

impl Preset {
    pub fn alpha_beta(self) -> (f64, f64) {
        match self {
            Preset::Laminar => (3.0, 1.0),
            Preset::Turbulent => (5.0, 2.0),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub step_size: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub preset: Option<Preset>,
    pub alpha_percent: Option<f64>,
    pub beta: Option<f64>,
    pub layers: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub mlp_depth: Option<usize>,
    pub activation: Option<Activation>,
    pub residual: Option<bool>,
    pub variant: Option<Variant>,
    pub train: Option<TrainSection>,
    pub paths: Option<Paths>,
    pub horizons: Option<Vec<usize>>,
    pub field: Option<Field>,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub rewire: RewireParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
    pub horizons: Vec<usize>,
    pub field: Field,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let (alpha_percent, beta) = Preset::Laminar.alpha_beta();
        RunConfig {
            rewire: RewireParams {
                alpha_percent,
                beta,
                layers: model.layers,
                variant: Variant::Adaptive,
            },
            model,
            train: TrainConfig::default(),
            paths: Paths::default(),
            horizons: vec![20],
            field: Field::Velocity,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Bottleneck percentile `a` in (0, 100].
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Message-passing blocks `L`.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub mlp_depth: Option<usize>,
    #[arg(long, value_parser = parse_activation)]
    pub activation: Option<Activation>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    match s {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        "identity" => Ok(Activation::Identity),
        _ => Err(format!("unknown activation '{s}'")),
    }
}

fn parse_field(s: &str) -> std::result::Result<Field, String> {
    s.parse::<Field>().map_err(|e| e.to_string())
}

/// Comma-separated horizon list.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Horizons(Vec<usize>);

fn parse_horizons(s: &str) -> std::result::Result<Horizons, String> {
    if s.is_empty() {
        return Ok(Horizons(Vec::new()));
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad horizon '{t}'")))
        .collect::<std::result::Result<_, _>>()
        .map(Horizons)
}

impl RunConfig {
    /// Defaults, then the preset, then the file, then flags.
    pub fn resolve(file: &RunConfigFile, flags: &RunFlags) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(preset) = flags.preset.or(file.preset) {
            (cfg.rewire.alpha_percent, cfg.rewire.beta) = preset.alpha_beta();
        }
        let t = file.train.clone().unwrap_or_default();
        let alpha = flags.alpha.or(file.alpha_percent);
        let beta = flags.beta.or(file.beta);
        if let Some(a) = alpha {
            cfg.rewire.alpha_percent = a;
        }
        if let Some(b) = beta {
            cfg.rewire.beta = b;
        }
        if let Some(l) = flags.layers.or(file.layers) {
            cfg.model.layers = l;
        }
        cfg.rewire.layers = cfg.model.layers;
        if let Some(h) = flags.hidden_dim.or(file.hidden_dim) {
            cfg.model.hidden_dim = h;
        }
        if let Some(d) = flags.mlp_depth.or(file.mlp_depth) {
            cfg.model.mlp_depth = d;
        }
        if let Some(a) = flags.activation.or(file.activation) {
            cfg.model.activation = a;
        }
        if let Some(r) = file.residual {
            cfg.model.residual = r;
        }
        if let Some(v) = flags.variant.or(file.variant) {
            cfg.rewire.variant = v;
        }
        if let Some(x) = flags.step_size.or(t.step_size) {
            cfg.train.step_size = x;
        }
        if let Some(x) = flags.epochs.or(t.epochs) {
            cfg.train.epochs = x;
        }
        if let Some(x) = flags.batch.or(t.batch) {
            cfg.train.batch = x;
        }
        if let Some(x) = flags.seed.or(t.seed) {
            cfg.train.seed = x;
        }
        if let Some(p) = &file.paths {
            cfg.paths = p.clone();
        }
        if let Some(h) = &file.horizons {
            cfg.horizons = h.clone();
        }
        if let Some(f) = file.field {
            cfg.field = f;
        }
        cfg.rewire.validate()?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn from_flags(flags: &RunFlags) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => RunConfigFile::load(path)?,
            None => RunConfigFile::default(),
        };
        Self::resolve(&file, flags)
    }
}

#[derive(Debug, Parser)]
#[command(name = "meshrewire", version, about = "Curvature-guided adaptive rewiring for mesh-based simulators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic advection-diffusion trajectory.
    GenSynth(GenSynthArgs),
    /// Edge and node curvature plus the bottleneck set.
    Curvature(CurvatureArgs),
    /// Rewiring pairs and activation layers for one frame.
    Schedule(ScheduleArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Autoregressive prediction from a trajectory's initial frame.
    Rollout(RolloutArgs),
    /// One-step and rollout RMSE of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Check the Jacobian bound on a random graph ensemble.
    VerifyLemma(VerifyLemmaArgs),
    /// Train and evaluate every rewiring variant with one configuration.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    Step,
    Pulse,
    Sine,
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    #[arg(long, default_value_t = 12)]
    rows: usize,
    #[arg(long, default_value_t = 12)]
    cols: usize,
    #[arg(long, default_value_t = 40)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ProfileArg::Pulse)]
    profile: ProfileArg,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    /// Pulse length in frames.
    #[arg(long, default_value_t = 4)]
    pulse_width: usize,
    /// Sine period in frames.
    #[arg(long, default_value_t = 12.0)]
    period: f64,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    advection: f64,
    #[arg(long, default_value_t = 0.05)]
    diffusion: f64,
    #[arg(long, default_value_t = 0.01)]
    perturbation: f64,
    /// Wall disk as `cx,cy,radius`.
    #[arg(long)]
    obstacle: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CurvatureArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Frame whose velocities drive partner selection.
    #[arg(long, default_value_t = 0)]
    frame: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training trajectories (repeatable).
    #[arg(long = "in")]
    input: Vec<PathBuf>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Where to write the `epoch,loss` curve instead of stdout.
    #[arg(long)]
    loss_out: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Debug, Args)]
struct RewireOverride {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
}

impl RewireOverride {
    fn apply(&self, mut rewire: RewireParams) -> Result<RewireParams> {
        if let Some(a) = self.alpha {
            rewire.alpha_percent = a;
        }
        if let Some(b) = self.beta {
            rewire.beta = b;
        }
        if let Some(v) = self.variant {
            rewire.variant = v;
        }
        rewire.validate()?;
        Ok(rewire)
    }
}

#[derive(Debug, Args)]
struct RolloutArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Steps to predict (default: to the end of the input trajectory).
    #[arg(long)]
    steps: Option<usize>,
    /// Do not reset boundary nodes from the input trajectory.
    #[arg(long)]
    free_boundary: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    rewire: RewireOverride,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Comma-separated rollout horizons; longer ones are skipped.
    #[arg(long, value_parser = parse_horizons)]
    horizons: Option<Horizons>,
    #[arg(long, value_parser = parse_field, default_value = "velocity")]
    field: Field,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    rewire: RewireOverride,
}

#[derive(Debug, Args)]
struct VerifyLemmaArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    graphs: usize,
    #[arg(long, default_value_t = 4)]
    min_nodes: usize,
    #[arg(long, default_value_t = 10)]
    max_nodes: usize,
    #[arg(long, default_value_t = 4)]
    max_radius: usize,
    #[arg(long, default_value_t = 0.2)]
    edge_probability: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-radius decay summary CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Training trajectory.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Evaluation trajectory (default: the training one).
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long, value_parser = parse_horizons)]
    horizons: Option<Horizons>,
    #[arg(long, value_parser = parse_field)]
    field: Option<Field>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

/// Parses `args` (including the program name) and runs one command.
pub fn run(args: &[String], out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    eprint!("{}", e.render());
                    2
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::GenSynth(a) => gen_synth_cmd(a, out),
        Command::Curvature(a) => curvature_cmd(a, out),
        Command::Schedule(a) => schedule_cmd(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Rollout(a) => rollout_cmd(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::VerifyLemma(a) => verify_lemma_cmd(a, out),
        Command::Ablate(a) => ablate_cmd(a, out),
    }
}

/// Writes to `path` when given, else to `out`.
fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|source| Error::Io {
            path: p.display().to_string(),
            source,
        }),
        None => out.write_all(text.as_bytes()).map_err(|source| Error::Io {
            path: "<stdout>".into(),
            source,
        }),
    }
}

fn parse_obstacle(s: &str) -> Result<Obstacle> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad --obstacle '{s}', expected cx,cy,radius")))?;
    match parts[..] {
        [cx, cy, radius] => Ok(Obstacle {
            center: [cx, cy],
            radius,
        }),
        _ => Err(Error::Config(format!("bad --obstacle '{s}', expected cx,cy,radius"))),
    }
}

fn gen_synth_cmd(a: GenSynthArgs, _out: &mut dyn Write) -> Result<i32> {
    let pattern = match a.profile {
        ProfileArg::Step => InflowPattern::Step,
        ProfileArg::Pulse => InflowPattern::Pulse { width: a.pulse_width },
        ProfileArg::Sine => InflowPattern::Sine { period: a.period },
    };
    let config = SynthConfig {
        rows: a.rows,
        cols: a.cols,
        obstacle: a.obstacle.as_deref().map(parse_obstacle).transpose()?,
        inflow: InflowProfile {
            amplitude: a.amplitude,
            pattern,
        },
        diffusion: a.diffusion,
        advection: a.advection,
        steps: a.steps,
        seed: a.seed,
        perturbation: a.perturbation,
    };
    let traj = gen_synthetic(&config)?;
    traj.save(&a.out)?;
    eprintln!("wrote {} frames on {} nodes to {}", traj.frames.len(), traj.graph.node_count(), a.out.display());
    Ok(0)
}

fn curvature_cmd(a: CurvatureArgs, out: &mut dyn Write) -> Result<i32> {
    let traj = Trajectory::load(&a.input)?;
    let report = CurvatureReport::compute(&traj.graph, a.alpha)?;
    emit(out, a.out.as_deref(), &report.to_csv())?;
    Ok(0)
}

fn schedule_cmd(a: ScheduleArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::from_flags(&a.run)?;
    let input = a.input;
    let traj = Trajectory::load(&input)?;
    let frame = traj.frames.get(a.frame).ok_or_else(|| {
        Error::Config(format!("--frame {} but {} has {} frames", a.frame, input.display(), traj.frames.len()))
    })?;
    let schedule = Rewirer::new(&traj.graph, cfg.rewire)?.schedule(&traj.graph, frame)?;
    emit(out, a.out.as_deref(), &schedule.to_csv())?;
    Ok(0)
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Trajectory>> {
    paths.iter().map(Trajectory::load).collect()
}

fn layout_of(data: &[Trajectory]) -> Result<FeatureLayout> {
    let first = data
        .first()
        .and_then(|t| t.frames.first())
        .ok_or_else(|| Error::Config("no training frames".into()))?;
    Ok(FeatureLayout::of_frame(first))
}

fn loss_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (k, l) in curve.iter().enumerate() {
        s.push_str(&format!("{},{l}\n", k + 1));
    }
    s
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::from_flags(&a.run)?;
    let inputs = if a.input.is_empty() {
        cfg.paths.data.clone().into_iter().collect()
    } else {
        a.input
    };
    if inputs.is_empty() {
        return Err(Error::Config("no training data: pass --in or set paths.data".into()));
    }
    let model_out = a
        .model_out
        .or(cfg.paths.model.clone())
        .ok_or_else(|| Error::Config("no checkpoint path: pass --model-out or set paths.model".into()))?;
    let data = load_all(&inputs)?;
    let model = ModelConfig {
        layout: layout_of(&data)?,
        ..cfg.model
    };
    let report = train(model, &cfg.train, &cfg.rewire, &data)?;
    let ckpt = Checkpoint::new(report.params, cfg.rewire, report.loss_curve);
    ckpt.save(&model_out)?;
    emit(out, a.loss_out.as_deref(), &loss_csv(&ckpt.loss_curve))?;
    Ok(0)
}

fn rollout_cmd(a: RolloutArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = Checkpoint::load(&a.model)?;
    let rewire = a.rewire.apply(ckpt.rewire)?;
    let truth = Trajectory::load(&a.input)?;
    let available = truth.frames.len() - 1;
    let steps = a.steps.unwrap_or(available);
    let boundary = if a.free_boundary {
        None
    } else {
        if steps > available {
            return Err(Error::Config(format!(
                "{steps} steps need {} boundary frames; input has {}; use --free-boundary",
                steps + 1,
                truth.frames.len()
            )));
        }
        Some(truth.frames.as_slice())
    };
    let predicted = rollout_with_boundary(&ckpt.params, &truth.graph, &truth.frames[0], steps, &rewire, boundary)?;
    let mut text = predicted.to_json_string();
    text.push('\n');
    emit(out, a.out.as_deref(), &text)?;
    Ok(0)
}

fn usable_horizons(requested: &[usize], full: usize) -> Vec<usize> {
    requested.iter().copied().filter(|&k| k >= 1 && k <= full).collect()
}

fn evaluate_cmd(a: EvaluateArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = Checkpoint::load(&a.model)?;
    let rewire = a.rewire.apply(ckpt.rewire)?;
    let truth = Trajectory::load(&a.input)?;
    let full = truth.frames.len().saturating_sub(1);
    let horizons = usable_horizons(&a.horizons.map_or_else(|| vec![20], |h| h.0), full);
    let breakdown = evaluate(&ckpt.params, &truth, &rewire, &horizons, a.field)?;
    emit(out, a.out.as_deref(), &breakdown.to_csv())?;
    Ok(0)
}

fn verify_lemma_cmd(a: VerifyLemmaArgs, out: &mut dyn Write) -> Result<i32> {
    let config = EnsembleConfig {
        graphs: a.graphs,
        min_nodes: a.min_nodes,
        max_nodes: a.max_nodes,
        max_radius: a.max_radius,
        edge_probability: a.edge_probability,
    };
    let report = verify_lemma(&config, a.seed)?;
    emit(out, a.out.as_deref(), &report.to_csv())?;
    if let Some(path) = &a.summary {
        emit(out, Some(path), &report.decay_csv())?;
    }
    eprintln!(
        "{} rows, {} failing, finite-difference agreement {:e}",
        report.rows.len(),
        report.failures(),
        report.fd_exact_rel_error
    );
    Ok(if report.all_pass() { 0 } else { 1 })
}

/// Header of the `ablate` comparison table.
pub const ABLATE_HEADER: &str = "variant,metric,horizon,rmse";

fn ablate_cmd(a: AblateArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::from_flags(&a.run)?;
    let train_path = a
        .input
        .or(cfg.paths.data.clone())
        .ok_or_else(|| Error::Config("no training data: pass --in or set paths.data".into()))?;
    let data = vec![Trajectory::load(&train_path)?];
    let truth = match &a.eval {
        Some(p) => Trajectory::load(p)?,
        None => data[0].clone(),
    };
    let field = a.field.unwrap_or(cfg.field);
    let full = truth.frames.len().saturating_sub(1);
    let horizons = usable_horizons(&a.horizons.map_or_else(|| cfg.horizons.clone(), |h| h.0), full);
    let model = ModelConfig {
        layout: layout_of(&data)?,
        ..cfg.model
    };
    let mut text = String::from(ABLATE_HEADER);
    text.push('\n');
    for variant in Variant::ALL {
        let rewire = RewireParams { variant, ..cfg.rewire };
        let report = train(model, &cfg.train, &rewire, &data)?;
        let b: RmseBreakdown = evaluate(&report.params, &truth, &rewire, &horizons, field)?;
        text.push_str(&format!("{variant},one_step,1,{}\n", b.one_step));
        for (k, v) in &b.rollout {
            text.push_str(&format!("{variant},rollout,{k},{v}\n"));
        }
        text.push_str(&format!("{variant},rollout_all,{},{}\n", b.full_horizon, b.rollout_all));
    }
    let path = a.out.or(cfg.paths.report.clone());
    emit(out, path.as_deref(), &text)?;
    Ok(0)
}
