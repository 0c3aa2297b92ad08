//! `train`, `eval`, `sweep` and `analyze` commands.
//!
//! Exit codes: 0 success, 2 bad configuration or missing input, 3 a
//! non-finite loss aborted training, 1 anything else.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::telemetry::{self, CsvWriter, Table, TelemetryRecord, CSV_HEADER};
use crate::trainer::{EvalRecord, Sink, Trainer, METRICS_HEADER};

#[derive(Parser, Debug)]
#[command(
    name = "simbav2",
    version,
    about = "Hyperspherical soft actor-critic experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one agent and write a run directory.
    Train(TrainArgs),
    /// Evaluate the policy stored in a checkpoint.
    Eval(EvalArgs),
    /// Run one training job per value along an axis.
    Sweep(SweepArgs),
    /// Summarize the telemetry of a finished run.
    Analyze(AnalyzeArgs),
}

/// Config file plus per-key overrides shared by `train` and `sweep`.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Flat key=value config file; flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gradient updates per environment step.
    #[arg(long)]
    pub utd: Option<u32>,
    /// pendulum or pointmass.
    #[arg(long)]
    pub env: Option<String>,
    /// Total environment steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Ablation switches joined by '+', e.g. no_shift+mse_loss.
    #[arg(long)]
    pub ablate: Option<String>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub telemetry_every: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

impl Overrides {
    /// File values, then explicit flags, then ablations; resolved.
    pub fn build(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.utd {
            c.utd = v;
        }
        if let Some(v) = &self.env {
            c.env = v.clone();
        }
        if let Some(v) = self.steps {
            c.total_steps = v;
        }
        if let Some(v) = self.eval_every {
            c.eval_every = v;
        }
        if let Some(v) = self.telemetry_every {
            c.telemetry_every = v;
        }
        if let Some(v) = self.checkpoint_every {
            c.checkpoint_every = v;
        }
        if let Some(a) = &self.ablate {
            c = c.ablate_all(a)?;
        }
        c.resolve()
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Run directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Continue from a checkpoint; its embedded config replaces all flags.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint file to evaluate.
    #[arg(long, conflicts_with = "out")]
    pub checkpoint: Option<PathBuf>,
    /// Run directory; its latest checkpoint is used.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of evaluation episodes (defaults to the run's setting).
    #[arg(long)]
    pub episodes: Option<u32>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Utd,
    Width,
    Depth,
    Ablation,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated values; `none` is the unablated baseline.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<String>,
    /// Parent directory for the per-value runs and summary.csv.
    #[arg(long, default_value = "sweep")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Run directory containing telemetry.csv.
    pub run_dir: PathBuf,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Checkpoint(_) => 2,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a, out).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Analyze(a) => cmd_analyze(&a.run_dir, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn echo_config(out: &mut dyn Write, cfg: &TrainConfig) -> Result<()> {
    writeln!(out, "# resolved config (sha256 {})", cfg.digest())?;
    write!(out, "{}", cfg.to_text())?;
    Ok(())
}

/// Files of one run directory.
pub struct RunLayout {
    pub dir: PathBuf,
}

impl RunLayout {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
        }
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.resolved")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
    pub fn telemetry(&self) -> PathBuf {
        self.dir.join("telemetry.csv")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.dir.join("checkpoints")
    }
    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.checkpoints().join(format!("step_{step}.ckpt"))
    }

    /// Highest-step checkpoint in the run, if any.
    pub fn latest_checkpoint(&self) -> Option<PathBuf> {
        fs::read_dir(self.checkpoints())
            .ok()?
            .filter_map(|e| {
                let name = e.ok()?.file_name().into_string().ok()?;
                let step: u64 = name
                    .strip_prefix("step_")?
                    .strip_suffix(".ckpt")?
                    .parse()
                    .ok()?;
                Some((step, name))
            })
            .max()
            .map(|(_, name)| self.checkpoints().join(name))
    }
}

/// Streams metrics, telemetry and checkpoints into a run directory.
struct RunSink<'a> {
    layout: &'a RunLayout,
    metrics: CsvWriter<BufWriter<File>>,
    telemetry: CsvWriter<BufWriter<File>>,
    log: &'a mut dyn Write,
    last_eval: Option<EvalRecord>,
}

impl Sink for RunSink<'_> {
    fn eval(&mut self, rec: &EvalRecord) -> Result<()> {
        self.metrics.row(&rec.csv_row())?;
        self.metrics.flush()?;
        writeln!(
            self.log,
            "step {:>8}  return {:>10.3} ± {:<8.3} alpha {:.4e}  lr {:.3e}",
            rec.env_step, rec.return_mean, rec.return_std, rec.alpha, rec.lr
        )?;
        self.last_eval = Some(*rec);
        Ok(())
    }

    fn telemetry(&mut self, rec: &TelemetryRecord) -> Result<()> {
        self.telemetry.row(&rec.csv_row())
    }

    fn checkpoint(&mut self, trainer: &Trainer) -> Result<()> {
        self.metrics.flush()?;
        self.telemetry.flush()?;
        Checkpoint::capture(trainer).save(&self.layout.checkpoint(trainer.env_step))
    }
}

/// Keeps only the header and rows whose first column satisfies `keep`.
fn truncate_csv(path: &Path, keep: impl Fn(f64) -> bool) -> Result<()> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let first = line.split(',').next().and_then(|s| s.parse::<f64>().ok());
        if i == 0 || first.is_some_and(&keep) {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn open_append(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(OpenOptions::new().append(true).open(path)?))
}

/// Trains into `args.out`; returns the final evaluation return.
pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<f64> {
    let layout = RunLayout::new(&args.out);
    let (mut trainer, metrics, telemetry_w) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let trainer = ck.restore()?;
            echo_config(out, &trainer.cfg)?;
            writeln!(
                out,
                "# resuming from {} at env step {}",
                path.display(),
                trainer.env_step
            )?;
            let (step, updates) = (trainer.env_step as f64, trainer.agent.updates as f64);
            truncate_csv(&layout.metrics(), |s| s <= step)?;
            truncate_csv(&layout.telemetry(), |u| u <= updates)?;
            let m = CsvWriter::resume(open_append(&layout.metrics())?);
            let t = CsvWriter::resume(open_append(&layout.telemetry())?);
            (trainer, m, t)
        }
        None => {
            let cfg = args.overrides.build()?;
            echo_config(out, &cfg)?;
            let trainer = Trainer::new(&cfg)?;
            fs::create_dir_all(&layout.dir)?;
            fs::write(layout.config(), cfg.to_text())?;
            let m = CsvWriter::new(
                BufWriter::new(File::create(layout.metrics())?),
                METRICS_HEADER,
            )?;
            let t = CsvWriter::new(
                BufWriter::new(File::create(layout.telemetry())?),
                CSV_HEADER,
            )?;
            (trainer, m, t)
        }
    };
    let mut sink = RunSink {
        layout: &layout,
        metrics,
        telemetry: telemetry_w,
        log: out,
        last_eval: None,
    };
    let outcome = trainer.run(&mut sink, None);
    sink.metrics.flush()?;
    sink.telemetry.flush()?;
    outcome?;

    let total = trainer.cfg.total_steps;
    let final_eval = match sink.last_eval {
        Some(r) if r.env_step == total => r.return_mean,
        _ => {
            let (mean, std) = trainer.evaluate()?;
            sink.eval(&EvalRecord {
                env_step: total,
                return_mean: mean,
                return_std: std,
                alpha: trainer.agent.alpha(),
                lr: trainer.lr(),
            })?;
            sink.metrics.flush()?;
            mean
        }
    };
    if !layout.checkpoint(total).exists() {
        Checkpoint::capture(&trainer).save(&layout.checkpoint(total))?;
    }
    writeln!(sink.log, "final evaluation return: {final_eval:.6}")?;
    Ok(final_eval)
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let path = match (&args.checkpoint, &args.out) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => RunLayout::new(dir)
            .latest_checkpoint()
            .ok_or_else(|| Error::Config(format!("no checkpoints under {}", dir.display())))?,
        (None, None) => return Err(Error::Usage("eval needs --checkpoint or --out".into())),
    };
    let mut trainer = Checkpoint::load(&path)?.restore()?;
    if let Some(n) = args.episodes {
        trainer.cfg.eval_episodes = n;
    }
    echo_config(out, &trainer.cfg)?;
    let (mean, std) = trainer.evaluate()?;
    writeln!(
        out,
        "checkpoint {} (env step {})",
        path.display(),
        trainer.env_step
    )?;
    writeln!(
        out,
        "eval_return_mean={mean:.6} eval_return_std={std:.6} episodes={}",
        trainer.cfg.eval_episodes
    )?;
    Ok(())
}

/// Config for one sweep point.
pub fn sweep_config(base: &TrainConfig, axis: Axis, value: &str) -> Result<TrainConfig> {
    let num = |v: &str| -> Result<usize> {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("sweep value '{v}' is not a positive integer")))
    };
    let mut c = base.clone();
    match axis {
        Axis::Utd => c.utd = num(value)? as u32,
        Axis::Width => c.critic_hidden = num(value)?,
        Axis::Depth => c.critic_blocks = num(value)?,
        Axis::Ablation if value.trim() == "none" => {}
        Axis::Ablation => {
            c = c
                .ablate_all(value)
                .map_err(|e| Error::Config(e.to_string()))?
        }
    }
    c.resolve()
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::Utd => "utd",
        Axis::Width => "width",
        Axis::Depth => "depth",
        Axis::Ablation => "ablation",
    }
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let values: Vec<&str> = args
        .values
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect();
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let base = args.overrides.build()?;
    // Reject every bad value before any job starts.
    let configs = values
        .iter()
        .map(|v| sweep_config(&base, args.axis, v))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&args.out)?;
    let mut summary = String::from("axis_value,final_eval_return\n");
    for (value, cfg) in values.iter().zip(configs) {
        let dir = args.out.join(format!("{}_{value}", axis_name(args.axis)));
        writeln!(
            out,
            "# sweep {}={value} -> {}",
            axis_name(args.axis),
            dir.display()
        )?;
        let cfg_path = dir.join("config.input");
        fs::create_dir_all(&dir)?;
        fs::write(&cfg_path, cfg.to_text())?;
        let train = TrainArgs {
            overrides: Overrides {
                config: Some(cfg_path),
                ..Default::default()
            },
            out: dir,
            resume: None,
        };
        let ret = cmd_train(&train, out)?;
        summary.push_str(&format!("{value},{}\n", telemetry::fmt_sig9(ret)));
        fs::write(args.out.join("summary.csv"), &summary)?;
    }
    write!(out, "{summary}")?;
    Ok(())
}

/// Telemetry columns whose drift ratio is reported.
const DRIFT_COLUMNS: [&str; 2] = ["enc_elr", "pred_elr"];

pub fn cmd_analyze(run_dir: &Path, out: &mut dyn Write) -> Result<()> {
    let layout = RunLayout::new(run_dir);
    let path = layout.telemetry();
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    match fs::read_to_string(layout.config()) {
        Ok(cfg) => {
            let cfg = TrainConfig::parse(&cfg)?.resolve()?;
            echo_config(out, &cfg)?;
        }
        Err(_) => writeln!(out, "# no config.resolved in {}", run_dir.display())?,
    }
    let table = Table::parse(&text)?;
    let mut report = String::new();
    if table.rows() == 0 {
        report.push_str(
            "status,empty\n# telemetry has no rows: the run performed no recorded updates\n",
        );
    } else {
        report.push_str(&format!(
            "status,ok\nrows,{}\ncolumn,min,max,mean\n",
            table.rows()
        ));
        for (name, col) in table.header.iter().zip(&table.columns) {
            let s = telemetry::summarize(col).expect("non-empty column");
            report.push_str(&format!(
                "{name},{},{},{}\n",
                telemetry::fmt_sig9(s.min),
                telemetry::fmt_sig9(s.max),
                telemetry::fmt_sig9(s.mean)
            ));
        }
        for name in DRIFT_COLUMNS {
            let ratio = table.column(name).and_then(telemetry::drift_ratio);
            let cell = ratio.map_or_else(|| "nan".to_string(), telemetry::fmt_sig9);
            report.push_str(&format!("{name}_drift_ratio,{cell}\n"));
        }
    }
    write!(out, "{report}")?;
    fs::write(run_dir.join("analysis.csv"), report)?;
    Ok(())
}
