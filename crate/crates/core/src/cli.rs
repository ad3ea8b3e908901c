//! Command-line front end. `run` takes the argument list and output sinks so
//! commands can be driven from tests.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradcheckOptions};
use crate::io::checkpoint::load_checkpoint_for;
use crate::io::{
    fingerprint_files, load_checkpoint, read_features, read_rdms, save_checkpoint, write_rdms,
    Checkpoint,
};
use crate::report::{stage_summaries, to_csv, to_table};
use crate::similarity::{predicted_rdm, score_with_ceiling, ScoreReport};
use crate::training::{train, Dataset, LossKind, TrainConfig};
use crate::types::{FeatureSet, MaskResolution, Modality, RdmSlice, RdmStack};

pub const EXIT_OK: i32 = 0;
/// A check ran and did not pass (gradcheck).
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

pub const PREDICTED_MODALITY: &str = "predicted";

#[derive(Debug, Parser)]
#[command(
    name = "hyperagg",
    version,
    about = "Learn and apply stage/channel masks over hypercolumn features"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a mask against one or more RDM stacks.
    Train(TrainArgs),
    /// Write the predicted RDM of a set of images.
    Predict(PredictArgs),
    /// Score a checkpoint against an RDM stack.
    Eval(EvalArgs),
    /// Per-stage summary of a checkpoint's mask.
    InspectMask(InspectArgs),
    /// Compare analytic and finite-difference encoder gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn enabled(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Csv,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// AGF1 feature files; each RDM file is joined to the first one holding all its ids.
    #[arg(long, num_args = 1.., required = true)]
    pub features: Vec<PathBuf>,
    /// AGR1 RDM files, one dataset each.
    #[arg(long, num_args = 1.., required = true)]
    pub rdms: Vec<PathBuf>,
    #[arg(long, default_value = "per-channel")]
    pub resolution: MaskResolution,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 40)]
    pub batch: usize,
    #[arg(long, default_value = "l1")]
    pub loss: LossKind,
    #[arg(long, value_enum, default_value = "off")]
    pub weights: Toggle,
    #[arg(long, value_enum, default_value = "off")]
    pub meg_sampling: Toggle,
    #[arg(long, default_value_t = 0.10)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log path; defaults to the checkpoint path with extension `log.tsv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Comma-separated image ids, or `all`.
    #[arg(long, default_value = "all", value_delimiter = ',')]
    pub images: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub rdms: PathBuf,
    /// Slice index (integer) or time (real, nearest slice). Defaults to the midpoint slice.
    #[arg(long)]
    pub slice: Option<String>,
    /// Use this noise ceiling instead of computing it.
    #[arg(long)]
    pub ceiling: Option<f64>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = crate::gradcheck::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = crate::gradcheck::DEFAULT_INSTANCES, hide = true)]
    pub instances: usize,
    /// Negative control: perturb the analytic gradient.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

/// Parse `args` (including the program name) and run the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match execute(cli.command, err) {
        Ok((text, code)) => {
            let _ = out.write_all(text.as_bytes());
            code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Divergence(_) => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}

fn execute(command: Command, err: &mut dyn Write) -> Result<(String, i32)> {
    match command {
        Command::Train(a) => cmd_train(&a, err).map(|s| (s, EXIT_OK)),
        Command::Predict(a) => cmd_predict(&a).map(|s| (s, EXIT_OK)),
        Command::Eval(a) => cmd_eval(&a).map(|s| (s, EXIT_OK)),
        Command::InspectMask(a) => cmd_inspect_mask(&a).map(|s| (s, EXIT_OK)),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

pub fn cmd_train(args: &TrainArgs, err: &mut dyn Write) -> Result<String> {
    let config = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        epochs: args.epochs,
        loss: args.loss,
        use_reliability_weights: args.weights.enabled(),
        resolution: args.resolution,
        val_fraction: args.val_frac,
        seed: args.seed,
        meg_gaussian_sampling: args.meg_sampling.enabled(),
        ..Default::default()
    };
    config.validate()?;
    let feature_sets = args
        .features
        .iter()
        .map(read_features)
        .collect::<Result<Vec<_>>>()?;
    let mut datasets = Vec::with_capacity(args.rdms.len());
    for path in &args.rdms {
        let stack = read_rdms(path)?;
        let features = feature_sets
            .iter()
            .find(|fs| stack.image_ids().iter().all(|id| fs.index_of(id).is_some()))
            .ok_or_else(|| {
                Error::ImageMismatch(format!(
                    "no feature file holds every image of {}",
                    path.display()
                ))
            })?;
        datasets.push(Dataset::new(dataset_name(path), features, stack)?);
    }
    if config.meg_gaussian_sampling && !datasets.iter().any(|d| d.stack.is_timestamped()) {
        let _ = writeln!(
            err,
            "warning: --meg-sampling on has no effect without timestamped (MEG) RDMs"
        );
    }
    let stages = datasets[0].features.stages().to_vec();
    let (outcome, log) = train(datasets, &config)?;
    let inputs: Vec<&PathBuf> = args.features.iter().chain(&args.rdms).collect();
    let fingerprint = fingerprint_files(&inputs)?;
    let final_train = outcome.final_train_loss;
    let final_val = outcome.final_val_loss;
    let ckpt = Checkpoint::from_outcome(outcome, &stages, &config, fingerprint);
    save_checkpoint(&ckpt, &args.out)?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| default_log_path(&args.out));
    std::fs::write(&log_path, log.to_tsv()).map_err(|e| Error::io(&log_path, e))?;
    Ok(format!(
        "final train loss {final_train:.6}\nfinal val loss {final_val:.6}\nbest epoch {} (val loss {:.6})\ncheckpoint {}\nlog {}\n",
        ckpt.best_epoch,
        ckpt.val_loss,
        args.out.display(),
        log_path.display()
    ))
}

pub fn default_log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.tsv")
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn subset_indices(features: &FeatureSet, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            features
                .index_of(id)
                .ok_or_else(|| Error::UnknownImage(id.clone()))
        })
        .collect()
}

pub fn cmd_predict(args: &PredictArgs) -> Result<String> {
    let features = read_features(&args.features)?;
    let ckpt = load_checkpoint_for(&args.ckpt, &features)?;
    let ids: Vec<String> = if args.images.len() == 1 && args.images[0] == "all" {
        features.image_ids().to_vec()
    } else {
        args.images.iter().map(|s| s.trim().to_string()).collect()
    };
    let subset = subset_indices(&features, &ids)?;
    let rdm = predicted_rdm(&features, &ckpt.mask, &subset)?;
    let stack = RdmStack::new(
        ids,
        Modality::Other(PREDICTED_MODALITY.into()),
        vec![RdmSlice {
            timestamp: None,
            matrices: vec![rdm.to_f32()],
        }],
    )?;
    write_rdms(&stack, &args.out)?;
    Ok(format!(
        "wrote {n}x{n} RDM to {}\n",
        args.out.display(),
        n = rdm.n()
    ))
}

/// Integer text selects a slice index; any other real selects the nearest slice in time.
pub fn resolve_slice(stack: &RdmStack, spec: Option<&str>) -> Result<usize> {
    let Some(text) = spec else {
        return Ok(stack.midpoint_slice());
    };
    if let Ok(index) = text.parse::<usize>() {
        stack.slice_index(index)?;
        return Ok(index);
    }
    let t: f64 = text
        .parse()
        .map_err(|_| Error::Config(format!("--slice {text:?} is neither an index nor a time")))?;
    if !stack.is_timestamped() || !t.is_finite() {
        return Err(Error::Config(format!(
            "--slice {text}: stack has no timestamps"
        )));
    }
    Ok(stack.nearest_slice(t))
}

/// Score the checkpoint's prediction, rounded to storage precision so that it
/// agrees with scoring a file written by `predict`.
pub fn evaluate(args: &EvalArgs) -> Result<(ScoreReport, usize)> {
    let features = read_features(&args.features)?;
    let ckpt = load_checkpoint_for(&args.ckpt, &features)?;
    let stack = read_rdms(&args.rdms)?;
    let slice = resolve_slice(&stack, args.slice.as_deref())?;
    let subset = subset_indices(&features, stack.image_ids())?;
    let rdm = predicted_rdm(&features, &ckpt.mask, &subset)?.quantized();
    Ok((
        score_with_ceiling(&rdm, &stack, slice, args.ceiling)?,
        slice,
    ))
}

pub const EVAL_CSV_HEADER: &str = "metric,value";

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let (report, slice) = evaluate(args)?;
    Ok(format_score(&report, slice, args.format))
}

pub fn format_score(report: &ScoreReport, slice: usize, format: OutputFormat) -> String {
    let mut out = String::new();
    match format {
        OutputFormat::Csv => {
            let _ = writeln!(out, "{EVAL_CSV_HEADER}");
            let _ = writeln!(out, "slice,{slice}");
            for (k, r2) in report.per_subject_r2.iter().enumerate() {
                let _ = writeln!(out, "r2_subject_{k},{r2}");
            }
            let _ = writeln!(out, "mean_r2,{}", report.mean_r2());
            let _ = writeln!(out, "noise_ceiling,{}", report.noise_ceiling);
            let _ = writeln!(
                out,
                "normalized_score_percent,{}",
                report.normalized_score_percent
            );
        }
        OutputFormat::Table => {
            let _ = writeln!(out, "slice            {slice}");
            for (k, r2) in report.per_subject_r2.iter().enumerate() {
                let _ = writeln!(out, "subject {k:<8} r2 {r2:.6}");
            }
            let _ = writeln!(out, "mean r2          {:.6}", report.mean_r2());
            let _ = writeln!(out, "noise ceiling    {:.6}", report.noise_ceiling);
            let _ = writeln!(
                out,
                "score            {:.3}%",
                report.normalized_score_percent
            );
        }
    }
    out
}

pub fn cmd_inspect_mask(args: &InspectArgs) -> Result<String> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let rows = stage_summaries(&ckpt.mask, &ckpt.stages);
    Ok(match args.format {
        OutputFormat::Csv => to_csv(&rows),
        OutputFormat::Table => to_table(&rows),
    })
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(String, i32)> {
    let report = run_gradcheck(GradcheckOptions {
        seed: args.seed,
        instances: args.instances,
        corrupt: args.corrupt_gradient,
        ..Default::default()
    })?;
    let code = if report.passed() {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    };
    Ok((report.summary(), code))
}
