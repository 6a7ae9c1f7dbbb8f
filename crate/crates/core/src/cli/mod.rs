//! The `koa` command line: reproducible stages driven by one JSON config.

mod artifacts;
mod config;
mod stages;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use artifacts::{read_probs, sha256_file, write_probs, RunDir, Stamp};
pub use config::{
    BackboneConfig, MetaConfig, Overrides, PreprocessConfig, RunConfig, Seeds, SelectionConfig, SynthConfig, TrainParams,
};
pub use stages::{eval, load_split, load_stack_data, run_stage, Ctx, FinalChoice, Selection, SplitData, Summary, TunedSpec, STAGES};

use crate::dataset::{SplitName, Task};
use crate::error::{Error, Result};
use crate::metrics::write_reports_csv;
use crate::persist::Provenance;

#[derive(Debug, Parser)]
#[command(name = "koa", version, about = "Knee radiograph grading: CNN base learners and stacked meta-learners")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; stage seeds left unset in the config derive from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory of the run.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `multiclass` (KL grades 0-4) or `binary` (grades 0-1 vs 2-4).
    #[arg(long, global = true, value_parser = parse_task)]
    pub task: Option<Task>,
    /// Skip stages whose recorded outputs verify against the current config.
    #[arg(long, global = true)]
    pub stage_resume: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic radiograph set.
    Synth,
    /// Split, then crop / CLAHE / augment / resize every image.
    Prep,
    /// Train every configured backbone.
    TrainBase,
    /// Write base-learner probabilities and reports.
    Extract,
    /// Select base learners and cross-validate the meta-learner grids.
    TuneMeta,
    /// Fit the tuned meta-learners and pick the final one.
    Stack,
    /// Evaluate a saved model on one split of a run directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Run directory holding the split manifest and preprocessed images.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: SplitName,
    },
    /// Summarize reports into summary.json.
    Report,
    /// Every stage in order.
    Run,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<SplitName, String> {
    SplitName::ALL
        .into_iter()
        .find(|n| n.as_str() == s)
        .ok_or_else(|| format!("unknown split {s:?} (train, val, test)"))
}

fn context(cli: &Cli) -> Result<Ctx> {
    let ov = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        task: cli.task,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &ov)?;
    let run = RunDir {
        root: cfg.out_dir.clone(),
        provenance: Provenance {
            config_hash: cfg.hash(),
            seed: cfg.seed,
        },
        resume: cli.stage_resume,
    };
    fs::create_dir_all(&run.root).map_err(|e| Error::io(&run.root, e))?;
    let cfg_path = run.path("config.json");
    let text = cfg.to_json();
    if cli.stage_resume && cfg_path.exists() {
        let existing = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        if existing != text {
            return Err(Error::StaleArtifact {
                path: cfg_path,
                reason: "the run was started with a different config; rerun without --stage-resume".into(),
            });
        }
    } else {
        fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
    }
    Ok(Ctx { cfg, run })
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Command::Eval { model, data, split } = &cli.command {
        let root = match data {
            Some(d) => d.clone(),
            None => RunConfig::load(
                cli.config.as_deref(),
                &Overrides {
                    out: cli.out.clone(),
                    ..Overrides::default()
                },
            )?
            .out_dir,
        };
        let report = eval(model, &root, *split)?;
        let stem = model.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
        let dir = root.join("eval");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{stem}_{}.csv", split.as_str()));
        write_reports_csv(&path, std::slice::from_ref(&report))?;
        println!(
            "{} {}: accuracy {:.4}, balanced accuracy {:.4}, auc {:.4} -> {}",
            report.model,
            report.split,
            report.accuracy,
            report.balanced_accuracy,
            report.auc,
            path.display()
        );
        return Ok(());
    }
    let ctx = context(cli)?;
    let stages: &[&str] = match &cli.command {
        Command::Synth => &["synth"],
        Command::Prep => &["prep"],
        Command::TrainBase => &["train-base"],
        Command::Extract => &["extract"],
        Command::TuneMeta => &["tune-meta"],
        Command::Stack => &["stack"],
        Command::Report => &["report"],
        Command::Run => &STAGES,
        Command::Eval { .. } => unreachable!(),
    };
    for stage in stages {
        run_stage(&ctx, stage)?;
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
