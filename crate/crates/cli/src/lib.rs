//! `qhpc` command-line front end: validate, run and report.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qhpc_core::fabric::Fabric;
use qhpc_core::patterns::EvalMode;
use qhpc_core::runtime::{execute, validate_workload, RunConfig, RunError};
use qhpc_core::trace::{self, Outcome};
use qhpc_core::workflow::{compile, TemplateRegistry, Workload, WorkflowSpec};
use qhpc_core::workload::BindingMode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_UNSATISFIABLE: i32 = 2;
pub const EXIT_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qhpc", version, about = "Hybrid quantum-HPC workflow runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a workflow and a fabric description.
    Validate { workflow: PathBuf, fabric: PathBuf },
    /// Compile, schedule and execute a workflow.
    Run(RunArgs),
    /// Summarize a trace file.
    Report {
        trace: PathBuf,
        /// Also write a tab-separated Gantt table here.
        #[arg(long)]
        gantt: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Sampled,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub workflow: PathBuf,
    #[arg(value_name = "FABRIC")]
    pub fabric_path: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub fabric: Option<PathBuf>,
    #[arg(long, default_value = "early")]
    pub binding: BindingMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: ModeArg,
    #[arg(long, default_value = "trace.jsonl")]
    pub trace: PathBuf,
    #[arg(long, default_value = "metrics.json")]
    pub metrics: PathBuf,
}

pub fn exit_code(outcome: Outcome) -> i32 {
    match outcome {
        Outcome::Success => EXIT_OK,
        Outcome::Unsatisfiable => EXIT_UNSATISFIABLE,
        Outcome::Failed => EXIT_FAILED,
    }
}

/// Parses `args` (program name first) and runs the command, writing to
/// `out` and `err`. Returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Validate { workflow, fabric } => cmd_validate(workflow, fabric, out),
        Command::Run(args) => cmd_run(args, out, err),
        Command::Report { trace, gantt } => cmd_report(trace, gantt.as_deref(), out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_INVALID
        }
    }
}

fn load_inputs(workflow: &Path, fabric: &Path) -> anyhow::Result<(Workload, Fabric)> {
    let spec = WorkflowSpec::load(workflow).map_err(|d| anyhow::anyhow!("{}:\n{d}", workflow.display()))?;
    let fabric = Fabric::load(fabric).with_context(|| format!("{}", fabric.display()))?;
    let wl = compile(&spec, &TemplateRegistry::standard())
        .map_err(|d| anyhow::anyhow!("{}:\n{d}", workflow.display()))?;
    validate_workload(&wl, &fabric).map_err(|RunError::Invalid(m)| anyhow::anyhow!("{}:\n{m}", workflow.display()))?;
    Ok((wl, fabric))
}

pub fn cmd_validate(workflow: &Path, fabric: &Path, out: &mut dyn Write) -> anyhow::Result<i32> {
    load_inputs(workflow, fabric)?;
    writeln!(out, "OK")?;
    Ok(EXIT_OK)
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<i32> {
    let fabric_path = match (&args.fabric_path, &args.fabric) {
        (Some(a), Some(b)) if a != b => bail!("fabric given twice: {} and {}", a.display(), b.display()),
        (Some(p), _) | (None, Some(p)) => p.clone(),
        (None, None) => bail!("a fabric file is required"),
    };
    let (wl, fabric) = load_inputs(&args.workflow, &fabric_path)?;
    let cfg = RunConfig {
        binding: args.binding,
        seed: args.seed,
        mode: match args.mode {
            ModeArg::Exact => EvalMode::Exact,
            // Shot counts come from each driver's parameters.
            ModeArg::Sampled => EvalMode::Sampled { shots: 1024 },
        },
        ..RunConfig::default()
    };
    let report = execute(&wl, &fabric, &cfg).map_err(|RunError::Invalid(m)| anyhow::anyhow!(m))?;
    write_file(&args.trace, &trace::to_jsonl(&report.trace))?;
    let metrics = serde_json::to_string_pretty(&report.metrics)? + "\n";
    write_file(&args.metrics, &metrics)?;
    if report.outcome == Outcome::Success {
        for a in &report.artifacts {
            write_file(&a.path, &a.contents)?;
        }
    }
    if let Some(e) = &report.error {
        writeln!(err, "error: {e}")?;
    }
    let outcome = serde_json::to_value(report.outcome)?;
    writeln!(
        out,
        "outcome {} makespan_us {} trace {} metrics {}",
        outcome.as_str().unwrap_or_default(),
        report.metrics.makespan_us,
        args.trace.display(),
        args.metrics.display()
    )?;
    Ok(exit_code(report.outcome))
}

pub fn cmd_report(path: &Path, gantt: Option<&Path>, out: &mut dyn Write) -> anyhow::Result<i32> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let records = trace::parse_jsonl(&text).with_context(|| format!("{}", path.display()))?;
    out.write_all(trace::report(&records).as_bytes())?;
    if let Some(g) = gantt {
        write_file(g, &trace::gantt(&records))?;
    }
    Ok(EXIT_OK)
}
