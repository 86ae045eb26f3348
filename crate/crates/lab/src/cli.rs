//! Command-line surface of the `primelab` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{LabError, LabResult};
use crate::format::OutputFormat;
use crate::runners::{ablate, copycat, theory, toy};
use crate::spec::{ExperimentSpec, RunReport, RunnerKind};

/// Exit status when every check passed.
pub const EXIT_OK: i32 = 0;
/// Exit status for malformed arguments or configuration.
pub const EXIT_USAGE: i32 = 1;
/// Exit status when a check failed or a run errored.
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "primelab", version, about = "Priming experiments on synthetic shortcut tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// RMSE table of teacher-primed 1-D regressors.
    ToyTable(RunArgs),
    /// Learned curves of the primed regressors over training.
    Curves {
        #[command(flatten)]
        run: RunArgs,
        /// Also write one SVG chart per ζ.
        #[arg(long)]
        svg: bool,
    },
    /// Kernel and trajectory diagnostics.
    Theory(RunArgs),
    /// History, key-input and primed imitation policies.
    Copycat(RunArgs),
    /// Fusion, stop-gradient and ζ-depth grid.
    Ablate(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON experiment spec.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}

impl Command {
    pub fn kind(&self) -> RunnerKind {
        match self {
            Command::ToyTable(_) => RunnerKind::ToyTable,
            Command::Curves { .. } => RunnerKind::Curves,
            Command::Theory(_) => RunnerKind::Theory,
            Command::Copycat(_) => RunnerKind::Copycat,
            Command::Ablate(_) => RunnerKind::Ablate,
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::ToyTable(a) | Command::Theory(a) | Command::Copycat(a) | Command::Ablate(a) => a,
            Command::Curves { run, .. } => run,
        }
    }
}

/// Builds the spec a subcommand runs: config file if given, then flags.
pub fn resolve_spec(kind: RunnerKind, args: &RunArgs) -> LabResult<ExperimentSpec> {
    let mut spec = match &args.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::new(kind),
    };
    if spec.kind()? != kind {
        return Err(LabError::Config(format!("config is for {:?}, not {kind}", spec.name)));
    }
    if let Some(seed) = args.seed {
        spec.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        spec.output_dir = out.clone();
    }
    Ok(spec)
}

/// Runs one experiment spec and returns its report.
pub fn run_spec(spec: &ExperimentSpec, format: OutputFormat, svg: bool) -> LabResult<RunReport> {
    std::fs::create_dir_all(&spec.output_dir).map_err(|e| LabError::io(&spec.output_dir, e))?;
    Ok(match spec.kind()? {
        RunnerKind::ToyTable => toy::run_toy_table(spec, format)?.1,
        RunnerKind::Curves => toy::run_learned_curves(spec, format, svg)?.1,
        RunnerKind::Theory => theory::run_theory_suite(spec, format)?.1,
        RunnerKind::Copycat => copycat::run_copycat_suite(spec, format)?.1,
        RunnerKind::Ablate => ablate::run_ablations(spec, format)?.1,
    })
}

pub fn print_report(report: &RunReport, out: &mut impl Write) -> std::io::Result<()> {
    for c in &report.checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{mark} {}: {}", c.name, c.detail)?;
    }
    for f in &report.files {
        writeln!(out, "wrote {}", f.display())?;
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

/// Like [`main_with`], writing reports to `out` and diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    let svg = matches!(cli.command, Command::Curves { svg: true, .. });
    let result = resolve_spec(cli.command.kind(), cli.command.args())
        .and_then(|spec| run_spec(&spec, cli.command.args().format, svg));
    match result {
        Ok(report) => {
            let _ = print_report(&report, out);
            if report.all_passed() {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }
        Err(e) => {
            let _ = writeln!(err, "primelab: {e}");
            e.exit_code()
        }
    }
}
