//! Command-line driver: map validation, dataset generation, statistics,
//! evaluation and grammar tooling.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;

pub use commands::{run, GenerateManifest, PoolSize};
pub use io::{hash_file, read_dataset, read_predictions, Prediction};

/// Exit status for a check that ran and found problems.
pub const EXIT_INVALID: u8 = 1;
/// Exit status for malformed invocations.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "navsynth", version, about = "Synthetic navigation instruction datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a map bundle and report every problem as JSON on stderr.
    ValidateMap(MapArgs),
    /// Generate a JSONL dataset and its manifest.
    Generate(GenerateArgs),
    /// Token length, entity and vocabulary statistics for a dataset.
    Stats(StatsArgs),
    /// Score predictions against a dataset.
    Evaluate(EvaluateArgs),
    /// Template grammar tools.
    Grammar {
        #[command(subcommand)]
        action: GrammarCommand,
    },
    /// Write a seeded synthetic grid city as a map bundle.
    SynthCity(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct MapArgs {
    /// Entities JSONL file.
    #[arg(long)]
    pub entities: PathBuf,
    /// Street network JSON file.
    #[arg(long)]
    pub streets: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Cfg,
    CfgAllocentric,
    CfgEgocentric,
    CfgMinimal,
    Dummy,
    Prompt,
}

impl From<ModeArg> for navsynth_core::generator::Mode {
    fn from(m: ModeArg) -> Self {
        use navsynth_core::generator::Mode;
        match m {
            ModeArg::Cfg => Mode::Cfg,
            ModeArg::CfgAllocentric => Mode::CfgAllocentric,
            ModeArg::CfgEgocentric => Mode::CfgEgocentric,
            ModeArg::CfgMinimal => Mode::CfgMinimal,
            ModeArg::Dummy => Mode::Dummy,
            ModeArg::Prompt => Mode::Prompt,
        }
    }
}

/// `identity`, `fixture:PATH` or `http:URL`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RewriterSpec {
    Identity,
    Fixture(PathBuf),
    Http(String),
}

impl FromStr for RewriterSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "identity" {
            return Ok(Self::Identity);
        }
        match s.split_once(':') {
            Some(("fixture", path)) if !path.is_empty() => Ok(Self::Fixture(PathBuf::from(path))),
            Some(("http", rest)) if !rest.is_empty() => {
                // `http:https://host/path` and `http:host/path` are both accepted.
                if rest.starts_with("http://") || rest.starts_with("https://") {
                    Ok(Self::Http(rest.to_string()))
                } else {
                    Ok(Self::Http(format!("http://{}", rest.trim_start_matches("//"))))
                }
            }
            _ => Err(format!("expected identity, fixture:PATH or http:URL, got {s:?}")),
        }
    }
}

impl std::fmt::Display for RewriterSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Identity => f.write_str("identity"),
            Self::Fixture(p) => write!(f, "fixture:{}", p.display()),
            Self::Http(u) => write!(f, "http:{u}"),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub map: MapArgs,
    /// Template grammar; the built-in grammar when omitted.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cfg")]
    pub mode: ModeArg,
    /// Number of records.
    #[arg(long)]
    pub n: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset output path (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Resamples per record before it counts as a miss.
    #[arg(long, default_value_t = navsynth_core::generator::DEFAULT_RETRIES)]
    pub retries: u32,
    #[arg(long, default_value = "identity")]
    pub rewriter: RewriterSpec,
    /// Worker threads; all available cores when omitted.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    /// Dataset JSONL file.
    pub dataset: PathBuf,
    /// Also write the statistics as CSV.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Landmark,
}

#[derive(Debug, Clone, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["predictions", "baseline"]))]
pub struct EvaluateArgs {
    /// Dataset JSONL file with gold goals.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Predictions JSONL of `{"id", "pred": [lon, lat]}`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Compute predictions with a built-in baseline instead.
    #[arg(long, value_enum, requires_all = ["entities", "streets"])]
    pub baseline: Option<BaselineArg>,
    #[arg(long)]
    pub entities: Option<PathBuf>,
    #[arg(long)]
    pub streets: Option<PathBuf>,
    /// Accuracy radius in meters; repeatable.
    #[arg(long = "radius", default_values_t = [100.0, 250.0])]
    pub radii: Vec<f64>,
    /// Write the error CDF as CSV.
    #[arg(long)]
    pub cdf_out: Option<PathBuf>,
    /// Largest distance on the CDF grid, in meters.
    #[arg(long, default_value_t = 5000.0)]
    pub cdf_max: f64,
    #[arg(long, default_value_t = 101)]
    pub cdf_steps: usize,
    /// Write the report as JSON.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GrammarArgs {
    /// Grammar file; the built-in grammar when omitted.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum GrammarCommand {
    /// Count templates and optionally write them one per line.
    Enumerate {
        #[command(flatten)]
        grammar: GrammarArgs,
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Print the minimal feature cover.
    Minimal {
        #[command(flatten)]
        grammar: GrammarArgs,
    },
    /// Parse and check the grammar.
    Lint {
        #[command(flatten)]
        grammar: GrammarArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub entities_out: PathBuf,
    #[arg(long)]
    pub streets_out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub rows: usize,
    #[arg(long, default_value_t = 30)]
    pub cols: usize,
    #[arg(long, default_value_t = 120.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = 5000)]
    pub count: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Parses `args`, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn rewriter_specs() {
        assert_eq!("identity".parse::<RewriterSpec>().unwrap(), RewriterSpec::Identity);
        assert_eq!(
            "fixture:a/b.jsonl".parse::<RewriterSpec>().unwrap(),
            RewriterSpec::Fixture("a/b.jsonl".into())
        );
        assert_eq!(
            "http:https://x.test/r".parse::<RewriterSpec>().unwrap(),
            RewriterSpec::Http("https://x.test/r".into())
        );
        assert_eq!(
            "http://x.test/r".parse::<RewriterSpec>().unwrap(),
            RewriterSpec::Http("http://x.test/r".into())
        );
        assert!("gpt".parse::<RewriterSpec>().is_err());
    }

    #[test]
    fn radius_defaults_and_repeats() {
        let cli = Cli::try_parse_from(["navsynth", "evaluate", "--dataset", "d", "--predictions", "p"]).unwrap();
        let Command::Evaluate(a) = cli.command else { panic!() };
        assert_eq!(a.radii, vec![100.0, 250.0]);
        let cli = Cli::try_parse_from([
            "navsynth", "evaluate", "--dataset", "d", "--predictions", "p", "--radius", "50", "--radius", "500",
        ])
        .unwrap();
        let Command::Evaluate(a) = cli.command else { panic!() };
        assert_eq!(a.radii, vec![50.0, 500.0]);
    }

    #[test]
    fn evaluate_needs_a_prediction_source() {
        assert!(Cli::try_parse_from(["navsynth", "evaluate", "--dataset", "d"]).is_err());
        assert!(Cli::try_parse_from(["navsynth", "evaluate", "--dataset", "d", "--baseline", "landmark"]).is_err());
    }
}
