use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sentivote::explain::RenderFormat;
use sentivote::pipeline::Toggle;
use sentivote::ErrorKind;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "sentivote", version, about = "Sentiment classification with TF-IDF models and soft-voting ensembles")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Run configuration file (TOML with dotted keys).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for the split, training and sampled explanations.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory of the run; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split the corpus, fit the vocabulary and export sparse feature matrices.
    Prepare,
    /// Train naive Bayes, logistic regression and the SVM.
    Train,
    /// Classify one review with the trained models.
    Predict(InputArgs),
    /// Score the test split with every model and the ensemble.
    Evaluate,
    /// Soft-vote probability files.
    Ensemble(EnsembleArgs),
    /// Attribute a prediction to the review's tokens.
    Explain(ExplainArgs),
    /// Retrain with components disabled and compare.
    Ablate(AblateArgs),
    /// Render a report bundle as a table and plot-ready CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Review text.
    #[arg(long, conflicts_with = "file")]
    text: Option<String>,
    /// File holding the review text; `-` reads standard input.
    #[arg(long, value_name = "PATH")]
    file: Option<PathBuf>,
    /// Attach an attribution for MODEL (default: the ensemble).
    #[arg(long, value_name = "MODEL", num_args = 0..=1, default_missing_value = "ensemble")]
    explain: Option<String>,
}

#[derive(Debug, Args)]
struct EnsembleArgs {
    /// Probability files in the JSON Lines wire format.
    #[arg(required = true, value_name = "FILE")]
    files: Vec<PathBuf>,
    /// Comma-separated weights in file order; equal weights when omitted.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Write verdicts here instead of standard output.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long, conflicts_with = "file")]
    text: Option<String>,
    #[arg(long, value_name = "PATH")]
    file: Option<PathBuf>,
    /// Model to explain: naive_bayes, logistic_regression, svm or ensemble.
    #[arg(long, default_value = "ensemble")]
    model: String,
    /// Output format.
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Also write an SVG bar chart to PATH.
    #[arg(long, value_name = "PATH")]
    svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Format {
    Text,
    Json,
    SvgBar,
}

impl From<Format> for RenderFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => RenderFormat::Text,
            Format::Json => RenderFormat::Json,
            Format::SvgBar => RenderFormat::SvgBar,
        }
    }
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Component to disable: negation or ngrams. Repeatable; both when omitted.
    #[arg(long = "toggle", value_name = "TOGGLE", value_parser = parse_toggle)]
    toggles: Vec<Toggle>,
    /// Report the baseline only.
    #[arg(long, conflicts_with = "toggles")]
    baseline_only: bool,
}

fn parse_toggle(s: &str) -> Result<Toggle, String> {
    s.parse().map_err(|e: sentivote::Error| e.to_string())
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report bundle; defaults to reports.json in the output directory.
    bundle: Option<PathBuf>,
    /// Write the CSV series here instead of printing it after the table.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

/// Failure with an exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(sentivote::Error),
}

impl From<sentivote::Error> for Failure {
    fn from(e: sentivote::Error) -> Self {
        Failure::Run(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Run(e) => match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Internal => 3,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(msg) => f.write_str(msg),
            Failure::Run(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
