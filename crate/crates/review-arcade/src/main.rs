use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use review_arcade::config::ExperimentConfig;
use review_arcade::prompts::PromptRegistry;
use review_arcade::runner::{ReportFormat, Runner, StageSummary};

/// Exit codes: 0 success, 1 usage error, 2 partial failure, 3 fatal error.
const EXIT_USAGE: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_FATAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "review-arcade",
    version,
    about = "Generate structured LLM paper reviews, measure their alignment with human reviews, and probe them with iterative taxonomy-constrained edits"
)]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true, default_value = "review-arcade.toml")]
    config: PathBuf,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Restrict the review stage to these backends (repeatable).
    #[arg(long = "backend", global = true)]
    backends: Vec<String>,

    /// Restrict the review stage to these prompts (repeatable).
    #[arg(long = "prompt", global = true)]
    prompts: Vec<String>,

    /// Restrict the ISI stage to these settings (repeatable).
    #[arg(long = "setting", global = true)]
    settings: Vec<String>,

    /// ISI iteration count override.
    #[arg(long, global = true)]
    iterations: Option<u32>,

    /// Review runs per (backend, prompt, paper) cell.
    #[arg(long, global = true)]
    runs: Option<u32>,

    /// Replace every mock backend's script with this file.
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,

    /// One-sided paired t-tests (test for score increases).
    #[arg(long, global = true)]
    one_sided: bool,

    /// Snap parsed scores to the half-point grid.
    #[arg(long, global = true)]
    snap_scores: bool,

    /// Directory of prompt text files overriding the bundled prompts.
    #[arg(long, global = true)]
    prompts_dir: Option<PathBuf>,

    /// Taxonomy JSON overriding the bundled taxonomy.
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate reviews for every (backend, prompt, paper, run) cell.
    Review {
        /// Stop after this many new backend cells (stage stays resumable).
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Compute alignment, consistency, and judge metrics; emit all reports.
    Evaluate,
    /// Run the iterative review-and-edit loop for configured settings.
    Isi,
    /// Judge strengths/weaknesses recall of generated reviews.
    Judge,
    /// Re-emit reports from existing artifacts in one format.
    Report {
        #[arg(long, value_enum)]
        format: FormatArg,
    },
    /// Print corpus statistics.
    Summarize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Plotdata,
}

impl From<FormatArg> for ReportFormat {
    fn from(value: FormatArg) -> Self {
        match value {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Plotdata => ReportFormat::Plotdata,
        }
    }
}

fn apply_overrides(config: &mut ExperimentConfig, cli: &Cli) {
    if !cli.backends.is_empty() {
        config.review.backends = cli.backends.clone();
    }
    if !cli.prompts.is_empty() {
        config.review.prompts = cli.prompts.clone();
    }
    if !cli.settings.is_empty() {
        config.isi.settings = cli.settings.clone();
    }
    if let Some(n) = cli.iterations {
        config.isi.n_iterations = n;
    }
    if let Some(n) = cli.runs {
        config.review.n_runs = n;
    }
    if cli.one_sided {
        config.metrics.one_sided = true;
    }
    if cli.snap_scores {
        config.review.snap_scores = true;
    }
}

fn stage_exit(summary: &StageSummary) -> ExitCode {
    if summary.n_failures > 0 || !summary.complete {
        ExitCode::from(EXIT_PARTIAL)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let mut config = ExperimentConfig::load(&cli.config)?;
    apply_overrides(&mut config, &cli);
    let registry =
        PromptRegistry::from_dirs(cli.prompts_dir.as_deref(), cli.taxonomy.as_deref())?;
    let base_dir = cli
        .config
        .parent()
        .map(PathBuf::from)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    let runner = Runner::new(config, base_dir, cli.out.clone(), registry, cli.mock_script.clone());

    match cli.command {
        Command::Review { limit } => {
            let summary = runner.cmd_review(limit)?;
            println!(
                "review: {} records ({} failures), {} new backend cells{}",
                summary.n_records,
                summary.n_failures,
                summary.n_new_calls,
                if summary.complete { "" } else { " [incomplete]" }
            );
            Ok(stage_exit(&summary))
        }
        Command::Isi => {
            let summary = runner.cmd_isi()?;
            println!(
                "isi: {} trajectories ({} aborted), {} new runs",
                summary.n_records, summary.n_failures, summary.n_new_calls
            );
            Ok(stage_exit(&summary))
        }
        Command::Judge => {
            let summary = runner.cmd_judge()?;
            println!(
                "judge: {} verdicts ({} invalid), {} new backend calls",
                summary.n_records, summary.n_failures, summary.n_new_calls
            );
            Ok(stage_exit(&summary))
        }
        Command::Evaluate => {
            let bundle = runner.cmd_evaluate()?;
            println!(
                "evaluate: {} alignment rows, {} consistency rows, {} isi rows",
                bundle.alignment.len(),
                bundle.consistency.len(),
                bundle.isi.len()
            );
            println!("reports written to {}", runner.out_dir().join("reports").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { format } => {
            let files = runner.cmd_report(format.into())?;
            for file in files {
                println!("{}", file.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize => {
            let (summary, load_report) = runner.cmd_summarize()?;
            println!(
                "accepted: {} papers, {:.1} ± {:.1} reviews per paper",
                summary.accepted.n_papers,
                summary.accepted.reviews_per_paper_mean,
                summary.accepted.reviews_per_paper_std
            );
            println!(
                "rejected: {} papers, {:.1} ± {:.1} reviews per paper",
                summary.rejected.n_papers,
                summary.rejected.reviews_per_paper_mean,
                summary.rejected.reviews_per_paper_std
            );
            println!(
                "token histogram: 30 bins of width {:.1} starting at {:.0}",
                summary.length_histogram.bin_width, summary.length_histogram.bin_min
            );
            if !load_report.is_clean() {
                println!(
                    "load issues: {} papers rejected, {} reviews rejected",
                    load_report.rejected_papers.len(),
                    load_report.rejected_reviews.len()
                );
                for (id, reason) in load_report
                    .rejected_papers
                    .iter()
                    .chain(&load_report.rejected_reviews)
                {
                    println!("  {id}: {reason}");
                }
            }
            if !load_report.reviewless.is_empty() {
                println!("reviewless papers: {}", load_report.reviewless.join(", "));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap reserves exit code 2; the contract here is 1 for usage
            // errors, while --help/--version print and succeed.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}
