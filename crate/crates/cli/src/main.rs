//! Command-line entry point: run experiments, resume partial runs, and turn
//! records files into reports.
//!
//! Exit codes: 0 on success, 1 on domain errors (parse, invariant, scoring,
//! backend), 2 on usage errors. Diagnostics go to stderr; data goes to files
//! or stdout.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tomlab_core::analysis::{
    accuracy_report_with, budget_sweep_summary, emit_report, error_heatmap_with,
    length_histogram_with, overlap_report, AnalysisOptions, Budget, GroupAxis, LengthUnit, Report,
    ReportFormat,
};
use tomlab_core::benchmarks::{load_samples, Benchmark};
use tomlab_core::policies::PolicyConfig;
use tomlab_core::runner::{
    read_records, resume, run_experiment, GenerationRecord, RunConfig, RECORDS_FILE,
};

#[derive(Parser)]
#[command(
    name = "tomlab",
    version,
    about = "Decoding interventions and ToM benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run configuration; writes records and a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Execute only the samples missing from a partial records file.
    Resume {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to <output_dir>/records.jsonl from the config.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Accuracy table from a records file.
    Analyze {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "none")]
        group_by: String,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        folding: FoldingArgs,
    },
    /// Length-correctness histogram.
    Hist {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "chars")]
        unit: String,
        #[arg(long)]
        bin_width: u64,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        folding: FoldingArgs,
    },
    /// Order-by-length heatmap of incorrect answers.
    Heatmap {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        bin_width: u64,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        folding: FoldingArgs,
    },
    /// Correct-answer overlap between two runs.
    Overlap {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "none")]
        group_by: String,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Expand one base config across thinking budgets and summarize.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated token limits; "unlimited" runs the vanilla policy.
        #[arg(long)]
        budgets: String,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Write the standard report set for a records file into a directory.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        bin_width: u64,
        #[arg(long, default_value = "chars")]
        unit: String,
        #[command(flatten)]
        folding: FoldingArgs,
    },
    /// Check that a dataset or config file parses and satisfies invariants.
    Validate {
        #[arg(long, requires = "kind", conflicts_with = "config")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, default_value = "csv")]
    format: String,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FoldingArgs {
    /// Keep errored records in length distributions / drop the
    /// errored-as-incorrect accuracy convention.
    #[arg(long)]
    include_errored: bool,
    #[arg(long)]
    exclude_errored: bool,
}

impl FoldingArgs {
    fn options(&self) -> AnalysisOptions {
        AnalysisOptions {
            errored_as_incorrect: !self.exclude_errored,
            include_errored_lengths: self.include_errored,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_axis(s: &str) -> Result<GroupAxis> {
    GroupAxis::parse(s).ok_or_else(|| anyhow!("unknown group axis {s:?} (order|taxonomy|none)"))
}

fn parse_unit(s: &str) -> Result<LengthUnit> {
    LengthUnit::parse(s).ok_or_else(|| anyhow!("unknown unit {s:?} (chars|tokens)"))
}

fn parse_format(s: &str) -> Result<ReportFormat> {
    ReportFormat::parse(s).ok_or_else(|| anyhow!("unknown format {s:?} (csv|json-lines|svg)"))
}

fn load(path: &Path) -> Result<Vec<GenerationRecord>> {
    read_records(path).with_context(|| format!("reading records from {}", path.display()))
}

fn deliver(content: &str, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config } => {
            let config = RunConfig::from_file(&config)?;
            let manifest = run_experiment(&config)?;
            eprintln!(
                "run {} finished: {} samples, {} correct, {} errored",
                manifest.run_id,
                manifest.totals.samples,
                manifest.totals.correct,
                manifest.totals.errored
            );
            eprintln!(
                "records: {}",
                config.output_dir.join(RECORDS_FILE).display()
            );
            Ok(())
        }
        Command::Resume { config, records } => {
            let config = RunConfig::from_file(&config)?;
            let records_path = records.unwrap_or_else(|| config.output_dir.join(RECORDS_FILE));
            let manifest = resume(&config, &records_path)?;
            eprintln!(
                "run {} resumed: {} samples total, {} correct, {} errored",
                manifest.run_id,
                manifest.totals.samples,
                manifest.totals.correct,
                manifest.totals.errored
            );
            Ok(())
        }
        Command::Analyze {
            records,
            group_by,
            output,
            folding,
        } => {
            let report =
                accuracy_report_with(&load(&records)?, parse_axis(&group_by)?, folding.options())?;
            let rendered = emit_report(&Report::Accuracy(&report), parse_format(&output.format)?)?;
            deliver(&rendered, &output.out)
        }
        Command::Hist {
            records,
            unit,
            bin_width,
            output,
            folding,
        } => {
            if bin_width == 0 {
                bail!("--bin-width must be positive");
            }
            let report = length_histogram_with(
                &load(&records)?,
                parse_unit(&unit)?,
                bin_width,
                folding.options(),
            )?;
            let rendered = emit_report(&Report::Histogram(&report), parse_format(&output.format)?)?;
            deliver(&rendered, &output.out)
        }
        Command::Heatmap {
            records,
            bin_width,
            output,
            folding,
        } => {
            if bin_width == 0 {
                bail!("--bin-width must be positive");
            }
            let matrix = error_heatmap_with(&load(&records)?, bin_width, folding.options())?;
            let rendered = emit_report(&Report::Heatmap(&matrix), parse_format(&output.format)?)?;
            deliver(&rendered, &output.out)
        }
        Command::Overlap {
            a,
            b,
            group_by,
            output,
        } => {
            let report = overlap_report(&load(&a)?, &load(&b)?, parse_axis(&group_by)?)?;
            let rendered = emit_report(&Report::Overlap(&report), parse_format(&output.format)?)?;
            deliver(&rendered, &output.out)
        }
        Command::Sweep {
            config,
            budgets,
            output,
        } => {
            let base = RunConfig::from_file(&config)?;
            let mut parsed = Vec::new();
            for part in budgets.split(',') {
                let budget = Budget::parse(part)
                    .ok_or_else(|| anyhow!("bad budget {part:?} (number or \"unlimited\")"))?;
                parsed.push(budget);
            }
            if parsed.len() < 2 {
                bail!("--budgets needs at least two entries");
            }
            let mut results = Vec::new();
            for budget in parsed {
                let mut config = base.clone();
                let label = budget.label();
                config.run_id = format!("{}-budget-{label}", base.run_id);
                config.output_dir = base.output_dir.join(format!("budget_{label}"));
                config.policy = match budget.0 {
                    Some(limit) => PolicyConfig::Budget {
                        think_limit: limit as usize,
                    },
                    None => PolicyConfig::Vanilla,
                };
                eprintln!("sweep: running budget {label}");
                run_experiment(&config)?;
                let records = load(&config.output_dir.join(RECORDS_FILE))?;
                let report =
                    accuracy_report_with(&records, GroupAxis::None, AnalysisOptions::default())?;
                results.push((budget, report));
            }
            let summary = budget_sweep_summary(&results)?;
            eprintln!("best budget: {}", summary.best_budget.label());
            let rendered = emit_report(&Report::Sweep(&summary), parse_format(&output.format)?)?;
            deliver(&rendered, &output.out)
        }
        Command::Report {
            records,
            out,
            bin_width,
            unit,
            folding,
        } => {
            if bin_width == 0 {
                bail!("--bin-width must be positive");
            }
            let records = load(&records)?;
            let unit = parse_unit(&unit)?;
            let opts = folding.options();
            fs::create_dir_all(&out)?;
            let accuracy = accuracy_report_with(&records, GroupAxis::Order, opts)
                .or_else(|_| accuracy_report_with(&records, GroupAxis::None, opts))?;
            fs::write(
                out.join("accuracy.csv"),
                emit_report(&Report::Accuracy(&accuracy), ReportFormat::Csv)?,
            )?;
            let hist = length_histogram_with(&records, unit, bin_width, opts)?;
            fs::write(
                out.join("hist.csv"),
                emit_report(&Report::Histogram(&hist), ReportFormat::Csv)?,
            )?;
            fs::write(
                out.join("hist.svg"),
                emit_report(&Report::Histogram(&hist), ReportFormat::Svg)?,
            )?;
            if records.iter().all(|r| r.order.is_some()) {
                let heatmap = error_heatmap_with(&records, bin_width, opts)?;
                fs::write(
                    out.join("heatmap.csv"),
                    emit_report(&Report::Heatmap(&heatmap), ReportFormat::Csv)?,
                )?;
                fs::write(
                    out.join("heatmap.svg"),
                    emit_report(&Report::Heatmap(&heatmap), ReportFormat::Svg)?,
                )?;
            }
            eprintln!("reports written to {}", out.display());
            Ok(())
        }
        Command::Validate {
            dataset,
            kind,
            config,
        } => match (dataset, config) {
            (Some(path), None) => {
                let kind = kind.ok_or_else(|| anyhow!("--kind is required with --dataset"))?;
                let kind = match kind.as_str() {
                    "hitom" => Benchmark::Hitom,
                    "tomato" => Benchmark::Tomato,
                    "tombench" => Benchmark::Tombench,
                    other => bail!("unknown benchmark kind {other:?}"),
                };
                let samples = load_samples(&path, kind)?;
                eprintln!("{}: {} valid samples", path.display(), samples.len());
                Ok(())
            }
            (None, Some(path)) => {
                let config = RunConfig::from_file(&path)?;
                eprintln!("{}: valid config for run {}", path.display(), config.run_id);
                Ok(())
            }
            _ => bail!("validate needs either --dataset with --kind, or --config"),
        },
    }
}
