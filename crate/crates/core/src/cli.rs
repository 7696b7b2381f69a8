// SPDX-License-Identifier: Apache-2.0

//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error (with a
//! single `error: ...` line on stderr).

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::binning::{bin_workload, BinnedWorkload};
use crate::domain::{BinGrid, Energy, HardwareSpec, ModelConfig};
use crate::error::{Error, Result};
use crate::estimator::{estimate, BatchMode, WorkloadEstimate};
use crate::flops::{idealized_energy, workload_flops};
use crate::ingest::{load_trace, summarize_trace, ColumnMap, TraceFormat, TraceSource};
use crate::report::{compare, emit_report, BaselineReport, EstimateReport, Report, ReportFormat, SCHEMA_VERSION};
use crate::sweep::{load_plans, plan_default_sweeps, validate_table_against_plan};
use crate::tables::{synthesize_table, LookupPolicy, MeasurementTable, MemoryHeuristic, SynthesisOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (report schema_version 1)");

#[derive(Debug, Parser)]
#[command(name = "infer-energy", version = VERSION, about = "Estimate the energy of offline LLM inference workloads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TraceFormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Markdown,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Markdown => ReportFormat::Markdown,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Fractional,
    Ceiling,
}

#[derive(Debug, Args)]
struct TraceArgs {
    /// Request trace (csv with header, or .jsonl)
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Override format detection by extension
    #[arg(long, value_enum)]
    trace_format: Option<TraceFormatArg>,
    /// Column or member holding the prompt length
    #[arg(long, default_value = "input_tokens")]
    input_col: String,
    /// Column or member holding the generation length
    #[arg(long, default_value = "output_tokens")]
    output_col: String,
    /// Skip malformed rows instead of aborting
    #[arg(long)]
    permissive: bool,
}

#[derive(Debug, Args)]
struct WorkloadArgs {
    #[command(flatten)]
    trace: TraceArgs,
    /// Pre-binned workload csv (output of `bin`) instead of a trace
    #[arg(long, conflicts_with = "trace")]
    binned: Option<PathBuf>,
    /// Bin grid config (`input_bins = ...`, `output_bins = ...`)
    #[arg(long)]
    grid: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Token-length statistics of a trace
    Stats {
        #[command(flatten)]
        trace: TraceArgs,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
        #[arg(long, default_value = "trace")]
        dataset: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bin a trace onto the (input, output) grid
    Bin {
        #[command(flatten)]
        trace: TraceArgs,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate workload energy from a measurement table
    Estimate {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        backend: String,
        #[arg(long)]
        device: String,
        #[arg(long, value_enum, default_value = "fractional")]
        mode: ModeArg,
        /// Interpolate bins missing from the table
        #[arg(long)]
        interpolate: bool,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Idealized energy at rated peak FLOPS and TDP
    Baseline {
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        hw: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare estimate reports against the idealized baseline
    Compare {
        /// Comma-separated estimate json reports
        #[arg(long, value_delimiter = ',', required = true)]
        estimates: Vec<PathBuf>,
        #[arg(long)]
        baseline_j: f64,
        #[arg(long)]
        reference: String,
        #[arg(long, default_value = "workload")]
        dataset: String,
        #[arg(long, value_enum, default_value = "markdown")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write controlled-sweep plan files
    PlanSweep {
        /// Directory for the plan files; stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check which planned grid points a table is missing
    ValidateTable {
        #[arg(long)]
        table: PathBuf,
        /// Directory of plan files; the default plans when absent
        #[arg(long)]
        plans: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a measurement table from the FLOPs model
    SynthTable {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        hw: PathBuf,
        #[arg(long)]
        efficiency: f64,
        #[arg(long)]
        decode_penalty: f64,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value = "synthetic")]
        backend: String,
        #[arg(long, default_value_t = 48.0)]
        device_memory_gib: f64,
        #[arg(long)]
        kv_bytes_per_token: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.to_string().replace('\n', " "));
            EXIT_DATA
        }
    }
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn load_requests(args: &TraceArgs, stderr: &mut dyn Write) -> Result<Vec<crate::domain::Request>> {
    let path = args
        .trace
        .as_ref()
        .ok_or_else(|| Error::Config("--trace is required".into()))?;
    let mut source = TraceSource::new(path).with_columns(ColumnMap::new(&args.input_col, &args.output_col));
    if let Some(f) = args.trace_format {
        source = source.with_format(match f {
            TraceFormatArg::Csv => TraceFormat::GenericCsv,
            TraceFormatArg::Jsonl => TraceFormat::Jsonl,
        });
    }
    let loaded = load_trace(&source, args.permissive)?;
    if !loaded.skipped.is_empty() {
        let _ = writeln!(stderr, "warning: skipped {} malformed row(s); first: {}", loaded.skipped.len(), loaded.skipped[0]);
    }
    Ok(loaded.requests)
}

fn load_grid(path: Option<&PathBuf>) -> Result<BinGrid> {
    path.map_or_else(|| Ok(BinGrid::default()), |p| BinGrid::load(p))
}

fn load_workload(args: &WorkloadArgs, stderr: &mut dyn Write) -> Result<BinnedWorkload> {
    if let Some(path) = &args.binned {
        let workload = BinnedWorkload::load(path)?;
        if let Some(grid_path) = &args.grid {
            if BinGrid::load(grid_path)? != *workload.grid() {
                return Err(Error::GridMismatch);
            }
        }
        return Ok(workload);
    }
    let grid = load_grid(args.grid.as_ref())?;
    let requests = load_requests(&args.trace, stderr)?;
    Ok(bin_workload(&requests, &grid))
}

fn load_estimate(path: &Path) -> Result<WorkloadEstimate> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: EstimateReport = serde_json::from_str(&text)?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(Error::Comparison(format!(
            "{}: schema_version {} not supported",
            path.display(),
            report.schema_version
        )));
    }
    Ok(report.estimate)
}

fn execute(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Stats { trace, format, dataset, out } => {
            let requests = load_requests(&trace, stderr)?;
            let summary = summarize_trace(&requests)?;
            let report = Report::Stats {
                dataset: &dataset,
                summary: &summary,
                skipped_rows: 0,
            };
            emit(out.as_deref(), &emit_report(report, format.into()), stdout)?;
        }
        Command::Bin { trace, grid, out } => {
            let grid = load_grid(grid.as_ref())?;
            let requests = load_requests(&trace, stderr)?;
            let workload = bin_workload(&requests, &grid);
            if workload.excluded() > 0 {
                let _ = writeln!(
                    stderr,
                    "note: {} request(s) beyond the grid excluded ({} input, {} output)",
                    workload.excluded(),
                    workload.excluded_input,
                    workload.excluded_output
                );
            }
            emit(out.as_deref(), &workload.to_csv(), stdout)?;
        }
        Command::Estimate { workload, table, backend, device, mode, interpolate, format, out } => {
            let workload = load_workload(&workload, stderr)?;
            let table = MeasurementTable::load(&table)?;
            let mode = match mode {
                ModeArg::Fractional => BatchMode::Fractional,
                ModeArg::Ceiling => BatchMode::Ceiling,
            };
            let policy = if interpolate { LookupPolicy::Interpolate } else { LookupPolicy::Strict };
            let est = estimate(&workload, &table, &backend, &device, mode, policy)?;
            if est.interpolated_bins() > 0 {
                let _ = writeln!(stderr, "note: {} bin(s) interpolated", est.interpolated_bins());
            }
            emit(out.as_deref(), &emit_report(Report::Estimate(&est), format.into()), stdout)?;
        }
        Command::Baseline { workload, model, hw, format, out } => {
            let workload = load_workload(&workload, stderr)?;
            let model = ModelConfig::load(&model)?;
            let hw = HardwareSpec::load(&hw)?;
            let report = BaselineReport {
                schema_version: SCHEMA_VERSION,
                hardware: hw.name.clone(),
                tdp_w: hw.tdp,
                peak_flops: hw.peak_flops,
                joules_per_flop: hw.joules_per_flop(),
                n_params: model.param_count()?,
                total_flops: workload_flops(&model, &workload)?,
                energy: idealized_energy(&hw, &model, &workload)?,
                binned_requests: workload.binned_requests(),
                excluded_requests: workload.excluded(),
            };
            emit(out.as_deref(), &emit_report(Report::Baseline(&report), format.into()), stdout)?;
        }
        Command::Compare { estimates, baseline_j, reference, dataset, format, out } => {
            let loaded = estimates.iter().map(|p| load_estimate(p)).collect::<Result<Vec<_>>>()?;
            let baseline = Energy::try_from_joules(baseline_j)?;
            let cmp = compare(&dataset, &loaded, baseline, &reference)?;
            emit(out.as_deref(), &emit_report(Report::Comparison(&cmp), format.into()), stdout)?;
        }
        Command::PlanSweep { out } => {
            let plans = plan_default_sweeps();
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    for plan in &plans {
                        let path = dir.join(plan.file_name());
                        std::fs::write(&path, plan.to_config()).map_err(|e| Error::io(&path, e))?;
                    }
                }
                None => {
                    let mut text = String::new();
                    for plan in &plans {
                        text.push_str(&format!("# file: {}\n", plan.file_name()));
                        text.push_str(&plan.to_config());
                        text.push('\n');
                    }
                    emit(None, &text, stdout)?;
                }
            }
        }
        Command::ValidateTable { table, plans, out } => {
            let table = MeasurementTable::load(&table)?;
            let plans = match plans {
                Some(dir) => load_plans(&dir)?,
                None => plan_default_sweeps(),
            };
            let report = validate_table_against_plan(&table, &plans);
            emit(out.as_deref(), &report.to_text(), stdout)?;
            if !report.is_full() {
                let _ = writeln!(
                    stderr,
                    "error: coverage incomplete: {} planned point(s) missing across {} (backend, device) pair(s)",
                    report.missing_count(),
                    report.pairs.len()
                );
                return Ok(EXIT_DATA);
            }
        }
        Command::SynthTable {
            model,
            hw,
            efficiency,
            decode_penalty,
            grid,
            backend,
            device_memory_gib,
            kv_bytes_per_token,
            out,
        } => {
            let model = ModelConfig::load(&model)?;
            let hw = HardwareSpec::load(&hw)?;
            let grid = load_grid(grid.as_ref())?;
            if !(device_memory_gib.is_finite() && device_memory_gib > 0.0) {
                return Err(Error::Parameter("--device-memory-gib must be positive".into()));
            }
            let options = SynthesisOptions {
                backend,
                memory: MemoryHeuristic {
                    device_memory_bytes: (device_memory_gib * (1u64 << 30) as f64) as u64,
                    kv_bytes_per_token,
                    ..MemoryHeuristic::default()
                },
                ..SynthesisOptions::default()
            };
            let table = synthesize_table(&grid, &model, &hw, efficiency, decode_penalty, &options)?;
            emit(out.as_deref(), &table.to_csv(), stdout)?;
        }
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("infer-energy").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn version_mentions_schema() {
        assert!(VERSION.contains(&format!("schema_version {SCHEMA_VERSION}")));
        let (code, out, _) = run_str(&["--version"]);
        assert_eq!(code, 0);
        assert!(out.contains(env!("CARGO_PKG_VERSION")));
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let (code, _, err) = run_str(&["stats", "--bogus"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("Usage"));
    }

    #[test]
    fn data_error_is_exit_two_with_prefix() {
        let (code, _, err) = run_str(&["stats", "--trace", "/nonexistent.csv"]);
        assert_eq!(code, EXIT_DATA);
        assert!(err.starts_with("error: "));
        assert_eq!(err.lines().count(), 1);
    }

    #[test]
    fn plan_sweep_to_stdout() {
        let (code, out, _) = run_str(&["plan-sweep"]);
        assert_eq!(code, 0);
        assert!(out.contains("# file: sweep_input_length_o64_b1.cfg"));
        assert!(out.contains("points=32,64,128,256,512,1024,2048,4096,8192,16384,32768"));
    }
}
