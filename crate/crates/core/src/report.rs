// SPDX-License-Identifier: Apache-2.0

//! Comparison of backends against the idealized baseline, and report output.
//!
//! JSON keeps full precision and joules; csv and markdown report energies in
//! kWh and percentages with two decimals.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::Energy;
use crate::error::{Error, Result};
use crate::estimator::{BatchMode, WorkloadEstimate};
use crate::ingest::{TraceStats, TraceSummary};

/// Version of every JSON document this crate emits.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" | "markdown-table" => Ok(ReportFormat::Markdown),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub label: String,
    #[serde(rename = "energy_j")]
    pub energy: Energy,
    pub pct_delta_vs_optimal: f64,
    pub savings_vs_reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub dataset: String,
    /// `None` when entries were not produced by the estimator.
    pub mode: Option<BatchMode>,
    #[serde(rename = "baseline_j")]
    pub baseline: Energy,
    pub reference_label: String,
    /// Ascending energy.
    pub entries: Vec<ComparisonEntry>,
    pub excluded_requests: u64,
}

pub fn pct_delta(energy: Energy, baseline: Energy) -> f64 {
    100.0 * (energy.joules() - baseline.joules()) / baseline.joules()
}

pub fn savings(energy: Energy, reference: Energy) -> f64 {
    100.0 * (1.0 - energy.joules() / reference.joules())
}

impl Comparison {
    /// Builds a comparison from labelled energies.
    pub fn from_energies(
        dataset: impl Into<String>,
        baseline: Energy,
        labelled: impl IntoIterator<Item = (String, Energy)>,
        reference_label: &str,
    ) -> Result<Self> {
        if baseline.joules() <= 0.0 {
            return Err(Error::Comparison("baseline energy must be positive".into()));
        }
        let mut labelled: Vec<(String, Energy)> = labelled.into_iter().collect();
        let mut seen = std::collections::BTreeSet::new();
        if let Some((dup, _)) = labelled.iter().find(|(l, _)| !seen.insert(l.clone())) {
            return Err(Error::Comparison(format!("label `{dup}` appears twice")));
        }
        let reference = labelled
            .iter()
            .find(|(l, _)| l == reference_label)
            .map(|(_, e)| *e)
            .ok_or_else(|| Error::Comparison(format!("reference label `{reference_label}` not among entries")))?;
        if reference.joules() <= 0.0 {
            return Err(Error::Comparison("reference energy must be positive".into()));
        }
        labelled.sort_by(|a, b| a.1.joules().total_cmp(&b.1.joules()).then_with(|| a.0.cmp(&b.0)));
        let entries = labelled
            .into_iter()
            .map(|(label, energy)| ComparisonEntry {
                savings_vs_reference: (label != reference_label).then(|| savings(energy, reference)),
                pct_delta_vs_optimal: pct_delta(energy, baseline),
                label,
                energy,
            })
            .collect();
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            dataset: dataset.into(),
            mode: None,
            baseline,
            reference_label: reference_label.to_string(),
            entries,
            excluded_requests: 0,
        })
    }
}

/// Compares estimates of the same workload, labelled by backend.
pub fn compare(
    dataset: &str,
    estimates: &[WorkloadEstimate],
    optimal: Energy,
    reference_label: &str,
) -> Result<Comparison> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::Comparison("no estimates given".into()))?;
    if let Some(other) = estimates.iter().find(|e| e.mode != first.mode) {
        return Err(Error::Comparison(format!(
            "estimates mix batch modes ({} and {})",
            first.mode, other.mode
        )));
    }
    if let Some(other) = estimates
        .iter()
        .find(|e| e.excluded_requests != first.excluded_requests)
    {
        return Err(Error::Comparison(format!(
            "estimates disagree on excluded requests ({} vs {}); not the same workload",
            first.excluded_requests, other.excluded_requests
        )));
    }
    let mut cmp = Comparison::from_energies(
        dataset,
        optimal,
        estimates.iter().map(|e| (e.backend.clone(), e.total)),
        reference_label,
    )?;
    cmp.mode = Some(first.mode);
    cmp.excluded_requests = first.excluded_requests;
    Ok(cmp)
}

/// The idealized energy floor of a workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub schema_version: u32,
    pub hardware: String,
    pub tdp_w: f64,
    pub peak_flops: f64,
    pub joules_per_flop: f64,
    pub n_params: u64,
    pub total_flops: u128,
    #[serde(rename = "energy_j")]
    pub energy: Energy,
    pub binned_requests: u64,
    pub excluded_requests: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    #[serde(flatten)]
    pub estimate: WorkloadEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub schema_version: u32,
    pub dataset: String,
    pub input: TraceStats,
    pub output: TraceStats,
    pub skipped_rows: u64,
}

#[derive(Debug, Clone, Copy)]
pub enum Report<'a> {
    Comparison(&'a Comparison),
    Estimate(&'a WorkloadEstimate),
    Baseline(&'a BaselineReport),
    Stats {
        dataset: &'a str,
        summary: &'a TraceSummary,
        skipped_rows: u64,
    },
}

fn pct(v: f64) -> String {
    format!("{v:.2}")
}

fn kwh(e: Energy) -> String {
    let v = e.kwh();
    if v == 0.0 || v >= 1e-3 {
        format!("{v:.6}")
    } else {
        format!("{v:.4e}")
    }
}

fn json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn emit_report(report: Report<'_>, format: ReportFormat) -> String {
    match (report, format) {
        (Report::Comparison(c), ReportFormat::Json) => json(c),
        (Report::Comparison(c), ReportFormat::Csv) => comparison_csv(c),
        (Report::Comparison(c), ReportFormat::Markdown) => comparison_markdown(c),
        (Report::Estimate(e), ReportFormat::Json) => json(&EstimateReport {
            schema_version: SCHEMA_VERSION,
            estimate: e.clone(),
        }),
        (Report::Estimate(e), ReportFormat::Csv) => estimate_csv(e),
        (Report::Estimate(e), ReportFormat::Markdown) => estimate_markdown(e),
        (Report::Baseline(b), ReportFormat::Json) => json(b),
        (Report::Baseline(b), _) => baseline_text(b, format),
        (Report::Stats { dataset, summary, skipped_rows }, ReportFormat::Json) => json(&StatsReport {
            schema_version: SCHEMA_VERSION,
            dataset: dataset.to_string(),
            input: summary.input.clone(),
            output: summary.output.clone(),
            skipped_rows,
        }),
        (Report::Stats { dataset, summary, .. }, _) => stats_text(dataset, summary, format),
    }
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), pct)
}

fn comparison_markdown(c: &Comparison) -> String {
    let mut out = String::new();
    let mode = c.mode.map_or_else(|| "n/a".to_string(), |m| m.to_string());
    let _ = writeln!(out, "Dataset: {} (mode: {}, reference: {})", c.dataset, mode, c.reference_label);
    let _ = writeln!(out, "Idealized baseline: {} kWh", kwh(c.baseline));
    if c.excluded_requests > 0 {
        let _ = writeln!(out, "Excluded requests (not charged): {}", c.excluded_requests);
    }
    out.push('\n');
    out.push_str("| label | energy (kWh) | Δ% vs optimal | savings % |\n");
    out.push_str("|---|---:|---:|---:|\n");
    for e in &c.entries {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            e.label,
            kwh(e.energy),
            pct(e.pct_delta_vs_optimal),
            opt_pct(e.savings_vs_reference)
        );
    }
    out
}

fn comparison_csv(c: &Comparison) -> String {
    let mut out = String::from("dataset,label,energy_kwh,pct_delta_vs_optimal,savings_vs_reference\n");
    let _ = writeln!(out, "{},theoretical,{},{},", c.dataset, c.baseline.kwh(), pct(0.0));
    for e in &c.entries {
        let savings = e.savings_vs_reference.map(pct).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", c.dataset, e.label, e.energy.kwh(), pct(e.pct_delta_vs_optimal), savings);
    }
    out
}

fn estimate_csv(e: &WorkloadEstimate) -> String {
    let mut out = String::from("input_cap,output_cap,count,max_batch,batches,energy_kwh,provenance\n");
    for b in &e.per_bin {
        let prov = serde_json::to_value(b.provenance).expect("enum serializes");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            b.bin.input_cap,
            b.bin.output_cap,
            b.count,
            b.max_batch,
            b.batches,
            b.energy.kwh(),
            prov.as_str().unwrap_or_default()
        );
    }
    let count: u64 = e.per_bin.iter().map(|b| b.count).sum();
    let batches: f64 = e.per_bin.iter().map(|b| b.batches).sum();
    let _ = writeln!(out, "total,total,{},,{},{},", count, batches, e.total.kwh());
    out
}

fn estimate_markdown(e: &WorkloadEstimate) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Backend: {} on {} (mode: {})", e.backend, e.device, e.mode);
    let _ = writeln!(out, "Total: {} kWh", kwh(e.total));
    let _ = writeln!(out, "Excluded requests (not charged): {}", e.excluded_requests);
    let interpolated = e.interpolated_bins();
    if interpolated > 0 {
        let _ = writeln!(out, "Interpolated bins: {interpolated}");
    }
    out.push('\n');
    out.push_str("| input cap | output cap | count | max batch | batches | energy (kWh) | provenance |\n");
    out.push_str("|---:|---:|---:|---:|---:|---:|---|\n");
    for b in &e.per_bin {
        let prov = serde_json::to_value(b.provenance).expect("enum serializes");
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.3} | {} | {} |",
            b.bin.input_cap,
            b.bin.output_cap,
            b.count,
            b.max_batch,
            b.batches,
            kwh(b.energy),
            prov.as_str().unwrap_or_default()
        );
    }
    out
}

fn baseline_text(b: &BaselineReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => format!(
            "hardware,joules_per_flop,total_flops,energy_kwh,binned_requests,excluded_requests\n{},{},{},{},{},{}\n",
            b.hardware,
            b.joules_per_flop,
            b.total_flops,
            b.energy.kwh(),
            b.binned_requests,
            b.excluded_requests
        ),
        _ => format!(
            "| hardware | J/FLOP | FLOPs | energy (kWh) | requests | excluded |\n|---|---:|---:|---:|---:|---:|\n| {} | {:.4e} | {:.4e} | {} | {} | {} |\n",
            b.hardware,
            b.joules_per_flop,
            b.total_flops as f64,
            kwh(b.energy),
            b.binned_requests,
            b.excluded_requests
        ),
    }
}

fn stats_text(dataset: &str, s: &TraceSummary, format: ReportFormat) -> String {
    let row = |name: &str, t: &TraceStats, csv: bool| {
        if csv {
            format!("{dataset},{name},{},{},{},{},{},{}\n", t.count, t.mean, t.std, t.median, t.p99, t.max)
        } else {
            format!("| {dataset} | {name} | {} | {:.2} ± {:.2} | {} | {} | {} |\n", t.count, t.mean, t.std, t.median, t.p99, t.max)
        }
    };
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("dataset,column,count,mean,std,median,p99,max\n");
            out += &row("input", &s.input, true);
            out += &row("output", &s.output, true);
            out
        }
        _ => {
            let mut out = String::from("| dataset | column | count | mean ± std | median | 99th | max |\n|---|---|---:|---:|---:|---:|---:|\n");
            out += &row("input", &s.input, false);
            out += &row("output", &s.output, false);
            out
        }
    }
}
