// SPDX-License-Identifier: Apache-2.0

//! Controlled-sweep plans for an external GPU measurement harness, and a
//! coverage check of measurement tables against those plans.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{join_list, KeyValues};
use crate::domain::{Bin, BinGrid};
use crate::error::{Error, Result};
use crate::tables::MeasurementTable;

pub const BASE_SAMPLES: u64 = 1024;
pub const LARGE_BATCH_SAMPLES: u64 = 4096;
/// Batches above this size are measured over [`LARGE_BATCH_SAMPLES`].
pub const LARGE_BATCH_THRESHOLD: u64 = 256;
pub const DEFAULT_WARMUP_BATCHES: u64 = 20;
pub const DEFAULT_TRUNCATION_SOURCE: &str = "PG19";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    InputLength,
    OutputLength,
    BatchSize,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::InputLength => "input_length",
            SweepAxis::OutputLength => "output_length",
            SweepAxis::BatchSize => "batch_size",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input_length" => Ok(SweepAxis::InputLength),
            "output_length" => Ok(SweepAxis::OutputLength),
            "batch_size" => Ok(SweepAxis::BatchSize),
            other => Err(Error::Sweep(format!("unknown axis `{other}`"))),
        }
    }
}

/// Values held constant while the swept axis varies. The swept axis is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FixedDims {
    pub input: Option<u64>,
    pub output: Option<u64>,
    pub batch: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub axis: SweepAxis,
    pub fixed: FixedDims,
    pub points: Vec<u64>,
    pub samples_per_point: u64,
    pub warmup_batches: u64,
    pub truncation_source: String,
}

impl SweepPlan {
    /// Validates the plan and derives `samples_per_point` from the largest
    /// batch it will run. Non-power-of-two points need `allow_non_pow2`.
    pub fn new(
        axis: SweepAxis,
        fixed: FixedDims,
        points: Vec<u64>,
        warmup_batches: u64,
        truncation_source: impl Into<String>,
        allow_non_pow2: bool,
    ) -> Result<Self> {
        let mut plan = Self {
            axis,
            fixed,
            points,
            samples_per_point: BASE_SAMPLES,
            warmup_batches,
            truncation_source: truncation_source.into(),
        };
        plan.samples_per_point = samples_for_batch(plan.max_batch());
        plan.validate(allow_non_pow2)?;
        Ok(plan)
    }

    pub fn validate(&self, allow_non_pow2: bool) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Sweep("plan has no points".into()));
        }
        if self.points.contains(&0) {
            return Err(Error::Sweep("points must be positive".into()));
        }
        if self.points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Sweep("points must be strictly increasing".into()));
        }
        if !allow_non_pow2 {
            if let Some(p) = self.points.iter().find(|p| !p.is_power_of_two()) {
                return Err(Error::Sweep(format!(
                    "point {p} is not a power of two (set the override to allow it)"
                )));
            }
        }
        let swept_is_fixed = match self.axis {
            SweepAxis::InputLength => self.fixed.input.is_some(),
            SweepAxis::OutputLength => self.fixed.output.is_some(),
            SweepAxis::BatchSize => self.fixed.batch.is_some(),
        };
        let missing_fixed = match self.axis {
            SweepAxis::InputLength => self.fixed.output.is_none() || self.fixed.batch.is_none(),
            SweepAxis::OutputLength => self.fixed.input.is_none() || self.fixed.batch.is_none(),
            SweepAxis::BatchSize => self.fixed.input.is_none() || self.fixed.output.is_none(),
        };
        if swept_is_fixed || missing_fixed {
            return Err(Error::Sweep(format!(
                "a {} sweep must fix exactly the other two dimensions",
                self.axis
            )));
        }
        if ![BASE_SAMPLES, LARGE_BATCH_SAMPLES].contains(&self.samples_per_point) {
            return Err(Error::Sweep(format!(
                "samples_per_point must be {BASE_SAMPLES} or {LARGE_BATCH_SAMPLES}"
            )));
        }
        if self.samples_per_point != samples_for_batch(self.max_batch()) {
            return Err(Error::Sweep(format!(
                "samples_per_point {} inconsistent with largest batch {}",
                self.samples_per_point,
                self.max_batch()
            )));
        }
        Ok(())
    }

    pub fn max_batch(&self) -> u64 {
        match self.axis {
            SweepAxis::BatchSize => self.points.last().copied().unwrap_or(1),
            _ => self.fixed.batch.unwrap_or(1),
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.samples_per_point == LARGE_BATCH_SAMPLES
    }

    /// (input, output) pairs this plan would measure.
    pub fn shape_points(&self) -> Vec<Bin> {
        match self.axis {
            SweepAxis::InputLength => {
                let o = self.fixed.output.unwrap_or_default();
                self.points.iter().map(|&i| Bin::new(i, o)).collect()
            }
            SweepAxis::OutputLength => {
                let i = self.fixed.input.unwrap_or_default();
                self.points.iter().map(|&o| Bin::new(i, o)).collect()
            }
            SweepAxis::BatchSize => vec![Bin::new(
                self.fixed.input.unwrap_or_default(),
                self.fixed.output.unwrap_or_default(),
            )],
        }
    }

    /// `sweep_<axis>_<fixed-desc>.cfg`, e.g. `sweep_input_length_o64_b1.cfg`.
    pub fn file_name(&self) -> String {
        let mut desc = Vec::new();
        if let Some(i) = self.fixed.input {
            desc.push(format!("i{i}"));
        }
        if let Some(o) = self.fixed.output {
            desc.push(format!("o{o}"));
        }
        if let Some(b) = self.fixed.batch {
            desc.push(format!("b{b}"));
        }
        format!("sweep_{}_{}.cfg", self.axis, desc.join("_"))
    }

    pub fn to_config(&self) -> String {
        let opt = |v: Option<u64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::new();
        if self.is_normalized() {
            let _ = writeln!(
                out,
                "# batches above {LARGE_BATCH_THRESHOLD}: metrics over {LARGE_BATCH_SAMPLES} samples, normalized to {BASE_SAMPLES}"
            );
        }
        let _ = writeln!(out, "axis={}", self.axis);
        let _ = writeln!(out, "fixed_input={}", opt(self.fixed.input));
        let _ = writeln!(out, "fixed_output={}", opt(self.fixed.output));
        let _ = writeln!(out, "fixed_batch={}", opt(self.fixed.batch));
        let _ = writeln!(out, "points={}", join_list(&self.points));
        let _ = writeln!(out, "samples_per_point={}", self.samples_per_point);
        let _ = writeln!(out, "warmup_batches={}", self.warmup_batches);
        let _ = writeln!(out, "truncation_source={}", self.truncation_source);
        out
    }

    pub fn from_config(text: &str, allow_non_pow2: bool) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.reject_unknown(&[
            "axis",
            "fixed_input",
            "fixed_output",
            "fixed_batch",
            "points",
            "samples_per_point",
            "warmup_batches",
            "truncation_source",
        ])?;
        let plan = Self {
            axis: kv.parse_required("axis")?,
            fixed: FixedDims {
                input: kv.parse_optional("fixed_input")?,
                output: kv.parse_optional("fixed_output")?,
                batch: kv.parse_optional("fixed_batch")?,
            },
            points: kv.parse_list("points")?,
            samples_per_point: kv.parse_required("samples_per_point")?,
            warmup_batches: kv.parse_required("warmup_batches")?,
            truncation_source: kv.get("truncation_source").unwrap_or_default().to_string(),
        };
        plan.validate(allow_non_pow2)?;
        Ok(plan)
    }
}

fn samples_for_batch(batch: u64) -> u64 {
    if batch > LARGE_BATCH_THRESHOLD {
        LARGE_BATCH_SAMPLES
    } else {
        BASE_SAMPLES
    }
}

fn powers_of_two(lo: u64, hi: u64) -> Vec<u64> {
    std::iter::successors(Some(lo.next_power_of_two()), |&p| p.checked_mul(2))
        .take_while(|&p| p <= hi)
        .collect()
}

/// Sweep ranges. Defaults mirror the published controlled sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub input_range: (u64, u64),
    pub output_range: (u64, u64),
    pub batch_range: (u64, u64),
    /// Output lengths held fixed during input-length sweeps.
    pub fixed_outputs: Vec<u64>,
    /// Input lengths held fixed during output-length sweeps.
    pub fixed_inputs: Vec<u64>,
    /// Batch size for the sequence-length sweeps.
    pub sequence_batch: u64,
    /// Bins that each get a batch-size sweep.
    pub grid: BinGrid,
    pub warmup_batches: u64,
    pub truncation_source: String,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            input_range: (32, 32768),
            output_range: (8, 4096),
            batch_range: (1, 1024),
            fixed_outputs: vec![64, 8],
            fixed_inputs: vec![512, 64],
            sequence_batch: 1,
            grid: BinGrid::default(),
            warmup_batches: DEFAULT_WARMUP_BATCHES,
            truncation_source: DEFAULT_TRUNCATION_SOURCE.to_string(),
        }
    }
}

pub fn plan_sweeps(settings: &SweepSettings) -> Result<Vec<SweepPlan>> {
    let s = settings;
    let mut plans = Vec::new();
    for &o in &s.fixed_outputs {
        plans.push(SweepPlan::new(
            SweepAxis::InputLength,
            FixedDims { input: None, output: Some(o), batch: Some(s.sequence_batch) },
            powers_of_two(s.input_range.0, s.input_range.1),
            s.warmup_batches,
            &s.truncation_source,
            false,
        )?);
    }
    for &i in &s.fixed_inputs {
        plans.push(SweepPlan::new(
            SweepAxis::OutputLength,
            FixedDims { input: Some(i), output: None, batch: Some(s.sequence_batch) },
            powers_of_two(s.output_range.0, s.output_range.1),
            s.warmup_batches,
            &s.truncation_source,
            false,
        )?);
    }
    for bin in s.grid.bins() {
        plans.push(SweepPlan::new(
            SweepAxis::BatchSize,
            FixedDims { input: Some(bin.input_cap), output: Some(bin.output_cap), batch: None },
            powers_of_two(s.batch_range.0, s.batch_range.1),
            s.warmup_batches,
            &s.truncation_source,
            // the default grid is all powers of two; custom grids may not be
            true,
        )?);
    }
    Ok(plans)
}

/// Sequence-length sweeps at fixed output {64, 8} and fixed input {512, 64},
/// plus one batch-size sweep per default grid bin.
pub fn plan_default_sweeps() -> Vec<SweepPlan> {
    plan_sweeps(&SweepSettings::default()).expect("default sweep settings are valid")
}

pub fn load_plans(dir: &Path) -> Result<Vec<SweepPlan>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "cfg"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            SweepPlan::from_config(&text, true)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCoverage {
    pub backend: String,
    pub device: String,
    pub missing: Vec<Bin>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Planned points that lie on the table grid.
    pub planned: Vec<Bin>,
    pub pairs: Vec<PairCoverage>,
}

impl CoverageReport {
    pub fn is_full(&self) -> bool {
        !self.pairs.is_empty() && self.pairs.iter().all(|p| p.missing.is_empty())
    }

    pub fn missing_count(&self) -> usize {
        self.pairs.iter().map(|p| p.missing.len()).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "planned grid points: {}", self.planned.len());
        if self.pairs.is_empty() {
            out.push_str("no (backend, device) records in table\n");
        }
        for p in &self.pairs {
            let _ = writeln!(out, "{} / {}: {} missing", p.backend, p.device, p.missing.len());
            for b in &p.missing {
                let _ = writeln!(out, "  missing {b}");
            }
        }
        let _ = writeln!(out, "coverage: {}", if self.is_full() { "full" } else { "partial" });
        out
    }
}

pub fn validate_table_against_plan(table: &MeasurementTable, plans: &[SweepPlan]) -> CoverageReport {
    let grid = &table.metadata.grid;
    let planned: BTreeSet<Bin> = plans
        .iter()
        .flat_map(SweepPlan::shape_points)
        .filter(|b| grid.contains(*b))
        .collect();
    let pairs = table
        .pairs()
        .into_iter()
        .map(|(backend, device)| {
            let missing = planned
                .iter()
                .copied()
                .filter(|&b| table.get(&backend, &device, b).is_none())
                .collect();
            PairCoverage { backend, device, missing }
        })
        .collect();
    CoverageReport {
        planned: planned.into_iter().collect(),
        pairs,
    }
}
