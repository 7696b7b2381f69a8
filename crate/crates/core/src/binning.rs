// SPDX-License-Identifier: Apache-2.0

//! Ceiling-bin assignment and workload histograms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::{join_list, parse_u64_list};
use crate::domain::{Bin, BinGrid, Request};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Overflow {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinAssignment {
    Bin(Bin),
    /// Beyond the largest cap. Input takes priority when both overflow.
    Excluded(Overflow),
}

/// Smallest grid bin whose caps cover the request in both dimensions.
pub fn map_to_bin(request: &Request, grid: &BinGrid) -> BinAssignment {
    let Some(input_cap) = grid.input_ceiling(request.input_tokens()) else {
        return BinAssignment::Excluded(Overflow::Input);
    };
    let Some(output_cap) = grid.output_ceiling(request.output_tokens()) else {
        return BinAssignment::Excluded(Overflow::Output);
    };
    BinAssignment::Bin(Bin::new(input_cap, output_cap))
}

/// Request counts per bin plus tallies of what fell off the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinnedWorkload {
    grid: BinGrid,
    counts: BTreeMap<Bin, u64>,
    pub excluded_input: u64,
    pub excluded_output: u64,
}

impl BinnedWorkload {
    pub fn empty(grid: BinGrid) -> Self {
        Self {
            grid,
            counts: BTreeMap::new(),
            excluded_input: 0,
            excluded_output: 0,
        }
    }

    /// Builds a workload from explicit counts. Zero counts are dropped.
    pub fn from_counts(
        grid: BinGrid,
        counts: impl IntoIterator<Item = (Bin, u64)>,
        excluded_input: u64,
        excluded_output: u64,
    ) -> Result<Self> {
        let mut workload = Self::empty(grid);
        for (bin, count) in counts {
            if !workload.grid.contains(bin) {
                return Err(Error::Binned(format!("bin {bin} is not on the grid")));
            }
            workload.add_count(bin, count);
        }
        workload.excluded_input = excluded_input;
        workload.excluded_output = excluded_output;
        Ok(workload)
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    /// Non-zero bins in ascending (input, output) order.
    pub fn counts(&self) -> &BTreeMap<Bin, u64> {
        &self.counts
    }

    pub fn count(&self, bin: Bin) -> u64 {
        self.counts.get(&bin).copied().unwrap_or(0)
    }

    pub fn binned_requests(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn excluded(&self) -> u64 {
        self.excluded_input + self.excluded_output
    }

    pub fn total_requests(&self) -> u64 {
        self.binned_requests() + self.excluded()
    }

    pub fn push(&mut self, request: &Request) {
        match map_to_bin(request, &self.grid) {
            BinAssignment::Bin(bin) => self.add_count(bin, 1),
            BinAssignment::Excluded(Overflow::Input) => self.excluded_input += 1,
            BinAssignment::Excluded(Overflow::Output) => self.excluded_output += 1,
        }
    }

    fn add_count(&mut self, bin: Bin, n: u64) {
        if n > 0 {
            *self.counts.entry(bin).or_insert(0) += n;
        }
    }

    /// Pointwise sum. Both sides must share a grid.
    pub fn merge(&mut self, other: &BinnedWorkload) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        for (&bin, &n) in &other.counts {
            self.add_count(bin, n);
        }
        self.excluded_input += other.excluded_input;
        self.excluded_output += other.excluded_output;
        Ok(())
    }

    /// Multiplies every count and tally by `k`.
    pub fn scaled(&self, k: u64) -> Self {
        let mut out = Self::empty(self.grid.clone());
        for (&bin, &n) in &self.counts {
            out.add_count(bin, n * k);
        }
        out.excluded_input = self.excluded_input * k;
        out.excluded_output = self.excluded_output * k;
        out
    }

    /// Csv rows `input_cap,output_cap,count` framed by `#` metadata lines
    /// carrying the grid (before) and exclusion tallies (after).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# input_bins={}", join_list(self.grid.input_bins()));
        let _ = writeln!(out, "# output_bins={}", join_list(self.grid.output_bins()));
        out.push_str("input_cap,output_cap,count\n");
        for (bin, n) in &self.counts {
            let _ = writeln!(out, "{},{},{}", bin.input_cap, bin.output_cap, n);
        }
        let _ = writeln!(out, "# excluded_input={}", self.excluded_input);
        let _ = writeln!(out, "# excluded_output={}", self.excluded_output);
        out
    }

    /// Parses [`to_csv`](Self::to_csv) output. Missing grid lines fall back to
    /// the default grid; missing tallies are zero.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut input_bins = None;
        let mut output_bins = None;
        let mut excluded_input = 0;
        let mut excluded_output = 0;
        let mut rows = Vec::new();
        let mut saw_header = false;

        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: String| Error::Binned(format!("line {}: {msg}", idx + 1));
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let (key, value) = meta
                    .split_once('=')
                    .ok_or_else(|| err("expected `# key=value`".into()))?;
                let value = value.trim();
                let number = || {
                    value
                        .parse::<u64>()
                        .map_err(|_| err(format!("bad tally `{value}`")))
                };
                match key.trim() {
                    "input_bins" => {
                        input_bins = Some(parse_u64_list(value).map_err(|b| err(format!("bad bin `{b}`")))?)
                    }
                    "output_bins" => {
                        output_bins = Some(parse_u64_list(value).map_err(|b| err(format!("bad bin `{b}`")))?)
                    }
                    "excluded_input" => excluded_input = number()?,
                    "excluded_output" => excluded_output = number()?,
                    other => return Err(err(format!("unknown metadata key `{other}`"))),
                }
                continue;
            }
            if !saw_header {
                if line.replace(' ', "") != "input_cap,output_cap,count" {
                    return Err(err(format!("expected header `input_cap,output_cap,count`, got `{line}`")));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [i, o, n] = fields.as_slice() else {
                return Err(err(format!("expected 3 fields, got {}", fields.len())));
            };
            let parse = |s: &str| s.parse::<u64>().map_err(|_| err(format!("`{s}` is not a non-negative integer")));
            rows.push((Bin::new(parse(i)?, parse(o)?), parse(n)?));
        }
        if !saw_header {
            return Err(Error::Binned("missing header row".into()));
        }
        let grid = match (input_bins, output_bins) {
            (None, None) => BinGrid::default(),
            (Some(i), Some(o)) => BinGrid::new(i, o)?,
            _ => return Err(Error::Binned("grid metadata must name both axes".into())),
        };
        let mut seen = std::collections::BTreeSet::new();
        if let Some((bin, _)) = rows.iter().find(|(b, _)| !seen.insert(*b)) {
            return Err(Error::Binned(format!("bin {bin} listed twice")));
        }
        Self::from_counts(grid, rows, excluded_input, excluded_output)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

pub fn bin_workload<'a>(requests: impl IntoIterator<Item = &'a Request>, grid: &BinGrid) -> BinnedWorkload {
    let mut workload = BinnedWorkload::empty(grid.clone());
    for r in requests {
        workload.push(r);
    }
    workload
}
