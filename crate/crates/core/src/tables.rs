// SPDX-License-Identifier: Apache-2.0

//! Measurement tables: per (backend, device, bin) maximum batch size and the
//! energy of one full batch at that size.
//!
//! On disk a table is a csv with the header
//!
//! ```text
//! backend,device,input_cap,output_cap,max_batch,batch_energy,energy_unit,prefill_energy,decode_energy,samples_measured,warmup_batches
//! ```
//!
//! optionally preceded by `# key=value` metadata lines (`input_bins`,
//! `output_bins`, `protocol_samples`, `normalization_note`, `padding_policy`).
//! Extra columns such as latency or throughput are accepted and ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{join_list, parse_u64_list};
use crate::domain::{Bin, BinGrid, Energy, EnergyUnit, HardwareSpec, ModelConfig};
use crate::error::{Error, Result};
use crate::flops::request_flops;

pub const TABLE_COLUMNS: [&str; 11] = [
    "backend",
    "device",
    "input_cap",
    "output_cap",
    "max_batch",
    "batch_energy",
    "energy_unit",
    "prefill_energy",
    "decode_energy",
    "samples_measured",
    "warmup_batches",
];

/// Allowed mismatch between prefill + decode and the whole-batch energy.
pub const SPLIT_TOLERANCE: f64 = 0.005;

pub const DEFAULT_PROTOCOL_SAMPLES: u64 = 1024;
pub const DEFAULT_NORMALIZATION_NOTE: &str =
    "runs with batch size > 256 measured over 4096 samples and normalized to 1024";
pub const DEFAULT_PADDING_POLICY: &str = "unspecified";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub backend: String,
    pub device: String,
    pub input_cap: u64,
    pub output_cap: u64,
    pub max_batch: u64,
    /// One full batch of `max_batch` requests.
    pub batch_energy: Energy,
    pub prefill_energy: Option<Energy>,
    pub decode_energy: Option<Energy>,
    pub samples_measured: u64,
    pub warmup_batches: u64,
}

impl MeasurementRecord {
    pub fn bin(&self) -> Bin {
        Bin::new(self.input_cap, self.output_cap)
    }

    pub fn per_request_energy(&self) -> Energy {
        Energy::from_joules(self.batch_energy.joules() / self.max_batch as f64)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.max_batch == 0 {
            return Err("max_batch must be at least 1".into());
        }
        if self.batch_energy.joules() <= 0.0 {
            return Err("batch_energy must be positive".into());
        }
        for (name, e) in [("prefill_energy", self.prefill_energy), ("decode_energy", self.decode_energy)] {
            if matches!(e, Some(e) if e.joules() <= 0.0) {
                return Err(format!("{name} must be positive when present"));
            }
        }
        if let (Some(p), Some(d)) = (self.prefill_energy, self.decode_energy) {
            let total = self.batch_energy.joules();
            if ((p + d).joules() - total).abs() > SPLIT_TOLERANCE * total {
                return Err(format!(
                    "prefill + decode = {} J differs from batch_energy {} J by more than 0.5%",
                    (p + d).joules(),
                    total
                ));
            }
        }
        if self.samples_measured == 0 {
            return Err("samples_measured must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub backend: String,
    pub device: String,
    pub bin: Bin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub grid: BinGrid,
    pub protocol_samples: u64,
    pub normalization_note: String,
    /// Free text; not interpreted.
    pub padding_policy: String,
}

impl Default for TableMetadata {
    fn default() -> Self {
        Self {
            grid: BinGrid::default(),
            protocol_samples: DEFAULT_PROTOCOL_SAMPLES,
            normalization_note: DEFAULT_NORMALIZATION_NOTE.to_string(),
            padding_policy: DEFAULT_PADDING_POLICY.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTable {
    records: BTreeMap<RecordKey, MeasurementRecord>,
    pub metadata: TableMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LookupPolicy {
    #[default]
    Strict,
    Interpolate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Measured,
    Interpolated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub record: MeasurementRecord,
    pub provenance: Provenance,
}

impl MeasurementTable {
    pub fn new(metadata: TableMetadata) -> Self {
        Self {
            records: BTreeMap::new(),
            metadata,
        }
    }

    pub fn from_records(metadata: TableMetadata, records: impl IntoIterator<Item = MeasurementRecord>) -> Result<Self> {
        let mut table = Self::new(metadata);
        for r in records {
            table.insert(r)?;
        }
        Ok(table)
    }

    /// Adds a validated record; rejects duplicates and off-grid bins.
    pub fn insert(&mut self, record: MeasurementRecord) -> Result<()> {
        if !self.metadata.grid.contains(record.bin()) {
            return Err(Error::OffGrid { bin: record.bin() });
        }
        record.validate().map_err(|message| Error::TableRow { line: 0, message })?;
        let key = RecordKey {
            backend: record.backend.clone(),
            device: record.device.clone(),
            bin: record.bin(),
        };
        if self.records.contains_key(&key) {
            return Err(Error::DuplicateRecord {
                backend: key.backend,
                device: key.device,
                bin: key.bin,
            });
        }
        self.records.insert(key, record);
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &MeasurementRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct (backend, device) pairs in sorted order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let set: BTreeSet<_> = self
            .records
            .keys()
            .map(|k| (k.backend.clone(), k.device.clone()))
            .collect();
        set.into_iter().collect()
    }

    pub fn get(&self, backend: &str, device: &str, bin: Bin) -> Option<&MeasurementRecord> {
        self.records.get(&RecordKey {
            backend: backend.to_string(),
            device: device.to_string(),
            bin,
        })
    }

    fn measured_for(&self, backend: &str, device: &str) -> BTreeMap<Bin, &MeasurementRecord> {
        self.records
            .iter()
            .filter(|(k, _)| k.backend == backend && k.device == device)
            .map(|(k, r)| (k.bin, r))
            .collect()
    }

    pub fn lookup(&self, backend: &str, device: &str, bin: Bin, policy: LookupPolicy) -> Result<Resolved> {
        if let Some(r) = self.get(backend, device, bin) {
            return Ok(Resolved {
                record: r.clone(),
                provenance: Provenance::Measured,
            });
        }
        match policy {
            LookupPolicy::Strict => Err(Error::MissingBin {
                backend: backend.to_string(),
                device: device.to_string(),
                bin,
            }),
            LookupPolicy::Interpolate => self
                .interpolate(backend, device, bin)
                .map(|record| Resolved {
                    record,
                    provenance: Provenance::Interpolated,
                })
                .ok_or_else(|| Error::OutsideHull {
                    backend: backend.to_string(),
                    device: device.to_string(),
                    bin,
                }),
        }
    }

    /// Log-log bilinear interpolation of per-request energy (and max batch)
    /// over the tightest enclosing rectangle of measured bins.
    fn interpolate(&self, backend: &str, device: &str, bin: Bin) -> Option<MeasurementRecord> {
        let measured = self.measured_for(backend, device);
        let inputs: BTreeSet<u64> = measured.keys().map(|b| b.input_cap).collect();
        let outputs: BTreeSet<u64> = measured.keys().map(|b| b.output_cap).collect();
        let (i0s, i1s) = brackets(&inputs, bin.input_cap);
        let (o0s, o1s) = brackets(&outputs, bin.output_cap);

        let span = |lo: u64, hi: u64| (hi as f64).ln() - (lo as f64).ln();
        let mut best: Option<(f64, [u64; 4])> = None;
        for &i0 in &i0s {
            for &i1 in &i1s {
                for &o0 in &o0s {
                    for &o1 in &o1s {
                        let corners = [Bin::new(i0, o0), Bin::new(i0, o1), Bin::new(i1, o0), Bin::new(i1, o1)];
                        if !corners.iter().all(|c| measured.contains_key(c)) {
                            continue;
                        }
                        let cost = span(i0, i1) + span(o0, o1);
                        // candidates are visited in a fixed order, so strict < keeps ties deterministic
                        if best.is_none_or(|(c, _)| cost < c) {
                            best = Some((cost, [i0, i1, o0, o1]));
                        }
                    }
                }
            }
        }
        let (_, [i0, i1, o0, o1]) = best?;

        let frac = |lo: u64, hi: u64, x: u64| if lo == hi { 0.0 } else { span(lo, x) / span(lo, hi) };
        let t = frac(i0, i1, bin.input_cap);
        let u = frac(o0, o1, bin.output_cap);
        let corner = |i, o| measured[&Bin::new(i, o)];
        let blend = |f: &dyn Fn(&MeasurementRecord) -> f64| {
            let ln = |r: &MeasurementRecord| f(r).ln();
            let low = (1.0 - u) * ln(corner(i0, o0)) + u * ln(corner(i0, o1));
            let high = (1.0 - u) * ln(corner(i1, o0)) + u * ln(corner(i1, o1));
            ((1.0 - t) * low + t * high).exp()
        };
        let per_request = blend(&|r| r.per_request_energy().joules());
        let max_batch = (blend(&|r| r.max_batch as f64).floor() as u64).max(1);
        let all = [corner(i0, o0), corner(i0, o1), corner(i1, o0), corner(i1, o1)];

        Some(MeasurementRecord {
            backend: backend.to_string(),
            device: device.to_string(),
            input_cap: bin.input_cap,
            output_cap: bin.output_cap,
            max_batch,
            batch_energy: Energy::from_joules(per_request * max_batch as f64),
            prefill_energy: None,
            decode_energy: None,
            samples_measured: all.iter().map(|r| r.samples_measured).min().unwrap_or(1),
            warmup_batches: all.iter().map(|r| r.warmup_batches).min().unwrap_or(0),
        })
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut metadata = TableMetadata::default();
        let mut input_bins = None;
        let mut output_bins = None;
        let mut offset = 0u64;
        let mut body_start = 0usize;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if !(trimmed.is_empty() || trimmed.starts_with('#')) {
                break;
            }
            offset += 1;
            body_start += line.len();
            let Some(meta) = trimmed.strip_prefix('#') else { continue };
            let Some((key, value)) = meta.split_once('=') else { continue };
            let value = value.trim();
            let err = |m: String| Error::TableRow { line: offset, message: m };
            match key.trim() {
                "input_bins" => input_bins = Some(parse_u64_list(value).map_err(|b| err(format!("bad bin `{b}`")))?),
                "output_bins" => output_bins = Some(parse_u64_list(value).map_err(|b| err(format!("bad bin `{b}`")))?),
                "protocol_samples" => {
                    metadata.protocol_samples = value
                        .parse()
                        .ok()
                        .filter(|&n: &u64| n > 0)
                        .ok_or_else(|| err(format!("protocol_samples must be a positive integer, got `{value}`")))?
                }
                "normalization_note" => metadata.normalization_note = value.to_string(),
                "padding_policy" => metadata.padding_policy = value.to_string(),
                _ => {}
            }
        }
        match (input_bins, output_bins) {
            (None, None) => {}
            (Some(i), Some(o)) => metadata.grid = BinGrid::new(i, o)?,
            _ => return Err(Error::Config("table metadata must give both input_bins and output_bins".into())),
        }

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(&text.as_bytes()[body_start..]);
        let headers = reader.headers()?.clone();
        let mut idx = [0usize; 11];
        for (slot, name) in idx.iter_mut().zip(TABLE_COLUMNS) {
            *slot = headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
                path: "<measurement table>".into(),
                column: name.to_string(),
            })?;
        }

        let mut table = Self::new(metadata);
        for row in reader.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line()) + offset;
            let err = |message: String| Error::TableRow { line, message };
            let field = |k: usize| row.get(idx[k]).unwrap_or("");
            let int = |k: usize| {
                field(k)
                    .parse::<u64>()
                    .map_err(|_| err(format!("{}: `{}` is not a non-negative integer", TABLE_COLUMNS[k], field(k))))
            };
            let unit: EnergyUnit = field(6).parse().map_err(|e: Error| err(e.to_string()))?;
            let energy = |k: usize| -> Result<Option<Energy>> {
                let raw = field(k);
                if raw.is_empty() {
                    return Ok(None);
                }
                let v: f64 = raw.parse().map_err(|_| err(format!("{}: `{raw}` is not a number", TABLE_COLUMNS[k])))?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(err(format!("{}: energy must be positive, got {raw}", TABLE_COLUMNS[k])));
                }
                Energy::from_unit(v, unit).map(Some)
            };
            let record = MeasurementRecord {
                backend: field(0).to_string(),
                device: field(1).to_string(),
                input_cap: int(2)?,
                output_cap: int(3)?,
                max_batch: int(4)?,
                batch_energy: energy(5)?.ok_or_else(|| err("batch_energy is required".into()))?,
                prefill_energy: energy(7)?,
                decode_energy: energy(8)?,
                samples_measured: int(9)?,
                warmup_batches: int(10)?,
            };
            if record.backend.is_empty() || record.device.is_empty() {
                return Err(err("backend and device labels are required".into()));
            }
            match table.insert(record) {
                Err(Error::TableRow { message, .. }) => return Err(err(message)),
                other => other?,
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    /// Serializes with energies in joules.
    pub fn to_csv(&self) -> String {
        let m = &self.metadata;
        let mut out = String::new();
        let _ = writeln!(out, "# input_bins={}", join_list(m.grid.input_bins()));
        let _ = writeln!(out, "# output_bins={}", join_list(m.grid.output_bins()));
        let _ = writeln!(out, "# protocol_samples={}", m.protocol_samples);
        let _ = writeln!(out, "# normalization_note={}", m.normalization_note.replace('\n', " "));
        let _ = writeln!(out, "# padding_policy={}", m.padding_policy.replace('\n', " "));
        out.push_str(&TABLE_COLUMNS.join(","));
        out.push('\n');
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let opt = |e: Option<Energy>| e.map_or(String::new(), |e| e.joules().to_string());
        for r in self.records.values() {
            writer
                .write_record([
                    r.backend.clone(),
                    r.device.clone(),
                    r.input_cap.to_string(),
                    r.output_cap.to_string(),
                    r.max_batch.to_string(),
                    r.batch_energy.joules().to_string(),
                    "J".to_string(),
                    opt(r.prefill_energy),
                    opt(r.decode_energy),
                    r.samples_measured.to_string(),
                    r.warmup_batches.to_string(),
                ])
                .expect("writing to a Vec cannot fail");
        }
        let bytes = writer.into_inner().expect("flushing a Vec cannot fail");
        out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
        out
    }
}

/// Candidate lower caps (nearest first) and upper caps (nearest first).
fn brackets(levels: &BTreeSet<u64>, x: u64) -> (Vec<u64>, Vec<u64>) {
    let lower = levels.range(..=x).rev().copied().collect();
    let upper = levels.range(x..).copied().collect();
    (lower, upper)
}

/// Device-memory model for the maximum batch of synthesized tables.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryHeuristic {
    pub device_memory_bytes: u64,
    pub bytes_per_param: u64,
    /// Derived from the model (K and V, every layer, bf16) when absent.
    pub kv_bytes_per_token: Option<u64>,
    pub max_batch_cap: u64,
}

impl Default for MemoryHeuristic {
    fn default() -> Self {
        Self {
            device_memory_bytes: 48 * (1 << 30),
            bytes_per_param: 2,
            kv_bytes_per_token: None,
            max_batch_cap: 1024,
        }
    }
}

impl MemoryHeuristic {
    pub fn kv_bytes_per_token(&self, model: &ModelConfig) -> u64 {
        self.kv_bytes_per_token
            .unwrap_or(2 * model.n_layers * model.n_kv_heads * model.head_dim() * 2)
    }

    pub fn max_batch(&self, model: &ModelConfig, params: u64, bin: Bin) -> u64 {
        let weights = params.saturating_mul(self.bytes_per_param);
        let free = self.device_memory_bytes.saturating_sub(weights);
        let per_request = self
            .kv_bytes_per_token(model)
            .saturating_mul(bin.input_cap + bin.output_cap)
            .max(1);
        (free / per_request).clamp(1, self.max_batch_cap.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub backend: String,
    pub memory: MemoryHeuristic,
    pub samples_measured: u64,
    pub warmup_batches: u64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            backend: "synthetic".to_string(),
            memory: MemoryHeuristic::default(),
            samples_measured: DEFAULT_PROTOCOL_SAMPLES,
            warmup_batches: 20,
        }
    }
}

/// Builds a full-grid table from the FLOPs model:
/// `B · (prefill + decode · decode_penalty) · (TDP / FLOPS) / efficiency`.
pub fn synthesize_table(
    grid: &BinGrid,
    model: &ModelConfig,
    hw: &HardwareSpec,
    efficiency: f64,
    decode_penalty: f64,
    options: &SynthesisOptions,
) -> Result<MeasurementTable> {
    if !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(Error::Parameter(format!("efficiency must be in (0, 1], got {efficiency}")));
    }
    if !(decode_penalty >= 1.0 && decode_penalty.is_finite()) {
        return Err(Error::Parameter(format!("decode_penalty must be >= 1, got {decode_penalty}")));
    }
    hw.validate()?;
    let params = model.param_count()?;
    let joules_per_flop = hw.joules_per_flop();

    let metadata = TableMetadata {
        grid: grid.clone(),
        padding_policy: "synthetic: every request evaluated at its bin caps".to_string(),
        ..TableMetadata::default()
    };
    let mut table = MeasurementTable::new(metadata);
    for bin in grid.bins() {
        let flops = request_flops(model, bin.input_cap, bin.output_cap)?;
        let batch = options.memory.max_batch(model, params, bin);
        let scale = batch as f64 * joules_per_flop / efficiency;
        let prefill = flops.prefill_flops as f64 * scale;
        let decode = flops.decode_flops as f64 * decode_penalty * scale;
        table.insert(MeasurementRecord {
            backend: options.backend.clone(),
            device: hw.name.clone(),
            input_cap: bin.input_cap,
            output_cap: bin.output_cap,
            max_batch: batch,
            batch_energy: Energy::try_from_joules(prefill + decode)?,
            prefill_energy: Some(Energy::try_from_joules(prefill)?),
            decode_energy: Some(Energy::try_from_joules(decode)?),
            samples_measured: options.samples_measured.max(1),
            warmup_batches: options.warmup_batches,
        })?;
    }
    Ok(table)
}
