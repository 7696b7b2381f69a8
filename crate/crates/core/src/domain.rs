// SPDX-License-Identifier: Apache-2.0

//! Value types shared by every stage of the pipeline.
//!
//! Everything here is an immutable value: requests, bins and grids, hardware
//! and model descriptions, and the [`Energy`] newtype that keeps all internal
//! arithmetic in joules.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const JOULES_PER_WH: f64 = 3.6e3;
pub const JOULES_PER_KWH: f64 = 3.6e6;

/// One inference call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Request {
    input_tokens: u64,
    output_tokens: u64,
}

impl Request {
    pub const fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
        }
    }

    pub const fn input_tokens(&self) -> u64 {
        self.input_tokens
    }

    pub const fn output_tokens(&self) -> u64 {
        self.output_tokens
    }
}

/// A cell of the (input cap, output cap) lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Bin {
    pub input_cap: u64,
    pub output_cap: u64,
}

impl Bin {
    pub const fn new(input_cap: u64, output_cap: u64) -> Self {
        Self {
            input_cap,
            output_cap,
        }
    }
}

impl fmt::Display for Bin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.input_cap, self.output_cap)
    }
}

pub const DEFAULT_INPUT_BINS: [u64; 8] = [32, 128, 256, 512, 1024, 2048, 4096, 8192];
pub const DEFAULT_OUTPUT_BINS: [u64; 7] = [8, 16, 32, 64, 128, 256, 512];

/// Input and output bin caps, each strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct BinGrid {
    input_bins: Vec<u64>,
    output_bins: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    input_bins: Vec<u64>,
    output_bins: Vec<u64>,
}

impl TryFrom<RawGrid> for BinGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        BinGrid::new(raw.input_bins, raw.output_bins)
    }
}

impl From<BinGrid> for RawGrid {
    fn from(grid: BinGrid) -> Self {
        RawGrid {
            input_bins: grid.input_bins,
            output_bins: grid.output_bins,
        }
    }
}

impl Default for BinGrid {
    fn default() -> Self {
        Self {
            input_bins: DEFAULT_INPUT_BINS.to_vec(),
            output_bins: DEFAULT_OUTPUT_BINS.to_vec(),
        }
    }
}

impl BinGrid {
    pub fn new(input_bins: Vec<u64>, output_bins: Vec<u64>) -> Result<Self> {
        check_axis("input", &input_bins)?;
        check_axis("output", &output_bins)?;
        Ok(Self {
            input_bins,
            output_bins,
        })
    }

    pub fn input_bins(&self) -> &[u64] {
        &self.input_bins
    }

    pub fn output_bins(&self) -> &[u64] {
        &self.output_bins
    }

    pub fn max_input(&self) -> u64 {
        *self.input_bins.last().expect("grid axes are non-empty")
    }

    pub fn max_output(&self) -> u64 {
        *self.output_bins.last().expect("grid axes are non-empty")
    }

    /// Smallest input cap `>= tokens`, if any.
    pub fn input_ceiling(&self, tokens: u64) -> Option<u64> {
        ceiling(&self.input_bins, tokens)
    }

    /// Smallest output cap `>= tokens`, if any.
    pub fn output_ceiling(&self, tokens: u64) -> Option<u64> {
        ceiling(&self.output_bins, tokens)
    }

    pub fn contains(&self, bin: Bin) -> bool {
        self.input_bins.binary_search(&bin.input_cap).is_ok()
            && self.output_bins.binary_search(&bin.output_cap).is_ok()
    }

    /// All cells, input-major.
    pub fn bins(&self) -> impl Iterator<Item = Bin> + '_ {
        self.input_bins.iter().flat_map(move |&i| {
            self.output_bins.iter().map(move |&o| Bin::new(i, o))
        })
    }

    pub fn len(&self) -> usize {
        self.input_bins.len() * self.output_bins.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn check_axis(name: &str, bins: &[u64]) -> Result<()> {
    if bins.is_empty() {
        return Err(Error::Grid(format!("{name} bins are empty")));
    }
    if bins[0] == 0 {
        return Err(Error::Grid(format!("{name} bins must be positive")));
    }
    if let Some(w) = bins.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::Grid(format!(
            "{name} bins must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

fn ceiling(bins: &[u64], tokens: u64) -> Option<u64> {
    let idx = bins.partition_point(|&cap| cap < tokens);
    bins.get(idx).copied()
}

/// Accelerator power and throughput ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub name: String,
    /// Watts.
    pub tdp: f64,
    /// FLOP/s.
    pub peak_flops: f64,
}

impl HardwareSpec {
    pub fn new(name: impl Into<String>, tdp: f64, peak_flops: f64) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            tdp,
            peak_flops,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// RTX A6000 datasheet figures: 300 W, 309.7 TFLOPS.
    pub fn rtx_a6000() -> Self {
        Self {
            name: "A6000".to_string(),
            tdp: 300.0,
            peak_flops: 309.7e12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tdp.is_finite() && self.tdp > 0.0) {
            return Err(Error::Hardware(format!("tdp must be > 0, got {}", self.tdp)));
        }
        if !(self.peak_flops.is_finite() && self.peak_flops > 0.0) {
            return Err(Error::Hardware(format!(
                "peak_flops must be > 0, got {}",
                self.peak_flops
            )));
        }
        Ok(())
    }

    /// Energy per floating-point operation at rated peak: TDP / FLOPS.
    pub fn joules_per_flop(&self) -> f64 {
        self.tdp / self.peak_flops
    }
}

/// Dense decoder-only transformer shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: u64,
    pub d_model: u64,
    pub n_heads: u64,
    pub n_kv_heads: u64,
    pub d_ff: u64,
    pub vocab_size: u64,
    /// Explicit parameter count; derived from the shape when absent.
    #[serde(default)]
    pub n_params: Option<u64>,
    #[serde(default)]
    pub tied_embeddings: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
        ] {
            if value == 0 {
                return Err(Error::Model(format!("{name} must be positive")));
            }
        }
        if self.n_params == Some(0) {
            return Err(Error::Model("n_params must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Model(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::Model(format!(
                "n_heads {} is not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> u64 {
        self.d_model / self.n_heads
    }

    /// The explicit `n_params` if set, otherwise [`derive_param_count`].
    pub fn param_count(&self) -> Result<u64> {
        match self.n_params {
            Some(p) => {
                self.validate()?;
                Ok(p)
            }
            None => derive_param_count(self),
        }
    }

    /// Llama-3.1-8B shape.
    pub fn llama_3_1_8b() -> Self {
        Self {
            n_layers: 32,
            d_model: 4096,
            n_heads: 32,
            n_kv_heads: 8,
            d_ff: 14336,
            vocab_size: 128_256,
            n_params: None,
            tied_embeddings: false,
        }
    }
}

/// Closed-form weight count of a dense decoder.
///
/// Embedding table, per layer the Q/K/V/O projections (K and V shrink under
/// grouped-query attention) and a gated feed-forward block, then the output
/// head unless tied. Biases and normalization weights are not counted.
pub fn derive_param_count(config: &ModelConfig) -> Result<u64> {
    config.validate()?;
    let d = config.d_model;
    let kv_dim = config.n_kv_heads * config.head_dim();
    let embed = config.vocab_size * d;
    let attention = d * d + 2 * d * kv_dim + d * d;
    let ffn = 3 * d * config.d_ff;
    let head = if config.tied_embeddings { 0 } else { embed };
    Ok(embed + config.n_layers * (attention + ffn) + head)
}

/// An amount of energy, stored in joules. Never negative.
#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Energy(f64);

impl Energy {
    pub const ZERO: Energy = Energy(0.0);

    pub fn try_from_joules(joules: f64) -> Result<Self> {
        if joules.is_finite() && joules >= 0.0 {
            // normalise -0.0
            Ok(Energy(joules + 0.0))
        } else {
            Err(Error::NegativeEnergy(joules))
        }
    }

    /// Panics on negative or non-finite input.
    pub fn from_joules(joules: f64) -> Self {
        Self::try_from_joules(joules).expect("energy must be finite and non-negative")
    }

    pub fn from_wh(wh: f64) -> Result<Self> {
        Self::try_from_joules(wh * JOULES_PER_WH)
    }

    pub fn from_kwh(kwh: f64) -> Result<Self> {
        Self::try_from_joules(kwh * JOULES_PER_KWH)
    }

    pub fn from_unit(value: f64, unit: EnergyUnit) -> Result<Self> {
        Self::try_from_joules(value * unit.joules_per_unit())
    }

    pub fn joules(self) -> f64 {
        self.0
    }

    pub fn wh(self) -> f64 {
        self.0 / JOULES_PER_WH
    }

    pub fn kwh(self) -> f64 {
        self.0 / JOULES_PER_KWH
    }
}

impl TryFrom<f64> for Energy {
    type Error = Error;

    fn try_from(joules: f64) -> Result<Self> {
        Energy::try_from_joules(joules)
    }
}

impl From<Energy> for f64 {
    fn from(e: Energy) -> f64 {
        e.0
    }
}

impl Add for Energy {
    type Output = Energy;

    fn add(self, rhs: Energy) -> Energy {
        Energy(self.0 + rhs.0)
    }
}

impl AddAssign for Energy {
    fn add_assign(&mut self, rhs: Energy) {
        self.0 += rhs.0;
    }
}

/// Scaling by a non-negative factor. Panics on a negative or non-finite factor.
impl Mul<f64> for Energy {
    type Output = Energy;

    fn mul(self, factor: f64) -> Energy {
        assert!(
            factor.is_finite() && factor >= 0.0,
            "energy scale factor must be finite and non-negative, got {factor}"
        );
        Energy(self.0 * factor + 0.0)
    }
}

impl Sum for Energy {
    fn sum<I: Iterator<Item = Energy>>(iter: I) -> Energy {
        iter.fold(Energy::ZERO, Add::add)
    }
}

impl fmt::Display for Energy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} J", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnergyUnit {
    #[serde(rename = "J")]
    Joule,
    #[serde(rename = "Wh")]
    WattHour,
    #[serde(rename = "kWh")]
    KilowattHour,
}

impl EnergyUnit {
    pub fn joules_per_unit(self) -> f64 {
        match self {
            EnergyUnit::Joule => 1.0,
            EnergyUnit::WattHour => JOULES_PER_WH,
            EnergyUnit::KilowattHour => JOULES_PER_KWH,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EnergyUnit::Joule => "J",
            EnergyUnit::WattHour => "Wh",
            EnergyUnit::KilowattHour => "kWh",
        }
    }
}

impl FromStr for EnergyUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "J" => Ok(EnergyUnit::Joule),
            "Wh" => Ok(EnergyUnit::WattHour),
            "kWh" => Ok(EnergyUnit::KilowattHour),
            other => Err(Error::UnknownUnit(other.to_string())),
        }
    }
}
