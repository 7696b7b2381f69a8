// SPDX-License-Identifier: Apache-2.0

//! Workload energy: for each bin, the number of batches needed at the bin's
//! maximum batch size times the measured energy of one full batch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::binning::BinnedWorkload;
use crate::domain::{Bin, Energy};
use crate::error::{Error, Result};
use crate::tables::{LookupPolicy, MeasurementTable, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchMode {
    /// `count / max_batch` batches.
    #[default]
    Fractional,
    /// `ceil(count / max_batch)` batches; a partial batch costs a full one.
    Ceiling,
}

impl fmt::Display for BatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BatchMode::Fractional => "fractional",
            BatchMode::Ceiling => "ceiling",
        })
    }
}

impl FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fractional" => Ok(BatchMode::Fractional),
            "ceiling" => Ok(BatchMode::Ceiling),
            other => Err(Error::Parameter(format!("unknown batch mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEstimate {
    pub bin: Bin,
    pub count: u64,
    pub max_batch: u64,
    pub batches: f64,
    #[serde(rename = "energy_j")]
    pub energy: Energy,
    #[serde(rename = "prefill_energy_j")]
    pub prefill_energy: Option<Energy>,
    #[serde(rename = "decode_energy_j")]
    pub decode_energy: Option<Energy>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadEstimate {
    pub backend: String,
    pub device: String,
    pub mode: BatchMode,
    #[serde(rename = "total_j")]
    pub total: Energy,
    /// Present only when every contributing record carries the split.
    #[serde(rename = "prefill_total_j")]
    pub prefill_total: Option<Energy>,
    #[serde(rename = "decode_total_j")]
    pub decode_total: Option<Energy>,
    pub excluded_requests: u64,
    pub per_bin: Vec<BinEstimate>,
}

impl WorkloadEstimate {
    pub fn interpolated_bins(&self) -> usize {
        self.per_bin
            .iter()
            .filter(|b| b.provenance == Provenance::Interpolated)
            .count()
    }
}

fn batches(count: u64, max_batch: u64, mode: BatchMode) -> f64 {
    match mode {
        BatchMode::Fractional => count as f64 / max_batch as f64,
        BatchMode::Ceiling => count.div_ceil(max_batch) as f64,
    }
}

pub fn estimate(
    workload: &BinnedWorkload,
    table: &MeasurementTable,
    backend: &str,
    device: &str,
    mode: BatchMode,
    policy: LookupPolicy,
) -> Result<WorkloadEstimate> {
    let per_bin = workload
        .counts()
        .iter()
        .map(|(&bin, &count)| {
            let resolved = table.lookup(backend, device, bin, policy)?;
            let record = resolved.record;
            let n = batches(count, record.max_batch, mode);
            Ok(BinEstimate {
                bin,
                count,
                max_batch: record.max_batch,
                batches: n,
                energy: record.batch_energy * n,
                prefill_energy: record.prefill_energy.map(|e| e * n),
                decode_energy: record.decode_energy.map(|e| e * n),
                provenance: resolved.provenance,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let split_total = |f: fn(&BinEstimate) -> Option<Energy>| -> Option<Energy> {
        per_bin.iter().map(f).sum::<Option<Energy>>()
    };
    Ok(WorkloadEstimate {
        backend: backend.to_string(),
        device: device.to_string(),
        mode,
        total: per_bin.iter().map(|b| b.energy).sum(),
        prefill_total: split_total(|b| b.prefill_energy),
        decode_total: split_total(|b| b.decode_energy),
        excluded_requests: workload.excluded(),
        per_bin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BinGrid;
    use crate::tables::{MeasurementRecord, TableMetadata};
    use proptest::prelude::*;

    fn record(i: u64, o: u64, batch: u64, joules: f64) -> MeasurementRecord {
        MeasurementRecord {
            backend: "b".into(),
            device: "d".into(),
            input_cap: i,
            output_cap: o,
            max_batch: batch,
            batch_energy: Energy::from_joules(joules),
            prefill_energy: None,
            decode_energy: None,
            samples_measured: 1024,
            warmup_batches: 20,
        }
    }

    fn one_bin(count: u64) -> (BinnedWorkload, MeasurementTable) {
        let w = BinnedWorkload::from_counts(BinGrid::default(), [(Bin::new(256, 8), count)], 0, 0).unwrap();
        let t = MeasurementTable::from_records(TableMetadata::default(), [record(256, 8, 4, 2.0)]).unwrap();
        (w, t)
    }

    #[test]
    fn fractional_and_ceiling_examples() {
        let (w, t) = one_bin(10);
        let f = estimate(&w, &t, "b", "d", BatchMode::Fractional, LookupPolicy::Strict).unwrap();
        assert_eq!(f.total.joules(), 5.0);
        assert_eq!(f.per_bin[0].batches, 2.5);
        let c = estimate(&w, &t, "b", "d", BatchMode::Ceiling, LookupPolicy::Strict).unwrap();
        assert_eq!(c.per_bin[0].batches, 3.0);
        assert_eq!(c.total.joules(), 6.0);
    }

    #[test]
    fn zero_count_bins_are_not_listed() {
        let g = BinGrid::default();
        let w = BinnedWorkload::from_counts(
            g,
            [(Bin::new(32, 8), 2), (Bin::new(128, 8), 1), (Bin::new(256, 8), 0)],
            0,
            0,
        )
        .unwrap();
        let t = MeasurementTable::from_records(
            TableMetadata::default(),
            [record(32, 8, 2, 3.0), record(128, 8, 4, 8.0), record(256, 8, 4, 100.0)],
        )
        .unwrap();
        let e = estimate(&w, &t, "b", "d", BatchMode::Fractional, LookupPolicy::Strict).unwrap();
        assert_eq!(e.per_bin.len(), 2);
        // 2/2·3 + 1/4·8
        assert_eq!(e.total.joules(), 3.0 + 2.0);
    }

    #[test]
    fn empty_workload_is_zero_not_error() {
        let t = MeasurementTable::new(TableMetadata::default());
        let e = estimate(&BinnedWorkload::empty(BinGrid::default()), &t, "b", "d", BatchMode::Ceiling, LookupPolicy::Strict).unwrap();
        assert_eq!(e.total, Energy::ZERO);
        assert!(e.per_bin.is_empty());
    }

    #[test]
    fn missing_bin_names_bin_and_pair() {
        let (w, _) = one_bin(3);
        let t = MeasurementTable::new(TableMetadata::default());
        let err = estimate(&w, &t, "vllm", "A6000", BatchMode::Fractional, LookupPolicy::Strict).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(256, 8)") && msg.contains("vllm") && msg.contains("A6000"), "{msg}");
    }

    #[test]
    fn excluded_requests_surface() {
        let w = BinnedWorkload::from_counts(BinGrid::default(), [(Bin::new(256, 8), 4)], 3, 2).unwrap();
        let t = MeasurementTable::from_records(TableMetadata::default(), [record(256, 8, 4, 2.0)]).unwrap();
        let e = estimate(&w, &t, "b", "d", BatchMode::Fractional, LookupPolicy::Strict).unwrap();
        assert_eq!(e.excluded_requests, 5);
        assert_eq!(e.total.joules(), 2.0);
    }

    #[test]
    fn split_propagates_only_when_complete() {
        let mut with_split = record(32, 8, 2, 4.0);
        with_split.prefill_energy = Some(Energy::from_joules(1.0));
        with_split.decode_energy = Some(Energy::from_joules(3.0));
        let plain = record(128, 8, 2, 4.0);
        let t = MeasurementTable::from_records(TableMetadata::default(), [with_split, plain]).unwrap();

        let only_split = BinnedWorkload::from_counts(BinGrid::default(), [(Bin::new(32, 8), 4)], 0, 0).unwrap();
        let e = estimate(&only_split, &t, "b", "d", BatchMode::Fractional, LookupPolicy::Strict).unwrap();
        assert_eq!(e.prefill_total.unwrap().joules(), 2.0);
        assert_eq!(e.decode_total.unwrap().joules(), 6.0);

        let mixed = BinnedWorkload::from_counts(BinGrid::default(), [(Bin::new(32, 8), 4), (Bin::new(128, 8), 1)], 0, 0).unwrap();
        let e = estimate(&mixed, &t, "b", "d", BatchMode::Fractional, LookupPolicy::Strict).unwrap();
        assert_eq!(e.prefill_total, None);
        assert_eq!(e.decode_total, None);
    }

    #[test]
    fn interpolated_bins_are_flagged() {
        let t = MeasurementTable::from_records(
            TableMetadata::default(),
            [record(256, 16, 1, 1.0), record(256, 64, 1, 4.0)],
        )
        .unwrap();
        let w = BinnedWorkload::from_counts(BinGrid::default(), [(Bin::new(256, 32), 3)], 0, 0).unwrap();
        assert!(estimate(&w, &t, "b", "d", BatchMode::Fractional, LookupPolicy::Strict).is_err());
        let e = estimate(&w, &t, "b", "d", BatchMode::Fractional, LookupPolicy::Interpolate).unwrap();
        assert_eq!(e.interpolated_bins(), 1);
        assert!((e.total.joules() - 6.0).abs() < 1e-12);
    }

    fn full_table(batch: u64, scale: f64) -> MeasurementTable {
        let g = BinGrid::default();
        let records = g.bins().map(|b| {
            record(b.input_cap, b.output_cap, batch, scale * (b.input_cap + 4 * b.output_cap) as f64)
        });
        MeasurementTable::from_records(TableMetadata::default(), records.collect::<Vec<_>>()).unwrap()
    }

    fn arb_workload() -> impl Strategy<Value = BinnedWorkload> {
        prop::collection::vec((0usize..56, 0u64..500), 0..15).prop_map(|cells| {
            let g = BinGrid::default();
            let bins: Vec<Bin> = g.bins().collect();
            let mut w = BinnedWorkload::empty(g.clone());
            for (idx, n) in cells {
                w.merge(&BinnedWorkload::from_counts(g.clone(), [(bins[idx], n)], 0, 0).unwrap()).unwrap();
            }
            w
        })
    }

    proptest! {
        #[test]
        fn fractional_linearity(w in arb_workload(), k in 1u64..50) {
            let t = full_table(7, 1.0);
            let a = estimate(&w, &t, "b", "d", BatchMode::Fractional, LookupPolicy::Strict).unwrap().total.joules();
            let b = estimate(&w.scaled(k), &t, "b", "d", BatchMode::Fractional, LookupPolicy::Strict).unwrap().total.joules();
            prop_assert!((b - k as f64 * a).abs() <= 1e-9 * b.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn ceiling_dominates(w in arb_workload(), batch in 1u64..64) {
            let t = full_table(batch, 1.0);
            let f = estimate(&w, &t, "b", "d", BatchMode::Fractional, LookupPolicy::Strict).unwrap().total.joules();
            let c = estimate(&w, &t, "b", "d", BatchMode::Ceiling, LookupPolicy::Strict).unwrap().total.joules();
            prop_assert!(c >= f);
            let divisible = w.counts().values().all(|n| n % batch == 0);
            prop_assert_eq!(c == f, divisible);
        }

        #[test]
        fn costlier_backend_costs_more(w in arb_workload(), bump in 1.0f64..3.0) {
            let cheap = full_table(5, 1.0);
            let dear = full_table(5, bump);
            for mode in [BatchMode::Fractional, BatchMode::Ceiling] {
                let a = estimate(&w, &cheap, "b", "d", mode, LookupPolicy::Strict).unwrap();
                let b = estimate(&w, &dear, "b", "d", mode, LookupPolicy::Strict).unwrap();
                prop_assert!(b.total >= a.total);
                for (x, y) in a.per_bin.iter().zip(&b.per_bin) {
                    prop_assert!(y.energy >= x.energy);
                }
            }
        }

        #[test]
        fn total_is_sum_of_bins(w in arb_workload()) {
            let e = estimate(&w, &full_table(3, 0.7), "b", "d", BatchMode::Fractional, LookupPolicy::Strict).unwrap();
            let sum: f64 = e.per_bin.iter().map(|b| b.energy.joules()).sum();
            prop_assert!((e.total.joules() - sum).abs() <= 1e-9 * sum.max(f64::MIN_POSITIVE));
        }
    }
}
