// SPDX-License-Identifier: Apache-2.0

//! Analytic inference FLOPs for dense decoders and the rated-peak energy floor.
//!
//! Per processed token, every weight contributes one multiply-accumulate
//! (2 FLOPs), and each layer's attention costs `2·d` FLOPs for the score and
//! another `2·d` for the value mix per visible key. Prefill token `t` sees `t`
//! keys; decode step `j` sees `I + j` keys because the KV cache is reused.
//! Softmax, normalization and activation FLOPs are not counted.

use serde::{Deserialize, Serialize};

use crate::binning::BinnedWorkload;
use crate::domain::{Energy, HardwareSpec, ModelConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub prefill_flops: u128,
    pub decode_flops: u128,
}

impl FlopsBreakdown {
    pub fn total(&self) -> u128 {
        self.prefill_flops + self.decode_flops
    }
}

/// FLOPs to serve one request of `input_len` prompt tokens generating
/// `output_len` tokens.
pub fn request_flops(model: &ModelConfig, input_len: u64, output_len: u64) -> Result<FlopsBreakdown> {
    if input_len == 0 {
        return Err(Error::ZeroInput);
    }
    let params = model.param_count()? as u128;
    let per_key = 4 * model.n_layers as u128 * model.d_model as u128;
    let i = input_len as u128;
    let o = output_len as u128;

    let prefill_context = i * (i + 1) / 2;
    let decode_context = o * i + o * (o + 1) / 2;
    Ok(FlopsBreakdown {
        prefill_flops: 2 * params * i + per_key * prefill_context,
        decode_flops: 2 * params * o + per_key * decode_context,
    })
}

/// Total FLOPs of a workload, each request charged at its bin caps.
pub fn workload_flops(model: &ModelConfig, workload: &BinnedWorkload) -> Result<u128> {
    workload.counts().iter().try_fold(0u128, |acc, (bin, &n)| {
        let per_request = request_flops(model, bin.input_cap, bin.output_cap)?.total();
        Ok(acc + per_request * n as u128)
    })
}

/// Energy of the workload if the device ran at rated peak throughput while
/// drawing exactly its TDP. Excluded requests contribute nothing.
pub fn idealized_energy(hw: &HardwareSpec, model: &ModelConfig, workload: &BinnedWorkload) -> Result<Energy> {
    hw.validate()?;
    let flops = workload_flops(model, workload)?;
    Energy::try_from_joules(flops as f64 * hw.joules_per_flop())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::bin_workload;
    use crate::domain::{Bin, BinGrid, Request};
    use proptest::prelude::*;

    fn toy() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            d_model: 4,
            n_heads: 1,
            n_kv_heads: 1,
            d_ff: 8,
            vocab_size: 10,
            n_params: None,
            tied_embeddings: false,
        }
    }

    #[test]
    fn toy_example_values() {
        let f = request_flops(&toy(), 2, 1).unwrap();
        assert_eq!(f.prefill_flops, 1008);
        assert_eq!(f.decode_flops, 528);
    }

    #[test]
    fn no_output_no_decode() {
        assert_eq!(request_flops(&toy(), 17, 0).unwrap().decode_flops, 0);
    }

    #[test]
    fn zero_input_rejected() {
        assert!(matches!(request_flops(&toy(), 0, 3), Err(Error::ZeroInput)));
    }

    #[test]
    fn prefill_superlinear_at_large_input() {
        let m = ModelConfig::llama_3_1_8b();
        let a = request_flops(&m, 4096, 0).unwrap().prefill_flops;
        let b = request_flops(&m, 8192, 0).unwrap().prefill_flops;
        assert!(b > 2 * a);
    }

    #[test]
    fn a6000_ratio() {
        let r = HardwareSpec::rtx_a6000().joules_per_flop();
        assert!((r - 9.6868e-13).abs() / 9.6868e-13 < 1e-4);
    }

    #[test]
    fn empty_workload_is_zero() {
        let w = BinnedWorkload::empty(BinGrid::default());
        let e = idealized_energy(&HardwareSpec::rtx_a6000(), &toy(), &w).unwrap();
        assert_eq!(e.joules(), 0.0);
    }

    #[test]
    fn single_bin_composes() {
        let hw = HardwareSpec::rtx_a6000();
        let w = BinnedWorkload::from_counts(BinGrid::default(), [(Bin::new(32, 8), 1)], 0, 0).unwrap();
        let expected = hw.joules_per_flop() * request_flops(&toy(), 32, 8).unwrap().total() as f64;
        assert_eq!(idealized_energy(&hw, &toy(), &w).unwrap().joules(), expected);
    }

    #[test]
    fn excluded_requests_cost_nothing() {
        let hw = HardwareSpec::rtx_a6000();
        let g = BinGrid::default();
        let a = bin_workload(&[Request::new(10, 1)], &g);
        let b = bin_workload(&[Request::new(10, 1), Request::new(10_000, 1), Request::new(1, 600)], &g);
        assert_eq!(
            idealized_energy(&hw, &toy(), &a).unwrap(),
            idealized_energy(&hw, &toy(), &b).unwrap()
        );
    }

    fn arb_workload() -> impl Strategy<Value = BinnedWorkload> {
        prop::collection::vec((0usize..56, 0u64..1000), 0..20).prop_map(|cells| {
            let g = BinGrid::default();
            let bins: Vec<Bin> = g.bins().collect();
            let mut w = BinnedWorkload::empty(g.clone());
            for (idx, n) in cells {
                let part = BinnedWorkload::from_counts(g.clone(), [(bins[idx], n)], 0, 0).unwrap();
                w.merge(&part).unwrap();
            }
            w
        })
    }

    proptest! {
        #[test]
        fn additive_over_workloads(a in arb_workload(), b in arb_workload()) {
            let hw = HardwareSpec::rtx_a6000();
            let m = ModelConfig::llama_3_1_8b();
            let ea = idealized_energy(&hw, &m, &a).unwrap().joules();
            let eb = idealized_energy(&hw, &m, &b).unwrap().joules();
            let mut ab = a.clone();
            ab.merge(&b).unwrap();
            let eab = idealized_energy(&hw, &m, &ab).unwrap().joules();
            prop_assert!((eab - (ea + eb)).abs() <= 1e-9 * eab.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn monotone_in_counts(a in arb_workload(), idx in 0usize..56, extra in 1u64..100) {
            let hw = HardwareSpec::rtx_a6000();
            let m = toy();
            let bin = BinGrid::default().bins().nth(idx).unwrap();
            let mut bigger = a.clone();
            bigger.merge(&BinnedWorkload::from_counts(BinGrid::default(), [(bin, extra)], 0, 0).unwrap()).unwrap();
            prop_assert!(idealized_energy(&hw, &m, &bigger).unwrap() > idealized_energy(&hw, &m, &a).unwrap());
        }

        #[test]
        fn exceeds_linear_bound(i in 2u64..5000, o in 0u64..600) {
            let m = ModelConfig::llama_3_1_8b();
            let p = m.param_count().unwrap() as u128;
            let f = request_flops(&m, i, o).unwrap().total();
            prop_assert!(f > 2 * p * (i + o) as u128);
        }
    }
}
