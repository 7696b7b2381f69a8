// SPDX-License-Identifier: Apache-2.0

//! Workload-aware energy estimation for offline LLM inference.
//!
//! Requests are mapped onto a lattice of (input, output) token-length bins;
//! bin counts are combined with measured full-batch energies to estimate the
//! energy of a whole trace, and with an analytic FLOPs model to compute the
//! energy the same work would take at the accelerator's rated peak.
//!
//! ```
//! use infer_energy::{bin_workload, BinGrid, Bin, Request};
//!
//! let trace = [Request::new(215, 7), Request::new(215, 7), Request::new(929, 41)];
//! let workload = bin_workload(&trace, &BinGrid::default());
//! assert_eq!(workload.count(Bin::new(256, 8)), 2);
//! assert_eq!(workload.count(Bin::new(1024, 64)), 1);
//! ```

pub mod binning;
pub mod cli;
pub mod config;
pub mod domain;
pub mod error;
pub mod estimator;
pub mod flops;
pub mod ingest;
pub mod report;
pub mod sweep;
pub mod tables;

pub use binning::{bin_workload, map_to_bin, BinAssignment, BinnedWorkload, Overflow};
pub use domain::{derive_param_count, Bin, BinGrid, Energy, EnergyUnit, HardwareSpec, ModelConfig, Request};
pub use error::{Error, Result};
pub use estimator::{estimate, BatchMode, BinEstimate, WorkloadEstimate};
pub use flops::{idealized_energy, request_flops, FlopsBreakdown};
pub use ingest::{compute_stats, load_trace, summarize_trace, ColumnMap, TraceFormat, TraceSource, TraceStats};
pub use report::{compare, emit_report, Comparison, Report, ReportFormat};
pub use sweep::{plan_default_sweeps, validate_table_against_plan, CoverageReport, SweepPlan};
pub use tables::{synthesize_table, LookupPolicy, MeasurementRecord, MeasurementTable, Provenance};
