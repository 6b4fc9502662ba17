//! Block-recursive matrix multiplication with fewer scalar products.
//!
//! A scheme `<m, k, n, R, U, V, W>` partitions `C = A * B` into an `m x k`
//! by `k x n` block grid and computes it with `R < m*k*n` block products:
//! the `U`/`V` coefficients form the operands `A~_r`/`B~_r`, a batch of
//! dense GEMMs forms `H_r = A~_r * B~_r`, and the `W` coefficients fold the
//! products into `C`. This crate provides:
//!
//! - exact scheme validation against the bilinear identity, a catalog of
//!   built-in schemes (Strassen, Laderman, a composed rank-49 scheme, and
//!   the rank-preserving baseline), a text format, and scheme composition
//!   ([`scheme`], [`library`]);
//! - instrumented dense kernels and two executors: the staged pipeline
//!   that materializes every intermediate, and the fused group-parallel
//!   pipeline that keeps products in registers and cuts memory traffic
//!   ([`gemm`], [`staged`], [`fused`]);
//! - split-group schedule planning with cache-aware reordering and wave
//!   simulation ([`schedule`]);
//! - an analytical cost model that predicts per-stage times from a measured
//!   hardware profile and picks the best algorithm per shape, with a
//!   standard-GEMM fallback ([`decision`]).
//!
//! Integer elements reproduce the classical product bit for bit regardless
//! of scheme, executor, worker count, or schedule; floats carry the usual
//! reassociation error, bounded in tests against a 64-bit oracle.

pub mod counters;
pub mod decision;
pub mod error;
pub mod fused;
pub mod gemm;
pub mod grid;
pub mod library;
pub mod matrix;
pub mod schedule;
pub mod scheme;
pub mod staged;

pub use counters::OpCounters;
pub use decision::{
    calibrate, estimate_time, gemm_intensity, lcma_beneficial, load_profile, parse_profile,
    roofline_table, save_profile, select, stage_costs, std_gemm_cost, std_gemm_memory_bound,
    write_profile, Algorithm, Bound, CandidateCost, Choice, Decision, HardwareProfile,
    RooflineRow, Stage, StageCost, STANDARD_GEMM_NAME,
};
pub use error::{Error, Result};
pub use fused::{
    fused_gemm_combine_h, group_combine_a, group_combine_b, lcma_fused, precombine_b,
    ExecConfig, GroupCoord, PrecombinedB,
};
pub use gemm::{blocked_gemm, naive_gemm, TileConfig};
pub use grid::{assemble_crop, pad_partition, GridView};
pub use library::{
    builtin_catalog, list_schemes, load_scheme, parse_scheme, save_scheme, strassen_scheme,
    CatalogEntry, Provenance, SchemeCatalog, SchemeSummary,
};
pub use matrix::{rel_error_stats, Element, Matrix};
pub use schedule::{
    cache_aware_reorder, group_granular_waves, plan_split_group, simulate_wave_traffic,
    SplitRecord, TileSchedule, WorkItem,
};
pub use scheme::{
    compose, standard_scheme, validate_scheme, CoeffTensor, IdentityFailure, LcmaScheme,
    ValidationReport,
};
pub use staged::{
    batched_gemm, combine_a, combine_b, combine_h, lcma_staged, lcma_staged_full,
    IntermediateSet,
};
