//! Analytical cost model and algorithm selection.
//!
//! Every stage of a scheme run gets closed-form FLOP and memory-traffic
//! counts, an arithmetic intensity, and a compute/memory-bound verdict
//! against a [`HardwareProfile`]; summing stage times yields a predicted
//! runtime, and comparing predictions picks the algorithm for a shape.
//!
//! Conventions:
//! - `flops` counts a multiply-accumulate in a GEMM stage as two operations
//!   (a plain M x N x K product costs 2MNK) and a combine add/sub as one.
//! - `mem_elements` is one-pass streaming traffic: each distinct input
//!   element read once per stage, each output element written once. The
//!   staged executor re-reads shared source blocks per combine term, so its
//!   instrumented loads run above this floor whenever a combine tensor has
//!   more nonzeros than the grid has blocks; the fused executor meets the
//!   floor for the combine stages.
//! - In fused mode the products are never written back or re-read; the GEMM
//!   row drops its store term and the combine-H row keeps only the single
//!   in-place output store.
//! - Shapes the grid does not divide are costed at their zero-padded sizes.
//!   The plain-GEMM baseline never pads.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::counters::OpCounters;
use crate::error::{Error, Result};
use crate::gemm::{blocked_gemm, TileConfig};
use crate::library::SchemeCatalog;
use crate::matrix::Matrix;
use crate::scheme::LcmaScheme;

/// Candidate-row name for the plain blocked product in decisions, roofline
/// tables, and CSV output.
pub const STANDARD_GEMM_NAME: &str = "standard-gemm";

/// Machine abstraction the model runs against: multiply-accumulate
/// throughput for GEMM stages, add/sub throughput for combine stages (both
/// FLOPs/sec), and off-chip bandwidth in elements/sec for the element type
/// in play.
///
/// The three rates describe the whole machine as benchmarked; `workers`
/// records the parallelism they were measured at and is not folded into the
/// arithmetic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HardwareProfile {
    pub flops_mul: f64,
    pub flops_add: f64,
    pub beta_elems: f64,
    pub workers: usize,
}

impl HardwareProfile {
    pub fn new(flops_mul: f64, flops_add: f64, beta_elems: f64, workers: usize) -> Self {
        for (field, value) in [
            ("flops_mul", flops_mul),
            ("flops_add", flops_add),
            ("beta_elems", beta_elems),
        ] {
            assert!(
                value.is_finite() && value > 0.0,
                "{field} must be finite and positive, got {value}"
            );
        }
        assert!(workers >= 1, "worker count must be positive");
        HardwareProfile { flops_mul, flops_add, beta_elems, workers }
    }
}

const PROFILE_KEYS: [&str; 4] = ["flops_mul", "flops_add", "beta_elems", "workers"];

/// Parses a profile from `key=value` lines; `#` comments and blank lines are
/// ignored, every key is required exactly once.
pub fn parse_profile(text: &str, source_name: &str) -> Result<HardwareProfile> {
    let mut values = [None::<f64>; 4];
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected key=value, got {body:?}")))?;
        let key = key.trim();
        let slot = PROFILE_KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| parse_err(format!("unknown key {key:?}")))?;
        if values[slot].is_some() {
            return Err(parse_err(format!("duplicate key {key:?}")));
        }
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad value for {key}: {e}")))?;
        if !(value.is_finite() && value > 0.0) {
            return Err(parse_err(format!("{key} must be finite and positive, got {value}")));
        }
        if key == "workers" && (value.fract() != 0.0 || value > u32::MAX as f64) {
            return Err(parse_err(format!("workers must be a positive integer, got {value}")));
        }
        values[slot] = Some(value);
    }
    for (slot, key) in PROFILE_KEYS.iter().enumerate() {
        if values[slot].is_none() {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line: last_line,
                message: format!("missing key {key:?}"),
            });
        }
    }
    Ok(HardwareProfile::new(
        values[0].unwrap(),
        values[1].unwrap(),
        values[2].unwrap(),
        values[3].unwrap() as usize,
    ))
}

pub fn load_profile(path: &Path) -> Result<HardwareProfile> {
    let text = std::fs::read_to_string(path)?;
    parse_profile(&text, &path.display().to_string())
}

pub fn write_profile(profile: &HardwareProfile, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "flops_mul={}", profile.flops_mul)?;
    writeln!(out, "flops_add={}", profile.flops_add)?;
    writeln!(out, "beta_elems={}", profile.beta_elems)?;
    writeln!(out, "workers={}", profile.workers)
}

pub fn save_profile(profile: &HardwareProfile, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    write_profile(profile, &mut file)?;
    Ok(())
}

/// Pipeline stage a [`StageCost`] row describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    CombineA,
    CombineB,
    Gemm,
    CombineH,
    StdGemm,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::CombineA => "combine_a",
            Stage::CombineB => "combine_b",
            Stage::Gemm => "gemm",
            Stage::CombineH => "combine_h",
            Stage::StdGemm => "std_gemm",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which resource limits a stage under a given profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    Compute,
    Memory,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bound::Compute => "compute",
            Bound::Memory => "memory",
        })
    }
}

/// One stage's predicted cost: operation count, streamed elements, their
/// ratio, and the resulting time under the roofline rule
/// `time = max(flops / throughput, mem / beta)`.
#[derive(Clone, Copy, Debug)]
pub struct StageCost {
    pub stage: Stage,
    pub flops: f64,
    pub mem_elements: f64,
    pub intensity: f64,
    pub bound: Bound,
    pub time_seconds: f64,
}

impl StageCost {
    fn new(stage: Stage, flops: f64, mem_elements: f64, hw: &HardwareProfile) -> Self {
        let throughput = match stage {
            Stage::Gemm | Stage::StdGemm => hw.flops_mul,
            _ => hw.flops_add,
        };
        let t_compute = flops / throughput;
        let t_memory = mem_elements / hw.beta_elems;
        StageCost {
            stage,
            flops,
            mem_elements,
            // Every stage moves data, so the ratio is finite.
            intensity: flops / mem_elements,
            bound: if t_compute >= t_memory { Bound::Compute } else { Bound::Memory },
            time_seconds: t_compute.max(t_memory),
        }
    }
}

/// Arithmetic intensity of a plain M x N x K product: `2MNK / (MK + NK + MN)`.
pub fn gemm_intensity(m: usize, n: usize, k: usize) -> f64 {
    assert!(m >= 1 && n >= 1 && k >= 1, "dimensions must be positive");
    let (m, n, k) = (m as f64, n as f64, k as f64);
    2.0 * m * n * k / (m * k + n * k + m * n)
}

/// Extents rounded up to the scheme grid, as the executors pad them.
fn effective_dims(scheme: &LcmaScheme, m: usize, n: usize, k: usize) -> (f64, f64, f64) {
    let mp = m.div_ceil(scheme.m()) * scheme.m();
    let np = n.div_ceil(scheme.n()) * scheme.n();
    let kp = k.div_ceil(scheme.k()) * scheme.k();
    (mp as f64, np as f64, kp as f64)
}

/// Closed forms at already-effective real dimensions. `mp`/`np`/`kp` must be
/// multiples of the grid for the quotients to mean whole tiles, but the
/// formulas themselves are continuous and the roofline sweep exploits that.
fn stage_costs_model(
    scheme: &LcmaScheme,
    mp: f64,
    np: f64,
    kp: f64,
    hw: &HardwareProfile,
    fused: bool,
) -> [StageCost; 4] {
    let (gm, gk, gn) = (scheme.m() as f64, scheme.k() as f64, scheme.n() as f64);
    let rank = scheme.rank() as f64;
    let (nnz_u, nnz_v, nnz_w) =
        (scheme.u().nnz() as f64, scheme.v().nnz() as f64, scheme.w().nnz() as f64);
    // Elements in one operand or product tile.
    let a_op = (mp / gm) * (kp / gk);
    let b_op = (kp / gk) * (np / gn);
    let h_op = (mp / gm) * (np / gn);

    let combine_a =
        StageCost::new(Stage::CombineA, (nnz_u - rank) * a_op, mp * kp + rank * a_op, hw);
    let combine_b =
        StageCost::new(Stage::CombineB, (nnz_v - rank) * b_op, kp * np + rank * b_op, hw);
    let gemm_mem = rank * (a_op + b_op) + if fused { 0.0 } else { rank * h_op };
    let gemm = StageCost::new(Stage::Gemm, 2.0 * rank * h_op * (kp / gk), gemm_mem, hw);
    let combine_h_mem = mp * np + if fused { 0.0 } else { rank * h_op };
    let combine_h =
        StageCost::new(Stage::CombineH, (nnz_w - gm * gn) * h_op, combine_h_mem, hw);
    [combine_a, combine_b, gemm, combine_h]
}

/// Predicted per-stage costs of running `scheme` on an M x K by K x N
/// product, in pipeline order: combine A, combine B, GEMM, combine H.
pub fn stage_costs(
    scheme: &LcmaScheme,
    m: usize,
    n: usize,
    k: usize,
    hw: &HardwareProfile,
    fused: bool,
) -> [StageCost; 4] {
    assert!(m >= 1 && n >= 1 && k >= 1, "dimensions must be positive");
    let (mp, np, kp) = effective_dims(scheme, m, n, k);
    stage_costs_model(scheme, mp, np, kp, hw, fused)
}

/// Cost row for the plain blocked product at the true (never padded) shape.
pub fn std_gemm_cost(m: usize, n: usize, k: usize, hw: &HardwareProfile) -> StageCost {
    assert!(m >= 1 && n >= 1 && k >= 1, "dimensions must be positive");
    let (m, n, k) = (m as f64, n as f64, k as f64);
    StageCost::new(Stage::StdGemm, 2.0 * m * n * k, m * k + n * k + m * n, hw)
}

/// True when bandwidth already limits the plain product, in which case no
/// scheme can pay for its extra combine traffic.
pub fn std_gemm_memory_bound(m: usize, n: usize, k: usize, hw: &HardwareProfile) -> bool {
    gemm_intensity(m, n, k) <= hw.flops_mul / hw.beta_elems
}

/// What to run for one product: the plain blocked kernel or a scheme.
#[derive(Clone, Copy, Debug)]
pub enum Algorithm<'a> {
    StandardGemm,
    Lcma(&'a LcmaScheme),
}

/// Predicted wall time: stage times summed with no overlap between stages.
/// `fused` selects which traffic terms the scheme path carries and is
/// ignored for the plain product.
pub fn estimate_time(
    algorithm: Algorithm<'_>,
    m: usize,
    n: usize,
    k: usize,
    hw: &HardwareProfile,
    fused: bool,
) -> f64 {
    match algorithm {
        Algorithm::StandardGemm => std_gemm_cost(m, n, k, hw).time_seconds,
        Algorithm::Lcma(scheme) => {
            stage_costs(scheme, m, n, k, hw, fused).iter().map(|c| c.time_seconds).sum()
        }
    }
}

/// Net-benefit inequality: the scheme wins exactly when the GEMM compute it
/// saves over the plain product outweighs the combine traffic it adds,
/// i.e. `saved_flops * beta > flops_mul * combine_mem_elements`.
///
/// The saving is measured against the unpadded plain product while the
/// scheme side is costed at padded extents, matching [`estimate_time`] on
/// both sides; equality keeps the plain product.
pub fn lcma_beneficial(
    scheme: &LcmaScheme,
    m: usize,
    n: usize,
    k: usize,
    hw: &HardwareProfile,
    fused: bool,
) -> bool {
    let costs = stage_costs(scheme, m, n, k, hw, fused);
    let saved = 2.0 * (m as f64) * (n as f64) * (k as f64) - costs[2].flops;
    let combine_mem =
        costs[0].mem_elements + costs[1].mem_elements + costs[3].mem_elements;
    saved * hw.beta_elems > hw.flops_mul * combine_mem
}

/// Outcome of [`select`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Choice {
    StandardGemm,
    Scheme(String),
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::StandardGemm => f.write_str(STANDARD_GEMM_NAME),
            Choice::Scheme(name) => f.write_str(name),
        }
    }
}

/// One candidate's predicted time inside a [`Decision`].
#[derive(Clone, Debug)]
pub struct CandidateCost {
    pub name: String,
    pub seconds: f64,
}

/// A selection with its full candidate table: the plain product first, then
/// every catalog scheme in name order.
#[derive(Clone, Debug)]
pub struct Decision {
    pub choice: Choice,
    pub candidates: Vec<CandidateCost>,
    /// Plain-product time over the chosen candidate's time; 1.0 when the
    /// plain product wins.
    pub predicted_speedup: f64,
    /// Which traffic variant the scheme candidates were costed with. The
    /// executors ship the fused path, so selection always uses it.
    pub fused: bool,
}

/// Picks the fastest predicted algorithm for the shape. Returns the plain
/// product immediately when the shape is bandwidth-bound, and on ties; among
/// tied schemes the lexicographically first name wins.
pub fn select(
    catalog: &SchemeCatalog,
    m: usize,
    n: usize,
    k: usize,
    hw: &HardwareProfile,
) -> Decision {
    assert!(!catalog.is_empty(), "selection needs a candidate catalog");
    let fused = true;
    let std_time = estimate_time(Algorithm::StandardGemm, m, n, k, hw, fused);
    let mut candidates =
        vec![CandidateCost { name: STANDARD_GEMM_NAME.to_string(), seconds: std_time }];
    for (name, entry) in catalog.iter() {
        candidates.push(CandidateCost {
            name: name.to_string(),
            seconds: estimate_time(Algorithm::Lcma(&entry.scheme), m, n, k, hw, fused),
        });
    }
    if std_gemm_memory_bound(m, n, k, hw) {
        return Decision {
            choice: Choice::StandardGemm,
            candidates,
            predicted_speedup: 1.0,
            fused,
        };
    }
    let mut choice = Choice::StandardGemm;
    let mut best = std_time;
    for cand in &candidates[1..] {
        if cand.seconds < best {
            choice = Choice::Scheme(cand.name.clone());
            best = cand.seconds;
        }
    }
    Decision { choice, candidates, predicted_speedup: std_time / best, fused }
}

/// One point of a roofline sweep: predicted effective rate of `algorithm`
/// at `intensity`, where effective FLOPs are always the plain product's
/// `2N^3` regardless of how few operations the algorithm really runs.
#[derive(Clone, Debug)]
pub struct RooflineRow {
    pub intensity: f64,
    pub algorithm: String,
    pub effective_flops: f64,
}

/// Sweeps the model over an intensity grid for plotting. Each intensity is
/// realized by the square shape `N = 1.5 * intensity` (where the plain
/// product's intensity is `2N/3`), evaluated continuously without grid
/// padding. Rows come out per intensity, plain product first, then the
/// catalog in name order; at high intensity a scheme's rate approaches its
/// compute ceiling `flops_mul * mnk / R`, above the hardware peak.
pub fn roofline_table(
    catalog: &SchemeCatalog,
    hw: &HardwareProfile,
    intensities: &[f64],
) -> Vec<RooflineRow> {
    let mut rows = Vec::with_capacity(intensities.len() * (catalog.len() + 1));
    for &intensity in intensities {
        assert!(
            intensity.is_finite() && intensity > 0.0,
            "intensity must be finite and positive, got {intensity}"
        );
        let n = 1.5 * intensity;
        let work = 2.0 * n * n * n;
        let std_time = (work / hw.flops_mul).max(3.0 * n * n / hw.beta_elems);
        rows.push(RooflineRow {
            intensity,
            algorithm: STANDARD_GEMM_NAME.to_string(),
            effective_flops: work / std_time,
        });
        for (name, entry) in catalog.iter() {
            let time: f64 = stage_costs_model(&entry.scheme, n, n, n, hw, true)
                .iter()
                .map(|c| c.time_seconds)
                .sum();
            rows.push(RooflineRow {
                intensity,
                algorithm: name.to_string(),
                effective_flops: work / time,
            });
        }
    }
    rows
}

/// Seconds per run of `body`, as the median of `samples` timed runs after
/// one untimed warm-up.
fn timed_median<F: FnMut()>(samples: usize, mut body: F) -> Result<f64> {
    body();
    let mut times = Vec::with_capacity(samples);
    for _ in 0..samples {
        let start = Instant::now();
        body();
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    if median < 1e-4 {
        return Err(Error::Calibration(format!(
            "a microbenchmark finished in {:.1} us; the timer cannot resolve that reliably, increase the benchmark sizes",
            median * 1e6
        )));
    }
    Ok(median)
}

/// Measures a profile with three microbenchmarks, each timed `samples`
/// times (median kept): a blocked f32 GEMM for multiply-accumulate
/// throughput, repeated passes of a cache-resident elementwise add for add
/// throughput, and an out-of-cache copy for element bandwidth.
pub fn calibrate(samples: usize) -> Result<HardwareProfile> {
    if samples < 3 {
        return Err(Error::Calibration(format!(
            "need at least 3 samples for a stable median, got {samples}"
        )));
    }

    const GEMM_N: usize = 256;
    let a = Matrix::<f32>::random(GEMM_N, GEMM_N, 11);
    let b = Matrix::<f32>::random(GEMM_N, GEMM_N, 12);
    let gemm_time = timed_median(samples, || {
        let product = blocked_gemm(&a, &b, TileConfig::default(), &mut OpCounters::new())
            .expect("square operands always conform");
        std::hint::black_box(product);
    })?;
    let flops_mul = 2.0 * (GEMM_N * GEMM_N * GEMM_N) as f64 / gemm_time;

    // Small enough to stay cache-resident, so the adds are the limiter.
    const ADD_LEN: usize = 1 << 16;
    const ADD_PASSES: usize = 64;
    let xs: Vec<f32> = (0..ADD_LEN).map(|i| i as f32 * 0.5).collect();
    let ys: Vec<f32> = (0..ADD_LEN).map(|i| 1.0 - i as f32).collect();
    let mut zs = vec![0.0f32; ADD_LEN];
    let add_time = timed_median(samples, || {
        for _ in 0..ADD_PASSES {
            for ((z, x), y) in zs.iter_mut().zip(&xs).zip(&ys) {
                *z = *x + *y;
            }
            std::hint::black_box(&mut zs);
        }
    })?;
    let flops_add = (ADD_LEN * ADD_PASSES) as f64 / add_time;

    // Large enough to stream from memory; one pass reads and writes each
    // element once.
    const COPY_LEN: usize = 1 << 23;
    let src = vec![1.0f32; COPY_LEN];
    let mut dst = vec![0.0f32; COPY_LEN];
    let copy_time = timed_median(samples, || {
        dst.copy_from_slice(&src);
        std::hint::black_box(&mut dst);
    })?;
    let beta_elems = 2.0 * COPY_LEN as f64 / copy_time;

    let workers = std::thread::available_parallelism().map(|w| w.get()).unwrap_or(1);
    Ok(HardwareProfile::new(flops_mul, flops_add, beta_elems, workers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fused::{fused_gemm_combine_h, group_combine_a, group_combine_b, ExecConfig};
    use crate::grid::pad_partition;
    use crate::library::{builtin_catalog, strassen_scheme, Provenance};
    use crate::schedule::plan_split_group;
    use crate::scheme::standard_scheme;
    use crate::staged::{batched_gemm, combine_a, combine_b, combine_h};
    use proptest::prelude::*;

    fn ratio_100() -> HardwareProfile {
        HardwareProfile::new(1e12, 1e12, 1e10, 1)
    }

    fn divisible_shape(scheme: &LcmaScheme) -> (usize, usize, usize) {
        (scheme.m() * 16, scheme.n() * 16, scheme.k() * 16)
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(a.abs())
    }

    #[test]
    fn gemm_intensity_closed_forms() {
        assert_eq!(gemm_intensity(1, 1, 1), 2.0 / 3.0);
        assert!(rel_close(gemm_intensity(4096, 4096, 4096), 2.0 * 4096.0 / 3.0, 1e-12));
        assert!((gemm_intensity(4096, 4096, 4096) - 2730.0).abs() < 1.0);
        for n in [2usize, 17, 300] {
            assert!(rel_close(gemm_intensity(n, n, n), 2.0 * n as f64 / 3.0, 1e-12));
        }
    }

    #[test]
    fn stage_intensities_match_closed_forms() {
        let hw = ratio_100();
        for (_, entry) in builtin_catalog().unwrap().iter() {
            let scheme = &entry.scheme;
            let (m, n, k) = divisible_shape(scheme);
            let (gm, gk, gn) = (scheme.m() as f64, scheme.k() as f64, scheme.n() as f64);
            let rank = scheme.rank() as f64;
            let costs = stage_costs(scheme, m, n, k, &hw, false);
            let nnz_u = scheme.u().nnz() as f64;
            let nnz_v = scheme.v().nnz() as f64;
            let nnz_w = scheme.w().nnz() as f64;
            assert!(rel_close(costs[0].intensity, (nnz_u - rank) / (gm * gk + rank), 1e-12));
            assert!(rel_close(costs[1].intensity, (nnz_v - rank) / (gn * gk + rank), 1e-12));
            let (mf, nf, kf) = (m as f64, n as f64, k as f64);
            let gemm_want = 2.0 * mf * nf * kf / (gn * mf * kf + gm * nf * kf + gk * mf * nf);
            assert!(rel_close(costs[2].intensity, gemm_want, 1e-12));
            assert!(rel_close(costs[3].intensity, (nnz_w - gm * gn) / (rank + gm * gn), 1e-12));
        }
        let strassen = strassen_scheme();
        let costs = stage_costs(&strassen, 1024, 1024, 1024, &hw, false);
        assert!(rel_close(costs[0].intensity, 5.0 / 11.0, 1e-12));
    }

    /// The model rows against instrumented staged runs at divisible shapes:
    /// combine flops equal the adds counter, GEMM flops equal twice the
    /// multiply counter (multiply-accumulate convention), the GEMM row's
    /// traffic matches exactly, and combine traffic differs from the
    /// one-pass floor by the documented per-term re-read surplus.
    #[test]
    fn model_matches_staged_counters_at_divisible_shapes() {
        let hw = ratio_100();
        for (_, entry) in builtin_catalog().unwrap().iter() {
            let scheme = &entry.scheme;
            let (m, n, k) = divisible_shape(scheme);
            let costs = stage_costs(scheme, m, n, k, &hw, false);
            let a = Matrix::<i64>::random(m, k, 5);
            let b = Matrix::<i64>::random(k, n, 6);
            let a_grid = pad_partition(&a, scheme.m(), scheme.k());
            let b_grid = pad_partition(&b, scheme.k(), scheme.n());

            let mut ca = OpCounters::new();
            let a_tilde = combine_a(&a_grid, scheme, &mut ca).unwrap();
            let mut cb = OpCounters::new();
            let b_tilde = combine_b(&b_grid, scheme, &mut cb).unwrap();
            let mut cg = OpCounters::new();
            let h = batched_gemm(&a_tilde, &b_tilde, TileConfig::default(), &mut cg).unwrap();
            let mut ch = OpCounters::new();
            let c = combine_h(&h, scheme, (m, n), &mut ch);
            assert_eq!(c.rows(), m);

            assert_eq!(costs[0].flops, ca.scalar_adds as f64);
            assert_eq!(costs[1].flops, cb.scalar_adds as f64);
            assert_eq!(costs[2].flops, 2.0 * cg.scalar_multiplies as f64);
            assert_eq!(costs[3].flops, ch.scalar_adds as f64);

            assert_eq!(costs[2].mem_elements, (cg.elements_loaded + cg.elements_stored) as f64);

            // Per-term combine loads exceed the one-pass floor by
            // (nnz - blocks) * block_elems; the store side matches as is.
            let a_op = (m / scheme.m()) * (k / scheme.k());
            let b_op = (k / scheme.k()) * (n / scheme.n());
            let h_op = (m / scheme.m()) * (n / scheme.n());
            let surplus_a = (scheme.u().nnz() - scheme.m() * scheme.k()) * a_op;
            let surplus_b = (scheme.v().nnz() - scheme.k() * scheme.n()) * b_op;
            let surplus_h = (scheme.w().nnz() - scheme.rank()) * h_op;
            assert_eq!(
                (ca.elements_loaded + ca.elements_stored) as f64,
                costs[0].mem_elements + surplus_a as f64
            );
            assert_eq!(
                (cb.elements_loaded + cb.elements_stored) as f64,
                costs[1].mem_elements + surplus_b as f64
            );
            assert_eq!(
                (ch.elements_loaded + ch.elements_stored) as f64,
                costs[3].mem_elements + surplus_h as f64
            );
        }
    }

    /// The fused rows against instrumented fused phases. With the group
    /// tiling equal to the block size each operand tile is read exactly
    /// once, so the fused GEMM + combine-H traffic meets the model floor.
    #[test]
    fn model_matches_fused_counters_at_divisible_shapes() {
        let hw = ratio_100();
        let scheme = strassen_scheme();
        let (m, n, k) = (64, 64, 64);
        let costs = stage_costs(&scheme, m, n, k, &hw, true);
        let a = Matrix::<i64>::random(m, k, 7);
        let b = Matrix::<i64>::random(k, n, 8);
        let block = 32;
        let config: ExecConfig<i64> =
            ExecConfig::default().with_workers(1).with_tiles(block, block, block);

        let mut ca = OpCounters::new();
        let a_tilde = group_combine_a(&a, &scheme, &config, &mut ca).unwrap();
        let mut cb = OpCounters::new();
        let b_tilde = group_combine_b(&b, &scheme, &config, &mut cb).unwrap();
        assert_eq!((ca.elements_loaded + ca.elements_stored) as f64, costs[0].mem_elements);
        assert_eq!((cb.elements_loaded + cb.elements_stored) as f64, costs[1].mem_elements);
        assert_eq!(ca.scalar_adds as f64, costs[0].flops);
        assert_eq!(cb.scalar_adds as f64, costs[1].flops);

        let schedule = plan_split_group(1, scheme.rank(), 1);
        let mut cf = OpCounters::new();
        let c =
            fused_gemm_combine_h(&a_tilde, &b_tilde, &scheme, &schedule, &config, (m, n), &mut cf)
                .unwrap();
        assert_eq!(c.rows(), m);
        assert_eq!(
            (cf.elements_loaded + cf.elements_stored) as f64,
            costs[2].mem_elements + costs[3].mem_elements
        );
        assert_eq!(2.0 * cf.scalar_multiplies as f64, costs[2].flops);
    }

    #[test]
    fn std_gemm_boundedness_examples() {
        let hw = ratio_100();
        assert!(std_gemm_memory_bound(64, 64, 64, &hw));
        assert!(!std_gemm_memory_bound(4096, 4096, 4096, &hw));
        // Unlimited bandwidth relative to compute: nothing is memory-bound.
        let fat_pipe = HardwareProfile::new(1.0, 1.0, 1e12, 1);
        assert!(!std_gemm_memory_bound(1, 1, 1, &fat_pipe));
    }

    /// Square fused Strassen under a 100x compute-to-bandwidth profile
    /// reduces to the condition N/26 > 100, so the crossover sits exactly
    /// at N = 2600.
    #[test]
    fn strassen_square_crossover_at_2600() {
        let hw = ratio_100();
        let strassen = strassen_scheme();
        assert!(!lcma_beneficial(&strassen, 1024, 1024, 1024, &hw, true));
        assert!(!lcma_beneficial(&strassen, 2600, 2600, 2600, &hw, true));
        assert!(lcma_beneficial(&strassen, 2626, 2626, 2626, &hw, true));
        assert!(lcma_beneficial(&strassen, 4096, 4096, 4096, &hw, true));

        // A scheme with no rank saving can never win.
        let standard = standard_scheme(2, 2, 2);
        assert!(!lcma_beneficial(&standard, 4096, 4096, 4096, &hw, true));
        for (_, entry) in builtin_catalog().unwrap().iter() {
            let beneficial = lcma_beneficial(&entry.scheme, 4096, 4096, 4096, &hw, true);
            assert_eq!(beneficial, entry.scheme.lower_complexity());
        }
    }

    #[test]
    fn estimate_time_examples() {
        // Compute-bound plain product: 2 * 4096^3 FLOPs at 100 TFLOP/s.
        let hw = HardwareProfile::new(1e14, 1e12, 1e12, 1);
        let t = estimate_time(Algorithm::StandardGemm, 4096, 4096, 4096, &hw, true);
        assert!(rel_close(t, 1.3744e-3, 1e-3));

        // With bandwidth and combine throughput out of the picture the
        // scheme time collapses to its GEMM compute: 7/8 of the plain
        // product for Strassen.
        let wide_pipe = HardwareProfile::new(1e12, 1e30, 1e30, 1);
        let strassen = strassen_scheme();
        let lcma = estimate_time(Algorithm::Lcma(&strassen), 4096, 4096, 4096, &wide_pipe, true);
        let std = estimate_time(Algorithm::StandardGemm, 4096, 4096, 4096, &wide_pipe, true);
        assert!(rel_close(lcma / std, 7.0 / 8.0, 1e-9));
    }

    #[test]
    fn select_frozen_values() {
        let hw = ratio_100();
        let catalog = builtin_catalog().unwrap();

        let big = select(&catalog, 4096, 4096, 4096, &hw);
        assert_eq!(big.choice, Choice::Scheme("strassen2-4x4x4-r49".to_string()));
        assert!(big.fused);
        assert!(rel_close(big.predicted_speedup, 1.14023, 1e-3));
        assert_eq!(big.candidates.len(), catalog.len() + 1);
        assert_eq!(big.candidates[0].name, STANDARD_GEMM_NAME);
        let names: Vec<&str> = big.candidates[1..].iter().map(|c| c.name.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        assert_eq!(names, sorted);

        let small = select(&catalog, 64, 64, 64, &hw);
        assert_eq!(small.choice, Choice::StandardGemm);
        assert_eq!(small.predicted_speedup, 1.0);
    }

    #[test]
    fn select_with_only_the_rank_preserving_scheme_keeps_the_plain_product() {
        let mut catalog = SchemeCatalog::new();
        catalog.register(standard_scheme(2, 2, 2), Provenance::Builtin).unwrap();
        let decision = select(&catalog, 4096, 4096, 4096, &ratio_100());
        assert_eq!(decision.choice, Choice::StandardGemm);
        assert!(decision.predicted_speedup <= 1.0 + 1e-12);
    }

    #[test]
    fn roofline_ceilings_and_ordering() {
        let hw = ratio_100();
        let catalog = builtin_catalog().unwrap();
        let rows = roofline_table(&catalog, &hw, &[1e7]);
        assert_eq!(rows.len(), catalog.len() + 1);
        assert_eq!(rows[0].algorithm, STANDARD_GEMM_NAME);
        assert!(rel_close(rows[0].effective_flops, 1e12, 1e-9));
        let eff = |name: &str| {
            rows.iter().find(|r| r.algorithm == name).map(|r| r.effective_flops).unwrap()
        };
        assert!(rel_close(eff("strassen-2x2x2-r7"), 8.0 / 7.0 * 1e12, 1e-3));
        assert!(rel_close(eff("strassen2-4x4x4-r49"), 64.0 / 49.0 * 1e12, 1e-3));
        assert!(rel_close(eff("laderman-3x3x3-r23"), 27.0 / 23.0 * 1e12, 1e-3));

        // The sweep works off a continuous shape, so an empty catalog still
        // yields the baseline line.
        let empty = SchemeCatalog::new();
        let base_only = roofline_table(&empty, &hw, &[100.0, 1000.0]);
        assert_eq!(base_only.len(), 2);
        assert!(base_only.iter().all(|r| r.algorithm == STANDARD_GEMM_NAME));
    }

    /// At intensities realized by grid-divisible square shapes, the best
    /// roofline row is exactly the algorithm select() picks there.
    #[test]
    fn roofline_best_row_agrees_with_select() {
        let hw = ratio_100();
        let catalog = builtin_catalog().unwrap();
        for intensity in [32.0, 256.0, 1024.0, 4096.0] {
            let n = (1.5 * intensity) as usize;
            assert_eq!(n % 12, 0, "test shapes must be divisible by every builtin grid");
            let rows = roofline_table(&catalog, &hw, &[intensity]);
            let best = rows
                .iter()
                .max_by(|a, b| a.effective_flops.total_cmp(&b.effective_flops))
                .unwrap();
            let decision = select(&catalog, n, n, n, &hw);
            assert_eq!(best.algorithm, decision.choice.to_string(), "intensity {intensity}");
        }
    }

    /// The higher-rank composed scheme has the higher ceiling but the
    /// heavier combines, so it overtakes Strassen only past a crossover
    /// intensity; under the 100x profile that sits at N = 1200 (I = 800).
    #[test]
    fn rank49_overtakes_strassen_past_a_crossover() {
        let hw = ratio_100();
        let catalog = builtin_catalog().unwrap();
        let eff = |rows: &[RooflineRow], name: &str| {
            rows.iter().find(|r| r.algorithm == name).map(|r| r.effective_flops).unwrap()
        };
        let low = roofline_table(&catalog, &hw, &[400.0]);
        assert!(eff(&low, "strassen-2x2x2-r7") > eff(&low, "strassen2-4x4x4-r49"));
        let high = roofline_table(&catalog, &hw, &[1600.0]);
        assert!(eff(&high, "strassen2-4x4x4-r49") > eff(&high, "strassen-2x2x2-r7"));
    }

    #[test]
    fn profile_file_round_trip_and_errors() {
        let profile = HardwareProfile::new(3.7421e9, 1.25e9, 8.5e8, 4);
        let mut buf = Vec::new();
        write_profile(&profile, &mut buf).unwrap();
        let parsed = parse_profile(std::str::from_utf8(&buf).unwrap(), "buf").unwrap();
        assert_eq!(parsed, profile);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("machine.profile");
        save_profile(&profile, &path).unwrap();
        assert_eq!(load_profile(&path).unwrap(), profile);

        let ok = "# desk machine\nflops_mul = 1e12\n\nflops_add=2e11 # measured\nbeta_elems=1e10\nworkers=8\n";
        let parsed = parse_profile(ok, "inline").unwrap();
        assert_eq!(parsed.flops_add, 2e11);
        assert_eq!(parsed.workers, 8);

        let cases = [
            ("flops_mul=1e12\nflops_add=1e12\nbeta_elems=1e10\n", 3, "missing key"),
            ("flops_mul=1e12\nflops_mul=1e12\nflops_add=1\nbeta_elems=1\nworkers=1\n", 2, "duplicate"),
            ("flops_mul=fast\n", 1, "bad value"),
            ("flops_mul=-1e12\n", 1, "positive"),
            ("flops_mul=1e12\nworkers=2.5\nflops_add=1\nbeta_elems=1\n", 2, "integer"),
            ("throughput=1e12\n", 1, "unknown key"),
            ("flops_mul\n", 1, "key=value"),
        ];
        for (text, want_line, want_msg) in cases {
            match parse_profile(text, "inline") {
                Err(Error::Parse { line, message, .. }) => {
                    assert_eq!(line, want_line, "{text:?}");
                    assert!(message.contains(want_msg), "{message:?} missing {want_msg:?}");
                }
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn calibrate_validates_and_produces_positive_rates() {
        match calibrate(2) {
            Err(Error::Calibration(msg)) => assert!(msg.contains("3 samples")),
            other => panic!("expected a calibration error, got {other:?}"),
        }
        let profile = calibrate(3).unwrap();
        assert!(profile.flops_mul > 0.0 && profile.flops_mul.is_finite());
        assert!(profile.flops_add > 0.0 && profile.flops_add.is_finite());
        assert!(profile.beta_elems > 0.0 && profile.beta_elems.is_finite());
        assert!(profile.workers >= 1);
        // Loose sanity band; anything outside it means a unit slipped.
        assert!(profile.flops_mul > 1e6 && profile.flops_mul < 1e13);
    }

    prop_compose! {
        fn arb_shape()(m in 1usize..=4096, n in 1usize..=4096, k in 1usize..=4096) -> (usize, usize, usize) {
            (m, n, k)
        }
    }

    prop_compose! {
        /// Profiles where combine stages are memory-bound: add throughput at
        /// least 16x bandwidth, above every builtin combine intensity (the
        /// largest is 8, the fused combine-H of the rank-49 scheme).
        fn arb_regime_profile()(
            beta_exp in 6.0f64..11.0,
            add_ratio in 16.0f64..500.0,
            mul_ratio in 0.5f64..500.0,
        ) -> HardwareProfile {
            let beta = 10f64.powf(beta_exp);
            HardwareProfile::new(beta * mul_ratio, beta * add_ratio, beta, 1)
        }
    }

    prop_compose! {
        fn arb_any_profile()(
            beta_exp in 6.0f64..11.0,
            add_ratio in 0.01f64..1000.0,
            mul_ratio in 0.01f64..1000.0,
        ) -> HardwareProfile {
            let beta = 10f64.powf(beta_exp);
            HardwareProfile::new(beta * mul_ratio, beta * add_ratio, beta, 1)
        }
    }

    proptest! {
        /// In the combine-memory-bound regime the benefit inequality and the
        /// time comparison coincide: both reduce to the same stage model
        /// because a winning scheme's GEMM stage is automatically
        /// compute-bound (every builtin has mnk <= 2R).
        #[test]
        fn beneficial_iff_estimated_faster_in_regime(
            (m, n, k) in arb_shape(),
            hw in arb_regime_profile(),
            fused in proptest::bool::ANY,
        ) {
            let catalog = builtin_catalog().unwrap();
            let std_time = estimate_time(Algorithm::StandardGemm, m, n, k, &hw, fused);
            for (_, entry) in catalog.iter() {
                let scheme = &entry.scheme;
                let lcma_time = estimate_time(Algorithm::Lcma(scheme), m, n, k, &hw, fused);
                prop_assert_eq!(
                    lcma_beneficial(scheme, m, n, k, &hw, fused),
                    lcma_time < std_time,
                    "scheme {} shape {}x{}x{} fused {}", scheme.name(), m, n, k, fused
                );
            }
        }

        /// One direction needs no regime at all: a scheme predicted faster
        /// than the plain product is always flagged beneficial. The guard
        /// band keeps float rounding at exact ties out of the verdict.
        #[test]
        fn estimated_wins_imply_beneficial_for_any_profile(
            (m, n, k) in arb_shape(),
            hw in arb_any_profile(),
            fused in proptest::bool::ANY,
        ) {
            let catalog = builtin_catalog().unwrap();
            let std_time = estimate_time(Algorithm::StandardGemm, m, n, k, &hw, fused);
            for (_, entry) in catalog.iter() {
                let scheme = &entry.scheme;
                let lcma_time = estimate_time(Algorithm::Lcma(scheme), m, n, k, &hw, fused);
                if lcma_time < std_time * (1.0 - 1e-9) {
                    prop_assert!(
                        lcma_beneficial(scheme, m, n, k, &hw, fused),
                        "scheme {} shape {}x{}x{} fused {}", scheme.name(), m, n, k, fused
                    );
                }
            }
        }

        /// More bandwidth never turns a winning scheme into a losing one.
        #[test]
        fn benefit_is_monotone_in_bandwidth(
            (m, n, k) in arb_shape(),
            hw in arb_any_profile(),
            scale in 1.0f64..1000.0,
            fused in proptest::bool::ANY,
        ) {
            let wider = HardwareProfile::new(hw.flops_mul, hw.flops_add, hw.beta_elems * scale, hw.workers);
            for (_, entry) in builtin_catalog().unwrap().iter() {
                if lcma_beneficial(&entry.scheme, m, n, k, &hw, fused) {
                    prop_assert!(lcma_beneficial(&entry.scheme, m, n, k, &wider, fused));
                }
            }
        }

        /// Fusing only removes traffic terms, so its estimate never loses.
        #[test]
        fn fused_estimate_never_exceeds_unfused(
            (m, n, k) in arb_shape(),
            hw in arb_any_profile(),
        ) {
            for (_, entry) in builtin_catalog().unwrap().iter() {
                let scheme = &entry.scheme;
                let fused = estimate_time(Algorithm::Lcma(scheme), m, n, k, &hw, true);
                let unfused = estimate_time(Algorithm::Lcma(scheme), m, n, k, &hw, false);
                prop_assert!(fused <= unfused, "scheme {}", scheme.name());
                let fc = stage_costs(scheme, m, n, k, &hw, true);
                let uc = stage_costs(scheme, m, n, k, &hw, false);
                for (f, u) in fc.iter().zip(&uc) {
                    prop_assert!(f.mem_elements <= u.mem_elements);
                    prop_assert_eq!(f.flops, u.flops);
                }
            }
        }

        /// Bandwidth-bound shapes always fall back to the plain product.
        #[test]
        fn select_returns_plain_product_when_memory_bound(
            (m, n, k) in arb_shape(),
            hw in arb_any_profile(),
        ) {
            if std_gemm_memory_bound(m, n, k, &hw) {
                let decision = select(&builtin_catalog().unwrap(), m, n, k, &hw);
                prop_assert_eq!(decision.choice, Choice::StandardGemm);
            }
        }

        /// The chosen candidate is a minimizer of the candidate table.
        #[test]
        fn select_choice_minimizes_candidate_times(
            (m, n, k) in arb_shape(),
            hw in arb_regime_profile(),
        ) {
            let decision = select(&builtin_catalog().unwrap(), m, n, k, &hw);
            if !std_gemm_memory_bound(m, n, k, &hw) {
                let chosen_name = decision.choice.to_string();
                let chosen = decision.candidates.iter().find(|c| c.name == chosen_name).unwrap();
                for cand in &decision.candidates {
                    prop_assert!(chosen.seconds <= cand.seconds);
                }
            }
        }
    }
}
