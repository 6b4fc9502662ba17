//! Fused group-parallel execution: the product and fold stages run per
//! output tile, keeping every intermediate product in worker-local buffers.
//!
//! The operands A~ and B~ are still materialized once (group combines), but
//! H_r tiles are computed, folded into per-group C accumulators, and
//! discarded without ever being stored: the counters record zero H traffic.
//! Work is dealt by [`plan_split_group`]; a group split across workers has
//! its partial C tiles merged deterministically after the parallel phase.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::counters::OpCounters;
use crate::error::{Error, Result};
use crate::gemm::{Accum, NativeAcc, WideAcc};
use crate::grid::{expect_grid, pad_partition, GridView};
use crate::matrix::{Element, Matrix};
use crate::scheme::{CoeffTensor, LcmaScheme};
use crate::schedule::{cache_aware_reorder, plan_split_group, TileSchedule, WorkItem};

/// Output-tile group coordinates: tile column x (over padded C rows), tile
/// row z (over padded C columns), and the flattened id the schedule uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupCoord {
    pub x: usize,
    pub z: usize,
    pub id: usize,
}

impl GroupCoord {
    /// Decodes a flat group id against the tile-grid width `zt`.
    pub fn from_id(id: usize, zt: usize) -> Self {
        Self { x: id / zt, z: id % zt, id }
    }
}

/// B~ operands built once from a fixed B, reusable across fused runs
/// (static-weights pattern). Checked against the scheme and B dims at use.
#[derive(Clone, Debug)]
pub struct PrecombinedB<T: Element> {
    b_tilde: Vec<Matrix<T>>,
    scheme_name: String,
    scheme_dims: (usize, usize, usize, usize),
    src_rows: usize,
    src_cols: usize,
    /// Traffic and arithmetic the combine cost, for callers that amortize it.
    pub combine_counters: OpCounters,
}

impl<T: Element> PrecombinedB<T> {
    pub fn b_tilde(&self) -> &[Matrix<T>] {
        &self.b_tilde
    }
}

/// Execution parameters of the fused path.
///
/// `tile_m` x `tile_n` is the C tile a group owns; `tile_k` is the K panel
/// of the inner product loop. `wide_h_accumulate` keeps H tiles and C
/// accumulators in [`Element::Wide`] precision, narrowing once at the final
/// store. `group_buffer_limit` bounds how many group buffers one worker may
/// hold live; plans needing more fail up front.
#[derive(Clone, Debug)]
pub struct ExecConfig<T: Element> {
    pub tile_m: usize,
    pub tile_n: usize,
    pub tile_k: usize,
    pub workers: usize,
    pub cache_aware: bool,
    pub wide_h_accumulate: bool,
    pub group_buffer_limit: Option<usize>,
    pub precombined_b: Option<Arc<PrecombinedB<T>>>,
}

impl<T: Element> Default for ExecConfig<T> {
    fn default() -> Self {
        Self {
            tile_m: 64,
            tile_n: 64,
            tile_k: 64,
            workers: std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1),
            cache_aware: false,
            wide_h_accumulate: false,
            group_buffer_limit: None,
            precombined_b: None,
        }
    }
}

impl<T: Element> ExecConfig<T> {
    pub fn with_workers(mut self, workers: usize) -> Self {
        assert!(workers >= 1, "worker count must be positive");
        self.workers = workers;
        self
    }

    pub fn with_tiles(mut self, tile_m: usize, tile_n: usize, tile_k: usize) -> Self {
        assert!(tile_m >= 1 && tile_n >= 1 && tile_k >= 1, "tile dims must be positive");
        self.tile_m = tile_m;
        self.tile_n = tile_n;
        self.tile_k = tile_k;
        self
    }
}

/// Splits each matrix in `mats` into row bands of `band_rows`, regrouped so
/// `bands[i]` holds band i of every matrix. Lets one parallel loop own a
/// horizontal stripe of all R outputs at once.
fn row_bands<'m, T: Element>(mats: &'m mut [Matrix<T>], band_rows: usize) -> Vec<Vec<&'m mut [T]>> {
    let rows = mats[0].rows();
    let cols = mats[0].cols();
    let num_bands = rows.div_ceil(band_rows);
    let mut bands: Vec<Vec<&'m mut [T]>> = (0..num_bands).map(|_| Vec::with_capacity(mats.len())).collect();
    for mat in mats.iter_mut() {
        assert_eq!((mat.rows(), mat.cols()), (rows, cols), "uneven output shapes");
        for (band, chunk) in mat.data_mut().chunks_mut(band_rows * cols).enumerate() {
            bands[band].push(chunk);
        }
    }
    bands
}

/// Applies `coeff` to `v` and folds into `acc` in working precision.
#[inline]
fn fold<T: Element>(acc: T, coeff: i8, v: T) -> T {
    if coeff == 1 {
        acc.add(v)
    } else {
        acc.sub(v)
    }
}

/// Shared body of the two group combines: walk the output space in
/// (band x tile) units, load the unit's source tiles once, and emit all R
/// combined tiles from that one load. In-range source elements are counted
/// exactly once; arithmetic and stores cover the padded extent.
fn group_combine<T: Element>(
    grid: &GridView<'_, T>,
    tensor: &CoeffTensor,
    band_rows: usize,
    tile_cols: usize,
    counters: &mut OpCounters,
) -> Vec<Matrix<T>> {
    let (rank, gr, gc) = tensor.dims();
    let (br, bc) = (grid.block_rows(), grid.block_cols());
    let mut outputs: Vec<Matrix<T>> = (0..rank).map(|_| Matrix::zeros(br, bc)).collect();

    let bands = row_bands(&mut outputs, band_rows);
    let total: OpCounters = bands
        .into_par_iter()
        .enumerate()
        .map(|(band, mut slices)| {
            let mut local = OpCounters::new();
            let x0 = band * band_rows;
            let bh = band_rows.min(br - x0);
            let mut unit = vec![T::ZERO; gr * gc * band_rows * tile_cols];
            for y0 in (0..bc).step_by(tile_cols) {
                let uw = tile_cols.min(bc - y0);
                // One pass over the unit's source tiles.
                for i in 0..gr {
                    for l in 0..gc {
                        let dst = &mut unit[(i * gc + l) * band_rows * tile_cols..];
                        let rows_in =
                            grid.src().rows().saturating_sub(i * br + x0).min(bh);
                        let cols_in =
                            grid.src().cols().saturating_sub(l * bc + y0).min(uw);
                        for x in 0..bh {
                            for y in 0..uw {
                                dst[x * uw + y] = grid.get(i, l, x0 + x, y0 + y);
                            }
                        }
                        local.elements_loaded += (rows_in * cols_in) as u64;
                    }
                }
                // Emit all R tiles from the loaded unit.
                for (r, out_band) in slices.iter_mut().enumerate() {
                    let mut first = true;
                    for i in 0..gr {
                        for l in 0..gc {
                            let coeff = tensor.get(r, i, l);
                            if coeff == 0 {
                                continue;
                            }
                            let src = &unit[(i * gc + l) * band_rows * tile_cols..];
                            if first {
                                first = false;
                                for x in 0..bh {
                                    for y in 0..uw {
                                        out_band[x * bc + y0 + y] = fold(T::ZERO, coeff, src[x * uw + y]);
                                    }
                                }
                            } else {
                                local.scalar_adds += (bh * uw) as u64;
                                for x in 0..bh {
                                    for y in 0..uw {
                                        let cur = out_band[x * bc + y0 + y];
                                        out_band[x * bc + y0 + y] = fold(cur, coeff, src[x * uw + y]);
                                    }
                                }
                            }
                        }
                    }
                    if first {
                        for x in 0..bh {
                            for y in 0..uw {
                                out_band[x * bc + y0 + y] = T::ZERO;
                            }
                        }
                    }
                    local.elements_stored += (bh * uw) as u64;
                }
            }
            local
        })
        .sum();
    *counters += total;
    outputs
}

/// Stage 1 of a fused run: A~ operands built with single-pass source loads
/// (counts exactly A's in-range elements once).
pub fn group_combine_a<T: Element>(
    a: &Matrix<T>,
    scheme: &LcmaScheme,
    config: &ExecConfig<T>,
    counters: &mut OpCounters,
) -> Result<Vec<Matrix<T>>> {
    let grid = pad_partition(a, scheme.m(), scheme.k());
    expect_grid(&grid, scheme.name(), scheme.m(), scheme.k())?;
    Ok(group_combine(&grid, scheme.u(), config.tile_m, config.tile_k, counters))
}

/// Stage 2 of a fused run: B~ operands, same load discipline as
/// [`group_combine_a`].
pub fn group_combine_b<T: Element>(
    b: &Matrix<T>,
    scheme: &LcmaScheme,
    config: &ExecConfig<T>,
    counters: &mut OpCounters,
) -> Result<Vec<Matrix<T>>> {
    let grid = pad_partition(b, scheme.k(), scheme.n());
    expect_grid(&grid, scheme.name(), scheme.k(), scheme.n())?;
    Ok(group_combine(&grid, scheme.v(), config.tile_k, config.tile_n, counters))
}

/// Builds B~ once for a fixed B, for reuse via
/// [`ExecConfig::precombined_b`] across repeated multiplies.
pub fn precombine_b<T: Element>(b: &Matrix<T>, scheme: &LcmaScheme) -> Result<PrecombinedB<T>> {
    scheme.ensure_valid()?;
    let mut counters = OpCounters::new();
    let config = ExecConfig::<T>::default();
    let b_tilde = group_combine_b(b, scheme, &config, &mut counters)?;
    Ok(PrecombinedB {
        b_tilde,
        scheme_name: scheme.name().to_string(),
        scheme_dims: (scheme.m(), scheme.k(), scheme.n(), scheme.rank()),
        src_rows: b.rows(),
        src_cols: b.cols(),
        combine_counters: counters,
    })
}

/// One worker's partial result for one group: clipped C-tile accumulators
/// per (i, j) output block, plus the smallest r it folded (merge order key).
struct Portion<A> {
    group: usize,
    min_r: usize,
    hr: usize,
    hc: usize,
    subtiles: Vec<A>,
    assigned: Vec<bool>,
}

struct WorkerOutput<A> {
    portions: Vec<Portion<A>>,
    counters: OpCounters,
}

fn run_worker<T: Element, A: Accum<T>>(
    items: &[WorkItem],
    a_tilde: &[Matrix<T>],
    b_tilde: &[Matrix<T>],
    w: &CoeffTensor,
    zt: usize,
    tile_m: usize,
    tile_n: usize,
    tile_k: usize,
) -> WorkerOutput<A> {
    let (m, n) = (w.dims().1, w.dims().2);
    let bm = a_tilde[0].rows();
    let bk = a_tilde[0].cols();
    let bn = b_tilde[0].cols();

    let mut portions: Vec<Portion<A>> = Vec::new();
    let mut index: HashMap<usize, usize> = HashMap::new();
    let mut counters = OpCounters::new();
    let mut h_tile: Vec<A> = vec![A::zero(); tile_m * tile_n];

    for item in items {
        let coord = GroupCoord::from_id(item.group, zt);
        let (x0, z0) = (coord.x * tile_m, coord.z * tile_n);
        let hr = tile_m.min(bm - x0);
        let hc = tile_n.min(bn - z0);
        let a_r = &a_tilde[item.r];
        let b_r = &b_tilde[item.r];

        // H tile for (group, r), never stored: accumulate over the K panels.
        for k0 in (0..bk).step_by(tile_k) {
            let k_end = (k0 + tile_k).min(bk);
            for xi in 0..hr {
                let a_row = a_r.row(x0 + xi);
                let h_row = &mut h_tile[xi * hc..(xi + 1) * hc];
                for kk in k0..k_end {
                    let aik = a_row[kk];
                    let b_row = &b_r.row(kk)[z0..z0 + hc];
                    if kk == 0 {
                        for (h, &bv) in h_row.iter_mut().zip(b_row) {
                            *h = A::from_prod(aik, bv);
                        }
                    } else {
                        for (h, &bv) in h_row.iter_mut().zip(b_row) {
                            *h = h.fma(aik, bv);
                        }
                    }
                }
            }
        }
        counters.scalar_multiplies += (hr * hc * bk) as u64;
        counters.scalar_adds += (hr * hc * (bk - 1)) as u64;
        counters.elements_loaded += ((hr + hc) * bk) as u64;

        // Fold the tile into this worker's group accumulators.
        let slot = *index.entry(item.group).or_insert_with(|| {
            portions.push(Portion {
                group: item.group,
                min_r: item.r,
                hr,
                hc,
                subtiles: vec![A::zero(); m * n * hr * hc],
                assigned: vec![false; m * n],
            });
            portions.len() - 1
        });
        let portion = &mut portions[slot];
        portion.min_r = portion.min_r.min(item.r);
        for i in 0..m {
            for j in 0..n {
                let coeff = w.get(item.r, i, j);
                if coeff == 0 {
                    continue;
                }
                let sub = &mut portion.subtiles[(i * n + j) * hr * hc..(i * n + j + 1) * hr * hc];
                let flag = &mut portion.assigned[i * n + j];
                if *flag {
                    counters.scalar_adds += (hr * hc) as u64;
                    if coeff == 1 {
                        for (acc, &h) in sub.iter_mut().zip(&h_tile[..hr * hc]) {
                            *acc = acc.add(h);
                        }
                    } else {
                        for (acc, &h) in sub.iter_mut().zip(&h_tile[..hr * hc]) {
                            *acc = acc.sub(h);
                        }
                    }
                } else {
                    *flag = true;
                    if coeff == 1 {
                        sub.copy_from_slice(&h_tile[..hr * hc]);
                    } else {
                        for (acc, &h) in sub.iter_mut().zip(&h_tile[..hr * hc]) {
                            *acc = A::zero().sub(h);
                        }
                    }
                }
            }
        }
    }
    WorkerOutput { portions, counters }
}

fn fused_body<T: Element, A: Accum<T>>(
    a_tilde: &[Matrix<T>],
    b_tilde: &[Matrix<T>],
    scheme: &LcmaScheme,
    schedule: &TileSchedule,
    config: &ExecConfig<T>,
    out_shape: (usize, usize),
    counters: &mut OpCounters,
) -> Result<Matrix<T>> {
    let (m, n) = (scheme.m(), scheme.n());
    let bm = a_tilde[0].rows();
    let bn = b_tilde[0].cols();
    let zt = bn.div_ceil(config.tile_n);
    let (out_rows, out_cols) = out_shape;

    // Parallel phase: exactly `workers` OS threads, each with a fixed list.
    let outputs: Vec<WorkerOutput<A>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..schedule.workers)
            .map(|widx| {
                let items = &schedule.assignments[widx];
                scope.spawn(move || {
                    run_worker::<T, A>(
                        items,
                        a_tilde,
                        b_tilde,
                        scheme.w(),
                        zt,
                        config.tile_m,
                        config.tile_n,
                        config.tile_k,
                    )
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });

    // Deterministic merge: portions of a group ordered by first folded r.
    let mut per_group: Vec<Vec<Portion<A>>> = (0..schedule.num_groups).map(|_| Vec::new()).collect();
    for output in outputs {
        *counters += output.counters;
        for portion in output.portions {
            per_group[portion.group].push(portion);
        }
    }

    let mut out = Matrix::zeros(out_rows, out_cols);
    for (gid, mut portions) in per_group.into_iter().enumerate() {
        if portions.is_empty() {
            continue;
        }
        portions.sort_by_key(|p| p.min_r);
        let mut merged = portions.remove(0);
        for portion in portions {
            assert_eq!((portion.hr, portion.hc), (merged.hr, merged.hc));
            let area = merged.hr * merged.hc;
            for ij in 0..m * n {
                match (merged.assigned[ij], portion.assigned[ij]) {
                    (true, true) => {
                        counters.scalar_adds += area as u64;
                        let dst = &mut merged.subtiles[ij * area..(ij + 1) * area];
                        let src = &portion.subtiles[ij * area..(ij + 1) * area];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = d.add(s);
                        }
                    }
                    (false, true) => {
                        merged.subtiles[ij * area..(ij + 1) * area]
                            .copy_from_slice(&portion.subtiles[ij * area..(ij + 1) * area]);
                        merged.assigned[ij] = true;
                    }
                    _ => {}
                }
            }
        }

        // Scatter: narrow once, store only in-range C elements.
        let coord = GroupCoord::from_id(gid, zt);
        let (x0, z0) = (coord.x * config.tile_m, coord.z * config.tile_n);
        let area = merged.hr * merged.hc;
        for i in 0..m {
            for j in 0..n {
                if !merged.assigned[i * n + j] {
                    continue;
                }
                let row_base = i * bm + x0;
                let col_base = j * bn + z0;
                let rows_in = out_rows.saturating_sub(row_base).min(merged.hr);
                let cols_in = out_cols.saturating_sub(col_base).min(merged.hc);
                let sub = &merged.subtiles[(i * n + j) * area..(i * n + j + 1) * area];
                for xi in 0..rows_in {
                    for yi in 0..cols_in {
                        out.set(row_base + xi, col_base + yi, sub[xi * merged.hc + yi].finish());
                    }
                }
                counters.elements_stored += (rows_in * cols_in) as u64;
            }
        }
    }
    Ok(out)
}

/// Stages 3+4 fused: runs `schedule` over the group grid implied by the
/// operand shapes and `config` tiles, folding H tiles straight into C.
///
/// The schedule must cover every (group, r) pair exactly once for that grid.
pub fn fused_gemm_combine_h<T: Element>(
    a_tilde: &[Matrix<T>],
    b_tilde: &[Matrix<T>],
    scheme: &LcmaScheme,
    schedule: &TileSchedule,
    config: &ExecConfig<T>,
    out_shape: (usize, usize),
    counters: &mut OpCounters,
) -> Result<Matrix<T>> {
    let rank = scheme.rank();
    assert_eq!(a_tilde.len(), rank, "one A~ operand per product");
    assert_eq!(b_tilde.len(), rank, "one B~ operand per product");
    if a_tilde[0].cols() != b_tilde[0].rows() {
        return Err(Error::DimMismatch {
            a_rows: a_tilde[0].rows(),
            a_cols: a_tilde[0].cols(),
            b_rows: b_tilde[0].rows(),
            b_cols: b_tilde[0].cols(),
        });
    }

    let xt = a_tilde[0].rows().div_ceil(config.tile_m);
    let zt = b_tilde[0].cols().div_ceil(config.tile_n);
    if schedule.num_groups != xt * zt || schedule.rank != rank {
        return Err(Error::ScheduleMismatch {
            message: format!(
                "schedule covers {} groups at rank {}, run needs {} groups at rank {}",
                schedule.num_groups,
                schedule.rank,
                xt * zt,
                rank
            ),
        });
    }
    let mut seen = vec![false; schedule.num_groups * rank];
    for item in schedule.assignments.iter().flatten() {
        if item.group >= schedule.num_groups || item.r >= rank {
            return Err(Error::ScheduleMismatch {
                message: format!("item (group {}, r {}) is out of range", item.group, item.r),
            });
        }
        let idx = item.group * rank + item.r;
        if seen[idx] {
            return Err(Error::ScheduleMismatch {
                message: format!("item (group {}, r {}) assigned twice", item.group, item.r),
            });
        }
        seen[idx] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::ScheduleMismatch {
            message: format!("item (group {}, r {}) never assigned", missing / rank, missing % rank),
        });
    }
    if let Some(limit) = config.group_buffer_limit {
        for (widx, list) in schedule.assignments.iter().enumerate() {
            let mut groups: Vec<usize> = list.iter().map(|i| i.group).collect();
            groups.sort_unstable();
            groups.dedup();
            if groups.len() > limit {
                return Err(Error::BufferLimit { worker: widx, needed: groups.len(), limit });
            }
        }
    }

    if config.wide_h_accumulate {
        fused_body::<T, WideAcc<T>>(a_tilde, b_tilde, scheme, schedule, config, out_shape, counters)
    } else {
        fused_body::<T, NativeAcc<T>>(a_tilde, b_tilde, scheme, schedule, config, out_shape, counters)
    }
}

/// Full fused run: C = A * B through `scheme` with zero intermediate-product
/// traffic. Plans a split-group schedule over the config's tile grid,
/// optionally cache-aware reordered, and reuses a precombined B~ set when
/// the config carries one.
pub fn lcma_fused<T: Element>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    scheme: &LcmaScheme,
    config: &ExecConfig<T>,
    counters: &mut OpCounters,
) -> Result<Matrix<T>> {
    scheme.ensure_valid()?;
    if a.cols() != b.rows() {
        return Err(Error::DimMismatch {
            a_rows: a.rows(),
            a_cols: a.cols(),
            b_rows: b.rows(),
            b_cols: b.cols(),
        });
    }

    let a_tilde = group_combine_a(a, scheme, config, counters)?;
    let owned_b;
    let b_tilde: &[Matrix<T>] = match &config.precombined_b {
        Some(pre) => {
            let want = (scheme.m(), scheme.k(), scheme.n(), scheme.rank());
            if pre.scheme_name != scheme.name() || pre.scheme_dims != want {
                return Err(Error::PrecombineMismatch {
                    message: format!(
                        "built for scheme `{}` {:?}, run uses `{}` {:?}",
                        pre.scheme_name,
                        pre.scheme_dims,
                        scheme.name(),
                        want
                    ),
                });
            }
            if pre.src_rows != b.rows() || pre.src_cols != b.cols() {
                return Err(Error::PrecombineMismatch {
                    message: format!(
                        "built for a {}x{} B, run passes {}x{}",
                        pre.src_rows,
                        pre.src_cols,
                        b.rows(),
                        b.cols()
                    ),
                });
            }
            &pre.b_tilde
        }
        None => {
            owned_b = group_combine_b(b, scheme, config, counters)?;
            &owned_b
        }
    };

    let xt = a_tilde[0].rows().div_ceil(config.tile_m);
    let zt = b_tilde[0].cols().div_ceil(config.tile_n);
    let mut schedule = plan_split_group(xt * zt, scheme.rank(), config.workers);
    if config.cache_aware {
        schedule = cache_aware_reorder(&schedule);
    }
    fused_gemm_combine_h(&a_tilde, b_tilde, scheme, &schedule, config, (a.rows(), b.cols()), counters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gemm::naive_gemm;
    use crate::library::{builtin_catalog, strassen_scheme};
    use crate::staged::lcma_staged;
    use crate::gemm::TileConfig;
    use proptest::prelude::*;

    fn cfg(workers: usize, tiles: (usize, usize, usize)) -> ExecConfig<i64> {
        ExecConfig::default().with_workers(workers).with_tiles(tiles.0, tiles.1, tiles.2)
    }

    #[test]
    fn fused_matches_naive_for_every_builtin_scheme() {
        let catalog = builtin_catalog().unwrap();
        for scheme in catalog.schemes() {
            for (m_dim, k_dim, n_dim) in [(24, 24, 24), (100, 50, 30), (13, 7, 9), (1, 5, 3)] {
                let a = Matrix::<i64>::random(m_dim, k_dim, 21);
                let b = Matrix::<i64>::random(k_dim, n_dim, 22);
                let want = naive_gemm(&a, &b, &mut OpCounters::new()).unwrap();
                let got =
                    lcma_fused(&a, &b, scheme, &cfg(3, (8, 8, 8)), &mut OpCounters::new()).unwrap();
                assert_eq!(got, want, "{} at {m_dim}x{k_dim}x{n_dim}", scheme.name());
            }
        }
    }

    #[test]
    fn integer_output_is_identical_across_worker_counts_and_reorder() {
        let scheme = strassen_scheme();
        let a = Matrix::<i64>::random(96, 96, 31);
        let b = Matrix::<i64>::random(96, 96, 32);
        // tile 24 over 48x48 padded blocks: 4 groups, so 3 workers force a split.
        let reference =
            lcma_fused(&a, &b, &scheme, &cfg(1, (24, 24, 24)), &mut OpCounters::new()).unwrap();
        for workers in [2, 3, 4, 5, 16] {
            for cache_aware in [false, true] {
                let mut config = cfg(workers, (24, 24, 24));
                config.cache_aware = cache_aware;
                let got = lcma_fused(&a, &b, &scheme, &config, &mut OpCounters::new()).unwrap();
                assert_eq!(got, reference, "workers={workers} cache_aware={cache_aware}");
            }
        }
    }

    #[test]
    fn fused_equals_staged_in_integer_mode() {
        let catalog = builtin_catalog().unwrap();
        for scheme in catalog.schemes() {
            let a = Matrix::<i64>::random(50, 40, 8);
            let b = Matrix::<i64>::random(40, 60, 9);
            let staged =
                lcma_staged(&a, &b, scheme, TileConfig::new(16, 16, 16), &mut OpCounters::new())
                    .unwrap();
            let fused =
                lcma_fused(&a, &b, scheme, &cfg(4, (16, 16, 16)), &mut OpCounters::new()).unwrap();
            assert_eq!(fused, staged, "{}", scheme.name());
        }
    }

    #[test]
    fn traffic_counters_skip_h_entirely() {
        // 64^3 under Strassen, 32x32 padded blocks, tile 16 -> 4 groups.
        let scheme = strassen_scheme();
        let (m_dim, k_dim, n_dim) = (64, 64, 64);
        let a = Matrix::<i64>::random(m_dim, k_dim, 1);
        let b = Matrix::<i64>::random(k_dim, n_dim, 2);
        let config = cfg(3, (16, 16, 16));
        let mut c = OpCounters::new();
        lcma_fused(&a, &b, &scheme, &config, &mut c).unwrap();

        let (bm, bk, bn) = (32u64, 32u64, 32u64);
        let r = 7u64;
        // Stores: A~ and B~ materialized once each, C stored once, no H.
        assert_eq!(c.elements_stored, r * bm * bk + r * bk * bn + (m_dim * n_dim) as u64);
        // Loads: A and B sources once each, plus per-item operand panels:
        // 28 items, each (16 + 16) * 32 elements.
        let items = 4 * r;
        assert_eq!(
            c.elements_loaded,
            (m_dim * k_dim + k_dim * n_dim) as u64 + items * (16 + 16) * bk
        );
        // Arithmetic identical to the staged pipeline's closed forms.
        assert_eq!(c.scalar_multiplies, r * bm * bn * bk);
        let gemm_adds = r * bm * bn * (bk - 1);
        let combine_adds = (12 - 7) * bm * bk + (12 - 7) * bk * bn + (12 - 4) * bm * bn;
        assert_eq!(c.scalar_adds, gemm_adds + combine_adds);
    }

    #[test]
    fn source_loads_count_in_range_elements_exactly_once_when_padded() {
        let scheme = strassen_scheme();
        let (m_dim, k_dim, n_dim) = (33, 17, 9);
        let a = Matrix::<i64>::random(m_dim, k_dim, 3);
        let mut c = OpCounters::new();
        group_combine_a(&a, &scheme, &cfg(1, (8, 8, 8)), &mut c).unwrap();
        assert_eq!(c.elements_loaded, (m_dim * k_dim) as u64);

        let b = Matrix::<i64>::random(k_dim, n_dim, 4);
        let mut c = OpCounters::new();
        group_combine_b(&b, &scheme, &cfg(1, (8, 8, 8)), &mut c).unwrap();
        assert_eq!(c.elements_loaded, (k_dim * n_dim) as u64);
    }

    #[test]
    fn precombined_b_is_reused_and_checked() {
        let scheme = strassen_scheme();
        let a = Matrix::<i64>::random(40, 40, 5);
        let b = Matrix::<i64>::random(40, 40, 6);
        let pre = Arc::new(precombine_b(&b, &scheme).unwrap());
        assert!(pre.combine_counters.elements_loaded > 0);

        let mut config = cfg(2, (16, 16, 16));
        config.precombined_b = Some(pre.clone());
        let mut with_pre = OpCounters::new();
        let got = lcma_fused(&a, &b, &scheme, &config, &mut with_pre).unwrap();
        let want = naive_gemm(&a, &b, &mut OpCounters::new()).unwrap();
        assert_eq!(got, want);

        // The B combine is skipped: no B-source loads, no B~ stores.
        let mut without = OpCounters::new();
        lcma_fused(&a, &b, &scheme, &cfg(2, (16, 16, 16)), &mut without).unwrap();
        assert_eq!(
            without.elements_loaded - with_pre.elements_loaded,
            (40 * 40) as u64
        );
        assert!(without.elements_stored > with_pre.elements_stored);

        // Wrong B dims are rejected.
        let b_small = Matrix::<i64>::random(20, 20, 7);
        let a_small = Matrix::<i64>::random(20, 20, 8);
        let err = lcma_fused(&a_small, &b_small, &scheme, &config, &mut OpCounters::new());
        assert!(matches!(err, Err(Error::PrecombineMismatch { .. })));

        // Wrong scheme is rejected.
        let catalog = builtin_catalog().unwrap();
        let other = catalog.get("laderman-3x3x3-r23").unwrap();
        let err = lcma_fused(&a, &b, other, &config, &mut OpCounters::new());
        assert!(matches!(err, Err(Error::PrecombineMismatch { .. })));
    }

    #[test]
    fn buffer_limit_rejects_plans_that_exceed_it() {
        let scheme = strassen_scheme();
        let a = Matrix::<i64>::random(64, 64, 1);
        let b = Matrix::<i64>::random(64, 64, 2);
        // One worker owns all 4 groups.
        let mut config = cfg(1, (16, 16, 16));
        config.group_buffer_limit = Some(2);
        let err = lcma_fused(&a, &b, &scheme, &config, &mut OpCounters::new());
        assert!(matches!(err, Err(Error::BufferLimit { worker: 0, needed: 4, limit: 2 })));
        config.group_buffer_limit = Some(4);
        assert!(lcma_fused(&a, &b, &scheme, &config, &mut OpCounters::new()).is_ok());
    }

    #[test]
    fn schedule_coverage_is_checked() {
        let scheme = strassen_scheme();
        let a = Matrix::<i64>::random(16, 16, 1);
        let config = cfg(2, (8, 8, 8));
        let mut counters = OpCounters::new();
        let a_tilde = group_combine_a(&a, &scheme, &config, &mut counters).unwrap();
        let b_tilde = group_combine_b(&a, &scheme, &config, &mut counters).unwrap();

        let mut schedule = plan_split_group(1, 7, 2);
        schedule.assignments[0].pop();
        let err = fused_gemm_combine_h(
            &a_tilde, &b_tilde, &scheme, &schedule, &config, (16, 16), &mut counters,
        );
        assert!(matches!(err, Err(Error::ScheduleMismatch { .. })));

        let wrong_grid = plan_split_group(9, 7, 2);
        let err = fused_gemm_combine_h(
            &a_tilde, &b_tilde, &scheme, &wrong_grid, &config, (16, 16), &mut counters,
        );
        assert!(matches!(err, Err(Error::ScheduleMismatch { .. })));
    }

    #[test]
    fn wide_accumulation_narrows_once_and_tracks_the_oracle() {
        let scheme = strassen_scheme();
        let a = Matrix::<f32>::random(120, 80, 11);
        let b = Matrix::<f32>::random(80, 90, 12);
        let oracle = naive_gemm(&a.to_f64(), &b.to_f64(), &mut OpCounters::new()).unwrap();
        let mut config: ExecConfig<f32> = ExecConfig::default().with_workers(3).with_tiles(32, 32, 32);
        config.wide_h_accumulate = true;
        let wide = lcma_fused(&a, &b, &scheme, &config, &mut OpCounters::new()).unwrap();
        let (max_err, _) = crate::matrix::rel_error_stats(&wide, &oracle);
        assert!(max_err <= 1e-5, "max relative error {max_err}");
    }

    #[test]
    fn degenerate_capacity_cascades_still_compute_the_product() {
        // 1 group, rank 7, 5 workers: capacities 2/2/1/1/1 are all below
        // rank - 1, so the group spans all five workers.
        let scheme = strassen_scheme();
        let a = Matrix::<i64>::random(16, 16, 13);
        let b = Matrix::<i64>::random(16, 16, 14);
        let config = cfg(5, (8, 8, 8));
        let got = lcma_fused(&a, &b, &scheme, &config, &mut OpCounters::new()).unwrap();
        let want = naive_gemm(&a, &b, &mut OpCounters::new()).unwrap();
        assert_eq!(got, want);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn fused_equals_naive_for_random_configs(
            m in 1usize..34,
            k in 1usize..34,
            n in 1usize..34,
            workers in 1usize..7,
            tm in 1usize..10,
            tn in 1usize..10,
            tk in 1usize..10,
            cache_aware in proptest::bool::ANY,
            seed in 0u64..1000,
        ) {
            let scheme = strassen_scheme();
            let a = Matrix::<i64>::random(m, k, seed);
            let b = Matrix::<i64>::random(k, n, seed + 7);
            let want = naive_gemm(&a, &b, &mut OpCounters::new()).unwrap();
            let mut config = cfg(workers, (tm, tn, tk));
            config.cache_aware = cache_aware;
            let got = lcma_fused(&a, &b, &scheme, &config, &mut OpCounters::new()).unwrap();
            prop_assert_eq!(got, want);
        }
    }
}
