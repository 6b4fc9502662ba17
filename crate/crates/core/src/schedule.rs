//! Work-item scheduling for the fused executor.
//!
//! The unit of work is a (group, r) tile: output-tile group `group` computing
//! its r-th product. A group's rank tiles share operand locality, so the
//! planner deals them out group-major while keeping worker loads even.
//!
//! Group-granular assignment wastes ceil(groups/workers) * rank waves when
//! groups don't divide evenly; [`plan_split_group`] instead cuts the flat
//! tile sequence evenly, letting a group's tail spill onto the next worker.
//! The executor merges the split partial results afterwards.

/// One schedulable unit: product `r` of output-tile group `group`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct WorkItem {
    pub group: usize,
    pub r: usize,
}

/// A group whose tiles land on two adjacent workers: `first_worker` runs
/// r < `boundary_r`, `second_worker` the rest. A group split across more
/// than two workers (possible only when some capacity is below rank - 1)
/// produces one record per boundary it crosses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRecord {
    pub group: usize,
    pub boundary_r: usize,
    pub first_worker: usize,
    pub second_worker: usize,
}

/// Per-worker tile lists plus the split bookkeeping.
#[derive(Clone, Debug)]
pub struct TileSchedule {
    pub workers: usize,
    /// `assignments[w]` is worker w's tiles in execution order.
    pub assignments: Vec<Vec<WorkItem>>,
    pub splits: Vec<SplitRecord>,
    pub num_groups: usize,
    pub rank: usize,
}

impl TileSchedule {
    /// Synchronous wave count: the longest worker list.
    pub fn waves(&self) -> usize {
        self.assignments.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Fraction of waves in which every active worker executes the same r.
    /// Aligned waves reuse one B~_r (or one weight tile) across all workers.
    pub fn r_alignment(&self) -> f64 {
        let waves = self.waves();
        if waves == 0 {
            return 1.0;
        }
        let mut aligned = 0;
        for t in 0..waves {
            let mut wave_r = None;
            let mut ok = true;
            for list in &self.assignments {
                if let Some(item) = list.get(t) {
                    match wave_r {
                        None => wave_r = Some(item.r),
                        Some(r) if r == item.r => {}
                        Some(_) => {
                            ok = false;
                            break;
                        }
                    }
                }
            }
            if ok {
                aligned += 1;
            }
        }
        aligned as f64 / waves as f64
    }

    /// Total tiles across workers.
    pub fn total_items(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }
}

/// Waves needed when groups are never split: whole groups per worker.
pub fn group_granular_waves(num_groups: usize, rank: usize, workers: usize) -> usize {
    num_groups.div_ceil(workers) * rank
}

/// Evenly cuts the canonical tile sequence (group-major, r ascending) into
/// one contiguous run per worker.
///
/// With T = num_groups * rank tiles, the first T mod workers workers take
/// ceil(T/workers) tiles and the rest floor(T/workers), so:
///
/// * every (group, r) is assigned exactly once,
/// * worker loads differ by at most one tile,
/// * the wave count is ceil(T/workers), the optimum,
/// * whenever every positive capacity is at least rank - 1, a group spans at
///   most two workers. Below that capacity no schedule can meet the three
///   properties above with two-worker splits, so cuts are allowed to cascade
///   and each crossed boundary is recorded.
pub fn plan_split_group(num_groups: usize, rank: usize, workers: usize) -> TileSchedule {
    assert!(num_groups >= 1 && rank >= 1 && workers >= 1, "plan args must be positive");
    let total = num_groups * rank;
    let base = total / workers;
    let extra = total % workers;

    let mut assignments = Vec::with_capacity(workers);
    let mut splits = Vec::new();
    for w in 0..workers {
        let start = w * base + w.min(extra);
        let cap = base + usize::from(w < extra);
        assignments.push(
            (start..start + cap)
                .map(|g| WorkItem { group: g / rank, r: g % rank })
                .collect(),
        );
        if w > 0 && start < total && start % rank != 0 {
            splits.push(SplitRecord {
                group: start / rank,
                boundary_r: start % rank,
                first_worker: w - 1,
                second_worker: w,
            });
        }
    }
    TileSchedule { workers, assignments, splits, num_groups, rank }
}

/// Rotates each worker's list so it starts at its smallest (r, group) item.
///
/// On planner output every worker with at least `rank` tiles starts at an
/// r = 0 tile, so pre-wrap waves run the same r on all workers and operand
/// tiles stay hot across the machine. The item multiset per worker is
/// unchanged and the alignment metric never drops below the input's.
pub fn cache_aware_reorder(schedule: &TileSchedule) -> TileSchedule {
    let mut out = schedule.clone();
    for list in &mut out.assignments {
        if list.is_empty() {
            continue;
        }
        let pivot = (0..list.len())
            .min_by_key(|&t| (list[t].r, list[t].group))
            .expect("list is nonempty");
        list.rotate_left(pivot);
    }
    out
}

/// Simulated per-wave operand traffic of a schedule, in loaded elements.
///
/// Models one shared cache holding the previous wave's B~ tiles: in each
/// wave, every distinct r among active workers costs one B~ tile load unless
/// the same r was resident in the previous wave. A~ tiles are always loaded
/// (each (group, r) pair is visited once, so there is no A~ reuse across
/// waves). Tile sizes come from the element type and tile dims only through
/// a caller-provided element count.
pub fn simulate_wave_traffic(schedule: &TileSchedule, tile_elems: usize) -> u64 {
    let waves = schedule.waves();
    let mut loads: u64 = 0;
    let mut resident: Vec<usize> = Vec::new();
    for t in 0..waves {
        let mut wave_rs: Vec<usize> = schedule
            .assignments
            .iter()
            .filter_map(|list| list.get(t).map(|item| item.r))
            .collect();
        wave_rs.sort_unstable();
        wave_rs.dedup();
        // A~ tile per active worker.
        loads += schedule.assignments.iter().filter(|l| l.len() > t).count() as u64
            * tile_elems as u64;
        for &r in &wave_rs {
            if !resident.contains(&r) {
                loads += tile_elems as u64;
            }
        }
        resident = wave_rs;
    }
    loads
}

/// Uniformly samples planner arguments (each at most `max`) whose capacities
/// satisfy the two-worker-split regime floor(T/workers) >= rank - 1.
/// Exposed for randomized schedule tests.
pub fn sample_split_regime_args<R: rand::Rng + ?Sized>(rng: &mut R, max: usize) -> (usize, usize, usize) {
    loop {
        let num_groups = rng.random_range(1..=max);
        let rank = rng.random_range(1..=max);
        let workers = rng.random_range(1..=max);
        if (num_groups * rank) / workers >= rank.saturating_sub(1) {
            return (num_groups, rank, workers);
        }
    }
}
