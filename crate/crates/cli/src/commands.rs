//! One function per subcommand. Commands that emit CSV route it to `--out`
//! or stdout and keep human-readable summaries on stderr so pipelines stay
//! clean; purely textual commands print to stdout.

use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use lcma::decision::{
    calibrate, estimate_time, gemm_intensity, load_profile, roofline_table, save_profile, select,
    std_gemm_memory_bound, Algorithm, Choice, HardwareProfile, STANDARD_GEMM_NAME,
};
use lcma::fused::{lcma_fused, precombine_b, ExecConfig};
use lcma::gemm::{blocked_gemm, naive_gemm, TileConfig};
use lcma::library::{builtin_catalog, list_schemes, load_scheme, SchemeCatalog};
use lcma::matrix::{rel_error_stats, Element, Matrix};
use lcma::schedule::{cache_aware_reorder, group_granular_waves, plan_split_group};
use lcma::scheme::LcmaScheme;
use lcma::staged::lcma_staged;
use lcma::OpCounters;

use crate::args::{
    BenchArgs, CalibrateArgs, DecideArgs, Executor, MultiplyArgs, PrecisionArgs, RooflineArgs,
    ScheduleSimArgs, SweepArgs, TuningFlags, ValidateArgs,
};
use crate::io;

fn catalog() -> Result<SchemeCatalog> {
    Ok(builtin_catalog()?)
}

fn find_scheme<'c>(catalog: &'c SchemeCatalog, name: &str) -> Result<&'c LcmaScheme> {
    catalog
        .get(name)
        .ok_or_else(|| anyhow!("unknown scheme {name:?}; run `lcma list` for the catalog"))
}

fn tile_config(tuning: &TuningFlags) -> Result<TileConfig> {
    Ok(match &tuning.tile {
        Some(text) => {
            let (m, n, k) = io::parse_tile(text)?;
            TileConfig::new(m, n, k)
        }
        None => TileConfig::default(),
    })
}

fn exec_config<T: Element>(tuning: &TuningFlags) -> Result<ExecConfig<T>> {
    let mut config = ExecConfig::default();
    if let Some(workers) = tuning.workers {
        config = config.with_workers(workers);
    }
    if let Some(text) = &tuning.tile {
        let (m, n, k) = io::parse_tile(text)?;
        config = config.with_tiles(m, n, k);
    }
    Ok(config)
}

/// Median of `reps` timed runs after one untimed warm-up.
fn median_seconds(reps: usize, mut run: impl FnMut()) -> f64 {
    run();
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            run();
            start.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    if reps % 2 == 1 {
        times[reps / 2]
    } else {
        (times[reps / 2 - 1] + times[reps / 2]) / 2.0
    }
}

fn report_scheme(scheme: &LcmaScheme) -> bool {
    let report = scheme.validate();
    if report.valid {
        println!(
            "PASS {} <{},{},{};{}>: all {} identity equations hold",
            scheme.name(),
            scheme.m(),
            scheme.k(),
            scheme.n(),
            scheme.rank(),
            report.checked_count,
        );
    } else {
        println!(
            "FAIL {} <{},{},{};{}>: {} of {} identity equations violated; first at {}",
            scheme.name(),
            scheme.m(),
            scheme.k(),
            scheme.n(),
            scheme.rank(),
            report.failures.len(),
            report.checked_count,
            report.failures[0],
        );
    }
    report.valid
}

pub fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let mut total = 0usize;
    let mut failed = 0usize;
    if args.builtin {
        for (_, entry) in catalog()?.iter() {
            total += 1;
            failed += usize::from(!report_scheme(&entry.scheme));
        }
    }
    for path in &args.paths {
        total += 1;
        match load_scheme(path, &path.display().to_string()) {
            Ok(scheme) => failed += usize::from(!report_scheme(&scheme)),
            // Loading refuses identity-violating schemes; this command's
            // job is to report them, not refuse them.
            Err(lcma::Error::InvalidScheme { name, first }) => {
                failed += 1;
                println!("FAIL {name}: violates the bilinear identity; first at {first}");
            }
            Err(other) => return Err(other.into()),
        }
    }
    if failed > 0 {
        bail!("{failed} of {total} schemes failed validation");
    }
    Ok(())
}

pub fn cmd_list() -> Result<()> {
    let catalog = catalog()?;
    println!(
        "{:<24} {:>2} {:>2} {:>2} {:>4} {:>4} {:>4} {:>4}  lower-complexity",
        "name", "m", "k", "n", "rank", "nnzU", "nnzV", "nnzW"
    );
    for summary in list_schemes(&catalog) {
        println!(
            "{:<24} {:>2} {:>2} {:>2} {:>4} {:>4} {:>4} {:>4}  {}",
            summary.name,
            summary.m,
            summary.k,
            summary.n,
            summary.rank,
            summary.nnz_u,
            summary.nnz_v,
            summary.nnz_w,
            if summary.rank < summary.m * summary.k * summary.n { "yes" } else { "no" },
        );
    }
    Ok(())
}

fn multiply_as<T: Element>(args: &MultiplyArgs, scheme: &LcmaScheme) -> Result<()> {
    let a: Matrix<T> = io::read_matrix(&args.a)?;
    let b: Matrix<T> = io::read_matrix(&args.b)?;
    let mut counters = OpCounters::new();
    let start = Instant::now();
    let product = match args.executor.resolve() {
        Executor::Standard => blocked_gemm(&a, &b, tile_config(&args.tuning)?, &mut counters)?,
        Executor::Staged => {
            lcma_staged(&a, &b, scheme, tile_config(&args.tuning)?, &mut counters)?
        }
        Executor::Fused => {
            lcma_fused(&a, &b, scheme, &exec_config::<T>(&args.tuning)?, &mut counters)?
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    io::emit_matrix(&product, args.out.as_deref())?;
    eprintln!(
        "{}x{}x{} ({}) in {seconds:.3e} s: {} multiplies, {} adds, {} loads, {} stores",
        a.rows(),
        a.cols(),
        b.cols(),
        T::MODE,
        counters.scalar_multiplies,
        counters.scalar_adds,
        counters.elements_loaded,
        counters.elements_stored,
    );
    Ok(())
}

pub fn cmd_multiply(args: MultiplyArgs) -> Result<()> {
    let catalog = catalog()?;
    let scheme = find_scheme(&catalog, &args.scheme)?;
    if args.exact {
        multiply_as::<i64>(&args, scheme)
    } else {
        multiply_as::<f32>(&args, scheme)
    }
}

const BENCH_HEADER: &str =
    "m,k,n,algorithm,executor,time_seconds,effective_flops,scalar_multiplies,speedup_vs_standard";

/// One benchmark CSV row. `effective_flops` always uses the plain-product
/// numerator 2MNK, whatever algorithm ran, so rows compare directly.
fn bench_row(
    (m, k, n): (usize, usize, usize),
    algorithm: &str,
    executor: &str,
    seconds: f64,
    multiplies: u64,
    speedup: f64,
) -> String {
    let effective = 2.0 * (m as f64) * (n as f64) * (k as f64) / seconds;
    format!("{m},{k},{n},{algorithm},{executor},{seconds:.6e},{effective:.6e},{multiplies},{speedup:.4}")
}

fn bench_as<T: Element>(args: &BenchArgs, scheme: &LcmaScheme) -> Result<Vec<String>> {
    let (m, k, n) = io::parse_shape(&args.shape)?;
    let a = Matrix::<T>::random(m, k, args.seed);
    let b = Matrix::<T>::random(k, n, args.seed.wrapping_add(1));
    let tile = tile_config(&args.tuning)?;

    let mut base_counters = OpCounters::new();
    blocked_gemm(&a, &b, tile, &mut base_counters)?;
    let base_seconds = median_seconds(args.reps, || {
        blocked_gemm(&a, &b, tile, &mut OpCounters::new()).unwrap();
    });
    let mut rows = vec![bench_row(
        (m, k, n),
        STANDARD_GEMM_NAME,
        "standard",
        base_seconds,
        base_counters.scalar_multiplies,
        1.0,
    )];

    let executor = args.executor.resolve();
    if executor != Executor::Standard {
        let mut config = exec_config::<T>(&args.tuning)?;
        if args.precombine_b {
            // Built once, outside the timed region; reused across reps.
            config.precombined_b = Some(Arc::new(precombine_b(&b, scheme)?));
        }
        let mut counters = OpCounters::new();
        let seconds = match executor {
            Executor::Staged => {
                lcma_staged(&a, &b, scheme, tile, &mut counters)?;
                median_seconds(args.reps, || {
                    lcma_staged(&a, &b, scheme, tile, &mut OpCounters::new()).unwrap();
                })
            }
            Executor::Fused => {
                lcma_fused(&a, &b, scheme, &config, &mut counters)?;
                median_seconds(args.reps, || {
                    lcma_fused(&a, &b, scheme, &config, &mut OpCounters::new()).unwrap();
                })
            }
            Executor::Standard => unreachable!(),
        };
        rows.push(bench_row(
            (m, k, n),
            scheme.name(),
            executor.label(),
            seconds,
            counters.scalar_multiplies,
            base_seconds / seconds,
        ));
    }
    Ok(rows)
}

pub fn cmd_bench(args: BenchArgs) -> Result<()> {
    let catalog = catalog()?;
    let scheme = find_scheme(&catalog, &args.scheme)?;
    let rows = if args.exact {
        bench_as::<i64>(&args, scheme)?
    } else {
        bench_as::<f32>(&args, scheme)?
    };
    io::emit_csv(BENCH_HEADER, &rows, args.out.as_deref())
}

const SWEEP_HEADER: &str =
    "m,k,n,kind,algorithm,executor,predicted_seconds,measured_seconds,effective_flops,decision";

pub fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.shapes)
        .with_context(|| format!("reading {}", args.shapes.display()))?;
    let shapes = io::parse_shape_list(&text, &args.shapes.display().to_string())?;
    let hw = load_profile(&args.profile)?;
    let catalog = catalog()?;
    let tile = tile_config(&args.tuning)?;

    let mut rows = Vec::new();
    for (m, k, n) in shapes {
        let decision = select(&catalog, m, n, k, &hw);
        let choice_name = decision.choice.to_string();
        let chosen_seconds = decision
            .candidates
            .iter()
            .find(|c| c.name == choice_name)
            .map(|c| c.seconds)
            .expect("choice is always present in the candidate table");
        rows.push(format!(
            "{m},{k},{n},decision,{choice_name},,{chosen_seconds:.6e},,,{choice_name}"
        ));

        let work = 2.0 * (m as f64) * (n as f64) * (k as f64);
        let a = Matrix::<f32>::random(m, k, args.seed);
        let b = Matrix::<f32>::random(k, n, args.seed.wrapping_add(1));

        let std_predicted = estimate_time(Algorithm::StandardGemm, m, n, k, &hw, true);
        let std_measured = median_seconds(args.reps, || {
            blocked_gemm(&a, &b, tile, &mut OpCounters::new()).unwrap();
        });
        rows.push(format!(
            "{m},{k},{n},measurement,{STANDARD_GEMM_NAME},standard,{std_predicted:.6e},{std_measured:.6e},{:.6e},{choice_name}",
            work / std_measured,
        ));

        if let Choice::Scheme(name) = &decision.choice {
            let scheme = find_scheme(&catalog, name)?;
            let staged_predicted = estimate_time(Algorithm::Lcma(scheme), m, n, k, &hw, false);
            let staged_measured = median_seconds(args.reps, || {
                lcma_staged(&a, &b, scheme, tile, &mut OpCounters::new()).unwrap();
            });
            rows.push(format!(
                "{m},{k},{n},measurement,{name},staged,{staged_predicted:.6e},{staged_measured:.6e},{:.6e},{choice_name}",
                work / staged_measured,
            ));

            let config = exec_config::<f32>(&args.tuning)?;
            let fused_predicted = estimate_time(Algorithm::Lcma(scheme), m, n, k, &hw, true);
            let fused_measured = median_seconds(args.reps, || {
                lcma_fused(&a, &b, scheme, &config, &mut OpCounters::new()).unwrap();
            });
            rows.push(format!(
                "{m},{k},{n},measurement,{name},fused,{fused_predicted:.6e},{fused_measured:.6e},{:.6e},{choice_name}",
                work / fused_measured,
            ));
        }
    }
    io::emit_csv(SWEEP_HEADER, &rows, args.out.as_deref())
}

pub fn cmd_decide(args: DecideArgs) -> Result<()> {
    let (m, k, n) = io::parse_shape(&args.shape)?;
    let hw = load_profile(&args.profile)?;
    let catalog = catalog()?;
    let decision = select(&catalog, m, n, k, &hw);
    let choice_name = decision.choice.to_string();

    println!("shape {m}x{k}x{n} (M x K x N)");
    println!(
        "plain-product intensity {:.3} flop/element: {}",
        gemm_intensity(m, n, k),
        if std_gemm_memory_bound(m, n, k, &hw) {
            "memory-bound, no scheme can pay for its combines"
        } else {
            "compute-bound"
        },
    );
    for candidate in &decision.candidates {
        let marker = if candidate.name == choice_name { "  <- choice" } else { "" };
        println!("  {:<24} {:.6e} s{marker}", candidate.name, candidate.seconds);
    }
    println!(
        "choice: {choice_name}, predicted speedup {:.4} (fused traffic model)",
        decision.predicted_speedup,
    );
    Ok(())
}

pub fn cmd_schedule_sim(args: ScheduleSimArgs) -> Result<()> {
    let planned = plan_split_group(args.groups, args.rank, args.workers);
    let reordered = cache_aware_reorder(&planned);
    let granular = group_granular_waves(args.groups, args.rank, args.workers);
    let waves = planned.waves();
    eprintln!(
        "split-group waves {waves}, group-granular waves {granular}, waste {:.1}%",
        (granular - waves) as f64 / waves as f64 * 100.0,
    );
    eprintln!(
        "r-alignment before reorder {:.4}, after {:.4}",
        planned.r_alignment(),
        reordered.r_alignment(),
    );
    eprintln!("{} groups split across two workers", planned.splits.len());

    let schedule = if args.cache_aware { &reordered } else { &planned };
    let mut rows = Vec::with_capacity(schedule.total_items());
    for (worker, list) in schedule.assignments.iter().enumerate() {
        for (wave, item) in list.iter().enumerate() {
            rows.push(format!("{worker},{wave},{},{}", item.group, item.r));
        }
    }
    io::emit_csv("worker,wave,group,r", &rows, args.out.as_deref())
}

const PRECISION_HEADER: &str = "m,k,n,scheme,executor,max_rel_error,mean_rel_error";

pub fn cmd_precision(args: PrecisionArgs) -> Result<()> {
    if args.exact {
        bail!("precision analysis needs float mode; integer execution is exact by construction");
    }
    let (m, k, n) = io::parse_shape(&args.shape)?;
    let catalog = catalog()?;
    let schemes: Vec<&LcmaScheme> = match &args.scheme {
        Some(name) => vec![find_scheme(&catalog, name)?],
        None => catalog.iter().map(|(_, entry)| &entry.scheme).collect(),
    };

    let a = Matrix::<f32>::random(m, k, args.seed);
    let b = Matrix::<f32>::random(k, n, args.seed.wrapping_add(1));
    let oracle = naive_gemm(&a.to_f64(), &b.to_f64(), &mut OpCounters::new())?;
    let row = |scheme: &str, executor: &str, out: &Matrix<f32>| {
        let (max, mean) = rel_error_stats(out, &oracle);
        format!("{m},{k},{n},{scheme},{executor},{max:.6e},{mean:.6e}")
    };

    let tile = tile_config(&args.tuning)?;
    let standard = blocked_gemm(&a, &b, tile, &mut OpCounters::new())?;
    let mut rows = vec![row(STANDARD_GEMM_NAME, "standard", &standard)];
    for scheme in schemes {
        // Staged materializes H in working precision even under a wide GEMM
        // accumulator; fused carries H and C wide until the final store.
        let staged = lcma_staged(&a, &b, scheme, tile.wide(), &mut OpCounters::new())?;
        rows.push(row(scheme.name(), "staged", &staged));
        let mut config = exec_config::<f32>(&args.tuning)?;
        config.wide_h_accumulate = true;
        let fused = lcma_fused(&a, &b, scheme, &config, &mut OpCounters::new())?;
        rows.push(row(scheme.name(), "fused", &fused));
    }
    io::emit_csv(PRECISION_HEADER, &rows, args.out.as_deref())
}

pub fn cmd_roofline(args: RooflineArgs) -> Result<()> {
    let hw = load_profile(&args.profile)?;
    let catalog = catalog()?;
    let intensities: Vec<f64> = match &args.intensities {
        Some(text) => {
            let mut values = Vec::new();
            for part in text.split(',') {
                let value: f64 = part
                    .trim()
                    .parse()
                    .with_context(|| format!("bad intensity {part:?}"))?;
                if !(value.is_finite() && value > 0.0) {
                    bail!("intensities must be positive, got {part:?}");
                }
                values.push(value);
            }
            values
        }
        None => (0..=14).map(|exp| f64::from(1u32 << exp)).collect(),
    };

    let rows: Vec<String> = roofline_table(&catalog, &hw, &intensities)
        .iter()
        .map(|row| format!("{},{},{:.6e}", row.intensity, row.algorithm, row.effective_flops))
        .collect();

    report_crossover(&catalog, &hw, "strassen2-4x4x4-r49", "strassen-2x2x2-r7");
    io::emit_csv("intensity,algorithm,effective_flops", &rows, args.out.as_deref())
}

/// Finds and reports the intensity where `contender` starts beating
/// `incumbent` on modeled effective FLOPS, if the catalog has both.
fn report_crossover(catalog: &SchemeCatalog, hw: &HardwareProfile, contender: &str, incumbent: &str) {
    if catalog.get(contender).is_none() || catalog.get(incumbent).is_none() {
        return;
    }
    let advantage = |intensity: f64| -> f64 {
        let table = roofline_table(catalog, hw, &[intensity]);
        let rate = |name: &str| {
            table.iter().find(|r| r.algorithm == name).map(|r| r.effective_flops).unwrap()
        };
        rate(contender) - rate(incumbent)
    };
    // The advantage is monotone in intensity: negative in the bandwidth
    // regime (more combine traffic), positive at the compute ceilings.
    let (mut lo, mut hi) = (1e-3, 1e12);
    if advantage(lo) >= 0.0 || advantage(hi) <= 0.0 {
        eprintln!("no {contender} / {incumbent} crossover in the modeled intensity range");
        return;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if advantage(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    eprintln!(
        "{contender} overtakes {incumbent} near intensity {:.2} flop/element",
        (lo * hi).sqrt(),
    );
}

pub fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    eprintln!("measuring multiply/add throughput and copy bandwidth ({} samples)...", args.samples);
    let hw = calibrate(args.samples)?;
    save_profile(&hw, &args.out)?;
    println!(
        "flops_mul {:.4e} flop/s\nflops_add {:.4e} flop/s\nbeta_elems {:.4e} element/s\nworkers {}",
        hw.flops_mul, hw.flops_add, hw.beta_elems, hw.workers,
    );
    println!("profile written to {}", args.out.display());
    Ok(())
}
