//! Flag definitions for every subcommand.

use std::path::PathBuf;

use clap::builder::TypedValueParser;
use clap::value_parser;

fn positive() -> impl TypedValueParser<Value = usize> {
    value_parser!(u64).range(1..).map(|v| v as usize)
}

/// Which code path runs the product. The three flags are mutually
/// exclusive; none of them means fused.
#[derive(clap::Args, Debug)]
pub struct ExecutorFlags {
    /// Group-parallel executor that never materializes the R intermediate
    /// products (default).
    #[arg(long, group = "executor")]
    pub fused: bool,
    /// Four-stage executor that materializes all R intermediate products.
    #[arg(long, group = "executor")]
    pub staged: bool,
    /// Plain blocked product, no scheme involved.
    #[arg(long, group = "executor")]
    pub standard: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Executor {
    Standard,
    Staged,
    Fused,
}

impl Executor {
    pub fn label(self) -> &'static str {
        match self {
            Executor::Standard => "standard",
            Executor::Staged => "staged",
            Executor::Fused => "fused",
        }
    }
}

impl ExecutorFlags {
    pub fn resolve(&self) -> Executor {
        if self.standard {
            Executor::Standard
        } else if self.staged {
            Executor::Staged
        } else {
            Executor::Fused
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct TuningFlags {
    /// Worker threads inside the fused executor (default: all cores).
    #[arg(long, value_parser = positive())]
    pub workers: Option<usize>,
    /// Tile extents as m,n,k (default 64,64,64).
    #[arg(long)]
    pub tile: Option<String>,
}

#[derive(clap::Args, Debug)]
pub struct ValidateArgs {
    /// Validate every builtin catalog scheme.
    #[arg(long)]
    pub builtin: bool,
    /// Scheme files to validate.
    pub paths: Vec<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct MultiplyArgs {
    /// Left operand matrix file (M x K).
    #[arg(long)]
    pub a: PathBuf,
    /// Right operand matrix file (K x N).
    #[arg(long)]
    pub b: PathBuf,
    /// Where to write the product (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Scheme to run under the staged or fused executor.
    #[arg(long, default_value = "strassen-2x2x2-r7")]
    pub scheme: String,
    #[command(flatten)]
    pub executor: ExecutorFlags,
    #[command(flatten)]
    pub tuning: TuningFlags,
    /// Run in exact i64 arithmetic instead of f32.
    #[arg(long)]
    pub exact: bool,
}

#[derive(clap::Args, Debug)]
pub struct BenchArgs {
    /// Product shape as MxKxN.
    #[arg(long)]
    pub shape: String,
    /// Scheme for the non-baseline row.
    #[arg(long, default_value = "strassen-2x2x2-r7")]
    pub scheme: String,
    #[command(flatten)]
    pub executor: ExecutorFlags,
    /// Timed repetitions; the median is reported after one warm-up.
    #[arg(long, default_value_t = 5, value_parser = positive())]
    pub reps: usize,
    /// Seed for the random operands (A uses seed, B uses seed+1).
    #[arg(long)]
    pub seed: u64,
    /// Build the R combined B blocks once, outside the timed region.
    #[arg(long)]
    pub precombine_b: bool,
    /// Run in exact i64 arithmetic instead of f32.
    #[arg(long)]
    pub exact: bool,
    #[command(flatten)]
    pub tuning: TuningFlags,
    /// Where to write the CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct SweepArgs {
    /// Shape-list file: one `M K N` triple per line, `#` comments allowed.
    #[arg(long)]
    pub shapes: PathBuf,
    /// Hardware profile file driving the per-shape decision.
    #[arg(long)]
    pub profile: PathBuf,
    /// Seed for the random operands (A uses seed, B uses seed+1).
    #[arg(long)]
    pub seed: u64,
    /// Timed repetitions per measurement row.
    #[arg(long, default_value_t = 3, value_parser = positive())]
    pub reps: usize,
    #[command(flatten)]
    pub tuning: TuningFlags,
    /// Where to write the CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct DecideArgs {
    /// Product shape as MxKxN.
    #[arg(long)]
    pub shape: String,
    /// Hardware profile file.
    #[arg(long)]
    pub profile: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct ScheduleSimArgs {
    /// Number of tile groups (output tiles).
    #[arg(long, value_parser = positive())]
    pub groups: usize,
    /// Tiles per group (the scheme rank).
    #[arg(long, value_parser = positive())]
    pub rank: usize,
    /// Parallel workers.
    #[arg(long, value_parser = positive())]
    pub workers: usize,
    /// Dump the cache-aware reordering instead of the plain plan.
    #[arg(long)]
    pub cache_aware: bool,
    /// Where to write the CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct PrecisionArgs {
    /// Product shape as MxKxN.
    #[arg(long)]
    pub shape: String,
    /// Restrict to one scheme (default: the whole catalog).
    #[arg(long)]
    pub scheme: Option<String>,
    /// Seed for the random operands (A uses seed, B uses seed+1).
    #[arg(long)]
    pub seed: u64,
    /// Rejected: integer arithmetic has no rounding error to measure.
    #[arg(long)]
    pub exact: bool,
    #[command(flatten)]
    pub tuning: TuningFlags,
    /// Where to write the CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct RooflineArgs {
    /// Hardware profile file.
    #[arg(long)]
    pub profile: PathBuf,
    /// Comma-separated intensity grid (default: powers of two up to 16384).
    #[arg(long)]
    pub intensities: Option<String>,
    /// Where to write the CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct CalibrateArgs {
    /// Measurement repetitions per quantity (median taken, minimum 3).
    #[arg(long, default_value_t = 5, value_parser = positive())]
    pub samples: usize,
    /// Where to write the profile file.
    #[arg(long)]
    pub out: PathBuf,
}
