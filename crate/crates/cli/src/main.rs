//! `attnlite` command line: verification, cost analysis, benchmarks and toy
//! training. JSON goes to stdout, CSV and checkpoints to files under the
//! `--out` prefix, and the seed is echoed to stderr on every run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attnlite::bench::bench_suite;
use attnlite::cost::{cost_report, flops_ratio_grid, pow2_range};
use attnlite::oracles::run_verification;
use attnlite::train::{compare_variants, train, ExperimentConfig};
use attnlite::{AttentionConfig, Error, VariantKind};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "attnlite", version, about = "Attention-variant laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random draw.
    #[arg(long, env = "ATTNLITE_SEED")]
    seed: Option<u64>,
    /// Prefix for files written by the command.
    #[arg(long, default_value = "attnlite")]
    out: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gradient, embedding, rank-bound and causality checks.
    Verify {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Print parameter and FLOP counts for one configuration.
    Analyze {
        #[arg(long)]
        variant: VariantKind,
        #[arg(long)]
        dm: usize,
        #[arg(long)]
        heads: usize,
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long)]
        no_bias: bool,
        /// Also write the standard/VARIANT FLOPs ratio grid over powers of two
        /// in LO:HI for both ell and d_m.
        #[arg(long, value_name = "LO:HI", num_args = 0..=1, default_missing_value = "16:4096")]
        grid: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Time the forward pass of all four variants at one shape.
    Bench {
        #[arg(long)]
        dm: usize,
        #[arg(long)]
        heads: usize,
        #[arg(long)]
        ell: usize,
        #[arg(long, default_value_t = 30)]
        iters: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model from an experiment file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train all four variants from an experiment file.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Verification,
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type Outcome = Result<(), Failure>;

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serialisable"));
}

fn write_file(path: &str, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, contents)?;
    eprintln!("wrote {path}");
    Ok(())
}

fn announce_seed(seed: u64) {
    eprintln!("seed={seed}");
}

fn verify(trials: usize, common: &Common) -> Outcome {
    let seed = common.seed.unwrap_or(0);
    announce_seed(seed);
    let report = run_verification(seed, trials)?;
    for c in &report.checks {
        eprintln!(
            "{} {} metric={:e} threshold={:e} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.metric,
            c.threshold,
            c.detail
        );
    }
    print_json(&report);
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn parse_range(spec: &str) -> Result<(usize, usize), Error> {
    let bad = || Error::Config(format!("grid range {spec:?} is not LO:HI"));
    let (lo, hi) = spec.split_once(':').ok_or_else(bad)?;
    let (lo, hi) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

#[allow(clippy::too_many_arguments)]
fn analyze(
    variant: VariantKind,
    dm: usize,
    heads: usize,
    ell: Option<usize>,
    no_bias: bool,
    grid: Option<&str>,
    common: &Common,
) -> Outcome {
    let seed = common.seed.unwrap_or(0);
    announce_seed(seed);
    let cfg = AttentionConfig::new(variant, dm, heads, ell)?.bias(!no_bias);
    let report = cost_report(&cfg)?;
    if let Some(spec) = grid {
        let (lo, hi) = parse_range(spec)?;
        let range = pow2_range(lo, hi);
        let g = flops_ratio_grid(VariantKind::Standard, variant, &range, &range, heads)?;
        let meta = format!(
            "# seed={seed}\n# config={}\n# max_ratio={:.6} mean_ratio={:.6}\n",
            json!({"variant_a": "standard", "variant_b": variant, "h": heads, "range": [lo, hi]}),
            g.max_ratio,
            g.mean_ratio
        );
        write_file(&format!("{}_grid.csv", common.out), meta + &g.to_csv())?;
    }
    print_json(&report);
    Ok(())
}

fn bench(dm: usize, heads: usize, ell: usize, iters: usize, warmup: usize, common: &Common) -> Outcome {
    let seed = common.seed.unwrap_or(0);
    announce_seed(seed);
    let shape = AttentionConfig::new(VariantKind::Standard, dm, heads, Some(ell))?;
    let suite = bench_suite(&[shape], iters, warmup, seed)?;
    write_file(&format!("{}_bench.csv", common.out), suite.to_csv())?;
    print_json(&suite);
    Ok(())
}

fn load_experiment(path: &Path, common: &Common) -> Result<ExperimentConfig, Error> {
    let text = fs::read_to_string(path)?;
    let mut exp: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = common.seed {
        exp.model.seed = seed;
    }
    announce_seed(exp.model.seed);
    Ok(exp)
}

fn config_meta(exp: &ExperimentConfig) -> String {
    format!(
        "# seed={}\n# config={}\n",
        exp.model.seed,
        serde_json::to_string(exp).expect("serialisable")
    )
}

fn run_train(path: &Path, common: &Common) -> Outcome {
    let exp = load_experiment(path, common)?;
    let run = train(&exp.model, &exp.run)?;
    write_file(&format!("{}_metrics.csv", common.out), config_meta(&exp) + &run.metrics_csv(true))?;
    let ckpt = format!("{}.ckpt", common.out);
    run.checkpoint()?.save(&ckpt)?;
    eprintln!("wrote {ckpt}");
    print_json(&json!({
        "seed": exp.model.seed,
        "config": exp,
        "stop": run.stop,
        "steps": run.steps,
        "params": run.weights.param_count(),
        "attention_params": run.weights.attention_param_count(),
        "metrics": run.metrics,
    }));
    Ok(())
}

fn run_compare(path: &Path, common: &Common) -> Outcome {
    let exp = load_experiment(path, common)?;
    let cmp = compare_variants(&exp.model, &exp.run)?;
    write_file(&format!("{}_compare.csv", common.out), config_meta(&exp) + &cmp.to_csv())?;
    for r in &cmp.runs {
        let stem = format!("{}_{}", common.out, r.model.variant);
        write_file(&format!("{stem}_metrics.csv"), config_meta(&exp) + &r.metrics_csv(true))?;
        r.checkpoint()?.save(format!("{stem}.ckpt"))?;
        eprintln!("wrote {stem}.ckpt");
    }
    print_json(&json!({ "seed": exp.model.seed, "config": exp, "rows": cmp.rows }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", json!({"error": {"kind": "usage", "message": first}}));
            return ExitCode::from(2);
        }
    };
    let outcome = match &cli.command {
        Command::Verify { trials, common } => verify(*trials, common),
        Command::Analyze { variant, dm, heads, ell, no_bias, grid, common } => {
            analyze(*variant, *dm, *heads, *ell, *no_bias, grid.as_deref(), common)
        }
        Command::Bench { dm, heads, ell, iters, warmup, common } => bench(*dm, *heads, *ell, *iters, *warmup, common),
        Command::Train { config, common } => run_train(config, common),
        Command::Compare { config, common } => run_compare(config, common),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => {
            eprintln!("{}", json!({"error": {"kind": "verification", "message": "one or more checks failed"}}));
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            ExitCode::from(2)
        }
    }
}
