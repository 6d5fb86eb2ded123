use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lensbeam::cosparse::{build_difference_operator, AugmentedSystem};
use lensbeam::estimators::{snipe_sweep, write_sweep_csv};
use lensbeam::harness::{bundled_config, run_algorithm, run_experiment, trial_instance, AlgorithmSpec, ExperimentConfig, RunOptions};
use lensbeam::scampi::{estimate, write_trace_csv};

#[derive(Parser)]
#[command(name = "lensbeam", version, about = "Beamspace channel estimation experiments for lens antenna arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Support detection against uniform-prior SCAMPI.
    Fig6(RunFlags),
    /// EM-learned prior against uniform prior.
    Fig7(RunFlags),
    /// EM-SCAMPI with 10% of the phase shifters switched off.
    Fig8(RunFlags),
    /// Solve a single trial of an experiment and print its diagnostics.
    Estimate(EstimateArgs),
    /// Tabulate the difference-variable estimator over a grid of pseudo-measurements.
    EstimatorSweep {
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        omega: f64,
        #[arg(long, default_value_t = -10.0)]
        from: f64,
        #[arg(long, default_value_t = 10.0)]
        to: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct RunFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Restrict to array sizes such as `32x32`; repeatable.
    #[arg(long = "size", value_parser = parse_size)]
    sizes: Vec<[usize; 2]>,
    /// Record mean wall time per trial in results.csv.
    #[arg(long)]
    timing: bool,
    /// Ignore any checkpoint in the output directory.
    #[arg(long)]
    fresh: bool,
}

#[derive(Args)]
struct EstimateArgs {
    /// Config path or bundled name (fig6, fig7, fig8).
    #[arg(long, default_value = "fig7")]
    config: String,
    /// Algorithm name from the config; the first one when absent.
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long, value_parser = parse_size, default_value = "32x32")]
    size: [usize; 2],
    #[arg(long, default_value_t = 30.0, allow_negative_numbers = true)]
    snr: f64,
    #[arg(long, default_value_t = 0.0)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    trial: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-sweep trace CSV (SCAMPI only).
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn parse_size(s: &str) -> std::result::Result<[usize; 2], String> {
    let (m, n) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected MxN, got {s:?}"))?;
    let m = m.trim().parse().map_err(|e| format!("{e}"))?;
    let n = n.trim().parse().map_err(|e| format!("{e}"))?;
    Ok([m, n])
}

fn load_config(spec: &str) -> Result<ExperimentConfig> {
    match bundled_config(spec) {
        Some(text) => Ok(ExperimentConfig::from_toml_str(text)?),
        None => Ok(ExperimentConfig::load(spec.as_ref())?),
    }
}

fn run(mut cfg: ExperimentConfig, flags: RunFlags) -> Result<()> {
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = flags.trials {
        cfg.trials = trials;
    }
    if let Some(out) = flags.out {
        cfg.out_dir = Some(out);
    }
    if !flags.sizes.is_empty() {
        let unknown: Vec<_> = flags.sizes.iter().filter(|s| !cfg.sizes.contains(s)).collect();
        if !unknown.is_empty() {
            bail!("sizes {unknown:?} are not part of experiment {}", cfg.name);
        }
        cfg.sizes.retain(|s| flags.sizes.contains(s));
    }
    if cfg.out_dir.is_none() {
        cfg.out_dir = Some(PathBuf::from("results").join(&cfg.name));
    }
    let opts = RunOptions { jobs: flags.jobs, timing: flags.timing, resume: !flags.fresh };
    let table = run_experiment(&cfg, &opts)?;
    let out = cfg.out_dir.as_ref().expect("set above");
    let stdout = io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "{:<22} {:>9} {:>7} {:>5} {:>12} {:>12} {:>8}", "algorithm", "size", "snr_db", "p", "nmse_mean", "nmse_std", "iters")?;
    for r in table.rows() {
        writeln!(
            w,
            "{:<22} {:>9} {:>7} {:>5} {:>12.4e} {:>12.4e} {:>8.1}",
            r.algorithm,
            format!("{}x{}", r.size_m, r.size_n),
            r.snr_db,
            r.p,
            r.nmse_mean,
            r.nmse_std,
            r.iters_mean
        )?;
    }
    writeln!(w, "results written to {}", out.display())?;
    Ok(())
}

fn run_estimate(args: EstimateArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let spec = match &args.algorithm {
        Some(name) => cfg
            .algorithms
            .iter()
            .find(|a| a.name() == name)
            .with_context(|| format!("no algorithm named {name:?} in {}", cfg.name))?,
        None => &cfg.algorithms[0],
    }
    .clone();
    let inst = trial_instance(&cfg, args.size, args.snr, args.p, args.trial)?;
    let report = match (&spec, &args.trace) {
        (AlgorithmSpec::Scampi { options, .. }, Some(path)) => {
            let mut options = options.clone();
            options.trace = true;
            let diff = build_difference_operator(inst.lens.rows, inst.lens.cols)?;
            let sys = AugmentedSystem::new(inst.network.clone(), diff, &inst.measurement.r)?;
            let run = estimate(&sys, &options, Some(&inst.channel.vector))?;
            write_trace_csv(BufWriter::new(File::create(path)?), &run.trace)?;
            run.report
        }
        (_, Some(_)) => bail!("--trace needs a SCAMPI algorithm"),
        _ => run_algorithm(&spec, &inst, cfg.paths)?,
    };
    println!("algorithm   {}", spec.name());
    println!("instance    {}x{} q={} snr={} dB p={} trial={}", args.size[0], args.size[1], inst.network.q(), args.snr, args.p, args.trial);
    println!("noise var   {:e}", inst.measurement.noise_var);
    println!("nmse        {:e}", report.nmse.unwrap_or(f64::NAN));
    println!("iterations  {} (converged: {})", report.iterations, report.converged);
    if let Some(prior) = report.learned_prior {
        println!("prior       lambda={:e} mean={:e} var={:e}", prior.lambda, prior.mean, prior.var);
    }
    if let Some(noise) = report.noise {
        println!("noise       delta={:e} upsilon={:e}", noise.delta_mean, noise.upsilon_mean);
    }
    if report.regularized {
        println!("note        regularized solve or raised damping");
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, flags } => run(ExperimentConfig::load(&config)?, flags),
        Command::Fig6(flags) => run(load_config("fig6")?, flags),
        Command::Fig7(flags) => run(load_config("fig7")?, flags),
        Command::Fig8(flags) => run(load_config("fig8")?, flags),
        Command::Estimate(args) => run_estimate(args),
        Command::EstimatorSweep { sigma, omega, from, to, points, out } => {
            if points < 2 || !(to > from) {
                bail!("need at least two points on an increasing range");
            }
            let rs: Vec<f64> = (0..points).map(|k| from + (to - from) * k as f64 / (points - 1) as f64).collect();
            let rows = snipe_sweep(sigma, omega, &rs)?;
            match out {
                Some(path) => write_sweep_csv(BufWriter::new(File::create(path)?), &rows)?,
                None => write_sweep_csv(io::stdout().lock(), &rows)?,
            }
            Ok(())
        }
    }
}
