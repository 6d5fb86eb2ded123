//! Monte-Carlo NMSE-versus-SNR experiments.
//!
//! Every trial draws its channel and network from a seed derived from the
//! master seed, the array size and the trial index, and its noise from a seed
//! that also includes the SNR. All algorithms, SNR points and reduction ratios
//! of a trial therefore share the same channel and Hadamard rows.

mod config;
mod plot;
mod table;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

pub use config::{AlgorithmSpec, ExperimentConfig, QRule};
pub use plot::render_svg;
pub use table::{mean_std, ResultRow, ResultTable, CSV_HEADER};

use crate::baselines::{ls_estimate, omp_estimate, sd_estimate};
use crate::cosparse::{build_difference_operator, AugmentedSystem};
use crate::error::{Error, Result};
use crate::lens::{sample_default_channel, LensConfig, MultipathChannel};
use crate::report::EstimationReport;
use crate::rng::{derive_seed, stream, tag};
use crate::scampi::estimate;
use crate::selection::{measure, Measurement, NetworkDescriptor, SelectionNetwork};

/// Largest tolerated share of failed trials per point and algorithm.
pub const MAX_FAILURE_RATE: f64 = 0.05;

const CHECKPOINT: &str = "checkpoint.csv";

/// Execution settings that do not change the results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; all cores when `None`.
    pub jobs: Option<usize>,
    /// Fill the wall-time column of `results.csv`.
    pub timing: bool,
    /// Reuse points already stored in the output directory's checkpoint.
    pub resume: bool,
}

/// Everything one trial feeds to the estimators.
#[derive(Debug, Clone)]
pub struct TrialInstance {
    pub lens: LensConfig,
    pub channel: MultipathChannel,
    pub network: SelectionNetwork,
    pub measurement: Measurement,
}

/// Seed of the channel and the network of a trial.
pub fn trial_seed(master: u64, size: [usize; 2], trial: usize) -> u64 {
    derive_seed(master, &[size[0] as u64, size[1] as u64, trial as u64])
}

pub fn trial_instance(cfg: &ExperimentConfig, size: [usize; 2], snr_db: f64, p: f64, trial: usize) -> Result<TrialInstance> {
    let lens = cfg.lens(size)?;
    let q = cfg.q_rule.resolve(lens.len())?;
    let base = trial_seed(cfg.seed, size, trial);
    let channel = sample_default_channel(&mut stream(derive_seed(base, &[tag::CHANNEL])), cfg.paths, &lens);
    let network = NetworkDescriptor { seed: derive_seed(base, &[tag::NETWORK]), q, mn: lens.len(), p }.build()?;
    let noise_seed = derive_seed(base, &[tag::NOISE, snr_db.to_bits()]);
    let measurement = measure(&network, &channel.vector, snr_db, &mut stream(noise_seed))?;
    Ok(TrialInstance { lens, channel, network, measurement })
}

/// Runs one estimator on one instance and fills in its NMSE.
pub fn run_algorithm(spec: &AlgorithmSpec, inst: &TrialInstance, paths: usize) -> Result<EstimationReport> {
    let r = &inst.measurement.r;
    let net = &inst.network;
    let report = match spec {
        AlgorithmSpec::Scampi { options, .. } => {
            let diff = build_difference_operator(inst.lens.rows, inst.lens.cols)?;
            let sys = AugmentedSystem::new(net.clone(), diff, r)?;
            estimate(&sys, options, None)?.report
        }
        AlgorithmSpec::Sd { square, .. } => sd_estimate(r, net, (inst.lens.rows, inst.lens.cols), paths, *square)?.0,
        AlgorithmSpec::Omp { sparsity, .. } => omp_estimate(r, net, *sparsity)?,
        AlgorithmSpec::Ls { .. } => {
            let sol = ls_estimate(r, net, None)?;
            EstimationReport { h_est: sol.h, iterations: 1, converged: true, regularized: sol.regularized, ..Default::default() }
        }
    };
    let report = report.with_truth(Some(&inst.channel.vector))?;
    match report.nmse {
        Some(v) if v.is_finite() => Ok(report),
        other => Err(Error::Domain(format!("non-finite NMSE {other:?}"))),
    }
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    nmse: f64,
    iterations: usize,
    wall_ms: f64,
}

fn run_trial(cfg: &ExperimentConfig, size: [usize; 2], snr: f64, p: f64, trial: usize) -> Vec<Result<Outcome>> {
    let inst = match trial_instance(cfg, size, snr, p, trial) {
        Ok(inst) => inst,
        Err(e) => {
            let msg = e.to_string();
            return cfg.algorithms.iter().map(|_| Err(Error::Aborted(msg.clone()))).collect();
        }
    };
    cfg.algorithms
        .iter()
        .map(|alg| {
            let start = Instant::now();
            let report = run_algorithm(alg, &inst, cfg.paths)?;
            Ok(Outcome {
                nmse: report.nmse.expect("filled by run_algorithm"),
                iterations: report.iterations,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Identifies a point's result among runs: any parameter that changes the row changes the key.
fn point_key(cfg: &ExperimentConfig, alg: &AlgorithmSpec, size: [usize; 2], q: usize, snr: f64, p: f64) -> Result<u64> {
    let alg_text = toml::to_string(alg).map_err(|e| Error::Config(e.to_string()))?;
    let text = format!(
        "{alg_text}|{}x{}|{q}|{}|{}|{}|{}|{}|{}|{}",
        size[0],
        size[1],
        snr.to_bits(),
        p.to_bits(),
        cfg.trials,
        cfg.paths,
        cfg.dy.to_bits(),
        cfg.dz.to_bits(),
        cfg.wavelength.to_bits()
    );
    Ok(derive_seed(cfg.seed, &[fnv1a(text.as_bytes())]))
}

fn load_checkpoint(path: &Path) -> Result<HashMap<u64, ResultRow>> {
    let mut map = HashMap::new();
    if !path.exists() {
        return Ok(map);
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(table::csv_error)?;
    for rec in rdr.deserialize::<(String, ResultRow)>() {
        let (key, row) = match rec {
            Ok(r) => r,
            // a torn final line from an interrupted run
            Err(e) => {
                log::warn!("ignoring checkpoint line: {e}");
                continue;
            }
        };
        if let Ok(k) = u64::from_str_radix(&key, 16) {
            map.insert(k, row);
        }
    }
    Ok(map)
}

struct Sink {
    log: Option<BufWriter<File>>,
    checkpoint: Option<csv::Writer<File>>,
}

impl Sink {
    fn line(&mut self, msg: &str) {
        log::info!("{msg}");
        if let Some(f) = &mut self.log {
            let _ = writeln!(f, "{msg}");
            let _ = f.flush();
        }
    }

    fn record(&mut self, key: u64, row: &ResultRow) -> Result<()> {
        if let Some(w) = &mut self.checkpoint {
            w.serialize((format!("{key:016x}"), row)).map_err(table::csv_error)?;
            w.flush()?;
        }
        Ok(())
    }
}

fn aggregate(alg: &str, size: [usize; 2], q: usize, snr: f64, p: f64, outcomes: &[&Result<Outcome>]) -> Result<(ResultRow, usize)> {
    let ok: Vec<Outcome> = outcomes.iter().filter_map(|o| o.as_ref().ok().copied()).collect();
    let failures = outcomes.len() - ok.len();
    if failures as f64 > MAX_FAILURE_RATE * outcomes.len() as f64 || ok.is_empty() {
        let first = outcomes.iter().find_map(|o| o.as_ref().err()).map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::Aborted(format!(
            "{alg} failed {failures} of {} trials at {}x{}, {snr} dB, p = {p}; first error: {first}",
            outcomes.len(),
            size[0],
            size[1]
        )));
    }
    let nmse: Vec<f64> = ok.iter().map(|o| o.nmse).collect();
    let (nmse_mean, nmse_std) = mean_std(&nmse);
    let n = ok.len() as f64;
    let row = ResultRow {
        algorithm: alg.to_owned(),
        size_m: size[0],
        size_n: size[1],
        q,
        snr_db: snr,
        p,
        trials: ok.len(),
        nmse_mean,
        nmse_std,
        iters_mean: ok.iter().map(|o| o.iterations as f64).sum::<f64>() / n,
        walltime_ms: Some(ok.iter().map(|o| o.wall_ms).sum::<f64>() / n),
    };
    Ok((row, failures))
}

/// Runs every `(size, p, SNR)` point of `cfg` and, when `cfg.out_dir` is set,
/// writes `results.csv`, `plot_<name>.svg`, `run.log` and a checkpoint there.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ResultTable> {
    cfg.validate()?;
    let out_dir = cfg.out_dir.clone();
    let mut done = HashMap::new();
    let mut sink = Sink { log: None, checkpoint: None };
    if let Some(dir) = &out_dir {
        fs::create_dir_all(dir)?;
        let ckpt = dir.join(CHECKPOINT);
        if opts.resume {
            done = load_checkpoint(&ckpt)?;
        }
        let append = opts.resume;
        let open = |p: PathBuf| OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(p);
        sink.log = Some(BufWriter::new(open(dir.join("run.log"))?));
        sink.checkpoint = Some(csv::WriterBuilder::new().has_headers(false).from_writer(open(ckpt)?));
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;

    sink.line(&format!(
        "experiment {} seed={} trials={} threads={}",
        cfg.name,
        cfg.seed,
        cfg.trials,
        pool.current_num_threads()
    ));
    let started = Instant::now();
    let mut table = ResultTable::new();
    for &size in &cfg.sizes {
        let q = cfg.q_rule.resolve(size[0] * size[1])?;
        for &p in &cfg.p {
            for &snr in &cfg.snr_db {
                let keys = cfg
                    .algorithms
                    .iter()
                    .map(|alg| point_key(cfg, alg, size, q, snr, p))
                    .collect::<Result<Vec<_>>>()?;
                if keys.iter().all(|k| done.contains_key(k)) {
                    for k in &keys {
                        table.push(done[k].clone())?;
                    }
                    sink.line(&format!("resumed {}x{} q={q} snr={snr} p={p}", size[0], size[1]));
                    continue;
                }
                let point_start = Instant::now();
                let outcomes: Vec<Vec<Result<Outcome>>> =
                    pool.install(|| (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, size, snr, p, t)).collect());
                for (k, alg) in cfg.algorithms.iter().enumerate() {
                    let column: Vec<&Result<Outcome>> = outcomes.iter().map(|o| &o[k]).collect();
                    let (row, failures) = match aggregate(alg.name(), size, q, snr, p, &column) {
                        Ok(v) => v,
                        Err(e) => {
                            sink.line(&format!("abort: {e}"));
                            return Err(e);
                        }
                    };
                    sink.line(&format!(
                        "{} {}x{} q={q} snr={snr} p={p} trials={} failures={failures} nmse_mean={:e} nmse_std={:e} iters_mean={} walltime_ms={:.3}",
                        row.algorithm,
                        size[0],
                        size[1],
                        row.trials,
                        row.nmse_mean,
                        row.nmse_std,
                        row.iters_mean,
                        row.walltime_ms.unwrap_or(0.0)
                    ));
                    sink.record(keys[k], &row)?;
                    table.push(row)?;
                }
                sink.line(&format!("point done in {:.3} s", point_start.elapsed().as_secs_f64()));
            }
        }
    }
    sink.line(&format!("experiment {} finished in {:.3} s", cfg.name, started.elapsed().as_secs_f64()));

    if let Some(dir) = &out_dir {
        write_artifacts(&table, &cfg.name, dir, opts.timing)?;
    }
    Ok(table)
}

/// Writes `results.csv` and `plot_<name>.svg` into `dir`.
pub fn write_artifacts(table: &ResultTable, name: &str, dir: &Path, timing: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    table.write_csv(BufWriter::new(File::create(dir.join("results.csv"))?), timing)?;
    fs::write(dir.join(format!("plot_{name}.svg")), render_svg(table, name))?;
    Ok(())
}

/// Reproduction configs shipped with the crate, by name.
pub fn bundled_config(name: &str) -> Option<&'static str> {
    match name {
        "fig6" => Some(include_str!("../../configs/fig6.toml")),
        "fig7" => Some(include_str!("../../configs/fig7.toml")),
        "fig8" => Some(include_str!("../../configs/fig8.toml")),
        _ => None,
    }
}
