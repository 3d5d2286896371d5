use std::fs::File;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fasnoma_core::ao::{optimize, AoOptions, AoResult, AoStatus};
use fasnoma_core::baselines::{run_fpa, run_oma, run_rpa};
use fasnoma_core::geometry::{sample_realization, ChannelRealization, SystemParams};
use fasnoma_core::rates::check_feasibility;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Method};
use crate::error::{BenchError, Result};
use crate::records::{trials_to_bytes, TrialRecord, TrialStatus};
use crate::summary::{summarize, summary_to_bytes, SummaryRow};

/// Margin used when auditing a returned candidate.
const FEASIBILITY_TOL: f64 = 1e-6;
/// Separates the random-layout stream from the channel stream of a trial.
const RPA_STREAM: u64 = 0x5250_415f_4c41_594f;

/// SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Channel seed of one trial: the base seed is split by sweep index, and
/// the result is split again by trial index. Every method at this point and
/// trial sees the same realization.
pub fn trial_seed(base_seed: u64, sweep_index: usize, trial: usize) -> u64 {
    let point = splitmix64(base_seed ^ splitmix64(sweep_index as u64));
    splitmix64(point ^ splitmix64(trial as u64).rotate_left(17))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub wall_time: Duration,
}

fn ao_record(out: &AoResult, realization: &ChannelRealization, params: &SystemParams) -> (f64, TrialStatus, bool) {
    let status = match out.status {
        AoStatus::Converged => TrialStatus::Converged,
        AoStatus::MaxIter => TrialStatus::MaxIter,
        AoStatus::InitFailed => TrialStatus::InitFailed,
    };
    let feasible = out.status != AoStatus::InitFailed
        && check_feasibility(&out.candidate, realization, params).is_ok_and(|r| r.feasible_within(FEASIBILITY_TOL));
    (out.secrecy_rate, status, feasible)
}

struct MethodRun {
    secrecy_rate: f64,
    status: TrialStatus,
    feasible: bool,
    outer_iterations: usize,
    solves: usize,
    flagged: usize,
}

fn run_method(method: Method, realization: &ChannelRealization, params: &SystemParams, opts: &AoOptions, seed: u64, rpa_draws: usize) -> fasnoma_core::Result<MethodRun> {
    let pack = |out: &AoResult, (secrecy_rate, status, feasible): (f64, TrialStatus, bool)| MethodRun {
        secrecy_rate,
        status,
        feasible,
        outer_iterations: out.outer_iterations,
        solves: out.stats.solves,
        flagged: out.stats.flagged,
    };
    Ok(match method {
        Method::FasNoma => {
            let out = optimize(realization, params, opts)?;
            pack(&out, ao_record(&out, realization, params))
        }
        Method::Fpa => {
            let out = run_fpa(realization, params, opts)?;
            pack(&out, ao_record(&out, realization, params))
        }
        Method::Rpa => {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ RPA_STREAM));
            let out = run_rpa(realization, params, &mut rng, rpa_draws, opts)?;
            pack(&out, ao_record(&out, realization, params))
        }
        Method::OmaFas => {
            let oma = run_oma(realization, params, opts)?;
            let (_, status, _) = ao_record(&oma.slot1, realization, params);
            // The slot-1 candidate has no s2 beam, so only the layout and
            // power constraints apply to it.
            let feasible = status != TrialStatus::InitFailed
                && oma.slot2_feasible
                && check_feasibility(&oma.slot1.candidate, realization, params)
                    .is_ok_and(|r| r.power_margin >= -FEASIBILITY_TOL && r.region_margin >= -FEASIBILITY_TOL && r.spacing_margin >= -FEASIBILITY_TOL);
            pack(&oma.slot1, (oma.secrecy_rate, status, feasible))
        }
    })
}

/// All methods of one (sweep point, trial) work item, in config order.
fn run_item(cfg: &ExperimentConfig, params: &SystemParams, opts: &AoOptions, sweep_index: usize, trial: usize) -> Vec<TrialOutcome> {
    let seed = trial_seed(cfg.base_seed, sweep_index, trial);
    let realization = sample_realization(params, seed);
    cfg.methods
        .iter()
        .map(|&method| {
            let started = Instant::now();
            let run = catch_unwind(AssertUnwindSafe(|| run_method(method, &realization, params, opts, seed, cfg.solver.rpa_draws)));
            let run = match run {
                Ok(Ok(r)) => r,
                _ => MethodRun { secrecy_rate: 0.0, status: TrialStatus::Error, feasible: false, outer_iterations: 0, solves: 0, flagged: 0 },
            };
            TrialOutcome {
                record: TrialRecord {
                    sweep_index,
                    sweep_axis: cfg.sweep.axis().to_string(),
                    sweep_value: cfg.sweep.value(sweep_index),
                    trial,
                    seed,
                    method,
                    secrecy_rate: run.secrecy_rate,
                    status: run.status,
                    feasible: run.feasible,
                    outer_iterations: run.outer_iterations,
                    solves: run.solves,
                    flagged_solves: run.flagged,
                },
                wall_time: started.elapsed(),
            }
        })
        .collect()
}

/// Runs every trial on a pool of `workers` threads. Records come back in
/// (sweep index, trial, method) order whatever the scheduling.
pub fn run_trials(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<TrialOutcome>> {
    cfg.validate()?;
    let opts = cfg.solver.ao_options();
    let params: Vec<SystemParams> = (0..cfg.sweep.len()).map(|i| cfg.params_at(i)).collect::<Result<_>>()?;
    let items: Vec<(usize, usize)> = (0..cfg.sweep.len()).flat_map(|s| (0..cfg.num_trials).map(move |t| (s, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BenchError::Config(format!("worker pool: {e}")))?;
    let nested: Vec<Vec<TrialOutcome>> = pool.install(|| items.par_iter().map(|&(s, t)| run_item(cfg, &params[s], &opts, s, t)).collect());
    Ok(nested.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialSeed {
    pub sweep_index: usize,
    pub trial: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    /// SHA-256 of the config echo above, serialized as compact JSON.
    pub config_sha256: String,
    pub trials_sha256: String,
    pub summary_sha256: String,
    pub seed_scheme: String,
    pub trials: Vec<TrialSeed>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.csv";

#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
    pub wall_time: Duration,
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, File)> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| BenchError::io(&path, e))?;
    Ok((path, file))
}

fn write_all(path: &Path, mut file: File, bytes: &[u8]) -> Result<()> {
    file.write_all(bytes).and_then(|_| file.sync_all()).map_err(|e| BenchError::io(path, e))
}

/// Runs the experiment and writes the trial CSV, summary CSV, manifest and
/// per-trial timings into `out_dir`. Output files are opened before any
/// trial runs, so an unwritable directory fails fast. Everything except the
/// timings is a pure function of the config.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, workers: usize) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| BenchError::io(out_dir, e))?;
    let trials_file = create(out_dir, TRIALS_FILE)?;
    let summary_file = create(out_dir, SUMMARY_FILE)?;
    let manifest_file = create(out_dir, MANIFEST_FILE)?;
    let timings_file = create(out_dir, TIMINGS_FILE)?;

    let started = Instant::now();
    let outcomes = run_trials(cfg, workers)?;
    let wall_time = started.elapsed();
    let records: Vec<TrialRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    let summary = summarize(&records);

    let trials_bytes = trials_to_bytes(&records);
    let summary_bytes = summary_to_bytes(&summary);
    let mut seeds: Vec<TrialSeed> = records.iter().map(|r| TrialSeed { sweep_index: r.sweep_index, trial: r.trial, seed: r.seed }).collect();
    seeds.dedup_by_key(|s| (s.sweep_index, s.trial));
    let config_json = serde_json::to_vec(cfg).expect("config serializes");
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        config_sha256: sha256_hex(&config_json),
        trials_sha256: sha256_hex(&trials_bytes),
        summary_sha256: sha256_hex(&summary_bytes),
        seed_scheme: "splitmix64(splitmix64(base ^ splitmix64(sweep)) ^ rotl(splitmix64(trial), 17))".into(),
        trials: seeds,
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    manifest_bytes.push(b'\n');

    let mut timings = csv::Writer::from_writer(Vec::new());
    timings.write_record(["sweep_index", "trial", "method", "wall_ms"]).expect("memory");
    for o in &outcomes {
        let r = &o.record;
        let ms = format!("{:.3}", o.wall_time.as_secs_f64() * 1e3);
        timings.write_record([r.sweep_index.to_string(), r.trial.to_string(), r.method.name().to_string(), ms]).expect("memory");
    }
    let timings_bytes = timings.into_inner().expect("memory");

    for ((path, file), bytes) in [trials_file, summary_file, manifest_file, timings_file]
        .into_iter()
        .zip([&trials_bytes, &summary_bytes, &manifest_bytes, &timings_bytes])
    {
        write_all(&path, file, bytes)?;
    }
    Ok(RunReport { out_dir: out_dir.to_path_buf(), records, summary, wall_time })
}
