//! Experiment execution, checkpoints and resume.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json                  status, config hash, output list
//! checkpoint.json / .prev.json   simulate: latest and previous checkpoint
//! shards/path-NNNNN.json         lyapunov, moment-curve: one file per path
//! ...                            experiment outputs (CSV / JSON)
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use torus_mix::dynamics::{FlowSpec, Simulator, SimulatorCheckpoint, VelocitySource};
use torus_mix::exponents::{initial_tracers, run_path, EstimateRecord, PathSamples, StretchSamples};
use torus_mix::lagrangian::{TracerBundle, TracerCsv, TwoPointState};
use torus_mix::mixing::{annealed_correlation, fit_decay_rate, DecayFit, DecaySeries, SeriesMeta};
use torus_mix::rng::PathRng;
use torus_mix::spectral::{SpectralField, WaveIndex};

use crate::config::{self, Experiment, ExperimentConfig, LoadedConfig};
use crate::error::RunError;
use crate::manifest::{now, write_atomic, write_json, RunManifest, Status, MANIFEST_FILE};

const CHECKPOINT: &str = "checkpoint.json";
const CHECKPOINT_PREV: &str = "checkpoint.prev.json";
const SHARD_DIR: &str = "shards";

/// Flags that stop a run early, used to exercise resume.
#[derive(Clone, Debug, Default)]
pub struct Halt {
    pub after_steps: Option<u64>,
    pub after_paths: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub halt: Halt,
}

enum Outcome {
    Completed,
    Interrupted,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    flow: FlowSpec,
    dir: &'a Path,
    seed: u64,
    config_hash: &'a str,
    model_hash: String,
    halt: &'a Halt,
    resume: bool,
}

/// Hash of the velocity description, stored with every estimate.
pub fn model_hash(flow: &FlowSpec) -> String {
    config::hash_bytes(&serde_json::to_vec(flow).expect("flow serialises"))
}

/// Start a fresh run of `loaded` in `opts.out_dir`.
pub fn run(loaded: &LoadedConfig, verb: Experiment, opts: &RunOptions) -> Result<RunManifest, RunError> {
    if verb != loaded.config.experiment {
        return Err(RunError::Config(format!(
            "verb `{}` does not match experiment = \"{}\" in {}",
            verb.name(),
            loaded.config.experiment.name(),
            loaded.path.display()
        )));
    }
    let dir = &opts.out_dir;
    fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("creating {}: {e}", dir.display())))?;
    // stale resume state from an earlier run must not leak into this one
    for f in [CHECKPOINT, CHECKPOINT_PREV] {
        let p = dir.join(f);
        if p.exists() {
            fs::remove_file(&p)?;
        }
    }
    let shards = dir.join(SHARD_DIR);
    if shards.exists() {
        fs::remove_dir_all(&shards)?;
    }
    let manifest = RunManifest {
        experiment: verb.name().to_string(),
        config_path: fs::canonicalize(&loaded.path).unwrap_or_else(|_| loaded.path.clone()),
        config_hash: loaded.hash.clone(),
        seed: opts.seed.unwrap_or(loaded.config.seed),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started: now(),
        finished: None,
        status: Status::Running,
        message: None,
        outputs: Vec::new(),
    };
    execute(loaded, manifest, dir, &opts.halt, false)
}

/// Continue the run described by `manifest_path`.
pub fn resume(manifest_path: &Path, halt: &Halt) -> Result<RunManifest, RunError> {
    let manifest = RunManifest::load(manifest_path)?;
    if manifest.status == Status::Completed {
        log::info!("run already completed; nothing to do");
        return Ok(manifest);
    }
    let loaded = config::load(&manifest.config_path)?;
    if loaded.hash != manifest.config_hash {
        return Err(RunError::Config(format!(
            "config hash mismatch: {} now hashes to {}, the run was started with {}",
            manifest.config_path.display(),
            loaded.hash,
            manifest.config_hash
        )));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    execute(&loaded, manifest, &dir, halt, true)
}

fn execute(loaded: &LoadedConfig, mut manifest: RunManifest, dir: &Path, halt: &Halt, resume: bool) -> Result<RunManifest, RunError> {
    manifest.status = Status::Running;
    manifest.finished = None;
    manifest.message = None;
    manifest.save(dir)?;
    let base = loaded.path.parent().unwrap_or(Path::new("."));
    let flow = loaded.config.flow(base)?;
    let mut cfg = loaded.config.clone();
    cfg.seed = manifest.seed;
    let ctx = Ctx {
        cfg: &cfg,
        model_hash: model_hash(&flow),
        flow,
        dir,
        seed: manifest.seed,
        config_hash: &manifest.config_hash.clone(),
        halt,
        resume,
    };
    let result = match cfg.experiment {
        Experiment::Simulate => simulate(&ctx, &mut manifest),
        Experiment::Lyapunov => ensemble(&ctx, &mut manifest, false),
        Experiment::MomentCurve => ensemble(&ctx, &mut manifest, true),
        Experiment::Mixing => mixing(&ctx, &mut manifest),
        Experiment::TwoPoint => two_point(&ctx, &mut manifest),
    };
    manifest.finished = Some(now());
    match result {
        Ok(Outcome::Completed) => {
            manifest.status = Status::Completed;
            for o in &mut manifest.outputs {
                o.partial = false;
            }
            manifest.save(dir)?;
            Ok(manifest)
        }
        Ok(Outcome::Interrupted) => {
            manifest.status = Status::Interrupted;
            manifest.mark_partial();
            manifest.save(dir)?;
            Ok(manifest)
        }
        Err(e) => {
            manifest.status = match e {
                RunError::Numerical(_) => Status::BlowUp,
                _ => Status::Failed,
            };
            manifest.message = Some(e.to_string());
            manifest.mark_partial();
            // the original error matters more than a failure to record it
            let _ = manifest.save(dir);
            Err(e)
        }
    }
}

fn steps_for(t: f64, dt: f64) -> u64 {
    (t / dt).round() as u64
}

fn file_name_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

// ---------------------------------------------------------------- simulate

#[derive(Serialize, Deserialize)]
struct SimulateCheckpoint {
    config_hash: String,
    seed: u64,
    sim: SimulatorCheckpoint,
    tracers: Vec<TracerBundle>,
    /// Byte length of every streamed output at checkpoint time.
    file_lengths: Vec<(String, u64)>,
}

#[derive(Serialize)]
struct SnapshotMeta<'a> {
    model: &'a torus_mix::dynamics::FluidModel,
    model_hash: &'a str,
    t: f64,
    seed: u64,
    steps: u64,
    dt: f64,
}

fn load_checkpoint(dir: &Path, ctx: &Ctx) -> Option<SimulateCheckpoint> {
    for name in [CHECKPOINT, CHECKPOINT_PREV] {
        let Ok(text) = fs::read_to_string(dir.join(name)) else {
            continue;
        };
        match serde_json::from_str::<SimulateCheckpoint>(&text) {
            Ok(cp) if cp.config_hash == ctx.config_hash && cp.seed == ctx.seed => return Some(cp),
            Ok(_) => log::warn!("{name} belongs to a different run; ignored"),
            Err(e) => log::warn!("{name} unreadable ({e}); trying the previous one"),
        }
    }
    None
}

fn save_checkpoint(dir: &Path, cp: &SimulateCheckpoint) -> Result<(), RunError> {
    let latest = dir.join(CHECKPOINT);
    if latest.exists() {
        fs::rename(&latest, dir.join(CHECKPOINT_PREV))?;
    }
    let text = serde_json::to_vec(cp)?;
    write_atomic(&latest, &text)
}

struct Streams {
    names: Vec<String>,
    energy: BufWriter<File>,
    tracers: Vec<TracerCsv<BufWriter<File>>>,
}

impl Streams {
    fn open(dir: &Path, n_tracers: usize, lengths: Option<&[(String, u64)]>) -> Result<Self, RunError> {
        let mut names = vec!["energy.csv".to_string()];
        names.extend((0..n_tracers).map(|i| format!("tracer_{i:04}.csv")));
        let open = |name: &str| -> Result<(BufWriter<File>, bool), RunError> {
            let path = dir.join(name);
            match lengths.and_then(|l| l.iter().find(|(n, _)| n == name)) {
                Some((_, len)) => {
                    let f = OpenOptions::new().write(true).open(&path)?;
                    f.set_len(*len)?;
                    let f = OpenOptions::new().append(true).open(&path)?;
                    Ok((BufWriter::new(f), false))
                }
                None => Ok((BufWriter::new(File::create(&path)?), true)),
            }
        };
        let (mut energy, fresh) = open(&names[0])?;
        if fresh {
            writeln!(energy, "t,energy,enstrophy")?;
        }
        let mut tracers = Vec::with_capacity(n_tracers);
        for name in &names[1..] {
            let (w, fresh) = open(name)?;
            tracers.push(if fresh { TracerCsv::new(w)? } else { TracerCsv::resume(w) });
        }
        Ok(Self { names, energy, tracers })
    }

    fn lengths(&mut self, dir: &Path) -> Result<Vec<(String, u64)>, RunError> {
        self.energy.flush()?;
        for t in &mut self.tracers {
            t.flush()?;
        }
        self.names
            .iter()
            .map(|n| Ok((n.clone(), fs::metadata(dir.join(n))?.len())))
            .collect()
    }
}

fn simulate(ctx: &Ctx, manifest: &mut RunManifest) -> Result<Outcome, RunError> {
    let cfg = ctx.cfg;
    let (model, initial) = match &ctx.flow {
        FlowSpec::Model { model, initial } => (model.clone(), initial.clone()),
        FlowSpec::Frozen(_) => return Err(RunError::Config("simulate needs an evolving model, not a frozen field".into())),
    };
    let n_tracers = cfg.tracer_count()?;
    let checkpoint = if ctx.resume { load_checkpoint(ctx.dir, ctx) } else { None };
    let (sim, mut tracers, lengths) = match checkpoint {
        Some(cp) => (Simulator::restore(&model, cfg.dt, cp.sim)?, cp.tracers, Some(cp.file_lengths)),
        None => {
            let u0 = match initial {
                Some(u) => u,
                None => SpectralField::zeros(model.trunc)?,
            };
            let sim = Simulator::new(&model, cfg.dt, u0, PathRng::velocity(ctx.seed, 0))?;
            (sim, initial_tracers(ctx.seed, 0, n_tracers), None)
        }
    };
    let mut sim = sim.with_blowup_bound(cfg.model.blowup_bound);
    let mut streams = Streams::open(ctx.dir, n_tracers, lengths.as_deref())?;
    for n in streams.names.clone() {
        manifest.add_output(&n);
    }
    let total = steps_for(cfg.horizon, cfg.dt);
    let every = steps_for(cfg.output.sample_interval, cfg.dt).max(1);
    let result = (|| -> Result<Outcome, RunError> {
        loop {
            let step = sim.steps();
            if step % every == 0 || step == total {
                let t = sim.time();
                let u = sim.current();
                writeln!(streams.energy, "{},{},{}", t, u.l2_norm().powi(2), u.enstrophy_norm().powi(2))?;
                for (csv, b) in streams.tracers.iter_mut().zip(&tracers) {
                    csv.row(t, b)?;
                }
            }
            if step >= total {
                return Ok(Outcome::Completed);
            }
            if !tracers.is_empty() {
                let ev = sim.current().evaluator();
                for b in tracers.iter_mut() {
                    b.step(&ev, cfg.dt);
                }
            }
            sim.advance()?;
            let step = sim.steps();
            let halt = ctx.halt.after_steps == Some(step);
            if (step % cfg.output.checkpoint_every == 0 && step < total) || halt {
                let cp = SimulateCheckpoint {
                    config_hash: ctx.config_hash.to_string(),
                    seed: ctx.seed,
                    sim: sim.checkpoint(),
                    tracers: tracers.clone(),
                    file_lengths: streams.lengths(ctx.dir)?,
                };
                save_checkpoint(ctx.dir, &cp)?;
                if halt {
                    return Ok(Outcome::Interrupted);
                }
            }
        }
    })();
    streams.lengths(ctx.dir)?;
    let outcome = result?;
    if let Outcome::Completed = outcome {
        let mut csv = Vec::new();
        sim.current().write_csv(&mut csv)?;
        write_atomic(&ctx.dir.join("snapshot.csv"), &csv)?;
        write_json(
            &ctx.dir.join("snapshot.json"),
            &SnapshotMeta {
                model: &model,
                model_hash: &ctx.model_hash,
                t: sim.time(),
                seed: ctx.seed,
                steps: sim.steps(),
                dt: cfg.dt,
            },
        )?;
        manifest.add_output("snapshot.csv");
        manifest.add_output("snapshot.json");
    }
    Ok(outcome)
}

// ---------------------------------------------------------------- ensembles

fn shard_path(dir: &Path, path: u64) -> PathBuf {
    dir.join(SHARD_DIR).join(format!("path-{path:05}.json"))
}

fn ensemble(ctx: &Ctx, manifest: &mut RunManifest, curve: bool) -> Result<Outcome, RunError> {
    let ecfg = ctx.cfg.ensemble_config()?;
    let grid = if curve { Some(ctx.cfg.p_grid()?) } else { None };
    fs::create_dir_all(ctx.dir.join(SHARD_DIR))?;
    let mut done: Vec<Option<PathSamples>> = vec![None; ecfg.n_paths];
    if ctx.resume {
        for (p, slot) in done.iter_mut().enumerate() {
            if let Ok(text) = fs::read_to_string(shard_path(ctx.dir, p as u64)) {
                match serde_json::from_str::<PathSamples>(&text) {
                    Ok(s) => *slot = Some(s),
                    Err(e) => log::warn!("shard {p} unreadable ({e}); recomputing"),
                }
            }
        }
    }
    let mut todo: Vec<u64> = (0..ecfg.n_paths as u64).filter(|&p| done[p as usize].is_none()).collect();
    let interrupted = match ctx.halt.after_paths {
        Some(n) if n < todo.len() => {
            todo.truncate(n);
            true
        }
        _ => false,
    };
    let computed: Vec<Result<PathSamples, RunError>> = todo
        .par_iter()
        .map(|&p| {
            let s = run_path(&ctx.flow, &ecfg, p)?;
            write_json(&shard_path(ctx.dir, p), &s)?;
            Ok(s)
        })
        .collect();
    for (p, r) in todo.iter().zip(computed) {
        let s = r?;
        done[*p as usize] = Some(s);
    }
    for p in 0..ecfg.n_paths {
        if done[p].is_some() {
            manifest.add_output(&format!("{SHARD_DIR}/path-{p:05}.json"));
        }
    }
    if interrupted {
        return Ok(Outcome::Interrupted);
    }
    let samples = StretchSamples {
        config: ecfg.clone(),
        paths: done.into_iter().map(|s| s.expect("all paths computed")).collect(),
    };
    let l1 = samples.lambda1();
    write_json(&ctx.dir.join("lambda1.json"), &l1.record(None, ctx.seed, &ctx.model_hash))?;
    manifest.add_output("lambda1.json");
    if let Some(grid) = grid {
        let curve = samples.moment_curve(&grid)?;
        let mut csv = Vec::new();
        curve.write_csv(&mut csv)?;
        write_atomic(&ctx.dir.join("moment_curve.csv"), &csv)?;
        let records: Vec<EstimateRecord> = curve
            .p_grid
            .iter()
            .zip(&curve.lambda_of_p)
            .map(|(&p, e)| e.record(Some(p), ctx.seed, &ctx.model_hash))
            .collect();
        write_json(&ctx.dir.join("moment_curve.json"), &records)?;
        manifest.add_output("moment_curve.csv");
        manifest.add_output("moment_curve.json");
    }
    Ok(Outcome::Completed)
}

// ---------------------------------------------------------------- mixing

#[derive(Serialize)]
#[serde(untagged)]
enum FitReport {
    Fit(DecayFit),
    Failed { error: String, window: [f64; 2] },
}

#[derive(Serialize)]
struct SeriesSummary<'a> {
    file: String,
    meta: &'a SeriesMeta,
    fit: FitReport,
}

#[derive(Serialize)]
struct MixingSummary<'a> {
    model_hash: &'a str,
    seed: u64,
    truncated: bool,
    series: Vec<SeriesSummary<'a>>,
}

fn fit_report(series: &DecaySeries, window: [f64; 2]) -> FitReport {
    match fit_decay_rate(series, window) {
        Ok(f) => FitReport::Fit(f),
        Err(e) => FitReport::Failed {
            error: e.to_string(),
            window,
        },
    }
}

fn write_series(dir: &Path, name: &str, series: &DecaySeries, manifest: &mut RunManifest) -> Result<(), RunError> {
    let mut csv = Vec::new();
    series.write_csv(&mut csv)?;
    write_atomic(&dir.join(name), &csv)?;
    manifest.add_output(name);
    Ok(())
}

fn mixing(ctx: &Ctx, manifest: &mut RunManifest) -> Result<Outcome, RunError> {
    let mcfg = ctx.cfg.mixing_config()?;
    let pairs = ctx.cfg.pairs();
    let scalar = if ctx.cfg.mixing.scalar.modes.is_empty() {
        None
    } else {
        Some(&ctx.cfg.mixing.scalar)
    };
    let window = ctx.cfg.mixing.fit_window;
    let out = torus_mix::mixing::quenched_run(&ctx.flow, &mcfg, &pairs, scalar, &ctx.model_hash)?;
    let mut summaries: Vec<(String, &DecaySeries)> = Vec::new();
    let mut fits = Vec::new();
    for (pair, series) in pairs.iter().zip(&out.correlations) {
        let stem = format!("correlation_{}", file_name_safe(&pair.label));
        write_series(ctx.dir, &format!("{stem}.csv"), series, manifest)?;
        fits.push((format!("fit_{}.json", file_name_safe(&pair.label)), fit_report(series, window)));
        summaries.push((format!("{stem}.csv"), series));
    }
    for (s, series) in mcfg.sobolev.iter().zip(&out.neg_sobolev) {
        let stem = format!("hneg_{s}");
        write_series(ctx.dir, &format!("{stem}.csv"), series, manifest)?;
        fits.push((format!("fit_{stem}.json"), fit_report(series, window)));
        summaries.push((format!("{stem}.csv"), series));
    }
    if ctx.cfg.mixing.keep_spectra && !out.spectra.is_empty() {
        let mut csv = Vec::new();
        for (i, s) in out.spectra.iter().enumerate() {
            s.write_csv(&mut csv, i == 0)?;
        }
        write_atomic(&ctx.dir.join("spectra.csv"), &csv)?;
        manifest.add_output("spectra.csv");
    }
    let mut annealed: Vec<(String, DecaySeries)> = Vec::new();
    if !ctx.cfg.mixing.annealed_seeds.is_empty() {
        for pair in &pairs {
            let series = annealed_correlation(&ctx.flow, &mcfg, pair, &ctx.cfg.mixing.annealed_seeds)?;
            let name = format!("annealed_{}.csv", file_name_safe(&pair.label));
            write_series(ctx.dir, &name, &series, manifest)?;
            annealed.push((name, series));
        }
    }
    for (name, fit) in &fits {
        write_json(&ctx.dir.join(name), fit)?;
        manifest.add_output(name);
    }
    let summary = MixingSummary {
        model_hash: &ctx.model_hash,
        seed: ctx.seed,
        truncated: out.truncated,
        series: summaries
            .into_iter()
            .chain(annealed.iter().map(|(n, s)| (n.clone(), s)))
            .map(|(file, series)| SeriesSummary {
                file,
                meta: &series.meta,
                fit: fit_report(series, window),
            })
            .collect(),
    };
    write_json(&ctx.dir.join("mixing.json"), &summary)?;
    manifest.add_output("mixing.json");
    Ok(Outcome::Completed)
}

// ---------------------------------------------------------------- two-point

#[derive(Serialize)]
struct TwoPointSummary<'a> {
    model_hash: &'a str,
    seed: u64,
    pairs: usize,
    t: f64,
    initial_separation: f64,
    /// Mean over pairs of `(log d_T - log d_0) / T`.
    mean_log_separation_rate: f64,
}

fn two_point(ctx: &Ctx, manifest: &mut RunManifest) -> Result<Outcome, RunError> {
    let cfg = ctx.cfg;
    let n = cfg.tracer_count()?;
    let sep = cfg.two_point.separation;
    let mut states = initial_tracers(ctx.seed, 0, n)
        .into_iter()
        .map(|b| TwoPointState::new(b.x, [b.x[0] + sep * b.v[0], b.x[1] + sep * b.v[1]]))
        .collect::<Result<Vec<_>, _>>()?;
    let d0: Vec<f64> = states.iter().map(|s| s.distance()).collect();
    let mut source = ctx.flow.source(cfg.dt, ctx.seed, 0, cfg.model.blowup_bound)?;
    let total = steps_for(cfg.horizon, cfg.dt);
    let every = steps_for(cfg.two_point.sample_interval, cfg.dt).max(1);
    let mut csv = BufWriter::new(File::create(ctx.dir.join("two_point.csv"))?);
    manifest.add_output("two_point.csv");
    writeln!(csv, "t,pair,x1,x2,y1,y2,w1,w2,distance")?;
    for step in 0..=total {
        if step % every == 0 || step == total {
            let t = step as f64 * cfg.dt;
            for (i, s) in states.iter().enumerate() {
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{}",
                    t,
                    i,
                    s.x[0],
                    s.x[1],
                    s.y[0],
                    s.y[1],
                    s.w[0],
                    s.w[1],
                    s.distance()
                )?;
            }
        }
        if step == total {
            break;
        }
        let ev = source.current().evaluator();
        for s in states.iter_mut() {
            s.step(&ev, cfg.dt)?;
        }
        source.advance()?;
    }
    csv.flush()?;
    let t = total as f64 * cfg.dt;
    let rate = states
        .iter()
        .zip(&d0)
        .map(|(s, d)| (s.distance() / d).ln() / t)
        .sum::<f64>()
        / n as f64;
    write_json(
        &ctx.dir.join("two_point.json"),
        &TwoPointSummary {
            model_hash: &ctx.model_hash,
            seed: ctx.seed,
            pairs: n,
            t,
            initial_separation: sep,
            mean_log_separation_rate: rate,
        },
    )?;
    manifest.add_output("two_point.json");
    Ok(Outcome::Completed)
}

/// Manifest location for a run directory.
pub fn manifest_in(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

/// Parse a wave index written as `k1,k2`.
pub fn parse_wave(s: &str) -> Option<WaveIndex> {
    let (a, b) = s.split_once(',')?;
    WaveIndex::new(a.trim().parse().ok()?, b.trim().parse().ok()?).ok()
}
