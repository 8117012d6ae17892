//! Batch driver. Each subcommand is an [`Experiment`] registered by name;
//! it reads a [`RunConfig`] and writes CSV/JSON artifacts plus a
//! `manifest.json` with SHA-256 hashes into one output directory.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::benchmark::{self, HARDWARE_MAX_ERROR_MM};
use crate::config::{PulseSource, RunConfig};
use crate::control::ErrorMetrics;
use crate::dataset::{collect_grid, segment_and_concat, CollectOptions, Dataset, SegmentOptions};
use crate::dominance::{self, DominantVariable};
use crate::error::{Error, Result};
use crate::nn::{self, TrainReport};
use crate::plant::{simulate, FrictionParams, PlantConfig};
use crate::sysid::{self, PulseMeasurement};
use crate::trajectory::fmt_f64;

/// Output directory under construction. Every file written through it is
/// hashed and listed in the manifest.
pub struct Artifacts {
    root: PathBuf,
    prefix: String,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'a str,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub files: &'a BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn pretty_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

impl Artifacts {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Artifacts {
            root: root.to_path_buf(),
            prefix: String::new(),
            files: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let rel = format!("{}{name}", self.prefix);
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.insert(rel, sha256_hex(bytes));
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &pretty_json(value)?)
    }

    pub fn csv(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(name, &buf)
    }

    /// Run `f` with file names placed under `dir/`.
    pub fn scoped(&mut self, dir: &str, f: impl FnOnce(&mut Artifacts) -> Result<()>) -> Result<()> {
        let nested = format!("{}{dir}/", self.prefix);
        let saved = std::mem::replace(&mut self.prefix, nested);
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }

    pub fn finish(self, subcommand: &str, cfg: &RunConfig) -> Result<()> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            seed: cfg.seed,
            config_sha256: sha256_hex(&serde_json::to_vec(cfg)?),
            files: &self.files,
        };
        fs::write(self.root.join("manifest.json"), pretty_json(&manifest)?)?;
        Ok(())
    }
}

/// Progress messages on stderr unless quiet.
#[derive(Debug, Clone, Copy)]
pub struct Log {
    pub quiet: bool,
}

impl Log {
    pub fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub trait Experiment {
    fn name(&self) -> &'static str;
    fn summary(&self) -> &'static str;
    fn run(&self, cfg: &RunConfig, out: &mut Artifacts, log: Log) -> Result<()>;
}

pub struct Registry {
    experiments: BTreeMap<&'static str, Box<dyn Experiment>>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut reg = Registry {
            experiments: BTreeMap::new(),
        };
        reg.register(Box::new(Identify));
        reg.register(Box::new(Collect));
        reg.register(Box::new(Train));
        reg.register(Box::new(Sweep));
        reg.register(Box::new(Overfit));
        reg.register(Box::new(Dominance));
        reg.register(Box::new(Track));
        reg.register(Box::new(Repro));
        reg
    }
}

impl Registry {
    pub fn register(&mut self, experiment: Box<dyn Experiment>) {
        self.experiments.insert(experiment.name(), experiment);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Experiment> {
        self.experiments.get(name).map(|b| b.as_ref()).ok_or_else(|| Error::UnknownName {
            kind: "subcommand",
            name: name.to_string(),
        })
    }

    pub fn list(&self) -> impl Iterator<Item = (&'static str, &'static str)> + '_ {
        self.experiments.values().map(|e| (e.name(), e.summary()))
    }
}

/// Load the configuration, run one subcommand and write the manifest.
pub fn run(subcommand: &str, config: Option<&Path>, out: &Path, seed: Option<u64>, log: Log) -> Result<()> {
    let registry = Registry::default();
    let experiment = registry.get(subcommand)?;
    let mut cfg = match config {
        Some(path) => RunConfig::from_json_str(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if seed.is_some() {
        cfg.seed = seed;
        cfg = cfg.seeded();
    }
    let mut artifacts = Artifacts::create(out)?;
    artifacts.json("config.json", &cfg)?;
    experiment.run(&cfg, &mut artifacts, log)?;
    artifacts.finish(subcommand, &cfg)
}

/// Machine-readable form of a failure.
pub fn error_json(err: &Error) -> serde_json::Value {
    let details: Vec<String> = match err {
        Error::Config(list) => list.clone(),
        other => vec![other.to_string()],
    };
    serde_json::json!({ "error": err.kind(), "message": err.to_string(), "details": details })
}

struct Identify;

#[derive(Serialize)]
struct IdentifyReport {
    source: String,
    params: FrictionParams,
    residual_norm: f64,
    /// Delay recovered by cross-correlation, when pulses were simulated.
    tau_estimate: Option<f64>,
    regression_y: Vec<f64>,
}

impl Experiment for Identify {
    fn name(&self) -> &'static str {
        "identify"
    }

    fn summary(&self) -> &'static str {
        "least-squares friction parameters from pulse responses"
    }

    fn run(&self, cfg: &RunConfig, out: &mut Artifacts, log: Log) -> Result<()> {
        let s = &cfg.sysid;
        let (source, measurements): (String, Vec<PulseMeasurement>) = match (&s.measurements_csv, s.source) {
            (Some(path), _) => (path.display().to_string(), sysid::read_measurements_csv(fs::File::open(path)?)?),
            (None, PulseSource::Fixture) => ("fixture".into(), sysid::stage_measurements()),
            (None, PulseSource::Simulated) => {
                log.info(format!("simulating {} pulses", s.amplitudes.len()));
                ("simulated".into(), sysid::simulate_pulses(&cfg.plant, &s.amplitudes, &s.experiment)?)
            }
        };
        let mut sys = sysid::build_regression(&measurements, s.a3)?;
        sys.tau = cfg.plant.params.tau;
        let mut tau_estimate = None;
        if s.measurements_csv.is_none() && s.source == PulseSource::Simulated {
            let tau = estimate_plant_delay(cfg, &sysid::solve_least_squares(&sys)?)?;
            log.info(format!("viscous delay estimate {tau:.6} s"));
            tau_estimate = Some(tau);
            sys.tau = tau;
        }
        let params = sysid::solve_least_squares(&sys)?;
        let report = IdentifyReport {
            source,
            params,
            residual_norm: sysid::residual_norm(&sys, &params),
            tau_estimate,
            regression_y: sys.y.iter().copied().collect(),
        };
        out.csv("measurements.csv", |w| sysid::write_measurements_csv(w, &measurements))?;
        out.json("params.json", &report)?;
        log.info(format!(
            "a1p={:.4} a1n={:.4} a2p={:.4} a2n={:.4}",
            params.a1p, params.a1n, params.a2p, params.a2n
        ));
        Ok(())
    }
}

/// Lag of the configured plant behind a delay-free model with the
/// identified coefficients, under the delay probe drive.
fn estimate_plant_delay(cfg: &RunConfig, identified: &FrictionParams) -> Result<f64> {
    let s = &cfg.sysid;
    let model = PlantConfig {
        params: FrictionParams { tau: 0.0, ..*identified },
        ..cfg.plant
    };
    let measured = simulate(&cfg.plant, &s.delay_probe, s.delay_probe_duration)?;
    let modeled = simulate(&model, &s.delay_probe, s.delay_probe_duration)?;
    let skip = (s.delay_probe_settle / cfg.plant.dt).round() as usize;
    let range = skip..measured.len();
    sysid::estimate_delay(&measured.slice(range.clone()), &modeled.slice(range))
}

fn collect_sets(cfg: &RunConfig, collect: &CollectOptions, segment: &SegmentOptions) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    let train = segment_and_concat(&collect_grid(&cfg.plant, &d.train, collect)?, segment)?;
    let test = segment_and_concat(&collect_grid(&cfg.plant, &d.test, collect)?, segment)?;
    Ok((train, test))
}

struct Collect;

impl Experiment for Collect {
    fn name(&self) -> &'static str {
        "collect"
    }

    fn summary(&self) -> &'static str {
        "closed-loop data collection over the train and test grids"
    }

    fn run(&self, cfg: &RunConfig, out: &mut Artifacts, log: Log) -> Result<()> {
        let d = &cfg.dataset;
        let (train, test) = collect_sets(cfg, &d.collect, &d.segment)?;
        log.info(format!("{} training and {} test patterns", train.len(), test.len()));
        out.csv("train.csv", |w| train.write_csv(w))?;
        out.csv("test.csv", |w| test.write_csv(w))?;
        out.json("train_manifest.json", &train.manifest(&d.train.pairs, d.collect.noise_sigma, &d.segment))?;
        out.json("test_manifest.json", &test.manifest(&d.test.pairs, d.collect.noise_sigma, &d.segment))
    }
}

/// Training and validation sets for `train`/`sweep`: CSVs when given,
/// otherwise collected from the grids.
fn training_sets(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let nn = &cfg.nn;
    let (train, test) = match (&nn.dataset_csv, &nn.validation_csv) {
        (Some(t), Some(v)) => (Dataset::read_csv(fs::File::open(t)?)?, Dataset::read_csv(fs::File::open(v)?)?),
        (t, v) => {
            let (ct, cv) = collect_sets(cfg, &cfg.dataset.collect, &cfg.dataset.segment)?;
            let train = match t {
                Some(p) => Dataset::read_csv(fs::File::open(p)?)?,
                None => ct,
            };
            let test = match v {
                Some(p) => Dataset::read_csv(fs::File::open(p)?)?,
                None => cv,
            };
            (train, test)
        }
    };
    Ok((train, test))
}

fn write_history(out: &mut Artifacts, name: &str, report: &TrainReport) -> Result<()> {
    out.csv(name, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["epoch", "mse"])?;
        for (i, m) in report.mse_history.iter().enumerate() {
            csv.write_record([i.to_string(), fmt_f64(*m)])?;
        }
        csv.flush()?;
        Ok(())
    })
}

struct Train;

impl Experiment for Train {
    fn name(&self) -> &'static str {
        "train"
    }

    fn summary(&self) -> &'static str {
        "Levenberg-Marquardt training of the inverse network"
    }

    fn run(&self, cfg: &RunConfig, out: &mut Artifacts, log: Log) -> Result<()> {
        let (train, test) = training_sets(cfg)?;
        log.info(format!("training {} hidden units on {} patterns", cfg.nn.hidden, train.len()));
        let (net, report) = nn::train(&train, cfg.nn.hidden, &cfg.nn.lm, Some(&test))?;
        log.info(format!(
            "{} epochs, train mse {:.6}, test mse {:.6}",
            report.epochs,
            report.final_train_mse,
            report.final_test_mse.unwrap_or(f64::NAN)
        ));
        out.csv("weights.json", |w| net.write_json(w))?;
        out.json("train_report.json", &report)?;
        write_history(out, "mse_history.csv", &report)
    }
}

struct Sweep;

impl Experiment for Sweep {
    fn name(&self) -> &'static str {
        "sweep"
    }

    fn summary(&self) -> &'static str {
        "hidden-layer size sweep selected by test error"
    }

    fn run(&self, cfg: &RunConfig, out: &mut Artifacts, log: Log) -> Result<()> {
        let (train, test) = training_sets(cfg)?;
        log.info(format!("sweeping hidden sizes {:?}", cfg.nn.sweep_sizes));
        let table = nn::hidden_sweep(&cfg.nn.sweep_sizes, &train, &test, &cfg.nn.lm)?;
        log.info(format!("selected {} hidden units", table.selected));
        out.csv("sweep.csv", |w| table.write_csv(w))?;
        out.json("sweep.json", &table)
    }
}

struct Overfit;

#[derive(Debug, Clone, Serialize)]
pub struct OverfitRow {
    pub inputs: &'static str,
    pub hidden: usize,
    pub epochs: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

/// Velocity-only and velocity+acceleration networks trained on the same
/// noisy collection runs.
pub fn overfit_comparison(cfg: &RunConfig) -> Result<[OverfitRow; 2]> {
    let o = &cfg.nn.overfit;
    let collect = CollectOptions {
        noise_sigma: o.noise_sigma,
        ..cfg.dataset.collect
    };
    let segment = SegmentOptions {
        arity: 2,
        stride: o.stride,
        ..cfg.dataset.segment
    };
    let (train2, test2) = collect_sets(cfg, &collect, &segment)?;
    let (train1, test1) = (train2.project(1)?, test2.project(1)?);
    let lm = nn::LmConfig {
        max_epochs: o.max_epochs,
        ..cfg.nn.lm
    };
    let row = |inputs, hidden, train: &Dataset, test: &Dataset| -> Result<OverfitRow> {
        let (_, r) = nn::train(train, hidden, &lm, Some(test))?;
        Ok(OverfitRow {
            inputs,
            hidden,
            epochs: r.epochs,
            train_mse: r.final_train_mse,
            test_mse: r.final_test_mse.unwrap_or(f64::NAN),
        })
    };
    Ok([
        row("velocity", o.velocity_hidden, &train1, &test1)?,
        row("velocity+acceleration", o.joint_hidden, &train2, &test2)?,
    ])
}

impl Experiment for Overfit {
    fn name(&self) -> &'static str {
        "overfit"
    }

    fn summary(&self) -> &'static str {
        "velocity-only vs velocity+acceleration inputs on noisy data"
    }

    fn run(&self, cfg: &RunConfig, out: &mut Artifacts, log: Log) -> Result<()> {
        let rows = overfit_comparison(cfg)?;
        for r in &rows {
            log.info(format!("{:>22} ({:>3} hidden): test mse {:.6}", r.inputs, r.hidden, r.test_mse));
        }
        out.csv("overfit.csv", |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["inputs", "hidden", "epochs", "train_mse", "test_mse"])?;
            for r in &rows {
                csv.write_record([
                    r.inputs.to_string(),
                    r.hidden.to_string(),
                    r.epochs.to_string(),
                    fmt_f64(r.train_mse),
                    fmt_f64(r.test_mse),
                ])?;
            }
            csv.flush()?;
            Ok(())
        })
    }
}

struct Dominance;

#[derive(Serialize)]
struct DominanceSummary {
    max_ratio: f64,
    min_ratio: f64,
    mean_ratio: f64,
    included: usize,
    excluded: usize,
    velocity_floor: f64,
    dominant: DominantVariable,
    diagnostic: Option<String>,
}

impl Experiment for Dominance {
    fn name(&self) -> &'static str {
        "dominance"
    }

    fn summary(&self) -> &'static str {
        "acceleration-to-viscous ratio under a sinusoidal drive"
    }

    fn run(&self, cfg: &RunConfig, out: &mut Artifacts, log: Log) -> Result<()> {
        let d = &cfg.dominance;
        let traj = simulate(&cfg.plant, &d.excitation, d.duration)?;
        let skip = ((d.skip / traj.dt).round() as usize).min(traj.len());
        let steady = traj.slice(skip..traj.len());
        let report = dominance::analyze(&steady, &cfg.plant.params, &d.analysis)?;
        log.info(format!("max ratio {:.4}: {:?}", report.max_ratio, report.dominant));
        out.csv("trajectory.csv", |w| traj.write_csv(w))?;
        out.csv("ratios.csv", |w| report.write_csv(w))?;
        out.json(
            "dominance.json",
            &DominanceSummary {
                max_ratio: report.max_ratio,
                min_ratio: report.min_ratio,
                mean_ratio: report.mean_ratio,
                included: report.ratios.len(),
                excluded: report.excluded,
                velocity_floor: report.velocity_floor,
                dominant: report.dominant,
                diagnostic: report.diagnostic.clone(),
            },
        )
    }
}

struct Track;

#[derive(Serialize)]
struct TrackSummary {
    metrics: BTreeMap<&'static str, ErrorMetrics>,
    ordering_holds: bool,
    hardware_max_error_mm: BTreeMap<&'static str, f64>,
    network_train_mse: f64,
}

impl Experiment for Track {
    fn name(&self) -> &'static str {
        "track"
    }

    fn summary(&self) -> &'static str {
        "PI tracking with no, analytic and network feedforward"
    }

    fn run(&self, cfg: &RunConfig, out: &mut Artifacts, log: Log) -> Result<()> {
        log.info("training the benchmark network on the perturbed plant");
        let outcome = benchmark::run(&cfg.plant, &cfg.control.benchmark)?;
        let mut metrics = BTreeMap::new();
        for (label, result) in outcome.runs() {
            log.info(format!("{label:>20}: max {:.5} mm, rms {:.5} mm", result.metrics.max_mm, result.metrics.rms_mm));
            out.csv(&format!("{label}.csv"), |w| result.write_csv(w))?;
            metrics.insert(label, result.metrics);
        }
        out.csv("network.json", |w| outcome.net.write_json(w))?;
        out.json(
            "metrics.json",
            &TrackSummary {
                metrics,
                ordering_holds: outcome.ordering_holds(),
                hardware_max_error_mm: HARDWARE_MAX_ERROR_MM.into_iter().collect(),
                network_train_mse: outcome.training.final_train_mse,
            },
        )
    }
}

struct Repro;

impl Experiment for Repro {
    fn name(&self) -> &'static str {
        "repro"
    }

    fn summary(&self) -> &'static str {
        "every stage in sequence, one subdirectory each"
    }

    fn run(&self, cfg: &RunConfig, out: &mut Artifacts, log: Log) -> Result<()> {
        let mut fixture = cfg.clone();
        fixture.sysid.source = PulseSource::Fixture;
        fixture.sysid.measurements_csv = None;
        out.scoped("identify_fixture", |o| Identify.run(&fixture, o, log))?;
        let stages: [(&str, &dyn Experiment); 7] = [
            ("identify_simulated", &Identify),
            ("collect", &Collect),
            ("train", &Train),
            ("sweep", &Sweep),
            ("overfit", &Overfit),
            ("dominance", &Dominance),
            ("track", &Track),
        ];
        let mut simulated = cfg.clone();
        simulated.sysid.source = PulseSource::Simulated;
        simulated.sysid.measurements_csv = None;
        for (dir, stage) in stages {
            log.info(format!("== {dir}"));
            let stage_cfg = if dir == "identify_simulated" { &simulated } else { cfg };
            out.scoped(dir, |o| stage.run(stage_cfg, o, log))?;
        }
        Ok(())
    }
}
