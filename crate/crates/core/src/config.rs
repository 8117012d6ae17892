//! Run configuration for the command-line driver.
//!
//! Every field has a default, so `{}` is a complete configuration. Unknown
//! keys are collected over the whole document before anything is parsed,
//! so one run reports all of them.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::f64::consts::PI;
use std::path::PathBuf;

use crate::benchmark::BenchmarkConfig;
use crate::dataset::{CollectOptions, GridSpec, SegmentOptions};
use crate::dominance::DominanceConfig;
use crate::error::{Error, Result};
use crate::nn::{published, LmConfig};
use crate::plant::PlantConfig;
use crate::signal::SignalSpec;
use crate::sysid::{PulseExperiment, DEFAULT_A3, STAGE_PULSES};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces every per-section seed.
    pub seed: Option<u64>,
    pub plant: PlantConfig,
    pub sysid: SysidSection,
    pub dataset: DatasetSection,
    pub nn: NnSection,
    pub dominance: DominanceSection,
    pub control: ControlSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseSource {
    /// Pulses simulated on `plant`.
    #[default]
    Simulated,
    /// The ten shipped stage measurements.
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SysidSection {
    pub source: PulseSource,
    /// Overrides `source` with a measurement CSV.
    pub measurements_csv: Option<PathBuf>,
    pub amplitudes: Vec<f64>,
    pub a3: f64,
    pub experiment: PulseExperiment,
    /// Drive used to estimate the viscous delay when pulses are simulated.
    /// It must keep the stage moving, otherwise stiction masks the lag.
    pub delay_probe: SignalSpec,
    pub delay_probe_duration: f64,
    /// Leading part of the probe response left out of the correlation.
    pub delay_probe_settle: f64,
}

impl Default for SysidSection {
    fn default() -> Self {
        SysidSection {
            source: PulseSource::default(),
            measurements_csv: None,
            amplitudes: STAGE_PULSES.to_vec(),
            a3: DEFAULT_A3,
            experiment: PulseExperiment::default(),
            delay_probe: SignalSpec::sinusoid(0.5, 2.0 * PI * 2.0, 0.0, 2.0),
            delay_probe_duration: 3.0,
            delay_probe_settle: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub train: GridSpec,
    pub test: GridSpec,
    pub collect: CollectOptions,
    pub segment: SegmentOptions,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            train: GridSpec::default_train(),
            test: GridSpec::default_test(),
            collect: CollectOptions::default(),
            segment: SegmentOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnSection {
    pub hidden: usize,
    pub lm: LmConfig,
    pub sweep_sizes: Vec<usize>,
    /// Train on this CSV instead of collecting `dataset.train`.
    pub dataset_csv: Option<PathBuf>,
    /// Validate on this CSV instead of collecting `dataset.test`.
    pub validation_csv: Option<PathBuf>,
    pub overfit: OverfitSection,
}

impl Default for NnSection {
    fn default() -> Self {
        NnSection {
            hidden: published::HIDDEN,
            lm: LmConfig::default(),
            sweep_sizes: published::SWEEP_SIZES.to_vec(),
            dataset_csv: None,
            validation_csv: None,
            overfit: OverfitSection::default(),
        }
    }
}

/// Velocity-only versus velocity-plus-acceleration comparison on noisy
/// position data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverfitSection {
    pub noise_sigma: f64,
    /// Decimation for this comparison only. Coarser than the training set so
    /// the pattern count is of the order of the joint net's parameter count.
    pub stride: usize,
    pub velocity_hidden: usize,
    pub joint_hidden: usize,
    pub max_epochs: usize,
}

impl Default for OverfitSection {
    fn default() -> Self {
        OverfitSection {
            noise_sigma: 1e-6,
            stride: 80,
            velocity_hidden: 24,
            joint_hidden: 120,
            max_epochs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DominanceSection {
    pub excitation: SignalSpec,
    pub duration: f64,
    /// Start-up transient excluded from the analysis (s).
    pub skip: f64,
    pub analysis: DominanceConfig,
}

impl Default for DominanceSection {
    fn default() -> Self {
        DominanceSection {
            excitation: SignalSpec::sinusoid(1.5, PI / 2.0, -PI / 2.0, -0.3),
            duration: 8.0,
            skip: 4.0,
            analysis: DominanceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub benchmark: BenchmarkConfig,
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        if !value.is_object() {
            return Err(Error::Config(vec!["configuration must be a JSON object".into()]));
        }
        let reference = serde_json::to_value(RunConfig::default())?;
        let mut unknown = Vec::new();
        unknown_keys(&value, &reference, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(unknown.into_iter().map(|k| format!("unknown key `{k}`")).collect()));
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg.seeded())
    }

    /// Push the global seed, if any, into every section.
    pub fn seeded(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.sysid.experiment.seed = seed;
            self.dataset.collect.seed = seed;
            self.dataset.segment.seed = seed;
            self.nn.lm.seed = seed;
            self.control.benchmark = self.control.benchmark.with_seed(seed);
        }
        self
    }

    /// Check every section, reporting all failures together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |section: &str, r: Result<()>| {
            if let Err(e) = r {
                problems.push(format!("{section}: {e}"));
            }
        };
        check("plant", self.plant.validate());
        check("sysid.experiment", self.sysid.experiment_ok());
        check("sysid.delay_probe", self.sysid.delay_probe.validate());
        check("dataset.train", self.dataset.train.validate());
        check("dataset.test", self.dataset.test.validate());
        check("nn.lm", self.nn.lm.validate());
        check("dominance.excitation", self.dominance.excitation.validate());
        check("control.benchmark.lm", self.control.benchmark.lm.validate());
        check("control.benchmark.pi", self.control.benchmark.pi.validate());
        if (self.control.benchmark.pi.dt - self.plant.dt).abs() > 1e-15 {
            problems.push("control.benchmark.pi.dt: must equal plant.dt".into());
        }
        if self.nn.hidden == 0 {
            problems.push("nn.hidden: must be >= 1".into());
        }
        if self.nn.sweep_sizes.contains(&0) {
            problems.push("nn.sweep_sizes: sizes must be >= 1".into());
        }
        if !(self.dominance.skip >= 0.0 && self.dominance.skip < self.dominance.duration) {
            problems.push("dominance.skip: must lie in [0, duration)".into());
        }
        if !(self.sysid.delay_probe_settle >= 0.0 && self.sysid.delay_probe_settle < self.sysid.delay_probe_duration) {
            problems.push("sysid.delay_probe_settle: must lie in [0, delay_probe_duration)".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

impl SysidSection {
    fn experiment_ok(&self) -> Result<()> {
        let e = &self.experiment;
        if !(e.duration > 0.0) || !(e.noise_sigma >= 0.0) {
            return Err(Error::invalid("experiment", "duration must be > 0 and noise_sigma >= 0"));
        }
        if !(self.a3 > 0.0) {
            return Err(Error::invalid("a3", "must be > 0"));
        }
        Ok(())
    }
}

/// Dotted paths of keys in `user` that the default document does not have.
/// Internally tagged enums (objects with a `kind` field) are left to serde,
/// since the default only shows one variant.
fn unknown_keys(user: &Value, reference: &Value, path: &str, out: &mut Vec<String>) {
    match (user, reference) {
        (Value::Object(u), Value::Object(r)) => {
            if r.contains_key("kind") {
                return;
            }
            for (key, value) in u {
                let child = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                match r.get(key) {
                    None => out.push(child),
                    Some(rv) => unknown_keys(value, rv, &child, out),
                }
            }
        }
        (Value::Array(u), Value::Array(r)) => {
            if let Some(first) = r.first() {
                for (i, value) in u.iter().enumerate() {
                    unknown_keys(value, first, &format!("{path}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}
