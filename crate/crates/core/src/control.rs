//! PI position loop with pluggable feedforward compensation.
//!
//! Compensators implement [`Feedforward`] and are looked up by name in a
//! [`FeedforwardRegistry`], so the tracking harness and the CLI pick the
//! scheme at run time.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::plant::{sample_count, DelayLine, FrictionParams, PlantConfig, PlantState};
use crate::signal::SignalSpec;
use crate::trajectory::{fmt_f64, parse_field, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiConfig {
    /// V/m
    pub kp: f64,
    /// V/(m s)
    pub ki: f64,
    /// Symmetric output limit (V).
    pub saturation: f64,
    pub dt: f64,
}

impl Default for PiConfig {
    /// Gains that keep roughly 40 degrees of phase margin on the
    /// delayed-viscous model.
    fn default() -> Self {
        PiConfig {
            kp: 3000.0,
            ki: 30000.0,
            saturation: 10.0,
            dt: crate::plant::DEFAULT_DT,
        }
    }
}

impl PiConfig {
    /// Gains tuned on the hardware stage. On the simulated model with the
    /// 3.5 ms viscous delay these leave the loop without phase margin.
    pub fn hardware() -> Self {
        PiConfig {
            kp: 19000.0,
            ki: 660000.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kp >= 0.0 && self.kp.is_finite()) || !(self.ki >= 0.0 && self.ki.is_finite()) {
            return Err(Error::invalid("pi", "gains must be finite and >= 0"));
        }
        if !(self.saturation > 0.0) {
            return Err(Error::invalid("saturation", "must be > 0"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        Ok(())
    }
}

/// PI law with conditional integration: the integrator holds whenever the
/// output is saturated and the error would push it further into the limit.
#[derive(Debug, Clone, PartialEq)]
pub struct PiController {
    cfg: PiConfig,
    integral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiOutput {
    pub feedback: f64,
    pub total: f64,
    pub saturated: bool,
}

impl PiController {
    pub fn new(cfg: PiConfig) -> Self {
        PiController { cfg, integral: 0.0 }
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn update(&mut self, error: f64, feedforward: f64) -> PiOutput {
        let feedback = self.cfg.kp * error + self.cfg.ki * self.integral;
        let raw = feedback + feedforward;
        let limit = self.cfg.saturation;
        let saturated = raw.abs() > limit;
        if !(saturated && error.signum() == raw.signum()) {
            self.integral += error * self.cfg.dt;
        }
        PiOutput {
            feedback,
            total: raw.clamp(-limit, limit),
            saturated,
        }
    }
}

/// A feedforward compensator: reference motion in, voltage out.
pub trait Feedforward: Send {
    fn name(&self) -> &'static str;
    fn voltage(&mut self, v_ref: f64, a_ref: f64) -> Result<f64>;
    fn reset(&mut self);
}

#[derive(Debug, Default, Clone)]
pub struct NoFeedforward;

impl Feedforward for NoFeedforward {
    fn name(&self) -> &'static str {
        "none"
    }

    fn voltage(&mut self, _v_ref: f64, _a_ref: f64) -> Result<f64> {
        Ok(0.0)
    }

    fn reset(&mut self) {}
}

/// Model inverse `u = (a_ref + a1 v_ref(t - tau) + a2 sgn(v_ref)) / a3`.
/// The reference velocity history starts out filled with the first value
/// it sees.
#[derive(Debug, Clone)]
pub struct AnalyticInverse {
    params: FrictionParams,
    dt: f64,
    history: Option<DelayLine>,
}

impl AnalyticInverse {
    pub fn new(params: FrictionParams, dt: f64) -> Self {
        AnalyticInverse {
            params,
            dt,
            history: None,
        }
    }
}

impl Feedforward for AnalyticInverse {
    fn name(&self) -> &'static str {
        "analytic"
    }

    fn voltage(&mut self, v_ref: f64, a_ref: f64) -> Result<f64> {
        if !v_ref.is_finite() || !a_ref.is_finite() {
            return Err(Error::NonFinite { what: "reference", step: 0 });
        }
        let (params, dt) = (self.params, self.dt);
        let history = self.history.get_or_insert_with(|| DelayLine::new(params.tau, dt, v_ref));
        history.push(v_ref);
        let p = &self.params;
        Ok((a_ref + p.viscous_term(history.delayed()) + p.coulomb_term(v_ref)) / p.a3)
    }

    fn reset(&mut self) {
        self.history = None;
    }
}

/// Trained velocity-input network.
#[derive(Debug, Clone)]
pub struct NetworkInverse {
    net: Mlp,
}

impl NetworkInverse {
    pub fn new(net: Mlp) -> Result<Self> {
        net.validate()?;
        if net.arity != 1 {
            return Err(Error::Arity {
                expected: 1,
                got: net.arity,
            });
        }
        Ok(NetworkInverse { net })
    }
}

impl Feedforward for NetworkInverse {
    fn name(&self) -> &'static str {
        "network"
    }

    fn voltage(&mut self, v_ref: f64, _a_ref: f64) -> Result<f64> {
        self.net.forward(&[v_ref])
    }

    fn reset(&mut self) {}
}

/// What a compensator factory may need.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatorInputs<'a> {
    pub params: Option<&'a FrictionParams>,
    pub net: Option<&'a Mlp>,
    pub dt: f64,
}

pub type Factory = fn(&CompensatorInputs<'_>) -> Result<Box<dyn Feedforward>>;

pub struct FeedforwardRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl Default for FeedforwardRegistry {
    fn default() -> Self {
        let mut reg = FeedforwardRegistry {
            factories: BTreeMap::new(),
        };
        reg.register("none", |_| Ok(Box::new(NoFeedforward)));
        reg.register("analytic", |inputs| {
            let params = inputs
                .params
                .ok_or_else(|| Error::invalid("analytic", "needs friction parameters"))?;
            params.validate()?;
            Ok(Box::new(AnalyticInverse::new(*params, inputs.dt)))
        });
        reg.register("network", |inputs| {
            let net = inputs.net.ok_or_else(|| Error::invalid("network", "needs trained weights"))?;
            Ok(Box::new(NetworkInverse::new(net.clone())?))
        });
        reg
    }
}

impl FeedforwardRegistry {
    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(&self, name: &str, inputs: &CompensatorInputs<'_>) -> Result<Box<dyn Feedforward>> {
        let factory = self.factories.get(name).ok_or_else(|| Error::UnknownName {
            kind: "feedforward scheme",
            name: name.to_string(),
        })?;
        factory(inputs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedforwardSpec {
    None,
    Analytic { params: FrictionParams },
    Network { net: Mlp },
}

impl FeedforwardSpec {
    pub fn name(&self) -> &'static str {
        match self {
            FeedforwardSpec::None => "none",
            FeedforwardSpec::Analytic { .. } => "analytic",
            FeedforwardSpec::Network { .. } => "network",
        }
    }

    pub fn build(&self, dt: f64) -> Result<Box<dyn Feedforward>> {
        let inputs = match self {
            FeedforwardSpec::None => CompensatorInputs { dt, ..Default::default() },
            FeedforwardSpec::Analytic { params } => CompensatorInputs {
                params: Some(params),
                net: None,
                dt,
            },
            FeedforwardSpec::Network { net } => CompensatorInputs {
                params: None,
                net: Some(net),
                dt,
            },
        };
        FeedforwardRegistry::default().build(self.name(), &inputs)
    }
}

/// Single evaluation with a constant reference history.
pub fn feedforward_voltage(spec: &FeedforwardSpec, v_ref: f64, a_ref: f64, dt: f64) -> Result<f64> {
    spec.build(dt)?.voltage(v_ref, a_ref)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub max_mm: f64,
    pub rms_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    pub scheme: String,
    /// Plant record; `u` holds the applied (saturated) voltage.
    pub trajectory: Trajectory,
    pub x_ref: Vec<f64>,
    pub u_fb: Vec<f64>,
    pub u_ff: Vec<f64>,
    /// Leading samples left out of the metrics (one reference period).
    pub settle_samples: usize,
    pub metrics: ErrorMetrics,
}

impl TrackingResult {
    pub fn errors(&self) -> Vec<f64> {
        self.x_ref.iter().zip(&self.trajectory.x).map(|(r, x)| r - x).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "x_ref", "x", "u_fb", "u_ff", "u_total", "err"])?;
        let traj = &self.trajectory;
        for i in 0..traj.len() {
            out.write_record([
                fmt_f64(traj.time(i)),
                fmt_f64(self.x_ref[i]),
                fmt_f64(traj.x[i]),
                fmt_f64(self.u_fb[i]),
                fmt_f64(self.u_ff[i]),
                fmt_f64(traj.u[i]),
                fmt_f64(self.x_ref[i] - traj.x[i]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Error column of a tracking CSV.
pub fn read_tracking_errors<R: Read>(r: R) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "err")
        .ok_or_else(|| Error::invalid("header", "missing `err` column"))?;
    rdr.records().map(|rec| parse_field(&rec?, col)).collect()
}

/// Max and RMS of `errors` after dropping the first `skip` samples, in mm.
pub fn metrics_of(errors: &[f64], skip: usize) -> Result<ErrorMetrics> {
    if errors.len() <= skip {
        return Err(Error::TooShort(format!(
            "{} samples do not extend past the first reference period ({skip} samples)",
            errors.len()
        )));
    }
    let tail = &errors[skip..];
    let max = tail.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let rms = (tail.iter().map(|e| e * e).sum::<f64>() / tail.len() as f64).sqrt();
    Ok(ErrorMetrics {
        max_mm: max * 1e3,
        rms_mm: rms * 1e3,
    })
}

pub fn error_metrics(result: &TrackingResult) -> Result<ErrorMetrics> {
    metrics_of(&result.errors(), result.settle_samples)
}

/// Closed-loop tracking of a position reference. Reference velocity and
/// acceleration are taken analytically from `reference`.
pub fn track(
    plant: &PlantConfig,
    pi: &PiConfig,
    ff: &mut dyn Feedforward,
    reference: &SignalSpec,
    duration: f64,
) -> Result<TrackingResult> {
    plant.validate()?;
    pi.validate()?;
    reference.validate()?;
    if (pi.dt - plant.dt).abs() > 1e-15 {
        return Err(Error::invalid("dt", "controller and plant must share a sample step"));
    }
    let n = sample_count(duration, plant.dt)?;
    let period = reference.period().unwrap_or(0.0);
    let settle_samples = ((period / plant.dt).round() as usize).min(n);

    ff.reset();
    let mut ctrl = PiController::new(*pi);
    let mut state = PlantState::new(plant);
    let mut traj = Trajectory::with_capacity(plant.dt, n);
    let mut x_ref = Vec::with_capacity(n);
    let mut u_fb = Vec::with_capacity(n);
    let mut u_ff = Vec::with_capacity(n);
    let mut saturated = 0usize;

    for i in 0..n {
        let t = i as f64 * plant.dt;
        let r = reference.value(t);
        let ffv = ff.voltage(reference.derivative(t), reference.second_derivative(t))?;
        let out = ctrl.update(r - state.x, ffv);
        saturated += usize::from(out.saturated);
        let (x, v) = (state.x, state.v);
        let info = state.advance(out.total, plant, i)?;
        traj.push(out.total, x, v, info.acceleration);
        x_ref.push(r);
        u_fb.push(out.feedback);
        u_ff.push(ffv);
    }
    let fraction = saturated as f64 / n as f64;
    if fraction > crate::dataset::SATURATION_FRACTION_LIMIT {
        return Err(Error::Saturated {
            fraction: 100.0 * fraction,
            limit: pi.saturation,
        });
    }
    let errors: Vec<f64> = x_ref.iter().zip(&traj.x).map(|(r, x)| r - x).collect();
    let metrics = metrics_of(&errors, settle_samples)?;
    Ok(TrackingResult {
        scheme: ff.name().to_string(),
        trajectory: traj,
        x_ref,
        u_fb,
        u_ff,
        settle_samples,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_feedforward_is_zero() {
        assert_eq!(feedforward_voltage(&FeedforwardSpec::None, 0.3, -2.0, 0.0005).unwrap(), 0.0);
    }

    #[test]
    fn analytic_inverts_steady_state() {
        let params = FrictionParams::identified();
        let v = crate::plant::steady_state_velocity(&params, 1.6);
        let u = feedforward_voltage(&FeedforwardSpec::Analytic { params }, v, 0.0, 0.0005).unwrap();
        assert!((u - 1.6).abs() < 1e-12, "{u}");
        let v = crate::plant::steady_state_velocity(&params, -2.3);
        let u = feedforward_voltage(&FeedforwardSpec::Analytic { params }, v, 0.0, 0.0005).unwrap();
        assert!((u + 2.3).abs() < 1e-12, "{u}");
    }

    #[test]
    fn analytic_uses_delayed_reference_velocity() {
        let params = FrictionParams::identified();
        let mut ff = AnalyticInverse::new(params, 0.0005);
        let mut last = 0.0;
        for i in 0..20 {
            last = ff.voltage(0.01 * i as f64, 0.0).unwrap();
        }
        // v(t - tau) is seven samples back: 0.12
        let expected = (params.a1p * 0.12 + params.a2p) / params.a3;
        assert!((last - expected).abs() < 1e-12);
    }

    #[test]
    fn network_needs_velocity_arity() {
        let net = Mlp::zeros(3, 2);
        assert!(matches!(
            FeedforwardSpec::Network { net }.build(0.0005),
            Err(Error::Arity { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn registry_lists_and_rejects() {
        let reg = FeedforwardRegistry::default();
        assert_eq!(reg.names(), vec!["analytic", "network", "none"]);
        let inputs = CompensatorInputs { dt: 0.0005, ..Default::default() };
        assert!(matches!(reg.build("lookup-table", &inputs), Err(Error::UnknownName { .. })));
        assert!(reg.build("analytic", &inputs).is_err());
        assert_eq!(reg.build("none", &inputs).unwrap().name(), "none");
    }

    #[test]
    fn integrator_freezes_while_pinned() {
        let mut pi = PiController::new(PiConfig {
            kp: 100.0,
            ki: 1000.0,
            saturation: 1.0,
            dt: 0.001,
        });
        for _ in 0..10 {
            assert!(!pi.update(0.005, 0.0).saturated);
        }
        assert!(pi.update(0.5, 0.0).saturated);
        let held = pi.integral();
        assert!(held > 0.0);
        for _ in 0..100 {
            let out = pi.update(0.5, 0.0);
            assert!(out.saturated);
            assert_eq!(out.total, 1.0);
            assert!(pi.integral().abs() <= held.abs());
        }
        // error opposing the saturation unwinds immediately
        pi.update(-0.001, 0.0);
        assert!(pi.integral() < held);
    }

    #[test]
    fn metrics_examples() {
        assert_eq!(metrics_of(&[0.0; 10], 2).unwrap(), ErrorMetrics { max_mm: 0.0, rms_mm: 0.0 });
        let m = metrics_of(&[1.0, 1e-5, 1e-5, -1e-5], 1).unwrap();
        assert!((m.max_mm - 0.01).abs() < 1e-15);
        assert!((m.rms_mm - 0.01).abs() < 1e-15);
        assert!(metrics_of(&[0.0; 3], 3).is_err());
    }

    #[test]
    fn zero_reference_tracks_perfectly() {
        let reference = SignalSpec::resting_cosine(0.0, std::f64::consts::PI);
        let res = track(
            &PlantConfig::default(),
            &PiConfig::default(),
            &mut NoFeedforward,
            &reference,
            4.0,
        )
        .unwrap();
        assert_eq!(res.metrics.max_mm, 0.0);
        assert_eq!(res.settle_samples, 4000);
    }

    #[test]
    fn mismatched_dt_is_rejected() {
        let pi = PiConfig { dt: 0.001, ..Default::default() };
        let reference = SignalSpec::resting_cosine(0.005, 3.0);
        assert!(track(&PlantConfig::default(), &pi, &mut NoFeedforward, &reference, 3.0).is_err());
    }
}
