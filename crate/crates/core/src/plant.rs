//! Fixed-step simulation of the stage dynamics
//!
//! ```text
//! x'' = -a1 * x'(t - tau) - a2 * sgn(x') + a3 * u
//! ```
//!
//! with direction-dependent viscous (`a1`) and Coulomb (`a2`) coefficients
//! and a stiction hold at rest. Velocity is advanced by explicit Euler and
//! position is then advanced with the updated velocity.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::signal::SignalSpec;
use crate::trajectory::Trajectory;

pub const DEFAULT_DT: f64 = 0.0005;
pub const DEFAULT_STICTION_EPS: f64 = 1e-6;

/// Lumped stage coefficients. Mass and the raw force constants are folded
/// in, so every field is already an acceleration-scale quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrictionParams {
    /// Viscous coefficient for positive motion (1/s).
    pub a1p: f64,
    /// Viscous coefficient for negative motion (1/s).
    pub a1n: f64,
    /// Coulomb acceleration for positive motion (m/s^2).
    pub a2p: f64,
    /// Coulomb acceleration for negative motion (m/s^2).
    pub a2n: f64,
    /// Voltage gain (m/(s^2 V)).
    pub a3: f64,
    /// Delay on the viscous term (s).
    pub tau: f64,
}

impl Default for FrictionParams {
    fn default() -> Self {
        FrictionParams::identified()
    }
}

impl FrictionParams {
    /// Coefficients identified from the pulse experiments, with the 3.5 ms
    /// viscous delay and the manufacturer voltage gain of 6.
    pub const fn identified() -> Self {
        FrictionParams {
            a1p: 104.0154,
            a1n: 117.1441,
            a2p: 3.1023,
            a2n: 6.8216,
            a3: 6.0,
            tau: 0.0035,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("a1p", self.a1p), ("a1n", self.a1n), ("a3", self.a3)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {value}")));
            }
        }
        // Zero Coulomb friction is allowed so the purely viscous plant can be
        // checked against its closed-form response.
        for (name, value) in [("a2p", self.a2p), ("a2n", self.a2n)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {value}")));
            }
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", format!("must be finite and >= 0, got {}", self.tau)));
        }
        Ok(())
    }

    /// `a1 * v` with `a1` chosen by the sign of `v`.
    pub fn viscous_term(&self, v: f64) -> f64 {
        if v > 0.0 {
            self.a1p * v
        } else if v < 0.0 {
            self.a1n * v
        } else {
            0.0
        }
    }

    pub fn viscous_coefficient(&self, v: f64) -> f64 {
        if v >= 0.0 {
            self.a1p
        } else {
            self.a1n
        }
    }

    /// Signed Coulomb term `a2 * sgn(direction)`.
    pub fn coulomb_term(&self, direction: f64) -> f64 {
        if direction > 0.0 {
            self.a2p
        } else if direction < 0.0 {
            -self.a2n
        } else {
            0.0
        }
    }

    /// Magnitude that a drive of the given sign must exceed to leave rest.
    pub fn breakaway(&self, drive: f64) -> f64 {
        if drive >= 0.0 {
            self.a2p
        } else {
            self.a2n
        }
    }

    /// Copy with both friction families scaled.
    pub fn with_friction_scaled(&self, viscous: f64, coulomb: f64) -> Self {
        FrictionParams {
            a1p: self.a1p * viscous,
            a1n: self.a1n * viscous,
            a2p: self.a2p * coulomb,
            a2n: self.a2n * coulomb,
            ..*self
        }
    }
}

/// How the commanded voltage turns into actuator acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Actuator {
    /// `a3 * u`
    #[default]
    Linear,
    /// `a3 * limit * tanh(u / limit)`: linear for small `u`, smoothly
    /// saturating at `limit` volts equivalent.
    TanhSaturation { limit: f64 },
}

impl Actuator {
    pub fn drive(&self, a3: f64, u: f64) -> f64 {
        match *self {
            Actuator::Linear => a3 * u,
            Actuator::TanhSaturation { limit } => a3 * limit * (u / limit).tanh(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub params: FrictionParams,
    pub dt: f64,
    pub stiction_velocity_eps: f64,
    pub initial_position: f64,
    pub initial_velocity: f64,
    pub actuator: Actuator,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            params: FrictionParams::identified(),
            dt: DEFAULT_DT,
            stiction_velocity_eps: DEFAULT_STICTION_EPS,
            initial_position: 0.0,
            initial_velocity: 0.0,
            actuator: Actuator::Linear,
        }
    }
}

impl PlantConfig {
    pub fn new(params: FrictionParams) -> Self {
        PlantConfig {
            params,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.stiction_velocity_eps > 0.0 && self.stiction_velocity_eps.is_finite()) {
            return Err(Error::invalid("stiction_velocity_eps", "must be > 0"));
        }
        if !self.initial_position.is_finite() || !self.initial_velocity.is_finite() {
            return Err(Error::invalid("initial_state", "must be finite"));
        }
        if let Actuator::TanhSaturation { limit } = self.actuator {
            if !(limit > 0.0 && limit.is_finite()) {
                return Err(Error::invalid("actuator.limit", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Fixed-length history of a sampled signal that returns its value a fixed
/// time in the past, interpolating linearly when the delay is not a whole
/// number of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLine {
    buf: VecDeque<f64>,
    whole: usize,
    frac: f64,
}

impl DelayLine {
    /// History pre-filled with `initial` (constant pre-history).
    pub fn new(delay: f64, dt: f64, initial: f64) -> Self {
        let steps = delay / dt;
        let nearest = steps.round();
        let (whole, frac) = if (steps - nearest).abs() < 1e-9 {
            (nearest as usize, 0.0)
        } else {
            (steps.floor() as usize, steps - steps.floor())
        };
        let len = whole + 2;
        DelayLine {
            buf: std::iter::repeat_n(initial, len).collect(),
            whole,
            frac,
        }
    }

    /// Replace the whole history with `value`.
    pub fn fill(&mut self, value: f64) {
        self.buf.iter_mut().for_each(|b| *b = value);
    }

    /// Record the newest sample.
    pub fn push(&mut self, value: f64) {
        self.buf.pop_front();
        self.buf.push_back(value);
    }

    /// Value `delay` seconds before the newest sample.
    pub fn delayed(&self) -> f64 {
        let n = self.buf.len();
        let near = self.buf[n - 1 - self.whole];
        if self.frac == 0.0 {
            near
        } else {
            let far = self.buf[n - 2 - self.whole];
            (1.0 - self.frac) * near + self.frac * far
        }
    }

    pub fn newest(&self) -> f64 {
        self.buf[self.buf.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: f64,
    pub v: f64,
    history: DelayLine,
}

/// What one integration step did: the acceleration it applied and whether
/// the stage was held by stiction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub acceleration: f64,
    pub held: bool,
}

impl PlantState {
    pub fn new(cfg: &PlantConfig) -> Self {
        PlantState {
            x: cfg.initial_position,
            v: cfg.initial_velocity,
            history: DelayLine::new(cfg.params.tau, cfg.dt, cfg.initial_velocity),
        }
    }

    /// Velocity `tau` seconds ago.
    pub fn delayed_velocity(&self) -> f64 {
        self.history.delayed()
    }

    /// Advance in place by one step under input `u`.
    pub fn advance(&mut self, u: f64, cfg: &PlantConfig, step: usize) -> Result<StepInfo> {
        if !u.is_finite() {
            return Err(Error::NonFinite { what: "input", step });
        }
        if !self.x.is_finite() || !self.v.is_finite() {
            return Err(Error::NonFinite { what: "state", step });
        }
        let p = &cfg.params;
        let drive = cfg.actuator.drive(p.a3, u);
        let breakaway = p.breakaway(drive);
        let moving = self.v.abs() >= cfg.stiction_velocity_eps;

        if !moving && drive.abs() <= breakaway {
            self.v = 0.0;
            self.history.push(0.0);
            return Ok(StepInfo {
                acceleration: 0.0,
                held: true,
            });
        }

        let direction = if moving { self.v } else { drive };
        let accel = drive - p.viscous_term(self.history.delayed()) - p.coulomb_term(direction);
        let mut v_next = self.v + accel * cfg.dt;
        let mut held = false;
        if moving && v_next.signum() != self.v.signum() && drive.abs() <= breakaway {
            v_next = 0.0;
            held = true;
        }
        let applied = (v_next - self.v) / cfg.dt;
        self.v = v_next;
        self.x += v_next * cfg.dt;
        self.history.push(v_next);
        if !self.x.is_finite() || !self.v.is_finite() {
            return Err(Error::NonFinite { what: "state", step });
        }
        Ok(StepInfo {
            acceleration: if held { applied } else { accel },
            held,
        })
    }

    /// Pure form of [`PlantState::advance`].
    pub fn step(&self, u: f64, cfg: &PlantConfig) -> Result<(PlantState, StepInfo)> {
        let mut next = self.clone();
        let info = next.advance(u, cfg, 0)?;
        Ok((next, info))
    }
}

/// Number of samples covering `duration`.
pub fn sample_count(duration: f64, dt: f64) -> Result<usize> {
    if !(duration.is_finite() && duration >= dt * (1.0 - 1e-9)) {
        return Err(Error::invalid("duration", format!("must be >= dt ({dt}), got {duration}")));
    }
    Ok(((duration / dt) + 1e-9).floor().max(1.0) as usize)
}

/// Open-loop response to `signal` (volts) over `duration` seconds.
pub fn simulate(cfg: &PlantConfig, signal: &SignalSpec, duration: f64) -> Result<Trajectory> {
    signal.validate()?;
    run_closed_loop(cfg, sample_count(duration, cfg.dt)?, |i, _, _| signal.value(i as f64 * cfg.dt))
}

/// Run `n` samples; `control(i, t, state)` picks the voltage for sample `i`
/// from the state at that sample.
pub fn run_closed_loop<F>(cfg: &PlantConfig, n: usize, mut control: F) -> Result<Trajectory>
where
    F: FnMut(usize, f64, &PlantState) -> f64,
{
    cfg.validate()?;
    let mut state = PlantState::new(cfg);
    let mut traj = Trajectory::with_capacity(cfg.dt, n);
    for i in 0..n {
        let t = i as f64 * cfg.dt;
        let u = control(i, t, &state);
        let (x, v) = (state.x, state.v);
        let info = state.advance(u, cfg, i)?;
        traj.push(u, x, v, info.acceleration);
    }
    Ok(traj)
}

/// Closed-form constant-input velocity; zero below breakaway. The delay
/// does not enter.
pub fn steady_state_velocity(params: &FrictionParams, u: f64) -> f64 {
    let drive = params.a3 * u;
    if drive > params.a2p {
        (drive - params.a2p) / params.a1p
    } else if drive < -params.a2n {
        (drive + params.a2n) / params.a1n
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PlantConfig {
        PlantConfig::default()
    }

    #[test]
    fn rest_without_input_stays_at_rest() {
        let traj = simulate(&cfg(), &SignalSpec::pulse(0.0, 1.0), 1.0).unwrap();
        assert!(traj.v.iter().all(|&v| v == 0.0));
        assert!(traj.x.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn below_breakaway_holds() {
        // 6 * 0.4 = 2.4 < 3.1023
        let traj = simulate(&cfg(), &SignalSpec::pulse(0.4, 1.0), 1.0).unwrap();
        assert!(traj.v.iter().all(|&v| v == 0.0));
        assert!(traj.a.iter().all(|&a| a == 0.0));
        // negative side: 6 * 1.1 = 6.6 < 6.8216
        let traj = simulate(&cfg(), &SignalSpec::pulse(-1.1, 1.0), 1.0).unwrap();
        assert!(traj.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn held_pulse_reaches_closed_form_velocity() {
        let traj = simulate(&cfg(), &SignalSpec::pulse(1.6, 0.4), 0.4).unwrap();
        let expected: f64 = (6.0 * 1.6 - 3.1023) / 104.0154;
        assert!((expected - 0.06247).abs() < 1e-5);
        let last = *traj.v.last().unwrap();
        assert!((last - expected).abs() < 1e-9 * expected, "{last} vs {expected}");
        // settled within ~5 time constants of the viscous pole
        let idx = (0.05 / traj.dt) as usize;
        assert!((traj.v[idx] - expected).abs() < 0.01 * expected);
    }

    #[test]
    fn steady_state_examples() {
        let p = FrictionParams::identified();
        assert!((steady_state_velocity(&p, 1.6) - 0.062469).abs() < 1e-5);
        assert!((steady_state_velocity(&p, -2.3) - (-0.059573)).abs() < 1e-5);
        assert_eq!(steady_state_velocity(&p, 0.0), 0.0);
        assert_eq!(steady_state_velocity(&p, 0.5), 0.0);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let c = cfg();
        let mut s = PlantState::new(&c);
        assert!(matches!(s.advance(f64::NAN, &c, 3), Err(Error::NonFinite { what: "input", step: 3 })));
        let mut s = PlantState::new(&c);
        s.v = f64::INFINITY;
        assert!(s.advance(1.0, &c, 0).is_err());
    }

    #[test]
    fn delay_line_interpolates() {
        let mut d = DelayLine::new(0.0035, 0.0005, 0.0);
        for i in 1..=20 {
            d.push(i as f64);
        }
        assert_eq!(d.delayed(), 13.0);
        let mut d = DelayLine::new(0.00125, 0.0005, 0.0);
        for i in 1..=20 {
            d.push(i as f64);
        }
        assert!((d.delayed() - 17.5).abs() < 1e-12);
        let d = DelayLine::new(0.0, 0.0005, 4.0);
        assert_eq!(d.delayed(), 4.0);
    }

    #[test]
    fn pure_step_matches_advance() {
        let c = cfg();
        let s0 = PlantState::new(&c);
        let (s1, info) = s0.step(2.0, &c).unwrap();
        assert_eq!(s0.v, 0.0);
        assert!((info.acceleration - (12.0 - 3.1023)).abs() < 1e-12);
        assert!((s1.v - info.acceleration * c.dt).abs() < 1e-15);
    }

    #[test]
    fn zero_crossing_is_clamped_under_hold() {
        let mut c = cfg();
        c.params.tau = 0.0;
        c.initial_velocity = 1e-4;
        let traj = simulate(&c, &SignalSpec::pulse(0.0, 0.01), 0.01).unwrap();
        assert!(traj.v.iter().all(|&v| v >= 0.0));
        assert_eq!(*traj.v.last().unwrap(), 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.dt = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.params.a1p = -1.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.stiction_velocity_eps = 0.0;
        assert!(c.validate().is_err());
        assert!(simulate(&cfg(), &SignalSpec::pulse(1.0, 1.0), 0.0).is_err());
    }
}
