//! Friction identification from constant-voltage pulses.
//!
//! At steady state under a pulse of amplitude `u` the model balances as
//! `a1 * v + a2 * sgn(v) = a3 * u`, which is linear in the four unknown
//! direction-dependent coefficients. Stacking one row per pulse gives an
//! overdetermined system solved by least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::dataset::differentiate;
use crate::error::{Error, Result};
use crate::plant::{simulate, FrictionParams, PlantConfig};
use crate::rng;
use crate::signal::SignalSpec;
use crate::trajectory::{fmt_f64, parse_field, Trajectory};

/// Manufacturer voltage gain; never estimated.
pub const DEFAULT_A3: f64 = 6.0;
pub const PULSE_DURATION: f64 = 0.4;
/// Pulse amplitudes of the identification experiments, in the order they
/// were applied.
pub const STAGE_PULSES: [f64; 10] = [1.6, -2.3, -1.8, 1.3, -2.0, 1.5, -2.1, 1.7, -2.5, 2.0];

/// Fraction of each pulse, counted from its end, averaged for the steady
/// velocity.
pub const STEADY_WINDOW_FRACTION: f64 = 0.2;
/// Largest allowed spread of the steady window relative to its mean.
pub const SETTLED_TOLERANCE: f64 = 0.02;
/// Search window for the delay estimate (s).
pub const DELAY_SEARCH: f64 = 0.05;

const MEASUREMENT_FIXTURE: &str = include_str!("../fixtures/pulse_measurements.csv");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseMeasurement {
    /// V
    pub amplitude: f64,
    /// s
    pub duration: f64,
    /// m/s
    pub steady_velocity: f64,
}

impl PulseMeasurement {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::invalid("duration", "must be > 0"));
        }
        if !self.amplitude.is_finite() || self.amplitude == 0.0 {
            return Err(Error::invalid("amplitude", "must be finite and non-zero"));
        }
        if !self.steady_velocity.is_finite() {
            return Err(Error::invalid("steady_velocity", "must be finite"));
        }
        if self.steady_velocity != 0.0 && self.steady_velocity.signum() != self.amplitude.signum() {
            return Err(Error::invalid(
                "steady_velocity",
                format!(
                    "sign of {} disagrees with pulse amplitude {}",
                    self.steady_velocity, self.amplitude
                ),
            ));
        }
        Ok(())
    }
}

/// The ten measurements shipped with the crate.
pub fn stage_measurements() -> Vec<PulseMeasurement> {
    read_measurements_csv(MEASUREMENT_FIXTURE.as_bytes()).expect("bundled fixture parses")
}

pub fn read_measurements_csv<R: Read>(r: R) -> Result<Vec<PulseMeasurement>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["amplitude_V", "duration_s", "steady_velocity_mps"] {
        return Err(Error::invalid(
            "header",
            "expected `amplitude_V,duration_s,steady_velocity_mps`",
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let m = PulseMeasurement {
            amplitude: parse_field(&rec, 0)?,
            duration: parse_field(&rec, 1)?,
            steady_velocity: parse_field(&rec, 2)?,
        };
        m.validate()?;
        out.push(m);
    }
    Ok(out)
}

pub fn write_measurements_csv<W: Write>(w: W, measurements: &[PulseMeasurement]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["amplitude_V", "duration_s", "steady_velocity_mps"])?;
    for m in measurements {
        out.write_record([fmt_f64(m.amplitude), fmt_f64(m.duration), fmt_f64(m.steady_velocity)])?;
    }
    out.flush()?;
    Ok(())
}

/// `X A = Y` with `A = [a1p, a1n, a2p, a2n]`.
///
/// Rows for negative pulses come first, then positive pulses, each group
/// ordered by increasing pulse magnitude (a stable sort, so ties keep
/// their input order).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSystem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub a3: f64,
    pub tau: f64,
}

pub fn build_regression(measurements: &[PulseMeasurement], a3: f64) -> Result<RegressionSystem> {
    if !(a3 > 0.0 && a3.is_finite()) {
        return Err(Error::invalid("a3", "must be > 0"));
    }
    for m in measurements {
        m.validate()?;
    }
    let mut neg: Vec<&PulseMeasurement> = measurements.iter().filter(|m| m.amplitude < 0.0).collect();
    let mut pos: Vec<&PulseMeasurement> = measurements.iter().filter(|m| m.amplitude > 0.0).collect();
    for (direction, group) in [("negative", &neg), ("positive", &pos)] {
        if group.len() < 2 {
            return Err(Error::Unidentifiable {
                direction,
                needed: 2,
                got: group.len(),
            });
        }
    }
    let by_magnitude = |a: &&PulseMeasurement, b: &&PulseMeasurement| a.amplitude.abs().total_cmp(&b.amplitude.abs());
    neg.sort_by(by_magnitude);
    pos.sort_by(by_magnitude);

    let rows = measurements.len();
    let mut x = DMatrix::zeros(rows, 4);
    let mut y = DVector::zeros(rows);
    for (r, m) in neg.iter().chain(pos.iter()).enumerate() {
        if m.amplitude < 0.0 {
            x[(r, 1)] = m.steady_velocity.abs();
            x[(r, 3)] = 1.0;
            y[r] = a3 * m.amplitude.abs();
        } else {
            x[(r, 0)] = -m.steady_velocity;
            x[(r, 2)] = -1.0;
            y[r] = -a3 * m.amplitude;
        }
    }
    Ok(RegressionSystem { x, y, a3, tau: 0.0 })
}

const COLUMN_DIRECTION: [&str; 4] = ["positive", "negative", "positive", "negative"];

/// Householder QR least squares.
pub fn solve_least_squares(sys: &RegressionSystem) -> Result<FrictionParams> {
    let (rows, cols) = sys.x.shape();
    if cols != 4 || rows != sys.y.len() {
        return Err(Error::invalid("regression", format!("expected n x 4 system, got {rows} x {cols}")));
    }
    if rows < 4 {
        return Err(Error::Singular { direction: "positive and negative" });
    }
    let qr = sys.x.clone().qr();
    let r = qr.r();
    let scale = (0..4).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..4 {
        if r[(i, i)].abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Singular {
                direction: COLUMN_DIRECTION[i],
            });
        }
    }
    let rhs = qr.q().transpose() * &sys.y;
    let a = r
        .solve_upper_triangular(&rhs)
        .ok_or(Error::Singular { direction: "positive and negative" })?;
    Ok(FrictionParams {
        a1p: a[0],
        a1n: a[1],
        a2p: a[2],
        a2n: a[3],
        a3: sys.a3,
        tau: sys.tau,
    })
}

/// Euclidean norm of `X A - Y` for the four identified coefficients.
pub fn residual_norm(sys: &RegressionSystem, params: &FrictionParams) -> f64 {
    let a = DVector::from_vec(vec![params.a1p, params.a1n, params.a2p, params.a2n]);
    (&sys.x * a - &sys.y).norm()
}

/// Mean of the final fraction of the pulse, rejecting windows that have
/// not settled. The settling check compares the means of four equal
/// sub-blocks so measurement noise on individual samples does not trip it.
pub fn extract_steady_velocity(v: &[f64], dt: f64, start: f64, duration: f64, amplitude: f64) -> Result<f64> {
    let first = ((start + duration * (1.0 - STEADY_WINDOW_FRACTION)) / dt).round() as usize;
    let end = (((start + duration) / dt).round() as usize).min(v.len());
    if end <= first + 4 {
        return Err(Error::TooShort("steady-state window holds fewer than 4 samples".into()));
    }
    let window = &v[first..end];
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let block = window.len() / 4;
    let block_means: Vec<f64> = window
        .chunks(block)
        .take(4)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let hi = block_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = block_means.iter().copied().fold(f64::INFINITY, f64::min);
    if mean == 0.0 {
        return Ok(0.0);
    }
    if hi - lo > SETTLED_TOLERANCE * mean.abs() {
        return Err(Error::NotSettled {
            amplitude,
            range: hi - lo,
            mean,
        });
    }
    Ok(mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseExperiment {
    pub duration: f64,
    /// Position noise (m); zero disables it.
    pub noise_sigma: f64,
    pub seed: u64,
    pub smoothing_window: usize,
}

impl Default for PulseExperiment {
    fn default() -> Self {
        PulseExperiment {
            duration: PULSE_DURATION,
            noise_sigma: 0.0,
            seed: 0,
            smoothing_window: 5,
        }
    }
}

/// Simulate each pulse from rest and read its steady velocity off the
/// differentiated (optionally noisy) position record.
pub fn simulate_pulses(cfg: &PlantConfig, amplitudes: &[f64], exp: &PulseExperiment) -> Result<Vec<PulseMeasurement>> {
    amplitudes
        .iter()
        .enumerate()
        .map(|(k, &amplitude)| {
            let traj = simulate(cfg, &SignalSpec::pulse(amplitude, exp.duration), exp.duration)?;
            let mut x = traj.x;
            rng::add_gaussian(&mut x, exp.noise_sigma, &mut rng::stream(exp.seed, k as u64));
            let (v, _) = differentiate(&x, cfg.dt, exp.smoothing_window)?;
            let steady_velocity = extract_steady_velocity(&v, cfg.dt, 0.0, exp.duration, amplitude)?;
            Ok(PulseMeasurement {
                amplitude,
                duration: exp.duration,
                steady_velocity,
            })
        })
        .collect()
}

/// Build and solve in one go, attaching the viscous delay.
pub fn identify(measurements: &[PulseMeasurement], a3: f64, tau: f64) -> Result<FrictionParams> {
    let mut sys = build_regression(measurements, a3)?;
    sys.tau = tau;
    solve_least_squares(&sys)
}

/// Time by which `modeled` lags `measured`, from the peak of the
/// normalised cross-correlation of their velocities over lags within
/// +-50 ms, refined to sub-sample resolution by a parabola through the
/// peak and its neighbours.
pub fn estimate_delay(measured: &Trajectory, modeled: &Trajectory) -> Result<f64> {
    if (measured.dt - modeled.dt).abs() > 1e-15 * measured.dt.max(modeled.dt) {
        return Err(Error::invalid("dt", "trajectories must share a sample step"));
    }
    if measured.len() != modeled.len() {
        return Err(Error::invalid("length", "trajectories must have equal length"));
    }
    let (m, d) = (&measured.v, &modeled.v);
    let n = m.len();
    let flat = |s: &[f64]| {
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().all(|x| (x - mean).abs() <= 1e-12 * mean.abs().max(1e-300))
    };
    if flat(m) || flat(d) {
        return Err(Error::UndefinedDelay("velocity has zero variance".into()));
    }
    let max_lag = ((DELAY_SEARCH / measured.dt).round() as usize).min(n / 2);
    let lag_count = 2 * max_lag + 1;
    // corr[k] pairs modeled[i + lag] with measured[i], lag = k - max_lag
    let corr: Vec<f64> = (0..lag_count)
        .map(|k| {
            let lag = k as isize - max_lag as isize;
            let (ms, ds) = if lag >= 0 {
                (&m[..n - lag as usize], &d[lag as usize..])
            } else {
                (&m[(-lag) as usize..], &d[..n - (-lag) as usize])
            };
            pearson(ms, ds)
        })
        .collect();
    let (best, _) = corr
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &c)| if c > acc.1 { (k, c) } else { acc });
    if !corr[best].is_finite() {
        return Err(Error::UndefinedDelay("correlation is not finite".into()));
    }
    let mut offset = 0.0;
    if best > 0 && best + 1 < lag_count {
        let (l, c, r) = (corr[best - 1], corr[best], corr[best + 1]);
        let denom = l - 2.0 * c + r;
        if denom < 0.0 {
            offset = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok((best as f64 - max_lag as f64 + offset) * measured.dt)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        f64::NEG_INFINITY
    } else {
        sab / (saa * sbb).sqrt()
    }
}
