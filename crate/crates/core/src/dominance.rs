//! Which input dominates the inverse map `a3 u = x'' + a1 x'(t - tau) + a2 sgn(x')`?
//!
//! Compares the acceleration term against the delayed viscous term sample
//! by sample. The Coulomb term is left out: away from reversals it is a
//! constant offset.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::plant::FrictionParams;
use crate::trajectory::{fmt_f64, Trajectory};

/// Below this ratio everywhere, velocity dominates.
pub const VELOCITY_THRESHOLD: f64 = 0.5;
/// Above this ratio everywhere, acceleration dominates.
pub const ACCELERATION_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DominantVariable {
    Velocity,
    Acceleration,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DominanceConfig {
    /// Absolute velocity floor (m/s).
    pub stiction_velocity_eps: f64,
    /// Samples whose delayed speed is below this fraction of the peak
    /// delayed speed are excluded too; the ratio diverges as the stage
    /// starts or stops.
    pub relative_floor: f64,
}

impl Default for DominanceConfig {
    fn default() -> Self {
        DominanceConfig {
            stiction_velocity_eps: crate::plant::DEFAULT_STICTION_EPS,
            relative_floor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    /// `(t, |x''| / |a1 x'(t - tau)|)` for every included sample.
    pub ratios: Vec<(f64, f64)>,
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub mean_ratio: f64,
    pub excluded: usize,
    pub velocity_floor: f64,
    pub dominant: DominantVariable,
    pub diagnostic: Option<String>,
}

impl DominanceReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "ratio"])?;
        for (t, r) in &self.ratios {
            out.write_record([fmt_f64(*t), fmt_f64(*r)])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `v(t - tau)` read from the sampled velocity by linear interpolation,
/// holding the first sample before the record starts.
pub fn delayed_series(v: &[f64], dt: f64, tau: f64) -> Vec<f64> {
    let shift = tau / dt;
    (0..v.len())
        .map(|i| {
            let pos = i as f64 - shift;
            if pos <= 0.0 {
                return v[0];
            }
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            if frac < 1e-9 || lo + 1 >= v.len() {
                v[lo]
            } else {
                (1.0 - frac) * v[lo] + frac * v[lo + 1]
            }
        })
        .collect()
}

pub fn analyze(traj: &Trajectory, params: &FrictionParams, cfg: &DominanceConfig) -> Result<DominanceReport> {
    params.validate()?;
    if traj.is_empty() {
        return Err(Error::TooShort("empty trajectory".into()));
    }
    let delayed = delayed_series(&traj.v, traj.dt, params.tau);
    let peak = delayed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = cfg.stiction_velocity_eps.max(cfg.relative_floor * peak);

    let mut ratios = Vec::new();
    let mut excluded = 0;
    for (i, (&vd, &a)) in delayed.iter().zip(&traj.a).enumerate() {
        if vd.abs() < floor || vd.abs() < cfg.stiction_velocity_eps {
            excluded += 1;
            continue;
        }
        let viscous = params.viscous_term(vd).abs();
        ratios.push((traj.time(i), a.abs() / viscous));
    }

    if ratios.is_empty() {
        return Ok(DominanceReport {
            ratios,
            max_ratio: f64::NAN,
            min_ratio: f64::NAN,
            mean_ratio: f64::NAN,
            excluded,
            velocity_floor: floor,
            dominant: DominantVariable::Inconclusive,
            diagnostic: Some("every sample is below the velocity floor".into()),
        });
    }
    let max_ratio = ratios.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let min_ratio = ratios.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let mean_ratio = ratios.iter().map(|r| r.1).sum::<f64>() / ratios.len() as f64;
    let dominant = if max_ratio < VELOCITY_THRESHOLD {
        DominantVariable::Velocity
    } else if min_ratio > ACCELERATION_THRESHOLD {
        DominantVariable::Acceleration
    } else {
        DominantVariable::Inconclusive
    };
    Ok(DominanceReport {
        ratios,
        max_ratio,
        min_ratio,
        mean_ratio,
        excluded,
        velocity_floor: floor,
        dominant,
        diagnostic: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(v: Vec<f64>, a: Vec<f64>) -> Trajectory {
        let n = v.len();
        Trajectory::from_columns(0.0005, vec![0.0; n], vec![0.0; n], v, a).unwrap()
    }

    #[test]
    fn constant_velocity_is_velocity_dominated() {
        let r = analyze(&traj(vec![0.05; 300], vec![0.0; 300]), &FrictionParams::identified(), &Default::default()).unwrap();
        assert!(r.ratios.iter().all(|&(_, x)| x == 0.0));
        assert_eq!(r.dominant, DominantVariable::Velocity);
        assert_eq!(r.excluded, 0);
    }

    #[test]
    fn tiny_velocity_with_spikes_is_acceleration_dominated() {
        let n = 400;
        let v: Vec<f64> = (0..n).map(|i| 1e-4 * (1.0 + 0.1 * (i as f64 * 0.3).sin())).collect();
        let a: Vec<f64> = (0..n).map(|i| if i % 40 < 20 { 5.0 } else { -8.0 }).collect();
        let r = analyze(&traj(v, a), &FrictionParams::identified(), &Default::default()).unwrap();
        assert_eq!(r.dominant, DominantVariable::Acceleration);
        assert!(r.min_ratio > 2.0);
    }

    #[test]
    fn all_rest_is_inconclusive() {
        let r = analyze(&traj(vec![0.0; 50], vec![0.0; 50]), &FrictionParams::identified(), &Default::default()).unwrap();
        assert_eq!(r.dominant, DominantVariable::Inconclusive);
        assert_eq!(r.excluded, 50);
        assert!(r.diagnostic.is_some());
    }

    #[test]
    fn delayed_series_shifts_whole_and_fractional_steps() {
        let v: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let d = delayed_series(&v, 0.0005, 0.0035);
        assert_eq!(d[20], 13.0);
        assert_eq!(d[3], 0.0);
        let d = delayed_series(&v, 0.001, 0.0025);
        assert!((d[10] - 7.5).abs() < 1e-12);
    }
}
