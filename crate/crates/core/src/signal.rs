//! Excitation and reference waveforms.
//!
//! The same description drives the plant (as a voltage) and the tracking
//! loop (as a position reference); derivatives are analytic so reference
//! velocity and acceleration never go through numerical differencing.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineTerm {
    pub amplitude: f64,
    /// rad/s
    pub omega: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    /// `amplitude` for `start <= t < start + duration`, `offset` elsewhere.
    Pulse {
        amplitude: f64,
        duration: f64,
        #[serde(default)]
        start: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + amplitude * sin(omega * t + phase)`
    Sinusoid {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + sum_k amplitude_k * cos(omega_k * t + phase_k)`
    FourierSum {
        #[serde(default)]
        offset: f64,
        terms: Vec<CosineTerm>,
    },
}

impl SignalSpec {
    pub fn pulse(amplitude: f64, duration: f64) -> Self {
        SignalSpec::Pulse {
            amplitude,
            duration,
            start: 0.0,
            offset: 0.0,
        }
    }

    pub fn sinusoid(amplitude: f64, omega: f64, phase: f64, offset: f64) -> Self {
        SignalSpec::Sinusoid {
            amplitude,
            omega,
            phase,
            offset,
        }
    }

    /// Position reference `A (1 - cos(omega t))`: starts at rest at the origin
    /// and has velocity `A omega sin(omega t)`.
    pub fn resting_cosine(amplitude: f64, omega: f64) -> Self {
        SignalSpec::Sinusoid {
            amplitude,
            omega,
            phase: -std::f64::consts::FRAC_PI_2,
            offset: amplitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &'static str, x: f64| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be finite, got {x}")))
            }
        };
        match self {
            SignalSpec::Pulse {
                amplitude,
                duration,
                start,
                offset,
            } => {
                finite("amplitude", *amplitude)?;
                finite("start", *start)?;
                finite("offset", *offset)?;
                if !(*duration > 0.0 && duration.is_finite()) {
                    return Err(Error::invalid("duration", "pulse duration must be > 0"));
                }
            }
            SignalSpec::Sinusoid {
                amplitude,
                omega,
                phase,
                offset,
            } => {
                finite("amplitude", *amplitude)?;
                finite("omega", *omega)?;
                finite("phase", *phase)?;
                finite("offset", *offset)?;
            }
            SignalSpec::FourierSum { offset, terms } => {
                finite("offset", *offset)?;
                if terms.is_empty() {
                    return Err(Error::invalid("terms", "fourier sum needs at least one term"));
                }
                for term in terms {
                    finite("amplitude", term.amplitude)?;
                    finite("omega", term.omega)?;
                    finite("phase", term.phase)?;
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            SignalSpec::Pulse {
                amplitude,
                duration,
                start,
                offset,
            } => {
                if t >= *start && t < start + duration {
                    *amplitude
                } else {
                    *offset
                }
            }
            SignalSpec::Sinusoid {
                amplitude,
                omega,
                phase,
                offset,
            } => offset + amplitude * (omega * t + phase).sin(),
            SignalSpec::FourierSum { offset, terms } => {
                offset
                    + terms
                        .iter()
                        .map(|c| c.amplitude * (c.omega * t + c.phase).cos())
                        .sum::<f64>()
            }
        }
    }

    /// First time derivative; a pulse is treated as piecewise constant.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            SignalSpec::Pulse { .. } => 0.0,
            SignalSpec::Sinusoid {
                amplitude,
                omega,
                phase,
                ..
            } => amplitude * omega * (omega * t + phase).cos(),
            SignalSpec::FourierSum { terms, .. } => terms
                .iter()
                .map(|c| -c.amplitude * c.omega * (c.omega * t + c.phase).sin())
                .sum(),
        }
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        match self {
            SignalSpec::Pulse { .. } => 0.0,
            SignalSpec::Sinusoid {
                amplitude,
                omega,
                phase,
                ..
            } => -amplitude * omega * omega * (omega * t + phase).sin(),
            SignalSpec::FourierSum { terms, .. } => terms
                .iter()
                .map(|c| -c.amplitude * c.omega * c.omega * (c.omega * t + c.phase).cos())
                .sum(),
        }
    }

    /// Period of the slowest component, if the signal is periodic.
    pub fn period(&self) -> Option<f64> {
        match self {
            SignalSpec::Pulse { .. } => None,
            SignalSpec::Sinusoid { omega, .. } => {
                (omega.abs() > 0.0).then(|| TAU / omega.abs())
            }
            SignalSpec::FourierSum { terms, .. } => terms
                .iter()
                .map(|c| c.omega.abs())
                .filter(|w| *w > 0.0)
                .reduce(f64::min)
                .map(|w| TAU / w),
        }
    }

    /// Angular frequency of a plain sinusoid.
    pub fn omega(&self) -> Option<f64> {
        match self {
            SignalSpec::Sinusoid { omega, .. } => Some(*omega),
            _ => None,
        }
    }

    /// The same waveform with its sign flipped.
    pub fn negated(&self) -> Self {
        match self.clone() {
            SignalSpec::Pulse {
                amplitude,
                duration,
                start,
                offset,
            } => SignalSpec::Pulse {
                amplitude: -amplitude,
                duration,
                start,
                offset: -offset,
            },
            SignalSpec::Sinusoid {
                amplitude,
                omega,
                phase,
                offset,
            } => SignalSpec::Sinusoid {
                amplitude: -amplitude,
                omega,
                phase,
                offset: -offset,
            },
            SignalSpec::FourierSum { offset, terms } => SignalSpec::FourierSum {
                offset: -offset,
                terms: terms
                    .into_iter()
                    .map(|c| CosineTerm {
                        amplitude: -c.amplitude,
                        ..c
                    })
                    .collect(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pulse_window_is_half_open() {
        let s = SignalSpec::pulse(1.6, 0.4);
        assert_eq!(s.value(0.0), 1.6);
        assert_eq!(s.value(0.399), 1.6);
        assert_eq!(s.value(0.4), 0.0);
        assert_eq!(s.derivative(0.1), 0.0);
    }

    #[test]
    fn resting_cosine_starts_at_rest() {
        let s = SignalSpec::resting_cosine(0.005, std::f64::consts::PI);
        assert!(s.value(0.0).abs() < 1e-18);
        assert!(s.derivative(0.0).abs() < 1e-18);
        assert!((s.value(1.0) - 0.01).abs() < 1e-15);
        assert!((s.period().unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let specs = [
            SignalSpec::sinusoid(1.5, std::f64::consts::FRAC_PI_2, -1.0, -0.3),
            SignalSpec::FourierSum {
                offset: 0.1,
                terms: vec![
                    CosineTerm {
                        amplitude: 0.2,
                        omega: 6.0,
                        phase: 0.0,
                    },
                    CosineTerm {
                        amplitude: -0.05,
                        omega: 18.0,
                        phase: 0.3,
                    },
                ],
            },
        ];
        let h = 1e-5;
        for s in &specs {
            for &t in &[0.0, 0.37, 1.9] {
                let d1 = (s.value(t + h) - s.value(t - h)) / (2.0 * h);
                let d2 = (s.derivative(t + h) - s.derivative(t - h)) / (2.0 * h);
                assert!((d1 - s.derivative(t)).abs() < 1e-6);
                assert!((d2 - s.second_derivative(t)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(SignalSpec::pulse(1.0, 0.0).validate().is_err());
        let empty = SignalSpec::FourierSum {
            offset: 0.0,
            terms: vec![],
        };
        assert!(empty.validate().is_err());
        assert!(SignalSpec::sinusoid(f64::NAN, 1.0, 0.0, 0.0).validate().is_err());
    }

    #[test]
    fn period_uses_slowest_term() {
        let s = SignalSpec::FourierSum {
            offset: 0.0,
            terms: vec![
                CosineTerm {
                    amplitude: 1.0,
                    omega: 6.0 * std::f64::consts::PI,
                    phase: 0.0,
                },
                CosineTerm {
                    amplitude: 1.0,
                    omega: 2.0 * std::f64::consts::PI,
                    phase: 0.0,
                },
            ],
        };
        assert!((s.period().unwrap() - 1.0).abs() < 1e-15);
    }
}
