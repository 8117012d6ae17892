use piezo_inverse::config::RunConfig;
use piezo_inverse::dominance::{analyze, DominanceConfig, DominantVariable};
use piezo_inverse::plant::simulate;
use piezo_inverse::{SignalSpec, Trajectory};

fn excitation(scale: f64) -> Trajectory {
    let cfg = RunConfig::default();
    let d = &cfg.dominance;
    let signal = match d.excitation {
        SignalSpec::Sinusoid {
            amplitude,
            omega,
            phase,
            offset,
        } => SignalSpec::sinusoid(scale * amplitude, omega, phase, scale * offset),
        ref other => panic!("unexpected excitation {other:?}"),
    };
    let traj = simulate(&cfg.plant, &signal, d.duration).unwrap();
    let skip = (d.skip / traj.dt).round() as usize;
    traj.slice(skip..traj.len())
}

fn max_ratio(traj: &Trajectory) -> f64 {
    let cfg = RunConfig::default();
    analyze(traj, &cfg.plant.params, &DominanceConfig::default()).unwrap().max_ratio
}

#[test]
fn default_excitation_is_velocity_dominated() {
    let cfg = RunConfig::default();
    let report = analyze(&excitation(1.0), &cfg.plant.params, &cfg.dominance.analysis).unwrap();
    assert_eq!(report.dominant, DominantVariable::Velocity);
    assert!(report.ratios.iter().all(|(_, r)| *r >= 0.0 && r.is_finite()));
    assert!(report.excluded > 0);
}

/// Leading samples at rest shift every time stamp but no ratio.
#[test]
fn time_relabel_shifts_only_timestamps() {
    let cfg = RunConfig::default();
    let traj = simulate(&cfg.plant, &cfg.dominance.excitation, cfg.dominance.duration).unwrap();
    let pad = 400;
    let mut padded = Trajectory::with_capacity(traj.dt, traj.len() + pad);
    for _ in 0..pad {
        padded.push(traj.u[0], 0.0, 0.0, 0.0);
    }
    for i in 0..traj.len() {
        padded.push(traj.u[i], traj.x[i], traj.v[i], traj.a[i]);
    }
    let params = &cfg.plant.params;
    let a = analyze(&traj, params, &DominanceConfig::default()).unwrap();
    let b = analyze(&padded, params, &DominanceConfig::default()).unwrap();
    assert_eq!(a.ratios.len(), b.ratios.len());
    for ((ta, ra), (tb, rb)) in a.ratios.iter().zip(&b.ratios) {
        assert!((tb - ta - pad as f64 * traj.dt).abs() < 1e-9);
        assert_eq!(ra, rb);
    }
}

#[test]
fn kinematic_scaling_leaves_ratio_unchanged() {
    let traj = excitation(1.0);
    let base = max_ratio(&traj);
    for c in [0.5, 0.8, 1.5, 2.0] {
        let scaled = Trajectory {
            x: traj.x.iter().map(|x| c * x).collect(),
            v: traj.v.iter().map(|v| c * v).collect(),
            a: traj.a.iter().map(|a| c * a).collect(),
            ..traj.clone()
        };
        let r = max_ratio(&scaled);
        assert!((r - base).abs() <= 1e-12 * base, "c={c}: {r} vs {base}");
    }
}

/// A symmetric drive that stays well above breakaway for every scale, so
/// the Coulomb term is a small share of the total force.
fn above_breakaway(scale: f64) -> Trajectory {
    let cfg = RunConfig::default();
    let signal = SignalSpec::sinusoid(5.0 * scale, std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2, 0.0);
    let traj = simulate(&cfg.plant, &signal, 8.0).unwrap();
    traj.slice(8000..traj.len())
}

#[test]
fn drive_amplitude_changes_ratio_modestly() {
    let base = max_ratio(&above_breakaway(1.0));
    for c in [0.5, 0.75, 1.25, 1.5, 2.0] {
        let r = max_ratio(&above_breakaway(c));
        assert!((r - base).abs() < 0.2 * base, "c={c}: {r} vs {base}");
    }
}

#[test]
fn resting_trajectory_is_inconclusive() {
    let traj = Trajectory::from_columns(0.0005, vec![0.0; 100], vec![0.0; 100], vec![0.0; 100], vec![0.0; 100]).unwrap();
    let report = analyze(&traj, &RunConfig::default().plant.params, &DominanceConfig::default()).unwrap();
    assert_eq!(report.dominant, DominantVariable::Inconclusive);
    assert!(report.diagnostic.is_some());
}
