use piezo_inverse::control::{
    self, error_metrics, metrics_of, read_tracking_errors, track, AnalyticInverse, CompensatorInputs, Feedforward,
    FeedforwardRegistry, FeedforwardSpec, NoFeedforward, PiConfig,
};
use piezo_inverse::dataset::GridSpec;
use piezo_inverse::nn::Mlp;
use piezo_inverse::plant::{FrictionParams, PlantConfig};
use piezo_inverse::{Error, SignalSpec};

fn run(ff: &mut dyn Feedforward, reference: &SignalSpec) -> control::TrackingResult {
    let period = reference.period().unwrap();
    track(&PlantConfig::default(), &PiConfig::default(), ff, reference, 3.0 * period).unwrap()
}

/// With the plant's own parameters the inverse can only help.
#[test]
fn exact_inverse_never_hurts_on_held_out_references() {
    let plant = PlantConfig::default();
    for pair in GridSpec::default_test().pairs {
        let reference = pair.reference();
        let pi = run(&mut NoFeedforward, &reference).metrics.max_mm;
        let an = run(&mut AnalyticInverse::new(plant.params, plant.dt), &reference).metrics.max_mm;
        assert!(an <= pi, "{pair:?}: analytic {an} vs PI {pi}");
    }
}

#[test]
fn metrics_survive_the_csv_round_trip() {
    let plant = PlantConfig::default();
    let reference = SignalSpec::resting_cosine(0.005, std::f64::consts::PI);
    let result = run(&mut AnalyticInverse::new(plant.params, plant.dt), &reference);
    let mut buf = Vec::new();
    result.write_csv(&mut buf).unwrap();
    let errors = read_tracking_errors(buf.as_slice()).unwrap();
    let direct = error_metrics(&result).unwrap();
    let reread = metrics_of(&errors, result.settle_samples).unwrap();
    assert!((direct.max_mm - reread.max_mm).abs() <= 1e-12 * direct.max_mm.max(1e-300));
    assert!((direct.rms_mm - reread.rms_mm).abs() <= 1e-12 * direct.rms_mm.max(1e-300));
}

#[test]
fn registry_builds_by_name() {
    let reg = FeedforwardRegistry::default();
    assert_eq!(reg.names(), ["analytic", "network", "none"]);
    let params = FrictionParams::identified();
    let net = Mlp::published();
    let inputs = CompensatorInputs {
        params: Some(&params),
        net: Some(&net),
        dt: 0.0005,
    };
    for name in reg.names() {
        assert_eq!(reg.build(name, &inputs).unwrap().name(), name);
    }
    assert!(matches!(reg.build("pid", &inputs), Err(Error::UnknownName { .. })));
    let bare = CompensatorInputs {
        dt: 0.0005,
        ..Default::default()
    };
    assert!(reg.build("analytic", &bare).is_err());
    assert!(reg.build("network", &bare).is_err());
}

#[test]
fn registry_accepts_new_schemes() {
    struct Constant;
    impl Feedforward for Constant {
        fn name(&self) -> &'static str {
            "constant"
        }
        fn voltage(&mut self, _: f64, _: f64) -> piezo_inverse::Result<f64> {
            Ok(0.25)
        }
        fn reset(&mut self) {}
    }
    let mut reg = FeedforwardRegistry::default();
    reg.register("constant", |_| Ok(Box::new(Constant)));
    let mut ff = reg.build("constant", &CompensatorInputs::default()).unwrap();
    assert_eq!(ff.voltage(1.0, 0.0).unwrap(), 0.25);
}

#[test]
fn spec_voltage_matches_inverse_model() {
    let p = FrictionParams::identified();
    let spec = FeedforwardSpec::Analytic { params: p };
    // Constant reference velocity: the delayed velocity equals the current one.
    let v = 0.01;
    let u = control::feedforward_voltage(&spec, v, 0.0, 0.0005).unwrap();
    assert!((u - (p.a1p * v + p.a2p) / p.a3).abs() < 1e-12, "{u}");
    assert_eq!(control::feedforward_voltage(&FeedforwardSpec::None, v, 0.0, 0.0005).unwrap(), 0.0);
}

#[test]
fn mismatched_sample_steps_are_rejected() {
    let pi = PiConfig {
        dt: 0.001,
        ..Default::default()
    };
    let reference = SignalSpec::resting_cosine(0.005, 1.0);
    let err = track(&PlantConfig::default(), &pi, &mut NoFeedforward, &reference, 1.0).unwrap_err();
    assert!(matches!(err, Error::InvalidParameter { name: "dt", .. }), "{err}");
}

#[test]
fn hardware_gains_are_available() {
    let hw = PiConfig::hardware();
    assert!(hw.kp > PiConfig::default().kp);
    hw.validate().unwrap();
}
