//! Training/test data for the inverse network.
//!
//! The stage roughly tracks sinusoidal position references under a
//! proportional loop; velocity and acceleration come from differentiating
//! the recorded position; one reference period per grid point is cut at an
//! upward zero crossing of the reference velocity and the periods are
//! concatenated in seeded random order.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::io::Write;

use crate::error::{Error, Result};
use crate::plant::{run_closed_loop, sample_count, PlantConfig};
use crate::rng;
use crate::signal::SignalSpec;
use crate::trajectory::{fmt_f64, parse_field, Trajectory};

/// One sinusoidal reference `amplitude * (1 - cos(omega t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPair {
    /// Position amplitude (m).
    pub amplitude: f64,
    /// Angular frequency (rad/s).
    pub omega: f64,
}

impl GridPair {
    pub const fn new(amplitude: f64, omega: f64) -> Self {
        GridPair { amplitude, omega }
    }

    pub fn reference(&self) -> SignalSpec {
        SignalSpec::resting_cosine(self.amplitude, self.omega)
    }

    pub fn period(&self) -> f64 {
        TAU / self.omega
    }

    /// Peak reference velocity (m/s).
    pub fn peak_velocity(&self) -> f64 {
        self.amplitude * self.omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub role: GridRole,
    pub pairs: Vec<GridPair>,
}

impl GridSpec {
    /// Twelve references spanning the usable stroke and speed range.
    pub fn default_train() -> Self {
        let amplitudes = [0.005, 0.0125, 0.02];
        let omegas = [1.5, 3.0, 4.5, 8.0];
        GridSpec {
            role: GridRole::Train,
            pairs: amplitudes
                .iter()
                .flat_map(|&a| omegas.iter().map(move |&w| GridPair::new(a, w)))
                .collect(),
        }
    }

    /// The four held-out references, with peak velocities 0.016625,
    /// 0.0525, 0.030875 and 0.0975 m/s.
    pub fn default_test() -> Self {
        GridSpec {
            role: GridRole::Test,
            pairs: vec![
                GridPair::new(0.00875, 1.9),
                GridPair::new(0.00875, 6.0),
                GridPair::new(0.01625, 1.9),
                GridPair::new(0.01625, 6.0),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::invalid("grid", "needs at least one pair"));
        }
        for p in &self.pairs {
            if !(p.omega > 0.0 && p.omega.is_finite() && p.amplitude.is_finite() && p.amplitude >= 0.0) {
                return Err(Error::invalid("grid", format!("bad pair {p:?}")));
            }
        }
        Ok(())
    }

    pub fn is_disjoint(&self, other: &GridSpec) -> bool {
        self.pairs.iter().all(|p| !other.pairs.contains(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectOptions {
    /// Proportional gain (V/m).
    pub p_gain: f64,
    /// Reference periods to run.
    pub cycles: usize,
    /// Standard deviation of additive position noise (m); zero disables it.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Output voltage limit (V).
    pub u_limit: f64,
}

impl Default for CollectOptions {
    fn default() -> Self {
        CollectOptions {
            p_gain: DEFAULT_COLLECT_GAIN,
            cycles: 2,
            noise_sigma: 0.0,
            seed: 0,
            u_limit: 10.0,
        }
    }
}

/// Proportional gain of the collection loop. The 19000 V/m used on the
/// hardware leaves the delayed-viscous model with only a few degrees of
/// phase margin, so the simulated loop runs at this lower gain.
pub const DEFAULT_COLLECT_GAIN: f64 = 3000.0;

/// Fraction of saturated samples above which a loop counts as unusable.
pub const SATURATION_FRACTION_LIMIT: f64 = 0.1;

/// Closed-loop run `u = p_gain * (x_ref - x_measured)`. The returned `x`
/// column holds the measured (possibly noisy) position; `v` and `a` are
/// the true plant values.
pub fn collect(plant: &PlantConfig, reference: &SignalSpec, opts: &CollectOptions) -> Result<Trajectory> {
    reference.validate()?;
    if !(opts.p_gain > 0.0 && opts.p_gain.is_finite()) {
        return Err(Error::invalid("p_gain", "must be > 0"));
    }
    if opts.cycles == 0 {
        return Err(Error::invalid("cycles", "must be >= 1"));
    }
    if !(opts.u_limit > 0.0) {
        return Err(Error::invalid("u_limit", "must be > 0"));
    }
    let period = reference
        .period()
        .ok_or_else(|| Error::invalid("reference", "collection needs a periodic reference"))?;
    let n = sample_count(period * opts.cycles as f64, plant.dt)?;

    let mut noise = vec![0.0; n];
    rng::add_gaussian(&mut noise, opts.noise_sigma, &mut rng::seeded(opts.seed));

    let mut saturated = 0usize;
    let mut traj = run_closed_loop(plant, n, |i, t, state| {
        let measured = state.x + noise[i];
        let raw = opts.p_gain * (reference.value(t) - measured);
        if raw.abs() > opts.u_limit {
            saturated += 1;
        }
        raw.clamp(-opts.u_limit, opts.u_limit)
    })?;
    let fraction = saturated as f64 / n as f64;
    if fraction > SATURATION_FRACTION_LIMIT {
        return Err(Error::Saturated {
            fraction: 100.0 * fraction,
            limit: opts.u_limit,
        });
    }
    for (x, e) in traj.x.iter_mut().zip(&noise) {
        *x += e;
    }
    Ok(traj)
}

/// Centered moving average; the window shrinks symmetrically at the ends.
pub fn smooth(y: &[f64], window: usize) -> Vec<f64> {
    let n = y.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let span = &y[i - h..=i + h];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect()
}

/// Central differences inside, one-sided differences at the two ends.
pub fn difference(y: &[f64], dt: f64) -> Vec<f64> {
    let n = y.len();
    let mut d = Vec::with_capacity(n);
    d.push((y[1] - y[0]) / dt);
    for i in 1..n - 1 {
        d.push((y[i + 1] - y[i - 1]) / (2.0 * dt));
    }
    d.push((y[n - 1] - y[n - 2]) / dt);
    d
}

/// Velocity and acceleration from sampled position, smoothing with an odd
/// `window` before each differentiation stage (`window = 1` disables it).
pub fn differentiate(x: &[f64], dt: f64, window: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::invalid("window", format!("must be odd, got {window}")));
    }
    if x.len() <= window || x.len() < 3 {
        return Err(Error::TooShort(format!(
            "differentiation needs more than {window} samples, got {}",
            x.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be > 0"));
    }
    let v = difference(&smooth(x, window), dt);
    let a = difference(&smooth(&v, window), dt);
    Ok((v, a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub amplitude: f64,
    pub omega: f64,
    /// First pattern index of this segment.
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentOptions {
    pub seed: u64,
    /// 1 = velocity only, 2 = velocity and acceleration.
    pub arity: usize,
    pub smoothing_window: usize,
    /// Keep every `stride`-th sample of a segment.
    pub stride: usize,
    /// Drop patterns whose speed is below this (m/s). While the stage is
    /// stuck the applied voltage can be anything inside the breakaway band,
    /// so those samples say nothing about the inverse map. Zero keeps all.
    pub min_speed: f64,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            seed: 0,
            arity: 1,
            smoothing_window: 5,
            stride: 20,
            min_speed: 0.0,
        }
    }
}

/// Ordered input/target patterns. Inputs are stored row-major,
/// `arity` values per pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub arity: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub segments: Vec<Segment>,
    pub seed: u64,
}

impl Dataset {
    /// Dataset made of one segment, for synthetic data.
    pub fn from_patterns(arity: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if arity == 0 {
            return Err(Error::invalid("arity", "must be >= 1"));
        }
        if inputs.len() != arity * targets.len() {
            return Err(Error::Arity {
                expected: arity * targets.len(),
                got: inputs.len(),
            });
        }
        if targets.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.iter().chain(&targets).any(|x| !x.is_finite()) {
            return Err(Error::invalid("patterns", "all values must be finite"));
        }
        let q = targets.len();
        Ok(Dataset {
            arity,
            inputs,
            targets,
            segments: vec![Segment {
                amplitude: 0.0,
                omega: 0.0,
                start: 0,
                len: q,
            }],
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.arity..(i + 1) * self.arity]
    }

    /// Column `k` of the inputs.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.input(i)[k]).collect()
    }

    /// Keep only the leading `arity` input columns.
    pub fn project(&self, arity: usize) -> Result<Dataset> {
        if arity == 0 || arity > self.arity {
            return Err(Error::Arity {
                expected: self.arity,
                got: arity,
            });
        }
        let inputs = (0..self.len()).flat_map(|i| self.input(i)[..arity].to_vec()).collect();
        Ok(Dataset {
            arity,
            inputs,
            ..self.clone()
        })
    }

    pub fn target_variance(&self) -> f64 {
        let q = self.len() as f64;
        let mean = self.targets.iter().sum::<f64>() / q;
        self.targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / q
    }

    /// Segment ranges cover `0..len` in order with no gaps or overlaps.
    pub fn segments_tile(&self) -> bool {
        let mut next = 0;
        for s in &self.segments {
            if s.start != next {
                return false;
            }
            next += s.len;
        }
        next == self.len()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        match self.arity {
            1 => out.write_record(["v", "u"])?,
            2 => out.write_record(["v", "a", "u"])?,
            n => {
                let mut header: Vec<String> = (0..n).map(|k| format!("in{k}")).collect();
                header.push("u".into());
                out.write_record(header)?
            }
        }
        for i in 0..self.len() {
            let mut row: Vec<String> = self.input(i).iter().map(|&x| fmt_f64(x)).collect();
            row.push(fmt_f64(self.targets[i]));
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Inverse of [`Dataset::write_csv`]: every column but the last is an
    /// input. The result is a single segment.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let width = rdr.headers()?.len();
        if width < 2 {
            return Err(Error::invalid("header", "need at least one input and a target column"));
        }
        let (mut inputs, mut targets) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            for k in 0..width - 1 {
                inputs.push(parse_field(&rec, k)?);
            }
            targets.push(parse_field(&rec, width - 1)?);
        }
        Dataset::from_patterns(width - 1, inputs, targets)
    }

    pub fn manifest(&self, grid: &[GridPair], noise_sigma: f64, opts: &SegmentOptions) -> DatasetManifest {
        DatasetManifest {
            arity: self.arity,
            patterns: self.len(),
            seed: self.seed,
            noise_sigma,
            smoothing_window: opts.smoothing_window,
            stride: opts.stride,
            min_speed: opts.min_speed,
            grid: grid.to_vec(),
            segments: self.segments.clone(),
        }
    }
}

/// Sidecar describing how a dataset CSV was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub arity: usize,
    pub patterns: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub smoothing_window: usize,
    pub stride: usize,
    pub min_speed: f64,
    pub grid: Vec<GridPair>,
    pub segments: Vec<Segment>,
}

/// Index range of the last complete reference period of a run. Periods
/// start at upward zero crossings of the reference velocity, which for
/// `A (1 - cos(omega t))` sit at whole multiples of the period.
pub fn last_period(len: usize, dt: f64, pair: &GridPair) -> Result<std::ops::Range<usize>> {
    let period = pair.period();
    let per = (period / dt).round() as usize;
    let whole = (len as f64 * dt / period + 1e-9).floor() as usize;
    if per == 0 || whole == 0 {
        return Err(Error::TooShort(format!(
            "run of {len} samples is shorter than one period ({per} samples)"
        )));
    }
    let mut start = ((whole - 1) as f64 * period / dt).round() as usize;
    if start + per > len {
        if whole < 2 {
            return Err(Error::TooShort(format!(
                "run of {len} samples is shorter than one period ({per} samples)"
            )));
        }
        start = ((whole - 2) as f64 * period / dt).round() as usize;
    }
    Ok(start..start + per)
}

/// Cut one period from every run and concatenate them in seeded random
/// order.
pub fn segment_and_concat(runs: &[(Trajectory, GridPair)], opts: &SegmentOptions) -> Result<Dataset> {
    if runs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(1..=2).contains(&opts.arity) {
        return Err(Error::invalid("arity", format!("must be 1 or 2, got {}", opts.arity)));
    }
    if opts.stride == 0 {
        return Err(Error::invalid("stride", "must be >= 1"));
    }
    if !(opts.min_speed >= 0.0) {
        return Err(Error::invalid("min_speed", "must be >= 0"));
    }

    struct Piece {
        pair: GridPair,
        inputs: Vec<f64>,
        targets: Vec<f64>,
    }

    let mut pieces = Vec::with_capacity(runs.len());
    for (traj, pair) in runs {
        let range = last_period(traj.len(), traj.dt, pair)?;
        let (v, a) = differentiate(&traj.x, traj.dt, opts.smoothing_window)?;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for i in range.step_by(opts.stride) {
            if v[i].abs() < opts.min_speed {
                continue;
            }
            inputs.push(v[i]);
            if opts.arity == 2 {
                inputs.push(a[i]);
            }
            targets.push(traj.u[i]);
        }
        if inputs.iter().chain(&targets).any(|x| !x.is_finite()) {
            return Err(Error::invalid("patterns", "non-finite value in segment"));
        }
        if targets.is_empty() {
            return Err(Error::TooShort(format!(
                "no pattern of run A={} m, w={} rad/s exceeds the minimum speed",
                pair.amplitude, pair.omega
            )));
        }
        pieces.push(Piece {
            pair: *pair,
            inputs,
            targets,
        });
    }
    pieces.shuffle(&mut rng::seeded(opts.seed));

    let mut data = Dataset {
        arity: opts.arity,
        inputs: Vec::new(),
        targets: Vec::new(),
        segments: Vec::with_capacity(pieces.len()),
        seed: opts.seed,
    };
    for piece in pieces {
        data.segments.push(Segment {
            amplitude: piece.pair.amplitude,
            omega: piece.pair.omega,
            start: data.targets.len(),
            len: piece.targets.len(),
        });
        data.inputs.extend(piece.inputs);
        data.targets.extend(piece.targets);
    }
    Ok(data)
}

/// Collect every grid point. Run `k` draws its noise from stream `k` of
/// `opts.seed`.
pub fn collect_grid(plant: &PlantConfig, grid: &GridSpec, opts: &CollectOptions) -> Result<Vec<(Trajectory, GridPair)>> {
    grid.validate()?;
    grid.pairs
        .iter()
        .enumerate()
        .map(|(k, pair)| {
            let run_opts = CollectOptions {
                seed: rng_seed(opts.seed, grid.role, k),
                ..*opts
            };
            collect(plant, &pair.reference(), &run_opts).map(|t| (t, *pair))
        })
        .collect()
}

fn rng_seed(seed: u64, role: GridRole, k: usize) -> u64 {
    use rand::RngCore;
    let index = match role {
        GridRole::Train => k as u64,
        GridRole::Test => 1_000 + k as u64,
    };
    rng::stream(seed, index).next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_ramp_differentiates_exactly() {
        let dt = 0.0005;
        let c = 0.037;
        let x: Vec<f64> = (0..400).map(|i| c * i as f64 * dt).collect();
        for window in [1, 5] {
            let (v, a) = differentiate(&x, dt, window).unwrap();
            for i in 1..x.len() - 1 {
                assert!((v[i] - c).abs() < 1e-12, "v[{i}] = {}", v[i]);
                assert!(a[i].abs() < 1e-9, "a[{i}] = {}", a[i]);
            }
        }
    }

    #[test]
    fn sine_derivative_is_second_order() {
        let w = 6.0;
        let err = |dt: f64| {
            let n = (1.0 / dt) as usize;
            let x: Vec<f64> = (0..n).map(|i| (w * i as f64 * dt).sin()).collect();
            let (v, _) = differentiate(&x, dt, 1).unwrap();
            (1..n - 1)
                .map(|i| (v[i] - w * (w * i as f64 * dt).cos()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.002), err(0.001));
        let ratio = e1 / e2;
        assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
        assert!(e2 < w.powi(3) * 0.001f64.powi(2));
    }

    #[test]
    fn noise_is_amplified_by_each_stage() {
        let mut x = vec![0.0; 5000];
        rng::add_gaussian(&mut x, 1e-6, &mut rng::seeded(11));
        let (v, a) = differentiate(&x, 0.0005, 5).unwrap();
        let var = |s: &[f64]| s.iter().map(|y| y * y).sum::<f64>() / s.len() as f64;
        assert!(var(&a) > var(&v));
        assert!(var(&v) > var(&x));
    }

    #[test]
    fn differentiate_rejects_bad_windows() {
        assert!(differentiate(&[0.0; 5], 0.001, 5).is_err());
        assert!(differentiate(&[0.0; 50], 0.001, 4).is_err());
        assert!(differentiate(&[0.0; 50], 0.001, 0).is_err());
    }

    #[test]
    fn default_grids_are_disjoint() {
        let train = GridSpec::default_train();
        let test = GridSpec::default_test();
        assert_eq!(train.pairs.len(), 12);
        assert!(train.is_disjoint(&test));
        let peaks: Vec<f64> = test.pairs.iter().map(|p| p.peak_velocity()).collect();
        for (got, want) in peaks.iter().zip([0.016625, 0.0525, 0.030875, 0.0975]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_reference_collects_rest() {
        let traj = collect(
            &PlantConfig::default(),
            &GridPair::new(0.0, 6.0).reference(),
            &CollectOptions::default(),
        )
        .unwrap();
        assert!(traj.u.iter().all(|&u| u == 0.0));
        assert!(traj.x.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn saturation_is_reported() {
        let opts = CollectOptions {
            u_limit: 0.5,
            ..Default::default()
        };
        let err = collect(&PlantConfig::default(), &GridPair::new(0.02, 8.0).reference(), &opts).unwrap_err();
        assert!(matches!(err, Error::Saturated { .. }));
    }

    #[test]
    fn short_run_is_rejected() {
        let pair = GridPair::new(0.01, 1.0);
        let traj = Trajectory::from_columns(0.0005, vec![0.0; 100], vec![0.0; 100], vec![0.0; 100], vec![0.0; 100]).unwrap();
        assert!(matches!(
            segment_and_concat(&[(traj, pair)], &SegmentOptions::default()),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn from_patterns_validates() {
        assert!(Dataset::from_patterns(2, vec![0.0; 3], vec![0.0; 2]).is_err());
        assert!(Dataset::from_patterns(1, vec![], vec![]).is_err());
        let d = Dataset::from_patterns(1, vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        assert!(d.segments_tile());
        assert_eq!(d.input(1), &[2.0]);
    }
}
