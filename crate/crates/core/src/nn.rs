//! One-hidden-layer tanh network trained by batch Levenberg-Marquardt with
//! a momentum term.
//!
//! `y = W2 . tanh(W1 x + B1) + b2`
//!
//! Flat parameter order (also the weight-file order): `W1` row-major with
//! one row per hidden unit, then `B1`, then `W2`, then `b2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

const PUBLISHED_WEIGHTS: &str = include_str!("../fixtures/published_weights.json");

/// Training figures reported alongside the published 24-unit network.
pub mod published {
    pub const HIDDEN: usize = 24;
    pub const EPOCHS: usize = 688;
    pub const TRAIN_MSE: f64 = 0.118161;
    pub const TEST_MSE: f64 = 0.052982;
    /// Hidden sizes of the published sweep, 16..=32 in steps of 2.
    pub const SWEEP_SIZES: [usize; 9] = [16, 18, 20, 22, 24, 26, 28, 30, 32];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mlp {
    pub hidden: usize,
    pub arity: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Mlp {
    pub fn zeros(hidden: usize, arity: usize) -> Self {
        Mlp {
            hidden,
            arity,
            w1: vec![0.0; hidden * arity],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Every parameter uniform in `[-scale, scale]`, drawn in flat
    /// parameter order from SplitMix64 seeded with `seed`.
    pub fn random(hidden: usize, arity: usize, scale: f64, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let mut net = Mlp::zeros(hidden, arity);
        let params: Vec<f64> = (0..net.param_count())
            .map(|_| (2.0 * rng::unit(&mut r) - 1.0) * scale)
            .collect();
        net.set_params(&params);
        net
    }

    /// Nguyen–Widrow placement: hidden units get input weights of norm
    /// `0.7 H^(1/n)` in span-normalised coordinates and biases that spread
    /// their active regions across the range covered by `data`. Output
    /// weights are uniform in `[-scale, scale]`.
    pub fn nguyen_widrow(hidden: usize, data: &Dataset, scale: f64, seed: u64) -> Self {
        let arity = data.arity;
        let mut r = rng::seeded(seed);
        let mut net = Mlp::zeros(hidden, arity);
        let (centre, half_span): (Vec<f64>, Vec<f64>) = (0..arity)
            .map(|k| {
                let col = data.column(k);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let half = 0.5 * (hi - lo);
                (0.5 * (hi + lo), if half > 0.0 { half } else { 1.0 })
            })
            .unzip();
        let gain = 0.7 * (hidden as f64).powf(1.0 / arity as f64);
        for j in 0..hidden {
            let dir: Vec<f64> = (0..arity).map(|_| 2.0 * rng::unit(&mut r) - 1.0).collect();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
            let mut shift = 0.0;
            for k in 0..arity {
                let w = gain * dir[k] / norm / half_span[k];
                net.w1[j * arity + k] = w;
                shift += w * centre[k];
            }
            net.b1[j] = gain * (2.0 * rng::unit(&mut r) - 1.0) - shift;
        }
        for w in net.w2.iter_mut() {
            *w = (2.0 * rng::unit(&mut r) - 1.0) * scale;
        }
        net.b2 = (2.0 * rng::unit(&mut r) - 1.0) * scale;
        net
    }

    /// The 24-unit velocity-input network shipped as a fixture.
    pub fn published() -> Self {
        serde_json::from_str(PUBLISHED_WEIGHTS).expect("bundled weights parse")
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.arity + 2 * self.hidden + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let (w1, rest) = p.split_at(self.hidden * self.arity);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, rest) = rest.split_at(self.hidden);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.arity == 0 {
            return Err(Error::invalid("mlp", "hidden and arity must be >= 1"));
        }
        if self.w1.len() != self.hidden * self.arity || self.b1.len() != self.hidden || self.w2.len() != self.hidden {
            return Err(Error::invalid("mlp", "weight dimensions do not match hidden/arity"));
        }
        if self.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("mlp", "weights must be finite"));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.arity {
            return Err(Error::Arity {
                expected: self.arity,
                got: input.len(),
            });
        }
        Ok(self.eval(input))
    }

    fn eval(&self, input: &[f64]) -> f64 {
        let mut y = self.b2;
        for j in 0..self.hidden {
            y += self.w2[j] * self.hidden_activation(j, input);
        }
        y
    }

    fn hidden_activation(&self, j: usize, input: &[f64]) -> f64 {
        let row = &self.w1[j * self.arity..(j + 1) * self.arity];
        let pre: f64 = self.b1[j] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        pre.tanh()
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let net: Mlp = serde_json::from_reader(r)?;
        net.validate()?;
        Ok(net)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

pub fn forward(net: &Mlp, input: &[f64]) -> Result<f64> {
    net.forward(input)
}

fn check_arity(net: &Mlp, data: &Dataset) -> Result<()> {
    if data.arity != net.arity {
        return Err(Error::Arity {
            expected: net.arity,
            got: data.arity,
        });
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// `(1/q) * sum (target - output)^2`
pub fn mse(net: &Mlp, data: &Dataset) -> Result<f64> {
    check_arity(net, data)?;
    Ok(sum_squared_error(net, data) / data.len() as f64)
}

fn sum_squared_error(net: &Mlp, data: &Dataset) -> f64 {
    (0..data.len())
        .map(|i| (data.targets[i] - net.eval(data.input(i))).powi(2))
        .sum()
}

fn errors(net: &Mlp, data: &Dataset) -> DVector<f64> {
    DVector::from_iterator(data.len(), (0..data.len()).map(|i| data.targets[i] - net.eval(data.input(i))))
}

/// Jacobian of the per-pattern errors `e_i = target_i - output_i` with
/// respect to the flat parameter vector (q rows, one column per parameter).
pub fn jacobian(net: &Mlp, data: &Dataset) -> Result<DMatrix<f64>> {
    check_arity(net, data)?;
    let (h, n) = (net.hidden, net.arity);
    let b1_off = h * n;
    let w2_off = b1_off + h;
    let b2_col = w2_off + h;
    let mut jac = DMatrix::zeros(data.len(), net.param_count());
    for i in 0..data.len() {
        let x = data.input(i);
        for j in 0..h {
            let act = net.hidden_activation(j, x);
            let back = net.w2[j] * (1.0 - act * act);
            for k in 0..n {
                jac[(i, j * n + k)] = -back * x[k];
            }
            jac[(i, b1_off + j)] = -back;
            jac[(i, w2_off + j)] = -act;
        }
        jac[(i, b2_col)] = -1.0;
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub mu0: f64,
    pub mu_increase: f64,
    pub mu_decrease: f64,
    /// Training stops once the damping would exceed this.
    pub mu_max: f64,
    pub mu_min: f64,
    /// Momentum coefficient on the previous accepted weight change.
    pub alpha: f64,
    pub max_epochs: usize,
    pub target_mse: f64,
    /// Rejected trials allowed per epoch before moving on.
    pub max_retries: usize,
    pub init: Init,
    pub init_scale: f64,
    pub seed: u64,
}

/// Weight initialisation for [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Every weight uniform in `±init_scale`.
    Uniform,
    /// Input layer scaled to the data span (see [`Mlp::nguyen_widrow`]).
    NguyenWidrow,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            mu0: 100.0,
            mu_increase: 10.0,
            mu_decrease: 0.1,
            mu_max: 1e10,
            mu_min: 1e-12,
            alpha: 0.1,
            max_epochs: 200,
            target_mse: 0.0,
            max_retries: 10,
            init: Init::Uniform,
            init_scale: 0.5,
            seed: 1,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0 && self.mu0.is_finite()) {
            return Err(Error::invalid("mu0", "must be > 0"));
        }
        if !(self.mu_decrease > 0.0 && self.mu_decrease < 1.0) {
            return Err(Error::invalid("mu_decrease", "must lie in (0, 1)"));
        }
        if !(self.mu_increase > 1.0 && self.mu_increase.is_finite()) {
            return Err(Error::invalid("mu_increase", "must be > 1"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha", "must lie in [0, 1)"));
        }
        if !(self.mu_min > 0.0 && self.mu_min <= self.mu0 && self.mu0 <= self.mu_max) {
            return Err(Error::invalid("mu_min", "need 0 < mu_min <= mu0 <= mu_max"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init_scale", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    TargetReached,
    DampingOverflow,
}

/// One candidate step: the damping it was solved with, what it did to the
/// loss, and whether it was kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub epoch: usize,
    pub mu: f64,
    pub mu_after: f64,
    pub candidate_mse: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    /// Training MSE at the start (index 0) and after each epoch.
    pub mse_history: Vec<f64>,
    pub final_train_mse: f64,
    pub final_test_mse: Option<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub stop: StopReason,
    pub trials: Vec<Trial>,
}

/// Train a fresh `hidden`-unit network initialised from `cfg.seed`.
pub fn train(data: &Dataset, hidden: usize, cfg: &LmConfig, validation: Option<&Dataset>) -> Result<(Mlp, TrainReport)> {
    if hidden == 0 {
        return Err(Error::invalid("hidden", "must be >= 1"));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let net = match cfg.init {
        Init::Uniform => Mlp::random(hidden, data.arity, cfg.init_scale, cfg.seed),
        Init::NguyenWidrow => Mlp::nguyen_widrow(hidden, data, cfg.init_scale, cfg.seed),
    };
    train_from(net, data, cfg, validation)
}

/// Continue training from `net`.
pub fn train_from(mut net: Mlp, data: &Dataset, cfg: &LmConfig, validation: Option<&Dataset>) -> Result<(Mlp, TrainReport)> {
    cfg.validate()?;
    net.validate()?;
    check_arity(&net, data)?;
    if let Some(v) = validation {
        check_arity(&net, v)?;
    }
    let q = data.len() as f64;
    let p = net.param_count();

    let mut w = DVector::from_vec(net.params());
    let mut w_prev = w.clone();
    let mut current = sum_squared_error(&net, data) / q;
    let mut report = TrainReport {
        epochs: 0,
        mse_history: vec![current],
        final_train_mse: current,
        final_test_mse: None,
        accepted: 0,
        rejected: 0,
        stop: StopReason::MaxEpochs,
        trials: Vec::new(),
    };
    if !current.is_finite() {
        return Err(Error::NonFiniteLoss(Box::new(report)));
    }

    let mut mu = cfg.mu0;
    let mut candidate = net.clone();
    let mut normal: Option<(DMatrix<f64>, DVector<f64>)> = None;

    'epochs: for epoch in 1..=cfg.max_epochs {
        if current <= cfg.target_mse {
            report.stop = StopReason::TargetReached;
            break;
        }
        report.epochs = epoch;
        let (jtj, jte) = match &normal {
            Some(n) => n.clone(),
            None => {
                let jac = jacobian(&net, data)?;
                let e = errors(&net, data);
                let built = (jac.tr_mul(&jac), jac.tr_mul(&e));
                normal = Some(built.clone());
                built
            }
        };
        let mut momentum = (&w - &w_prev) * cfg.alpha;

        for _ in 0..=cfg.max_retries {
            let mut damped = jtj.clone();
            for d in 0..p {
                damped[(d, d)] += mu;
            }
            let step = damped.cholesky().map(|c| c.solve(&jte));
            let (cand_w, cand_mse) = match step {
                Some(delta) => {
                    let cw = &w - delta + &momentum;
                    candidate.set_params(cw.as_slice());
                    let m = sum_squared_error(&candidate, data) / q;
                    (cw, m)
                }
                None => (w.clone(), f64::INFINITY),
            };
            if cand_mse.is_nan() {
                report.final_train_mse = current;
                return Err(Error::NonFiniteLoss(Box::new(report)));
            }
            if cand_mse < current {
                let mu_after = (mu * cfg.mu_decrease).max(cfg.mu_min);
                report.trials.push(Trial {
                    epoch,
                    mu,
                    mu_after,
                    candidate_mse: cand_mse,
                    accepted: true,
                });
                report.accepted += 1;
                mu = mu_after;
                w_prev = std::mem::replace(&mut w, cand_w);
                net.set_params(w.as_slice());
                current = cand_mse;
                normal = None;
                break;
            }
            let mu_after = mu * cfg.mu_increase;
            report.trials.push(Trial {
                epoch,
                mu,
                mu_after,
                candidate_mse: cand_mse,
                accepted: false,
            });
            report.rejected += 1;
            mu = mu_after;
            // Retries are plain damped steps, so a large enough damping
            // always approaches a descent direction.
            momentum.fill(0.0);
            if mu > cfg.mu_max {
                report.mse_history.push(current);
                report.stop = StopReason::DampingOverflow;
                break 'epochs;
            }
        }
        report.mse_history.push(current);
    }
    if report.stop == StopReason::MaxEpochs && current <= cfg.target_mse {
        report.stop = StopReason::TargetReached;
    }
    report.final_train_mse = current;
    report.final_test_mse = validation.map(|v| mse(&net, v)).transpose()?;
    Ok((net, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hidden: usize,
    pub params: usize,
    pub epochs: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub selected: usize,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["hidden", "params", "epochs", "train_mse", "test_mse", "selected"])?;
        for r in &self.rows {
            out.write_record([
                r.hidden.to_string(),
                r.params.to_string(),
                r.epochs.to_string(),
                crate::trajectory::fmt_f64(r.train_mse),
                crate::trajectory::fmt_f64(r.test_mse),
                u8::from(r.hidden == self.selected).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One network per size, all from the same seed; the size with the lowest
/// test MSE wins, ties going to the smaller network.
pub fn hidden_sweep(sizes: &[usize], data: &Dataset, validation: &Dataset, cfg: &LmConfig) -> Result<SweepTable> {
    if sizes.is_empty() {
        return Err(Error::invalid("sizes", "sweep needs at least one size"));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &hidden in sizes {
        let (net, report) = train(data, hidden, cfg, Some(validation))?;
        rows.push(SweepRow {
            hidden,
            params: net.param_count(),
            epochs: report.epochs,
            train_mse: report.final_train_mse,
            test_mse: report.final_test_mse.unwrap_or(f64::NAN),
        });
    }
    let best = rows
        .iter()
        .min_by(|a, b| a.test_mse.total_cmp(&b.test_mse).then(a.hidden.cmp(&b.hidden)))
        .expect("non-empty");
    let selected = best.hidden;
    Ok(SweepTable { rows, selected })
}
