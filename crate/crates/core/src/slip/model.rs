use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{preprocess, Feature, LabeledSequence, SlipError};
use crate::magnetics::CHANNELS;
use crate::seed;

pub const DEFAULT_HIDDEN: usize = 32;
/// Relative gradient errors are measured against at least this magnitude.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;
pub const GRAD_CHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, epochs: 200, batch_size: 16, clip_norm: 1.0, hidden: DEFAULT_HIDDEN, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SlipError> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.epochs > 0
            && self.batch_size > 0
            && self.clip_norm > 0.0
            && self.hidden > 0;
        if ok {
            Ok(())
        } else {
            Err(SlipError::InvalidRequest(format!("training config {self:?}")))
        }
    }
}

/// Single-layer LSTM over preprocessed features with a linear readout of
/// the final hidden state.
///
/// Parameters live in one flat vector: input weights `W` (4H × 15), recurrent
/// weights `U` (4H × H), gate biases (4H), readout weights (H), readout bias.
/// Gate blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct SlipModel {
    pub hidden: usize,
    /// Multiplier applied to features before the recurrent cell.
    pub input_scale: f64,
    pub params: Vec<f64>,
    /// Mean training loss over the last epoch; NaN for untrained models.
    pub final_loss: f64,
}

struct Layout {
    h: usize,
}

impl Layout {
    fn w(&self) -> usize {
        0
    }
    fn u(&self) -> usize {
        4 * self.h * CHANNELS
    }
    fn b(&self) -> usize {
        self.u() + 4 * self.h * self.h
    }
    fn out_w(&self) -> usize {
        self.b() + 4 * self.h
    }
    fn out_b(&self) -> usize {
        self.out_w() + self.h
    }
    fn len(&self) -> usize {
        self.out_b() + 1
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a 0/1 target.
fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

struct Step {
    x: Feature,
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

impl SlipModel {
    pub fn param_count(hidden: usize) -> usize {
        Layout { h: hidden }.len()
    }

    /// Uniform(−1/√H, 1/√H) initialization.
    pub fn init(hidden: usize, input_scale: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let bound = 1.0 / (hidden as f64).sqrt();
        let params = (0..Self::param_count(hidden)).map(|_| rng.gen_range(-bound..bound)).collect();
        Self { hidden, input_scale, params, final_loss: f64::NAN }
    }

    fn layout(&self) -> Layout {
        Layout { h: self.hidden }
    }

    fn run(&self, features: &[Feature]) -> (Vec<Step>, f64) {
        let l = self.layout();
        let h = self.hidden;
        let p = &self.params;
        let mut steps: Vec<Step> = Vec::with_capacity(features.len());
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for f in features {
            let x = f.map(|v| v * self.input_scale);
            let mut z = p[l.b()..l.b() + 4 * h].to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                let wrow = &p[l.w() + r * CHANNELS..l.w() + (r + 1) * CHANNELS];
                let urow = &p[l.u() + r * h..l.u() + (r + 1) * h];
                *zr += wrow.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
                *zr += urow.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
            }
            let mut gates = vec![0.0; 4 * h];
            let mut c = vec![0.0; h];
            let mut hn = vec![0.0; h];
            for j in 0..h {
                let i = sigmoid(z[j]);
                let fg = sigmoid(z[h + j]);
                let g = z[2 * h + j].tanh();
                let o = sigmoid(z[3 * h + j]);
                gates[j] = i;
                gates[h + j] = fg;
                gates[2 * h + j] = g;
                gates[3 * h + j] = o;
                c[j] = fg * c_prev[j] + i * g;
                hn[j] = o * c[j].tanh();
            }
            h_prev.clone_from(&hn);
            c_prev.clone_from(&c);
            steps.push(Step { x, gates, c, h: hn });
        }
        let wout = &p[l.out_w()..l.out_w() + h];
        let logit = p[l.out_b()] + wout.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
        (steps, logit)
    }

    pub fn logit_features(&self, features: &[Feature]) -> f64 {
        self.run(features).1
    }

    pub fn logit(&self, seq: &LabeledSequence) -> Result<f64, SlipError> {
        Ok(self.logit_features(&preprocess(&seq.frames)?))
    }

    pub fn predict_slip(&self, seq: &LabeledSequence) -> Result<bool, SlipError> {
        Ok(sigmoid(self.logit(seq)?) > 0.5)
    }
}

/// `scale × BCE` of one sequence and its gradient with respect to every
/// parameter, by backpropagation through time.
pub fn loss_and_grad(model: &SlipModel, features: &[Feature], target: f64, scale: f64) -> (f64, Vec<f64>) {
    let l = model.layout();
    let h = model.hidden;
    let p = &model.params;
    let (steps, logit) = model.run(features);
    let loss = scale * bce_with_logit(logit, target);
    let mut grad = vec![0.0; p.len()];
    let dlogit = scale * (sigmoid(logit) - target);
    let zeros = vec![0.0; h];
    let h_last = steps.last().map_or(&zeros, |s| &s.h);
    for j in 0..h {
        grad[l.out_w() + j] = dlogit * h_last[j];
    }
    grad[l.out_b()] = dlogit;

    let mut dh: Vec<f64> = p[l.out_w()..l.out_w() + h].iter().map(|w| w * dlogit).collect();
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        let c_prev = if t > 0 { &steps[t - 1].c } else { &zeros };
        let h_prev = if t > 0 { &steps[t - 1].h } else { &zeros };
        for j in 0..h {
            let (i, f, g, o) = (s.gates[j], s.gates[h + j], s.gates[2 * h + j], s.gates[3 * h + j]);
            let tc = s.c[j].tanh();
            let d_o = dh[j] * tc;
            dc[j] += dh[j] * o * (1.0 - tc * tc);
            dz[j] = dc[j] * g * i * (1.0 - i);
            dz[h + j] = dc[j] * c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dc[j] * i * (1.0 - g * g);
            dz[3 * h + j] = d_o * o * (1.0 - o);
            dc[j] *= f;
        }
        let mut dh_prev = vec![0.0; h];
        for (r, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let wg = &mut grad[l.w() + r * CHANNELS..l.w() + (r + 1) * CHANNELS];
            for (g, x) in wg.iter_mut().zip(&s.x) {
                *g += d * x;
            }
            let urow = l.u() + r * h;
            for k in 0..h {
                grad[urow + k] += d * h_prev[k];
                dh_prev[k] += d * p[urow + k];
            }
            grad[l.b() + r] += d;
        }
        dh = dh_prev;
    }
    (loss, grad)
}

fn prepared(data: &[LabeledSequence]) -> Result<Vec<(Vec<Feature>, f64)>, SlipError> {
    data.iter().map(|s| Ok((preprocess(&s.frames)?, s.label.target()))).collect()
}

/// Reciprocal RMS of all feature values, so the cell sees unit-scale inputs.
fn input_scale(data: &[(Vec<Feature>, f64)]) -> f64 {
    let (sum, n) = data
        .iter()
        .flat_map(|(f, _)| f.iter().flatten())
        .fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    let rms = (sum / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        1.0 / rms
    } else {
        1.0
    }
}

/// Mean-loss minibatch gradient descent with global-norm clipping.
pub fn train(data: &[LabeledSequence], config: &TrainConfig) -> Result<SlipModel, SlipError> {
    config.validate()?;
    if data.is_empty() {
        return Err(SlipError::EmptyDataset);
    }
    let samples = prepared(data)?;
    let mut model = SlipModel::init(config.hidden, input_scale(&samples), seed::derive(config.seed, &[1]));
    let mut rng = seed::rng(seed::derive(config.seed, &[2]));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; model.params.len()];
            for &i in batch {
                let (f, y) = &samples[i];
                let (loss, g) = loss_and_grad(&model, f, *y, scale);
                epoch_loss += loss * batch.len() as f64;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let shrink = if norm > config.clip_norm { config.clip_norm / norm } else { 1.0 };
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= config.learning_rate * shrink * g;
            }
        }
        epoch_loss /= samples.len() as f64;
        if !epoch_loss.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(SlipError::Diverged(epoch));
        }
        model.final_loss = epoch_loss;
    }
    Ok(model)
}

/// Mean BCE of `model` over `data`.
pub fn mean_loss(model: &SlipModel, data: &[LabeledSequence]) -> Result<f64, SlipError> {
    if data.is_empty() {
        return Err(SlipError::EmptyDataset);
    }
    let losses: Vec<f64> =
        prepared(data)?.iter().map(|(f, y)| bce_with_logit(model.logit_features(f), *y)).collect();
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_slip: usize,
    pub true_no_slip: usize,
    pub false_slip: usize,
    pub false_no_slip: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_slip + self.true_no_slip + self.false_slip + self.false_no_slip
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_slip + self.true_no_slip) as f64 / self.total() as f64
    }
}

pub fn evaluate(model: &SlipModel, data: &[LabeledSequence]) -> Result<Confusion, SlipError> {
    if data.is_empty() {
        return Err(SlipError::EmptyDataset);
    }
    let preds: Vec<(bool, bool)> = data
        .par_iter()
        .map(|s| Ok((model.predict_slip(s)?, s.label == super::Label::Slip)))
        .collect::<Result<_, SlipError>>()?;
    let mut c = Confusion::default();
    for (pred, truth) in preds {
        match (pred, truth) {
            (true, true) => c.true_slip += 1,
            (false, false) => c.true_no_slip += 1,
            (true, false) => c.false_slip += 1,
            (false, true) => c.false_no_slip += 1,
        }
    }
    Ok(c)
}

/// Largest relative difference between the BPTT gradient and central finite
/// differences over every parameter.
pub fn grad_check(model: &SlipModel, features: &[Feature], target: f64) -> f64 {
    let (_, analytic) = loss_and_grad(model, features, target, 1.0);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for k in 0..model.params.len() {
        let orig = model.params[k];
        probe.params[k] = orig + GRAD_CHECK_STEP;
        let up = bce_with_logit(probe.logit_features(features), target);
        probe.params[k] = orig - GRAD_CHECK_STEP;
        let down = bce_with_logit(probe.logit_features(features), target);
        probe.params[k] = orig;
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        let denom = analytic[k].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((analytic[k] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(seed: u64, steps: usize) -> Vec<Feature> {
        let mut rng = seed::rng(seed);
        (0..steps).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn parameter_layout() {
        assert_eq!(SlipModel::param_count(32), 4 * 32 * (15 + 32 + 1) + 32 + 1);
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for seed in 0..3 {
            let model = SlipModel::init(8, 1.0, seed);
            let err = grad_check(&model, &features(seed + 10, 6), (seed % 2) as f64);
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_input_gives_zero_input_weight_gradient() {
        let model = SlipModel::init(8, 1.0, 4);
        let (_, g) = loss_and_grad(&model, &vec![[0.0; CHANNELS]; 6], 1.0, 1.0);
        let l = Layout { h: 8 };
        assert!(g[l.w()..l.u()].iter().all(|v| *v == 0.0));
        assert!(g[l.u()..].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn loss_scale_is_linear() {
        let model = SlipModel::init(8, 1.0, 5);
        let f = features(6, 6);
        let (l1, g1) = loss_and_grad(&model, &f, 0.0, 1.0);
        let (l2, g2) = loss_and_grad(&model, &f, 0.0, 2.0);
        assert_eq!(l2, 2.0 * l1);
        assert!(g1.iter().zip(&g2).all(|(a, b)| *b == 2.0 * a));
    }

    #[test]
    fn stable_loss_at_extreme_logits() {
        assert!((bce_with_logit(800.0, 1.0)).abs() < 1e-300);
        assert!((bce_with_logit(-800.0, 1.0) - 800.0).abs() < 1e-9);
        assert!((bce_with_logit(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
