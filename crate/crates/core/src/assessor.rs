//! Token-contribution assessor.
//!
//! Each token vector `e_i` gets a contribution `p_i = σ(w·e_i + b)`. During
//! training the token is mixed with a noise vector drawn by Gumbel-Softmax
//! over the other tokens of the same transcript,
//! `ẽ_i = p_i·e_i + (1 − p_i)·e'_i`, so that tokens the probe trusts keep
//! their own representation. The mixed tokens are max-pooled per dimension
//! and a one-hidden-layer ReLU head with a sigmoid output gives the
//! confidence that the transcript belongs to the AD class.
//!
//! Training minimises binary cross-entropy with Adam. Gradients are written
//! out by hand; [`grad_check`] compares them with central differences.

use crate::embedding::EmbeddedTranscript;
use crate::error::{Error, Result};
use crate::Class;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Uniform};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessorParams {
    /// Probe weights, length D.
    pub w: Vec<f64>,
    pub b: f64,
    /// Hidden layer weights, H×D row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub temp: f64,
    pub seed: u64,
}

impl AssessorParams {
    /// Parameters drawn from uniform(−0.05, 0.05) with a ChaCha8 stream
    /// seeded by `seed`, in field order w, b, w1, b1, w2, b2.
    pub fn init(dim: usize, hidden: usize, temp: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(&mut rng, dim, hidden, temp, seed)
    }

    fn init_with<R: Rng>(rng: &mut R, dim: usize, hidden: usize, temp: f64, seed: u64) -> Self {
        let dist = Uniform::new(-INIT_SCALE, INIT_SCALE).expect("valid bounds");
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| dist.sample(rng)).collect() };
        let w = draw(dim);
        let b = draw(1)[0];
        let w1 = draw(hidden * dim);
        let b1 = draw(hidden);
        let w2 = draw(hidden);
        let b2 = draw(1)[0];
        Self { w, b, w1, b1, w2, b2, temp, seed }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w: vec![0.0; dim],
            b: 0.0,
            w1: vec![0.0; hidden * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            temp: 1.0,
            seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.dim(), self.hidden());
        if h == 0 {
            return Err(Error::Config("hidden size must be at least 1".into()));
        }
        if self.w1.len() != h * d || self.w2.len() != h {
            return Err(Error::Config("parameter shapes disagree".into()));
        }
        if !(self.temp > 0.0 && self.temp.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        let all_finite = self.w.iter().chain(&self.w1).chain(&self.b1).chain(&self.w2).all(|v| v.is_finite())
            && self.b.is_finite()
            && self.b2.is_finite();
        if !all_finite {
            return Err(Error::Config("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn scalars(&self) -> impl Iterator<Item = f64> + '_ {
        self.w
            .iter()
            .copied()
            .chain([self.b])
            .chain(self.w1.iter().copied())
            .chain(self.b1.iter().copied())
            .chain(self.w2.iter().copied())
            .chain([self.b2])
    }

    pub fn scalars_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w
            .iter_mut()
            .chain(std::iter::once(&mut self.b))
            .chain(self.w1.iter_mut())
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(std::iter::once(&mut self.b2))
    }

    pub fn num_scalars(&self) -> usize {
        self.dim() + 1 + self.w1.len() + self.hidden() * 2 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssessorOutput {
    pub p: Vec<f64>,
    pub s_conf: f64,
    pub pooled: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    TrainWithNoise,
    EvalClean,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Token contribution `σ(w·e + b)`.
pub fn judge(e: &[f64], params: &AssessorParams) -> Result<f64> {
    if e.len() != params.dim() {
        return Err(Error::Dimension {
            expected: params.dim(),
            actual: e.len(),
        });
    }
    Ok(sigmoid(dot(&params.w, e) + params.b))
}

/// Gumbel-Softmax selection weights over the tokens other than `i`.
///
/// Returned weights are indexed like `tokens`; entry `i` is zero.
pub fn gumbel_weights<R: Rng + ?Sized>(tokens: &[Vec<f64>], i: usize, temp: f64, rng: &mut R) -> Result<Vec<f64>> {
    if tokens.len() < 2 {
        return Err(Error::NoNoiseCandidates);
    }
    let gumbel = Gumbel::new(0.0, 1.0).expect("standard Gumbel");
    let e_i = &tokens[i];
    let scores: Vec<Option<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(m, e_m)| (m != i).then(|| (dot(e_i, e_m) + gumbel.sample(rng)) / temp))
        .collect();
    let max = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut y: Vec<f64> = scores.iter().map(|s| s.map_or(0.0, |s| (s - max).exp())).collect();
    let total: f64 = y.iter().sum();
    y.iter_mut().for_each(|v| *v /= total);
    Ok(y)
}

/// Noise representation for token `i`: the Gumbel-Softmax weighted mix of the
/// other token vectors.
pub fn inject_noise<R: Rng + ?Sized>(tokens: &[Vec<f64>], i: usize, temp: f64, rng: &mut R) -> Result<Vec<f64>> {
    let y = gumbel_weights(tokens, i, temp, rng)?;
    let mut out = vec![0.0; tokens[i].len()];
    for (weight, e_m) in y.iter().zip(tokens) {
        if *weight == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(e_m) {
            *o += weight * v;
        }
    }
    Ok(out)
}

/// Convex mix `p·e + (1 − p)·e'`.
pub fn perturb(e: &[f64], e_noise: &[f64], p: f64) -> Vec<f64> {
    e.iter().zip(e_noise).map(|(a, b)| p * a + (1.0 - p) * b).collect()
}

struct Head {
    pooled: Vec<f64>,
    argmax: Vec<usize>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logit: f64,
}

fn head_forward(rows: &[Vec<f64>], params: &AssessorParams) -> Result<Head> {
    let Some(first) = rows.first() else {
        return Err(Error::data("empty transcript"));
    };
    let d = first.len();
    if d != params.dim() {
        return Err(Error::Dimension {
            expected: params.dim(),
            actual: d,
        });
    }
    let mut pooled = first.clone();
    let mut argmax = vec![0usize; d];
    for (i, row) in rows.iter().enumerate().skip(1) {
        for k in 0..d {
            if row[k] > pooled[k] {
                pooled[k] = row[k];
                argmax[k] = i;
            }
        }
    }
    let pre: Vec<f64> = params
        .w1
        .chunks(d.max(1))
        .zip(&params.b1)
        .map(|(row, bias)| dot(row, &pooled) + bias)
        .collect();
    let hidden: Vec<f64> = pre.iter().map(|u| u.max(0.0)).collect();
    let logit = dot(&params.w2, &hidden) + params.b2;
    Ok(Head {
        pooled,
        argmax,
        pre,
        hidden,
        logit,
    })
}

/// Max-pool the token rows and apply the MLP head. Returns (pooled, s_conf).
pub fn confidence(rows: &[Vec<f64>], params: &AssessorParams) -> Result<(Vec<f64>, f64)> {
    let head = head_forward(rows, params)?;
    Ok((head.pooled, sigmoid(head.logit)))
}

/// Draw one noise vector per token (the frozen noise for a training step).
pub fn sample_noise<R: Rng + ?Sized>(tokens: &[Vec<f64>], temp: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    (0..tokens.len()).map(|i| inject_noise(tokens, i, temp, rng)).collect()
}

fn contributions(tokens: &[Vec<f64>], params: &AssessorParams) -> Result<Vec<f64>> {
    tokens.iter().map(|e| judge(e, params)).collect()
}

fn mixed_rows(tokens: &[Vec<f64>], noise: &[Vec<f64>], p: &[f64]) -> Vec<Vec<f64>> {
    tokens
        .iter()
        .zip(noise)
        .zip(p)
        .map(|((e, n), &pi)| perturb(e, n, pi))
        .collect()
}

pub fn forward<R: Rng + ?Sized>(
    transcript: &EmbeddedTranscript,
    params: &AssessorParams,
    mode: Mode,
    rng: &mut R,
) -> Result<AssessorOutput> {
    match mode {
        Mode::EvalClean => score(transcript, params),
        Mode::TrainWithNoise => {
            let tokens = &transcript.vectors;
            if tokens.is_empty() {
                return Err(Error::data(format!("{}: empty transcript", transcript.transcript_id)));
            }
            let p = contributions(tokens, params)?;
            let noise = sample_noise(tokens, params.temp, rng)?;
            let (pooled, s_conf) = confidence(&mixed_rows(tokens, &noise, &p), params)?;
            Ok(AssessorOutput { p, s_conf, pooled })
        }
    }
}

/// Noise-free forward pass; the pure evaluation path.
pub fn score(transcript: &EmbeddedTranscript, params: &AssessorParams) -> Result<AssessorOutput> {
    let tokens = &transcript.vectors;
    if tokens.is_empty() {
        return Err(Error::data(format!("{}: empty transcript", transcript.transcript_id)));
    }
    let p = contributions(tokens, params)?;
    let (pooled, s_conf) = confidence(tokens, params)?;
    Ok(AssessorOutput { p, s_conf, pooled })
}

/// `−[y ln σ(v) + (1−y) ln(1−σ(v))]` evaluated from the logit.
fn bce_from_logit(logit: f64, target: f64) -> f64 {
    let softplus = logit.max(0.0) + (-logit.abs()).exp().ln_1p();
    softplus - target * logit
}

/// Loss and gradient for one transcript. With `noise` the mixed path is
/// used; without it the tokens are pooled directly and the probe receives
/// no gradient.
pub fn loss_and_grad(
    tokens: &[Vec<f64>],
    noise: Option<&[Vec<f64>]>,
    target: f64,
    params: &AssessorParams,
) -> Result<(f64, AssessorParams)> {
    let p = contributions(tokens, params)?;
    let rows = match noise {
        Some(n) => mixed_rows(tokens, n, &p),
        None => tokens.to_vec(),
    };
    let head = head_forward(&rows, params)?;
    let loss = bce_from_logit(head.logit, target);

    let d = params.dim();
    let mut g = AssessorParams::zeros(d, params.hidden());
    g.temp = params.temp;
    g.seed = params.seed;

    let d_logit = sigmoid(head.logit) - target;
    g.b2 = d_logit;
    for (gw, h) in g.w2.iter_mut().zip(&head.hidden) {
        *gw = d_logit * h;
    }
    let mut d_pooled = vec![0.0; d];
    for (k, (&u, &w2k)) in head.pre.iter().zip(&params.w2).enumerate() {
        if u <= 0.0 {
            continue;
        }
        let du = d_logit * w2k;
        g.b1[k] = du;
        let row = &params.w1[k * d..(k + 1) * d];
        let grow = &mut g.w1[k * d..(k + 1) * d];
        for j in 0..d {
            grow[j] = du * head.pooled[j];
            d_pooled[j] += du * row[j];
        }
    }

    if let Some(noise) = noise {
        // d loss / d p_i, routed through the pooled argmax rows
        let mut d_p = vec![0.0; tokens.len()];
        for j in 0..d {
            let i = head.argmax[j];
            d_p[i] += d_pooled[j] * (tokens[i][j] - noise[i][j]);
        }
        for ((e, &pi), dpi) in tokens.iter().zip(&p).zip(&d_p) {
            let da = dpi * pi * (1.0 - pi);
            g.b += da;
            for (gw, v) in g.w.iter_mut().zip(e) {
                *gw += da * v;
            }
        }
    }
    Ok((loss, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub temp: f64,
    pub seed: u64,
    pub hidden: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 200,
            batch: 16,
            temp: 1.0,
            seed: 0,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trained {
    pub params: AssessorParams,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut AssessorParams, grad: &AssessorParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params.scalars_mut().zip(grad.scalars()).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn accumulate(acc: &mut AssessorParams, g: &AssessorParams, scale: f64) {
    for (a, v) in acc.scalars_mut().zip(g.scalars()) {
        *a += scale * v;
    }
}

/// Fit the assessor on labelled transcripts.
pub fn train(corpus: &[EmbeddedTranscript], hyper: &Hyper) -> Result<Trained> {
    if hyper.hidden == 0 || hyper.batch == 0 {
        return Err(Error::Config("hidden and batch must be at least 1".into()));
    }
    if hyper.temp.is_nan() || hyper.temp <= 0.0 {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let mut targets = Vec::with_capacity(corpus.len());
    for t in corpus {
        let label = t
            .gold_label
            .ok_or_else(|| Error::data(format!("{}: training transcript has no label", t.transcript_id)))?;
        targets.push(label.target());
    }
    let has_ad = corpus.iter().any(|t| t.gold_label == Some(Class::Ad));
    let has_hc = corpus.iter().any(|t| t.gold_label == Some(Class::Hc));
    if corpus.len() < 2 || !has_ad || !has_hc {
        return Err(Error::DegenerateTrainingSet);
    }
    let dim = corpus[0].dim();
    if let Some(t) = corpus.iter().find(|t| t.dim() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            actual: t.dim(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = AssessorParams::init_with(&mut rng, dim, hyper.hidden, hyper.temp, hyper.seed);
    let mut adam = Adam::new(params.num_scalars());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut loss_trace = Vec::with_capacity(hyper.epochs);

    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch) {
            let mut grad = AssessorParams::zeros(dim, hyper.hidden);
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let tokens = &corpus[idx].vectors;
                let noise = sample_noise(tokens, params.temp, &mut rng)
                    .map_err(|e| Error::data(format!("{}: {e}", corpus[idx].transcript_id)))?;
                let (loss, g) = loss_and_grad(tokens, Some(&noise), targets[idx], &params)?;
                epoch_loss += loss;
                accumulate(&mut grad, &g, scale);
            }
            adam.step(&mut params, &grad, hyper.lr);
        }
        loss_trace.push(epoch_loss / corpus.len() as f64);
    }
    Ok(Trained { params, loss_trace })
}

/// Fraction of transcripts whose clean-path confidence falls on the gold side of 0.5.
pub fn accuracy(corpus: &[EmbeddedTranscript], params: &AssessorParams) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for t in corpus {
        let Some(label) = t.gold_label else { continue };
        let predicted = if score(t, params)?.s_conf >= 0.5 { Class::Ad } else { Class::Hc };
        correct += usize::from(predicted == label);
        total += 1;
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Largest relative disagreement between the analytic gradient and central
/// differences of the noisy-path loss, over every parameter.
///
/// Noise is drawn once from `params.seed` and held fixed. The relative error
/// of one component is `|a − n| / max(|a|, |n|, 1e-6)`. The target is the
/// transcript's gold label, AD when unlabelled.
pub fn grad_check(params: &AssessorParams, transcript: &EmbeddedTranscript, step: f64) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidStep);
    }
    let tokens = &transcript.vectors;
    let target = transcript.gold_label.unwrap_or(Class::Ad).target();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = sample_noise(tokens, params.temp, &mut rng)?;
    let (_, analytic) = loss_and_grad(tokens, Some(&noise), target, params)?;

    let loss_at = |p: &AssessorParams| loss_and_grad(tokens, Some(&noise), target, p).map(|(l, _)| l);
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (idx, a) in analytic.scalars().enumerate() {
        let original = params.scalars().nth(idx).expect("same layout");
        set_scalar(&mut probe, idx, original + step);
        let up = loss_at(&probe)?;
        set_scalar(&mut probe, idx, original - step);
        let down = loss_at(&probe)?;
        set_scalar(&mut probe, idx, original);
        let numeric = (up - down) / (2.0 * step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn set_scalar(params: &mut AssessorParams, idx: usize, value: f64) {
    if let Some(slot) = params.scalars_mut().nth(idx) {
        *slot = value;
    }
}

/// On-disk checkpoint: parameters plus the hyperparameters that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub hyper: Hyper,
    pub params: AssessorParams,
    #[serde(default)]
    pub loss_trace: Vec<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.params.validate()?;
        Ok(ckpt)
    }
}
