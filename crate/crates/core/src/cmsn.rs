//! Cross-modal selective network.
//!
//! Text and speech embeddings pass through small encoders to features
//! `f_T`, `f_A`. Two pairs of linear projections map the features into
//! common spaces: `p = P f` feeds the selector and the first alignment loss,
//! `q = Q f` feeds the auxiliary alignment loss. The selector `g(p_T, p_A)`
//! is an MLP with a sigmoid output giving a per-sample score `rho` in (0, 1).
//! A linear head on `f_A` predicts pseudolabel classes.
//!
//! For a batch with means written `E[.]`, the objective is
//!
//! ```text
//! task_i = CE(head(f_A_i), y_i)            cm1_i = |p_T_i - p_A_i|
//! sel    = alpha * max(tau - E[rho], 0)^2
//!        + beta  * E[rho_i * (cm1_i + task_i)] / E[rho]
//! cm2    = E[rho_i * |q_T_i - q_A_i|]
//! total  = E[task_i] + sel + gamma * cm2
//! ```
//!
//! Gradients are written out by hand and checked against central finite
//! differences in the tests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample};
use crate::seed::{self, StageRng};
use crate::{Error, Result};

pub const CHECKPOINT_SCHEMA: &str = "cmsn-checkpoint/1";

/// Scores are kept this far from 0 and 1.
const RHO_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub text_dim: usize,
    pub speech_dim: usize,
    pub classes: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_proj_dim")]
    pub proj_dim: usize,
    #[serde(default = "default_encoder_hidden")]
    pub encoder_hidden: usize,
    #[serde(default = "default_selector_hidden")]
    pub selector_hidden: usize,
}

fn default_feature_dim() -> usize {
    16
}
fn default_proj_dim() -> usize {
    8
}
fn default_encoder_hidden() -> usize {
    64
}
fn default_selector_hidden() -> usize {
    32
}

impl ModelConfig {
    pub fn new(text_dim: usize, speech_dim: usize, classes: usize) -> Self {
        ModelConfig {
            text_dim,
            speech_dim,
            classes,
            feature_dim: default_feature_dim(),
            proj_dim: default_proj_dim(),
            encoder_hidden: default_encoder_hidden(),
            selector_hidden: default_selector_hidden(),
        }
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.text_dim,
            self.speech_dim,
            self.classes,
            self.feature_dim,
            self.proj_dim,
            self.encoder_hidden,
            self.selector_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        Ok(())
    }
}

/// Loss weights and target coverage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            alpha: 0.1,
            beta: 0.1,
            gamma: 0.1,
            tau: 0.55,
        }
    }
}

impl Hyper {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid("tau must lie in [0, 1]"));
        }
        if [self.alpha, self.beta, self.gamma]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Dense layer `y = x W^T + b` with `W` of shape (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Linear {
    fn init(rng: &mut StageRng, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..=bound));
        let bias = bias.then(|| Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..=bound)));
        Linear { weight, bias }
    }

    fn zeros(fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Linear {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: bias.then(|| Array1::zeros(fan_out)),
        }
    }

    fn zeros_like(&self) -> Self {
        Linear {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: self.bias.as_ref().map(|b| Array1::zeros(b.raw_dim())),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        if let Some(b) = &self.bias {
            y += b;
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&self, x: ArrayView2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(&x);
        if let Some(gb) = &mut grad.bias {
            *gb += &dy.sum_axis(Axis(0));
        }
        dy.dot(&self.weight)
    }
}

/// One tanh hidden layer followed by a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let h = self.hidden.forward(x).mapv(f64::tanh);
        let y = self.out.forward(h.view());
        (h, y)
    }

    fn backward(&self, x: ArrayView2<f64>, h: &Array2<f64>, dy: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let dh = self.out.backward(h.view(), dy, &mut grad.out);
        let dpre = dh * &h.mapv(|t| 1.0 - t * t);
        self.hidden.backward(x, &dpre, &mut grad.hidden)
    }

    fn zeros_like(&self) -> Self {
        Mlp {
            hidden: self.hidden.zeros_like(),
            out: self.out.zeros_like(),
        }
    }
}

/// Every trainable tensor of the network. Also used to hold gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct CmsnParams {
    pub enc_text: Mlp,
    pub enc_speech: Mlp,
    pub p_text: Linear,
    pub p_speech: Linear,
    pub q_text: Linear,
    pub q_speech: Linear,
    pub selector: Mlp,
    pub task_head: Linear,
}

impl CmsnParams {
    fn init(cfg: &ModelConfig, rng: &mut StageRng) -> Self {
        let enc = |d_in: usize, rng: &mut StageRng| Mlp {
            hidden: Linear::init(rng, d_in, cfg.encoder_hidden, true),
            out: Linear::init(rng, cfg.encoder_hidden, cfg.feature_dim, true),
        };
        let enc_text = enc(cfg.text_dim, rng);
        let enc_speech = enc(cfg.speech_dim, rng);
        let p_text = Linear::init(rng, cfg.feature_dim, cfg.proj_dim, false);
        let p_speech = Linear::init(rng, cfg.feature_dim, cfg.proj_dim, false);
        let q_text = Linear::init(rng, cfg.feature_dim, cfg.proj_dim, false);
        let q_speech = Linear::init(rng, cfg.feature_dim, cfg.proj_dim, false);
        let selector = Mlp {
            hidden: Linear::init(rng, 2 * cfg.proj_dim, cfg.selector_hidden, true),
            // Zero output layer: every score starts at exactly 0.5.
            out: Linear::zeros(cfg.selector_hidden, 1, true),
        };
        let task_head = Linear::init(rng, cfg.feature_dim, cfg.classes, true);
        CmsnParams {
            enc_text,
            enc_speech,
            p_text,
            p_speech,
            q_text,
            q_speech,
            selector,
            task_head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        CmsnParams {
            enc_text: self.enc_text.zeros_like(),
            enc_speech: self.enc_speech.zeros_like(),
            p_text: self.p_text.zeros_like(),
            p_speech: self.p_speech.zeros_like(),
            q_text: self.q_text.zeros_like(),
            q_speech: self.q_speech.zeros_like(),
            selector: self.selector.zeros_like(),
            task_head: self.task_head.zeros_like(),
        }
    }

    /// Layers by name, in a fixed order.
    pub fn linears(&self) -> [(&'static str, &Linear); 11] {
        [
            ("enc_text.hidden", &self.enc_text.hidden),
            ("enc_text.out", &self.enc_text.out),
            ("enc_speech.hidden", &self.enc_speech.hidden),
            ("enc_speech.out", &self.enc_speech.out),
            ("p_text", &self.p_text),
            ("p_speech", &self.p_speech),
            ("q_text", &self.q_text),
            ("q_speech", &self.q_speech),
            ("selector.hidden", &self.selector.hidden),
            ("selector.out", &self.selector.out),
            ("task_head", &self.task_head),
        ]
    }

    fn linears_mut(&mut self) -> [(&'static str, &mut Linear); 11] {
        let CmsnParams {
            enc_text,
            enc_speech,
            p_text,
            p_speech,
            q_text,
            q_speech,
            selector,
            task_head,
        } = self;
        [
            ("enc_text.hidden", &mut enc_text.hidden),
            ("enc_text.out", &mut enc_text.out),
            ("enc_speech.hidden", &mut enc_speech.hidden),
            ("enc_speech.out", &mut enc_speech.out),
            ("p_text", p_text),
            ("p_speech", p_speech),
            ("q_text", q_text),
            ("q_speech", q_speech),
            ("selector.hidden", &mut selector.hidden),
            ("selector.out", &mut selector.out),
            ("task_head", task_head),
        ]
    }

    /// Named flat tensors with their shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (name, l) in self.linears() {
            out.push((
                format!("{name}.weight"),
                l.weight.shape().to_vec(),
                l.weight.as_slice().expect("standard layout"),
            ));
            if let Some(b) = &l.bias {
                out.push((format!("{name}.bias"), b.shape().to_vec(), b.as_slice().expect("standard layout")));
            }
        }
        out
    }

    /// Mutable flat tensors, in the same order as [`CmsnParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (name, l) in self.linears_mut() {
            let Linear { weight, bias } = l;
            out.push((format!("{name}.weight"), weight.as_slice_mut().expect("standard layout")));
            if let Some(b) = bias {
                out.push((format!("{name}.bias"), b.as_slice_mut().expect("standard layout")));
            }
        }
        out
    }
}

/// Per-sample supervised loss on task-head logits. Returns the losses and
/// the gradient of each loss with respect to its own logits row.
pub trait TaskLoss {
    fn per_sample(&self, logits: &Array2<f64>, labels: &[usize]) -> (Array1<f64>, Array2<f64>);
}

/// Softmax cross-entropy against pseudolabel classes.
#[derive(Debug, Clone, Copy, Default)]
pub struct SoftmaxCrossEntropy;

impl TaskLoss for SoftmaxCrossEntropy {
    fn per_sample(&self, logits: &Array2<f64>, labels: &[usize]) -> (Array1<f64>, Array2<f64>) {
        let mut grad = logits.clone();
        let mut loss = Array1::zeros(labels.len());
        for ((mut row, l), &y) in grad.outer_iter_mut().zip(loss.iter_mut()).zip(labels) {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let z = row.sum();
            row /= z;
            *l = -(row[y].ln());
            row[y] -= 1.0;
        }
        (loss, grad)
    }
}

/// A batch of inputs with pseudolabels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub text: Array2<f64>,
    pub speech: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<Self> {
        let samples: Vec<&Sample> = samples.into_iter().collect();
        let first = samples.first().ok_or(Error::EmptyCorpus)?;
        let (dt, da) = (first.text_emb.len(), first.speech_emb.len());
        let mut text = Array2::zeros((samples.len(), dt));
        let mut speech = Array2::zeros((samples.len(), da));
        let mut labels = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.text_emb.len() != dt || s.speech_emb.len() != da {
                return Err(Error::ShapeMismatch {
                    left: dt + da,
                    right: s.text_emb.len() + s.speech_emb.len(),
                });
            }
            text.row_mut(i).assign(&Array1::from(s.text_emb.clone()));
            speech.row_mut(i).assign(&Array1::from(s.speech_emb.clone()));
            labels.push(s.pseudolabel.ok_or_else(|| Error::MissingPseudolabel { id: s.id.clone() })?);
        }
        Ok(Batch { text, speech, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn rows(&self, idx: &[usize]) -> Batch {
        Batch {
            text: self.text.select(Axis(0), idx),
            speech: self.speech.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Everything the forward pass computes for one batch.
#[derive(Debug, Clone)]
pub struct ForwardBatch {
    pub p_text: Array2<f64>,
    pub p_speech: Array2<f64>,
    pub q_text: Array2<f64>,
    pub q_speech: Array2<f64>,
    pub rho: Array1<f64>,
    pub logits: Array2<f64>,
    pub cm1: Array1<f64>,
    /// `|q_T_i - q_A_i|`.
    pub cm2: Array1<f64>,
    pub task: Array1<f64>,
    task_grad: Array2<f64>,
    h_text: Array2<f64>,
    f_text: Array2<f64>,
    h_speech: Array2<f64>,
    f_speech: Array2<f64>,
    sel_in: Array2<f64>,
    sel_h: Array2<f64>,
}

/// Loss terms of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mean task loss.
    pub task: f64,
    /// Coverage penalty `alpha * max(tau - E[rho], 0)^2`.
    pub sel_coverage: f64,
    /// Score-weighted risk `beta * E[rho (cm1 + task)] / E[rho]`.
    pub sel_weighted: f64,
    /// Auxiliary alignment `E[rho |q_T - q_A|]`, before `gamma`.
    pub cm2: f64,
    pub total: f64,
    pub mean_rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmsnModel {
    pub config: ModelConfig,
    pub hyper: Hyper,
    pub params: CmsnParams,
    pub seed: u64,
}

fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(RHO_EPS, 1.0 - RHO_EPS)
}

fn row_norms(d: &Array2<f64>) -> Array1<f64> {
    d.map_axis(Axis(1), |r| r.dot(&r).sqrt())
}

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            left: a.len(),
            right: b.len(),
        })
    }
}

/// `|p_T_i - p_A_i|` per row.
pub fn loss_cm1(p_text: &Array2<f64>, p_speech: &Array2<f64>) -> Result<Array1<f64>> {
    check_same_shape(p_text, p_speech)?;
    Ok(row_norms(&(p_text - p_speech)))
}

/// Coverage penalty plus score-weighted risk, with batch means.
pub fn loss_sel(rho: &Array1<f64>, cm1: &Array1<f64>, task: &Array1<f64>, alpha: f64, beta: f64, tau: f64) -> Result<f64> {
    let (cov, weighted) = loss_sel_terms(rho, cm1, task, alpha, beta, tau)?;
    Ok(cov + weighted)
}

fn loss_sel_terms(
    rho: &Array1<f64>,
    cm1: &Array1<f64>,
    task: &Array1<f64>,
    alpha: f64,
    beta: f64,
    tau: f64,
) -> Result<(f64, f64)> {
    if rho.len() != cm1.len() || rho.len() != task.len() {
        return Err(Error::ShapeMismatch {
            left: rho.len(),
            right: cm1.len().max(task.len()),
        });
    }
    if rho.is_empty() {
        return Err(Error::invalid("selective loss needs a non-empty batch"));
    }
    let mean_rho = rho.mean().expect("non-empty");
    let gap = (tau - mean_rho).max(0.0);
    let weighted = (rho * &(cm1 + task)).mean().expect("non-empty") / mean_rho;
    Ok((alpha * gap * gap, beta * weighted))
}

/// `E[rho_i |q_T_i - q_A_i|]`.
pub fn loss_cm2(rho: &Array1<f64>, q_text: &Array2<f64>, q_speech: &Array2<f64>) -> Result<f64> {
    check_same_shape(q_text, q_speech)?;
    if rho.len() != q_text.nrows() {
        return Err(Error::ShapeMismatch {
            left: rho.len(),
            right: q_text.nrows(),
        });
    }
    if rho.is_empty() {
        return Err(Error::invalid("alignment loss needs a non-empty batch"));
    }
    Ok((rho * &row_norms(&(q_text - q_speech))).mean().expect("non-empty"))
}

impl CmsnModel {
    pub fn new(config: ModelConfig, hyper: Hyper, seed: u64) -> Result<Self> {
        config.validate()?;
        hyper.validate()?;
        let mut rng = seed::rng(seed);
        let params = CmsnParams::init(&config, &mut rng);
        Ok(CmsnModel {
            config,
            hyper,
            params,
            seed,
        })
    }

    fn check_inputs(&self, text: &Array2<f64>, speech: &Array2<f64>) -> Result<()> {
        if text.ncols() != self.config.text_dim {
            return Err(Error::ShapeMismatch {
                left: text.ncols(),
                right: self.config.text_dim,
            });
        }
        if speech.ncols() != self.config.speech_dim {
            return Err(Error::ShapeMismatch {
                left: speech.ncols(),
                right: self.config.speech_dim,
            });
        }
        if text.nrows() != speech.nrows() {
            return Err(Error::ShapeMismatch {
                left: text.nrows(),
                right: speech.nrows(),
            });
        }
        Ok(())
    }

    fn scores_and_logits(&self, text: &Array2<f64>, speech: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        self.check_inputs(text, speech)?;
        let p = &self.params;
        let (_, f_text) = p.enc_text.forward(text.view());
        let (_, f_speech) = p.enc_speech.forward(speech.view());
        let sel_in = concatenate![Axis(1), p.p_text.forward(f_text.view()), p.p_speech.forward(f_speech.view())];
        let (_, z) = p.selector.forward(sel_in.view());
        Ok((z.column(0).mapv(sigmoid), p.task_head.forward(f_speech.view())))
    }

    /// Deterministic per-sample scores, in corpus order.
    pub fn selective_scores(&self, corpus: &Corpus) -> Result<Vec<f64>> {
        let (text, speech) = stack(corpus.samples());
        Ok(self.scores_and_logits(&text, &speech)?.0.to_vec())
    }

    /// Argmax class of the task head on speech alone, in corpus order.
    pub fn predict(&self, corpus: &Corpus) -> Result<Vec<usize>> {
        let (text, speech) = stack(corpus.samples());
        let (_, logits) = self.scores_and_logits(&text, &speech)?;
        Ok(logits
            .outer_iter()
            .map(|r| {
                let mut best = 0;
                for (k, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect())
    }

    pub fn forward(&self, batch: &Batch) -> Result<ForwardBatch> {
        self.forward_with(batch, &SoftmaxCrossEntropy)
    }

    pub fn forward_with(&self, batch: &Batch, task_loss: &impl TaskLoss) -> Result<ForwardBatch> {
        self.check_inputs(&batch.text, &batch.speech)?;
        if let Some(&label) = batch.labels.iter().find(|&&l| l >= self.config.classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.config.classes,
            });
        }
        let p = &self.params;
        let (h_text, f_text) = p.enc_text.forward(batch.text.view());
        let (h_speech, f_speech) = p.enc_speech.forward(batch.speech.view());
        let p_text = p.p_text.forward(f_text.view());
        let p_speech = p.p_speech.forward(f_speech.view());
        let q_text = p.q_text.forward(f_text.view());
        let q_speech = p.q_speech.forward(f_speech.view());
        let sel_in = concatenate![Axis(1), p_text, p_speech];
        let (sel_h, z) = p.selector.forward(sel_in.view());
        let rho = z.column(0).mapv(sigmoid);
        let logits = p.task_head.forward(f_speech.view());
        let (task, task_grad) = task_loss.per_sample(&logits, &batch.labels);
        let cm1 = loss_cm1(&p_text, &p_speech)?;
        let cm2 = row_norms(&(&q_text - &q_speech));
        Ok(ForwardBatch {
            p_text,
            p_speech,
            q_text,
            q_speech,
            rho,
            logits,
            cm1,
            cm2,
            task,
            task_grad,
            h_text,
            f_text,
            h_speech,
            f_speech,
            sel_in,
            sel_h,
        })
    }

    pub fn breakdown(&self, fwd: &ForwardBatch) -> Result<LossBreakdown> {
        let h = &self.hyper;
        let (sel_coverage, sel_weighted) = loss_sel_terms(&fwd.rho, &fwd.cm1, &fwd.task, h.alpha, h.beta, h.tau)?;
        let task = fwd.task.mean().ok_or_else(|| Error::invalid("empty batch"))?;
        let cm2 = (&fwd.rho * &fwd.cm2).mean().expect("non-empty");
        Ok(LossBreakdown {
            task,
            sel_coverage,
            sel_weighted,
            cm2,
            total: task + sel_coverage + sel_weighted + h.gamma * cm2,
            mean_rho: fwd.rho.mean().expect("non-empty"),
        })
    }

    pub fn total_loss(&self, batch: &Batch) -> Result<LossBreakdown> {
        self.breakdown(&self.forward(batch)?)
    }

    pub fn gradients(&self, batch: &Batch) -> Result<(LossBreakdown, CmsnParams)> {
        self.gradients_with(batch, &SoftmaxCrossEntropy)
    }

    /// Analytic gradient of the total loss with respect to every parameter.
    pub fn gradients_with(&self, batch: &Batch, task_loss: &impl TaskLoss) -> Result<(LossBreakdown, CmsnParams)> {
        let fwd = self.forward_with(batch, task_loss)?;
        let losses = self.breakdown(&fwd)?;
        let Hyper { alpha, beta, gamma, tau } = self.hyper;
        let p = &self.params;
        let mut g = p.zeros_like();
        let b = batch.len() as f64;
        let m = losses.mean_rho;
        let risk = &fwd.cm1 + &fwd.task;
        let weighted_mean = (&fwd.rho * &risk).mean().expect("non-empty");
        let gap = (tau - m).max(0.0);

        // Upstream gradients of the per-sample quantities.
        let d_rho = risk.mapv(|c| beta / (b * m) * (c - weighted_mean / m)) - 2.0 * alpha * gap / b
            + fwd.cm2.mapv(|c| gamma * c / b);
        let d_task = fwd.rho.mapv(|r| 1.0 / b + beta * r / (b * m));
        let d_cm1 = fwd.rho.mapv(|r| beta * r / (b * m));
        let d_cm2 = fwd.rho.mapv(|r| gamma * r / b);

        // Selector.
        let d_z = (&d_rho * &fwd.rho.mapv(|r| r * (1.0 - r))).insert_axis(Axis(1));
        let d_sel_in = p
            .selector
            .backward(fwd.sel_in.view(), &fwd.sel_h, &d_z.to_owned(), &mut g.selector);
        let dp = self.config.proj_dim;
        let mut d_p_text = d_sel_in.slice(s![.., ..dp]).to_owned();
        let mut d_p_speech = d_sel_in.slice(s![.., dp..]).to_owned();

        // Alignment norms.
        let unit_scaled = |diff: Array2<f64>, norms: &Array1<f64>, upstream: &Array1<f64>| {
            let mut out = diff;
            Zip::from(out.rows_mut())
                .and(norms)
                .and(upstream)
                .for_each(|mut row, &n, &u| {
                    if n > 0.0 {
                        row *= u / n;
                    } else {
                        row.fill(0.0);
                    }
                });
            out
        };
        let g_cm1 = unit_scaled(&fwd.p_text - &fwd.p_speech, &fwd.cm1, &d_cm1);
        d_p_text += &g_cm1;
        d_p_speech -= &g_cm1;
        let g_cm2 = unit_scaled(&fwd.q_text - &fwd.q_speech, &fwd.cm2, &d_cm2);
        let d_q_text = g_cm2.clone();
        let d_q_speech = -g_cm2;

        // Task head on speech features.
        let mut d_logits = fwd.task_grad.clone();
        Zip::from(d_logits.rows_mut())
            .and(&d_task)
            .for_each(|mut row, &u| row *= u);
        let mut d_f_speech = p.task_head.backward(fwd.f_speech.view(), &d_logits, &mut g.task_head);

        d_f_speech += &p.p_speech.backward(fwd.f_speech.view(), &d_p_speech, &mut g.p_speech);
        d_f_speech += &p.q_speech.backward(fwd.f_speech.view(), &d_q_speech, &mut g.q_speech);
        let mut d_f_text = p.p_text.backward(fwd.f_text.view(), &d_p_text, &mut g.p_text);
        d_f_text += &p.q_text.backward(fwd.f_text.view(), &d_q_text, &mut g.q_text);

        p.enc_speech
            .backward(batch.speech.view(), &fwd.h_speech, &d_f_speech, &mut g.enc_speech);
        p.enc_text
            .backward(batch.text.view(), &fwd.h_text, &d_f_text, &mut g.enc_text);
        Ok((losses, g))
    }

    pub fn to_checkpoint(&self, train: Option<&TrainConfig>) -> Checkpoint {
        let tensors = self
            .params
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| {
                (
                    name,
                    Tensor {
                        shape,
                        data: data.to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            schema: CHECKPOINT_SCHEMA.into(),
            config: self.config.clone(),
            hyper: self.hyper,
            seed: self.seed,
            train: train.cloned(),
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.schema != CHECKPOINT_SCHEMA {
            return Err(Error::invalid(format!("unsupported checkpoint schema {:?}", ck.schema)));
        }
        let mut model = CmsnModel::new(ck.config.clone(), ck.hyper, ck.seed)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .params
            .tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        if expected.len() != ck.tensors.len() {
            return Err(Error::invalid("checkpoint tensor set does not match the model"));
        }
        for ((name, shape), (_, slot)) in expected.iter().zip(model.params.tensors_mut()) {
            let t = ck
                .tensors
                .get(name)
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks tensor {name}")))?;
            if &t.shape != shape || t.data.len() != slot.len() {
                return Err(Error::invalid(format!("tensor {name} has the wrong shape")));
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("tensor {name} is not finite")));
            }
            slot.copy_from_slice(&t.data);
        }
        Ok(model)
    }
}

fn stack(samples: &[Sample]) -> (Array2<f64>, Array2<f64>) {
    let dt = samples.first().map_or(0, |s| s.text_emb.len());
    let da = samples.first().map_or(0, |s| s.speech_emb.len());
    let text = Array2::from_shape_fn((samples.len(), dt), |(i, j)| samples[i].text_emb[j]);
    let speech = Array2::from_shape_fn((samples.len(), da), |(i, j)| samples[i].speech_emb[j]);
    (text, speech)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialized model: named parameter arrays plus configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema: String,
    pub config: ModelConfig,
    pub hyper: Hyper,
    pub seed: u64,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes") + "\n"
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Keep the text encoder at its initial weights.
    pub freeze_text_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let h = Hyper::default();
        TrainConfig {
            alpha: h.alpha,
            beta: h.beta,
            gamma: h.gamma,
            tau: h.tau,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            freeze_text_encoder: true,
        }
    }
}

impl TrainConfig {
    pub fn hyper(&self) -> Hyper {
        Hyper {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            tau: self.tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper().validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        Ok(())
    }
}

/// Per-epoch training record. Loss terms are averaged over the epoch's
/// batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    /// Mean score over the whole training set after the epoch.
    pub mean_rho: f64,
    /// Fraction of training samples scoring at least 0.5 after the epoch.
    pub coverage: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CmsnModel,
    pub history: Vec<EpochRecord>,
}

struct Adam {
    m: CmsnParams,
    v: CmsnParams,
    t: i32,
}

impl Adam {
    fn new(p: &CmsnParams) -> Self {
        Adam {
            m: p.zeros_like(),
            v: p.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut CmsnParams, grads: &CmsnParams, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(self.t);
        let bc2 = 1.0 - cfg.adam_beta2.powi(self.t);
        let grads = grads.tensors();
        let params_t = params.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((name, w), (_, _, g)), ((_, m), (_, v))) in params_t.into_iter().zip(grads).zip(ms.into_iter().zip(vs)) {
            if cfg.freeze_text_encoder && name.starts_with("enc_text.") {
                continue;
            }
            for i in 0..w.len() {
                m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
                v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Seeded minibatch training with Adam. Batches of fewer than two samples
/// at the end of an epoch are dropped.
pub fn train(model: &CmsnModel, corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let all = Batch::from_samples(corpus.samples())?;
    if let Some(&label) = all.labels.iter().find(|&&l| l >= model.config.classes) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: model.config.classes,
        });
    }
    let mut model = model.clone();
    model.hyper = cfg.hyper();
    let mut rng = seed::rng(cfg.seed);
    let mut adam = Adam::new(&model.params);
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = all.rows(chunk);
            let (l, g) = model.gradients(&batch)?;
            adam.step(&mut model.params, &g, cfg);
            sum.task += l.task;
            sum.sel_coverage += l.sel_coverage;
            sum.sel_weighted += l.sel_weighted;
            sum.cm2 += l.cm2;
            sum.total += l.total;
            sum.mean_rho += l.mean_rho;
            batches += 1;
        }
        let nb = batches.max(1) as f64;
        let losses = LossBreakdown {
            task: sum.task / nb,
            sel_coverage: sum.sel_coverage / nb,
            sel_weighted: sum.sel_weighted / nb,
            cm2: sum.cm2 / nb,
            total: sum.total / nb,
            mean_rho: sum.mean_rho / nb,
        };
        let (rho, _) = model.scores_and_logits(&all.text, &all.speech)?;
        history.push(EpochRecord {
            epoch,
            losses,
            mean_rho: rho.mean().unwrap_or(0.0),
            coverage: rho.iter().filter(|&&r| r >= 0.5).count() as f64 / rho.len() as f64,
        });
    }
    Ok(TrainOutcome { model, history })
}

pub fn write_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = serde_json::to_string_pretty(history)?;
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SyntheticSpec};
    use ndarray::array;

    fn small_config() -> ModelConfig {
        ModelConfig {
            text_dim: 5,
            speech_dim: 4,
            classes: 3,
            feature_dim: 4,
            proj_dim: 3,
            encoder_hidden: 6,
            selector_hidden: 5,
        }
    }

    fn random_batch(n: usize, seed: u64) -> Batch {
        let mut rng = seed::rng(seed);
        Batch {
            text: Array2::from_shape_fn((n, 5), |_| rng.random_range(-1.0..1.0)),
            speech: Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.0..1.0)),
            labels: (0..n).map(|i| i % 3).collect(),
        }
    }

    /// A model whose selector output layer is no longer zero, so every
    /// gradient path is active.
    fn perturbed_model(hyper: Hyper, seed: u64) -> CmsnModel {
        let mut m = CmsnModel::new(small_config(), hyper, seed).unwrap();
        let mut rng = seed::rng(seed ^ 0xabc);
        m.params
            .selector
            .out
            .weight
            .mapv_inplace(|_| rng.random_range(-1.5..1.5));
        m
    }

    #[test]
    fn scores_start_at_one_half() {
        let m = CmsnModel::new(small_config(), Hyper::default(), 3).unwrap();
        let f = m.forward(&random_batch(7, 1)).unwrap();
        assert!(f.rho.iter().all(|&r| r == 0.5));
        assert!(f.task.iter().all(|t| t.is_finite() && *t > 0.0));
    }

    #[test]
    fn identical_projections_give_zero_cm1() {
        let mut cfg = small_config();
        cfg.speech_dim = cfg.text_dim;
        let mut m = CmsnModel::new(cfg, Hyper::default(), 4).unwrap();
        m.params.enc_speech = m.params.enc_text.clone();
        m.params.p_speech = m.params.p_text.clone();
        let mut b = random_batch(6, 2);
        b.speech = b.text.clone();
        let f = m.forward(&b).unwrap();
        assert!(f.cm1.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn loss_examples() {
        let r = array![0.5, 0.5];
        let zero = array![0.0, 0.0];
        // Coverage gap 0.25 with alpha 0.1.
        let l = loss_sel(&r, &zero, &zero, 0.1, 0.0, 0.75).unwrap();
        assert!((l - 0.00625).abs() < 1e-12);
        let l = loss_sel(&r, &array![1.0, 1.0], &array![0.5, 0.5], 0.1, 0.7, 0.75).unwrap();
        assert!((l - (0.00625 + 0.7 * 1.5)).abs() < 1e-12);
        let l = loss_sel(&array![0.6], &array![1.0], &array![0.0], 1.0, 1.0, 0.5).unwrap();
        assert!((l - 1.0).abs() < 1e-12);

        let cm1 = loss_cm1(&array![[3.0, 4.0]], &array![[0.0, 0.0]]).unwrap();
        assert_eq!(cm1[0], 5.0);
        let cm2 = loss_cm2(&array![0.5], &array![[1.0, 2.0]], &array![[1.0, 0.0]]).unwrap();
        assert!((cm2 - 1.0).abs() < 1e-12);

        assert!(loss_cm1(&array![[1.0, 2.0]], &array![[1.0, 2.0, 3.0]]).is_err());
        assert!(loss_sel(&array![0.5], &array![0.0, 0.0], &array![0.0], 0.1, 0.1, 0.5).is_err());
    }

    #[test]
    fn coverage_penalty_below_target() {
        // Mean score 0.3 against a 0.55 target.
        let rho = array![0.1, 0.3, 0.5];
        let zero = array![0.0, 0.0, 0.0];
        let l = loss_sel(&rho, &zero, &zero, 0.1, 0.1, 0.55).unwrap();
        assert!((l - 0.1 * 0.25f64.powi(2)).abs() < 1e-12);
        // Above the target the penalty vanishes.
        assert_eq!(loss_sel(&(&rho + 0.4), &zero, &zero, 0.1, 0.1, 0.55).unwrap(), 0.0);
    }

    #[test]
    fn weighted_risk_is_scale_invariant_in_rho() {
        let cm1 = array![0.2, 1.0, 0.4];
        let task = array![1.0, 0.1, 0.3];
        let rho = array![0.2, 0.4, 0.3];
        let a = loss_sel(&rho, &cm1, &task, 0.0, 1.0, 0.0).unwrap();
        let b = loss_sel(&(&rho * 2.0), &cm1, &task, 0.0, 1.0, 0.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn softmax_cross_entropy_matches_log_sum_exp() {
        let logits = array![[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]];
        let (l, g) = SoftmaxCrossEntropy.per_sample(&logits, &[1, 2]);
        let lse = (1f64.exp() + 2f64.exp() + 0.5f64.exp()).ln();
        assert!((l[0] - (lse - 2.0)).abs() < 1e-12);
        assert!((l[1] - 3f64.ln()).abs() < 1e-12);
        for row in g.outer_iter() {
            assert!(row.sum().abs() < 1e-12);
        }
    }

    fn total(m: &CmsnModel, b: &Batch) -> f64 {
        m.total_loss(b).unwrap().total
    }

    fn check_gradients(hyper: Hyper, seed: u64) {
        let model = perturbed_model(hyper, seed);
        let batch = random_batch(6, seed + 100);
        let (_, grads) = model.gradients(&batch).unwrap();
        let analytic: Vec<(String, Vec<f64>)> = grads
            .tensors()
            .into_iter()
            .map(|(n, _, d)| (n, d.to_vec()))
            .collect();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for (t, (name, g)) in analytic.iter().enumerate() {
            for i in 0..g.len() {
                let mut plus = model.clone();
                plus.params.tensors_mut()[t].1[i] += h;
                let mut minus = model.clone();
                minus.params.tensors_mut()[t].1[i] -= h;
                let fd = (total(&plus, &batch) - total(&minus, &batch)) / (2.0 * h);
                let err = (fd - g[i]).abs() / (1.0 + fd.abs().max(g[i].abs()));
                assert!(err < 1e-5, "{name}[{i}]: analytic {} vs numeric {fd}", g[i]);
                worst = worst.max(err);
            }
        }
        assert!(worst.is_finite());
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(Hyper::default(), 11);
        check_gradients(
            Hyper {
                alpha: 2.0,
                beta: 0.7,
                gamma: 0.4,
                tau: 0.9,
            },
            12,
        );
    }

    #[test]
    fn inactive_coverage_term_has_no_gradient() {
        let hyper = Hyper {
            alpha: 5.0,
            beta: 0.0,
            gamma: 0.0,
            tau: 0.0,
        };
        let model = perturbed_model(hyper, 5);
        let batch = random_batch(5, 6);
        let (l, g) = model.gradients(&batch).unwrap();
        assert_eq!(l.sel_coverage, 0.0);
        // Only the task loss remains, and it does not touch the selector.
        assert!(g.selector.hidden.weight.iter().all(|&x| x == 0.0));
        assert!(g.selector.out.weight.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_gamma_leaves_q_untouched() {
        let hyper = Hyper {
            gamma: 0.0,
            ..Hyper::default()
        };
        let (_, g) = perturbed_model(hyper, 8).gradients(&random_batch(4, 9)).unwrap();
        assert!(g.q_text.weight.iter().chain(g.q_speech.weight.iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let model = perturbed_model(Hyper::default(), 13);
        let b = random_batch(4, 14);
        let idx: Vec<usize> = (0..4).chain(0..4).collect();
        let doubled = b.rows(&idx);
        let (la, ga) = model.gradients(&b).unwrap();
        let (lb, gb) = model.gradients(&doubled).unwrap();
        assert!((la.total - lb.total).abs() < 1e-12);
        for ((_, _, x), (_, _, y)) in ga.tensors().into_iter().zip(gb.tensors()) {
            for (a, b) in x.iter().zip(y) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_bad_labels_and_shapes() {
        let m = CmsnModel::new(small_config(), Hyper::default(), 1).unwrap();
        let mut b = random_batch(3, 1);
        b.labels[1] = 3;
        assert!(matches!(m.forward(&b), Err(Error::LabelOutOfRange { label: 3, .. })));
        let mut b = random_batch(3, 1);
        b.text = Array2::zeros((3, 2));
        assert!(m.forward(&b).is_err());
        assert!(CmsnModel::new(small_config(), Hyper { tau: 1.5, ..Hyper::default() }, 0).is_err());
    }

    fn training_corpus() -> Corpus {
        generate_synthetic_corpus(&SyntheticSpec {
            target_sizes: vec![20, 20],
            other_sizes: vec![],
            text_dim: 5,
            speech_dim: 4,
            mismatch_fraction: 0.2,
            seed: 3,
            ..SyntheticSpec::default()
        })
        .unwrap()
        .corpus
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let corpus = training_corpus();
        let mut cfg = small_config();
        cfg.classes = 2;
        let m = CmsnModel::new(cfg, Hyper::default(), 7).unwrap();
        let out = train(&m, &corpus, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
        assert_eq!(out.model.params, m.params);
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_keeps_frozen_encoder() {
        let corpus = training_corpus();
        let mut cfg = small_config();
        cfg.classes = 2;
        let m = CmsnModel::new(cfg, Hyper::default(), 7).unwrap();
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let a = train(&m, &corpus, &tc).unwrap();
        let b = train(&m, &corpus, &tc).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.params.enc_text, m.params.enc_text);
        assert_ne!(a.model.params.enc_speech, m.params.enc_speech);
        assert_eq!(a.history.len(), 3);
    }

    #[test]
    fn scores_are_open_unit_and_order_free() {
        let corpus = training_corpus();
        let m = perturbed_model(Hyper::default(), 5);
        let rho = m.selective_scores(&corpus).unwrap();
        assert!(rho.iter().all(|&r| r > 0.0 && r < 1.0));
        let reversed: Vec<usize> = (0..corpus.len()).rev().collect();
        let back = m.selective_scores(&corpus.subset(&reversed)).unwrap();
        for (i, &j) in reversed.iter().enumerate() {
            assert_eq!(back[i], rho[j]);
        }
    }

    #[test]
    fn training_lowers_the_loss() {
        let corpus = training_corpus();
        let mut cfg = small_config();
        cfg.classes = 2;
        let m = CmsnModel::new(cfg, Hyper::default(), 9).unwrap();
        let tc = TrainConfig {
            epochs: 5,
            batch_size: 8,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let all = Batch::from_samples(corpus.samples().iter()).unwrap();
        let before = m.total_loss(&all).unwrap().total;
        let out = train(&m, &corpus, &tc).unwrap();
        let after = out.model.total_loss(&all).unwrap().total;
        assert!(after < before, "{before} -> {after}");
        assert!(out.history.last().unwrap().losses.total < out.history[0].losses.total);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = perturbed_model(Hyper::default(), 21);
        let ck = m.to_checkpoint(None);
        let back = Checkpoint::from_json_str(&ck.to_json_string()).unwrap();
        assert_eq!(back, ck);
        let restored = CmsnModel::from_checkpoint(&back).unwrap();
        assert_eq!(restored, m);

        let mut bad = ck.clone();
        bad.tensors.get_mut("task_head.bias").unwrap().data.pop();
        assert!(CmsnModel::from_checkpoint(&bad).is_err());
        let mut bad = ck;
        bad.schema = "other".into();
        assert!(CmsnModel::from_checkpoint(&bad).is_err());
        assert!(Checkpoint::from_json_str("{}").is_err());
    }
}
