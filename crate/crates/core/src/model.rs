//! The fusion head: two residual projectors, a two-layer classifier over the
//! concatenated features, and the combined objective
//! `total = l_c + lambda * l_s`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::contrastive::contrastive_nodes;
use crate::data::{Batch, Label};
use crate::error::{FnrError, Result};
use crate::tensor::{Real, Tensor2};

/// Which parts of the head run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TextOnly,
    ImageOnly,
    /// Both modalities, classification loss only.
    FusedWs,
    /// Both modalities plus the similarity loss.
    FusedS,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::TextOnly, Mode::ImageOnly, Mode::FusedWs, Mode::FusedS];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::TextOnly => "text_only",
            Mode::ImageOnly => "image_only",
            Mode::FusedWs => "fused_ws",
            Mode::FusedS => "fused_s",
        }
    }

    pub fn uses_text(self) -> bool {
        self != Mode::ImageOnly
    }

    pub fn uses_image(self) -> bool {
        self != Mode::TextOnly
    }

    pub fn uses_similarity(self) -> bool {
        self == Mode::FusedS
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = FnrError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| FnrError::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Projection size.
    pub k: usize,
    /// Classifier hidden width.
    pub hidden: usize,
    pub dropout_rate: f64,
    /// Weight of the similarity loss; only read in [`Mode::FusedS`].
    pub lambda: f64,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 64,
            hidden: 64,
            dropout_rate: 0.3,
            lambda: 1.0,
            mode: Mode::FusedS,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.hidden == 0 {
            return Err(FnrError::Config("k and hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(FnrError::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(FnrError::Config(format!(
                "lambda {} must be finite and >= 0",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Per-class weights for the classification loss, indexed by label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub real: f64,
    pub fake: f64,
}

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights {
            real: 1.0,
            fake: 1.0,
        }
    }

    /// `alpha` on the minority class, 1 on the other.
    pub fn from_alpha(alpha: f64, minority: Label) -> Result<Self> {
        if !(alpha >= 1.0) || !alpha.is_finite() {
            return Err(FnrError::Contract(format!(
                "alpha {alpha} must be finite and >= 1"
            )));
        }
        Ok(match minority {
            Label::Real => ClassWeights {
                real: alpha,
                fake: 1.0,
            },
            Label::Fake => ClassWeights {
                real: 1.0,
                fake: alpha,
            },
        })
    }

    pub fn alpha(&self) -> f64 {
        self.real.max(self.fake)
    }

    fn as_vec<T: Real>(&self) -> Vec<T> {
        vec![T::from_f64(self.real), T::from_f64(self.fake)]
    }
}

/// One residual projector: `branch = x w1 + b1`,
/// `out = dropout(gelu(branch)) w2 + branch + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorParams<T> {
    pub w1: Tensor2<T>,
    pub b1: Tensor2<T>,
    pub w2: Tensor2<T>,
    pub b2: Tensor2<T>,
}

/// `probs = softmax(dropout(gelu(f_c w5 + b5)) w6 + b6)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams<T> {
    pub w5: Tensor2<T>,
    pub b5: Tensor2<T>,
    pub w6: Tensor2<T>,
    pub b6: Tensor2<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FnrParams<T> {
    pub text: ProjectorParams<T>,
    pub image: ProjectorParams<T>,
    pub classifier: ClassifierParams<T>,
}

/// Optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Projector,
    Classifier,
}

/// Stable parameter order used by checkpoints, optimizers and gradient checks.
pub const PARAM_NAMES: [&str; 12] = [
    "text_projector.w1",
    "text_projector.b1",
    "text_projector.w2",
    "text_projector.b2",
    "image_projector.w1",
    "image_projector.b1",
    "image_projector.w2",
    "image_projector.b2",
    "classifier.w5",
    "classifier.b5",
    "classifier.w6",
    "classifier.b6",
];

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("classifier.") {
        ParamGroup::Classifier
    } else {
        ParamGroup::Projector
    }
}

fn glorot<T: Real, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor2<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor2::from_fn(fan_in, fan_out, |_, _| {
        T::from_f64(rng.random_range(-limit..limit))
    })
}

impl<T: Real> ProjectorParams<T> {
    pub fn zeros(d_in: usize, k: usize) -> Self {
        ProjectorParams {
            w1: Tensor2::zeros(d_in, k),
            b1: Tensor2::zeros(1, k),
            w2: Tensor2::zeros(k, k),
            b2: Tensor2::zeros(1, k),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(d_in: usize, k: usize, rng: &mut R) -> Self {
        ProjectorParams {
            w1: glorot(d_in, k, rng),
            b1: Tensor2::zeros(1, k),
            w2: glorot(k, k, rng),
            b2: Tensor2::zeros(1, k),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn k(&self) -> usize {
        self.w1.cols()
    }

    fn validate(&self, which: &str) -> Result<()> {
        let k = self.k();
        let ok =
            self.b1.shape() == (1, k) && self.w2.shape() == (k, k) && self.b2.shape() == (1, k);
        if !ok {
            return Err(FnrError::Contract(format!(
                "{which} projector parameter shapes are inconsistent"
            )));
        }
        Ok(())
    }
}

impl<T: Real> ClassifierParams<T> {
    pub fn zeros(k: usize, hidden: usize) -> Self {
        ClassifierParams {
            w5: Tensor2::zeros(2 * k, hidden),
            b5: Tensor2::zeros(1, hidden),
            w6: Tensor2::zeros(hidden, 2),
            b6: Tensor2::zeros(1, 2),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(k: usize, hidden: usize, rng: &mut R) -> Self {
        ClassifierParams {
            w5: glorot(2 * k, hidden, rng),
            b5: Tensor2::zeros(1, hidden),
            w6: glorot(hidden, 2, rng),
            b6: Tensor2::zeros(1, 2),
        }
    }

    fn validate(&self) -> Result<()> {
        let h = self.w5.cols();
        let ok =
            self.b5.shape() == (1, h) && self.w6.shape() == (h, 2) && self.b6.shape() == (1, 2);
        if !ok {
            return Err(FnrError::Contract(
                "classifier parameter shapes are inconsistent".into(),
            ));
        }
        Ok(())
    }
}

impl<T: Real> FnrParams<T> {
    /// Glorot-uniform weights and zero biases.
    pub fn init<R: Rng + ?Sized>(d_in: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        FnrParams {
            text: ProjectorParams::glorot(d_in, cfg.k, rng),
            image: ProjectorParams::glorot(d_in, cfg.k, rng),
            classifier: ClassifierParams::glorot(cfg.k, cfg.hidden, rng),
        }
    }

    pub fn zeros(d_in: usize, k: usize, hidden: usize) -> Self {
        FnrParams {
            text: ProjectorParams::zeros(d_in, k),
            image: ProjectorParams::zeros(d_in, k),
            classifier: ClassifierParams::zeros(k, hidden),
        }
    }

    pub fn d_in(&self) -> usize {
        self.text.d_in()
    }

    pub fn k(&self) -> usize {
        self.text.k()
    }

    pub fn hidden(&self) -> usize {
        self.classifier.w5.cols()
    }

    pub fn validate(&self) -> Result<()> {
        self.text.validate("text")?;
        self.image.validate("image")?;
        self.classifier.validate()?;
        if self.image.d_in() != self.d_in() || self.image.k() != self.k() {
            return Err(FnrError::Contract(
                "text and image projectors disagree on shape".into(),
            ));
        }
        if self.classifier.w5.rows() != 2 * self.k() {
            return Err(FnrError::Contract(
                "classifier input width must be 2k".into(),
            ));
        }
        if let Some((name, _)) = self.named().into_iter().find(|(_, t)| !t.all_finite()) {
            return Err(FnrError::Numeric(format!("parameter {name} is not finite")));
        }
        Ok(())
    }

    /// Tensors in [`PARAM_NAMES`] order.
    pub fn tensors(&self) -> [&Tensor2<T>; 12] {
        let (t, i, c) = (&self.text, &self.image, &self.classifier);
        [
            &t.w1, &t.b1, &t.w2, &t.b2, &i.w1, &i.b1, &i.w2, &i.b2, &c.w5, &c.b5, &c.w6, &c.b6,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor2<T>; 12] {
        let (t, i, c) = (&mut self.text, &mut self.image, &mut self.classifier);
        [
            &mut t.w1, &mut t.b1, &mut t.w2, &mut t.b2, &mut i.w1, &mut i.b1, &mut i.w2, &mut i.b2,
            &mut c.w5, &mut c.b5, &mut c.w6, &mut c.b6,
        ]
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor2<T>)> {
        PARAM_NAMES.into_iter().zip(self.tensors()).collect()
    }

    /// Rebuilds from tensors in [`PARAM_NAMES`] order.
    pub fn from_tensors(tensors: Vec<Tensor2<T>>) -> Result<Self> {
        let [tw1, tb1, tw2, tb2, iw1, ib1, iw2, ib2, w5, b5, w6, b6]: [Tensor2<T>; 12] =
            tensors.try_into().map_err(|v: Vec<_>| {
                FnrError::Contract(format!("expected 12 parameter tensors, got {}", v.len()))
            })?;
        let params = FnrParams {
            text: ProjectorParams {
                w1: tw1,
                b1: tb1,
                w2: tw2,
                b2: tb2,
            },
            image: ProjectorParams {
                w1: iw1,
                b1: ib1,
                w2: iw2,
                b2: ib2,
            },
            classifier: ClassifierParams { w5, b5, w6, b6 },
        };
        params.validate()?;
        Ok(params)
    }

    pub fn cast<U: Real>(&self) -> FnrParams<U> {
        FnrParams::from_tensors(self.tensors().into_iter().map(|t| t.cast()).collect())
            .expect("cast preserves shapes")
    }
}

#[derive(Clone, Copy, Debug)]
struct ProjectorNodes {
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
}

#[derive(Clone, Copy, Debug)]
struct ClassifierNodes {
    w5: NodeId,
    b5: NodeId,
    w6: NodeId,
    b6: NodeId,
}

/// Leaf ids of all parameters inside one forward graph.
#[derive(Clone, Copy, Debug)]
pub struct ParamNodes {
    text: ProjectorNodes,
    image: ProjectorNodes,
    classifier: ClassifierNodes,
}

impl ParamNodes {
    fn insert<T: Real>(g: &mut Graph<T>, p: &FnrParams<T>) -> Self {
        let mut proj = |q: &ProjectorParams<T>| ProjectorNodes {
            w1: g.parameter(q.w1.clone()),
            b1: g.parameter(q.b1.clone()),
            w2: g.parameter(q.w2.clone()),
            b2: g.parameter(q.b2.clone()),
        };
        let text = proj(&p.text);
        let image = proj(&p.image);
        let c = &p.classifier;
        let classifier = ClassifierNodes {
            w5: g.parameter(c.w5.clone()),
            b5: g.parameter(c.b5.clone()),
            w6: g.parameter(c.w6.clone()),
            b6: g.parameter(c.b6.clone()),
        };
        ParamNodes {
            text,
            image,
            classifier,
        }
    }

    fn ids(&self) -> [NodeId; 12] {
        let (t, i, c) = (&self.text, &self.image, &self.classifier);
        [
            t.w1, t.b1, t.w2, t.b2, i.w1, i.b1, i.w2, i.b2, c.w5, c.b5, c.w6, c.b6,
        ]
    }
}

fn projector_graph<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    p: &ProjectorNodes,
    x: NodeId,
    dropout_rate: f64,
    rng: &mut R,
) -> Result<NodeId> {
    let lin = g.matmul(x, p.w1)?;
    let branch = g.add_row(lin, p.b1)?;
    let act = g.gelu(branch)?;
    let act = g.dropout(act, dropout_rate, rng)?;
    let mixed = g.matmul(act, p.w2)?;
    let residual = g.add(mixed, branch)?;
    g.add_row(residual, p.b2)
}

fn classifier_graph<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    p: &ClassifierNodes,
    fused: NodeId,
    dropout_rate: f64,
    rng: &mut R,
) -> Result<NodeId> {
    let lin = g.matmul(fused, p.w5)?;
    let hidden = g.add_row(lin, p.b5)?;
    let act = g.gelu(hidden)?;
    let act = g.dropout(act, dropout_rate, rng)?;
    let logits = g.matmul(act, p.w6)?;
    let logits = g.add_row(logits, p.b6)?;
    g.softmax_rows(logits)
}

fn check_input<T: Real>(x: &Tensor2<T>, d_in: usize, what: &'static str) -> Result<()> {
    if x.cols() != d_in {
        return Err(FnrError::shape(what, x.shape(), (x.rows(), d_in)));
    }
    Ok(())
}

/// Applies one projector to a `b x d_in` batch.
pub fn project<T: Real, R: Rng + ?Sized>(
    p: &ProjectorParams<T>,
    x: &Tensor2<T>,
    dropout_rate: f64,
    dropout_on: bool,
    rng: &mut R,
) -> Result<Tensor2<T>> {
    p.validate("input")?;
    check_input(x, p.d_in(), "project")?;
    let mut g = Graph::new();
    let nodes = ProjectorNodes {
        w1: g.constant(p.w1.clone()),
        b1: g.constant(p.b1.clone()),
        w2: g.constant(p.w2.clone()),
        b2: g.constant(p.b2.clone()),
    };
    let xi = g.constant(x.clone());
    let rate = if dropout_on { dropout_rate } else { 0.0 };
    let out = projector_graph(&mut g, &nodes, xi, rate, rng)?;
    Ok(g.value(out).clone())
}

/// Class probabilities `[real, fake]` for concatenated features.
pub fn classify<T: Real, R: Rng + ?Sized>(
    f_text: &Tensor2<T>,
    f_image: &Tensor2<T>,
    p: &ClassifierParams<T>,
    dropout_rate: f64,
    dropout_on: bool,
    rng: &mut R,
) -> Result<Tensor2<T>> {
    p.validate()?;
    f_text.expect_same_shape(f_image, "classify")?;
    let mut g = Graph::new();
    let nodes = ClassifierNodes {
        w5: g.constant(p.w5.clone()),
        b5: g.constant(p.b5.clone()),
        w6: g.constant(p.w6.clone()),
        b6: g.constant(p.b6.clone()),
    };
    let ft = g.constant(f_text.clone());
    let fi = g.constant(f_image.clone());
    let fused = g.concat_cols(ft, fi)?;
    if g.value(fused).cols() != p.w5.rows() {
        return Err(FnrError::shape(
            "classify",
            g.value(fused).shape(),
            p.w5.shape(),
        ));
    }
    let rate = if dropout_on { dropout_rate } else { 0.0 };
    let out = classifier_graph(&mut g, &nodes, fused, rate, rng)?;
    Ok(g.value(out).clone())
}

/// Weighted categorical cross-entropy, mean over the batch.
pub fn classification_loss<T: Real>(
    probs: &Tensor2<T>,
    labels: &[usize],
    weights: ClassWeights,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(probs.clone());
    let l = g.weighted_nll(p, labels, &weights.as_vec::<T>())?;
    Ok(g.scalar(l).to_f64())
}

/// Per-step loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_t: f64,
    pub l_i: f64,
    pub l_s: f64,
    pub l_c: f64,
    pub total: f64,
    pub alpha: f64,
}

/// A recorded forward pass, kept so gradients can be pulled afterwards.
pub struct ForwardPass<T> {
    pub graph: Graph<T>,
    pub total: NodeId,
    pub probs: NodeId,
    pub text_features: Option<NodeId>,
    pub image_features: Option<NodeId>,
    pub breakdown: LossBreakdown,
    params: ParamNodes,
}

impl<T: Real> ForwardPass<T> {
    /// Gradient of the total loss, laid out like the parameters.
    pub fn gradients(&self) -> Result<FnrParams<T>> {
        let mut grads = self.graph.backward(self.total)?;
        let tensors = self
            .params
            .ids()
            .into_iter()
            .map(|id| {
                grads
                    .take(id)
                    .expect("parameter leaves always receive a gradient")
            })
            .collect();
        FnrParams::from_tensors(tensors)
    }

    pub fn probs(&self) -> &Tensor2<T> {
        self.graph.value(self.probs)
    }
}

/// Runs the head on one batch and records the full objective.
///
/// Dropout masks are drawn from `rng` in a fixed order (text projector, image
/// projector, classifier) and only for the parts the mode runs.
pub fn forward_pass<T: Real, R: Rng + ?Sized>(
    batch: &Batch<T>,
    params: &FnrParams<T>,
    cfg: &ModelConfig,
    weights: ClassWeights,
    dropout_on: bool,
    rng: &mut R,
) -> Result<ForwardPass<T>> {
    if batch.is_empty() {
        return Err(FnrError::Contract("empty batch".into()));
    }
    check_input(&batch.text, params.d_in(), "text embeddings")?;
    check_input(&batch.image, params.d_in(), "image embeddings")?;
    let rate = if dropout_on { cfg.dropout_rate } else { 0.0 };
    let b = batch.len();
    let k = params.k();

    let mut g = Graph::new();
    let nodes = ParamNodes::insert(&mut g, params);
    let text_features = if cfg.mode.uses_text() {
        let x = g.constant(batch.text.clone());
        Some(projector_graph(&mut g, &nodes.text, x, rate, rng)?)
    } else {
        None
    };
    let image_features = if cfg.mode.uses_image() {
        let x = g.constant(batch.image.clone());
        Some(projector_graph(&mut g, &nodes.image, x, rate, rng)?)
    } else {
        None
    };
    let ft = match text_features {
        Some(id) => id,
        None => g.constant(Tensor2::zeros(b, k)),
    };
    let fi = match image_features {
        Some(id) => id,
        None => g.constant(Tensor2::zeros(b, k)),
    };
    let fused = g.concat_cols(ft, fi)?;
    let probs = classifier_graph(&mut g, &nodes.classifier, fused, rate, rng)?;
    let l_c = g.weighted_nll(probs, &batch.labels, &weights.as_vec::<T>())?;

    let mut breakdown = LossBreakdown {
        l_c: g.scalar(l_c).to_f64(),
        alpha: weights.alpha(),
        ..LossBreakdown::default()
    };
    let total = if cfg.mode.uses_similarity() {
        let sim = contrastive_nodes(&mut g, ft, fi)?;
        breakdown.l_t = g.scalar(sim.l_text).to_f64();
        breakdown.l_i = g.scalar(sim.l_image).to_f64();
        breakdown.l_s = g.scalar(sim.l_sim).to_f64();
        let weighted = g.scale(sim.l_sim, T::from_f64(cfg.lambda))?;
        g.add(l_c, weighted)?
    } else {
        l_c
    };
    breakdown.total = g.scalar(total).to_f64();

    Ok(ForwardPass {
        graph: g,
        total,
        probs,
        text_features,
        image_features,
        breakdown,
        params: nodes,
    })
}

/// Loss values and class probabilities for one batch.
pub fn forward_loss<T: Real, R: Rng + ?Sized>(
    batch: &Batch<T>,
    params: &FnrParams<T>,
    cfg: &ModelConfig,
    weights: ClassWeights,
    dropout_on: bool,
    rng: &mut R,
) -> Result<(LossBreakdown, Tensor2<T>)> {
    let pass = forward_pass(batch, params, cfg, weights, dropout_on, rng)?;
    let probs = pass.probs().clone();
    Ok((pass.breakdown, probs))
}

/// Evaluation-mode probabilities without building the loss.
pub fn predict<T: Real>(
    params: &FnrParams<T>,
    mode: Mode,
    text: &Tensor2<T>,
    image: &Tensor2<T>,
) -> Result<Tensor2<T>> {
    check_input(text, params.d_in(), "text embeddings")?;
    check_input(image, params.d_in(), "image embeddings")?;
    let mut rng = NoRng;
    let b = text.rows();
    let k = params.k();
    let ft = if mode.uses_text() {
        project(&params.text, text, 0.0, false, &mut rng)?
    } else {
        Tensor2::zeros(b, k)
    };
    let fi = if mode.uses_image() {
        project(&params.image, image, 0.0, false, &mut rng)?
    } else {
        Tensor2::zeros(b, k)
    };
    classify(&ft, &fi, &params.classifier, 0.0, false, &mut rng)
}

/// RNG for paths that never draw (dropout disabled).
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("evaluation never samples")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("evaluation never samples")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("evaluation never samples")
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn identity_projector(n: usize) -> ProjectorParams<f64> {
        ProjectorParams {
            w1: Tensor2::identity(n),
            b1: Tensor2::zeros(1, n),
            w2: Tensor2::zeros(n, n),
            b2: Tensor2::zeros(1, n),
        }
    }

    #[test]
    fn residual_passthrough() {
        let x = Tensor2::from_rows(&[&[0.3, -2.0, 1.0], &[4.0, 0.5, -0.25]]);
        let out = project(&identity_projector(3), &x, 0.3, false, &mut rng()).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn zero_projector_outputs_zero() {
        let x = Tensor2::from_rows(&[&[0.3, -2.0], &[4.0, 0.5]]);
        let out = project(
            &ProjectorParams::<f64>::zeros(2, 5),
            &x,
            0.3,
            false,
            &mut rng(),
        )
        .unwrap();
        assert_eq!(out, Tensor2::zeros(2, 5));
    }

    #[test]
    fn identity_branch_adds_gelu() {
        let mut p = identity_projector(2);
        p.w2 = Tensor2::identity(2);
        let x = Tensor2::from_rows(&[&[1.0, -1.0]]);
        let out = project(&p, &x, 0.3, false, &mut rng()).unwrap();
        assert!((out.get(0, 0) - 1.841345).abs() < 1e-5);
        assert!((out.get(0, 1) + 1.158655).abs() < 1e-5);
    }

    #[test]
    fn project_rejects_wrong_width() {
        let x = Tensor2::<f64>::zeros(2, 4);
        let err = project(&identity_projector(3), &x, 0.0, false, &mut rng()).unwrap_err();
        assert!(matches!(err, FnrError::Shape { .. }));
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let ft: Tensor2<f64> = Tensor2::from_rows(&[&[1.0, 2.0], &[-3.0, 0.5], &[0.0, 0.0]]);
        let probs = classify(
            &ft,
            &ft,
            &ClassifierParams::zeros(2, 4),
            0.3,
            false,
            &mut rng(),
        )
        .unwrap();
        assert!(probs.data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn swapping_output_columns_swaps_probabilities() {
        let mut r = rng();
        let c = ClassifierParams::<f64>::glorot(3, 5, &mut r);
        let ft = Tensor2::from_fn(4, 3, |i, j| (i as f64 - j as f64) * 0.4);
        let fi = Tensor2::from_fn(4, 3, |i, j| (i * j) as f64 * 0.1 - 0.3);
        let mut swapped = c.clone();
        swapped.w6 = Tensor2::from_fn(5, 2, |r, col| c.w6.get(r, 1 - col));
        swapped.b6 = Tensor2::from_fn(1, 2, |_, col| c.b6.get(0, 1 - col));
        let a = classify(&ft, &fi, &c, 0.0, false, &mut r).unwrap();
        let b = classify(&ft, &fi, &swapped, 0.0, false, &mut r).unwrap();
        for i in 0..4 {
            assert_eq!(a.get(i, 0), b.get(i, 1));
            assert_eq!(a.get(i, 1), b.get(i, 0));
        }
    }

    #[test]
    fn weighted_loss_reference_values() {
        let w = ClassWeights::from_alpha(2.0, Label::Fake).unwrap();
        let probs = Tensor2::<f64>::filled(1, 2, 0.5);
        let l = classification_loss(&probs, &[1], w).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);

        let perfect = Tensor2::<f64>::from_rows(&[&[1.0 - 1e-7, 1e-7], &[1e-7, 1.0 - 1e-7]]);
        let l = classification_loss(&perfect, &[0, 1], w).unwrap();
        assert!(l < 3e-7, "{l}");
    }

    #[test]
    fn weighted_loss_rejects_out_of_range_label() {
        let probs = Tensor2::<f64>::filled(2, 2, 0.5);
        let err = classification_loss(&probs, &[0, 3], ClassWeights::uniform()).unwrap_err();
        assert!(matches!(err, FnrError::Data(_)));
    }

    #[test]
    fn alpha_below_one_is_rejected() {
        assert!(ClassWeights::from_alpha(0.5, Label::Real).is_err());
    }

    #[test]
    fn mode_parsing_round_trips() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("both".parse::<Mode>().is_err());
    }
}
