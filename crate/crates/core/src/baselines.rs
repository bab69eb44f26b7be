//! Non-contextual baselines over TF-IDF vectors: multinomial Naive Bayes and a
//! one-vs-rest linear SVM trained with Pegasos.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::ArtifactRef;
use crate::corpus::SentimentLabel;
use crate::error::{Error, Result};
use crate::features::{FeatureWeighting, SparseVector};

pub const MODEL_FORMAT_VERSION: u32 = 1;

const K: usize = SentimentLabel::COUNT;

/// Label with per-class scores. For NB the scores are normalized log posteriors,
/// for the SVM they are raw decision values.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: SentimentLabel,
    pub scores: [f64; K],
}

/// Argmax with ties going to the lowest label id.
fn argmax(scores: &[f64; K]) -> SentimentLabel {
    let mut best = 0;
    for c in 1..K {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    SentimentLabel::ALL[best]
}

fn check_training_set(
    x: &[SparseVector],
    y: &[SentimentLabel],
    num_features: usize,
) -> Result<[usize; K]> {
    if x.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature vectors but {} labels",
            x.len(),
            y.len()
        )));
    }
    let mut counts = [0usize; K];
    for l in y {
        counts[l.id()] += 1;
    }
    let present = counts.iter().filter(|&&n| n > 0).count();
    if present < 2 {
        return Err(Error::InvalidInput(format!(
            "training set has {present} distinct label(s); at least 2 are required"
        )));
    }
    for (i, v) in x.iter().enumerate() {
        if v.dim_hint() > num_features {
            return Err(Error::InvalidInput(format!(
                "vector {i} has feature id {} outside the {num_features}-feature space",
                v.dim_hint() - 1
            )));
        }
        if let Some(&(id, w)) = v.entries().iter().find(|(_, w)| !w.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "vector {i} has non-finite weight {w} at feature {id}"
            )));
        }
    }
    Ok(counts)
}

// ---------------------------------------------------------------------------
// Naive Bayes

/// Multinomial Naive Bayes with additive smoothing. Feature weights act as
/// fractional counts.
///
/// A label absent from the training data gets prior `-inf` and a uniform
/// likelihood, so it is never predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NbFile", try_from = "NbFile")]
pub struct NaiveBayesModel {
    pub alpha: f64,
    pub class_log_prior: [f64; K],
    pub feature_log_likelihood: [Vec<f64>; K],
}

#[derive(Serialize, Deserialize)]
struct NbFile {
    alpha: f64,
    num_features: usize,
    /// `null` encodes a log prior of `-inf`.
    class_log_prior: [Option<f64>; K],
    feature_log_likelihood: [Vec<f64>; K],
}

impl From<NaiveBayesModel> for NbFile {
    fn from(m: NaiveBayesModel) -> Self {
        NbFile {
            alpha: m.alpha,
            num_features: m.num_features(),
            class_log_prior: m.class_log_prior.map(|p| p.is_finite().then_some(p)),
            feature_log_likelihood: m.feature_log_likelihood,
        }
    }
}

impl TryFrom<NbFile> for NaiveBayesModel {
    type Error = Error;

    fn try_from(f: NbFile) -> Result<Self> {
        let m = NaiveBayesModel {
            alpha: f.alpha,
            class_log_prior: f.class_log_prior.map(|p| p.unwrap_or(f64::NEG_INFINITY)),
            feature_log_likelihood: f.feature_log_likelihood,
        };
        if m.num_features() != f.num_features {
            return Err(Error::InvalidInput(format!(
                "num_features is {} but likelihood rows have {} entries",
                f.num_features,
                m.num_features()
            )));
        }
        m.validate()?;
        Ok(m)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl NaiveBayesModel {
    pub fn num_features(&self) -> usize {
        self.feature_log_likelihood[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("naive bayes model: {msg}")));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        let t = self.num_features();
        if t == 0 || self.feature_log_likelihood.iter().any(|row| row.len() != t) {
            return bad("likelihood rows must be non-empty and equally sized".into());
        }
        if self
            .class_log_prior
            .iter()
            .any(|p| p.is_nan() || *p == f64::INFINITY)
        {
            return bad("class log prior must be finite or -inf".into());
        }
        let prior_mass = log_sum_exp(self.class_log_prior.iter().copied()).exp();
        if (prior_mass - 1.0).abs() > 1e-9 {
            return bad(format!("priors sum to {prior_mass}"));
        }
        for (c, row) in self.feature_log_likelihood.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return bad(format!("non-finite likelihood for label {c}"));
            }
            let mass = log_sum_exp(row.iter().copied()).exp();
            if (mass - 1.0).abs() > 1e-9 {
                return bad(format!("likelihoods for label {c} sum to {mass}"));
            }
        }
        Ok(())
    }

    /// Unnormalized joint log scores. Feature ids outside the model are ignored.
    pub fn joint_log_scores(&self, x: &SparseVector) -> [f64; K] {
        let t = self.num_features();
        std::array::from_fn(|c| {
            let prior = self.class_log_prior[c];
            if prior == f64::NEG_INFINITY {
                return prior;
            }
            let row = &self.feature_log_likelihood[c];
            prior
                + x.entries()
                    .iter()
                    .filter(|&&(id, _)| (id as usize) < t)
                    .map(|&(id, w)| w * row[id as usize])
                    .sum::<f64>()
        })
    }
}

pub fn nb_train(
    x: &[SparseVector],
    y: &[SentimentLabel],
    num_features: usize,
    alpha: f64,
) -> Result<NaiveBayesModel> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if num_features == 0 {
        return Err(Error::InvalidInput("feature space is empty".into()));
    }
    let counts = check_training_set(x, y, num_features)?;
    let mut mass = [
        vec![0.0; num_features],
        vec![0.0; num_features],
        vec![0.0; num_features],
    ];
    for (v, l) in x.iter().zip(y) {
        let row = &mut mass[l.id()];
        for &(id, w) in v.entries() {
            if w < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "negative feature weight {w} at feature {id}"
                )));
            }
            row[id as usize] += w;
        }
    }
    let n = x.len() as f64;
    let class_log_prior = counts.map(|k| {
        if k == 0 {
            f64::NEG_INFINITY
        } else {
            (k as f64 / n).ln()
        }
    });
    let denom_extra = alpha * num_features as f64;
    let feature_log_likelihood = mass.map(|row| {
        let ln_denom = (row.iter().sum::<f64>() + denom_extra).ln();
        row.into_iter()
            .map(|m| (m + alpha).ln() - ln_denom)
            .collect()
    });
    let model = NaiveBayesModel {
        alpha,
        class_log_prior,
        feature_log_likelihood,
    };
    model.validate()?;
    Ok(model)
}

/// Returns the argmax label and log posteriors normalized with log-sum-exp.
pub fn nb_predict(m: &NaiveBayesModel, x: &SparseVector) -> Prediction {
    let joint = m.joint_log_scores(x);
    let label = argmax(&joint);
    let z = log_sum_exp(joint.iter().copied());
    Prediction {
        label,
        scores: joint.map(|s| s - z),
    }
}

// ---------------------------------------------------------------------------
// Linear SVM

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmHyper {
    pub lambda: f64,
    pub epochs: u32,
    pub seed: u64,
    /// Project onto the ball of radius `1/sqrt(lambda)` after each step.
    pub project: bool,
}

impl Default for SvmHyper {
    fn default() -> Self {
        SvmHyper {
            lambda: 1e-4,
            epochs: 20,
            seed: 42,
            project: false,
        }
    }
}

impl SvmHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// One-vs-rest linear SVM: `score(c) = w_c · x + b_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub hyper: SvmHyper,
    pub weights: [Vec<f64>; K],
    pub bias: [f64; K],
}

impl LinearSvmModel {
    pub fn num_features(&self) -> usize {
        self.weights[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.num_features();
        if self.weights.iter().any(|w| w.len() != t) {
            return Err(Error::InvalidInput(
                "svm weight vectors differ in length".into(),
            ));
        }
        let finite = self
            .weights
            .iter()
            .flatten()
            .chain(&self.bias)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput(
                "svm model has non-finite parameters".into(),
            ));
        }
        self.hyper.validate()
    }

    pub fn decision_values(&self, x: &SparseVector) -> [f64; K] {
        std::array::from_fn(|c| sparse_dense_dot(x, &self.weights[c]) + self.bias[c])
    }
}

fn sparse_dense_dot(x: &SparseVector, w: &[f64]) -> f64 {
    x.entries()
        .iter()
        .filter(|&&(id, _)| (id as usize) < w.len())
        .map(|&(id, v)| v * w[id as usize])
        .sum()
}

/// Binary Pegasos state with `w = scale * v`, so the shrink step is O(1).
struct Pegasos {
    v: Vec<f64>,
    scale: f64,
    v_norm2: f64,
    bias: f64,
}

impl Pegasos {
    fn new(dim: usize) -> Self {
        Pegasos {
            v: vec![0.0; dim],
            scale: 1.0,
            v_norm2: 0.0,
            bias: 0.0,
        }
    }

    fn step(&mut self, x: &SparseVector, x_norm2: f64, target: f64, t: u64, hyper: &SvmHyper) {
        let eta = 1.0 / (hyper.lambda * t as f64);
        let vx = sparse_dense_dot(x, &self.v);
        let margin = target * (self.scale * vx + self.bias);

        let shrink = 1.0 - eta * hyper.lambda;
        if shrink <= 0.0 {
            self.v.iter_mut().for_each(|v| *v = 0.0);
            self.scale = 1.0;
            self.v_norm2 = 0.0;
        } else {
            self.scale *= shrink;
        }

        if margin < 1.0 {
            let c = eta * target / self.scale;
            let vx = if shrink <= 0.0 { 0.0 } else { vx };
            for &(id, w) in x.entries() {
                self.v[id as usize] += c * w;
            }
            self.v_norm2 += 2.0 * c * vx + c * c * x_norm2;
            // The bias is not shrunk. A step of eta·lambda = 1/t keeps it on the
            // same scale as `w`; the full 1/(lambda·t) step makes the first
            // update (±1/lambda) dominate for thousands of steps.
            self.bias += target / t as f64;
        }

        if hyper.project {
            let norm = self.scale * self.v_norm2.max(0.0).sqrt();
            let radius = 1.0 / hyper.lambda.sqrt();
            if norm > radius {
                self.scale *= radius / norm;
            }
        }
        if self.scale < 1e-9 {
            self.renormalize();
        }
    }

    fn renormalize(&mut self) {
        let s = self.scale;
        self.v.iter_mut().for_each(|v| *v *= s);
        self.v_norm2 = self.v.iter().map(|v| v * v).sum();
        self.scale = 1.0;
    }

    fn is_finite(&self) -> bool {
        self.scale.is_finite() && self.v_norm2.is_finite() && self.bias.is_finite()
    }

    fn into_weights(mut self) -> (Vec<f64>, f64) {
        self.renormalize();
        (self.v, self.bias)
    }
}

/// Trains one binary Pegasos classifier per label over a shared, seeded
/// per-epoch shuffle. The step counter runs across epochs; `w` uses the rate
/// `1/(lambda·t)` and the unregularized bias the rate `1/t`.
pub fn svm_train(
    x: &[SparseVector],
    y: &[SentimentLabel],
    num_features: usize,
    hyper: &SvmHyper,
) -> Result<LinearSvmModel> {
    hyper.validate()?;
    if num_features == 0 {
        return Err(Error::InvalidInput("feature space is empty".into()));
    }
    check_training_set(x, y, num_features)?;
    let norms: Vec<f64> = x
        .iter()
        .map(|v| v.entries().iter().map(|(_, w)| w * w).sum())
        .collect();
    let mut machines: [Pegasos; K] = std::array::from_fn(|_| Pegasos::new(num_features));
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut t = 0u64;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            for (c, m) in machines.iter_mut().enumerate() {
                let target = if y[i].id() == c { 1.0 } else { -1.0 };
                m.step(&x[i], norms[i], target, t, hyper);
            }
        }
        if let Some(c) = machines.iter().position(|m| !m.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite svm weights for label {} after epoch {}",
                SentimentLabel::ALL[c],
                epoch + 1
            )));
        }
    }
    let mut weights: [Vec<f64>; K] = Default::default();
    let mut bias = [0.0; K];
    for (c, m) in machines.into_iter().enumerate() {
        (weights[c], bias[c]) = m.into_weights();
    }
    let model = LinearSvmModel {
        hyper: hyper.clone(),
        weights,
        bias,
    };
    model
        .validate()
        .map_err(|e| Error::Divergence(e.to_string()))?;
    Ok(model)
}

pub fn svm_predict(m: &LinearSvmModel, x: &SparseVector) -> Prediction {
    let scores = m.decision_values(x);
    Prediction {
        label: argmax(&scores),
        scores,
    }
}

// ---------------------------------------------------------------------------
// Model files

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Nb,
    Svm,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Nb => "nb",
            BaselineKind::Svm => "svm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineModel {
    NaiveBayes(NaiveBayesModel),
    LinearSvm(LinearSvmModel),
}

impl BaselineModel {
    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselineModel::NaiveBayes(_) => BaselineKind::Nb,
            BaselineModel::LinearSvm(_) => BaselineKind::Svm,
        }
    }

    pub fn num_features(&self) -> usize {
        match self {
            BaselineModel::NaiveBayes(m) => m.num_features(),
            BaselineModel::LinearSvm(m) => m.num_features(),
        }
    }

    pub fn predict(&self, x: &SparseVector) -> Prediction {
        match self {
            BaselineModel::NaiveBayes(m) => nb_predict(m, x),
            BaselineModel::LinearSvm(m) => svm_predict(m, x),
        }
    }
}

/// On-disk form of a baseline: the model plus the term index it was trained
/// against and the feature weighting to apply at prediction time.
///
/// JSON layout: `{format_version, model_type, term_index_ref, feature_weighting,
/// parameters}` with parameter arrays in feature-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFile {
    pub model: BaselineModel,
    pub term_index_ref: ArtifactRef,
    pub weighting: FeatureWeighting,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    model_type: BaselineKind,
    term_index_ref: ArtifactRef,
    #[serde(default)]
    feature_weighting: FeatureWeighting,
    parameters: serde_json::Value,
}

impl BaselineFile {
    pub fn to_json(&self) -> Result<String> {
        let parameters = match &self.model {
            BaselineModel::NaiveBayes(m) => serde_json::to_value(m)?,
            BaselineModel::LinearSvm(m) => serde_json::to_value(m)?,
        };
        Ok(serde_json::to_string(&Envelope {
            format_version: MODEL_FORMAT_VERSION,
            model_type: self.model.kind(),
            term_index_ref: self.term_index_ref.clone(),
            feature_weighting: self.weighting,
            parameters,
        })?)
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(raw)?;
        if env.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model format version {}",
                env.format_version
            )));
        }
        let model = match env.model_type {
            BaselineKind::Nb => BaselineModel::NaiveBayes(serde_json::from_value(env.parameters)?),
            BaselineKind::Svm => {
                let m: LinearSvmModel = serde_json::from_value(env.parameters)?;
                m.validate()?;
                BaselineModel::LinearSvm(m)
            }
        };
        Ok(BaselineFile {
            model,
            term_index_ref: env.term_index_ref,
            weighting: env.feature_weighting,
        })
    }
}
