//! Built-in trainable stand-in classifier: a single-hidden-layer perceptron
//! with a softmax head over a fixed embedding of the item sequence.
//!
//! Trained by full-batch gradient descent with momentum; gradients are
//! derived by hand (see `loss_and_grad`).

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Backend, ClassifierError};
use crate::instances::{LabeledInstance, SizeBounds};
use crate::packing::Solver;

/// Summary features appended after the per-item block.
const N_SUMMARY: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            hidden_dim: 32,
            epochs: 1500,
            learning_rate: 0.5,
            momentum: 0.9,
            l2: 0.0,
            seed: 0,
        }
    }
}

/// Frozen surrogate parameters. Output index 0 is best-fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub n_items: usize,
    pub bounds: SizeBounds,
    pub capacity: u32,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub hidden_dim: usize,
    /// `hidden_dim × n_features`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `2 × hidden_dim`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedSurrogate {
    pub model: SurrogateModel,
    pub training_accuracy: f64,
    pub final_loss: f64,
}

fn n_features(n_items: usize) -> usize {
    n_items + N_SUMMARY
}

/// Raw (unstandardised) embedding: normalised sizes padded or truncated to
/// `n_items`, then prefix-sum fractions at each quarter and the share of
/// items larger than half a bin.
pub(crate) fn embed(items: &[u32], n_items: usize, bounds: SizeBounds, capacity: u32, out: &mut Vec<f64>) {
    out.clear();
    let span = (bounds.max_size - bounds.min_size) as f64;
    out.extend(
        items
            .iter()
            .take(n_items)
            .map(|&s| (s as f64 - bounds.min_size as f64) / span),
    );
    out.resize(n_items, 0.0);
    let len = items.len();
    let mut prefix = 0u64;
    let mut marks = [len / 4, len / 2, 3 * len / 4, len];
    for m in &mut marks {
        *m = (*m).max(1).min(len);
    }
    let mut next = 0;
    let mut sums = [0.0; 4];
    for (i, &s) in items.iter().enumerate() {
        prefix += s as u64;
        while next < 4 && i + 1 == marks[next] {
            sums[next] = prefix as f64 / (marks[next] as f64 * bounds.max_size as f64);
            next += 1;
        }
    }
    out.extend_from_slice(&sums);
    let large = items.iter().filter(|&&s| 2 * s > capacity).count();
    out.push(if len == 0 { 0.0 } else { large as f64 / len as f64 });
}

/// Trainable parameters, laid out as one flat vector for the optimiser.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Params {
    pub hidden: usize,
    pub features: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Params {
    pub(crate) fn init(hidden: usize, features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std1 = (1.0 / features as f64).sqrt();
        let std2 = (1.0 / hidden as f64).sqrt();
        let n1 = Normal::new(0.0, std1).expect("valid std");
        let n2 = Normal::new(0.0, std2).expect("valid std");
        Params {
            hidden,
            features,
            w1: (0..hidden * features).map(|_| n1.sample(&mut rng)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..2 * hidden).map(|_| n2.sample(&mut rng)).collect(),
            b2: vec![0.0; 2],
        }
    }

    fn zeros_like(&self) -> Self {
        Params {
            hidden: self.hidden,
            features: self.features,
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub(crate) fn slices(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    /// Hidden activations and `p_bf` for one standardised feature vector.
    fn forward(&self, x: &[f64], hidden_out: &mut [f64]) -> f64 {
        let f = self.features;
        for (j, h) in hidden_out.iter_mut().enumerate() {
            let row = &self.w1[j * f..(j + 1) * f];
            let a: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[j];
            *h = a.tanh();
        }
        let k = self.hidden;
        let l0: f64 = self.w2[..k].iter().zip(hidden_out.iter()).map(|(w, h)| w * h).sum::<f64>() + self.b2[0];
        let l1: f64 = self.w2[k..].iter().zip(hidden_out.iter()).map(|(w, h)| w * h).sum::<f64>() + self.b2[1];
        1.0 / (1.0 + (l1 - l0).exp())
    }
}

/// Mean cross-entropy plus `l2/2 · ‖W‖²` over `(xs, labels)` and its gradient.
/// `labels[i]` is 0 for best-fit and 1 for first-fit.
pub(crate) fn loss_and_grad(params: &Params, xs: &[Vec<f64>], labels: &[usize], l2: f64) -> (f64, Params) {
    let n = xs.len() as f64;
    let k = params.hidden;
    let f = params.features;
    let mut grad = params.zeros_like();
    let mut hidden = vec![0.0; k];
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(labels) {
        let p_bf = params.forward(x, &mut hidden);
        let p = [p_bf, 1.0 - p_bf];
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        // d(loss)/d(logit_c) = p_c - 1[c == y]
        let dl = [(p[0] - if y == 0 { 1.0 } else { 0.0 }) / n, (p[1] - if y == 1 { 1.0 } else { 0.0 }) / n];
        for c in 0..2 {
            grad.b2[c] += dl[c];
            for j in 0..k {
                grad.w2[c * k + j] += dl[c] * hidden[j];
            }
        }
        for j in 0..k {
            let dh = dl[0] * params.w2[j] + dl[1] * params.w2[k + j];
            let da = dh * (1.0 - hidden[j] * hidden[j]);
            grad.b1[j] += da;
            let row = &mut grad.w1[j * f..(j + 1) * f];
            for (g, v) in row.iter_mut().zip(x) {
                *g += da * v;
            }
        }
    }
    loss /= n;
    if l2 > 0.0 {
        let sq: f64 = params.w1.iter().chain(&params.w2).map(|w| w * w).sum();
        loss += 0.5 * l2 * sq;
        for (g, w) in grad.w1.iter_mut().zip(&params.w1) {
            *g += l2 * w;
        }
        for (g, w) in grad.w2.iter_mut().zip(&params.w2) {
            *g += l2 * w;
        }
    }
    (loss, grad)
}

fn label_index(s: Solver) -> usize {
    match s {
        Solver::BestFit => 0,
        Solver::FirstFit => 1,
    }
}

/// Fits the surrogate on `dataset`. Deterministic for a given `config.seed`.
pub fn train_surrogate(
    dataset: &[LabeledInstance],
    bounds: SizeBounds,
    capacity: u32,
    config: &SurrogateConfig,
) -> Result<TrainedSurrogate, ClassifierError> {
    if dataset.is_empty() {
        return Err(ClassifierError::DegenerateDataset("empty dataset".into()));
    }
    let labels: Vec<usize> = dataset.iter().map(|li| label_index(li.winner)).collect();
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(ClassifierError::DegenerateDataset(format!(
            "only {} winners present",
            dataset[0].winner
        )));
    }
    if config.hidden_dim == 0 {
        return Err(ClassifierError::Schema {
            field: "hidden_dim".into(),
            message: "must be positive".into(),
        });
    }
    let n_items = dataset.iter().map(|li| li.items().len()).max().unwrap_or(0);
    let nf = n_features(n_items);

    let mut raw: Vec<Vec<f64>> = Vec::with_capacity(dataset.len());
    for li in dataset {
        let mut v = Vec::with_capacity(nf);
        embed(li.items(), n_items, bounds, capacity, &mut v);
        raw.push(v);
    }
    let count = raw.len() as f64;
    let mean: Vec<f64> = (0..nf).map(|j| raw.iter().map(|v| v[j]).sum::<f64>() / count).collect();
    let std: Vec<f64> = (0..nf)
        .map(|j| {
            let var = raw.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / count;
            if var > 1e-12 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for v in &mut raw {
        for j in 0..nf {
            v[j] = (v[j] - mean[j]) / std[j];
        }
    }

    let mut params = Params::init(config.hidden_dim, nf, config.seed);
    let mut velocity = params.zeros_like();
    let mut loss = f64::NAN;
    for _ in 0..config.epochs {
        let (l, grad) = loss_and_grad(&params, &raw, &labels, config.l2);
        loss = l;
        for ((p, v), g) in params
            .slices_mut()
            .into_iter()
            .zip(velocity.slices_mut())
            .zip(grad.slices())
        {
            for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *vi = config.momentum * *vi - config.learning_rate * gi;
                *pi += *vi;
            }
        }
    }
    if config.epochs > 0 {
        loss = loss_and_grad(&params, &raw, &labels, config.l2).0;
    }

    let mut hidden = vec![0.0; params.hidden];
    let correct = raw
        .iter()
        .zip(&labels)
        .filter(|(x, &y)| {
            let p_bf = params.forward(x, &mut hidden);
            (if p_bf > 0.5 { 0 } else { 1 }) == y
        })
        .count();

    let model = SurrogateModel {
        n_items,
        bounds,
        capacity,
        feature_mean: mean,
        feature_std: std,
        hidden_dim: params.hidden,
        w1: params.w1,
        b1: params.b1,
        w2: params.w2,
        b2: params.b2,
    };
    Ok(TrainedSurrogate {
        model,
        training_accuracy: correct as f64 / count,
        final_loss: loss,
    })
}

impl SurrogateModel {
    fn params_view(&self) -> Params {
        Params {
            hidden: self.hidden_dim,
            features: self.feature_mean.len(),
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let nf = n_features(self.n_items);
        let bad = |field: &str, message: String| {
            Err(ClassifierError::Schema {
                field: field.into(),
                message,
            })
        };
        if self.hidden_dim == 0 {
            return bad("hidden_dim", "must be positive".into());
        }
        if self.bounds.min_size >= self.bounds.max_size {
            return bad("bounds", "min_size must be below max_size".into());
        }
        for (field, len, want) in [
            ("feature_mean", self.feature_mean.len(), nf),
            ("feature_std", self.feature_std.len(), nf),
            ("w1", self.w1.len(), self.hidden_dim * nf),
            ("b1", self.b1.len(), self.hidden_dim),
            ("w2", self.w2.len(), 2 * self.hidden_dim),
            ("b2", self.b2.len(), 2),
        ] {
            if len != want {
                return bad(field, format!("expected length {want}, got {len}"));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        let text = fs::read_to_string(path)?;
        let model: SurrogateModel = serde_json::from_str(&text).map_err(|e| ClassifierError::Schema {
            field: "<document>".into(),
            message: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        fs::write(path, serde_json::to_string(self).expect("surrogate serializes"))?;
        Ok(())
    }

    pub fn into_backend(self) -> Result<SurrogateBackend, ClassifierError> {
        self.validate()?;
        let params = self.params_view();
        Ok(SurrogateBackend { model: self, params })
    }
}

/// Immutable inference wrapper around a [`SurrogateModel`].
#[derive(Debug, Clone)]
pub struct SurrogateBackend {
    model: SurrogateModel,
    params: Params,
}

impl Backend for SurrogateBackend {
    fn p_bf(&self, items: &[u32]) -> Result<f64, ClassifierError> {
        let m = &self.model;
        let mut x = Vec::with_capacity(m.feature_mean.len());
        embed(items, m.n_items, m.bounds, m.capacity, &mut x);
        for ((v, mu), sd) in x.iter_mut().zip(&m.feature_mean).zip(&m.feature_std) {
            *v = (*v - mu) / sd;
        }
        let mut hidden = vec![0.0; m.hidden_dim];
        Ok(self.params.forward(&x, &mut hidden))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::Instance;
    use crate::packing::Solver;

    fn toy_dataset() -> Vec<LabeledInstance> {
        // Small-item instances labelled BF, large-item instances labelled FF.
        // The labels are constructed, not computed by the portfolio.
        let mut out = Vec::new();
        for i in 0..20u32 {
            let small: Vec<u32> = (0..10).map(|j| 20 + (i + j) % 15).collect();
            let large: Vec<u32> = (0..10).map(|j| 85 + (i * 3 + j) % 16).collect();
            out.push(LabeledInstance {
                instance: Instance::new(format!("s{i}"), small),
                o_bf: 0.9,
                o_ff: 0.8,
                winner: Solver::BestFit,
            });
            out.push(LabeledInstance {
                instance: Instance::new(format!("l{i}"), large),
                o_bf: 0.8,
                o_ff: 0.9,
                winner: Solver::FirstFit,
            });
        }
        out
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let ds = toy_dataset();
        // Separability witness: mean item size alone splits the classes.
        let mean = |li: &LabeledInstance| li.items().iter().sum::<u32>() as f64 / li.items().len() as f64;
        let max_small = ds.iter().filter(|l| l.winner == Solver::BestFit).map(mean).fold(0.0, f64::max);
        let min_large = ds.iter().filter(|l| l.winner == Solver::FirstFit).map(mean).fold(f64::MAX, f64::min);
        assert!(max_small < min_large);

        let cfg = SurrogateConfig { hidden_dim: 4, epochs: 200, ..Default::default() };
        let trained = train_surrogate(&ds, SizeBounds::DEFAULT, 150, &cfg).unwrap();
        assert_eq!(trained.training_accuracy, 1.0);
    }

    #[test]
    fn single_class_is_degenerate() {
        let ds: Vec<_> = toy_dataset().into_iter().filter(|l| l.winner == Solver::BestFit).collect();
        assert!(matches!(
            train_surrogate(&ds, SizeBounds::DEFAULT, 150, &SurrogateConfig::default()),
            Err(ClassifierError::DegenerateDataset(_))
        ));
        assert!(matches!(
            train_surrogate(&[], SizeBounds::DEFAULT, 150, &SurrogateConfig::default()),
            Err(ClassifierError::DegenerateDataset(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = toy_dataset();
        let cfg = SurrogateConfig { hidden_dim: 3, epochs: 30, seed: 9, ..Default::default() };
        let a = train_surrogate(&ds, SizeBounds::DEFAULT, 150, &cfg).unwrap();
        let b = train_surrogate(&ds, SizeBounds::DEFAULT, 150, &cfg).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let features = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<Vec<f64>> = (0..7).map(|_| (0..features).map(|_| normal.sample(&mut rng)).collect()).collect();
        let labels = vec![0, 1, 1, 0, 1, 0, 0];
        let mut params = Params::init(4, features, 11);
        params.b1.iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64);
        params.b2 = vec![0.2, -0.3];
        let l2 = 0.01;
        let (_, grad) = loss_and_grad(&params, &xs, &labels, l2);

        let eps = 1e-6;
        for block in 0..4 {
            for i in 0..params.slices()[block].len() {
                let mut plus = params.clone();
                plus.slices_mut()[block][i] += eps;
                let mut minus = params.clone();
                minus.slices_mut()[block][i] -= eps;
                let numeric = (loss_and_grad(&plus, &xs, &labels, l2).0 - loss_and_grad(&minus, &xs, &labels, l2).0)
                    / (2.0 * eps);
                let analytic = grad.slices()[block][i];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(rel < 1e-5, "block {block} index {i}: analytic {analytic} numeric {numeric}");
            }
        }
    }

    #[test]
    fn backend_probabilities_are_valid() {
        let ds = toy_dataset();
        let cfg = SurrogateConfig { hidden_dim: 3, epochs: 50, ..Default::default() };
        let backend = train_surrogate(&ds, SizeBounds::DEFAULT, 150, &cfg).unwrap().model.into_backend().unwrap();
        for li in &ds {
            let p = backend.p_bf(li.items()).unwrap();
            assert!(p.is_finite() && (0.0..=1.0).contains(&p));
        }
        // Shorter inputs are zero-padded.
        assert!(backend.p_bf(&[50, 60]).is_ok());
    }

    #[test]
    fn embedding_shape() {
        let mut v = Vec::new();
        embed(&[20, 100, 60, 80], 6, SizeBounds::DEFAULT, 150, &mut v);
        assert_eq!(v.len(), 6 + N_SUMMARY);
        assert_eq!(&v[..6], &[0.0, 1.0, 0.5, 0.75, 0.0, 0.0]);
        // prefix sums at 1, 2, 3, 4 items over k * 100
        assert_eq!(&v[6..10], &[0.2, 0.6, 180.0 / 300.0, 260.0 / 400.0]);
        assert_eq!(v[10], 0.5);
    }
}
