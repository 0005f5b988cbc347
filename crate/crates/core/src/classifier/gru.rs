//! Native single-layer GRU forward pass with a two-logit softmax head.
//!
//! Logit 0 is best-fit, logit 1 is first-fit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, ClassifierError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
}

/// GRU cell and softmax-head parameters. Matrices are row-major nested vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentWeights {
    pub hidden_dim: usize,
    pub norm: Normalization,
    #[serde(rename = "W_z")]
    pub w_z: Vec<Vec<f64>>,
    #[serde(rename = "U_z")]
    pub u_z: Vec<Vec<f64>>,
    pub b_z: Vec<f64>,
    #[serde(rename = "W_r")]
    pub w_r: Vec<Vec<f64>>,
    #[serde(rename = "U_r")]
    pub u_r: Vec<Vec<f64>>,
    pub b_r: Vec<f64>,
    #[serde(rename = "W_h")]
    pub w_h: Vec<Vec<f64>>,
    #[serde(rename = "U_h")]
    pub u_h: Vec<Vec<f64>>,
    pub b_h: Vec<f64>,
    #[serde(rename = "W_out")]
    pub w_out: Vec<Vec<f64>>,
    pub b_out: Vec<f64>,
}

fn schema(field: &str, message: impl Into<String>) -> ClassifierError {
    ClassifierError::Schema {
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_matrix(field: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<(), ClassifierError> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        let got_cols = m.first().map_or(0, Vec::len);
        return Err(schema(
            field,
            format!("expected shape ({rows}, {cols}), got ({}, {got_cols})", m.len()),
        ));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(schema(field, "non-finite entry"));
    }
    Ok(())
}

fn check_vector(field: &str, v: &[f64], len: usize) -> Result<(), ClassifierError> {
    if v.len() != len {
        return Err(schema(field, format!("expected length {len}, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(schema(field, "non-finite entry"));
    }
    Ok(())
}

impl RecurrentWeights {
    /// All-zero weights of the given size with the given normalisation.
    pub fn zeros(hidden_dim: usize, norm: Normalization) -> Self {
        let col = |rows: usize, cols: usize| vec![vec![0.0; cols]; rows];
        RecurrentWeights {
            hidden_dim,
            norm,
            w_z: col(hidden_dim, 1),
            u_z: col(hidden_dim, hidden_dim),
            b_z: vec![0.0; hidden_dim],
            w_r: col(hidden_dim, 1),
            u_r: col(hidden_dim, hidden_dim),
            b_r: vec![0.0; hidden_dim],
            w_h: col(hidden_dim, 1),
            u_h: col(hidden_dim, hidden_dim),
            b_h: vec![0.0; hidden_dim],
            w_out: col(2, hidden_dim),
            b_out: vec![0.0; 2],
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let h = self.hidden_dim;
        if h == 0 {
            return Err(schema("hidden_dim", "must be positive"));
        }
        if !self.norm.offset.is_finite() {
            return Err(schema("norm", "offset must be finite"));
        }
        if !self.norm.scale.is_finite() || self.norm.scale == 0.0 {
            return Err(schema("norm", "scale must be finite and non-zero"));
        }
        check_matrix("W_z", &self.w_z, h, 1)?;
        check_matrix("U_z", &self.u_z, h, h)?;
        check_vector("b_z", &self.b_z, h)?;
        check_matrix("W_r", &self.w_r, h, 1)?;
        check_matrix("U_r", &self.u_r, h, h)?;
        check_vector("b_r", &self.b_r, h)?;
        check_matrix("W_h", &self.w_h, h, 1)?;
        check_matrix("U_h", &self.u_h, h, h)?;
        check_vector("b_h", &self.b_h, h)?;
        check_matrix("W_out", &self.w_out, 2, h)?;
        check_vector("b_out", &self.b_out, 2)?;
        Ok(())
    }

    /// Parses and validates a weights document, naming the offending field on error.
    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let value: Value = serde_json::from_str(text).map_err(|e| schema("<document>", e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| schema("<document>", "expected a JSON object"))?;
        for field in [
            "hidden_dim", "norm", "W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h", "W_out", "b_out",
        ] {
            let entry = obj.get(field).ok_or_else(|| schema(field, "missing"))?;
            // Deserialize each field on its own so type errors carry its name.
            let ok = match field {
                "hidden_dim" => serde_json::from_value::<usize>(entry.clone()).is_ok(),
                "norm" => serde_json::from_value::<Normalization>(entry.clone()).is_ok(),
                f if f.starts_with('b') => serde_json::from_value::<Vec<f64>>(entry.clone()).is_ok(),
                _ => serde_json::from_value::<Vec<Vec<f64>>>(entry.clone()).is_ok(),
            };
            if !ok {
                return Err(schema(field, "wrong JSON type"));
            }
        }
        let weights: RecurrentWeights =
            serde_json::from_value(value).map_err(|e| schema("<document>", e.to_string()))?;
        weights.validate()?;
        Ok(weights)
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<RecurrentWeights, ClassifierError> {
    RecurrentWeights::from_json(&fs::read_to_string(path)?)
}

pub fn save_weights(weights: &RecurrentWeights, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
    weights.validate()?;
    let text = serde_json::to_string(weights).expect("weights serialize");
    fs::write(path, text)?;
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Flattened copy of [`RecurrentWeights`] for the inner loop.
#[derive(Debug, Clone)]
pub struct GruBackend {
    hidden: usize,
    norm: Normalization,
    // Per gate: input column (h), recurrent matrix (h*h row-major), bias (h).
    w: [Vec<f64>; 3],
    u: [Vec<f64>; 3],
    b: [Vec<f64>; 3],
    w_out: Vec<f64>,
    b_out: [f64; 2],
}

impl GruBackend {
    pub fn new(weights: &RecurrentWeights) -> Result<Self, ClassifierError> {
        weights.validate()?;
        let col = |m: &[Vec<f64>]| m.iter().map(|r| r[0]).collect::<Vec<_>>();
        let flat = |m: &[Vec<f64>]| m.iter().flatten().copied().collect::<Vec<_>>();
        Ok(GruBackend {
            hidden: weights.hidden_dim,
            norm: weights.norm,
            w: [col(&weights.w_z), col(&weights.w_r), col(&weights.w_h)],
            u: [flat(&weights.u_z), flat(&weights.u_r), flat(&weights.u_h)],
            b: [weights.b_z.clone(), weights.b_r.clone(), weights.b_h.clone()],
            w_out: flat(&weights.w_out),
            b_out: [weights.b_out[0], weights.b_out[1]],
        })
    }

    /// Runs the recurrence, calling `visit(step, h)` after each step.
    fn run(&self, items: &[u32], mut visit: impl FnMut(usize, &[f64])) -> Result<Vec<f64>, ClassifierError> {
        let n = self.hidden;
        let mut h = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut r = vec![0.0; n];
        let mut rh = vec![0.0; n];
        for (step, &item) in items.iter().enumerate() {
            let x = (item as f64 - self.norm.offset) / self.norm.scale;
            for i in 0..n {
                let row = &self.u[0][i * n..(i + 1) * n];
                z[i] = sigmoid(self.w[0][i] * x + dot(row, &h) + self.b[0][i]);
                let row = &self.u[1][i * n..(i + 1) * n];
                r[i] = sigmoid(self.w[1][i] * x + dot(row, &h) + self.b[1][i]);
            }
            for i in 0..n {
                rh[i] = r[i] * h[i];
            }
            for i in 0..n {
                let row = &self.u[2][i * n..(i + 1) * n];
                let candidate = (self.w[2][i] * x + dot(row, &rh) + self.b[2][i]).tanh();
                z[i] = (1.0 - z[i]) * h[i] + z[i] * candidate;
            }
            std::mem::swap(&mut h, &mut z);
            if let Some(i) = h.iter().position(|v| !v.is_finite()) {
                return Err(ClassifierError::Numeric {
                    step,
                    message: format!("hidden unit {i} is {}", h[i]),
                });
            }
            visit(step, &h);
        }
        Ok(h)
    }

    fn head(&self, h: &[f64], step: usize) -> Result<(f64, f64), ClassifierError> {
        let n = self.hidden;
        let l0 = dot(&self.w_out[..n], h) + self.b_out[0];
        let l1 = dot(&self.w_out[n..], h) + self.b_out[1];
        // Two-way softmax written as a logistic of the logit gap.
        let p_bf = sigmoid(l0 - l1);
        if !p_bf.is_finite() {
            return Err(ClassifierError::Numeric {
                step,
                message: "softmax head produced a non-finite value".into(),
            });
        }
        Ok((p_bf, 1.0 - p_bf))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Backend for GruBackend {
    fn p_bf(&self, items: &[u32]) -> Result<f64, ClassifierError> {
        let h = self.run(items, |_, _| {})?;
        Ok(self.head(&h, items.len())?.0)
    }
}

/// `(p_bf, p_ff)` for `items` under `weights`.
pub fn gru_forward(weights: &RecurrentWeights, items: &[u32]) -> Result<(f64, f64), ClassifierError> {
    let backend = GruBackend::new(weights)?;
    let h = backend.run(items, |_, _| {})?;
    backend.head(&h, items.len())
}

/// Hidden state after every step.
pub fn gru_hidden_states(weights: &RecurrentWeights, items: &[u32]) -> Result<Vec<Vec<f64>>, ClassifierError> {
    let backend = GruBackend::new(weights)?;
    let mut states = Vec::with_capacity(items.len());
    backend.run(items, |_, h| states.push(h.to_vec()))?;
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;

    const NORM: Normalization = Normalization { offset: 20.0, scale: 80.0 };

    #[test]
    fn zero_weights_are_uniform() {
        let w = RecurrentWeights::zeros(4, NORM);
        assert_eq!(gru_forward(&w, &[20, 55, 100]).unwrap(), (0.5, 0.5));
        assert_eq!(gru_forward(&w, &[]).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn scalar_step_matches_hand_evaluation() {
        let mut w = RecurrentWeights::zeros(1, NORM);
        w.w_z[0][0] = 0.5;
        w.u_z[0][0] = -0.3;
        w.b_z[0] = 0.1;
        w.w_r[0][0] = -0.7;
        w.u_r[0][0] = 0.2;
        w.b_r[0] = 0.05;
        w.w_h[0][0] = 1.3;
        w.u_h[0][0] = 0.4;
        w.b_h[0] = -0.2;
        w.w_out[0][0] = 2.0;
        w.w_out[1][0] = -1.0;
        w.b_out = vec![0.3, -0.1];

        // x = (60 - 20) / 80 = 0.5, h0 = 0, so U terms vanish in step 1.
        let z = 1.0 / (1.0 + (-(0.5 * 0.5 + 0.1f64)).exp()); // sigma(0.35)
        let cand = (1.3 * 0.5 - 0.2f64).tanh(); // tanh(0.45)
        let h1 = z * cand;
        let l0 = 2.0 * h1 + 0.3;
        let l1 = -h1 - 0.1;
        let p_bf = l0.exp() / (l0.exp() + l1.exp());
        let (p, q) = gru_forward(&w, &[60]).unwrap();
        assert!((p - p_bf).abs() < 1e-12);
        assert!((p + q - 1.0).abs() < 1e-12);
        assert!((h1 - 0.247_493_373_007_389_6).abs() < 1e-12, "h1 = {h1}");
    }

    #[test]
    fn shape_errors_name_the_field() {
        let mut w = RecurrentWeights::zeros(3, NORM);
        w.u_z = vec![vec![0.0; 4]; 3];
        let text = serde_json::to_string(&w).unwrap();
        match RecurrentWeights::from_json(&text) {
            Err(ClassifierError::Schema { field, .. }) => assert_eq!(field, "U_z"),
            other => panic!("{other:?}"),
        }
        let mut w = RecurrentWeights::zeros(1, NORM);
        w.hidden_dim = 0;
        let text = serde_json::to_string(&w).unwrap();
        match RecurrentWeights::from_json(&text) {
            Err(ClassifierError::Schema { field, .. }) => assert_eq!(field, "hidden_dim"),
            other => panic!("{other:?}"),
        }
        let mut v: Value = serde_json::to_value(RecurrentWeights::zeros(1, NORM)).unwrap();
        v.as_object_mut().unwrap().remove("b_r");
        match RecurrentWeights::from_json(&v.to_string()) {
            Err(ClassifierError::Schema { field, .. }) => assert_eq!(field, "b_r"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let mut w = RecurrentWeights::zeros(2, NORM);
        w.u_h[1][0] = 0.123_456_789_012_345_67;
        w.b_out[1] = -3.5e-7;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        save_weights(&w, &path).unwrap();
        assert_eq!(load_weights(&path).unwrap(), w);
    }
}
