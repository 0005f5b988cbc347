//! Black-box probability oracles over item sequences.
//!
//! Every backend answers with `p_bf`, the probability that best-fit wins;
//! `p_ff` is always `1 - p_bf`. [`Model`] wraps a backend and does the query
//! accounting that the attack-effort metrics are built on.

mod external;
mod gru;
mod surrogate;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::packing::Solver;

pub use external::{ExternalBackend, ExternalConfig, ExternalEndpoint};
pub use gru::{gru_forward, gru_hidden_states, load_weights, save_weights, GruBackend, Normalization, RecurrentWeights};
pub use surrogate::{train_surrogate, SurrogateBackend, SurrogateConfig, SurrogateModel, TrainedSurrogate};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("model expects {expected} items but got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("non-finite value at time step {step}: {message}")]
    Numeric { step: usize, message: String },
    #[error("backend returned invalid probability {0}")]
    InvalidProbability(f64),
    #[error("schema error in field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// A model that maps an item sequence to the probability that best-fit wins.
pub trait Backend: Send + Sync {
    fn p_bf(&self, items: &[u32]) -> Result<f64, ClassifierError>;

    /// Fixed input length, if the backend only accepts one.
    fn expected_len(&self) -> Option<usize> {
        None
    }
}

/// Answers the same probability for every input.
#[derive(Debug, Clone, Copy)]
pub struct ConstantBackend {
    p_bf: f64,
}

impl ConstantBackend {
    pub fn new(p_bf: f64) -> Self {
        ConstantBackend { p_bf }
    }
}

impl Backend for ConstantBackend {
    fn p_bf(&self, _items: &[u32]) -> Result<f64, ClassifierError> {
        Ok(self.p_bf)
    }
}

/// Wraps a closure; handy for synthetic backends in experiments and tests.
pub struct FnBackend<F> {
    f: F,
    expected_len: Option<usize>,
}

impl<F> FnBackend<F>
where
    F: Fn(&[u32]) -> Result<f64, ClassifierError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        FnBackend { f, expected_len: None }
    }

    pub fn with_expected_len(mut self, len: usize) -> Self {
        self.expected_len = Some(len);
        self
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&[u32]) -> Result<f64, ClassifierError> + Send + Sync,
{
    fn p_bf(&self, items: &[u32]) -> Result<f64, ClassifierError> {
        (self.f)(items)
    }

    fn expected_len(&self) -> Option<usize> {
        self.expected_len
    }
}

/// One answered query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierVerdict {
    pub p_bf: f64,
    pub p_ff: f64,
    pub query_index: u64,
}

impl ClassifierVerdict {
    pub fn probability(&self, solver: Solver) -> f64 {
        match solver {
            Solver::BestFit => self.p_bf,
            Solver::FirstFit => self.p_ff,
        }
    }

    /// The argmax solver, or `None` for an exact 0.5/0.5 answer.
    pub fn choice(&self) -> Option<Solver> {
        if self.p_bf > self.p_ff {
            Some(Solver::BestFit)
        } else if self.p_ff > self.p_bf {
            Some(Solver::FirstFit)
        } else {
            None
        }
    }
}

/// Snapshot of query counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryLog {
    pub total_queries: u64,
    pub per_instance: HashMap<String, u64>,
}

/// A backend plus query accounting. Safe to share across threads.
pub struct Model {
    backend: Box<dyn Backend>,
    queries: AtomicU64,
    per_instance: Mutex<HashMap<String, u64>>,
}

impl Model {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Model::from_boxed(Box::new(backend))
    }

    pub fn from_boxed(backend: Box<dyn Backend>) -> Self {
        Model {
            backend,
            queries: AtomicU64::new(0),
            per_instance: Mutex::new(HashMap::new()),
        }
    }

    pub fn expected_len(&self) -> Option<usize> {
        self.backend.expected_len()
    }

    fn query(&self, items: &[u32]) -> Result<ClassifierVerdict, ClassifierError> {
        if let Some(expected) = self.backend.expected_len() {
            if expected != items.len() {
                return Err(ClassifierError::LengthMismatch {
                    expected,
                    got: items.len(),
                });
            }
        }
        let p_bf = self.backend.p_bf(items)?;
        if !p_bf.is_finite() || !(0.0..=1.0).contains(&p_bf) {
            return Err(ClassifierError::InvalidProbability(p_bf));
        }
        let query_index = self.queries.fetch_add(1, Ordering::Relaxed) + 1;
        Ok(ClassifierVerdict {
            p_bf,
            p_ff: 1.0 - p_bf,
            query_index,
        })
    }

    /// Queries the backend once on behalf of `instance_id`.
    pub fn predict(&self, instance_id: &str, items: &[u32]) -> Result<ClassifierVerdict, ClassifierError> {
        let verdict = self.query(items)?;
        *self
            .per_instance
            .lock()
            .expect("query log poisoned")
            .entry(instance_id.to_string())
            .or_default() += 1;
        Ok(verdict)
    }

    /// A per-instance handle that batches its count into the log when dropped.
    pub fn session<'a>(&'a self, instance_id: &'a str) -> QuerySession<'a> {
        QuerySession {
            model: self,
            instance_id,
            count: 0,
        }
    }

    pub fn total_queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn query_log(&self) -> QueryLog {
        QueryLog {
            total_queries: self.total_queries(),
            per_instance: self.per_instance.lock().expect("query log poisoned").clone(),
        }
    }
}

/// Query handle bound to one instance; see [`Model::session`].
pub struct QuerySession<'a> {
    model: &'a Model,
    instance_id: &'a str,
    count: u64,
}

impl QuerySession<'_> {
    pub fn predict(&mut self, items: &[u32]) -> Result<ClassifierVerdict, ClassifierError> {
        let verdict = self.model.query(items)?;
        self.count += 1;
        Ok(verdict)
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

impl Drop for QuerySession<'_> {
    fn drop(&mut self) {
        if self.count == 0 {
            return;
        }
        if let Ok(mut log) = self.model.per_instance.lock() {
            *log.entry(self.instance_id.to_string()).or_default() += self.count;
        }
    }
}
