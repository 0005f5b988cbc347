//! Perturbation-mask search against a black-box selector.
//!
//! A mask is applied once to the original instance; the perturbed instance
//! is re-solved by both heuristics to find its true winner, and the model is
//! queried once. Fitness is `p_loser - p_winner`, positive iff misclassified.

mod archive;
mod campaign;
mod ea;
mod mask;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::{ClassifierError, Model, QuerySession};
use crate::instances::{LabeledInstance, SizeBounds};
use crate::packing::{PackingError, Portfolio, Solver};

pub use archive::{AdversarialArchive, ArchiveEntry, ArchivedMask};
pub use campaign::{attack_campaign, random_probe, CampaignResult, ProbeConfig, ProbeReport, RunRecord};
pub use ea::{evolve_attack, AttackRunResult, EaConfig};
pub use mask::{apply_mask, Mask};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("mask length {mask} does not match instance length {instance}")]
    LengthMismatch { instance: usize, mask: usize },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Packing(#[from] PackingError),
}

/// The two ways a perturbed instance can be misclassified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MisclassType {
    /// True winner unchanged, model now picks the loser.
    #[serde(rename = "T_SAME")]
    SameWinnerModelFlipped,
    /// True winner flipped, model still picks the original winner.
    #[serde(rename = "T_FLIPPED")]
    WinnerFlippedModelStatic,
    #[serde(rename = "NONE")]
    None,
}

impl MisclassType {
    pub fn name(self) -> &'static str {
        match self {
            MisclassType::SameWinnerModelFlipped => "T_SAME",
            MisclassType::WinnerFlippedModelStatic => "T_FLIPPED",
            MisclassType::None => "NONE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessRecord {
    pub fitness: f64,
    /// `None` when both heuristics tie on the perturbed instance.
    pub perturbed_winner: Option<Solver>,
    /// `None` only for an exact 0.5/0.5 answer.
    pub model_choice: Option<Solver>,
    pub misclass_type: MisclassType,
    /// 1-based index of this evaluation within its evaluator.
    pub evaluation_index: u64,
}

impl FitnessRecord {
    pub fn is_adversarial(&self) -> bool {
        self.fitness > 0.0
    }
}

/// Item-size bounds and packing parameters of the attacked dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub bounds: SizeBounds,
    pub portfolio: Portfolio,
}

impl Problem {
    pub fn new(bounds: SizeBounds, capacity: u32) -> Self {
        Problem {
            bounds,
            portfolio: Portfolio::new(capacity),
        }
    }
}

/// Scores masks against one original instance, reusing buffers.
pub struct Evaluator<'a> {
    original: &'a LabeledInstance,
    problem: Problem,
    session: QuerySession<'a>,
    perturbed: Vec<u32>,
    fills: Vec<u32>,
    evaluations: u64,
}

impl<'a> Evaluator<'a> {
    pub fn new(original: &'a LabeledInstance, model: &'a Model, problem: Problem) -> Self {
        let n = original.items().len();
        Evaluator {
            original,
            problem,
            session: model.session(original.id()),
            perturbed: Vec::with_capacity(n),
            fills: Vec::with_capacity(n),
            evaluations: 0,
        }
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn evaluate(&mut self, mask: &Mask) -> Result<FitnessRecord, AttackError> {
        let items = self.original.items();
        if items.len() != mask.len() {
            return Err(AttackError::LengthMismatch {
                instance: items.len(),
                mask: mask.len(),
            });
        }
        mask.apply_into(items, self.problem.bounds, &mut self.perturbed);
        let outcome = self.problem.portfolio.evaluate_with(&self.perturbed, &mut self.fills)?;
        // The model is queried even on ties so that every evaluation costs
        // exactly one query.
        let verdict = self.session.predict(&self.perturbed)?;
        self.evaluations += 1;
        let model_choice = verdict.choice();
        let Some(winner) = outcome.winner else {
            return Ok(FitnessRecord {
                fitness: -1.0,
                perturbed_winner: None,
                model_choice,
                misclass_type: MisclassType::None,
                evaluation_index: self.evaluations,
            });
        };
        let p_w = verdict.probability(winner);
        let p_l = verdict.probability(winner.other());
        let fitness = p_l - p_w;
        let misclass_type = if fitness <= 0.0 {
            MisclassType::None
        } else if winner == self.original.winner {
            MisclassType::SameWinnerModelFlipped
        } else {
            MisclassType::WinnerFlippedModelStatic
        };
        Ok(FitnessRecord {
            fitness,
            perturbed_winner: Some(winner),
            model_choice,
            misclass_type,
            evaluation_index: self.evaluations,
        })
    }
}

/// Scores a single mask; one model query.
pub fn fitness(
    original: &LabeledInstance,
    mask: &Mask,
    model: &Model,
    problem: Problem,
) -> Result<FitnessRecord, AttackError> {
    Evaluator::new(original, model, problem).evaluate(mask)
}

/// Private PRNG stream for `(seed, instance id, purpose, run)`.
pub fn derive_rng(seed: u64, instance_id: &str, purpose: &str, run: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((instance_id.len() as u64).to_le_bytes());
    h.update(instance_id.as_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(run.to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
