//! Generational EA over masks: tournament selection, one-point crossover,
//! per-element resampling mutation, full replacement, no elitism.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{derive_rng, ArchivedMask, AttackError, Evaluator, Mask, Problem};
use crate::classifier::Model;
use crate::instances::LabeledInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub crossover_prob: f64,
    /// Per-element mutation probability; `None` means `1 / n_items`.
    pub mutation_rate: Option<f64>,
    pub p_init: f64,
    pub runs_per_instance: usize,
    pub seed: u64,
    pub stop_on_first_hit: bool,
}

impl Default for EaConfig {
    fn default() -> Self {
        EaConfig {
            population_size: 50,
            generations: 500,
            tournament_size: 2,
            crossover_prob: 0.9,
            mutation_rate: None,
            p_init: 0.3,
            runs_per_instance: 10,
            seed: 0,
            stop_on_first_hit: false,
        }
    }
}

impl EaConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: &str| Err(AttackError::InvalidConfig(m.to_string()));
        if self.population_size < 2 {
            return bad("population_size must be at least 2");
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be positive");
        }
        for (name, p) in [("crossover_prob", self.crossover_prob), ("p_init", self.p_init)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AttackError::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if let Some(r) = self.mutation_rate {
            if !(0.0..=1.0).contains(&r) {
                return bad("mutation_rate must lie in [0, 1]");
            }
        }
        Ok(())
    }

    /// Evaluations per run without early stopping.
    pub fn evaluations_per_run(&self) -> u64 {
        (self.population_size * (self.generations + 1)) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRunResult {
    pub instance_id: String,
    pub run: u64,
    pub best_mask: Mask,
    pub best_fitness: f64,
    /// Best fitness in the population at each generation, initial one first.
    pub trajectory: Vec<f64>,
    /// 1-based evaluation index of the first mask with positive fitness.
    pub first_hit_evaluation: Option<u64>,
    pub evaluations: u64,
    /// Unique adversarial masks found in this run, in discovery order.
    pub archive_delta: Vec<(Mask, ArchivedMask)>,
}

struct RunState {
    best_mask: Option<Mask>,
    best_fitness: f64,
    first_hit: Option<u64>,
    delta: indexmap::IndexMap<Mask, ArchivedMask>,
}

impl RunState {
    fn record(&mut self, mask: &Mask, rec: &super::FitnessRecord) {
        if self.best_mask.is_none() || rec.fitness > self.best_fitness {
            self.best_fitness = rec.fitness;
            self.best_mask = Some(mask.clone());
        }
        if rec.is_adversarial() {
            self.first_hit.get_or_insert(rec.evaluation_index);
            if !self.delta.contains_key(mask) {
                self.delta.insert(
                    mask.clone(),
                    ArchivedMask {
                        fitness: rec.fitness,
                        misclass_type: rec.misclass_type,
                    },
                );
            }
        }
    }
}

/// Index of the tournament winner; equal fitness goes to the first sampled.
fn tournament(fitness: &[f64], size: usize, rng: &mut impl Rng) -> usize {
    let mut best = rng.random_range(0..fitness.len());
    for _ in 1..size {
        let c = rng.random_range(0..fitness.len());
        if fitness[c] > fitness[best] {
            best = c;
        }
    }
    best
}

/// One EA run against `instance`, seeded from `(config.seed, instance id, run)`.
pub fn evolve_attack(
    instance: &LabeledInstance,
    model: &Model,
    problem: Problem,
    config: &EaConfig,
    run: u64,
) -> Result<AttackRunResult, AttackError> {
    config.validate()?;
    let n = instance.items().len();
    let pop_size = config.population_size;
    let mutation_rate = config.mutation_rate.unwrap_or(1.0 / n as f64);
    let mut rng = derive_rng(config.seed, instance.id(), "ea", run);
    let mut eval = Evaluator::new(instance, model, problem);
    let mut state = RunState {
        best_mask: None,
        best_fitness: f64::NEG_INFINITY,
        first_hit: None,
        delta: indexmap::IndexMap::new(),
    };
    let mut trajectory = Vec::with_capacity(config.generations + 1);

    let mut population: Vec<Mask> = (0..pop_size)
        .map(|_| Mask::random_init(n, config.p_init, &mut rng))
        .collect();
    let mut fitness = Vec::with_capacity(pop_size);
    let stop = config.stop_on_first_hit;

    'generations: for generation in 0..=config.generations {
        if generation > 0 {
            let parents: Vec<usize> = (0..pop_size)
                .map(|_| tournament(&fitness, config.tournament_size, &mut rng))
                .collect();
            let mut offspring = Vec::with_capacity(pop_size);
            for pair in parents.chunks(2) {
                let mut a = population[pair[0]].clone();
                if let [_, second] = pair {
                    let mut b = population[*second].clone();
                    if n >= 2 && rng.random_bool(config.crossover_prob) {
                        let cut = rng.random_range(1..n);
                        Mask::swap_tails(&mut a, &mut b, cut);
                    }
                    offspring.push(a);
                    offspring.push(b);
                } else {
                    offspring.push(a);
                }
            }
            for child in &mut offspring {
                child.mutate(mutation_rate, &mut rng);
            }
            population = offspring;
        }
        fitness.clear();
        let mut generation_best = f64::NEG_INFINITY;
        for mask in &population {
            let rec = eval.evaluate(mask)?;
            state.record(mask, &rec);
            fitness.push(rec.fitness);
            generation_best = generation_best.max(rec.fitness);
            if stop && rec.is_adversarial() {
                trajectory.push(generation_best);
                break 'generations;
            }
        }
        trajectory.push(generation_best);
    }

    Ok(AttackRunResult {
        instance_id: instance.id().to_string(),
        run,
        best_mask: state.best_mask.expect("population is non-empty"),
        best_fitness: state.best_fitness,
        trajectory,
        first_hit_evaluation: state.first_hit,
        evaluations: eval.evaluations(),
        archive_delta: state.delta.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{ConstantBackend, FnBackend};
    use crate::instances::{Instance, SizeBounds};
    use crate::packing::{Portfolio, Solver};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance() -> LabeledInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        loop {
            let items: Vec<u32> = (0..40).map(|_| rng.random_range(20..=100)).collect();
            if let Some(li) = LabeledInstance::label(Instance::new("e", items), &Portfolio::new(150)).unwrap() {
                return li;
            }
        }
    }

    fn small_config() -> EaConfig {
        EaConfig {
            population_size: 10,
            generations: 20,
            seed: 5,
            ..EaConfig::default()
        }
    }

    #[test]
    fn evaluation_count_and_trajectory_length() {
        let li = instance();
        let model = Model::new(ConstantBackend::new(if li.winner == Solver::BestFit { 1.0 } else { 0.0 }));
        let cfg = small_config();
        let r = evolve_attack(&li, &model, Problem::new(SizeBounds::DEFAULT, 150), &cfg, 0).unwrap();
        assert_eq!(r.evaluations, 10 * 21);
        assert_eq!(model.total_queries(), 10 * 21);
        assert_eq!(r.trajectory.len(), 21);
        assert_eq!(r.best_mask.len(), 40);
    }

    #[test]
    fn runs_are_reproducible_and_streams_independent() {
        let li = instance();
        let model = Model::new(FnBackend::new(|items: &[u32]| {
            Ok((items.iter().take(5).sum::<u32>() % 97) as f64 / 96.0)
        }));
        let p = Problem::new(SizeBounds::DEFAULT, 150);
        let a = evolve_attack(&li, &model, p, &small_config(), 3).unwrap();
        let b = evolve_attack(&li, &model, p, &small_config(), 3).unwrap();
        assert_eq!(a, b);
        let c = evolve_attack(&li, &model, p, &small_config(), 4).unwrap();
        assert_ne!(a.trajectory, c.trajectory);
    }

    #[test]
    fn stop_on_first_hit_counts_match() {
        let li = instance();
        let target = li.winner;
        // Flags any perturbation of item 0 as the loser.
        let original_first = li.items()[0];
        let model = Model::new(FnBackend::new(move |items: &[u32]| {
            let misled = items[0] != original_first;
            let p_w = if misled { 0.2 } else { 0.9 };
            Ok(if target == Solver::BestFit { p_w } else { 1.0 - p_w })
        }));
        let cfg = EaConfig { stop_on_first_hit: true, ..small_config() };
        let r = evolve_attack(&li, &model, Problem::new(SizeBounds::DEFAULT, 150), &cfg, 0).unwrap();
        if let Some(hit) = r.first_hit_evaluation {
            assert_eq!(r.evaluations, hit);
            assert_eq!(model.total_queries(), hit);
        } else {
            assert_eq!(r.evaluations, cfg.evaluations_per_run());
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let li = instance();
        let model = Model::new(ConstantBackend::new(0.5));
        let cfg = EaConfig { population_size: 1, ..EaConfig::default() };
        assert!(matches!(
            evolve_attack(&li, &model, Problem::new(SizeBounds::DEFAULT, 150), &cfg, 0),
            Err(AttackError::InvalidConfig(_))
        ));
    }

    #[test]
    fn tournament_prefers_fitter_and_first_on_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = [0.1, 0.9];
        let wins = (0..1000).filter(|_| tournament(&f, 2, &mut rng) == 1).count();
        // P(1 wins) = 1 - P(both draws are 0) = 0.75
        assert!((wins as f64 / 1000.0 - 0.75).abs() < 0.05);
        let tied = [0.5, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut probe = ChaCha8Rng::seed_from_u64(1);
        let first: usize = probe.random_range(0..2);
        assert_eq!(tournament(&tied, 2, &mut rng), first);
    }
}
