//! Random-mask fragility probe and the full per-dataset attack campaign.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::archive::is_header;
use super::{derive_rng, AdversarialArchive, ArchivedMask, AttackError, AttackRunResult, EaConfig, Evaluator, Mask, Problem};
use crate::classifier::Model;
use crate::instances::LabeledInstance;
use crate::packing::Solver;

use super::evolve_attack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub n_masks: usize,
    pub p_init: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            n_masks: 500,
            p_init: 0.3,
        }
    }
}

/// Outcome of the random probe on one instance (one line of the probe file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub instance: String,
    pub winner: Solver,
    pub fragile: bool,
    /// Sampled masks with positive fitness (with repeats).
    pub hits: u64,
    pub evaluations: u64,
    /// Emptied once merged into a campaign archive.
    #[serde(skip)]
    pub archive_delta: Vec<(Mask, ArchivedMask)>,
}

/// Samples `config.n_masks` masks by the initialisation rule. The instance is
/// fragile iff any of them is misclassified.
pub fn random_probe(
    instance: &LabeledInstance,
    model: &Model,
    problem: Problem,
    config: &ProbeConfig,
    seed: u64,
) -> Result<ProbeReport, AttackError> {
    if !(0.0..=1.0).contains(&config.p_init) {
        return Err(AttackError::InvalidConfig("probe p_init must lie in [0, 1]".into()));
    }
    let n = instance.items().len();
    let mut rng = derive_rng(seed, instance.id(), "probe", 0);
    let mut eval = Evaluator::new(instance, model, problem);
    let mut delta = indexmap::IndexMap::new();
    let mut hits = 0;
    for _ in 0..config.n_masks {
        let mask = Mask::random_init(n, config.p_init, &mut rng);
        let rec = eval.evaluate(&mask)?;
        if rec.is_adversarial() {
            hits += 1;
            delta.entry(mask).or_insert(ArchivedMask {
                fitness: rec.fitness,
                misclass_type: rec.misclass_type,
            });
        }
    }
    Ok(ProbeReport {
        instance: instance.id().to_string(),
        winner: instance.winner,
        fragile: hits > 0,
        hits,
        evaluations: eval.evaluations(),
        archive_delta: delta.into_iter().collect(),
    })
}

/// Campaign-file record for one `(instance, run)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance: String,
    pub run: u64,
    pub best_fitness: f64,
    pub first_hit_eval: Option<u64>,
    pub trajectory: Vec<f64>,
    /// Unique adversarial masks found in this run.
    pub hits: u64,
    pub evaluations: u64,
}

impl From<&AttackRunResult> for RunRecord {
    fn from(r: &AttackRunResult) -> Self {
        RunRecord {
            instance: r.instance_id.clone(),
            run: r.run,
            best_fitness: r.best_fitness,
            first_hit_eval: r.first_hit_evaluation,
            trajectory: r.trajectory.clone(),
            hits: r.archive_delta.len() as u64,
            evaluations: r.evaluations,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CampaignResult {
    pub probes: Vec<ProbeReport>,
    pub runs: Vec<RunRecord>,
    pub archive: AdversarialArchive,
}

impl CampaignResult {
    pub fn total_evaluations(&self) -> u64 {
        self.probes.iter().map(|p| p.evaluations).sum::<u64>() + self.runs.iter().map(|r| r.evaluations).sum::<u64>()
    }

    pub fn runs_for<'a>(&'a self, instance: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs.iter().filter(move |r| r.instance == instance)
    }

    pub fn write_probes(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_lines(w, &self.probes)
    }

    pub fn write_runs(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_lines(w, &self.runs)
    }

    pub fn write_archive(&self, w: &mut impl Write) -> std::io::Result<()> {
        self.archive.write_to(w)
    }

    /// Rebuilds a campaign from its three files.
    pub fn read_from(probes: impl BufRead, runs: impl BufRead, archive: impl BufRead) -> Result<Self, String> {
        Ok(CampaignResult {
            probes: read_lines(probes)?,
            runs: read_lines(runs)?,
            archive: AdversarialArchive::read_from(archive)?,
        })
    }
}

fn write_lines<T: Serialize>(w: &mut impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        writeln!(w, "{}", serde_json::to_string(item).expect("record serializes"))?;
    }
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(r: impl BufRead) -> Result<Vec<T>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() || is_header(&line) {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

/// Probes every instance (streams seeded by `probe_seed`), then runs the EA
/// `runs_per_instance` times on each non-fragile one. Work is spread over the
/// current rayon pool; the result only depends on the seeds, not on scheduling.
/// With `ea = None` only the probe runs.
pub fn attack_campaign(
    dataset: &[LabeledInstance],
    model: &Model,
    problem: Problem,
    probe: &ProbeConfig,
    probe_seed: u64,
    ea: Option<&EaConfig>,
) -> Result<CampaignResult, AttackError> {
    if let Some(cfg) = ea {
        cfg.validate()?;
    }
    let seed = probe_seed;
    let mut probes: Vec<ProbeReport> = dataset
        .par_iter()
        .map(|li| random_probe(li, model, problem, probe, seed))
        .collect::<Result<_, _>>()?;

    let mut results: Vec<AttackRunResult> = Vec::new();
    if let Some(cfg) = ea {
        let tasks: Vec<(&LabeledInstance, u64)> = dataset
            .iter()
            .zip(&probes)
            .filter(|(_, p)| !p.fragile)
            .flat_map(|(li, _)| (0..cfg.runs_per_instance as u64).map(move |run| (li, run)))
            .collect();
        results = tasks
            .into_par_iter()
            .map(|(li, run)| evolve_attack(li, model, problem, cfg, run))
            .collect::<Result<_, _>>()?;
    }

    let runs = results.iter().map(RunRecord::from).collect();
    let mut archive = AdversarialArchive::new();
    let mut results = results.into_iter().peekable();
    for p in &mut probes {
        archive.extend(&p.instance, std::mem::take(&mut p.archive_delta));
        while let Some(r) = results.next_if(|r| r.instance_id == p.instance) {
            archive.extend(&p.instance, r.archive_delta);
        }
    }
    Ok(CampaignResult { probes, runs, archive })
}
