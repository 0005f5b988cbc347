//! Post-processing of a finished campaign: effectiveness summary, outcome
//! taxonomy, mask statistics, rank correlations and instance categories.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::attack::{ArchivedMask, CampaignResult, Mask, MisclassType};
use crate::instances::{LabeledInstance, SizeBounds};
use crate::packing::Solver;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("campaign has no EA-attacked instances")]
    EmptyCampaign,
    #[error("instance {0} has no archived adversarial masks")]
    EmptyArchive(String),
    #[error("correlation is undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("instance {0} is not in the dataset")]
    UnknownInstance(String),
}

/// Per-mask perturbation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskStats {
    /// Perturbed minus original item-size sum, after clipping.
    pub sum_difference: i64,
    /// Non-zero mask entries.
    pub n_changes: usize,
    /// Items whose size actually changed after clipping.
    pub effective_changes: usize,
    /// Longest run of consecutive non-zero entries.
    pub longest_sequence: usize,
    /// Longest run of consecutive +1 entries.
    pub longest_positive_sequence: usize,
}

fn runs(entries: impl Iterator<Item = i8>) -> (usize, usize) {
    let (mut any, mut pos, mut best_any, mut best_pos) = (0, 0, 0, 0);
    for e in entries {
        any = if e != 0 { any + 1 } else { 0 };
        pos = if e == 1 { pos + 1 } else { 0 };
        best_any = best_any.max(any);
        best_pos = best_pos.max(pos);
    }
    (best_any, best_pos)
}

/// Statistics of `mask` as applied to `original` under `bounds`.
pub fn mask_stats(mask: &Mask, original: &[u32], bounds: SizeBounds) -> MaskStats {
    let (longest_sequence, longest_positive_sequence) = runs(mask.entries().iter().copied());
    let mut sum_difference = 0i64;
    let mut effective_changes = 0;
    for (&s, &d) in original.iter().zip(mask.entries()) {
        let delta = bounds.clamp(s as i64 + d as i64) as i64 - s as i64;
        sum_difference += delta;
        effective_changes += usize::from(delta != 0);
    }
    MaskStats {
        sum_difference,
        n_changes: mask.nonzero_count(),
        effective_changes,
        longest_sequence,
        longest_positive_sequence,
    }
}

/// Statistics of the per-item difference between two instances, as if the
/// difference were the mask. Matches [`mask_stats`] when nothing was clipped.
pub fn diff_stats(original: &[u32], perturbed: &[u32]) -> MaskStats {
    let deltas: Vec<i64> = original
        .iter()
        .zip(perturbed)
        .map(|(&a, &b)| b as i64 - a as i64)
        .collect();
    let (longest_sequence, longest_positive_sequence) = runs(deltas.iter().map(|&d| d.signum() as i8));
    let changed = deltas.iter().filter(|&&d| d != 0).count();
    MaskStats {
        sum_difference: deltas.iter().sum(),
        n_changes: changed,
        effective_changes: changed,
        longest_sequence,
        longest_positive_sequence,
    }
}

/// Whether an instance's adversarial samples keep, flip, or mix the true winner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeType {
    T1,
    T2,
    T3,
}

pub fn classify_outcome<'a>(
    instance: &str,
    entries: impl IntoIterator<Item = &'a ArchivedMask>,
) -> Result<OutcomeType, AnalysisError> {
    let (mut same, mut flipped) = (false, false);
    for e in entries {
        match e.misclass_type {
            MisclassType::SameWinnerModelFlipped => same = true,
            MisclassType::WinnerFlippedModelStatic => flipped = true,
            MisclassType::None => {}
        }
    }
    match (same, flipped) {
        (true, false) => Ok(OutcomeType::T1),
        (false, true) => Ok(OutcomeType::T2),
        (true, true) => Ok(OutcomeType::T3),
        (false, false) => Err(AnalysisError::EmptyArchive(instance.to_string())),
    }
}

/// Quantile by linear interpolation between order statistics
/// (`h = (n - 1) q`). `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub attacked: usize,
    pub successful: usize,
    pub success_rate: f64,
    /// Median over successful instances of the smallest first-hit index.
    pub queries: Option<f64>,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub fitness_median: f64,
    pub fitness_q1: f64,
    pub fitness_q3: f64,
}

/// Per-instance aggregates over EA runs, in campaign order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackedInstance {
    pub instance: String,
    pub max_fitness: f64,
    pub min_first_hit: Option<u64>,
}

pub fn attacked_instances(campaign: &CampaignResult) -> Vec<AttackedInstance> {
    let mut order: Vec<&str> = Vec::new();
    let mut agg: HashMap<&str, (f64, Option<u64>)> = HashMap::new();
    for r in &campaign.runs {
        let e = agg.entry(&r.instance).or_insert_with(|| {
            order.push(&r.instance);
            (f64::NEG_INFINITY, None)
        });
        e.0 = e.0.max(r.best_fitness);
        if let Some(h) = r.first_hit_eval {
            e.1 = Some(e.1.map_or(h, |m: u64| m.min(h)));
        }
    }
    order
        .into_iter()
        .map(|i| AttackedInstance {
            instance: i.to_string(),
            max_fitness: agg[i].0,
            min_first_hit: agg[i].1,
        })
        .collect()
}

pub fn campaign_summary(campaign: &CampaignResult) -> Result<CampaignSummary, AnalysisError> {
    let attacked = attacked_instances(campaign);
    if attacked.is_empty() {
        return Err(AnalysisError::EmptyCampaign);
    }
    let successful: Vec<&AttackedInstance> = attacked.iter().filter(|a| a.max_fitness > 0.0).collect();
    let hits: Vec<f64> = successful
        .iter()
        .filter_map(|a| a.min_first_hit.map(|h| h as f64))
        .collect();
    let queries = (!hits.is_empty()).then(|| median(&hits));

    let mut counts = [0usize; 3];
    for a in &successful {
        let t = classify_outcome(&a.instance, campaign.archive.for_instance(&a.instance).map(|(_, e)| e))?;
        counts[t as usize] += 1;
    }
    let pct = |k: usize, n: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
    let mut maxima: Vec<f64> = attacked.iter().map(|a| a.max_fitness).collect();
    maxima.sort_by(f64::total_cmp);
    Ok(CampaignSummary {
        attacked: attacked.len(),
        successful: successful.len(),
        success_rate: pct(successful.len(), attacked.len()),
        queries,
        t1: pct(counts[0], successful.len()),
        t2: pct(counts[1], successful.len()),
        t3: pct(counts[2], successful.len()),
        fitness_median: quantile(&maxima, 0.5),
        fitness_q1: quantile(&maxima, 0.25),
        fitness_q3: quantile(&maxima, 0.75),
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Spearman's rho (Pearson correlation of average ranks) with a two-sided
/// p-value from the t approximation on `n - 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::UndefinedCorrelation(format!(
            "length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(AnalysisError::UndefinedCorrelation(format!("need at least 3 pairs, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::UndefinedCorrelation("non-finite input".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::UndefinedCorrelation("constant input".into()));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(SpearmanResult { rho, p_value, n })
}

/// Per successful instance: median fitness of its archived masks and the
/// median of each mask statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMaskSummary {
    pub instance: String,
    pub unique_masks: usize,
    pub median_fitness: f64,
    pub median_sum_difference: f64,
    pub median_n_changes: f64,
    pub median_longest_sequence: f64,
    pub median_longest_positive_sequence: f64,
}

fn dataset_index(dataset: &[LabeledInstance]) -> HashMap<&str, &LabeledInstance> {
    dataset.iter().map(|li| (li.id(), li)).collect()
}

/// Summaries for every EA-successful instance, in campaign order.
pub fn instance_mask_summaries(
    dataset: &[LabeledInstance],
    campaign: &CampaignResult,
    bounds: SizeBounds,
) -> Result<Vec<InstanceMaskSummary>, AnalysisError> {
    let index = dataset_index(dataset);
    let mut out = Vec::new();
    for a in attacked_instances(campaign).iter().filter(|a| a.max_fitness > 0.0) {
        let li = index
            .get(a.instance.as_str())
            .ok_or_else(|| AnalysisError::UnknownInstance(a.instance.clone()))?;
        let mut fit = Vec::new();
        let mut stats: Vec<MaskStats> = Vec::new();
        for (mask, e) in campaign.archive.for_instance(&a.instance) {
            fit.push(e.fitness);
            stats.push(mask_stats(mask, li.items(), bounds));
        }
        if fit.is_empty() {
            return Err(AnalysisError::EmptyArchive(a.instance.clone()));
        }
        let med = |f: fn(&MaskStats) -> f64| median(&stats.iter().map(f).collect::<Vec<_>>());
        out.push(InstanceMaskSummary {
            instance: a.instance.clone(),
            unique_masks: fit.len(),
            median_fitness: median(&fit),
            median_sum_difference: med(|s| s.sum_difference as f64),
            median_n_changes: med(|s| s.n_changes as f64),
            median_longest_sequence: med(|s| s.longest_sequence as f64),
            median_longest_positive_sequence: med(|s| s.longest_positive_sequence as f64),
        });
    }
    Ok(out)
}

/// Rank correlations between per-instance median fitness and the per-instance
/// median of each statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessCorrelations {
    pub longest_sequence: Option<SpearmanResult>,
    pub n_changes: Option<SpearmanResult>,
    pub sum_difference: Option<SpearmanResult>,
}

pub fn fitness_correlations(summaries: &[InstanceMaskSummary]) -> FitnessCorrelations {
    let fit: Vec<f64> = summaries.iter().map(|s| s.median_fitness).collect();
    let corr = |f: fn(&InstanceMaskSummary) -> f64| {
        spearman(&fit, &summaries.iter().map(f).collect::<Vec<_>>()).ok()
    };
    FitnessCorrelations {
        longest_sequence: corr(|s| s.median_longest_sequence),
        n_changes: corr(|s| s.median_n_changes),
        sum_difference: corr(|s| s.median_sum_difference),
    }
}

/// Distribution of unique adversarial masks per successful instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniqueMaskCounts {
    pub instances: usize,
    pub total: usize,
    pub median: f64,
    pub min: usize,
    pub max: usize,
}

pub fn unique_mask_counts(campaign: &CampaignResult) -> Option<UniqueMaskCounts> {
    let counts = campaign.archive.unique_counts();
    let attacked: Vec<String> = attacked_instances(campaign).into_iter().map(|a| a.instance).collect();
    let per: Vec<usize> = attacked
        .iter()
        .filter_map(|i| counts.get(i.as_str()).copied())
        .collect();
    if per.is_empty() {
        return None;
    }
    Some(UniqueMaskCounts {
        instances: per.len(),
        total: per.iter().sum(),
        median: median(&per.iter().map(|&c| c as f64).collect::<Vec<_>>()),
        min: *per.iter().min().expect("non-empty"),
        max: *per.iter().max().expect("non-empty"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InstanceCategory {
    Fragile,
    Perturbable,
    Robust,
}

impl InstanceCategory {
    pub const ALL: [InstanceCategory; 3] = [
        InstanceCategory::Fragile,
        InstanceCategory::Perturbable,
        InstanceCategory::Robust,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InstanceCategory::Fragile => "FRAGILE",
            InstanceCategory::Perturbable => "PERTURBABLE",
            InstanceCategory::Robust => "ROBUST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizedInstance {
    pub instance: String,
    pub winner: Solver,
    pub category: InstanceCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub winner: Solver,
    pub category: InstanceCategory,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTable {
    pub instances: Vec<CategorizedInstance>,
    /// One row per (winner, category), percentages of all probed instances.
    pub shares: Vec<CategoryShare>,
}

impl CategoryTable {
    pub fn category_of(&self, instance: &str) -> Option<InstanceCategory> {
        self.instances.iter().find(|c| c.instance == instance).map(|c| c.category)
    }

    pub fn count(&self, category: InstanceCategory) -> usize {
        self.instances.iter().filter(|c| c.category == category).count()
    }
}

pub fn categorize(campaign: &CampaignResult) -> CategoryTable {
    let maxima: HashMap<String, f64> = attacked_instances(campaign)
        .into_iter()
        .map(|a| (a.instance, a.max_fitness))
        .collect();
    let instances: Vec<CategorizedInstance> = campaign
        .probes
        .iter()
        .map(|p| {
            let category = if p.fragile {
                InstanceCategory::Fragile
            } else if maxima.get(&p.instance).is_some_and(|&m| m > 0.0) {
                InstanceCategory::Perturbable
            } else {
                InstanceCategory::Robust
            };
            CategorizedInstance {
                instance: p.instance.clone(),
                winner: p.winner,
                category,
            }
        })
        .collect();
    let total = instances.len();
    let mut shares = Vec::new();
    for winner in [Solver::BestFit, Solver::FirstFit] {
        for category in InstanceCategory::ALL {
            let count = instances
                .iter()
                .filter(|c| c.winner == winner && c.category == category)
                .count();
            shares.push(CategoryShare {
                winner,
                category,
                count,
                percent: if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 },
            });
        }
    }
    CategoryTable { instances, shares }
}
