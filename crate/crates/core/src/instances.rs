//! Bin-packing instances and labelled datasets: generation, labelling,
//! filtering against a classifier, and the line-delimited dataset format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, Model};
use crate::packing::{PackingError, Portfolio, Solver};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("generation exhausted after {draws} candidate draws ({bf} BF / {ff} FF accepted of {target})")]
    GenerationExhausted {
        draws: u64,
        bf: usize,
        ff: usize,
        target: usize,
    },
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invariant violation in field `{field}`: {message}")]
    Invariant {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error(transparent)]
    Packing(#[from] PackingError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// An ordered sequence of integer item sizes. Order is significant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub items: Vec<u32>,
}

impl Instance {
    pub fn new(id: impl Into<String>, items: Vec<u32>) -> Self {
        Instance {
            id: id.into(),
            items,
        }
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn item_sum(&self) -> i64 {
        self.items.iter().map(|&s| s as i64).sum()
    }
}

/// Inclusive item-size range of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBounds {
    pub min_size: u32,
    pub max_size: u32,
}

impl SizeBounds {
    pub const DEFAULT: SizeBounds = SizeBounds {
        min_size: 20,
        max_size: 100,
    };

    pub fn contains(&self, size: u32) -> bool {
        (self.min_size..=self.max_size).contains(&size)
    }

    pub fn clamp(&self, size: i64) -> u32 {
        size.clamp(self.min_size as i64, self.max_size as i64) as u32
    }
}

impl Default for SizeBounds {
    fn default() -> Self {
        SizeBounds::DEFAULT
    }
}

/// An instance together with both heuristics' objectives and the winner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    #[serde(flatten)]
    pub instance: Instance,
    pub o_bf: f64,
    pub o_ff: f64,
    pub winner: Solver,
}

impl LabeledInstance {
    /// Labels `instance` by running the portfolio. Returns `None` on a tie.
    pub fn label(instance: Instance, portfolio: &Portfolio) -> Result<Option<Self>, PackingError> {
        let outcome = portfolio.evaluate(&instance.items)?;
        Ok(outcome.winner.map(|winner| LabeledInstance {
            instance,
            o_bf: outcome.o_bf,
            o_ff: outcome.o_ff,
            winner,
        }))
    }

    pub fn id(&self) -> &str {
        &self.instance.id
    }

    pub fn items(&self) -> &[u32] {
        &self.instance.items
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeDistribution {
    /// Discrete uniform on `[min_size, max_size]`.
    Uniform,
    /// Real-valued normal draw rounded to the nearest integer, redrawn until
    /// it falls within the bounds.
    TruncatedNormal { mean: f64, stddev: f64 },
}

impl Default for SizeDistribution {
    fn default() -> Self {
        SizeDistribution::Uniform
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_instances: usize,
    pub n_items: usize,
    pub min_size: u32,
    pub max_size: u32,
    pub bin_capacity: u32,
    #[serde(default)]
    pub distribution: SizeDistribution,
    pub balance: bool,
    pub seed: u64,
}

impl DatasetSpec {
    /// 2000 instances of 120 items.
    pub fn ds2(seed: u64) -> Self {
        DatasetSpec {
            n_instances: 2000,
            n_items: 120,
            min_size: 20,
            max_size: 100,
            bin_capacity: 150,
            distribution: SizeDistribution::Uniform,
            balance: true,
            seed,
        }
    }

    /// 2000 instances of 250 items.
    pub fn ds4(seed: u64) -> Self {
        DatasetSpec {
            n_items: 250,
            ..DatasetSpec::ds2(seed)
        }
    }

    pub fn bounds(&self) -> SizeBounds {
        SizeBounds {
            min_size: self.min_size,
            max_size: self.max_size,
        }
    }

    pub fn portfolio(&self) -> Portfolio {
        Portfolio::new(self.bin_capacity)
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        let bad = |m: &str| Err(InstanceError::InvalidSpec(m.to_string()));
        if self.n_instances == 0 {
            return bad("n_instances must be positive");
        }
        if self.n_items == 0 {
            return bad("n_items must be positive");
        }
        if self.bin_capacity == 0 {
            return bad("bin_capacity must be positive");
        }
        if self.min_size == 0 {
            return bad("min_size must be positive");
        }
        if self.min_size >= self.max_size {
            return bad("min_size must be smaller than max_size");
        }
        if self.max_size > self.bin_capacity {
            return bad("max_size must not exceed bin_capacity");
        }
        if self.balance && self.n_instances % 2 != 0 {
            return bad("n_instances must be even when balance is enabled");
        }
        if let SizeDistribution::TruncatedNormal { mean, stddev } = self.distribution {
            if !mean.is_finite() || !stddev.is_finite() || stddev <= 0.0 {
                return bad("truncated normal needs a finite mean and positive stddev");
            }
        }
        Ok(())
    }
}

fn draw_items(spec: &DatasetSpec, normal: Option<&Normal<f64>>, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let bounds = spec.bounds();
    (0..spec.n_items)
        .map(|_| match normal {
            None => rng.random_range(spec.min_size..=spec.max_size),
            Some(normal) => loop {
                let v = normal.sample(rng).round();
                if v >= bounds.min_size as f64 && v <= bounds.max_size as f64 {
                    break v as u32;
                }
            },
        })
        .collect()
}

/// Generates `spec.n_instances` labelled instances. Ties are discarded, and
/// with `balance` so are candidates whose winner's quota is already full.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<LabeledInstance>, InstanceError> {
    spec.validate()?;
    let normal = match spec.distribution {
        SizeDistribution::Uniform => None,
        SizeDistribution::TruncatedNormal { mean, stddev } => {
            Some(Normal::new(mean, stddev).map_err(|e| InstanceError::InvalidSpec(e.to_string()))?)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let portfolio = spec.portfolio();
    let quota = spec.n_instances / 2;
    let max_draws = 1000 * spec.n_instances as u64;

    let mut out = Vec::with_capacity(spec.n_instances);
    let (mut bf, mut ff) = (0usize, 0usize);
    let mut draws = 0u64;
    while out.len() < spec.n_instances {
        if draws == max_draws {
            return Err(InstanceError::GenerationExhausted {
                draws,
                bf,
                ff,
                target: spec.n_instances,
            });
        }
        draws += 1;
        let items = draw_items(spec, normal.as_ref(), &mut rng);
        let instance = Instance::new(out.len().to_string(), items);
        let Some(labeled) = LabeledInstance::label(instance, &portfolio)? else {
            continue;
        };
        let count = match labeled.winner {
            Solver::BestFit => &mut bf,
            Solver::FirstFit => &mut ff,
        };
        if spec.balance && *count >= quota {
            continue;
        }
        *count += 1;
        out.push(labeled);
    }
    Ok(out)
}

/// Re-runs the portfolio and checks the stored objectives and winner.
pub fn verify_labels(dataset: &[LabeledInstance], portfolio: &Portfolio) -> Result<(), InstanceError> {
    for (i, li) in dataset.iter().enumerate() {
        let outcome = portfolio.evaluate(li.items())?;
        let line = i + 1;
        if outcome.o_bf != li.o_bf {
            return Err(invariant(line, "o_bf", format!("stored {} but portfolio gives {}", li.o_bf, outcome.o_bf)));
        }
        if outcome.o_ff != li.o_ff {
            return Err(invariant(line, "o_ff", format!("stored {} but portfolio gives {}", li.o_ff, outcome.o_ff)));
        }
        if outcome.winner != Some(li.winner) {
            return Err(invariant(line, "winner", format!("stored {} but portfolio gives {:?}", li.winner, outcome.winner)));
        }
    }
    Ok(())
}

/// Splits `dataset` into instances the model classifies correctly and the rest.
pub fn filter_correctly_classified(
    dataset: &[LabeledInstance],
    model: &Model,
) -> Result<(Vec<LabeledInstance>, Vec<LabeledInstance>), InstanceError> {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for li in dataset {
        let verdict = model.predict(li.id(), li.items())?;
        if verdict.choice() == Some(li.winner) {
            kept.push(li.clone());
        } else {
            removed.push(li.clone());
        }
    }
    Ok((kept, removed))
}

/// A dataset file: the generating spec plus its labelled instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub instances: Vec<LabeledInstance>,
}

impl Dataset {
    pub fn generate(spec: DatasetSpec) -> Result<Self, InstanceError> {
        let instances = generate_dataset(&spec)?;
        Ok(Dataset { spec, instances })
    }

    pub fn bounds(&self) -> SizeBounds {
        self.spec.bounds()
    }

    pub fn portfolio(&self) -> Portfolio {
        self.spec.portfolio()
    }

    pub fn count_winners(&self) -> (usize, usize) {
        let bf = self.instances.iter().filter(|li| li.winner == Solver::BestFit).count();
        (bf, self.instances.len() - bf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), InstanceError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), InstanceError> {
        let header = SpecHeader { spec: self.spec.clone() };
        writeln!(w, "{}", serde_json::to_string(&header).expect("spec serializes"))?;
        for li in &self.instances {
            let record = DatasetRecord {
                id: &li.instance.id,
                items: &li.instance.items,
                o_bf: li.o_bf,
                o_ff: li.o_ff,
                winner: li.winner,
            };
            writeln!(w, "{}", serde_json::to_string(&record).expect("record serializes"))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InstanceError> {
        Dataset::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, InstanceError> {
        let mut spec: Option<DatasetSpec> = None;
        let mut instances = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| InstanceError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if spec.is_none() {
                let header: SpecHeader = serde_json::from_value(value).map_err(|e| InstanceError::Parse {
                    line: line_no,
                    message: format!("expected a spec header: {e}"),
                })?;
                header.spec.validate().map_err(|e| InstanceError::Invariant {
                    line: line_no,
                    field: "spec",
                    message: e.to_string(),
                })?;
                spec = Some(header.spec);
                continue;
            }
            let owned: OwnedRecord = serde_json::from_value(value).map_err(|e| InstanceError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let spec = spec.as_ref().expect("header parsed");
            instances.push(owned.into_labeled(line_no, spec)?);
        }
        let spec = spec.ok_or(InstanceError::Parse {
            line: 1,
            message: "missing spec header".into(),
        })?;
        Ok(Dataset { spec, instances })
    }
}

fn invariant(line: usize, field: &'static str, message: String) -> InstanceError {
    InstanceError::Invariant { line, field, message }
}

#[derive(Serialize, Deserialize)]
struct SpecHeader {
    spec: DatasetSpec,
}

#[derive(Serialize)]
struct DatasetRecord<'a> {
    id: &'a str,
    items: &'a [u32],
    o_bf: f64,
    o_ff: f64,
    winner: Solver,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OwnedRecord {
    id: String,
    items: Vec<u32>,
    o_bf: f64,
    o_ff: f64,
    winner: Solver,
}

impl OwnedRecord {
    fn into_labeled(self, line: usize, spec: &DatasetSpec) -> Result<LabeledInstance, InstanceError> {
        if self.items.is_empty() {
            return Err(invariant(line, "items", "empty item list".into()));
        }
        let bounds = spec.bounds();
        if let Some((j, s)) = self.items.iter().enumerate().find(|(_, &s)| !bounds.contains(s)) {
            return Err(invariant(
                line,
                "items",
                format!("item {j} has size {s} outside [{}, {}]", bounds.min_size, bounds.max_size),
            ));
        }
        for (field, v) in [("o_bf", self.o_bf), ("o_ff", self.o_ff)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invariant(line, field, format!("{v} is outside [0, 1]")));
            }
        }
        let expected = if self.o_bf > self.o_ff {
            Solver::BestFit
        } else if self.o_ff > self.o_bf {
            Solver::FirstFit
        } else {
            return Err(invariant(line, "winner", "tied objectives are not allowed".into()));
        };
        if expected != self.winner {
            return Err(invariant(
                line,
                "winner",
                format!("winner {} contradicts o_bf={} o_ff={}", self.winner, self.o_bf, self.o_ff),
            ));
        }
        Ok(LabeledInstance {
            instance: Instance::new(self.id, self.items),
            o_bf: self.o_bf,
            o_ff: self.o_ff,
            winner: self.winner,
        })
    }
}

/// Reads unlabelled `{"id", "items"}` lines.
pub fn read_raw_instances(r: impl BufRead) -> Result<Vec<Instance>, InstanceError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: Instance = serde_json::from_str(&line).map_err(|e| InstanceError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{ConstantBackend, FnBackend};

    fn small_spec(seed: u64) -> DatasetSpec {
        DatasetSpec {
            n_instances: 4,
            n_items: 120,
            ..DatasetSpec::ds2(seed)
        }
    }

    #[test]
    fn balanced_generation() {
        let ds = generate_dataset(&small_spec(7)).unwrap();
        assert_eq!(ds.len(), 4);
        let bf = ds.iter().filter(|li| li.winner == Solver::BestFit).count();
        assert_eq!(bf, 2);
        for li in &ds {
            assert_eq!(li.instance.n_items(), 120);
            assert!(li.items().iter().all(|&s| (20..=100).contains(&s)));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Dataset::generate(small_spec(11)).unwrap();
        let b = Dataset::generate(small_spec(11)).unwrap();
        let (mut wa, mut wb) = (Vec::new(), Vec::new());
        a.write_to(&mut wa).unwrap();
        b.write_to(&mut wb).unwrap();
        assert_eq!(wa, wb);
        let c = Dataset::generate(small_spec(12)).unwrap();
        assert_ne!(a.instances, c.instances);
    }

    #[test]
    fn truncated_normal_respects_bounds() {
        let spec = DatasetSpec {
            n_instances: 6,
            n_items: 50,
            distribution: SizeDistribution::TruncatedNormal { mean: 60.0, stddev: 30.0 },
            ..DatasetSpec::ds2(3)
        };
        let ds = generate_dataset(&spec).unwrap();
        assert!(ds.iter().flat_map(|li| li.items()).all(|&s| (20..=100).contains(&s)));
    }

    #[test]
    fn spec_validation() {
        let mut s = small_spec(1);
        s.n_instances = 3;
        assert!(matches!(generate_dataset(&s), Err(InstanceError::InvalidSpec(_))));
        let mut s = small_spec(1);
        s.max_size = 200;
        assert!(s.validate().is_err());
        let mut s = small_spec(1);
        s.min_size = 100;
        assert!(s.validate().is_err());
    }

    #[test]
    fn unsatisfiable_balance_exhausts() {
        // Every item > capacity / 2 so both heuristics always tie.
        let spec = DatasetSpec {
            n_instances: 2,
            n_items: 5,
            min_size: 80,
            max_size: 100,
            ..DatasetSpec::ds2(1)
        };
        match generate_dataset(&spec) {
            Err(InstanceError::GenerationExhausted { draws, .. }) => assert_eq!(draws, 2000),
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn labels_are_reproducible() {
        let ds = generate_dataset(&small_spec(5)).unwrap();
        verify_labels(&ds, &Portfolio::new(150)).unwrap();
    }

    #[test]
    fn filter_with_oracle_and_constant() {
        let ds = generate_dataset(&small_spec(9)).unwrap();
        let lookup: std::collections::HashMap<Vec<u32>, Solver> =
            ds.iter().map(|li| (li.items().to_vec(), li.winner)).collect();
        let oracle = Model::new(FnBackend::new(move |items: &[u32]| {
            Ok(if lookup[items] == Solver::BestFit { 1.0 } else { 0.0 })
        }));
        let (kept, removed) = filter_correctly_classified(&ds, &oracle).unwrap();
        assert_eq!(kept.len(), 4);
        assert!(removed.is_empty());

        let biased = Model::new(ConstantBackend::new(0.5 + 1e-6));
        let (kept, removed) = filter_correctly_classified(&ds, &biased).unwrap();
        assert!(kept.iter().all(|li| li.winner == Solver::BestFit));
        assert!(removed.iter().all(|li| li.winner == Solver::FirstFit));
        assert_eq!(kept.len() + removed.len(), ds.len());
    }

    #[test]
    fn round_trip_and_errors() {
        let ds = Dataset::generate(DatasetSpec { n_instances: 2, ..small_spec(2) }).unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        assert_eq!(Dataset::read_from(&buf[..]).unwrap(), ds);

        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        let bad_size = format!("{header}\n{{\"id\":\"x\",\"items\":[150,40],\"o_bf\":0.5,\"o_ff\":0.4,\"winner\":\"BF\"}}\n");
        match Dataset::read_from(bad_size.as_bytes()) {
            Err(InstanceError::Invariant { line: 2, field: "items", .. }) => {}
            other => panic!("{other:?}"),
        }
        let missing = format!("{header}\n{{\"id\":\"x\",\"o_bf\":0.5,\"o_ff\":0.4,\"winner\":\"BF\"}}\n");
        match Dataset::read_from(missing.as_bytes()) {
            Err(InstanceError::Parse { line: 2, message }) => assert!(message.contains("items")),
            other => panic!("{other:?}"),
        }
        let tie = format!("{header}\n{{\"id\":\"x\",\"items\":[40],\"o_bf\":0.5,\"o_ff\":0.5,\"winner\":\"BF\"}}\n");
        assert!(matches!(
            Dataset::read_from(tie.as_bytes()),
            Err(InstanceError::Invariant { field: "winner", .. })
        ));
    }
}
