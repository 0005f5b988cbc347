//! Command-line driver. Exit codes: 0 success, 1 runtime or backend failure,
//! 2 usage or configuration error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    campaign_summary, categorize, fitness_correlations, instance_mask_summaries, unique_mask_counts, AnalysisError,
    CampaignSummary, CategoryShare, FitnessCorrelations, UniqueMaskCounts,
};
use crate::attack::{apply_mask, attack_campaign, AttackError, CampaignResult, EaConfig, ProbeConfig, Problem};
use crate::classifier::{
    load_weights, train_surrogate, ClassifierError, ExternalBackend, ExternalConfig, GruBackend, Model,
    SurrogateConfig, SurrogateModel,
};
use crate::distribution_check::ks_two_sample;
use crate::export::{export_plot_data, format_float, PlotKind};
use crate::instances::{
    filter_correctly_classified, read_raw_instances, Dataset, DatasetSpec, InstanceError, LabeledInstance,
    SizeDistribution,
};

pub const SEED_ENV: &str = "BINPACK_ADVERSARY_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn instance_err(e: InstanceError) -> CliError {
    match e {
        InstanceError::InvalidSpec(_) | InstanceError::Parse { .. } | InstanceError::Invariant { .. } => config_err(e),
        _ => runtime_err(e),
    }
}

fn attack_err(e: AttackError) -> CliError {
    match e {
        AttackError::InvalidConfig(_) => config_err(e),
        _ => runtime_err(e),
    }
}

#[derive(Debug, Parser)]
#[command(name = "binpack-adversary", version, about = "Adversarial mask search against BF/FF selectors")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled dataset.
    Generate(GenerateArgs),
    /// Label raw `{"id","items"}` lines with the BF/FF winner.
    Label(LabelArgs),
    /// Keep only instances a model classifies correctly.
    Filter(FilterArgs),
    /// Fit the built-in surrogate selector on a dataset.
    TrainSurrogate(TrainArgs),
    /// Random-mask fragility probe only.
    Probe(CampaignArgs),
    /// Probe, then run the EA on every non-fragile instance.
    Attack(CampaignArgs),
    /// Summarise a finished campaign.
    Analyze(AnalyzeArgs),
    /// Write plot-ready CSV for a finished campaign.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DistributionArg {
    Uniform,
    Normal,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 120)]
    pub items: usize,
    #[arg(long, default_value_t = 20)]
    pub min_size: u32,
    #[arg(long, default_value_t = 100)]
    pub max_size: u32,
    #[arg(long, default_value_t = 150)]
    pub capacity: u32,
    #[arg(long, value_enum, default_value = "uniform")]
    pub distribution: DistributionArg,
    #[arg(long, default_value_t = 60.0)]
    pub mean: f64,
    #[arg(long, default_value_t = 20.0)]
    pub stddev: f64,
    /// Do not enforce equal BF/FF counts.
    #[arg(long)]
    pub unbalanced: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub min_size: u32,
    #[arg(long, default_value_t = 100)]
    pub max_size: u32,
    #[arg(long, default_value_t = 150)]
    pub capacity: u32,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ModelArgs {
    /// GRU weights JSON.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Trained surrogate model JSON.
    #[arg(long)]
    pub surrogate: Option<PathBuf>,
    /// External endpoint config JSON.
    #[arg(long)]
    pub external: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Surrogate training config JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CampaignArgs {
    /// Campaign config JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub campaign_id: Option<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub stop_on_first_hit: bool,
    /// Leave the timestamp out of file headers.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub campaign: CampaignArgs,
    /// Also run the KS check on every archived (original, perturbed) pair.
    #[arg(long)]
    pub ks: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub campaign: CampaignArgs,
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    #[arg(long)]
    pub instance: Option<String>,
    /// Defaults to `<output_dir>/<campaign-id>.<kind>.csv`.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Path(PathBuf),
    Spec(DatasetSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSource {
    /// Load this model instead of training one.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub train: SurrogateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Native { weights: PathBuf },
    Surrogate(SurrogateSource),
    External(ExternalConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub campaign_id: String,
    pub dataset: DatasetSource,
    pub model: ModelSource,
    #[serde(default)]
    pub ea: EaConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Master seed for probe and EA streams.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}

impl CampaignConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    /// Applies flag overrides and resolves the seed: flag, then
    /// `BINPACK_ADVERSARY_SEED`, then the file's `seed`, then 0.
    pub fn resolve(mut self, args: &CampaignArgs, env_seed: Option<&str>) -> Result<Self, CliError> {
        if let Some(id) = &args.campaign_id {
            self.campaign_id = id.clone();
        }
        if let Some(dir) = &args.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(r) = args.runs {
            self.ea.runs_per_instance = r;
        }
        if let Some(g) = args.generations {
            self.ea.generations = g;
        }
        if let Some(p) = args.population {
            self.ea.population_size = p;
        }
        if args.stop_on_first_hit {
            self.ea.stop_on_first_hit = true;
        }
        let env_seed = env_seed.map(parse_seed_var).transpose()?;
        let seed = args.seed.or(env_seed).or(self.seed).unwrap_or(0);
        self.seed = Some(seed);
        self.ea.seed = seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.campaign_id.is_empty() || self.campaign_id.contains(['/', '\\']) {
            return Err(config_err("campaign_id must be a non-empty file-name component"));
        }
        self.ea.validate().map_err(config_err)?;
        if !(0.0..=1.0).contains(&self.probe.p_init) {
            return Err(config_err("probe.p_init must lie in [0, 1]"));
        }
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(config_err(format!("{what} {} does not exist", p.display())))
            }
        };
        match &self.dataset {
            DatasetSource::Path(p) => must_exist(p, "dataset")?,
            DatasetSource::Spec(s) => s.validate().map_err(config_err)?,
        }
        match &self.model {
            ModelSource::Native { weights } => must_exist(weights, "weights file")?,
            ModelSource::Surrogate(SurrogateSource { model: Some(p), .. }) => must_exist(p, "surrogate model")?,
            _ => {}
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn path(&self, suffix: &str) -> PathBuf {
        self.output_dir.join(format!("{}.{suffix}", self.campaign_id))
    }
}

#[derive(Serialize)]
struct Header<'a> {
    config: &'a CampaignConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp_unix: Option<u64>,
}

fn header_line(config: &CampaignConfig, timestamp: bool) -> String {
    let ts = timestamp.then(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()));
    serde_json::to_string(&Header { config, timestamp_unix: ts }).expect("header serializes")
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let wrap = |e: std::io::Error| runtime_err(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
    body(&mut w).map_err(wrap)?;
    w.flush().map_err(wrap)
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn log(msg: impl std::fmt::Display) {
    eprintln!("binpack-adversary: {msg}");
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            log(format!("error: {e}"));
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.jobs {
        Some(0) => Err(config_err("--jobs must be positive")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(runtime_err)?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => cmd_generate(a),
        Command::Label(a) => cmd_label(a),
        Command::Filter(a) => cmd_filter(a),
        Command::TrainSurrogate(a) => cmd_train(a),
        Command::Probe(a) => cmd_campaign(a, false),
        Command::Attack(a) => cmd_campaign(a, true),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Export(a) => cmd_export(a),
    }
}

fn parse_seed_var(s: &str) -> Result<u64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| config_err(format!("{SEED_ENV}={s:?} is not an unsigned integer")))
}

fn parse_env_seed() -> Result<Option<u64>, CliError> {
    env_seed().as_deref().map(parse_seed_var).transpose()
}

fn cmd_generate(a: GenerateArgs) -> Result<(), CliError> {
    let seed = match a.seed {
        Some(s) => s,
        None => parse_env_seed()?.unwrap_or(0),
    };
    let spec = DatasetSpec {
        n_instances: a.n,
        n_items: a.items,
        min_size: a.min_size,
        max_size: a.max_size,
        bin_capacity: a.capacity,
        distribution: match a.distribution {
            DistributionArg::Uniform => SizeDistribution::Uniform,
            DistributionArg::Normal => SizeDistribution::TruncatedNormal {
                mean: a.mean,
                stddev: a.stddev,
            },
        },
        balance: !a.unbalanced,
        seed,
    };
    spec.validate().map_err(config_err)?;
    let ds = Dataset::generate(spec).map_err(instance_err)?;
    ds.save(&a.output).map_err(runtime_err)?;
    let (bf, ff) = ds.count_winners();
    println!("{} instances written to {} (BF {bf}, FF {ff})", ds.instances.len(), a.output.display());
    Ok(())
}

fn cmd_label(a: LabelArgs) -> Result<(), CliError> {
    let raw = read_raw_instances(open(&a.input)?).map_err(instance_err)?;
    let first_len = raw.first().map_or(0, |i| i.items.len());
    let mut spec = DatasetSpec {
        n_instances: raw.len().max(1),
        n_items: first_len.max(1),
        min_size: a.min_size,
        max_size: a.max_size,
        bin_capacity: a.capacity,
        distribution: SizeDistribution::Uniform,
        balance: false,
        seed: 0,
    };
    spec.validate().map_err(config_err)?;
    let bounds = spec.bounds();
    let portfolio = spec.portfolio();
    let mut instances = Vec::new();
    let mut ties = 0;
    for inst in raw {
        if let Some(s) = inst.items.iter().find(|&&s| !bounds.contains(s)) {
            return Err(config_err(format!(
                "instance {}: item size {s} outside [{}, {}]",
                inst.id, bounds.min_size, bounds.max_size
            )));
        }
        match LabeledInstance::label(inst, &portfolio).map_err(config_err)? {
            Some(li) => instances.push(li),
            None => ties += 1,
        }
    }
    if instances.is_empty() {
        return Err(runtime_err("no untied instances to label"));
    }
    spec.n_instances = instances.len();
    let ds = Dataset { spec, instances };
    ds.save(&a.output).map_err(runtime_err)?;
    let (bf, ff) = ds.count_winners();
    println!("{} labelled (BF {bf}, FF {ff}), {ties} ties dropped", ds.instances.len());
    Ok(())
}

fn model_from_args(m: &ModelArgs) -> Result<Model, CliError> {
    if let Some(p) = &m.weights {
        let w = load_weights(p).map_err(config_err)?;
        return Ok(Model::new(GruBackend::new(&w).map_err(config_err)?));
    }
    if let Some(p) = &m.surrogate {
        let s = SurrogateModel::load(p).map_err(config_err)?;
        return Ok(Model::new(s.into_backend().map_err(config_err)?));
    }
    let p = m.external.as_ref().expect("clap enforces one model source");
    let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
    let cfg: ExternalConfig = serde_json::from_str(&text).map_err(config_err)?;
    connect_external(&cfg)
}

fn connect_external(cfg: &ExternalConfig) -> Result<Model, CliError> {
    let backend = ExternalBackend::connect(cfg).map_err(|e| runtime_err(format!("external model: {e}")))?;
    Ok(Model::new(backend))
}

fn cmd_filter(a: FilterArgs) -> Result<(), CliError> {
    let ds = Dataset::load(&a.dataset).map_err(instance_err)?;
    let model = model_from_args(&a.model)?;
    let (kept, removed) = filter_correctly_classified(&ds.instances, &model).map_err(runtime_err)?;
    if kept.is_empty() {
        return Err(runtime_err("the model misclassifies every instance"));
    }
    // The header keeps the generating spec; records are the kept subset.
    let out = Dataset {
        spec: ds.spec,
        instances: kept,
    };
    out.save(&a.output).map_err(runtime_err)?;
    println!("kept {}, removed {}", out.instances.len(), removed.len());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let ds = Dataset::load(&a.dataset).map_err(instance_err)?;
    let mut cfg: SurrogateConfig = match &a.config {
        Some(p) => serde_json::from_reader(open(p)?).map_err(config_err)?,
        None => SurrogateConfig::default(),
    };
    if let Some(h) = a.hidden {
        cfg.hidden_dim = h;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let trained = train_surrogate(&ds.instances, ds.bounds(), ds.spec.bin_capacity, &cfg).map_err(|e| match e {
        ClassifierError::Schema { .. } => config_err(e),
        _ => runtime_err(e),
    })?;
    trained.model.save(&a.output).map_err(runtime_err)?;
    println!(
        "training accuracy {}, final loss {}",
        format_float(trained.training_accuracy),
        format_float(trained.final_loss)
    );
    Ok(())
}

fn load_config(args: &CampaignArgs) -> Result<CampaignConfig, CliError> {
    CampaignConfig::load(&args.config)?.resolve(args, env_seed().as_deref())
}

fn build_model(cfg: &CampaignConfig, ds: &Dataset) -> Result<Model, CliError> {
    match &cfg.model {
        ModelSource::Native { weights } => {
            let w = load_weights(weights).map_err(config_err)?;
            Ok(Model::new(GruBackend::new(&w).map_err(config_err)?))
        }
        ModelSource::Surrogate(SurrogateSource { model: Some(p), .. }) => {
            let s = SurrogateModel::load(p).map_err(config_err)?;
            Ok(Model::new(s.into_backend().map_err(config_err)?))
        }
        ModelSource::Surrogate(SurrogateSource { model: None, train }) => {
            let trained = train_surrogate(&ds.instances, ds.bounds(), ds.spec.bin_capacity, train)
                .map_err(|e| runtime_err(format!("surrogate training: {e}")))?;
            log(format!(
                "surrogate trained, accuracy {}",
                format_float(trained.training_accuracy)
            ));
            trained.model.save(cfg.path("surrogate.json")).map_err(runtime_err)?;
            Ok(Model::new(trained.model.into_backend().map_err(runtime_err)?))
        }
        ModelSource::External(ext) => connect_external(ext),
    }
}

fn load_dataset(cfg: &CampaignConfig) -> Result<Dataset, CliError> {
    match &cfg.dataset {
        DatasetSource::Path(p) => Dataset::load(p).map_err(instance_err),
        DatasetSource::Spec(s) => Dataset::generate(s.clone()).map_err(instance_err),
    }
}

fn cmd_campaign(args: CampaignArgs, run_ea: bool) -> Result<(), CliError> {
    let cfg = load_config(&args)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(runtime_err)?;
    let ds = load_dataset(&cfg)?;
    let model = build_model(&cfg, &ds)?;
    let (kept, removed) = filter_correctly_classified(&ds.instances, &model).map_err(runtime_err)?;
    log(format!("{} correctly classified, {} removed", kept.len(), removed.len()));
    let problem = Problem::new(ds.bounds(), ds.spec.bin_capacity);
    let ea = run_ea.then_some(&cfg.ea);
    let result = attack_campaign(&kept, &model, problem, &cfg.probe, cfg.seed(), ea).map_err(attack_err)?;

    let header = header_line(&cfg, !args.no_timestamp);
    let attacked = Dataset {
        spec: ds.spec.clone(),
        instances: kept,
    };
    write_file(&cfg.path("dataset.jsonl"), |w| {
        attacked
            .write_to(w)
            .map_err(|e| std::io::Error::other(e.to_string()))
    })?;
    write_file(&cfg.path("probe.jsonl"), |w| {
        writeln!(w, "{header}")?;
        result.write_probes(w)
    })?;
    write_file(&cfg.path("campaign.jsonl"), |w| {
        writeln!(w, "{header}")?;
        result.write_runs(w)
    })?;
    write_file(&cfg.path("archive.jsonl"), |w| {
        writeln!(w, "{header}")?;
        result.write_archive(w)
    })?;
    let fragile = result.probes.iter().filter(|p| p.fragile).count();
    println!(
        "{}: {} probed, {} fragile, {} EA runs, {} archived masks, {} model queries",
        cfg.campaign_id,
        result.probes.len(),
        fragile,
        result.runs.len(),
        result.archive.len(),
        model.total_queries()
    );
    Ok(())
}

/// Reads the files written by `probe`/`attack` for this config.
pub fn load_campaign(cfg: &CampaignConfig) -> Result<(Dataset, CampaignResult), CliError> {
    let ds = Dataset::load(cfg.path("dataset.jsonl")).map_err(instance_err)?;
    let campaign = CampaignResult::read_from(
        open(&cfg.path("probe.jsonl"))?,
        open(&cfg.path("campaign.jsonl"))?,
        open(&cfg.path("archive.jsonl"))?,
    )
    .map_err(config_err)?;
    Ok((ds, campaign))
}

#[derive(Serialize)]
struct AnalysisReport<'a> {
    config: &'a CampaignConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp_unix: Option<u64>,
    probed: usize,
    fragile: usize,
    total_evaluations: u64,
    summary: Option<CampaignSummary>,
    categories: Vec<CategoryShare>,
    unique_masks: Option<UniqueMaskCounts>,
    correlations: FitnessCorrelations,
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.campaign)?;
    let (ds, campaign) = load_campaign(&cfg)?;
    let summary = match campaign_summary(&campaign) {
        Ok(s) => Some(s),
        Err(AnalysisError::EmptyCampaign) => None,
        Err(e) => return Err(runtime_err(e)),
    };
    let summaries = instance_mask_summaries(&ds.instances, &campaign, ds.bounds()).map_err(runtime_err)?;
    let report = AnalysisReport {
        config: &cfg,
        timestamp_unix: (!a.campaign.no_timestamp)
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())),
        probed: campaign.probes.len(),
        fragile: campaign.probes.iter().filter(|p| p.fragile).count(),
        total_evaluations: campaign.total_evaluations(),
        summary,
        categories: categorize(&campaign).shares,
        unique_masks: unique_mask_counts(&campaign),
        correlations: fitness_correlations(&summaries),
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&cfg.path("summary.json"), |w| writeln!(w, "{text}"))?;
    match &report.summary {
        Some(s) => println!(
            "success rate {}% of {} attacked, queries {}, T1/T2/T3 {}/{}/{}",
            format_float(s.success_rate),
            s.attacked,
            s.queries.map_or("-".into(), format_float),
            format_float(s.t1),
            format_float(s.t2),
            format_float(s.t3)
        ),
        None => println!("no EA-attacked instances ({} probed, {} fragile)", report.probed, report.fragile),
    }

    if a.ks {
        let items: std::collections::HashMap<&str, &LabeledInstance> =
            ds.instances.iter().map(|li| (li.id(), li)).collect();
        let mut rows = Vec::new();
        let mut index: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
        for (id, mask, _) in campaign.archive.journal() {
            let li = items
                .get(id)
                .ok_or_else(|| config_err(format!("archived instance {id} is not in the dataset")))?;
            let perturbed = apply_mask(&li.instance, mask, ds.bounds()).map_err(runtime_err)?;
            let r = ks_two_sample(li.items(), &perturbed.items).map_err(runtime_err)?;
            let k = index.entry(id).or_default();
            rows.push((format!("{id}:{k}"), r));
            *k += 1;
        }
        let path = cfg.path("ks.csv");
        let rejected = rows.iter().filter(|(_, r)| r.reject_at_0_05).count();
        write_file(&path, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["pair_id", "statistic", "p_value", "reject"])?;
            for (id, r) in &rows {
                c.write_record([
                    id.clone(),
                    format_float(r.statistic),
                    format_float(r.p_value),
                    r.reject_at_0_05.to_string(),
                ])?;
            }
            c.flush()
        })?;
        println!("KS: {rejected} of {} pairs rejected at 0.05", rows.len());
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.campaign)?;
    let (ds, campaign) = load_campaign(&cfg)?;
    let path = a.output.clone().unwrap_or_else(|| cfg.output_dir.join(a.kind.file_name(&cfg.campaign_id)));
    let file = File::create(&path).map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
    export_plot_data(&campaign, &ds.instances, ds.bounds(), a.kind, a.instance.as_deref(), BufWriter::new(file))
        .map_err(runtime_err)?;
    println!("wrote {}", path.display());
    Ok(())
}
