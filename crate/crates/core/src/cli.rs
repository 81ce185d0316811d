//! Command-line front end. Every pipeline stage is a subcommand reading and
//! writing the library's file formats; paths default to files in the data
//! directory (`--data-dir` or `POMR_DATA_DIR`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::baseline::{medication_coverage, BaselineScorer, OntologyMaps};
use crate::code::RelationKind;
use crate::embedding::{
    intersection_csv, train_skipgram, vocab_intersection, EmbeddingTable, SkipGramConfig, SourceTag,
};
use crate::encounters::{
    EncounterStore, FeatureSet, ImportanceIndex, ImportanceOptions, IngestOptions,
    DEFAULT_SPECIALTY_VOCAB_SIZE,
};
use crate::error::{Error, Result};
use crate::eval::{
    agreement, evaluate, frequency_bin_report, frequency_bins_csv, per_problem_csv,
    per_problem_report, EvalOptions, TiePolicy,
};
use crate::kb::{
    read_audit_log, split_by_problem, split_random, KnowledgeBase, Problem, Split, SplitPart,
    DEFAULT_FRACTIONS,
};
use crate::model::{
    initialize, model_targets, train, Ablation, Checkpoint, History, InitConfig, InitSource,
    ModelParams, ModelScorer, NegativeStrategy, TrainConfig,
};
use crate::service::{
    round1_candidates, round2_candidates, serve, ServiceConfig, ROUND1_TOP_N, ROUND2_TOP_N,
};
use crate::synth::{generate, write_dir, PlantSpec};

pub const DATA_DIR_ENV: &str = "POMR_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "pomr",
    version,
    about = "Problem-oriented knowledge base completion"
)]
pub struct Cli {
    /// Print a machine-readable JSON summary instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Write artifacts only; print no summary.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for feature extraction and evaluation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file whose sections replace the matching flag values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Default location of inputs and outputs.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = ".")]
    pub data_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate planted synthetic encounters, KB and ontology maps.
    Synth(SynthArgs),
    /// Validate an encounter log.
    Ingest(IngestArgs),
    /// Build the target vocabulary.
    Vocab(VocabArgs),
    /// Compute co-occurrence and specialty features.
    Features(FeaturesArgs),
    /// Train skip-gram code embeddings on the encounter log.
    TrainEmbeddings(EmbeddingArgs),
    /// Round-one candidate lists ranked by importance.
    Candidates(CandidatesArgs),
    /// Initialize model parameters.
    InitModel(InitArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Rank held-out triplets with a model.
    Eval(EvalArgs),
    /// Rank held-out triplets with the ontology baseline.
    BaselineEval(BaselineArgs),
    /// Round-two model suggestions, excluding annotated pairs.
    Suggest(SuggestArgs),
    /// Agreement between two annotation logs.
    Kappa(KappaArgs),
    /// Vocabulary coverage of an external embedding table.
    Intersect(IntersectArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_problems: Option<usize>,
    #[arg(long)]
    pub n_targets: Option<usize>,
    #[arg(long)]
    pub n_patients: Option<usize>,
    #[arg(long)]
    pub p_in: Option<f64>,
    #[arg(long)]
    pub p_out: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub encounters: Option<PathBuf>,
    /// Keep orders whose linked diagnosis is missing from the encounter.
    #[arg(long)]
    pub lenient: bool,
    /// Write the normalized, sorted log here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    #[arg(long)]
    pub encounters: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub min_count: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub encounters: Option<PathBuf>,
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SPECIALTY_VOCAB_SIZE)]
    pub specialty_vocab: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-pair features as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbeddingArgs {
    #[arg(long)]
    pub encounters: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub min_count: u64,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub negative: Option<usize>,
    /// Lock-free multithreaded updates (not reproducible).
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CandidatesArgs {
    #[arg(long)]
    pub encounters: Option<PathBuf>,
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long, default_value_t = ROUND1_TOP_N)]
    pub top_n: usize,
    /// Count encounters without any diagnosis code in the importance strata.
    #[arg(long)]
    pub include_undiagnosed: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What the frequency weights of problem-definition codes count.
#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum WeightArg {
    #[default]
    Occurrences,
    Patients,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Medication,
    Procedure,
    Lab,
}

impl From<KindArg> for RelationKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Medication => RelationKind::Medication,
            KindArg::Procedure => RelationKind::Procedure,
            KindArg::Lab => RelationKind::Lab,
        }
    }
}

fn kinds(k: Option<KindArg>) -> Vec<RelationKind> {
    k.map_or(RelationKind::ALL.to_vec(), |k| vec![k.into()])
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Random,
    External,
    SiteSpecific,
    Combined,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long)]
    pub encounters: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "random")]
    pub source: SourceArg,
    /// External embedding table (text format).
    #[arg(long)]
    pub external: Option<PathBuf>,
    /// Site-trained embedding table (text format).
    #[arg(long)]
    pub internal: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = crate::embedding::DEFAULT_KNN_K)]
    pub knn_k: usize,
    #[arg(long, value_enum, default_value_t = WeightArg::Occurrences)]
    pub weight_by: WeightArg,
    #[arg(long, default_value_t = 1)]
    pub min_count: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Random,
    Problem,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_enum, default_value = "random")]
    pub split: SplitArg,
    /// Held-out problems for validation (problem split).
    #[arg(long, default_value_t = 5)]
    pub val_problems: usize,
    /// Held-out problems for test (problem split).
    #[arg(long, default_value_t = 5)]
    pub test_problems: usize,
}

impl SplitArgs {
    fn make(&self, kb: &KnowledgeBase, seed: u64) -> Result<Split> {
        match self.split {
            SplitArg::Random => split_random(kb, DEFAULT_FRACTIONS, seed),
            SplitArg::Problem => split_by_problem(kb, self.val_problems, self.test_problems, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AblationArg {
    Frozen,
    ProblemOnly,
    RelationOnly,
    RelationPlusTarget,
    Full,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Frozen => Ablation::Frozen,
            AblationArg::ProblemOnly => Ablation::ProblemOnly,
            AblationArg::RelationOnly => Ablation::RelationOnly,
            AblationArg::RelationPlusTarget => Ablation::RelationPlusTarget,
            AblationArg::Full => Ablation::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NegativeArg {
    Annotated,
    RandomVocab,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Initial parameters from `init-model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum)]
    pub ablation: Option<AblationArg>,
    #[arg(long)]
    pub no_features: bool,
    #[arg(long, value_enum)]
    pub negatives: Option<NegativeArg>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PartArg {
    Train,
    Validation,
    Test,
}

impl From<PartArg> for SplitPart {
    fn from(p: PartArg) -> Self {
        match p {
            PartArg::Train => SplitPart::Train,
            PartArg::Validation => SplitPart::Validation,
            PartArg::Test => SplitPart::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Strict,
    Median,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// A checkpoint from `train` or bare parameters from `init-model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Score bare parameters without the feature path.
    #[arg(long)]
    pub no_features: bool,
    /// Used when the model file carries no split.
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub part: PartArg,
    #[arg(long, value_enum, default_value = "strict")]
    pub policy: PolicyArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Hits@5 per problem and kind.
    #[arg(long)]
    pub per_problem_csv: Option<PathBuf>,
    /// Metrics by log-frequency bin; needs the encounter log for counts.
    #[arg(long)]
    pub freq_bins_csv: Option<PathBuf>,
    #[arg(long)]
    pub encounters: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Directory holding the four map CSVs.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub part: PartArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SuggestArgs {
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long, default_value_t = ROUND2_TOP_N)]
    pub top_n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KappaArgs {
    /// Annotation log (JSONL) of the first annotator.
    pub a: PathBuf,
    /// Annotation log (JSONL) of the second annotator.
    pub b: PathBuf,
}

#[derive(Debug, Args)]
pub struct IntersectArgs {
    #[arg(long)]
    pub encounters: Option<PathBuf>,
    #[arg(long)]
    pub external: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_count: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: std::net::SocketAddr,
    #[arg(long, default_value_t = 25)]
    pub snapshot_every: usize,
}

/// Optional sections of the `--config` file.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub synth: Option<PlantSpec>,
    pub train: Option<TrainConfig>,
    pub skipgram: Option<SkipGramConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

struct Ctx {
    seed: u64,
    threads: Option<usize>,
    data_dir: PathBuf,
    file: FileConfig,
}

impl Ctx {
    fn path(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.data_dir.join(default))
    }

    fn kb(&self, given: &Option<PathBuf>) -> Result<KnowledgeBase> {
        KnowledgeBase::load(self.path(given, "kb.json"))
    }

    fn store(&self, given: &Option<PathBuf>) -> Result<EncounterStore> {
        EncounterStore::ingest(
            self.path(given, "encounters.jsonl"),
            IngestOptions::default(),
        )
    }

    fn features(&self, given: &Option<PathBuf>) -> Result<FeatureSet> {
        FeatureSet::load(self.path(given, "features.json"))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// A model file is either a checkpoint or bare parameters.
fn load_model(path: &Path) -> Result<(ModelParams, Option<Checkpoint>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match Checkpoint::from_json(&text) {
        Ok(c) => Ok((c.params.clone(), Some(c))),
        Err(_) => Ok((serde_json::from_str(&text)?, None)),
    }
}

/// Parse `argv` and run. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed,
        threads: cli.threads,
        data_dir: cli.data_dir,
        file,
    };
    let summary = match cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a)?,
        Command::Ingest(a) => cmd_ingest(&ctx, a)?,
        Command::Vocab(a) => cmd_vocab(&ctx, a)?,
        Command::Features(a) => cmd_features(&ctx, a)?,
        Command::TrainEmbeddings(a) => cmd_embeddings(&ctx, a)?,
        Command::Candidates(a) => cmd_candidates(&ctx, a)?,
        Command::InitModel(a) => cmd_init(&ctx, a)?,
        Command::Train(a) => cmd_train(&ctx, a)?,
        Command::Eval(a) => cmd_eval(&ctx, a)?,
        Command::BaselineEval(a) => cmd_baseline(&ctx, a)?,
        Command::Suggest(a) => cmd_suggest(&ctx, a)?,
        Command::Kappa(a) => cmd_kappa(a)?,
        Command::Intersect(a) => cmd_intersect(&ctx, a)?,
        Command::Serve(a) => cmd_serve(&ctx, a)?,
    };
    if cli.quiet {
    } else if cli.json {
        print!("{}", pretty(&summary));
    } else if let Value::Object(m) = summary {
        for (k, v) in m {
            match v {
                Value::String(s) => println!("{k}: {s}"),
                other => println!("{k}: {other}"),
            }
        }
    }
    Ok(())
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Result<Value> {
    let mut spec = ctx.file.synth.clone().unwrap_or_else(|| {
        let d = PlantSpec::default();
        PlantSpec {
            n_problems: a.n_problems.unwrap_or(d.n_problems),
            n_targets_per_kind: a.n_targets.unwrap_or(d.n_targets_per_kind),
            n_patients: a.n_patients.unwrap_or(d.n_patients),
            p_in: a.p_in.unwrap_or(d.p_in),
            p_out: a.p_out.unwrap_or(d.p_out),
            ..d
        }
    });
    spec.seed = ctx.seed;
    let out = a.out.unwrap_or_else(|| ctx.data_dir.clone());
    let data = generate(&spec)?;
    write_dir(&data, &out)?;
    Ok(json!({
        "out": out.display().to_string(),
        "encounters": data.store.len(),
        "patients": data.store.n_patients(),
        "problems": data.kb.problem_ids().len(),
        "triplets": data.kb.triplets().len(),
    }))
}

fn cmd_ingest(ctx: &Ctx, a: IngestArgs) -> Result<Value> {
    let path = ctx.path(&a.encounters, "encounters.jsonl");
    let store = EncounterStore::ingest(
        &path,
        IngestOptions {
            strict_links: !a.lenient,
        },
    )?;
    for w in store.warnings() {
        log::warn!("{w}");
    }
    if let Some(out) = &a.out {
        write(out, &store.to_jsonl())?;
    }
    Ok(json!({
        "encounters": store.len(),
        "patients": store.n_patients(),
        "warnings": store.warnings(),
    }))
}

fn cmd_vocab(ctx: &Ctx, a: VocabArgs) -> Result<Value> {
    let store = ctx.store(&a.encounters)?;
    let vocab = store.build_vocabulary(a.min_count);
    let out = ctx.path(&a.out, "vocab.json");
    write(&out, &pretty(&vocab))?;
    let sizes: BTreeMap<RelationKind, usize> = RelationKind::ALL
        .iter()
        .map(|&k| (k, vocab.len(k)))
        .collect();
    Ok(
        json!({"out": out.display().to_string(), "targets": sizes, "diagnoses": vocab.diagnoses.len()}),
    )
}

fn cmd_features(ctx: &Ctx, a: FeaturesArgs) -> Result<Value> {
    let store = ctx.store(&a.encounters)?;
    let kb = ctx.kb(&a.kb)?;
    let problems: Vec<&Problem> = kb.problems().collect();
    let features = FeatureSet::build(&store, &problems, a.specialty_vocab);
    let out = ctx.path(&a.out, "features.json");
    features.save(&out)?;
    if let Some(csv) = &a.csv {
        let file = std::fs::File::create(csv).map_err(|e| Error::io(csv, e))?;
        features.write_csv(&kb.problem_ids(), file)?;
    }
    Ok(json!({
        "out": out.display().to_string(),
        "problems": problems.len(),
        "specialty_dim": features.specialty_dim(),
    }))
}

fn cmd_embeddings(ctx: &Ctx, a: EmbeddingArgs) -> Result<Value> {
    let store = ctx.store(&a.encounters)?;
    let vocab = store.build_vocabulary(a.min_count);
    let base = ctx.file.skipgram.clone().unwrap_or_default();
    let cfg = SkipGramConfig {
        dim: a.dim.unwrap_or(base.dim),
        epochs: a.epochs.unwrap_or(base.epochs),
        negative: a.negative.unwrap_or(base.negative),
        seed: ctx.seed,
        threads: if a.parallel {
            ctx.threads.unwrap_or(4)
        } else {
            1
        },
        ..base
    };
    let table = train_skipgram(&store, &vocab, &cfg)?;
    let out = ctx.path(&a.out, "embeddings.txt");
    table.save(&out)?;
    Ok(json!({"out": out.display().to_string(), "tokens": table.len(), "dim": table.dim()}))
}

fn selected_problems<'k>(kb: &'k KnowledgeBase, id: &Option<String>) -> Result<Vec<&'k Problem>> {
    match id {
        Some(id) => Ok(vec![kb
            .problem(id)
            .ok_or_else(|| Error::UnknownProblem(id.clone()))?]),
        None => Ok(kb.problems().collect()),
    }
}

fn cmd_candidates(ctx: &Ctx, a: CandidatesArgs) -> Result<Value> {
    let store = ctx.store(&a.encounters)?;
    let kb = ctx.kb(&a.kb)?;
    let vocab = store.build_vocabulary(1);
    let index = ImportanceIndex::new(
        &store,
        ImportanceOptions {
            require_diagnosis: !a.include_undiagnosed,
        },
    );
    let mut out = BTreeMap::new();
    for p in selected_problems(&kb, &a.problem)? {
        let row: BTreeMap<RelationKind, _> = kinds(a.kind)
            .into_iter()
            .map(|k| (k, round1_candidates(&index, &vocab, p, k, a.top_n)))
            .collect();
        out.insert(p.id.clone(), row);
    }
    let path = ctx.path(&a.out, "candidates.json");
    write(&path, &pretty(&out))?;
    Ok(json!({"out": path.display().to_string(), "problems": out.len()}))
}

fn cmd_init(ctx: &Ctx, a: InitArgs) -> Result<Value> {
    let kb = ctx.kb(&a.kb)?;
    let store = ctx.store(&a.encounters)?;
    let vocab = store.build_vocabulary(a.min_count);
    let features_path = ctx.path(&a.features, "features.json");
    let spec_dim = if features_path.exists() {
        FeatureSet::load(&features_path)?.specialty_dim()
    } else {
        let problems: Vec<&Problem> = kb.problems().collect();
        FeatureSet::build(&store, &problems, DEFAULT_SPECIALTY_VOCAB_SIZE).specialty_dim()
    };
    let external = a
        .external
        .as_ref()
        .map(|p| EmbeddingTable::load(p, None, SourceTag::External))
        .transpose()?;
    let internal = a
        .internal
        .as_ref()
        .map(|p| EmbeddingTable::load(p, None, SourceTag::SiteSpecific))
        .transpose()?;
    let cfg = InitConfig {
        source: match a.source {
            SourceArg::Random => InitSource::Random,
            SourceArg::External => InitSource::External,
            SourceArg::SiteSpecific => InitSource::SiteSpecific,
            SourceArg::Combined => InitSource::Combined,
        },
        dim: a.dim,
        knn_k: a.knn_k,
        seed: ctx.seed,
    };
    let targets = model_targets(&kb, &vocab);
    let (params, report) = initialize(
        &kb,
        &targets,
        external.as_ref(),
        internal.as_ref(),
        &match a.weight_by {
            WeightArg::Occurrences => store.occurrence_counts(),
            WeightArg::Patients => store.patient_counts(),
        },
        spec_dim,
        &cfg,
    )?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let out = ctx.path(&a.out, "model_init.json");
    write(&out, &params.to_json())?;
    Ok(json!({"out": out.display().to_string(), "dim": params.dim(), "report": report}))
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> Result<Value> {
    let kb = ctx.kb(&a.kb)?;
    let (params, _) = load_model(&ctx.path(&a.model, "model_init.json"))?;
    let mut cfg = ctx.file.train.clone().unwrap_or_else(|| {
        let d = TrainConfig::default();
        TrainConfig {
            ablation: a.ablation.map_or(d.ablation, Ablation::from),
            use_features: !a.no_features,
            negatives: match a.negatives {
                Some(NegativeArg::Annotated) => NegativeStrategy::Annotated,
                Some(NegativeArg::RandomVocab) => NegativeStrategy::RandomVocab,
                None => d.negatives,
            },
            max_epochs: a.max_epochs.unwrap_or(d.max_epochs),
            patience: a.patience.unwrap_or(d.patience),
            learning_rate: a.lr.unwrap_or(d.learning_rate),
            margin: a.margin.unwrap_or(d.margin),
            batch_size: a.batch_size.unwrap_or(d.batch_size),
            ..d
        }
    });
    cfg.seed = ctx.seed;
    let features = if cfg.use_features {
        Some(ctx.features(&a.features)?)
    } else {
        None
    };
    let split = a.split.make(&kb, ctx.seed)?;
    let (params, history) = train(&kb, &split, params, features.as_ref(), &cfg)?;
    let summary = train_summary(&history);
    let out = ctx.path(&a.out, "model.json");
    Checkpoint::new(params, cfg, history, Some(split)).save(&out)?;
    let mut s = summary;
    s["out"] = json!(out.display().to_string());
    Ok(s)
}

fn train_summary(h: &History) -> Value {
    let best = h.epochs.iter().find(|e| e.epoch == h.best_epoch);
    json!({
        "epochs": h.epochs.len().saturating_sub(1),
        "best_epoch": h.best_epoch,
        "stopped_early": h.stopped_early,
        "best_val_mr": best.and_then(|e| e.val_mr),
        "best_val_mrr": best.and_then(|e| e.val_mrr),
    })
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> Result<Value> {
    let kb = ctx.kb(&a.kb)?;
    let (params, checkpoint) = load_model(&ctx.path(&a.model, "model.json"))?;
    let use_features = checkpoint
        .as_ref()
        .map_or(!a.no_features, |c| c.config.use_features);
    let features = if use_features {
        Some(ctx.features(&a.features)?)
    } else {
        None
    };
    let split = match checkpoint.and_then(|c| c.split) {
        Some(s) => s,
        None => a.split.make(&kb, ctx.seed)?,
    };
    let policy = match a.policy {
        PolicyArg::Strict => TiePolicy::Strict,
        PolicyArg::Median => TiePolicy::Median,
    };
    let scorer = ModelScorer {
        params: &params,
        features: features.as_ref(),
    };
    let report = evaluate(
        &scorer,
        &kb,
        split.part(a.part.into()),
        &EvalOptions::with_policy(policy),
    )?;
    let out = ctx.path(&a.out, "eval.json");
    write(&out, &pretty(&report))?;
    if let Some(p) = &a.per_problem_csv {
        write(p, &per_problem_csv(&per_problem_report(&report, &kb)))?;
    }
    if let Some(p) = &a.freq_bins_csv {
        let counts = ctx.store(&a.encounters)?.occurrence_counts();
        write(
            p,
            &frequency_bins_csv(&frequency_bin_report(&report, &counts, a.bins)),
        )?;
    }
    Ok(json!({
        "out": out.display().to_string(),
        "overall": report.overall,
        "per_kind": report.per_kind,
        "excluded_no_negatives": report.excluded_no_negatives,
    }))
}

fn cmd_baseline(ctx: &Ctx, a: BaselineArgs) -> Result<Value> {
    let kb = ctx.kb(&a.kb)?;
    let maps = OntologyMaps::load_dir(ctx.path(&a.maps, "maps"))?;
    let split = a.split.make(&kb, ctx.seed)?;
    let part = split.part(a.part.into());
    let scorer = BaselineScorer {
        maps: &maps,
        kb: &kb,
    };
    let report = evaluate(
        &scorer,
        &kb,
        part,
        &EvalOptions::with_policy(TiePolicy::Median),
    )?;
    let coverage = medication_coverage(&maps, &kb, part);
    let out = ctx.path(&a.out, "baseline_eval.json");
    write(
        &out,
        &pretty(&json!({"report": report, "coverage": coverage})),
    )?;
    Ok(json!({
        "out": out.display().to_string(),
        "overall": report.overall,
        "per_kind": report.per_kind,
        "unsupported": report.unsupported,
        "coverage": coverage,
    }))
}

fn cmd_suggest(ctx: &Ctx, a: SuggestArgs) -> Result<Value> {
    let kb = ctx.kb(&a.kb)?;
    let (params, checkpoint) = load_model(&ctx.path(&a.model, "model.json"))?;
    let use_features = checkpoint.as_ref().is_none_or(|c| c.config.use_features);
    let features = if use_features {
        Some(ctx.features(&a.features)?)
    } else {
        None
    };
    let scorer = ModelScorer {
        params: &params,
        features: features.as_ref(),
    };
    let mut out = BTreeMap::new();
    for p in selected_problems(&kb, &a.problem)? {
        let row: BTreeMap<RelationKind, _> = kinds(a.kind)
            .into_iter()
            .map(|k| (k, round2_candidates(&scorer, &kb, p, k, a.top_n)))
            .collect();
        out.insert(p.id.clone(), row);
    }
    let path = ctx.path(&a.out, "suggestions.json");
    write(&path, &pretty(&out))?;
    Ok(json!({"out": path.display().to_string(), "problems": out.len()}))
}

fn cmd_kappa(a: KappaArgs) -> Result<Value> {
    let report = agreement(&read_audit_log(&a.a)?, &read_audit_log(&a.b)?)?;
    Ok(json!({"kappa": report.kappa, "n": report.n, "disagreements": report.disagreements.len()}))
}

fn cmd_intersect(ctx: &Ctx, a: IntersectArgs) -> Result<Value> {
    let store = ctx.store(&a.encounters)?;
    let vocab = store.build_vocabulary(a.min_count);
    let external = EmbeddingTable::load(&a.external, None, SourceTag::External)?;
    let rows = vocab_intersection(&vocab, &external);
    let out = ctx.path(&a.out, "intersect.csv");
    write(&out, &intersection_csv(&rows))?;
    Ok(json!({"out": out.display().to_string(), "rows": rows}))
}

fn cmd_serve(ctx: &Ctx, a: ServeArgs) -> Result<Value> {
    let mut config = ServiceConfig::new(&ctx.data_dir);
    config.snapshot_every = a.snapshot_every;
    if let Some(t) = &ctx.file.train {
        config.train = t.clone();
    }
    config.train.seed = ctx.seed;
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = ctx.threads {
        rt.worker_threads(n.max(1));
    }
    let rt = rt
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(serve(config, a.bind))?;
    Ok(json!({}))
}
