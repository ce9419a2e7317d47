//! `urm` command-line front end.
//!
//! Data goes to files or stdout, logs and the resolved configuration to
//! stderr. Exit codes: 0 success, 1 domain error, 2 usage error.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use crate::curation::{self, CurationError, Direction, GapFilter, Strategy, UcpoConfig, WeightRecord};
use crate::logitnormal::{KernelError, Quadrature, QuadratureConfig};
use crate::model::{self, AnnotatedRecord, DatasetError, GapPosterior};
use crate::objectives::{self, Objective, ObjectiveError, ObjectiveSpec, PolicyHyper, ToyPolicy, TrainingData, UdpoConfig};
use crate::proxy::{self, FeaturePair, ProxyError, ProxyModel, SynthConfig, UrmHyper};
use crate::uncertainty::{self, GapEstimator, SftBaseline, UncertaintyError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "urm", version, about = "Uncertainty profiles, curricula and weighted objectives for preference data")]
pub struct Cli {
    /// Global seed; per-record streams are derived from it and the record id.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic featurised preference pairs (or single responses).
    GenSynth(GenSynthArgs),
    /// Train the MC-dropout reward model and fill reward samples.
    TrainProxy(TrainProxyArgs),
    /// Fit gap posteriors and attach uncertainty profiles.
    Annotate(AnnotateArgs),
    /// Emit a curriculum ordering of annotated records.
    Curate(CurateArgs),
    /// Compute UDPO or UCPO per-record weights.
    Weights(WeightsArgs),
    /// Keep annotated records whose reward gap passes a threshold.
    Filter(FilterArgs),
    /// Train the tabular toy policy with one of the four objectives.
    TrainPolicy(TrainPolicyArgs),
    /// Print the pair-comparison score (2W + D) / (W + D + L) * 100.
    PairScore(PairScoreArgs),
    /// CSV summary of uncertainty by reward gap, with correlations.
    Report(ReportArgs),
    /// Cross-check the quadrature profile against Monte-Carlo draws.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Output JSONL path.
    #[arg(long)]
    pub output: PathBuf,
    /// Number of records.
    #[arg(long, default_value_t = 2000)]
    pub n_pairs: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    /// Minimum latent quality gap between responses of one prompt.
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    /// Isotropic feature noise scale.
    #[arg(long, default_value_t = 0.25)]
    pub noise_sigma: f64,
    /// Probability of swapping chosen and rejected (at most 0.5).
    #[arg(long, default_value_t = 0.0)]
    pub flip_rate: f64,
    /// Number of distinct prompts.
    #[arg(long, default_value_t = 100)]
    pub n_prompts: usize,
    /// Responses per prompt.
    #[arg(long, default_value_t = 8)]
    pub responses_per_prompt: usize,
    /// Emit class-labelled single responses instead of pairs.
    #[arg(long, default_value_t = false)]
    pub sft: bool,
}

#[derive(Debug, Args)]
pub struct TrainProxyArgs {
    /// Training records with feature vectors on both sides.
    #[arg(long)]
    pub input: PathBuf,
    /// Where to write scored records (reward samples filled in).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Records to score instead of the training input.
    #[arg(long)]
    pub score: Option<PathBuf>,
    /// Save the trained model as JSON.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Hidden width.
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Dropout rate, in [0, 1).
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    /// Training epochs.
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// SGD learning rate.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Minibatch size.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// MC dropout passes per response.
    #[arg(long, default_value_t = 64)]
    pub mc_passes: usize,
    /// Trailing fraction of the input held out for the accuracy report.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EstimatorArg {
    Independent,
    Paired,
}

#[derive(Debug, Args)]
pub struct QuadArgs {
    /// Trapezoid intervals.
    #[arg(long, default_value_t = 10_000)]
    pub n_steps: usize,
    /// Half-width of the standardised gap grid used as a fallback.
    #[arg(long, default_value_t = 8.0)]
    pub z_halfwidth: f64,
    /// Floor applied to the fitted gap standard deviation.
    #[arg(long, default_value_t = 1e-6)]
    pub sigma_min: f64,
}

impl QuadArgs {
    fn config(&self) -> QuadratureConfig {
        QuadratureConfig {
            n_steps: self.n_steps,
            z_halfwidth: self.z_halfwidth,
            sigma_min: self.sigma_min,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Input JSONL records.
    #[arg(long)]
    pub input: PathBuf,
    /// Output annotated JSONL.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub quad: QuadArgs,
    /// How chosen and rejected draws combine into a gap.
    #[arg(long, value_enum, default_value_t = EstimatorArg::Independent)]
    pub estimator: EstimatorArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Random,
    Epistemic,
    Aleatoric,
    Balent,
    Bad,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DirectionArg {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlanFormat {
    Text,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Annotated JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// Ordering strategy.
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    /// Sort direction for metric strategies.
    #[arg(long, value_enum, default_value_t = DirectionArg::Ascending)]
    pub direction: DirectionArg,
    /// Plan format: one id per line, or {id, rank} JSONL.
    #[arg(long, value_enum, default_value_t = PlanFormat::Text)]
    pub format: PlanFormat,
    /// Output path (stdout when absent).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightMode {
    Udpo,
    Ucpo,
}

#[derive(Debug, Args)]
pub struct UcpoArgs {
    /// Certainty bonus scale.
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    /// Class reward for expert records.
    #[arg(long, default_value_t = 1.0)]
    pub reward_expert: f64,
    /// Class reward for suboptimal records.
    #[arg(long, default_value_t = 0.1)]
    pub reward_suboptimal: f64,
}

impl UcpoArgs {
    fn config(&self) -> UcpoConfig {
        UcpoConfig {
            gamma: self.gamma,
            reward_expert: self.reward_expert,
            reward_suboptimal: self.reward_suboptimal,
        }
    }
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    /// Annotated JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// Weighting scheme.
    #[arg(long, value_enum)]
    pub mode: WeightMode,
    #[command(flatten)]
    pub ucpo: UcpoArgs,
    /// Output JSONL (stdout when absent).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Annotated JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// Output annotated JSONL.
    #[arg(long)]
    pub output: PathBuf,
    /// Keep records with mu > 0.
    #[arg(long, conflicts_with = "min_gap", required_unless_present = "min_gap")]
    pub positive_only: bool,
    /// Keep records with mu >= this threshold.
    #[arg(long, allow_negative_numbers = true)]
    pub min_gap: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Dpo,
    Udpo,
    Crlft,
    Ucpo,
}

#[derive(Debug, Args)]
pub struct TrainPolicyArgs {
    /// Training records (plain or annotated JSONL) with instruction and response texts.
    #[arg(long)]
    pub input: PathBuf,
    /// Training objective.
    #[arg(long, value_enum)]
    pub objective: ObjectiveArg,
    /// Weights JSONL from `urm weights` (required for udpo and ucpo).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Curriculum plan (one id per line); records are consumed in this order.
    #[arg(long)]
    pub order: Option<PathBuf>,
    /// Epochs.
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Learning rate (gradients are batch means, so this is large).
    #[arg(long, default_value_t = 100.0)]
    pub lr: f64,
    /// Minibatch size; 0 trains full batch.
    #[arg(long, default_value_t = 0)]
    pub batch_size: usize,
    /// Cosine-decay the learning rate instead of keeping it constant.
    #[arg(long, default_value_t = false)]
    pub cosine: bool,
    /// Reshuffle every epoch (not allowed together with --order).
    #[arg(long, default_value_t = false, conflicts_with = "order")]
    pub shuffle: bool,
    /// Implicit-reward temperature for dpo and udpo.
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[command(flatten)]
    pub ucpo: UcpoArgs,
    /// Loss trace CSV (epoch, loss).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Save the trained policy as JSON.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Held-out pairs; prints implicit-reward-gap accuracy to stdout.
    #[arg(long)]
    pub eval: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PairScoreArgs {
    /// Wins.
    #[arg(long = "w")]
    pub wins: u64,
    /// Draws.
    #[arg(long = "d")]
    pub draws: u64,
    /// Losses.
    #[arg(long = "l")]
    pub losses: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Annotated JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of equal-width reward-gap bins.
    #[arg(long, default_value_t = curation::DEFAULT_REPORT_BINS)]
    pub bins: usize,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Monte-Carlo draws per posterior.
    #[arg(long, default_value_t = 1_000_000)]
    pub n_draws: usize,
    /// Posteriors as mu:sigma, comma separated.
    #[arg(long, default_value = "0:1,1:0.5,2:2,-1:1,4:1", allow_hyphen_values = true)]
    pub points: String,
    #[command(flatten)]
    pub quad: QuadArgs,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open_in(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn create_out(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn out_or_stdout(path: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(create_out(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_annotated(path: &Path) -> Result<Vec<AnnotatedRecord>, CliError> {
    Ok(model::parse_annotated(open_in(path)?)?)
}

fn gen_synth(args: &GenSynthArgs, seed: u64) -> Result<(), CliError> {
    let cfg = SynthConfig {
        n_pairs: args.n_pairs,
        feature_dim: args.feature_dim,
        quality_margin: args.margin,
        noise_sigma: args.noise_sigma,
        flip_rate: args.flip_rate,
        seed,
        n_prompts: args.n_prompts,
        responses_per_prompt: args.responses_per_prompt,
    };
    let synth = if args.sft {
        proxy::gen_synthetic_sft(&cfg)?
    } else {
        proxy::gen_synthetic(&cfg)?
    };
    let records: Vec<_> = synth.iter().map(proxy::SynthPair::to_record).collect();
    model::write_dataset(&records, create_out(&args.output)?)?;
    eprintln!("wrote {} records to {}", records.len(), args.output.display());
    Ok(())
}

fn feature_pairs(records: &[model::PreferencePair]) -> Result<Vec<FeaturePair>, CliError> {
    records
        .iter()
        .map(|r| {
            let (chosen, rejected) = proxy::record_features(r)?;
            let rejected = rejected.ok_or_else(|| ProxyError::MissingFeatures(r.id.clone()))?;
            Ok(FeaturePair { chosen, rejected })
        })
        .collect()
}

fn train_proxy(args: &TrainProxyArgs, seed: u64) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&args.holdout) {
        return Err(CliError::Usage("--holdout must be in [0, 1)".into()));
    }
    let records = model::parse_records(open_in(&args.input)?)?;
    let pairs = feature_pairs(&records)?;
    let dim = pairs.first().map(|p| p.chosen.len()).ok_or(ProxyError::EmptyDataset)?;
    let n_train = pairs.len() - (pairs.len() as f64 * args.holdout).floor() as usize;
    let (train, held) = pairs.split_at(n_train);
    let model = ProxyModel::new(dim, args.hidden, args.dropout, seed)?;
    let hyper = UrmHyper {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed,
    };
    let trained = proxy::train_urm(train, model, &hyper)?;
    if let (Some(first), Some(last)) = (trained.epoch_losses.first(), trained.epoch_losses.last()) {
        eprintln!("train loss: first epoch {first:.6}, last epoch {last:.6}");
    }
    if !held.is_empty() {
        let acc = proxy::preference_accuracy(&trained.model, held)?;
        eprintln!("held-out preference accuracy: {acc:.4} ({} pairs)", held.len());
    }
    if let Some(path) = &args.checkpoint {
        let mut sink = create_out(path)?;
        proxy::save_checkpoint(&trained.model, &mut sink)?;
        sink.flush().map_err(io_err(path))?;
    }
    if let Some(out) = &args.output {
        let mut to_score = match &args.score {
            Some(p) => model::parse_records(open_in(p)?)?,
            None => records,
        };
        proxy::score_records(&trained.model, &mut to_score, args.mc_passes, seed)?;
        model::write_dataset(&to_score, create_out(out)?)?;
        eprintln!("wrote {} scored records to {}", to_score.len(), out.display());
    }
    Ok(())
}

/// Annotates records in parallel; output order follows input order.
pub fn annotate_records(
    records: Vec<model::PreferencePair>,
    config: &QuadratureConfig,
    estimator: GapEstimator,
) -> Result<Vec<AnnotatedRecord>, CliError> {
    let quad = Quadrature::new(*config)?;
    let baseline = SftBaseline::default();
    records
        .into_par_iter()
        .map(|pair| {
            let posterior: GapPosterior = uncertainty::resolve_posterior(&pair, estimator, &baseline, config)?;
            let unc = uncertainty::uncertainty_profile(&posterior, &quad)?;
            Ok(AnnotatedRecord {
                pair,
                posterior,
                uncertainty: unc,
            })
        })
        .collect()
}

fn annotate(args: &AnnotateArgs) -> Result<(), CliError> {
    let records = model::parse_dataset(open_in(&args.input)?)?;
    let estimator = match args.estimator {
        EstimatorArg::Independent => GapEstimator::Independent,
        EstimatorArg::Paired => GapEstimator::Paired,
    };
    let annotated = annotate_records(records, &args.quad.config(), estimator)?;
    model::write_annotated(&annotated, create_out(&args.output)?)?;
    eprintln!("annotated {} records", annotated.len());
    Ok(())
}

fn curate(args: &CurateArgs, seed: u64) -> Result<(), CliError> {
    let records = read_annotated(&args.input)?;
    let strategy = match args.strategy {
        StrategyArg::Random => Strategy::Random,
        StrategyArg::Epistemic => Strategy::Epistemic,
        StrategyArg::Aleatoric => Strategy::Aleatoric,
        StrategyArg::Balent => Strategy::Balent,
        StrategyArg::Bad => Strategy::Bad,
    };
    let direction = match args.direction {
        DirectionArg::Ascending => Direction::Ascending,
        DirectionArg::Descending => Direction::Descending,
    };
    let plan = curation::order_by(&records, strategy, direction, seed)?;
    let sink = out_or_stdout(&args.output)?;
    match args.format {
        PlanFormat::Text => plan.write_text(sink),
        PlanFormat::Jsonl => plan.write_jsonl(sink),
    }
    .map_err(CurationError::from)?;
    Ok(())
}

fn weights(args: &WeightsArgs) -> Result<(), CliError> {
    let records = read_annotated(&args.input)?;
    let w = match args.mode {
        WeightMode::Udpo => curation::udpo_weights(&records)?,
        WeightMode::Ucpo => curation::ucpo_weights(&records, &args.ucpo.config())?,
    };
    curation::write_weights(&w, out_or_stdout(&args.output)?).map_err(CurationError::from)?;
    Ok(())
}

fn filter(args: &FilterArgs) -> Result<(), CliError> {
    let records = read_annotated(&args.input)?;
    let f = match args.min_gap {
        Some(t) => GapFilter::MinGap(t),
        None => GapFilter::PositiveGapOnly,
    };
    let kept = curation::filter_by_gap(&records, f);
    model::write_annotated(&kept, create_out(&args.output)?)?;
    eprintln!("kept {} of {} records", kept.len(), records.len());
    Ok(())
}

fn read_weights(path: &Path) -> Result<HashMap<String, WeightRecord>, CliError> {
    let mut map = HashMap::new();
    for (i, line) in open_in(path)?.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let w: WeightRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        map.insert(w.id.clone(), w);
    }
    Ok(map)
}

fn read_plan(path: &Path) -> Result<Vec<String>, CliError> {
    let mut ids = Vec::new();
    for line in open_in(path)?.lines() {
        let line = line.map_err(io_err(path))?;
        let id = line.trim();
        if !id.is_empty() {
            ids.push(id.to_owned());
        }
    }
    Ok(ids)
}

fn reorder(
    records: Vec<model::PreferencePair>,
    plan: &[String],
) -> Result<Vec<model::PreferencePair>, CliError> {
    if plan.len() != records.len() {
        return Err(CliError::Usage(format!(
            "plan has {} ids but the input has {} records",
            plan.len(),
            records.len()
        )));
    }
    let mut by_id: HashMap<String, model::PreferencePair> =
        records.into_iter().map(|r| (r.id.clone(), r)).collect();
    plan.iter()
        .map(|id| {
            by_id
                .remove(id)
                .ok_or_else(|| CliError::Usage(format!("plan id {id:?} is unknown or repeated")))
        })
        .collect()
}

fn train_policy(args: &TrainPolicyArgs, seed: u64) -> Result<(), CliError> {
    let mut records = model::parse_records(open_in(&args.input)?)?;
    if let Some(plan) = &args.order {
        records = reorder(records, &read_plan(plan)?)?;
    }
    let objective = match args.objective {
        ObjectiveArg::Dpo => Objective::Dpo,
        ObjectiveArg::Udpo => Objective::Udpo,
        ObjectiveArg::Crlft => Objective::Crlft,
        ObjectiveArg::Ucpo => Objective::Ucpo,
    };
    let spec = ObjectiveSpec {
        objective,
        udpo: UdpoConfig { beta: args.beta },
        ucpo: args.ucpo.config(),
    };
    let weights = match (&args.weights, objective) {
        (Some(p), _) => Some(read_weights(p)?),
        (None, Objective::Udpo | Objective::Ucpo) => {
            return Err(CliError::Usage(format!("--weights is required for {objective}")))
        }
        (None, _) => None,
    };
    let lookup = |f: fn(&WeightRecord) -> Option<f64>, what: &str| -> Result<Option<Vec<f64>>, CliError> {
        let Some(w) = &weights else { return Ok(None) };
        records
            .iter()
            .map(|r| {
                w.get(&r.id)
                    .and_then(f)
                    .ok_or_else(|| CliError::Usage(format!("weights file lacks {what} for {:?}", r.id)))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    };
    let data = match objective {
        Objective::Dpo | Objective::Udpo => {
            let c_u = if objective == Objective::Udpo { lookup(|w| w.c_u, "c_u")? } else { None };
            TrainingData::Pairs(objectives::pair_examples(&records, c_u.as_deref())?)
        }
        Objective::Crlft | Objective::Ucpo => {
            let ut = lookup(|w| Some(w.u_tilde), "u_tilde")?;
            TrainingData::Singles(objectives::single_examples(&records, ut.as_deref(), &spec.ucpo)?)
        }
    };
    let mut policy_records = records.clone();
    let eval = match &args.eval {
        Some(p) => {
            let held = model::parse_records(open_in(p)?)?;
            policy_records.extend(held.iter().cloned());
            Some(objectives::pair_examples(&held, None)?)
        }
        None => None,
    };
    let policy = ToyPolicy::from_records(&policy_records, !objective.uses_pairs())?;
    let hyper = PolicyHyper {
        learning_rate: args.lr,
        epochs: args.epochs,
        seed,
        constant_lr: !args.cosine,
        batch_size: args.batch_size,
        shuffle: args.shuffle,
    };
    let trained = objectives::train_toy_policy(&data, &spec, policy, &hyper)?;
    if let Some(last) = trained.loss_trace.last() {
        eprintln!("final epoch loss {last:.6}");
    }
    if let Some(path) = &args.trace {
        trained.write_trace_csv(create_out(path)?).map_err(io_err(path))?;
    }
    if let Some(path) = &args.checkpoint {
        let mut sink = create_out(path)?;
        objectives::save_policy(&trained.policy, &mut sink)?;
        sink.flush().map_err(io_err(path))?;
    }
    if let Some(pairs) = eval {
        let acc = objectives::implicit_reward_accuracy(&trained.policy, &pairs, args.beta)?;
        println!("{acc}");
    }
    Ok(())
}

fn pair_score(args: &PairScoreArgs) -> Result<(), CliError> {
    let score = curation::PairScore::new(args.wins, args.draws, args.losses)?;
    println!("{score}");
    Ok(())
}

fn report(args: &ReportArgs) -> Result<(), CliError> {
    let records = read_annotated(&args.input)?;
    let rep = curation::report(&records, args.bins)?;
    rep.write_csv(out_or_stdout(&args.output)?).map_err(CurationError::from)?;
    Ok(())
}

fn parse_points(s: &str) -> Result<Vec<(f64, f64)>, CliError> {
    s.split(',')
        .map(|item| {
            let (m, sg) = item
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("bad point {item:?}, expected mu:sigma")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("bad number {v:?}")))
            };
            Ok((parse(m)?, parse(sg)?))
        })
        .collect()
}

fn oracle(args: &OracleArgs, seed: u64) -> Result<(), CliError> {
    let quad = Quadrature::new(args.quad.config())?;
    let points = parse_points(&args.points)?;
    let mut worst: f64 = 0.0;
    println!("mu,sigma,max_abs_z");
    for (mu, sigma) in points {
        let post = GapPosterior::new(mu, sigma).map_err(|e| KernelError::InvalidPosterior {
            mu: e.mu,
            sigma: e.sigma,
        })?;
        let q = uncertainty::profile_detail(&post, &quad)?;
        let mc = uncertainty::mc_profile(&post, args.n_draws, seed)?;
        let z = uncertainty::max_z_score(&q, &mc, &uncertainty::ORACLE_FIELDS);
        worst = worst.max(z);
        println!("{mu},{sigma},{z}");
    }
    eprintln!("max deviation: {worst:.3} standard errors");
    Ok(())
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    eprintln!("urm seed={} {:?}", cli.seed, cli.command);
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match &cli.command {
        Command::GenSynth(a) => gen_synth(a, seed),
        Command::TrainProxy(a) => train_proxy(a, seed),
        Command::Annotate(a) => annotate(a),
        Command::Curate(a) => curate(a, seed),
        Command::Weights(a) => weights(a),
        Command::Filter(a) => filter(a),
        Command::TrainPolicy(a) => train_policy(a, seed),
        Command::PairScore(a) => pair_score(a),
        Command::Report(a) => report(a),
        Command::Oracle(a) => oracle(a, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(dispatch(["urm", "pair-score", "--w", "1"]), 2);
        assert_eq!(dispatch(["urm", "no-such-command"]), 2);
        assert_eq!(dispatch(["urm", "pair-score", "--w", "1", "--d", "1", "--l", "1", "--bogus"]), 2);
    }

    #[test]
    fn domain_errors_exit_1() {
        assert_eq!(dispatch(["urm", "pair-score", "--w", "0", "--d", "0", "--l", "0"]), 1);
    }

    #[test]
    fn points_parse() {
        assert_eq!(parse_points("0:1,-1:0.5").unwrap(), vec![(0.0, 1.0), (-1.0, 0.5)]);
        assert!(parse_points("0-1").is_err());
    }
}
