use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use molrisk::data::{canonical_or_none, Example, SplitName};
use molrisk::eval::EvalOptions;
use molrisk::experiment::{
    checkpoint_metadata, evaluate_model, load_model, prepare, run_training, similarity_for,
};
use molrisk::molgraph::{canonical_smiles, parse_smiles, SmilesError, StereoMode};
use molrisk::reward::{compute_reward, Normalization, RewardWeights};
use molrisk::rng::{tag, StreamKey};
use molrisk::seqmodel::SmilesModel;
use molrisk::similarity::{serve_stub, Similarity, SimilarityKind};
use molrisk::trainer::{StepRecord, TrainConfig, TrainObserver};

/// Environment variable that redirects the metrics log of `train`.
const METRICS_DIR_ENV: &str = "MOLRISK_METRICS_DIR";

#[derive(Parser)]
#[command(name = "molrisk", version, about = "Train and evaluate SMILES generators with minimum risk training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes per-epoch checkpoints and a metrics log.
    Train(TrainArgs),
    /// Greedy-decode a data split with a checkpoint and score it.
    Eval(EvalArgs),
    /// Composite reward of one prediction against a ground truth.
    Reward(RewardArgs),
    /// Canonical form of a SMILES string.
    Canon(CanonArgs),
    /// Sample candidates for one molecule from a checkpoint.
    Sample(SampleArgs),
    /// Serve stub embeddings on stdin/stdout for the external-provider path.
    #[command(hide = true)]
    ProviderStub,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// MRT loss weight.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sim: Option<SimilarityKind>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the evaluation of the final model.
    #[arg(long)]
    no_eval: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "eval")]
    split: SplitName,
    /// Similarity for scoring; defaults to the one the model was trained with.
    #[arg(long)]
    sim: Option<SimilarityKind>,
    #[command(flatten)]
    norm: NormArgs,
    /// Report file; defaults to `eval-<split>-<sim>.txt` next to the checkpoint.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct NormArgs {
    /// Ignore tetrahedral chirality when comparing.
    #[arg(long)]
    strip_stereo: bool,
    /// Keep `[n*]` R-group atoms distinct from `*`.
    #[arg(long)]
    no_wildcard: bool,
}

impl NormArgs {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            stereo: stereo_mode(self.strip_stereo),
            rgroup_wildcarding: !self.no_wildcard,
        }
    }
}

#[derive(Args)]
struct RewardArgs {
    #[arg(long)]
    pred: String,
    #[arg(long)]
    truth: String,
    #[arg(long, default_value = "edit")]
    sim: SimilarityKind,
    /// Weights `w_v,w_s,w_e` of validity, similarity and exact match.
    #[arg(long, value_parser = parse_weights)]
    weights: Option<RewardWeights>,
}

#[derive(Args)]
struct CanonArgs {
    #[arg(long)]
    smiles: String,
    #[arg(long)]
    strip_stereo: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Molecule whose features condition the model; also the reward target.
    #[arg(long)]
    smiles: String,
    #[arg(long, default_value_t = 32)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    sim: Option<SimilarityKind>,
}

fn parse_weights(s: &str) -> Result<RewardWeights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [v, s, e] => RewardWeights::new(v, s, e).map_err(|e| e.to_string()),
        _ => Err("expected three comma-separated weights".into()),
    }
}

fn stereo_mode(strip: bool) -> StereoMode {
    if strip {
        StereoMode::Strip
    } else {
        StereoMode::PreserveTetrahedral
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Reward(a) => reward(a),
        Command::Canon(a) => canon(a),
        Command::Sample(a) => sample(a),
        Command::ProviderStub => serve_stub(io::stdin().lock(), io::stdout().lock()).map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Streams the metrics log and writes a checkpoint per epoch.
struct RunWriter<'a> {
    config: &'a TrainConfig,
    dir: PathBuf,
    metrics: BufWriter<File>,
    epoch_steps: usize,
    epoch_loss: f64,
}

impl TrainObserver for RunWriter<'_> {
    fn on_step(&mut self, record: &StepRecord) -> io::Result<()> {
        self.epoch_steps += 1;
        self.epoch_loss += record.mle_loss;
        writeln!(self.metrics, "{record}")
    }

    fn on_epoch(&mut self, epoch: usize, model: &SmilesModel) -> io::Result<()> {
        self.metrics.flush()?;
        let path = self.dir.join(format!("epoch-{epoch:03}.ckpt"));
        model
            .to_checkpoint(&checkpoint_metadata(self.config, epoch))
            .save(&path)
            .map_err(io::Error::other)?;
        eprintln!(
            "epoch {epoch}/{}: mean mle_loss {:.4}, wrote {}",
            self.config.epochs,
            self.epoch_loss / self.epoch_steps.max(1) as f64,
            path.display()
        );
        self.epoch_steps = 0;
        self.epoch_loss = 0.0;
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = TrainConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(lambda) = args.lambda {
        config.lambda = lambda;
    }
    if let Some(sim) = args.sim {
        config.sim = sim;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    config.validate()?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let metrics_dir = std::env::var_os(METRICS_DIR_ENV).map_or_else(|| dir.clone(), PathBuf::from);
    fs::create_dir_all(&metrics_dir)
        .with_context(|| format!("cannot create {}", metrics_dir.display()))?;
    fs::write(dir.join("config.txt"), config.to_text())?;

    let prepared = prepare(&config)?;
    for r in &prepared.corpus.rejections {
        eprintln!("skipped corpus line {}: {} ({})", r.line, r.text, r.reason);
    }
    for split in [SplitName::MleTrain, SplitName::MrtTrain, SplitName::Eval] {
        fs::write(
            dir.join(format!("split-{split}.txt")),
            prepared.splits.manifest(split),
        )?;
    }
    let similarity = similarity_for(&config)?;
    eprintln!(
        "training on {} MLE / {} MRT examples (aux={}, lambda={}, sim={}, seed={})",
        prepared.mle.len(),
        prepared.mrt.len(),
        config.aux.name(),
        config.lambda,
        config.sim.name(),
        config.seed
    );
    let mut writer = RunWriter {
        config: &config,
        dir: dir.clone(),
        metrics: create(&metrics_dir.join("metrics.log"))?,
        epoch_steps: 0,
        epoch_loss: 0.0,
    };
    let outcome = run_training(&config, &prepared, &similarity, &mut writer)?;
    writer.metrics.flush()?;
    let final_path = dir.join("final.ckpt");
    outcome
        .model
        .to_checkpoint(&checkpoint_metadata(&config, config.epochs))
        .save(&final_path)?;
    println!("checkpoint {}", final_path.display());

    if !args.no_eval {
        let report = evaluate_model(
            &outcome.model,
            &prepared,
            SplitName::Eval,
            &config,
            &similarity,
            EvalOptions::default(),
        )?;
        fs::write(dir.join("eval.txt"), report.to_records_text())?;
        print!("{report}");
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let (model, mut config) = load_model(&args.checkpoint)?;
    if let Some(sim) = args.sim {
        config.sim = sim;
    }
    let prepared = prepare(&config)?;
    let similarity = similarity_for(&config)?;
    let report = evaluate_model(&model, &prepared, args.split, &config, &similarity, args.norm.options())?;
    let path = args.report.unwrap_or_else(|| {
        args.checkpoint
            .with_file_name(format!("eval-{}-{}.txt", args.split, config.sim.name()))
    });
    fs::write(&path, report.to_records_text())
        .with_context(|| format!("cannot write {}", path.display()))?;
    print!("{report}");
    println!("{:<16} {}", "report", path.display());
    Ok(())
}

fn reward(args: RewardArgs) -> Result<()> {
    let sim = Similarity::from_kind(args.sim);
    let weights = args.weights.unwrap_or_default();
    let r = compute_reward(&args.pred, &args.truth, &sim, weights, Normalization::EVALUATION)?;
    println!("{r}");
    Ok(())
}

fn canon(args: CanonArgs) -> Result<()> {
    match canonical_smiles(&args.smiles, stereo_mode(args.strip_stereo)) {
        Ok(c) => {
            println!("{c}");
            Ok(())
        }
        Err(SmilesError::Parse(e)) => {
            let caret = " ".repeat(args.smiles[..e.offset.min(args.smiles.len())].chars().count());
            bail!("cannot parse SMILES: {e}\n  {}\n  {caret}^", args.smiles)
        }
        Err(e) => bail!("{e}"),
    }
}

fn sample(args: SampleArgs) -> Result<()> {
    let (model, mut config) = load_model(&args.checkpoint)?;
    if let Some(sim) = args.sim {
        config.sim = sim;
    }
    let truth = canonical_or_none(&args.smiles)
        .ok_or_else(|| anyhow!("{:?} is not a valid molecule", args.smiles))?;
    let prepared = prepare(&config)?;
    let similarity = similarity_for(&config)?;
    let graph = parse_smiles(&args.smiles)?;
    let example = Example {
        smiles: truth.clone(),
        base_features: prepared.features.base(&graph),
    };
    let features = example.noisy(&prepared.features, StreamKey::new(args.seed, &[tag::EVAL_NOISE]));
    let hidden = model.params.encode(&features)?;
    let max_len = args.max_len.unwrap_or(config.eval_max_len);
    let decoder = model.params.decoder();
    let key = StreamKey::new(args.seed, &[tag::SAMPLING]);
    let d = decoder.sample_decode(&hidden, args.n, args.temperature, max_len, key);

    // Distinct candidates with their multiplicity, in order of first appearance.
    let mut rows: Vec<(String, usize, f64, bool)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, seq) in d.sequences.iter().enumerate() {
        let text = model.vocab.detokenize_lossy(seq);
        match index.get(&text) {
            Some(&row) => rows[row].1 += 1,
            None => {
                index.insert(text.clone(), rows.len());
                rows.push((text, 1, d.logprobs[i], d.truncated[i]));
            }
        }
    }
    let mut scored = Vec::with_capacity(rows.len());
    for (text, count, logprob, truncated) in rows {
        let r = compute_reward(&text, &truth, &similarity, config.weights, Normalization::TRAINING)?;
        scored.push((text, count, logprob, truncated, r));
    }
    scored.sort_by(|a, b| b.4.total.total_cmp(&a.4.total).then(b.1.cmp(&a.1)));

    let (greedy, _) = decoder.greedy_decode(&hidden, max_len);
    println!("truth   {truth}");
    println!("greedy  {}", model.vocab.detokenize_lossy(&greedy));
    println!(
        "{} samples at temperature {}, {} distinct\n",
        args.n,
        args.temperature,
        scored.len()
    );
    println!("{:>5} {:>10} {:>7} {:>5} {:>5}  candidate", "count", "logprob", "reward", "valid", "exact");
    for (text, count, logprob, truncated, r) in &scored {
        let mark = if *truncated { " (truncated)" } else { "" };
        println!(
            "{count:>5} {logprob:>10.3} {:>7.4} {:>5} {:>5}  {text}{mark}",
            r.total, r.valid, r.exact
        );
    }
    let found = scored.iter().any(|s| s.4.exact);
    println!("\ntruth among samples: {}", if found { "yes" } else { "no" });
    Ok(())
}
