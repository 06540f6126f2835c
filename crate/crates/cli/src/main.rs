use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cmsst_core::cmsn::{self, CmsnModel, Checkpoint};
use cmsst_core::corpus::{self, generate_synthetic_corpus, Corpus, SyntheticSpec};
use cmsst_core::pipeline::{self, PipelineConfig};
use cmsst_core::textsim::ThresholdPolicy;

#[derive(Parser)]
#[command(name = "cmsst", version, about = "Sample selection and selective self-training over embedding corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic external corpus and target corpus.
    Synth(SynthArgs),
    /// Score the external corpus against target text centroids and drop
    /// out-of-domain pairs.
    Filter(StageArgs),
    /// Filter, then pick a cluster-balanced subset.
    Select(StageArgs),
    /// Entropy of a selection in each view, with random and extreme baselines.
    Diversity(StageArgs),
    /// Train the selective network on a selection.
    Train(StageArgs),
    /// Run every stage and write a full report.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Top-level seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON synthetic corpus spec.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory, or a `.jsonl` path for the external corpus.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Samples per in-domain center, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "N,..")]
    target_sizes: Option<Vec<usize>>,
    /// Samples per out-of-domain center, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "N,..")]
    other_sizes: Option<Vec<usize>>,
    #[arg(long)]
    text_dim: Option<usize>,
    #[arg(long)]
    speech_dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Fraction of pairs whose text comes from a different center.
    #[arg(long)]
    mismatch_fraction: Option<f64>,
    #[arg(long)]
    entity_types: Option<usize>,
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
    /// Pass the filtered set through without MCSS.
    #[arg(long)]
    skip_mcss: bool,
    /// Stop before training.
    #[arg(long)]
    skip_cmsn: bool,
    /// Also rerun with domain tags overwritten and fail unless selections
    /// and checkpoints agree.
    #[arg(long)]
    audit: bool,
}

#[derive(Args, Default)]
struct Overrides {
    /// External corpus (JSONL).
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
    /// Target corpus (JSONL).
    #[arg(long, value_name = "PATH")]
    target: Option<PathBuf>,
    /// Selected ids, one per line.
    #[arg(long, value_name = "PATH")]
    selection: Option<PathBuf>,
    /// Target text centroids for the filter.
    #[arg(long)]
    k: Option<usize>,
    /// Keep scores at or below this quantile.
    #[arg(long, conflicts_with = "threshold")]
    quantile: Option<f64>,
    /// Keep scores at or below this cosine distance.
    #[arg(long)]
    threshold: Option<f64>,
    /// Selection budget.
    #[arg(long)]
    n: Option<usize>,
    /// Joint cluster count.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    k_text: Option<usize>,
    #[arg(long)]
    k_speech: Option<usize>,
    #[arg(long)]
    w_text: Option<f64>,
    #[arg(long)]
    w_speech: Option<f64>,
    #[arg(long)]
    w_semantic: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Target coverage.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve(common: &Common, o: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.seed, common.seed);
    if common.out.is_some() {
        cfg.paths.out_dir = common.out.clone();
    }
    if o.corpus.is_some() {
        cfg.paths.corpus = o.corpus.clone();
    }
    if o.target.is_some() {
        cfg.paths.target = o.target.clone();
    }
    if o.selection.is_some() {
        cfg.paths.selection = o.selection.clone();
    }
    set(&mut cfg.textsim.k, o.k);
    if let Some(q) = o.quantile {
        cfg.textsim.policy = ThresholdPolicy::Quantile(q);
    }
    if let Some(t) = o.threshold {
        cfg.textsim.policy = ThresholdPolicy::Absolute(t);
    }
    let m = &mut cfg.mcss;
    set(&mut m.n, o.n);
    set(&mut m.r, o.r);
    set(&mut m.k_text, o.k_text);
    set(&mut m.k_speech, o.k_speech);
    set(&mut m.w_text, o.w_text);
    set(&mut m.w_speech, o.w_speech);
    set(&mut m.w_semantic, o.w_semantic);
    let t = &mut cfg.train;
    set(&mut t.alpha, o.alpha);
    set(&mut t.beta, o.beta);
    set(&mut t.gamma, o.gamma);
    set(&mut t.tau, o.tau);
    set(&mut t.epochs, o.epochs);
    set(&mut t.learning_rate, o.learning_rate);
    set(&mut t.batch_size, o.batch_size);
    Ok(cfg)
}

fn out_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn load(path: &Path) -> Result<Corpus> {
    Corpus::load(path).with_context(|| format!("loading {}", path.display()))
}

/// The selection named in the config, or the one a previous `select` left
/// in the output directory.
fn selection_path(cfg: &PipelineConfig) -> Option<PathBuf> {
    cfg.paths.selection.clone().or_else(|| {
        let p = cfg.out_dir().join(pipeline::SELECTION_FILE);
        p.exists().then_some(p)
    })
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SyntheticSpec::default(),
    };
    set(&mut spec.seed, a.seed);
    set(&mut spec.target_sizes, a.target_sizes.clone());
    set(&mut spec.other_sizes, a.other_sizes.clone());
    set(&mut spec.text_dim, a.text_dim);
    set(&mut spec.speech_dim, a.speech_dim);
    set(&mut spec.noise, a.noise);
    set(&mut spec.mismatch_fraction, a.mismatch_fraction);
    set(&mut spec.entity_types, a.entity_types);
    let s = generate_synthetic_corpus(&spec)?;

    let (corpus_path, target_path, truth_path) = if a.out.extension().is_some_and(|e| e == "jsonl") {
        let stem = a.out.with_extension("");
        if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        (
            a.out.clone(),
            stem.with_extension("target.jsonl"),
            stem.with_extension("truth.json"),
        )
    } else {
        fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
        (
            a.out.join("corpus.jsonl"),
            a.out.join("target.jsonl"),
            a.out.join("truth.json"),
        )
    };
    s.corpus.write(&corpus_path)?;
    if let Some(t) = &s.target {
        t.write(&target_path)?;
    }
    write_json(&s.truth, &truth_path)?;
    println!(
        "wrote {} samples to {} ({} mismatched)",
        s.corpus.len(),
        corpus_path.display(),
        s.mismatched_count()
    );
    Ok(())
}

fn filter(cfg: &PipelineConfig) -> Result<Corpus> {
    let corpus = load(&cfg.corpus_path()?)?;
    let target = load(&cfg.target_path()?)?;
    let (kept, scores, _) = pipeline::stage_filter(cfg, &corpus, &target)?;
    let out = out_dir(cfg)?;
    scores.write(out.join(pipeline::SCORES_FILE))?;
    kept.write(out.join(pipeline::FILTERED_FILE))?;
    println!(
        "kept {} of {} (threshold {:.6})",
        kept.len(),
        corpus.len(),
        scores.threshold_used
    );
    Ok(kept)
}

fn select(cfg: &PipelineConfig) -> Result<()> {
    let filtered = filter(cfg)?;
    let target = load(&cfg.target_path()?)?;
    let outcome = pipeline::stage_select(cfg, &filtered, &target)?;
    let out = out_dir(cfg)?;
    corpus::write_selection(&outcome.report.selected_ids, out.join(pipeline::SELECTION_FILE))?;
    outcome.report.write(out.join(pipeline::SELECTION_REPORT_FILE))?;
    println!(
        "selected {} of {} candidates",
        outcome.report.selected_ids.len(),
        outcome.report.candidate_count
    );
    Ok(())
}

fn diversity(cfg: &PipelineConfig) -> Result<()> {
    // Measure against the pool the selection was drawn from when `select`
    // has left one behind.
    let pool = cfg.out_dir().join(pipeline::FILTERED_FILE);
    let corpus = if pool.exists() { load(&pool)? } else { load(&cfg.corpus_path()?)? };
    let target = load(&cfg.target_path()?)?;
    let sel_path = selection_path(cfg).context("no selection given; pass --selection or run `select` first")?;
    let selected = corpus::read_selection(&sel_path)?;
    let views = pipeline::diversity_views(cfg, &corpus, &target)?;
    let section = pipeline::stage_diversity(cfg, &selected, &corpus, &views, None)?;
    let out = out_dir(cfg)?;
    write_json(&section, &out.join(pipeline::DIVERSITY_FILE))?;
    let [t, l, a] = section.selection.entropies();
    let [rt, rl, ra] = section.random_mean;
    println!("entropy T {t:.4} L {l:.4} A {a:.4} (random T {rt:.4} L {rl:.4} A {ra:.4})");
    Ok(())
}

fn train(cfg: &PipelineConfig) -> Result<()> {
    let cfg = cfg.clone().with_stage_seeds();
    let corpus = load(&cfg.corpus_path()?)?;
    let selected = match selection_path(&cfg) {
        Some(p) => corpus.select_ids(&corpus::read_selection(&p)?)?,
        None => corpus.clone(),
    };
    let outcome = pipeline::stage_train(&cfg, &selected, &corpus)?;
    let out = out_dir(&cfg)?;
    outcome
        .model
        .to_checkpoint(Some(&cfg.train))
        .write(out.join(pipeline::CHECKPOINT_FILE))?;
    cmsn::write_history(&outcome.history, out.join(pipeline::HISTORY_FILE))?;
    // Reload to make sure the checkpoint is usable.
    CmsnModel::from_checkpoint(&Checkpoint::load(out.join(pipeline::CHECKPOINT_FILE))?)?;
    match outcome.history.last() {
        Some(h) => println!(
            "trained {} epochs on {} samples: loss {:.5}, mean score {:.4}",
            outcome.history.len(),
            selected.len(),
            h.losses.total,
            h.mean_rho
        ),
        None => println!("zero epochs: wrote the initial model"),
    }
    Ok(())
}

fn run_pipeline(a: &PipelineArgs) -> Result<()> {
    let mut cfg = resolve(&a.common, &a.overrides)?;
    cfg.stages.skip_mcss |= a.skip_mcss;
    cfg.stages.skip_cmsn |= a.skip_cmsn;
    let report = pipeline::run_pipeline(&cfg)?;
    println!(
        "kept {} of {}, selected {}, target fraction {:.3} -> {:.3}",
        report.filter.kept,
        report.filter.total,
        report.selection.selected_ids.len(),
        report.evaluation.target_fraction_corpus,
        report.evaluation.target_fraction_selected
    );
    if a.audit {
        let corpus = load(&cfg.corpus_path()?)?;
        let target = load(&cfg.target_path()?)?;
        let audit = pipeline::audit(&cfg, &corpus, &target)?;
        write_json(&audit, &cfg.out_dir().join("audit.json"))?;
        if !audit.passed() {
            bail!("audit failed: results depend on domain tags");
        }
        println!("audit passed");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Filter(a) => filter(&resolve(&a.common, &a.overrides)?).map(drop),
        Command::Select(a) => select(&resolve(&a.common, &a.overrides)?),
        Command::Diversity(a) => diversity(&resolve(&a.common, &a.overrides)?),
        Command::Train(a) => train(&resolve(&a.common, &a.overrides)?),
        Command::Pipeline(a) => run_pipeline(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
