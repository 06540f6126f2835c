//! End-to-end orchestration: filter, MCSS, diversity, CMSN training.
//!
//! Every stage draws its seed from the single top-level seed via
//! [`seed::derive`], so the stage seeds stored in nested configs are
//! replaced before a run and echoed back in the report.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cmsn::{self, CmsnModel, EpochRecord, ModelConfig, TrainConfig, TrainOutcome};
use crate::corpus::{self, Corpus, Domain};
use crate::diversity::{self, DiversityReport};
use crate::mcss::{self, McssConfig, McssOutcome, SelectionReport, ViewCentroids};
use crate::seed;
use crate::textsim::{self, SimilarityScores, ThresholdPolicy, DEFAULT_TEXT_CENTROIDS};
use crate::{Error, Result};

pub const REPORT_SCHEMA: &str = "cmsst-report/1";

/// Marker written into the output directory when a stage fails.
pub const PARTIAL_MARKER: &str = "PARTIAL";

pub const SCORES_FILE: &str = "scores.json";
pub const FILTERED_FILE: &str = "filtered.jsonl";
pub const SELECTION_FILE: &str = "selection.txt";
pub const SELECTION_REPORT_FILE: &str = "selection_report.json";
pub const DIVERSITY_FILE: &str = "diversity.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// External speech-text corpus.
    pub corpus: Option<PathBuf>,
    /// Target-domain text corpus with entity spans.
    pub target: Option<PathBuf>,
    /// Selected ids for `train` and `diversity` when run on their own.
    pub selection: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextsimConfig {
    /// Target text centroids; capped at the target corpus size.
    pub k: usize,
    pub policy: ThresholdPolicy,
}

impl Default for TextsimConfig {
    fn default() -> Self {
        TextsimConfig {
            k: DEFAULT_TEXT_CENTROIDS,
            policy: ThresholdPolicy::default(),
        }
    }
}

/// Network widths. Input dimensions come from the corpus; the class count
/// defaults to one more than the largest pseudolabel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelShape {
    pub classes: Option<usize>,
    pub feature_dim: usize,
    pub proj_dim: usize,
    pub encoder_hidden: usize,
    pub selector_hidden: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1, 1);
        ModelShape {
            classes: None,
            feature_dim: m.feature_dim,
            proj_dim: m.proj_dim,
            encoder_hidden: m.encoder_hidden,
            selector_hidden: m.selector_hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stages {
    pub skip_mcss: bool,
    pub skip_cmsn: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub seed: u64,
    pub textsim: TextsimConfig,
    pub mcss: McssConfig,
    pub train: TrainConfig,
    pub model: ModelShape,
    pub stages: Stages,
    /// Seeds averaged for the random-selection diversity baseline.
    pub random_baseline_seeds: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            seed: 0,
            textsim: TextsimConfig::default(),
            mcss: McssConfig::default(),
            train: TrainConfig::default(),
            model: ModelShape::default(),
            stages: Stages::default(),
            random_baseline_seeds: 20,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Copies the per-stage seeds derived from the top-level seed into the
    /// nested configs.
    pub fn with_stage_seeds(mut self) -> Self {
        self.mcss.seed = seed::derive(self.seed, "mcss");
        self.train.seed = seed::derive(self.seed, "train");
        self
    }

    pub fn textsim_seed(&self) -> u64 {
        seed::derive(self.seed, "textsim")
    }

    pub fn model_seed(&self) -> u64 {
        seed::derive(self.seed, "model")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn required(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        path.clone()
            .ok_or_else(|| Error::invalid(format!("no {what} path given in the config or on the command line")))
    }

    pub fn corpus_path(&self) -> Result<PathBuf> {
        Self::required(&self.paths.corpus, "corpus")
    }

    pub fn target_path(&self) -> Result<PathBuf> {
        Self::required(&self.paths.target, "target")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub policy: ThresholdPolicy,
    pub threshold_used: f64,
    pub k_used: usize,
    pub total: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversitySection {
    pub selection: DiversityReport,
    /// Mean (T, L, A) entropies of random selections of the same size.
    pub random_mean: [f64; 3],
    pub random_seeds: usize,
    /// Largest-cluster-first baseline; present when joint clusters exist.
    pub extreme: Option<DiversityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSection {
    pub model: ModelConfig,
    pub history: Vec<EpochRecord>,
    pub final_mean_rho: f64,
    pub trained_on: usize,
}

/// Domain-tag statistics. Only this section reads the tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub target_fraction_corpus: f64,
    pub target_fraction_filtered: f64,
    pub target_fraction_selected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema: String,
    pub config: PipelineConfig,
    pub filter: FilterSummary,
    pub selection: SelectionReport,
    pub diversity: Option<DiversitySection>,
    pub training: Option<TrainingSection>,
    pub evaluation: Evaluation,
    pub timings: Vec<StageTiming>,
}

impl PipelineReport {
    /// The report with timings cleared, for run-to-run comparison.
    pub fn without_timings(&self) -> Self {
        PipelineReport {
            timings: Vec::new(),
            ..self.clone()
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Everything a run produces, including the trained model.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub scores: SimilarityScores,
    pub model: Option<CmsnModel>,
}

fn stage<T>(name: &'static str, timings: &mut Vec<StageTiming>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })?;
    timings.push(StageTiming {
        stage: name.into(),
        millis: start.elapsed().as_secs_f64() * 1e3,
    });
    Ok(out)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

fn target_fraction(c: &Corpus) -> f64 {
    if c.is_empty() {
        0.0
    } else {
        c.meta().target_count as f64 / c.len() as f64
    }
}

/// Text-similarity filter with the target centroid count capped at the
/// target size.
pub fn stage_filter(cfg: &PipelineConfig, corpus: &Corpus, target: &Corpus) -> Result<(Corpus, SimilarityScores, usize)> {
    let k = cfg.textsim.k.min(target.len());
    let centroids = textsim::fit_target_text_centroids(target, k, cfg.textsim_seed())?;
    let (kept, scores) = textsim::filter(corpus, &centroids, cfg.textsim.policy)?;
    Ok((kept, scores, k))
}

/// MCSS, or a pass-through of the candidates when it is switched off.
pub fn stage_select(cfg: &PipelineConfig, candidates: &Corpus, target: &Corpus) -> Result<McssOutcome> {
    let mcss_cfg = McssConfig {
        seed: seed::derive(cfg.seed, "mcss"),
        ..cfg.mcss.clone()
    };
    if !cfg.stages.skip_mcss {
        return mcss::mcss_select(candidates, target, &mcss_cfg);
    }
    Ok(McssOutcome {
        report: SelectionReport {
            selected_ids: candidates.ids(),
            candidate_count: candidates.len(),
            skipped_mcss: true,
            cluster_sizes: Vec::new(),
            selected_per_cluster: Vec::new(),
            semantic_types: Vec::new(),
            diversity: None,
            config: mcss_cfg,
        },
        views: None,
        clusters: None,
        embedding: None,
    })
}

/// View centroids for diversity measurement, with centroid counts capped
/// at the candidate count.
pub fn diversity_views(cfg: &PipelineConfig, candidates: &Corpus, target: &Corpus) -> Result<ViewCentroids> {
    let capped = McssConfig {
        k_text: cfg.mcss.k_text.min(candidates.len()),
        k_speech: cfg.mcss.k_speech.min(candidates.len()),
        seed: seed::derive(cfg.seed, "mcss"),
        ..cfg.mcss.clone()
    };
    mcss::fit_view_centroids(candidates, target, &capped)
}

/// Diversity of `selected` against random and, when clusters are given,
/// extreme baselines of the same size.
pub fn stage_diversity(
    cfg: &PipelineConfig,
    selected: &[String],
    candidates: &Corpus,
    views: &ViewCentroids,
    clusters: Option<&[Vec<usize>]>,
) -> Result<DiversitySection> {
    let selection = diversity::diversity_report(selected, views, candidates)?;
    let ids = candidates.ids();
    let seeds = cfg.random_baseline_seeds.max(1);
    let mut random_mean = [0.0; 3];
    for s in 0..seeds {
        let pick = diversity::baseline_random_select(&ids, selected.len(), seed::derive(cfg.seed ^ s as u64, "random-baseline"))?;
        let h = diversity::diversity_report(&pick, views, candidates)?.entropies();
        for (acc, v) in random_mean.iter_mut().zip(h) {
            *acc += v / seeds as f64;
        }
    }
    let extreme = match clusters {
        Some(cl) => {
            let as_ids: Vec<Vec<String>> = cl.iter().map(|m| m.iter().map(|&i| ids[i].clone()).collect()).collect();
            let pick = diversity::baseline_extreme_select(&as_ids, selected.len())?;
            Some(diversity::diversity_report(&pick, views, candidates)?)
        }
        None => None,
    };
    Ok(DiversitySection {
        selection,
        random_mean,
        random_seeds: seeds,
        extreme,
    })
}

/// Model configuration for a corpus under the configured widths.
pub fn model_config(cfg: &PipelineConfig, corpus: &Corpus) -> Result<ModelConfig> {
    let classes = match cfg.model.classes {
        Some(c) => c,
        None => {
            let max = corpus
                .samples()
                .iter()
                .map(|s| s.pseudolabel.ok_or_else(|| Error::MissingPseudolabel { id: s.id.clone() }))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .max()
                .ok_or(Error::EmptyCorpus)?;
            max + 1
        }
    };
    let meta = corpus.meta();
    Ok(ModelConfig {
        text_dim: meta.text_dim,
        speech_dim: meta.speech_dim,
        classes,
        feature_dim: cfg.model.feature_dim,
        proj_dim: cfg.model.proj_dim,
        encoder_hidden: cfg.model.encoder_hidden,
        selector_hidden: cfg.model.selector_hidden,
    })
}

/// Initializes and trains a model on `selected`. The class count is taken
/// from `label_source` so that it does not depend on which ids were picked.
pub fn stage_train(cfg: &PipelineConfig, selected: &Corpus, label_source: &Corpus) -> Result<TrainOutcome> {
    let model_cfg = model_config(cfg, label_source)?;
    let train_cfg = TrainConfig {
        seed: seed::derive(cfg.seed, "train"),
        ..cfg.train.clone()
    };
    let model = CmsnModel::new(model_cfg, train_cfg.hyper(), cfg.model_seed())?;
    cmsn::train(&model, selected, &train_cfg)
}

/// Runs every enabled stage on in-memory corpora without touching disk.
pub fn run_on(cfg: &PipelineConfig, corpus: &Corpus, target: &Corpus) -> Result<PipelineRun> {
    let cfg = cfg.clone().with_stage_seeds();
    let mut timings = Vec::new();

    let (filtered, scores, k_used) = stage("filter", &mut timings, || stage_filter(&cfg, corpus, target))?;
    if filtered.is_empty() {
        return Err(Error::Stage {
            stage: "filter",
            source: Box::new(Error::invalid("the filter kept no samples")),
        });
    }
    let outcome = stage("select", &mut timings, || stage_select(&cfg, &filtered, target))?;
    let selected = filtered.select_ids(&outcome.report.selected_ids)?;

    let diversity = stage("diversity", &mut timings, || {
        let views = match &outcome.views {
            Some(v) => v.clone(),
            None => diversity_views(&cfg, &filtered, target)?,
        };
        stage_diversity(
            &cfg,
            &outcome.report.selected_ids,
            &filtered,
            &views,
            outcome.clusters.as_deref(),
        )
    })?;

    let trained = if cfg.stages.skip_cmsn {
        None
    } else {
        Some(stage("train", &mut timings, || stage_train(&cfg, &selected, corpus))?)
    };

    let mut selection = outcome.report;
    selection.diversity = Some(diversity.selection.clone());
    let training = trained.as_ref().map(|t| TrainingSection {
        model: t.model.config.clone(),
        history: t.history.clone(),
        final_mean_rho: t.history.last().map_or(0.5, |h| h.mean_rho),
        trained_on: selected.len(),
    });
    let report = PipelineReport {
        schema: REPORT_SCHEMA.into(),
        filter: FilterSummary {
            policy: scores.policy,
            threshold_used: scores.threshold_used,
            k_used,
            total: corpus.len(),
            kept: filtered.len(),
        },
        selection,
        diversity: Some(diversity),
        training,
        evaluation: Evaluation {
            target_fraction_corpus: target_fraction(corpus),
            target_fraction_filtered: target_fraction(&filtered),
            target_fraction_selected: target_fraction(&selected),
        },
        timings,
        config: cfg,
    };
    Ok(PipelineRun {
        report,
        scores,
        model: trained.map(|t| t.model),
    })
}

/// Loads the corpora named in the config, runs the pipeline and writes all
/// artifacts. On failure a `PARTIAL` marker naming the failed stage is left
/// in the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let marker = out.join(PARTIAL_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let result = load_and_run(cfg, &out);
    if let Err(e) = &result {
        let stage = match e {
            Error::Stage { stage, .. } => *stage,
            _ => "setup",
        };
        // Best effort: the original error matters more than the marker.
        let _ = fs::write(&marker, format!("stage: {stage}\nerror: {e}\n"));
    }
    result
}

fn load_and_run(cfg: &PipelineConfig, out: &Path) -> Result<PipelineReport> {
    let wrap = |stage: &'static str| move |e: Error| Error::Stage { stage, source: Box::new(e) };
    let corpus = Corpus::load(cfg.corpus_path()?).map_err(wrap("load"))?;
    let target = Corpus::load(cfg.target_path()?).map_err(wrap("load"))?;
    let run = run_on(cfg, &corpus, &target)?;
    write_artifacts(&run, &corpus, out).map_err(wrap("write"))?;
    Ok(run.report)
}

/// Writes every artifact of a run into `out`.
pub fn write_artifacts(run: &PipelineRun, corpus: &Corpus, out: &Path) -> Result<()> {
    let r = &run.report;
    run.scores.write(out.join(SCORES_FILE))?;
    corpus.select_ids(&run.scores.kept_ids())?.write(out.join(FILTERED_FILE))?;
    let kept: Vec<String> = r.selection.selected_ids.clone();
    corpus::write_selection(&kept, out.join(SELECTION_FILE))?;
    r.selection.write(out.join(SELECTION_REPORT_FILE))?;
    if let Some(d) = &r.diversity {
        write_json(d, &out.join(DIVERSITY_FILE))?;
    }
    if let (Some(model), Some(t)) = (&run.model, &r.training) {
        model
            .to_checkpoint(Some(&r.config.train))
            .write(out.join(CHECKPOINT_FILE))?;
        cmsn::write_history(&t.history, out.join(HISTORY_FILE))?;
    }
    let path = out.join(REPORT_FILE);
    fs::write(&path, r.to_json_string()).map_err(|e| Error::io(&path, e))
}

/// Outcome of rerunning with every domain tag replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub selections_match: bool,
    pub checkpoints_match: bool,
    pub selected: usize,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.selections_match && self.checkpoints_match
    }
}

/// Runs the pipeline on the corpus as given and with every domain tag
/// overwritten, then compares selected ids and checkpoints.
pub fn audit(cfg: &PipelineConfig, corpus: &Corpus, target: &Corpus) -> Result<AuditReport> {
    let tagged = run_on(cfg, corpus, target)?;
    let stripped = run_on(cfg, &corpus.with_domains(Domain::Other), &target.with_domains(Domain::Other))?;
    let ck = |r: &PipelineRun| r.model.as_ref().map(|m| m.to_checkpoint(None));
    Ok(AuditReport {
        selections_match: tagged.report.selection.selected_ids == stripped.report.selection.selected_ids,
        checkpoints_match: ck(&tagged) == ck(&stripped),
        selected: tagged.report.selection.selected_ids.len(),
    })
}
