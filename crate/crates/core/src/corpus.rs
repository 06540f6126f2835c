//! Speech-text pair corpora: the record model, line-delimited ingestion,
//! selection files, and a seeded synthetic generator.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"id":"s1","domain":"target","text_emb":[0.1,0.2],"speech_emb":[0.3],"pseudolabel":2,
//!  "spans":[{"type":"LOC","emb":[0.0,1.0]}]}
//! ```
//!
//! `pseudolabel` and `spans` are optional. Every record in a file must agree
//! on the text and speech dimensions, and ids must be unique.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

/// Which collection a pair came from. Only evaluation code may read this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Target,
    Other,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Target => f.write_str("target"),
            Domain::Other => f.write_str("other"),
        }
    }
}

/// An entity span with its own text-space embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    #[serde(rename = "type")]
    pub entity_type: String,
    pub emb: Vec<f64>,
}

/// One speech-text pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub id: String,
    pub domain: Domain,
    pub text_emb: Vec<f64>,
    pub speech_emb: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudolabel: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<Span>>,
}

impl Sample {
    pub fn spans(&self) -> &[Span] {
        self.spans.as_deref().unwrap_or(&[])
    }
}

// Wire form: every field optional so that a missing one can be reported by
// name together with its line number.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: Option<String>,
    domain: Option<Domain>,
    text_emb: Option<Vec<f64>>,
    speech_emb: Option<Vec<f64>>,
    pseudolabel: Option<usize>,
    spans: Option<Vec<Span>>,
}

/// Summary numbers kept alongside the samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub text_dim: usize,
    pub speech_dim: usize,
    pub target_count: usize,
    pub other_count: usize,
}

/// An immutable, validated collection of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    samples: Vec<Sample>,
    meta: CorpusMeta,
    by_id: HashMap<String, usize>,
}

fn check_finite(v: &[f64], line: usize, field: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { line, field })
    }
}

fn check_dim(v: &[f64], expected: usize, line: usize, field: &'static str) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            line,
            field,
            expected,
            found: v.len(),
        })
    }
}

impl Corpus {
    /// Validates and wraps samples. Line numbers in errors are 1-based
    /// positions in `samples`.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyCorpus)?;
        let text_dim = first.text_emb.len();
        let speech_dim = first.speech_emb.len();
        Self::with_dims(samples, text_dim, speech_dim)
    }

    fn with_dims(samples: Vec<Sample>, text_dim: usize, speech_dim: usize) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(samples.len());
        let mut target_count = 0;
        for (i, s) in samples.iter().enumerate() {
            let line = i + 1;
            validate_sample(s, text_dim, speech_dim, line)?;
            if by_id.insert(s.id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    line,
                    id: s.id.clone(),
                });
            }
            if s.domain == Domain::Target {
                target_count += 1;
            }
        }
        let meta = CorpusMeta {
            text_dim,
            speech_dim,
            target_count,
            other_count: samples.len() - target_count,
        };
        Ok(Corpus {
            samples,
            meta,
            by_id,
        })
    }

    /// Parses the line-delimited record format. Blank lines are skipped but
    /// still counted for error line numbers.
    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        let mut dims: Option<(usize, usize)> = None;
        let mut by_id: HashMap<String, usize> = HashMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            if raw_line.trim().is_empty() {
                continue;
            }
            let sample = parse_record(raw_line, line)?;
            let (td, sd) = *dims.get_or_insert((sample.text_emb.len(), sample.speech_emb.len()));
            validate_sample(&sample, td, sd, line)?;
            if by_id.insert(sample.id.clone(), line).is_some() {
                return Err(Error::DuplicateId {
                    line,
                    id: sample.id,
                });
            }
            samples.push(sample);
        }
        Self::new(samples)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_jsonl(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn meta(&self) -> CorpusMeta {
        self.meta
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.by_id.get(id).map(|&i| &self.samples[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Sub-corpus with the given positions, in the given order. May be empty;
    /// dimensions are inherited.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        let samples: Vec<Sample> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Self::with_dims(samples, self.meta.text_dim, self.meta.speech_dim)
            .expect("subset of a valid corpus is valid")
    }

    /// Sub-corpus by id, in the order given.
    pub fn select_ids(&self, ids: &[String]) -> Result<Corpus> {
        let idx = ids
            .iter()
            .map(|id| self.index_of(id).ok_or_else(|| Error::UnknownId(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.subset(&idx))
    }

    /// Copy with every domain tag overwritten, used to audit that selection
    /// never depends on the tags.
    pub fn with_domains(&self, domain: Domain) -> Corpus {
        let samples = self
            .samples
            .iter()
            .cloned()
            .map(|mut s| {
                s.domain = domain;
                s
            })
            .collect();
        Self::with_dims(samples, self.meta.text_dim, self.meta.speech_dim)
            .expect("retagging keeps a valid corpus valid")
    }
}

fn parse_record(raw_line: &str, line: usize) -> Result<Sample> {
    let raw: RawRecord = serde_json::from_str(raw_line).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let id = raw.id.ok_or(Error::MissingField { line, field: "id" })?;
    let domain = raw.domain.ok_or(Error::MissingField {
        line,
        field: "domain",
    })?;
    let text_emb = raw.text_emb.ok_or(Error::MissingField {
        line,
        field: "text_emb",
    })?;
    let speech_emb = raw.speech_emb.ok_or(Error::MissingField {
        line,
        field: "speech_emb",
    })?;
    Ok(Sample {
        id,
        domain,
        text_emb,
        speech_emb,
        pseudolabel: raw.pseudolabel,
        spans: raw.spans,
    })
}

fn validate_sample(s: &Sample, text_dim: usize, speech_dim: usize, line: usize) -> Result<()> {
    if s.id.is_empty() || s.id.contains(['\n', '\r']) {
        return Err(Error::Parse {
            line,
            message: "id must be non-empty and free of line breaks".into(),
        });
    }
    if text_dim == 0 || speech_dim == 0 {
        return Err(Error::Parse {
            line,
            message: "embeddings must be non-empty".into(),
        });
    }
    check_dim(&s.text_emb, text_dim, line, "text_emb")?;
    check_dim(&s.speech_emb, speech_dim, line, "speech_emb")?;
    check_finite(&s.text_emb, line, "text_emb")?;
    check_finite(&s.speech_emb, line, "speech_emb")?;
    for span in s.spans() {
        check_dim(&span.emb, text_dim, line, "spans.emb")?;
        check_finite(&span.emb, line, "spans.emb")?;
    }
    Ok(())
}

/// Parses a selection file: one id per line.
pub fn parse_selection(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn read_selection(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_selection(&text))
}

/// Writes ids one per line, each terminated by `\n`.
pub fn write_selection(ids: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(bad) = ids.iter().find(|id| id.is_empty() || id.contains(['\n', '\r'])) {
        return Err(Error::invalid(format!("id {bad:?} cannot be written as a line")));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for id in ids {
        writeln!(f, "{id}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Parameters of the synthetic generator.
///
/// Each in-domain ("target") center and each out-of-domain ("other") center
/// owns one text-space and one speech-space location. Samples are drawn with
/// isotropic Gaussian noise around the locations of their center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Sample count per in-domain center in the external corpus.
    pub target_sizes: Vec<usize>,
    /// Sample count per out-of-domain center in the external corpus.
    #[serde(default)]
    pub other_sizes: Vec<usize>,
    pub text_dim: usize,
    pub speech_dim: usize,
    /// Per-coordinate noise standard deviation.
    pub noise: f64,
    /// Norm of every center location.
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Fraction of external pairs whose text is redrawn around another center.
    #[serde(default)]
    pub mismatch_fraction: f64,
    /// Number of entity types for the target text corpus spans.
    #[serde(default = "default_entity_types")]
    pub entity_types: usize,
    /// Target text-semantics corpus size per in-domain center (0 disables it).
    #[serde(default = "default_target_text_per_center")]
    pub target_text_per_center: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_separation() -> f64 {
    1.0
}
fn default_entity_types() -> usize {
    4
}
fn default_target_text_per_center() -> usize {
    20
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            target_sizes: vec![60; 4],
            other_sizes: vec![60; 6],
            text_dim: 16,
            speech_dim: 16,
            noise: 0.05,
            separation: 1.0,
            mismatch_fraction: 0.0,
            entity_types: default_entity_types(),
            target_text_per_center: default_target_text_per_center(),
            seed: 0,
        }
    }
}

/// Ground truth the generator knows about each external sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SampleTruth {
    /// Center the speech (and, unless mismatched, the text) was drawn around.
    pub center: usize,
    /// Center the text was drawn around.
    pub text_center: usize,
    pub mismatched: bool,
    /// Class of the speech center; the correct label for the audio.
    pub class: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// External speech-text pairs, shuffled.
    pub corpus: Corpus,
    /// Target-domain text corpus with entity spans, if requested.
    pub target: Option<Corpus>,
    /// Aligned with `corpus.samples()`.
    pub truth: Vec<SampleTruth>,
    /// Number of pseudolabel classes (one per in-domain center).
    pub classes: usize,
}

impl SyntheticCorpus {
    pub fn mismatched_count(&self) -> usize {
        self.truth.iter().filter(|t| t.mismatched).count()
    }
}

fn random_direction<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    // Inputs are unit vectors.
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Center locations of norm `scale`, spread so that pairwise cosine stays
/// low where the dimension allows it.
fn spread_centers<R: Rng>(rng: &mut R, count: usize, dim: usize, scale: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..64 {
            let cand = random_direction(rng, dim);
            let worst = out
                .iter()
                .map(|c| cosine(c, &cand))
                .fold(f64::NEG_INFINITY, f64::max);
            if worst <= 0.3 {
                best = Some((worst, cand));
                break;
            }
            if best.as_ref().is_none_or(|(w, _)| worst < *w) {
                best = Some((worst, cand));
            }
        }
        out.push(best.expect("at least one candidate").1);
    }
    out.into_iter()
        .map(|c| c.into_iter().map(|x| x * scale).collect())
        .collect()
}

fn around<R: Rng>(rng: &mut R, center: &[f64], noise: &Normal<f64>) -> Vec<f64> {
    center.iter().map(|c| c + noise.sample(rng)).collect()
}

/// Builds a deterministic synthetic corpus from `spec`.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    if spec.target_sizes.is_empty() {
        return Err(Error::invalid("synthetic corpus needs at least one target center"));
    }
    if spec.target_sizes.iter().chain(&spec.other_sizes).any(|&n| n == 0) {
        return Err(Error::invalid("every center needs a positive size"));
    }
    if spec.text_dim == 0 || spec.speech_dim == 0 {
        return Err(Error::invalid("embedding dimensions must be positive"));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::invalid("noise must be finite and non-negative"));
    }
    if !(spec.separation > 0.0 && spec.separation.is_finite()) {
        return Err(Error::invalid("separation must be finite and positive"));
    }
    if !(0.0..=1.0).contains(&spec.mismatch_fraction) {
        return Err(Error::invalid("mismatch fraction must lie in [0, 1]"));
    }
    let n_target = spec.target_sizes.len();
    let n_centers = n_target + spec.other_sizes.len();
    if spec.mismatch_fraction > 0.0 && n_centers < 2 {
        return Err(Error::invalid("mismatched pairs need at least two centers"));
    }
    if spec.target_text_per_center > 0 && spec.entity_types == 0 {
        return Err(Error::invalid("target text corpus needs at least one entity type"));
    }

    let mut rng = seed::rng(spec.seed);
    let noise = Normal::new(0.0, spec.noise).expect("validated noise");
    let text_centers = spread_centers(&mut rng, n_centers, spec.text_dim, spec.separation);
    let speech_centers = spread_centers(&mut rng, n_centers, spec.speech_dim, spec.separation);
    let class_of = |center: usize| center % n_target;

    // External corpus: (center, text_center) per sample, then shuffled.
    let mut layout: Vec<usize> = spec
        .target_sizes
        .iter()
        .chain(&spec.other_sizes)
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    layout.shuffle(&mut rng);
    let total = layout.len();
    let n_mismatch = (spec.mismatch_fraction * total as f64).round() as usize;
    let mut mismatched = vec![false; total];
    for i in index::sample(&mut rng, total, n_mismatch.min(total)) {
        mismatched[i] = true;
    }

    let mut samples = Vec::with_capacity(total);
    let mut truth = Vec::with_capacity(total);
    for (i, &center) in layout.iter().enumerate() {
        let text_center = if mismatched[i] {
            let shift = rng.random_range(1..n_centers);
            (center + shift) % n_centers
        } else {
            center
        };
        let domain = if center < n_target {
            Domain::Target
        } else {
            Domain::Other
        };
        samples.push(Sample {
            id: format!("s{i:06}"),
            domain,
            text_emb: around(&mut rng, &text_centers[text_center], &noise),
            speech_emb: around(&mut rng, &speech_centers[center], &noise),
            pseudolabel: Some(class_of(text_center)),
            spans: None,
        });
        truth.push(SampleTruth {
            center,
            text_center,
            mismatched: mismatched[i],
            class: class_of(center),
        });
    }
    let corpus = Corpus::new(samples)?;

    let target = if spec.target_text_per_center > 0 {
        // Entity type t is anchored at the mean text location of the
        // in-domain centers assigned to it; unassigned types get their own.
        let types = spec.entity_types;
        let mut type_centers = spread_centers(&mut rng, types, spec.text_dim, spec.separation);
        for (t, tc) in type_centers.iter_mut().enumerate() {
            let owners: Vec<usize> = (0..n_target).filter(|k| k % types == t).collect();
            if !owners.is_empty() {
                for (d, v) in tc.iter_mut().enumerate() {
                    *v = owners.iter().map(|&k| text_centers[k][d]).sum::<f64>()
                        / owners.len() as f64;
                }
            }
        }
        let width = types.to_string().len();
        let mut rows = Vec::with_capacity(n_target * spec.target_text_per_center);
        for k in 0..n_target {
            for _ in 0..spec.target_text_per_center {
                let t = k % types;
                let id = format!("t{:06}", rows.len());
                rows.push(Sample {
                    id,
                    domain: Domain::Target,
                    text_emb: around(&mut rng, &text_centers[k], &noise),
                    speech_emb: around(&mut rng, &speech_centers[k], &noise),
                    pseudolabel: Some(class_of(k)),
                    spans: Some(vec![Span {
                        entity_type: format!("TYPE{t:0width$}"),
                        emb: around(&mut rng, &type_centers[t], &noise),
                    }]),
                });
            }
        }
        // Types never owned by a center still need to appear in the data.
        for t in n_target..types {
            let id = format!("t{:06}", rows.len());
            let k = t % n_target;
            rows.push(Sample {
                id,
                domain: Domain::Target,
                text_emb: around(&mut rng, &text_centers[k], &noise),
                speech_emb: around(&mut rng, &speech_centers[k], &noise),
                pseudolabel: Some(class_of(k)),
                spans: Some(vec![Span {
                    entity_type: format!("TYPE{t:0width$}"),
                    emb: around(&mut rng, &type_centers[t], &noise),
                }]),
            });
        }
        Some(Corpus::new(rows)?)
    } else {
        None
    };

    Ok(SyntheticCorpus {
        corpus,
        target,
        truth,
        classes: n_target,
    })
}
