//! Multi-view clustering-based sample selection.
//!
//! Every candidate pair is described by its distances to the centroids of
//! three views: text (cosine k-means over candidate texts), speech (cosine
//! k-means over candidate speech) and semantics (one centroid per target
//! entity type, Mahalanobis). Each view's distance vectors are z-scored
//! across candidates, scaled by a view weight and concatenated. The joint
//! vectors are clustered into `r` groups and a balanced subset of `n`
//! samples is taken from the groups, nearest members first.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample};
use crate::diversity::DiversityReport;
use crate::geometry::{
    estimate_covariance_auto, euclidean_distance, kmeans, CentroidSet, KMeansParams,
    KMeansResult, Metric, Modality, ZStats,
};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McssConfig {
    /// Text-view centroid count.
    pub k_text: usize,
    /// Speech-view centroid count.
    pub k_speech: usize,
    /// Joint-space cluster count.
    pub r: usize,
    /// Selection budget.
    pub n: usize,
    pub w_text: f64,
    pub w_speech: f64,
    pub w_semantic: f64,
    #[serde(default)]
    pub seed: u64,
}

impl McssConfig {
    /// Found-speech setting: heavier text and semantic views.
    pub fn mini_ps2slurp() -> Self {
        McssConfig {
            k_text: 100,
            k_speech: 100,
            r: 30,
            n: 35_000,
            w_text: 10.0,
            w_speech: 1.0,
            w_semantic: 10.0,
            seed: 0,
        }
    }

    /// Matched-speech setting: equal view weights.
    pub fn voxpopuli2slue() -> Self {
        McssConfig {
            n: 5_556,
            w_text: 1.0,
            w_speech: 1.0,
            w_semantic: 1.0,
            ..Self::mini_ps2slurp()
        }
    }

    pub fn weights(&self) -> [f64; 3] {
        [self.w_text, self.w_speech, self.w_semantic]
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_text < 1 || self.k_speech < 1 || self.r < 1 || self.n < 1 {
            return Err(Error::invalid("MCSS counts must be at least 1"));
        }
        if self.weights().iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("MCSS view weights must be positive"));
        }
        Ok(())
    }
}

impl Default for McssConfig {
    fn default() -> Self {
        Self::mini_ps2slurp()
    }
}

/// Centroid sets of the three views.
#[derive(Debug, Clone)]
pub struct ViewCentroids {
    pub text: CentroidSet,
    pub speech: CentroidSet,
    pub semantic: CentroidSet,
}

impl ViewCentroids {
    /// Views in concatenation order (T, A, L).
    pub fn in_order(&self) -> [&CentroidSet; 3] {
        [&self.text, &self.speech, &self.semantic]
    }
}

/// One centroid per entity type in the target corpus: the mean of that
/// type's span embeddings, measured with a Mahalanobis metric whose
/// covariance is pooled over all spans. Types are ordered by name.
pub fn build_semantic_centroids(target: &Corpus) -> Result<CentroidSet> {
    let mut by_type: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    let mut pooled = Vec::new();
    for s in target.samples() {
        for span in s.spans() {
            by_type.entry(&span.entity_type).or_default().push(&span.emb);
            pooled.push(span.emb.clone());
        }
    }
    if by_type.is_empty() {
        return Err(Error::NoSpans);
    }
    let dim = target.meta().text_dim;
    let mut labels = Vec::with_capacity(by_type.len());
    let mut centroids = Vec::with_capacity(by_type.len());
    for (name, embs) in by_type {
        let mut c = vec![0.0; dim];
        for e in &embs {
            for (a, x) in c.iter_mut().zip(e.iter()) {
                *a += x;
            }
        }
        c.iter_mut().for_each(|a| *a /= embs.len() as f64);
        labels.push(name.to_owned());
        centroids.push(c);
    }
    let cov = estimate_covariance_auto(&pooled)?;
    let mut cs = CentroidSet::mahalanobis(Modality::Semantic, centroids, cov.cov_inv)?;
    cs.labels = Some(labels);
    Ok(cs)
}

fn view_embedding<'a>(sample: &'a Sample, modality: Modality) -> Result<&'a [f64]> {
    match modality {
        Modality::Text | Modality::Semantic => Ok(&sample.text_emb),
        Modality::Speech => Ok(&sample.speech_emb),
        Modality::Joint => Err(Error::invalid("the joint space has no per-sample embedding")),
    }
}

/// Distances from the sample to every centroid of the view, in centroid order.
pub fn view_vector(sample: &Sample, cs: &CentroidSet) -> Result<Vec<f64>> {
    cs.distances(view_embedding(sample, cs.modality)?)
}

/// Fits the text and speech centroid sets on the candidates and the
/// semantic set on the target corpus.
pub fn fit_view_centroids(candidates: &Corpus, target: &Corpus, cfg: &McssConfig) -> Result<ViewCentroids> {
    let fit = |modality: Modality, k: usize, label: &str| -> Result<CentroidSet> {
        let pts: Vec<Vec<f64>> = candidates
            .samples()
            .iter()
            .map(|s| view_embedding(s, modality).map(<[f64]>::to_vec))
            .collect::<Result<_>>()?;
        let mut cs = kmeans(&pts, &KMeansParams::new(k, Metric::Cosine, seed::derive(cfg.seed, label)))?.centroid_set;
        cs.modality = modality;
        Ok(cs)
    };
    Ok(ViewCentroids {
        text: fit(Modality::Text, cfg.k_text, "view-text")?,
        speech: fit(Modality::Speech, cfg.k_speech, "view-speech")?,
        semantic: build_semantic_centroids(target)?,
    })
}

/// Weighted concatenation of z-scored view vectors.
#[derive(Debug, Clone)]
pub struct MultiViewEmbedding {
    pub rows: Vec<Vec<f64>>,
    /// Column ranges of the T, A and L blocks.
    pub blocks: [Range<usize>; 3],
    pub zstats: [ZStats; 3],
    pub weights: [f64; 3],
}

/// Normalizes each view's raw distance vectors across samples, scales them by
/// the view weight and concatenates them in the given order.
pub fn combine_views(raw: [&[Vec<f64>]; 3], weights: [f64; 3]) -> Result<MultiViewEmbedding> {
    let n = raw[0].len();
    if raw.iter().any(|v| v.len() != n) {
        return Err(Error::invalid("every view needs one vector per sample"));
    }
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let zstats = [ZStats::fit(raw[0])?, ZStats::fit(raw[1])?, ZStats::fit(raw[2])?];
    let mut blocks: [Range<usize>; 3] = [0..0, 0..0, 0..0];
    let mut start = 0;
    for (b, z) in blocks.iter_mut().zip(&zstats) {
        *b = start..start + z.mean.len();
        start = b.end;
    }
    let rows = (0..n)
        .map(|i| {
            let mut row = Vec::with_capacity(start);
            for v in 0..3 {
                let z = zstats[v].apply(&raw[v][i])?;
                row.extend(z.into_iter().map(|x| x * weights[v]));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(MultiViewEmbedding {
        rows,
        blocks,
        zstats,
        weights,
    })
}

/// Raw view vectors for every sample, then [`combine_views`].
pub fn multiview_embed(samples: &[Sample], views: &ViewCentroids, weights: [f64; 3]) -> Result<MultiViewEmbedding> {
    let raw: Vec<Vec<Vec<f64>>> = views
        .in_order()
        .iter()
        .map(|cs| samples.par_iter().map(|s| view_vector(s, cs)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    combine_views([&raw[0], &raw[1], &raw[2]], weights)
}

/// Euclidean k-means with `r` clusters over the joint vectors.
pub fn cluster_multiview(embedding: &MultiViewEmbedding, r: usize, seed: u64) -> Result<KMeansResult> {
    kmeans(&embedding.rows, &KMeansParams::new(r, Metric::Euclidean, seed))
}

/// Members of each cluster ordered by distance to the cluster centroid,
/// ties broken by ascending id.
pub fn ordered_members(result: &KMeansResult, rows: &[Vec<f64>], ids: &[String]) -> Result<Vec<Vec<usize>>> {
    let centroids = &result.centroid_set.centroids;
    let mut keyed: Vec<Vec<(f64, usize)>> = vec![Vec::new(); centroids.len()];
    for (i, &c) in result.assignments.iter().enumerate() {
        keyed[c].push((euclidean_distance(&rows[i], &centroids[c])?, i));
    }
    Ok(keyed
        .into_iter()
        .map(|mut members| {
            members.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| ids[a.1].cmp(&ids[b.1])));
            members.into_iter().map(|(_, i)| i).collect()
        })
        .collect())
}

/// Per-cluster selection counts for a budget `n` below the total size.
///
/// Clusters are visited smallest first; while a cluster is smaller than the
/// current per-cluster requirement `r_min = floor(n_left / r_left)` it is
/// taken whole and the requirement recomputed. Every remaining cluster then
/// gets `r_min`. The `n_left mod r_left` slots that integer division leaves
/// over are handed out one at a time to the remaining clusters, largest
/// first, so the counts add up to exactly `n`.
pub fn balanced_quota(sizes: &[usize], n: usize) -> Result<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    if n == 0 {
        return Err(Error::invalid("selection budget must be positive"));
    }
    if n >= total {
        return Err(Error::invalid(format!(
            "budget {n} must be below the candidate count {total}"
        )));
    }
    let r = sizes.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by_key(|&c| (sizes[c], c));

    let mut quota = vec![0; r];
    let mut n_left = n;
    let mut r_left = r;
    let mut r_min = n_left / r_left;
    let mut i = 0;
    while i < r && sizes[order[i]] < r_min {
        let c = order[i];
        quota[c] = sizes[c];
        n_left -= sizes[c];
        r_left -= 1;
        // Cannot reach zero: the largest cluster is bigger than whatever is left.
        r_min = n_left / r_left;
        i += 1;
    }
    let mut open: Vec<usize> = order[i..].to_vec();
    for &c in &open {
        quota[c] = r_min;
    }
    let mut leftover = n_left - r_left * r_min;
    open.sort_by_key(|&c| (std::cmp::Reverse(sizes[c]), c));
    while leftover > 0 {
        for &c in &open {
            if leftover == 0 {
                break;
            }
            if quota[c] < sizes[c] {
                quota[c] += 1;
                leftover -= 1;
            }
        }
    }
    Ok(quota)
}

/// Takes the [`balanced_quota`] prefix of every cluster. Members must be
/// ordered nearest first; output is in cluster order.
pub fn greedy_balanced_select<T: Clone>(clusters: &[Vec<T>], n: usize) -> Result<Vec<T>> {
    let sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
    let quota = balanced_quota(&sizes, n)?;
    Ok(clusters
        .iter()
        .zip(&quota)
        .flat_map(|(members, &q)| members[..q].iter().cloned())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub selected_ids: Vec<String>,
    pub candidate_count: usize,
    /// Budget was at least the candidate count, so everything passed through.
    pub skipped_mcss: bool,
    /// Joint-space cluster sizes (empty when skipped).
    pub cluster_sizes: Vec<usize>,
    /// Selected count per joint-space cluster (empty when skipped).
    pub selected_per_cluster: Vec<usize>,
    pub semantic_types: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diversity: Option<DiversityReport>,
    pub config: McssConfig,
}

impl SelectionReport {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(self)?;
        fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Everything MCSS produced, for downstream diagnostics.
#[derive(Debug, Clone)]
pub struct McssOutcome {
    pub report: SelectionReport,
    pub views: Option<ViewCentroids>,
    /// Candidate indices per joint cluster, nearest first.
    pub clusters: Option<Vec<Vec<usize>>>,
    pub embedding: Option<MultiViewEmbedding>,
}

/// Selects up to `cfg.n` candidates. Reads embeddings and spans only.
pub fn mcss_select(candidates: &Corpus, target: &Corpus, cfg: &McssConfig) -> Result<McssOutcome> {
    cfg.validate()?;
    if candidates.is_empty() || target.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.n >= candidates.len() {
        return Ok(McssOutcome {
            report: SelectionReport {
                selected_ids: candidates.ids(),
                candidate_count: candidates.len(),
                skipped_mcss: true,
                cluster_sizes: Vec::new(),
                selected_per_cluster: Vec::new(),
                semantic_types: Vec::new(),
                diversity: None,
                config: cfg.clone(),
            },
            views: None,
            clusters: None,
            embedding: None,
        });
    }

    let mut views = fit_view_centroids(candidates, target, cfg)?;
    let embedding = multiview_embed(candidates.samples(), &views, cfg.weights())?;
    views.text.zstats = Some(embedding.zstats[0].clone());
    views.speech.zstats = Some(embedding.zstats[1].clone());
    views.semantic.zstats = Some(embedding.zstats[2].clone());

    let joint = cluster_multiview(&embedding, cfg.r, seed::derive(cfg.seed, "joint"))?;
    let ids = candidates.ids();
    let clusters = ordered_members(&joint, &embedding.rows, &ids)?;
    let sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
    let quota = balanced_quota(&sizes, cfg.n)?;
    let selected_ids = clusters
        .iter()
        .zip(&quota)
        .flat_map(|(m, &q)| m[..q].iter().map(|&i| ids[i].clone()))
        .collect();

    Ok(McssOutcome {
        report: SelectionReport {
            selected_ids,
            candidate_count: candidates.len(),
            skipped_mcss: false,
            cluster_sizes: sizes,
            selected_per_cluster: quota,
            semantic_types: views.semantic.labels.clone().unwrap_or_default(),
            diversity: None,
            config: cfg.clone(),
        },
        views: Some(views),
        clusters: Some(clusters),
        embedding: Some(embedding),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, Domain, Span, SyntheticSpec};
    use crate::geometry::SpdMatrix;
    use proptest::prelude::*;

    fn span(t: &str, e: Vec<f64>) -> Span {
        Span {
            entity_type: t.into(),
            emb: e,
        }
    }

    fn sample(id: &str, text: Vec<f64>, spans: Vec<Span>) -> Sample {
        Sample {
            id: id.into(),
            domain: Domain::Target,
            speech_emb: text.clone(),
            text_emb: text,
            pseudolabel: None,
            spans: Some(spans),
        }
    }

    #[test]
    fn semantic_centroids_average_spans() {
        let target = Corpus::new(vec![
            sample("a", vec![1.0, 0.0], vec![span("LOC", vec![0.0, 0.0]), span("DATE", vec![0.0, 4.0])]),
            sample("b", vec![0.0, 1.0], vec![span("LOC", vec![2.0, 0.0])]),
            sample("c", vec![1.0, 1.0], vec![span("LOC", vec![1.0, 1.0]), span("LOC", vec![1.0, -1.0])]),
        ])
        .unwrap();
        let cs = build_semantic_centroids(&target).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs.labels.as_deref().unwrap(), ["DATE", "LOC"]);
        assert_eq!(cs.centroids[0], vec![0.0, 4.0]);
        assert_eq!(cs.centroids[1], vec![1.0, 0.0]);
        assert_eq!(cs.metric, Metric::Mahalanobis);
    }

    #[test]
    fn no_spans_is_an_error() {
        let target = Corpus::new(vec![sample("a", vec![1.0], vec![])]).unwrap();
        assert!(matches!(build_semantic_centroids(&target), Err(Error::NoSpans)));
    }

    #[test]
    fn entity_type_counts_follow_data() {
        for types in [18, 53] {
            let s = generate_synthetic_corpus(&SyntheticSpec {
                target_sizes: vec![4; 6],
                other_sizes: vec![],
                entity_types: types,
                target_text_per_center: 3,
                text_dim: 8,
                seed: 1,
                ..SyntheticSpec::default()
            })
            .unwrap();
            let cs = build_semantic_centroids(s.target.as_ref().unwrap()).unwrap();
            assert_eq!(cs.len(), types);
        }
    }

    #[test]
    fn view_vector_examples() {
        let s = sample("a", vec![0.0, 1.0], vec![]);
        let eu = CentroidSet::new(Modality::Text, Metric::Euclidean, vec![vec![5.0, 5.0], vec![0.0, 1.0], vec![3.0, 0.0]]).unwrap();
        let v = view_vector(&s, &eu).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[1], 0.0);
        let cos = CentroidSet::new(Modality::Speech, Metric::Cosine, vec![vec![1.0, 0.0], vec![-2.0, 0.0]]).unwrap();
        assert_eq!(view_vector(&s, &cos).unwrap(), vec![1.0, 1.0]);
        let one = CentroidSet::mahalanobis(Modality::Semantic, vec![vec![0.0, 0.0]], SpdMatrix::identity(2)).unwrap();
        assert_eq!(view_vector(&s, &one).unwrap(), vec![1.0]);
    }

    fn raw_views() -> [Vec<Vec<f64>>; 3] {
        [
            vec![vec![0.1, 0.9], vec![0.5, 0.2]],
            vec![vec![1.0, 3.0, 2.0], vec![0.0, 1.0, 5.0]],
            vec![vec![2.0], vec![4.0]],
        ]
    }

    #[test]
    fn combined_blocks_are_centered_then_weighted() {
        let raw = raw_views();
        let unit = combine_views([&raw[0], &raw[1], &raw[2]], [1.0; 3]).unwrap();
        assert_eq!(unit.blocks, [0..2, 2..5, 5..6]);
        for j in 0..6 {
            let mean = (unit.rows[0][j] + unit.rows[1][j]) / 2.0;
            assert!(mean.abs() < 1e-12);
        }
        let heavy = combine_views([&raw[0], &raw[1], &raw[2]], [10.0, 1.0, 10.0]).unwrap();
        let block_norm = |e: &MultiViewEmbedding, b: usize| {
            e.rows.iter().map(|r| r[e.blocks[b].clone()].iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
        };
        for b in [0, 2] {
            assert!((block_norm(&heavy, b) - 10.0 * block_norm(&unit, b)).abs() < 1e-9);
        }
        assert!((block_norm(&heavy, 1) - block_norm(&unit, 1)).abs() < 1e-12);
        assert!(combine_views([&raw[0][..1], &raw[1][..1], &raw[2][..1]], [1.0; 3]).is_err());
    }

    #[test]
    fn quota_hand_traces() {
        assert_eq!(balanced_quota(&[2, 10, 10], 12).unwrap(), vec![2, 5, 5]);
        assert_eq!(balanced_quota(&[1, 1, 10], 6).unwrap(), vec![1, 1, 4]);
        assert_eq!(balanced_quota(&[5, 5, 5], 9).unwrap(), vec![3, 3, 3]);
        // Remainder slots go to the largest open clusters.
        assert_eq!(balanced_quota(&[5, 6, 7], 10).unwrap(), vec![3, 3, 4]);
        assert!(balanced_quota(&[2, 2], 0).is_err());
        assert!(balanced_quota(&[2, 2], 4).is_err());
    }

    #[test]
    fn greedy_select_takes_nearest_prefixes() {
        let clusters = vec![vec!["a0", "a1"], vec!["b0", "b1", "b2", "b3"], vec!["c0", "c1", "c2", "c3"]];
        let got = greedy_balanced_select(&clusters, 6).unwrap();
        assert_eq!(got, vec!["a0", "a1", "b0", "b1", "c0", "c1"]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn quota_hits_budget_exactly(
            sizes in prop::collection::vec(1usize..60, 1..12),
            frac in 0.0f64..1.0,
        ) {
            let total: usize = sizes.iter().sum();
            prop_assume!(total > 1);
            let n = 1 + ((total - 1) as f64 * frac) as usize;
            let n = n.min(total - 1);
            let q = balanced_quota(&sizes, n).unwrap();
            prop_assert_eq!(q.iter().sum::<usize>(), n);
            prop_assert!(q.iter().zip(&sizes).all(|(a, b)| a <= b));
            // Clusters not taken whole differ by at most one.
            let open: Vec<usize> = q.iter().zip(&sizes).filter(|(a, b)| a < b).map(|(a, _)| *a).collect();
            if let (Some(lo), Some(hi)) = (open.iter().min(), open.iter().max()) {
                prop_assert!(hi - lo <= 1);
                // A cluster taken whole is at most one above an open quota.
                for (a, b) in q.iter().zip(&sizes) {
                    if a == b {
                        prop_assert!(*b <= hi + 1);
                    }
                }
            }
        }
    }

    #[test]
    fn case_one_passes_everything_through() {
        let s = generate_synthetic_corpus(&SyntheticSpec {
            target_sizes: vec![5, 5],
            other_sizes: vec![],
            seed: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let cfg = McssConfig {
            k_text: 2,
            k_speech: 2,
            r: 2,
            n: 10,
            ..McssConfig::default()
        };
        let out = mcss_select(&s.corpus, s.target.as_ref().unwrap(), &cfg).unwrap();
        assert!(out.report.skipped_mcss);
        assert_eq!(out.report.selected_ids, s.corpus.ids());
    }

    #[test]
    fn dominant_cluster_is_balanced() {
        let s = generate_synthetic_corpus(&SyntheticSpec {
            target_sizes: vec![270, 10, 10, 10],
            other_sizes: vec![],
            noise: 0.03,
            entity_types: 4,
            target_text_per_center: 10,
            seed: 21,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let cfg = McssConfig {
            k_text: 4,
            k_speech: 4,
            r: 8,
            n: 90,
            w_text: 1.0,
            w_speech: 1.0,
            w_semantic: 1.0,
            seed: 5,
        };
        let out = mcss_select(&s.corpus, s.target.as_ref().unwrap(), &cfg).unwrap();
        let r = &out.report;
        assert!(!r.skipped_mcss);
        assert_eq!(r.selected_ids.len(), 90);
        assert_eq!(r.selected_per_cluster.iter().sum::<usize>(), 90);
        let open: Vec<usize> = r
            .selected_per_cluster
            .iter()
            .zip(&r.cluster_sizes)
            .filter(|(a, b)| a < b)
            .map(|(a, _)| *a)
            .collect();
        assert!(open.iter().max().unwrap() - open.iter().min().unwrap() <= 1);
        // Selected members are each cluster's nearest.
        let clusters = out.clusters.as_ref().unwrap();
        let ids = s.corpus.ids();
        let mut expect = Vec::new();
        for (m, &q) in clusters.iter().zip(&r.selected_per_cluster) {
            expect.extend(m[..q].iter().map(|&i| ids[i].clone()));
        }
        assert_eq!(expect, r.selected_ids);
    }

    #[test]
    fn relabeling_views_keeps_selection() {
        let s = generate_synthetic_corpus(&SyntheticSpec {
            target_sizes: vec![30, 20, 10],
            other_sizes: vec![15],
            seed: 4,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let views = fit_view_centroids(
            &s.corpus,
            s.target.as_ref().unwrap(),
            &McssConfig {
                k_text: 3,
                k_speech: 5,
                ..McssConfig::default()
            },
        )
        .unwrap();
        let raw: Vec<Vec<Vec<f64>>> = views
            .in_order()
            .iter()
            .map(|cs| s.corpus.samples().iter().map(|x| view_vector(x, cs).unwrap()).collect())
            .collect();
        let pick = |e: MultiViewEmbedding| {
            let joint = cluster_multiview(&e, 6, 17).unwrap();
            let c = ordered_members(&joint, &e.rows, &s.corpus.ids()).unwrap();
            let mut sel = greedy_balanced_select(&c, 40).unwrap();
            sel.sort();
            sel
        };
        let a = pick(combine_views([&raw[0], &raw[1], &raw[2]], [3.0, 1.0, 2.0]).unwrap());
        let b = pick(combine_views([&raw[1], &raw[0], &raw[2]], [1.0, 3.0, 2.0]).unwrap());
        assert_eq!(a, b);
    }
}
