//! Out-of-domain filtering by text similarity to the target domain.
//!
//! Target-domain texts are clustered with cosine k-means; every external
//! pair is scored by the cosine distance from its text embedding to the
//! closest of those centroids, and pairs above a threshold are dropped.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample};
use crate::geometry::{kmeans, CentroidSet, KMeansParams, Metric, Modality};
use crate::{Error, Result};

/// Default number of target text centroids.
pub const DEFAULT_TEXT_CENTROIDS: usize = 100;

/// How the keep threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum ThresholdPolicy {
    /// Keep scores at or below this distance.
    Absolute(f64),
    /// Keep scores at or below the q-quantile of all scores.
    Quantile(f64),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Quantile(0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub id: String,
    pub score: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScores {
    pub policy: ThresholdPolicy,
    pub threshold_used: f64,
    /// In corpus order.
    pub entries: Vec<ScoreEntry>,
}

impl SimilarityScores {
    pub fn kept_ids(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.kept)
            .map(|e| e.id.clone())
            .collect()
    }

    pub fn kept_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kept).count()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(self)?;
        fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Clusters the target corpus's text embeddings into `k` cosine centroids.
pub fn fit_target_text_centroids(target: &Corpus, k: usize, seed: u64) -> Result<CentroidSet> {
    let texts: Vec<Vec<f64>> = target.samples().iter().map(|s| s.text_emb.clone()).collect();
    let mut cs = kmeans(&texts, &KMeansParams::new(k, Metric::Cosine, seed))?.centroid_set;
    cs.modality = Modality::Text;
    Ok(cs)
}

/// Cosine distance from the sample's text to its closest centroid.
pub fn score(sample: &Sample, centroids: &CentroidSet) -> Result<f64> {
    if centroids.metric != Metric::Cosine {
        return Err(Error::invalid("text similarity uses cosine centroids"));
    }
    Ok(centroids.nearest(&sample.text_emb)?.1)
}

/// Linear-interpolation quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile {q} outside [0, 1]")));
    }
    if values.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = q * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Scores every sample and keeps those at or below the policy threshold.
/// Reads text embeddings only.
pub fn filter(
    corpus: &Corpus,
    centroids: &CentroidSet,
    policy: ThresholdPolicy,
) -> Result<(Corpus, SimilarityScores)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let scores: Vec<f64> = corpus
        .samples()
        .par_iter()
        .map(|s| score(s, centroids))
        .collect::<Result<_>>()?;
    let threshold = match policy {
        ThresholdPolicy::Absolute(t) => {
            if t.is_nan() {
                return Err(Error::invalid("threshold is NaN"));
            }
            t
        }
        ThresholdPolicy::Quantile(q) => quantile(&scores, q)?,
    };
    let mut kept = Vec::new();
    let entries = corpus
        .samples()
        .iter()
        .zip(&scores)
        .enumerate()
        .map(|(i, (s, &score))| {
            let keep = score <= threshold;
            if keep {
                kept.push(i);
            }
            ScoreEntry {
                id: s.id.clone(),
                score,
                kept: keep,
            }
        })
        .collect();
    Ok((
        corpus.subset(&kept),
        SimilarityScores {
            policy,
            threshold_used: threshold,
            entries,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, Domain, SyntheticSpec};
    use proptest::prelude::*;

    fn sample(id: &str, text: Vec<f64>) -> Sample {
        Sample {
            id: id.into(),
            domain: Domain::Other,
            text_emb: text,
            speech_emb: vec![1.0],
            pseudolabel: None,
            spans: None,
        }
    }

    fn cs(c: Vec<Vec<f64>>) -> CentroidSet {
        CentroidSet::new(Modality::Text, Metric::Cosine, c).unwrap()
    }

    #[test]
    fn score_examples() {
        let one = cs(vec![vec![1.0, 0.0]]);
        assert!(score(&sample("a", vec![2.0, 0.0]), &one).unwrap().abs() < 1e-15);
        assert!((score(&sample("a", vec![0.0, 1.0]), &one).unwrap() - 1.0).abs() < 1e-15);
        let two = cs(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(score(&sample("a", vec![0.0, 1.0]), &two).unwrap().abs() < 1e-15);
        assert!(matches!(score(&sample("a", vec![0.0, 0.0]), &two), Err(Error::ZeroNorm)));
    }

    fn toy_corpus() -> Corpus {
        Corpus::new(vec![
            sample("a", vec![1.0, 0.0]),
            sample("b", vec![1.0, 1.0]),
            sample("c", vec![0.0, 1.0]),
            sample("d", vec![1.0, 0.1]),
            sample("e", vec![2.0, 0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn quantile_boundaries() {
        let c = toy_corpus();
        let centroids = cs(vec![vec![1.0, 0.0]]);
        let (all, rep) = filter(&c, &centroids, ThresholdPolicy::Quantile(1.0)).unwrap();
        assert_eq!(all.len(), 5);
        assert_eq!(rep.kept_count(), 5);
        let (min, rep) = filter(&c, &centroids, ThresholdPolicy::Quantile(0.0)).unwrap();
        // a and e tie at distance 0.
        assert_eq!(min.ids(), vec!["a", "e"]);
        assert_eq!(rep.threshold_used, 0.0);
        assert!(filter(&c, &centroids, ThresholdPolicy::Quantile(1.5)).is_err());
        assert!(filter(&c, &centroids, ThresholdPolicy::Quantile(-0.1)).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.5).unwrap(), 2.5);
        assert_eq!(quantile(&[1.0, 2.0], 0.25).unwrap(), 1.25);
        assert_eq!(quantile(&[7.0], 0.9).unwrap(), 7.0);
    }

    #[test]
    fn single_centroid_is_normalized_mean() {
        let target = Corpus::new(vec![sample("x", vec![2.0, 0.0]), sample("y", vec![0.0, 1.0])]).unwrap();
        let c = fit_target_text_centroids(&target, 1, 0).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((c.centroids[0][0] - h).abs() < 1e-12 && (c.centroids[0][1] - h).abs() < 1e-12);
        assert_eq!(c.modality, Modality::Text);
        assert_eq!(c.metric, Metric::Cosine);
    }

    #[test]
    fn k_equal_to_target_size_scores_zero_on_target() {
        let s = generate_synthetic_corpus(&SyntheticSpec {
            target_sizes: vec![5, 5],
            other_sizes: vec![],
            text_dim: 6,
            speech_dim: 3,
            target_text_per_center: 6,
            seed: 2,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let target = s.target.unwrap();
        let c = fit_target_text_centroids(&target, target.len(), 4).unwrap();
        let mean = target.samples().iter().map(|x| score(x, &c).unwrap()).sum::<f64>() / target.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!(fit_target_text_centroids(&target, target.len() + 1, 4).is_err());
    }

    #[test]
    fn separated_domains_enrich_target_fraction() {
        let s = generate_synthetic_corpus(&SyntheticSpec {
            target_sizes: vec![40; 3],
            other_sizes: vec![45; 4],
            text_dim: 16,
            speech_dim: 8,
            noise: 0.02,
            separation: 1.0,
            target_text_per_center: 20,
            seed: 9,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let target = s.target.as_ref().unwrap();
        let c = fit_target_text_centroids(target, 3, 1).unwrap();
        let (kept, _) = filter(&s.corpus, &c, ThresholdPolicy::Quantile(0.5)).unwrap();
        let frac = |c: &Corpus| c.meta().target_count as f64 / c.len() as f64;
        assert!(frac(&kept) > frac(&s.corpus), "{} vs {}", frac(&kept), frac(&s.corpus));
    }

    #[test]
    fn filter_ignores_domain_tags() {
        let s = generate_synthetic_corpus(&SyntheticSpec {
            target_sizes: vec![20; 2],
            other_sizes: vec![20; 2],
            seed: 5,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let c = fit_target_text_centroids(s.target.as_ref().unwrap(), 2, 0).unwrap();
        let (a, ra) = filter(&s.corpus, &c, ThresholdPolicy::Quantile(0.4)).unwrap();
        // Swap tags pairwise; nothing except the tags may change.
        let mut flipped: Vec<Sample> = s.corpus.samples().to_vec();
        for x in &mut flipped {
            x.domain = match x.domain {
                Domain::Target => Domain::Other,
                Domain::Other => Domain::Target,
            };
        }
        let (b, rb) = filter(&Corpus::new(flipped).unwrap(), &c, ThresholdPolicy::Quantile(0.4)).unwrap();
        assert_eq!(a.ids(), b.ids());
        assert_eq!(ra, rb);
    }

    proptest! {
        #[test]
        fn raising_threshold_never_drops(
            texts in prop::collection::vec(prop::collection::vec(0.1f64..5.0, 3), 1..30),
            t1 in 0.0f64..2.0,
            dt in 0.0f64..1.0,
        ) {
            let samples = texts.into_iter().enumerate().map(|(i, t)| sample(&format!("s{i}"), t)).collect();
            let c = Corpus::new(samples).unwrap();
            let centroids = cs(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]]);
            let (lo, rep) = filter(&c, &centroids, ThresholdPolicy::Absolute(t1)).unwrap();
            let (hi, _) = filter(&c, &centroids, ThresholdPolicy::Absolute(t1 + dt)).unwrap();
            for id in lo.ids() {
                prop_assert!(hi.get(&id).is_some());
            }
            for e in &rep.entries {
                prop_assert!(e.score >= 0.0);
                prop_assert_eq!(e.kept, e.score <= rep.threshold_used);
            }
        }
    }
}
