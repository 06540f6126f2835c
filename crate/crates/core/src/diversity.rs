//! Per-view entropy of a selection, and the random / extreme baselines it is
//! compared against.

use std::collections::HashSet;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::geometry::CentroidSet;
use crate::mcss::{view_vector, ViewCentroids};
use crate::seed;
use crate::{Error, Result};

/// Natural-log entropy of the empirical cluster distribution.
pub fn view_entropy(assignments: &[usize], k: usize) -> Result<f64> {
    Ok(entropy_of_counts(&histogram(assignments, k)?))
}

pub fn histogram(assignments: &[usize], k: usize) -> Result<Vec<usize>> {
    if assignments.is_empty() {
        return Err(Error::invalid("entropy needs at least one sample"));
    }
    let mut counts = vec![0usize; k];
    for &a in assignments {
        *counts
            .get_mut(a)
            .ok_or_else(|| Error::invalid(format!("cluster index {a} out of range for {k} clusters")))? += 1;
    }
    Ok(counts)
}

pub fn entropy_of_counts(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDiversity {
    /// Entropy in nats.
    pub entropy: f64,
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub text: ViewDiversity,
    pub semantic: ViewDiversity,
    pub speech: ViewDiversity,
    pub n: usize,
    pub log_base: String,
}

impl DiversityReport {
    /// Entropies in (T, L, A) order.
    pub fn entropies(&self) -> [f64; 3] {
        [self.text.entropy, self.semantic.entropy, self.speech.entropy]
    }
}

fn view_diversity(corpus: &Corpus, idx: &[usize], cs: &CentroidSet) -> Result<ViewDiversity> {
    let assignments: Vec<usize> = idx
        .par_iter()
        .map(|&i| {
            let v = view_vector(&corpus.samples()[i], cs)?;
            // Nearest centroid, ties to the lower index.
            let mut best = 0;
            for (k, d) in v.iter().enumerate() {
                if *d < v[best] {
                    best = k;
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let histogram = histogram(&assignments, cs.len())?;
    Ok(ViewDiversity {
        entropy: entropy_of_counts(&histogram),
        histogram,
    })
}

/// Assigns each selected sample to its nearest centroid in every view and
/// reports the three entropies.
pub fn diversity_report(selected: &[String], views: &ViewCentroids, corpus: &Corpus) -> Result<DiversityReport> {
    if selected.is_empty() {
        return Err(Error::invalid("diversity needs a non-empty selection"));
    }
    let idx = selected
        .iter()
        .map(|id| corpus.index_of(id).ok_or_else(|| Error::UnknownId(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiversityReport {
        text: view_diversity(corpus, &idx, &views.text)?,
        semantic: view_diversity(corpus, &idx, &views.semantic)?,
        speech: view_diversity(corpus, &idx, &views.speech)?,
        n: idx.len(),
        log_base: "e".into(),
    })
}

/// Uniform sample without replacement, returned in candidate order.
pub fn baseline_random_select<T: Clone>(candidates: &[T], n: usize, seed: u64) -> Result<Vec<T>> {
    if n > candidates.len() {
        return Err(Error::invalid(format!(
            "cannot draw {n} from {} candidates",
            candidates.len()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut picked = index::sample(&mut rng, candidates.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| candidates[i].clone()).collect())
}

/// Fills from the largest cluster down (ties to the lower index), nearest
/// members first, until `n` are taken.
pub fn baseline_extreme_select<T: Clone>(clusters: &[Vec<T>], n: usize) -> Result<Vec<T>> {
    let total: usize = clusters.iter().map(Vec::len).sum();
    if n > total {
        return Err(Error::invalid(format!("cannot take {n} from {total} members")));
    }
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(clusters[c].len()), c));
    let mut out = Vec::with_capacity(n);
    for c in order {
        let take = (n - out.len()).min(clusters[c].len());
        out.extend(clusters[c][..take].iter().cloned());
        if out.len() == n {
            break;
        }
    }
    Ok(out)
}

/// Ids that are unique and present, for sanity checks on selections.
pub fn is_proper_selection(selected: &[String], corpus: &Corpus) -> bool {
    let mut seen = HashSet::new();
    selected.iter().all(|id| corpus.get(id).is_some() && seen.insert(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SyntheticSpec};
    use crate::mcss::{fit_view_centroids, McssConfig};
    use proptest::prelude::*;

    #[test]
    fn entropy_examples() {
        assert_eq!(view_entropy(&[2, 2, 2], 3).unwrap(), 0.0);
        assert!((view_entropy(&[0, 1, 2, 3], 4).unwrap() - 4f64.ln()).abs() < 1e-6);
        assert!((view_entropy(&[0, 0, 0, 1], 2).unwrap() - 0.5623).abs() < 1e-4);
        assert!(view_entropy(&[0, 5], 3).is_err());
        assert!(view_entropy(&[], 3).is_err());
    }

    #[test]
    fn three_to_one_split_matches_direct_evaluation() {
        let direct = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((view_entropy(&[1, 0, 1, 1], 2).unwrap() - direct).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn entropy_bounds_and_label_permutation(
            a in prop::collection::vec(0usize..6, 1..60),
            shift in 0usize..6,
        ) {
            let h = view_entropy(&a, 6).unwrap();
            prop_assert!(h >= 0.0 && h <= 6f64.ln() + 1e-12);
            let relabeled: Vec<usize> = a.iter().map(|x| (x + shift) % 6).collect();
            prop_assert!((view_entropy(&relabeled, 6).unwrap() - h).abs() < 1e-12);
            let hist = histogram(&a, 6).unwrap();
            prop_assert_eq!(hist.iter().sum::<usize>(), a.len());
        }
    }

    #[test]
    fn random_baseline() {
        let ids: Vec<u32> = (0..20).collect();
        assert_eq!(baseline_random_select(&ids, 20, 1).unwrap(), ids);
        assert!(baseline_random_select(&ids, 0, 1).unwrap().is_empty());
        let a = baseline_random_select(&ids, 7, 9).unwrap();
        assert_eq!(a, baseline_random_select(&ids, 7, 9).unwrap());
        assert_eq!(a.len(), 7);
        assert!(baseline_random_select(&ids, 21, 1).is_err());
    }

    #[test]
    fn extreme_baseline() {
        let big: Vec<u32> = (0..10).collect();
        let small: Vec<u32> = (100..105).collect();
        let clusters = vec![small.clone(), big.clone()];
        assert_eq!(baseline_extreme_select(&clusters, 8).unwrap(), big[..8].to_vec());
        let twelve = baseline_extreme_select(&clusters, 12).unwrap();
        assert_eq!(&twelve[..10], &big[..]);
        assert_eq!(&twelve[10..], &small[..2]);
        assert_eq!(baseline_extreme_select(&clusters, 15).unwrap().len(), 15);
        assert!(baseline_extreme_select(&clusters, 16).is_err());
    }

    fn views_for(seed: u64, k: usize) -> (Corpus, ViewCentroids) {
        let s = generate_synthetic_corpus(&SyntheticSpec {
            target_sizes: vec![12, 8],
            other_sizes: vec![],
            target_text_per_center: 5,
            entity_types: 2,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let cfg = McssConfig {
            k_text: k,
            k_speech: k,
            ..McssConfig::default()
        };
        let views = fit_view_centroids(&s.corpus, s.target.as_ref().unwrap(), &cfg).unwrap();
        (s.corpus, views)
    }

    #[test]
    fn single_sample_has_zero_entropy() {
        let (corpus, views) = views_for(1, 2);
        let rep = diversity_report(&corpus.ids()[..1], &views, &corpus).unwrap();
        assert_eq!(rep.entropies(), [0.0; 3]);
        assert_eq!(rep.n, 1);
        assert!(diversity_report(&[], &views, &corpus).is_err());
        assert!(diversity_report(&["nope".into()], &views, &corpus).is_err());
    }

    #[test]
    fn single_centroid_views_have_zero_entropy() {
        let (corpus, mut views) = views_for(2, 1);
        // Collapse the semantic view to one type as well.
        views.semantic.centroids.truncate(1);
        let rep = diversity_report(&corpus.ids(), &views, &corpus).unwrap();
        assert_eq!(rep.entropies(), [0.0; 3]);
        assert_eq!(rep.text.histogram, vec![corpus.len()]);
    }
}
