//! Distances, normalization, covariance estimation and seeded k-means.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

/// Standard deviations below this are treated as a constant coordinate.
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    /// Text embeddings.
    #[serde(rename = "T")]
    Text,
    /// Speech embeddings.
    #[serde(rename = "A")]
    Speech,
    /// Entity-type semantics, measured on text embeddings.
    #[serde(rename = "L")]
    Semantic,
    /// Concatenated multi-view space.
    #[serde(rename = "joint")]
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
    Mahalanobis,
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            left: a.len(),
            right: b.len(),
        })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `1 - cos(a, b)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((1.0 - dot(a, b) / (na * nb)).clamp(0.0, 2.0))
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(squared_euclidean(a, b).sqrt())
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A symmetric positive definite matrix, checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::NotPositiveDefinite);
        }
        let scale = m.amax().max(1.0);
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        if m.iter().any(|x| !x.is_finite()) || m.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(SpdMatrix(m))
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// `sqrt((x - mu)^T S (x - mu))` for an inverse covariance `S`.
pub fn mahalanobis_distance(x: &[f64], mu: &[f64], cov_inv: &SpdMatrix) -> Result<f64> {
    same_len(x, mu)?;
    if x.len() != cov_inv.dim() {
        return Err(Error::ShapeMismatch {
            left: x.len(),
            right: cov_inv.dim(),
        });
    }
    let d = DVector::from_iterator(x.len(), x.iter().zip(mu).map(|(a, b)| a - b));
    let q = d.dot(&(cov_inv.matrix() * &d));
    Ok(q.max(0.0).sqrt())
}

#[derive(Debug, Clone)]
pub struct Covariance {
    pub cov: DMatrix<f64>,
    pub cov_inv: SpdMatrix,
    pub ridge: f64,
}

/// Sample covariance (divisor `n - 1`) with `ridge * I` added, plus its
/// verified inverse.
pub fn estimate_covariance(vectors: &[Vec<f64>], ridge: f64) -> Result<Covariance> {
    let cov = sample_covariance(vectors)? + DMatrix::identity(vectors[0].len(), vectors[0].len()) * ridge;
    invert_covariance(cov, ridge)
}

/// Same as [`estimate_covariance`] with ridge `1e-6 * trace(cov) / d`
/// (or `1e-6` when the trace vanishes).
pub fn estimate_covariance_auto(vectors: &[Vec<f64>]) -> Result<Covariance> {
    let raw = sample_covariance(vectors)?;
    let d = raw.nrows() as f64;
    let trace = raw.trace();
    let ridge = if trace > 0.0 { 1e-6 * trace / d } else { 1e-6 };
    let cov = raw + DMatrix::identity(vectors[0].len(), vectors[0].len()) * ridge;
    invert_covariance(cov, ridge)
}

pub fn sample_covariance(vectors: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if vectors.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: vectors.len(),
        });
    }
    let d = vectors[0].len();
    for v in vectors {
        same_len(v, &vectors[0])?;
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::zeros(d, d);
    for v in vectors {
        let c = DVector::from_iterator(d, v.iter().zip(&mean).map(|(x, m)| x - m));
        cov += &c * c.transpose();
    }
    Ok(cov / (n - 1.0))
}

fn invert_covariance(cov: DMatrix<f64>, ridge: f64) -> Result<Covariance> {
    let d = cov.nrows();
    let chol = cov
        .clone()
        .cholesky()
        .ok_or(Error::InversionFailed { residual: f64::INFINITY })?;
    let mut inv = chol.inverse();
    // Symmetrize away rounding.
    inv = (&inv + inv.transpose()) * 0.5;
    let residual = (&cov * &inv - DMatrix::<f64>::identity(d, d)).amax();
    if !(residual <= 1e-8) {
        return Err(Error::InversionFailed { residual });
    }
    Ok(Covariance {
        cov,
        cov_inv: SpdMatrix::new(inv)?,
        ridge,
    })
}

/// Per-coordinate mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZStats {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::TooFewPoints {
                needed: 2,
                got: rows.len(),
            });
        }
        let d = rows[0].len();
        for r in rows {
            same_len(r, &rows[0])?;
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s < MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(ZStats { mean, std })
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        same_len(v, &self.mean)?;
        Ok(v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }
}

pub fn zscore_fit(rows: &[Vec<f64>]) -> Result<ZStats> {
    ZStats::fit(rows)
}

pub fn zscore_apply(stats: &ZStats, v: &[f64]) -> Result<Vec<f64>> {
    stats.apply(v)
}

/// K centroids of one view together with the metric used against them.
#[derive(Debug, Clone)]
pub struct CentroidSet {
    pub modality: Modality,
    pub metric: Metric,
    pub centroids: Vec<Vec<f64>>,
    /// Inverse covariance, Mahalanobis only.
    pub cov_inv: Option<SpdMatrix>,
    /// Names of the centroids where they have one (entity types).
    pub labels: Option<Vec<String>>,
    /// Normalization statistics of this view's distance vectors, once fit.
    pub zstats: Option<ZStats>,
}

impl CentroidSet {
    pub fn new(modality: Modality, metric: Metric, centroids: Vec<Vec<f64>>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::invalid("centroid set needs at least one centroid"));
        }
        if metric == Metric::Mahalanobis {
            return Err(Error::invalid("use CentroidSet::mahalanobis for the Mahalanobis metric"));
        }
        Self::check(&centroids)?;
        Ok(CentroidSet {
            modality,
            metric,
            centroids,
            cov_inv: None,
            labels: None,
            zstats: None,
        })
    }

    pub fn mahalanobis(modality: Modality, centroids: Vec<Vec<f64>>, cov_inv: SpdMatrix) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::invalid("centroid set needs at least one centroid"));
        }
        Self::check(&centroids)?;
        if centroids[0].len() != cov_inv.dim() {
            return Err(Error::ShapeMismatch {
                left: centroids[0].len(),
                right: cov_inv.dim(),
            });
        }
        Ok(CentroidSet {
            modality,
            metric: Metric::Mahalanobis,
            centroids,
            cov_inv: Some(cov_inv),
            labels: None,
            zstats: None,
        })
    }

    fn check(centroids: &[Vec<f64>]) -> Result<()> {
        for c in centroids {
            same_len(c, &centroids[0])?;
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("centroids must be finite"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn distance(&self, k: usize, v: &[f64]) -> Result<f64> {
        let c = &self.centroids[k];
        match self.metric {
            Metric::Cosine => cosine_distance(v, c),
            Metric::Euclidean => euclidean_distance(v, c),
            Metric::Mahalanobis => mahalanobis_distance(
                v,
                c,
                self.cov_inv.as_ref().expect("mahalanobis set carries cov_inv"),
            ),
        }
    }

    /// Distances from `v` to every centroid, in centroid order.
    pub fn distances(&self, v: &[f64]) -> Result<Vec<f64>> {
        (0..self.len()).map(|k| self.distance(k, v)).collect()
    }

    /// Index and distance of the nearest centroid; ties go to the lower index.
    pub fn nearest(&self, v: &[f64]) -> Result<(usize, f64)> {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.len() {
            let d = self.distance(k, v)?;
            if d < best.1 {
                best = (k, d);
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub metric: Metric,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    /// Independent seedings; the run with the lowest final inertia wins.
    pub n_init: usize,
}

impl KMeansParams {
    pub fn new(k: usize, metric: Metric, seed: u64) -> Self {
        KMeansParams {
            k,
            metric,
            seed,
            max_iter: 100,
            tol: 1e-6,
            n_init: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroid_set: CentroidSet,
    pub assignments: Vec<usize>,
    /// Objective at the final assignment: summed squared distance for the
    /// Euclidean metric, summed cosine distance for the cosine metric.
    pub inertia: f64,
    /// Objective after every assignment step, starting with the seeding.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    /// Member indices per cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.centroid_set.len()];
        for (i, &a) in self.assignments.iter().enumerate() {
            out[a].push(i);
        }
        out
    }
}

// Point-to-centroid cost minimized by the update step of each metric.
fn cost(metric: Metric, p: &[f64], c: &[f64]) -> f64 {
    match metric {
        Metric::Euclidean => squared_euclidean(p, c),
        Metric::Cosine => (1.0 - dot(p, c)).clamp(0.0, 2.0),
        Metric::Mahalanobis => unreachable!("k-means is not defined for mahalanobis"),
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], metric: Metric) -> Vec<(usize, f64)> {
    points
        .par_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (k, c) in centroids.iter().enumerate() {
                let d = cost(metric, p, c);
                if d < best.1 {
                    best = (k, d);
                }
            }
            best
        })
        .collect()
}

// Moves the costliest point of a multi-member cluster into each empty one.
fn repair_empty(
    points: &[Vec<f64>],
    centroids: &mut [Vec<f64>],
    assigned: &mut [(usize, f64)],
) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &(a, _) in assigned.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut donor: Option<usize> = None;
        for (i, &(a, d)) in assigned.iter().enumerate() {
            if sizes[a] > 1 && donor.is_none_or(|j| d > assigned[j].1) {
                donor = Some(i);
            }
        }
        let i = donor.expect("k <= n guarantees a multi-member cluster");
        centroids[empty] = points[i].clone();
        assigned[i] = (empty, 0.0);
    }
}

/// Lloyd iterations from k-means++ seeding.
///
/// Cosine clustering runs on unit-normalized points with normalized-mean
/// centroids. Centroid updates are sequential in point order, so the result
/// depends only on the seed.
pub fn kmeans(points: &[Vec<f64>], params: &KMeansParams) -> Result<KMeansResult> {
    let KMeansParams {
        k,
        metric,
        seed,
        max_iter,
        tol,
        n_init,
    } = *params;
    if n_init < 1 {
        return Err(Error::invalid("n_init must be at least 1"));
    }
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > points.len() {
        return Err(Error::TooFewPoints {
            needed: k,
            got: points.len(),
        });
    }
    if metric == Metric::Mahalanobis {
        return Err(Error::invalid("k-means supports cosine and euclidean metrics"));
    }
    for p in points {
        same_len(p, &points[0])?;
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("k-means input must be finite"));
        }
    }
    let owned;
    let pts: &[Vec<f64>] = if metric == Metric::Cosine {
        if points.iter().any(|p| norm(p) == 0.0) {
            return Err(Error::ZeroNorm);
        }
        owned = points.iter().map(|p| unit(p)).collect::<Vec<_>>();
        &owned
    } else {
        points
    };

    let mut rng = seed::rng(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..n_init {
        let run = lloyd(pts, k, metric, max_iter, tol, &mut rng);
        // Strict comparison keeps the earliest of equally good runs.
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one run"))
}

fn lloyd<R: Rng>(pts: &[Vec<f64>], k: usize, metric: Metric, max_iter: usize, tol: f64, rng: &mut R) -> KMeansResult {
    let dim = pts[0].len();
    let mut centroids = plus_plus_init(pts, k, metric, rng);
    let mut assigned = assign(pts, &centroids, metric);
    repair_empty(pts, &mut centroids, &mut assigned);
    let mut history = vec![assigned.iter().map(|a| a.1).sum::<f64>()];
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &(a, _)) in pts.iter().zip(&assigned) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            let n = counts[c] as f64;
            let mut next: Vec<f64> = sums[c].iter().map(|s| s / n).collect();
            if metric == Metric::Cosine {
                let nn = norm(&next);
                if nn < 1e-12 {
                    // Members cancel out; keep the previous direction.
                    continue;
                }
                next.iter_mut().for_each(|x| *x /= nn);
            }
            movement = movement.max(squared_euclidean(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        assigned = assign(pts, &centroids, metric);
        repair_empty(pts, &mut centroids, &mut assigned);
        history.push(assigned.iter().map(|a| a.1).sum());
        if movement < tol {
            break;
        }
    }

    let inertia = *history.last().expect("history is non-empty");
    KMeansResult {
        centroid_set: CentroidSet {
            modality: Modality::Joint,
            metric,
            centroids,
            cov_inv: None,
            labels: None,
            zstats: None,
        },
        assignments: assigned.into_iter().map(|a| a.0).collect(),
        inertia,
        inertia_history: history,
        iterations,
    }
}

/// Greedy k-means++: each step draws `2 + ln k` candidates in proportion to
/// their squared distance from the chosen seeds and keeps the one that
/// lowers the total potential most.
fn plus_plus_init<R: Rng>(pts: &[Vec<f64>], k: usize, metric: Metric, rng: &mut R) -> Vec<Vec<f64>> {
    let n = pts.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![pts[first].clone()];
    let mut best: Vec<f64> = pts.iter().map(|p| cost(metric, p, &pts[first])).collect();
    while centroids.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut winner: Option<(f64, usize, Vec<f64>)> = None;
            for _ in 0..trials {
                let cand = sample_by_weight(&best, total, rng);
                let updated: Vec<f64> = pts
                    .iter()
                    .zip(&best)
                    .map(|(p, &b)| b.min(cost(metric, p, &pts[cand])))
                    .collect();
                let potential: f64 = updated.iter().sum();
                if winner.as_ref().is_none_or(|w| potential < w.0) {
                    winner = Some((potential, cand, updated));
                }
            }
            let (_, cand, updated) = winner.expect("at least one trial");
            best = updated;
            cand
        } else {
            // Every point coincides with a chosen one; fall back to an
            // unused index so the seeds stay distinct points.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(pts[pick].clone());
    }
    centroids
}

fn sample_by_weight<R: Rng>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let mut target = rng.random::<f64>() * total;
    let mut pick = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        pick = Some(i);
        if target < w {
            break;
        }
        target -= w;
    }
    pick.expect("positive total has a positive weight")
}
