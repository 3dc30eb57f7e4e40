//! Lloyd's algorithm with greedy k-means++ seeding.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of station groups.
pub const MAX_CLUSTERS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    /// Within-cluster sum of squares after each update step.
    #[serde(default)]
    pub inertia_history: Vec<f64>,
}

impl ClusterAssignment {
    /// Assignment from known labels; centroids are the member means.
    pub fn from_labels(labels: Vec<usize>, k: usize, features: &[Vec<f64>]) -> Result<Self> {
        if labels.len() != features.len() {
            return Err(Error::invalid("one label per feature row is required"));
        }
        let a = Self {
            k,
            centroids: centroids_of(features, &labels, k, features.first().map_or(0, Vec::len)),
            labels,
            seed: 0,
            inertia_history: Vec::new(),
        };
        a.validate(features.len())?;
        Ok(a)
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.k == 0 || self.k > MAX_CLUSTERS {
            return Err(Error::validation(
                "k",
                format!("must lie in 1..={MAX_CLUSTERS}, got {}", self.k),
            ));
        }
        if self.labels.len() != n_points {
            return Err(Error::validation(
                "labels",
                format!("expected {n_points} labels, got {}", self.labels.len()),
            ));
        }
        let mut sizes = vec![0usize; self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= self.k {
                return Err(Error::validation(
                    format!("labels[{i}]"),
                    format!("{l} is not below k = {}", self.k),
                ));
            }
            sizes[l] += 1;
        }
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::validation("labels", format!("cluster {c} is empty")));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn inertia(&self) -> Option<f64> {
        self.inertia_history.last().copied()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn centroids_of(features: &[Vec<f64>], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (x, &l) in features.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

fn wcss(features: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    features
        .iter()
        .zip(labels)
        .map(|(x, &l)| sq_dist(x, &centroids[l]))
        .sum()
}

/// Greedy k-means++: each new centre is the best of `2 + ln k` candidates
/// drawn with probability proportional to squared distance.
fn seed_centroids(features: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = features.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![features[rng.gen_range(0..n)].clone()];
    let mut closest: Vec<f64> = features.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let potential: f64 = closest.iter().sum();
        let candidates: Vec<usize> = if potential > 0.0 {
            let dist = WeightedIndex::new(&closest).expect("weights are finite and not all zero");
            (0..trials).map(|_| dist.sample(rng)).collect()
        } else {
            // Every point coincides with a centre already.
            vec![rng.gen_range(0..n)]
        };
        let (best, best_closest) = candidates
            .into_iter()
            .map(|c| {
                let updated: Vec<f64> = features
                    .iter()
                    .zip(&closest)
                    .map(|(x, &d)| d.min(sq_dist(x, &features[c])))
                    .collect();
                (c, updated)
            })
            .min_by(|a, b| a.1.iter().sum::<f64>().total_cmp(&b.1.iter().sum::<f64>()))
            .expect("at least one candidate");
        centroids.push(features[best].clone());
        closest = best_closest;
    }
    centroids
}

/// Nearest centre, keeping the current label on ties.
fn assign(features: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize]) {
    for (x, label) in features.iter().zip(labels.iter_mut()) {
        let mut best = *label;
        let mut best_d = sq_dist(x, &centroids[best]);
        for (c, centre) in centroids.iter().enumerate() {
            let d = sq_dist(x, centre);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        *label = best;
    }
}

/// Moves the point farthest from its centre into each empty cluster, taking
/// it only from clusters with at least two members.
fn fill_empty(features: &[Vec<f64>], centroids: &mut [Vec<f64>], labels: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let far = features
            .iter()
            .enumerate()
            .filter(|(i, _)| sizes[labels[*i]] >= 2)
            .map(|(i, x)| (i, sq_dist(x, &centroids[labels[i]])))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("k <= number of points leaves a cluster with two members");
        labels[far] = empty;
        centroids[empty] = features[far].clone();
    }
}

/// Partitions `features` into `k` groups. Deterministic for a fixed seed.
pub fn kmeans(features: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<ClusterAssignment> {
    let n = features.len();
    if k == 0 || k > MAX_CLUSTERS {
        return Err(Error::invalid(format!("k must lie in 1..={MAX_CLUSTERS}, got {k}")));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the number of points {n}")));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let dim = features[0].len();
    if features
        .iter()
        .any(|x| x.len() != dim || x.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::invalid("feature rows must share one dimension and be finite"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(features, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let previous = labels.clone();
        assign(features, &centroids, &mut labels);
        fill_empty(features, &mut centroids, &mut labels);
        centroids = centroids_of(features, &labels, k, dim);
        history.push(wcss(features, &labels, &centroids));
        if history.len() > 1 && labels == previous {
            break;
        }
    }
    Ok(ClusterAssignment {
        k,
        labels,
        centroids,
        seed,
        inertia_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn blobs(centres: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, centre) in centres.iter().enumerate() {
            for _ in 0..per {
                pts.push(vec![
                    centre[0] + noise.sample(&mut rng),
                    centre[1] + noise.sample(&mut rng),
                ]);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let (pts, _) = blobs(&[[1.0, 2.0]], 10, 0.5, 1);
        let a = kmeans(&pts, 1, 0, 50).unwrap();
        assert!(a.labels.iter().all(|&l| l == 0));
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / 10.0;
        assert!((a.centroids[0][0] - mx).abs() < 1e-12);
    }

    #[test]
    fn two_separated_blobs() {
        let (pts, truth) = blobs(&[[0.0, 0.0], [10.0, 10.0]], 15, 0.3, 2);
        let a = kmeans(&pts, 2, 9, 100).unwrap();
        let map = [a.labels[0], a.labels[15]];
        assert_ne!(map[0], map[1]);
        for (l, t) in a.labels.iter().zip(&truth) {
            assert_eq!(*l, map[*t]);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let (pts, _) = blobs(&[[0.0, 0.0], [3.0, 1.0], [1.0, 4.0]], 12, 1.0, 3);
        assert_eq!(kmeans(&pts, 3, 42, 100).unwrap(), kmeans(&pts, 3, 42, 100).unwrap());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = vec![vec![0.0, 0.0]; 5];
        let a = kmeans(&pts, 3, 0, 20).unwrap();
        assert!(a.sizes().iter().all(|&s| s > 0));
        a.validate(5).unwrap();
    }

    #[test]
    fn inertia_never_increases() {
        let (pts, _) = blobs(&[[0.0, 0.0], [2.0, 1.0], [1.0, 2.5], [3.0, 3.0]], 25, 0.9, 4);
        for seed in 0..10 {
            let a = kmeans(&pts, 4, seed, 100).unwrap();
            for w in a.inertia_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn argument_errors() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&pts, 3, 0, 10).is_err());
        assert!(kmeans(&pts, 0, 0, 10).is_err());
        assert!(kmeans(&pts, 1, 0, 0).is_err());
        let many = vec![vec![0.0]; 10];
        assert!(kmeans(&many, 8, 0, 10).is_err());
    }
}
