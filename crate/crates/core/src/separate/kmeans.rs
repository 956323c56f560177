use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Stop once no centroid moves further than this (Euclidean).
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// Hard cluster assignment of `N` vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub dim: usize,
    /// Cluster of each vector.
    pub labels: Vec<usize>,
    /// `K × dim`.
    pub centroids: Vec<f32>,
    /// Final sum of squared distances to the assigned centroid.
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterAssignment {
    /// `Ŷ` as an `N × K` array of ±1.
    pub fn signed_labels(&self) -> Vec<f32> {
        let mut y = vec![-1.0; self.labels.len() * self.k];
        for (i, &c) in self.labels.iter().enumerate() {
            y[i * self.k + c] = 1.0;
        }
        y
    }
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &c)| {
            let d = x as f64 - c;
            d * d
        })
        .sum()
}

/// Assigns each point to its nearest centroid (lowest index on ties);
/// returns per-point squared distances.
fn assign(points: &[f32], dim: usize, centroids: &[Vec<f64>], labels: &mut [usize]) -> Vec<f64> {
    points
        .chunks(dim)
        .zip(labels.iter_mut())
        .map(|(p, l)| {
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for (c, cen) in centroids.iter().enumerate() {
                let d = sq_dist(p, cen);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            *l = best;
            best_d
        })
        .collect()
}

/// k-means++ seeding.
fn seed_centroids(points: &[f32], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len() / dim;
    let point = |i: usize| points[i * dim..(i + 1) * dim].iter().map(|&x| x as f64).collect::<Vec<_>>();
    let mut centroids = vec![point(rng.random_range(0..n))];
    let mut d2: Vec<f64> = points.chunks(dim).map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = point(next);
        for (d, p) in d2.iter_mut().zip(points.chunks(dim)) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm from a k-means++ start. `points` is `N × dim`.
/// Empty clusters are re-seeded with the point farthest from its centroid.
pub fn kmeans(points: &[f32], dim: usize, k: usize, rng: &mut impl Rng, config: KMeansConfig) -> Result<ClusterAssignment> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::invalid(format!(
            "{} values do not form {dim}-dimensional points",
            points.len()
        )));
    }
    let n = points.len() / dim;
    if k == 0 || n < k {
        return Err(Error::invalid(format!("kmeans needs 1 <= K <= N, got K = {k}, N = {n}")));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("kmeans input".into()));
    }
    let mut centroids = seed_centroids(points, dim, k, rng);
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut dists = assign(points, dim, &centroids, &mut labels);
    history.push(dists.iter().sum());
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.chunks(dim).zip(&labels) {
            counts[l] += 1;
            for (s, &x) in sums[l].iter_mut().zip(p) {
                *s += x as f64;
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let new: Vec<f64> = if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                // take the worst-fitted point; it leaves its old cluster
                let far = dists
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map_or(0, |(i, _)| i);
                dists[far] = 0.0;
                points[far * dim..(far + 1) * dim].iter().map(|&x| x as f64).collect()
            };
            shift = shift.max(sq_dist_f64(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        dists = assign(points, dim, &centroids, &mut labels);
        history.push(dists.iter().sum());
        if shift < config.tol {
            break;
        }
    }
    Ok(ClusterAssignment {
        k,
        dim,
        labels,
        centroids: centroids.into_iter().flatten().map(|x| x as f32).collect(),
        inertia: *history.last().expect("at least one assignment"),
        history,
        iterations,
    })
}

fn sq_dist_f64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [0.0, 0.0, 2.0, 4.0, 4.0, 2.0];
        let a = kmeans(&pts, 2, 1, &mut ChaCha8Rng::seed_from_u64(0), KMeansConfig::default()).unwrap();
        assert!((a.centroids[0] - 2.0).abs() < 1e-6);
        assert!((a.centroids[1] - 2.0).abs() < 1e-6);
        assert!(a.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn rejects_too_few_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(kmeans(&[1.0, 2.0], 2, 2, &mut rng, KMeansConfig::default()).is_err());
        assert!(kmeans(&[1.0, 2.0], 2, 0, &mut rng, KMeansConfig::default()).is_err());
        assert!(kmeans(&[1.0, 2.0, 3.0], 2, 1, &mut rng, KMeansConfig::default()).is_err());
    }

    #[test]
    fn duplicate_points_more_clusters_than_distinct_values() {
        let pts = [1.0; 8];
        let a = kmeans(&pts, 1, 3, &mut ChaCha8Rng::seed_from_u64(5), KMeansConfig::default()).unwrap();
        assert_eq!(a.labels.len(), 8);
        assert!(a.inertia.abs() < 1e-12);
        assert!(a.centroids.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn signed_labels_one_hot() {
        let pts = [0.0, 0.1, 10.0, 10.1];
        let a = kmeans(&pts, 1, 2, &mut ChaCha8Rng::seed_from_u64(1), KMeansConfig::default()).unwrap();
        let y = a.signed_labels();
        for row in y.chunks(2) {
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
        }
        assert_eq!(a.labels[0], a.labels[1]);
        assert_ne!(a.labels[1], a.labels[2]);
    }
}
