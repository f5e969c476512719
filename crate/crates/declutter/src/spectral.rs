//! Spectral clustering over a gamma matrix: normalized symmetric Laplacian,
//! dense Jacobi eigensolver, and seeded k-means on the row-normalized
//! eigenvector embedding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::NumericError;
use crate::weights::GammaMatrix;

/// Cluster labels in [0, k); every cluster id appears at least once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub k: usize,
}

/// L = I - D^(-1/2) A D^(-1/2), D = row-sum degrees.
pub fn normalized_laplacian(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NumericError> {
    let n = a.len();
    for i in 0..n {
        if a[i].len() != n {
            return Err(NumericError::Invalid("matrix not square".into()));
        }
        for j in 0..n {
            let diff = (a[i][j] - a[j][i]).abs();
            if diff > 1e-9 {
                return Err(NumericError::Asymmetric(diff));
            }
            if !a[i][j].is_finite() {
                return Err(NumericError::NonFinite("affinity matrix".into()));
            }
        }
    }
    let degrees: Vec<f64> = a.iter().map(|row| row.iter().sum::<f64>()).collect();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|&d| 1.0 / d.max(1e-12).sqrt()).collect();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let norm = inv_sqrt[i] * a[i][j] * inv_sqrt[j];
            l[i][j] = if i == j { 1.0 - norm } else { -norm };
        }
    }
    Ok(l)
}

/// Full symmetric eigendecomposition by cyclic Jacobi rotations.
/// Returns (eigenvalues ascending, eigenvectors as columns).
pub fn jacobi_eigen(m: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>), NumericError> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let max_sweeps = 100;
    for sweep in 0..=max_sweeps {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off.sqrt() < 1e-14 {
            break;
        }
        if sweep == max_sweeps {
            return Err(NumericError::NoConvergence(max_sweeps));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let mut vectors = vec![vec![0.0; n]; n];
    for (new_col, &old_col) in order.iter().enumerate() {
        // sign convention: first nonzero component positive
        let mut sign = 1.0;
        for row in v.iter().take(n) {
            if row[old_col].abs() > 1e-12 {
                sign = row[old_col].signum();
                break;
            }
        }
        for r in 0..n {
            vectors[r][new_col] = sign * v[r][old_col];
        }
    }
    Ok((values, vectors))
}

/// Orthonormal eigenvectors of the k smallest eigenvalues, as an n x k
/// matrix (rows are points).
pub fn smallest_eigenvectors(
    l: &[Vec<f64>],
    k: usize,
) -> Result<Vec<Vec<f64>>, NumericError> {
    let n = l.len();
    if k == 0 || k > n {
        return Err(NumericError::Invalid(format!("k={k} out of range for n={n}")));
    }
    let (_, vectors) = jacobi_eigen(l)?;
    Ok((0..n).map(|i| vectors[i][..k].to_vec()).collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding; ties break toward the lowest
/// centroid index; empty clusters take the point farthest from its centroid.
fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.len();
    let dim = points[0].len();
    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].clone());
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| sq_dist(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(points[idx].clone());
    }
    let mut labels = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d - 1e-15 {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        // fix empty clusters: steal the globally farthest point
        for c in 0..k {
            if !labels.contains(&c) {
                let far = (0..n)
                    .max_by(|&i, &j| {
                        sq_dist(&points[i], &centroids[labels[i]])
                            .partial_cmp(&sq_dist(&points[j], &centroids[labels[j]]))
                            .unwrap()
                    })
                    .unwrap();
                labels[far] = c;
                changed = true;
            }
        }
        // recompute centroids
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[labels[i]] += 1;
            for d in 0..dim {
                sums[labels[i]][d] += p[d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centroids[c][d] = sums[c][d] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia: f64 = points
        .iter()
        .enumerate()
        .map(|(i, p)| sq_dist(p, &centroids[labels[i]]))
        .sum();
    (labels, inertia)
}

/// Relabel clusters by order of first appearance.
fn relabel(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<usize> = Vec::new();
    labels
        .iter()
        .map(|&l| match map.iter().position(|&x| x == l) {
            Some(i) => i,
            None => {
                map.push(l);
                map.len() - 1
            }
        })
        .collect()
}

/// Spectral clustering of a gamma matrix into k clusters (Ng-Jordan-Weiss
/// style): k smallest Laplacian eigenvectors, row-normalized embedding,
/// seeded k-means with 10 restarts.
pub fn spectral_cluster(
    gamma: &GammaMatrix,
    k: usize,
    seed: u64,
) -> Result<Clustering, NumericError> {
    let n = gamma.n;
    if k == 0 || k > n {
        return Err(NumericError::Invalid(format!("k={k} out of range for n={n}")));
    }
    if k == 1 {
        return Ok(Clustering { labels: vec![0; n], k: 1 });
    }
    if k == n {
        return Ok(Clustering { labels: (0..n).collect(), k });
    }
    let l = normalized_laplacian(&gamma.rows)?;
    let mut embed = smallest_eigenvectors(&l, k)?;
    for row in &mut embed {
        let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
    }
    let mut rng = crate::splits::salted_rng(seed, "kmeans");
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..10 {
        let (labels, inertia) = kmeans(&embed, k, &mut rng);
        if best.as_ref().map_or(true, |(_, bi)| inertia < *bi) {
            best = Some((labels, inertia));
        }
    }
    let (labels, _) = best.unwrap();
    Ok(Clustering { labels: relabel(&labels), k })
}
