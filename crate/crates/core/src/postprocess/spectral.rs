use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check_dissimilarity;
use crate::error::{Error, Result};

pub const KMEANS_RESTARTS: usize = 20;
const MAX_WIDENINGS: usize = 3;
const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    /// Cluster labels numbered by first appearance.
    pub labels: Vec<usize>,
    /// Gaussian kernel bandwidth actually used.
    pub bandwidth: f64,
    /// How many times the median bandwidth was doubled.
    pub widenings: usize,
    pub inertia: f64,
}

fn connected(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && a[(i, j)] > 0.0 {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn affinity(dist: &DMatrix<f64>, bw: f64) -> DMatrix<f64> {
    let n = dist.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (-dist[(i, j)] * dist[(i, j)] / (2.0 * bw * bw)).exp()
        }
    })
}

/// Ng–Jordan–Weiss spectral clustering of a distance matrix into `k`
/// clusters, with a Gaussian kernel whose bandwidth is the median
/// off-diagonal distance.
pub fn spectral_cluster(dist: &DMatrix<f64>, k: usize, seed: u64) -> Result<SpectralResult> {
    check_dissimilarity(dist, "distance matrix")?;
    let n = dist.nrows();
    if k < 2 || k >= n {
        return Err(Error::Clustering(format!("cluster count must lie in 2..{n}, got {k}")));
    }
    let mut off: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| dist[(i, j)]).collect();
    off.sort_by(|a, b| a.total_cmp(b));
    let median = |v: &[f64]| {
        let m = v.len();
        if m % 2 == 1 {
            v[m / 2]
        } else {
            0.5 * (v[m / 2 - 1] + v[m / 2])
        }
    };
    let mut bw = median(&off);
    if bw == 0.0 {
        let positive: Vec<f64> = off.iter().copied().filter(|&v| v > 0.0).collect();
        if positive.is_empty() {
            return Err(Error::Clustering("all points coincide".into()));
        }
        bw = median(&positive);
    }
    let mut widenings = 0;
    let mut a = affinity(dist, bw);
    while !connected(&a) {
        if widenings == MAX_WIDENINGS {
            return Err(Error::Clustering(format!(
                "similarity graph is disconnected even at bandwidth {bw}"
            )));
        }
        widenings += 1;
        bw *= 2.0;
        a = affinity(dist, bw);
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let l = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (deg[i] * deg[j]).sqrt());
    let eig = SymmetricEigen::new(l);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let mut emb = DMatrix::from_fn(n, k, |r, c| eig.eigenvectors[(r, order[c])]);
    for r in 0..n {
        let norm = emb.row(r).norm();
        if norm > 0.0 {
            for c in 0..k {
                emb[(r, c)] /= norm;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (labels, inertia) = kmeans(&emb, k, KMEANS_RESTARTS, &mut rng);
    Ok(SpectralResult {
        labels,
        bandwidth: bw,
        widenings,
        inertia,
    })
}

fn sq(a: &DMatrix<f64>, r: usize, c: &[f64]) -> f64 {
    c.iter().enumerate().map(|(j, v)| (a[(r, j)] - v).powi(2)).sum()
}

fn kmeans_once(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let (n, d) = x.shape();
    let row = |r: usize| -> Vec<f64> { x.row(r).iter().copied().collect() };
    let mut chosen = vec![rng.random_range(0..n)];
    let mut centres = vec![row(chosen[0])];
    while centres.len() < k {
        let w: Vec<f64> = (0..n)
            .map(|r| {
                if chosen.contains(&r) {
                    0.0
                } else {
                    centres.iter().map(|c| sq(x, r, c)).fold(f64::INFINITY, f64::min)
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (r, v) in w.iter().enumerate() {
                if *v > 0.0 && u < *v {
                    pick = r;
                    break;
                }
                u -= v;
            }
            while chosen.contains(&pick) {
                pick = (pick + 1) % n;
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|r| !chosen.contains(r)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        centres.push(row(pick));
    }
    let mut labels = vec![0; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for r in 0..n {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for (c, centre) in centres.iter().enumerate() {
                let v = sq(x, r, centre);
                if v < bd {
                    bd = v;
                    best = c;
                }
            }
            if labels[r] != best {
                labels[r] = best;
                changed = true;
            }
        }
        fill_empty(x, &mut labels, &centres, k);
        let mut next = vec![vec![0.0; d]; k];
        let mut count = vec![0usize; k];
        for r in 0..n {
            count[labels[r]] += 1;
            for j in 0..d {
                next[labels[r]][j] += x[(r, j)];
            }
        }
        for c in 0..k {
            for v in &mut next[c] {
                *v /= count[c] as f64;
            }
        }
        centres = next;
        if !changed {
            break;
        }
    }
    let inertia = (0..n).map(|r| sq(x, r, &centres[labels[r]])).sum();
    (labels, inertia)
}

fn fill_empty(x: &DMatrix<f64>, labels: &mut [usize], centres: &[Vec<f64>], k: usize) {
    loop {
        let mut count = vec![0usize; k];
        for &l in labels.iter() {
            count[l] += 1;
        }
        let Some(empty) = (0..k).find(|&c| count[c] == 0) else { return };
        // farthest point among clusters that can spare one
        let donor = (0..labels.len())
            .filter(|&r| count[labels[r]] > 1)
            .max_by(|&a, &b| sq(x, a, &centres[labels[a]]).total_cmp(&sq(x, b, &centres[labels[b]])).then(b.cmp(&a)))
            .expect("k < n leaves a cluster with two points");
        labels[donor] = empty;
    }
}

fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<Option<usize>> = vec![None; labels.iter().max().map_or(0, |m| m + 1)];
    let mut next = 0;
    labels
        .iter()
        .map(|&l| {
            *map[l].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// k-means++ with `restarts` seeded restarts; keeps the lowest inertia, the
/// earliest restart on ties.
pub fn kmeans(x: &DMatrix<f64>, k: usize, restarts: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let (l, i) = kmeans_once(x, k, rng);
        if best.as_ref().is_none_or(|b| i < b.1) {
            best = Some((l, i));
        }
    }
    let (l, i) = best.expect("at least one restart");
    (canonical(&l), i)
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let sum_a: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::within_school::pairwise_distances;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn clouds(sizes: &[usize], sep: f64, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = sizes.iter().sum();
        let mut pts = DMatrix::zeros(n, 2);
        let mut truth = Vec::new();
        let mut row = 0;
        for (c, &s) in sizes.iter().enumerate() {
            let ang = c as f64 * 2.4;
            for _ in 0..s {
                pts[(row, 0)] = sep * ang.cos() + 0.5 * r.sample::<f64, _>(StandardNormal).clamp(-1.0, 1.0);
                pts[(row, 1)] = sep * ang.sin() + 0.5 * r.sample::<f64, _>(StandardNormal).clamp(-1.0, 1.0);
                truth.push(c);
                row += 1;
            }
        }
        (pairwise_distances(&pts), truth)
    }

    #[test]
    fn far_apart_clouds() {
        let (d, truth) = clouds(&[10, 14], 100.0, 1);
        let res = spectral_cluster(&d, 2, 7).unwrap();
        assert_eq!(adjusted_rand_index(&res.labels, &truth), 1.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let (d, _) = clouds(&[8, 8, 8], 5.0, 2);
        assert_eq!(spectral_cluster(&d, 3, 3).unwrap(), spectral_cluster(&d, 3, 3).unwrap());
    }

    #[test]
    fn coincident_points_rejected() {
        let d = DMatrix::zeros(5, 5);
        assert!(matches!(spectral_cluster(&d, 2, 1), Err(Error::Clustering(_))));
    }

    #[test]
    fn k_just_below_n() {
        let (d, _) = clouds(&[3, 4], 3.0, 5);
        let res = spectral_cluster(&d, 6, 1).unwrap();
        let mut counts = [0; 6];
        for &l in &res.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
    }

    #[test]
    fn invalid_k_rejected() {
        let (d, _) = clouds(&[3, 3], 3.0, 5);
        assert!(spectral_cluster(&d, 1, 1).is_err());
        assert!(spectral_cluster(&d, 6, 1).is_err());
    }

    #[test]
    fn widens_when_disconnected() {
        // one far outlier: its kernel weights underflow at the median bandwidth
        let mut pts = DMatrix::zeros(9, 1);
        for r in 0..8 {
            pts[(r, 0)] = r as f64 * 0.1;
        }
        pts[(8, 0)] = 20.0;
        let res = spectral_cluster(&pairwise_distances(&pts), 2, 1).unwrap();
        assert!(res.widenings > 0);
        pts[(8, 0)] = 1e4;
        assert!(matches!(spectral_cluster(&pairwise_distances(&pts), 2, 1), Err(Error::Clustering(_))));
    }

    #[test]
    fn ari_known_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        // hand computation: sum_ij = 1, sum_a = sum_b = 2, total = 6
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!((v - (0.0 - 4.0 / 6.0) / (2.0 - 4.0 / 6.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn planted_partitions_recovered(seed in 0u64..1000, a in 3usize..10, b in 3usize..10, c in 3usize..10) {
            let (d, truth) = clouds(&[a, b, c], 20.0, seed);
            let res = spectral_cluster(&d, 3, seed).unwrap();
            prop_assert_eq!(adjusted_rand_index(&res.labels, &truth), 1.0);
        }

        #[test]
        fn ari_is_symmetric_and_label_free(x in proptest::collection::vec(0usize..4, 2..30), perm in Just([2usize, 0, 3, 1])) {
            let y: Vec<usize> = x.iter().rev().copied().collect();
            prop_assert!((adjusted_rand_index(&x, &y) - adjusted_rand_index(&y, &x)).abs() < 1e-12);
            let relabel: Vec<usize> = x.iter().map(|&l| perm[l]).collect();
            prop_assert!((adjusted_rand_index(&x, &relabel) - 1.0).abs() < 1e-12);
        }
    }
}
