use nalgebra::{DMatrix, SymmetricEigen};

use super::check_dissimilarity;
use crate::error::{Error, Result};

/// A low-dimensional configuration of `r` objects.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub positions: DMatrix<f64>,
    /// Kruskal stress-1 of the final configuration.
    pub stress: f64,
    /// Set when every dissimilarity is zero, or the configuration collapsed.
    pub degenerate: bool,
    pub iterations: usize,
    /// Stress-1 at the start of every majorization step.
    pub stress_trace: Vec<f64>,
    pub labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdsOptions {
    pub max_iter: usize,
    /// Stop once stress drops by less than this in one iteration.
    pub tol: f64,
}

impl Default for MdsOptions {
    fn default() -> Self {
        MdsOptions {
            max_iter: 1000,
            tol: 1e-10,
        }
    }
}

/// Torgerson scaling: the top `d` eigenvectors of the double-centred
/// squared dissimilarities, with negative eigenvalues clamped to zero.
pub fn classical_mds(diss: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let r = diss.nrows();
    let sq = diss.map(|v| v * v);
    let row: Vec<f64> = (0..r).map(|i| sq.row(i).sum() / r as f64).collect();
    let all = row.iter().sum::<f64>() / r as f64;
    let b = DMatrix::from_fn(r, r, |i, j| -0.5 * (sq[(i, j)] - row[i] - row[j] + all));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let mut out = DMatrix::zeros(r, d);
    for c in 0..d.min(r) {
        let lam = eig.eigenvalues[order[c]].max(0.0).sqrt();
        let v = eig.eigenvectors.column(order[c]);
        // fix the sign so the output does not depend on the solver
        let s = v.iter().fold(0.0f64, |a, &x| if x.abs() > a.abs() { x } else { a }).signum();
        let s = if s == 0.0 { 1.0 } else { s };
        for i in 0..r {
            out[(i, c)] = s * lam * v[i];
        }
    }
    out
}

/// Weighted least-squares monotone (nondecreasing) fit by pool adjacent
/// violators.
pub fn isotonic_regression(y: &[f64], w: &[f64]) -> Vec<f64> {
    let mut vals: Vec<f64> = Vec::with_capacity(y.len());
    let mut wts: Vec<f64> = Vec::with_capacity(y.len());
    let mut lens: Vec<usize> = Vec::with_capacity(y.len());
    for (&v, &wt) in y.iter().zip(w) {
        vals.push(v);
        wts.push(wt);
        lens.push(1);
        while vals.len() > 1 && vals[vals.len() - 2] > vals[vals.len() - 1] {
            let (v2, w2, l2) = (vals.pop().unwrap(), wts.pop().unwrap(), lens.pop().unwrap());
            let k = vals.len() - 1;
            let tw = wts[k] + w2;
            vals[k] = if tw > 0.0 { (vals[k] * wts[k] + v2 * w2) / tw } else { 0.5 * (vals[k] + v2) };
            wts[k] = tw;
            lens[k] += l2;
        }
    }
    vals.iter().zip(&lens).flat_map(|(&v, &l)| std::iter::repeat_n(v, l)).collect()
}

pub fn kruskal_mds(diss: &DMatrix<f64>, d: usize) -> Result<Embedding> {
    kruskal_mds_with(diss, d, MdsOptions::default())
}

/// Nonmetric MDS: minimizes Kruskal stress-1 by majorization (Guttman
/// transforms) alternating with isotonic regression on the dissimilarity
/// order, starting from classical scaling of the dissimilarity ranks, so the
/// fit depends on the dissimilarities only through their order. Tied
/// dissimilarities keep tied disparities. The result is scaled to the
/// dissimilarities by least squares.
pub fn kruskal_mds_with(diss: &DMatrix<f64>, d: usize, opts: MdsOptions) -> Result<Embedding> {
    check_dissimilarity(diss, "dissimilarity matrix")?;
    let r = diss.nrows();
    if d == 0 || r < d + 1 {
        return Err(Error::Dimension(format!("{r} objects cannot be embedded in {d} dimensions")));
    }
    let pairs: Vec<(usize, usize)> = (0..r).flat_map(|i| (i + 1..r).map(move |j| (i, j))).collect();
    let np = pairs.len();
    let delta: Vec<f64> = pairs.iter().map(|&(i, j)| 0.5 * (diss[(i, j)] + diss[(j, i)])).collect();
    let degenerate = |iterations, trace| Embedding {
        positions: DMatrix::zeros(r, d),
        stress: 0.0,
        degenerate: true,
        iterations,
        stress_trace: trace,
        labels: None,
    };
    if delta.iter().all(|&v| v == 0.0) {
        return Ok(degenerate(0, Vec::new()));
    }
    let mut order: Vec<usize> = (0..np).collect();
    order.sort_by(|&a, &b| delta[a].total_cmp(&delta[b]));
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut s = 0;
    while s < np {
        let mut e = s + 1;
        while e < np && delta[order[e]] == delta[order[s]] {
            e += 1;
        }
        blocks.push((s, e));
        s = e;
    }
    let disparities = |dist: &[f64]| -> Vec<f64> {
        let means: Vec<f64> = blocks
            .iter()
            .map(|&(s, e)| order[s..e].iter().map(|&q| dist[q]).sum::<f64>() / (e - s) as f64)
            .collect();
        let w: Vec<f64> = blocks.iter().map(|&(s, e)| (e - s) as f64).collect();
        let fit = isotonic_regression(&means, &w);
        let mut out = vec![0.0; np];
        for (&(s, e), v) in blocks.iter().zip(fit) {
            for &q in &order[s..e] {
                out[q] = v;
            }
        }
        out
    };
    let pair_dists = |x: &DMatrix<f64>| -> Vec<f64> {
        pairs
            .iter()
            .map(|&(i, j)| (0..d).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum::<f64>().sqrt())
            .collect()
    };

    // start from classical scaling of the dissimilarity ranks
    let mut rank = vec![0.0; np];
    for &(s, e) in &blocks {
        for &q in &order[s..e] {
            rank[q] = 0.5 * (s + e + 1) as f64;
        }
    }
    let mut ranked = DMatrix::zeros(r, r);
    for (q, &(i, j)) in pairs.iter().enumerate() {
        ranked[(i, j)] = rank[q];
        ranked[(j, i)] = rank[q];
    }
    let mut x = classical_mds(&ranked, d);
    let mut trace = Vec::new();
    let mut it = 0;
    let stress = loop {
        let dist = pair_dists(&x);
        let ssd: f64 = dist.iter().map(|v| v * v).sum();
        if ssd == 0.0 {
            return Ok(degenerate(it, trace));
        }
        let iso = disparities(&dist);
        let stress = (dist.iter().zip(&iso).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / ssd).sqrt();
        let converged = trace.last().is_some_and(|&prev: &f64| prev - stress < opts.tol);
        trace.push(stress);
        if converged || it == opts.max_iter || stress == 0.0 {
            break stress;
        }
        let siso: f64 = iso.iter().map(|v| v * v).sum();
        if siso == 0.0 {
            return Ok(degenerate(it, trace));
        }
        let c = (np as f64 / siso).sqrt();
        let dhat: Vec<f64> = iso.iter().map(|v| c * v).collect();
        let a = dhat.iter().zip(&dist).map(|(h, v)| h * v).sum::<f64>() / ssd;
        x *= a;
        let mut b = DMatrix::zeros(r, r);
        for (q, &(i, j)) in pairs.iter().enumerate() {
            let dd = a * dist[q];
            if dd > 0.0 {
                let v = -dhat[q] / dd;
                b[(i, j)] = v;
                b[(j, i)] = v;
                b[(i, i)] -= v;
                b[(j, j)] -= v;
            }
        }
        x = b * x / r as f64;
        it += 1;
    };
    let dist = pair_dists(&x);
    let ssd: f64 = dist.iter().map(|v| v * v).sum();
    let scale = delta.iter().zip(&dist).map(|(a, b)| a * b).sum::<f64>() / ssd;
    // centre the configuration
    for c in 0..d {
        let m = x.column(c).sum() / r as f64;
        for i in 0..r {
            x[(i, c)] = scale * (x[(i, c)] - m);
        }
    }
    Ok(Embedding {
        positions: x,
        stress,
        degenerate: false,
        iterations: it,
        stress_trace: trace,
        labels: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::within_school::pairwise_distances;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, 2, |_, _| r.random_range(-3.0..3.0))
    }

    fn upper(m: &DMatrix<f64>) -> Vec<f64> {
        let n = m.nrows();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| m[(i, j)])).collect()
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s + 1;
            while e < idx.len() && v[idx[e]] == v[idx[s]] {
                e += 1;
            }
            for &q in &idx[s..e] {
                out[q] = 0.5 * (s + e - 1) as f64;
            }
            s = e;
        }
        out
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn planted_configuration() {
        let d = pairwise_distances(&config(15, 1));
        let e = kruskal_mds(&d, 2).unwrap();
        assert!(e.stress < 0.01, "{}", e.stress);
        assert!(pearson(&upper(&pairwise_distances(&e.positions)), &upper(&d)) >= 0.999);
    }

    #[test]
    fn equilateral_triple() {
        let d = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        let e = kruskal_mds(&d, 2).unwrap();
        let pd = pairwise_distances(&e.positions);
        assert!((pd[(0, 1)] - pd[(0, 2)]).abs() < 1e-6 && (pd[(1, 2)] - pd[(0, 2)]).abs() < 1e-6);
        assert!(e.stress < 1e-8);
    }

    #[test]
    fn zero_dissimilarities_are_degenerate() {
        let e = kruskal_mds(&DMatrix::zeros(4, 4), 2).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.positions, DMatrix::zeros(4, 2));
    }

    #[test]
    fn too_few_objects() {
        assert!(matches!(kruskal_mds(&DMatrix::zeros(2, 2), 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn monotone_transform_keeps_order() {
        let d = pairwise_distances(&config(12, 2));
        let t = d.map(|v| v.powi(3) + 2.0 * v);
        let a = kruskal_mds(&d, 2).unwrap();
        let b = kruskal_mds(&t, 2).unwrap();
        let ra = ranks(&upper(&pairwise_distances(&a.positions)));
        let rb = ranks(&upper(&pairwise_distances(&b.positions)));
        assert!((pearson(&ra, &rb) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pava_examples() {
        assert_eq!(isotonic_regression(&[1.0, 3.0, 2.0, 4.0], &[1.0; 4]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic_regression(&[3.0, 2.0, 1.0], &[1.0, 1.0, 2.0]), vec![1.75; 3]);
    }

    proptest! {
        #[test]
        fn stress_non_increasing(seed in 0u64..500, n in 4usize..12) {
            // noisy, non-Euclidean dissimilarities
            let base = pairwise_distances(&config(n, seed));
            let d = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { base[(i.min(j), i.max(j))] });
            let d = DMatrix::from_fn(n, n, |i, j| {
                if i < j { d[(i, j)] * (1.0 + 0.3 * ((i * 7 + j * 3 + seed as usize) % 5) as f64) } else { 0.0 }
            });
            let d = &d + d.transpose();
            let e = kruskal_mds(&d, 2).unwrap();
            for w in e.stress_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", e.stress_trace);
            }
            prop_assert!((0.0..=1.0).contains(&e.stress));
        }

        #[test]
        fn row_permutation_invariance(seed in 0u64..200) {
            let n = 8;
            let base = pairwise_distances(&config(n, seed));
            let d = base.map(|v| v.sqrt());
            let perm: Vec<usize> = (0..n).map(|i| (i * 3 + 1) % n).collect();
            let pd = DMatrix::from_fn(n, n, |i, j| d[(perm[i], perm[j])]);
            let a = kruskal_mds(&d, 2).unwrap();
            let b = kruskal_mds(&pd, 2).unwrap();
            let da = pairwise_distances(&a.positions);
            let db = pairwise_distances(&b.positions);
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((db[(i, j)] - da[(perm[i], perm[j])]).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn pava_is_monotone_and_mean_preserving(y in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
            let w = vec![1.0; y.len()];
            let f = isotonic_regression(&y, &w);
            for p in f.windows(2) {
                prop_assert!(p[1] >= p[0] - 1e-12);
            }
            let s1: f64 = y.iter().sum();
            let s2: f64 = f.iter().sum();
            prop_assert!((s1 - s2).abs() < 1e-9);
        }
    }
}
