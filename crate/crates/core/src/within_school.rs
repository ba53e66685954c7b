//! Within-school latent space model.
//!
//! Respondent ties in item layer `Y_i` have log-odds `beta_i - |z_k - z_l|`;
//! item ties in respondent layer `U_k` have log-odds `theta_k - |w_i - w_j|`.
//! Respondent and item spaces are linked by placing each respondent, a
//! priori, at the average position of the items they endorsed.

use nalgebra::DMatrix;

use crate::data::{BinarySchoolMatrix, MultiplexNetworks};
use crate::error::{Error, Result};

/// Default latent dimension.
pub const DEFAULT_DIM: usize = 2;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `ln(1 + e^x)` without overflow for large `|x|`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Bernoulli log-mass of `y` under log-odds `logit`.
#[inline]
pub fn bernoulli_logpmf(y: bool, logit: f64) -> f64 {
    if y {
        -softplus(-logit)
    } else {
        -softplus(logit)
    }
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance between rows `a` and `b` of a position matrix.
#[inline]
pub(crate) fn row_distance(p: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..p.ncols() {
        let d = p[(a, c)] - p[(b, c)];
        s += d * d;
    }
    s.sqrt()
}

pub fn edge_logit_person(beta_i: f64, z_k: &[f64], z_l: &[f64]) -> f64 {
    beta_i - euclidean(z_k, z_l)
}

pub fn edge_logit_item(theta_k: f64, w_i: &[f64], w_j: &[f64]) -> f64 {
    theta_k - euclidean(w_i, w_j)
}

/// Euclidean distances between all rows of `p`.
pub fn pairwise_distances(p: &DMatrix<f64>) -> DMatrix<f64> {
    let r = p.nrows();
    let mut out = DMatrix::zeros(r, r);
    for a in 0..r {
        for b in (a + 1)..r {
            let d = row_distance(p, a, b);
            out[(a, b)] = d;
            out[(b, a)] = d;
        }
    }
    out
}

/// Log-likelihood of the item layers `Y` given respondent positions and item
/// intercepts, summed over items and unordered respondent pairs.
pub fn loglik_person_network(layers: &MultiplexNetworks, z: &DMatrix<f64>, beta: &[f64]) -> f64 {
    let n = z.nrows();
    let dist = pairwise_distances(z);
    let mut total = 0.0;
    for (i, y) in layers.item_layers.iter().enumerate() {
        for k in 0..n {
            for l in (k + 1)..n {
                total += bernoulli_logpmf(y[(k, l)] == 1, beta[i] - dist[(k, l)]);
            }
        }
    }
    total
}

/// Log-likelihood of the respondent layers `U` given item positions and
/// respondent intercepts, summed over respondents and unordered item pairs.
pub fn loglik_item_network(layers: &MultiplexNetworks, w: &DMatrix<f64>, theta: &[f64]) -> f64 {
    let p = w.nrows();
    let dist = pairwise_distances(w);
    let mut total = 0.0;
    for (k, u) in layers.person_layers.iter().enumerate() {
        for i in 0..p {
            for j in (i + 1)..p {
                total += bernoulli_logpmf(u[(i, j)] == 1, theta[k] - dist[(i, j)]);
            }
        }
    }
    total
}

fn masked_average(points: &DMatrix<f64>, mask: impl Iterator<Item = u8>) -> Vec<f64> {
    let d = points.ncols();
    let mut acc = vec![0.0; d];
    let mut count = 0usize;
    for (row, m) in mask.enumerate() {
        if m == 1 {
            count += 1;
            for c in 0..d {
                acc[c] += points[(row, c)];
            }
        }
    }
    if count == 0 {
        return centroid(points);
    }
    for v in &mut acc {
        *v /= count as f64;
    }
    acc
}

pub(crate) fn centroid(points: &DMatrix<f64>) -> Vec<f64> {
    let r = points.nrows() as f64;
    (0..points.ncols())
        .map(|c| points.column(c).iter().sum::<f64>() / r)
        .collect()
}

/// Prior mean of a respondent position: the average position of the items
/// they endorsed. A respondent with no positive answers is centred on the
/// centroid of all items, which keeps the prior equivariant under rigid
/// motions of the item configuration.
pub fn link_respondent_centered(w: &DMatrix<f64>, x_row: &[u8]) -> Vec<f64> {
    debug_assert_eq!(w.nrows(), x_row.len());
    masked_average(w, x_row.iter().copied())
}

/// Item counterpart of [`link_respondent_centered`]: the average position of
/// the respondents who endorsed the item, or the respondent centroid if
/// nobody did.
pub fn link_item_centered(z: &DMatrix<f64>, x_col: &[u8]) -> Vec<f64> {
    debug_assert_eq!(z.nrows(), x_col.len());
    masked_average(z, x_col.iter().copied())
}

/// Which latent space is anchored to the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Linking {
    #[default]
    RespondentCentered,
    ItemCentered,
}

impl std::str::FromStr for Linking {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "respondent" | "respondent_centered" => Ok(Linking::RespondentCentered),
            "item" | "item_centered" => Ok(Linking::ItemCentered),
            other => Err(Error::Config(format!("unknown linking `{other}`"))),
        }
    }
}

impl std::fmt::Display for Linking {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Linking::RespondentCentered => "respondent",
            Linking::ItemCentered => "item",
        })
    }
}

fn isotropic_normal_logpdf(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * x.len() as f64 * (LN_2PI + var.ln()) - 0.5 * sq / var
}

/// `sum_k log N(z_k | link_respondent_centered(W, x_k), sigma_z2 I)`.
pub fn log_linking_prior_respondent(
    z: &DMatrix<f64>,
    w: &DMatrix<f64>,
    x: &BinarySchoolMatrix,
    sigma_z2: f64,
) -> f64 {
    (0..z.nrows())
        .map(|k| {
            let row: Vec<u8> = x.x.row(k).iter().copied().collect();
            let mean = link_respondent_centered(w, &row);
            let zk: Vec<f64> = z.row(k).iter().copied().collect();
            isotropic_normal_logpdf(&zk, &mean, sigma_z2)
        })
        .sum()
}

/// `sum_i log N(w_i | link_item_centered(Z, x_.i), sigma_eps2[i] I)`.
pub fn log_linking_prior_item(
    w: &DMatrix<f64>,
    z: &DMatrix<f64>,
    x: &BinarySchoolMatrix,
    sigma_eps2: &[f64],
) -> f64 {
    (0..w.nrows())
        .map(|i| {
            let col: Vec<u8> = x.x.column(i).iter().copied().collect();
            let mean = link_item_centered(z, &col);
            let wi: Vec<f64> = w.row(i).iter().copied().collect();
            isotropic_normal_logpdf(&wi, &mean, sigma_eps2[i])
        })
        .sum()
}

/// Latent state of one school.
#[derive(Debug, Clone, PartialEq)]
pub struct WithinSchoolState {
    /// Respondent positions, `n x d`.
    pub z: DMatrix<f64>,
    /// Item positions, `p x d`.
    pub w: DMatrix<f64>,
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma_z2: f64,
    /// Between-item distances, always `pairwise_distances(w)`.
    pub d_w: DMatrix<f64>,
    /// Item-centered linking variances. Carried for the alternative linking
    /// prior only; the sampler does not update them.
    pub sigma_eps2: Vec<f64>,
}

impl WithinSchoolState {
    pub fn new(
        z: DMatrix<f64>,
        w: DMatrix<f64>,
        beta: Vec<f64>,
        theta: Vec<f64>,
        sigma_z2: f64,
    ) -> Result<Self> {
        if z.ncols() != w.ncols() {
            return Err(Error::Dimension(format!(
                "respondent dimension {} differs from item dimension {}",
                z.ncols(),
                w.ncols()
            )));
        }
        if beta.len() != w.nrows() || theta.len() != z.nrows() {
            return Err(Error::Dimension("intercept lengths do not match positions".into()));
        }
        if !(sigma_z2 > 0.0 && sigma_z2.is_finite()) {
            return Err(Error::Domain(format!("sigma_z2 must be positive, got {sigma_z2}")));
        }
        let d_w = pairwise_distances(&w);
        let p = w.nrows();
        Ok(WithinSchoolState {
            z,
            w,
            beta,
            theta,
            sigma_z2,
            d_w,
            sigma_eps2: vec![1.0; p],
        })
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn refresh_distances(&mut self) {
        self.d_w = pairwise_distances(&self.w);
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().chain(self.w.iter()).all(|v| v.is_finite())
            && self.beta.iter().chain(&self.theta).all(|v| v.is_finite())
            && self.sigma_z2.is_finite()
            && self.sigma_z2 > 0.0
    }

    /// Within-school log-likelihood of both layer families plus the linking prior.
    pub fn log_density(&self, layers: &MultiplexNetworks, x: &BinarySchoolMatrix) -> f64 {
        loglik_person_network(layers, &self.z, &self.beta)
            + loglik_item_network(layers, &self.w, &self.theta)
            + log_linking_prior_respondent(&self.z, &self.w, x, self.sigma_z2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_multiplex;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn person_logit_examples() {
        assert_eq!(edge_logit_person(0.0, &[0.3, 0.4], &[0.3, 0.4]), 0.0);
        assert!((edge_logit_person(1.0, &[0.0, 0.0], &[0.6, 0.8])).abs() < TOL);
        assert_eq!(edge_logit_person(0.0, &[-1.0, -1.0], &[-1.0, 1.0]), -2.0);
    }

    #[test]
    fn item_logit_examples() {
        assert_eq!(edge_logit_item(0.0, &[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(edge_logit_item(2.0, &[0.0, 0.0], &[0.0, 2.0]), 0.0);
        assert_eq!(edge_logit_item(0.5, &[0.0, 0.0], &[3.0, 4.0]), -4.5);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < TOL);
        assert_eq!(softplus(710.0), 710.0);
        assert!(softplus(-710.0) >= 0.0 && softplus(-710.0) < 1e-300);
        for &x in &[-2.5, 0.1, 3.0, 40.0] {
            let naive = (1.0f64 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() <= 1e-12 * naive.max(1e-300) + 1e-300);
        }
        assert!(bernoulli_logpmf(true, -700.0).is_finite());
        assert!(bernoulli_logpmf(false, 700.0).is_finite());
    }

    fn school(x: &[u8], n: usize, p: usize) -> (BinarySchoolMatrix, MultiplexNetworks) {
        let bx = BinarySchoolMatrix::new("s", DMatrix::from_row_slice(n, p, x)).unwrap();
        let net = build_multiplex(&bx);
        (bx, net)
    }

    #[test]
    fn person_loglik_single_pair() {
        let (_, net) = school(&[1, 1], 2, 1);
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        let ll = loglik_person_network(&net, &z, &[0.0]);
        assert!((ll - 0.5f64.ln()).abs() < TOL);
    }

    #[test]
    fn person_loglik_empty_network() {
        // logit -10 with y = 0: log(1 - sigmoid(-10)) = -ln(1 + e^-10).
        let (_, net) = school(&[0, 0], 2, 1);
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 6.0, 8.0]);
        let ll = loglik_person_network(&net, &z, &[0.0]);
        let expected = -(1.0 + (-10.0f64).exp()).ln();
        assert!((ll - expected).abs() < 1e-15);
        assert!((ll + 4.539889921686465e-5).abs() < 1e-15);
    }

    #[test]
    fn item_loglik_single_pair_and_empty() {
        let (_, net) = school(&[1, 1], 1, 2);
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        assert!((loglik_item_network(&net, &w, &[0.0]) - 0.5f64.ln()).abs() < TOL);
        let (_, net) = school(&[0, 1], 1, 2);
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 6.0, 8.0]);
        let ll = loglik_item_network(&net, &w, &[0.0]);
        assert!((ll + 4.539889921686465e-5).abs() < 1e-15);
    }

    /// Direct evaluation from `x` with the logistic function written out.
    fn naive_person(x: &DMatrix<u8>, z: &DMatrix<f64>, beta: &[f64]) -> f64 {
        let (n, p) = x.shape();
        let mut s = 0.0;
        for i in 0..p {
            for k in 0..n {
                for l in (k + 1)..n {
                    let dist = ((z[(k, 0)] - z[(l, 0)]).powi(2) + (z[(k, 1)] - z[(l, 1)]).powi(2)).sqrt();
                    let prob = 1.0 / (1.0 + (-(beta[i] - dist)).exp());
                    let y = x[(k, i)] * x[(l, i)];
                    s += if y == 1 { prob.ln() } else { (1.0 - prob).ln() };
                }
            }
        }
        s
    }

    fn naive_item(x: &DMatrix<u8>, w: &DMatrix<f64>, theta: &[f64]) -> f64 {
        let (n, p) = x.shape();
        let mut s = 0.0;
        for k in 0..n {
            for i in 0..p {
                for j in (i + 1)..p {
                    let dist = ((w[(i, 0)] - w[(j, 0)]).powi(2) + (w[(i, 1)] - w[(j, 1)]).powi(2)).sqrt();
                    let prob = 1.0 / (1.0 + (-(theta[k] - dist)).exp());
                    let u = x[(k, i)] * x[(k, j)];
                    s += if u == 1 { prob.ln() } else { (1.0 - prob).ln() };
                }
            }
        }
        s
    }

    #[test]
    fn loglik_matches_naive_on_3x3() {
        let (bx, net) = school(&[1, 0, 1, 1, 1, 0, 0, 1, 1], 3, 3);
        let z = DMatrix::from_row_slice(3, 2, &[0.1, -0.4, 1.2, 0.3, -0.7, 0.9]);
        let w = DMatrix::from_row_slice(3, 2, &[0.5, 0.5, -1.0, 0.2, 0.0, -0.8]);
        let beta = [0.3, -0.2, 1.1];
        let theta = [0.7, -1.3, 0.05];
        assert!((loglik_person_network(&net, &z, &beta) - naive_person(&bx.x, &z, &beta)).abs() < 1e-12);
        assert!((loglik_item_network(&net, &w, &theta) - naive_item(&bx.x, &w, &theta)).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_small_grid_matches_naive() {
        // Every binary matrix with n, p <= 3 and a fixed pseudo-random state.
        for n in 2..=3usize {
            for p in 2..=3usize {
                for bits in 0u32..(1 << (n * p)) {
                    let xs: Vec<u8> = (0..n * p).map(|b| ((bits >> b) & 1) as u8).collect();
                    let (bx, net) = school(&xs, n, p);
                    let z = DMatrix::from_fn(n, 2, |r, c| ((r * 7 + c * 3) as f64).sin());
                    let w = DMatrix::from_fn(p, 2, |r, c| ((r * 5 + c * 11) as f64).cos());
                    let beta: Vec<f64> = (0..p).map(|i| 0.3 * i as f64 - 0.2).collect();
                    let theta: Vec<f64> = (0..n).map(|k| 0.5 - 0.4 * k as f64).collect();
                    let a = loglik_person_network(&net, &z, &beta);
                    let b = loglik_item_network(&net, &w, &theta);
                    assert!((a - naive_person(&bx.x, &z, &beta)).abs() < 1e-10 * a.abs().max(1.0));
                    assert!((b - naive_item(&bx.x, &w, &theta)).abs() < 1e-10 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn respondent_centered_examples() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 2.0]);
        assert_eq!(link_respondent_centered(&w, &[1, 1]), vec![1.0, 1.0]);
        assert_eq!(link_respondent_centered(&w, &[0, 1]), vec![2.0, 2.0]);
        let w = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 9.0, 9.0, 4.0, 0.0]);
        assert_eq!(link_respondent_centered(&w, &[1, 0, 1]), vec![2.0, 0.0]);
        let c = link_respondent_centered(&w, &[0, 0, 0]);
        assert!((c[0] - 13.0 / 3.0).abs() < 1e-15 && (c[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn item_centered_examples() {
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 2.0]);
        assert_eq!(link_item_centered(&z, &[1, 1]), vec![1.0, 1.0]);
        assert_eq!(link_item_centered(&z, &[1, 0]), vec![0.0, 0.0]);
        let z = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 9.0, 9.0, 4.0, 0.0]);
        assert_eq!(link_item_centered(&z, &[1, 0, 1]), vec![2.0, 0.0]);
        let c = link_item_centered(&z, &[0, 0, 0]);
        assert!((c[0] - 13.0 / 3.0).abs() < 1e-15 && (c[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn distance_examples() {
        let p = DMatrix::from_row_slice(2, 2, &[0.4, 0.4, 0.4, 0.4]);
        assert_eq!(pairwise_distances(&p)[(0, 1)], 0.0);
        let p = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, -1.0, 1.0]);
        assert_eq!(pairwise_distances(&p)[(0, 1)], 2.0);
        let p = DMatrix::from_row_slice(4, 2, &[0.3, -1.2, 2.2, 0.7, -0.5, 0.1, 1.9, -2.4]);
        let d = pairwise_distances(&p);
        for a in 0..4 {
            for b in 0..4 {
                let naive = ((p[(a, 0)] - p[(b, 0)]).powi(2) + (p[(a, 1)] - p[(b, 1)]).powi(2)).sqrt();
                assert!((d[(a, b)] - naive).abs() < 1e-15);
            }
        }
    }

    fn positions(rows: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-3.0f64..3.0, rows * 2)
            .prop_map(move |v| DMatrix::from_row_slice(rows, 2, &v))
    }

    fn rigid(p: &DMatrix<f64>, angle: f64, reflect: bool, shift: (f64, f64)) -> DMatrix<f64> {
        let (s, c) = angle.sin_cos();
        DMatrix::from_fn(p.nrows(), 2, |r, col| {
            let x = p[(r, 0)];
            let y = if reflect { -p[(r, 1)] } else { p[(r, 1)] };
            if col == 0 {
                c * x - s * y + shift.0
            } else {
                s * x + c * y + shift.1
            }
        })
    }

    proptest! {
        #[test]
        fn distances_are_a_metric(p in positions(5)) {
            let d = pairwise_distances(&p);
            for a in 0..5 {
                prop_assert_eq!(d[(a, a)], 0.0);
                for b in 0..5 {
                    prop_assert_eq!(d[(a, b)], d[(b, a)]);
                    for c in 0..5 {
                        prop_assert!(d[(a, c)] <= d[(a, b)] + d[(b, c)] + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn rigid_motion_leaves_density_unchanged(
            z in positions(4),
            w in positions(3),
            bits in proptest::collection::vec(0u8..2, 12),
            angle in 0.0f64..std::f64::consts::TAU,
            reflect in any::<bool>(),
            tx in -5.0f64..5.0,
            ty in -5.0f64..5.0,
        ) {
            let (bx, net) = school(&bits, 4, 3);
            let state = WithinSchoolState::new(z.clone(), w.clone(), vec![0.2, -0.4, 0.9], vec![0.1, 0.0, -0.3, 0.6], 0.7).unwrap();
            let moved = WithinSchoolState::new(
                rigid(&z, angle, reflect, (tx, ty)),
                rigid(&w, angle, reflect, (tx, ty)),
                state.beta.clone(),
                state.theta.clone(),
                0.7,
            ).unwrap();
            let a = state.log_density(&net, &bx);
            let b = moved.log_density(&net, &bx);
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{} vs {}", a, b);
        }

        #[test]
        fn logit_decreases_with_distance(beta in -3.0f64..3.0, r in 0.0f64..5.0, dr in 1e-6f64..2.0) {
            let near = edge_logit_person(beta, &[0.0, 0.0], &[r, 0.0]);
            let far = edge_logit_person(beta, &[0.0, 0.0], &[r + dr, 0.0]);
            prop_assert!(far < near);
            let near = edge_logit_item(beta, &[0.0, 0.0], &[0.0, r]);
            let far = edge_logit_item(beta, &[0.0, 0.0], &[0.0, r + dr]);
            prop_assert!(far < near);
        }
    }
}
