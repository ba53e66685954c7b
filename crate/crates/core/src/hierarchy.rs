//! Between-school layer: item intercepts pooled around group means, and
//! log-normal item distances whose school-level log-means are pooled around
//! a group-level matrix.

use nalgebra::DMatrix;

use statrs::function::gamma::ln_gamma;

use crate::data::BinarySchoolMatrix;
use crate::error::{Error, Result};
use crate::within_school::LN_2PI;

/// Fixed hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperPriors {
    /// Prior variance of the pooled intercepts `gamma_i`.
    pub sigma_gamma2: f64,
    /// Prior variance of respondent intercepts `theta_k`.
    pub sigma_theta2: f64,
    /// Prior variance of pooled log-distances `mu_ij`.
    pub sigma_mu2: f64,
    /// Inverse-gamma shape shared by every variance parameter.
    pub a: f64,
    /// Inverse-gamma scale shared by every variance parameter.
    pub b: f64,
}

impl Default for HyperPriors {
    /// Standard deviations of 10 for the Gaussian priors, IG(0.01, 0.01).
    fn default() -> Self {
        HyperPriors {
            sigma_gamma2: 100.0,
            sigma_theta2: 100.0,
            sigma_mu2: 100.0,
            a: 0.01,
            b: 0.01,
        }
    }
}

impl HyperPriors {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            ("sigma_gamma2", self.sigma_gamma2),
            ("sigma_theta2", self.sigma_theta2),
            ("sigma_mu2", self.sigma_mu2),
            ("a", self.a),
            ("b", self.b),
        ];
        for (name, v) in vals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln()) - 0.5 * r * r / var
}

/// Log-normal density with log-scale mean `mu` and log-scale variance `var`.
/// Zero is outside the support and yields `-inf`.
#[inline]
pub fn lognormal_logpdf(x: f64, mu: f64, var: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let lx = x.ln();
    normal_logpdf(lx, mu, var) - lx
}

/// Inverse-gamma density with shape `shape` and scale `scale`.
#[inline]
pub fn inv_gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

fn check_var(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {v}")))
    }
}

/// `sum_i log N(beta_i | gamma_i, sigma_beta2_i)`.
pub fn logprior_beta(beta: &[f64], gamma: &[f64], sigma_beta2: &[f64]) -> Result<f64> {
    if beta.len() != gamma.len() || beta.len() != sigma_beta2.len() {
        return Err(Error::Dimension("beta, gamma and sigma_beta2 lengths differ".into()));
    }
    let mut total = 0.0;
    for ((&b, &g), &v) in beta.iter().zip(gamma).zip(sigma_beta2) {
        check_var("sigma_beta2", v)?;
        total += normal_logpdf(b, g, v);
    }
    Ok(total)
}

/// Log-normal log-density of the between-item distances over pairs `i < j`.
/// A zero distance gives `-inf`.
pub fn logprior_distances(d_w: &DMatrix<f64>, delta: &DMatrix<f64>, sigma_d2: f64) -> Result<f64> {
    check_var("sigma_d2", sigma_d2)?;
    if d_w.shape() != delta.shape() || !d_w.is_square() {
        return Err(Error::Dimension("distance and delta matrices differ in shape".into()));
    }
    let p = d_w.nrows();
    let mut total = 0.0;
    for j in 1..p {
        for i in 0..j {
            total += lognormal_logpdf(d_w[(i, j)], delta[(i, j)], sigma_d2);
        }
    }
    Ok(total)
}

/// `sum_{i<j} log N(delta_ij | mu_ij, sigma_delta2_ij)`.
pub fn logprior_delta(delta: &DMatrix<f64>, mu: &DMatrix<f64>, sigma_delta2: &DMatrix<f64>) -> Result<f64> {
    if delta.shape() != mu.shape() || delta.shape() != sigma_delta2.shape() || !delta.is_square() {
        return Err(Error::Dimension("delta, mu and sigma_delta2 differ in shape".into()));
    }
    let p = delta.nrows();
    let mut total = 0.0;
    for j in 1..p {
        for i in 0..j {
            check_var("sigma_delta2", sigma_delta2[(i, j)])?;
            total += normal_logpdf(delta[(i, j)], mu[(i, j)], sigma_delta2[(i, j)]);
        }
    }
    Ok(total)
}

/// Single pooled group, or one group per distinct school label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupMode {
    #[default]
    Single,
    ByLabel,
}

impl std::str::FromStr for GroupMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(GroupMode::Single),
            "by_label" => Ok(GroupMode::ByLabel),
            other => Err(Error::Config(format!("unknown group mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for GroupMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GroupMode::Single => "single",
            GroupMode::ByLabel => "by_label",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    /// Group names, indexed by group id.
    pub labels: Vec<String>,
    /// Group id of each school.
    pub group_of_school: Vec<usize>,
}

impl GroupAssignment {
    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    pub fn schools_in(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        self.group_of_school
            .iter()
            .enumerate()
            .filter(move |(_, &gg)| gg == g)
            .map(|(m, _)| m)
    }
}

/// Enumerates groups in order of first appearance.
pub fn assign_groups(schools: &[BinarySchoolMatrix], mode: GroupMode) -> Result<GroupAssignment> {
    match mode {
        GroupMode::Single => Ok(GroupAssignment {
            labels: vec!["all".into()],
            group_of_school: vec![0; schools.len()],
        }),
        GroupMode::ByLabel => {
            let mut labels: Vec<String> = Vec::new();
            let mut group_of_school = Vec::with_capacity(schools.len());
            for s in schools {
                let label = s.group_label.as_ref().ok_or_else(|| {
                    Error::Validation(format!("school `{}` has no group label", s.school_id))
                })?;
                let g = match labels.iter().position(|l| l == label) {
                    Some(g) => g,
                    None => {
                        labels.push(label.clone());
                        labels.len() - 1
                    }
                };
                group_of_school.push(g);
            }
            Ok(GroupAssignment {
                labels,
                group_of_school,
            })
        }
    }
}

/// Pooled parameters of one school group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupParams {
    pub gamma: Vec<f64>,
    pub sigma_beta2: Vec<f64>,
    /// Pooled log-distance means, symmetric with zero diagonal.
    pub mu: DMatrix<f64>,
    /// Between-school variances of the log-distance means (off-diagonal used).
    pub sigma_delta2: DMatrix<f64>,
}

impl GroupParams {
    pub fn new(p: usize) -> Self {
        GroupParams {
            gamma: vec![0.0; p],
            sigma_beta2: vec![1.0; p],
            mu: DMatrix::zeros(p, p),
            sigma_delta2: DMatrix::from_element(p, p, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalState {
    pub groups: Vec<GroupParams>,
    pub assignment: GroupAssignment,
    /// School log-distance means `delta_m`, symmetric with zero diagonal.
    pub delta: Vec<DMatrix<f64>>,
    /// School distance variances `sigma_dm^2`.
    pub sigma_d2: Vec<f64>,
}

impl HierarchicalState {
    pub fn group_of(&self, school: usize) -> &GroupParams {
        &self.groups[self.assignment.group_of_school[school]]
    }

    pub fn n_schools(&self) -> usize {
        self.delta.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (m, &v) in self.sigma_d2.iter().enumerate() {
            check_var(&format!("sigma_d2[{m}]"), v)?;
        }
        for g in &self.groups {
            for &v in &g.sigma_beta2 {
                check_var("sigma_beta2", v)?;
            }
            let p = g.mu.nrows();
            for j in 1..p {
                for i in 0..j {
                    check_var("sigma_delta2", g.sigma_delta2[(i, j)])?;
                }
            }
        }
        Ok(())
    }

    /// Log-density of the between-school layer: intercept and distance
    /// priors, the Gaussian hyper-prior on `delta`, and the priors on the
    /// pooled means and every variance.
    pub fn log_density(&self, item_dist: &[&DMatrix<f64>], betas: &[&[f64]], hyper: &HyperPriors) -> Result<f64> {
        let mut total = 0.0;
        for m in 0..self.n_schools() {
            let g = self.group_of(m);
            total += logprior_beta(betas[m], &g.gamma, &g.sigma_beta2)?;
            total += logprior_distances(item_dist[m], &self.delta[m], self.sigma_d2[m])?;
            total += logprior_delta(&self.delta[m], &g.mu, &g.sigma_delta2)?;
            total += inv_gamma_logpdf(self.sigma_d2[m], hyper.a, hyper.b);
        }
        for g in &self.groups {
            let p = g.gamma.len();
            for i in 0..p {
                total += normal_logpdf(g.gamma[i], 0.0, hyper.sigma_gamma2);
                total += inv_gamma_logpdf(g.sigma_beta2[i], hyper.a, hyper.b);
            }
            for j in 1..p {
                for i in 0..j {
                    total += normal_logpdf(g.mu[(i, j)], 0.0, hyper.sigma_mu2);
                    total += inv_gamma_logpdf(g.sigma_delta2[(i, j)], hyper.a, hyper.b);
                }
            }
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

    /// Trapezoid rule on a uniform grid.
    fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut s = 0.5 * (f(lo) + f(hi));
        for k in 1..n {
            s += f(lo + k as f64 * h);
        }
        s * h
    }

    #[test]
    fn beta_prior_examples() {
        let v = logprior_beta(&[0.3, -1.0, 2.0], &[0.3, -1.0, 2.0], &[1.0; 3]).unwrap();
        assert!((v - 3.0 * -HALF_LN_2PI).abs() < 1e-14);
        let v = logprior_beta(&[1.0], &[0.0], &[1.0]).unwrap();
        assert!((v - (-0.5 - HALF_LN_2PI)).abs() < 1e-14);
        assert!(matches!(logprior_beta(&[1.0], &[0.0], &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn beta_prior_matches_density_product() {
        let beta: [f64; 3] = [0.4, -1.3, 2.2];
        let gamma = [0.1, -0.5, 1.0];
        let var = [0.5, 2.0, 1.3];
        let product: f64 = (0..3)
            .map(|i| {
                (-(beta[i] - gamma[i]).powi(2) / (2.0 * var[i])).exp() / (2.0 * std::f64::consts::PI * var[i]).sqrt()
            })
            .product();
        assert!((logprior_beta(&beta, &gamma, &var).unwrap() - product.ln()).abs() < 1e-12);
    }

    #[test]
    fn distance_prior_examples() {
        let delta: f64 = 0.7;
        let d = DMatrix::from_row_slice(2, 2, &[0.0, delta.exp(), delta.exp(), 0.0]);
        let dm = DMatrix::from_row_slice(2, 2, &[0.0, delta, delta, 0.0]);
        let v = logprior_distances(&d, &dm, 1.0).unwrap();
        assert!((v - (-delta - HALF_LN_2PI)).abs() < 1e-12);
        let d0 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(logprior_distances(&d0, &dm, 1.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn distance_prior_three_items() {
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.2, 0.4, 1.2, 0.0, 2.5, 0.4, 2.5, 0.0]);
        let delta = DMatrix::from_row_slice(3, 3, &[0.0, 0.1, -0.6, 0.1, 0.0, 0.8, -0.6, 0.8, 0.0]);
        let var: f64 = 0.35;
        let mut want = 0.0;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let x: f64 = d[(i, j)];
            let dens = (-(x.ln() - delta[(i, j)]).powi(2) / (2.0 * var)).exp()
                / (x * (2.0 * std::f64::consts::PI * var).sqrt());
            want += dens.ln();
        }
        assert!((logprior_distances(&d, &delta, var).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn delta_prior_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.3, 0.0]);
        let one = DMatrix::from_element(2, 2, 1.0);
        assert!((logprior_delta(&m, &m, &one).unwrap() + HALF_LN_2PI).abs() < 1e-14);
        let mu = DMatrix::from_row_slice(2, 2, &[0.0, -0.7, -0.7, 0.0]);
        assert!((logprior_delta(&m, &mu, &one).unwrap() - (-0.5 - HALF_LN_2PI)).abs() < 1e-12);
        let delta: DMatrix<f64> = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 1.0, 0.5, 0.0, -0.2, 1.0, -0.2, 0.0]);
        let mu = DMatrix::from_row_slice(3, 3, &[0.0, 0.1, 0.2, 0.1, 0.0, 0.3, 0.2, 0.3, 0.0]);
        let var = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 2.0, 0.4, 1.0, 0.9, 2.0, 0.9, 1.0]);
        let mut want = 0.0;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let dens: f64 = (-(delta[(i, j)] - mu[(i, j)]).powi(2) / (2.0 * var[(i, j)])).exp()
                / (2.0 * std::f64::consts::PI * var[(i, j)]).sqrt();
            want += dens.ln();
        }
        assert!((logprior_delta(&delta, &mu, &var).unwrap() - want).abs() < 1e-12);
        let bad = DMatrix::from_element(3, 3, -1.0);
        assert!(logprior_delta(&delta, &mu, &bad).is_err());
    }

    #[test]
    fn densities_integrate_to_one() {
        let n = integrate(|x| normal_logpdf(x, 0.3, 0.8).exp(), -12.0, 12.0, 200_000);
        assert!((n - 1.0).abs() < 1e-6, "{n}");
        let ln = integrate(|x| lognormal_logpdf(x, -0.2, 0.25).exp(), 0.0, 40.0, 400_000);
        assert!((ln - 1.0).abs() < 1e-6, "{ln}");
        // IG(3, 2) has a light left tail; integrate in log space.
        let ig = integrate(|t| (inv_gamma_logpdf(t.exp(), 3.0, 2.0) + t).exp(), -12.0, 12.0, 200_000);
        assert!((ig - 1.0).abs() < 1e-6, "{ig}");
    }

    fn school(label: Option<&str>) -> BinarySchoolMatrix {
        let mut s = BinarySchoolMatrix::new("s", DMatrix::from_element(2, 2, 1u8)).unwrap();
        s.group_label = label.map(str::to_string);
        s
    }

    #[test]
    fn group_assignment() {
        let schools = vec![school(Some("reg")), school(Some("inn")), school(Some("reg"))];
        let single = assign_groups(&schools, GroupMode::Single).unwrap();
        assert_eq!(single.group_of_school, vec![0, 0, 0]);
        let by = assign_groups(&schools, GroupMode::ByLabel).unwrap();
        assert_eq!(by.group_of_school, vec![0, 1, 0]);
        assert_eq!(by.labels, vec!["reg", "inn"]);
        let schools = vec![school(Some("reg")), school(None)];
        assert!(matches!(assign_groups(&schools, GroupMode::ByLabel), Err(Error::Validation(_))));
    }

    fn sym(p: usize, vals: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(p, p);
        let mut it = vals.iter();
        for j in 1..p {
            for i in 0..j {
                let v = *it.next().unwrap();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    proptest! {
        #[test]
        fn pair_priors_are_permutation_invariant(
            d in proptest::collection::vec(0.05f64..4.0, 6),
            delta in proptest::collection::vec(-2.0f64..2.0, 6),
            mu in proptest::collection::vec(-2.0f64..2.0, 6),
            var in proptest::collection::vec(0.1f64..3.0, 6),
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let (d, delta, mu, var) = (sym(4, &d), sym(4, &delta), sym(4, &mu), sym(4, &var));
            let pm = |m: &DMatrix<f64>| DMatrix::from_fn(4, 4, |i, j| m[(perm[i], perm[j])]);
            let a = logprior_distances(&d, &delta, 0.6).unwrap();
            let b = logprior_distances(&pm(&d), &pm(&delta), 0.6).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
            let a = logprior_delta(&delta, &mu, &var).unwrap();
            let b = logprior_delta(&pm(&delta), &pm(&mu), &pm(&var)).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
