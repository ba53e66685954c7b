//! Closed-form conditional updates.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::config::GibbsForm;
use crate::hierarchy::{HierarchicalState, HyperPriors};

/// Inverse-gamma law with shape `shape` and scale `scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g: f64 = Gamma::new(self.shape, 1.0 / self.scale)
            .expect("positive inverse-gamma parameters")
            .sample(rng);
        1.0 / g
    }

    pub fn mean(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| self.scale / (self.shape - 1.0))
    }

    pub fn mode(&self) -> f64 {
        self.scale / (self.shape + 1.0)
    }
}

/// Gaussian law with mean `mean` and variance `var`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal {
    pub mean: f64,
    pub var: f64,
}

impl Normal {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        self.mean + self.var.sqrt() * e
    }
}

/// `sigma_dm^2 | d_m, delta_m`. The distance residuals are taken on the log
/// scale, where the log-normal prior is Gaussian.
pub fn sigma_d2_conditional(
    d_w: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    mu: &DMatrix<f64>,
    hyper: &HyperPriors,
    form: GibbsForm,
) -> InvGamma {
    let p = d_w.nrows();
    let pairs = (p * (p - 1) / 2) as f64;
    let mut ss = 0.0;
    let mut shrink = 0.0;
    for j in 1..p {
        for i in 0..j {
            let r = d_w[(i, j)].ln() - delta[(i, j)];
            ss += r * r;
            let s = delta[(i, j)] - mu[(i, j)];
            shrink += s * s;
        }
    }
    let scale = match form {
        GibbsForm::Exact => hyper.b + 0.5 * ss,
        GibbsForm::Printed => hyper.b + ss + pairs / (pairs + 1.0) * shrink,
    };
    InvGamma {
        shape: hyper.a + 0.5 * pairs,
        scale,
    }
}

/// `sigma_delta,ij^2 | delta_.ij, mu_ij` over the schools of one group.
pub fn sigma_delta2_conditional(deltas: &[f64], mu: f64, hyper: &HyperPriors, form: GibbsForm) -> InvGamma {
    let m = deltas.len() as f64;
    let ss: f64 = deltas.iter().map(|d| (d - mu) * (d - mu)).sum();
    let mut scale = hyper.b + 0.5 * ss;
    if form == GibbsForm::Printed {
        scale += 0.5 * m / (m + 1.0) * mu * mu;
    }
    InvGamma {
        shape: hyper.a + 0.5 * m,
        scale,
    }
}

/// `delta_m,ij | d_m,ij, mu_ij`: precision-weighted average of the observed
/// log-distance and the pooled mean.
pub fn delta_conditional(d: f64, mu: f64, sigma_d2: f64, sigma_delta2: f64) -> Normal {
    let prec = 1.0 / sigma_d2 + 1.0 / sigma_delta2;
    Normal {
        mean: (d.ln() / sigma_d2 + mu / sigma_delta2) / prec,
        var: 1.0 / prec,
    }
}

/// `mu_ij | delta_.ij` over the schools of one group.
pub fn mu_conditional(deltas: &[f64], sigma_delta2: f64, hyper: &HyperPriors) -> Normal {
    let m = deltas.len() as f64;
    let prec = 1.0 / hyper.sigma_mu2 + m / sigma_delta2;
    let sum: f64 = deltas.iter().sum();
    Normal {
        mean: (sum / sigma_delta2) / prec,
        var: 1.0 / prec,
    }
}

/// `sigma_zm^2 | Z_m, W_m` from the linking residuals.
pub fn sigma_z2_conditional(residual_ss: f64, n: usize, d: usize, hyper: &HyperPriors) -> InvGamma {
    InvGamma {
        shape: hyper.a + 0.5 * (n * d) as f64,
        scale: hyper.b + 0.5 * residual_ss,
    }
}

/// `sigma_beta,i^2 | beta_.i, gamma_i` over the schools of one group.
pub fn sigma_beta2_conditional(betas: &[f64], gamma: f64, hyper: &HyperPriors, form: GibbsForm) -> InvGamma {
    let m = betas.len() as f64;
    let ss: f64 = betas.iter().map(|b| (b - gamma) * (b - gamma)).sum();
    let mut scale = hyper.b + 0.5 * ss;
    if form == GibbsForm::Printed {
        scale += 0.5 * m / (m + 1.0) * gamma * gamma;
    }
    InvGamma {
        shape: hyper.a + 0.5 * m,
        scale,
    }
}

/// `gamma_i | beta_.i, sigma_beta,i^2` over the schools of one group.
pub fn gamma_conditional(betas: &[f64], sigma_beta2: f64, hyper: &HyperPriors) -> Normal {
    let m = betas.len() as f64;
    let prec = 1.0 / hyper.sigma_gamma2 + m / sigma_beta2;
    let mean_beta = betas.iter().sum::<f64>() / m;
    Normal {
        mean: mean_beta * (m / sigma_beta2) / prec,
        var: 1.0 / prec,
    }
}

fn group_schools(hier: &HierarchicalState, g: usize) -> Vec<usize> {
    hier.assignment.schools_in(g).collect()
}

/// School distance variances, then pooled log-distance variances.
pub fn gibbs_variances_distance<R: Rng + ?Sized>(
    hier: &mut HierarchicalState,
    item_dist: &[&DMatrix<f64>],
    hyper: &HyperPriors,
    form: GibbsForm,
    rng: &mut R,
) {
    for m in 0..hier.n_schools() {
        let g = hier.assignment.group_of_school[m];
        let law = sigma_d2_conditional(item_dist[m], &hier.delta[m], &hier.groups[g].mu, hyper, form);
        hier.sigma_d2[m] = law.sample(rng);
    }
    let mut buf = Vec::new();
    for g in 0..hier.groups.len() {
        let schools = group_schools(hier, g);
        let p = hier.groups[g].mu.nrows();
        for i in 0..p {
            for j in i + 1..p {
                buf.clear();
                buf.extend(schools.iter().map(|&m| hier.delta[m][(i, j)]));
                let law = sigma_delta2_conditional(&buf, hier.groups[g].mu[(i, j)], hyper, form);
                let v = law.sample(rng);
                hier.groups[g].sigma_delta2[(i, j)] = v;
                hier.groups[g].sigma_delta2[(j, i)] = v;
            }
        }
    }
}

/// School log-distance means, then pooled means.
pub fn gibbs_delta_mu<R: Rng + ?Sized>(
    hier: &mut HierarchicalState,
    item_dist: &[&DMatrix<f64>],
    hyper: &HyperPriors,
    rng: &mut R,
) {
    gibbs_delta(hier, item_dist, rng);
    gibbs_mu(hier, hyper, rng);
}

/// School log-distance means, pair by pair.
pub fn gibbs_delta<R: Rng + ?Sized>(hier: &mut HierarchicalState, item_dist: &[&DMatrix<f64>], rng: &mut R) {
    for m in 0..hier.n_schools() {
        let g = hier.assignment.group_of_school[m];
        let p = item_dist[m].nrows();
        for i in 0..p {
            for j in i + 1..p {
                let law = delta_conditional(
                    item_dist[m][(i, j)],
                    hier.groups[g].mu[(i, j)],
                    hier.sigma_d2[m],
                    hier.groups[g].sigma_delta2[(i, j)],
                );
                let v = law.sample(rng);
                hier.delta[m][(i, j)] = v;
                hier.delta[m][(j, i)] = v;
            }
        }
    }
}

/// Pooled log-distance means, pair by pair.
pub fn gibbs_mu<R: Rng + ?Sized>(hier: &mut HierarchicalState, hyper: &HyperPriors, rng: &mut R) {
    let mut buf = Vec::new();
    for g in 0..hier.groups.len() {
        let schools = group_schools(hier, g);
        let p = hier.groups[g].mu.nrows();
        for i in 0..p {
            for j in i + 1..p {
                buf.clear();
                buf.extend(schools.iter().map(|&m| hier.delta[m][(i, j)]));
                let law = mu_conditional(&buf, hier.groups[g].sigma_delta2[(i, j)], hyper);
                let v = law.sample(rng);
                hier.groups[g].mu[(i, j)] = v;
                hier.groups[g].mu[(j, i)] = v;
            }
        }
    }
}

/// Intercept variances, then pooled intercepts, item by item.
pub fn gibbs_gamma_sigma_beta<R: Rng + ?Sized>(
    hier: &mut HierarchicalState,
    betas: &[&[f64]],
    hyper: &HyperPriors,
    form: GibbsForm,
    rng: &mut R,
) {
    let mut buf = Vec::new();
    for g in 0..hier.groups.len() {
        let schools = group_schools(hier, g);
        let p = hier.groups[g].gamma.len();
        for i in 0..p {
            buf.clear();
            buf.extend(schools.iter().map(|&m| betas[m][i]));
            let law = sigma_beta2_conditional(&buf, hier.groups[g].gamma[i], hyper, form);
            hier.groups[g].sigma_beta2[i] = law.sample(rng);
            let law = gamma_conditional(&buf, hier.groups[g].sigma_beta2[i], hyper);
            hier.groups[g].gamma[i] = law.sample(rng);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_residual_distance_variance() {
        let p = 4;
        let d = DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { 1.0 });
        let z = DMatrix::zeros(p, p);
        let h = HyperPriors::default();
        for form in [GibbsForm::Exact, GibbsForm::Printed] {
            let law = sigma_d2_conditional(&d, &z, &z, &h, form);
            assert_eq!(law.shape, 0.01 + (p * (p - 1)) as f64 / 4.0);
            assert_eq!(law.scale, 0.01);
        }
    }

    #[test]
    fn printed_form_adds_shrinkage() {
        let h = HyperPriors::default();
        let e = sigma_delta2_conditional(&[1.0, 2.0], 0.5, &h, GibbsForm::Exact);
        let p = sigma_delta2_conditional(&[1.0, 2.0], 0.5, &h, GibbsForm::Printed);
        assert!((e.scale - (0.01 + 0.5 * 2.5)).abs() < 1e-15);
        assert!((p.scale - e.scale - 0.5 * (2.0 / 3.0) * 0.25).abs() < 1e-15);
        let e = sigma_beta2_conditional(&[1.0, 1.0, 1.0], 1.0, &h, GibbsForm::Exact);
        assert_eq!(e.scale, 0.01);
        let p = sigma_beta2_conditional(&[1.0, 1.0, 1.0], 1.0, &h, GibbsForm::Printed);
        assert!((p.scale - 0.01 - 0.375).abs() < 1e-15);
    }

    #[test]
    fn equal_precisions_average() {
        let d = 2.5f64;
        let law = delta_conditional(d, 0.3, 0.7, 0.7);
        assert!((law.mean - (d.ln() + 0.3) / 2.0).abs() < 1e-15);
        assert!((law.var - 0.35).abs() < 1e-15);
    }

    #[test]
    fn mu_prior_limit() {
        let h = HyperPriors::default();
        let law = mu_conditional(&[3.0, 4.0], 1e12, &h);
        assert!(law.mean.abs() < 1e-8);
        assert!((law.var - h.sigma_mu2).abs() < 1e-6);
    }

    #[test]
    fn gamma_formula_substitution() {
        let h = HyperPriors::default();
        let c = 1.7;
        let s2 = 0.4;
        for m in [1usize, 3, 10] {
            let law = gamma_conditional(&vec![c; m], s2, &h);
            let mf = m as f64;
            let want = c * (mf / s2) / (1.0 / h.sigma_gamma2 + mf / s2);
            assert!((law.mean - want).abs() < 1e-14);
        }
        let v: Vec<f64> = [1usize, 2, 5, 20]
            .iter()
            .map(|&m| gamma_conditional(&vec![c; m], s2, &h).var)
            .collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn zero_residual_sigma_z() {
        let h = HyperPriors::default();
        let law = sigma_z2_conditional(0.0, 7, 2, &h);
        assert_eq!(law.shape, 0.01 + 7.0);
        assert_eq!(law.scale, 0.01);
    }

    #[test]
    fn inverse_gamma_moment() {
        let law = InvGamma { shape: 6.0, scale: 3.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let want = law.mean().unwrap();
        // variance is scale^2 / ((shape-1)^2 (shape-2))
        let sd = (3.0f64 * 3.0 / (25.0 * 4.0)).sqrt();
        assert!((mean - want).abs() < 4.0 * sd / (n as f64).sqrt(), "{mean} vs {want}");
        assert!(draws.iter().all(|&v| v > 0.0));
    }
}
