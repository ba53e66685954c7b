//! Synthetic multilevel data with known ground truth, and brute-force
//! reference computations.
//!
//! Responses follow `x_ki ~ Bernoulli(logistic(theta_k + beta_i - |z_k - w_i|))`.
//! The model itself is defined on the derived co-endorsement networks, so
//! this response-level process is a stand-in that plants the intended
//! structure rather than an exact draw from the model.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{BinarySchoolMatrix, Respondent, ResponseDataset};
use crate::error::{Error, Result};
use crate::hierarchy::HyperPriors;
use crate::sampler::{log_posterior, ChainState, SchoolData};
use crate::within_school::WithinSchoolState;

/// School groups and their intercept shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    /// Added to the pooled item intercepts of each group; its length is the
    /// number of groups. Schools are assigned to groups round-robin.
    pub gamma_shift: Vec<f64>,
}

impl GroupSpec {
    pub fn single() -> Self {
        GroupSpec { gamma_shift: vec![0.0] }
    }

    /// `g` groups with identical parameters.
    pub fn identical(g: usize) -> Self {
        GroupSpec {
            gamma_shift: vec![0.0; g],
        }
    }

    pub fn n_groups(&self) -> usize {
        self.gamma_shift.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_schools: usize,
    pub n_per_school: usize,
    pub n_items: usize,
    pub d: usize,
    /// Planted item clusters, centred on a circle.
    pub n_clusters: usize,
    pub cluster_radius: f64,
    pub cluster_sd: f64,
    /// Per-school perturbation of the item configuration.
    pub school_jitter: f64,
    /// Spread of respondents around the cluster centre they lean towards.
    pub respondent_sd: f64,
    pub sigma_gamma: f64,
    pub sigma_beta: f64,
    pub sigma_theta: f64,
    pub groups: GroupSpec,
    /// Fixes every item intercept, e.g. `20` or `-20` for saturated data.
    pub beta_override: Option<f64>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_schools: 6,
            n_per_school: 50,
            n_items: 20,
            d: 2,
            n_clusters: 3,
            cluster_radius: 2.0,
            cluster_sd: 0.3,
            school_jitter: 0.1,
            respondent_sd: 0.5,
            sigma_gamma: 1.5,
            sigma_beta: 0.3,
            sigma_theta: 0.5,
            groups: GroupSpec::single(),
            beta_override: None,
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_schools < 2 || self.n_per_school < 2 || self.n_items < 2 || self.d < 1 {
            return Err(Error::Validation(
                "need at least 2 schools, 2 respondents per school, 2 items and dimension 1".into(),
            ));
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_items {
            return Err(Error::Validation("cluster count must lie in 1..=n_items".into()));
        }
        if self.groups.n_groups() == 0 || self.groups.n_groups() > self.n_schools {
            return Err(Error::Validation("group count must lie in 1..=n_schools".into()));
        }
        for (name, v) in [
            ("cluster_radius", self.cluster_radius),
            ("cluster_sd", self.cluster_sd),
            ("school_jitter", self.school_jitter),
            ("respondent_sd", self.respondent_sd),
            ("sigma_gamma", self.sigma_gamma),
            ("sigma_beta", self.sigma_beta),
            ("sigma_theta", self.sigma_theta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}

/// Parameters the data were generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub config: GeneratorConfig,
    pub school_ids: Vec<String>,
    pub group_labels: Vec<String>,
    pub group_of_school: Vec<usize>,
    pub item_ids: Vec<String>,
    /// Planted cluster of each item.
    pub item_cluster: Vec<usize>,
    pub z: Vec<DMatrix<f64>>,
    pub w: Vec<DMatrix<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    /// Log distances of the pooled item configuration, per group.
    pub mu: Vec<DMatrix<f64>>,
    /// Pooled item configuration shared by all groups.
    pub w_pooled: DMatrix<f64>,
}

impl GroundTruth {
    pub fn item_distances(&self, m: usize) -> DMatrix<f64> {
        crate::within_school::pairwise_distances(&self.w[m])
    }

    /// Writes the truth as long CSV files into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("truth_items.csv"))?;
        w.write_record(["item_id", "cluster"])?;
        for (id, c) in self.item_ids.iter().zip(&self.item_cluster) {
            w.write_record([id.as_str(), &c.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("truth_beta.csv"))?;
        w.write_record(["school", "item_id", "value"])?;
        for (s, b) in self.school_ids.iter().zip(&self.beta) {
            for (id, v) in self.item_ids.iter().zip(b) {
                w.write_record([s.as_str(), id, &v.to_string()])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("truth_theta.csv"))?;
        w.write_record(["school", "respondent", "value"])?;
        for (s, t) in self.school_ids.iter().zip(&self.theta) {
            for (k, v) in t.iter().enumerate() {
                w.write_record([s.as_str(), &k.to_string(), &v.to_string()])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("truth_gamma.csv"))?;
        w.write_record(["group", "item_id", "value"])?;
        for (g, gam) in self.group_labels.iter().zip(&self.gamma) {
            for (id, v) in self.item_ids.iter().zip(gam) {
                w.write_record([g.as_str(), id, &v.to_string()])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("truth_mu.csv"))?;
        w.write_record(["group", "i", "j", "value"])?;
        for (g, mu) in self.group_labels.iter().zip(&self.mu) {
            for i in 0..mu.nrows() {
                for j in i + 1..mu.ncols() {
                    w.write_record([g.as_str(), &i.to_string(), &j.to_string(), &mu[(i, j)].to_string()])?;
                }
            }
        }
        w.flush()?;
        for (name, mats) in [("truth_w.csv", &self.w), ("truth_z.csv", &self.z)] {
            let mut w = csv::Writer::from_path(dir.join(name))?;
            w.write_record(["school", "row", "coord", "value"])?;
            for (s, mat) in self.school_ids.iter().zip(mats.iter()) {
                for r in 0..mat.nrows() {
                    for c in 0..mat.ncols() {
                        w.write_record([s.as_str(), &r.to_string(), &c.to_string(), &mat[(r, c)].to_string()])?;
                    }
                }
            }
            w.flush()?;
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Draws a dataset and the parameters behind it.
pub fn generate(config: &GeneratorConfig) -> Result<(ResponseDataset, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (m_n, n, p, d) = (config.n_schools, config.n_per_school, config.n_items, config.d);
    let c_n = config.n_clusters;
    let centre = |c: usize| -> Vec<f64> {
        let a = 2.0 * std::f64::consts::PI * c as f64 / c_n as f64;
        let mut v = vec![0.0; d];
        v[0] = config.cluster_radius * a.cos();
        if d > 1 {
            v[1] = config.cluster_radius * a.sin();
        }
        v
    };
    let item_cluster: Vec<usize> = (0..p).map(|i| i % c_n).collect();
    let w_pooled = {
        let mut w = DMatrix::zeros(p, d);
        for i in 0..p {
            let c = centre(item_cluster[i]);
            for a in 0..d {
                w[(i, a)] = c[a] + config.cluster_sd * normal(&mut rng);
            }
        }
        w
    };
    let pooled_dist = crate::within_school::pairwise_distances(&w_pooled);
    let base_gamma: Vec<f64> = (0..p).map(|_| config.sigma_gamma * normal(&mut rng)).collect();
    let n_groups = config.groups.n_groups();
    let group_labels: Vec<String> = (1..=n_groups).map(|g| format!("g{g}")).collect();
    let gamma: Vec<Vec<f64>> = config
        .groups
        .gamma_shift
        .iter()
        .map(|s| base_gamma.iter().map(|g| g + s).collect())
        .collect();
    let mu_one = DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { pooled_dist[(i, j)].ln() });
    let mu = vec![mu_one; n_groups];

    let width = (m_n as f64).log10().floor() as usize + 1;
    let mut school_ids = Vec::with_capacity(m_n);
    let mut group_of_school = Vec::with_capacity(m_n);
    let (mut zs, mut ws, mut betas, mut thetas) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut respondents = Vec::with_capacity(m_n * n);
    for m in 0..m_n {
        let sid = format!("s{:0width$}", m + 1);
        let g = m % n_groups;
        let w = DMatrix::from_fn(p, d, |i, a| w_pooled[(i, a)] + config.school_jitter * normal(&mut rng));
        let beta: Vec<f64> = (0..p)
            .map(|i| match config.beta_override {
                Some(b) => b,
                None => gamma[g][i] + config.sigma_beta * normal(&mut rng),
            })
            .collect();
        let theta: Vec<f64> = (0..n).map(|_| config.sigma_theta * normal(&mut rng)).collect();
        let mut z = DMatrix::zeros(n, d);
        for k in 0..n {
            let c = centre(rng.random_range(0..c_n));
            for a in 0..d {
                z[(k, a)] = c[a] + config.respondent_sd * normal(&mut rng);
            }
        }
        for k in 0..n {
            let codes = (0..p)
                .map(|i| {
                    let dist: f64 = (0..d).map(|a| (z[(k, a)] - w[(i, a)]).powi(2)).sum::<f64>().sqrt();
                    let pr = logistic(theta[k] + beta[i] - dist);
                    (rng.random::<f64>() < pr) as i64
                })
                .collect();
            respondents.push(Respondent {
                id: format!("{sid}_r{:03}", k + 1),
                school_id: sid.clone(),
                group_label: Some(group_labels[g].clone()),
                codes,
            });
        }
        school_ids.push(sid);
        group_of_school.push(g);
        zs.push(z);
        ws.push(w);
        betas.push(beta);
        thetas.push(theta);
    }
    let item_ids: Vec<String> = (1..=p).map(|i| format!("item{i:02}")).collect();
    let dataset = ResponseDataset::new(item_ids.clone(), respondents)?;
    let truth = GroundTruth {
        config: config.clone(),
        school_ids,
        group_labels,
        group_of_school,
        item_ids,
        item_cluster,
        z: zs,
        w: ws,
        beta: betas,
        theta: thetas,
        gamma,
        mu,
        w_pooled,
    };
    Ok((dataset, truth))
}

/// Both network log-likelihoods of one school, evaluated by building every
/// layer from `x` and looping over all pairs.
pub fn brute_force_loglik(x: &BinarySchoolMatrix, state: &WithinSchoolState) -> f64 {
    fn log1pexp(v: f64) -> f64 {
        if v > 30.0 {
            v + (-v).exp()
        } else if v < -30.0 {
            v.exp()
        } else {
            (1.0 + v.exp()).ln()
        }
    }
    fn dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
        let mut s = 0.0;
        for c in 0..a.ncols() {
            s += (a[(i, c)] - b[(j, c)]) * (a[(i, c)] - b[(j, c)]);
        }
        s.sqrt()
    }
    let (n, p) = x.x.shape();
    let mut total = 0.0;
    for i in 0..p {
        for k in 0..n {
            for l in 0..k {
                let y = x.x[(k, i)] == 1 && x.x[(l, i)] == 1;
                let eta = state.beta[i] - dist(&state.z, k, &state.z, l);
                total -= if y { log1pexp(-eta) } else { log1pexp(eta) };
            }
        }
    }
    for k in 0..n {
        for i in 0..p {
            for j in 0..i {
                let u = x.x[(k, i)] == 1 && x.x[(k, j)] == 1;
                let eta = state.theta[k] - dist(&state.w, i, &state.w, j);
                total -= if u { log1pexp(-eta) } else { log1pexp(eta) };
            }
        }
    }
    total
}

/// A scalar coordinate of the model state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Beta { school: usize, item: usize },
    Theta { school: usize, respondent: usize },
    W { school: usize, item: usize, coord: usize },
    Z { school: usize, respondent: usize, coord: usize },
    SigmaZ2 { school: usize },
    SigmaD2 { school: usize },
    Delta { school: usize, i: usize, j: usize },
    Mu { group: usize, i: usize, j: usize },
    SigmaDelta2 { group: usize, i: usize, j: usize },
    Gamma { group: usize, item: usize },
    SigmaBeta2 { group: usize, item: usize },
}

impl Param {
    pub fn get(&self, s: &ChainState) -> f64 {
        match *self {
            Param::Beta { school, item } => s.schools[school].beta[item],
            Param::Theta { school, respondent } => s.schools[school].theta[respondent],
            Param::W { school, item, coord } => s.schools[school].w[(item, coord)],
            Param::Z { school, respondent, coord } => s.schools[school].z[(respondent, coord)],
            Param::SigmaZ2 { school } => s.schools[school].sigma_z2,
            Param::SigmaD2 { school } => s.hier.sigma_d2[school],
            Param::Delta { school, i, j } => s.hier.delta[school][(i, j)],
            Param::Mu { group, i, j } => s.hier.groups[group].mu[(i, j)],
            Param::SigmaDelta2 { group, i, j } => s.hier.groups[group].sigma_delta2[(i, j)],
            Param::Gamma { group, item } => s.hier.groups[group].gamma[item],
            Param::SigmaBeta2 { group, item } => s.hier.groups[group].sigma_beta2[item],
        }
    }

    /// Sets the coordinate, keeping symmetric matrices and distances consistent.
    pub fn set(&self, s: &mut ChainState, v: f64) {
        match *self {
            Param::Beta { school, item } => s.schools[school].beta[item] = v,
            Param::Theta { school, respondent } => s.schools[school].theta[respondent] = v,
            Param::W { school, item, coord } => {
                s.schools[school].w[(item, coord)] = v;
                s.schools[school].refresh_distances();
            }
            Param::Z { school, respondent, coord } => s.schools[school].z[(respondent, coord)] = v,
            Param::SigmaZ2 { school } => s.schools[school].sigma_z2 = v,
            Param::SigmaD2 { school } => s.hier.sigma_d2[school] = v,
            Param::Delta { school, i, j } => {
                s.hier.delta[school][(i, j)] = v;
                s.hier.delta[school][(j, i)] = v;
            }
            Param::Mu { group, i, j } => {
                s.hier.groups[group].mu[(i, j)] = v;
                s.hier.groups[group].mu[(j, i)] = v;
            }
            Param::SigmaDelta2 { group, i, j } => {
                s.hier.groups[group].sigma_delta2[(i, j)] = v;
                s.hier.groups[group].sigma_delta2[(j, i)] = v;
            }
            Param::Gamma { group, item } => s.hier.groups[group].gamma[item] = v,
            Param::SigmaBeta2 { group, item } => s.hier.groups[group].sigma_beta2[item] = v,
        }
    }
}

/// Normalised density on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

impl GridDensity {
    /// Cumulative distribution at the grid points by the trapezoid rule.
    pub fn cdf_points(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.x.len());
        let mut acc = 0.0;
        out.push(0.0);
        for k in 1..self.x.len() {
            acc += 0.5 * (self.density[k] + self.density[k - 1]) * (self.x[k] - self.x[k - 1]);
            out.push(acc);
        }
        out
    }

    /// CDF at `v`, exact for the piecewise-linear density.
    pub fn cdf(&self, cum: &[f64], v: f64) -> f64 {
        let x = &self.x;
        if v <= x[0] {
            return 0.0;
        }
        if v >= x[x.len() - 1] {
            return 1.0;
        }
        let k = x.partition_point(|&g| g <= v) - 1;
        let h = x[k + 1] - x[k];
        let t = v - x[k];
        let slope = (self.density[k + 1] - self.density[k]) / h;
        cum[k] + self.density[k] * t + 0.5 * slope * t * t
    }

    /// Largest gap between the empirical CDF of `draws` and this CDF.
    pub fn ks_statistic(&self, draws: &[f64]) -> f64 {
        let cum = self.cdf_points();
        let mut s = draws.to_vec();
        s.sort_by(|a, b| a.total_cmp(b));
        let n = s.len() as f64;
        let mut worst: f64 = 0.0;
        for (r, &v) in s.iter().enumerate() {
            let f = self.cdf(&cum, v);
            worst = worst.max((f - r as f64 / n).abs()).max(((r + 1) as f64 / n - f).abs());
        }
        worst
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    (1..x.len()).map(|k| 0.5 * (y[k] + y[k - 1]) * (x[k] - x[k - 1])).sum()
}

/// Full conditional of one coordinate on an increasing grid, from the joint
/// log-density with everything else held at `state`. The grid is checked
/// against its midpoint refinement; a relative change of the normalising
/// constant above `1e-4` is a resolution error.
pub fn grid_conditional(
    data: &[SchoolData],
    state: &ChainState,
    hyper: &HyperPriors,
    param: Param,
    grid: &[f64],
) -> Result<GridDensity> {
    if grid.len() < 3 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Resolution("grid must be increasing with at least 3 points".into()));
    }
    let mut s = state.clone();
    let mut eval = |v: f64| -> Result<f64> {
        param.set(&mut s, v);
        log_posterior(data, &s, hyper)
    };
    let mut fine_x = Vec::with_capacity(2 * grid.len() - 1);
    let mut fine_l = Vec::with_capacity(2 * grid.len() - 1);
    for k in 0..grid.len() {
        if k > 0 {
            let mid = 0.5 * (grid[k - 1] + grid[k]);
            fine_x.push(mid);
            fine_l.push(eval(mid)?);
        }
        fine_x.push(grid[k]);
        fine_l.push(eval(grid[k])?);
    }
    let top = fine_l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Domain("conditional is zero or non-finite on the whole grid".into()));
    }
    let fine_y: Vec<f64> = fine_l.iter().map(|l| (l - top).exp()).collect();
    let coarse_y: Vec<f64> = fine_y.iter().step_by(2).copied().collect();
    let z_fine = trapezoid(&fine_x, &fine_y);
    let z_coarse = trapezoid(grid, &coarse_y);
    if ((z_coarse - z_fine) / z_fine).abs() > 1e-4 {
        return Err(Error::Resolution(format!(
            "normalising constant moves by {:.2e} under refinement",
            ((z_coarse - z_fine) / z_fine).abs()
        )));
    }
    Ok(GridDensity {
        x: grid.to_vec(),
        density: coarse_y.iter().map(|y| y / z_coarse).collect(),
    })
}

/// Evenly spaced grid with `n` points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}
