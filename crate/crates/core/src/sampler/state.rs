use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::block::SchoolData;
use super::config::{ChainConfig, InitMode};
use crate::data::BinarySchoolMatrix;
use crate::error::{Error, Result};
use crate::hierarchy::{
    assign_groups, inv_gamma_logpdf, normal_logpdf, GroupParams, HierarchicalState, HyperPriors,
};
use crate::postprocess::classical_mds;
use crate::within_school::WithinSchoolState;

/// Complete parameter state of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub schools: Vec<WithinSchoolState>,
    pub hier: HierarchicalState,
}

const INIT_STREAM_BASE: u64 = 1 << 32;

/// Random stream of school `m`'s updates.
pub(crate) fn school_stream(seed: u64, m: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(m as u64 + 1);
    r
}

/// Stream of the between-school updates.
pub(crate) fn global_stream(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(0);
    r
}

fn init_stream(seed: u64, m: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(INIT_STREAM_BASE + m as u64);
    r
}

/// Starting point: positions from `config.init`, intercepts 0, variances 1,
/// school log-distance means at the log initial distances and pooled means
/// at their group averages.
pub fn initial_state(data: &[SchoolData], config: &ChainConfig) -> Result<ChainState> {
    if data.is_empty() {
        return Err(Error::Validation("no schools".into()));
    }
    let p = data[0].n_items();
    let d = config.d;
    if data.iter().any(|s| s.n_items() != p) {
        return Err(Error::Dimension("schools disagree on the number of items".into()));
    }
    let base = match config.init {
        InitMode::Data => Some(coendorsement_layout(data, d)),
        InitMode::Random => None,
    };
    let mut schools = Vec::with_capacity(data.len());
    for (m, s) in data.iter().enumerate() {
        let mut rng = init_stream(config.seed, m);
        let n = s.n_respondents();
        let mut z = DMatrix::from_fn(n, d, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
        let mut w = DMatrix::from_fn(p, d, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
        if let Some(base) = &base {
            w += base;
            for k in 0..n {
                let items = &s.link_items[k];
                for c in 0..d {
                    z[(k, c)] += items.iter().map(|&i| w[(i, c)]).sum::<f64>() / items.len() as f64;
                }
            }
        }
        schools.push(WithinSchoolState::new(z, w, vec![0.0; p], vec![0.0; n], 1.0)?);
    }
    let matrices: Vec<BinarySchoolMatrix> = data.iter().map(|s| s.x.clone()).collect();
    let assignment = assign_groups(&matrices, config.group_mode)?;
    let delta: Vec<DMatrix<f64>> = schools
        .iter()
        .map(|s| DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { s.d_w[(i, j)].ln() }))
        .collect();
    let mut groups = Vec::with_capacity(assignment.n_groups());
    for g in 0..assignment.n_groups() {
        let members: Vec<usize> = assignment.schools_in(g).collect();
        let mut gp = GroupParams::new(p);
        gp.mu = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                0.0
            } else {
                members.iter().map(|&m| delta[m][(i, j)]).sum::<f64>() / members.len() as f64
            }
        });
        groups.push(gp);
    }
    let hier = HierarchicalState {
        groups,
        assignment,
        delta,
        sigma_d2: vec![1.0; data.len()],
    };
    Ok(ChainState { schools, hier })
}

/// Classical MDS of `top - logit(c_ij) + 1/2`, where `c_ij` is the smoothed
/// share of all respondents endorsing both items and `top` its largest
/// off-diagonal logit.
fn coendorsement_layout(data: &[SchoolData], d: usize) -> DMatrix<f64> {
    let p = data[0].n_items();
    let total: f64 = data.iter().map(|s| s.n_respondents() as f64).sum();
    let mut logit = DMatrix::<f64>::zeros(p, p);
    for s in data {
        for (idx, (i, j)) in s.items.pairs().enumerate() {
            logit[(i, j)] += s.item_cop[idx];
        }
    }
    let mut top = f64::NEG_INFINITY;
    for i in 0..p {
        for j in i + 1..p {
            let c = (logit[(i, j)] + 0.5) / (total + 1.0);
            logit[(i, j)] = (c / (1.0 - c)).ln();
            top = top.max(logit[(i, j)]);
        }
    }
    let diss = DMatrix::from_fn(p, p, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 0.0,
        std::cmp::Ordering::Less => top - logit[(i, j)] + 0.5,
        std::cmp::Ordering::Greater => top - logit[(j, i)] + 0.5,
    });
    classical_mds(&diss, d)
}

impl ChainState {
    /// Applies `z -> R z + t` and `w -> R w + t` in school `m`. `rotation` is
    /// a row-major orthogonal `d x d` matrix.
    pub fn rigid_motion(&mut self, m: usize, rotation: &[f64], translation: &[f64]) {
        let s = &mut self.schools[m];
        let d = s.dim();
        for pos in [&mut s.z, &mut s.w] {
            for r in 0..pos.nrows() {
                let old: Vec<f64> = pos.row(r).iter().copied().collect();
                for a in 0..d {
                    pos[(r, a)] = (0..d).map(|c| rotation[a * d + c] * old[c]).sum::<f64>() + translation[a];
                }
            }
        }
        s.refresh_distances();
    }
}

/// Log-density of the full model at `state`, up to the data-independent
/// constant.
pub fn log_posterior(data: &[SchoolData], state: &ChainState, hyper: &HyperPriors) -> Result<f64> {
    if data.len() != state.schools.len() || state.hier.n_schools() != data.len() {
        return Err(Error::Dimension("state and data disagree on the number of schools".into()));
    }
    let mut total = 0.0;
    for (s, st) in data.iter().zip(&state.schools) {
        total += st.log_density(&s.layers, &s.x);
        total += st.theta.iter().map(|&t| normal_logpdf(t, 0.0, hyper.sigma_theta2)).sum::<f64>();
        total += inv_gamma_logpdf(st.sigma_z2, hyper.a, hyper.b);
    }
    let dists: Vec<&DMatrix<f64>> = state.schools.iter().map(|s| &s.d_w).collect();
    let betas: Vec<&[f64]> = state.schools.iter().map(|s| s.beta.as_slice()).collect();
    total += state.hier.log_density(&dists, &betas, hyper)?;
    Ok(total)
}
