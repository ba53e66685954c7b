//! Metropolis-within-Gibbs estimation of the hierarchical model.
//!
//! One iteration updates, in order: item positions, respondent intercepts,
//! distance variances, log-distance means, respondent positions, linking
//! variances, item intercepts, and the pooled intercepts with their
//! variances. School-local updates run on per-school random streams, so the
//! output does not depend on the number of worker threads.

mod block;
mod config;
mod diagnostics;
mod gibbs;
mod samples;
mod state;
mod tri;

use nalgebra::DMatrix;
use rayon::prelude::*;

pub use block::{AcceptCounts, MhFamily, SchoolBlock, SchoolData, SchoolPrior};
pub use config::{parse_kv, ChainConfig, GibbsForm, InitMode, StoreOptions, WUpdate};
pub use diagnostics::{
    autocorrelation, diagnose_series, diagnostics, effective_sample_size, hpd_interval, DiagnosticsReport,
    SeriesDiagnostics, MAX_LAG, MONITORED,
};
pub use gibbs::{
    delta_conditional, gamma_conditional, gibbs_delta, gibbs_delta_mu, gibbs_mu, gibbs_gamma_sigma_beta, gibbs_variances_distance,
    mu_conditional, sigma_beta2_conditional, sigma_d2_conditional, sigma_delta2_conditional,
    sigma_z2_conditional, InvGamma, Normal,
};
pub use samples::{parse_pair, Family, FamilyDraws, PosteriorSamples, Slot};
pub use state::{initial_state, log_posterior, ChainState};

use crate::data::{dichotomize, CodeScale, ResponseDataset};
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchicalState, HyperPriors};
use samples::pair_index;

/// Burn-in iterations per adaptation batch.
pub const ADAPT_BATCH: usize = 50;

/// Dichotomizes a dataset and prepares every school for the sampler.
pub fn prepare_schools(dataset: &ResponseDataset, scale: CodeScale) -> Result<Vec<SchoolData>> {
    dichotomize(dataset, scale)?
        .into_iter()
        .map(|x| SchoolData::new(x).with_item_ids(dataset.item_ids.clone()))
        .collect()
}

/// Runs the chain from the default starting point.
pub fn run_chain(data: &[SchoolData], config: &ChainConfig) -> Result<PosteriorSamples> {
    config.validate()?;
    let init = initial_state(data, config)?;
    run_chain_from(data, config, init)
}

/// Creates the per-school blocks for `state`, seeded from `config`.
pub fn school_blocks(data: &[SchoolData], config: &ChainConfig, state: &ChainState) -> Result<Vec<SchoolBlock>> {
    let scales = [config.jump_w, config.jump_theta, config.jump_z, config.jump_beta];
    data.iter()
        .zip(&state.schools)
        .enumerate()
        .map(|(m, (s, st))| {
            if st.dim() != config.d {
                return Err(Error::Dimension(format!(
                    "initial state has dimension {}, configuration asks for {}",
                    st.dim(),
                    config.d
                )));
            }
            SchoolBlock::new(
                s,
                st.clone(),
                state::school_stream(config.seed, m),
                scales,
                config.proposal_frame.clone(),
            )
        })
        .collect()
}

fn for_each_block<F>(pool: Option<&rayon::ThreadPool>, blocks: &mut [SchoolBlock], f: F)
where
    F: Fn(usize, &mut SchoolBlock) + Send + Sync,
{
    match pool {
        Some(pool) => pool.install(|| blocks.par_iter_mut().enumerate().for_each(|(m, b)| f(m, b))),
        None => blocks.iter_mut().enumerate().for_each(|(m, b)| f(m, b)),
    }
}

fn check_finite(iteration: usize, blocks: &[SchoolBlock], hier: &HierarchicalState) -> Result<()> {
    for (m, b) in blocks.iter().enumerate() {
        if !b.state.is_finite() {
            return Err(Error::NonFinite {
                iteration,
                what: format!("school {m} positions or intercepts"),
            });
        }
    }
    let bad_var = |v: &f64| !(v.is_finite() && *v > 0.0);
    if hier.sigma_d2.iter().any(bad_var) {
        return Err(Error::NonFinite {
            iteration,
            what: "distance variance".into(),
        });
    }
    for g in &hier.groups {
        if g.gamma.iter().any(|v| !v.is_finite()) || g.sigma_beta2.iter().any(bad_var) {
            return Err(Error::NonFinite {
                iteration,
                what: "pooled intercepts".into(),
            });
        }
        if !g.mu.iter().sum::<f64>().is_finite() || !g.sigma_delta2.iter().sum::<f64>().is_finite() {
            return Err(Error::NonFinite {
                iteration,
                what: "pooled log-distances".into(),
            });
        }
    }
    Ok(())
}

/// Runs the chain from an explicit starting state.
pub fn run_chain_from(data: &[SchoolData], config: &ChainConfig, init: ChainState) -> Result<PosteriorSamples> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("no schools".into()));
    }
    init.hier.validate()?;
    let lp0 = log_posterior(data, &init, &config.hyper)?;
    if !lp0.is_finite() {
        return Err(Error::Initialization(format!("log-posterior is {lp0}")));
    }
    let hyper = config.hyper;
    let mut blocks = school_blocks(data, config, &init)?;
    let mut hier = init.hier;
    let mut global = state::global_stream(config.seed);
    let pool = if config.parallel > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.parallel)
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?,
        )
    } else {
        None
    };
    let mut rec = Recorder::new(data, config, &hier);
    let target_mid = 0.5 * (config.target_accept.0 + config.target_accept.1);

    for t in 0..config.n_iter {
        {
            let hier_ref = &hier;
            let collapsed = config.w_update == WUpdate::Collapsed;
            for_each_block(pool.as_ref(), &mut blocks, |m, b| {
                let prior = if collapsed {
                    SchoolPrior::collapsed(hier_ref, m, &hyper)
                } else {
                    SchoolPrior::of(hier_ref, m, &hyper)
                };
                b.step_w(&data[m], &prior);
                b.step_theta(&data[m], &prior);
            });
        }
        {
            let dists: Vec<&DMatrix<f64>> = blocks.iter().map(|b| &b.state.d_w).collect();
            match config.w_update {
                WUpdate::Collapsed => {
                    gibbs_delta(&mut hier, &dists, &mut global);
                    gibbs_variances_distance(&mut hier, &dists, &hyper, config.gibbs_form, &mut global);
                    gibbs_mu(&mut hier, &hyper, &mut global);
                }
                WUpdate::Conditional => {
                    gibbs_variances_distance(&mut hier, &dists, &hyper, config.gibbs_form, &mut global);
                    gibbs_delta_mu(&mut hier, &dists, &hyper, &mut global);
                }
            }
        }
        {
            let hier_ref = &hier;
            for_each_block(pool.as_ref(), &mut blocks, |m, b| {
                let prior = SchoolPrior::of(hier_ref, m, &hyper);
                b.step_z(&data[m]);
                b.gibbs_sigma_z(&data[m], &hyper);
                b.step_beta(&data[m], &prior);
            });
        }
        {
            let betas: Vec<&[f64]> = blocks.iter().map(|b| b.state.beta.as_slice()).collect();
            gibbs_gamma_sigma_beta(&mut hier, &betas, &hyper, config.gibbs_form, &mut global);
        }
        check_finite(t, &blocks, &hier)?;

        if t < config.burn_in {
            if config.adapt && (t + 1) % ADAPT_BATCH == 0 {
                let batch = (t + 1) / ADAPT_BATCH;
                for b in &mut blocks {
                    b.adapt(batch, target_mid);
                }
            }
            if t + 1 == config.burn_in {
                for b in &mut blocks {
                    b.reset_counts();
                }
            }
        } else if (t + 1 - config.burn_in) % config.thin == 0 {
            rec.record(data, &blocks, &hier, &hyper)?;
        }
        if (t + 1) % 1000 == 0 {
            log::info!("iteration {} of {}", t + 1, config.n_iter);
        }
    }

    let final_state = ChainState {
        schools: blocks.iter().map(|b| b.state.clone()).collect(),
        hier,
    };
    Ok(rec.finish(data, &blocks, final_state))
}

/// Accumulates stored draws and running means.
struct Recorder {
    store: StoreOptions,
    families: Vec<FamilyDraws>,
    delta_sum: Vec<DMatrix<f64>>,
    dist_sum: Vec<DMatrix<f64>>,
    n: usize,
    item_ids: Vec<String>,
    school_ids: Vec<String>,
    group_labels: Vec<String>,
    group_of_school: Vec<usize>,
}

impl Recorder {
    fn new(data: &[SchoolData], config: &ChainConfig, hier: &HierarchicalState) -> Self {
        let p = data[0].n_items();
        let d = config.d;
        let school_ids: Vec<String> = data.iter().map(|s| s.x.school_id.clone()).collect();
        let group_labels = hier.assignment.labels.clone();
        let item_pairs: Vec<String> = (0..p).flat_map(|i| (i + 1..p).map(move |j| pair_index(i, j))).collect();
        let slot = |u: &str, i: String| Slot {
            unit: u.to_string(),
            index: i,
        };
        let per_school = |f: &dyn Fn(usize) -> Vec<String>| -> Vec<Slot> {
            school_ids
                .iter()
                .enumerate()
                .flat_map(|(m, s)| f(m).into_iter().map(move |i| slot(s, i)))
                .collect()
        };
        let per_group = |idx: &[String]| -> Vec<Slot> {
            group_labels
                .iter()
                .flat_map(|g| idx.iter().map(move |i| slot(g, i.clone())))
                .collect()
        };
        let items: Vec<String> = (0..p).map(|i| i.to_string()).collect();
        let mut families = vec![
            FamilyDraws::new(Family::Beta, per_school(&|_| items.clone())),
            FamilyDraws::new(
                Family::Theta,
                per_school(&|m| (0..data[m].n_respondents()).map(|k| k.to_string()).collect()),
            ),
            FamilyDraws::new(Family::Gamma, per_group(&items)),
            FamilyDraws::new(Family::SigmaBeta2, per_group(&items)),
            FamilyDraws::new(Family::Mu, per_group(&item_pairs)),
            FamilyDraws::new(Family::SigmaD2, per_school(&|_| vec!["0".into()])),
            FamilyDraws::new(Family::SigmaDelta2, per_group(&item_pairs)),
            FamilyDraws::new(Family::SigmaZ2, per_school(&|_| vec!["0".into()])),
            FamilyDraws::new(Family::LogPosterior, vec![slot("all", "0".into())]),
        ];
        if config.store.delta {
            families.push(FamilyDraws::new(Family::Delta, per_school(&|_| item_pairs.clone())));
        }
        if config.store.item_distances {
            families.push(FamilyDraws::new(Family::ItemDistance, per_school(&|_| item_pairs.clone())));
        }
        if config.store.person_distances {
            families.push(FamilyDraws::new(
                Family::PersonDistance,
                per_school(&|m| {
                    let n = data[m].n_respondents();
                    (0..n).flat_map(|k| (k + 1..n).map(move |l| pair_index(k, l))).collect()
                }),
            ));
        }
        if config.store.positions {
            families.push(FamilyDraws::new(
                Family::W,
                per_school(&|_| (0..p).flat_map(|i| (0..d).map(move |c| format!("{i}:{c}"))).collect()),
            ));
            families.push(FamilyDraws::new(
                Family::Z,
                per_school(&|m| {
                    (0..data[m].n_respondents())
                        .flat_map(|k| (0..d).map(move |c| format!("{k}:{c}")))
                        .collect()
                }),
            ));
        }
        for f in &mut families {
            f.values.reserve(f.slots.len() * config.n_draws());
        }
        Recorder {
            store: config.store,
            families,
            delta_sum: vec![DMatrix::zeros(p, p); data.len()],
            dist_sum: vec![DMatrix::zeros(p, p); data.len()],
            n: 0,
            item_ids: data[0].item_ids.clone(),
            school_ids,
            group_labels,
            group_of_school: hier.assignment.group_of_school.clone(),
        }
    }

    fn push(&mut self, f: Family, it: impl IntoIterator<Item = f64>) {
        let fd = self
            .families
            .iter_mut()
            .find(|d| d.family == f)
            .expect("family registered at construction");
        fd.values.extend(it);
    }

    fn record(
        &mut self,
        data: &[SchoolData],
        blocks: &[SchoolBlock],
        hier: &HierarchicalState,
        hyper: &HyperPriors,
    ) -> Result<()> {
        let upper = |mat: &DMatrix<f64>| -> Vec<f64> {
            let p = mat.nrows();
            (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).map(|(i, j)| mat[(i, j)]).collect()
        };
        self.push(Family::Beta, blocks.iter().flat_map(|b| b.state.beta.iter().copied()));
        self.push(Family::Theta, blocks.iter().flat_map(|b| b.state.theta.iter().copied()));
        self.push(Family::Gamma, hier.groups.iter().flat_map(|g| g.gamma.iter().copied()));
        self.push(Family::SigmaBeta2, hier.groups.iter().flat_map(|g| g.sigma_beta2.iter().copied()));
        let mu: Vec<f64> = hier.groups.iter().flat_map(|g| upper(&g.mu)).collect();
        self.push(Family::Mu, mu);
        self.push(Family::SigmaD2, hier.sigma_d2.iter().copied());
        let sd: Vec<f64> = hier.groups.iter().flat_map(|g| upper(&g.sigma_delta2)).collect();
        self.push(Family::SigmaDelta2, sd);
        self.push(Family::SigmaZ2, blocks.iter().map(|b| b.state.sigma_z2));
        let mut lp = 0.0;
        for (m, b) in blocks.iter().enumerate() {
            lp += b.log_density_cached(&data[m], hyper);
        }
        let dists: Vec<&DMatrix<f64>> = blocks.iter().map(|b| &b.state.d_w).collect();
        let betas: Vec<&[f64]> = blocks.iter().map(|b| b.state.beta.as_slice()).collect();
        lp += hier.log_density(&dists, &betas, hyper)?;
        self.push(Family::LogPosterior, [lp]);
        if self.store.delta {
            let v: Vec<f64> = hier.delta.iter().flat_map(upper).collect();
            self.push(Family::Delta, v);
        }
        if self.store.item_distances {
            let v: Vec<f64> = blocks.iter().flat_map(|b| b.item_distances_packed().iter().copied()).collect();
            self.push(Family::ItemDistance, v);
        }
        if self.store.person_distances {
            let v: Vec<f64> = blocks.iter().flat_map(|b| b.person_distances_packed().iter().copied()).collect();
            self.push(Family::PersonDistance, v);
        }
        if self.store.positions {
            let w: Vec<f64> = blocks
                .iter()
                .flat_map(|b| {
                    let w = &b.state.w;
                    (0..w.nrows()).flat_map(move |i| (0..w.ncols()).map(move |c| w[(i, c)]))
                })
                .collect();
            self.push(Family::W, w);
            let z: Vec<f64> = blocks
                .iter()
                .flat_map(|b| {
                    let z = &b.state.z;
                    (0..z.nrows()).flat_map(move |k| (0..z.ncols()).map(move |c| z[(k, c)]))
                })
                .collect();
            self.push(Family::Z, z);
        }
        for (m, b) in blocks.iter().enumerate() {
            self.delta_sum[m] += &hier.delta[m];
            self.dist_sum[m] += &b.state.d_w;
        }
        self.n += 1;
        Ok(())
    }

    fn finish(mut self, _data: &[SchoolData], blocks: &[SchoolBlock], final_state: ChainState) -> PosteriorSamples {
        let n = self.n as f64;
        self.families.sort_by_key(|f| f.family);
        PosteriorSamples {
            n_draws: self.n,
            item_ids: self.item_ids,
            school_ids: self.school_ids,
            group_labels: self.group_labels,
            group_of_school: self.group_of_school,
            families: self.families,
            acceptance: blocks.iter().map(|b| b.counts).collect(),
            scales: blocks.iter().map(|b| b.scales).collect(),
            delta_mean: self.delta_sum.into_iter().map(|m| m / n).collect(),
            item_distance_mean: self.dist_sum.into_iter().map(|m| m / n).collect(),
            final_state: Some(final_state),
        }
    }
}
