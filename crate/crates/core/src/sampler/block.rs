//! Per-school Metropolis updates (positions and intercepts) and the
//! linking-variance draw, with cached pair sums.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::gibbs::sigma_z2_conditional;
use super::tri::Tri;
use crate::data::{build_multiplex, BinarySchoolMatrix, MultiplexNetworks};
use crate::error::{Error, Result};
use crate::hierarchy::{inv_gamma_logpdf, lognormal_logpdf, normal_logpdf, HierarchicalState, HyperPriors};
use crate::within_school::{softplus, WithinSchoolState, LN_2PI};

/// Metropolis update families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MhFamily {
    W = 0,
    Theta = 1,
    Z = 2,
    Beta = 3,
}

impl MhFamily {
    pub const ALL: [MhFamily; 4] = [MhFamily::W, MhFamily::Theta, MhFamily::Z, MhFamily::Beta];

    pub fn name(self) -> &'static str {
        match self {
            MhFamily::W => "w",
            MhFamily::Theta => "theta",
            MhFamily::Z => "z",
            MhFamily::Beta => "beta",
        }
    }
}

/// Proposal and acceptance counts per family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AcceptCounts {
    pub proposed: [u64; 4],
    pub accepted: [u64; 4],
}

impl AcceptCounts {
    pub fn rate(&self, f: MhFamily) -> f64 {
        let i = f as usize;
        if self.proposed[i] == 0 {
            f64::NAN
        } else {
            self.accepted[i] as f64 / self.proposed[i] as f64
        }
    }

    pub fn add(&mut self, other: &AcceptCounts) {
        for i in 0..4 {
            self.proposed[i] += other.proposed[i];
            self.accepted[i] += other.accepted[i];
        }
    }

    fn record(&mut self, f: MhFamily, accepted: bool) {
        self.proposed[f as usize] += 1;
        self.accepted[f as usize] += accepted as u64;
    }
}

/// Observed data of one school with the pair statistics the updates need.
#[derive(Debug, Clone)]
pub struct SchoolData {
    pub x: BinarySchoolMatrix,
    pub item_ids: Vec<String>,
    pub layers: MultiplexNetworks,
    pub(crate) items: Tri,
    pub(crate) persons: Tri,
    /// Respondents endorsing both items of each pair.
    pub(crate) item_cop: Vec<f64>,
    /// Items endorsed by both respondents of each pair.
    pub(crate) person_cop: Vec<f64>,
    /// Edges in each respondent's item layer.
    pub(crate) resp_edges: Vec<f64>,
    /// Edges in each item's respondent layer.
    pub(crate) item_edges: Vec<f64>,
    /// Items averaged into each respondent's prior mean.
    pub(crate) link_items: Vec<Vec<usize>>,
    pub(crate) link_weight: Vec<f64>,
    /// Respondents whose prior mean involves each item.
    pub(crate) linked_resp: Vec<Vec<usize>>,
}

impl SchoolData {
    pub fn new(x: BinarySchoolMatrix) -> Self {
        let layers = build_multiplex(&x);
        Self::with_layers(x, layers).expect("layers built from the same matrix")
    }

    pub fn with_layers(x: BinarySchoolMatrix, layers: MultiplexNetworks) -> Result<Self> {
        let (n, p) = x.x.shape();
        if layers.n_items() != p || layers.n_respondents() != n {
            return Err(Error::Dimension(format!(
                "school `{}`: layers do not match the {n} x {p} response matrix",
                x.school_id
            )));
        }
        let items = Tri::new(p);
        let persons = Tri::new(n);
        let ic = layers.item_copositive_counts();
        let pc = layers.person_copositive_counts();
        let item_cop = items.pairs().map(|(i, j)| ic[(i, j)] as f64).collect();
        let person_cop = persons.pairs().map(|(k, l)| pc[(k, l)] as f64).collect();
        let resp_edges = layers
            .person_layers
            .iter()
            .map(|u| items.pairs().map(|(i, j)| u[(i, j)] as f64).sum())
            .collect();
        let item_edges = layers
            .item_layers
            .iter()
            .map(|y| persons.pairs().map(|(k, l)| y[(k, l)] as f64).sum())
            .collect();
        let mut link_items = Vec::with_capacity(n);
        let mut linked_resp = vec![Vec::new(); p];
        for k in 0..n {
            let mut s: Vec<usize> = (0..p).filter(|&i| x.x[(k, i)] != 0).collect();
            if s.is_empty() {
                s = (0..p).collect();
            }
            for &i in &s {
                linked_resp[i].push(k);
            }
            link_items.push(s);
        }
        let link_weight = link_items.iter().map(|s| 1.0 / s.len() as f64).collect();
        Ok(SchoolData {
            item_ids: (1..=p).map(|i| format!("item{i}")).collect(),
            x,
            layers,
            items,
            persons,
            item_cop,
            person_cop,
            resp_edges,
            item_edges,
            link_items,
            link_weight,
            linked_resp,
        })
    }

    /// Replaces the default item labels `item1, item2, ...`.
    pub fn with_item_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_items() {
            return Err(Error::Dimension(format!(
                "{} item ids for {} items",
                ids.len(),
                self.n_items()
            )));
        }
        self.item_ids = ids;
        Ok(self)
    }

    pub fn n_respondents(&self) -> usize {
        self.x.x.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.x.x.ncols()
    }
}

/// Between-school quantities a school update conditions on.
#[derive(Debug, Clone, Copy)]
pub struct SchoolPrior<'a> {
    pub delta: &'a DMatrix<f64>,
    pub sigma_d2: f64,
    /// Centre of the log item distances in the position update.
    pub w_mean: &'a DMatrix<f64>,
    /// Variance added to `sigma_d2` in the position update, per item pair.
    pub w_extra_var: Option<&'a DMatrix<f64>>,
    pub gamma: &'a [f64],
    pub sigma_beta2: &'a [f64],
    pub hyper: &'a HyperPriors,
}

impl<'a> SchoolPrior<'a> {
    pub fn of(hier: &'a HierarchicalState, m: usize, hyper: &'a HyperPriors) -> Self {
        let g = hier.group_of(m);
        SchoolPrior {
            delta: &hier.delta[m],
            sigma_d2: hier.sigma_d2[m],
            w_mean: &hier.delta[m],
            w_extra_var: None,
            gamma: &g.gamma,
            sigma_beta2: &g.sigma_beta2,
            hyper,
        }
    }

    /// Prior for a position update with the school log-distance means
    /// integrated out: log distances centred at the pooled means with
    /// variance `sigma_d2 + sigma_delta2`.
    pub fn collapsed(hier: &'a HierarchicalState, m: usize, hyper: &'a HyperPriors) -> Self {
        let g = hier.group_of(m);
        SchoolPrior {
            w_mean: &g.mu,
            w_extra_var: Some(&g.sigma_delta2),
            ..SchoolPrior::of(hier, m, hyper)
        }
    }
}

/// Mutable state of one school with its random stream, jump scales and caches.
#[derive(Debug, Clone)]
pub struct SchoolBlock {
    pub state: WithinSchoolState,
    pub(crate) rng: ChaCha8Rng,
    pub scales: [f64; 4],
    pub counts: AcceptCounts,
    batch: AcceptCounts,
    frame: Option<Vec<f64>>,
    dw: Vec<f64>,
    dz: Vec<f64>,
    /// `sum_k softplus(theta_k - d_ij)` per item pair.
    h: Vec<f64>,
    /// `sum_i softplus(beta_i - D_kl)` per respondent pair.
    g: Vec<f64>,
    /// `softplus(theta_k - d_ij)`, row `k` over item pairs.
    sp_theta: Vec<f64>,
    /// `softplus(beta_i - D_kl)`, row `i` over respondent pairs.
    sp_beta: Vec<f64>,
    /// Terms of the pending position proposal, one row per other unit.
    buf_terms: Vec<f64>,
    /// Sum of linked item positions per respondent, row-major `n x d`.
    link_sum: Vec<f64>,
    prop: Vec<f64>,
    buf_dist: Vec<f64>,
    buf_sum: Vec<f64>,
    buf_new: Vec<f64>,
    buf_old: Vec<f64>,
}

impl SchoolBlock {
    pub fn new(
        data: &SchoolData,
        state: WithinSchoolState,
        rng: ChaCha8Rng,
        scales: [f64; 4],
        frame: Option<Vec<f64>>,
    ) -> Result<Self> {
        let (n, p) = (data.n_respondents(), data.n_items());
        if state.z.nrows() != n || state.w.nrows() != p {
            return Err(Error::Dimension(format!(
                "school `{}`: state shape does not match data",
                data.x.school_id
            )));
        }
        let d = state.dim();
        let mut b = SchoolBlock {
            state,
            rng,
            scales,
            counts: AcceptCounts::default(),
            batch: AcceptCounts::default(),
            frame,
            dw: vec![0.0; data.items.len()],
            dz: vec![0.0; data.persons.len()],
            h: vec![0.0; data.items.len()],
            g: vec![0.0; data.persons.len()],
            sp_theta: vec![0.0; n * data.items.len()],
            sp_beta: vec![0.0; p * data.persons.len()],
            buf_terms: vec![0.0; n * p],
            link_sum: vec![0.0; n * d],
            prop: vec![0.0; d],
            buf_dist: vec![0.0; n.max(p)],
            buf_sum: vec![0.0; n.max(p)],
            buf_new: vec![0.0; data.items.len().max(data.persons.len())],
            buf_old: vec![0.0; data.items.len().max(data.persons.len())],
        };
        b.state.refresh_distances();
        b.rebuild(data);
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.state.dim()
    }

    /// Recomputes every cache from the current positions and intercepts.
    pub fn rebuild(&mut self, data: &SchoolData) {
        let w = &self.state.w;
        let z = &self.state.z;
        for (slot, (i, j)) in self.dw.iter_mut().zip(data.items.pairs()) {
            *slot = row_dist(w, i, j);
        }
        for (slot, (k, l)) in self.dz.iter_mut().zip(data.persons.pairs()) {
            *slot = row_dist(z, k, l);
        }
        let np = self.dw.len();
        for (k, &t) in self.state.theta.iter().enumerate() {
            for (sp, &dv) in self.sp_theta[k * np..(k + 1) * np].iter_mut().zip(&self.dw) {
                *sp = softplus(t - dv);
            }
        }
        let nq = self.dz.len();
        for (i, &b) in self.state.beta.iter().enumerate() {
            for (sp, &dv) in self.sp_beta[i * nq..(i + 1) * nq].iter_mut().zip(&self.dz) {
                *sp = softplus(b - dv);
            }
        }
        self.sum_h();
        self.sum_g();
        self.rebuild_links(data);
    }

    fn sum_h(&mut self) {
        let np = self.h.len();
        self.h.fill(0.0);
        for row in self.sp_theta.chunks_exact(np) {
            for (hv, v) in self.h.iter_mut().zip(row) {
                *hv += v;
            }
        }
    }

    fn sum_g(&mut self) {
        let nq = self.g.len();
        self.g.fill(0.0);
        for row in self.sp_beta.chunks_exact(nq) {
            for (gv, v) in self.g.iter_mut().zip(row) {
                *gv += v;
            }
        }
    }

    fn rebuild_links(&mut self, data: &SchoolData) {
        let d = self.dim();
        for (k, items) in data.link_items.iter().enumerate() {
            for c in 0..d {
                self.link_sum[k * d + c] = items.iter().map(|&i| self.state.w[(i, c)]).sum();
            }
        }
    }

    /// Distance between respondents `k` and `l` as cached.
    pub fn person_distance(&self, data: &SchoolData, k: usize, l: usize) -> f64 {
        self.dz[data.persons.idx(k, l)]
    }

    pub(crate) fn person_distances_packed(&self) -> &[f64] {
        &self.dz
    }

    pub(crate) fn item_distances_packed(&self) -> &[f64] {
        &self.dw
    }

    fn draw_proposal(&mut self, current: &[f64], scale: f64) {
        let d = current.len();
        let mut eps = [0.0f64; 8];
        let mut eps_v;
        let e: &mut [f64] = if d <= 8 {
            &mut eps[..d]
        } else {
            eps_v = vec![0.0; d];
            &mut eps_v
        };
        for v in e.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
        for r in 0..d {
            let step = match &self.frame {
                None => e[r],
                Some(f) => (0..d).map(|c| f[r * d + c] * e[c]).sum(),
            };
            self.prop[r] = current[r] + scale * step;
        }
    }

    fn accept(&mut self, log_ratio: f64) -> bool {
        let u: f64 = self.rng.random();
        u.ln() < log_ratio
    }

    // ---- item positions ------------------------------------------------

    fn w_eval(&mut self, data: &SchoolData, prior: &SchoolPrior, i: usize) -> f64 {
        let p = data.n_items();
        let d = self.dim();
        let w = &self.state.w;
        let mut lr = 0.0;
        for j in 0..p {
            if j == i {
                continue;
            }
            let mut s = 0.0;
            for c in 0..d {
                let t = self.prop[c] - w[(j, c)];
                s += t * t;
            }
            let dn = s.sqrt();
            if dn == 0.0 {
                return f64::NEG_INFINITY;
            }
            self.buf_dist[j] = dn;
            let n = self.state.theta.len();
            let mut hn = 0.0;
            for (slot, &t) in self.buf_terms[j * n..(j + 1) * n].iter_mut().zip(&self.state.theta) {
                *slot = softplus(t - dn);
                hn += *slot;
            }
            self.buf_sum[j] = hn;
            let idx = data.items.idx(i, j);
            let dold = self.dw[idx];
            lr += -data.item_cop[idx] * (dn - dold) - (hn - self.h[idx]);
            let mu = prior.w_mean[(i, j)];
            let var = prior.sigma_d2 + prior.w_extra_var.map_or(0.0, |v| v[(i, j)]);
            lr += lognormal_logpdf(dn, mu, var) - lognormal_logpdf(dold, mu, var);
        }
        let z = &self.state.z;
        let mut old_sq = 0.0;
        let mut new_sq = 0.0;
        for &k in &data.linked_resp[i] {
            let wt = data.link_weight[k];
            for c in 0..d {
                let s_old = self.link_sum[k * d + c];
                let s_new = s_old + self.prop[c] - w[(i, c)];
                let a = z[(k, c)] - s_old * wt;
                let b = z[(k, c)] - s_new * wt;
                old_sq += a * a;
                new_sq += b * b;
            }
        }
        lr - 0.5 * (new_sq - old_sq) / self.state.sigma_z2
    }

    fn w_apply(&mut self, data: &SchoolData, i: usize) {
        let p = data.n_items();
        let d = self.dim();
        for &k in &data.linked_resp[i] {
            for c in 0..d {
                self.link_sum[k * d + c] += self.prop[c] - self.state.w[(i, c)];
            }
        }
        for c in 0..d {
            self.state.w[(i, c)] = self.prop[c];
        }
        for j in 0..p {
            if j == i {
                continue;
            }
            let idx = data.items.idx(i, j);
            self.dw[idx] = self.buf_dist[j];
            self.h[idx] = self.buf_sum[j];
            let (n, np) = (self.state.theta.len(), self.h.len());
            for (k, &v) in self.buf_terms[j * n..(j + 1) * n].iter().enumerate() {
                self.sp_theta[k * np + idx] = v;
            }
            self.state.d_w[(i, j)] = self.buf_dist[j];
            self.state.d_w[(j, i)] = self.buf_dist[j];
        }
    }

    /// Log acceptance ratio for moving item `i` to `proposal`.
    pub fn log_ratio_w(&mut self, data: &SchoolData, prior: &SchoolPrior, i: usize, proposal: &[f64]) -> f64 {
        self.prop.copy_from_slice(proposal);
        self.w_eval(data, prior, i)
    }

    /// One random-walk update of item `i`.
    pub fn w_kernel(&mut self, data: &SchoolData, prior: &SchoolPrior, i: usize) -> bool {
        let cur: Vec<f64> = self.state.w.row(i).iter().copied().collect();
        self.draw_proposal(&cur, self.scales[MhFamily::W as usize]);
        let lr = self.w_eval(data, prior, i);
        let ok = self.accept(lr);
        if ok {
            self.w_apply(data, i);
        }
        self.counts.record(MhFamily::W, ok);
        self.batch.record(MhFamily::W, ok);
        ok
    }

    /// Every item position in a fresh random order.
    pub fn step_w(&mut self, data: &SchoolData, prior: &SchoolPrior) {
        self.rebuild_links(data);
        let mut order: Vec<usize> = (0..data.n_items()).collect();
        order.shuffle(&mut self.rng);
        for i in order {
            self.w_kernel(data, prior, i);
        }
    }

    // ---- respondent intercepts -----------------------------------------

    fn theta_eval(&mut self, data: &SchoolData, prior: &SchoolPrior, k: usize, t_new: f64) -> f64 {
        let t_old = self.state.theta[k];
        let n_pairs = self.dw.len();
        let mut s_new = 0.0;
        for (&dv, a) in self.dw.iter().zip(&mut self.buf_new[..n_pairs]) {
            *a = softplus(t_new - dv);
            s_new += *a;
        }
        let s_old: f64 = self.sp_theta[k * n_pairs..(k + 1) * n_pairs].iter().sum();
        data.resp_edges[k] * (t_new - t_old) - (s_new - s_old)
            + 0.5 * (t_old * t_old - t_new * t_new) / prior.hyper.sigma_theta2
    }

    pub fn log_ratio_theta(&mut self, data: &SchoolData, prior: &SchoolPrior, k: usize, value: f64) -> f64 {
        self.theta_eval(data, prior, k, value)
    }

    fn theta_propose(&mut self, data: &SchoolData, prior: &SchoolPrior, k: usize) -> bool {
        let step: f64 = self.rng.sample(StandardNormal);
        let t_new = self.state.theta[k] + self.scales[MhFamily::Theta as usize] * step;
        let lr = self.theta_eval(data, prior, k, t_new);
        let ok = self.accept(lr);
        if ok {
            self.state.theta[k] = t_new;
            let np = self.h.len();
            self.buf_old[..np].copy_from_slice(&self.sp_theta[k * np..(k + 1) * np]);
            self.sp_theta[k * np..(k + 1) * np].copy_from_slice(&self.buf_new[..np]);
        }
        self.counts.record(MhFamily::Theta, ok);
        self.batch.record(MhFamily::Theta, ok);
        ok
    }

    /// One random-walk update of respondent intercept `k`.
    pub fn theta_kernel(&mut self, data: &SchoolData, prior: &SchoolPrior, k: usize) -> bool {
        let ok = self.theta_propose(data, prior, k);
        if ok {
            let n_pairs = self.h.len();
            for ((hv, a), b) in self.h.iter_mut().zip(&self.buf_new[..n_pairs]).zip(&self.buf_old[..n_pairs]) {
                *hv += a - b;
            }
        }
        ok
    }

    /// Every respondent intercept in a fresh random order.
    pub fn step_theta(&mut self, data: &SchoolData, prior: &SchoolPrior) {
        let mut order: Vec<usize> = (0..data.n_respondents()).collect();
        order.shuffle(&mut self.rng);
        for k in order {
            self.theta_propose(data, prior, k);
        }
        self.sum_h();
    }

    // ---- respondent positions ------------------------------------------

    fn z_eval(&mut self, data: &SchoolData, k: usize) -> f64 {
        let n = data.n_respondents();
        let d = self.dim();
        let z = &self.state.z;
        let mut lr = 0.0;
        for l in 0..n {
            if l == k {
                continue;
            }
            let mut s = 0.0;
            for c in 0..d {
                let t = self.prop[c] - z[(l, c)];
                s += t * t;
            }
            let dn = s.sqrt();
            self.buf_dist[l] = dn;
            let p = self.state.beta.len();
            let mut gn = 0.0;
            for (slot, &b) in self.buf_terms[l * p..(l + 1) * p].iter_mut().zip(&self.state.beta) {
                *slot = softplus(b - dn);
                gn += *slot;
            }
            self.buf_sum[l] = gn;
            let idx = data.persons.idx(k, l);
            lr += -data.person_cop[idx] * (dn - self.dz[idx]) - (gn - self.g[idx]);
        }
        let wt = data.link_weight[k];
        let mut old_sq = 0.0;
        let mut new_sq = 0.0;
        for c in 0..d {
            let mean = self.link_sum[k * d + c] * wt;
            let a = z[(k, c)] - mean;
            let b = self.prop[c] - mean;
            old_sq += a * a;
            new_sq += b * b;
        }
        lr - 0.5 * (new_sq - old_sq) / self.state.sigma_z2
    }

    fn z_apply(&mut self, data: &SchoolData, k: usize) {
        let n = data.n_respondents();
        for c in 0..self.dim() {
            self.state.z[(k, c)] = self.prop[c];
        }
        for l in 0..n {
            if l == k {
                continue;
            }
            let idx = data.persons.idx(k, l);
            self.dz[idx] = self.buf_dist[l];
            self.g[idx] = self.buf_sum[l];
            let (p, nq) = (self.state.beta.len(), self.g.len());
            for (i, &v) in self.buf_terms[l * p..(l + 1) * p].iter().enumerate() {
                self.sp_beta[i * nq + idx] = v;
            }
        }
    }

    pub fn log_ratio_z(&mut self, data: &SchoolData, k: usize, proposal: &[f64]) -> f64 {
        self.prop.copy_from_slice(proposal);
        self.z_eval(data, k)
    }

    /// One random-walk update of respondent position `k`.
    pub fn z_kernel(&mut self, data: &SchoolData, k: usize) -> bool {
        let cur: Vec<f64> = self.state.z.row(k).iter().copied().collect();
        self.draw_proposal(&cur, self.scales[MhFamily::Z as usize]);
        let lr = self.z_eval(data, k);
        let ok = self.accept(lr);
        if ok {
            self.z_apply(data, k);
        }
        self.counts.record(MhFamily::Z, ok);
        self.batch.record(MhFamily::Z, ok);
        ok
    }

    /// Every respondent position in a fresh random order.
    pub fn step_z(&mut self, data: &SchoolData) {
        let mut order: Vec<usize> = (0..data.n_respondents()).collect();
        order.shuffle(&mut self.rng);
        for k in order {
            self.z_kernel(data, k);
        }
    }

    // ---- linking variance ----------------------------------------------

    /// Sum of squared linking residuals over respondents and coordinates.
    pub fn linking_residual_ss(&self, data: &SchoolData) -> f64 {
        let d = self.dim();
        let mut ss = 0.0;
        for k in 0..data.n_respondents() {
            let wt = data.link_weight[k];
            for c in 0..d {
                let r = self.state.z[(k, c)] - self.link_sum[k * d + c] * wt;
                ss += r * r;
            }
        }
        ss
    }

    /// Gibbs draw of the linking variance.
    pub fn gibbs_sigma_z(&mut self, data: &SchoolData, hyper: &HyperPriors) {
        self.rebuild_links(data);
        let law = sigma_z2_conditional(self.linking_residual_ss(data), data.n_respondents(), self.dim(), hyper);
        self.state.sigma_z2 = law.sample(&mut self.rng);
    }

    // ---- item intercepts -----------------------------------------------

    fn beta_eval(&mut self, data: &SchoolData, prior: &SchoolPrior, i: usize, b_new: f64) -> f64 {
        let b_old = self.state.beta[i];
        let n_pairs = self.dz.len();
        let mut s_new = 0.0;
        for (&dv, a) in self.dz.iter().zip(&mut self.buf_new[..n_pairs]) {
            *a = softplus(b_new - dv);
            s_new += *a;
        }
        let s_old: f64 = self.sp_beta[i * n_pairs..(i + 1) * n_pairs].iter().sum();
        let (g, v) = (prior.gamma[i], prior.sigma_beta2[i]);
        data.item_edges[i] * (b_new - b_old) - (s_new - s_old)
            + 0.5 * ((b_old - g) * (b_old - g) - (b_new - g) * (b_new - g)) / v
    }

    pub fn log_ratio_beta(&mut self, data: &SchoolData, prior: &SchoolPrior, i: usize, value: f64) -> f64 {
        self.beta_eval(data, prior, i, value)
    }

    fn beta_propose(&mut self, data: &SchoolData, prior: &SchoolPrior, i: usize) -> bool {
        let step: f64 = self.rng.sample(StandardNormal);
        let b_new = self.state.beta[i] + self.scales[MhFamily::Beta as usize] * step;
        let lr = self.beta_eval(data, prior, i, b_new);
        let ok = self.accept(lr);
        if ok {
            self.state.beta[i] = b_new;
            let nq = self.g.len();
            self.buf_old[..nq].copy_from_slice(&self.sp_beta[i * nq..(i + 1) * nq]);
            self.sp_beta[i * nq..(i + 1) * nq].copy_from_slice(&self.buf_new[..nq]);
        }
        self.counts.record(MhFamily::Beta, ok);
        self.batch.record(MhFamily::Beta, ok);
        ok
    }

    /// One random-walk update of item intercept `i`.
    pub fn beta_kernel(&mut self, data: &SchoolData, prior: &SchoolPrior, i: usize) -> bool {
        let ok = self.beta_propose(data, prior, i);
        if ok {
            let n_pairs = self.g.len();
            for ((gv, a), b) in self.g.iter_mut().zip(&self.buf_new[..n_pairs]).zip(&self.buf_old[..n_pairs]) {
                *gv += a - b;
            }
        }
        ok
    }

    /// Every item intercept in a fresh random order.
    pub fn step_beta(&mut self, data: &SchoolData, prior: &SchoolPrior) {
        let mut order: Vec<usize> = (0..data.n_items()).collect();
        order.shuffle(&mut self.rng);
        for i in order {
            self.beta_propose(data, prior, i);
        }
        self.sum_g();
    }

    /// Within-school log-density (both likelihoods, linking prior, intercept
    /// prior and linking-variance prior) evaluated from the caches.
    pub fn log_density_cached(&self, data: &SchoolData, hyper: &HyperPriors) -> f64 {
        let st = &self.state;
        let d = self.dim();
        let mut lp = 0.0;
        for (k, &t) in st.theta.iter().enumerate() {
            lp += data.resp_edges[k] * t + normal_logpdf(t, 0.0, hyper.sigma_theta2);
        }
        for ((&c, &dv), &hv) in data.item_cop.iter().zip(&self.dw).zip(&self.h) {
            lp -= c * dv + hv;
        }
        for (i, &b) in st.beta.iter().enumerate() {
            lp += data.item_edges[i] * b;
        }
        for ((&c, &dv), &gv) in data.person_cop.iter().zip(&self.dz).zip(&self.g) {
            lp -= c * dv + gv;
        }
        let n = data.n_respondents();
        lp -= 0.5 * (n * d) as f64 * (LN_2PI + st.sigma_z2.ln());
        lp -= 0.5 * self.linking_residual_ss(data) / st.sigma_z2;
        lp + inv_gamma_logpdf(st.sigma_z2, hyper.a, hyper.b)
    }

    // ---- tuning ----------------------------------------------------------

    /// Robbins-Monro step on the log jump scales toward the band midpoint,
    /// using the acceptance rates of the batch just finished.
    pub(crate) fn adapt(&mut self, batch_index: usize, target: f64) {
        let gain = 2.0 / (batch_index as f64).sqrt();
        for f in MhFamily::ALL {
            let i = f as usize;
            if self.batch.proposed[i] > 0 {
                let rate = self.batch.rate(f);
                self.scales[i] *= (gain * (rate - target)).exp();
            }
        }
        self.batch = AcceptCounts::default();
    }

    pub(crate) fn reset_counts(&mut self) {
        self.counts = AcceptCounts::default();
        self.batch = AcceptCounts::default();
    }
}

#[inline]
fn row_dist(p: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..p.ncols() {
        let t = p[(a, c)] - p[(b, c)];
        s += t * t;
    }
    s.sqrt()
}
