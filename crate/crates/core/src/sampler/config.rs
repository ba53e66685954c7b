use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::hierarchy::{GroupMode, HyperPriors};
use crate::within_school::{Linking, DEFAULT_DIM};

/// How the closed-form variance updates are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GibbsForm {
    /// Full conditionals of the joint density.
    #[default]
    Exact,
    /// Inverse-gamma scales with additional shrinkage terms and ordered-pair
    /// sums.
    Printed,
}

impl std::str::FromStr for GibbsForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(GibbsForm::Exact),
            "printed" => Ok(GibbsForm::Printed),
            other => Err(Error::Config(format!("unknown gibbs form `{other}`"))),
        }
    }
}

impl std::fmt::Display for GibbsForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GibbsForm::Exact => "exact",
            GibbsForm::Printed => "printed",
        })
    }
}

/// Kernel for the item position updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WUpdate {
    /// School log-distance means integrated out of the position update and
    /// redrawn right after it.
    #[default]
    Collapsed,
    /// Positions conditioned on the school log-distance means.
    Conditional,
}

impl std::str::FromStr for WUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collapsed" => Ok(WUpdate::Collapsed),
            "conditional" => Ok(WUpdate::Conditional),
            other => Err(Error::Config(format!("unknown position update `{other}`"))),
        }
    }
}

impl std::fmt::Display for WUpdate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WUpdate::Collapsed => "collapsed",
            WUpdate::Conditional => "conditional",
        })
    }
}

/// Starting positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// Item positions from classical MDS of pooled co-endorsement log-odds,
    /// respondents at the centroid of their endorsed items, both jittered by
    /// `0.1 N(0, 1)`.
    #[default]
    Data,
    /// Positions `0.1 N(0, 1)`.
    Random,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data" => Ok(InitMode::Data),
            "random" => Ok(InitMode::Random),
            other => Err(Error::Config(format!("unknown init mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for InitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMode::Data => "data",
            InitMode::Random => "random",
        })
    }
}

/// Optional per-draw records. Scalar and vector families are always kept;
/// per-school matrices can be large and are opt-in. Posterior means of the
/// school log-distance means and item distances are always accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreOptions {
    pub delta: bool,
    pub item_distances: bool,
    pub person_distances: bool,
    pub positions: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            delta: false,
            item_distances: false,
            person_distances: false,
            positions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Latent dimension.
    pub d: usize,
    /// Random-walk standard deviations for item positions, respondent
    /// intercepts, respondent positions and item intercepts.
    pub jump_w: f64,
    pub jump_theta: f64,
    pub jump_z: f64,
    pub jump_beta: f64,
    pub hyper: HyperPriors,
    pub seed: u64,
    pub group_mode: GroupMode,
    /// Acceptance band targeted by burn-in adaptation.
    pub target_accept: (f64, f64),
    /// Tune jump scales during burn-in. Scales are frozen afterwards.
    pub adapt: bool,
    pub gibbs_form: GibbsForm,
    pub w_update: WUpdate,
    pub init: InitMode,
    pub linking: Linking,
    /// Worker threads for the per-school updates. Output does not depend on it.
    pub parallel: usize,
    pub store: StoreOptions,
    /// Orthogonal `d x d` matrix applied to position proposal increments.
    /// `None` is the identity. Proposals are isotropic, so this only changes
    /// which realisation a seed produces; it lets a rigidly moved start be
    /// coupled to the original chain.
    pub proposal_frame: Option<Vec<f64>>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iter: 15_000,
            burn_in: 2_500,
            thin: 5,
            d: DEFAULT_DIM,
            jump_w: 0.05,
            jump_theta: 0.05,
            jump_z: 0.2,
            jump_beta: 1.0,
            hyper: HyperPriors::default(),
            seed: 1,
            group_mode: GroupMode::Single,
            target_accept: (0.2, 0.4),
            adapt: false,
            gibbs_form: GibbsForm::Exact,
            w_update: WUpdate::Collapsed,
            init: InitMode::Data,
            linking: Linking::RespondentCentered,
            parallel: 1,
            store: StoreOptions::default(),
            proposal_frame: None,
        }
    }
}

impl ChainConfig {
    pub fn n_draws(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.n_draws() == 0 {
            return Err(Error::Config("iteration plan stores no draws".into()));
        }
        if self.d == 0 {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        for (name, v) in [
            ("jump_w", self.jump_w),
            ("jump_theta", self.jump_theta),
            ("jump_z", self.jump_z),
            ("jump_beta", self.jump_beta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let (lo, hi) = self.target_accept;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!("invalid target acceptance band ({lo}, {hi})")));
        }
        if self.parallel == 0 {
            return Err(Error::Config("parallel must be at least 1".into()));
        }
        if self.linking == Linking::ItemCentered {
            return Err(Error::Unsupported(
                "the sampler implements respondent-centered linking only".into(),
            ));
        }
        if let Some(frame) = &self.proposal_frame {
            if frame.len() != self.d * self.d {
                return Err(Error::Config("proposal_frame must be d x d".into()));
            }
            for r in 0..self.d {
                for c in 0..self.d {
                    let dot: f64 = (0..self.d).map(|k| frame[k * self.d + r] * frame[k * self.d + c]).sum();
                    let want = if r == c { 1.0 } else { 0.0 };
                    if (dot - want).abs() > 1e-9 {
                        return Err(Error::Config("proposal_frame is not orthogonal".into()));
                    }
                }
            }
        }
        self.hyper.validate()
    }

    /// Renders the configuration as `key = value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("n_iter", self.n_iter.to_string());
        put("burn_in", self.burn_in.to_string());
        put("thin", self.thin.to_string());
        put("d", self.d.to_string());
        put("jump_w", self.jump_w.to_string());
        put("jump_theta", self.jump_theta.to_string());
        put("jump_z", self.jump_z.to_string());
        put("jump_beta", self.jump_beta.to_string());
        put("sigma_gamma2", self.hyper.sigma_gamma2.to_string());
        put("sigma_theta2", self.hyper.sigma_theta2.to_string());
        put("sigma_mu2", self.hyper.sigma_mu2.to_string());
        put("a", self.hyper.a.to_string());
        put("b", self.hyper.b.to_string());
        put("seed", self.seed.to_string());
        put("group_mode", self.group_mode.to_string());
        put("target_accept_low", self.target_accept.0.to_string());
        put("target_accept_high", self.target_accept.1.to_string());
        put("adapt", self.adapt.to_string());
        put("gibbs_form", self.gibbs_form.to_string());
        put("w_update", self.w_update.to_string());
        put("init", self.init.to_string());
        put("linking", self.linking.to_string());
        put("parallel", self.parallel.to_string());
        put("store_delta", self.store.delta.to_string());
        put("store_item_distances", self.store.item_distances.to_string());
        put("store_person_distances", self.store.person_distances.to_string());
        put("store_positions", self.store.positions.to_string());
        s
    }

    /// Overrides fields from `key = value` text. Blank lines and `#` comments
    /// are ignored; unknown keys are an error.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_kv(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("cannot parse `{v}` for `{key}`")))
        }
        match key {
            "n_iter" => self.n_iter = num(key, value)?,
            "burn_in" => self.burn_in = num(key, value)?,
            "thin" => self.thin = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "jump_w" => self.jump_w = num(key, value)?,
            "jump_theta" => self.jump_theta = num(key, value)?,
            "jump_z" => self.jump_z = num(key, value)?,
            "jump_beta" => self.jump_beta = num(key, value)?,
            "sigma_gamma2" => self.hyper.sigma_gamma2 = num(key, value)?,
            "sigma_theta2" => self.hyper.sigma_theta2 = num(key, value)?,
            "sigma_mu2" => self.hyper.sigma_mu2 = num(key, value)?,
            "a" => self.hyper.a = num(key, value)?,
            "b" => self.hyper.b = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "group_mode" => self.group_mode = value.parse()?,
            "target_accept_low" => self.target_accept.0 = num(key, value)?,
            "target_accept_high" => self.target_accept.1 = num(key, value)?,
            "adapt" => self.adapt = num(key, value)?,
            "gibbs_form" => self.gibbs_form = value.parse()?,
            "w_update" => self.w_update = value.parse()?,
            "init" => self.init = value.parse()?,
            "linking" => self.linking = value.parse()?,
            "parallel" => self.parallel = num(key, value)?,
            "store_delta" => self.store.delta = num(key, value)?,
            "store_item_distances" => self.store.item_distances = num(key, value)?,
            "store_person_distances" => self.store.person_distances = num(key, value)?,
            "store_positions" => self.store.positions = num(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }
}

/// Parses flat `key = value` text into an ordered map.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
