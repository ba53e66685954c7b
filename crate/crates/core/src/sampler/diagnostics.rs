use super::block::{AcceptCounts, MhFamily};
use super::samples::{Family, PosteriorSamples};
use crate::error::{Error, Result};

pub const MAX_LAG: usize = 50;

/// Sample autocorrelations at lags `0..=max_lag`. A constant series yields
/// `NaN` beyond lag 0.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|k| {
            if k == 0 {
                return 1.0;
            }
            if c0 == 0.0 {
                return f64::NAN;
            }
            let ck: f64 = (0..n - k).map(|t| (x[t] - mean) * (x[t + k] - mean)).sum();
            ck / c0
        })
        .collect()
}

/// Effective sample size from Geyer's initial positive sequence. Returns
/// `None` for a constant series.
pub fn effective_sample_size(x: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    if c0 == 0.0 {
        return None;
    }
    let rho = |k: usize| -> f64 {
        if k == 0 {
            return 1.0;
        }
        (0..n - k).map(|t| (x[t] - mean) * (x[t + k] - mean)).sum::<f64>() / c0
    };
    let mut sum = 0.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = rho(k) + rho(k + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    Some((n as f64 / tau).min(n as f64))
}

/// Shortest interval containing `ceil(level * N)` of the sorted samples.
pub fn hpd_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("HPD level must lie in (0, 1), got {level}")));
    }
    let n = samples.len();
    if n < 10 {
        return Err(Error::InsufficientSamples { needed: 10, got: n });
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let keep = ((level * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (s[0], s[keep - 1]);
    for lo in 1..=n - keep {
        let hi = s[lo + keep - 1];
        if hi - s[lo] < best.1 - best.0 {
            best = (s[lo], hi);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDiagnostics {
    pub family: Family,
    pub unit: String,
    pub index: String,
    pub mean: f64,
    pub sd: f64,
    pub autocorr: Vec<f64>,
    /// `None` when the series is constant.
    pub ess: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub series: Vec<SeriesDiagnostics>,
    pub acceptance: Vec<(String, AcceptCounts)>,
}

impl DiagnosticsReport {
    pub fn acceptance_rate(&self, f: MhFamily) -> f64 {
        let mut t = AcceptCounts::default();
        for (_, a) in &self.acceptance {
            t.add(a);
        }
        t.rate(f)
    }
}

/// Scalar families monitored by default.
pub const MONITORED: [Family; 6] = [
    Family::LogPosterior,
    Family::SigmaZ2,
    Family::SigmaD2,
    Family::Gamma,
    Family::SigmaBeta2,
    Family::ItemDistance,
];

pub fn diagnose_series(family: Family, unit: &str, index: &str, x: &[f64]) -> SeriesDiagnostics {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let ess = effective_sample_size(x);
    SeriesDiagnostics {
        family,
        unit: unit.to_string(),
        index: index.to_string(),
        mean,
        sd,
        autocorr: autocorrelation(x, MAX_LAG),
        ess,
        degenerate: ess.is_none(),
    }
}

/// Trace summaries of the monitored families that are present, plus
/// acceptance rates per school.
pub fn diagnostics(samples: &PosteriorSamples) -> DiagnosticsReport {
    let mut series = Vec::new();
    for f in MONITORED {
        let Ok(fd) = samples.family(f) else { continue };
        for (s, slot) in fd.slots.iter().enumerate() {
            series.push(diagnose_series(f, &slot.unit, &slot.index, &fd.series(s)));
        }
    }
    let acceptance = samples
        .school_ids
        .iter()
        .cloned()
        .zip(samples.acceptance.iter().copied())
        .collect();
    DiagnosticsReport { series, acceptance }
}
