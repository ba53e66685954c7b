use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::block::{AcceptCounts, MhFamily};
use super::state::ChainState;
use crate::error::{Error, Result};

/// Parameter families that can be recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Beta,
    Theta,
    Gamma,
    SigmaBeta2,
    Delta,
    Mu,
    SigmaD2,
    SigmaDelta2,
    SigmaZ2,
    ItemDistance,
    PersonDistance,
    W,
    Z,
    LogPosterior,
}

impl Family {
    pub const ALL: [Family; 14] = [
        Family::Beta,
        Family::Theta,
        Family::Gamma,
        Family::SigmaBeta2,
        Family::Delta,
        Family::Mu,
        Family::SigmaD2,
        Family::SigmaDelta2,
        Family::SigmaZ2,
        Family::ItemDistance,
        Family::PersonDistance,
        Family::W,
        Family::Z,
        Family::LogPosterior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Beta => "beta",
            Family::Theta => "theta",
            Family::Gamma => "gamma",
            Family::SigmaBeta2 => "sigma_beta2",
            Family::Delta => "delta",
            Family::Mu => "mu",
            Family::SigmaD2 => "sigma_d2",
            Family::SigmaDelta2 => "sigma_delta2",
            Family::SigmaZ2 => "sigma_z2",
            Family::ItemDistance => "item_distance",
            Family::PersonDistance => "person_distance",
            Family::W => "w",
            Family::Z => "z",
            Family::LogPosterior => "log_posterior",
        }
    }

    pub fn is_variance(self) -> bool {
        matches!(
            self,
            Family::SigmaBeta2 | Family::SigmaD2 | Family::SigmaDelta2 | Family::SigmaZ2
        )
    }

    /// Group-level families are keyed by group label instead of school id.
    pub fn is_group_level(self) -> bool {
        matches!(self, Family::Gamma | Family::SigmaBeta2 | Family::Mu | Family::SigmaDelta2)
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::MissingFamily(s.to_string()))
    }
}

/// Coordinates of one recorded scalar: a school id or group label, and an
/// index such as `3` (item or respondent), `2-5` (pair) or `4:1` (row and
/// coordinate of a position).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slot {
    pub unit: String,
    pub index: String,
}

/// All draws of one family, stored draw-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyDraws {
    pub family: Family,
    pub slots: Vec<Slot>,
    pub values: Vec<f64>,
}

impl FamilyDraws {
    pub fn new(family: Family, slots: Vec<Slot>) -> Self {
        FamilyDraws {
            family,
            slots,
            values: Vec::new(),
        }
    }

    pub fn n_draws(&self) -> usize {
        if self.slots.is_empty() {
            0
        } else {
            self.values.len() / self.slots.len()
        }
    }

    pub fn draw(&self, t: usize) -> &[f64] {
        let s = self.slots.len();
        &self.values[t * s..(t + 1) * s]
    }

    pub fn series(&self, slot: usize) -> Vec<f64> {
        let s = self.slots.len();
        (0..self.n_draws()).map(|t| self.values[t * s + slot]).collect()
    }

    pub fn find(&self, unit: &str, index: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.unit == unit && s.index == index)
    }

    /// Posterior mean of every slot.
    pub fn means(&self) -> Vec<f64> {
        let s = self.slots.len();
        let n = self.n_draws();
        let mut out = vec![0.0; s];
        for t in 0..n {
            for (o, v) in out.iter_mut().zip(self.draw(t)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        out
    }
}

pub(crate) fn pair_index(i: usize, j: usize) -> String {
    format!("{i}-{j}")
}

/// Parses `i-j` into a pair of indices.
pub fn parse_pair(index: &str) -> Option<(usize, usize)> {
    let (a, b) = index.split_once('-')?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

/// Output of a chain run.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub n_draws: usize,
    pub item_ids: Vec<String>,
    pub school_ids: Vec<String>,
    pub group_labels: Vec<String>,
    pub group_of_school: Vec<usize>,
    pub families: Vec<FamilyDraws>,
    /// Post-burn-in acceptance counts per school.
    pub acceptance: Vec<AcceptCounts>,
    /// Jump scales in effect after burn-in, per school.
    pub scales: Vec<[f64; 4]>,
    /// Posterior means of the school log-distance means.
    pub delta_mean: Vec<DMatrix<f64>>,
    /// Posterior means of the item distances per school.
    pub item_distance_mean: Vec<DMatrix<f64>>,
    /// State after the last iteration; absent when read back from disk.
    pub final_state: Option<ChainState>,
}

impl PosteriorSamples {
    pub fn family(&self, f: Family) -> Result<&FamilyDraws> {
        self.families
            .iter()
            .find(|d| d.family == f)
            .ok_or_else(|| Error::MissingFamily(f.name().to_string()))
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn acceptance_total(&self) -> AcceptCounts {
        let mut t = AcceptCounts::default();
        for a in &self.acceptance {
            t.add(a);
        }
        t
    }

    /// Posterior-mean matrix of a pair family for one unit.
    pub fn pair_mean(&self, f: Family, unit: &str) -> Result<DMatrix<f64>> {
        let fd = self.family(f)?;
        let p = self.n_items();
        let means = fd.means();
        let mut out = DMatrix::zeros(p, p);
        for (slot, v) in fd.slots.iter().zip(means) {
            if slot.unit == unit {
                let (i, j) = parse_pair(&slot.index)
                    .ok_or_else(|| Error::Schema(format!("bad pair index `{}`", slot.index)))?;
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    /// Posterior mean of a per-item family as `unit -> values`.
    pub fn vector_mean(&self, f: Family, unit: &str) -> Result<Vec<f64>> {
        let fd = self.family(f)?;
        let means = fd.means();
        let mut out = Vec::new();
        for (slot, v) in fd.slots.iter().zip(means) {
            if slot.unit == unit {
                out.push(v);
            }
        }
        Ok(out)
    }

    /// Writes one long CSV per family plus metadata into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for fd in &self.families {
            let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", fd.family.name())))?;
            w.write_record(["draw_index", "school", "index", "value"])?;
            for t in 0..fd.n_draws() {
                let ts = t.to_string();
                for (slot, v) in fd.slots.iter().zip(fd.draw(t)) {
                    w.write_record([ts.as_str(), &slot.unit, &slot.index, &v.to_string()])?;
                }
            }
            w.flush()?;
        }
        let mut w = csv::Writer::from_path(dir.join("items.csv"))?;
        w.write_record(["index", "item_id"])?;
        for (i, id) in self.item_ids.iter().enumerate() {
            w.write_record([i.to_string().as_str(), id])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("schools.csv"))?;
        w.write_record(["school", "group_label"])?;
        for (s, &g) in self.school_ids.iter().zip(&self.group_of_school) {
            w.write_record([s.as_str(), &self.group_labels[g]])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("acceptance.csv"))?;
        w.write_record(["school", "family", "proposed", "accepted", "rate", "jump_scale"])?;
        for ((s, a), sc) in self.school_ids.iter().zip(&self.acceptance).zip(&self.scales) {
            for f in MhFamily::ALL {
                let i = f as usize;
                w.write_record([
                    s.as_str(),
                    f.name(),
                    &a.proposed[i].to_string(),
                    &a.accepted[i].to_string(),
                    &a.rate(f).to_string(),
                    &sc[i].to_string(),
                ])?;
            }
        }
        w.flush()?;
        for (name, mats) in [("delta_mean", &self.delta_mean), ("item_distance_mean", &self.item_distance_mean)] {
            let mut w = csv::Writer::from_path(dir.join(format!("{name}.csv")))?;
            w.write_record(["school", "i", "j", "value"])?;
            for (s, mat) in self.school_ids.iter().zip(mats.iter()) {
                for i in 0..mat.nrows() {
                    for j in i + 1..mat.ncols() {
                        w.write_record([s.as_str(), &i.to_string(), &j.to_string(), &mat[(i, j)].to_string()])?;
                    }
                }
            }
            w.flush()?;
        }
        Ok(())
    }

    /// Reads a directory written by [`PosteriorSamples::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut item_ids = Vec::new();
        for rec in csv::Reader::from_path(dir.join("items.csv"))?.records() {
            let rec = rec?;
            item_ids.push(field(&rec, 1)?.to_string());
        }
        let mut school_ids = Vec::new();
        let mut group_labels: Vec<String> = Vec::new();
        let mut group_of_school = Vec::new();
        for rec in csv::Reader::from_path(dir.join("schools.csv"))?.records() {
            let rec = rec?;
            school_ids.push(field(&rec, 0)?.to_string());
            let label = field(&rec, 1)?.to_string();
            let g = match group_labels.iter().position(|l| *l == label) {
                Some(g) => g,
                None => {
                    group_labels.push(label);
                    group_labels.len() - 1
                }
            };
            group_of_school.push(g);
        }
        let m = school_ids.len();
        let mut acceptance = vec![AcceptCounts::default(); m];
        let mut scales = vec![[0.0; 4]; m];
        for rec in csv::Reader::from_path(dir.join("acceptance.csv"))?.records() {
            let rec = rec?;
            let s = school_pos(&school_ids, field(&rec, 0)?)?;
            let f = MhFamily::ALL
                .into_iter()
                .find(|f| f.name() == field(&rec, 1).unwrap_or(""))
                .ok_or_else(|| Error::Schema("unknown update family in acceptance.csv".into()))?
                as usize;
            acceptance[s].proposed[f] = num(field(&rec, 2)?)?;
            acceptance[s].accepted[f] = num(field(&rec, 3)?)?;
            scales[s][f] = num(field(&rec, 5)?)?;
        }
        let p = item_ids.len();
        let read_means = |name: &str| -> Result<Vec<DMatrix<f64>>> {
            let mut out = vec![DMatrix::zeros(p, p); m];
            for rec in csv::Reader::from_path(dir.join(format!("{name}.csv")))?.records() {
                let rec = rec?;
                let s = school_pos(&school_ids, field(&rec, 0)?)?;
                let i: usize = num(field(&rec, 1)?)?;
                let j: usize = num(field(&rec, 2)?)?;
                let v: f64 = num(field(&rec, 3)?)?;
                if i >= p || j >= p {
                    return Err(Error::Schema(format!("{name}.csv: pair ({i}, {j}) out of range")));
                }
                out[s][(i, j)] = v;
                out[s][(j, i)] = v;
            }
            Ok(out)
        };
        let delta_mean = read_means("delta_mean")?;
        let item_distance_mean = read_means("item_distance_mean")?;
        let mut families = Vec::new();
        let mut n_draws = None;
        for f in Family::ALL {
            let path = dir.join(format!("{}.csv", f.name()));
            if !path.exists() {
                continue;
            }
            let fd = read_family(f, &path)?;
            match n_draws {
                None => n_draws = Some(fd.n_draws()),
                Some(n) if n != fd.n_draws() => {
                    return Err(Error::Schema(format!("{} has {} draws, expected {n}", f.name(), fd.n_draws())))
                }
                _ => {}
            }
            families.push(fd);
        }
        Ok(PosteriorSamples {
            n_draws: n_draws.unwrap_or(0),
            item_ids,
            school_ids,
            group_labels,
            group_of_school,
            families,
            acceptance,
            scales,
            delta_mean,
            item_distance_mean,
            final_state: None,
        })
    }
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize) -> Result<&'a str> {
    rec.get(i)
        .ok_or_else(|| Error::Schema(format!("missing column {i}")))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Schema(format!("cannot parse `{s}`")))
}

fn school_pos(ids: &[String], s: &str) -> Result<usize> {
    ids.iter()
        .position(|x| x == s)
        .ok_or_else(|| Error::Schema(format!("unknown school `{s}`")))
}

fn read_family(f: Family, path: &Path) -> Result<FamilyDraws> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut slots = Vec::new();
    let mut values = Vec::new();
    let mut prev: Option<usize> = None;
    for rec in rdr.records() {
        let rec = rec?;
        let t: usize = num(field(&rec, 0)?)?;
        let v: f64 = num(field(&rec, 3)?)?;
        let in_order = match prev {
            None => t == 0,
            Some(q) => t == q || t == q + 1,
        };
        if !in_order {
            return Err(Error::Schema(format!("{}: draws out of order", path.display())));
        }
        if t == 0 {
            slots.push(Slot {
                unit: field(&rec, 1)?.to_string(),
                index: field(&rec, 2)?.to_string(),
            });
        }
        prev = Some(t);
        values.push(v);
    }
    if !slots.is_empty() && values.len() % slots.len() != 0 {
        return Err(Error::Schema(format!("{}: ragged draws", path.display())));
    }
    Ok(FamilyDraws {
        family: f,
        slots,
        values,
    })
}
