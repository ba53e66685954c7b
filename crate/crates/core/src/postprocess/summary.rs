use std::io::Write;

use crate::error::{Error, Result};
use crate::sampler::{hpd_interval, Family, FamilyDraws, PosteriorSamples};

pub const HPD_LEVEL: f64 = 0.95;

/// Families that get between-group difference rows.
pub const DIFFERENCE_FAMILIES: [Family; 2] = [Family::Gamma, Family::Mu];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub family: Family,
    pub unit: String,
    pub index: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// `group_a - group_b` for one group-level coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceRow {
    pub family: Family,
    pub group_a: String,
    pub group_b: String,
    pub index: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub excludes_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub differences: Vec<DifferenceRow>,
}

fn summarize_draws(fd: &FamilyDraws) -> Result<Vec<SummaryRow>> {
    let means = fd.means();
    fd.slots
        .iter()
        .enumerate()
        .map(|(s, slot)| {
            let (lower, upper) = hpd_interval(&fd.series(s), HPD_LEVEL)?;
            Ok(SummaryRow {
                family: fd.family,
                unit: slot.unit.clone(),
                index: slot.index.clone(),
                mean: means[s],
                lower,
                upper,
            })
        })
        .collect()
}

pub fn summarize_family(samples: &PosteriorSamples, family: Family) -> Result<Vec<SummaryRow>> {
    summarize_draws(samples.family(family)?)
}

/// Posterior mean and 95% HPD interval of every recorded coordinate, plus
/// pairwise group differences when there is more than one group.
pub fn summarize(samples: &PosteriorSamples) -> Result<Summary> {
    let mut out = Summary::default();
    for fd in &samples.families {
        out.rows.extend(summarize_draws(fd)?);
    }
    let g = samples.group_labels.len();
    for f in DIFFERENCE_FAMILIES {
        let Ok(fd) = samples.family(f) else { continue };
        for a in 0..g {
            for b in a + 1..g {
                let (la, lb) = (&samples.group_labels[a], &samples.group_labels[b]);
                for (s, slot) in fd.slots.iter().enumerate() {
                    if slot.unit != *la {
                        continue;
                    }
                    let t = fd
                        .find(lb, &slot.index)
                        .ok_or_else(|| Error::Schema(format!("{} lacks {lb}/{}", f.name(), slot.index)))?;
                    let diff: Vec<f64> = (0..fd.n_draws()).map(|k| fd.draw(k)[s] - fd.draw(k)[t]).collect();
                    let (lower, upper) = hpd_interval(&diff, HPD_LEVEL)?;
                    out.differences.push(DifferenceRow {
                        family: f,
                        group_a: la.clone(),
                        group_b: lb.clone(),
                        index: slot.index.clone(),
                        mean: diff.iter().sum::<f64>() / diff.len() as f64,
                        lower,
                        upper,
                        excludes_zero: lower > 0.0 || upper < 0.0,
                    });
                }
            }
        }
    }
    Ok(out)
}

impl Summary {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["family", "unit", "index", "mean", "hpd_lower", "hpd_upper"])?;
        for r in &self.rows {
            w.write_record([
                r.family.name(),
                &r.unit,
                &r.index,
                &r.mean.to_string(),
                &r.lower.to_string(),
                &r.upper.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_differences_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["family", "group_a", "group_b", "index", "mean", "hpd_lower", "hpd_upper", "excludes_zero"])?;
        for r in &self.differences {
            w.write_record([
                r.family.name(),
                &r.group_a,
                &r.group_b,
                &r.index,
                &r.mean.to_string(),
                &r.lower.to_string(),
                &r.upper.to_string(),
                &r.excludes_zero.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn find(&self, family: Family, unit: &str, index: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.family == family && r.unit == unit && r.index == index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::Slot;
    use nalgebra::DMatrix;

    fn samples(groups: &[&str], draws: impl Fn(usize, usize) -> f64, n: usize) -> PosteriorSamples {
        let slots: Vec<Slot> = groups
            .iter()
            .flat_map(|g| (0..2).map(move |i| Slot { unit: g.to_string(), index: i.to_string() }))
            .collect();
        let mut fd = FamilyDraws::new(Family::Gamma, slots.clone());
        for t in 0..n {
            for s in 0..slots.len() {
                fd.values.push(draws(t, s));
            }
        }
        PosteriorSamples {
            n_draws: n,
            item_ids: vec!["a".into(), "b".into()],
            school_ids: vec![],
            group_labels: groups.iter().map(|g| g.to_string()).collect(),
            group_of_school: vec![],
            families: vec![fd],
            acceptance: vec![],
            scales: vec![],
            delta_mean: vec![DMatrix::zeros(2, 2)],
            item_distance_mean: vec![DMatrix::zeros(2, 2)],
            final_state: None,
        }
    }

    #[test]
    fn constant_draws() {
        let s = summarize(&samples(&["g"], |_, _| 1.5, 20)).unwrap();
        assert_eq!(s.rows.len(), 2);
        for r in &s.rows {
            assert_eq!((r.mean, r.lower, r.upper), (1.5, 1.5, 1.5));
        }
        assert!(s.differences.is_empty());
    }

    #[test]
    fn identical_groups_straddle_zero() {
        let s = summarize(&samples(&["g1", "g2"], |t, s| ((t * 7 + (s % 2) * 3) % 11) as f64, 200)).unwrap();
        assert_eq!(s.differences.len(), 2);
        for d in &s.differences {
            assert!(!d.excludes_zero);
            assert_eq!(d.mean, 0.0);
        }
    }

    #[test]
    fn separated_groups_flagged() {
        let s = summarize(&samples(&["g1", "g2"], |t, s| if s < 2 { 5.0 + (t % 3) as f64 } else { (t % 3) as f64 }, 50)).unwrap();
        assert!(s.differences.iter().all(|d| d.excludes_zero && d.mean == 5.0));
    }

    #[test]
    fn missing_family_is_key_error() {
        let s = samples(&["g"], |_, _| 0.0, 20);
        assert!(matches!(summarize_family(&s, Family::Beta), Err(Error::MissingFamily(_))));
    }
}
