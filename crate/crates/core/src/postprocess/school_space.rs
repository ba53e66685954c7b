use nalgebra::DMatrix;

use super::mds::{kruskal_mds, Embedding};
use crate::data::BinarySchoolMatrix;
use crate::error::{Error, Result};
use crate::sampler::{Family, PosteriorSamples};
use crate::within_school::{link_respondent_centered, pairwise_distances, Linking};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Construction {
    /// Frobenius distances between school log-distance means, over the full
    /// symmetric matrix.
    DeltaBased,
    /// Distances between school centres in the pooled item space.
    MuBased,
}

impl Construction {
    pub fn name(self) -> &'static str {
        match self {
            Construction::DeltaBased => "delta",
            Construction::MuBased => "mu",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchoolDistanceMatrix {
    pub s: DMatrix<f64>,
    pub construction: Construction,
}

/// `S_qr = ||delta_q - delta_r||_F` summed over both `(i, j)` and `(j, i)`,
/// followed by nonmetric MDS of `S`.
pub fn school_space_from_delta(delta_means: &[DMatrix<f64>], d: usize) -> Result<(SchoolDistanceMatrix, Embedding)> {
    let m = delta_means.len();
    if m == 0 {
        return Err(Error::Dimension("no schools".into()));
    }
    let p = delta_means[0].nrows();
    if delta_means.iter().any(|x| x.shape() != (p, p)) {
        return Err(Error::Dimension("school delta matrices differ in shape".into()));
    }
    let mut s = DMatrix::zeros(m, m);
    for q in 0..m {
        for r in q + 1..m {
            let mut acc = 0.0;
            for i in 0..p {
                for j in 0..p {
                    if i != j {
                        acc += (delta_means[q][(i, j)] - delta_means[r][(i, j)]).powi(2);
                    }
                }
            }
            s[(q, r)] = acc.sqrt();
            s[(r, q)] = acc.sqrt();
        }
    }
    let emb = kruskal_mds(&s, d)?;
    Ok((
        SchoolDistanceMatrix {
            s,
            construction: Construction::DeltaBased,
        },
        emb,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregate {
    #[default]
    Mean,
    Median,
}

impl std::str::FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregate::Mean),
            "median" => Ok(Aggregate::Median),
            _ => Err(Error::Config(format!("unknown aggregate `{s}`, expected mean or median"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuSchoolSpace {
    /// Pooled item positions.
    pub items: Embedding,
    /// School centres in the item space; `stress` is that of the item fit.
    pub schools: Embedding,
    pub distances: SchoolDistanceMatrix,
}

/// Group-averaged posterior mean of the pooled log distances.
pub fn pooled_mu_mean(samples: &PosteriorSamples) -> Result<DMatrix<f64>> {
    let p = samples.n_items();
    let mut out = DMatrix::zeros(p, p);
    for g in &samples.group_labels {
        out += samples.pair_mean(Family::Mu, g)?;
    }
    Ok(out / samples.group_labels.len().max(1) as f64)
}

/// Item positions from MDS of `exp(mu)`, respondents placed at the mean
/// position of the items they endorse, schools at the mean or median of
/// their respondents.
pub fn school_space_from_mu(
    mu: &DMatrix<f64>,
    schools: &[BinarySchoolMatrix],
    d: usize,
    aggregate: Aggregate,
    linking: Linking,
) -> Result<MuSchoolSpace> {
    if linking != Linking::RespondentCentered {
        return Err(Error::Unsupported(
            "school space from pooled item distances needs respondent-centered linking".into(),
        ));
    }
    let p = mu.nrows();
    let diss = DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { mu[(i, j)].exp() });
    let items = kruskal_mds(&diss, d)?;
    let mut pos = DMatrix::zeros(schools.len(), d);
    for (m, x) in schools.iter().enumerate() {
        if x.n_items() != p {
            return Err(Error::Dimension(format!("school {} has {} items, expected {p}", x.school_id, x.n_items())));
        }
        let rows: Vec<Vec<f64>> = (0..x.n_respondents())
            .map(|k| {
                let row: Vec<u8> = x.x.row(k).iter().copied().collect();
                link_respondent_centered(&items.positions, &row)
            })
            .collect();
        for c in 0..d {
            let mut col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            pos[(m, c)] = match aggregate {
                Aggregate::Mean => col.iter().sum::<f64>() / col.len() as f64,
                Aggregate::Median => {
                    col.sort_by(|a, b| a.total_cmp(b));
                    let n = col.len();
                    if n % 2 == 1 {
                        col[n / 2]
                    } else {
                        0.5 * (col[n / 2 - 1] + col[n / 2])
                    }
                }
            };
        }
    }
    let s = pairwise_distances(&pos);
    let schools_emb = Embedding {
        positions: pos,
        stress: items.stress,
        degenerate: items.degenerate,
        iterations: 0,
        stress_trace: Vec::new(),
        labels: None,
    };
    Ok(MuSchoolSpace {
        items,
        schools: schools_emb,
        distances: SchoolDistanceMatrix {
            s,
            construction: Construction::MuBased,
        },
    })
}

/// Per-axis standardization of an embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub values: DMatrix<f64>,
    pub mean: Vec<f64>,
    /// Population standard deviation; axes with zero spread are centred
    /// only and keep a scale of 1.
    pub scale: Vec<f64>,
    pub zero_variance: Vec<bool>,
}

impl Standardized {
    pub fn restore(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.values.nrows(), self.values.ncols(), |r, c| {
            self.values[(r, c)] * self.scale[c] + self.mean[c]
        })
    }
}

pub fn standardize(x: &DMatrix<f64>) -> Standardized {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    let mut scale = vec![1.0; d];
    let mut zero_variance = vec![false; d];
    for c in 0..d {
        let m = x.column(c).sum() / n as f64;
        let var = x.column(c).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        mean[c] = m;
        if var > 0.0 {
            scale[c] = var.sqrt();
        } else {
            zero_variance[c] = true;
        }
    }
    let values = DMatrix::from_fn(n, d, |r, c| (x[(r, c)] - mean[c]) / scale[c]);
    Standardized {
        values,
        mean,
        scale,
        zero_variance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Item,
    School,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Item => "item",
            Role::School => "school",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedRow {
    pub role: Role,
    pub id: String,
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedSpace {
    pub rows: Vec<IntegratedRow>,
    pub items: Standardized,
    pub schools: Standardized,
}

impl IntegratedSpace {
    /// Axes that could only be centred.
    pub fn flagged_axes(&self) -> Vec<(Role, usize)> {
        let mut out = Vec::new();
        for (role, st) in [(Role::Item, &self.items), (Role::School, &self.schools)] {
            for (c, &z) in st.zero_variance.iter().enumerate() {
                if z {
                    out.push((role, c));
                }
            }
        }
        out
    }
}

/// Standardizes both embeddings separately and stacks them for overlay.
pub fn integrate_item_school_space(
    items: &DMatrix<f64>,
    item_ids: &[String],
    schools: &DMatrix<f64>,
    school_ids: &[String],
) -> Result<IntegratedSpace> {
    if items.ncols() != schools.ncols() {
        return Err(Error::Dimension("item and school embeddings differ in dimension".into()));
    }
    if items.nrows() != item_ids.len() || schools.nrows() != school_ids.len() {
        return Err(Error::Dimension("embedding rows and ids differ in length".into()));
    }
    let si = standardize(items);
    let ss = standardize(schools);
    let mut rows = Vec::new();
    for (role, st, ids) in [(Role::Item, &si, item_ids), (Role::School, &ss, school_ids)] {
        for (r, id) in ids.iter().enumerate() {
            rows.push(IntegratedRow {
                role,
                id: id.clone(),
                coords: st.values.row(r).iter().copied().collect(),
            });
        }
    }
    Ok(IntegratedSpace {
        rows,
        items: si,
        schools: ss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_entry_difference() {
        let p = 4;
        let a = DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { 0.5 });
        let mut b = a.clone();
        b[(1, 3)] += 2.0;
        b[(3, 1)] += 2.0;
        let c = a.clone();
        let (s, _) = school_space_from_delta(&[a, b, c], 2).unwrap();
        assert!((s.s[(0, 1)] - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.s[(0, 2)], 0.0);
    }

    #[test]
    fn identical_schools_degenerate() {
        let a = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        let (s, e) = school_space_from_delta(&vec![a; 4], 2).unwrap();
        assert_eq!(s.s, DMatrix::zeros(4, 4));
        assert!(e.degenerate);
    }

    proptest! {
        #[test]
        fn delta_distance_is_a_metric(v in proptest::collection::vec(-3.0f64..3.0, 4 * 9)) {
            let mats: Vec<DMatrix<f64>> = (0..4)
                .map(|m| {
                    let mut x = DMatrix::zeros(3, 3);
                    for i in 0..3 {
                        for j in 0..3 {
                            if i < j {
                                x[(i, j)] = v[m * 9 + i * 3 + j];
                                x[(j, i)] = x[(i, j)];
                            }
                        }
                    }
                    x
                })
                .collect();
            let (s, _) = school_space_from_delta(&mats, 2).unwrap();
            for q in 0..4 {
                prop_assert_eq!(s.s[(q, q)], 0.0);
                for r in 0..4 {
                    prop_assert_eq!(s.s[(q, r)], s.s[(r, q)]);
                    for t in 0..4 {
                        prop_assert!(s.s[(q, t)] <= s.s[(q, r)] + s.s[(r, t)] + 1e-12);
                    }
                }
            }
        }
    }

    fn mu_of(n: usize) -> DMatrix<f64> {
        let pts: Vec<(f64, f64)> = (0..n).map(|i| ((i as f64).cos() * 2.0, (i as f64 * 1.7).sin())).collect();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                ((pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1)).ln()
            }
        })
    }

    fn school(id: &str, rows: &[&[u8]]) -> BinarySchoolMatrix {
        let p = rows[0].len();
        BinarySchoolMatrix::new(id, DMatrix::from_fn(rows.len(), p, |r, c| rows[r][c])).unwrap()
    }

    #[test]
    fn identical_rows_coincide() {
        let rows: &[&[u8]] = &[&[1, 0, 1, 0, 1], &[0, 1, 1, 0, 0]];
        let a = school("a", rows);
        let b = school("b", rows);
        let sp = school_space_from_mu(&mu_of(5), &[a, b], 2, Aggregate::Mean, Linking::RespondentCentered).unwrap();
        assert!(sp.distances.s[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn single_item_schools_sit_on_their_items() {
        let a = school("a", &[&[1, 0, 0, 0], &[1, 0, 0, 0]]);
        let b = school("b", &[&[0, 1, 0, 0], &[0, 1, 0, 0], &[0, 1, 0, 0]]);
        for agg in [Aggregate::Mean, Aggregate::Median] {
            let sp = school_space_from_mu(&mu_of(4), &[a.clone(), b.clone()], 2, agg, Linking::RespondentCentered).unwrap();
            let item_d = pairwise_distances(&sp.items.positions)[(0, 1)];
            assert!((sp.distances.s[(0, 1)] - item_d).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_and_median_agree_on_symmetric_rows() {
        // respondents in mirrored pairs around the school centre
        let a = school("a", &[&[1, 0, 0, 0], &[0, 1, 0, 0], &[1, 1, 0, 0]]);
        let b = school("b", &[&[0, 0, 1, 0], &[0, 0, 0, 1], &[0, 0, 1, 1]]);
        let mu = mu_of(4);
        let m1 = school_space_from_mu(&mu, &[a.clone(), b.clone()], 2, Aggregate::Mean, Linking::RespondentCentered).unwrap();
        let m2 = school_space_from_mu(&mu, &[a, b], 2, Aggregate::Median, Linking::RespondentCentered).unwrap();
        assert!((m1.schools.positions.clone() - m2.schools.positions).amax() < 1e-12);
    }

    #[test]
    fn item_centered_is_unsupported() {
        let a = school("a", &[&[1, 0, 0]]);
        let mu = mu_of(3);
        assert!(matches!(
            school_space_from_mu(&mu, &[a], 2, Aggregate::Mean, Linking::ItemCentered),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn standardized_moments_and_round_trip() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 2.0, -1.0, 4.0, 0.5, -3.0, 2.0]);
        let s = standardize(&x);
        for c in 0..2 {
            let m = s.values.column(c).sum() / 4.0;
            let v = s.values.column(c).iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
        assert!((s.restore() - x).amax() < 1e-12);
        let one = standardize(&DMatrix::from_row_slice(1, 2, &[3.0, -2.0]));
        assert_eq!(one.values, DMatrix::zeros(1, 2));
        assert_eq!(one.zero_variance, vec![true, true]);
    }

    #[test]
    fn integration_tags_rows() {
        let items = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 0.0]);
        let schools = DMatrix::from_row_slice(1, 2, &[5.0, 5.0]);
        let ids: Vec<String> = ["i1", "i2", "i3"].iter().map(|s| s.to_string()).collect();
        let sp = integrate_item_school_space(&items, &ids, &schools, &["s1".to_string()]).unwrap();
        assert_eq!(sp.rows.len(), 4);
        assert_eq!(sp.rows[3].role, Role::School);
        assert_eq!(sp.rows[3].coords, vec![0.0, 0.0]);
        assert_eq!(sp.flagged_axes(), vec![(Role::School, 0), (Role::School, 1)]);
    }
}
