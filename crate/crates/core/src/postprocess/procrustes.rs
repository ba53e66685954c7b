use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sampler::{Family, PosteriorSamples};

/// Draws after alignment to a reference configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub draws: Vec<DMatrix<f64>>,
    pub mean: DMatrix<f64>,
    /// Draws aligned by translation only because the cross-covariance was
    /// rank deficient.
    pub translation_only: usize,
}

fn centered(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let c: Vec<f64> = (0..x.ncols()).map(|a| x.column(a).sum() / n).collect();
    let mut out = x.clone();
    for a in 0..x.ncols() {
        for r in 0..x.nrows() {
            out[(r, a)] -= c[a];
        }
    }
    (out, c)
}

/// Rotates, reflects and translates every draw onto `reference` in the
/// least-squares sense.
pub fn procrustes_align(draws: &[DMatrix<f64>], reference: &DMatrix<f64>) -> Result<Alignment> {
    let (rc, rmean) = centered(reference);
    let mut out = Vec::with_capacity(draws.len());
    let mut translation_only = 0;
    for (t, x) in draws.iter().enumerate() {
        if x.shape() != reference.shape() {
            return Err(Error::Dimension(format!(
                "draw {t} has shape {:?}, reference {:?}",
                x.shape(),
                reference.shape()
            )));
        }
        let (xc, _) = centered(x);
        let cross = xc.transpose() * &rc;
        let svd = cross.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let mut aligned = if smax <= 0.0 || smin <= 1e-10 * smax {
            translation_only += 1;
            log::warn!("draw {t}: rank-deficient cross-covariance, aligning by translation only");
            xc
        } else {
            let rot = svd.u.expect("requested") * svd.v_t.expect("requested");
            xc * rot
        };
        for a in 0..aligned.ncols() {
            for r in 0..aligned.nrows() {
                aligned[(r, a)] += rmean[a];
            }
        }
        out.push(aligned);
    }
    let mut mean = DMatrix::zeros(reference.nrows(), reference.ncols());
    for a in &out {
        mean += a;
    }
    if !out.is_empty() {
        mean /= out.len() as f64;
    }
    Ok(Alignment {
        draws: out,
        mean,
        translation_only,
    })
}

/// Position draws of one school from a stored `w` or `z` family.
pub fn position_draws(samples: &PosteriorSamples, family: Family, school: &str) -> Result<Vec<DMatrix<f64>>> {
    if !matches!(family, Family::W | Family::Z) {
        return Err(Error::Config(format!("{} is not a position family", family.name())));
    }
    let fd = samples.family(family)?;
    let mut cells = Vec::new();
    for (s, slot) in fd.slots.iter().enumerate() {
        if slot.unit != school {
            continue;
        }
        let (r, c) = slot
            .index
            .split_once(':')
            .and_then(|(r, c)| Some((r.parse::<usize>().ok()?, c.parse::<usize>().ok()?)))
            .ok_or_else(|| Error::Schema(format!("bad position index `{}`", slot.index)))?;
        cells.push((s, r, c));
    }
    if cells.is_empty() {
        return Err(Error::MissingFamily(format!("{} for school {school}", family.name())));
    }
    let rows = cells.iter().map(|c| c.1).max().unwrap_or(0) + 1;
    let cols = cells.iter().map(|c| c.2).max().unwrap_or(0) + 1;
    Ok((0..fd.n_draws())
        .map(|t| {
            let d = fd.draw(t);
            let mut m = DMatrix::zeros(rows, cols);
            for &(s, r, c) in &cells {
                m[(r, c)] = d[s];
            }
            m
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::within_school::pairwise_distances;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rotate(x: &DMatrix<f64>, a: f64, flip: bool, shift: (f64, f64)) -> DMatrix<f64> {
        let s = if flip { -1.0 } else { 1.0 };
        DMatrix::from_fn(x.nrows(), 2, |r, c| {
            let (u, v) = (x[(r, 0)], s * x[(r, 1)]);
            if c == 0 {
                a.cos() * u - a.sin() * v + shift.0
            } else {
                a.sin() * u + a.cos() * v + shift.1
            }
        })
    }

    fn random_config(n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, 2, |_, _| r.sample(StandardNormal))
    }

    #[test]
    fn undoes_exact_rigid_motion() {
        let reference = random_config(12, 1);
        let moved = rotate(&reference, std::f64::consts::FRAC_PI_2, false, (3.0, -1.0));
        let al = procrustes_align(&[moved, reference.clone()], &reference).unwrap();
        for a in &al.draws {
            assert!((a - &reference).amax() < 1e-10);
        }
        let flipped = rotate(&reference, 1.1, true, (0.5, 0.5));
        let al = procrustes_align(&[flipped], &reference).unwrap();
        assert!((&al.draws[0] - &reference).amax() < 1e-10);
    }

    #[test]
    fn preserves_within_draw_distances() {
        let reference = random_config(10, 2);
        let draws: Vec<_> = (0..20).map(|s| random_config(10, 100 + s)).collect();
        let al = procrustes_align(&draws, &reference).unwrap();
        for (a, b) in al.draws.iter().zip(&draws) {
            assert!((pairwise_distances(a) - pairwise_distances(b)).amax() < 1e-10);
        }
    }

    #[test]
    fn noisy_draws_recover_reference_distances() {
        let reference = random_config(15, 3);
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let draws: Vec<_> = (0..200)
            .map(|_| {
                let noisy = reference.map(|v| v + 0.1 * r.sample::<f64, _>(StandardNormal));
                rotate(&noisy, r.random_range(0.0..6.28), r.random(), (r.random(), r.random()))
            })
            .collect();
        let al = procrustes_align(&draws, &reference).unwrap();
        let (a, b) = (pairwise_distances(&al.mean), pairwise_distances(&reference));
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..15)
            .flat_map(|i| (i + 1..15).map(move |j| (i, j)))
            .map(|(i, j)| (a[(i, j)], b[(i, j)]))
            .unzip();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        assert!(sxy / (sxx * syy).sqrt() >= 0.99);
    }

    #[test]
    fn collinear_falls_back_to_translation() {
        let reference = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 2.0, 0.0]);
        let draw = DMatrix::from_row_slice(3, 2, &[5.0, 5.0, 5.0, 5.0, 5.0, 5.0]);
        let al = procrustes_align(&[draw], &reference).unwrap();
        assert_eq!(al.translation_only, 1);
        assert!((al.draws[0].row(0)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let reference = random_config(4, 1);
        assert!(procrustes_align(&[random_config(5, 1)], &reference).is_err());
    }
}
