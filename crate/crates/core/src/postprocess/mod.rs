//! Summaries and geometry built from completed posterior draws.

mod mds;
mod procrustes;
mod school_space;
mod spectral;
mod summary;
pub mod svg;

pub use mds::{classical_mds, isotonic_regression, kruskal_mds, kruskal_mds_with, Embedding, MdsOptions};
pub use procrustes::{position_draws, procrustes_align, Alignment};
pub use school_space::{
    integrate_item_school_space, pooled_mu_mean, school_space_from_delta, school_space_from_mu, standardize,
    Aggregate, Construction, IntegratedRow, IntegratedSpace, MuSchoolSpace, Role, SchoolDistanceMatrix,
    Standardized,
};
pub use spectral::{adjusted_rand_index, kmeans, spectral_cluster, SpectralResult, KMEANS_RESTARTS};
pub use summary::{summarize, summarize_family, DifferenceRow, Summary, SummaryRow, DIFFERENCE_FAMILIES};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub(crate) fn check_dissimilarity(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("{what} must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for i in 0..m.nrows() {
        if m[(i, i)].abs() > 1e-12 * scale {
            return Err(Error::Domain(format!("{what} has a nonzero diagonal at {i}")));
        }
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!("{what} entry ({i}, {j}) = {v} is not a nonnegative number")));
            }
            if (v - m[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::Domain(format!("{what} is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}
