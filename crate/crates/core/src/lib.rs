//! Hierarchical network item response modelling for multilevel binary
//! response data.
//!
//! Responses are turned into two multiplex networks per school, fitted with
//! latent-space logit models tied together by a Bayesian hierarchy across
//! schools, and summarized as aligned configurations, clusters and school
//! spaces.

pub mod data;
pub mod error;
pub mod hierarchy;
pub mod postprocess;
pub mod sampler;
pub mod synthgen;
pub mod within_school;

pub use data::{
    build_multiplex, dichotomize, load_responses, BinarySchoolMatrix, CodeScale, Format, MultiplexNetworks,
    Respondent, ResponseDataset,
};
pub use error::{Error, Result};
pub use hierarchy::{assign_groups, GroupAssignment, GroupMode, GroupParams, HierarchicalState, HyperPriors};
pub use postprocess::{Embedding, SchoolDistanceMatrix, Summary};
pub use sampler::{
    prepare_schools, run_chain, run_chain_from, ChainConfig, ChainState, Family, GibbsForm, MhFamily,
    PosteriorSamples, SchoolData,
};
pub use synthgen::{generate, GeneratorConfig, GroundTruth, GroupSpec};
pub use within_school::{Linking, WithinSchoolState};
