//! Shared fixtures for the benchmarks.

use hnirm_core::sampler::{initial_state, ChainState, SchoolData};
use hnirm_core::{generate, prepare_schools, ChainConfig, CodeScale, GeneratorConfig};

/// Problem size of a benchmark fixture.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub name: &'static str,
    pub schools: usize,
    pub respondents: usize,
    pub items: usize,
}

/// Six schools of 50 respondents answering 20 items.
pub const RECOVERY: Shape = Shape {
    name: "recovery",
    schools: 6,
    respondents: 50,
    items: 20,
};

/// National survey scale: 62 schools of about 60 respondents and 72 items.
pub const SURVEY: Shape = Shape {
    name: "survey",
    schools: 62,
    respondents: 60,
    items: 72,
};

pub fn schools(shape: Shape, seed: u64) -> Vec<SchoolData> {
    let cfg = GeneratorConfig {
        n_schools: shape.schools,
        n_per_school: shape.respondents,
        n_items: shape.items,
        seed,
        ..Default::default()
    };
    let (ds, _) = generate(&cfg).expect("valid generator configuration");
    prepare_schools(&ds, CodeScale::Binary).expect("generated data is binary")
}

pub fn start(data: &[SchoolData], config: &ChainConfig) -> ChainState {
    initial_state(data, config).expect("consistent schools")
}
