use std::fs;

use hnirm_core::{generate, GeneratorConfig, GroupSpec};
use serde_json::json;

use crate::run::{create_dir, env_seed, io_err, sha256_file, write_json, CliError, CliResult, MANIFEST};
use crate::SimulateArgs;

pub const RESPONSES: &str = "responses.csv";

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let groups = if args.gamma_shift.is_empty() {
        GroupSpec::identical(args.groups)
    } else {
        if args.gamma_shift.len() != args.groups {
            return Err(CliError::Validation(format!(
                "--gamma-shift has {} values for {} groups",
                args.gamma_shift.len(),
                args.groups
            )));
        }
        GroupSpec {
            gamma_shift: args.gamma_shift.clone(),
        }
    };
    let cfg = GeneratorConfig {
        n_schools: args.schools,
        n_per_school: args.n,
        n_items: args.p,
        d: args.d,
        n_clusters: args.clusters,
        groups,
        beta_override: args.beta,
        seed: env_seed(args.seed)?.unwrap_or(1),
        ..Default::default()
    };
    let (dataset, truth) = generate(&cfg)?;
    create_dir(&args.out)?;
    let path = args.out.join(RESPONSES);
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    dataset.write_wide(file)?;
    truth.write_dir(&args.out)?;
    let manifest = json!({
        "command": "simulate",
        "software": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "seed": cfg.seed,
        "generator": {
            "schools": cfg.n_schools,
            "respondents_per_school": cfg.n_per_school,
            "items": cfg.n_items,
            "d": cfg.d,
            "clusters": cfg.n_clusters,
            "cluster_radius": cfg.cluster_radius,
            "cluster_sd": cfg.cluster_sd,
            "school_jitter": cfg.school_jitter,
            "respondent_sd": cfg.respondent_sd,
            "sigma_gamma": cfg.sigma_gamma,
            "sigma_beta": cfg.sigma_beta,
            "sigma_theta": cfg.sigma_theta,
            "gamma_shift": cfg.groups.gamma_shift,
            "beta_override": cfg.beta_override,
        },
        "data": { "path": RESPONSES, "format": "wide", "scale": "binary", "sha256": sha256_file(&path)? },
    });
    write_json(&args.out.join(MANIFEST), &manifest)?;
    println!("wrote {} respondents in {} schools to {}", dataset.respondents.len(), cfg.n_schools, args.out.display());
    Ok(())
}
