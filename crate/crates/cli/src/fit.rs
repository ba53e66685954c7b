use std::fs;
use std::time::Instant;

use hnirm_core::{load_responses, prepare_schools, run_chain, ChainConfig, Format, MhFamily};
use serde_json::{json, Map, Value};

use crate::run::{
    create_dir, env_seed, parse_scale, scale_name, sha256_file, write_atomic, write_json, CliError, CliResult,
    MANIFEST,
};
use crate::FitArgs;

pub const CONFIG_SNAPSHOT: &str = "config.txt";

fn build_config(args: &FitArgs) -> CliResult<(ChainConfig, Option<String>)> {
    let mut cfg = ChainConfig::default();
    let mut seed_from_file = false;
    let mut config_digest = None;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let kv = hnirm_core::sampler::parse_kv(&text)?;
        seed_from_file = kv.contains_key("seed");
        cfg.apply_kv(&text)?;
        config_digest = Some(sha256_file(path)?);
    }
    for item in &args.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got `{item}`")))?;
        cfg.set(k.trim(), v.trim())?;
        seed_from_file |= k.trim() == "seed";
    }
    if let Some(g) = &args.groups {
        cfg.set("group_mode", g)?;
    }
    if let Some(d) = args.d {
        cfg.d = d;
    }
    if let Some(p) = args.parallel {
        cfg.parallel = p;
    }
    if let Some(n) = args.n_iter {
        cfg.n_iter = n;
    }
    if let Some(b) = args.burn_in {
        cfg.burn_in = b;
    }
    if let Some(t) = args.thin {
        cfg.thin = t;
    }
    if args.adapt {
        cfg.adapt = true;
    }
    match env_seed(args.seed)? {
        Some(s) if args.seed.is_some() || !seed_from_file => cfg.seed = s,
        _ => {}
    }
    cfg.validate()?;
    Ok((cfg, config_digest))
}

pub fn run(args: &FitArgs) -> CliResult<()> {
    let started = Instant::now();
    let (cfg, config_digest) = build_config(args)?;
    let format: Format = args.format.parse()?;
    let data_digest = sha256_file(&args.data)?;
    let dataset = load_responses(&args.data, format)?;
    let scale = parse_scale(&args.scale, &dataset)?;
    let schools = prepare_schools(&dataset, scale)?;
    create_dir(&args.out)?;
    log::info!(
        "fitting {} schools, {} respondents, {} items",
        schools.len(),
        dataset.respondents.len(),
        dataset.n_items()
    );
    let samples = run_chain(&schools, &cfg)?;
    samples.write_dir(&args.out)?;
    write_atomic(&args.out.join(CONFIG_SNAPSHOT), cfg.to_kv().as_bytes())?;

    let total = samples.acceptance_total();
    let mut rates = Map::new();
    for f in MhFamily::ALL {
        rates.insert(f.name().into(), json!(total.rate(f)));
    }
    let by_school: Vec<Value> = samples
        .school_ids
        .iter()
        .zip(&samples.acceptance)
        .map(|(s, a)| {
            let mut m = Map::new();
            m.insert("school".into(), json!(s));
            for f in MhFamily::ALL {
                m.insert(f.name().into(), json!(a.rate(f)));
            }
            Value::Object(m)
        })
        .collect();
    let mut config = Map::new();
    for (k, v) in hnirm_core::sampler::parse_kv(&cfg.to_kv())? {
        config.insert(k, json!(v));
    }
    let mut outputs = Map::new();
    let mut names: Vec<String> = fs::read_dir(&args.out)
        .map_err(|e| crate::run::io_err(&args.out, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv") || n == CONFIG_SNAPSHOT)
        .collect();
    names.sort();
    for n in names {
        outputs.insert(n.clone(), json!(sha256_file(&args.out.join(&n))?));
    }
    let manifest = json!({
        "command": "fit",
        "software": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "seed": cfg.seed,
        "config": config,
        "config_file": args.config.as_ref().map(|p| json!({ "path": p, "sha256": config_digest })),
        "data": {
            "path": fs::canonicalize(&args.data).unwrap_or_else(|_| args.data.clone()),
            "format": args.format,
            "scale": scale_name(scale),
            "sha256": data_digest,
            "schools": schools.len(),
            "respondents": dataset.respondents.len(),
            "items": dataset.n_items(),
            "dropped_respondents": dataset.dropped_count,
        },
        "draws": samples.n_draws,
        "acceptance": rates,
        "acceptance_by_school": by_school,
        "outputs": outputs,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    write_json(&args.out.join(MANIFEST), &manifest)?;
    println!(
        "wrote {} draws for {} schools to {}",
        samples.n_draws,
        schools.len(),
        args.out.display()
    );
    Ok(())
}
