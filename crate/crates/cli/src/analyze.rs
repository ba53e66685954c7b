use std::fs;
use std::path::{Path, PathBuf};

use hnirm_core::postprocess::svg::{scatter, Point};
use hnirm_core::postprocess::{
    integrate_item_school_space, kruskal_mds, pooled_mu_mean, school_space_from_delta, school_space_from_mu,
    spectral_cluster, summarize, Aggregate, Embedding, Role, SpectralResult,
};
use hnirm_core::{dichotomize, load_responses, CodeScale, Format, Linking, PosteriorSamples};
use serde_json::{json, Map, Value};

use crate::run::{create_dir, read_manifest, sha256_file, write_atomic, write_json, CliError, CliResult};
use crate::AnalyzeArgs;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Space {
    Delta,
    Mu,
    Both,
}

fn parse_space(s: &str) -> CliResult<Space> {
    match s {
        "delta" => Ok(Space::Delta),
        "mu" => Ok(Space::Mu),
        "both" => Ok(Space::Both),
        _ => Err(CliError::Validation(format!("unknown school space `{s}`, expected delta, mu or both"))),
    }
}

fn write_positions(path: &Path, ids: &[String], extra: &[(&str, Vec<String>)], emb: &Embedding) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = emb.positions.ncols();
    let mut header = vec!["id".to_string()];
    header.extend(extra.iter().map(|(n, _)| n.to_string()));
    header.extend((1..=d).map(|c| format!("dim{c}")));
    w.write_record(&header)?;
    for (r, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(extra.iter().map(|(_, v)| v[r].clone()));
        row.extend((0..d).map(|c| emb.positions[(r, c)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_matrix(path: &Path, ids: &[String], m: &hnirm_core::postprocess::SchoolDistanceMatrix) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["school_a", "school_b", "distance"])?;
    for q in 0..ids.len() {
        for r in q + 1..ids.len() {
            w.write_record([ids[q].as_str(), &ids[r], &m.s[(q, r)].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn points(emb: &Embedding, ids: &[String], cat: &[usize], square: bool) -> Vec<Point> {
    let d = emb.positions.ncols();
    ids.iter()
        .enumerate()
        .map(|(r, id)| Point {
            x: emb.positions[(r, 0)],
            y: if d > 1 { emb.positions[(r, 1)] } else { 0.0 },
            label: id.clone(),
            category: cat[r],
            square,
        })
        .collect()
}

fn cluster_meta(r: &SpectralResult) -> Value {
    json!({ "bandwidth": r.bandwidth, "bandwidth_rule": "median off-diagonal distance", "widenings": r.widenings, "inertia": r.inertia })
}

fn emb_meta(e: &Embedding) -> Value {
    json!({ "stress1": e.stress, "degenerate": e.degenerate, "iterations": e.iterations })
}

fn load_binary(args: &AnalyzeArgs, manifest: &Value) -> CliResult<Vec<hnirm_core::BinarySchoolMatrix>> {
    let data = &manifest["data"];
    let path: PathBuf = match &args.data {
        Some(p) => p.clone(),
        None => data["path"]
            .as_str()
            .map(PathBuf::from)
            .ok_or_else(|| CliError::Validation("manifest does not name the response file; pass --data".into()))?,
    };
    if args.data.is_none() {
        let want = data["sha256"].as_str().unwrap_or_default();
        if sha256_file(&path)? != want {
            return Err(CliError::Validation(format!(
                "{} no longer matches the digest recorded at fit time",
                path.display()
            )));
        }
    }
    let format: Format = data["format"].as_str().unwrap_or("wide").parse()?;
    let ds = load_responses(&path, format)?;
    let scale = match data["scale"].as_str().unwrap_or("binary") {
        "binary" => CodeScale::Binary,
        s => match s.strip_prefix("likert:").map(str::parse::<i64>) {
            Some(Ok(cut)) => CodeScale::Likert { cut },
            _ => return Err(CliError::Validation(format!("unknown scale `{s}` in manifest"))),
        },
    };
    Ok(dichotomize(&ds, scale)?)
}

pub fn run(args: &AnalyzeArgs) -> CliResult<()> {
    let space = parse_space(&args.school_space)?;
    let aggregate: Aggregate = args.aggregate.parse()?;
    let samples = PosteriorSamples::read_dir(&args.samples)?;
    let manifest = read_manifest(&args.samples)?;
    let linking: Linking = manifest["config"]["linking"]
        .as_str()
        .unwrap_or("respondent")
        .parse()?;
    let out = args.out.clone().unwrap_or_else(|| args.samples.join("analysis"));
    create_dir(&out)?;
    let mut meta = Map::new();

    let summary = summarize(&samples)?;
    let mut buf = Vec::new();
    summary.write_csv(&mut buf)?;
    write_atomic(&out.join("summary.csv"), &buf)?;
    if samples.group_labels.len() > 1 {
        let mut buf = Vec::new();
        summary.write_differences_csv(&mut buf)?;
        write_atomic(&out.join("group_differences.csv"), &buf)?;
        let flagged = summary.differences.iter().filter(|d| d.excludes_zero).count();
        meta.insert("group_differences_excluding_zero".into(), json!(flagged));
    }

    let mu = pooled_mu_mean(&samples)?;
    let mut item_diss = mu.map(f64::exp);
    item_diss.fill_diagonal(0.0);
    let items = kruskal_mds(&item_diss, args.d)?;
    let item_clusters = spectral_cluster(&item_diss, args.item_clusters, args.seed)?;
    meta.insert("item_dissimilarity".into(), json!("exp of the group-averaged posterior mean of mu"));
    meta.insert("item_space".into(), emb_meta(&items));
    meta.insert("item_clusters".into(), cluster_meta(&item_clusters));
    let item_ids = &samples.item_ids;
    let cl: Vec<String> = item_clusters.labels.iter().map(|c| (c + 1).to_string()).collect();
    write_positions(&out.join("item_space.csv"), item_ids, &[("cluster", cl)], &items)?;
    let legend: Vec<String> = (1..=args.item_clusters).map(|c| format!("cluster {c}")).collect();
    fs::write(
        out.join("items.svg"),
        scatter("Item latent space", &points(&items, item_ids, &item_clusters.labels, false), &legend),
    )?;

    let school_ids = &samples.school_ids;
    let groups: Vec<String> = samples.group_of_school.iter().map(|&g| samples.group_labels[g].clone()).collect();
    let mut cluster_rows: Vec<[String; 4]> = item_ids
        .iter()
        .zip(&item_clusters.labels)
        .map(|(id, c)| ["item".into(), "mu".into(), id.clone(), (c + 1).to_string()])
        .collect();
    let mut school_embs: Vec<(&str, Embedding)> = Vec::new();

    if matches!(space, Space::Delta | Space::Both) {
        let (s, emb) = school_space_from_delta(&samples.delta_mean, args.d)?;
        write_matrix(&out.join("school_distances_delta.csv"), school_ids, &s)?;
        meta.insert(
            "school_space_delta".into(),
            json!({ "norm": "Frobenius over the full symmetric matrix, both (i,j) and (j,i)", "embedding": emb_meta(&emb) }),
        );
        school_embs.push(("delta", emb));
    }
    if matches!(space, Space::Mu | Space::Both) {
        let x = load_binary(args, &manifest)?;
        let sp = school_space_from_mu(&mu, &x, args.d, aggregate, linking)?;
        write_matrix(&out.join("school_distances_mu.csv"), school_ids, &sp.distances)?;
        meta.insert(
            "school_space_mu".into(),
            json!({ "aggregate": args.aggregate, "item_embedding": emb_meta(&sp.items), "embedding": emb_meta(&sp.schools) }),
        );
        school_embs.push(("mu", sp.schools));
    }
    for (name, emb) in &mut school_embs {
        let mut extra = vec![("group", groups.clone())];
        if args.school_clusters > 0 {
            let res = spectral_cluster(&hnirm_core::within_school::pairwise_distances(&emb.positions), args.school_clusters, args.seed)?;
            meta.insert(format!("school_clusters_{name}"), cluster_meta(&res));
            for (id, c) in school_ids.iter().zip(&res.labels) {
                cluster_rows.push(["school".into(), name.to_string(), id.clone(), (c + 1).to_string()]);
            }
            extra.push(("cluster", res.labels.iter().map(|c| (c + 1).to_string()).collect()));
            emb.labels = Some(res.labels);
        }
        write_positions(&out.join(format!("school_space_{name}.csv")), school_ids, &extra, emb)?;
        let cat: Vec<usize> = samples.group_of_school.clone();
        fs::write(
            out.join(format!("schools_{name}.svg")),
            scatter(&format!("School latent space ({name})"), &points(emb, school_ids, &cat, true), &samples.group_labels),
        )?;
    }

    let mut w = csv::Writer::from_path(out.join("clusters.csv"))?;
    w.write_record(["kind", "space", "id", "cluster"])?;
    for r in &cluster_rows {
        w.write_record(r)?;
    }
    w.flush()?;

    if let Some((name, emb)) = school_embs.last() {
        let joint = integrate_item_school_space(&items.positions, item_ids, &emb.positions, school_ids)?;
        let mut w = csv::Writer::from_path(out.join("integrated_space.csv"))?;
        let mut header = vec!["role".to_string(), "id".to_string()];
        header.extend((1..=args.d).map(|c| format!("dim{c}")));
        w.write_record(&header)?;
        let k = args.item_clusters;
        let mut pts = Vec::new();
        for (r, row) in joint.rows.iter().enumerate() {
            let mut rec = vec![row.role.name().to_string(), row.id.clone()];
            rec.extend(row.coords.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
            let (category, square) = match row.role {
                Role::Item => (item_clusters.labels[r], false),
                Role::School => (k + samples.group_of_school[r - item_ids.len()], true),
            };
            pts.push(Point {
                x: row.coords[0],
                y: row.coords.get(1).copied().unwrap_or(0.0),
                label: row.id.clone(),
                category,
                square,
            });
        }
        w.flush()?;
        let mut legend: Vec<String> = (1..=k).map(|c| format!("item cluster {c}")).collect();
        legend.extend(samples.group_labels.iter().map(|g| format!("schools {g}")));
        fs::write(out.join("integrated.svg"), scatter(&format!("Items and schools ({name})"), &pts, &legend))?;
        let flagged: Vec<Value> = joint
            .flagged_axes()
            .into_iter()
            .map(|(role, axis)| json!({ "role": role.name(), "axis": axis + 1 }))
            .collect();
        meta.insert("integrated".into(), json!({ "school_space": name, "centred_only_axes": flagged }));
    }
    meta.insert("seed".into(), json!(args.seed));
    meta.insert("summary_families".into(), json!(samples.families.iter().map(|f| f.family.name()).collect::<Vec<_>>()));
    write_json(&out.join("analysis.json"), &Value::Object(meta))?;
    println!("wrote analysis to {}", out.display());
    Ok(())
}
