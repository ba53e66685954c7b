//! Response ingestion, dichotomization and multiplex network construction.
//!
//! Responses are read from CSV in either wide (one row per respondent) or
//! long (one row per respondent/item) layout, partitioned by school and
//! turned into binary matrices. Each binary matrix induces two families of
//! undirected layers: one respondent network per item (`Y_i`) and one item
//! network per respondent (`U_k`).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Input layout of a response file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Wide,
    Long,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wide" => Ok(Format::Wide),
            "long" => Ok(Format::Long),
            other => Err(Error::Config(format!("unknown data format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Respondent {
    pub id: String,
    pub school_id: String,
    pub group_label: Option<String>,
    /// One code per item, aligned with [`ResponseDataset::item_ids`].
    pub codes: Vec<i64>,
}

/// Multilevel response data with a global item order.
///
/// Respondents are sorted by `(school_id, id)` so that school blocks are
/// contiguous and the ordering is stable across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseDataset {
    pub item_ids: Vec<String>,
    pub respondents: Vec<Respondent>,
    /// Respondents removed during ingestion because of missing items.
    pub dropped_count: usize,
}

/// One school's roster inside a [`ResponseDataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SchoolRoster {
    pub school_id: String,
    pub group_label: Option<String>,
    /// Indices into [`ResponseDataset::respondents`].
    pub members: Vec<usize>,
}

impl ResponseDataset {
    /// Builds a dataset from raw respondents, sorting and validating them.
    pub fn new(item_ids: Vec<String>, mut respondents: Vec<Respondent>) -> Result<Self> {
        respondents.sort_by(|a, b| (&a.school_id, &a.id).cmp(&(&b.school_id, &b.id)));
        let ds = ResponseDataset {
            item_ids,
            respondents,
            dropped_count: 0,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_schools(&self) -> usize {
        self.schools().len()
    }

    /// School rosters in school-id order.
    pub fn schools(&self) -> Vec<SchoolRoster> {
        let mut out: Vec<SchoolRoster> = Vec::new();
        for (idx, r) in self.respondents.iter().enumerate() {
            match out.last_mut() {
                Some(last) if last.school_id == r.school_id => last.members.push(idx),
                _ => out.push(SchoolRoster {
                    school_id: r.school_id.clone(),
                    group_label: r.group_label.clone(),
                    members: vec![idx],
                }),
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.item_ids.len();
        if p < 2 {
            return Err(Error::Validation(format!("need at least 2 items, got {p}")));
        }
        let mut seen_items = HashSet::new();
        for id in &self.item_ids {
            if !seen_items.insert(id) {
                return Err(Error::Schema(format!("duplicate item id `{id}`")));
            }
        }
        for r in &self.respondents {
            if r.codes.len() != p {
                return Err(Error::Schema(format!(
                    "respondent `{}` has {} codes for {p} items",
                    r.id,
                    r.codes.len()
                )));
            }
        }
        if self.respondents.is_empty() {
            return Err(Error::Validation("dataset has no respondents".into()));
        }
        for school in self.schools() {
            let mut ids = HashSet::new();
            for &m in &school.members {
                let r = &self.respondents[m];
                if !ids.insert(r.id.as_str()) {
                    return Err(Error::Validation(format!(
                        "duplicated respondent `{}` in school `{}`",
                        r.id, school.school_id
                    )));
                }
                if r.group_label != school.group_label {
                    return Err(Error::Validation(format!(
                        "school `{}` has inconsistent group labels",
                        school.school_id
                    )));
                }
            }
            if school.members.len() < 2 {
                return Err(Error::Validation(format!(
                    "school `{}` has {} respondent(s); at least 2 are required",
                    school.school_id,
                    school.members.len()
                )));
            }
        }
        Ok(())
    }

    /// Writes the dataset in wide layout. A `group_label` column is emitted
    /// when any respondent carries a label.
    pub fn write_wide<W: Write>(&self, out: W) -> Result<()> {
        let with_group = self.respondents.iter().any(|r| r.group_label.is_some());
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["respondent_id".to_string(), "school_id".to_string()];
        if with_group {
            header.push("group_label".into());
        }
        header.extend(self.item_ids.iter().cloned());
        wtr.write_record(&header)?;
        for r in &self.respondents {
            let mut row = vec![r.id.clone(), r.school_id.clone()];
            if with_group {
                row.push(r.group_label.clone().unwrap_or_default());
            }
            row.extend(r.codes.iter().map(|c| c.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t == "."
}

fn parse_code(cell: &str, path: &Path, line: usize) -> Result<i64> {
    cell.trim().parse::<i64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("response code `{cell}` is not an integer"),
    })
}

fn opt_label(cell: &str) -> Option<String> {
    let t = cell.trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Reads a response file. Respondents with any missing item are dropped and
/// counted in [`ResponseDataset::dropped_count`].
pub fn load_responses(path: &Path, format: Format) -> Result<ResponseDataset> {
    let file = std::fs::File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let (respondents, item_ids, dropped) = match format {
        Format::Wide => read_wide(&mut rdr, &header, path)?,
        Format::Long => read_long(&mut rdr, &header, path)?,
    };
    let mut ds = ResponseDataset::new(item_ids, respondents)?;
    ds.dropped_count = dropped;
    if dropped > 0 {
        log::warn!("dropped {dropped} respondent(s) with missing responses");
    }
    Ok(ds)
}

type Parsed = (Vec<Respondent>, Vec<String>, usize);

fn column(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

fn read_wide<R: std::io::Read>(
    rdr: &mut csv::Reader<R>,
    header: &[String],
    path: &Path,
) -> Result<Parsed> {
    let (rid, sid) = match (column(header, "respondent_id"), column(header, "school_id")) {
        (Some(0), Some(1)) => (0, 1),
        _ => {
            return Err(Error::Schema(
                "wide format must start with respondent_id,school_id".into(),
            ))
        }
    };
    let gid = column(header, "group_label");
    if gid.is_some_and(|g| g != 2) {
        return Err(Error::Schema("group_label must be the third column".into()));
    }
    let first_item = if gid.is_some() { 3 } else { 2 };
    let item_ids: Vec<String> = header[first_item..].to_vec();
    let mut seen = HashSet::new();
    for id in &item_ids {
        if id.is_empty() || !seen.insert(id) {
            return Err(Error::Schema(format!("item column `{id}` is empty or repeated")));
        }
    }

    let mut out = Vec::new();
    let mut dropped = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let mut codes = Vec::with_capacity(item_ids.len());
        let mut missing = false;
        for cell in rec.iter().skip(first_item) {
            if is_missing(cell) {
                missing = true;
            } else {
                codes.push(parse_code(cell, path, line)?);
            }
        }
        if missing {
            dropped += 1;
            continue;
        }
        out.push(Respondent {
            id: rec[rid].to_string(),
            school_id: rec[sid].to_string(),
            group_label: gid.and_then(|g| opt_label(&rec[g])),
            codes,
        });
    }
    Ok((out, item_ids, dropped))
}

fn read_long<R: std::io::Read>(
    rdr: &mut csv::Reader<R>,
    header: &[String],
    path: &Path,
) -> Result<Parsed> {
    let need = |name: &str| {
        column(header, name).ok_or_else(|| Error::Schema(format!("long format lacks `{name}`")))
    };
    let (rid, sid, iid, cid) = (
        need("respondent_id")?,
        need("school_id")?,
        need("item_id")?,
        need("code")?,
    );
    let gid = column(header, "group_label");

    struct Partial {
        school: String,
        group: Option<String>,
        codes: HashMap<String, Option<i64>>,
    }
    let mut item_ids: Vec<String> = Vec::new();
    let mut item_seen = HashSet::new();
    let mut by_resp: BTreeMap<(String, String), Partial> = BTreeMap::new();
    let mut school_of: HashMap<String, String> = HashMap::new();

    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let (resp, school, item) = (&rec[rid], &rec[sid], &rec[iid]);
        if item.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "empty item_id".into(),
            });
        }
        if let Some(prev) = school_of.insert(resp.to_string(), school.to_string()) {
            if prev != school {
                return Err(Error::Validation(format!(
                    "respondent `{resp}` appears in schools `{prev}` and `{school}`"
                )));
            }
        }
        if item_seen.insert(item.to_string()) {
            item_ids.push(item.to_string());
        }
        let code = if is_missing(&rec[cid]) {
            None
        } else {
            Some(parse_code(&rec[cid], path, line)?)
        };
        let entry = by_resp
            .entry((school.to_string(), resp.to_string()))
            .or_insert_with(|| Partial {
                school: school.to_string(),
                group: gid.and_then(|g| opt_label(&rec[g])),
                codes: HashMap::new(),
            });
        if entry.codes.insert(item.to_string(), code).is_some() {
            return Err(Error::Schema(format!(
                "respondent `{resp}` answers item `{item}` more than once (line {line})"
            )));
        }
    }

    let mut out = Vec::new();
    let mut dropped = 0;
    for ((_, resp), partial) in by_resp {
        let codes: Option<Vec<i64>> = item_ids
            .iter()
            .map(|it| partial.codes.get(it).copied().flatten())
            .collect();
        match codes {
            Some(codes) => out.push(Respondent {
                id: resp,
                school_id: partial.school,
                group_label: partial.group,
                codes,
            }),
            None => dropped += 1,
        }
    }
    Ok((out, item_ids, dropped))
}

/// How raw codes map onto {0, 1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeScale {
    /// Five-point agreement scale: `x = 1` iff `code >= cut`.
    Likert { cut: i64 },
    /// Codes are already 0/1 and pass through unchanged.
    Binary,
}

impl Default for CodeScale {
    fn default() -> Self {
        CodeScale::Likert { cut: 4 }
    }
}

/// Binary responses of one school: rows are respondents, columns items.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySchoolMatrix {
    pub school_id: String,
    pub group_label: Option<String>,
    pub respondent_ids: Vec<String>,
    pub x: DMatrix<u8>,
}

impl BinarySchoolMatrix {
    pub fn new(school_id: impl Into<String>, x: DMatrix<u8>) -> Result<Self> {
        if x.iter().any(|&v| v > 1) {
            return Err(Error::Domain("binary matrix has entries outside {0,1}".into()));
        }
        let respondent_ids = (0..x.nrows()).map(|k| format!("r{}", k + 1)).collect();
        Ok(BinarySchoolMatrix {
            school_id: school_id.into(),
            group_label: None,
            respondent_ids,
            x,
        })
    }

    pub fn n_respondents(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.x.ncols()
    }

    /// Number of positive answers given by respondent `k`.
    pub fn row_sum(&self, k: usize) -> usize {
        self.x.row(k).iter().map(|&v| v as usize).sum()
    }

    /// Number of respondents answering item `i` positively.
    pub fn col_sum(&self, i: usize) -> usize {
        self.x.column(i).iter().map(|&v| v as usize).sum()
    }
}

/// Converts codes to binary, one matrix per school in school-id order.
pub fn dichotomize(dataset: &ResponseDataset, scale: CodeScale) -> Result<Vec<BinarySchoolMatrix>> {
    if let CodeScale::Likert { cut } = scale {
        if !(2..=5).contains(&cut) {
            return Err(Error::Domain(format!("Likert cut must lie in 2..=5, got {cut}")));
        }
    }
    let p = dataset.n_items();
    let mut out = Vec::new();
    for school in dataset.schools() {
        let n = school.members.len();
        let mut x = DMatrix::<u8>::zeros(n, p);
        let mut ids = Vec::with_capacity(n);
        for (row, &idx) in school.members.iter().enumerate() {
            let r = &dataset.respondents[idx];
            ids.push(r.id.clone());
            for (col, &code) in r.codes.iter().enumerate() {
                x[(row, col)] = match scale {
                    CodeScale::Likert { cut } => {
                        if !(1..=5).contains(&code) {
                            return Err(Error::Domain(format!(
                                "code {code} of respondent `{}` is outside 1..=5",
                                r.id
                            )));
                        }
                        u8::from(code >= cut)
                    }
                    CodeScale::Binary => match code {
                        0 | 1 => code as u8,
                        _ => {
                            return Err(Error::Domain(format!(
                                "code {code} of respondent `{}` is not binary",
                                r.id
                            )))
                        }
                    },
                };
            }
        }
        out.push(BinarySchoolMatrix {
            school_id: school.school_id,
            group_label: school.group_label,
            respondent_ids: ids,
            x,
        });
    }
    Ok(out)
}

/// Respondent layers (one per item) and item layers (one per respondent).
///
/// `item_layers[i][(k, l)] = x[k,i] * x[l,i]` and
/// `person_layers[k][(i, j)] = x[k,i] * x[k,j]`, with zero diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplexNetworks {
    pub item_layers: Vec<DMatrix<u8>>,
    pub person_layers: Vec<DMatrix<u8>>,
}

impl MultiplexNetworks {
    pub fn n_respondents(&self) -> usize {
        self.person_layers.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_layers.len()
    }

    /// `C[i,j] = sum_k U_k[i,j]`: how many respondents endorse both items.
    pub fn item_copositive_counts(&self) -> DMatrix<u32> {
        let p = self.n_items();
        let mut c = DMatrix::<u32>::zeros(p, p);
        for layer in &self.person_layers {
            for (acc, &v) in c.iter_mut().zip(layer.iter()) {
                *acc += v as u32;
            }
        }
        c
    }

    /// `C[k,l] = sum_i Y_i[k,l]`: how many items both respondents endorse.
    pub fn person_copositive_counts(&self) -> DMatrix<u32> {
        let n = self.n_respondents();
        let mut c = DMatrix::<u32>::zeros(n, n);
        for layer in &self.item_layers {
            for (acc, &v) in c.iter_mut().zip(layer.iter()) {
                *acc += v as u32;
            }
        }
        c
    }
}

pub fn build_multiplex(x: &BinarySchoolMatrix) -> MultiplexNetworks {
    let (n, p) = x.x.shape();
    let item_layers = (0..p)
        .map(|i| DMatrix::from_fn(n, n, |k, l| if k == l { 0 } else { x.x[(k, i)] * x.x[(l, i)] }))
        .collect();
    let person_layers = (0..n)
        .map(|k| DMatrix::from_fn(p, p, |i, j| if i == j { 0 } else { x.x[(k, i)] * x.x[(k, j)] }))
        .collect();
    MultiplexNetworks {
        item_layers,
        person_layers,
    }
}
