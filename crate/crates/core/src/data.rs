//! Precinct-aggregated datasets and their CSV representation.
//!
//! Three long-format files describe a dataset:
//!
//! - `voters.csv`: `precinct_id,voter_id,<feature...>`, one row per voter.
//! - `counts.csv`: `precinct_id,size,count`, one row per precinct.
//! - `labels.csv`: `precinct_id,voter_id,label`, evaluation only.
//!
//! Every voter row belongs to exactly one precinct, so the groups are
//! disjoint by construction. An intercept column of ones is prepended as
//! feature 0 at ingestion.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INTERCEPT: &str = "intercept";

/// One aggregation group: its voters' covariates and the observed total.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecinctData {
    id: String,
    voter_ids: Vec<String>,
    x: DMatrix<f64>,
    count: usize,
}

impl PrecinctData {
    pub fn new(id: impl Into<String>, voter_ids: Vec<String>, x: DMatrix<f64>, count: usize) -> Result<Self> {
        let id = id.into();
        if x.nrows() == 0 {
            return Err(Error::Validation(format!("precinct {id} has no voters")));
        }
        if voter_ids.len() != x.nrows() {
            return Err(Error::Validation(format!(
                "precinct {id}: {} voter ids for {} covariate rows",
                voter_ids.len(),
                x.nrows()
            )));
        }
        if count > x.nrows() {
            return Err(Error::Validation(format!(
                "precinct {id}: count {count} exceeds precinct size {}",
                x.nrows()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("precinct {id} has non-finite covariates")));
        }
        Ok(Self { id, voter_ids, x, count })
    }

    /// Builds a precinct from covariate rows, numbering voters `0..n`.
    pub fn from_rows(id: impl Into<String>, rows: &[Vec<f64>], count: usize) -> Result<Self> {
        let id = id.into();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Validation(format!("precinct {id}: ragged covariate rows")));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, k| rows[i][k]);
        let voter_ids = (0..rows.len()).map(|j| j.to_string()).collect();
        Self::new(id, voter_ids, x, count)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn voter_ids(&self) -> &[String] {
        &self.voter_ids
    }

    /// Covariates, one row per voter.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn size(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub(crate) fn with_count(mut self, count: usize) -> Result<Self> {
        if count > self.size() {
            return Err(Error::Validation(format!(
                "precinct {}: count {count} exceeds precinct size {}",
                self.id,
                self.size()
            )));
        }
        self.count = count;
        Ok(self)
    }
}

/// Affine transform applied to one raw covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub name: String,
    pub mean: f64,
    pub scale: f64,
}

/// Per-feature centering and scaling recorded at ingestion and replayed at
/// prediction time. Binary columns keep `mean = 0, scale = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub features: Vec<FeatureTransform>,
}

impl Standardization {
    pub fn identity<S: AsRef<str>>(names: &[S]) -> Self {
        let features = names
            .iter()
            .map(|n| FeatureTransform {
                name: n.as_ref().to_string(),
                mean: 0.0,
                scale: 1.0,
            })
            .collect();
        Self { features }
    }

    /// Population mean and standard deviation of each non-binary column.
    pub fn fit<S: AsRef<str>>(names: &[S], rows: &[Vec<f64>]) -> Self {
        let mut out = Self::identity(names);
        let n = rows.len() as f64;
        if rows.is_empty() {
            return out;
        }
        for (k, ft) in out.features.iter_mut().enumerate() {
            let binary = rows.iter().all(|r| r[k] == 0.0 || r[k] == 1.0);
            if binary {
                continue;
            }
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            ft.mean = mean;
            ft.scale = if sd > 0.0 { sd } else { 1.0 };
        }
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Transforms one raw covariate row (no intercept).
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.features)
            .map(|(&v, f)| (v - f.mean) / f.scale)
            .collect()
    }

    /// Maps coefficients on the standardized design (intercept first) to the
    /// raw covariate scale.
    pub fn raw_coefficients(&self, beta: &[f64]) -> Vec<f64> {
        let mut raw = Vec::with_capacity(beta.len());
        let mut intercept = beta[0];
        raw.push(0.0);
        for (b, f) in beta[1..].iter().zip(&self.features) {
            intercept -= b * f.mean / f.scale;
            raw.push(b / f.scale);
        }
        raw[0] = intercept;
        raw
    }
}

/// Precincts sharing a covariate dimension. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    precincts: Vec<PrecinctData>,
    feature_names: Vec<String>,
    standardization: Standardization,
}

impl Dataset {
    /// `feature_names` covers every column, intercept included.
    pub fn new(precincts: Vec<PrecinctData>, feature_names: Vec<String>, standardization: Standardization) -> Result<Self> {
        let p = feature_names.len();
        let mut seen = HashSet::new();
        for pr in &precincts {
            if pr.dim() != p {
                return Err(Error::Validation(format!(
                    "precinct {} has {} covariates, expected {p}",
                    pr.id,
                    pr.dim()
                )));
            }
            if !seen.insert(pr.id.as_str()) {
                return Err(Error::Validation(format!("duplicate precinct id {}", pr.id)));
            }
        }
        Ok(Self {
            precincts,
            feature_names,
            standardization,
        })
    }

    /// A dataset with generic feature names `f0, f1, …` and no transform.
    pub fn from_precincts(precincts: Vec<PrecinctData>) -> Result<Self> {
        let p = precincts.first().map_or(0, PrecinctData::dim);
        let names: Vec<String> = (0..p).map(|k| format!("f{k}")).collect();
        Self::new(precincts, names, Standardization::identity::<String>(&[]))
    }

    pub fn precincts(&self) -> &[PrecinctData] {
        &self.precincts
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn len(&self) -> usize {
        self.precincts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.precincts.is_empty()
    }

    pub fn n_voters(&self) -> usize {
        self.precincts.iter().map(PrecinctData::size).sum()
    }

    /// The precincts at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            precincts: indices.iter().map(|&i| self.precincts[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
        }
    }
}

/// A dataset with the individual outcomes that produced its counts. Used
/// for simulation truth and evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    data: Dataset,
    labels: Vec<Vec<bool>>,
}

impl LabeledDataset {
    pub fn new(data: Dataset, labels: Vec<Vec<bool>>) -> Result<Self> {
        if labels.len() != data.len() {
            return Err(Error::Validation(format!(
                "{} label groups for {} precincts",
                labels.len(),
                data.len()
            )));
        }
        for (pr, ls) in data.precincts.iter().zip(&labels) {
            if ls.len() != pr.size() {
                return Err(Error::Validation(format!(
                    "precinct {}: {} labels for {} voters",
                    pr.id,
                    ls.len(),
                    pr.size()
                )));
            }
            let sum = ls.iter().filter(|&&y| y).count();
            if sum != pr.count {
                return Err(Error::Validation(format!(
                    "precinct {}: labels sum to {sum} but the count is {}",
                    pr.id, pr.count
                )));
            }
        }
        Ok(Self { data, labels })
    }

    /// Replaces every precinct count with the sum of its labels.
    pub fn with_counts_from_labels(data: Dataset, labels: Vec<Vec<bool>>) -> Result<Self> {
        if labels.len() != data.len() {
            return Err(Error::Validation(format!(
                "{} label groups for {} precincts",
                labels.len(),
                data.len()
            )));
        }
        let Dataset {
            precincts,
            feature_names,
            standardization,
        } = data;
        let precincts = precincts
            .into_iter()
            .zip(&labels)
            .map(|(pr, ls)| {
                let sum = ls.iter().filter(|&&y| y).count();
                pr.with_count(sum)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(Dataset::new(precincts, feature_names, standardization)?, labels)
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn labels(&self) -> &[Vec<bool>] {
        &self.labels
    }

    pub fn into_parts(self) -> (Dataset, Vec<Vec<bool>>) {
        (self.data, self.labels)
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            data: self.data.subset(indices),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }
}

/// Raw voter rows grouped by precinct, in order of first appearance.
#[derive(Debug, Clone)]
pub struct VoterTable {
    pub feature_names: Vec<String>,
    pub groups: Vec<VoterGroup>,
}

#[derive(Debug, Clone)]
pub struct VoterGroup {
    pub precinct_id: String,
    pub voter_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl VoterTable {
    fn all_rows(&self) -> Vec<Vec<f64>> {
        self.groups.iter().flat_map(|g| g.rows.iter().cloned()).collect()
    }

    /// Reorders columns to `names`, failing on the first missing one.
    pub fn select(&self, names: &[String]) -> Result<VoterTable> {
        let idx = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| Error::Validation(format!("voters file is missing feature column `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let groups = self
            .groups
            .iter()
            .map(|g| VoterGroup {
                precinct_id: g.precinct_id.clone(),
                voter_ids: g.voter_ids.clone(),
                rows: g.rows.iter().map(|r| idx.iter().map(|&k| r[k]).collect()).collect(),
            })
            .collect();
        Ok(VoterTable {
            feature_names: names.to_vec(),
            groups,
        })
    }

    /// Design rows with the intercept prepended and `std` applied.
    fn design(&self, group: &VoterGroup, std: &Standardization) -> DMatrix<f64> {
        let p = self.feature_names.len() + 1;
        let mut x = DMatrix::zeros(group.rows.len(), p);
        for (i, raw) in group.rows.iter().enumerate() {
            x[(i, 0)] = 1.0;
            for (k, v) in std.apply(raw).into_iter().enumerate() {
                x[(i, k + 1)] = v;
            }
        }
        x
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn expect_header(path: &Path, headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(Error::Validation(format!(
            "{}: header must start with `{}`, found `{}`",
            path.display(),
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Reads `voters.csv` without any transform.
pub fn read_voters(path: &Path) -> Result<VoterTable> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers()?.clone();
    expect_header(path, &headers, &["precinct_id", "voter_id"])?;
    let feature_names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut groups: Vec<VoterGroup> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut voter_keys = HashSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() != headers.len() {
            return Err(Error::Validation(format!(
                "{} line {line}: expected {} fields, found {}",
                path.display(),
                headers.len(),
                record.len()
            )));
        }
        let precinct = record[0].to_string();
        let voter = record[1].to_string();
        if !voter_keys.insert((precinct.clone(), voter.clone())) {
            return Err(Error::Validation(format!(
                "{} line {line}: duplicate voter {voter} in precinct {precinct}",
                path.display()
            )));
        }
        let mut row = Vec::with_capacity(feature_names.len());
        for (k, field) in record.iter().skip(2).enumerate() {
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(Error::Validation(format!(
                        "{} line {line}: missing or non-finite value `{field}` for feature `{}`",
                        path.display(),
                        feature_names[k]
                    )))
                }
            }
        }
        let g = *index.entry(precinct.clone()).or_insert_with(|| {
            groups.push(VoterGroup {
                precinct_id: precinct,
                voter_ids: Vec::new(),
                rows: Vec::new(),
            });
            groups.len() - 1
        });
        groups[g].voter_ids.push(voter);
        groups[g].rows.push(row);
    }
    Ok(VoterTable { feature_names, groups })
}

/// One `counts.csv` row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountRow {
    pub precinct_id: String,
    pub size: usize,
    pub count: usize,
}

pub fn read_counts(path: &Path) -> Result<Vec<CountRow>> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers()?.clone();
    expect_header(path, &headers, &["precinct_id", "size", "count"])?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let parse = |k: usize, what: &str| {
            record
                .get(k)
                .and_then(|f| f.parse::<usize>().ok())
                .ok_or_else(|| Error::Validation(format!("{} line {line}: invalid {what}", path.display())))
        };
        let row = CountRow {
            precinct_id: record.get(0).unwrap_or_default().to_string(),
            size: parse(1, "size")?,
            count: parse(2, "count")?,
        };
        if row.count > row.size {
            return Err(Error::Validation(format!(
                "precinct {}: count {} exceeds precinct size {}",
                row.precinct_id, row.count, row.size
            )));
        }
        out.push(row);
    }
    Ok(out)
}

/// Loads `voters.csv` and `counts.csv` into a [`Dataset`] ordered as in the
/// counts file. With `standardize`, non-binary columns are centered and
/// scaled and the transform is recorded.
pub fn load_dataset(voters: &Path, counts: &Path, standardize: bool) -> Result<Dataset> {
    let table = read_voters(voters)?;
    let counts = read_counts(counts)?;
    let std = if standardize {
        Standardization::fit(&table.feature_names, &table.all_rows())
    } else {
        Standardization::identity(&table.feature_names)
    };
    assemble(&table, &counts, std)
}

fn assemble(table: &VoterTable, counts: &[CountRow], std: Standardization) -> Result<Dataset> {
    let by_id: HashMap<&str, &VoterGroup> = table.groups.iter().map(|g| (g.precinct_id.as_str(), g)).collect();
    let counted: HashSet<&str> = counts.iter().map(|c| c.precinct_id.as_str()).collect();
    if let Some(g) = table.groups.iter().find(|g| !counted.contains(g.precinct_id.as_str())) {
        return Err(Error::Validation(format!(
            "precinct {} appears in the voters file but not in the counts file",
            g.precinct_id
        )));
    }
    let mut precincts = Vec::with_capacity(counts.len());
    for c in counts {
        let group = by_id.get(c.precinct_id.as_str()).ok_or_else(|| {
            Error::Validation(format!(
                "precinct {} appears in the counts file but has no voters",
                c.precinct_id
            ))
        })?;
        if group.rows.len() != c.size {
            return Err(Error::Validation(format!(
                "precinct {}: size {} in the counts file but {} voter rows",
                c.precinct_id,
                c.size,
                group.rows.len()
            )));
        }
        let x = table.design(group, &std);
        precincts.push(PrecinctData::new(c.precinct_id.clone(), group.voter_ids.clone(), x, c.count)?);
    }
    Dataset::new(precincts, design_names(&table.feature_names), std)
}

fn design_names(raw: &[String]) -> Vec<String> {
    std::iter::once(INTERCEPT.to_string()).chain(raw.iter().cloned()).collect()
}

/// Loads voters with a stored transform and zero counts, for prediction.
/// Columns are matched by name against `std`.
pub fn load_voters_with(voters: &Path, std: &Standardization) -> Result<Dataset> {
    let table = read_voters(voters)?.select(&std.names())?;
    let precincts = table
        .groups
        .iter()
        .map(|g| PrecinctData::new(g.precinct_id.clone(), g.voter_ids.clone(), table.design(g, std), 0))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(precincts, design_names(&table.feature_names), std.clone())
}

/// Loads voters and counts under a stored transform, matching columns by name.
pub fn load_dataset_with(voters: &Path, counts: &Path, std: &Standardization) -> Result<Dataset> {
    let table = read_voters(voters)?.select(&std.names())?;
    let counts = read_counts(counts)?;
    assemble(&table, &counts, std.clone())
}

/// Reads `labels.csv` and aligns it with the voters of `data`.
pub fn read_labels(path: &Path, data: &Dataset) -> Result<Vec<Vec<bool>>> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers()?.clone();
    expect_header(path, &headers, &["precinct_id", "voter_id", "label"])?;
    let mut map: HashMap<(String, String), bool> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let label = match record.get(2) {
            Some("0") => false,
            Some("1") => true,
            other => {
                return Err(Error::Validation(format!(
                    "{} line {line}: label must be 0 or 1, found `{}`",
                    path.display(),
                    other.unwrap_or("")
                )))
            }
        };
        map.insert((record[0].to_string(), record[1].to_string()), label);
    }
    data.precincts()
        .iter()
        .map(|pr| {
            pr.voter_ids()
                .iter()
                .map(|v| {
                    map.get(&(pr.id().to_string(), v.clone())).copied().ok_or_else(|| {
                        Error::Validation(format!("no label for voter {v} in precinct {}", pr.id()))
                    })
                })
                .collect()
        })
        .collect()
}

/// Loads voters, counts and labels, checking label sums against counts.
pub fn load_labeled(voters: &Path, counts: &Path, labels: &Path, standardize: bool) -> Result<LabeledDataset> {
    let data = load_dataset(voters, counts, standardize)?;
    let labels = read_labels(labels, &data)?;
    LabeledDataset::new(data, labels)
}

fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes the raw (untransformed) covariates of `data`, without the intercept.
pub fn write_voters(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let names = &data.feature_names()[1..];
    write!(w, "precinct_id,voter_id").map_err(io)?;
    for n in names {
        write!(w, ",{n}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    let std = data.standardization();
    for pr in data.precincts() {
        for (i, vid) in pr.voter_ids().iter().enumerate() {
            write!(w, "{},{}", pr.id(), vid).map_err(io)?;
            for k in 1..pr.dim() {
                let v = pr.x()[(i, k)];
                let raw = match std.features.get(k - 1) {
                    Some(f) if f.mean != 0.0 || f.scale != 1.0 => v * f.scale + f.mean,
                    _ => v,
                };
                write!(w, ",{raw}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_counts(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "precinct_id,size,count").map_err(io)?;
    for pr in data.precincts() {
        writeln!(w, "{},{},{}", pr.id(), pr.size(), pr.count()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_labels(path: &Path, labeled: &LabeledDataset) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "precinct_id,voter_id,label").map_err(io)?;
    for (pr, ls) in labeled.data().precincts().iter().zip(labeled.labels()) {
        for (vid, &y) in pr.voter_ids().iter().zip(ls) {
            writeln!(w, "{},{},{}", pr.id(), vid, u8::from(y)).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Seeded precinct-level partition: `(train, dev)` index lists, each ascending.
pub fn split_indices(n: usize, n_dev: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_dev >= n.max(1) {
        return Err(Error::Domain(format!(
            "cannot hold out {n_dev} of {n} precincts"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut dev = order[..n_dev].to_vec();
    let mut train = order[n_dev..].to_vec();
    dev.sort_unstable();
    train.sort_unstable();
    Ok((train, dev))
}

/// Holds out `n_dev` whole precincts, chosen deterministically from `seed`.
pub fn split_dev(data: &Dataset, n_dev: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, dev) = split_indices(data.len(), n_dev, seed)?;
    Ok((data.subset(&train), data.subset(&dev)))
}
