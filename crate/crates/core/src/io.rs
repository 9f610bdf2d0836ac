//! File formats: similarity matrices (CSV and a compact binary layout),
//! distance specifications, label files and JSON run reports.
//!
//! Binary similarity layout, all integers and floats little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `MVBS` |
//! | 2 | format version (`u16`, currently 1) |
//! | 8 | `n` (`u64`) |
//! | 8·n(n+1)/2 | upper triangle including the diagonal, row-major (`f64`) |
//! | per node | `u32` byte length followed by the UTF-8 node id |

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusteringResult;
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::model::{icd9_distance, index_distance, DistanceModel, MembershipMatrix, SimilarityView};
use crate::weights::ViewDiagnostics;

pub const BINARY_MAGIC: &[u8; 4] = b"MVBS";
pub const BINARY_VERSION: u16 = 1;

/// Diagonal entries may differ by this much and still count as one `ω₀`.
pub const DIAGONAL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityFormat {
    Csv,
    Binary,
}

impl SimilarityFormat {
    /// `.mvbs` and `.bin` files are binary; everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("mvbs") | Some("bin") => SimilarityFormat::Binary,
            _ => SimilarityFormat::Csv,
        }
    }
}

/// A similarity matrix together with the node ids labelling its rows.
#[derive(Clone, Debug)]
pub struct LoadedView {
    pub ids: Vec<String>,
    pub view: SimilarityView,
    /// Largest `|w_ij − w_ji|` seen before symmetrization (CSV only).
    pub max_asymmetry: f64,
}

fn source(path: &Path) -> String {
    path.display().to_string()
}

fn check_unique_ids(ids: &[String], src: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::ingestion(src, format!("duplicate node id {id:?}")));
        }
    }
    Ok(())
}

/// Builds a view from a square array, checking the diagonal and inferring `L`.
fn finish_view(ids: Vec<String>, w: SymMatrix, max_asymmetry: f64, src: &str) -> Result<LoadedView> {
    check_unique_ids(&ids, src)?;
    let n = w.dim();
    if n == 0 {
        return Err(Error::ingestion(src, "empty matrix"));
    }
    let omega0 = w.get(0, 0);
    for i in 1..n {
        if (w.get(i, i) - omega0).abs() > DIAGONAL_TOL {
            return Err(Error::ingestion(
                src,
                format!(
                    "row {}, column {}: diagonal {} differs from the first diagonal entry {omega0}",
                    i + 1,
                    i + 1,
                    w.get(i, i)
                ),
            ));
        }
    }
    let w = w.map(|i, j, v| if i == j { omega0 } else { v });
    let l_bound = w.max_abs();
    let view = SimilarityView::new(w, l_bound, None, None)
        .map_err(|e| Error::ingestion(src, e.to_string()))?;
    Ok(LoadedView {
        ids,
        view,
        max_asymmetry,
    })
}

fn parse_square_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let src = source(path);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let ids: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::ingestion(&src, format!("header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    let n = ids.len();
    let mut rows = Vec::with_capacity(n);
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::ingestion(&src, format!("row {}: {e}", r + 1)))?;
        if rec.len() != n {
            return Err(Error::ingestion(
                &src,
                format!("row {} has {} columns, expected {n}", r + 1, rec.len()),
            ));
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, field)| {
                let v: f64 = field.parse().map_err(|_| {
                    Error::ingestion(&src, format!("row {}, column {}: cannot parse {field:?}", r + 1, c + 1))
                })?;
                if !v.is_finite() {
                    return Err(Error::ingestion(
                        &src,
                        format!("row {}, column {}: non-finite value {field}", r + 1, c + 1),
                    ));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.len() != n {
        return Err(Error::ingestion(
            &src,
            format!("matrix is not square: {} rows for {n} ids", rows.len()),
        ));
    }
    Ok((ids, rows))
}

/// Reads a CSV whose header holds node ids and whose body is the square
/// matrix; asymmetric inputs are averaged with their transpose.
pub fn read_similarity_csv(path: &Path) -> Result<LoadedView> {
    let (ids, rows) = parse_square_csv(path)?;
    let n = ids.len();
    let mut gap = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            gap = gap.max((rows[i][j] - rows[j][i]).abs());
        }
    }
    if gap > 0.0 {
        log::warn!("{}: asymmetric input (max gap {gap:e}) averaged with its transpose", path.display());
    }
    let w = SymMatrix::from_upper_fn(n, |i, j| 0.5 * (rows[i][j] + rows[j][i]));
    finish_view(ids, w, gap, &source(path))
}

/// Writes a CSV readable by [`read_similarity_csv`]; values round-trip exactly.
pub fn write_similarity_csv(path: &Path, ids: &[String], w: &SymMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
    let map = |e: csv::Error| Error::ingestion(source(path), e.to_string());
    wtr.write_record(ids).map_err(map)?;
    for i in 0..w.dim() {
        // `{:?}` prints the shortest representation that parses back bit-exactly.
        wtr.write_record((0..w.dim()).map(|j| format!("{:?}", w.get(i, j)))).map_err(map)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Writes the binary layout described in the module docs.
pub fn write_similarity_binary(path: &Path, ids: &[String], w: &SymMatrix) -> Result<()> {
    let n = w.dim();
    if ids.len() != n {
        return Err(Error::Dimension {
            context: "write_similarity_binary (ids)",
            expected: n,
            found: ids.len(),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    out.write_all(BINARY_MAGIC).map_err(io)?;
    out.write_all(&BINARY_VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(n as u64).to_le_bytes()).map_err(io)?;
    for i in 0..n {
        for j in i..n {
            out.write_all(&w.get(i, j).to_le_bytes()).map_err(io)?;
        }
    }
    for id in ids {
        out.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(id.as_bytes()).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads the binary layout described in the module docs.
pub fn read_similarity_binary(path: &Path) -> Result<LoadedView> {
    let src = source(path);
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut take = |len: usize, what: &str| -> Result<&[u8]> {
        let end = pos
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::ingestion(&src, format!("truncated file while reading {what} at byte {pos}")))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4, "magic")? != BINARY_MAGIC {
        return Err(Error::ingestion(&src, "missing MVBS magic bytes"));
    }
    let version = u16::from_le_bytes(take(2, "version")?.try_into().unwrap());
    if version != BINARY_VERSION {
        return Err(Error::ingestion(&src, format!("unsupported format version {version}")));
    }
    let n = u64::from_le_bytes(take(8, "size")?.try_into().unwrap()) as usize;
    let entries = n
        .checked_mul(n + 1)
        .map(|v| v / 2)
        .ok_or_else(|| Error::ingestion(&src, "matrix size overflows"))?;
    let mut upper = Vec::with_capacity(entries.min(1 << 24));
    for _ in 0..entries {
        let v = f64::from_le_bytes(take(8, "matrix entries")?.try_into().unwrap());
        upper.push(v);
    }
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u32::from_le_bytes(take(4, "id length")?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(take(len, "id")?)
            .map_err(|_| Error::ingestion(&src, "node id is not UTF-8"))?;
        ids.push(id.to_owned());
    }
    if pos != bytes.len() {
        return Err(Error::ingestion(&src, format!("{} trailing bytes", bytes.len() - pos)));
    }
    // Offset of row i in the packed upper triangle.
    let row_start: Vec<usize> = (0..n)
        .scan(0usize, |acc, i| {
            let s = *acc;
            *acc += n - i;
            Some(s)
        })
        .collect();
    for i in 0..n {
        for j in i..n {
            let v = upper[row_start[i] + j - i];
            if !v.is_finite() {
                return Err(Error::ingestion(
                    &src,
                    format!("row {}, column {}: non-finite value {v}", i + 1, j + 1),
                ));
            }
        }
    }
    let w = SymMatrix::from_upper_fn(n, |i, j| upper[row_start[i] + j - i]);
    finish_view(ids, w, 0.0, &src)
}

pub fn load_similarity(path: &Path, format: SimilarityFormat) -> Result<LoadedView> {
    match format {
        SimilarityFormat::Csv => read_similarity_csv(path),
        SimilarityFormat::Binary => read_similarity_binary(path),
    }
}

fn describe_missing(reference: &[String], other: &[String]) -> String {
    let a: HashSet<&str> = reference.iter().map(String::as_str).collect();
    let b: HashSet<&str> = other.iter().map(String::as_str).collect();
    let mut missing: Vec<&str> = a.difference(&b).copied().collect();
    let mut extra: Vec<&str> = b.difference(&a).copied().collect();
    missing.sort_unstable();
    extra.sort_unstable();
    format!("missing ids {missing:?}, unexpected ids {extra:?}")
}

/// Position in `ids` of every id in `order`; errors list the mismatch.
pub fn id_permutation(order: &[String], ids: &[String], src: &str) -> Result<Vec<usize>> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if ids.len() != order.len() || order.iter().any(|id| !index.contains_key(id.as_str())) {
        return Err(Error::ingestion(src, describe_missing(order, ids)));
    }
    Ok(order.iter().map(|id| index[id.as_str()]).collect())
}

/// Reorders every view to the node order of the first one, joining on ids.
pub fn align_views(loaded: Vec<LoadedView>) -> Result<(Vec<String>, Vec<SimilarityView>)> {
    let mut it = loaded.into_iter();
    let first = it.next().ok_or_else(|| Error::config("no views given"))?;
    let order = first.ids;
    let mut views = vec![first.view];
    for (s, lv) in it.enumerate() {
        let perm = id_permutation(&order, &lv.ids, &format!("view {}", s + 2))?;
        let w = SymMatrix::from_upper_fn(order.len(), |i, j| lv.view.w.get(perm[i], perm[j]));
        views.push(SimilarityView::new(w, lv.view.l_bound, lv.view.sigma, lv.view.alpha)?);
    }
    Ok((order, views))
}

/// Where node distances come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DistanceSpec {
    /// `|i − j| · scale` over the node order.
    Index(f64),
    /// ICD9 code distance with tie penalty `eta`; node ids are the codes.
    Icd9(f64),
    /// Square CSV matrix with node ids in the header.
    Matrix(PathBuf),
}

impl fmt::Display for DistanceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceSpec::Index(s) => write!(f, "index:{s}"),
            DistanceSpec::Icd9(e) => write!(f, "icd9:{e}"),
            DistanceSpec::Matrix(p) => write!(f, "matrix:{}", p.display()),
        }
    }
}

impl FromStr for DistanceSpec {
    type Err = Error;

    /// `index:<scale>`, `icd9:<eta>` or `matrix:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::config(format!("distance spec {s:?} needs the form kind:value")))?;
        let num = |a: &str| {
            a.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("cannot parse number {a:?} in distance spec")))
        };
        match kind.trim() {
            "index" => Ok(DistanceSpec::Index(num(arg)?)),
            "icd9" => Ok(DistanceSpec::Icd9(num(arg)?)),
            "matrix" => Ok(DistanceSpec::Matrix(PathBuf::from(arg))),
            other => Err(Error::config(format!(
                "unknown distance kind {other:?}; expected index, icd9 or matrix"
            ))),
        }
    }
}

/// Materializes the distance model for nodes `ids` (in that order).
pub fn load_distance(spec: &DistanceSpec, ids: &[String]) -> Result<DistanceModel> {
    match spec {
        DistanceSpec::Index(scale) => index_distance(ids.len(), *scale),
        DistanceSpec::Icd9(eta) => icd9_distance(ids, *eta),
        DistanceSpec::Matrix(path) => {
            let src = source(path);
            let (file_ids, rows) = parse_square_csv(path)?;
            check_unique_ids(&file_ids, &src)?;
            for (r, row) in rows.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    if v < 0.0 {
                        return Err(Error::ingestion(
                            &src,
                            format!("row {}, column {}: negative distance {v}", r + 1, c + 1),
                        ));
                    }
                    if v != rows[c][r] {
                        return Err(Error::ingestion(
                            &src,
                            format!("row {}, column {}: distance matrix is not symmetric", r + 1, c + 1),
                        ));
                    }
                }
            }
            let perm = id_permutation(ids, &file_ids, &src)?;
            let d = SymMatrix::from_upper_fn(ids.len(), |i, j| rows[perm[i]][perm[j]]);
            DistanceModel::new(d).map_err(|e| Error::ingestion(&src, e.to_string()))
        }
    }
}

/// Writes `node,cluster` rows with 1-based cluster ids.
pub fn write_labels(path: &Path, ids: &[String], labels: &MembershipMatrix) -> Result<()> {
    if ids.len() != labels.n() {
        return Err(Error::Dimension {
            context: "write_labels (ids)",
            expected: labels.n(),
            found: ids.len(),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
    let map = |e: csv::Error| Error::ingestion(source(path), e.to_string());
    wtr.write_record(["node", "cluster"]).map_err(map)?;
    for (id, &l) in ids.iter().zip(labels.labels()) {
        wtr.write_record([id.as_str(), &(l + 1).to_string()]).map_err(map)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `node,cluster` file; cluster values may be any strings.
pub fn read_labels(path: &Path) -> Result<(Vec<String>, MembershipMatrix)> {
    let src = source(path);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut ids = Vec::new();
    let mut raw = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::ingestion(&src, format!("row {}: {e}", r + 1)))?;
        if rec.len() != 2 {
            return Err(Error::ingestion(&src, format!("row {} needs two columns (node, cluster)", r + 1)));
        }
        ids.push(rec[0].to_owned());
        raw.push(rec[1].to_owned());
    }
    if ids.is_empty() {
        return Err(Error::ingestion(&src, "no label rows"));
    }
    check_unique_ids(&ids, &src)?;
    Ok((ids, MembershipMatrix::from_labels(&raw)?))
}

/// Re-expresses `labels` (indexed like `ids`) in the node order `order`.
pub fn reorder_labels(order: &[String], ids: &[String], labels: &MembershipMatrix, src: &str) -> Result<MembershipMatrix> {
    let perm = id_permutation(order, ids, src)?;
    Ok(labels.permuted(&perm))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub node: String,
    pub cluster: usize,
}

/// JSON summary of one clustering run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub software_version: String,
    pub seed: u64,
    pub k: usize,
    pub weight_rule: String,
    pub bandwidth_rule: String,
    pub lambda: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub active_views: Vec<usize>,
    pub diagnostics: Vec<ViewDiagnostics>,
    pub kmeans_objective: f64,
    pub warnings: Vec<String>,
    /// One entry per node in input order, clusters 1-based.
    pub labels: Vec<LabelEntry>,
}

impl RunReport {
    pub fn from_result(
        result: &ClusteringResult,
        ids: &[String],
        seed: u64,
        weight_rule: String,
        bandwidth_rule: String,
    ) -> Self {
        RunReport {
            software_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed,
            k: result.labels.k(),
            weight_rule,
            bandwidth_rule,
            lambda: result.weights.as_slice().to_vec(),
            bandwidths: result.bandwidths.clone(),
            active_views: result.active_views.clone(),
            diagnostics: result.diagnostics.clone(),
            kmeans_objective: result.kmeans_objective,
            warnings: result.warnings.clone(),
            labels: ids
                .iter()
                .zip(result.labels.labels())
                .map(|(id, &l)| LabelEntry {
                    node: id.clone(),
                    cluster: l + 1,
                })
                .collect(),
        }
    }

    /// Node ids and the 0-based partition recorded in the report.
    pub fn membership(&self) -> Result<(Vec<String>, MembershipMatrix)> {
        let ids = self.labels.iter().map(|e| e.node.clone()).collect();
        if self.labels.iter().any(|e| e.cluster == 0 || e.cluster > self.k) {
            return Err(Error::input("report cluster ids must be in 1..=k"));
        }
        let labels = self.labels.iter().map(|e| e.cluster - 1).collect();
        Ok((ids, MembershipMatrix::new(labels, self.k)?))
    }
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Numerical(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::ingestion(source(path), e.to_string()))
}
