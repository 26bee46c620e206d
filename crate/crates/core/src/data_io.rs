//! Loaders for word embeddings, feature/label datasets and feature groupings.
//!
//! Formats:
//!
//! * embeddings: header `count dim`, then `token v1 … v_dim` per line;
//! * features: dense CSV (one instance per row) or a little-endian binary
//!   matrix with a 16-byte header (`F32MATRX`, `u32` rows, `u32` columns)
//!   followed by row-major `f32` values;
//! * labels: `instance_index<TAB>i,j,k` per line, 0-based;
//! * groupings: `# feature-grouping d=.. r=.. seed=..` then one 0-based
//!   permuted index per line.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measures::FeatureGrouping;

/// Magic bytes opening a binary feature matrix.
pub const FEATURE_MAGIC: &[u8; 8] = b"F32MATRX";

const GROUPING_HEADER: &str = "# feature-grouping";

/// Labelled instances: features, label sets and label names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<Vec<usize>>,
    label_names: Vec<String>,
}

impl Dataset {
    /// Validates shapes; label sets are sorted and deduplicated.
    pub fn new(features: Array2<f64>, labels: Vec<Vec<usize>>, label_names: Vec<String>) -> Result<Self> {
        let (n, m) = features.dim();
        if n == 0 || m == 0 || label_names.is_empty() {
            return Err(Error::InvalidParameter(
                "dataset needs at least one instance, feature and label".into(),
            ));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                context: "label sets vs feature rows",
                expected: n,
                found: labels.len(),
            });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        let l = label_names.len();
        let mut clean = Vec::with_capacity(n);
        for (i, mut set) in labels.into_iter().enumerate() {
            if set.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "instance {i}: instance with zero labels"
                )));
            }
            if let Some(&bad) = set.iter().find(|&&x| x >= l) {
                return Err(Error::InvalidParameter(format!(
                    "instance {i}: label index {bad} out of range 0..{}",
                    l - 1
                )));
            }
            set.sort_unstable();
            set.dedup();
            clean.push(set);
        }
        Ok(Self {
            features,
            labels: clean,
            label_names,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label_count(&self) -> usize {
        self.label_names.len()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn feature_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[Vec<usize>] {
        &self.labels
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    /// 0/1 indicator vector of instance `i`.
    pub fn label_vector(&self, i: usize) -> Array1<f64> {
        let mut y = Array1::zeros(self.label_count());
        for &p in &self.labels[i] {
            y[p] = 1.0;
        }
        y
    }

    /// `N × L` 0/1 indicator matrix.
    pub fn label_matrix(&self) -> Array2<f64> {
        let mut y = Array2::zeros((self.len(), self.label_count()));
        for (i, set) in self.labels.iter().enumerate() {
            for &p in set {
                y[[i, p]] = 1.0;
            }
        }
        y
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_f64(path: &Path, line: usize, token: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| Error::parse(path, line, format!("invalid number {token:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite value {token:?}")));
    }
    Ok(v)
}

/// Every token of an embedding file with its raw vector, in file order.
pub fn load_embedding_table(path: impl AsRef<Path>) -> Result<(Vec<String>, Array2<f64>)> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty embedding file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match fields.as_slice() {
        [c, d] => match (c.parse::<usize>(), d.parse::<usize>()) {
            (Ok(c), Ok(d)) if d > 0 => (c, d),
            _ => return Err(Error::parse(path, 1, format!("malformed header {header:?}"))),
        },
        _ => return Err(Error::parse(path, 1, format!("malformed header {header:?}"))),
    };
    let mut tokens = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count * dim);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("line is not blank");
        let row: Vec<&str> = fields.collect();
        if row.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {dim} values, found {}", row.len()),
            ));
        }
        for t in row {
            values.push(parse_f64(path, lineno, t)?);
        }
        tokens.push(word.to_string());
    }
    if tokens.len() != count {
        return Err(Error::format(
            path,
            format!("header declares {count} vectors but the file has {}", tokens.len()),
        ));
    }
    let matrix = Array2::from_shape_vec((tokens.len(), dim), values).expect("rows have dim values");
    Ok((tokens, matrix))
}

fn unit_row(path: &Path, name: &str, raw: Array1<f64>) -> Result<Array1<f64>> {
    let norm = raw.dot(&raw).sqrt();
    if !(norm > 0.0) {
        return Err(Error::format(path, format!("embedding for label {name:?} is zero")));
    }
    Ok(raw / norm)
}

/// Loads one unit-norm embedding per label name.
///
/// A name missing from the file is split on `_`; the raw mean of the
/// constituent words that are present is renormalized and used instead.
pub fn load_embeddings(path: impl AsRef<Path>, label_names: &[String]) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let (tokens, table) = load_embedding_table(path)?;
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, t) in tokens.iter().enumerate() {
        index.entry(t.as_str()).or_insert(i);
    }
    let dim = table.ncols();
    let mut out = Array2::zeros((label_names.len(), dim));
    for (p, name) in label_names.iter().enumerate() {
        let raw = match index.get(name.as_str()) {
            Some(&i) => table.row(i).to_owned(),
            None => {
                let parts: Vec<usize> = name
                    .split('_')
                    .filter(|w| !w.is_empty())
                    .filter_map(|w| index.get(w).copied())
                    .collect();
                if parts.is_empty() {
                    return Err(Error::format(
                        path,
                        format!("no embedding for label {name:?} or its constituent words"),
                    ));
                }
                let mut mean = Array1::zeros(dim);
                for &i in &parts {
                    mean += &table.row(i);
                }
                mean / parts.len() as f64
            }
        };
        out.row_mut(p).assign(&unit_row(path, name, raw)?);
    }
    Ok(out)
}

/// The first `count` embeddings of the file, unit-normalized, with their tokens.
pub fn load_leading_embeddings(path: impl AsRef<Path>, count: usize) -> Result<(Vec<String>, Array2<f64>)> {
    let path = path.as_ref();
    let (mut tokens, table) = load_embedding_table(path)?;
    if tokens.len() < count {
        return Err(Error::format(
            path,
            format!("need {count} embeddings, file has {}", tokens.len()),
        ));
    }
    tokens.truncate(count);
    let mut out = Array2::zeros((count, table.ncols()));
    for (p, name) in tokens.iter().enumerate() {
        out.row_mut(p).assign(&unit_row(path, name, table.row(p).to_owned())?);
    }
    Ok((tokens, out))
}

/// Loads a feature matrix, detecting the binary format by its magic bytes.
pub fn load_features(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(FEATURE_MAGIC) {
        return parse_binary_features(path, &bytes);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not UTF-8 CSV or a binary matrix"))?;
    let mut rows: Vec<f64> = Vec::new();
    let mut width = None;
    let mut count = 0;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let values = line
            .split(',')
            .map(|t| parse_f64(path, lineno, t.trim()))
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("row has {} values, expected {w}", values.len()),
                ))
            }
            _ => {}
        }
        rows.extend(values);
        count += 1;
    }
    let width = width.ok_or_else(|| Error::format(path, "no feature rows"))?;
    Ok(Array2::from_shape_vec((count, width), rows).expect("rows have equal width"))
}

fn parse_binary_features(path: &Path, bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 16 {
        return Err(Error::format(path, "truncated binary header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (n, m) = (word(8), word(12));
    let expected = 16 + 4 * n * m;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("binary matrix {n}x{m} needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
        return Err(Error::format(
            path,
            format!("non-finite value in row {}", pos / m.max(1)),
        ));
    }
    Ok(Array2::from_shape_vec((n, m), values).expect("length checked"))
}

/// Writes `features` in the binary `f32` format.
pub fn save_features_binary(path: impl AsRef<Path>, features: ArrayView2<'_, f64>) -> Result<()> {
    let path = path.as_ref();
    let (n, m) = features.dim();
    let mut bytes = Vec::with_capacity(16 + 4 * n * m);
    bytes.extend_from_slice(FEATURE_MAGIC);
    for dim in [n, m] {
        let dim = u32::try_from(dim).map_err(|_| Error::format(path, "matrix too large"))?;
        bytes.extend_from_slice(&dim.to_le_bytes());
    }
    for &x in features.iter() {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a label file for `instances` rows. With `label_count = None` the
/// label count is one past the largest index seen.
pub fn load_labels(
    path: impl AsRef<Path>,
    instances: usize,
    label_count: Option<usize>,
) -> Result<(Vec<Vec<usize>>, usize)> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut sets: Vec<Option<Vec<usize>>> = vec![None; instances];
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (head, tail) = line.split_once('\t').unwrap_or((line, ""));
        let i: usize = head
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("invalid instance index {head:?}")))?;
        if i >= instances {
            return Err(Error::parse(
                path,
                lineno,
                format!("instance index {i} out of range for {instances} feature rows"),
            ));
        }
        if sets[i].is_some() {
            return Err(Error::parse(path, lineno, format!("instance {i} listed twice")));
        }
        let mut set = Vec::new();
        for tok in tail.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let p: usize = tok
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("invalid label index {tok:?}")))?;
            if let Some(l) = label_count {
                if p >= l {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("label index {p} out of range 0..{}", l.saturating_sub(1)),
                    ));
                }
            }
            set.push(p);
        }
        if set.is_empty() {
            return Err(Error::parse(
                path,
                lineno,
                format!("instance {i}: instance with zero labels"),
            ));
        }
        sets[i] = Some(set);
    }
    let mut out = Vec::with_capacity(instances);
    for (i, set) in sets.into_iter().enumerate() {
        out.push(set.ok_or_else(|| Error::format(path, format!("instance {i}: instance with zero labels")))?);
    }
    let count = match label_count {
        Some(l) => l,
        None => out.iter().flatten().max().map_or(0, |&p| p + 1),
    };
    Ok((out, count))
}

/// Loads features and labels. Without `label_names` the labels are named by
/// their index and their count inferred from the file.
pub fn load_dataset(
    features_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    label_names: Option<Vec<String>>,
) -> Result<Dataset> {
    let features = load_features(features_path)?;
    let (labels, count) = load_labels(labels_path, features.nrows(), label_names.as_ref().map(Vec::len))?;
    let names = label_names.unwrap_or_else(|| (0..count).map(|p| p.to_string()).collect());
    Dataset::new(features, labels, names)
}

/// Reads one label name per non-empty line.
pub fn load_label_names(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let names: Vec<String> = read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if names.is_empty() {
        return Err(Error::format(path, "no label names"));
    }
    Ok(names)
}

/// Random grouping of `d` features into `r` groups, reproducible from `seed`.
pub fn make_grouping(d: usize, r: usize, seed: u64) -> Result<FeatureGrouping> {
    if r == 0 || r > d {
        return Err(Error::InvalidGrouping(format!(
            "need 1 <= r <= d, got r = {r}, d = {d}"
        )));
    }
    let padded = d.div_ceil(r) * r;
    let mut permutation: Vec<usize> = (0..padded).collect();
    permutation.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    FeatureGrouping::new(permutation, d, r, Some(seed))
}

/// Writes a grouping file.
pub fn save_grouping(path: impl AsRef<Path>, grouping: &FeatureGrouping) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let seed = grouping.seed().map_or_else(|| "none".to_string(), |s| s.to_string());
    writeln!(
        out,
        "{GROUPING_HEADER} d={} r={} seed={seed}",
        grouping.dim(),
        grouping.groups()
    )
    .expect("writing to a Vec");
    for k in grouping.permutation() {
        writeln!(out, "{k}").expect("writing to a Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a grouping file written by [`save_grouping`].
pub fn load_grouping(path: impl AsRef<Path>) -> Result<FeatureGrouping> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::format(path, "empty grouping file"))?;
    let rest = header
        .strip_prefix(GROUPING_HEADER)
        .ok_or_else(|| Error::parse(path, 1, "missing grouping header"))?;
    let (mut d, mut r, mut seed) = (None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::parse(path, 1, format!("malformed field {field:?}")))?;
        let bad = || Error::parse(path, 1, format!("malformed field {field:?}"));
        match key {
            "d" => d = Some(value.parse::<usize>().map_err(|_| bad())?),
            "r" => r = Some(value.parse::<usize>().map_err(|_| bad())?),
            "seed" if value == "none" => {}
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    let (d, r) = match (d, r) {
        (Some(d), Some(r)) => (d, r),
        _ => return Err(Error::parse(path, 1, "header must give d and r")),
    };
    let permutation = lines
        .map(|(idx, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(path, idx + 1, format!("invalid index {l:?}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    FeatureGrouping::new(permutation, d, r, seed)
}
