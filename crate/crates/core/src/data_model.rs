//! Campaign dataset schema, CSV ingest, validation and fold splitting.
//!
//! A row is one treatment unit `(x, t, c, π, e)` where `e = Pr(T=1 | x)`.
//! Costs are response-dependent: a row that did not convert carries zero
//! profit.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, UpliftError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftRow {
    pub features: Vec<f64>,
    pub treatment: u8,
    pub conversion: u8,
    pub profit: f64,
    /// `Pr(T=1 | x)`.
    pub propensity: f64,
}

impl UpliftRow {
    pub fn is_treated(&self) -> bool {
        self.treatment == 1
    }

    pub fn is_converted(&self) -> bool {
        self.conversion == 1
    }

    /// Probability of the arm this row actually received.
    pub fn arm_propensity(&self) -> f64 {
        if self.is_treated() {
            self.propensity
        } else {
            1.0 - self.propensity
        }
    }
}

/// Immutable, ordered collection of [`UpliftRow`]s sharing one feature width.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpliftDataset {
    rows: Vec<UpliftRow>,
    feature_count: usize,
}

impl UpliftDataset {
    /// Fails if any row's feature vector has the wrong width.
    pub fn new(feature_count: usize, rows: Vec<UpliftRow>) -> Result<Self> {
        if let Some((i, row)) = rows
            .iter()
            .enumerate()
            .find(|(_, r)| r.features.len() != feature_count)
        {
            return Err(UpliftError::InvalidData(format!(
                "row {i} has {} features, expected {feature_count}",
                row.features.len()
            )));
        }
        Ok(Self {
            rows,
            feature_count,
        })
    }

    pub fn rows(&self) -> &[UpliftRow] {
        &self.rows
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize]) -> UpliftDataset {
        UpliftDataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            feature_count: self.feature_count,
        }
    }

    /// Row-major feature matrix.
    pub fn feature_matrix(&self) -> Array2<f64> {
        let p = self.feature_count;
        let mut m = Array2::zeros((self.rows.len(), p));
        for (i, row) in self.rows.iter().enumerate() {
            for (j, &v) in row.features.iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        m
    }

    pub fn treatments(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.treatment).collect()
    }

    pub fn profits(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.profit).collect()
    }

    pub fn count_arm(&self, treatment: u8) -> usize {
        self.rows.iter().filter(|r| r.treatment == treatment).count()
    }

    /// Realized conversion rate of one arm, `None` if the arm is empty.
    pub fn conversion_rate(&self, treatment: u8) -> Option<f64> {
        let (n, c) = self
            .rows
            .iter()
            .filter(|r| r.treatment == treatment)
            .fold((0usize, 0usize), |(n, c), r| (n + 1, c + r.conversion as usize));
        (n > 0).then(|| c as f64 / n as f64)
    }

    /// SHA-256 over the exact bit patterns of every cell, in row order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.feature_count as u64).to_le_bytes());
        for r in &self.rows {
            for v in &r.features {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update([r.treatment, r.conversion]);
            h.update(r.profit.to_bits().to_le_bytes());
            h.update(r.propensity.to_bits().to_le_bytes());
        }
        h.finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Loads `feature_0..feature_{p-1}, treatment, conversion, profit[, propensity]`.
///
/// Columns are matched by name and any other column is ignored. When the
/// propensity column is absent every row gets `default_propensity`.
pub fn load_csv(path: impl AsRef<Path>, default_propensity: Option<f64>) -> Result<UpliftDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| UpliftError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, default_propensity)
}

pub fn read_csv<R: Read>(reader: R, default_propensity: Option<f64>) -> Result<UpliftDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);

    let mut feature_cols = Vec::new();
    while let Some(idx) = find(&format!("feature_{}", feature_cols.len())) {
        feature_cols.push(idx);
    }
    let require = |name: &str| find(name).ok_or_else(|| UpliftError::MissingColumn(name.into()));
    let t_col = require("treatment")?;
    let c_col = require("conversion")?;
    let p_col = require("profit")?;
    let e_col = find("propensity");
    if e_col.is_none() && default_propensity.is_none() {
        return Err(UpliftError::MissingPropensity);
    }

    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        if record.len() != headers.len() {
            return Err(UpliftError::ColumnCount {
                row: row_no,
                expected: headers.len(),
                found: record.len(),
            });
        }
        let num = |col: usize| -> Result<f64> {
            let cell = record[col].trim();
            cell.parse::<f64>().map_err(|_| UpliftError::MalformedCell {
                row: row_no,
                column: headers[col].to_string(),
                value: cell.to_string(),
            })
        };
        let flag = |col: usize| -> Result<u8> {
            let v = num(col)?;
            if v == 0.0 || v == 1.0 {
                Ok(v as u8)
            } else {
                Err(UpliftError::MalformedCell {
                    row: row_no,
                    column: headers[col].to_string(),
                    value: record[col].trim().to_string(),
                })
            }
        };
        let features = feature_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        let propensity = match e_col {
            Some(c) => num(c)?,
            None => default_propensity.unwrap_or_default(),
        };
        rows.push(UpliftRow {
            features,
            treatment: flag(t_col)?,
            conversion: flag(c_col)?,
            profit: num(p_col)?,
            propensity,
        });
    }
    UpliftDataset::new(feature_cols.len(), rows)
}

pub fn write_csv<W: Write>(dataset: &UpliftDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..dataset.feature_count())
        .map(|j| format!("feature_{j}"))
        .collect();
    header.extend(["treatment", "conversion", "profit", "propensity"].map(String::from));
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for row in dataset.rows() {
        record.clear();
        record.extend(row.features.iter().map(|v| v.to_string()));
        record.push(row.treatment.to_string());
        record.push(row.conversion.to_string());
        record.push(row.profit.to_string());
        record.push(row.propensity.to_string());
        w.write_record(&record)?;
    }
    w.flush().map_err(|source| UpliftError::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// `C = 0` requires `π = 0`.
    ResponseDependentCost,
    PropensityOpenInterval,
    BinaryTreatment,
    BinaryConversion,
    FiniteValues,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::ResponseDependentCost => "non-converted row has non-zero profit",
            Rule::PropensityOpenInterval => "propensity outside the open interval (0, 1)",
            Rule::BinaryTreatment => "treatment is not 0 or 1",
            Rule::BinaryConversion => "conversion is not 0 or 1",
            Rule::FiniteValues => "non-finite feature or profit",
        };
        f.write_str(s)
    }
}

/// A broken row invariant; `row` is the 0-based dataset index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub row: usize,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.row, self.rule)
    }
}

pub fn validate(dataset: &UpliftDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, r) in dataset.rows().iter().enumerate() {
        let mut push = |rule| out.push(Violation { row: i, rule });
        if r.treatment > 1 {
            push(Rule::BinaryTreatment);
        }
        if r.conversion > 1 {
            push(Rule::BinaryConversion);
        }
        if !(r.propensity > 0.0 && r.propensity < 1.0) {
            push(Rule::PropensityOpenInterval);
        }
        if !r.profit.is_finite() || r.features.iter().any(|v| !v.is_finite()) {
            push(Rule::FiniteValues);
        }
        if r.conversion == 0 && r.profit != 0.0 {
            push(Rule::ResponseDependentCost);
        }
    }
    out
}

/// Returns `Err` listing every violation, for call sites that need valid data.
pub fn ensure_valid(dataset: &UpliftDataset) -> Result<()> {
    let v = validate(dataset);
    if v.is_empty() {
        return Ok(());
    }
    let shown: Vec<String> = v.iter().take(5).map(|v| v.to_string()).collect();
    Err(UpliftError::InvalidData(format!(
        "{} violation(s): {}{}",
        v.len(),
        shown.join("; "),
        if v.len() > 5 { "; ..." } else { "" }
    )))
}

/// Rows with `conversion = 1`, order preserved.
pub fn converted_subset(dataset: &UpliftDataset) -> UpliftDataset {
    UpliftDataset {
        rows: dataset
            .rows()
            .iter()
            .filter(|r| r.is_converted())
            .cloned()
            .collect(),
        feature_count: dataset.feature_count(),
    }
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_index: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl FoldAssignment {
    /// `(train, test)` row indices for fold `fold`, both ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &f) in self.fold_index.iter().enumerate() {
            if f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_index {
            sizes[f] += 1;
        }
        sizes
    }
}

fn stratum(row: &UpliftRow) -> usize {
    (row.treatment as usize) * 2 + row.conversion as usize
}

fn strata(dataset: &UpliftDataset) -> [Vec<usize>; 4] {
    let mut s: [Vec<usize>; 4] = Default::default();
    for (i, r) in dataset.rows().iter().enumerate() {
        s[stratum(r).min(3)].push(i);
    }
    s
}

/// Stratified (treatment × conversion) k-fold assignment.
///
/// Each stratum is shuffled with its own seeded stream and dealt round-robin.
/// The starting fold of each stratum continues where the previous stratum
/// stopped, so overall fold sizes also differ by at most one.
pub fn make_folds(dataset: &UpliftDataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(UpliftError::InvalidConfig(format!("k must be >= 2, got {k}")));
    }
    let strata = strata(dataset);
    for (s, members) in strata.iter().enumerate() {
        if !members.is_empty() && members.len() < k {
            return Err(UpliftError::StratumTooSmall {
                treatment: (s / 2) as u8,
                conversion: (s % 2) as u8,
                size: members.len(),
                k,
            });
        }
    }
    let mut fold_index = vec![0; dataset.len()];
    let mut offset = 0;
    for (s, members) in strata.iter().enumerate() {
        let mut members = members.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        members.shuffle(&mut rng);
        for (pos, &row) in members.iter().enumerate() {
            fold_index[row] = (offset + pos) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(FoldAssignment {
        fold_index,
        k,
        seed,
    })
}

/// Stratified single train/test split with `test_fraction` of each stratum held out.
pub fn make_holdout(
    dataset: &UpliftDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(UpliftError::InvalidConfig(format!(
            "holdout fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut in_test = vec![false; dataset.len()];
    for (s, members) in strata(dataset).iter().enumerate() {
        let mut members = members.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        for &row in &members[..n_test] {
            in_test[row] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| in_test[i]);
    if train.is_empty() || test.is_empty() {
        return Err(UpliftError::TooFewRows {
            needed: 2,
            got: dataset.len(),
        });
    }
    Ok((train, test))
}
