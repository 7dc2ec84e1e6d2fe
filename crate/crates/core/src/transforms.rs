//! Response transformations that turn uplift estimation into one regression.
//!
//! * IPC: converted rows only, `z = π / Pr(T=1|x)` for treated and
//!   `z = -π / Pr(T=0|x)` for control. Its conditional mean given `x` and
//!   `C = 1` is the incremental profit per conversion.
//! * CRVTW: the same rule applied to every row; non-converted rows have
//!   `π = 0` and so `z = 0`.
//! * RDT: class-variable transform on the sign of profit at balanced
//!   assignment.

use std::io::Write;

use ndarray::Array2;

use crate::data_model::{ensure_valid, UpliftDataset, UpliftRow};
use crate::error::{Result, UpliftError};

#[derive(Debug, Clone, PartialEq)]
pub struct TransformedSet {
    pub features: Array2<f64>,
    pub targets: Vec<f64>,
    /// Index of each sample in the originating dataset, strictly increasing.
    pub source_row_index: Vec<usize>,
}

impl TransformedSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn from_rows<'a>(
        feature_count: usize,
        rows: impl Iterator<Item = (usize, &'a UpliftRow)>,
        target: impl Fn(&UpliftRow) -> f64,
    ) -> Self {
        let mut flat = Vec::new();
        let mut targets = Vec::new();
        let mut source_row_index = Vec::new();
        for (i, row) in rows {
            flat.extend_from_slice(&row.features);
            targets.push(target(row));
            source_row_index.push(i);
        }
        let features = Array2::from_shape_vec((targets.len(), feature_count), flat)
            .expect("rows share the dataset width");
        Self {
            features,
            targets,
            source_row_index,
        }
    }

    /// CSV with `feature_*` columns, `z` and `source_row_index`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let p = self.features.ncols();
        let mut header: Vec<String> = (0..p).map(|j| format!("feature_{j}")).collect();
        header.push("z".into());
        header.push("source_row_index".into());
        w.write_record(&header)?;
        for (i, row) in self.features.rows().into_iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(self.targets[i].to_string());
            rec.push(self.source_row_index[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| UpliftError::Io {
            path: "<csv writer>".into(),
            source,
        })
    }
}

/// Inverse-propensity signed profit of one row.
pub fn ipc_target(row: &UpliftRow) -> f64 {
    if row.is_treated() {
        row.profit / row.propensity
    } else {
        -row.profit / (1.0 - row.propensity)
    }
}

pub fn ipc_transform(dataset: &UpliftDataset) -> Result<TransformedSet> {
    ensure_valid(dataset)?;
    Ok(TransformedSet::from_rows(
        dataset.feature_count(),
        dataset.rows().iter().enumerate().filter(|(_, r)| r.is_converted()),
        ipc_target,
    ))
}

pub fn crvtw_transform(dataset: &UpliftDataset) -> Result<TransformedSet> {
    ensure_valid(dataset)?;
    Ok(TransformedSet::from_rows(
        dataset.feature_count(),
        dataset.rows().iter().enumerate(),
        |r| if r.is_converted() { ipc_target(r) } else { 0.0 },
    ))
}

/// Binary targets: 1 for treated rows with positive profit and control rows
/// without, 0 otherwise. Requires every propensity to be exactly 0.5.
pub fn rdt_targets(dataset: &UpliftDataset) -> Result<TransformedSet> {
    ensure_valid(dataset)?;
    if let Some(i) = dataset.rows().iter().position(|r| r.propensity != 0.5) {
        return Err(UpliftError::InvalidData(format!(
            "RDT needs balanced assignment; row {i} has propensity {}",
            dataset.rows()[i].propensity
        )));
    }
    Ok(TransformedSet::from_rows(
        dataset.feature_count(),
        dataset.rows().iter().enumerate(),
        |r| {
            let gain = r.profit > 0.0;
            if r.is_treated() == gain {
                1.0
            } else {
                0.0
            }
        },
    ))
}
