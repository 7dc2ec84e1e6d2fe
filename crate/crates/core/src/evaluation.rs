//! Profit Qini curves and the cross-validated benchmark harness.
//!
//! Rows are ranked by score (descending, ties in input order). At each
//! prefix of size `k` the adjusted incremental profit is
//!
//! ```text
//! V(k) = Σ_{i≤k, t=1} π_i − (N_T(k) / N_C(k)) · Σ_{i≤k, t=0} π_i
//! ```
//!
//! with the control term taken as zero while `N_C(k) = 0`. The coefficient is
//! the trapezoidal area under `V` against the targeted fraction minus the
//! area under the chord to `(1, V(1))`, divided by `|V(1)|` when non-zero.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boosting::GbmConfig;
use crate::data_model::{make_folds, make_holdout, UpliftDataset};
use crate::error::{Result, UpliftError};
use crate::estimators::Method;
use crate::synthetic::GroundTruth;

const DOWNSAMPLE_ABOVE: usize = 10_000;
const TARGET_POINTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QiniPoint {
    pub fraction: f64,
    pub value: f64,
    /// `value / |V(1)|`; `None` when `V(1) = 0`.
    pub normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QiniCurve {
    /// Plot points, starting at `(0, 0)` and ending at fraction 1.
    pub points: Vec<QiniPoint>,
    pub n_test: usize,
    /// `V` at every prefix `0..=n`, used for the coefficient.
    values: Vec<f64>,
}

impl QiniCurve {
    pub fn endpoint(&self) -> f64 {
        *self.values.last().expect("curve has at least the origin")
    }

    /// Full-resolution prefix values `V(0..=n)`.
    pub fn prefix_values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.endpoint() != 0.0
    }
}

pub fn qini_curve(scores: &[f64], treatment: &[u8], profit: &[f64]) -> Result<QiniCurve> {
    let n = scores.len();
    if treatment.len() != n || profit.len() != n {
        return Err(UpliftError::InvalidData(format!(
            "length mismatch: {} scores, {} treatments, {} profits",
            n,
            treatment.len(),
            profit.len()
        )));
    }
    if n < 2 {
        return Err(UpliftError::TooFewRows { needed: 2, got: n });
    }
    for arm in [0u8, 1] {
        if !treatment.contains(&arm) {
            return Err(UpliftError::EmptyArm(arm));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal scores keep input order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut values = Vec::with_capacity(n + 1);
    values.push(0.0);
    let (mut nt, mut nc) = (0usize, 0usize);
    let (mut st, mut sc) = (0.0, 0.0);
    for &i in &order {
        if treatment[i] == 1 {
            nt += 1;
            st += profit[i];
        } else {
            nc += 1;
            sc += profit[i];
        }
        let control = if nc == 0 { 0.0 } else { nt as f64 / nc as f64 * sc };
        values.push(st - control);
    }

    let end = values[n];
    let point = |k: usize| QiniPoint {
        fraction: k as f64 / n as f64,
        value: values[k],
        normalized: (end != 0.0).then(|| values[k] / end.abs()),
    };
    let step = if n > DOWNSAMPLE_ABOVE {
        n.div_ceil(TARGET_POINTS)
    } else {
        1
    };
    let mut points: Vec<QiniPoint> = (0..=n).step_by(step).map(point).collect();
    if points.last().is_some_and(|p| p.fraction < 1.0) {
        points.push(point(n));
    }
    Ok(QiniCurve {
        points,
        n_test: n,
        values,
    })
}

/// Area between the curve and the random-targeting chord, normalized by
/// `|V(1)|` when that is non-zero (see [`QiniCurve::is_normalized`]).
pub fn qini_coefficient(curve: &QiniCurve) -> f64 {
    let v = &curve.values;
    let n = v.len() - 1;
    let end = v[n];
    let area: f64 = v.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / n as f64;
    let excess = area - 0.5 * end;
    if end != 0.0 {
        excess / end.abs()
    } else {
        excess
    }
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum BenchMethod {
    Fitted(Method),
    /// Seeded uniform scores.
    Random,
    /// True IPC from the generator.
    Oracle,
}

impl BenchMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BenchMethod::Fitted(m) => m.name(),
            BenchMethod::Random => "random",
            BenchMethod::Oracle => "oracle",
        }
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMethod {
    type Err = UpliftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(BenchMethod::Random),
            "oracle" => Ok(BenchMethod::Oracle),
            other => other.parse().map(BenchMethod::Fitted),
        }
    }
}

impl From<BenchMethod> for String {
    fn from(m: BenchMethod) -> String {
        m.name().to_string()
    }
}

impl TryFrom<String> for BenchMethod {
    type Error = UpliftError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    KFold(usize),
    /// Single stratified split holding out this fraction for testing.
    Holdout(f64),
}

impl Split {
    pub fn folds(&self, dataset: &UpliftDataset, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        match *self {
            Split::KFold(k) => {
                let a = make_folds(dataset, k, seed)?;
                Ok((0..k).map(|f| a.split(f)).collect())
            }
            Split::Holdout(frac) => Ok(vec![make_holdout(dataset, frac, seed)?]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub qini: Option<f64>,
    /// False when `V(1) = 0` and the coefficient is unnormalized.
    pub normalized: bool,
    /// Wall-clock fit + score time.
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: BenchMethod,
    pub folds: Vec<FoldResult>,
}

impl MethodReport {
    pub fn coefficients(&self) -> Vec<f64> {
        self.folds.iter().filter_map(|f| f.qini).collect()
    }

    pub fn runtimes(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.seconds).collect()
    }

    pub fn succeeded(&self) -> bool {
        self.folds.iter().any(|f| f.error.is_none())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodCurve {
    pub method: BenchMethod,
    pub curve: QiniCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dataset_fingerprint: String,
    pub n_rows: usize,
    pub split: Split,
    pub seed: u64,
    pub gbm: GbmConfig,
    /// Worker threads available to the learner; folds run one after another.
    pub threads: usize,
    pub methods: Vec<MethodReport>,
    /// Curves of the first fold, for export.
    #[serde(skip)]
    pub curves: Vec<MethodCurve>,
}

impl BenchReport {
    pub fn method(&self, m: BenchMethod) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    /// `method,fraction,value,normalized_value` rows for the first fold.
    pub fn write_curves_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["method", "fraction", "value", "normalized_value"])?;
        for mc in &self.curves {
            for p in &mc.curve.points {
                w.write_record([
                    mc.method.name().to_string(),
                    p.fraction.to_string(),
                    p.value.to_string(),
                    p.normalized.map(|v| v.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        w.flush().map_err(|source| UpliftError::Io {
            path: "<csv writer>".into(),
            source,
        })
    }
}

fn random_scores(n: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn score_fold(
    method: BenchMethod,
    dataset: &UpliftDataset,
    train: &[usize],
    test: &[usize],
    fold: usize,
    seed: u64,
    config: &GbmConfig,
    truth: Option<&GroundTruth>,
) -> Result<Vec<f64>> {
    match method {
        BenchMethod::Fitted(m) => {
            let scorer = m.fit(&dataset.subset(train), config)?;
            scorer.score(dataset.subset(test).feature_matrix().view())
        }
        BenchMethod::Random => Ok(random_scores(test.len(), seed, fold as u64)),
        BenchMethod::Oracle => {
            let truth = truth.ok_or_else(|| {
                UpliftError::InvalidConfig("oracle method needs ground truth".into())
            })?;
            Ok(test.iter().map(|&i| truth.ipc[i]).collect())
        }
    }
}

/// Fits and scores every method on every fold.
///
/// `random` is always added, and `oracle` too when `truth` is given. A
/// failing method is recorded in its fold result; the run continues.
pub fn run_benchmark(
    dataset: &UpliftDataset,
    methods: &[BenchMethod],
    split: Split,
    seed: u64,
    config: &GbmConfig,
    truth: Option<&GroundTruth>,
) -> Result<BenchReport> {
    if methods.is_empty() {
        return Err(UpliftError::InvalidConfig("no methods selected".into()));
    }
    if let Some(t) = truth {
        if t.len() != dataset.len() {
            return Err(UpliftError::InvalidData(format!(
                "ground truth has {} rows, dataset {}",
                t.len(),
                dataset.len()
            )));
        }
    } else if methods.contains(&BenchMethod::Oracle) {
        return Err(UpliftError::InvalidConfig("oracle method needs ground truth".into()));
    }
    config.validate()?;
    let mut methods = methods.to_vec();
    if !methods.contains(&BenchMethod::Random) {
        methods.push(BenchMethod::Random);
    }
    if truth.is_some() && !methods.contains(&BenchMethod::Oracle) {
        methods.push(BenchMethod::Oracle);
    }
    let methods = methods.as_slice();

    let folds = split.folds(dataset, seed)?;
    let mut reports: Vec<MethodReport> = methods
        .iter()
        .map(|&method| MethodReport {
            method,
            folds: Vec::with_capacity(folds.len()),
        })
        .collect();
    let mut curves = Vec::new();

    for (fold, (train, test)) in folds.iter().enumerate() {
        let treatment: Vec<u8> = test.iter().map(|&i| dataset.rows()[i].treatment).collect();
        let profit: Vec<f64> = test.iter().map(|&i| dataset.rows()[i].profit).collect();
        for (report, &method) in reports.iter_mut().zip(methods) {
            let start = Instant::now();
            let scores = score_fold(method, dataset, train, test, fold, seed, config, truth);
            let seconds = start.elapsed().as_secs_f64().max(1e-9);
            let result = scores.and_then(|s| qini_curve(&s, &treatment, &profit));
            report.folds.push(match result {
                Ok(curve) => {
                    let r = FoldResult {
                        fold,
                        qini: Some(qini_coefficient(&curve)),
                        normalized: curve.is_normalized(),
                        seconds,
                        error: None,
                    };
                    if fold == 0 {
                        curves.push(MethodCurve { method, curve });
                    }
                    r
                }
                Err(e) => FoldResult {
                    fold,
                    qini: None,
                    normalized: false,
                    seconds,
                    error: Some(e.to_string()),
                },
            });
        }
    }

    Ok(BenchReport {
        dataset_fingerprint: dataset.fingerprint(),
        n_rows: dataset.len(),
        split,
        seed,
        gbm: config.clone(),
        threads: rayon::current_num_threads(),
        methods: reports,
        curves,
    })
}

/// Mean Qini coefficient of seeded random scoring over the folds of `split`,
/// once per random seed `0..n_seeds`. Folds are fixed by `seed`.
pub fn random_null(dataset: &UpliftDataset, split: Split, seed: u64, n_seeds: u64) -> Result<Vec<f64>> {
    let folds = split.folds(dataset, seed)?;
    (0..n_seeds)
        .map(|s| {
            let mut total = 0.0;
            for (fold, (_, test)) in folds.iter().enumerate() {
                let t: Vec<u8> = test.iter().map(|&i| dataset.rows()[i].treatment).collect();
                let p: Vec<f64> = test.iter().map(|&i| dataset.rows()[i].profit).collect();
                let scores = random_scores(test.len(), s, fold as u64);
                total += qini_coefficient(&qini_curve(&scores, &t, &p)?);
            }
            Ok(total / folds.len() as f64)
        })
        .collect()
}

/// Sample mean and (n−1) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
