//! Synthetic percentage-discount coupon campaign.
//!
//! Features are independent standard normals laid out as
//! `[uplift | informative | irrelevant]`. Conversion follows
//!
//! ```text
//! Pr(C=1 | x, t) = logistic(b0 + w·Σ x_informative + w·Σ x_uplift + t·s·Σ x_uplift)
//! ```
//!
//! with `w = 1`, `s = uplift_strength` and `b0` calibrated so the control arm
//! converts at `control_conversion_rate`. Converted rows earn
//! `R = exp(Σ_{j∈S_R} x_j + ε)`, `ε ~ N(0, noise_std_ratio²)`, and treated
//! conversions pay the discount: `π = R·(1 − d)`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_model::{UpliftDataset, UpliftRow};
use crate::error::{Result, UpliftError};

/// Weight of every informative and uplift feature in the conversion logit.
pub const CONVERSION_WEIGHT: f64 = 1.0;
const INTERCEPT_BRACKET: (f64, f64) = (-30.0, 30.0);
const RATE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub n: usize,
    pub propensity: f64,
    pub control_conversion_rate: f64,
    pub n_uplift_features: usize,
    pub n_informative_features: usize,
    pub n_irrelevant_features: usize,
    /// Feature indices whose values enter the log revenue.
    pub revenue_feature_indices: Vec<usize>,
    /// Revenue noise std as a multiple of the (unit) feature std.
    pub noise_std_ratio: f64,
    pub discount: f64,
    pub uplift_strength: f64,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            n: 200_000,
            propensity: 0.5,
            control_conversion_rate: 0.03,
            n_uplift_features: 3,
            n_informative_features: 5,
            n_irrelevant_features: 5,
            // first uplift feature and first informative feature
            revenue_feature_indices: vec![0, 3],
            noise_std_ratio: 0.9,
            discount: 0.10,
            uplift_strength: 0.3,
            seed: 0,
        }
    }
}

impl CampaignConfig {
    pub fn n_features(&self) -> usize {
        self.n_uplift_features + self.n_informative_features + self.n_irrelevant_features
    }

    fn signal_features(&self) -> usize {
        self.n_uplift_features + self.n_informative_features
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(UpliftError::InvalidConfig(m));
        if !(self.propensity > 0.0 && self.propensity < 1.0) {
            return bad(format!("propensity must be in (0, 1), got {}", self.propensity));
        }
        if !(self.control_conversion_rate > 0.0 && self.control_conversion_rate < 1.0) {
            return bad(format!(
                "control_conversion_rate must be in (0, 1), got {}",
                self.control_conversion_rate
            ));
        }
        if let Some(j) = self
            .revenue_feature_indices
            .iter()
            .find(|&&j| j >= self.signal_features())
        {
            return bad(format!("revenue feature {j} is not an uplift or informative feature"));
        }
        if !(self.noise_std_ratio >= 0.0 && self.noise_std_ratio.is_finite()) {
            return bad(format!("noise_std_ratio must be >= 0, got {}", self.noise_std_ratio));
        }
        if !(self.discount >= 0.0 && self.discount < 1.0) {
            return bad(format!("discount must be in [0, 1), got {}", self.discount));
        }
        if !(self.uplift_strength >= 0.0 && self.uplift_strength.is_finite()) {
            return bad(format!("uplift_strength must be >= 0, got {}", self.uplift_strength));
        }
        Ok(())
    }
}

/// Per-row generating quantities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub p_control: Vec<f64>,
    pub p_treated: Vec<f64>,
    /// `E[R | x, C=1]`, the lognormal mean.
    pub expected_revenue: Vec<f64>,
    pub cate_conversion: Vec<f64>,
    pub cate_profit: Vec<f64>,
    pub ipc: Vec<f64>,
    /// Propensity used to mix the arms in `Pr(C=1 | x)`.
    pub propensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    ProfitCate,
    Ipc,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.ipc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ipc.is_empty()
    }

    /// `Pr(C=1 | x)` mixed over both arms.
    pub fn conversion_probability(&self, i: usize) -> f64 {
        self.propensity * self.p_treated[i] + (1.0 - self.propensity) * self.p_control[i]
    }

    pub fn subset(&self, indices: &[usize]) -> GroundTruth {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect();
        GroundTruth {
            p_control: pick(&self.p_control),
            p_treated: pick(&self.p_treated),
            expected_revenue: pick(&self.expected_revenue),
            cate_conversion: pick(&self.cate_conversion),
            cate_profit: pick(&self.cate_profit),
            ipc: pick(&self.ipc),
            propensity: self.propensity,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "p_control",
            "p_treated",
            "expected_revenue",
            "cate_conversion",
            "cate_profit",
            "ipc",
        ])?;
        for i in 0..self.len() {
            w.write_record(
                [
                    self.p_control[i],
                    self.p_treated[i],
                    self.expected_revenue[i],
                    self.cate_conversion[i],
                    self.cate_profit[i],
                    self.ipc[i],
                ]
                .map(|v| v.to_string()),
            )?;
        }
        w.flush().map_err(|source| UpliftError::Io {
            path: "<csv writer>".into(),
            source,
        })
    }

    /// Reads the columns written by [`GroundTruth::write_csv`].
    pub fn read_csv<R: std::io::Read>(reader: R, propensity: f64) -> Result<GroundTruth> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| UpliftError::MissingColumn(name.into()))
        };
        let cols = [
            col("p_control")?,
            col("p_treated")?,
            col("expected_revenue")?,
            col("cate_conversion")?,
            col("cate_profit")?,
            col("ipc")?,
        ];
        let mut truth = GroundTruth {
            propensity,
            ..Default::default()
        };
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut vals = [0.0; 6];
            for (k, &c) in cols.iter().enumerate() {
                vals[k] = rec[c].trim().parse().map_err(|_| UpliftError::MalformedCell {
                    row: i + 1,
                    column: headers[c].to_string(),
                    value: rec[c].to_string(),
                })?;
            }
            truth.p_control.push(vals[0]);
            truth.p_treated.push(vals[1]);
            truth.expected_revenue.push(vals[2]);
            truth.cate_conversion.push(vals[3]);
            truth.cate_profit.push(vals[4]);
            truth.ipc.push(vals[5]);
        }
        Ok(truth)
    }
}

pub fn oracle_scores(truth: &GroundTruth, kind: OracleKind) -> Vec<f64> {
    match kind {
        OracleKind::ProfitCate => truth.cate_profit.clone(),
        OracleKind::Ipc => truth.ipc.clone(),
    }
}

fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `E[logistic(b0 + σ·Z)]` for `Z ~ N(0, 1)`, composite Simpson on ±12σ.
fn mean_logistic(b0: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return logistic(b0);
    }
    const STEPS: usize = 4000;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / STEPS as f64;
    let f = |z: f64| logistic(b0 + sigma * z) * (-0.5 * z * z).exp();
    let mut acc = f(lo) + f(hi);
    for k in 1..STEPS {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + k as f64 * h);
    }
    acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

/// Intercept that makes the expected control conversion rate hit the target.
///
/// The control logit minus `b0` is a sum of independent standard normals with
/// unit weights, so the expectation reduces to a one-dimensional Gaussian
/// integral, evaluated by quadrature and solved by bisection.
pub fn solve_intercept(config: &CampaignConfig) -> Result<f64> {
    config.validate()?;
    let sigma = CONVERSION_WEIGHT * (config.signal_features() as f64).sqrt();
    let target = config.control_conversion_rate;
    let (mut lo, mut hi) = INTERCEPT_BRACKET;
    let rate = |b: f64| mean_logistic(b, sigma);
    if !(rate(lo) < target && rate(hi) > target) {
        return Err(UpliftError::Calibration(format!(
            "no intercept in [{lo}, {hi}] reaches rate {target} (achievable {:.6}..{:.6})",
            rate(lo),
            rate(hi)
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let b0 = 0.5 * (lo + hi);
    let achieved = rate(b0);
    if (achieved - target).abs() > RATE_TOLERANCE {
        return Err(UpliftError::Calibration(format!(
            "bisection stopped at rate {achieved:.6}, target {target}"
        )));
    }
    Ok(b0)
}

/// Draws the campaign. `seed` overrides `config.seed` when given.
pub fn generate_campaign(
    config: &CampaignConfig,
    seed: Option<u64>,
) -> Result<(UpliftDataset, GroundTruth)> {
    let b0 = solve_intercept(config)?;
    let seed = seed.unwrap_or(config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = config.n_features();
    let n_up = config.n_uplift_features;
    let n_sig = config.signal_features();
    let sigma_eps = config.noise_std_ratio;
    let e = config.propensity;
    let d = config.discount;

    let mut rows = Vec::with_capacity(config.n);
    let mut truth = GroundTruth {
        propensity: e,
        ..Default::default()
    };
    for _ in 0..config.n {
        let features: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let u_treat: f64 = rng.random();
        let u_conv: f64 = rng.random();
        let eps: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_eps;

        let uplift_sum: f64 = features[..n_up].iter().sum();
        let base = b0 + CONVERSION_WEIGHT * features[..n_sig].iter().sum::<f64>();
        let p0 = logistic(base);
        let p1 = logistic(base + config.uplift_strength * uplift_sum);
        let log_rev: f64 = config.revenue_feature_indices.iter().map(|&j| features[j]).sum();
        let expected_revenue = (log_rev + 0.5 * sigma_eps * sigma_eps).exp();

        let treatment = (u_treat < e) as u8;
        let p_arm = if treatment == 1 { p1 } else { p0 };
        let conversion = (u_conv < p_arm) as u8;
        let profit = if conversion == 1 {
            let revenue = (log_rev + eps).exp();
            if treatment == 1 {
                revenue * (1.0 - d)
            } else {
                revenue
            }
        } else {
            0.0
        };

        let cate_profit = expected_revenue * (p1 * (1.0 - d) - p0);
        let p_conv = e * p1 + (1.0 - e) * p0;
        truth.p_control.push(p0);
        truth.p_treated.push(p1);
        truth.expected_revenue.push(expected_revenue);
        truth.cate_conversion.push(p1 - p0);
        truth.cate_profit.push(cate_profit);
        truth.ipc.push(cate_profit / p_conv);

        rows.push(UpliftRow {
            features,
            treatment,
            conversion,
            profit,
            propensity: e,
        });
    }
    Ok((UpliftDataset::new(p, rows)?, truth))
}
