//! Targeting scorers. Every estimator is backed by [`fit_gbm`] and exposes
//! a per-row score where a higher value means "treat earlier".
//!
//! Converted-data estimators (IPC, retrospective) never read a row with
//! `conversion = 0`. CRVTW, RDT and the meta-learners use every row.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::boosting::{fit_gbm, GbmConfig, GbmModel};
use crate::data_model::{converted_subset, ensure_valid, UpliftDataset};
use crate::error::{Result, UpliftError};
use crate::transforms::{crvtw_transform, ipc_transform, rdt_targets};

/// Default bound for probabilities produced by least-squares fits on {0,1}.
pub const DEFAULT_CLIP: f64 = 0.001;
const DENOMINATOR_FLOOR: f64 = 1e-9;
const MIN_ROWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Ipc,
    Retrospective,
    RetrospectiveFull,
    Crvtw,
    Rdt,
    SLearner,
    TLearner,
    XLearner,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Ipc,
        Method::Retrospective,
        Method::RetrospectiveFull,
        Method::Crvtw,
        Method::Rdt,
        Method::SLearner,
        Method::TLearner,
        Method::XLearner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ipc => "ipc",
            Method::Retrospective => "retro",
            Method::RetrospectiveFull => "retro-full",
            Method::Crvtw => "crvtw",
            Method::Rdt => "rdt",
            Method::SLearner => "slearner",
            Method::TLearner => "tlearner",
            Method::XLearner => "xlearner",
        }
    }

    pub fn fit(self, dataset: &UpliftDataset, config: &GbmConfig) -> Result<Scorer> {
        match self {
            Method::Ipc => fit_ipc(dataset, config),
            Method::Retrospective => fit_retrospective(dataset, config, RetroMode::Simplified),
            Method::RetrospectiveFull => fit_retrospective(dataset, config, RetroMode::Full),
            Method::Crvtw => fit_crvtw(dataset, config),
            Method::Rdt => fit_rdt(dataset, config),
            Method::SLearner => fit_meta(dataset, config, MetaKind::S),
            Method::TLearner => fit_meta(dataset, config, MetaKind::T),
            Method::XLearner => fit_meta(dataset, config, MetaKind::X),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = UpliftError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UpliftError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RetroMode {
    /// Rank by `S(x) = Pr(T=1 | x, C=1)` alone.
    #[default]
    Simplified,
    /// Conversion effect per unit of profit loss, using per-arm mean profits.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetaKind {
    S,
    T,
    X,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Propensity {
    Constant(f64),
    Model(GbmModel),
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Direct(GbmModel),
    Retrospective {
        model: GbmModel,
        mode: RetroMode,
        mean_profit_control: f64,
        mean_profit_treated: f64,
    },
    Rdt(GbmModel),
    SLearner(GbmModel),
    TLearner {
        treated: GbmModel,
        control: GbmModel,
    },
    XLearner {
        effect_treated: GbmModel,
        effect_control: GbmModel,
        propensity: Propensity,
    },
}

/// A fitted estimator. Immutable; scoring is pure.
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    method: Method,
    n_features: usize,
    clip: f64,
    fitted: Fitted,
}

impl Scorer {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Replaces the probability clip used by retrospective, RDT and X-learner scores.
    pub fn with_clip(mut self, clip: f64) -> Self {
        assert!(clip > 0.0 && clip < 0.5, "clip must be in (0, 0.5)");
        self.clip = clip;
        self
    }

    fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.clip, 1.0 - self.clip)
    }

    pub fn score(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.n_features {
            return Err(UpliftError::WidthMismatch {
                expected: self.n_features,
                got: features.ncols(),
            });
        }
        Ok(match &self.fitted {
            Fitted::Direct(m) => m.predict(features)?,
            Fitted::Retrospective {
                model,
                mode,
                mean_profit_control,
                mean_profit_treated,
            } => {
                let s = model.predict(features)?.into_iter().map(|p| self.clamp(p));
                match mode {
                    RetroMode::Simplified => s.collect(),
                    RetroMode::Full => s
                        .map(|s| {
                            let mut den = (1.0 - s) * mean_profit_control - s * mean_profit_treated;
                            if den.abs() < DENOMINATOR_FLOOR {
                                den = DENOMINATOR_FLOOR.copysign(den);
                            }
                            (2.0 * s - 1.0) / den
                        })
                        .collect(),
                }
            }
            Fitted::Rdt(m) => m
                .predict(features)?
                .into_iter()
                .map(|p| 2.0 * self.clamp(p) - 1.0)
                .collect(),
            Fitted::SLearner(m) => {
                let on = m.predict(with_treatment(features, 1.0).view())?;
                let off = m.predict(with_treatment(features, 0.0).view())?;
                on.iter().zip(&off).map(|(a, b)| a - b).collect()
            }
            Fitted::TLearner { treated, control } => {
                let a = treated.predict(features)?;
                let b = control.predict(features)?;
                a.iter().zip(&b).map(|(a, b)| a - b).collect()
            }
            Fitted::XLearner {
                effect_treated,
                effect_control,
                propensity,
            } => {
                let g1 = effect_treated.predict(features)?;
                let g0 = effect_control.predict(features)?;
                let e: Vec<f64> = match propensity {
                    Propensity::Constant(e) => vec![*e; features.nrows()],
                    Propensity::Model(m) => m
                        .predict(features)?
                        .into_iter()
                        .map(|p| self.clamp(p))
                        .collect(),
                };
                (0..g1.len())
                    .map(|i| e[i] * g0[i] + (1.0 - e[i]) * g1[i])
                    .collect()
            }
        })
    }
}

fn with_treatment(features: ArrayView2<'_, f64>, t: f64) -> Array2<f64> {
    let col = Array2::from_elem((features.nrows(), 1), t);
    concatenate(Axis(1), &[features, col.view()]).expect("row counts match")
}

fn scorer(method: Method, dataset: &UpliftDataset, fitted: Fitted) -> Scorer {
    Scorer {
        method,
        n_features: dataset.feature_count(),
        clip: DEFAULT_CLIP,
        fitted,
    }
}

fn require_rows(got: usize) -> Result<()> {
    if got < MIN_ROWS {
        Err(UpliftError::TooFewRows {
            needed: MIN_ROWS,
            got,
        })
    } else {
        Ok(())
    }
}

/// One regression on the IPC-transformed converted rows.
pub fn fit_ipc(dataset: &UpliftDataset, config: &GbmConfig) -> Result<Scorer> {
    let z = ipc_transform(dataset)?;
    require_rows(z.len())?;
    let model = fit_gbm(z.features.view(), &z.targets, config)?;
    Ok(scorer(Method::Ipc, dataset, Fitted::Direct(model)))
}

/// Fits `S(x) = Pr(T=1 | x, C=1)` on converted rows.
pub fn fit_retrospective(dataset: &UpliftDataset, config: &GbmConfig, mode: RetroMode) -> Result<Scorer> {
    ensure_valid(dataset)?;
    let converted = converted_subset(dataset);
    require_rows(converted.len())?;
    let mean_profit = |t: u8| {
        let v: Vec<f64> = converted
            .rows()
            .iter()
            .filter(|r| r.treatment == t)
            .map(|r| r.profit)
            .collect();
        if v.is_empty() {
            Err(UpliftError::EmptyArm(t))
        } else {
            Ok(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    let mean_profit_control = mean_profit(0)?;
    let mean_profit_treated = mean_profit(1)?;
    let labels: Vec<f64> = converted.rows().iter().map(|r| r.treatment as f64).collect();
    let model = fit_gbm(converted.feature_matrix().view(), &labels, config)?;
    let method = match mode {
        RetroMode::Simplified => Method::Retrospective,
        RetroMode::Full => Method::RetrospectiveFull,
    };
    Ok(scorer(
        method,
        dataset,
        Fitted::Retrospective {
            model,
            mode,
            mean_profit_control,
            mean_profit_treated,
        },
    ))
}

pub fn fit_crvtw(dataset: &UpliftDataset, config: &GbmConfig) -> Result<Scorer> {
    let z = crvtw_transform(dataset)?;
    require_rows(z.len())?;
    let model = fit_gbm(z.features.view(), &z.targets, config)?;
    Ok(scorer(Method::Crvtw, dataset, Fitted::Direct(model)))
}

pub fn fit_rdt(dataset: &UpliftDataset, config: &GbmConfig) -> Result<Scorer> {
    let z = rdt_targets(dataset)?;
    require_rows(z.len())?;
    let model = fit_gbm(z.features.view(), &z.targets, config)?;
    Ok(scorer(Method::Rdt, dataset, Fitted::Rdt(model)))
}

/// S-, T- or X-learner on profit over all rows.
pub fn fit_meta(dataset: &UpliftDataset, config: &GbmConfig, kind: MetaKind) -> Result<Scorer> {
    ensure_valid(dataset)?;
    let arm = |t: u8| -> Result<UpliftDataset> {
        let idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.rows()[i].treatment == t)
            .collect();
        if idx.is_empty() {
            return Err(UpliftError::EmptyArm(t));
        }
        require_rows(idx.len())?;
        Ok(dataset.subset(&idx))
    };
    let treated = arm(1)?;
    let control = arm(0)?;

    match kind {
        MetaKind::S => {
            let x = dataset.feature_matrix();
            let t = Array2::from_shape_fn((dataset.len(), 1), |(i, _)| {
                dataset.rows()[i].treatment as f64
            });
            let xt = concatenate(Axis(1), &[x.view(), t.view()]).expect("row counts match");
            let model = fit_gbm(xt.view(), &dataset.profits(), config)?;
            Ok(scorer(Method::SLearner, dataset, Fitted::SLearner(model)))
        }
        MetaKind::T => {
            let (f1, f0) = fit_arms(&treated, &control, config)?;
            Ok(scorer(
                Method::TLearner,
                dataset,
                Fitted::TLearner {
                    treated: f1,
                    control: f0,
                },
            ))
        }
        MetaKind::X => {
            let (f1, f0) = fit_arms(&treated, &control, config)?;
            let x1 = treated.feature_matrix();
            let x0 = control.feature_matrix();
            let d1: Vec<f64> = f0
                .predict(x1.view())?
                .iter()
                .zip(treated.rows())
                .map(|(mu0, r)| r.profit - mu0)
                .collect();
            let d0: Vec<f64> = f1
                .predict(x0.view())?
                .iter()
                .zip(control.rows())
                .map(|(mu1, r)| mu1 - r.profit)
                .collect();
            let effect_treated = fit_gbm(x1.view(), &d1, config)?;
            let effect_control = fit_gbm(x0.view(), &d0, config)?;

            let e0 = dataset.rows()[0].propensity;
            let propensity = if dataset.rows().iter().all(|r| r.propensity == e0) {
                Propensity::Constant(e0)
            } else {
                let e: Vec<f64> = dataset.rows().iter().map(|r| r.propensity).collect();
                Propensity::Model(fit_gbm(dataset.feature_matrix().view(), &e, config)?)
            };
            Ok(scorer(
                Method::XLearner,
                dataset,
                Fitted::XLearner {
                    effect_treated,
                    effect_control,
                    propensity,
                },
            ))
        }
    }
}

fn fit_arms(
    treated: &UpliftDataset,
    control: &UpliftDataset,
    config: &GbmConfig,
) -> Result<(GbmModel, GbmModel)> {
    let f1 = fit_gbm(treated.feature_matrix().view(), &treated.profits(), config)?;
    let f0 = fit_gbm(control.feature_matrix().view(), &control.profits(), config)?;
    Ok((f1, f0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::fixtures::{replicate, six_rows};
    use crate::data_model::UpliftRow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn six_rows_x1000() -> UpliftDataset {
        replicate(&six_rows(), 1000)
    }

    fn score_at_one(s: &Scorer) -> f64 {
        let x = Array2::from_elem((1, 1), 1.0);
        s.score(x.view()).unwrap()[0]
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("rlearner".parse::<Method>(), Err(UpliftError::UnknownMethod(_))));
    }

    #[test]
    fn six_rows_ipc_is_four() {
        let s = fit_ipc(&six_rows_x1000(), &GbmConfig::default()).unwrap();
        assert!((score_at_one(&s) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn six_rows_retrospective() {
        let d = six_rows_x1000();
        let full = fit_retrospective(&d, &GbmConfig::default(), RetroMode::Full).unwrap();
        assert!((score_at_one(&full) + 1.0 / 6.0).abs() < 1e-3);
        let simple = fit_retrospective(&d, &GbmConfig::default(), RetroMode::Simplified).unwrap();
        assert!((score_at_one(&simple) - 2.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn six_rows_crvtw_and_rdt() {
        let d = six_rows_x1000();
        let c = fit_crvtw(&d, &GbmConfig::default()).unwrap();
        assert!((score_at_one(&c) - 2.0).abs() < 1e-6);
        let r = fit_rdt(&d, &GbmConfig::default()).unwrap();
        assert!((score_at_one(&r) - 1.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn six_rows_meta_learners() {
        let d = six_rows_x1000();
        for kind in [MetaKind::T, MetaKind::X] {
            let s = fit_meta(&d, &GbmConfig::default(), kind).unwrap();
            let v = score_at_one(&s);
            assert!((v - 2.0).abs() < 0.05, "{kind:?}: {v}");
        }
        // the S-learner reaches the arm gap through shrunken treatment splits
        // and early stopping halts it on validation noise
        let s = fit_meta(&d, &GbmConfig::default(), MetaKind::S).unwrap();
        assert!((score_at_one(&s) - 2.0).abs() < 0.3);
    }

    #[test]
    fn score_shape_and_constancy() {
        let d = six_rows_x1000();
        let x = d.feature_matrix();
        for m in Method::ALL {
            let s = m.fit(&d, &GbmConfig::default()).unwrap();
            let v = s.score(x.view()).unwrap();
            assert_eq!(v.len(), d.len());
            assert!(v.iter().all(|a| a.is_finite()));
            assert!(v.iter().all(|a| *a == v[0]), "{m} not constant");
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let s = fit_ipc(&six_rows_x1000(), &GbmConfig::default()).unwrap();
        let x = Array2::zeros((3, 2));
        assert!(matches!(s.score(x.view()), Err(UpliftError::WidthMismatch { .. })));
    }

    #[test]
    fn precondition_errors() {
        let cfg = GbmConfig::default();
        assert!(matches!(fit_ipc(&six_rows(), &cfg), Err(UpliftError::TooFewRows { .. })));
        let only_treated: Vec<UpliftRow> = six_rows_x1000()
            .rows()
            .iter()
            .filter(|r| r.treatment == 1)
            .cloned()
            .collect();
        let d = UpliftDataset::new(1, only_treated).unwrap();
        assert!(matches!(
            fit_retrospective(&d, &cfg, RetroMode::Full),
            Err(UpliftError::EmptyArm(0))
        ));
        assert!(matches!(fit_meta(&d, &cfg, MetaKind::T), Err(UpliftError::EmptyArm(0))));
        let unbalanced = UpliftDataset::new(
            1,
            six_rows_x1000()
                .rows()
                .iter()
                .map(|r| UpliftRow { propensity: 0.4, ..r.clone() })
                .collect(),
        )
        .unwrap();
        assert!(fit_rdt(&unbalanced, &cfg).is_err());
    }

    fn noisy_null(n: usize, seed: u64) -> UpliftDataset {
        // profit and conversion independent of treatment, two features
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                let x0: f64 = rng.random();
                let x1: f64 = rng.random();
                let c = (rng.random::<f64>() < 0.3 + 0.3 * x0) as u8;
                let profit = if c == 1 { 5.0 + 10.0 * x1 + rng.random::<f64>() } else { 0.0 };
                UpliftRow {
                    features: vec![x0, x1],
                    treatment: rng.random_bool(0.5) as u8,
                    conversion: c,
                    profit,
                    propensity: 0.5,
                }
            })
            .collect();
        UpliftDataset::new(2, rows).unwrap()
    }

    #[test]
    fn zero_effect_scores_are_small() {
        let d = noisy_null(20_000, 3);
        let x = d.feature_matrix();
        for m in [Method::Ipc, Method::TLearner, Method::SLearner, Method::XLearner] {
            let s = m.fit(&d, &GbmConfig::default()).unwrap();
            let v = s.score(x.view()).unwrap();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            // effect scale: mean converted profit ~ 10.5; IPC targets ~ ±21
            let bound = if m == Method::Ipc { 1.5 } else { 0.5 };
            assert!(mean.abs() < bound, "{m}: {mean}");
        }
        let rdt = fit_rdt(&d, &GbmConfig::default()).unwrap();
        let v = rdt.score(x.view()).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.05, "rdt {mean}");
    }

    #[test]
    fn constant_rdt_target_hits_clip() {
        let rows: Vec<UpliftRow> = six_rows_x1000()
            .rows()
            .iter()
            .map(|r| UpliftRow { treatment: 1, conversion: 1, profit: 3.0, ..r.clone() })
            .collect();
        let d = UpliftDataset::new(1, rows).unwrap();
        let s = fit_rdt(&d, &GbmConfig::default()).unwrap();
        assert!((score_at_one(&s) - (2.0 * 0.999 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn crvtw_scales_with_profit() {
        let d = noisy_null(5000, 9);
        let scaled = UpliftDataset::new(
            2,
            d.rows().iter().map(|r| UpliftRow { profit: r.profit * 10.0, ..r.clone() }).collect(),
        )
        .unwrap();
        let cfg = GbmConfig { tol: 0.0, ..GbmConfig::default() };
        let x = d.feature_matrix();
        let a = fit_crvtw(&d, &cfg).unwrap().score(x.view()).unwrap();
        let b = fit_crvtw(&scaled, &cfg).unwrap().score(x.view()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((v - 10.0 * u).abs() <= 0.01 * (10.0 * u).abs().max(1e-9), "{u} {v}");
        }
    }

    #[test]
    fn ipc_scores_scale_exactly_with_profit() {
        let d = noisy_null(8000, 4);
        let cfg = GbmConfig { tol: 0.0, ..GbmConfig::default() };
        let x = d.feature_matrix();
        let base = fit_ipc(&d, &cfg).unwrap().score(x.view()).unwrap();
        for lambda in [0.25, 2.0, 8.0] {
            let scaled = UpliftDataset::new(
                2,
                d.rows().iter().map(|r| UpliftRow { profit: r.profit * lambda, ..r.clone() }).collect(),
            )
            .unwrap();
            let s = fit_ipc(&scaled, &cfg).unwrap().score(x.view()).unwrap();
            for (u, v) in base.iter().zip(&s) {
                assert_eq!(*v, u * lambda);
            }
        }
    }

    #[test]
    fn retrospective_simplified_ignores_profit_values() {
        let d = noisy_null(8000, 5);
        let x = d.feature_matrix();
        let a = fit_retrospective(&d, &GbmConfig::default(), RetroMode::Simplified).unwrap();
        let flat = UpliftDataset::new(
            2,
            d.rows()
                .iter()
                .map(|r| UpliftRow { profit: if r.conversion == 1 { 1.0 } else { 0.0 }, ..r.clone() })
                .collect(),
        )
        .unwrap();
        let b = fit_retrospective(&flat, &GbmConfig::default(), RetroMode::Simplified).unwrap();
        assert_eq!(a.score(x.view()).unwrap(), b.score(x.view()).unwrap());
    }

    #[test]
    fn x_learner_with_varying_propensity() {
        let d = noisy_null(4000, 6);
        let rows: Vec<UpliftRow> = d
            .rows()
            .iter()
            .map(|r| UpliftRow { propensity: 0.3 + 0.4 * r.features[0], ..r.clone() })
            .collect();
        let d = UpliftDataset::new(2, rows).unwrap();
        let s = fit_meta(&d, &GbmConfig::default(), MetaKind::X).unwrap();
        let v = s.score(d.feature_matrix().view()).unwrap();
        assert!(v.iter().all(|a| a.is_finite()));
    }
}
