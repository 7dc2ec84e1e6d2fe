use std::io::Write;

use ipc_uplift::data_model::write_csv;
use ipc_uplift::{fit_meta, generate_campaign, load_csv, CampaignConfig, GbmConfig, MetaKind, UpliftDataset, UpliftRow};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn x_learner_tracks_t_learner_in_one_context() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let rows: Vec<UpliftRow> = (0..100_000)
        .map(|_| {
            let t = rng.random_bool(0.5) as u8;
            let c = rng.random_bool(if t == 1 { 0.06 } else { 0.04 }) as u8;
            let profit = if c == 1 { rng.random_range(1.0..30.0) * if t == 1 { 0.9 } else { 1.0 } } else { 0.0 };
            UpliftRow {
                features: vec![1.0, 0.0],
                treatment: t,
                conversion: c,
                profit,
                propensity: 0.5,
            }
        })
        .collect();
    let d = UpliftDataset::new(2, rows).unwrap();
    let mean = |t: u8| {
        let v: Vec<f64> = d.rows().iter().filter(|r| r.treatment == t).map(|r| r.profit).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let direct = mean(1) - mean(0);

    let cfg = GbmConfig::default();
    let x = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
    let t = fit_meta(&d, &cfg, MetaKind::T).unwrap().score(x.view()).unwrap()[0];
    let xl = fit_meta(&d, &cfg, MetaKind::X).unwrap().score(x.view()).unwrap()[0];
    assert!((t - direct).abs() <= 0.05 * direct.abs(), "t {t} direct {direct}");
    assert!((xl - t).abs() <= 0.05 * t.abs(), "x {xl} t {t}");
}

/// Per decile of true IPC and per arm: realized conversions against the
/// summed true probabilities, and log revenue of conversions against the
/// generating location `log E[R|x] − σ²/2`. Both are held to four standard
/// errors. Raw mean profit is not compared directly: with log-variance ≈ 2.8
/// its sample mean and standard error are too skewed at ~300 conversions per
/// decile arm for a fixed bound to mean anything.
#[test]
fn ground_truth_matches_realized_data_by_decile() {
    let cfg = CampaignConfig::default();
    let (d, truth) = generate_campaign(&cfg, Some(42)).unwrap();
    let sigma2 = cfg.noise_std_ratio * cfg.noise_std_ratio;
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| truth.ipc[a].total_cmp(&truth.ipc[b]));
    let mut worst: f64 = 0.0;
    for decile in order.chunks(d.len() / 10) {
        for t in [0u8, 1] {
            let idx: Vec<usize> = decile.iter().copied().filter(|&i| d.rows()[i].treatment == t).collect();
            let p = |i: usize| if t == 1 { truth.p_treated[i] } else { truth.p_control[i] };
            let expected: f64 = idx.iter().map(|&i| p(i)).sum();
            let var: f64 = idx.iter().map(|&i| p(i) * (1.0 - p(i))).sum();
            let realized = idx.iter().filter(|&&i| d.rows()[i].conversion == 1).count() as f64;
            worst = worst.max(((realized - expected) / var.sqrt()).abs());

            let margin = if t == 1 { 1.0 - cfg.discount } else { 1.0 };
            let resid: Vec<f64> = idx
                .iter()
                .filter(|&&i| d.rows()[i].conversion == 1)
                .map(|&i| (d.rows()[i].profit / margin).ln() - truth.expected_revenue[i].ln() + sigma2 / 2.0)
                .collect();
            let mean = resid.iter().sum::<f64>() / resid.len() as f64;
            worst = worst.max((mean / (sigma2 / resid.len() as f64).sqrt()).abs());
        }
    }
    assert!(worst < 4.0, "worst decile z-score {worst}");
}

#[test]
fn dataset_survives_a_file_round_trip() {
    let cfg = CampaignConfig {
        n: 2000,
        ..CampaignConfig::default()
    };
    let (d, _) = generate_campaign(&cfg, Some(8)).unwrap();
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write_csv(&d, &mut file).unwrap();
    file.flush().unwrap();
    let back = load_csv(file.path(), None).unwrap();
    assert_eq!(back, d);
    assert_eq!(back.fingerprint(), d.fingerprint());
}
