mod common;

use std::sync::Arc;

use common::oracles::nnls_by_enumeration;
use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use t2boot::kernel::build_kernel;
use t2boot::nnls::{augmented_system, choose_lambda, kkt_violation, nnls, nnls_solve, NnlsConfig};
use t2boot::rng::seeded;
use t2boot::schedule::schedule_preset;
use t2boot::synth::{generate_dataset, GenerationConfig};
use t2boot::T2Grid;

#[test]
fn small_instances_match_exhaustive_active_sets() {
    let mut rng = seeded(99);
    for case in 0..100 {
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let y: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        let a = Array2::from_shape_fn((5, 4), |(i, j)| rows[i][j]);
        let (x, _) = nnls(&a, &y, 100, 1e-12).unwrap();
        let obj: f64 = (0..5)
            .map(|i| ((0..4).map(|j| a[(i, j)] * x[j]).sum::<f64>() - y[i]).powi(2))
            .sum();
        let (_, best) = nnls_by_enumeration(&rows, &y);
        assert!((obj - best).abs() <= 1e-8, "case {case}: {obj} vs {best}");
        assert!(x.iter().all(|&v| v >= 0.0));
        assert!(kkt_violation(&a, &y, &x) <= 1e-8);
    }
}

#[test]
fn noisy_samples_satisfy_kkt_and_lambda_rule() {
    let cfg = GenerationConfig {
        count: 30,
        snr_range: (25.0, 25.0),
        ..Default::default()
    };
    let data = generate_dataset(&cfg, 5).unwrap();
    let grid = Arc::new(T2Grid::default_log());
    let k = build_kernel(&schedule_preset("retest_7p9").unwrap(), &grid).unwrap();
    let base = NnlsConfig::default();
    let candidates = [1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.5];
    for (n, s) in data.samples.iter().enumerate() {
        let fit = nnls_solve(&s.signal_noisy, &k, &base).unwrap();
        let s0 = s.signal_noisy.amplitudes[0];
        let y: Vec<f64> = s.signal_noisy.amplitudes.iter().map(|v| v / s0).collect();
        let (a, b) = augmented_system(&k, &y, &base);
        let x: Vec<f64> = fit.coefficients.iter().map(|v| v / s0).collect();
        assert!(kkt_violation(&a, &b, &x) <= 1e-8);
        assert!(fit.kkt <= 1e-8);

        if n < 10 {
            let chosen = choose_lambda(&s.signal_noisy, &k, &candidates, &base).unwrap();
            let r = |l: f64| {
                nnls_solve(&s.signal_noisy, &k, &NnlsConfig { lambda: l, ..base.clone() })
                    .unwrap()
                    .residual_norm
            };
            let r0 = r(0.0);
            let ok: Vec<f64> = candidates.iter().copied().filter(|&l| r(l) <= 1.02 * r0).collect();
            let expect = ok.last().copied().unwrap_or(candidates[0]);
            assert_eq!(chosen, expect);
        }
    }
}
