mod common;

use std::sync::Arc;

use common::oracles::monoexp_grid_search;
use t2boot::kernel::{build_kernel, forward_signal};
use t2boot::rng::seeded;
use t2boot::scalar::fit_monoexponential;
use t2boot::schedule::{schedule_preset, EchoSignal};
use t2boot::synth::{add_noise, NoiseModel};
use t2boot::{T2Distribution, T2Grid};

#[test]
fn noisy_fits_match_grid_search() {
    let te: Vec<f64> = (1..=32).map(|i| i as f64 * 7.9).collect();
    let clean = EchoSignal::new(te.clone(), te.iter().map(|t| (-t / 80.0).exp()).collect()).unwrap();
    let mut rng = seeded(30);
    for draw in 0..1000 {
        let noisy = add_noise(&clean, 30.0, NoiseModel::Gaussian, &mut rng).unwrap();
        let f = fit_monoexponential(&noisy).unwrap();
        let (t2, m0) = monoexp_grid_search(&te, &noisy.amplitudes, (20.0, 300.0), (0.5, 1.5));
        assert!((f.t2_ms / t2 - 1.0).abs() <= 0.005, "draw {draw}: {} vs {t2}", f.t2_ms);
        assert!((f.m0 / m0 - 1.0).abs() <= 0.005, "draw {draw}: {} vs {m0}", f.m0);
    }
}

#[test]
fn single_component_epg_signal_gives_its_t2() {
    let grid = Arc::new(T2Grid::default_log());
    let k = build_kernel(&schedule_preset("retest_7p9").unwrap(), &grid).unwrap();
    for j in [20, 35, 50] {
        let s = forward_signal(&k, &T2Distribution::dirac(&grid, j), 1.0).unwrap();
        let f = fit_monoexponential(&s).unwrap();
        assert!((f.t2_ms / grid.values()[j] - 1.0).abs() < 1e-6);
    }
}
