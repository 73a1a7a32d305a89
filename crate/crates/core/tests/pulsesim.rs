use wsqkd_core::pulsesim::{
    dead_time_empirical, simulate_crosstalk_mix, simulate_link, simulate_link_with, IntensityClass, SimConfig,
};
use wsqkd_core::qkdrate::{dead_time_throughput, eta_total, gain_and_qber};
use wsqkd_core::xtalk::delta_qber;
use wsqkd_core::Execution;

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn grid() -> Vec<SimConfig> {
    let mut out = Vec::new();
    for att in [0.0, 7.24, 14.77, 25.0] {
        for (y0, e_det) in [(2e-5, 0.01), (1e-4, 0.03), (1e-6, 0.005)] {
            let mut cfg = SimConfig::new(1_000_000, 0, att);
            cfg.detector.dark_per_gate = y0;
            cfg.system.e_detector = e_det;
            out.push(cfg);
        }
    }
    out
}

#[test]
fn identical_across_thread_counts() {
    let mut cfg = SimConfig::new(700_000, 42, 7.24);
    cfg.detector.dead_time_us = 5.0;
    cfg.chi_injection = Some(0.05);
    cfg.record_timestamps = true;
    let reference = simulate_link_with(&cfg, Execution::Sequential).unwrap();
    for threads in [1, 2, 4] {
        let r = in_pool(threads, || simulate_link_with(&cfg, Execution::Parallel).unwrap());
        assert_eq!(r, reference, "{threads} threads");
    }
}

#[test]
fn counts_and_errors_are_consistent() {
    let mut cfg = SimConfig::new(500_000, 3, 3.0);
    cfg.detector.dead_time_us = 1.0;
    let r = simulate_link(&cfg).unwrap();
    let sent: u64 = r.classes.iter().map(|c| c.sent).sum();
    assert_eq!(sent, cfg.n_pulses);
    for c in &r.classes {
        assert!(c.clicks <= c.sent && c.errors <= c.clicks);
        let p = c.clicks as f64 / c.sent as f64;
        assert!((c.gain_se - (p * (1.0 - p) / c.sent as f64).sqrt()).abs() < 1e-15);
    }
    assert!(r.registered_clicks <= r.classes.iter().map(|c| c.clicks).sum());
    assert!(r.detection_rate_hz_effective <= r.detection_rate_hz_raw);
}

#[test]
fn empirical_matches_analytic_on_most_seeds() {
    let mut within = 0;
    let mut total = 0;
    for base in grid() {
        let eta = eta_total(base.attenuation_db, &base.detector);
        for seed in 0..20 {
            let cfg = SimConfig { seed, ..base.clone() };
            let r = simulate_link(&cfg).unwrap();
            for (class, intensity) in [(IntensityClass::Signal, cfg.source.mu), (IntensityClass::Decoy, cfg.source.nu)] {
                let (q, e) = gain_and_qber(intensity, eta, cfg.detector.dark_per_gate, cfg.system.e_detector);
                let s = r.class(class);
                total += 2;
                within += usize::from((s.gain - q).abs() <= 3.0 * s.gain_se);
                within += usize::from((s.qber - e).abs() <= 3.0 * s.qber_se.max(1e-300));
            }
        }
    }
    let share = within as f64 / total as f64;
    assert!(share >= 0.95, "{within}/{total}");
}

#[test]
fn dead_time_without_dead_time() {
    let d = dead_time_empirical(3.17e5, 0.0, 10_000_000, 8, 2e7, Execution::Parallel).unwrap();
    assert_eq!(d.registered, d.raw_clicks);
    assert!((d.effective_rate_hz - 3.17e5).abs() <= 3.0 * d.rate_se_hz);
}

#[test]
fn dead_time_matches_throughput_formula() {
    let d = dead_time_empirical(3.17e5, 5.0, 10_000_000, 9, 2e7, Execution::Parallel).unwrap();
    let expect = dead_time_throughput(3.17e5, 5.0);
    assert!((d.effective_rate_hz / expect - 1.0).abs() < 0.02, "{}", d.effective_rate_hz);
}

#[test]
fn saturated_detector_approaches_inverse_dead_time() {
    let d = dead_time_empirical(1e7, 10.0, 5_000_000, 10, 2e7, Execution::Parallel).unwrap();
    assert!(d.effective_rate_hz > 0.95e5 && d.effective_rate_hz < 1e5, "{}", d.effective_rate_hz);
}

#[test]
fn no_injection_means_no_penalty() {
    let mut cfg = SimConfig::new(1_000_000, 11, 7.24);
    cfg.chi_injection = Some(0.0);
    let m = simulate_crosstalk_mix(&cfg).unwrap();
    assert_eq!(m.injected, 0);
    assert_eq!(m.delta_qber, 0.0);
}

#[test]
fn mixing_stays_below_half_chi() {
    for chi in [0.001, 0.01, 0.1] {
        let mut cfg = SimConfig::new(2_000_000, 12, 7.24);
        cfg.detector.dark_per_gate = 0.0;
        cfg.system.e_detector = 0.03;
        cfg.chi_injection = Some(chi);
        let m = simulate_crosstalk_mix(&cfg).unwrap();
        assert!(m.delta_qber < chi / 2.0, "chi {chi}: {}", m.delta_qber);
        let model = delta_qber(chi, 0.03).unwrap();
        assert!((m.delta_qber - model).abs() <= 4.0 * m.delta_se, "chi {chi}: {} vs {model}", m.delta_qber);
    }
}

#[test]
fn zero_pulses_rejected() {
    assert!(simulate_link(&SimConfig::new(0, 1, 1.0)).is_err());
    assert!(dead_time_empirical(1e5, 1.0, 0, 1, 2e7, Execution::Sequential).is_err());
}
