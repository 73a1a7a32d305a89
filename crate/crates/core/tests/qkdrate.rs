use approx::assert_relative_eq;
use proptest::prelude::*;
use wsqkd_core::qkdrate::{
    binary_entropy, calibrate_e_detector, dead_time_throughput, decoy_bounds, eta_total, gain_and_qber,
    gllp_rate, link_performance, secure_rate_from_observed, sweep_link_performance, DetectorParams,
    SourceParams, SystemParams,
};
use wsqkd_core::Execution;

fn det(dead_time_us: f64) -> DetectorParams {
    DetectorParams {
        dead_time_us,
        ..DetectorParams::default()
    }
}

#[test]
fn dead_time_reference_value() {
    // 3.17e5 / (1 + 3.17e5 * 5e-6)
    assert_relative_eq!(dead_time_throughput(3.17e5, 5.0), 122_630.560_928_433, max_relative = 1e-12);
    assert_eq!(dead_time_throughput(3.17e5, 0.0), 3.17e5);
}

#[test]
fn table_secure_rates_from_observed_sifted() {
    let src = SourceParams::default();
    let sys = SystemParams::default();
    let rows = [
        (7.24, 5.0, 31.00, 2.92, 4.91),
        (8.78, 10.0, 17.64, 2.84, 2.02),
        (10.79, 25.0, 8.16, 2.78, 1.82),
        (14.77, 50.0, 3.83, 3.76, 0.41),
    ];
    for (att, tau, sifted, qber, secure) in rows {
        let r = secure_rate_from_observed(sifted * 1e3, qber / 100.0, att, &src, &det(tau), &sys).unwrap() / 1e3;
        let ratio = r / secure;
        assert!((0.5..=2.0).contains(&ratio), "{att} dB: {r:.3} vs {secure}");
    }
    let a2r2b = secure_rate_from_observed(31e3, 0.0292, 7.24, &src, &det(5.0), &sys).unwrap() / 1e3;
    assert!((a2r2b / 4.91 - 1.0).abs() <= 0.25, "{a2r2b}");
}

#[test]
fn unreachable_qber_gives_no_key() {
    let r = secure_rate_from_observed(1e4, 0.5, 7.24, &SourceParams::default(), &det(0.0), &SystemParams::default()).unwrap();
    assert_eq!(r, 0.0);
}

#[test]
fn sweep_matches_pointwise_and_strategy() {
    let atts: Vec<f64> = (0..40).map(|i| i as f64).collect();
    let (src, d, sys) = (SourceParams::default(), det(5.0), SystemParams::default());
    let par = sweep_link_performance(&atts, &src, &d, &sys, Execution::Parallel);
    let seq = sweep_link_performance(&atts, &src, &d, &sys, Execution::Sequential);
    assert_eq!(par, seq);
    assert_eq!(par[7].as_ref().unwrap(), &link_performance(7.0, &src, &d, &sys).unwrap());
}

#[test]
fn bad_parameters_are_errors() {
    let src = SourceParams {
        nu: 0.7,
        ..SourceParams::default()
    };
    assert!(link_performance(5.0, &src, &det(0.0), &SystemParams::default()).is_err());
    assert!(link_performance(-1.0, &SourceParams::default(), &det(0.0), &SystemParams::default()).is_err());
    assert!(binary_entropy(1.5).is_err());
}

proptest! {
    #[test]
    fn gain_grows_with_transmittance(i in 0.01f64..1.0, eta in 0.0f64..0.5, step in 1e-4f64..0.1, y0 in 0.0f64..1e-4) {
        let (q1, _) = gain_and_qber(i, eta, y0, 0.01);
        let (q2, _) = gain_and_qber(i, eta + step, y0, 0.01);
        prop_assert!(q2 > q1);
    }

    #[test]
    fn qber_stays_between_misalignment_and_half(eta in 1e-6f64..0.5, y0 in 0.0f64..1e-3, e_det in 0.0f64..0.5) {
        let (_, e) = gain_and_qber(0.6, eta, y0, e_det);
        prop_assert!(e >= e_det.min(0.5) - 1e-12 && e <= 0.5 + 1e-12);
    }

    #[test]
    fn key_rate_falls_with_attenuation(a in 0.0f64..30.0, step in 0.5f64..5.0) {
        let src = SourceParams::default();
        let sys = SystemParams::default();
        let r1 = link_performance(a, &src, &det(0.0), &sys).unwrap().r_per_pulse;
        let r2 = link_performance(a + step, &src, &det(0.0), &sys).unwrap().r_per_pulse;
        prop_assert!(r2 <= r1);
    }

    #[test]
    fn gllp_rate_is_monotone(q_mu in 1e-4f64..0.1, e in 0.0f64..0.2, de in 1e-4f64..0.05, q1 in 0.0f64..0.05) {
        let lo = gllp_rate(0.5, q_mu, e + de, q1, 0.05, 1.22);
        let hi = gllp_rate(0.5, q_mu, e, q1, 0.05, 1.22);
        prop_assert!(hi >= lo);
        prop_assert!(gllp_rate(0.5, q_mu, e, q1 * 1.1, 0.05, 1.22) >= hi);
        prop_assert!(hi >= 0.0);
    }

    #[test]
    fn dead_time_never_exceeds_either_limit(r in 0.0f64..1e8, tau in 1e-3f64..100.0) {
        let out = dead_time_throughput(r, tau);
        prop_assert!(out <= r * (1.0 + 1e-12));
        prop_assert!(out <= 1.0 / (tau * 1e-6) * (1.0 + 1e-12));
    }

    #[test]
    fn calibrated_e_det_reproduces_qber(att in 0.0f64..20.0, target in 0.01f64..0.1) {
        let src = SourceParams::default();
        let d = det(0.0);
        if let Ok(e_det) = calibrate_e_detector(target, att, &src, &d) {
            let (_, e) = gain_and_qber(src.mu, eta_total(att, &d), d.dark_per_gate, e_det);
            prop_assert!((e - target).abs() < 1e-12);
        }
    }

    #[test]
    fn decoy_bounds_are_sound(log_eta in -4.0f64..-1.0, y0 in 0.0f64..1e-4, e_det in 0.0f64..0.05) {
        let eta = 10f64.powf(log_eta);
        let (mu, nu) = (0.6, 0.2);
        let (q_mu, e_mu) = gain_and_qber(mu, eta, y0, e_det);
        let (q_nu, e_nu) = gain_and_qber(nu, eta, y0, e_det);
        let b = decoy_bounds(q_mu, q_nu, e_mu, e_nu, mu, nu, y0).unwrap();
        let y1 = y0 + eta;
        let e1 = (0.5 * y0 + e_det * eta) / y1;
        prop_assert!(b.y1_lower <= y1 + 1e-12);
        prop_assert!(b.e1_upper >= e1 - 1e-12);
    }
}
