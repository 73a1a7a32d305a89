//! Analytic decoy-state BB84 model.
//!
//! Poisson source with signal, decoy and (near-)vacuum intensities, threshold
//! detector with efficiency and per-gate dark probability, three-intensity
//! single-photon bounds, the GLLP key rate and a non-paralyzable dead time.
//! Statistical fluctuations of finite data are not modeled.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

/// Error probability of a background click.
pub const E0: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    pub mu: f64,
    pub nu: f64,
    pub extinction_ratio_db: f64,
    /// Signal : decoy : vacuum.
    pub state_ratio: [u32; 3],
    pub pulse_rate_hz: f64,
    pub pulse_width_ps: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        SourceParams {
            mu: 0.6,
            nu: 0.2,
            extinction_ratio_db: 27.0,
            state_ratio: [6, 3, 1],
            pulse_rate_hz: 2.0e7,
            pulse_width_ps: 750.0,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu < self.mu && self.mu.is_finite()) {
            return Err(Error::param("nu", format!("need 0 < nu < mu, got nu={} mu={}", self.nu, self.mu)));
        }
        if self.state_ratio.contains(&0) {
            return Err(Error::param("state_ratio", "ratios must be positive integers"));
        }
        if !(self.pulse_rate_hz > 0.0) {
            return Err(Error::param("pulse_rate_hz", "must be > 0"));
        }
        if !(self.extinction_ratio_db >= 0.0) {
            return Err(Error::param("extinction_ratio_db", "must be >= 0"));
        }
        if !(self.pulse_width_ps > 0.0) {
            return Err(Error::param("pulse_width_ps", "must be > 0"));
        }
        Ok(())
    }

    /// Intensity leaking through the modulator in the vacuum slot.
    pub fn vacuum_intensity(&self) -> f64 {
        self.mu * 10f64.powf(-self.extinction_ratio_db / 10.0)
    }

    pub fn pulse_period_ns(&self) -> f64 {
        1e9 / self.pulse_rate_hz
    }

    /// Probabilities of sending signal, decoy and vacuum.
    pub fn class_probabilities(&self) -> [f64; 3] {
        let total: u32 = self.state_ratio.iter().sum();
        self.state_ratio.map(|r| f64::from(r) / f64::from(total))
    }

    /// Intensities of the signal, decoy and vacuum classes.
    pub fn intensities(&self) -> [f64; 3] {
        [self.mu, self.nu, self.vacuum_intensity()]
    }

    /// Weighted mean photon number over the state mixture.
    pub fn mean_intensity(&self) -> f64 {
        let p = self.class_probabilities();
        let i = self.intensities();
        p.iter().zip(i).map(|(p, i)| p * i).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub dark_per_gate: f64,
    pub gate_ns: f64,
    pub dead_time_us: f64,
    pub max_trigger_hz: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            efficiency: 0.20,
            dark_per_gate: 2e-5,
            gate_ns: 1.0,
            dead_time_us: 0.0,
            max_trigger_hz: 2.0e7,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::param("efficiency", "must lie in (0, 1]"));
        }
        if !(self.dark_per_gate >= 0.0 && self.dark_per_gate < 1.0) {
            return Err(Error::param("dark_per_gate", "must lie in [0, 1)"));
        }
        if !(self.dead_time_us >= 0.0) {
            return Err(Error::param("dead_time_us", "must be >= 0"));
        }
        if !(self.gate_ns > 0.0) {
            return Err(Error::param("gate_ns", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Intrinsic misalignment error of the interferometers.
    pub e_detector: f64,
    /// Error-correction inefficiency.
    pub f_ec: f64,
    pub q_sift: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            e_detector: 0.01,
            f_ec: 1.22,
            q_sift: 0.5,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_detector >= 0.0 && self.e_detector < 0.5) {
            return Err(Error::param("e_detector", "must lie in [0, 0.5)"));
        }
        if !(self.f_ec >= 1.0) {
            return Err(Error::param("f_ec", "must be >= 1"));
        }
        if !(self.q_sift > 0.0 && self.q_sift <= 1.0) {
            return Err(Error::param("q_sift", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyObservables {
    pub q_mu: f64,
    pub q_nu: f64,
    pub y_vac: f64,
    pub e_mu: f64,
    pub e_nu: f64,
    pub eta_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub y1_lower: f64,
    pub e1_upper: f64,
    pub q1_lower: f64,
    /// The raw yield bound was negative and has been set to zero.
    pub y1_clamped: bool,
    /// The raw error bound exceeded 0.5 and has been capped.
    pub e1_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub attenuation_db: f64,
    pub source: SourceParams,
    pub detector: DetectorParams,
    pub system: SystemParams,
    pub observables: DecoyObservables,
    pub y1_lower: f64,
    pub e1_upper: f64,
    pub q1_lower: f64,
    pub y1_clamped: bool,
    pub e1_clamped: bool,
    /// Secure bits per signal clock.
    pub r_per_pulse: f64,
    pub raw_detection_hz: f64,
    pub effective_detection_hz: f64,
    pub sifted_bps: f64,
    pub secure_bps: f64,
    /// Leakage-only yield of the vacuum slot is below the dark count.
    pub vacuum_like: bool,
}

/// `H2(x) = -x log2 x - (1-x) log2 (1-x)`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::param("x", format!("{x} is not a probability")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Probability that a photon launched into a link of `attenuation_db` clicks.
pub fn eta_total(attenuation_db: f64, det: &DetectorParams) -> f64 {
    det.efficiency * 10f64.powf(-attenuation_db / 10.0)
}

/// Per-gate gain and error rate for a Poisson source of `intensity`.
pub fn gain_and_qber(intensity: f64, eta: f64, y0: f64, e_det: f64) -> (f64, f64) {
    let detected = 1.0 - (-eta * intensity).exp();
    let gain = y0 + detected;
    if gain == 0.0 {
        return (0.0, E0);
    }
    (gain, (E0 * y0 + e_det * detected) / gain)
}

/// Gain of the vacuum slot, including the light that leaks through the
/// modulator's finite extinction.
pub fn vacuum_state_yield(src: &SourceParams, eta: f64, y0: f64) -> f64 {
    y0 + 1.0 - (-eta * src.vacuum_intensity()).exp()
}

/// True when the leakage part of the vacuum yield is below the dark count, so
/// the near-vacuum state looks like true vacuum to the detector.
pub fn vacuum_like(src: &SourceParams, eta: f64, det: &DetectorParams) -> bool {
    vacuum_state_yield(src, eta, det.dark_per_gate) - det.dark_per_gate < det.dark_per_gate
}

/// Three-intensity (signal, decoy, vacuum) lower bound on the single-photon
/// yield and upper bound on its error rate.
#[allow(clippy::too_many_arguments)]
pub fn decoy_bounds(
    q_mu: f64,
    q_nu: f64,
    e_mu: f64,
    e_nu: f64,
    mu: f64,
    nu: f64,
    y0: f64,
) -> Result<DecoyBounds> {
    if !(nu > 0.0 && nu < mu) {
        return Err(Error::param("nu", format!("need 0 < nu < mu, got nu={nu} mu={mu}")));
    }
    for (name, q) in [("q_mu", q_mu), ("q_nu", q_nu)] {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::param(name, format!("{q} is not a gain")));
        }
    }
    for (name, e) in [("e_mu", e_mu), ("e_nu", e_nu)] {
        if !(0.0..=1.0).contains(&e) {
            return Err(Error::param(name, format!("{e} is not an error rate")));
        }
    }
    let raw_y1 = mu / (mu * nu - nu * nu)
        * (q_nu * nu.exp()
            - q_mu * mu.exp() * nu * nu / (mu * mu)
            - (mu * mu - nu * nu) / (mu * mu) * y0);
    let y1_clamped = raw_y1 <= 0.0;
    let y1_lower = raw_y1.max(0.0);
    let (e1_upper, e1_clamped) = if y1_clamped {
        (0.5, true)
    } else {
        let e1 = (e_nu * q_nu * nu.exp() - E0 * y0) / (y1_lower * nu);
        if e1 > 0.5 {
            (0.5, true)
        } else {
            (e1.max(0.0), false)
        }
    };
    Ok(DecoyBounds {
        y1_lower,
        e1_upper,
        q1_lower: y1_lower * mu * (-mu).exp(),
        y1_clamped,
        e1_clamped,
    })
}

/// GLLP rate per signal clock, clamped at zero.
pub fn gllp_rate(q_sift: f64, q_mu: f64, e_mu: f64, q1_lower: f64, e1_upper: f64, f_ec: f64) -> f64 {
    let h = |x: f64| binary_entropy(x.clamp(0.0, 1.0)).unwrap_or(1.0);
    let r = q_sift * (-q_mu * f_ec * h(e_mu) + q1_lower * (1.0 - h(e1_upper)));
    r.max(0.0)
}

/// Non-paralyzable dead time: `R / (1 + R tau)`.
pub fn dead_time_throughput(raw_detection_rate_hz: f64, dead_time_us: f64) -> f64 {
    let tau = dead_time_us * 1e-6;
    raw_detection_rate_hz / (1.0 + raw_detection_rate_hz * tau)
}

/// Model observables for a link, as the decoy estimator would see them.
pub fn model_observables(
    attenuation_db: f64,
    src: &SourceParams,
    det: &DetectorParams,
    sys: &SystemParams,
) -> DecoyObservables {
    let eta = eta_total(attenuation_db, det);
    let y0 = det.dark_per_gate;
    let (q_mu, e_mu) = gain_and_qber(src.mu, eta, y0, sys.e_detector);
    let (q_nu, e_nu) = gain_and_qber(src.nu, eta, y0, sys.e_detector);
    DecoyObservables {
        q_mu,
        q_nu,
        y_vac: vacuum_state_yield(src, eta, y0),
        e_mu,
        e_nu,
        eta_total: eta,
    }
}

/// Misalignment error that makes the model's signal QBER equal `target_e_mu`.
pub fn calibrate_e_detector(
    target_e_mu: f64,
    attenuation_db: f64,
    src: &SourceParams,
    det: &DetectorParams,
) -> Result<f64> {
    let eta = eta_total(attenuation_db, det);
    let detected = 1.0 - (-eta * src.mu).exp();
    let gain = det.dark_per_gate + detected;
    if detected <= 0.0 {
        return Err(Error::param("attenuation_db", "no signal reaches the detector"));
    }
    let e_det = (target_e_mu * gain - E0 * det.dark_per_gate) / detected;
    if !(0.0..0.5).contains(&e_det) {
        return Err(Error::param(
            "e_mu",
            format!("QBER {target_e_mu} is not reachable with this dark count (e_det = {e_det})"),
        ));
    }
    Ok(e_det)
}

/// End-to-end analytic performance of one link.
pub fn link_performance(
    attenuation_db: f64,
    src: &SourceParams,
    det: &DetectorParams,
    sys: &SystemParams,
) -> Result<KeyRateReport> {
    src.validate()?;
    det.validate()?;
    sys.validate()?;
    if !(attenuation_db >= 0.0) {
        return Err(Error::param("attenuation_db", format!("{attenuation_db} must be >= 0")));
    }
    let obs = model_observables(attenuation_db, src, det, sys);
    let y0 = det.dark_per_gate;

    // Detector load uses the weighted mean intensity of the whole mixture.
    let mixture_gain = y0 + 1.0 - (-obs.eta_total * src.mean_intensity()).exp();
    let raw_detection_hz = src.pulse_rate_hz * mixture_gain;
    let effective_detection_hz = dead_time_throughput(raw_detection_hz, det.dead_time_us);
    let signal_share = (src.class_probabilities()[0] * obs.q_mu / mixture_gain).min(1.0);
    let sifted_bps = effective_detection_hz * signal_share * sys.q_sift;

    let b = decoy_bounds(obs.q_mu, obs.q_nu, obs.e_mu, obs.e_nu, src.mu, src.nu, y0)?;
    let r_per_pulse = gllp_rate(sys.q_sift, obs.q_mu, obs.e_mu, b.q1_lower, b.e1_upper, sys.f_ec);
    let secure_bps = if obs.q_mu > 0.0 {
        sifted_bps * r_per_pulse / (sys.q_sift * obs.q_mu)
    } else {
        0.0
    };
    Ok(KeyRateReport {
        attenuation_db,
        source: src.clone(),
        detector: det.clone(),
        system: sys.clone(),
        vacuum_like: vacuum_like(src, obs.eta_total, det),
        observables: obs,
        y1_lower: b.y1_lower,
        e1_upper: b.e1_upper,
        q1_lower: b.q1_lower,
        y1_clamped: b.y1_clamped,
        e1_clamped: b.e1_clamped,
        r_per_pulse,
        raw_detection_hz,
        effective_detection_hz,
        sifted_bps,
        secure_bps: secure_bps.min(sifted_bps),
    })
}

/// Secure fraction of the sifted key given model observables.
pub fn secure_fraction(obs: &DecoyObservables, bounds: &DecoyBounds, f_ec: f64) -> f64 {
    if obs.q_mu <= 0.0 {
        return 0.0;
    }
    gllp_rate(1.0, obs.q_mu, obs.e_mu, bounds.q1_lower, bounds.e1_upper, f_ec) / obs.q_mu
}

/// Secure key rate from a measured sifted rate and signal QBER. Decoy
/// observables come from the model at `attenuation_db`, with the misalignment
/// error calibrated so the model reproduces the observed QBER.
pub fn secure_rate_from_observed(
    sifted_bps: f64,
    e_mu_observed: f64,
    attenuation_db: f64,
    src: &SourceParams,
    det: &DetectorParams,
    sys: &SystemParams,
) -> Result<f64> {
    if !(sifted_bps > 0.0) {
        return Err(Error::param("sifted_bps", "must be > 0"));
    }
    if !(0.0..=0.5).contains(&e_mu_observed) {
        return Err(Error::param("e_mu", "must lie in [0, 0.5]"));
    }
    let y0 = det.dark_per_gate;
    // A QBER the model cannot reach (e.g. 0.5) leaves no secure key; the
    // observables still come from the model with the nearest valid e_det.
    let e_det = calibrate_e_detector(e_mu_observed, attenuation_db, src, det)
        .unwrap_or(if e_mu_observed >= 0.25 { 0.5 - 1e-12 } else { 0.0 });
    let sys = SystemParams {
        e_detector: e_det,
        ..sys.clone()
    };
    let mut obs = model_observables(attenuation_db, src, det, &sys);
    obs.e_mu = e_mu_observed;
    let b = decoy_bounds(obs.q_mu, obs.q_nu, obs.e_mu, obs.e_nu, src.mu, src.nu, y0)?;
    Ok(sifted_bps * secure_fraction(&obs, &b, sys.f_ec))
}

/// Extra receiver-side loss that makes the modeled sifted rate equal a
/// measured one. Zero if the model is already at or below the measurement.
pub fn calibrate_receiver_loss_db(
    measured_sifted_bps: f64,
    attenuation_db: f64,
    src: &SourceParams,
    det: &DetectorParams,
    sys: &SystemParams,
) -> Result<f64> {
    let sifted = |extra: f64| -> Result<f64> {
        Ok(link_performance(attenuation_db + extra, src, det, sys)?.sifted_bps)
    };
    if sifted(0.0)? <= measured_sifted_bps {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while sifted(hi)? > measured_sifted_bps {
        hi *= 2.0;
        if hi > 200.0 {
            return Err(Error::param("sifted_bps", "measured rate is not reachable"));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if sifted(mid)? > measured_sifted_bps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// [`link_performance`] over a grid of attenuations.
pub fn sweep_link_performance(
    attenuations_db: &[f64],
    src: &SourceParams,
    det: &DetectorParams,
    sys: &SystemParams,
    exec: Execution,
) -> Vec<Result<KeyRateReport>> {
    exec.map(attenuations_db, |&a| link_performance(a, src, det, sys))
}

/// Fixed-width table using the row labels of a field-test summary.
pub fn report_table(name: &str, r: &KeyRateReport) -> String {
    let mut out = String::new();
    let rows: [(&str, String); 10] = [
        ("Attenuation (dB)", format!("{:.2}", r.attenuation_db)),
        ("Dead-time (us)", format!("{:.0}", r.detector.dead_time_us)),
        ("Signal gain Q_mu", format!("{:.4e}", r.observables.q_mu)),
        ("Decoy gain Q_nu", format!("{:.4e}", r.observables.q_nu)),
        ("Signal QBER (%)", format!("{:.2}", 100.0 * r.observables.e_mu)),
        ("Decoy QBER (%)", format!("{:.2}", 100.0 * r.observables.e_nu)),
        ("Y1 lower", format!("{:.4e}", r.y1_lower)),
        ("e1 upper (%)", format!("{:.2}", 100.0 * r.e1_upper)),
        ("Sifted-key (kbit/s)", format!("{:.2}", r.sifted_bps / 1e3)),
        ("Secure-key (kbit/s)", format!("{:.2}", r.secure_bps / 1e3)),
    ];
    let _ = writeln!(out, "{:<22}{:>14}", "", name);
    for (label, value) in rows {
        let _ = writeln!(out, "{label:<22}{value:>14}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // -0.0292 log2 0.0292 - 0.9708 log2 0.9708, evaluated with mpmath.
        assert_abs_diff_eq!(binary_entropy(0.0292).unwrap(), 0.190_363_894_4, epsilon = 1e-9);
        assert!(binary_entropy(1.5).is_err());
        assert!(binary_entropy(-0.1).is_err());
    }

    #[test]
    fn eta_values() {
        let det = DetectorParams::default();
        assert_relative_eq!(eta_total(7.24, &det), 0.037_759_83, max_relative = 1e-6);
        assert_relative_eq!(eta_total(14.77, &det), 0.006_668_528, max_relative = 1e-6);
        let ideal = DetectorParams {
            efficiency: 1.0,
            ..det
        };
        assert_eq!(eta_total(0.0, &ideal), 1.0);
    }

    #[test]
    fn gain_and_qber_values() {
        assert_eq!(gain_and_qber(0.0, 0.1, 2e-5, 0.01), (2e-5, 0.5));
        let (q, e) = gain_and_qber(0.6, 0.037759, 2e-5, 0.014);
        assert_relative_eq!(q, 0.022_421, max_relative = 1e-4);
        assert_relative_eq!(e, 0.014_43, max_relative = 1e-3);
        assert_eq!(gain_and_qber(0.6, 0.05, 0.0, 0.0).1, 0.0);
    }

    #[test]
    fn vacuum_yield_values() {
        let src = SourceParams::default();
        let ideal = SourceParams {
            extinction_ratio_db: f64::INFINITY,
            ..src.clone()
        };
        assert_relative_eq!(vacuum_state_yield(&ideal, 0.1, 2e-5), 2e-5, max_relative = 1e-9);
        assert_relative_eq!(vacuum_state_yield(&src, 0.006_668_6, 2e-5), 2.798e-5, max_relative = 1e-3);
        assert!(vacuum_like(&src, 0.006_668_6, &DetectorParams::default()));
    }

    #[test]
    fn decoy_bounds_reject_bad_intensities() {
        assert!(decoy_bounds(0.01, 0.01, 0.02, 0.02, 0.2, 0.2, 0.0).is_err());
        assert!(decoy_bounds(0.01, 0.01, 0.02, 0.02, 0.2, 0.6, 0.0).is_err());
    }

    #[test]
    fn decoy_bounds_vanish_without_detections() {
        let b = decoy_bounds(0.0, 0.0, 0.5, 0.5, 0.6, 0.2, 0.0).unwrap();
        assert_eq!(b.y1_lower, 0.0);
        assert_eq!(b.e1_upper, 0.5);
        assert!(b.y1_clamped);
    }

    #[test]
    fn gllp_edges() {
        assert_eq!(gllp_rate(0.5, 0.02, 0.03, 0.01, 0.5, 1.22), 0.0);
        assert_abs_diff_eq!(gllp_rate(1.0, 0.3, 0.0, 0.3, 0.0, 1.0), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn dead_time_values() {
        assert_eq!(dead_time_throughput(1e5, 0.0), 1e5);
        let sat = dead_time_throughput(1e12, 5.0);
        assert!((sat - 2e5).abs() / 2e5 < 1e-3);
        assert_relative_eq!(dead_time_throughput(3.17e5, 5.0), 1.226_305_6e5, max_relative = 1e-6);
    }

    #[test]
    fn infinite_attenuation_gives_no_key() {
        let r = link_performance(
            f64::INFINITY,
            &SourceParams::default(),
            &DetectorParams::default(),
            &SystemParams::default(),
        )
        .unwrap();
        assert_eq!(r.secure_bps, 0.0);
    }

    #[test]
    fn calibrated_misalignment_reproduces_qber() {
        let src = SourceParams::default();
        let det = DetectorParams::default();
        let e = calibrate_e_detector(0.0292, 7.24, &src, &det).unwrap();
        let sys = SystemParams {
            e_detector: e,
            ..SystemParams::default()
        };
        let obs = model_observables(7.24, &src, &det, &sys);
        assert_abs_diff_eq!(obs.e_mu, 0.0292, epsilon = 1e-14);
    }

    #[test]
    fn qber_one_half_has_no_key() {
        let r = secure_rate_from_observed(
            31_000.0,
            0.5,
            7.24,
            &SourceParams::default(),
            &DetectorParams::default(),
            &SystemParams::default(),
        )
        .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn table_has_key_rows() {
        let r = link_performance(
            7.24,
            &SourceParams::default(),
            &DetectorParams {
                dead_time_us: 5.0,
                ..DetectorParams::default()
            },
            &SystemParams::default(),
        )
        .unwrap();
        let t = report_table("A2R2B", &r);
        assert!(t.contains("Sifted-key (kbit/s)"));
        assert!(t.contains("Secure-key (kbit/s)"));
    }
}
