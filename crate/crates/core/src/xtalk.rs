//! Crosstalk-induced QBER penalty and gate-timing aggregation.
//!
//! Intraband crosstalk comes from a remote laser, so it is phase-independent
//! of the signal: every crosstalk click carries a uniformly random bit. With a
//! crosstalk ratio `chi` the QBER rises by
//!
//! ```text
//! dQBER = chi/2 * (1 - q(3 - 2q)) / (1 + chi(1 - q))  <  chi/2,   q = QBER0
//! ```
//!
//! which is exactly what mixing random-bit clicks at a rate `chi (1 - q)`
//! relative to the signal clicks gives: `1 - q(3-2q) = (1-q)(1-2q)`.
//!
//! Point crosstalk (discrete reflections) only hurts when it lands inside the
//! detector gate, so the ratio lies between a best case (no point term in the
//! gate) and a worst case (every point term in the gate). Continuous crosstalk
//! (Rayleigh backscatter) is spread uniformly and counts with the gate duty
//! cycle in both cases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{Band, CrosstalkContribution, CrosstalkKind};
use crate::qkdrate::{decoy_bounds, gllp_rate, KeyRateReport};

/// Margin kept between a shifted point term and the gate edge, ns.
pub const DELAY_GUARD_NS: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandSelection {
    #[default]
    IntrabandOnly,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    #[default]
    Worst,
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedContribution {
    #[serde(flatten)]
    pub contribution: CrosstalkContribution,
    /// Per-gate crosstalk gain if the term is counted.
    pub gain: f64,
    pub counted_worst: bool,
    pub counted_best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkSummary {
    pub chi_worst: f64,
    pub chi_best: f64,
    /// Crosstalk gain per gate behind `chi_worst`.
    pub yx_worst: f64,
    pub yx_best: f64,
    pub victim_signal_gain: f64,
    pub included_band: BandSelection,
    pub contributions: Vec<FlaggedContribution>,
}

impl CrosstalkSummary {
    pub fn chi(&self, case: Case) -> f64 {
        match case {
            Case::Worst => self.chi_worst,
            Case::Best => self.chi_best,
        }
    }

    pub fn crosstalk_gain(&self, case: Case) -> f64 {
        match case {
            Case::Worst => self.yx_worst,
            Case::Best => self.yx_best,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkObservables {
    pub sifted_rate_bps: f64,
    pub qber0: f64,
}

/// QBER increase caused by incoherent crosstalk at ratio `chi`.
pub fn delta_qber(chi: f64, qber0: f64) -> Result<f64> {
    if !(chi >= 0.0) || !chi.is_finite() {
        return Err(Error::param("chi", format!("{chi} must be >= 0")));
    }
    if !(0.0..=0.5).contains(&qber0) {
        return Err(Error::param("qber0", format!("{qber0} must lie in [0, 0.5]")));
    }
    Ok(chi / 2.0 * (1.0 - qber0 * (3.0 - 2.0 * qber0)) / (1.0 + chi * (1.0 - qber0)))
}

pub fn chi_from_gains(crosstalk_gain: f64, signal_gain: f64) -> Result<f64> {
    if !(signal_gain > 0.0) {
        return Err(Error::param("signal_gain", "must be > 0"));
    }
    Ok(crosstalk_gain / signal_gain)
}

/// Whether an offset falls inside a gate centred on the signal pulse.
pub fn in_gate(offset_ns: f64, gate_ns: f64) -> bool {
    offset_ns.abs() <= gate_ns / 2.0
}

/// Sums per-gate crosstalk gains into best- and worst-case ratios.
#[allow(clippy::too_many_arguments)]
pub fn aggregate_chi(
    contributions: &[CrosstalkContribution],
    gate_ns: f64,
    pulse_period_ns: f64,
    victim_signal_gain: f64,
    source_mean_photon: f64,
    det_efficiency: f64,
    include_interband: bool,
) -> Result<CrosstalkSummary> {
    if !(gate_ns > 0.0 && gate_ns <= pulse_period_ns) {
        return Err(Error::param("gate_ns", "gate must be positive and no longer than the period"));
    }
    if !(victim_signal_gain > 0.0) {
        return Err(Error::param("victim_signal_gain", "must be > 0"));
    }
    let duty = gate_ns / pulse_period_ns;
    let mut flagged = Vec::with_capacity(contributions.len());
    let (mut yx_worst, mut yx_best) = (0.0, 0.0);
    for c in contributions {
        let included = include_interband || c.band == Band::Intraband;
        let per_pulse = source_mean_photon * 10f64.powf(c.power_ratio_db / 10.0) * det_efficiency;
        let (gain, counted_worst, counted_best) = match c.kind {
            CrosstalkKind::Point => {
                let inside = c.arrival_offset_ns.is_some_and(|o| in_gate(o, gate_ns));
                (per_pulse, included, included && inside)
            }
            CrosstalkKind::Continuous => (per_pulse * duty, included, included),
        };
        if counted_worst {
            yx_worst += gain;
        }
        if counted_best {
            yx_best += gain;
        }
        flagged.push(FlaggedContribution {
            contribution: c.clone(),
            gain,
            counted_worst,
            counted_best,
        });
    }
    Ok(CrosstalkSummary {
        chi_worst: yx_worst / victim_signal_gain,
        chi_best: yx_best / victim_signal_gain,
        yx_worst,
        yx_best,
        victim_signal_gain,
        included_band: if include_interband {
            BandSelection::All
        } else {
            BandSelection::IntrabandOnly
        },
        contributions: flagged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorCheck {
    pub floor_db: f64,
    /// Crosstalk sits above the leakage floor of the intensity modulator.
    pub above_floor: bool,
    pub margin_db: f64,
}

/// Compares measured crosstalk with the light a closed modulator already leaks
/// through the same link: `-extinction - attenuation`.
pub fn leakage_floor_check(crosstalk_db: f64, attenuation_db: f64, extinction_ratio_db: f64) -> FloorCheck {
    let floor_db = -extinction_ratio_db - attenuation_db;
    FloorCheck {
        floor_db,
        above_floor: crosstalk_db > floor_db,
        margin_db: crosstalk_db - floor_db,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "delay_ns")]
pub enum DelayRecommendation {
    Delay(f64),
    Infeasible,
}

/// Smallest extra delay in `[0, period)` that moves every point term out of
/// the gate with [`DELAY_GUARD_NS`] to spare.
pub fn recommend_delay(
    contributions: &[CrosstalkContribution],
    gate_ns: f64,
    pulse_period_ns: f64,
) -> DelayRecommendation {
    let offsets: Vec<f64> = contributions
        .iter()
        .filter(|c| c.kind == CrosstalkKind::Point)
        .filter_map(|c| c.arrival_offset_ns)
        .collect();
    if offsets.is_empty() {
        return DelayRecommendation::Delay(0.0);
    }
    let half = gate_ns / 2.0 + DELAY_GUARD_NS;
    let eps = 1e-9;
    let clear = |d: f64| {
        offsets.iter().all(|&o| {
            crate::optics::wrap_offset(o + d, pulse_period_ns).abs() >= half - eps
        })
    };
    let mut candidates: Vec<f64> = std::iter::once(0.0)
        .chain(offsets.iter().map(|&o| (half - o).rem_euclid(pulse_period_ns)))
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates
        .into_iter()
        .find(|&d| d < pulse_period_ns && clear(d))
        .map_or(DelayRecommendation::Infeasible, DelayRecommendation::Delay)
}

/// Contributions with every point arrival delayed by `delay_ns`.
pub fn shift_offsets(
    contributions: &[CrosstalkContribution],
    delay_ns: f64,
    pulse_period_ns: f64,
) -> Vec<CrosstalkContribution> {
    contributions
        .iter()
        .map(|c| CrosstalkContribution {
            arrival_offset_ns: c
                .arrival_offset_ns
                .map(|o| crate::optics::wrap_offset(o + delay_ns, pulse_period_ns)),
            ..c.clone()
        })
        .collect()
}

/// Applies a uniform dB offset to every contribution.
pub fn scale_contributions(contributions: &[CrosstalkContribution], offset_db: f64) -> Result<Vec<CrosstalkContribution>> {
    let scaled: Vec<_> = contributions
        .iter()
        .map(|c| CrosstalkContribution {
            power_ratio_db: c.power_ratio_db + offset_db,
            ..c.clone()
        })
        .collect();
    if let Some(c) = scaled.iter().find(|c| c.power_ratio_db > 0.0) {
        return Err(Error::param(
            "offset_db",
            format!("calibration pushes a leakage path to {:.2} dB above launch", c.power_ratio_db),
        ));
    }
    Ok(scaled)
}

/// The dB offset that makes the worst-case crosstalk gain equal `target_yx`.
pub fn calibration_offset_for_gain(summary: &CrosstalkSummary, target_yx: f64) -> Result<f64> {
    if !(summary.yx_worst > 0.0) {
        return Err(Error::param("contributions", "no counted leakage path to calibrate"));
    }
    if !(target_yx > 0.0) {
        return Err(Error::param("target_yx", "must be > 0"));
    }
    Ok(10.0 * (target_yx / summary.yx_worst).log10())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkImpact {
    pub case: Case,
    pub crosstalk_gain: f64,
    pub chi_signal: f64,
    pub chi_decoy: f64,
    pub qber0_signal: f64,
    pub qber0_decoy: f64,
    pub delta_qber_signal: f64,
    pub delta_qber_decoy: f64,
    pub dark_per_gate: f64,
    pub below_dark_count: bool,
    /// Both QBER increases are at most a tenth of their baseline and the
    /// crosstalk gain is below the dark count.
    pub negligible: bool,
    pub adjusted: KeyRateReport,
}

/// Folds crosstalk into a key-rate report: each intensity's gain grows by the
/// crosstalk gain and its QBER by the penalty for its own ratio; the
/// single-photon bounds and the rate are then recomputed.
pub fn apply_crosstalk_to_link(
    report: &KeyRateReport,
    summary: &CrosstalkSummary,
    case: Case,
) -> Result<CrosstalkImpact> {
    let yx = summary.crosstalk_gain(case);
    let obs = &report.observables;
    let chi_signal = chi_from_gains(yx, obs.q_mu)?;
    let chi_decoy = chi_from_gains(yx, obs.q_nu)?;
    let dq_signal = delta_qber(chi_signal, obs.e_mu)?;
    let dq_decoy = delta_qber(chi_decoy, obs.e_nu)?;
    let dark = report.detector.dark_per_gate;

    let adjusted = if yx == 0.0 {
        report.clone()
    } else {
        let mut r = report.clone();
        let o = &mut r.observables;
        o.q_mu += yx;
        o.q_nu += yx;
        o.y_vac += yx;
        o.e_mu += dq_signal;
        o.e_nu += dq_decoy;
        let y0 = dark + yx;
        let b = decoy_bounds(o.q_mu, o.q_nu, o.e_mu, o.e_nu, r.source.mu, r.source.nu, y0)?;
        r.y1_lower = b.y1_lower;
        r.e1_upper = b.e1_upper;
        r.q1_lower = b.q1_lower;
        r.y1_clamped = b.y1_clamped;
        r.e1_clamped = b.e1_clamped;
        r.r_per_pulse = gllp_rate(r.system.q_sift, o.q_mu, o.e_mu, b.q1_lower, b.e1_upper, r.system.f_ec);
        r.sifted_bps = report.sifted_bps * o.q_mu / report.observables.q_mu;
        r.secure_bps = (r.sifted_bps * r.r_per_pulse / (r.system.q_sift * o.q_mu)).min(r.sifted_bps);
        r
    };
    let below_dark_count = yx < dark;
    Ok(CrosstalkImpact {
        case,
        crosstalk_gain: yx,
        chi_signal,
        chi_decoy,
        qber0_signal: obs.e_mu,
        qber0_decoy: obs.e_nu,
        delta_qber_signal: dq_signal,
        delta_qber_decoy: dq_decoy,
        dark_per_gate: dark,
        below_dark_count,
        negligible: below_dark_count && dq_signal <= obs.e_mu / 10.0 && dq_decoy <= obs.e_nu / 10.0,
        adjusted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::build_plan;
    use approx::assert_abs_diff_eq;

    fn point(offset: f64, db: f64) -> CrosstalkContribution {
        let plan = build_plan(1).unwrap();
        CrosstalkContribution {
            kind: CrosstalkKind::Point,
            band: Band::Intraband,
            mechanism: crate::optics::Mechanism::NodeReturnLoss,
            source_link: plan.links[1],
            power_ratio_db: db,
            arrival_offset_ns: Some(offset),
            removable: false,
        }
    }

    #[test]
    fn delta_qber_values() {
        assert_eq!(delta_qber(0.0, 0.03).unwrap(), 0.0);
        // mpmath, 30 digits: 0.004515202535406556...
        assert_abs_diff_eq!(delta_qber(0.01, 0.03).unwrap(), 0.004_515_202_535_4, epsilon = 1e-13);
        assert!(delta_qber(-0.1, 0.03).is_err());
        assert!(delta_qber(0.1, 0.6).is_err());
    }

    #[test]
    fn chi_from_gain_edges() {
        assert_eq!(chi_from_gains(0.0, 1e-3).unwrap(), 0.0);
        assert_eq!(chi_from_gains(1e-3, 1e-3).unwrap(), 1.0);
        assert!(chi_from_gains(1e-6, 0.0).is_err());
    }

    #[test]
    fn empty_aggregation_is_zero() {
        let s = aggregate_chi(&[], 1.0, 50.0, 0.01, 0.42, 0.2, false).unwrap();
        assert_eq!((s.chi_worst, s.chi_best), (0.0, 0.0));
    }

    #[test]
    fn in_gate_point_counts_in_both_cases() {
        let s = aggregate_chi(&[point(0.2, -60.0)], 1.0, 50.0, 0.01, 0.42, 0.2, false).unwrap();
        assert!(s.chi_best > 0.0);
        assert_eq!(s.chi_best, s.chi_worst);
        let out = aggregate_chi(&[point(10.0, -60.0)], 1.0, 50.0, 0.01, 0.42, 0.2, false).unwrap();
        assert_eq!(out.chi_best, 0.0);
        assert!(out.chi_worst > 0.0);
    }

    #[test]
    fn floor_check() {
        let f = leakage_floor_check(-34.62, 14.77, 27.0);
        assert!(f.above_floor);
        assert_abs_diff_eq!(f.margin_db, 7.15, epsilon = 1e-9);
        assert!(!leakage_floor_check(-60.0, 14.77, 27.0).above_floor);
        let edge = leakage_floor_check(-41.77, 14.77, 27.0);
        assert!(!edge.above_floor);
        assert_abs_diff_eq!(edge.margin_db, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn delay_for_centred_reflection() {
        assert_eq!(recommend_delay(&[], 1.0, 50.0), DelayRecommendation::Delay(0.0));
        match recommend_delay(&[point(0.0, -60.0)], 1.0, 50.0) {
            DelayRecommendation::Delay(d) => assert_abs_diff_eq!(d, 0.75, epsilon = 1e-9),
            other => panic!("{other:?}"),
        }
        let dense: Vec<_> = (0..50).map(|i| point(i as f64 - 25.0, -60.0)).collect();
        assert_eq!(recommend_delay(&dense, 1.0, 50.0), DelayRecommendation::Infeasible);
    }

    #[test]
    fn scaling_above_launch_rejected() {
        assert!(scale_contributions(&[point(0.0, -3.0)], 5.0).is_err());
        let s = scale_contributions(&[point(0.0, -30.0)], 5.0).unwrap();
        assert_eq!(s[0].power_ratio_db, -25.0);
    }
}
