//! Link-level workflows over a scenario (model, crosstalk, Monte Carlo check)
//! and the field-test reproduction report.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::optics::{enumerate_crosstalk_paths, predicted_measurement_db, Band, CrosstalkContribution, LinkBudget};
use crate::pulsesim::{simulate_link_with, IntensityClass, SimConfig};
use crate::qkdrate::{
    calibrate_e_detector, calibrate_receiver_loss_db, eta_total, link_performance, secure_rate_from_observed,
    vacuum_like, KeyRateReport, SystemParams,
};
use crate::scenario::{ResolvedLink, Scenario};
use crate::xtalk::{
    aggregate_chi, apply_crosstalk_to_link, calibration_offset_for_gain, leakage_floor_check, recommend_delay,
    scale_contributions, Case, CrosstalkImpact, CrosstalkSummary, DelayRecommendation, FloorCheck,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tolerance {
    /// Modeled within a factor of two of measured.
    #[default]
    Factor2,
    /// Modeled within 25% of measured.
    Pct25,
}

impl Tolerance {
    pub fn accepts(self, modeled: f64, measured: f64) -> bool {
        if !(measured > 0.0) || !modeled.is_finite() {
            return false;
        }
        let ratio = modeled / measured;
        match self {
            Tolerance::Factor2 => (0.5..=2.0).contains(&ratio),
            Tolerance::Pct25 => (ratio - 1.0).abs() <= 0.25,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tolerance::Factor2 => "factor2",
            Tolerance::Pct25 => "pct25",
        }
    }
}

impl fmt::Display for Tolerance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tolerance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factor2" => Ok(Tolerance::Factor2),
            "pct25" => Ok(Tolerance::Pct25),
            other => Err(Error::param("tolerance", format!("`{other}` is not one of factor2, pct25"))),
        }
    }
}

/// Analytic model of one scenario link. When the link has a measured signal
/// QBER, the misalignment error is calibrated to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub id: String,
    pub wavelength_nm: f64,
    pub budget: LinkBudget,
    pub e_detector_calibrated: bool,
    pub report: KeyRateReport,
}

pub fn model_link(scenario: &Scenario, link: &ResolvedLink) -> Result<LinkModel> {
    let budget = scenario.budget(link)?;
    let mut system = link.system.clone();
    let calibrated = match link.entry.measured.signal_qber_pct {
        Some(q) => {
            system.e_detector = calibrate_e_detector(q / 100.0, budget.total_db, &scenario.source, &link.detector)?;
            true
        }
        None => false,
    };
    let report = link_performance(budget.total_db, &scenario.source, &link.detector, &system)?;
    Ok(LinkModel {
        id: link.id.clone(),
        wavelength_nm: link.link.wavelength.nominal_nm,
        budget,
        e_detector_calibrated: calibrated,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkCrosstalk {
    pub id: String,
    pub case: Case,
    /// Worst-case crosstalk gain of the uncalibrated component model.
    pub modeled_yx_worst: f64,
    /// Uniform dB offset applied to match a measured crosstalk gain.
    pub calibration_offset_db: Option<f64>,
    pub predicted_measurement_db: Option<f64>,
    pub measured_crosstalk_db: Option<f64>,
    pub floor: Option<FloorCheck>,
    pub delay: DelayRecommendation,
    pub summary: CrosstalkSummary,
    pub impact: CrosstalkImpact,
}

/// Crosstalk of one link: enumerate leakage paths from the scenario's
/// components and fibers, calibrate them to a measured crosstalk gain if one
/// is given, aggregate and fold into the link model.
pub fn link_crosstalk(
    scenario: &Scenario,
    link: &ResolvedLink,
    model: &LinkModel,
    case: Case,
    include_interband: bool,
) -> Result<LinkCrosstalk> {
    let plan = scenario.plan()?;
    let fibers = scenario
        .fibers_by_node()
        .ok_or_else(|| Error::MissingFiber(format!("{} (crosstalk needs every access fiber)", link.id)))?;
    let timing = scenario.timing();
    let contributions = enumerate_crosstalk_paths(&plan, &link.link, &scenario.components, &fibers, &timing)?;
    let src = &scenario.source;
    let det = &link.detector;
    let aggregate = |c: &[CrosstalkContribution]| {
        aggregate_chi(
            c,
            det.gate_ns,
            src.pulse_period_ns(),
            model.report.observables.q_mu,
            src.mean_intensity(),
            det.efficiency,
            include_interband,
        )
    };
    let raw = aggregate(&contributions)?;
    let (contributions, offset) = match link.entry.measured.crosstalk_gain {
        Some(target) if raw.yx_worst > 0.0 => {
            let offset = calibration_offset_for_gain(&raw, target)?;
            (scale_contributions(&contributions, offset)?, Some(offset))
        }
        _ => (contributions, None),
    };
    let summary = aggregate(&contributions)?;
    let counted: Vec<CrosstalkContribution> = contributions
        .iter()
        .filter(|c| include_interband || c.band == Band::Intraband)
        .cloned()
        .collect();
    let impact = apply_crosstalk_to_link(&model.report, &summary, case)?;
    let measured = link.entry.measured.crosstalk_db;
    let floor = measured.map(|x| leakage_floor_check(x, model.budget.total_db, src.extinction_ratio_db));
    let predicted = scenario
        .reference
        .as_ref()
        .filter(|_| !contributions.is_empty())
        .map(|r| predicted_measurement_db(&contributions, r.p0_dbm, r.measured_path_loss_db));
    Ok(LinkCrosstalk {
        id: link.id.clone(),
        case,
        modeled_yx_worst: raw.yx_worst,
        calibration_offset_db: offset,
        predicted_measurement_db: predicted,
        measured_crosstalk_db: measured,
        floor,
        delay: recommend_delay(&counted, det.gate_ns, src.pulse_period_ns()),
        summary,
        impact,
    })
}

/// Simulation settings matching a link model.
pub fn sim_config_for(scenario: &Scenario, model: &LinkModel, n_pulses: u64, seed: u64) -> SimConfig {
    SimConfig {
        n_pulses,
        seed,
        attenuation_db: model.budget.total_db,
        source: scenario.source.clone(),
        detector: model.report.detector.clone(),
        system: model.report.system.clone(),
        chi_injection: None,
        record_timestamps: false,
    }
}

/// Monte Carlo check of the signal-class gain and QBER against the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloCheck {
    pub n_pulses: u64,
    pub seed: u64,
    pub gain: f64,
    pub gain_z: f64,
    pub qber: f64,
    pub qber_z: f64,
}

fn z_score(empirical: f64, analytic: f64, se: f64) -> f64 {
    if se > 0.0 {
        (empirical - analytic) / se
    } else if empirical == analytic {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn monte_carlo_check(
    scenario: &Scenario,
    model: &LinkModel,
    n_pulses: u64,
    seed: u64,
    exec: Execution,
) -> Result<MonteCarloCheck> {
    let sim = simulate_link_with(&sim_config_for(scenario, model, n_pulses, seed), exec)?;
    let s = sim.class(IntensityClass::Signal);
    let obs = &model.report.observables;
    Ok(MonteCarloCheck {
        n_pulses,
        seed,
        gain: s.gain,
        gain_z: z_score(s.gain, obs.q_mu, s.gain_se),
        qber: s.qber,
        qber_z: z_score(s.qber, obs.e_mu, s.qber_se),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantityCheck {
    pub modeled: f64,
    pub measured: f64,
    pub ratio: f64,
    pub pass: bool,
}

impl QuantityCheck {
    fn new(modeled: f64, measured: f64, tol: Tolerance) -> Self {
        QuantityCheck {
            modeled,
            measured,
            ratio: modeled / measured,
            pass: tol.accepts(modeled, measured),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReproduction {
    pub id: String,
    pub wavelength_nm: f64,
    pub attenuation_db: f64,
    pub dead_time_us: f64,
    pub e_detector: f64,
    /// Sifted rate of the analytic model with calibrated misalignment.
    pub sifted_kbps: QuantityCheck,
    /// Secure rate from the measured sifted rate and QBER.
    pub secure_kbps: QuantityCheck,
    /// Signal QBER of the calibrated model; agrees by construction.
    pub signal_qber_pct: QuantityCheck,
    /// Extra receiver loss that brings the modeled sifted rate down to the
    /// measured one.
    pub receiver_loss_db: f64,
    /// Vacuum-state flag with the receiver loss included.
    pub vacuum_like: bool,
    pub floor: Option<FloorCheck>,
    pub crosstalk: Option<CrosstalkFlags>,
    pub monte_carlo: Option<MonteCarloCheck>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkFlags {
    pub crosstalk_gain: f64,
    pub dark_per_gate: f64,
    pub below_dark_count: bool,
    pub qber0_signal: f64,
    pub qber0_decoy: f64,
    pub delta_qber_signal: f64,
    pub delta_qber_decoy: f64,
    /// Both increases are at most a tenth of their baseline QBER.
    pub within_tenth: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalFlags {
    pub yx_below_dark_count: bool,
    pub delta_qber_within_tenth: bool,
    pub all_vacuum_like: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproductionReport {
    pub scenario: String,
    pub tolerance: Tolerance,
    pub links: Vec<LinkReproduction>,
    pub flags: GlobalFlags,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReproduceOptions {
    pub tolerance: Tolerance,
    /// Pulses per link for the Monte Carlo check; 0 skips it.
    pub mc_pulses: u64,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        ReproduceOptions {
            tolerance: Tolerance::Factor2,
            mc_pulses: 1_000_000,
            seed: 1,
            exec: Execution::default(),
        }
    }
}

fn reproduce_link(
    scenario: &Scenario,
    link: &ResolvedLink,
    opts: &ReproduceOptions,
    seed: u64,
) -> Result<LinkReproduction> {
    let m = &link.entry.measured;
    let missing = |what: &str| Error::param("measured", format!("link {} has no measured {what}", link.id));
    let sifted_meas = m.sifted_kbps.ok_or_else(|| missing("sifted_kbps"))?;
    let qber_meas = m.signal_qber_pct.ok_or_else(|| missing("signal_qber_pct"))?;
    let secure_meas = m.secure_kbps.ok_or_else(|| missing("secure_kbps"))?;

    let model = model_link(scenario, link)?;
    let att = model.budget.total_db;
    let src = &scenario.source;
    let det = &link.detector;
    let sys: &SystemParams = &model.report.system;
    let secure = secure_rate_from_observed(sifted_meas * 1e3, qber_meas / 100.0, att, src, det, sys)?;
    let extra = calibrate_receiver_loss_db(sifted_meas * 1e3, att, src, det, sys)?;
    let vacuum = vacuum_like(src, eta_total(att + extra, det), det);

    let crosstalk = match m.crosstalk_gain {
        Some(_) => {
            let x = link_crosstalk(scenario, link, &model, Case::Worst, false)?;
            let i = &x.impact;
            Some(CrosstalkFlags {
                crosstalk_gain: i.crosstalk_gain,
                dark_per_gate: i.dark_per_gate,
                below_dark_count: i.below_dark_count,
                qber0_signal: i.qber0_signal,
                qber0_decoy: i.qber0_decoy,
                delta_qber_signal: i.delta_qber_signal,
                delta_qber_decoy: i.delta_qber_decoy,
                within_tenth: i.delta_qber_signal <= i.qber0_signal / 10.0
                    && i.delta_qber_decoy <= i.qber0_decoy / 10.0,
            })
        }
        None => None,
    };
    let floor = m
        .crosstalk_db
        .map(|x| leakage_floor_check(x, att, src.extinction_ratio_db));
    let monte_carlo = if opts.mc_pulses > 0 {
        Some(monte_carlo_check(scenario, &model, opts.mc_pulses, seed, opts.exec)?)
    } else {
        None
    };

    let sifted_kbps = QuantityCheck::new(model.report.sifted_bps / 1e3, sifted_meas, opts.tolerance);
    let secure_kbps = QuantityCheck::new(secure / 1e3, secure_meas, opts.tolerance);
    let signal_qber_pct = QuantityCheck::new(100.0 * model.report.observables.e_mu, qber_meas, opts.tolerance);
    let pass = sifted_kbps.pass && secure_kbps.pass && signal_qber_pct.pass;
    Ok(LinkReproduction {
        id: link.id.clone(),
        wavelength_nm: model.wavelength_nm,
        attenuation_db: att,
        dead_time_us: det.dead_time_us,
        e_detector: sys.e_detector,
        sifted_kbps,
        secure_kbps,
        signal_qber_pct,
        receiver_loss_db: extra,
        vacuum_like: vacuum,
        floor,
        crosstalk,
        monte_carlo,
        pass,
    })
}

/// Compares the model against every link with measured rates.
pub fn reproduce(scenario: &Scenario, opts: &ReproduceOptions) -> Result<ReproductionReport> {
    let mut links = Vec::new();
    for (i, link) in scenario.listed_links()?.iter().enumerate() {
        let m = &link.entry.measured;
        if m.sifted_kbps.is_none() && m.secure_kbps.is_none() {
            continue;
        }
        links.push(reproduce_link(scenario, link, opts, opts.seed.wrapping_add(i as u64))?);
    }
    if links.is_empty() {
        return Err(Error::param("links", "no link carries measured rates to reproduce"));
    }
    let xt: Vec<&CrosstalkFlags> = links.iter().filter_map(|l| l.crosstalk.as_ref()).collect();
    let flags = GlobalFlags {
        yx_below_dark_count: xt.iter().all(|x| x.below_dark_count),
        delta_qber_within_tenth: xt.iter().all(|x| x.within_tenth),
        all_vacuum_like: links.iter().all(|l| l.vacuum_like),
    };
    let pass = links.iter().all(|l| l.pass)
        && flags.yx_below_dark_count
        && flags.delta_qber_within_tenth
        && flags.all_vacuum_like;
    Ok(ReproductionReport {
        scenario: scenario.name.clone().unwrap_or_else(|| "scenario".into()),
        tolerance: opts.tolerance,
        links,
        flags,
        pass,
    })
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

impl ReproductionReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "reproduction of `{}` at tolerance {}", self.scenario, self.tolerance);
        let _ = writeln!(
            out,
            "{:<7} {:>6} {:>6} {:>9} {:>9} {:>6} {:>9} {:>9} {:>6} {:>7} {:>7} {:>5}",
            "link", "nm", "dB", "sift mod", "sift meas", "ratio", "sec mod", "sec meas", "ratio", "QBER %", "rx dB", "pass"
        );
        for l in &self.links {
            let _ = writeln!(
                out,
                "{:<7} {:>6.0} {:>6.2} {:>9.2} {:>9.2} {:>6.2} {:>9.3} {:>9.2} {:>6.2} {:>7.2} {:>7.2} {:>5}",
                l.id,
                l.wavelength_nm,
                l.attenuation_db,
                l.sifted_kbps.modeled,
                l.sifted_kbps.measured,
                l.sifted_kbps.ratio,
                l.secure_kbps.modeled,
                l.secure_kbps.measured,
                l.secure_kbps.ratio,
                l.signal_qber_pct.modeled,
                l.receiver_loss_db,
                mark(l.pass)
            );
        }
        for l in &self.links {
            if let Some(f) = &l.floor {
                let _ = writeln!(
                    out,
                    "{}: crosstalk {} the modulator leakage floor {:.2} dB by {:.2} dB",
                    l.id,
                    if f.above_floor { "above" } else { "below" },
                    f.floor_db,
                    f.margin_db.abs()
                );
            }
            if let Some(x) = &l.crosstalk {
                let _ = writeln!(
                    out,
                    "{}: Y_X {:.3e} vs dark {:.1e}; dQBER signal {:.3}% (QBER0 {:.2}%), decoy {:.3}% (QBER0 {:.2}%)",
                    l.id,
                    x.crosstalk_gain,
                    x.dark_per_gate,
                    100.0 * x.delta_qber_signal,
                    100.0 * x.qber0_signal,
                    100.0 * x.delta_qber_decoy,
                    100.0 * x.qber0_decoy
                );
            }
            if let Some(mc) = &l.monte_carlo {
                let _ = writeln!(
                    out,
                    "{}: Monte Carlo {} pulses, signal gain z = {:+.2}, QBER z = {:+.2}",
                    l.id, mc.n_pulses, mc.gain_z, mc.qber_z
                );
            }
        }
        let f = &self.flags;
        let _ = writeln!(out, "crosstalk gain below dark count: {}", mark(f.yx_below_dark_count));
        let _ = writeln!(out, "QBER increase within a tenth of QBER0: {}", mark(f.delta_qber_within_tenth));
        let _ = writeln!(out, "vacuum-like near-vacuum state on every link: {}", mark(f.all_vacuum_like));
        let _ = writeln!(out, "overall: {}", if self.pass { "PASS" } else { "FAIL" });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::wuhu;

    #[test]
    fn tolerance_bounds() {
        assert!(Tolerance::Factor2.accepts(2.0, 1.0));
        assert!(Tolerance::Factor2.accepts(0.5, 1.0));
        assert!(!Tolerance::Factor2.accepts(2.01, 1.0));
        assert!(Tolerance::Pct25.accepts(1.25, 1.0));
        assert!(!Tolerance::Pct25.accepts(1.26, 1.0));
        assert!(!Tolerance::Factor2.accepts(1.0, 0.0));
        assert_eq!("pct25".parse::<Tolerance>().unwrap(), Tolerance::Pct25);
        assert!("loose".parse::<Tolerance>().is_err());
    }

    #[test]
    fn wuhu_reproduces_at_factor2() {
        let opts = ReproduceOptions {
            mc_pulses: 0,
            ..ReproduceOptions::default()
        };
        let r = reproduce(&wuhu(), &opts).unwrap();
        assert_eq!(r.links.len(), 4);
        assert!(r.pass, "{}", r.to_table());
    }

    #[test]
    fn calibrated_model_hits_measured_qber() {
        let s = wuhu();
        let l = s.resolve_link("A2R2B").unwrap();
        let m = model_link(&s, &l).unwrap();
        assert!((m.report.observables.e_mu - 0.0292).abs() < 1e-12);
        assert!(m.e_detector_calibrated);
    }

    #[test]
    fn e2r2a_crosstalk_calibrates_to_measured_gain() {
        let s = wuhu();
        let l = s.resolve_link("E2R2A").unwrap();
        let m = model_link(&s, &l).unwrap();
        let x = link_crosstalk(&s, &l, &m, Case::Worst, false).unwrap();
        assert!((x.summary.yx_worst - 7.98e-6).abs() < 1e-15);
        assert!(x.impact.below_dark_count);
        assert!(x.summary.chi_best <= x.summary.chi_worst);
    }
}
