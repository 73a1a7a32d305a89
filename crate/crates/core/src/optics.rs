//! Passive optical layer: M&D units, fibers, link budgets and the catalog of
//! first-order crosstalk leakage paths.
//!
//! All powers are in dB relative to the launch power of the transmitter that
//! produced the light. Reflection-type quantities (return loss, directivity,
//! connector reflection, WDM isolation) are positive magnitudes; a magnitude of
//! `f64::INFINITY` means a perfect component and removes the mechanism.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::{DirectedLink, NetworkPlan, NodeId};

/// Speed of light in vacuum, m/ns.
const C_M_PER_NS: f64 = 0.299_792_458;

/// Reflection-type magnitudes below this are allowed but unusual.
pub const TYPICAL_REFLECTION_DB: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MndStructure {
    /// One 3-port circulator between two N-wavelength WDMs.
    #[default]
    OneCirTwoWdm,
    /// One N-wavelength WDM feeding N circulators.
    OneWdmNCir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    #[serde(default)]
    pub structure: MndStructure,
    pub cir_pass_loss_db: f64,
    pub wdm_pass_loss_db: f64,
    pub cir_return_loss_db: f64,
    pub cir_directivity_db: f64,
    pub connector_reflection_db: f64,
    /// Backscattered-to-forward power per km of fiber, dB (negative).
    pub rayleigh_coeff_db_per_km: f64,
    /// Adjacent-channel rejection of a WDM port; applies to interband paths.
    pub wdm_isolation_db: f64,
    pub group_index: f64,
}

impl Default for ComponentSpec {
    fn default() -> Self {
        ComponentSpec {
            structure: MndStructure::OneCirTwoWdm,
            cir_pass_loss_db: 0.6,
            wdm_pass_loss_db: 0.35,
            cir_return_loss_db: 50.0,
            cir_directivity_db: 50.0,
            connector_reflection_db: 45.0,
            rayleigh_coeff_db_per_km: -70.0,
            wdm_isolation_db: 30.0,
            group_index: 1.468,
        }
    }
}

impl ComponentSpec {
    pub fn validate(&self) -> Result<()> {
        let losses = [
            ("cir_pass_loss_db", self.cir_pass_loss_db),
            ("wdm_pass_loss_db", self.wdm_pass_loss_db),
            ("cir_return_loss_db", self.cir_return_loss_db),
            ("cir_directivity_db", self.cir_directivity_db),
            ("connector_reflection_db", self.connector_reflection_db),
            ("wdm_isolation_db", self.wdm_isolation_db),
        ];
        for (name, v) in losses {
            if v.is_nan() || v < 0.0 {
                return Err(Error::param(name, format!("{v} must be a non-negative dB magnitude")));
            }
        }
        if self.rayleigh_coeff_db_per_km.is_nan() || self.rayleigh_coeff_db_per_km > 0.0 {
            return Err(Error::param(
                "rayleigh_coeff_db_per_km",
                "backscatter coefficient must be <= 0 dB/km",
            ));
        }
        if !(self.group_index >= 1.0) || !self.group_index.is_finite() {
            return Err(Error::param("group_index", "must be finite and >= 1"));
        }
        Ok(())
    }

    /// Human-readable notes for reflection magnitudes under 20 dB.
    pub fn warnings(&self) -> Vec<String> {
        [
            ("cir_return_loss_db", self.cir_return_loss_db),
            ("cir_directivity_db", self.cir_directivity_db),
            ("connector_reflection_db", self.connector_reflection_db),
        ]
        .into_iter()
        .filter(|(_, v)| *v < TYPICAL_REFLECTION_DB)
        .map(|(name, v)| format!("{name} = {v} dB is below the typical {TYPICAL_REFLECTION_DB} dB"))
        .collect()
    }

    /// Group delay of fiber, ns per km.
    pub fn group_delay_ns_per_km(&self) -> f64 {
        self.group_index * 1000.0 / C_M_PER_NS
    }
}

/// Loss of one traversal through an M&D unit.
pub fn mnd_pass_loss(spec: &ComponentSpec, structure: MndStructure) -> f64 {
    match structure {
        MndStructure::OneCirTwoWdm => spec.cir_pass_loss_db + 2.0 * spec.wdm_pass_loss_db,
        MndStructure::OneWdmNCir => spec.wdm_pass_loss_db + spec.cir_pass_loss_db,
    }
}

/// One access fiber between a node and its router port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSpec {
    pub length_km: f64,
    /// Indexed by wavelength channel.
    pub atten_db_per_km: Vec<f64>,
    /// Positions of fiber joints, km from the node end.
    #[serde(default)]
    pub joints_km: Vec<f64>,
}

impl FiberSpec {
    pub fn uniform(length_km: f64, atten_db_per_km: f64, n_wavelengths: usize) -> Self {
        FiberSpec {
            length_km,
            atten_db_per_km: vec![atten_db_per_km; n_wavelengths],
            joints_km: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_km >= 0.0) || !self.length_km.is_finite() {
            return Err(Error::param("length_km", format!("{} must be >= 0", self.length_km)));
        }
        if let Some(a) = self.atten_db_per_km.iter().find(|a| !(**a >= 0.0)) {
            return Err(Error::param("atten_db_per_km", format!("{a} must be >= 0")));
        }
        if let Some(z) = self
            .joints_km
            .iter()
            .find(|z| !(**z >= 0.0 && **z <= self.length_km))
        {
            return Err(Error::param(
                "joints_km",
                format!("joint at {z} km lies outside the {} km fiber", self.length_km),
            ));
        }
        Ok(())
    }

    pub fn atten(&self, wavelength: usize) -> Result<f64> {
        self.atten_db_per_km
            .get(wavelength)
            .copied()
            .ok_or(Error::UnknownWavelength(wavelength))
    }

    pub fn loss_db(&self, wavelength: usize) -> Result<f64> {
        Ok(self.length_km * self.atten(wavelength)?)
    }

    /// Fraction of launched power returned by Rayleigh backscatter over the
    /// whole fiber, as seen at the launch end, in dB.
    pub fn rayleigh_return_db(&self, wavelength: usize, coeff_db_per_km: f64) -> Result<f64> {
        let s = 10f64.powf(coeff_db_per_km / 10.0);
        let alpha = self.atten(wavelength)? * std::f64::consts::LN_10 / 10.0;
        let l = self.length_km;
        let fraction = if alpha * l < 1e-12 {
            s * l
        } else {
            s * (1.0 - (-2.0 * alpha * l).exp()) / (2.0 * alpha)
        };
        Ok(10.0 * fraction.log10())
    }
}

/// Three quarters of a measured four-M&D path loss: the multiplexer half of the
/// first M&D belongs to the transmitter.
pub fn effective_insertion_loss(measured_path_loss_db: f64) -> Result<f64> {
    if !(measured_path_loss_db >= 0.0) {
        return Err(Error::param(
            "measured_path_loss_db",
            format!("{measured_path_loss_db} must be >= 0"),
        ));
    }
    Ok(0.75 * measured_path_loss_db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetSource {
    Computed,
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub fiber_db: f64,
    pub effective_insertion_loss_db: f64,
    pub total_db: f64,
    pub measured_override_db: Option<f64>,
    pub source: BudgetSource,
}

/// Attenuation of one link. `segments` are the fibers on the way from the
/// transmitter to the router and on to the receiver. A measured override wins;
/// without fiber data its fiber share is implied as `override - il`.
pub fn link_budget(
    link: &DirectedLink,
    segments: &[FiberSpec],
    il_effective_db: f64,
    measured_override_db: Option<f64>,
) -> Result<LinkBudget> {
    let w = link.wavelength.index;
    let fiber_db = if segments.is_empty() {
        None
    } else {
        let mut sum = 0.0;
        for seg in segments {
            seg.validate()?;
            sum += seg.loss_db(w)?;
        }
        Some(sum)
    };
    match (measured_override_db, fiber_db) {
        (Some(total), fiber) => {
            if !(total >= 0.0) {
                return Err(Error::param("measured_override_db", format!("{total} must be >= 0")));
            }
            Ok(LinkBudget {
                fiber_db: fiber.unwrap_or(total - il_effective_db),
                effective_insertion_loss_db: il_effective_db,
                total_db: total,
                measured_override_db: Some(total),
                source: BudgetSource::Measured,
            })
        }
        (None, Some(fiber)) => Ok(LinkBudget {
            fiber_db: fiber,
            effective_insertion_loss_db: il_effective_db,
            total_db: fiber + il_effective_db,
            measured_override_db: None,
            source: BudgetSource::Computed,
        }),
        (None, None) => Err(Error::MissingFiber(format!(
            "{}->{}",
            link.src.index(),
            link.dst.index()
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrosstalkKind {
    Point,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Intraband,
    Interband,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// Receiving node's own transmitter leaking through its circulator.
    NodeReturnLoss,
    /// Light bound for the victim's source node leaking across the router
    /// circulator at that port.
    RouterDirectivity,
    ConnectorReflection,
    RayleighBackscatter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkContribution {
    pub kind: CrosstalkKind,
    pub band: Band,
    pub mechanism: Mechanism,
    pub source_link: DirectedLink,
    pub power_ratio_db: f64,
    /// Arrival time relative to the victim signal pulse, reduced to
    /// `(-period/2, period/2]`. `None` for continuous contributions.
    pub arrival_offset_ns: Option<f64>,
    /// Interband light can be filtered out.
    pub removable: bool,
}

/// Clock period and per-node transmitter launch delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub pulse_period_ns: f64,
    pub launch_delay_ns: Vec<f64>,
}

impl Timing {
    pub fn aligned(pulse_period_ns: f64, node_count: usize) -> Self {
        Timing {
            pulse_period_ns,
            launch_delay_ns: vec![0.0; node_count],
        }
    }

    fn delay(&self, node: NodeId) -> f64 {
        self.launch_delay_ns.get(node.index()).copied().unwrap_or(0.0)
    }
}

/// Reduces a time offset to `(-period/2, period/2]`.
pub fn wrap_offset(offset_ns: f64, period_ns: f64) -> f64 {
    let r = offset_ns.rem_euclid(period_ns);
    if r > period_ns / 2.0 {
        r - period_ns
    } else {
        r
    }
}

/// First-order leakage paths into the receiver of `victim`.
///
/// For every wavelength, two transmitters can leak into the victim receiver
/// without a second bounce: the receiving node's own transmitter, and the
/// transmitter whose light is routed toward the victim's source node. Their
/// light reaches the victim through the node circulator's return loss, the
/// router circulator's directivity, connector joints and Rayleigh backscatter.
/// Light on a wavelength other than the victim's is tagged interband, pays the
/// WDM isolation and is marked removable.
pub fn enumerate_crosstalk_paths(
    plan: &NetworkPlan,
    victim: &DirectedLink,
    spec: &ComponentSpec,
    fibers: &[FiberSpec],
    timing: &Timing,
) -> Result<Vec<CrosstalkContribution>> {
    let (s, d, w) = (victim.src, victim.dst, victim.wavelength.index);
    if !plan.links.contains(victim) {
        return Err(Error::UnknownLink(format!("{}->{}", s.index(), d.index())));
    }
    let fiber = |node: NodeId| {
        fibers
            .get(node.index())
            .ok_or_else(|| Error::MissingFiber(plan.label(node).to_string()))
    };
    let (fs, fd) = (fiber(s)?, fiber(d)?);
    let mnd = mnd_pass_loss(spec, spec.structure);
    let k = spec.group_delay_ns_per_km();
    let period = timing.pulse_period_ns;
    let signal_time = timing.delay(s) + k * (fs.length_km + fd.length_km);

    let mut out = Vec::new();
    let mut push = |kind, band, mechanism, source: &DirectedLink, pr: f64, path_km: Option<f64>| {
        if pr.is_nan() || pr == f64::NEG_INFINITY {
            return;
        }
        let arrival_offset_ns = path_km
            .map(|km| wrap_offset(timing.delay(source.src) + k * km - signal_time, period));
        out.push(CrosstalkContribution {
            kind,
            band,
            mechanism,
            source_link: *source,
            power_ratio_db: pr,
            arrival_offset_ns,
            removable: band == Band::Interband,
        });
    };

    for wl in &plan.wavelengths {
        let wi = wl.index;
        let (band, iso) = if wi == w {
            (Band::Intraband, 0.0)
        } else {
            (Band::Interband, spec.wdm_isolation_db)
        };
        let a_d = fd.atten(wi)?;

        if let Some(src) = plan.outgoing(d, wi) {
            push(
                CrosstalkKind::Point,
                band,
                Mechanism::NodeReturnLoss,
                src,
                -spec.cir_return_loss_db - mnd - iso,
                Some(0.0),
            );
            for &z in &fd.joints_km {
                push(
                    CrosstalkKind::Point,
                    band,
                    Mechanism::ConnectorReflection,
                    src,
                    -spec.connector_reflection_db - 2.0 * a_d * z - mnd - iso,
                    Some(2.0 * z),
                );
            }
            push(
                CrosstalkKind::Continuous,
                band,
                Mechanism::RayleighBackscatter,
                src,
                fd.rayleigh_return_db(wi, spec.rayleigh_coeff_db_per_km)? - mnd - iso,
                None,
            );
        }

        if let Some(src) = plan.incoming(s, wi) {
            let fp = fiber(src.src)?;
            let a_s = fs.atten(wi)?;
            // Into the router: source fiber plus the source-side router M&D.
            let inbound = fp.loss_db(wi)? + 2.0 * mnd;
            // Out of the router toward the victim receiver.
            let outbound = 2.0 * mnd + fd.loss_db(wi)? + mnd;
            push(
                CrosstalkKind::Point,
                band,
                Mechanism::RouterDirectivity,
                src,
                -(inbound + spec.cir_directivity_db + outbound) - iso,
                Some(fp.length_km + fd.length_km),
            );
            for &z in &fs.joints_km {
                let from_router = fs.length_km - z;
                push(
                    CrosstalkKind::Point,
                    band,
                    Mechanism::ConnectorReflection,
                    src,
                    -(inbound
                        + 2.0 * a_s * from_router
                        + spec.connector_reflection_db
                        + outbound)
                        - iso,
                    Some(fp.length_km + 2.0 * from_router + fd.length_km),
                );
            }
            push(
                CrosstalkKind::Continuous,
                band,
                Mechanism::RayleighBackscatter,
                src,
                fs.rayleigh_return_db(wi, spec.rayleigh_coeff_db_per_km)? - inbound - outbound - iso,
                None,
            );
        }
    }
    Ok(out)
}

/// Crosstalk as read from a power meter: output power against the reference
/// launch power less one quarter of the four-M&D path loss.
pub fn emulate_crosstalk_measurement(
    output_power_dbm: f64,
    p0_dbm: f64,
    measured_path_loss_db: f64,
) -> f64 {
    output_power_dbm - (p0_dbm - measured_path_loss_db / 4.0)
}

/// Linear power sum of contributions, in dB.
pub fn total_power_db<'a>(
    contributions: impl IntoIterator<Item = &'a CrosstalkContribution>,
) -> f64 {
    let sum: f64 = contributions
        .into_iter()
        .map(|c| 10f64.powf(c.power_ratio_db / 10.0))
        .sum();
    10.0 * sum.log10()
}

/// What the power-meter procedure would report for these contributions, with
/// every interfering transmitter running at `p0_dbm`.
pub fn predicted_measurement_db(
    contributions: &[CrosstalkContribution],
    p0_dbm: f64,
    measured_path_loss_db: f64,
) -> f64 {
    let out = p0_dbm + total_power_db(contributions);
    emulate_crosstalk_measurement(out, p0_dbm, measured_path_loss_db)
}

impl CrosstalkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CrosstalkKind::Point => "point",
            CrosstalkKind::Continuous => "continuous",
        }
    }
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::Intraband => "intraband",
            Band::Interband => "interband",
        }
    }
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::NodeReturnLoss => "node_return_loss",
            Mechanism::RouterDirectivity => "router_directivity",
            Mechanism::ConnectorReflection => "connector_reflection",
            Mechanism::RayleighBackscatter => "rayleigh_backscatter",
        }
    }
}

/// Tab-separated listing: kind, band, mechanism, source, dB, offset ns.
pub fn contributions_table(plan: &NetworkPlan, contributions: &[CrosstalkContribution]) -> String {
    let mut out = String::from("kind\tband\tmechanism\tsource\tpower_db\toffset_ns\n");
    for c in contributions {
        let offset = c
            .arrival_offset_ns
            .map_or_else(|| "-".to_string(), |o| format!("{o:.3}"));
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}2R2{}\t{:.2}\t{}",
            c.kind.as_str(),
            c.band.as_str(),
            c.mechanism.as_str(),
            plan.label(c.source_link.src),
            plan.label(c.source_link.dst),
            c.power_ratio_db,
            offset
        );
    }
    out
}
