//! Click-level Monte Carlo of a decoy-state link.
//!
//! Pulses are simulated in fixed blocks of [`BLOCK_PULSES`]. Block `b` draws
//! from a ChaCha8 generator seeded with the run seed and switched to stream
//! `b`, so each block's randomness depends only on `(seed, b)`. Blocks are
//! merged in index order and dead time is applied afterwards in one sequential
//! pass over the (sparse) click list. The result is therefore identical for
//! any worker count or execution strategy.
//!
//! Per pulse: pick the intensity class by the state ratio, detect a photon
//! with probability `1 - exp(-eta * intensity)`, draw a dark count with
//! probability `y0`, flip the bit with probability `e_det` for a photon click
//! or 1/2 for a dark-only click, and keep the click in the sifted key with
//! probability `q_sift`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::qkdrate::{eta_total, gain_and_qber, DetectorParams, SourceParams, SystemParams};

pub const BLOCK_PULSES: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_pulses: u64,
    pub seed: u64,
    pub attenuation_db: f64,
    pub source: SourceParams,
    pub detector: DetectorParams,
    pub system: SystemParams,
    /// Inject incoherent crosstalk clicks at this ratio to the signal.
    pub chi_injection: Option<f64>,
    pub record_timestamps: bool,
}

impl SimConfig {
    pub fn new(n_pulses: u64, seed: u64, attenuation_db: f64) -> Self {
        SimConfig {
            n_pulses,
            seed,
            attenuation_db,
            source: SourceParams::default(),
            detector: DetectorParams::default(),
            system: SystemParams::default(),
            chi_injection: None,
            record_timestamps: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_pulses == 0 {
            return Err(Error::param("n_pulses", "must be >= 1"));
        }
        if !(self.attenuation_db >= 0.0) {
            return Err(Error::param("attenuation_db", "must be >= 0"));
        }
        if let Some(chi) = self.chi_injection {
            if !(chi >= 0.0) || !chi.is_finite() {
                return Err(Error::param("chi_injection", "must be >= 0"));
            }
        }
        self.source.validate()?;
        self.detector.validate()?;
        self.system.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityClass {
    Signal,
    Decoy,
    Vacuum,
}

impl IntensityClass {
    const ALL: [IntensityClass; 3] = [IntensityClass::Signal, IntensityClass::Decoy, IntensityClass::Vacuum];

    fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IntensityClass::Signal => "signal",
            IntensityClass::Decoy => "decoy",
            IntensityClass::Vacuum => "vacuum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: IntensityClass,
    pub sent: u64,
    pub clicks: u64,
    pub errors: u64,
    pub gain: f64,
    pub gain_se: f64,
    pub qber: f64,
    pub qber_se: f64,
}

impl ClassStats {
    fn new(class: IntensityClass, sent: u64, clicks: u64, errors: u64) -> Self {
        let (gain, gain_se) = binomial(clicks, sent);
        let (qber, qber_se) = binomial(errors, clicks);
        ClassStats {
            class,
            sent,
            clicks,
            errors,
            gain,
            gain_se,
            qber,
            qber_se,
        }
    }
}

/// Proportion and its binomial standard error.
fn binomial(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let p = k as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixStats {
    pub chi: f64,
    /// Crosstalk clicks on signal pulses.
    pub injected: u64,
    pub baseline_qber: f64,
    pub mixed_qber: f64,
    pub delta_qber: f64,
    /// Standard error of `delta_qber` given the signal click stream.
    pub delta_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub pulse_index: u64,
    pub class: IntensityClass,
    pub bit: u8,
    pub error: bool,
    pub sifted: bool,
    pub crosstalk: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub n_pulses: u64,
    pub seed: u64,
    /// Per-gate statistics of the raw click stream, before dead time and
    /// sifting; crosstalk clicks are not included here.
    pub classes: [ClassStats; 3],
    pub registered_clicks: u64,
    /// Signal-class clicks that survive dead time and sifting.
    pub sifted_count: u64,
    pub detection_rate_hz_raw: f64,
    pub detection_rate_hz_effective: f64,
    pub crosstalk: Option<MixStats>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<TraceRecord>,
}

impl SimResult {
    pub fn class(&self, class: IntensityClass) -> &ClassStats {
        &self.classes[class as usize]
    }

    /// Trace as comma-separated text with a header line.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("pulse_index,class,bit,error,sifted,crosstalk\n");
        for t in &self.trace {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                t.pulse_index,
                t.class.as_str(),
                t.bit,
                u8::from(t.error),
                u8::from(t.sifted),
                u8::from(t.crosstalk)
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Click {
    pulse: u64,
    class: u8,
    bit: u8,
    error: bool,
    sifted: bool,
    crosstalk: bool,
}

#[derive(Debug, Default)]
struct BlockTally {
    sent: [u64; 3],
    clicks: [u64; 3],
    errors: [u64; 3],
    xt_clicks: [u64; 3],
    xt_errors: [u64; 3],
    events: Vec<Click>,
}

fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// Number of gates blocked after each registered click.
fn dead_gates(dead_time_us: f64, pulse_rate_hz: f64) -> u64 {
    let gates = dead_time_us * 1e-6 * pulse_rate_hz;
    (gates - 1e-9).ceil().max(0.0) as u64
}

/// Applies non-paralyzable dead time to a click list sorted by pulse index.
fn apply_dead_time<'a>(events: impl IntoIterator<Item = &'a Click>, dead: u64) -> Vec<&'a Click> {
    let mut next_free = 0u64;
    let mut kept = Vec::new();
    for e in events {
        if e.pulse >= next_free {
            kept.push(e);
            next_free = e.pulse + dead + 1;
        }
    }
    kept
}

struct Prepared {
    cumulative: [f64; 3],
    p_photon: [f64; 3],
    /// Crosstalk probability in a gate with no other click.
    p_xt: [f64; 3],
    y0: f64,
    e_det: f64,
    q_sift: f64,
}

fn prepare(cfg: &SimConfig) -> Prepared {
    let probs = cfg.source.class_probabilities();
    let cumulative = [probs[0], probs[0] + probs[1], 1.0];
    let eta = eta_total(cfg.attenuation_db, &cfg.detector);
    let y0 = cfg.detector.dark_per_gate;
    let e_det = cfg.system.e_detector;
    let intens = cfg.source.intensities();
    let p_photon = intens.map(|i| 1.0 - (-eta * i).exp());
    let p_xt = match cfg.chi_injection {
        None => [0.0; 3],
        Some(chi) => {
            // Crosstalk clicks come at ratio chi to the error-free signal
            // clicks, independent of the intensity class. A crosstalk photon in
            // a gate that already clicked is absorbed by that click.
            let (q, e) = gain_and_qber(cfg.source.mu, eta, y0, e_det);
            let yx = chi * q * (1.0 - e);
            p_photon.map(|p| {
                let empty = (1.0 - p) * (1.0 - y0);
                (yx / empty).min(1.0)
            })
        }
    };
    Prepared {
        cumulative,
        p_photon,
        p_xt,
        y0,
        e_det,
        q_sift: cfg.system.q_sift,
    }
}

fn simulate_block(cfg: &SimConfig, prep: &Prepared, block: u64) -> BlockTally {
    let start = block * BLOCK_PULSES;
    let end = (start + BLOCK_PULSES).min(cfg.n_pulses);
    let mut rng = block_rng(cfg.seed, block);
    let mut t = BlockTally::default();
    for pulse in start..end {
        let u: f64 = rng.random();
        let class = prep.cumulative.iter().position(|&c| u < c).unwrap_or(2);
        t.sent[class] += 1;
        let photon = rng.random::<f64>() < prep.p_photon[class];
        let dark = rng.random::<f64>() < prep.y0;
        let (clicked, error, crosstalk) = if photon || dark {
            let p_err = if photon { prep.e_det } else { 0.5 };
            (true, rng.random::<f64>() < p_err, false)
        } else if prep.p_xt[class] > 0.0 && rng.random::<f64>() < prep.p_xt[class] {
            (true, rng.random::<f64>() < 0.5, true)
        } else {
            (false, false, false)
        };
        if !clicked {
            continue;
        }
        if crosstalk {
            t.xt_clicks[class] += 1;
            t.xt_errors[class] += u64::from(error);
        } else {
            t.clicks[class] += 1;
            t.errors[class] += u64::from(error);
        }
        let alice_bit: u8 = rng.random_range(0..2);
        let sifted = rng.random::<f64>() < prep.q_sift;
        t.events.push(Click {
            pulse,
            class: class as u8,
            bit: alice_bit ^ u8::from(error),
            error,
            sifted,
            crosstalk,
        });
    }
    t
}

pub fn simulate_link(cfg: &SimConfig) -> Result<SimResult> {
    simulate_link_with(cfg, Execution::default())
}

pub fn simulate_link_with(cfg: &SimConfig, exec: Execution) -> Result<SimResult> {
    cfg.validate()?;
    let prep = prepare(cfg);
    let n_blocks = cfg.n_pulses.div_ceil(BLOCK_PULSES);
    let tallies = exec.map_indexed(n_blocks as usize, |b| simulate_block(cfg, &prep, b as u64));

    let mut sent = [0u64; 3];
    let mut clicks = [0u64; 3];
    let mut errors = [0u64; 3];
    let mut xt_clicks = [0u64; 3];
    let mut xt_errors = [0u64; 3];
    for t in &tallies {
        for c in 0..3 {
            sent[c] += t.sent[c];
            clicks[c] += t.clicks[c];
            errors[c] += t.errors[c];
            xt_clicks[c] += t.xt_clicks[c];
            xt_errors[c] += t.xt_errors[c];
        }
    }
    let dead = dead_gates(cfg.detector.dead_time_us, cfg.source.pulse_rate_hz);
    let registered = apply_dead_time(tallies.iter().flat_map(|t| t.events.iter()), dead);
    let sifted_count = registered
        .iter()
        .filter(|e| e.sifted && e.class == 0)
        .count() as u64;
    let seconds = cfg.n_pulses as f64 / cfg.source.pulse_rate_hz;
    let raw_total: u64 = clicks.iter().chain(&xt_clicks).sum();

    let crosstalk = cfg.chi_injection.map(|chi| {
        let (n, e) = (clicks[0], errors[0]);
        let (m, k) = (xt_clicks[0], xt_errors[0]);
        let baseline = if n > 0 { e as f64 / n as f64 } else { 0.0 };
        let mixed = if n + m > 0 {
            (e + k) as f64 / (n + m) as f64
        } else {
            0.0
        };
        let spread = 0.5 - baseline + baseline * baseline;
        MixStats {
            chi,
            injected: m,
            baseline_qber: baseline,
            mixed_qber: mixed,
            delta_qber: mixed - baseline,
            delta_se: if n + m > 0 {
                (m as f64 * spread).sqrt() / (n + m) as f64
            } else {
                0.0
            },
        }
    });

    let trace = if cfg.record_timestamps {
        registered
            .iter()
            .map(|e| TraceRecord {
                pulse_index: e.pulse,
                class: IntensityClass::from_index(e.class as usize),
                bit: e.bit,
                error: e.error,
                sifted: e.sifted,
                crosstalk: e.crosstalk,
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(SimResult {
        n_pulses: cfg.n_pulses,
        seed: cfg.seed,
        classes: std::array::from_fn(|c| {
            ClassStats::new(IntensityClass::from_index(c), sent[c], clicks[c], errors[c])
        }),
        registered_clicks: registered.len() as u64,
        sifted_count,
        detection_rate_hz_raw: raw_total as f64 / seconds,
        detection_rate_hz_effective: registered.len() as f64 / seconds,
        crosstalk,
        trace,
    })
}

/// Empirical QBER increase when crosstalk is mixed in at `cfg.chi_injection`.
pub fn simulate_crosstalk_mix(cfg: &SimConfig) -> Result<MixStats> {
    if cfg.chi_injection.is_none() {
        return Err(Error::param("chi_injection", "required for a crosstalk mix"));
    }
    Ok(simulate_link(cfg)?.crosstalk.expect("chi set"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadTimeEstimate {
    pub input_rate_hz: f64,
    pub effective_rate_hz: f64,
    pub raw_clicks: u64,
    pub registered: u64,
    /// Standard error of the effective rate.
    pub rate_se_hz: f64,
}

/// Effective click rate of a Bernoulli click stream with per-gate
/// probability `rate_hz / gate_rate_hz` under non-paralyzable dead time.
pub fn dead_time_empirical(
    rate_hz: f64,
    tau_us: f64,
    n_pulses: u64,
    seed: u64,
    gate_rate_hz: f64,
    exec: Execution,
) -> Result<DeadTimeEstimate> {
    if !(rate_hz >= 0.0 && rate_hz <= gate_rate_hz) {
        return Err(Error::param("rate_hz", "must lie in [0, gate rate]"));
    }
    if !(tau_us >= 0.0) {
        return Err(Error::param("tau_us", "must be >= 0"));
    }
    if n_pulses == 0 {
        return Err(Error::param("n_pulses", "must be >= 1"));
    }
    let p = rate_hz / gate_rate_hz;
    let n_blocks = n_pulses.div_ceil(BLOCK_PULSES);
    let blocks: Vec<Vec<Click>> = exec.map_indexed(n_blocks as usize, |b| {
        let b = b as u64;
        let mut rng = block_rng(seed, b);
        let start = b * BLOCK_PULSES;
        let end = (start + BLOCK_PULSES).min(n_pulses);
        (start..end)
            .filter(|_| rng.random::<f64>() < p)
            .map(|pulse| Click {
                pulse,
                class: 0,
                bit: 0,
                error: false,
                sifted: false,
                crosstalk: false,
            })
            .collect()
    });
    let raw: u64 = blocks.iter().map(|b| b.len() as u64).sum();
    let dead = dead_gates(tau_us, gate_rate_hz);
    let registered = apply_dead_time(blocks.iter().flatten(), dead).len() as u64;
    let seconds = n_pulses as f64 / gate_rate_hz;
    // Renewal process: variance of the count is about N p (1-p) / (1 + p D)^3.
    let pd = p * dead as f64;
    let var = n_pulses as f64 * p * (1.0 - p) / (1.0 + pd).powi(3);
    Ok(DeadTimeEstimate {
        input_rate_hz: rate_hz,
        effective_rate_hz: registered as f64 / seconds,
        raw_clicks: raw,
        registered,
        rate_se_hz: var.sqrt() / seconds,
    })
}
