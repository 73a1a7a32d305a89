use std::fmt::Write as _;
use std::io::Read as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use wsqkd_core::netgraph::{build_plan, validate_plan, NetworkPlan};
use wsqkd_core::optics::contributions_table;
use wsqkd_core::pulsesim::{simulate_link_with, IntensityClass};
use wsqkd_core::qkdrate::{gain_and_qber, link_performance, report_table};
use wsqkd_core::report::{link_crosstalk, model_link, reproduce, sim_config_for, ReproduceOptions, Tolerance};
use wsqkd_core::scenario::{load_builtin, parse_scenario, Scenario};
use wsqkd_core::xtalk::{delta_qber, Case, DelayRecommendation};
use wsqkd_core::Execution;

use crate::{Cli, Command, Outcome, PlanFormat};

pub fn load_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    let doc = if arg == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).context("reading scenario from stdin")?;
        s
    } else if path.is_file() {
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
    } else if let Some(s) = load_builtin(arg) {
        return Ok(s);
    } else {
        bail!("no scenario file `{arg}` (built-in scenarios: wuhu)");
    };
    parse_scenario(&doc).with_context(|| format!("scenario `{arg}`"))
}

fn emit<T: Serialize>(cli: &Cli, table: &str, doc: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(doc)?;
    if let Some(path) = &cli.out {
        std::fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    if cli.json {
        eprint!("{table}");
        println!("{text}");
    } else {
        print!("{table}");
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Plan {
            n_wavelengths,
            format,
            labels,
        } => {
            let mut plan = build_plan(*n_wavelengths)?;
            if let Some(labels) = labels {
                plan = plan.with_labels(labels.clone())?;
            }
            let violations = validate_plan(&plan);
            let body = match format {
                PlanFormat::Table | PlanFormat::Json => plan_table(&plan),
                PlanFormat::Text => plan.to_records_text(),
                PlanFormat::Dot => plan.to_dot(),
            };
            let doc = json!({ "plan": plan, "violations": violations });
            if *format == PlanFormat::Json && !cli.json {
                println!("{}", serde_json::to_string_pretty(&doc)?);
                if let Some(path) = &cli.out {
                    std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
                }
            } else {
                emit(cli, &body, &doc)?;
            }
            if !violations.is_empty() {
                bail!("plan violates {} invariant(s)", violations.len());
            }
        }
        Command::Budget { scenario, link } => {
            let s = load_scenario(scenario)?;
            let l = s.resolve_link(link)?;
            let b = s.budget(&l)?;
            let mut t = String::new();
            let _ = writeln!(t, "{} on {} nm", l.id, l.link.wavelength.nominal_nm);
            let _ = writeln!(t, "{:<28}{:>10.2}", "fiber (dB)", b.fiber_db);
            let _ = writeln!(t, "{:<28}{:>10.2}", "effective insertion (dB)", b.effective_insertion_loss_db);
            let _ = writeln!(t, "{:<28}{:>10.2}", "total (dB)", b.total_db);
            let _ = writeln!(t, "{:<28}{:>10}", "source", format!("{:?}", b.source).to_lowercase());
            let warnings = s.components.warnings();
            for w in &warnings {
                let _ = writeln!(t, "warning: {w}");
            }
            let doc = json!({
                "link": l.id,
                "wavelength_nm": l.link.wavelength.nominal_nm,
                "budget": b,
                "warnings": warnings,
            });
            emit(cli, &t, &doc)?;
        }
        Command::Xtalk {
            scenario,
            link,
            best,
            interband,
            ..
        } => {
            let s = load_scenario(scenario)?;
            let l = s.resolve_link(link)?;
            let m = model_link(&s, &l)?;
            let case = if *best { Case::Best } else { Case::Worst };
            let x = link_crosstalk(&s, &l, &m, case, *interband)?;
            let plan = s.plan()?;
            let contributions: Vec<_> = x.summary.contributions.iter().map(|c| c.contribution.clone()).collect();
            let mut t = contributions_table(&plan, &contributions);
            let sm = &x.summary;
            let i = &x.impact;
            let _ = writeln!(t);
            let _ = writeln!(t, "chi worst {:.4e}  best {:.4e}  ({:?})", sm.chi_worst, sm.chi_best, case);
            let _ = writeln!(t, "crosstalk gain {:.4e} per gate, dark count {:.1e}", i.crosstalk_gain, i.dark_per_gate);
            if let Some(off) = x.calibration_offset_db {
                let _ = writeln!(t, "calibrated to the measured gain by {off:+.2} dB");
            }
            let _ = writeln!(
                t,
                "dQBER signal {:.4}% of {:.2}%, decoy {:.4}% of {:.2}%",
                100.0 * i.delta_qber_signal,
                100.0 * i.qber0_signal,
                100.0 * i.delta_qber_decoy,
                100.0 * i.qber0_decoy
            );
            let _ = writeln!(t, "negligible: {}", i.negligible);
            if let Some(f) = &x.floor {
                let _ = writeln!(
                    t,
                    "leakage floor {:.2} dB, measured {:.2} dB, margin {:+.2} dB",
                    f.floor_db,
                    x.measured_crosstalk_db.unwrap_or(f64::NAN),
                    f.margin_db
                );
            }
            match x.delay {
                DelayRecommendation::Delay(d) => {
                    let _ = writeln!(t, "delay to clear the gate: {d:.3} ns");
                }
                DelayRecommendation::Infeasible => {
                    let _ = writeln!(t, "no delay clears every point term from the gate");
                }
            }
            emit(cli, &t, &x)?;
        }
        Command::Keyrate {
            scenario,
            link,
            attenuation_db,
        } => {
            let s = load_scenario(scenario)?;
            let l = s.resolve_link(link)?;
            let mut m = model_link(&s, &l)?;
            if let Some(a) = attenuation_db {
                m.report = link_performance(*a, &s.source, &m.report.detector, &m.report.system)?;
            }
            let mut t = report_table(&m.id, &m.report);
            let _ = writeln!(
                t,
                "{:<22}{:>14.4}{}",
                "e_detector (%)",
                100.0 * m.report.system.e_detector,
                if m.e_detector_calibrated { "  calibrated" } else { "" }
            );
            let _ = writeln!(t, "{:<22}{:>14}", "vacuum-like", m.report.vacuum_like);
            emit(cli, &t, &m)?;
        }
        Command::Simulate {
            scenario,
            link,
            pulses,
            seed,
            chi,
            trace,
            sequential,
        } => {
            let s = load_scenario(scenario)?;
            let l = s.resolve_link(link)?;
            let m = model_link(&s, &l)?;
            let mut cfg = sim_config_for(&s, &m, *pulses, *seed);
            cfg.chi_injection = *chi;
            cfg.record_timestamps = trace.is_some();
            let exec = if *sequential { Execution::Sequential } else { Execution::Parallel };
            let r = simulate_link_with(&cfg, exec)?;
            if let Some(path) = trace {
                std::fs::write(path, r.trace_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            let obs = &m.report.observables;
            let vacuum = gain_and_qber(
                s.source.vacuum_intensity(),
                obs.eta_total,
                m.report.detector.dark_per_gate,
                m.report.system.e_detector,
            );
            let analytic = [(obs.q_mu, obs.e_mu), (obs.q_nu, obs.e_nu), vacuum];
            let mut t = format!("{} with {} pulses, seed {}\n", m.id, r.n_pulses, r.seed);
            let _ = writeln!(
                t,
                "{:<8}{:>10}{:>9}{:>12}{:>10}{:>12}{:>9}{:>8}{:>9}",
                "class", "sent", "clicks", "gain", "se", "model", "QBER %", "se %", "model %"
            );
            for (c, (q, e)) in r.classes.iter().zip(analytic) {
                let _ = writeln!(
                    t,
                    "{:<8}{:>10}{:>9}{:>12.4e}{:>10.1e}{:>12.4e}{:>9.3}{:>8.3}{:>9.3}",
                    c.class.as_str(),
                    c.sent,
                    c.clicks,
                    c.gain,
                    c.gain_se,
                    q,
                    100.0 * c.qber,
                    100.0 * c.qber_se,
                    100.0 * e
                );
            }
            let _ = writeln!(
                t,
                "detections {:.1} Hz raw, {:.1} Hz after dead time (model {:.1} Hz)",
                r.detection_rate_hz_raw, r.detection_rate_hz_effective, m.report.effective_detection_hz
            );
            let seconds = r.n_pulses as f64 / s.source.pulse_rate_hz;
            let _ = writeln!(
                t,
                "sifted signal clicks {} ({:.1} bit/s, model {:.1} bit/s)",
                r.sifted_count,
                r.sifted_count as f64 / seconds,
                m.report.sifted_bps
            );
            let mut model_delta = None;
            if let Some(x) = &r.crosstalk {
                let d = delta_qber(x.chi, obs.e_mu)?;
                model_delta = Some(d);
                let _ = writeln!(
                    t,
                    "crosstalk chi {}: {} injected, dQBER {:.4}% +- {:.4}% (model {:.4}%)",
                    x.chi,
                    x.injected,
                    100.0 * x.delta_qber,
                    100.0 * x.delta_se,
                    100.0 * d
                );
            }
            let signal = r.class(IntensityClass::Signal);
            let doc = json!({
                "link": m.id,
                "config": cfg,
                "result": r,
                "model": {
                    "q_mu": obs.q_mu,
                    "e_mu": obs.e_mu,
                    "q_nu": obs.q_nu,
                    "e_nu": obs.e_nu,
                    "y_vac": obs.y_vac,
                    "effective_detection_hz": m.report.effective_detection_hz,
                    "sifted_bps": m.report.sifted_bps,
                    "delta_qber": model_delta,
                },
                "signal_gain_z": (signal.gain - obs.q_mu) / signal.gain_se,
            });
            emit(cli, &t, &doc)?;
        }
        Command::Reproduce {
            scenario,
            tolerance,
            mc_pulses,
            seed,
        } => {
            let s = load_scenario(scenario)?;
            let opts = ReproduceOptions {
                tolerance: tolerance.parse::<Tolerance>()?,
                mc_pulses: *mc_pulses,
                seed: *seed,
                exec: Execution::Parallel,
            };
            let r = reproduce(&s, &opts)?;
            emit(cli, &r.to_table(), &r)?;
            if !r.pass {
                return Ok(Outcome::ReproductionFailed);
            }
        }
    }
    Ok(Outcome::Ok)
}

fn plan_table(plan: &NetworkPlan) -> String {
    let mut t = format!("{} nodes, {} wavelengths\n", plan.node_count, plan.n_wavelengths);
    for (w, cycle) in plan.cycles.iter().enumerate() {
        let ring: Vec<&str> = cycle.iter().chain(cycle.first()).map(|&n| plan.labels[n].as_str()).collect();
        let _ = writeln!(t, "wavelength {w} ({} nm): {}", plan.wavelengths[w].nominal_nm, ring.join(" -> "));
    }
    let _ = writeln!(t);
    let _ = writeln!(t, "{:<10}{:>11}{:>8}{:>9}{:>9}", "link", "wavelength", "nm", "in port", "out port");
    for l in &plan.links {
        let _ = writeln!(
            t,
            "{:<10}{:>11}{:>8}{:>9}{:>9}",
            format!("{}2R2{}", plan.label(l.src), plan.label(l.dst)),
            l.wavelength.index,
            l.wavelength.nominal_nm,
            l.router_in_port,
            l.router_out_port
        );
    }
    t
}
