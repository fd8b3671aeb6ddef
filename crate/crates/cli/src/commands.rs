use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::time::Instant;

use hetnet_core::analytics::{Analytic, CoverageBreakdown, UserClass};
use hetnet_core::optimizer::{
    bias_sweep, in_dof_from_trials, optimal_abs_fraction, optimal_in_dof, verify_asymptotic_optimum, Engine,
    McSettings,
};
use hetnet_core::simulator::{Estimate, SimOptions, TrialSet};
use serde_json::{json, Value};

use crate::config::{EngineChoice, ExperimentConfig};
use crate::CliError;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// Output of one subcommand before it is written to disk.
struct Output {
    csv: String,
    extra: Value,
    summary: String,
}

fn header(columns: &[&str]) -> String {
    let mut s = columns.join(",");
    s.push('\n');
    s
}

fn class_value(map: &BTreeMap<UserClass, f64>, class: UserClass) -> String {
    map.get(&class).map(|v| v.to_string()).unwrap_or_default()
}

fn class_estimate(map: &BTreeMap<UserClass, Estimate>, class: UserClass) -> String {
    map.get(&class).map(|e| e.value.to_string()).unwrap_or_default()
}

fn trial_set(cfg: &ExperimentConfig) -> Result<TrialSet, CliError> {
    let opts = SimOptions {
        fidelity: cfg.fidelity,
        window_radius: None,
    };
    Ok(TrialSet::run(&cfg.network, opts, cfg.trials, cfg.seed()?)?)
}

fn analytic(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let a = Analytic::new(&cfg.network)?;
    let u = cfg.network.in_dof;
    let mut cols = vec!["tau", "exact", "mla"];
    let names: Vec<String> = UserClass::ALL
        .iter()
        .flat_map(|c| [format!("exact_{}", c.label()), format!("mla_{}", c.label())])
        .collect();
    cols.extend(names.iter().map(String::as_str));
    let mut csv = header(&cols);
    let mut curves: Vec<(CoverageBreakdown, CoverageBreakdown)> = Vec::new();
    for &tau in &cfg.taus {
        let exact = a.rate_coverage_exact(tau, u, None)?;
        let mla = a.rate_coverage_mla(tau, u)?;
        write!(csv, "{tau},{},{}", exact.total, mla.total).unwrap();
        for c in UserClass::ALL {
            write!(csv, ",{},{}", class_value(&exact.per_class, c), class_value(&mla.per_class, c)).unwrap();
        }
        csv.push('\n');
        curves.push((exact, mla));
    }
    let stats = a.model().stats();
    Ok(Output {
        csv,
        extra: json!({ "association": stats }),
        summary: format!("{} thresholds evaluated at U = {u}", curves.len()),
    })
}

fn simulate(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let set = trial_set(cfg)?;
    let variant = cfg.variant();
    let report = set.coverage(variant, &cfg.taus)?;
    let mut cols = vec!["tau", "coverage", "lo", "hi", "offloaded"];
    cols.extend(UserClass::ALL.iter().map(|c| c.label()));
    let mut csv = header(&cols);
    for (i, &tau) in cfg.taus.iter().enumerate() {
        let t = report.total[i];
        write!(csv, "{tau},{},{},{},{}", t.value, t.lo, t.hi, report.offloaded[i].value).unwrap();
        for c in UserClass::ALL {
            let v = report.per_class.get(&c).map(|v| v[i].value.to_string()).unwrap_or_default();
            write!(csv, ",{v}").unwrap();
        }
        csv.push('\n');
    }
    if cfg.dump {
        fs::create_dir_all(&cfg.out_dir)?;
        let file = fs::File::create(cfg.out_dir.join("realizations.csv"))?;
        set.write_dump(variant, BufWriter::new(file))?;
    }
    Ok(Output {
        csv,
        extra: json!({
            "scheme": report.scheme,
            "class_counts": report.class_counts.iter().map(|(k, v)| (k.label(), *v)).collect::<BTreeMap<_, _>>(),
            "window_violations": report.window_violations,
        }),
        summary: format!("{} trials, {} thresholds", report.trials, cfg.taus.len()),
    })
}

fn optimize_u(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let mut csv = header(&["tau", "u", "objective", "argmax"]);
    let set = match cfg.engine {
        EngineChoice::MonteCarlo => Some(trial_set(cfg)?),
        _ => None,
    };
    let mut optima = Vec::new();
    for &tau in &cfg.taus {
        let r = match (&set, cfg.engine) {
            (Some(s), _) => in_dof_from_trials(s, tau)?,
            (None, EngineChoice::AnalyticExact) => optimal_in_dof(tau, &cfg.network, Engine::AnalyticExact)?,
            (None, _) => optimal_in_dof(tau, &cfg.network, Engine::AnalyticMla)?,
        };
        for p in &r.trace {
            writeln!(csv, "{tau},{},{},{}", p.param, p.objective, u8::from(p.param == r.argmax)).unwrap();
        }
        optima.push((tau, r.argmax_index()));
    }
    let mut extra = json!({ "optima": optima });
    let mut sorted = cfg.taus.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.dedup();
    if cfg.engine != EngineChoice::MonteCarlo && sorted.len() >= 3 && sorted[0] / sorted[sorted.len() - 1] >= 100.0 {
        match verify_asymptotic_optimum(&cfg.network, &sorted) {
            Ok(check) => extra["asymptotic"] = serde_json::to_value(check).unwrap(),
            Err(e) => extra["asymptotic"] = json!({ "error": e.to_string() }),
        }
    }
    let summary = optima
        .iter()
        .map(|(t, u)| format!("tau={t:e}: U*={u}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Output { csv, extra, summary })
}

fn optimize_abs(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let set = trial_set(cfg)?;
    let iterations = cfg.abs_iterations.unwrap_or(cfg.network.macro_tier.antennas);
    let mut csv = header(&["tau", "eta", "objective", "argmax"]);
    let mut optima = Vec::new();
    let mut warnings = Vec::new();
    for &tau in &cfg.taus {
        let r = optimal_abs_fraction(tau, &set, iterations)?;
        for p in &r.trace {
            writeln!(csv, "{tau},{},{},{}", p.param, p.objective, u8::from(p.param == r.argmax)).unwrap();
        }
        optima.push((tau, r.argmax));
        warnings.extend(r.warning);
    }
    let summary = optima
        .iter()
        .map(|(t, e)| format!("tau={t:e}: eta*={e:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Output {
        csv,
        extra: json!({ "optima": optima, "iterations": iterations, "warnings": warnings }),
        summary,
    })
}

fn sweep_bias(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let mc = McSettings {
        trials: cfg.trials,
        seed: cfg.seed()?,
        fidelity: cfg.fidelity,
    };
    let mut cols = vec!["tau", "bias_db", "scheme", "parameter", "total", "total_lo", "total_hi", "offloaded"];
    cols.extend(UserClass::ALL.iter().map(|c| c.label()));
    cols.push("best");
    let mut csv = header(&cols);
    let mut bests = Vec::new();
    for &tau in &cfg.taus {
        let sweep = bias_sweep(tau, &cfg.network, &cfg.bias_grid_db, mc, cfg.abs_iterations)?;
        for (i, r) in sweep.rows.iter().enumerate() {
            write!(
                csv,
                "{tau},{},{},{},{},{},{},{}",
                r.bias_db,
                r.scheme.label(),
                r.parameter,
                r.total.value,
                r.total.lo,
                r.total.hi,
                r.offloaded.value
            )
            .unwrap();
            for c in UserClass::ALL {
                write!(csv, ",{}", class_estimate(&r.per_class, c)).unwrap();
            }
            writeln!(csv, ",{}", u8::from(sweep.best.get(&r.scheme) == Some(&i))).unwrap();
        }
        for (scheme, &i) in &sweep.best {
            let r = &sweep.rows[i];
            bests.push(json!({
                "tau": tau, "scheme": scheme.label(), "bias_db": r.bias_db,
                "parameter": r.parameter, "coverage": r.total.value,
            }));
        }
    }
    let summary = bests
        .iter()
        .map(|b| format!("{}: B*={} dB coverage {:.4}", b["scheme"].as_str().unwrap(), b["bias_db"], b["coverage"].as_f64().unwrap()))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(Output {
        csv,
        extra: json!({ "best": bests }),
        summary,
    })
}

/// Cross-check of the analytic engine against Monte Carlo. Returns the
/// output and whether the tolerance held.
fn validate(cfg: &ExperimentConfig) -> Result<(Output, bool), CliError> {
    let a = Analytic::new(&cfg.network)?;
    let u = cfg.network.in_dof;
    let set = trial_set(cfg)?;
    let report = set.coverage(hetnet_core::simulator::SchemeVariant::In(u), &cfg.taus)?;
    let mut csv = header(&["tau", "monte_carlo", "mc_lo", "mc_hi", "exact", "mla", "abs_dev_exact", "abs_dev_mla"]);
    let (mut dev_exact, mut dev_mla) = (0.0f64, 0.0f64);
    for (i, &tau) in cfg.taus.iter().enumerate() {
        let mc = report.total[i];
        let exact = a.rate_coverage_exact(tau, u, None)?.total;
        let mla = a.rate_coverage_mla(tau, u)?.total;
        let (de, dm) = ((exact - mc.value).abs(), (mla - mc.value).abs());
        dev_exact = dev_exact.max(de);
        dev_mla = dev_mla.max(dm);
        writeln!(csv, "{tau},{},{},{},{exact},{mla},{de},{dm}", mc.value, mc.lo, mc.hi).unwrap();
    }
    let model = a.model();
    let freq = |c| set.class_frequency(c).value;
    use hetnet_core::association::AssociationClass as A;
    let stats = model.stats();
    let extra = json!({
        "max_abs_dev_exact": dev_exact,
        "max_abs_dev_mla": dev_mla,
        "tolerance": cfg.tolerance,
        "class_frequency": {
            "macro": [freq(A::Macro), stats.a1],
            "pico_unoffloaded": [freq(A::PicoUnoffloaded), stats.a2_unoff],
            "offloaded": [freq(A::Offloaded), stats.a2_off],
        },
        "in_selection": [set.selection_frequency(u).value, model.in_selection_probability(u)],
    });
    let pass = dev_exact <= cfg.tolerance;
    let summary = format!(
        "max |exact - MC| = {dev_exact:.4}, max |mla - MC| = {dev_mla:.4} (tolerance {}): {}",
        cfg.tolerance,
        if pass { "ok" } else { "FAILED" }
    );
    Ok((Output { csv, extra, summary }, pass))
}

/// Run one subcommand and write `<name>.csv` and `<name>.json` into the
/// output directory.
pub fn run(name: &str, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let (out, pass) = match name {
        "analytic" => (analytic(cfg)?, true),
        "simulate" => (simulate(cfg)?, true),
        "optimize-u" => (optimize_u(cfg)?, true),
        "optimize-abs" => (optimize_abs(cfg)?, true),
        "sweep-bias" => (sweep_bias(cfg)?, true),
        "validate" => validate(cfg)?,
        other => unreachable!("unknown subcommand {other}"),
    };
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(format!("{name}.csv")), &out.csv)?;
    let meta = json!({
        "command": name,
        "version": VERSION,
        "seed": cfg.seed,
        "runtime_seconds": start.elapsed().as_secs_f64(),
        "config": cfg,
        "result": out.extra,
    });
    fs::write(
        cfg.out_dir.join(format!("{name}.json")),
        serde_json::to_string_pretty(&meta).unwrap() + "\n",
    )?;
    println!("{name}: {}", out.summary);
    if pass {
        Ok(())
    } else {
        Err(CliError::Numeric(out.summary))
    }
}
