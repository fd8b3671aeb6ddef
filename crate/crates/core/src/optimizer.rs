//! Design-parameter search: IN degrees of freedom `U*`, the ABS fraction
//! `η*` and bias sweeps over all three schemes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analytics::{Analytic, CoverageBreakdown, EvalOptions, UserClass};
use crate::association::NetworkConfig;
use crate::error::{Error, Result};
use crate::simulator::{Estimate, Fidelity, SchemeVariant, SimOptions, TrialSet};

/// Monte Carlo settings shared by the searches that need simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub trials: usize,
    pub seed: u64,
    pub fidelity: Fidelity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Engine {
    AnalyticMla,
    AnalyticExact,
    MonteCarlo(McSettings),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EngineKind {
    AnalyticMla,
    AnalyticExact,
    MonteCarlo,
}

impl Engine {
    pub fn kind(&self) -> EngineKind {
        match self {
            Engine::AnalyticMla => EngineKind::AnalyticMla,
            Engine::AnalyticExact => EngineKind::AnalyticExact,
            Engine::MonteCarlo(_) => EngineKind::MonteCarlo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub param: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub argmax: f64,
    pub objective: f64,
    /// Every evaluated point, in increasing parameter order.
    pub trace: Vec<TracePoint>,
    pub engine: EngineKind,
    pub warning: Option<String>,
}

impl OptimizationResult {
    /// `argmax` as a discrete index (for `U*`).
    pub fn argmax_index(&self) -> usize {
        self.argmax.round() as usize
    }
}

/// Index of the smallest outage; exact ties go to the smaller index.
fn argmin_first(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v < values[best] { i } else { best })
}

fn profile_result(profile: &[CoverageBreakdown], engine: EngineKind) -> OptimizationResult {
    // argmax of coverage taken as argmin of the separately accumulated
    // outage, which keeps its precision when coverage rounds to one
    let outages: Vec<f64> = profile.iter().map(|b| b.outage).collect();
    let best = argmin_first(&outages);
    OptimizationResult {
        argmax: best as f64,
        objective: profile[best].total,
        trace: profile
            .iter()
            .enumerate()
            .map(|(u, b)| TracePoint {
                param: u as f64,
                objective: b.total,
            })
            .collect(),
        engine,
        warning: None,
    }
}

/// `U* = argmax_U R(U, τ)` over `U ∈ {0, …, N1 − 1}`, ties toward smaller
/// `U`.
pub fn optimal_in_dof(tau: f64, cfg: &NetworkConfig, engine: Engine) -> Result<OptimizationResult> {
    if !(tau > 0.0) {
        return Err(Error::config("tau", "must be positive"));
    }
    match engine {
        Engine::AnalyticMla => {
            let a = Analytic::with_options(cfg, EvalOptions::precise())?;
            Ok(profile_result(&a.mla_profile(tau)?, EngineKind::AnalyticMla))
        }
        Engine::AnalyticExact => {
            let a = Analytic::with_options(cfg, EvalOptions::precise())?;
            let profile = (0..cfg.macro_tier.antennas)
                .map(|u| a.rate_coverage_exact(tau, u, None))
                .collect::<Result<Vec<_>>>()?;
            Ok(profile_result(&profile, EngineKind::AnalyticExact))
        }
        Engine::MonteCarlo(mc) => {
            let opts = SimOptions {
                fidelity: mc.fidelity,
                window_radius: None,
            };
            let set = TrialSet::run(cfg, opts, mc.trials, mc.seed)?;
            in_dof_from_trials(&set, tau)
        }
    }
}

/// Monte Carlo `U*` on an existing set of trials.
pub fn in_dof_from_trials(set: &TrialSet, tau: f64) -> Result<OptimizationResult> {
    let mut trace = Vec::with_capacity(set.cfg.macro_tier.antennas);
    for u in 0..set.cfg.macro_tier.antennas {
        let r = set.coverage(SchemeVariant::In(u), &[tau])?;
        trace.push(TracePoint {
            param: u as f64,
            objective: r.total[0].value,
        });
    }
    let best = trace
        .iter()
        .enumerate()
        .fold(0, |b, (i, p)| if p.objective > trace[b].objective { i } else { b });
    Ok(OptimizationResult {
        argmax: best as f64,
        objective: trace[best].objective,
        trace,
        engine: EngineKind::MonteCarlo,
        warning: None,
    })
}

/// Outcome of the small-threshold check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticCheck {
    pub holds: bool,
    /// `U*` at the smallest thresholds, when it stabilised.
    pub limit: Option<usize>,
    /// Values the limit is expected to take.
    pub expected: Vec<usize>,
    /// `(τ, U*)` along the sequence.
    pub trace: Vec<(f64, usize)>,
}

/// Check that `U*(τ)` settles, as `τ` decreases, on `N1 − N2 − 1` or
/// `N1 − N2` (clipped to the valid range).
pub fn verify_asymptotic_optimum(cfg: &NetworkConfig, taus: &[f64]) -> Result<AsymptoticCheck> {
    if taus.len() < 3 || taus.windows(2).any(|w| !(w[1] < w[0])) || taus.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::config("tau_sequence", "needs at least 3 positive, strictly decreasing values"));
    }
    if taus[0] / taus[taus.len() - 1] < 100.0 {
        return Err(Error::config("tau_sequence", "must span at least two decades"));
    }
    let a = Analytic::with_options(cfg, EvalOptions::precise())?;
    let mut trace = Vec::with_capacity(taus.len());
    for &tau in taus {
        let profile = a.mla_profile(tau)?;
        let outages: Vec<f64> = profile.iter().map(|b| b.outage).collect();
        let best = argmin_first(&outages);
        if outages.len() > 1 {
            let mut sorted = outages.clone();
            sorted.sort_by(|x, y| x.total_cmp(y));
            let (first, second) = (sorted[0], sorted[1]);
            if !(first > 0.0) || (second - first) <= 1e-9 * second {
                return Err(Error::Inconclusive(format!(
                    "outage differences unresolved at tau = {tau:e} ({first:e} vs {second:e})"
                )));
            }
        }
        trace.push((tau, best));
    }
    let n1 = cfg.macro_tier.antennas as i64;
    let n2 = cfg.pico_tier.antennas as i64;
    let expected: Vec<usize> = [n1 - n2 - 1, n1 - n2]
        .iter()
        .map(|&u| u.clamp(0, n1 - 1) as usize)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let tail = (taus.len() / 3).max(2);
    let last = trace[trace.len() - 1].1;
    let stable = trace[trace.len() - tail..].iter().all(|&(_, u)| u == last);
    let limit = stable.then_some(last);
    Ok(AsymptoticCheck {
        holds: limit.is_some_and(|u| expected.contains(&u)),
        limit,
        expected,
        trace,
    })
}

/// Golden-section search of the ABS fraction on Monte Carlo coverage.
///
/// `iterations` interval reductions are performed (the reference setting is
/// `N1`). If the evaluated points are not unimodal beyond sampling noise, a
/// uniform grid is evaluated as well and its argmax returned with a warning.
pub fn optimal_abs_fraction(tau: f64, set: &TrialSet, iterations: usize) -> Result<OptimizationResult> {
    if !(tau > 0.0) {
        return Err(Error::config("tau", "must be positive"));
    }
    if iterations == 0 {
        return Err(Error::config("iterations", "must be at least 1"));
    }
    let mut evals: Vec<TracePoint> = Vec::new();
    let mut f = |eta: f64| -> Result<f64> {
        let v = set.coverage(SchemeVariant::Abs(eta), &[tau])?.total[0].value;
        evals.push(TracePoint {
            param: eta,
            objective: v,
        });
        Ok(v)
    };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..iterations {
        // ties move toward smaller η
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    let mut trace = evals;
    trace.sort_by(|x, y| x.param.total_cmp(&y.param));
    trace.dedup_by(|x, y| x.param == y.param);
    let noise = 2.0 / (set.records.len() as f64).sqrt() * 0.5;
    let mut warning = None;
    if !is_unimodal(&trace, noise) {
        let grid: Vec<TracePoint> = (1..40)
            .map(|i| {
                let eta = i as f64 / 40.0;
                set.coverage(SchemeVariant::Abs(eta), &[tau]).map(|r| TracePoint {
                    param: eta,
                    objective: r.total[0].value,
                })
            })
            .collect::<Result<_>>()?;
        let best = best_point(&grid);
        let msg = format!("non-unimodal ABS objective; grid argmax eta = {}", best.param);
        log::warn!("{msg}");
        warning = Some(msg);
        trace.extend(grid);
        trace.sort_by(|x, y| x.param.total_cmp(&y.param));
        trace.dedup_by(|x, y| x.param == y.param);
        return Ok(OptimizationResult {
            argmax: best.param,
            objective: best.objective,
            trace,
            engine: EngineKind::MonteCarlo,
            warning,
        });
    }
    let best = best_point(&trace);
    Ok(OptimizationResult {
        argmax: best.param,
        objective: best.objective,
        trace,
        engine: EngineKind::MonteCarlo,
        warning: warning.take(),
    })
}

/// Highest objective; ties go to the smaller parameter.
fn best_point(points: &[TracePoint]) -> TracePoint {
    let mut sorted = points.to_vec();
    sorted.sort_by(|x, y| x.param.total_cmp(&y.param));
    sorted
        .iter()
        .copied()
        .fold(sorted[0], |b, p| if p.objective > b.objective { p } else { b })
}

/// No interior dip deeper than `tol` below both sides.
fn is_unimodal(trace: &[TracePoint], tol: f64) -> bool {
    let n = trace.len();
    (1..n.saturating_sub(1)).all(|j| {
        let left = trace[..j].iter().map(|p| p.objective).fold(f64::MIN, f64::max);
        let right = trace[j + 1..].iter().map(|p| p.objective).fold(f64::MIN, f64::max);
        trace[j].objective >= left.min(right) - tol
    })
}

/// Scheme compared in a bias sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SweepScheme {
    /// IN with `U*` from the analytic mean-load objective.
    InOptimal,
    /// Offloading without interference management (`U = 0`).
    NoMitigation,
    /// ABS with `η*` from the Monte Carlo objective.
    AbsOptimal,
}

impl SweepScheme {
    pub const ALL: [SweepScheme; 3] = [SweepScheme::InOptimal, SweepScheme::NoMitigation, SweepScheme::AbsOptimal];

    pub fn label(self) -> &'static str {
        match self {
            SweepScheme::InOptimal => "in_optimal",
            SweepScheme::NoMitigation => "u0",
            SweepScheme::AbsOptimal => "abs_optimal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bias_db: f64,
    pub scheme: SweepScheme,
    /// `U*` or `η*` (zero for `U = 0`).
    pub parameter: f64,
    pub total: Estimate,
    pub offloaded: Estimate,
    pub per_class: BTreeMap<UserClass, Estimate>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSweep {
    pub tau: f64,
    pub rows: Vec<SweepRow>,
    /// Index into `rows` of each scheme's best bias.
    pub best: BTreeMap<SweepScheme, usize>,
}

impl BiasSweep {
    pub fn best_row(&self, scheme: SweepScheme) -> &SweepRow {
        &self.rows[self.best[&scheme]]
    }
}

/// Coverage of IN with `U*`, `U = 0` and ABS with `η*` at each bias (dB).
///
/// All schemes at one bias share the same trials. `abs_iterations`
/// defaults to `N1`.
pub fn bias_sweep(
    tau: f64,
    cfg: &NetworkConfig,
    bias_grid_db: &[f64],
    mc: McSettings,
    abs_iterations: Option<usize>,
) -> Result<BiasSweep> {
    if bias_grid_db.is_empty() {
        return Err(Error::config("bias_grid", "must not be empty"));
    }
    if let Some(b) = bias_grid_db.iter().find(|&&b| !(b >= 0.0)) {
        return Err(Error::config("bias_grid", format!("{b} dB is below 0 dB")));
    }
    let iterations = abs_iterations.unwrap_or(cfg.macro_tier.antennas);
    let mut rows = Vec::new();
    for &db in bias_grid_db {
        let c = cfg.with_bias(10f64.powf(db / 10.0));
        let opts = SimOptions {
            fidelity: mc.fidelity,
            window_radius: None,
        };
        let set = TrialSet::run(&c, opts, mc.trials, mc.seed)?;
        let u_star = optimal_in_dof(tau, &c, Engine::AnalyticMla)?.argmax_index();
        let abs = optimal_abs_fraction(tau, &set, iterations)?;
        let plans = [
            (SweepScheme::InOptimal, SchemeVariant::In(u_star), u_star as f64, None),
            (SweepScheme::NoMitigation, SchemeVariant::In(0), 0.0, None),
            (SweepScheme::AbsOptimal, SchemeVariant::Abs(abs.argmax), abs.argmax, abs.warning.clone()),
        ];
        for (scheme, variant, parameter, warning) in plans {
            let r = set.coverage(variant, &[tau])?;
            rows.push(SweepRow {
                bias_db: db,
                scheme,
                parameter,
                total: r.total[0],
                offloaded: r.offloaded[0],
                per_class: r.per_class.iter().map(|(&k, v)| (k, v[0])).collect(),
                warning,
            });
        }
    }
    let mut best = BTreeMap::new();
    for scheme in SweepScheme::ALL {
        let idx = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.scheme == scheme)
            .fold(None::<usize>, |b, (i, r)| match b {
                Some(j) if rows[j].total.value >= r.total.value => Some(j),
                _ => Some(i),
            })
            .expect("non-empty grid");
        best.insert(scheme, idx);
    }
    Ok(BiasSweep { tau, rows, best })
}
