//! Conditional coverage `S_k(β)`, per-class and total rate coverage, the
//! mean-load approximation and the gain/penalty decomposition of the IN
//! design parameter.
//!
//! Every `S_k` is an expectation over serving distances of a truncated
//! series of scaled Laplace-transform derivatives. Multiplying the
//! transforms of independent interferer groups multiplies their generating
//! functions, so the series coefficients are those of
//! `exp(c0 + Σ_k b_k t^k)`: `c0` is the log-transform, `b_k` the `k`-th
//! log-coefficient summed over groups. [`exp_series`] turns that into
//! non-negative coefficients `a_n` with `S = Σ_{n<M} a_n` and, because
//! `Σ_n a_n = 1`, the outage `1 - S = Σ_{n>=M} a_n`. The outage can
//! therefore be computed as a sum of positive terms when it is small.
//!
//! For every class the ratio `s r^{-α}` between the Laplace argument and the
//! exclusion radius does not depend on distance, so the incomplete beta
//! values are computed once per call as a [`BetaLadder`].

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{AssociationModel, NetworkConfig, Tier};
use crate::error::{Error, Result};
use crate::quadrature::{decay_cutoff, integrate_vec, Tolerance};
use crate::special_math::{exp_series, BetaLadder, TierParams};

/// Longest coefficient series used for the outage tail.
const SERIES_CAP: usize = 400;
/// Outage values above this are taken as `1 - S` without a tail sum.
const TAIL_THRESHOLD: f64 = 0.01;

/// User class under the IN scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UserClass {
    Macro,
    PicoUnoffloaded,
    OffloadedIn,
    OffloadedNonIn,
}

impl UserClass {
    pub const ALL: [UserClass; 4] = [
        UserClass::Macro,
        UserClass::PicoUnoffloaded,
        UserClass::OffloadedIn,
        UserClass::OffloadedNonIn,
    ];

    /// Tier of the serving BS.
    pub fn serving_tier(self) -> Tier {
        match self {
            UserClass::Macro => Tier::Macro,
            _ => Tier::Pico,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            UserClass::Macro => "macro",
            UserClass::PicoUnoffloaded => "pico_unoffloaded",
            UserClass::OffloadedIn => "offloaded_in",
            UserClass::OffloadedNonIn => "offloaded_non_in",
        }
    }
}

/// Laplace argument, exclusion radius and their ratio `s r^{-α}` for one
/// interfering tier as seen by a user of a given class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierArgument {
    pub s: f64,
    pub exclusion_radius: f64,
    pub ratio: f64,
}

/// `x` is the distance to the nearest macro BS and `y` the distance to the
/// serving BS (for macro users both are the same and `x` is ignored).
///
/// `s_j = β y^{α_k} P_j / P_k` with `k` the serving tier. Exclusion radii:
/// macro users see no macro closer than `y` and no pico closer than the
/// biased boundary; unoffloaded pico users see no pico closer than `y` and
/// no macro closer than the unbiased boundary; offloaded users see no macro
/// closer than `x` and no pico closer than `y`.
pub fn tier_argument(
    class: UserClass,
    tier: Tier,
    x: f64,
    y: f64,
    beta: f64,
    cfg: &NetworkConfig,
) -> TierArgument {
    let serving = cfg.tier(class.serving_tier());
    let interferer = cfg.tier(tier);
    let s = beta * y.powf(serving.pathloss) * interferer.power / serving.power;
    let (exclusion_radius, ratio) = match (class, tier) {
        (UserClass::Macro, Tier::Macro) => (y, beta),
        (UserClass::Macro, Tier::Pico) => (cfg.biased_boundary(y), beta / cfg.bias),
        (UserClass::PicoUnoffloaded, Tier::Macro) => {
            let m = &cfg.macro_tier;
            let p = &cfg.pico_tier;
            let r = (m.power / p.power).powf(1.0 / m.pathloss) * y.powf(p.pathloss / m.pathloss);
            (r, beta)
        }
        (UserClass::PicoUnoffloaded, Tier::Pico) => (y, beta),
        (_, Tier::Macro) => (x, s * x.powf(-interferer.pathloss)),
        (_, Tier::Pico) => (y, beta),
    };
    TierArgument {
        s,
        exclusion_radius,
        ratio,
    }
}

/// Numerical settings of the analytic engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Tolerance of every distance integral.
    pub tolerance: Tolerance,
    /// Integrate the outage `1 - S` as a positive series tail so that it
    /// keeps full relative precision when it is tiny.
    pub precise_outage: bool,
    /// Load sums stop once this cumulative pmf mass is reached.
    pub load_mass: f64,
    /// Load sums also stop once `S` falls below this value.
    pub negligible: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            tolerance: Tolerance::new(1e-10, 1e-8),
            precise_outage: false,
            load_mass: 1.0 - 1e-6,
            negligible: 1e-12,
        }
    }
}

impl EvalOptions {
    pub fn precise() -> Self {
        EvalOptions {
            precise_outage: true,
            ..Default::default()
        }
    }

    fn integration_tolerance(&self) -> Tolerance {
        if self.precise_outage {
            Tolerance::new(1e-300, self.tolerance.rel)
                .with_max_subdivisions(self.tolerance.max_subdivisions)
        } else {
            self.tolerance
        }
    }
}

/// Coverage `S_M` and outage `1 - S_M` of one class for a list of signal
/// gains `M`, plus the integrated (unnormalized) density mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEval {
    pub orders: Vec<usize>,
    pub coverage: Vec<f64>,
    pub outage: Vec<f64>,
    pub mass: f64,
}

impl ClassEval {
    fn certain(orders: &[usize], mass: f64) -> Self {
        ClassEval {
            orders: orders.to_vec(),
            coverage: vec![1.0; orders.len()],
            outage: vec![0.0; orders.len()],
            mass,
        }
    }

    fn from_integrals(orders: &[usize], mass: f64, values: &[f64], precise: bool) -> Self {
        let n = orders.len();
        let norm = |v: f64| if mass > 0.0 { (v / mass).clamp(0.0, 1.0) } else { 0.0 };
        let coverage: Vec<f64> = values[..n].iter().map(|&v| norm(v)).collect();
        let outage = if precise {
            values[n..2 * n].iter().map(|&v| norm(v)).collect()
        } else {
            coverage.iter().map(|c| 1.0 - c).collect()
        };
        ClassEval {
            orders: orders.to_vec(),
            coverage,
            outage,
            mass,
        }
    }

    /// Coverage for signal gain `m`.
    pub fn coverage_at(&self, m: usize) -> f64 {
        self.coverage[self.index(m)]
    }

    pub fn outage_at(&self, m: usize) -> f64 {
        self.outage[self.index(m)]
    }

    fn index(&self, m: usize) -> usize {
        self.orders
            .iter()
            .position(|&o| o == m)
            .unwrap_or_else(|| panic!("order {m} was not evaluated"))
    }
}

/// `πδλ J_k` for `k = 0..=kmax`.
fn scaled_ladder(tier: &TierParams, ratio: f64, kmax: usize) -> Result<Vec<f64>> {
    let ladder = BetaLadder::new(tier, ratio, kmax)?;
    let c = PI * tier.delta() * tier.density;
    Ok((0..=kmax).map(|k| c * ladder.get(k)).collect())
}

/// Pointwise series evaluation shared by all integrands.
struct SeriesPoint<'a> {
    orders: &'a [usize],
    mmax: usize,
    len: usize,
    precise: bool,
    b: Vec<f64>,
    a: Vec<f64>,
}

impl<'a> SeriesPoint<'a> {
    fn new(orders: &'a [usize], len: usize, precise: bool) -> Self {
        let mmax = orders.iter().copied().max().unwrap_or(0);
        SeriesPoint {
            orders,
            mmax,
            len: len.max(mmax),
            precise,
            b: Vec::with_capacity(len + 1),
            a: Vec::with_capacity(len + 1),
        }
    }

    fn width(&self) -> usize {
        self.orders.len() * if self.precise { 2 } else { 1 }
    }

    /// `terms` are `(s^δ, πδλ J)` pairs; `dominant` is the `c` of a single
    /// unit-exponential interferer with Laplace transform `1/(1+c)`.
    /// Writes `S_M` for every order, then (precise mode) `1 - S_M`.
    fn eval(&mut self, terms: &[(f64, &[f64])], dominant: Option<f64>, out: &mut [f64]) {
        let len = if self.precise { self.len + 1 } else { self.mmax };
        self.b.clear();
        self.b.resize(len.max(1), 0.0);
        let mut c0 = 0.0;
        for &(d, ladder) in terms {
            c0 -= d * ladder[0];
            for k in 1..len {
                self.b[k] += d * ladder[k];
            }
        }
        if let Some(c) = dominant {
            c0 -= c.ln_1p();
            let q = c / (1.0 + c);
            let mut qk = 1.0;
            for k in 1..len {
                qk *= q;
                self.b[k] += qk / k as f64;
            }
        }
        exp_series(c0, &self.b, self.mmax, &mut self.a);
        let n = self.orders.len();
        let prefix = |a: &[f64], m: usize| a[..m].iter().sum::<f64>();
        for (i, &m) in self.orders.iter().enumerate() {
            out[i] = prefix(&self.a, m).min(1.0);
        }
        if !self.precise {
            return;
        }
        let covered = prefix(&self.a, self.mmax);
        let tail = if 1.0 - covered < TAIL_THRESHOLD {
            self.continue_tail()
        } else {
            None
        };
        for (i, &m) in self.orders.iter().enumerate() {
            out[n + i] = match tail {
                Some(t) => t + self.a[m..self.mmax].iter().sum::<f64>(),
                None => (1.0 - out[i]).max(0.0),
            };
        }
    }

    /// `Σ_{n>=mmax} a_n`, or `None` if the series did not settle within the
    /// available coefficients.
    fn continue_tail(&mut self) -> Option<f64> {
        let mut total = 0.0;
        let mut prev = f64::INFINITY;
        for n in self.mmax..=self.len {
            let mut acc = 0.0;
            for k in 1..=n {
                acc += k as f64 * self.b[k] * self.a[n - k];
            }
            let term = if n == 0 { self.a[0] } else { acc / n as f64 };
            self.a.push(term);
            total += term;
            if term <= 1e-17 * total && term <= prev || total == 0.0 && n > self.mmax + 2 {
                self.a.truncate(self.mmax);
                return Some(total);
            }
            prev = term;
        }
        self.a.truncate(self.mmax);
        None
    }
}

/// Series length needed for the outage tail when the coefficients decay
/// geometrically with ratio `q`.
fn series_len(mmax: usize, q: f64, precise: bool) -> usize {
    if !precise {
        return mmax;
    }
    if !(q > 0.0) {
        return mmax + 2;
    }
    let extra = (-39.0 / q.ln()).ceil();
    if extra.is_finite() {
        (mmax + extra as usize + 8).min(SERIES_CAP)
    } else {
        SERIES_CAP
    }
}

/// `f(x) = 2^x - 1`.
#[inline]
pub fn rate_to_sir(x: f64) -> f64 {
    (LN_2 * x).exp_m1()
}

/// Coverage of the offloaded users with and without IN at one `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffloadedEval {
    pub nulled: ClassEval,
    pub not_nulled: ClassEval,
}

/// Per-class rate coverage and its assembly into the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageBreakdown {
    pub tau: f64,
    pub in_dof: usize,
    pub total: f64,
    /// `Σ_k weight_k (1 - R_k)`, accurate even when tiny in precise mode.
    pub outage: f64,
    pub per_class: BTreeMap<UserClass, f64>,
    pub per_class_outage: BTreeMap<UserClass, f64>,
    pub weights: BTreeMap<UserClass, f64>,
    /// Load pmf mass left out of the load sums (zero for the mean-load form).
    pub truncated_mass: f64,
}

impl CoverageBreakdown {
    fn assemble(
        tau: f64,
        in_dof: usize,
        weights: BTreeMap<UserClass, f64>,
        values: &BTreeMap<UserClass, (f64, f64)>,
        truncated_mass: f64,
    ) -> Self {
        let per_class: BTreeMap<_, _> = values.iter().map(|(&k, &(r, _))| (k, r)).collect();
        let per_class_outage: BTreeMap<_, _> = values.iter().map(|(&k, &(_, q))| (k, q)).collect();
        let total = UserClass::ALL.iter().map(|k| weights[k] * per_class[k]).sum();
        let outage = UserClass::ALL.iter().map(|k| weights[k] * per_class_outage[k]).sum();
        CoverageBreakdown {
            tau,
            in_dof,
            total,
            outage,
            per_class,
            per_class_outage,
            weights,
            truncated_mass,
        }
    }

    /// Offloaded-user coverage `Pr(E) R_2OC + (1 - Pr(E)) R_2OC̄`.
    pub fn offloaded(&self) -> f64 {
        let w = self.weights[&UserClass::OffloadedIn] + self.weights[&UserClass::OffloadedNonIn];
        if w == 0.0 {
            return self.per_class[&UserClass::OffloadedNonIn];
        }
        (self.weights[&UserClass::OffloadedIn] * self.per_class[&UserClass::OffloadedIn]
            + self.weights[&UserClass::OffloadedNonIn] * self.per_class[&UserClass::OffloadedNonIn])
            / w
    }
}

/// Terms of the change in mean-load rate coverage from `U - 1` to `U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaDecomposition {
    pub in_dof: usize,
    pub tau: f64,
    /// `R̄(U) - R̄(U-1)`.
    pub delta_total: f64,
    /// `A_2O ΔR̄_2O`.
    pub gain: f64,
    /// `A_1 |ΔR̄_1|`.
    pub penalty: f64,
    /// `ΔR̄_2O`.
    pub delta_offloaded: f64,
    /// `ΔR̄_1`.
    pub delta_macro: f64,
}

/// Analytic engine bound to one configuration.
#[derive(Debug, Clone)]
pub struct Analytic {
    model: AssociationModel,
    opts: EvalOptions,
}

impl Analytic {
    pub fn new(cfg: &NetworkConfig) -> Result<Self> {
        Self::with_options(cfg, EvalOptions::default())
    }

    pub fn with_options(cfg: &NetworkConfig, opts: EvalOptions) -> Result<Self> {
        cfg.validate()?;
        Ok(Analytic {
            model: AssociationModel::new(cfg)?,
            opts,
        })
    }

    pub fn model(&self) -> &AssociationModel {
        &self.model
    }

    pub fn config(&self) -> &NetworkConfig {
        self.model.config()
    }

    pub fn options(&self) -> &EvalOptions {
        &self.opts
    }

    /// `S` of macro users for each signal gain in `orders` (the IN-dependent
    /// `M_1 = N_1 - u` is left to the caller).
    pub fn macro_coverage(&self, beta: f64, orders: &[usize]) -> Result<ClassEval> {
        let cfg = self.config();
        let stats = self.model.stats();
        if beta == 0.0 || orders.is_empty() {
            return Ok(ClassEval::certain(orders, stats.a1));
        }
        let (m, p) = (&cfg.macro_tier, &cfg.pico_tier);
        let precise = self.opts.precise_outage;
        let mmax = orders.iter().copied().max().unwrap();
        let len = series_len(mmax, beta / (1.0 + beta), precise);
        let lad1 = scaled_ladder(m, beta, len)?;
        let lad2 = scaled_ladder(p, beta / cfg.bias, len)?;
        let l1 = PI * m.density;
        let excl = PI * p.density * (cfg.bias * p.power / m.power).powf(2.0 / p.pathloss)
            * l1.powf(-m.pathloss / p.pathloss);
        let exponent = m.pathloss / p.pathloss;
        let weight = |t: f64| (-t - excl * t.powf(exponent)).exp();
        let probe_power = mmax as f64 * exponent.max(1.0);
        let upper = decay_cutoff(|t| weight(t) * (1.0 + t).powf(probe_power), 8.0);
        let mut point = SeriesPoint::new(orders, len, precise);
        let dim = 1 + point.width();
        let v = integrate_vec(
            "conditional_coverage",
            |t, out| {
                let w = weight(t);
                out[0] = w;
                if w == 0.0 {
                    out[1..].fill(0.0);
                    return;
                }
                let y = (t / l1).sqrt();
                let s1 = tier_argument(UserClass::Macro, Tier::Macro, y, y, beta, cfg).s;
                let s2 = tier_argument(UserClass::Macro, Tier::Pico, y, y, beta, cfg).s;
                let terms = [(s1.powf(m.delta()), &lad1[..]), (s2.powf(p.delta()), &lad2[..])];
                point.eval(&terms, None, &mut out[1..]);
                out[1..].iter_mut().for_each(|o| *o *= w);
            },
            dim,
            0.0,
            upper,
            self.opts.integration_tolerance(),
        )?;
        Ok(ClassEval::from_integrals(orders, v[0], &v[1..], precise))
    }

    /// `S_2Ō` with signal gain `N_2`.
    pub fn pico_unoffloaded_coverage(&self, beta: f64) -> Result<ClassEval> {
        let cfg = self.config();
        let stats = self.model.stats();
        let (m, p) = (&cfg.macro_tier, &cfg.pico_tier);
        let orders = [p.antennas];
        if beta == 0.0 {
            return Ok(ClassEval::certain(&orders, stats.a2_unoff));
        }
        let precise = self.opts.precise_outage;
        let len = series_len(p.antennas, beta / (1.0 + beta), precise);
        let lad1 = scaled_ladder(m, beta, len)?;
        let lad2 = scaled_ladder(p, beta, len)?;
        let l2 = PI * p.density;
        let excl = PI * m.density * (m.power / p.power).powf(2.0 / m.pathloss)
            * l2.powf(-p.pathloss / m.pathloss);
        let exponent = p.pathloss / m.pathloss;
        let weight = |t: f64| (-t - excl * t.powf(exponent)).exp();
        let probe_power = p.antennas as f64 * exponent.max(1.0);
        let upper = decay_cutoff(|t| weight(t) * (1.0 + t).powf(probe_power), 8.0);
        let mut point = SeriesPoint::new(&orders, len, precise);
        let dim = 1 + point.width();
        let class = UserClass::PicoUnoffloaded;
        let v = integrate_vec(
            "conditional_coverage",
            |t, out| {
                let w = weight(t);
                out[0] = w;
                if w == 0.0 {
                    out[1..].fill(0.0);
                    return;
                }
                let y = (t / l2).sqrt();
                let s1 = tier_argument(class, Tier::Macro, y, y, beta, cfg).s;
                let s2 = tier_argument(class, Tier::Pico, y, y, beta, cfg).s;
                let terms = [(s1.powf(m.delta()), &lad1[..]), (s2.powf(p.delta()), &lad2[..])];
                point.eval(&terms, None, &mut out[1..]);
                out[1..].iter_mut().for_each(|o| *o *= w);
            },
            dim,
            0.0,
            upper,
            self.opts.integration_tolerance(),
        )?;
        Ok(ClassEval::from_integrals(&orders, v[0], &v[1..], precise))
    }

    /// `S_2OC` and `S_2OC̄` with signal gain `N_2`, from one pass over the
    /// offloading strip.
    ///
    /// The strip is parametrized by `v = P1 y^{α2} / (P2 x^{α1}) ∈ [1, B]`
    /// (outer) and `t = π λ1 x²` (inner), which makes the macro ratio
    /// `s r^{-α1} = β v` constant along the inner integral.
    pub fn offloaded_coverage(&self, beta: f64) -> Result<OffloadedEval> {
        let cfg = self.config();
        let stats = self.model.stats();
        let p = &cfg.pico_tier;
        let orders = [p.antennas];
        if beta == 0.0 {
            let c = ClassEval::certain(&orders, stats.a2_off);
            return Ok(OffloadedEval {
                nulled: c.clone(),
                not_nulled: c,
            });
        }
        let precise = self.opts.precise_outage;
        let qmax = beta * cfg.bias / (1.0 + beta * cfg.bias);
        let len = series_len(p.antennas, qmax, precise);
        let lad2 = scaled_ladder(p, beta, len)?;
        let width = SeriesPoint::new(&orders, len, precise).width();
        let dim = 1 + 2 * width;
        let tol = self.opts.integration_tolerance();
        let inner_tol = Tolerance::new(tol.abs / 10.0, tol.rel / 10.0).with_max_subdivisions(tol.max_subdivisions);

        let mut failure: Option<Error> = None;
        let mut strip = |v: f64, out: &mut [f64]| {
            if failure.is_some() {
                out.fill(0.0);
                return;
            }
            match self.strip_line(beta, v, &orders, len, &lad2, inner_tol) {
                Ok(vals) => out.copy_from_slice(&vals),
                Err(e) => {
                    failure = Some(e);
                    out.fill(0.0);
                }
            }
        };
        let v = if cfg.bias - 1.0 <= 1e-12 {
            let mut out = vec![0.0; dim];
            strip(1.0, &mut out);
            out
        } else {
            let v = integrate_vec("conditional_coverage", &mut strip, dim, 1.0, cfg.bias, tol);
            if let Some(e) = failure.take() {
                return Err(e);
            }
            v?
        };
        if let Some(e) = failure {
            return Err(e);
        }
        let mass = if cfg.bias - 1.0 <= 1e-12 { 0.0 } else { v[0] };
        let norm_mass = v[0];
        let mut nulled = ClassEval::from_integrals(&orders, norm_mass, &v[1..1 + width], precise);
        let mut not_nulled = ClassEval::from_integrals(&orders, norm_mass, &v[1 + width..], precise);
        nulled.mass = mass;
        not_nulled.mass = mass;
        Ok(OffloadedEval { nulled, not_nulled })
    }

    /// Inner integral over `t = π λ1 x²` at fixed `v`; returns
    /// `[mass, IN values.., non-IN values..]` per unit `v`.
    fn strip_line(
        &self,
        beta: f64,
        v: f64,
        orders: &[usize],
        len: usize,
        lad2: &[f64],
        tol: Tolerance,
    ) -> Result<Vec<f64>> {
        let cfg = self.config();
        let (m, p) = (&cfg.macro_tier, &cfg.pico_tier);
        let precise = self.opts.precise_outage;
        let lad1 = scaled_ladder(m, beta * v, len)?;
        let l1 = PI * m.density;
        let l2 = PI * p.density;
        let y_of = |x: f64| (v * p.power / m.power * x.powf(m.pathloss)).powf(1.0 / p.pathloss);
        let weight = |t: f64| {
            let y = y_of((t / l1).sqrt());
            let y2 = y * y;
            (-t - l2 * y2).exp() * 2.0 * l2 * y2 / (p.pathloss * v)
        };
        let exponent = m.pathloss / p.pathloss;
        let probe_power = p.antennas as f64 * exponent.max(1.0);
        let upper = decay_cutoff(|t| weight(t) * (1.0 + t).powf(probe_power), 8.0);
        let mut point = SeriesPoint::new(orders, len, precise);
        let width = point.width();
        let dominant = beta * v;
        integrate_vec(
            "conditional_coverage",
            |t, out| {
                let w = weight(t);
                out[0] = w;
                if w == 0.0 || t == 0.0 {
                    out[1..].fill(0.0);
                    return;
                }
                let x = (t / l1).sqrt();
                let y = y_of(x);
                let s1 = tier_argument(UserClass::OffloadedIn, Tier::Macro, x, y, beta, cfg).s;
                let s2 = tier_argument(UserClass::OffloadedIn, Tier::Pico, x, y, beta, cfg).s;
                let terms = [(s1.powf(m.delta()), &lad1[..]), (s2.powf(p.delta()), lad2)];
                let (nulled, rest) = out[1..].split_at_mut(width);
                point.eval(&terms, None, nulled);
                point.eval(&terms, Some(dominant), rest);
                out[1..].iter_mut().for_each(|o| *o *= w);
            },
            1 + 2 * width,
            0.0,
            upper,
            tol,
        )
    }

    /// `S_k(β)` for one class at IN degrees of freedom `u`.
    pub fn conditional_coverage(&self, class: UserClass, beta: f64, u: usize) -> Result<f64> {
        check_dof(self.config(), u)?;
        if !(beta >= 0.0) {
            return Err(Error::domain("conditional_coverage", format!("beta = {beta}")));
        }
        Ok(match class {
            UserClass::Macro => {
                let orders = macro_orders(self.config(), u);
                let eval = self.macro_coverage(beta, &orders)?;
                self.macro_mixture(&eval, u).0
            }
            UserClass::PicoUnoffloaded => self.pico_unoffloaded_coverage(beta)?.coverage[0],
            UserClass::OffloadedIn => self.offloaded_coverage(beta)?.nulled.coverage[0],
            UserClass::OffloadedNonIn => self.offloaded_coverage(beta)?.not_nulled.coverage[0],
        })
    }

    /// `Σ_u Pr(u_2OC = u) (S, 1 - S)` at `M = N_1 - u`.
    fn macro_mixture(&self, eval: &ClassEval, u_max: usize) -> (f64, f64) {
        let n1 = self.config().macro_tier.antennas;
        (0..=u_max).fold((0.0, 0.0), |(s, q), u| {
            let w = self.model.in_dof_pmf(u, u_max);
            (s + w * eval.coverage_at(n1 - u), q + w * eval.outage_at(n1 - u))
        })
    }

    fn weights(&self, u: usize) -> BTreeMap<UserClass, f64> {
        let st = self.model.stats();
        let pr = self.model.in_selection_probability(u);
        BTreeMap::from([
            (UserClass::Macro, st.a1),
            (UserClass::PicoUnoffloaded, st.a2_unoff),
            (UserClass::OffloadedIn, st.a2_off * pr),
            (UserClass::OffloadedNonIn, st.a2_off * (1.0 - pr)),
        ])
    }

    /// Pico-tier class values `(S, 1 - S)` at one `β`.
    fn pico_values(&self, beta: f64) -> Result<[(f64, f64); 3]> {
        let un = self.pico_unoffloaded_coverage(beta)?;
        let off = self.offloaded_coverage(beta)?;
        Ok([
            (un.coverage[0], un.outage[0]),
            (off.nulled.coverage[0], off.nulled.outage[0]),
            (off.not_nulled.coverage[0], off.not_nulled.outage[0]),
        ])
    }

    /// Mean-load rate coverage `R̄(U, τ)` for every `U` in `0..N_1`, sharing
    /// the class integrals across `U`.
    pub fn mla_profile(&self, tau: f64) -> Result<Vec<CoverageBreakdown>> {
        check_tau(tau)?;
        let cfg = self.config();
        let n1 = cfg.macro_tier.antennas;
        let (beta1, beta2) = self.mean_load_betas(tau);
        let all: Vec<usize> = (1..=n1).collect();
        let macro_eval = self.macro_coverage(beta1, &all)?;
        let pico = self.pico_values(beta2)?;
        Ok((0..n1)
            .map(|u| {
                let values = BTreeMap::from([
                    (UserClass::Macro, self.macro_mixture(&macro_eval, u)),
                    (UserClass::PicoUnoffloaded, pico[0]),
                    (UserClass::OffloadedIn, pico[1]),
                    (UserClass::OffloadedNonIn, pico[2]),
                ]);
                CoverageBreakdown::assemble(tau, u, self.weights(u), &values, 0.0)
            })
            .collect())
    }

    /// `β_j = f(E[L_j] τ / W)` for both tiers.
    pub fn mean_load_betas(&self, tau: f64) -> (f64, f64) {
        let w = self.config().bandwidth;
        (
            rate_to_sir(self.model.mean_load(Tier::Macro) * tau / w),
            rate_to_sir(self.model.mean_load(Tier::Pico) * tau / w),
        )
    }

    /// Mean-load approximation `R̄(U, τ)`.
    pub fn rate_coverage_mla(&self, tau: f64, u: usize) -> Result<CoverageBreakdown> {
        check_tau(tau)?;
        check_dof(self.config(), u)?;
        let (beta1, beta2) = self.mean_load_betas(tau);
        let orders = macro_orders(self.config(), u);
        let macro_eval = self.macro_coverage(beta1, &orders)?;
        let pico = self.pico_values(beta2)?;
        let values = BTreeMap::from([
            (UserClass::Macro, self.macro_mixture(&macro_eval, u)),
            (UserClass::PicoUnoffloaded, pico[0]),
            (UserClass::OffloadedIn, pico[1]),
            (UserClass::OffloadedNonIn, pico[2]),
        ]);
        Ok(CoverageBreakdown::assemble(tau, u, self.weights(u), &values, 0.0))
    }

    /// Rate coverage `R(τ)` with the load pmfs summed up to `n_max` per tier
    /// (or adaptively to the configured pmf mass).
    pub fn rate_coverage_exact(&self, tau: f64, u: usize, n_max: Option<usize>) -> Result<CoverageBreakdown> {
        check_tau(tau)?;
        check_dof(self.config(), u)?;
        let cfg = self.config();
        let orders = macro_orders(cfg, u);
        let w = cfg.bandwidth;

        let macro_sum = self.load_sum(Tier::Macro, n_max, |n| {
            let beta = rate_to_sir(n as f64 * tau / w);
            let eval = self.macro_coverage(beta, &orders)?;
            let (s, q) = self.macro_mixture(&eval, u);
            Ok(vec![(s, q)])
        })?;
        let pico_sum = self.load_sum(Tier::Pico, n_max, |n| {
            let beta = rate_to_sir(n as f64 * tau / w);
            Ok(self.pico_values(beta)?.to_vec())
        })?;

        let values = BTreeMap::from([
            (UserClass::Macro, macro_sum.values[0]),
            (UserClass::PicoUnoffloaded, pico_sum.values[0]),
            (UserClass::OffloadedIn, pico_sum.values[1]),
            (UserClass::OffloadedNonIn, pico_sum.values[2]),
        ]);
        let truncated = macro_sum.truncated.max(pico_sum.truncated);
        if truncated > 1.0 - self.opts.load_mass + 1e-12 {
            log::warn!("rate_coverage_exact: truncated load mass {truncated:.3e} at tau = {tau}");
        }
        Ok(CoverageBreakdown::assemble(tau, u, self.weights(u), &values, truncated))
    }

    /// `Σ_n Pr(L = n) g(n)` for vector-valued `g` returning `(S, 1 - S)`
    /// pairs, evaluated in parallel batches until the pmf mass target is met
    /// or every `S` is negligible.
    fn load_sum<G>(&self, tier: Tier, n_max: Option<usize>, g: G) -> Result<LoadSum>
    where
        G: Fn(usize) -> Result<Vec<(f64, f64)>> + Sync,
    {
        let limit = match n_max {
            Some(n) if n >= 1 => n,
            Some(_) => return Err(Error::config("n_max", "must be at least 1")),
            None => self.model.load_support(tier, self.opts.load_mass).0,
        };
        let batch = (2 * rayon::current_num_threads()).max(4);
        let mut values: Vec<(f64, f64)> = Vec::new();
        let mut covered_mass = 0.0;
        let mut n = 1;
        while n <= limit {
            let end = (n + batch).min(limit + 1);
            let results = (n..end)
                .into_par_iter()
                .map(|k| g(k).map(|v| (self.model.load_pmf(tier, k), v)))
                .collect::<Result<Vec<_>>>()?;
            let mut negligible = true;
            for (pmf, v) in results {
                if values.is_empty() {
                    values = vec![(0.0, 0.0); v.len()];
                }
                for (acc, (s, q)) in values.iter_mut().zip(&v) {
                    acc.0 += pmf * s;
                    acc.1 += pmf * q;
                }
                covered_mass += pmf;
                negligible &= v.iter().all(|(s, _)| *s < self.opts.negligible);
            }
            n = end;
            if negligible {
                break;
            }
        }
        // the remaining mass has S below the stopping threshold (or was cut by
        // the truncation) and counts as outage
        let remaining = (1.0 - covered_mass).max(0.0);
        for acc in &mut values {
            acc.1 += remaining;
        }
        let truncated = if n > limit {
            remaining
        } else {
            0.0
        };
        Ok(LoadSum { values, truncated })
    }

    /// `R̄(U, τ) - R̄(U-1, τ)` split into gain and penalty.
    pub fn delta_rate_coverage(&self, u: usize, tau: f64) -> Result<DeltaDecomposition> {
        let cfg = self.config();
        let n1 = cfg.macro_tier.antennas;
        if u == 0 || u >= n1 {
            return Err(Error::domain("delta_rate_coverage", format!("U = {u} outside 1..{n1}")));
        }
        check_tau(tau)?;
        let (beta1, beta2) = self.mean_load_betas(tau);
        let st = self.model.stats();
        let off = self.offloaded_coverage(beta2)?;
        let gap = off.not_nulled.outage[0] - off.nulled.outage[0];
        let dpr = self.model.in_selection_probability(u) - self.model.in_selection_probability(u - 1);
        let delta_offloaded = dpr * gap;

        let macro_eval = self.macro_coverage(beta1, &[n1 - u, n1 - u + 1])?;
        let tail = self.model.in_dof_pmf(u, u);
        let step = macro_eval.outage_at(n1 - u) - macro_eval.outage_at(n1 - u + 1);
        let delta_macro = -tail * step;

        let gain = st.a2_off * delta_offloaded;
        let penalty = st.a1 * delta_macro.abs();
        Ok(DeltaDecomposition {
            in_dof: u,
            tau,
            delta_total: gain - penalty,
            gain,
            penalty,
            delta_offloaded,
            delta_macro,
        })
    }

    /// Least-squares slopes of `log ΔR̄_2O` and `log |ΔR̄_1|` against `log τ`.
    pub fn asymptotic_order_slopes(&self, u: usize, taus: &[f64]) -> Result<(f64, f64)> {
        if taus.len() < 2 {
            return Err(Error::domain("asymptotic_order_slopes", "need at least two rates"));
        }
        let deltas = taus
            .par_iter()
            .map(|&t| self.delta_rate_coverage(u, t))
            .collect::<Result<Vec<_>>>()?;
        let mut gains = Vec::new();
        let mut penalties = Vec::new();
        for d in &deltas {
            let (g, p) = (d.delta_offloaded, d.delta_macro.abs());
            if !(g > 0.0 && p > 0.0 && g.is_finite() && p.is_finite()) {
                return Err(Error::Accuracy {
                    what: "asymptotic_order_slopes",
                    error: g.min(p),
                    tolerance: f64::MIN_POSITIVE,
                });
            }
            gains.push(g.ln());
            penalties.push(p.ln());
        }
        let x: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
        Ok((ls_slope(&x, &gains), ls_slope(&x, &penalties)))
    }
}

struct LoadSum {
    values: Vec<(f64, f64)>,
    truncated: f64,
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn macro_orders(cfg: &NetworkConfig, u: usize) -> Vec<usize> {
    let n1 = cfg.macro_tier.antennas;
    (n1 - u..=n1).collect()
}

fn check_dof(cfg: &NetworkConfig, u: usize) -> Result<()> {
    if u >= cfg.macro_tier.antennas {
        return Err(Error::config(
            "in_dof",
            format!("U = {u} must be below N1 = {}", cfg.macro_tier.antennas),
        ));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::domain("rate_coverage", format!("tau = {tau}")));
    }
    Ok(())
}

/// `S_k(β)` for `cfg`.
pub fn conditional_coverage(class: UserClass, beta: f64, u: usize, cfg: &NetworkConfig) -> Result<f64> {
    Analytic::new(cfg)?.conditional_coverage(class, beta, u)
}

/// Load-summed rate coverage for `cfg`.
pub fn rate_coverage_exact(tau: f64, u: usize, cfg: &NetworkConfig, n_max: Option<usize>) -> Result<CoverageBreakdown> {
    Analytic::new(cfg)?.rate_coverage_exact(tau, u, n_max)
}

/// Mean-load rate coverage for `cfg`.
pub fn rate_coverage_mla(tau: f64, u: usize, cfg: &NetworkConfig) -> Result<CoverageBreakdown> {
    Analytic::new(cfg)?.rate_coverage_mla(tau, u)
}

/// Gain/penalty decomposition for `cfg`, with the outage computed as a
/// positive tail.
pub fn delta_rate_coverage(u: usize, tau: f64, cfg: &NetworkConfig) -> Result<DeltaDecomposition> {
    Analytic::with_options(cfg, EvalOptions::precise())?.delta_rate_coverage(u, tau)
}

/// Small-rate order slopes of the gain and penalty terms for `cfg`.
pub fn asymptotic_order_slopes(u: usize, cfg: &NetworkConfig, taus: &[f64]) -> Result<(f64, f64)> {
    Analytic::with_options(cfg, EvalOptions::precise())?.asymptotic_order_slopes(u, taus)
}
