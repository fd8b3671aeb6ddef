//! Monte Carlo ground truth for the IN scheme, the `U = 0` baseline and the
//! ABS baseline.
//!
//! A trial places the typical user at the origin, draws both BS tiers and the
//! users around the typical user's nearest macro, schedules one user per BS
//! (the typical user is always the one scheduled by its serving BS), picks
//! the IN targets of the nearest macro and computes the typical user's SIR.
//! One [`TrialRecord`] holds everything needed to evaluate any `U`, any ABS
//! fraction `η` and any rate threshold from the same realization.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::UserClass;
use crate::association::{classify, AssociationClass, NetworkConfig, Tier};
use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Fraction of trials allowed to trip the third-nearest-macro guard.
pub const WINDOW_GUARD_FRACTION: f64 = 0.01;

/// Default window radius `max(5 / sqrt(π λ1), 2000 m)`.
pub fn default_window_radius(cfg: &NetworkConfig) -> f64 {
    (5.0 / (PI * cfg.macro_tier.density).sqrt()).max(2000.0)
}

/// One sampled realization. The typical user is `user_points[0]` at the
/// origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub macro_points: Vec<Point>,
    pub pico_points: Vec<Point>,
    pub user_points: Vec<Point>,
    pub window_radius: f64,
}

/// Homogeneous PPP in a disc, generated in order of distance from the
/// origin: `π λ r_k²` are the arrival times of a unit-rate Poisson process.
#[derive(Debug, Clone, Default)]
struct RadialPpp {
    r2: Vec<f64>,
    angle: Vec<f64>,
}

impl RadialPpp {
    fn sample<R: Rng>(rng: &mut R, density: f64, radius: f64) -> Self {
        let mut out = RadialPpp::default();
        if !(density > 0.0) {
            return out;
        }
        let scale = 1.0 / (PI * density);
        let limit = radius * radius;
        let mut arrival = 0.0;
        loop {
            let e: f64 = Exp1.sample(rng);
            arrival += e;
            let r2 = arrival * scale;
            if r2 > limit {
                break;
            }
            out.r2.push(r2);
            out.angle.push(2.0 * PI * rng.random::<f64>());
        }
        out
    }

    fn len(&self) -> usize {
        self.r2.len()
    }

    fn point(&self, k: usize) -> Point {
        let r = self.r2[k].sqrt();
        let (s, c) = self.angle[k].sin_cos();
        [r * c, r * s]
    }

    /// Number of points within `radius` of the origin.
    fn count_within(&self, radius: f64) -> usize {
        self.r2.partition_point(|&r2| r2 <= radius * radius)
    }
}

fn uniform_in_annulus<R: Rng>(rng: &mut R, center: Point, inner: f64, outer: f64) -> Point {
    let r = (inner * inner + rng.random::<f64>() * (outer * outer - inner * inner)).sqrt();
    let (s, c) = (2.0 * PI * rng.random::<f64>()).sin_cos();
    [center[0] + r * c, center[1] + r * s]
}

fn poisson_count<R: Rng>(rng: &mut R, mean: f64) -> usize {
    if !(mean > 0.0) {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0)
}

/// Sample both tiers and the users in a disc of radius `window_radius`,
/// with the typical user added at the origin.
pub fn sample_deployment(cfg: &NetworkConfig, window_radius: f64, seed: u64) -> Result<Deployment> {
    if !(window_radius > 0.0 && window_radius.is_finite()) {
        return Err(Error::config("window_radius", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let macros = RadialPpp::sample(&mut rng, cfg.macro_tier.density, window_radius);
    let picos = RadialPpp::sample(&mut rng, cfg.pico_tier.density, window_radius);
    let n_users = poisson_count(&mut rng, cfg.user_density * PI * window_radius * window_radius);
    let mut user_points = Vec::with_capacity(n_users + 1);
    user_points.push([0.0, 0.0]);
    for _ in 0..n_users {
        user_points.push(uniform_in_annulus(&mut rng, [0.0, 0.0], 0.0, window_radius));
    }
    Ok(Deployment {
        macro_points: (0..macros.len()).map(|k| macros.point(k)).collect(),
        pico_points: (0..picos.len()).map(|k| picos.point(k)).collect(),
        user_points,
        window_radius,
    })
}

/// Bucket grid for nearest-point queries.
#[derive(Debug, Clone)]
struct Grid {
    half: f64,
    cell: f64,
    n: usize,
    start: Vec<u32>,
    items: Vec<u32>,
}

impl Grid {
    fn new(points: &[Point], half: f64, cell: f64) -> Self {
        let n = ((2.0 * half / cell).ceil() as usize).clamp(1, 4096);
        let cell = 2.0 * half / n as f64;
        let mut grid = Grid {
            half,
            cell,
            n,
            start: vec![0; n * n + 1],
            items: vec![0; points.len()],
        };
        let ids: Vec<usize> = points.iter().map(|p| grid.cell_id(*p)).collect();
        for &id in &ids {
            grid.start[id + 1] += 1;
        }
        for i in 0..n * n {
            grid.start[i + 1] += grid.start[i];
        }
        let mut fill = grid.start.clone();
        for (k, &id) in ids.iter().enumerate() {
            grid.items[fill[id] as usize] = k as u32;
            fill[id] += 1;
        }
        grid
    }

    fn coord(&self, v: f64) -> usize {
        (((v + self.half) / self.cell).floor().max(0.0) as usize).min(self.n - 1)
    }

    fn cell_id(&self, p: Point) -> usize {
        self.coord(p[1]) * self.n + self.coord(p[0])
    }

    /// Index and squared distance of the nearest point, or `None` if the
    /// grid is empty.
    fn nearest(&self, points: &[Point], q: Point) -> Option<(usize, f64)> {
        if points.is_empty() {
            return None;
        }
        let (cx, cy) = (self.coord(q[0]) as isize, self.coord(q[1]) as isize);
        let n = self.n as isize;
        let mut best = (usize::MAX, f64::INFINITY);
        let scan = |ix: isize, iy: isize, best: &mut (usize, f64)| {
            if ix < 0 || iy < 0 || ix >= n || iy >= n {
                return;
            }
            let id = (iy * n + ix) as usize;
            for &k in &self.items[self.start[id] as usize..self.start[id + 1] as usize] {
                let p = points[k as usize];
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                if d2 < best.1 {
                    *best = (k as usize, d2);
                }
            }
        };
        for ring in 0..=n {
            if ring == 0 {
                scan(cx, cy, &mut best);
            } else {
                for d in -ring..=ring {
                    scan(cx + d, cy - ring, &mut best);
                    scan(cx + d, cy + ring, &mut best);
                }
                for d in -ring + 1..ring {
                    scan(cx - ring, cy + d, &mut best);
                    scan(cx + ring, cy + d, &mut best);
                }
            }
            let reach = ring as f64 * self.cell;
            if best.1 <= reach * reach {
                break;
            }
        }
        (best.0 != usize::MAX).then_some(best)
    }
}

/// Coordinates and grid for the points of one tier within a radius that
/// grows on demand.
struct TierGeometry<'a> {
    ppp: &'a RadialPpp,
    window: f64,
    radius: f64,
    cell: f64,
    points: Vec<Point>,
    grid: Grid,
}

impl<'a> TierGeometry<'a> {
    fn new(ppp: &'a RadialPpp, density: f64, radius: f64, window: f64) -> Self {
        let cell = 1.0 / density.sqrt();
        let mut g = TierGeometry {
            ppp,
            window,
            radius: 0.0,
            cell,
            points: Vec::new(),
            grid: Grid::new(&[], 1.0, 1.0),
        };
        g.rebuild(radius.min(window));
        g
    }

    fn rebuild(&mut self, radius: f64) {
        self.radius = radius;
        let count = self.ppp.count_within(radius);
        self.points = (0..count).map(|k| self.ppp.point(k)).collect();
        self.grid = Grid::new(&self.points, radius, self.cell);
    }

    /// Exact nearest point of the whole tier (within the window).
    fn nearest(&mut self, q: Point) -> Option<(usize, f64)> {
        let qn = q[0].hypot(q[1]);
        loop {
            let found = self.grid.nearest(&self.points, q);
            let complete = self.radius >= self.window;
            match found {
                Some((k, d2)) if qn + d2.sqrt() <= self.radius || complete => return Some((k, d2)),
                None if complete => return None,
                _ => self.rebuild((self.radius * 1.5).max(qn * 1.5).min(self.window)),
            }
        }
    }
}

/// Per-user association labels for a full [`Deployment`].
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationRealization {
    /// Serving tier and BS index of every user.
    pub serving: Vec<(Tier, usize)>,
    pub class: Vec<AssociationClass>,
    /// Nearest macro of every user.
    pub nearest_macro: Vec<usize>,
    pub macro_loads: Vec<u32>,
    pub pico_loads: Vec<u32>,
    /// Offloaded users grouped by their nearest macro.
    pub offloaded_by_macro: Vec<Vec<usize>>,
}

/// Biased association and classification of every user in `dep`.
pub fn associate_and_classify(dep: &Deployment, cfg: &NetworkConfig) -> Result<AssociationRealization> {
    if dep.macro_points.is_empty() {
        return Err(Error::EmptyTier("macro"));
    }
    if dep.pico_points.is_empty() {
        return Err(Error::EmptyTier("pico"));
    }
    let r = dep.window_radius;
    let mg = Grid::new(&dep.macro_points, r, 1.0 / cfg.macro_tier.density.sqrt());
    let pg = Grid::new(&dep.pico_points, r, 1.0 / cfg.pico_tier.density.sqrt());
    let mut out = AssociationRealization {
        serving: Vec::with_capacity(dep.user_points.len()),
        class: Vec::with_capacity(dep.user_points.len()),
        nearest_macro: Vec::with_capacity(dep.user_points.len()),
        macro_loads: vec![0; dep.macro_points.len()],
        pico_loads: vec![0; dep.pico_points.len()],
        offloaded_by_macro: vec![Vec::new(); dep.macro_points.len()],
    };
    for (i, &q) in dep.user_points.iter().enumerate() {
        let (m, dm2) = mg.nearest(&dep.macro_points, q).expect("non-empty tier");
        let (p, dp2) = pg.nearest(&dep.pico_points, q).expect("non-empty tier");
        let class = classify(cfg, dm2.sqrt(), dp2.sqrt());
        let serving = match class {
            AssociationClass::Macro => {
                out.macro_loads[m] += 1;
                (Tier::Macro, m)
            }
            AssociationClass::Offloaded => {
                out.offloaded_by_macro[m].push(i);
                out.pico_loads[p] += 1;
                (Tier::Pico, p)
            }
            AssociationClass::PicoUnoffloaded => {
                out.pico_loads[p] += 1;
                (Tier::Pico, p)
            }
        };
        out.serving.push(serving);
        out.class.push(class);
        out.nearest_macro.push(m);
    }
    Ok(out)
}

/// Scheduling decisions for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSchedule {
    /// Scheduled user per macro / pico (`None` for an empty cell, which
    /// still transmits to a virtual user).
    pub macro_scheduled: Vec<Option<usize>>,
    pub pico_scheduled: Vec<Option<usize>>,
    /// Active offloaded users per macro: offloaded users whose nearest macro
    /// it is and who are scheduled by their pico.
    pub active_offloaded: Vec<Vec<usize>>,
    /// IN targets per macro, `min(U, active)` drawn without replacement.
    pub in_targets: Vec<Vec<usize>>,
}

/// Draw a [`SlotSchedule`]. User 0 (the typical user) is always scheduled
/// by its serving BS.
pub fn schedule_slot<R: Rng>(real: &AssociationRealization, max_dof: usize, rng: &mut R) -> SlotSchedule {
    let mut macro_members: Vec<Vec<usize>> = vec![Vec::new(); real.macro_loads.len()];
    let mut pico_members: Vec<Vec<usize>> = vec![Vec::new(); real.pico_loads.len()];
    for (i, &(tier, k)) in real.serving.iter().enumerate() {
        match tier {
            Tier::Macro => macro_members[k].push(i),
            Tier::Pico => pico_members[k].push(i),
        }
    }
    let pick = |members: &Vec<usize>, rng: &mut R| -> Option<usize> {
        if members.contains(&0) {
            return Some(0);
        }
        (!members.is_empty()).then(|| members[rng.random_range(0..members.len())])
    };
    let macro_scheduled: Vec<_> = macro_members.iter().map(|m| pick(m, rng)).collect();
    let pico_scheduled: Vec<_> = pico_members.iter().map(|m| pick(m, rng)).collect();
    let mut active_offloaded = vec![Vec::new(); real.macro_loads.len()];
    for s in pico_scheduled.iter().flatten() {
        if real.class[*s] == AssociationClass::Offloaded {
            active_offloaded[real.nearest_macro[*s]].push(*s);
        }
    }
    let in_targets = active_offloaded
        .iter()
        .map(|active| {
            let mut pool = active.clone();
            let take = max_dof.min(pool.len());
            for i in 0..take {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            pool.truncate(take);
            pool
        })
        .collect();
    SlotSchedule {
        macro_scheduled,
        pico_scheduled,
        active_offloaded,
        in_targets,
    }
}

fn cn_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<Complex<f64>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DVector::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex::new(s * re, s * im)
    })
}

/// Unit-norm first column of `H^H (H H^H)^{-1}` where the rows of `H` are
/// `h^H, g_1^H, ..., g_u^H` for `rows = [h, g_1, ..., g_u]`. The result is
/// orthogonal to every `g_i`.
pub fn zfbf_precoder(rows: &[DVector<Complex<f64>>]) -> Result<DVector<Complex<f64>>> {
    let k = rows.len();
    if k == 0 {
        return Err(Error::domain("zfbf_precoder", "no channels"));
    }
    let n = rows[0].len();
    if k > n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::domain("zfbf_precoder", format!("{k} rows of length {n}")));
    }
    let h = DMatrix::from_fn(k, n, |i, j| rows[i][j].conj());
    let gram = &h * h.adjoint();
    let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d.re), hi.max(d.re)));
    if !(lo > 1e-7 * hi) {
        return Err(Error::RankDeficient);
    }
    let mut e1 = DVector::zeros(k);
    e1[0] = Complex::new(1.0, 0.0);
    let w = h.adjoint() * chol.solve(&e1);
    let norm = w.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::RankDeficient);
    }
    Ok(w / Complex::new(norm, 0.0))
}

/// `|a^H f|²`.
pub fn beam_gain(a: &DVector<Complex<f64>>, f: &DVector<Complex<f64>>) -> f64 {
    a.dotc(f).norm_sqr()
}

/// Scheme evaluated on the trial records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SchemeVariant {
    /// IN with `U` degrees of freedom (`U = 0` is plain offloading).
    In(usize),
    /// ABS with resource fraction `η` for the offloaded users.
    Abs(f64),
}

/// Beamforming gain model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fidelity {
    /// Explicit Gaussian channels with ZFBF / MRT for the serving BS and the
    /// typical user's nearest macro.
    Full,
    /// Gamma / exponential effective gains.
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub variant: SchemeVariant,
    pub fidelity: Fidelity,
}

impl SchemeSpec {
    pub fn validate(&self, cfg: &NetworkConfig) -> Result<()> {
        match self.variant {
            SchemeVariant::In(u) if u >= cfg.macro_tier.antennas => {
                Err(Error::config("in_dof", format!("U = {u} must be below N1")))
            }
            SchemeVariant::Abs(eta) if !(eta > 0.0 && eta < 1.0) => {
                Err(Error::config("abs_fraction", format!("eta = {eta} must lie in (0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

/// Sufficient statistics of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub class: AssociationClass,
    /// Distance to the nearest macro.
    pub macro_dist: f64,
    /// Distance to the nearest pico.
    pub pico_dist: f64,
    /// Load `L_0` of the serving BS, counting the typical user.
    pub load: u32,
    /// Active offloaded users at the nearest macro (the typical user
    /// included when it is offloaded; zero for unoffloaded pico users).
    pub active: u32,
    /// Position of an offloaded typical user in its macro's random IN order.
    pub rank: u32,
    /// SIR under IN with `U = 0..N1`.
    pub sir: Vec<f64>,
    /// Gain from the nearest macro per `U` (offloaded users only).
    pub dominant_gain: Vec<f64>,
    /// SIR and load under ABS.
    pub abs_sir: f64,
    pub abs_load: u32,
    /// Whether the typical user occupies the offloaded-only fraction under ABS.
    pub abs_offloaded_slot: bool,
    /// The nearest-macro guard was violated.
    pub window_violation: bool,
}

impl TrialRecord {
    pub fn class_under(&self, variant: SchemeVariant) -> UserClass {
        match (self.class, variant) {
            (AssociationClass::Macro, _) => UserClass::Macro,
            (AssociationClass::PicoUnoffloaded, _) => UserClass::PicoUnoffloaded,
            (AssociationClass::Offloaded, SchemeVariant::In(u)) if (self.rank as usize) < u => {
                UserClass::OffloadedIn
            }
            (AssociationClass::Offloaded, _) => UserClass::OffloadedNonIn,
        }
    }

    /// `(SIR, load, resource fraction)`.
    pub fn link(&self, variant: SchemeVariant) -> (f64, u32, f64) {
        match variant {
            SchemeVariant::In(u) => (self.sir[u], self.load, 1.0),
            SchemeVariant::Abs(eta) => {
                let share = if self.abs_offloaded_slot { eta } else { 1.0 - eta };
                (self.abs_sir, self.abs_load, share)
            }
        }
    }

    pub fn rate(&self, variant: SchemeVariant, bandwidth: f64) -> f64 {
        let (sir, load, share) = self.link(variant);
        share * bandwidth / load as f64 * sir.ln_1p() / std::f64::consts::LN_2
    }
}

/// Empirical probability with a Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub successes: usize,
    pub trials: usize,
}

impl Estimate {
    pub fn wilson(successes: usize, trials: usize) -> Self {
        if trials == 0 {
            return Estimate {
                value: f64::NAN,
                lo: 0.0,
                hi: 1.0,
                successes,
                trials,
            };
        }
        let z = 1.959_963_984_540_054;
        let n = trials as f64;
        let p = successes as f64 / n;
        let denom = 1.0 + z * z / n;
        let center = (p + z * z / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
        Estimate {
            value: p,
            lo: if successes == 0 { 0.0 } else { (center - half).max(0.0) },
            hi: if successes == trials { 1.0 } else { (center + half).min(1.0) },
            successes,
            trials,
        }
    }

    /// Binomial standard error of the point estimate.
    pub fn std_error(&self) -> f64 {
        (self.value * (1.0 - self.value) / self.trials as f64).sqrt()
    }
}

/// Monte Carlo rate coverage with per-class breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub scheme: SchemeSpec,
    pub taus: Vec<f64>,
    pub total: Vec<Estimate>,
    /// Coverage conditioned on the class (trial counts per class differ).
    pub per_class: BTreeMap<UserClass, Vec<Estimate>>,
    /// Coverage of all offloaded users together.
    pub offloaded: Vec<Estimate>,
    pub class_counts: BTreeMap<UserClass, usize>,
    pub trials: usize,
    pub seed: u64,
    pub window_violations: usize,
}

/// Settings of the trial engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub fidelity: Fidelity,
    /// `None` selects [`default_window_radius`].
    pub window_radius: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            fidelity: Fidelity::Fast,
            window_radius: None,
        }
    }
}

/// Trial records of one configuration.
#[derive(Debug, Clone)]
pub struct TrialSet {
    pub cfg: NetworkConfig,
    pub fidelity: Fidelity,
    pub seed: u64,
    pub window_radius: f64,
    pub records: Vec<TrialRecord>,
}

impl TrialSet {
    /// Run `trials` independent trials; trial `i` uses stream `i` of the
    /// ChaCha generator seeded with `seed`, so results do not depend on
    /// thread scheduling.
    pub fn run(cfg: &NetworkConfig, opts: SimOptions, trials: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        let window = opts.window_radius.unwrap_or_else(|| default_window_radius(cfg));
        if !(window > 0.0 && window.is_finite()) {
            return Err(Error::config("window_radius", "must be positive"));
        }
        let engine = TrialEngine {
            cfg,
            fidelity: opts.fidelity,
            window,
        };
        let records = (0..trials)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                engine.trial(&mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let violations = records.iter().filter(|r| r.window_violation).count();
        if violations as f64 > WINDOW_GUARD_FRACTION * trials as f64 {
            return Err(Error::InsufficientWindow(format!(
                "third-nearest macro beyond half the window ({window} m) in {violations} of {trials} trials"
            )));
        }
        Ok(TrialSet {
            cfg: *cfg,
            fidelity: opts.fidelity,
            seed,
            window_radius: window,
            records,
        })
    }

    pub fn window_violations(&self) -> usize {
        self.records.iter().filter(|r| r.window_violation).count()
    }

    /// Coverage report for one scheme over a threshold grid.
    pub fn coverage(&self, variant: SchemeVariant, taus: &[f64]) -> Result<CoverageReport> {
        let scheme = SchemeSpec {
            variant,
            fidelity: self.fidelity,
        };
        scheme.validate(&self.cfg)?;
        let w = self.cfg.bandwidth;
        let n = self.records.len();
        let mut total = vec![0usize; taus.len()];
        let mut per_class: BTreeMap<UserClass, (usize, Vec<usize>)> = BTreeMap::new();
        let mut off = (0usize, vec![0usize; taus.len()]);
        for r in &self.records {
            let class = r.class_under(variant);
            let rate = r.rate(variant, w);
            let entry = per_class.entry(class).or_insert_with(|| (0, vec![0; taus.len()]));
            entry.0 += 1;
            let offloaded = r.class == AssociationClass::Offloaded;
            if offloaded {
                off.0 += 1;
            }
            for (i, &tau) in taus.iter().enumerate() {
                if rate > tau {
                    total[i] += 1;
                    entry.1[i] += 1;
                    if offloaded {
                        off.1[i] += 1;
                    }
                }
            }
        }
        Ok(CoverageReport {
            scheme,
            taus: taus.to_vec(),
            total: total.iter().map(|&k| Estimate::wilson(k, n)).collect(),
            class_counts: per_class.iter().map(|(&k, v)| (k, v.0)).collect(),
            per_class: per_class
                .into_iter()
                .map(|(k, (m, hits))| (k, hits.iter().map(|&h| Estimate::wilson(h, m)).collect()))
                .collect(),
            offloaded: off.1.iter().map(|&h| Estimate::wilson(h, off.0)).collect(),
            trials: n,
            seed: self.seed,
            window_violations: self.window_violations(),
        })
    }

    /// Empirical `Pr(SIR > β)` among users of `class` under IN with `u`.
    pub fn sir_ccdf(&self, class: UserClass, u: usize, beta: f64) -> Estimate {
        let v = SchemeVariant::In(u);
        let (mut k, mut n) = (0, 0);
        for r in self.records.iter().filter(|r| r.class_under(v) == class) {
            n += 1;
            if r.sir[u] > beta {
                k += 1;
            }
        }
        Estimate::wilson(k, n)
    }

    /// Frequency of each association class.
    pub fn class_frequency(&self, class: AssociationClass) -> Estimate {
        let k = self.records.iter().filter(|r| r.class == class).count();
        Estimate::wilson(k, self.records.len())
    }

    /// Frequency with which an offloaded typical user is IN-selected.
    pub fn selection_frequency(&self, u: usize) -> Estimate {
        let off: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.class == AssociationClass::Offloaded)
            .collect();
        let k = off.iter().filter(|r| (r.rank as usize) < u).count();
        Estimate::wilson(k, off.len())
    }

    /// Empirical pmf of the active offloaded users seen by macro users
    /// (`Offloaded == false`) or by offloaded users (`true`, self included).
    pub fn active_offloaded_histogram(&self, offloaded_view: bool) -> Vec<f64> {
        let wanted = if offloaded_view {
            AssociationClass::Offloaded
        } else {
            AssociationClass::Macro
        };
        let values: Vec<usize> = self
            .records
            .iter()
            .filter(|r| r.class == wanted)
            .map(|r| r.active as usize)
            .collect();
        histogram(&values)
    }

    /// Empirical pmf of `L_0` for users served by `tier`.
    pub fn load_histogram(&self, tier: Tier) -> Vec<f64> {
        let values: Vec<usize> = self
            .records
            .iter()
            .filter(|r| (r.class == AssociationClass::Macro) == (tier == Tier::Macro))
            .map(|r| r.load as usize)
            .collect();
        histogram(&values)
    }

    /// Per-trial dump for one scheme: `trial,class,load,sir,rate`.
    pub fn write_dump<W: Write>(&self, variant: SchemeVariant, mut out: W) -> std::io::Result<()> {
        writeln!(out, "trial,class,load,sir,rate")?;
        for (i, r) in self.records.iter().enumerate() {
            let (sir, load, _) = r.link(variant);
            writeln!(
                out,
                "{i},{},{load},{sir:e},{:e}",
                r.class_under(variant).label(),
                r.rate(variant, self.cfg.bandwidth)
            )?;
        }
        Ok(())
    }
}

fn histogram(values: &[usize]) -> Vec<f64> {
    let max = values.iter().copied().max().unwrap_or(0);
    let mut h = vec![0.0; max + 1];
    for &v in values {
        h[v] += 1.0;
    }
    let n = values.len().max(1) as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

/// Monte Carlo rate coverage of one scheme.
pub fn estimate_rate_coverage(
    cfg: &NetworkConfig,
    scheme: SchemeSpec,
    taus: &[f64],
    trials: usize,
    seed: u64,
) -> Result<CoverageReport> {
    scheme.validate(cfg)?;
    let opts = SimOptions {
        fidelity: scheme.fidelity,
        window_radius: None,
    };
    TrialSet::run(cfg, opts, trials, seed)?.coverage(scheme.variant, taus)
}

/// Interferer group sums for one trial.
struct Interference {
    /// Macros other than the nearest.
    macro_rest: f64,
    /// Picos other than the nearest.
    pico_rest: f64,
    /// Path gains of the nearest macro and pico.
    macro0: f64,
    pico0: f64,
}

fn path_gain(r2: f64, alpha: f64) -> f64 {
    if alpha == 4.0 {
        1.0 / (r2 * r2)
    } else {
        r2.powf(-0.5 * alpha)
    }
}

struct LocalCounts {
    total: Vec<u32>,
    offloaded: Vec<u32>,
    offloaded_l0: Vec<u32>,
    unoffloaded: Vec<u32>,
    touched: Vec<usize>,
    macro_l0: u32,
}

struct TrialEngine<'a> {
    cfg: &'a NetworkConfig,
    fidelity: Fidelity,
    window: f64,
}

impl TrialEngine<'_> {
    fn trial<R: Rng>(&self, rng: &mut R) -> Result<TrialRecord> {
        let cfg = self.cfg;
        let (mt, pt) = (&cfg.macro_tier, &cfg.pico_tier);
        let macros = RadialPpp::sample(rng, mt.density, self.window);
        let picos = RadialPpp::sample(rng, pt.density, self.window);
        if macros.len() == 0 {
            return Err(Error::EmptyTier("macro"));
        }
        if picos.len() == 0 {
            return Err(Error::EmptyTier("pico"));
        }
        let half = 0.5 * self.window;
        let window_violation = macros.len() < 3 || macros.r2[2] > half * half;

        let intf = Interference {
            macro_rest: macros.r2[1..]
                .iter()
                .map(|&r2| {
                    let g: f64 = Exp1.sample(rng);
                    g * path_gain(r2, mt.pathloss)
                })
                .sum::<f64>()
                * mt.power,
            pico_rest: picos.r2[1..]
                .iter()
                .map(|&r2| {
                    let g: f64 = Exp1.sample(rng);
                    g * path_gain(r2, pt.pathloss)
                })
                .sum::<f64>()
                * pt.power,
            macro0: mt.power * path_gain(macros.r2[0], mt.pathloss),
            pico0: pt.power * path_gain(picos.r2[0], pt.pathloss),
        };
        let x = macros.r2[0].sqrt();
        let y = picos.r2[0].sqrt();
        let class = classify(cfg, x, y);

        let counts = self.local_users(rng, &macros, &picos, class)?;
        let (load, abs_load) = match class {
            AssociationClass::Macro => (1 + counts.macro_l0, 1 + counts.macro_l0),
            AssociationClass::Offloaded => (1 + counts.total[0], 1 + counts.offloaded[0]),
            AssociationClass::PicoUnoffloaded => (1 + counts.total[0], 1 + counts.unoffloaded[0]),
        };
        let mut active = 0u32;
        for &k in &counts.touched {
            if class == AssociationClass::Offloaded && k == 0 {
                continue;
            }
            let p = counts.offloaded_l0[k] as f64 / counts.total[k] as f64;
            if rng.random::<f64>() < p {
                active += 1;
            }
        }
        let mut rank = 0;
        if class == AssociationClass::Offloaded {
            active += 1;
            rank = rng.random_range(0..active);
        }
        if class == AssociationClass::PicoUnoffloaded {
            active = 0;
        }

        let n1 = mt.antennas;
        let n2 = pt.antennas;
        let mut sir = vec![0.0; n1];
        let mut dominant_gain = Vec::new();
        let (abs_sir, abs_offloaded_slot);
        match class {
            AssociationClass::Macro => {
                let gains = self.macro_signal_gains(rng, active as usize)?;
                let g_p0: f64 = Exp1.sample(rng);
                let i = intf.macro_rest + intf.pico_rest + g_p0 * intf.pico0;
                for (u, s) in sir.iter_mut().enumerate() {
                    *s = gains[u.min(active as usize)] * intf.macro0 / i;
                }
                abs_sir = sir[0];
                abs_offloaded_slot = false;
            }
            AssociationClass::PicoUnoffloaded => {
                let g = self.pico_signal_gain(rng, n2);
                let g_m0: f64 = Exp1.sample(rng);
                let s = g * intf.pico0 / (intf.macro_rest + intf.pico_rest + g_m0 * intf.macro0);
                sir.fill(s);
                abs_sir = s;
                abs_offloaded_slot = false;
            }
            AssociationClass::Offloaded => {
                let g = self.pico_signal_gain(rng, n2);
                dominant_gain = self.dominant_gains(rng, active as usize, rank as usize)?;
                for (u, s) in sir.iter_mut().enumerate() {
                    *s = g * intf.pico0 / (intf.macro_rest + intf.pico_rest + dominant_gain[u] * intf.macro0);
                }
                abs_sir = g * intf.pico0 / intf.pico_rest;
                abs_offloaded_slot = true;
            }
        }
        Ok(TrialRecord {
            class,
            macro_dist: x,
            pico_dist: y,
            load,
            active,
            rank,
            sir,
            dominant_gain,
            abs_sir,
            abs_load,
            abs_offloaded_slot,
            window_violation,
        })
    }

    /// Serving-macro beamforming gain for `u = 0..N1` nulled users
    /// (entries beyond `active` repeat the last one).
    fn macro_signal_gains<R: Rng>(&self, rng: &mut R, active: usize) -> Result<Vec<f64>> {
        let n1 = self.cfg.macro_tier.antennas;
        let top = active.min(n1 - 1);
        let mut gains = vec![0.0; n1];
        match self.fidelity {
            Fidelity::Fast => {
                // nested sums keep the gains of different U coupled, as
                // nulling one more user removes one degree of freedom
                let e: Vec<f64> = (0..n1).map(|_| Exp1.sample(rng)).collect();
                let mut acc = 0.0;
                let mut prefix = vec![0.0; n1 + 1];
                for (k, v) in e.iter().enumerate() {
                    acc += v;
                    prefix[k + 1] = acc;
                }
                for (u, g) in gains.iter_mut().enumerate() {
                    *g = prefix[n1 - u.min(top)];
                }
            }
            Fidelity::Full => {
                let h = cn_vector(rng, n1);
                let mut rows = vec![h.clone()];
                for u in 0..=top {
                    if u > 0 {
                        rows.push(cn_vector(rng, n1));
                    }
                    let f = zfbf_precoder(&rows)?;
                    gains[u] = beam_gain(&h, &f);
                }
                for u in top + 1..n1 {
                    gains[u] = gains[top];
                }
            }
        }
        Ok(gains)
    }

    fn pico_signal_gain<R: Rng>(&self, rng: &mut R, n2: usize) -> f64 {
        match self.fidelity {
            Fidelity::Fast => (0..n2).map(|_| -> f64 { Exp1.sample(rng) }).sum(),
            Fidelity::Full => cn_vector(rng, n2).norm_squared(),
        }
    }

    /// Gain of the nearest macro at an offloaded typical user for every
    /// `U`: zero when selected for IN, otherwise the beam of a precoder that
    /// does not involve this user.
    fn dominant_gains<R: Rng>(&self, rng: &mut R, active: usize, rank: usize) -> Result<Vec<f64>> {
        let n1 = self.cfg.macro_tier.antennas;
        let mut gains = vec![0.0; n1];
        match self.fidelity {
            Fidelity::Fast => {
                let g: f64 = Exp1.sample(rng);
                for (u, v) in gains.iter_mut().enumerate() {
                    *v = if rank < u { 0.0 } else { g };
                }
            }
            Fidelity::Full => {
                let own = cn_vector(rng, n1);
                let g0 = cn_vector(rng, n1);
                let others: Vec<_> = (0..(active - 1).min(n1 - 1)).map(|_| cn_vector(rng, n1)).collect();
                for (u, v) in gains.iter_mut().enumerate() {
                    let selected = rank < u;
                    let n_targets = u.min(active);
                    let mut rows = vec![own.clone()];
                    if selected {
                        rows.push(g0.clone());
                        rows.extend(others.iter().take(n_targets - 1).cloned());
                    } else {
                        rows.extend(others.iter().take(n_targets).cloned());
                    }
                    let f = zfbf_precoder(&rows)?;
                    *v = beam_gain(&g0, &f);
                }
            }
        }
        Ok(gains)
    }

    /// Sample users around the relevant cells and count them per BS.
    ///
    /// The disc grows until no probe on its boundary belongs to a cell whose
    /// population matters: the nearest macro's offloaded users, the picos
    /// serving them, or the typical user's serving BS.
    fn local_users<R: Rng>(
        &self,
        rng: &mut R,
        macros: &RadialPpp,
        picos: &RadialPpp,
        class: AssociationClass,
    ) -> Result<LocalCounts> {
        let cfg = self.cfg;
        let (mt, pt) = (&cfg.macro_tier, &cfg.pico_tier);
        let macro_cell = 1.0 / mt.density.sqrt();
        let pico_cell = 1.0 / pt.density.sqrt();
        let (center, mut rho) = match class {
            AssociationClass::PicoUnoffloaded => {
                let c = picos.point(0);
                (c, (3.0 * picos.r2[0].sqrt()).max(pico_cell))
            }
            _ => {
                let c = macros.point(0);
                (c, (macros.r2[0].sqrt() + pico_cell).max(macro_cell))
            }
        };
        let cn = center[0].hypot(center[1]);
        let mut mgeo = TierGeometry::new(macros, mt.density, 2.0 * (cn + rho) + 2.0 * macro_cell, self.window);
        let mut pgeo = TierGeometry::new(picos, pt.density, 2.0 * (cn + rho) + 2.0 * pico_cell, self.window);
        let mut counts = LocalCounts {
            total: vec![0; picos.len()],
            offloaded: vec![0; picos.len()],
            offloaded_l0: vec![0; picos.len()],
            unoffloaded: vec![0; picos.len()],
            touched: Vec::new(),
            macro_l0: 0,
        };
        let mut locate = |q: Point| -> (usize, usize, AssociationClass) {
            let (m, dm2) = mgeo.nearest(q).expect("non-empty macro tier");
            let (p, dp2) = pgeo.nearest(q).expect("non-empty pico tier");
            let c = classify(cfg, dm2.sqrt(), dp2.sqrt());
            (m, p, c)
        };
        let add_user = |counts: &mut LocalCounts, m: usize, p: usize, c: AssociationClass| match c {
            AssociationClass::Macro => {
                if m == 0 {
                    counts.macro_l0 += 1;
                }
            }
            AssociationClass::Offloaded => {
                counts.total[p] += 1;
                counts.offloaded[p] += 1;
                if m == 0 {
                    if counts.offloaded_l0[p] == 0 {
                        counts.touched.push(p);
                    }
                    counts.offloaded_l0[p] += 1;
                }
            }
            AssociationClass::PicoUnoffloaded => {
                counts.total[p] += 1;
                counts.unoffloaded[p] += 1;
            }
        };
        let limit = 0.8 * self.window - cn;
        let mut inner = 0.0;
        loop {
            let n = poisson_count(rng, cfg.user_density * PI * (rho * rho - inner * inner));
            for _ in 0..n {
                let q = uniform_in_annulus(rng, center, inner, rho);
                let (m, p, c) = locate(q);
                add_user(&mut counts, m, p, c);
            }
            if rho >= limit {
                log::warn!("user disc reached {rho:.0} m without closing the relevant cells");
                break;
            }
            let probes = ((2.0 * PI * rho) / (0.25 * pico_cell)).ceil().max(16.0) as usize;
            let open = (0..probes).any(|i| {
                let (s, c) = (2.0 * PI * i as f64 / probes as f64).sin_cos();
                let q = [center[0] + rho * c, center[1] + rho * s];
                let (m, p, c) = locate(q);
                let pico_served = c != AssociationClass::Macro;
                match class {
                    AssociationClass::PicoUnoffloaded => pico_served && p == 0,
                    AssociationClass::Macro => m == 0 || (pico_served && counts.offloaded_l0[p] > 0),
                    AssociationClass::Offloaded => {
                        m == 0 || (pico_served && (p == 0 || counts.offloaded_l0[p] > 0))
                    }
                }
            });
            if !open {
                break;
            }
            inner = rho;
            rho = (1.3 * rho).min(limit);
        }
        counts.touched.sort_unstable();
        Ok(counts)
    }
}

/// Kolmogorov–Smirnov statistic of `samples` against `cdf` and its
/// asymptotic p-value.
pub fn kolmogorov_smirnov<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}
