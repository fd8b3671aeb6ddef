//! Association probabilities, serving-distance densities and the approximate
//! load / active-offloaded-user distributions of a two-tier network with
//! biased association.
//!
//! Tier 1 is the macro tier, tier 2 the pico tier. A user joins the macro
//! tier when `P1 Z1^{-α1} >= B P2 Z2^{-α2}`; among pico users, the ones for
//! which the macro tier is still the strongest unbiased signal are
//! *offloaded*.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature::{decay_cutoff, integrate, Tolerance};
use crate::special_math::TierParams;

/// Shape of the gamma approximation to cell sizes used by the load pmfs.
pub const DEFAULT_LOAD_SHAPE: f64 = 3.5;
/// Slope of the mean-load approximation `E[L] = 1 + 1.28 λu A / λ`.
pub const DEFAULT_LOAD_MEAN_FACTOR: f64 = 1.28;

/// Cumulative mass at which infinite pmf sums are truncated.
pub const PMF_MASS: f64 = 1.0 - 1e-9;
/// Hard cap on pmf support length.
pub const PMF_CAP: usize = 10_000;

const ASSOC_TOL: Tolerance = Tolerance::new(1e-15, 1e-13);

/// Scalar system parameters of the two-tier network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub macro_tier: TierParams,
    pub pico_tier: TierParams,
    /// Users per square metre.
    pub user_density: f64,
    /// Linear pico bias `B >= 1` (the macro bias is fixed to 1).
    pub bias: f64,
    /// Resource `W` in Hz.
    pub bandwidth: f64,
    /// IN degrees of freedom `U` in `0..N1`.
    pub in_dof: usize,
    /// Cell-size gamma shape (3.5 by default).
    pub load_shape: f64,
    /// Mean-load slope (1.28 by default).
    pub load_mean_factor: f64,
}

/// Tier index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    Macro,
    Pico,
}

impl NetworkConfig {
    /// Configuration with the default load constants.
    pub fn new(
        macro_tier: TierParams,
        pico_tier: TierParams,
        user_density: f64,
        bias: f64,
        bandwidth: f64,
        in_dof: usize,
    ) -> Self {
        NetworkConfig {
            macro_tier,
            pico_tier,
            user_density,
            bias,
            bandwidth,
            in_dof,
            load_shape: DEFAULT_LOAD_SHAPE,
            load_mean_factor: DEFAULT_LOAD_MEAN_FACTOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.macro_tier.validate("macro")?;
        self.pico_tier.validate("pico")?;
        if !(self.macro_tier.power > self.pico_tier.power) {
            return Err(Error::config("power_ratio", "macro power must exceed pico power"));
        }
        if !(self.user_density > 0.0 && self.user_density.is_finite()) {
            return Err(Error::config("user_density", "must be positive"));
        }
        if !(self.bias >= 1.0 && self.bias.is_finite()) {
            return Err(Error::config("bias", "must be at least 1 (0 dB)"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::config("bandwidth", "must be positive"));
        }
        if self.in_dof >= self.macro_tier.antennas {
            return Err(Error::config(
                "in_dof",
                format!("must be below the macro antenna count {}", self.macro_tier.antennas),
            ));
        }
        if !(self.load_shape > 0.0) {
            return Err(Error::config("load_shape", "must be positive"));
        }
        if !(self.load_mean_factor > 0.0) {
            return Err(Error::config("load_mean_factor", "must be positive"));
        }
        Ok(())
    }

    pub fn tier(&self, tier: Tier) -> &TierParams {
        match tier {
            Tier::Macro => &self.macro_tier,
            Tier::Pico => &self.pico_tier,
        }
    }

    /// `P2 / P1`.
    pub fn pico_to_macro_power(&self) -> f64 {
        self.pico_tier.power / self.macro_tier.power
    }

    pub fn with_bias(mut self, bias: f64) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_in_dof(mut self, u: usize) -> Self {
        self.in_dof = u;
        self
    }

    /// Smallest pico distance `y` (as a function of macro distance `x`)
    /// for which the macro tier wins the biased comparison:
    /// `(B P2 / P1)^{1/α2} x^{α1/α2}`.
    pub fn biased_boundary(&self, x: f64) -> f64 {
        let (a1, a2) = (self.macro_tier.pathloss, self.pico_tier.pathloss);
        (self.bias * self.pico_to_macro_power()).powf(1.0 / a2) * x.powf(a1 / a2)
    }

    /// `(P2 / P1)^{1/α2} x^{α1/α2}`: the unbiased boundary in the same form.
    pub fn unbiased_boundary(&self, x: f64) -> f64 {
        let (a1, a2) = (self.macro_tier.pathloss, self.pico_tier.pathloss);
        self.pico_to_macro_power().powf(1.0 / a2) * x.powf(a1 / a2)
    }
}

/// Class of a user under biased association before IN selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AssociationClass {
    Macro,
    PicoUnoffloaded,
    Offloaded,
}

/// Classify a user by its nearest-BS distances in each tier. Ties go to the
/// macro tier.
pub fn classify(cfg: &NetworkConfig, macro_dist: f64, pico_dist: f64) -> AssociationClass {
    let p1 = cfg.macro_tier.power * macro_dist.powf(-cfg.macro_tier.pathloss);
    let p2 = cfg.pico_tier.power * pico_dist.powf(-cfg.pico_tier.pathloss);
    if p1 >= cfg.bias * p2 {
        AssociationClass::Macro
    } else if p2 > p1 {
        AssociationClass::PicoUnoffloaded
    } else {
        AssociationClass::Offloaded
    }
}

/// Association probabilities and derived scalars for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationStats {
    pub a1: f64,
    pub a2_unoff: f64,
    pub a2_off: f64,
    pub a2: f64,
    /// Probability that a typical offloaded user is IN-selected at `in_dof`.
    pub pr_in_selected: f64,
    pub mean_load_macro: f64,
    pub mean_load_pico: f64,
}

/// `∫_0^∞ e^{-t} exp(-c t^p) dt`, the common form of the association integrals
/// after substituting `t = π λ x²`.
fn association_integral(c: f64, p: f64) -> Result<f64> {
    let g = |t: f64| (-t - c * t.powf(p)).exp();
    let upper = decay_cutoff(g, 8.0);
    integrate("association_probabilities", g, 0.0, upper, ASSOC_TOL)
}

/// `(A1, A2_unoff, A2_off)`.
pub fn association_probabilities(cfg: &NetworkConfig) -> Result<(f64, f64, f64)> {
    let (m, p) = (&cfg.macro_tier, &cfg.pico_tier);
    let (a1e, a2e) = (m.pathloss, p.pathloss);
    // A1: no pico inside (B P2/P1)^{1/α2} x^{α1/α2}; with x² = t/(πλ1).
    let c1 = PI * p.density * (cfg.bias * p.power / m.power).powf(2.0 / a2e)
        * (PI * m.density).powf(-a1e / a2e);
    let a1 = association_integral(c1, a1e / a2e)?;
    // A2_unoff: no macro inside (P1/P2)^{1/α1} y^{α2/α1}; with y² = t/(πλ2).
    let c2 = PI * m.density * (m.power / p.power).powf(2.0 / a1e)
        * (PI * p.density).powf(-a2e / a1e);
    let a2u = association_integral(c2, a2e / a1e)?;
    let a2o = if cfg.bias == 1.0 {
        0.0
    } else {
        (1.0 - a1 - a2u).max(0.0)
    };
    Ok((a1, a2u, a2o))
}

/// Which serving-distance density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServingClass {
    Macro,
    PicoUnoffloaded,
}

/// Approximate distribution of active offloaded users at a macro BS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveOffloaded {
    /// At the serving macro of a typical macro user (support `n >= 0`).
    ServingMacro,
    /// At the nearest macro of a typical offloaded user, which counts itself
    /// (support `n >= 1`).
    NearestMacro,
}

/// Closed-form association model bound to one configuration.
#[derive(Debug, Clone)]
pub struct AssociationModel {
    cfg: NetworkConfig,
    stats: AssociationStats,
}

impl AssociationModel {
    pub fn new(cfg: &NetworkConfig) -> Result<Self> {
        let (a1, a2u, a2o) = association_probabilities(cfg)?;
        let a2 = a2u + a2o;
        let mut stats = AssociationStats {
            a1,
            a2_unoff: a2u,
            a2_off: a2o,
            a2,
            pr_in_selected: 0.0,
            mean_load_macro: 1.0 + cfg.load_mean_factor * cfg.user_density * a1 / cfg.macro_tier.density,
            mean_load_pico: 1.0 + cfg.load_mean_factor * cfg.user_density * a2 / cfg.pico_tier.density,
        };
        let mut model = AssociationModel { cfg: *cfg, stats };
        stats.pr_in_selected = model.in_selection_probability(cfg.in_dof);
        model.stats = stats;
        Ok(model)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &AssociationStats {
        &self.stats
    }

    /// `f_{Y1}` or `f_{Y2}`: distance to the serving BS given the class.
    pub fn serving_distance_density(&self, class: ServingClass, y: f64) -> f64 {
        if y < 0.0 {
            return 0.0;
        }
        let (m, p) = (&self.cfg.macro_tier, &self.cfg.pico_tier);
        match class {
            ServingClass::Macro => {
                if self.stats.a1 == 0.0 {
                    return 0.0;
                }
                let r = self.cfg.biased_boundary(y);
                2.0 * PI * m.density * y / self.stats.a1
                    * (-PI * m.density * y * y - PI * p.density * r * r).exp()
            }
            ServingClass::PicoUnoffloaded => {
                if self.stats.a2_unoff == 0.0 {
                    return 0.0;
                }
                let r = (m.power / p.power).powf(1.0 / m.pathloss) * y.powf(p.pathloss / m.pathloss);
                2.0 * PI * p.density * y / self.stats.a2_unoff
                    * (-PI * p.density * y * y - PI * m.density * r * r).exp()
            }
        }
    }

    /// `f_{Y1,Y2}(x, y)` for an offloaded user: `x` to the nearest macro,
    /// `y` to the serving pico.
    pub fn joint_distance_density(&self, x: f64, y: f64) -> f64 {
        if x < 0.0 || y < 0.0 || self.stats.a2_off == 0.0 {
            return 0.0;
        }
        if y < self.cfg.unbiased_boundary(x) || y >= self.cfg.biased_boundary(x) {
            return 0.0;
        }
        let (l1, l2) = (self.cfg.macro_tier.density, self.cfg.pico_tier.density);
        (2.0 * PI * l1 * x * (-PI * l1 * x * x).exp()) * (2.0 * PI * l2 * y * (-PI * l2 * y * y).exp())
            / self.stats.a2_off
    }

    /// `λu A_j / λ_j`.
    fn load_ratio(&self, tier: Tier) -> f64 {
        let (a, lam) = match tier {
            Tier::Macro => (self.stats.a1, self.cfg.macro_tier.density),
            Tier::Pico => (self.stats.a2, self.cfg.pico_tier.density),
        };
        self.cfg.user_density * a / lam
    }

    /// `Pr(L_{0,j} = n)` for `n >= 1`.
    pub fn load_pmf(&self, tier: Tier, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let k = self.cfg.load_shape;
        let c = self.load_ratio(tier);
        let power_term = if n == 1 { 0.0 } else { (n - 1) as f64 * c.ln() };
        (k * k.ln() + ln_gamma(n as f64 + k) + power_term
            - ln_gamma(k)
            - ln_gamma(n as f64)
            - (n as f64 + k) * (c + k).ln())
        .exp()
    }

    /// `E[L_{0,j}] = 1 + 1.28 λu A_j / λ_j`.
    pub fn mean_load(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Macro => self.stats.mean_load_macro,
            Tier::Pico => self.stats.mean_load_pico,
        }
    }

    /// `ν = λ2 A_{2O} / (λ1 A_2)`.
    pub fn offload_ratio(&self) -> f64 {
        if self.stats.a2_off == 0.0 {
            return 0.0;
        }
        self.cfg.pico_tier.density * self.stats.a2_off / (self.cfg.macro_tier.density * self.stats.a2)
    }

    /// `Pr(U_{2O_a,0} = n)` or `Pr(Û_{2O_a,0} = n)`.
    pub fn active_offloaded_pmf(&self, variant: ActiveOffloaded, n: usize) -> f64 {
        let k = self.cfg.load_shape;
        let nu = self.offload_ratio();
        let nf = n as f64;
        match variant {
            ActiveOffloaded::ServingMacro => {
                if nu == 0.0 {
                    return if n == 0 { 1.0 } else { 0.0 };
                }
                let power_term = if n == 0 { 0.0 } else { nf * nu.ln() };
                (k * k.ln() + ln_gamma(nf + k) - ln_gamma(k) - ln_gamma(nf + 1.0) + power_term
                    - (nf + k) * (k + nu).ln())
                .exp()
            }
            ActiveOffloaded::NearestMacro => {
                if n == 0 {
                    return 0.0;
                }
                if nu == 0.0 {
                    return if n == 1 { 1.0 } else { 0.0 };
                }
                let power_term = if n == 1 { 0.0 } else { (nf - 1.0) * nu.ln() };
                (k * k.ln() + ln_gamma(nf + k) - ln_gamma(nf) - ln_gamma(k) + power_term
                    - (nf + k) * (k + nu).ln())
                .exp()
            }
        }
    }

    /// `Pr(u_{2OC,0} = u)` when at most `max_dof` users can be nulled.
    pub fn in_dof_pmf(&self, u: usize, max_dof: usize) -> f64 {
        if u > max_dof {
            return 0.0;
        }
        if u < max_dof {
            return self.active_offloaded_pmf(ActiveOffloaded::ServingMacro, u);
        }
        let head: f64 = (0..max_dof)
            .map(|n| self.active_offloaded_pmf(ActiveOffloaded::ServingMacro, n))
            .sum();
        (1.0 - head).max(0.0)
    }

    /// `Pr(E_{2OC,0})`: probability that a typical offloaded user is selected
    /// for IN by its nearest macro when `max_dof` users can be nulled.
    pub fn in_selection_probability(&self, max_dof: usize) -> f64 {
        if max_dof == 0 {
            return 0.0;
        }
        let nu = self.offload_ratio();
        if nu == 0.0 {
            // The typical offloaded user is the only active one.
            return 1.0;
        }
        let k = self.cfg.load_shape;
        let u = max_dof as f64;
        let inverse_mean = -(-k * (nu / k).ln_1p()).exp_m1() / nu;
        let mut value = u * inverse_mean;
        for n in 1..=max_dof {
            let p = self.active_offloaded_pmf(ActiveOffloaded::NearestMacro, n);
            value += p - u / n as f64 * p;
        }
        let clamped = value.clamp(0.0, 1.0);
        if (clamped - value).abs() > 1e-9 {
            log::warn!("in_selection_probability clamped from {value} to {clamped}");
        }
        clamped
    }

    /// Smallest `n_max` with `Σ_{n<=n_max} pmf(n) >= mass` (capped at
    /// [`PMF_CAP`]), together with the truncated mass.
    pub fn load_support(&self, tier: Tier, mass: f64) -> (usize, f64) {
        let mut cum = 0.0;
        for n in 1..=PMF_CAP {
            cum += self.load_pmf(tier, n);
            if cum >= mass {
                return (n, (1.0 - cum).max(0.0));
            }
        }
        (PMF_CAP, (1.0 - cum).max(0.0))
    }
}

/// Free-function form of [`AssociationModel::serving_distance_density`].
pub fn serving_distance_density(class: ServingClass, y: f64, cfg: &NetworkConfig) -> Result<f64> {
    Ok(AssociationModel::new(cfg)?.serving_distance_density(class, y))
}

/// Free-function form of [`AssociationModel::joint_distance_density`].
pub fn joint_distance_density(x: f64, y: f64, cfg: &NetworkConfig) -> Result<f64> {
    Ok(AssociationModel::new(cfg)?.joint_distance_density(x, y))
}

/// Free-function form of [`AssociationModel::load_pmf`].
pub fn load_pmf(tier: Tier, n: usize, cfg: &NetworkConfig) -> Result<f64> {
    Ok(AssociationModel::new(cfg)?.load_pmf(tier, n))
}

/// Free-function form of [`AssociationModel::mean_load`].
pub fn mean_load(tier: Tier, cfg: &NetworkConfig) -> Result<f64> {
    Ok(AssociationModel::new(cfg)?.mean_load(tier))
}

/// Free-function form of [`AssociationModel::active_offloaded_pmf`].
pub fn active_offloaded_pmf(variant: ActiveOffloaded, n: usize, cfg: &NetworkConfig) -> Result<f64> {
    Ok(AssociationModel::new(cfg)?.active_offloaded_pmf(variant, n))
}

/// Free-function form of [`AssociationModel::in_dof_pmf`].
pub fn in_dof_pmf(u: usize, max_dof: usize, cfg: &NetworkConfig) -> Result<f64> {
    Ok(AssociationModel::new(cfg)?.in_dof_pmf(u, max_dof))
}

/// Free-function form of [`AssociationModel::in_selection_probability`].
pub fn in_selection_probability(max_dof: usize, cfg: &NetworkConfig) -> Result<f64> {
    Ok(AssociationModel::new(cfg)?.in_selection_probability(max_dof))
}
