//! Numerical and combinatorial primitives behind the coverage expressions:
//! the upper incomplete beta integral, integer partitions, ordered triples,
//! and the interference Laplace transform with its scaled derivatives.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, Tolerance};

/// Smallest `z` used when an exclusion radius of zero pushes the incomplete
/// beta argument to `0`.
pub const Z_FLOOR: f64 = 1e-300;

const BETA_TOL: Tolerance = Tolerance::new(1e-300, 1e-13);

/// Per-tier parameters consumed by the interference expressions.
///
/// Noise is ignored throughout, so the transmit SNR of a tier only enters as
/// the ratio of powers; `power` plays that role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierParams {
    /// Base stations per square metre.
    pub density: f64,
    /// Path-loss exponent, strictly greater than 2.
    pub pathloss: f64,
    /// Linear transmit power.
    pub power: f64,
    /// Transmit antennas per base station.
    pub antennas: usize,
}

impl TierParams {
    pub fn new(density: f64, pathloss: f64, power: f64, antennas: usize) -> Result<Self> {
        let tier = TierParams {
            density,
            pathloss,
            power,
            antennas,
        };
        tier.validate("tier")?;
        Ok(tier)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::config(format!("{name}.density"), "must be positive"));
        }
        if !(self.pathloss > 2.0 && self.pathloss.is_finite()) {
            return Err(Error::config(format!("{name}.pathloss"), "must exceed 2"));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::config(format!("{name}.power"), "must be positive"));
        }
        if self.antennas == 0 {
            return Err(Error::config(format!("{name}.antennas"), "must be at least 1"));
        }
        Ok(())
    }

    /// `2 / α`.
    #[inline]
    pub fn delta(&self) -> f64 {
        2.0 / self.pathloss
    }
}

/// `∫_z^1 u^{a-1} (1-u)^{b-1} du` for `0 < z < 1`, `a > 0`, `b > 0`.
pub fn incomplete_beta(a: f64, b: f64, z: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::domain("incomplete_beta", format!("a = {a} must be positive")));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::domain("incomplete_beta", format!("b = {b} must be positive")));
    }
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::domain("incomplete_beta", format!("z = {z} outside (0, 1)")));
    }
    incomplete_beta_split(a, b, z, 1.0 - z)
}

/// Same integral with the complement `zc = 1 - z` supplied separately so that
/// arguments close to 1 keep full relative precision.
pub(crate) fn incomplete_beta_split(a: f64, b: f64, z: f64, zc: f64) -> Result<f64> {
    // Upper piece [max(z, 1/2), 1]: t = 1 - u, t = w^{1/b} removes (1-u)^{b-1}.
    let width = if z >= 0.5 { zc } else { 0.5 };
    let w_max = width.powf(b);
    let inv_b = 1.0 / b;
    let upper = if a == 1.0 {
        w_max * inv_b
    } else {
        integrate(
            "incomplete_beta",
            |w| inv_b * (1.0 - w.powf(inv_b)).powf(a - 1.0),
            0.0,
            w_max,
            BETA_TOL,
        )?
    };
    if z >= 0.5 {
        return Ok(upper);
    }
    // Lower piece [z, 1/2]: u = v^{1/a} removes u^{a-1} when a < 1.
    let lower = if a < 1.0 {
        let inv_a = 1.0 / a;
        integrate(
            "incomplete_beta",
            |v| inv_a * (1.0 - v.powf(inv_a)).powf(b - 1.0),
            z.powf(a),
            0.5f64.powf(a),
            BETA_TOL,
        )?
    } else {
        integrate(
            "incomplete_beta",
            |u| u.powf(a - 1.0) * (1.0 - u).powf(b - 1.0),
            z,
            0.5,
            BETA_TOL,
        )?
    };
    Ok(upper + lower)
}

/// Multiplicities `(p_1, …, p_m)` with `Σ a·p_a = m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Partition {
    multiplicities: Vec<u32>,
}

impl Partition {
    /// `p_a` for part size `a` (1-based); zero outside the stored range.
    pub fn multiplicity(&self, a: usize) -> u32 {
        if a == 0 {
            return 0;
        }
        self.multiplicities.get(a - 1).copied().unwrap_or(0)
    }

    pub fn multiplicities(&self) -> &[u32] {
        &self.multiplicities
    }

    /// `Σ a·p_a`.
    pub fn weight(&self) -> usize {
        self.multiplicities
            .iter()
            .enumerate()
            .map(|(i, &p)| (i + 1) * p as usize)
            .sum()
    }
}

fn partitions_uncached(m: usize) -> Vec<Partition> {
    fn rec(part: usize, remaining: usize, current: &mut Vec<u32>, out: &mut Vec<Partition>) {
        if remaining == 0 {
            out.push(Partition {
                multiplicities: current.clone(),
            });
            return;
        }
        if part == 0 {
            return;
        }
        for p in (0..=remaining / part).rev() {
            current[part - 1] = p as u32;
            rec(part - 1, remaining - p * part, current, out);
        }
        current[part - 1] = 0;
    }
    let mut out = Vec::new();
    let mut current = vec![0u32; m];
    rec(m, m, &mut current, &mut out);
    out
}

type PartitionCache = RwLock<HashMap<usize, Arc<Vec<Partition>>>>;

/// All multiplicity vectors with `Σ a·p_a = m`, cached per `m`.
pub fn integer_partitions(m: usize) -> Arc<Vec<Partition>> {
    static CACHE: OnceLock<PartitionCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(hit) = cache.read().expect("partition cache poisoned").get(&m) {
        return hit.clone();
    }
    let built = Arc::new(partitions_uncached(m));
    cache
        .write()
        .expect("partition cache poisoned")
        .entry(m)
        .or_insert(built)
        .clone()
}

/// Ordered triple `(q1, q2, q3)` of non-negative integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Composition3(pub usize, pub usize, pub usize);

impl Composition3 {
    pub fn total(&self) -> usize {
        self.0 + self.1 + self.2
    }
}

/// All ordered triples summing to `n`.
pub fn compositions3(n: usize) -> Vec<Composition3> {
    let mut out = Vec::with_capacity((n + 1) * (n + 2) / 2);
    for q1 in 0..=n {
        for q2 in 0..=n - q1 {
            out.push(Composition3(q1, q2, n - q1 - q2));
        }
    }
    out
}

/// `(z, 1 - z)` for `z = 1 / (1 + s r^{-α})`, using the floor at `r = 0`.
fn beta_argument(s: f64, r: f64, alpha: f64) -> (f64, f64) {
    if r == 0.0 {
        return (Z_FLOOR, 1.0);
    }
    ratio_argument(s * r.powf(-alpha))
}

/// `(z, 1 - z)` for `z = 1 / (1 + x)`.
#[inline]
pub(crate) fn ratio_argument(x: f64) -> (f64, f64) {
    if x.is_infinite() {
        return (Z_FLOOR, 1.0);
    }
    let z = (1.0 / (1.0 + x)).max(Z_FLOOR);
    (z, x / (1.0 + x))
}

/// Laplace transform of the aggregate interference from one tier's base
/// stations beyond exclusion radius `r` with unit-mean exponential fading.
pub fn laplace_interference(s: f64, r: f64, tier: &TierParams) -> Result<f64> {
    if !(s >= 0.0) || !(r >= 0.0) {
        return Err(Error::domain("laplace_interference", format!("s = {s}, r = {r}")));
    }
    if s == 0.0 {
        return Ok(1.0);
    }
    let delta = tier.delta();
    let (z, zc) = beta_argument(s, r, tier.pathloss);
    let beta = incomplete_beta_split(delta, 1.0 - delta, z, zc)?;
    Ok((-PI * tier.density * delta * s.powf(delta) * beta).exp())
}

/// `(2π/α) λ s^{2/α} B'(1 + 2/α, a − 2/α, z)`, the `a`-th log-coefficient.
fn log_coefficient(a: usize, s: f64, r: f64, tier: &TierParams) -> Result<f64> {
    let delta = tier.delta();
    let (z, zc) = beta_argument(s, r, tier.pathloss);
    let beta = incomplete_beta_split(1.0 + delta, a as f64 - delta, z, zc)?;
    Ok(PI * delta * tier.density * s.powf(delta) * beta)
}

/// Scaled derivative `(−s)^m d^m/ds^m` of [`laplace_interference`], evaluated
/// as a sum over integer partitions of `m`.
pub fn laplace_derivative_scaled(m: usize, s: f64, r: f64, tier: &TierParams) -> Result<f64> {
    if !(s > 0.0) || !(r >= 0.0) {
        return Err(Error::domain("laplace_derivative_scaled", format!("s = {s}, r = {r}")));
    }
    let base = laplace_interference(s, r, tier)?;
    if m == 0 {
        return Ok(base);
    }
    let coeffs = (1..=m)
        .map(|a| log_coefficient(a, s, r, tier))
        .collect::<Result<Vec<_>>>()?;
    let m_fact = factorial(m);
    let sum: f64 = integer_partitions(m)
        .iter()
        .map(|p| {
            let mut term = m_fact;
            for (i, &mult) in p.multiplicities().iter().enumerate() {
                if mult > 0 {
                    term *= coeffs[i].powi(mult as i32) / factorial(mult as usize);
                }
            }
            term
        })
        .sum();
    Ok(base * sum)
}

/// `n!` as a float (exact for `n <= 22`).
pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Values `J_0 = B'(δ, 1−δ, z)` and `J_k = B'(1+δ, k−δ, z)` for
/// `k = 1..=kmax`, with `z = 1/(1+x)` and `δ = 2/α`.
///
/// `J_kmax` comes from quadrature; the rest follow the downward recurrence
/// `J_k = ((k+1) J_{k+1} + z^{1+δ} (1-z)^{k-δ}) / (k-δ)`, which only adds
/// positive terms.
#[derive(Debug, Clone)]
pub struct BetaLadder {
    pub ratio: f64,
    values: Vec<f64>,
}

impl BetaLadder {
    pub fn new(tier: &TierParams, ratio: f64, kmax: usize) -> Result<Self> {
        let delta = tier.delta();
        let (z, zc) = ratio_argument(ratio);
        let mut values = vec![0.0; kmax + 1];
        values[0] = incomplete_beta_split(delta, 1.0 - delta, z, zc)?;
        if kmax >= 1 {
            let a = 1.0 + delta;
            values[kmax] = incomplete_beta_split(a, kmax as f64 - delta, z, zc)?;
            let za = z.powf(a);
            let log_zc = zc.ln();
            for k in (1..kmax).rev() {
                let b = k as f64 - delta;
                let boundary = za * (b * log_zc).exp();
                values[k] = ((k + 1) as f64 * values[k + 1] + boundary) / b;
            }
        }
        Ok(BetaLadder { ratio, values })
    }

    /// `J_k`.
    #[inline]
    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Taylor coefficients `a_n` of `exp(c0 + Σ_k b_k t^k)` for `n < n_terms`,
/// via `n a_n = Σ_{k=1}^n k b_k a_{n-k}`. With non-negative `b_k` every
/// term is non-negative. `b[0]` is ignored; `b[k]` is the `t^k` coefficient.
pub fn exp_series(c0: f64, b: &[f64], n_terms: usize, out: &mut Vec<f64>) {
    out.clear();
    if n_terms == 0 {
        return;
    }
    out.push(c0.exp());
    for n in 1..n_terms {
        let mut acc = 0.0;
        let kmax = n.min(b.len().saturating_sub(1));
        for k in 1..=kmax {
            acc += k as f64 * b[k] * out[n - k];
        }
        out.push(acc / n as f64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tier(alpha: f64) -> TierParams {
        TierParams::new(1e-4, alpha, 10.0, 4).unwrap()
    }

    #[test]
    fn incomplete_beta_flat_integrand() {
        assert!((incomplete_beta(1.0, 1.0, 0.3).unwrap() - 0.7).abs() < 1e-14);
    }

    #[test]
    fn incomplete_beta_vanishes_at_upper_end() {
        let v = incomplete_beta(1.5, 0.5, 1.0 - 1e-12).unwrap();
        assert!(v < 1e-5, "{v}");
        assert!(v > 0.0);
    }

    #[test]
    fn incomplete_beta_closed_form_half_integer() {
        // ∫_z^1 (1-u)^{-1/2} du = 2 sqrt(1-z)
        let v = incomplete_beta(1.0, 0.5, 0.19).unwrap();
        assert!((v - 2.0 * 0.81f64.sqrt()).abs() < 1e-13);
        // ∫_z^1 u^{-1/2} du = 2 (1 - sqrt z)
        let v = incomplete_beta(0.5, 1.0, 1e-6).unwrap();
        assert!((v - 2.0 * (1.0 - 1e-3)).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_rejects_bad_domain() {
        assert!(incomplete_beta(1.0, 0.0, 0.5).is_err());
        assert!(incomplete_beta(1.0, -0.3, 0.5).is_err());
        assert!(incomplete_beta(1.0, 1.0, 0.0).is_err());
        assert!(incomplete_beta(1.0, 1.0, 1.0).is_err());
        assert!(incomplete_beta(0.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn partitions_small_cases() {
        assert_eq!(integer_partitions(0).len(), 1);
        assert_eq!(integer_partitions(0)[0].weight(), 0);
        let one = integer_partitions(1);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].multiplicity(1), 1);
        let two = integer_partitions(2);
        assert_eq!(two.len(), 2);
        assert!(two.iter().any(|p| p.multiplicity(1) == 2));
        assert!(two.iter().any(|p| p.multiplicity(2) == 1 && p.multiplicity(1) == 0));
        assert_eq!(integer_partitions(4).len(), 5);
    }

    #[test]
    fn compositions_counts() {
        assert_eq!(compositions3(0), vec![Composition3(0, 0, 0)]);
        assert_eq!(compositions3(1).len(), 3);
        assert_eq!(compositions3(5).len(), 21);
        assert!(compositions3(5).iter().all(|c| c.total() == 5));
    }

    #[test]
    fn laplace_at_zero_is_one() {
        assert_eq!(laplace_interference(0.0, 30.0, &tier(4.0)).unwrap(), 1.0);
    }

    #[test]
    fn laplace_decreases_in_s_and_increases_in_r() {
        let t = tier(3.5);
        let a = laplace_interference(1e3, 20.0, &t).unwrap();
        let b = laplace_interference(1e4, 20.0, &t).unwrap();
        let c = laplace_interference(1e4, 40.0, &t).unwrap();
        assert!(b < a && c > b);
        assert!(a <= 1.0 && b > 0.0);
    }

    #[test]
    fn laplace_handles_zero_radius() {
        // r = 0: full Beta function, L = exp(-π λ s^δ Γ(1+δ)Γ(1-δ)) for α = 4.
        let t = tier(4.0);
        let s: f64 = 1e4;
        let expected = (-PI * t.density * s.sqrt() * (PI / 2.0)).exp();
        let got = laplace_interference(s, 0.0, &t).unwrap();
        assert!((got - expected).abs() < 1e-10 * expected, "{got} vs {expected}");
    }

    #[test]
    fn derivative_order_zero_is_transform() {
        let t = tier(4.0);
        let l = laplace_interference(500.0, 12.0, &t).unwrap();
        let d = laplace_derivative_scaled(0, 500.0, 12.0, &t).unwrap();
        assert_eq!(l, d);
    }

    #[test]
    fn ladder_matches_direct_quadrature() {
        let t = tier(4.5);
        for &x in &[1e-3, 0.4, 3.0, 40.0] {
            let ladder = BetaLadder::new(&t, x, 25).unwrap();
            let (z, zc) = ratio_argument(x);
            for k in [1usize, 2, 7, 24, 25] {
                let direct = incomplete_beta_split(1.0 + t.delta(), k as f64 - t.delta(), z, zc).unwrap();
                let rel = (ladder.get(k) - direct).abs() / direct;
                assert!(rel < 1e-11, "x={x} k={k} rel={rel}");
            }
        }
    }

    #[test]
    fn exp_series_matches_partition_sum() {
        let t = tier(3.0);
        let (s, r) = (2e3, 9.0);
        let m = 6;
        let delta = t.delta();
        let (z, zc) = beta_argument(s, r, t.pathloss);
        let c0 = -PI * delta * t.density * s.powf(delta)
            * incomplete_beta_split(delta, 1.0 - delta, z, zc).unwrap();
        let mut b = vec![0.0];
        for k in 1..=m {
            b.push(log_coefficient(k, s, r, &t).unwrap());
        }
        let mut a = Vec::new();
        exp_series(c0, &b, m + 1, &mut a);
        for n in 0..=m {
            let literal = laplace_derivative_scaled(n, s, r, &t).unwrap() / factorial(n);
            assert!((a[n] - literal).abs() <= 1e-12 * literal.max(1e-300), "n={n}");
        }
    }
}
