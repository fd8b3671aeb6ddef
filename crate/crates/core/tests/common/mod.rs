#![allow(dead_code)]

use hetnet_core::association::NetworkConfig;
use hetnet_core::special_math::TierParams;

pub fn db(v: f64) -> f64 {
    10f64.powf(v / 10.0)
}

/// α = 4, 10 dB, N = (8, 4), λ = (1e-4, 5e-4), λu = 0.01, U = 4.
pub fn equal_pathloss(bias_db: f64) -> NetworkConfig {
    NetworkConfig::new(
        TierParams::new(1e-4, 4.0, 10.0, 8).unwrap(),
        TierParams::new(5e-4, 4.0, 1.0, 4).unwrap(),
        0.01,
        db(bias_db),
        1e7,
        4,
    )
}

/// α = 3, 10 dB, N = (5, 2), λ = (1e-4, 1.5e-3), λu = 0.01, U = 2.
pub fn dense_pico(bias_db: f64) -> NetworkConfig {
    NetworkConfig::new(
        TierParams::new(1e-4, 3.0, 10.0, 5).unwrap(),
        TierParams::new(1.5e-3, 3.0, 1.0, 2).unwrap(),
        0.01,
        db(bias_db),
        1e7,
        2,
    )
}

/// α = (4.5, 4.7), 13 dB, λ = (8e-5, 1e-3), λu = 0.05.
pub fn mixed_pathloss(n1: usize, n2: usize, bias_db: f64) -> NetworkConfig {
    NetworkConfig::new(
        TierParams::new(8e-5, 4.5, db(13.0), n1).unwrap(),
        TierParams::new(1e-3, 4.7, 1.0, n2).unwrap(),
        0.05,
        db(bias_db),
        1e7,
        0,
    )
}

/// Adaptive Simpson with Richardson correction.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * eps {
            return left + right + diff / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, eps, 60)
}

/// Number of partitions of `m` by the Euler pentagonal recurrence.
pub fn partition_count(m: usize) -> u64 {
    let mut p = vec![0i64; m + 1];
    p[0] = 1;
    for n in 1..=m {
        let mut k = 1i64;
        loop {
            let g1 = (k * (3 * k - 1) / 2) as usize;
            if g1 > n {
                break;
            }
            let sign = if k % 2 == 1 { 1 } else { -1 };
            p[n] += sign * p[n - g1];
            let g2 = (k * (3 * k + 1) / 2) as usize;
            if g2 <= n {
                p[n] += sign * p[n - g2];
            }
            k += 1;
        }
    }
    p[m] as u64
}

pub fn total_variation(a: &[f64], b: impl Fn(usize) -> f64, len: usize) -> f64 {
    0.5 * (0..len).map(|k| (a.get(k).copied().unwrap_or(0.0) - b(k)).abs()).sum::<f64>()
}

/// CDF of a density on `[0, upper]`, tabulated with Simpson per cell and
/// linearly interpolated.
pub fn tabulated_cdf<F: Fn(f64) -> f64>(f: F, upper: f64, cells: usize) -> impl Fn(f64) -> f64 {
    let h = upper / cells as f64;
    let mut table = Vec::with_capacity(cells + 1);
    table.push(0.0);
    let mut acc = 0.0;
    for i in 0..cells {
        let a = i as f64 * h;
        acc += simpson(&f, a, a + h, 1e-13);
        table.push(acc);
    }
    move |x: f64| {
        if x <= 0.0 {
            return 0.0;
        }
        let t = x / h;
        let i = t.floor() as usize;
        if i >= cells {
            return table[cells];
        }
        let w = t - i as f64;
        table[i] * (1.0 - w) + table[i + 1] * w
    }
}

/// Nearest point to the origin by linear scan: `(index, distance)`.
pub fn nearest_to_origin(points: &[[f64; 2]]) -> (usize, f64) {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p[0].hypot(p[1])))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty")
}
