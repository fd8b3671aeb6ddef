//! Adaptive Gauss–Kronrod (G10/K21) quadrature over finite intervals, with
//! vector-valued integrands and a helper for integrands decaying on `[0, ∞)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_067_251_181,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Tolerances for [`integrate`] and [`integrate_vec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_subdivisions: usize,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Tolerance {
            abs,
            rel,
            max_subdivisions: 400,
        }
    }

    pub const fn with_max_subdivisions(mut self, n: usize) -> Self {
        self.max_subdivisions = n;
        self
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::new(1e-12, 1e-10)
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: Vec<f64>,
    // Largest per-component ratio error / allowance at the time of creation.
    priority: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.priority == other.priority
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority.total_cmp(&other.priority)
    }
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut scaled = err.abs();
    if res_asc != 0.0 && scaled != 0.0 {
        let scale = (200.0 * scaled / res_asc).powf(1.5);
        scaled = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        scaled = scaled.max(50.0 * f64::EPSILON * res_abs);
    }
    scaled
}

/// One 21-point Kronrod rule on `[a, b]`, writing values and error estimates.
fn kronrod21<F>(f: &mut F, a: f64, b: f64, dim: usize, scratch: &mut Scratch) -> (Vec<f64>, Vec<f64>)
where
    F: FnMut(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let abs_half = half.abs();

    let Scratch {
        fc,
        f1,
        f2,
        resk,
        resg,
        resabs,
        fvals,
    } = scratch;
    fc.iter_mut().for_each(|v| *v = 0.0);
    f(center, fc);
    resk.iter_mut().zip(fc.iter()).for_each(|(r, v)| *r = WGK[10] * v);
    resg.iter_mut().for_each(|r| *r = 0.0);
    resabs
        .iter_mut()
        .zip(fc.iter())
        .for_each(|(r, v)| *r = (WGK[10] * v).abs());

    for j in 0..10 {
        let dx = half * XGK[j];
        f1.iter_mut().for_each(|v| *v = 0.0);
        f2.iter_mut().for_each(|v| *v = 0.0);
        f(center - dx, f1);
        f(center + dx, f2);
        for c in 0..dim {
            let sum = f1[c] + f2[c];
            resk[c] += WGK[j] * sum;
            resabs[c] += WGK[j] * (f1[c].abs() + f2[c].abs());
            if j % 2 == 1 {
                resg[c] += WG[j / 2] * sum;
            }
            fvals[c * 20 + 2 * j] = f1[c];
            fvals[c * 20 + 2 * j + 1] = f2[c];
        }
    }

    let mut value = vec![0.0; dim];
    let mut error = vec![0.0; dim];
    for c in 0..dim {
        let mean = 0.5 * resk[c];
        let mut asc = WGK[10] * (fc[c] - mean).abs();
        for j in 0..10 {
            asc += WGK[j]
                * ((fvals[c * 20 + 2 * j] - mean).abs() + (fvals[c * 20 + 2 * j + 1] - mean).abs());
        }
        value[c] = resk[c] * half;
        let err = (resk[c] - resg[c]) * half;
        error[c] = rescale_error(err, resabs[c] * abs_half, asc * abs_half);
    }
    (value, error)
}

struct Scratch {
    fc: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    resk: Vec<f64>,
    resg: Vec<f64>,
    resabs: Vec<f64>,
    fvals: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Scratch {
            fc: vec![0.0; dim],
            f1: vec![0.0; dim],
            f2: vec![0.0; dim],
            resk: vec![0.0; dim],
            resg: vec![0.0; dim],
            resabs: vec![0.0; dim],
            fvals: vec![0.0; dim * 20],
        }
    }
}

fn priority(value: &[f64], error: &[f64], tol: &Tolerance) -> f64 {
    value
        .iter()
        .zip(error)
        .map(|(v, e)| e / tol.abs.max(tol.rel * v.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Integrate a vector-valued function over `[a, b]`.
///
/// The integrand writes `dim` components into the provided buffer. The
/// routine bisects the segment with the largest relative error until every
/// component satisfies `err <= max(abs, rel * |value|)`.
pub fn integrate_vec<F>(
    what: &'static str,
    mut f: F,
    dim: usize,
    a: f64,
    b: f64,
    tol: Tolerance,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    if a == b {
        return Ok(vec![0.0; dim]);
    }
    let mut scratch = Scratch::new(dim);
    let (value, error) = kronrod21(&mut f, a, b, dim, &mut scratch);
    let mut total = value.clone();
    let mut total_err = error.clone();
    let mut heap = BinaryHeap::new();
    heap.push(Segment {
        a,
        b,
        priority: priority(&value, &error, &tol),
        value,
        error,
    });

    let converged = |total: &[f64], err: &[f64]| {
        total
            .iter()
            .zip(err)
            .all(|(v, e)| *e <= tol.abs.max(tol.rel * v.abs()))
    };

    let mut subdivisions = 1;
    while !converged(&total, &total_err) {
        if subdivisions >= tol.max_subdivisions {
            let worst = total
                .iter()
                .zip(&total_err)
                .map(|(v, e)| (e, tol.abs.max(tol.rel * v.abs())))
                .max_by(|x, y| (x.0 / x.1).total_cmp(&(y.0 / y.1)))
                .unwrap();
            return Err(Error::Accuracy {
                what,
                error: *worst.0,
                tolerance: worst.1,
            });
        }
        let seg = heap.pop().expect("heap holds every live segment");
        let mid = 0.5 * (seg.a + seg.b);
        if !(mid > seg.a && mid < seg.b) {
            // Interval can no longer be split in floating point.
            return Err(Error::Accuracy {
                what,
                error: seg.error.iter().cloned().fold(0.0, f64::max),
                tolerance: tol.abs,
            });
        }
        let (lv, le) = kronrod21(&mut f, seg.a, mid, dim, &mut scratch);
        let (rv, re) = kronrod21(&mut f, mid, seg.b, dim, &mut scratch);
        for c in 0..dim {
            total[c] += lv[c] + rv[c] - seg.value[c];
            total_err[c] += le[c] + re[c] - seg.error[c];
        }
        heap.push(Segment {
            a: seg.a,
            b: mid,
            priority: priority(&lv, &le, &tol),
            value: lv,
            error: le,
        });
        heap.push(Segment {
            a: mid,
            b: seg.b,
            priority: priority(&rv, &re, &tol),
            value: rv,
            error: re,
        });
        subdivisions += 1;

        // Re-sum occasionally so that the running totals do not drift.
        if subdivisions % 64 == 0 {
            total.iter_mut().for_each(|v| *v = 0.0);
            total_err.iter_mut().for_each(|v| *v = 0.0);
            for s in heap.iter() {
                for c in 0..dim {
                    total[c] += s.value[c];
                    total_err[c] += s.error[c];
                }
            }
        }
    }
    let mut out = vec![0.0; dim];
    for s in heap.iter() {
        for c in 0..dim {
            out[c] += s.value[c];
        }
    }
    Ok(out)
}

/// Scalar wrapper around [`integrate_vec`].
pub fn integrate<F>(what: &'static str, mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    integrate_vec(what, |x, out| out[0] = f(x), 1, a, b, tol).map(|v| v[0])
}

/// Upper integration limit for an integrand on `[0, ∞)` whose tail decays at
/// least exponentially: the first point of a doubling scan beyond which the
/// probe `g` falls below `1e-14` of the largest value seen.
pub fn decay_cutoff<G>(mut g: G, start: f64) -> f64
where
    G: FnMut(f64) -> f64,
{
    const RATIO: f64 = 1e-14;
    let mut peak: f64 = 0.0;
    let mut t = 0.0;
    let step = start / 16.0;
    while t < start {
        peak = peak.max(g(t).abs());
        t += step;
    }
    let mut hi = start;
    for _ in 0..60 {
        // sample the doubled range so that a late peak is not missed
        let lo = hi / 2.0;
        for i in 1..=16 {
            let x = lo + (hi - lo) * i as f64 / 16.0;
            peak = peak.max(g(x).abs());
        }
        if g(hi).abs() <= RATIO * peak && hi >= start {
            return hi;
        }
        hi *= 2.0;
    }
    hi
}
