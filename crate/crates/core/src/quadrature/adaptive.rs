//! Globally adaptive 21-point Gauss–Kronrod integration.

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
    0.123_491_976_262_065_851_077_208_067_035_823,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    lower: f64,
    upper: f64,
    value: f64,
    error: f64,
    abs_value: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod21<F>(f: &mut F, lower: f64, upper: f64) -> Result<Panel>
where
    F: FnMut(f64) -> Result<f64>,
{
    let center = 0.5 * (lower + upper);
    let half = 0.5 * (upper - lower);
    let fc = f(center)?;
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    let mut abs_sum = kronrod.abs();
    let mut values = [(0.0, 0.0); 10];
    for (j, node) in XGK[..10].iter().enumerate() {
        let dx = half * node;
        let f1 = f(center - dx)?;
        let f2 = f(center + dx)?;
        values[j] = (f1, f2);
        kronrod += WGK[j] * (f1 + f2);
        abs_sum += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[10] * (fc - mean).abs();
    for (j, (f1, f2)) in values.iter().enumerate() {
        asc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
    }
    let value = kronrod * half;
    let abs_value = abs_sum * half.abs();
    let asc = asc * half.abs();
    let mut error = ((kronrod - gauss) * half).abs();
    if asc != 0.0 && error != 0.0 {
        error = asc * (200.0 * error / asc).powf(1.5).min(1.0);
    }
    if abs_value > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * abs_value);
    }
    if !value.is_finite() || !error.is_finite() {
        return Err(Error::NonFinite("quadrature integrand"));
    }
    Ok(Panel { lower, upper, value, error, abs_value })
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Tolerances and limits for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    pub initial_pieces: usize,
}

/// Integrates `f` over `[lower, upper]`, bisecting the panel with the largest
/// error estimate until `error <= max(abs_tol, rel_tol |value|)`.
///
/// Accumulated roundoff (a multiple of `eps * integral of |f|`) is accepted as
/// converged, so integrals that cancel to nearly zero do not spin forever.
pub fn integrate<F>(mut f: F, lower: f64, upper: f64, opts: &AdaptiveOptions) -> Result<Integral>
where
    F: FnMut(f64) -> Result<f64>,
{
    if lower == upper {
        return Ok(Integral { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let pieces = opts.initial_pieces.max(1);
    let width = (upper - lower) / pieces as f64;
    let mut heap = BinaryHeap::with_capacity(opts.max_subdivisions + pieces);
    let (mut value, mut error, mut abs_total) = (0.0, 0.0, 0.0);
    for k in 0..pieces {
        let a = lower + k as f64 * width;
        let b = if k + 1 == pieces { upper } else { a + width };
        let panel = kronrod21(&mut f, a, b)?;
        value += panel.value;
        error += panel.error;
        abs_total += panel.abs_value;
        heap.push(panel);
    }
    let mut evaluations = 21 * pieces;
    let converged = |value: f64, error: f64, abs_total: f64| {
        error <= opts.abs_tol.max(opts.rel_tol * value.abs())
            || error <= 100.0 * f64::EPSILON * abs_total
    };
    while !converged(value, error, abs_total) {
        if heap.len() >= opts.max_subdivisions {
            return Err(Error::QuadratureFailure {
                lower,
                upper,
                estimate: value,
                error_estimate: error,
            });
        }
        let worst = heap.pop().expect("panel heap is never empty");
        let mid = 0.5 * (worst.lower + worst.upper);
        if mid <= worst.lower.min(worst.upper) || mid >= worst.lower.max(worst.upper) {
            // the panel cannot be split further in floating point
            return Err(Error::QuadratureFailure {
                lower,
                upper,
                estimate: value,
                error_estimate: error,
            });
        }
        let left = kronrod21(&mut f, worst.lower, mid)?;
        let right = kronrod21(&mut f, mid, worst.upper)?;
        evaluations += 42;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        abs_total += left.abs_value + right.abs_value - worst.abs_value;
        heap.push(left);
        heap.push(right);
        if heap.len() % 64 == 0 {
            // resum to keep the running totals free of drift
            value = heap.iter().map(|p| p.value).sum();
            error = heap.iter().map(|p| p.error).sum();
            abs_total = heap.iter().map(|p| p.abs_value).sum();
        }
    }
    let value: f64 = heap.iter().map(|p| p.value).sum();
    Ok(Integral { value, error, evaluations })
}
