//! Adaptive Gauss-Kronrod (7/15) quadrature for complex integrands.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::matrix::{C64, ZERO};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Clone, Copy, Debug)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-13,
            rel_tol: 1e-11,
            max_intervals: 4000,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadResult {
    pub value: C64,
    pub error: f64,
    pub evaluations: usize,
}

fn kronrod<F: FnMut(f64) -> C64>(f: &mut F, a: f64, b: f64) -> (C64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        resk += (f1 + f2) * WGK[j];
        if j % 2 == 1 {
            resg += (f1 + f2) * WG[j / 2];
        }
    }
    let value = resk * half;
    let err = ((resk - resg) * half).norm();
    (value, err)
}

struct Segment {
    a: f64,
    b: f64,
    value: C64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Integrates `f` over `[a, b]`, optionally pre-split at `breaks`.
pub fn integrate<F: FnMut(f64) -> C64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: ZERO,
            error: 0.0,
            evaluations: 0,
        });
    }
    let mut points = vec![a];
    for &p in breaks {
        if p > a && p < b {
            points.push(p);
        }
    }
    points.push(b);
    points.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let mut heap = BinaryHeap::new();
    let mut total = ZERO;
    let mut total_err = 0.0;
    let mut evals = 0;
    for w in points.windows(2) {
        let (v, e) = kronrod(&mut f, w[0], w[1]);
        evals += 15;
        total += v;
        total_err += e;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
        });
    }
    while total_err > cfg.abs_tol.max(cfg.rel_tol * total.norm()) {
        if heap.len() >= cfg.max_intervals {
            return Err(Error::DivergentIntegral(format!(
                "[{a}, {b}] error {total_err:.3e} after {} intervals",
                heap.len()
            )));
        }
        let seg = heap.pop().expect("non-empty");
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval can no longer be split in floating point.
            heap.push(seg);
            break;
        }
        let (v1, e1) = kronrod(&mut f, seg.a, mid);
        let (v2, e2) = kronrod(&mut f, mid, seg.b);
        evals += 30;
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.error;
        heap.push(Segment {
            a: seg.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: seg.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to shed accumulated round-off from the running updates.
    let value = heap.iter().map(|s| s.value).sum();
    let error = heap.iter().map(|s| s.error).sum();
    Ok(QuadResult {
        value,
        error,
        evaluations: evals,
    })
}

pub fn integrate_real<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    cfg: &QuadConfig,
) -> Result<f64> {
    integrate(|x| C64::new(f(x), 0.0), a, b, breaks, cfg).map(|r| r.value.re)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| C64::new(x * x, x), 0.0, 2.0, &[], &QuadConfig::default()).unwrap();
        assert!((r.value - C64::new(8.0 / 3.0, 2.0)).norm() < 1e-14);
    }

    #[test]
    fn oscillatory_exponential() {
        let t = 7.3;
        let r = integrate(
            |w| (C64::new(0.0, -w * t)).exp(),
            0.0,
            3.0,
            &[],
            &QuadConfig::default(),
        )
        .unwrap();
        let exact = (C64::new(1.0, 0.0) - C64::new(0.0, -3.0 * t).exp()) / C64::new(0.0, t);
        assert!((r.value - exact).norm() < 1e-12);
    }

    #[test]
    fn peaked_lorentzian() {
        let w = 1e-3;
        let r = integrate_real(
            |x| w / std::f64::consts::PI / ((x - 0.3) * (x - 0.3) + w * w),
            -10.0,
            10.0,
            &[0.3],
            &QuadConfig::default(),
        )
        .unwrap();
        let exact = ((10.0 - 0.3) / w).atan() / std::f64::consts::PI
            + ((10.0 + 0.3) / w).atan() / std::f64::consts::PI;
        assert!((r - exact).abs() < 1e-10);
    }
}
