//! Exponential integral of complex argument.

use crate::matrix::{C64, ONE};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Principal-branch `E1(w) = ∫_w^∞ e^{-u}/u du`, cut along the negative real axis.
pub fn exp_integral_e1(w: C64) -> C64 {
    if w.norm() <= 2.0 {
        return series(w);
    }
    match continued_fraction(w) {
        Some(v) => v,
        None => series(w),
    }
}

fn series(w: C64) -> C64 {
    let mut sum = C64::new(0.0, 0.0);
    let mut term = ONE;
    for k in 1..400 {
        term *= -w / k as f64;
        let add = term / k as f64;
        sum += add;
        if add.norm() < 1e-17 * sum.norm().max(1e-300) {
            break;
        }
    }
    -EULER_GAMMA - w.ln() - sum
}

/// Modified Lentz evaluation of `e^{-w} / (w + 1 - 1/(w + 3 - 4/(w + 5 - ...)))`.
fn continued_fraction(w: C64) -> Option<C64> {
    let tiny = 1e-300;
    let mut b = w + 1.0;
    let mut c = C64::new(1.0 / tiny, 0.0);
    let mut d = ONE / b;
    let mut h = d;
    for i in 1..20_000 {
        let a = -((i * i) as f64);
        b += 2.0;
        d = ONE / (a * d + b);
        c = b + a / c;
        if c.norm() < tiny {
            c = C64::new(tiny, 0.0);
        }
        let del = c * d;
        h *= del;
        if (del - 1.0).norm() < 1e-16 {
            return Some(h * (-w).exp());
        }
    }
    None
}
