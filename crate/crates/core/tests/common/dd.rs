//! Double-double arithmetic and a reference network forward pass built on it.
//!
//! Used for finite-difference gradient checks: with ~32 significant digits in
//! the loss, central differences are limited by truncation, not rounding.

#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    const LN2: Dd = Dd {
        hi: std::f64::consts::LN_2,
        lo: 2.319_046_813_846_299_6e-17,
    };

    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn max(self, o: Dd) -> Dd {
        if self >= o {
            self
        } else {
            o
        }
    }

    fn ldexp(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    pub fn exp(self) -> Dd {
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = self - Dd::LN2 * Dd::from(k);
        // exp(r) = (exp(r / 2^10))^(2^10)
        let s = r.ldexp(-10);
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for n in 1..=22 {
            term = term * s / Dd::from(n as f64);
            sum = sum + term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.ldexp(k as i32)
    }

    pub fn ln(self) -> Dd {
        let mut y = Dd::from(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}

/// Weights as plain nested vectors: `w[out][in]`, `b[out]`.
pub struct RefLayer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

pub enum RefLoss {
    CrossEntropy,
    Mse,
}

/// Mean batch loss of a ReLU MLP with SoftMax head, in double-double.
pub fn reference_loss(layers: &[RefLayer], x: &[Vec<f64>], t: &[Vec<f64>], loss: &RefLoss) -> Dd {
    let mut total = Dd::ZERO;
    for (xi, ti) in x.iter().zip(t) {
        let mut a: Vec<Dd> = xi.iter().map(|&v| Dd::from(v)).collect();
        for (l, layer) in layers.iter().enumerate() {
            let mut z: Vec<Dd> = layer
                .w
                .iter()
                .zip(&layer.b)
                .map(|(row, &b)| {
                    row.iter()
                        .zip(&a)
                        .fold(Dd::from(b), |acc, (&w, &ai)| acc + Dd::from(w) * ai)
                })
                .collect();
            if l + 1 < layers.len() {
                z.iter_mut().for_each(|v| *v = v.max(Dd::ZERO));
            }
            a = z;
        }
        let max = a.iter().fold(a[0], |m, &v| m.max(v));
        let e: Vec<Dd> = a.iter().map(|&v| (v - max).exp()).collect();
        let s = e.iter().fold(Dd::ZERO, |acc, &v| acc + v);
        let p: Vec<Dd> = e.iter().map(|&v| v / s).collect();
        let li = match loss {
            RefLoss::CrossEntropy => p.iter().zip(ti).fold(Dd::ZERO, |acc, (&pj, &tj)| {
                acc - Dd::from(tj) * (pj + Dd::from(1e-12)).ln()
            }),
            RefLoss::Mse => p.iter().zip(ti).fold(Dd::ZERO, |acc, (&pj, &tj)| {
                let d = pj - Dd::from(tj);
                acc + d * d
            }),
        };
        total = total + li;
    }
    total / Dd::from(x.len() as f64)
}

#[cfg(test)]
mod tests {
    #[allow(unused_imports)]
    use super::*;

    #[test]
    fn exp_and_ln_are_inverse() {
        for x in [-30.0, -1.5, -1e-3, 0.0, 0.7, 12.0] {
            let y = Dd::from(x).exp().ln();
            assert!((y - Dd::from(x)).to_f64().abs() < 1e-28 * (1.0 + x.abs()));
        }
        let e = Dd::ONE.exp();
        assert!((e.hi - std::f64::consts::E).abs() < 1e-15);
        assert!((e.lo - 1.445_646_891_729_250_2e-16).abs() < 1e-27);
    }
}
