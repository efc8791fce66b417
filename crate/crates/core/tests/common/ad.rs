//! Forward-mode automatic differentiation to second order in two variables.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Value, gradient and Hessian of a function of up to two variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct D2 {
    pub v: f64,
    pub g: [f64; 2],
    pub h: [[f64; 2]; 2],
}

impl D2 {
    pub fn cst(v: f64) -> Self {
        D2 {
            v,
            g: [0.0; 2],
            h: [[0.0; 2]; 2],
        }
    }

    pub fn var(v: f64, axis: usize) -> Self {
        let mut g = [0.0; 2];
        g[axis] = 1.0;
        D2 {
            v,
            g,
            h: [[0.0; 2]; 2],
        }
    }

    /// Coordinate jets at a point.
    pub fn coords(x: &[f64]) -> Vec<D2> {
        x.iter().enumerate().map(|(a, &v)| D2::var(v, a)).collect()
    }

    /// `φ(self)` given `φ`, `φ'` and `φ''` at the value.
    fn chain(self, f: f64, d1: f64, d2: f64) -> Self {
        let mut out = D2::cst(f);
        for i in 0..2 {
            out.g[i] = d1 * self.g[i];
            for j in 0..2 {
                out.h[i][j] = d2 * self.g[i] * self.g[j] + d1 * self.h[i][j];
            }
        }
        out
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v, -1.0 / (self.v * self.v))
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn recip(self) -> Self {
        let v = self.v;
        self.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    pub fn sq(self) -> Self {
        self * self
    }

    pub fn lap(&self, dim: usize) -> f64 {
        (0..dim).map(|i| self.h[i][i]).sum()
    }
}

impl Add for D2 {
    type Output = D2;
    fn add(self, o: D2) -> D2 {
        let mut r = self;
        for i in 0..2 {
            r.g[i] += o.g[i];
            for j in 0..2 {
                r.h[i][j] += o.h[i][j];
            }
        }
        r.v += o.v;
        r
    }
}

impl Neg for D2 {
    type Output = D2;
    fn neg(self) -> D2 {
        self * -1.0
    }
}

impl Sub for D2 {
    type Output = D2;
    fn sub(self, o: D2) -> D2 {
        self + (-o)
    }
}

impl Mul for D2 {
    type Output = D2;
    fn mul(self, o: D2) -> D2 {
        let mut r = D2::cst(self.v * o.v);
        for i in 0..2 {
            r.g[i] = self.g[i] * o.v + self.v * o.g[i];
            for j in 0..2 {
                r.h[i][j] = self.h[i][j] * o.v
                    + self.g[i] * o.g[j]
                    + self.g[j] * o.g[i]
                    + self.v * o.h[i][j];
            }
        }
        r
    }
}

impl Div for D2 {
    type Output = D2;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: D2) -> D2 {
        self * o.recip()
    }
}

impl Add<f64> for D2 {
    type Output = D2;
    fn add(self, c: f64) -> D2 {
        D2 {
            v: self.v + c,
            ..self
        }
    }
}

impl Mul<f64> for D2 {
    type Output = D2;
    fn mul(self, c: f64) -> D2 {
        let mut r = self;
        r.v *= c;
        for i in 0..2 {
            r.g[i] *= c;
            for j in 0..2 {
                r.h[i][j] *= c;
            }
        }
        r
    }
}

#[test]
fn derivatives_match_closed_forms() {
    let x = D2::coords(&[0.3, -0.7]);
    let f = (x[0] * x[1]).sin() + x[0].sq().exp();
    let (a, b) = (0.3f64, -0.7f64);
    assert!((f.g[0] - (b * (a * b).cos() + 2.0 * a * (a * a).exp())).abs() < 1e-14);
    assert!((f.h[0][1] - ((a * b).cos() - a * b * (a * b).sin())).abs() < 1e-14);
    let q = x[0] / (x[1] + 2.0);
    assert!((q.h[1][1] - 2.0 * a / (b + 2.0).powi(3)).abs() < 1e-14);
}
