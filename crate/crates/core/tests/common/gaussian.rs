//! Closed-form Schrödinger bridge between Gaussians under a Brownian prior
//! of intensity `ε`, one dimension.

#[derive(Debug, Clone, Copy)]
pub struct GaussianBridge {
    pub m0: f64,
    pub v0: f64,
    pub m1: f64,
    pub v1: f64,
    pub eps: f64,
    pub t0: f64,
    pub t1: f64,
}

impl GaussianBridge {
    fn horizon(&self) -> f64 {
        self.t1 - self.t0
    }

    /// Endpoint covariance of the optimal coupling.
    pub fn cross(&self) -> f64 {
        let et = self.eps * self.horizon();
        0.5 * (-et + (et * et + 4.0 * self.v0 * self.v1).sqrt())
    }

    fn s(&self, t: f64) -> f64 {
        (t - self.t0) / self.horizon()
    }

    pub fn mean(&self, t: f64) -> f64 {
        let s = self.s(t);
        (1.0 - s) * self.m0 + s * self.m1
    }

    pub fn var(&self, t: f64) -> f64 {
        let s = self.s(t);
        let et = self.eps * self.horizon();
        (1.0 - s).powi(2) * self.v0
            + s * s * self.v1
            + 2.0 * s * (1.0 - s) * self.cross()
            + et * s * (1.0 - s)
    }

    fn var_rate(&self, t: f64) -> f64 {
        let s = self.s(t);
        let et = self.eps * self.horizon();
        (-2.0 * (1.0 - s) * self.v0
            + 2.0 * s * self.v1
            + 2.0 * (1.0 - 2.0 * s) * self.cross()
            + et * (1.0 - 2.0 * s))
            / self.horizon()
    }

    pub fn density(&self, t: f64, x: f64) -> f64 {
        let v = self.var(t);
        (-(x - self.mean(t)).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
    }

    /// The gradient drift that transports these marginals under noise `ε`.
    pub fn drift(&self, t: f64, x: f64) -> f64 {
        let v = self.var(t);
        let mdot = (self.m1 - self.m0) / self.horizon();
        mdot + (self.var_rate(t) - self.eps) / (2.0 * v) * (x - self.mean(t))
    }
}
