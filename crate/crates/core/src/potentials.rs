//! Complex potentials of the wave-function equation
//! `iλ∂_tψ = −(λ²/2)Δ_Σψ + Vψ`, for the general control-affine bridge and its
//! special cases.
//!
//! Evaluators take derivative bundles rather than raw fields. A bundle can be
//! filled by finite differences ([`PotentialInputs::from_fields`]) or from
//! exact derivatives when they are known, which separates discretization error
//! from errors in the formulas themselves.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::calculus::{
    divergence, double_divergence, gradient, hessian, laplacian, matrix_divergence,
    weighted_laplacian,
};
use crate::error::{Error, Result};
use crate::fields::{
    same_grid, ComplexField, Grid, MatrixField, OnGrid, ScalarField, TimeGrid, TimeSeries,
    VectorField,
};
use crate::problem::Coefficients;

/// A scalar field with its gradient and Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: ScalarField,
    pub grad: VectorField,
    pub hess: MatrixField,
}

impl Jet {
    pub fn new(value: ScalarField, grad: VectorField, hess: MatrixField) -> Result<Self> {
        let g = value.grid();
        same_grid(g, grad.grid())?;
        same_grid(g, hess.grid())?;
        if grad.len() != g.dim() || hess.n() != g.dim() {
            return Err(Error::ShapeMismatch(
                "jet derivative sizes differ from grid dimension".into(),
            ));
        }
        Ok(Jet { value, grad, hess })
    }

    /// Derivatives by finite differences.
    pub fn from_field(u: &ScalarField) -> Self {
        Jet {
            value: u.clone(),
            grad: gradient(u),
            hess: hessian(u),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.value.grid()
    }

    /// Trace of the Hessian.
    pub fn laplacian(&self) -> ScalarField {
        self.hess.trace()
    }
}

/// A diffusion tensor with its row divergence and double divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionJet {
    pub sigma: MatrixField,
    pub div: VectorField,
    pub ddiv: ScalarField,
}

impl DiffusionJet {
    pub fn new(sigma: MatrixField, div: VectorField, ddiv: ScalarField) -> Result<Self> {
        same_grid(sigma.grid(), div.grid())?;
        same_grid(sigma.grid(), ddiv.grid())?;
        Ok(DiffusionJet { sigma, div, ddiv })
    }

    pub fn from_field(sigma: &MatrixField) -> Result<Self> {
        Ok(DiffusionJet {
            sigma: sigma.clone(),
            div: matrix_divergence(sigma)?,
            ddiv: double_divergence(sigma)?,
        })
    }
}

/// Everything the potentials depend on at one time slice.
#[derive(Debug, Clone)]
pub struct PotentialInputs {
    pub time: f64,
    pub r: Jet,
    pub s: Jet,
    pub drift: VectorField,
    /// `∇·f`.
    pub drift_div: ScalarField,
    /// `g gᵀ`.
    pub metric: MatrixField,
    pub diffusion: DiffusionJet,
    /// `Δ_Σ R`.
    pub weighted_lap_r: ScalarField,
    /// `∇·(f + g gᵀ∇S)`.
    pub transport_div: ScalarField,
    pub cost: ScalarField,
}

impl PotentialInputs {
    /// All derivatives by finite differences on the grid.
    pub fn from_fields(r: &ScalarField, s: &ScalarField, coeffs: &Coefficients) -> Result<Self> {
        same_grid(r.grid(), s.grid())?;
        same_grid(r.grid(), coeffs.drift.grid())?;
        let metric = coeffs.control_metric();
        let s_jet = Jet::from_field(s);
        let transport = coeffs.drift.add(&metric.apply(&s_jet.grad)?)?;
        Ok(PotentialInputs {
            time: coeffs.time,
            r: Jet::from_field(r),
            drift_div: divergence(&coeffs.drift)?,
            transport_div: divergence(&transport)?,
            weighted_lap_r: weighted_laplacian(r, &coeffs.diffusion)?,
            diffusion: DiffusionJet::from_field(&coeffs.diffusion)?,
            s: s_jet,
            drift: coeffs.drift.clone(),
            metric,
            cost: coeffs.cost.clone(),
        })
    }

    pub fn grid(&self) -> &Grid {
        self.r.grid()
    }

    fn check(&self) -> Result<()> {
        let g = self.grid();
        for other in [
            self.s.grid(),
            self.drift.grid(),
            self.drift_div.grid(),
            self.metric.grid(),
            self.diffusion.sigma.grid(),
            self.weighted_lap_r.grid(),
            self.transport_div.grid(),
            self.cost.grid(),
        ] {
            same_grid(g, other)?;
        }
        if self.drift.len() != g.dim() || self.metric.n() != g.dim() {
            return Err(Error::ShapeMismatch(
                "coefficient sizes differ from grid dimension".into(),
            ));
        }
        Ok(())
    }

    fn check_elliptic(&self) -> Result<()> {
        let e = self.diffusion.sigma.min_eigenvalue();
        if e > 0.0 {
            Ok(())
        } else {
            Err(Error::NotElliptic {
                min_eigenvalue: e,
                time: self.time,
            })
        }
    }
}

fn dot(a: &VectorField, b: &VectorField, k: usize) -> f64 {
    (0..a.len())
        .map(|i| a.component(i)[k] * b.component(i)[k])
        .sum()
}

/// `aᵀ M b` at node `k`.
fn quad(m: &MatrixField, a: &VectorField, b: &VectorField, k: usize) -> f64 {
    let n = m.n();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += a.component(i)[k] * m.entry(i, j)[k] * b.component(j)[k];
        }
    }
    acc
}

/// Frobenius product `⟨A, B⟩` at node `k`.
fn frob(a: &MatrixField, b: &MatrixField, k: usize) -> f64 {
    let n = a.n();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += a.entry(i, j)[k] * b.entry(i, j)[k];
        }
    }
    acc
}

fn assemble(grid: &Grid, f: impl Fn(usize) -> (f64, f64)) -> ComplexField {
    ComplexField::raw(
        *grid,
        (0..grid.len())
            .map(|k| {
                let (re, im) = f(k);
                Complex64::new(re, im)
            })
            .collect(),
    )
}

/// The general potential with arbitrary `λ > 0`.
pub fn v_casb(inp: &PotentialInputs, lambda: f64) -> Result<ComplexField> {
    check_lambda(lambda)?;
    inp.check()?;
    inp.check_elliptic()?;
    let l2 = lambda * lambda;
    let sig = &inp.diffusion.sigma;
    let (dr, ds) = (&inp.r.grad, &inp.s.grad);
    Ok(assemble(inp.grid(), |k| {
        let ddiv = inp.diffusion.ddiv.values()[k];
        let r = inp.r.value.values()[k];
        let re = 0.5 * l2 * ddiv
            + 0.5 * l2 * frob(sig, &inp.r.hess, k)
            + dot(ds, &inp.drift, k)
            + 0.5 * l2 * quad(sig, dr, dr, k)
            - 0.5 * quad(sig, ds, ds, k)
            + l2 * dot(&inp.diffusion.div, dr, k)
            + 0.5 * quad(&inp.metric, ds, ds, k)
            + 0.5 * frob(sig, &inp.s.hess, k)
            - inp.cost.values()[k];
        let drift_plus: f64 = (0..dr.len())
            .map(|i| {
                let gs: f64 = (0..ds.len())
                    .map(|j| inp.metric.entry(i, j)[k] * ds.component(j)[k])
                    .sum();
                dr.component(i)[k] * (inp.drift.component(i)[k] + gs)
            })
            .sum();
        let im = lambda
            * (0.5 * frob(sig, &inp.s.hess, k)
                + quad(sig, dr, ds, k)
                + dot(&inp.diffusion.div, ds, k)
                - drift_plus
                - 0.5 * inp.transport_div.values()[k]
                + 0.5 * inp.weighted_lap_r.values()[k]
                + quad(sig, dr, dr, k)
                + (0.25 - 0.5 * r) * ddiv);
        (re, im)
    }))
}

/// Specialization for `Σ = λ g gᵀ`; `λ` is the proportionality constant.
pub fn v_casb_lambda(inp: &PotentialInputs, lambda: f64) -> Result<ComplexField> {
    check_lambda(lambda)?;
    inp.check()?;
    let l = lambda;
    let l2 = l * l;
    let sig = &inp.diffusion.sigma;
    let (dr, ds) = (&inp.r.grad, &inp.s.grad);
    Ok(assemble(inp.grid(), |k| {
        let ddiv = inp.diffusion.ddiv.values()[k];
        let r = inp.r.value.values()[k];
        let re = 0.5 * l2 * ddiv
            + 0.5 * l2 * frob(sig, &inp.r.hess, k)
            + 0.5 * l2 * quad(sig, dr, dr, k)
            + l2 * dot(&inp.diffusion.div, dr, k)
            + dot(ds, &inp.drift, k)
            + (0.5 / l - 0.5) * quad(sig, ds, ds, k)
            + 0.5 * frob(sig, &inp.s.hess, k)
            - inp.cost.values()[k];
        let im = 0.5 * (l - 1.0) * frob(sig, &inp.s.hess, k)
            + (l - 1.0) * quad(sig, dr, ds, k)
            + (l - 0.5) * dot(&inp.diffusion.div, ds, k)
            - l * dot(dr, &inp.drift, k)
            - 0.5 * l * inp.drift_div.values()[k]
            + 0.5 * l * inp.weighted_lap_r.values()[k]
            + l * quad(sig, dr, dr, k)
            + (0.25 * l - 0.5 * l * r) * ddiv;
        (re, im)
    }))
}

/// Specialization for `Σ = g gᵀ`.
pub fn v_casb_one(inp: &PotentialInputs) -> Result<ComplexField> {
    inp.check()?;
    let sig = &inp.diffusion.sigma;
    let (dr, ds) = (&inp.r.grad, &inp.s.grad);
    Ok(assemble(inp.grid(), |k| {
        let ddiv = inp.diffusion.ddiv.values()[k];
        let r = inp.r.value.values()[k];
        let re = 0.5 * ddiv
            + 0.5 * frob(sig, &inp.r.hess, k)
            + 0.5 * quad(sig, dr, dr, k)
            + dot(&inp.diffusion.div, dr, k)
            + dot(ds, &inp.drift, k)
            + 0.5 * frob(sig, &inp.s.hess, k)
            - inp.cost.values()[k];
        let im = 0.5 * dot(&inp.diffusion.div, ds, k)
            - dot(dr, &inp.drift, k)
            - 0.5 * inp.drift_div.values()[k]
            + 0.5 * inp.weighted_lap_r.values()[k]
            + quad(sig, dr, dr, k)
            + (0.25 - 0.5 * r) * ddiv;
        (re, im)
    }))
}

/// The classical bridge potential, from jets of `R` and `S`.
pub fn v_sb(r: &Jet, s: &Jet) -> Result<ComplexField> {
    same_grid(r.grid(), s.grid())?;
    let lap_r = r.laplacian();
    let lap_s = s.laplacian();
    Ok(assemble(r.grid(), |k| {
        let grad2 = dot(&r.grad, &r.grad, k);
        let re = 0.5 * lap_r.values()[k] + 0.5 * grad2 + 0.5 * lap_s.values()[k];
        let im = 0.5 * lap_r.values()[k] + grad2;
        (re, im)
    }))
}

/// `¼ΔR`, from a jet.
pub fn bohm_term(r: &Jet) -> ScalarField {
    r.laplacian().map(|v| 0.25 * v)
}

/// `¼ΔR` on every slice, by finite differences.
pub fn bohm_potential(r: &TimeSeries<ScalarField>) -> TimeSeries<ScalarField> {
    r.try_map(|r| Ok(laplacian(r).map(|v| 0.25 * v)))
        .expect("shape preserved")
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::param(
            "lambda",
            format!("must be positive, got {lambda}"),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    CaSb,
    CaSbLambda,
    CaSbOne,
    Sb,
    BohmReal,
}

impl PotentialKind {
    pub fn tag(&self) -> &'static str {
        match self {
            PotentialKind::CaSb => "caSB",
            PotentialKind::CaSbLambda => "caSB_lambda",
            PotentialKind::CaSbOne => "caSB_one",
            PotentialKind::Sb => "SB",
            PotentialKind::BohmReal => "bohm_real",
        }
    }
}

/// A complex potential on every slice, tagged with the formula that made it.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub values: TimeSeries<ComplexField>,
    pub kind: PotentialKind,
}

impl PotentialField {
    pub fn re(&self, j: usize) -> ScalarField {
        self.values.slice(j).re()
    }

    pub fn im(&self, j: usize) -> ScalarField {
        self.values.slice(j).im()
    }
}

/// Evaluate one of the general-coefficient potentials on every slice.
pub fn potential_series(
    kind: PotentialKind,
    time: TimeGrid,
    inputs: &[PotentialInputs],
    lambda: f64,
) -> Result<PotentialField> {
    let slices = inputs
        .iter()
        .map(|inp| match kind {
            PotentialKind::CaSb => v_casb(inp, lambda),
            PotentialKind::CaSbLambda => v_casb_lambda(inp, lambda),
            PotentialKind::CaSbOne => v_casb_one(inp),
            PotentialKind::Sb => v_sb(&inp.r, &inp.s),
            PotentialKind::BohmReal => {
                let b = bohm_term(&inp.r);
                ComplexField::from_parts(&b, &ScalarField::zeros(*b.grid()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PotentialField {
        values: TimeSeries::new(time, slices)?,
        kind,
    })
}

/// `V_SB` on every slice, derivatives by finite differences.
pub fn v_sb_series(
    r: &TimeSeries<ScalarField>,
    s: &TimeSeries<ScalarField>,
) -> Result<PotentialField> {
    if r.time() != s.time() {
        return Err(Error::ShapeMismatch(
            "R and S on different time grids".into(),
        ));
    }
    let slices = r
        .slices()
        .iter()
        .zip(s.slices())
        .map(|(r, s)| v_sb(&Jet::from_field(r), &Jet::from_field(s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PotentialField {
        values: TimeSeries::new(*r.time(), slices)?,
        kind: PotentialKind::Sb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Brownian;

    fn grid() -> Grid {
        Grid::plane([-1.0, -1.0], [1.0, 1.0], [21, 21]).unwrap()
    }

    #[test]
    fn constant_fields_give_zero() {
        let g = grid();
        let coeffs = Coefficients::sample(&Brownian { dim: 2, eps: 0.7 }, &g, 0.0).unwrap();
        let r = ScalarField::constant(g, -0.4);
        let s = ScalarField::zeros(g);
        let inp = PotentialInputs::from_fields(&r, &s, &coeffs).unwrap();
        for v in [
            v_casb(&inp, 0.7).unwrap(),
            v_casb_lambda(&inp, 0.7).unwrap(),
            v_casb_one(&inp).unwrap(),
            v_sb(&inp.r, &inp.s).unwrap(),
        ] {
            assert!(
                v.values().iter().all(|z| z.norm() < 1e-12),
                "{:?}",
                v.values()[0]
            );
        }
        assert!(bohm_term(&inp.r).max_abs() < 1e-12);
    }

    #[test]
    fn standard_gaussian_bohm_and_imaginary_part() {
        let g = Grid::line(-4.0, 4.0, 81).unwrap();
        let r = ScalarField::from_fn(g, |x| {
            -0.25 * x[0] * x[0] - 0.25 * (2.0 * std::f64::consts::PI).ln()
        })
        .unwrap();
        let s = ScalarField::from_fn(g, |x| x[0].sin()).unwrap();
        let jr = Jet::from_field(&r);
        let v = v_sb(&jr, &Jet::from_field(&s)).unwrap();
        let c = g.center();
        assert!((v.values()[c].im + 0.25).abs() < 1e-12);
        let b = bohm_term(&Jet::from_field(
            &ScalarField::from_fn(g, |x| -0.5 * x[0] * x[0]).unwrap(),
        ));
        assert!(b.values().iter().all(|v| (v + 0.25).abs() < 1e-10));
    }

    #[test]
    fn non_elliptic_sigma_is_rejected() {
        let g = Grid::line(-1.0, 1.0, 32).unwrap();
        let mut coeffs = Coefficients::sample(&Brownian { dim: 1, eps: 1.0 }, &g, 0.5).unwrap();
        coeffs.diffusion = MatrixField::from_fn(g, 1, |x, m| m[0] = x[0]).unwrap();
        let r = ScalarField::zeros(g);
        let inp = PotentialInputs::from_fields(&r, &r, &coeffs).unwrap();
        assert!(matches!(v_casb(&inp, 1.0), Err(Error::NotElliptic { .. })));
    }
}
