//! Oracle computations shared by the potential tests and the acceptance run.

use qbridge_core::potentials::{v_casb, v_casb_lambda, v_casb_one, v_sb};
use qbridge_core::{ComplexField, Grid};

use super::ad::D2;
use super::analytic::{random_analytic, random_classical, Analytic};

/// Largest `|a − b| / max(1, |a|, |b|)` over nodes.
pub fn max_rel(a: &ComplexField, b: &ComplexField) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).norm() / 1f64.max(x.norm()).max(y.norm()))
        .fold(0.0, f64::max)
}

/// Errors of the three specialization links for one random field set:
/// proportional noise, unit `λ`, classical dynamics.
pub fn chain_errors(seed: u64, grid: &Grid) -> [f64; 3] {
    let dim = grid.dim();
    let lambda = 0.4 + 0.5 * (seed % 3) as f64;
    let inp = random_analytic(seed, dim, lambda, true).inputs(grid);
    let first = max_rel(
        &v_casb(&inp, lambda).unwrap(),
        &v_casb_lambda(&inp, lambda).unwrap(),
    );
    let inp = random_analytic(seed + 100, dim, 1.0, true).inputs(grid);
    let second = max_rel(
        &v_casb_lambda(&inp, 1.0).unwrap(),
        &v_casb_one(&inp).unwrap(),
    );
    let inp = random_classical(seed + 200, dim).inputs(grid);
    let sb = v_sb(&inp.r, &inp.s).unwrap();
    let third =
        max_rel(&v_casb_one(&inp).unwrap(), &sb).max(max_rel(&v_casb(&inp, 1.0).unwrap(), &sb));
    [first, second, third]
}

/// Random positive density in closed form.
pub fn density(seed: u64, x: &[D2]) -> D2 {
    let s = seed as f64;
    let bump = |m: f64, v: f64| {
        let d = x.iter().fold(D2::cst(0.0), |a, xi| a + (*xi + (-m)).sq());
        (d * (-0.5 / v)).exp()
    };
    let wobble = (x[0] * (0.7 + 0.1 * s) + 0.3 * s).sin() * 0.4 + 1.2;
    (bump(-0.5 + 0.1 * s, 0.6) + bump(0.8, 0.3 + 0.05 * s) * 0.5) * wobble
}

/// Largest deviation of `Im V_SB` from `Δρ / 4ρ` where `ρ > 1e-6 max ρ`,
/// relative to the largest term at each node.
pub fn im_vsb_deviation(seed: u64, grid: &Grid) -> f64 {
    let n = grid.dim();
    let nodes: Vec<D2> = (0..grid.len())
        .map(|k| density(seed, &D2::coords(&grid.node(k)[..n])))
        .collect();
    let rho_max = nodes.iter().map(|p| p.v).fold(0.0, f64::max);
    let inp = Analytic {
        r: Box::new(move |x: &[D2]| density(seed, x).ln() * 0.5),
        ..random_classical(seed, n)
    }
    .inputs(grid);
    let im = v_sb(&inp.r, &inp.s).unwrap().im();
    let mut worst = 0.0f64;
    for (k, p) in nodes.iter().enumerate() {
        if p.v <= 1e-6 * rho_max {
            continue;
        }
        let exact = p.lap(n) / (4.0 * p.v);
        let lap_r: f64 = (0..n).map(|i| inp.r.hess.entry(i, i)[k]).sum();
        let grad2: f64 = (0..n).map(|i| inp.r.grad.component(i)[k].powi(2)).sum();
        let scale = exact.abs().max(0.5 * lap_r.abs()).max(grad2);
        worst = worst.max((im.values()[k] - exact).abs() / scale);
    }
    worst
}
