//! Potential inputs with exact derivatives, from closed-form fields.

use qbridge_core::potentials::{DiffusionJet, Jet, PotentialInputs};
use qbridge_core::{Grid, MatrixField, ScalarField, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ad::D2;

pub type Scalar = Box<dyn Fn(&[D2]) -> D2>;
pub type Many = Box<dyn Fn(&[D2]) -> Vec<D2>>;

/// Closed-form `R`, `S`, `f`, square `g`, `Σ` and `q`.
pub struct Analytic {
    pub dim: usize,
    pub r: Scalar,
    pub s: Scalar,
    /// `n` components.
    pub f: Many,
    /// `n × n`, row-major.
    pub g: Many,
    /// `n × n`, row-major, symmetric.
    pub sigma: Many,
    pub q: Scalar,
}

struct Node {
    r: D2,
    s: D2,
    f: Vec<D2>,
    metric: Vec<D2>,
    sigma: Vec<D2>,
    q: f64,
}

impl Analytic {
    fn node(&self, x: &[f64]) -> Node {
        let n = self.dim;
        let c = D2::coords(x);
        let g = (self.g)(&c);
        let mut metric = vec![D2::cst(0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    metric[i * n + j] = metric[i * n + j] + g[i * n + k] * g[j * n + k];
                }
            }
        }
        Node {
            r: (self.r)(&c),
            s: (self.s)(&c),
            f: (self.f)(&c),
            metric,
            sigma: (self.sigma)(&c),
            q: (self.q)(&c).v,
        }
    }

    pub fn inputs(&self, grid: &Grid) -> PotentialInputs {
        let n = self.dim;
        let nodes: Vec<Node> = (0..grid.len())
            .map(|k| self.node(&grid.node(k)[..n]))
            .collect();
        let scalar = |f: &dyn Fn(&Node) -> f64| {
            ScalarField::new(*grid, nodes.iter().map(f).collect()).unwrap()
        };
        let vector = |f: &dyn Fn(&Node, usize) -> f64| {
            VectorField::new(
                *grid,
                (0..n)
                    .map(|i| nodes.iter().map(|p| f(p, i)).collect())
                    .collect(),
            )
            .unwrap()
        };
        let matrix = |f: &dyn Fn(&Node, usize, usize) -> f64| {
            MatrixField::new(
                *grid,
                n,
                (0..n * n)
                    .map(|e| nodes.iter().map(|p| f(p, e / n, e % n)).collect())
                    .collect(),
            )
            .unwrap()
        };
        let jet = |pick: &dyn Fn(&Node) -> D2| {
            Jet::new(
                scalar(&|p| pick(p).v),
                vector(&|p, i| pick(p).g[i]),
                matrix(&|p, i, j| 0.5 * (pick(p).h[i][j] + pick(p).h[j][i])),
            )
            .unwrap()
        };
        let drift_div = |p: &Node| (0..n).map(|i| p.f[i].g[i]).sum::<f64>();
        let transport_div = |p: &Node| {
            let mut acc = drift_div(p);
            for i in 0..n {
                for j in 0..n {
                    let m = p.metric[i * n + j];
                    acc += m.g[i] * p.s.g[j] + m.v * p.s.h[i][j];
                }
            }
            acc
        };
        let weighted_lap_r = |p: &Node| {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += (p.sigma[i * n + j] * p.r).h[i][j];
                }
            }
            acc
        };
        let diffusion = DiffusionJet::new(
            matrix(&|p, i, j| p.sigma[i * n + j].v),
            vector(&|p, i| (0..n).map(|j| p.sigma[i * n + j].g[j]).sum()),
            scalar(&|p| {
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += p.sigma[i * n + j].h[i][j];
                    }
                }
                acc
            }),
        )
        .unwrap();
        PotentialInputs {
            time: 0.0,
            r: jet(&|p| p.r),
            s: jet(&|p| p.s),
            drift: vector(&|p, i| p.f[i].v),
            drift_div: scalar(&drift_div),
            metric: matrix(&|p, i, j| p.metric[i * n + j].v),
            diffusion,
            weighted_lap_r: scalar(&weighted_lap_r),
            transport_div: scalar(&transport_div),
            cost: scalar(&|p| p.q),
        }
    }
}

/// `Σ_k a_k sin(κ_k · x + φ_k)` with random parameters.
#[derive(Debug, Clone)]
pub struct TrigSum {
    terms: Vec<(f64, [f64; 2], f64)>,
}

impl TrigSum {
    pub fn random(rng: &mut ChaCha8Rng, count: usize, amp: f64) -> Self {
        TrigSum {
            terms: (0..count)
                .map(|_| {
                    (
                        rng.random_range(-amp..amp),
                        [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
                        rng.random_range(0.0..6.3),
                    )
                })
                .collect(),
        }
    }

    pub fn eval(&self, x: &[D2]) -> D2 {
        let mut acc = D2::cst(0.0);
        for (a, k, p) in &self.terms {
            let mut arg = D2::cst(*p);
            for (xi, ki) in x.iter().zip(k) {
                arg = arg + *xi * *ki;
            }
            acc = acc + arg.sin() * *a;
        }
        acc
    }
}

/// Random smooth fields. `Σ` is `λ g gᵀ` when `proportional` is set and an
/// independent SPD field otherwise.
pub fn random_analytic(seed: u64, dim: usize, lambda: f64, proportional: bool) -> Analytic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r_t = TrigSum::random(&mut rng, 3, 0.5);
    let s_t = TrigSum::random(&mut rng, 3, 1.0);
    let curv = rng.random_range(0.2..0.8);
    let f_t: Vec<TrigSum> = (0..dim)
        .map(|_| TrigSum::random(&mut rng, 2, 0.7))
        .collect();
    let g_t: Vec<TrigSum> = (0..dim * dim)
        .map(|_| TrigSum::random(&mut rng, 2, 0.2))
        .collect();
    let s_diag: Vec<TrigSum> = (0..dim)
        .map(|_| TrigSum::random(&mut rng, 2, 0.3))
        .collect();
    let s_off = TrigSum::random(&mut rng, 1, 0.2);
    let q_t = TrigSum::random(&mut rng, 2, 1.0);
    let gain = move |x: &[D2]| -> Vec<D2> {
        (0..dim * dim)
            .map(|e| g_t[e].eval(x) + if e / dim == e % dim { 1.0 } else { 0.0 })
            .collect()
    };
    let gain2 = gain.clone();
    Analytic {
        dim,
        r: Box::new(move |x| {
            let quad = x.iter().fold(D2::cst(0.0), |a, xi| a + xi.sq());
            r_t.eval(x) - quad * curv
        }),
        s: Box::new(move |x| s_t.eval(x) + x[0].sq() * 0.3),
        f: Box::new(move |x| f_t.iter().map(|t| t.eval(x)).collect()),
        g: Box::new(gain),
        sigma: Box::new(move |x| {
            if proportional {
                let g = gain2(x);
                let mut out = vec![D2::cst(0.0); dim * dim];
                for i in 0..dim {
                    for j in 0..dim {
                        for k in 0..dim {
                            out[i * dim + j] =
                                out[i * dim + j] + g[i * dim + k] * g[j * dim + k] * lambda;
                        }
                    }
                }
                out
            } else {
                let mut out = vec![D2::cst(0.0); dim * dim];
                for i in 0..dim {
                    out[i * dim + i] = s_diag[i].eval(x) + 1.0;
                }
                if dim == 2 {
                    let o = s_off.eval(x);
                    out[1] = o;
                    out[2] = o;
                }
                out
            }
        }),
        q: Box::new(move |x| q_t.eval(x)),
    }
}

/// `f = 0`, `g = I`, `Σ = I`, `q = 0` with random `R`, `S`.
pub fn random_classical(seed: u64, dim: usize) -> Analytic {
    let mut a = random_analytic(seed, dim, 1.0, false);
    a.f = Box::new(move |_| vec![D2::cst(0.0); dim]);
    let eye = move |_: &[D2]| -> Vec<D2> {
        (0..dim * dim)
            .map(|e| D2::cst(if e / dim == e % dim { 1.0 } else { 0.0 }))
            .collect()
    };
    a.g = Box::new(eye);
    a.sigma = Box::new(eye);
    a.q = Box::new(|_| D2::cst(0.0));
    a
}
