//! Primal-dual interior-point method for small dense second-order cone
//! programs
//!
//! ```text
//!     minimize    c^T x
//!     subject to  G x + s = h,   s in K
//! ```
//!
//! where `K` is a product of non-negative orthants and second-order cones.
//! Search directions use Nesterov-Todd scaling and Mehrotra's
//! predictor-corrector; the reduced system is the dense normal matrix
//! `G^T W^-1 W^-T G`, which is at most a few dozen rows for the problems
//! solved here.

use nalgebra::{Cholesky, DMatrix, DVector, LU};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    NonNeg(usize),
    /// `{(t, u) : ||u|| <= t}` of total dimension `d`.
    Soc(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::NonNeg(d) | Cone::Soc(d) => d,
        }
    }

    fn degree(&self) -> usize {
        match *self {
            Cone::NonNeg(d) => d,
            Cone::Soc(_) => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SocpProblem {
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub cones: Vec<Cone>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocpStatus {
    Optimal,
    MaxIterations,
    NumericalTrouble,
}

#[derive(Debug, Clone)]
pub struct SocpSolution {
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    pub z: DVector<f64>,
    pub iterations: usize,
    pub status: SocpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub relative_gap: f64,
}

impl SocpSolution {
    pub fn kkt_residual(&self) -> f64 {
        self.primal_residual.max(self.dual_residual).max(self.relative_gap)
    }
}

const STEP_FRACTION: f64 = 0.99;
const POLISH_FACTOR: f64 = 1e-2;
const POLISH_STEPS: usize = 4;

/// Per-cone Nesterov-Todd scaling.
#[derive(Debug, Clone)]
enum Scaling {
    /// `W = diag(d)`.
    NonNeg(DVector<f64>),
    /// `W = beta * H(w)` with `H` the hyperbolic reflection built from `w`,
    /// `w^T J w = 1`.
    Soc { beta: f64, w: DVector<f64> },
}

fn soc_det(u: &[f64]) -> f64 {
    u[0] * u[0] - u[1..].iter().map(|v| v * v).sum::<f64>()
}

/// `H(w) x` (`sign = 1`) or `H(w)^-1 x = H(Jw) x` (`sign = -1`).
fn apply_hyperbolic(w: &[f64], x: &[f64], sign: f64, out: &mut [f64]) {
    let w1x1: f64 = w[1..].iter().zip(&x[1..]).map(|(a, b)| a * b).sum();
    out[0] = w[0] * x[0] + sign * w1x1;
    let coef = sign * x[0] + w1x1 / (1.0 + w[0]);
    for i in 1..w.len() {
        out[i] = x[i] + coef * w[i];
    }
}

impl Scaling {
    fn new(cone: &Cone, s: &[f64], z: &[f64]) -> Option<Self> {
        match cone {
            Cone::NonNeg(_) => {
                if s.iter().chain(z).any(|&v| v <= 0.0) {
                    return None;
                }
                Some(Scaling::NonNeg(DVector::from_iterator(
                    s.len(),
                    s.iter().zip(z).map(|(a, b)| (a / b).sqrt()),
                )))
            }
            Cone::Soc(_) => {
                let (ds, dz) = (soc_det(s), soc_det(z));
                if !(ds > 0.0 && dz > 0.0 && s[0] > 0.0 && z[0] > 0.0) {
                    return None;
                }
                let (sn, zn) = (ds.sqrt(), dz.sqrt());
                let dot: f64 = s.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / (sn * zn);
                let gamma = ((1.0 + dot) / 2.0).sqrt();
                let mut w = DVector::zeros(s.len());
                w[0] = (s[0] / sn + z[0] / zn) / (2.0 * gamma);
                for i in 1..s.len() {
                    w[i] = (s[i] / sn - z[i] / zn) / (2.0 * gamma);
                }
                Some(Scaling::Soc {
                    beta: (sn / zn).sqrt(),
                    w,
                })
            }
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Scaling::NonNeg(d) => {
                for i in 0..x.len() {
                    out[i] = d[i] * x[i];
                }
            }
            Scaling::Soc { beta, w } => {
                apply_hyperbolic(w.as_slice(), x, 1.0, out);
                out.iter_mut().for_each(|v| *v *= beta);
            }
        }
    }

    fn apply_inverse(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Scaling::NonNeg(d) => {
                for i in 0..x.len() {
                    out[i] = x[i] / d[i];
                }
            }
            Scaling::Soc { beta, w } => {
                apply_hyperbolic(w.as_slice(), x, -1.0, out);
                out.iter_mut().for_each(|v| *v /= beta);
            }
        }
    }
}

/// Jordan product `u o v` for one cone.
fn jordan_product(cone: &Cone, u: &[f64], v: &[f64], out: &mut [f64]) {
    match cone {
        Cone::NonNeg(_) => {
            for i in 0..u.len() {
                out[i] = u[i] * v[i];
            }
        }
        Cone::Soc(_) => {
            out[0] = u.iter().zip(v).map(|(a, b)| a * b).sum();
            for i in 1..u.len() {
                out[i] = u[0] * v[i] + v[0] * u[i];
            }
        }
    }
}

/// Solves `lambda o x = d` for one cone.
fn jordan_divide(cone: &Cone, lambda: &[f64], d: &[f64], out: &mut [f64]) {
    match cone {
        Cone::NonNeg(_) => {
            for i in 0..d.len() {
                out[i] = d[i] / lambda[i];
            }
        }
        Cone::Soc(_) => {
            let det = soc_det(lambda);
            let l1d1: f64 = lambda[1..].iter().zip(&d[1..]).map(|(a, b)| a * b).sum();
            out[0] = (lambda[0] * d[0] - l1d1) / det;
            for i in 1..d.len() {
                out[i] = (d[i] - out[0] * lambda[i]) / lambda[0];
            }
        }
    }
}

/// Largest `alpha >= 0` with `u + alpha d` in the cone (`u` interior).
fn max_step(cone: &Cone, u: &[f64], d: &[f64]) -> f64 {
    match cone {
        Cone::NonNeg(_) => u
            .iter()
            .zip(d)
            .filter(|(_, &di)| di < 0.0)
            .map(|(ui, di)| -ui / di)
            .fold(f64::INFINITY, f64::min),
        Cone::Soc(_) => {
            let a = soc_det(d);
            let b = 2.0 * (u[0] * d[0] - u[1..].iter().zip(&d[1..]).map(|(x, y)| x * y).sum::<f64>());
            let c = soc_det(u);
            if a >= 0.0 && d[0] >= 0.0 {
                return f64::INFINITY;
            }
            let denom = (b * b - 4.0 * a * c).max(0.0).sqrt() - b;
            if denom <= 0.0 {
                f64::INFINITY
            } else {
                2.0 * c / denom
            }
        }
    }
}

struct ConeLayout {
    cones: Vec<(Cone, usize)>,
    degree: usize,
}

impl ConeLayout {
    fn new(cones: &[Cone]) -> Self {
        let mut offset = 0;
        let cones: Vec<(Cone, usize)> = cones
            .iter()
            .map(|c| {
                let entry = (*c, offset);
                offset += c.dim();
                entry
            })
            .collect();
        let degree = cones_degree(&cones);
        ConeLayout { cones, degree }
    }

    fn iter(&self) -> impl Iterator<Item = (Cone, std::ops::Range<usize>)> + '_ {
        self.cones.iter().map(|&(c, o)| (c, o..o + c.dim()))
    }

    fn identity(&self, m: usize) -> DVector<f64> {
        let mut e = DVector::zeros(m);
        for (cone, r) in self.iter() {
            match cone {
                Cone::NonNeg(_) => e.rows_mut(r.start, r.len()).fill(1.0),
                Cone::Soc(_) => e[r.start] = 1.0,
            }
        }
        e
    }

    /// Smallest `t` such that `u + t e` is on the cone boundary, per cone
    /// minimum (the "minimum eigenvalue" of `u`).
    fn min_eigenvalue(&self, u: &DVector<f64>) -> f64 {
        self.iter()
            .map(|(cone, r)| {
                let v = &u.as_slice()[r];
                match cone {
                    Cone::NonNeg(_) => v.iter().copied().fold(f64::INFINITY, f64::min),
                    Cone::Soc(_) => v[0] - v[1..].iter().map(|x| x * x).sum::<f64>().sqrt(),
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn max_step(&self, u: &DVector<f64>, d: &DVector<f64>) -> f64 {
        self.iter()
            .map(|(cone, r)| max_step(&cone, &u.as_slice()[r.clone()], &d.as_slice()[r]))
            .fold(f64::INFINITY, f64::min)
    }

    fn jordan_product(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        for (cone, r) in self.iter() {
            jordan_product(
                &cone,
                &u.as_slice()[r.clone()],
                &v.as_slice()[r.clone()],
                &mut out.as_mut_slice()[r],
            );
        }
        out
    }

    fn jordan_divide(&self, lambda: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(d.len());
        for (cone, r) in self.iter() {
            jordan_divide(
                &cone,
                &lambda.as_slice()[r.clone()],
                &d.as_slice()[r.clone()],
                &mut out.as_mut_slice()[r],
            );
        }
        out
    }
}

fn cones_degree(cones: &[(Cone, usize)]) -> usize {
    cones.iter().map(|(c, _)| c.degree()).sum()
}

struct Scalings {
    parts: Vec<Scaling>,
}

impl Scalings {
    fn new(layout: &ConeLayout, s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let parts = layout
            .iter()
            .map(|(cone, r)| Scaling::new(&cone, &s.as_slice()[r.clone()], &z.as_slice()[r]))
            .collect::<Option<Vec<_>>>()?;
        Some(Scalings { parts })
    }

    fn apply(&self, layout: &ConeLayout, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        for (sc, (_, r)) in self.parts.iter().zip(layout.iter()) {
            sc.apply(&x.as_slice()[r.clone()], &mut out.as_mut_slice()[r]);
        }
        out
    }

    fn apply_inverse(&self, layout: &ConeLayout, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        for (sc, (_, r)) in self.parts.iter().zip(layout.iter()) {
            sc.apply_inverse(&x.as_slice()[r.clone()], &mut out.as_mut_slice()[r]);
        }
        out
    }
}

enum Factor {
    Cholesky(Cholesky<f64, nalgebra::Dyn>),
    Lu(LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    fn new(h: DMatrix<f64>) -> Option<Self> {
        if let Some(ch) = h.clone().cholesky() {
            return Some(Factor::Cholesky(ch));
        }
        let lu = h.lu();
        lu.is_invertible().then_some(Factor::Lu(lu))
    }

    fn solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Factor::Cholesky(ch) => Some(ch.solve(b)),
            Factor::Lu(lu) => lu.solve(b),
        }
    }
}

/// Linearized KKT system at one iterate, factored once per iteration.
struct Newton<'a> {
    layout: &'a ConeLayout,
    scaling: Scalings,
    lambda: DVector<f64>,
    // W^-T G
    scaled_g: DMatrix<f64>,
    factor: Factor,
}

struct Direction {
    dx: DVector<f64>,
    ds: DVector<f64>,
    dz: DVector<f64>,
    // Scaled versions W^-T ds and W dz.
    ds_scaled: DVector<f64>,
    dz_scaled: DVector<f64>,
}

impl<'a> Newton<'a> {
    fn new(layout: &'a ConeLayout, g: &DMatrix<f64>, s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let scaling = Scalings::new(layout, s, z)?;
        let lambda = scaling.apply(layout, z);
        let mut scaled_g = DMatrix::zeros(g.nrows(), g.ncols());
        for j in 0..g.ncols() {
            let col = scaling.apply_inverse(layout, &g.column(j).into_owned());
            scaled_g.set_column(j, &col);
        }
        let normal = scaled_g.tr_mul(&scaled_g);
        let factor = Factor::new(normal)?;
        Some(Newton {
            layout,
            scaling,
            lambda,
            scaled_g,
            factor,
        })
    }

    /// Solves `G^T dz = bx`, `G dx + ds = bz`, `lambda o (W dz + W^-T ds) = bs`.
    fn solve(&self, bx: &DVector<f64>, bz: &DVector<f64>, bs: &DVector<f64>) -> Option<Direction> {
        let r = self.layout.jordan_divide(&self.lambda, bs);
        let wbz = self.scaling.apply_inverse(self.layout, bz);
        let t = &r - &wbz;
        let rhs = bx - self.scaled_g.tr_mul(&t);
        let dx = self.factor.solve(&rhs)?;
        let dz_scaled = &t + &self.scaled_g * &dx;
        let ds_scaled = &r - &dz_scaled;
        let dz = self.scaling.apply_inverse(self.layout, &dz_scaled);
        let ds = self.scaling.apply(self.layout, &ds_scaled);
        if dx.iter().chain(dz.iter()).chain(ds.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        Some(Direction {
            dx,
            ds,
            dz,
            ds_scaled,
            dz_scaled,
        })
    }

    fn step_length(&self, dir: &Direction) -> f64 {
        self.layout
            .max_step(&self.lambda, &dir.ds_scaled)
            .min(self.layout.max_step(&self.lambda, &dir.dz_scaled))
    }
}

/// `(x, s, z, iteration, [pres, dres, gap])` of an iterate that met `tol`.
type Snapshot = (DVector<f64>, DVector<f64>, DVector<f64>, usize, [f64; 3]);

pub fn solve_socp(problem: &SocpProblem, tol: f64, max_iterations: usize) -> SocpSolution {
    let layout = ConeLayout::new(&problem.cones);
    let (m, n) = (problem.g.nrows(), problem.g.ncols());
    debug_assert_eq!(m, problem.cones.iter().map(Cone::dim).sum::<usize>());
    debug_assert_eq!(n, problem.c.len());
    let (g, h, c) = (&problem.g, &problem.h, &problem.c);
    let e = layout.identity(m);
    let h_scale = h.norm().max(1.0);
    let c_scale = c.norm().max(1.0);

    // Least-squares start, then shift s and z into the cone interior.
    let gtg = g.tr_mul(g);
    let Some(factor) = Factor::new(gtg) else {
        return SocpSolution {
            x: DVector::zeros(n),
            s: e.clone(),
            z: e,
            iterations: 0,
            status: SocpStatus::NumericalTrouble,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            relative_gap: f64::INFINITY,
        };
    };
    let mut x = factor.solve(&g.tr_mul(h)).unwrap_or_else(|| DVector::zeros(n));
    let mut s = h - g * &x;
    let mut z = -(g * factor.solve(c).unwrap_or_else(|| DVector::zeros(n)));
    let shift_s = (1.0 - layout.min_eigenvalue(&s)).max(1.0);
    s += &e * shift_s;
    let shift_z = (1.0 - layout.min_eigenvalue(&z)).max(1.0);
    z += &e * shift_z;

    // Once `tol` is met, a few more steps push toward `tol * POLISH_FACTOR`;
    // the last iterate meeting `tol` is kept if that stalls.
    let polish_tol = tol * POLISH_FACTOR;
    let mut accepted: Option<Snapshot> = None;
    let mut polish_left = POLISH_STEPS;
    let mut status = SocpStatus::MaxIterations;
    let mut iterations = 0;
    let (mut pres, mut dres, mut rgap);
    loop {
        let rx = g.tr_mul(&z) + c;
        let rz = g * &x + &s - h;
        let gap = s.dot(&z);
        let pcost = c.dot(&x);
        pres = rz.norm() / h_scale;
        dres = rx.norm() / c_scale;
        rgap = gap / pcost.abs().max(1.0);
        let worst = pres.max(dres).max(rgap);
        if worst <= polish_tol {
            status = SocpStatus::Optimal;
            break;
        }
        if worst <= tol {
            let better = accepted.as_ref().is_none_or(|a| worst < a.4[0].max(a.4[1]).max(a.4[2]));
            if better {
                accepted = Some((x.clone(), s.clone(), z.clone(), iterations, [pres, dres, rgap]));
            }
            if polish_left == 0 {
                break;
            }
            polish_left -= 1;
        }
        if iterations >= max_iterations {
            break;
        }
        let Some(newton) = Newton::new(&layout, g, &s, &z) else {
            status = SocpStatus::NumericalTrouble;
            break;
        };
        let mu = gap / layout.degree as f64;

        // Predictor.
        let lambda_sq = layout.jordan_product(&newton.lambda, &newton.lambda);
        let Some(aff) = newton.solve(&-&rx, &-&rz, &-&lambda_sq) else {
            status = SocpStatus::NumericalTrouble;
            break;
        };
        let alpha_aff = newton.step_length(&aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);

        // Corrector.
        let correction = layout.jordan_product(&aff.ds_scaled, &aff.dz_scaled);
        let bs = -&lambda_sq - correction + &e * (sigma * mu);
        let damp = 1.0 - sigma;
        let Some(dir) = newton.solve(&(-&rx * damp), &(-&rz * damp), &bs) else {
            status = SocpStatus::NumericalTrouble;
            break;
        };
        let alpha = (STEP_FRACTION * newton.step_length(&dir)).min(1.0);
        x += &dir.dx * alpha;
        s += &dir.ds * alpha;
        z += &dir.dz * alpha;
        iterations += 1;
    }
    if status != SocpStatus::Optimal {
        if let Some((ax, as_, az, it, [p, d, r])) = accepted {
            (x, s, z, iterations, status) = (ax, as_, az, it, SocpStatus::Optimal);
            (pres, dres, rgap) = (p, d, r);
        }
    }
    SocpSolution {
        x,
        s,
        z,
        iterations,
        status,
        primal_residual: pres,
        dual_residual: dres,
        relative_gap: rgap,
    }
}
