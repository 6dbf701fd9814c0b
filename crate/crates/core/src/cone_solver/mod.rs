//! The precoder update: a convex QCQP in the stacked real/imaginary precoder
//! coordinates plus the epigraph scalars `xi` (objective) and `xi_c`
//! (common AWMSE bound).
//!
//! Every constraint has the form
//!
//! ```text
//!     x^T Q x + b^T x + d + a * xi + a_c * xi_c <= 0,     Q PSD
//! ```
//!
//! and the precoder coordinates additionally satisfy `||x||^2 <= P_t`.
//! [`solve`] rewrites each quadratic constraint as a rotated second-order
//! cone through a Cholesky factor of `Q` and hands the result to the
//! interior-point method in [`socp`].

pub mod socp;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::awmse::AwmseComponents;
use crate::error::{Error, Result};
use crate::mmse::Precoder;
use crate::model::{CMatrix, CVector};
use socp::{solve_socp, Cone, SocpProblem, SocpStatus};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;

/// Relative Cholesky regularization `eps * trace(Q)`.
const FACTOR_REGULARIZATION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// How real coordinates map to precoder columns.
///
/// Columns are ordered `[p_c, p_1, ..., p_K]` (without `p_c` when there is
/// no common stream); each column occupies `2 N_t` coordinates, real parts
/// first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_tx: usize,
    pub n_users: usize,
    pub has_common: bool,
}

impl Layout {
    pub fn n_columns(&self) -> usize {
        self.n_users + usize::from(self.has_common)
    }

    /// Real precoder coordinates.
    pub fn n_precoder(&self) -> usize {
        2 * self.n_tx * self.n_columns()
    }

    /// Total decision dimension including the epigraph variables.
    pub fn dimension(&self) -> usize {
        self.n_precoder() + 1 + usize::from(self.has_common)
    }

    fn private_offset(&self, k: usize) -> usize {
        2 * self.n_tx * (k + usize::from(self.has_common))
    }

    pub fn embed(&self, pre: &Precoder) -> DVector<f64> {
        let mut x = DVector::zeros(self.n_precoder());
        let mut put = |offset: usize, p: &CVector| {
            for (i, z) in p.iter().enumerate() {
                x[offset + i] = z.re;
                x[offset + self.n_tx + i] = z.im;
            }
        };
        if self.has_common {
            put(0, pre.common());
        }
        for k in 0..self.n_users {
            put(self.private_offset(k), pre.private_for(k));
        }
        x
    }

    pub fn precoder(&self, x: &DVector<f64>) -> Precoder {
        let n = self.n_tx;
        let take = |offset: usize| CVector::from_fn(n, |i, _| Complex64::new(x[offset + i], x[offset + n + i]));
        let common = if self.has_common { take(0) } else { CVector::zeros(n) };
        let private = (0..self.n_users).map(|k| take(self.private_offset(k))).collect();
        Precoder::new(common, private).expect("layout dimensions are consistent")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadConstraint {
    /// Symmetric PSD, `n_precoder x n_precoder`.
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    pub d: f64,
    /// Coefficient of `xi`.
    pub xi: f64,
    /// Coefficient of `xi_c`; must be zero without a common stream.
    pub xi_common: f64,
}

impl QuadConstraint {
    pub fn value(&self, x: &DVector<f64>, xi: f64, xi_common: f64) -> f64 {
        x.dot(&(&self.q * x)) + self.b.dot(x) + self.d + self.xi * xi + self.xi_common * xi_common
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexQcqp {
    pub layout: Layout,
    pub constraints: Vec<QuadConstraint>,
    pub power_cap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Optimal,
    MaxIterations,
    NumericalTrouble,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub precoder: Precoder,
    /// Real precoder coordinates as solved.
    pub x: DVector<f64>,
    pub xi: f64,
    pub xi_common: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Largest constraint value at the returned point (`<= 0` is feasible).
    pub max_violation: f64,
    pub status: SolverStatus,
}

/// Real symmetric embedding `[[A, -B], [B, A]]` of a Hermitian `A + iB`.
pub fn real_embedding(h: &CMatrix) -> DMatrix<f64> {
    let n = h.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for i in 0..n {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(n + i, n + j)] = z.re;
            out[(i, n + j)] = -z.im;
            out[(n + i, j)] = z.im;
        }
    }
    out
}

fn min_eigenvalue(q: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(q.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

impl ConvexQcqp {
    pub fn new(layout: Layout, constraints: Vec<QuadConstraint>, power_cap: f64) -> Result<Self> {
        let n = layout.n_precoder();
        if !(power_cap.is_finite() && power_cap >= 0.0) {
            return Err(Error::InvalidInput("power cap must be non-negative".into()));
        }
        for c in &constraints {
            if c.q.nrows() != n || c.q.ncols() != n {
                return Err(Error::DimensionMismatch {
                    what: "quadratic form size",
                    expected: n,
                    got: c.q.nrows(),
                });
            }
            if c.b.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "linear term length",
                    expected: n,
                    got: c.b.len(),
                });
            }
            if !layout.has_common && c.xi_common != 0.0 {
                return Err(Error::InvalidInput(
                    "common epigraph coupling without a common stream".into(),
                ));
            }
            let trace = c.q.trace();
            if (&c.q - c.q.transpose()).amax() > 1e-12 * trace.max(1.0) {
                return Err(Error::InvalidInput("quadratic form is not symmetric".into()));
            }
            if min_eigenvalue(&c.q) < -1e-10 * trace.max(f64::MIN_POSITIVE) {
                return Err(Error::InvalidInput(
                    "quadratic form is not positive semidefinite".into(),
                ));
            }
        }
        Ok(ConvexQcqp {
            layout,
            constraints,
            power_cap,
        })
    }

    pub fn dimension(&self) -> usize {
        self.layout.dimension()
    }

    /// Smallest feasible `xi` at a fixed precoder point: `xi_c` is set to
    /// its tightest common bound first, then `xi` to the tightest bound
    /// over the constraints that involve it.
    pub fn attained_objective(&self, x: &DVector<f64>) -> f64 {
        let xi_common = if self.layout.has_common {
            self.constraints
                .iter()
                .filter(|c| c.xi == 0.0 && c.xi_common < 0.0)
                .map(|c| c.value(x, 0.0, 0.0) / -c.xi_common)
                .fold(f64::NEG_INFINITY, f64::max)
        } else {
            0.0
        };
        self.constraints
            .iter()
            .filter(|c| c.xi < 0.0)
            .map(|c| c.value(x, 0.0, xi_common) / -c.xi)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Text dump for cross-checking with external solvers.
    ///
    /// ```text
    /// qcqp 1
    /// layout <n_tx> <n_users> <has_common 0|1>
    /// dimension <n>
    /// power_cap <P_t>
    /// constraints <count>
    /// constraint <i>
    /// q <row-major entries>
    /// b <entries>
    /// d <value>
    /// coupling <xi> <xi_common>
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let l = &self.layout;
        let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "qcqp 1");
        let _ = writeln!(out, "layout {} {} {}", l.n_tx, l.n_users, u8::from(l.has_common));
        let _ = writeln!(out, "dimension {}", l.dimension());
        let _ = writeln!(out, "power_cap {:e}", self.power_cap);
        let _ = writeln!(out, "constraints {}", self.constraints.len());
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = writeln!(out, "constraint {i}");
            let _ = writeln!(out, "q {}", join(&mut c.q.transpose().iter().copied()));
            let _ = writeln!(out, "b {}", join(&mut c.b.iter().copied()));
            let _ = writeln!(out, "d {:e}", c.d);
            let _ = writeln!(out, "coupling {:e} {:e}", c.xi, c.xi_common);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidInput(format!("qcqp dump: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut field = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad("unexpected end"))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(&format!("expected `{key}`")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let nums = |v: Vec<String>| -> Result<Vec<f64>> {
            v.iter()
                .map(|s| s.parse::<f64>().map_err(|_| bad("bad number")))
                .collect()
        };
        if field("qcqp")? != ["1"] {
            return Err(bad("unsupported version"));
        }
        let l = nums(field("layout")?)?;
        if l.len() != 3 {
            return Err(bad("layout needs three fields"));
        }
        let layout = Layout {
            n_tx: l[0] as usize,
            n_users: l[1] as usize,
            has_common: l[2] != 0.0,
        };
        let dim = nums(field("dimension")?)?;
        if dim.first().map(|&d| d as usize) != Some(layout.dimension()) {
            return Err(bad("dimension does not match layout"));
        }
        let power_cap = *nums(field("power_cap")?)?
            .first()
            .ok_or_else(|| bad("missing power cap"))?;
        let count = *nums(field("constraints")?)?
            .first()
            .ok_or_else(|| bad("missing count"))? as usize;
        let n = layout.n_precoder();
        let mut constraints = Vec::with_capacity(count);
        for _ in 0..count {
            field("constraint")?;
            let q = nums(field("q")?)?;
            let b = nums(field("b")?)?;
            if q.len() != n * n || b.len() != n {
                return Err(bad("constraint size"));
            }
            let d = *nums(field("d")?)?.first().ok_or_else(|| bad("missing d"))?;
            let coupling = nums(field("coupling")?)?;
            if coupling.len() != 2 {
                return Err(bad("coupling needs two fields"));
            }
            constraints.push(QuadConstraint {
                q: DMatrix::from_row_slice(n, n, &q),
                b: DVector::from_vec(b),
                d,
                xi: coupling[0],
                xi_common: coupling[1],
            });
        }
        ConvexQcqp::new(layout, constraints, power_cap)
    }
}

fn block_diagonal(block: &DMatrix<f64>, n_blocks: usize, skip_first: bool) -> DMatrix<f64> {
    let b = block.nrows();
    let mut out = DMatrix::zeros(b * n_blocks, b * n_blocks);
    for j in usize::from(skip_first)..n_blocks {
        out.view_mut((j * b, j * b), (b, b)).copy_from(block);
    }
    out
}

fn linear_term(f: &CVector, layout: &Layout, offset: usize) -> DVector<f64> {
    // -2 Re{f^H p} = -2 (Re f . Re p + Im f . Im p)
    let mut b = DVector::zeros(layout.n_precoder());
    for (i, z) in f.iter().enumerate() {
        b[offset + i] = -2.0 * z.re;
        b[offset + layout.n_tx + i] = -2.0 * z.im;
    }
    b
}

/// Builds the precoder-update problem from averaged components.
///
/// `coeffs` are the common-rate partition coefficients; `None` builds the
/// private-only (conventional broadcast) problem without `p_c` and `xi_c`.
pub fn assemble(comp: &AwmseComponents, coeffs: Option<&[f64]>, noise_var: f64, power_cap: f64) -> Result<ConvexQcqp> {
    let n_users = comp.n_users();
    let n_tx = comp.n_tx();
    if let Some(c) = coeffs {
        if c.len() != n_users {
            return Err(Error::DimensionMismatch {
                what: "partition coefficients",
                expected: n_users,
                got: c.len(),
            });
        }
        if c.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::InvalidInput(
                "partition coefficients must be non-negative".into(),
            ));
        }
    }
    let layout = Layout {
        n_tx,
        n_users,
        has_common: coeffs.is_some(),
    };
    let n_cols = layout.n_columns();
    let mut constraints = Vec::with_capacity(2 * n_users);
    for (k, u) in comp.users.iter().enumerate() {
        if u.psi_private.nrows() != n_tx || u.f_private.len() != n_tx {
            return Err(Error::DimensionMismatch {
                what: "component size",
                expected: n_tx,
                got: u.f_private.len(),
            });
        }
        let c_k = coeffs.map_or(0.0, |c| c[k]);
        constraints.push(QuadConstraint {
            q: block_diagonal(&real_embedding(&u.psi_private), n_cols, layout.has_common),
            b: linear_term(&u.f_private, &layout, layout.private_offset(k)),
            d: noise_var * u.t_private + u.u_private - u.v_private - c_k,
            xi: -1.0,
            xi_common: c_k,
        });
    }
    if layout.has_common {
        for u in &comp.users {
            constraints.push(QuadConstraint {
                q: block_diagonal(&real_embedding(&u.psi_common), n_cols, false),
                b: linear_term(&u.f_common, &layout, 0),
                d: noise_var * u.t_common + u.u_common - u.v_common,
                xi: 0.0,
                xi_common: -1.0,
            });
        }
    }
    ConvexQcqp::new(layout, constraints, power_cap)
}

/// Factor `F` with `F^T F = Q + eps I`, or `None` for an all-zero `Q`.
fn cone_factor(q: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
    let trace = q.trace();
    if trace <= 0.0 {
        return Ok(None);
    }
    let n = q.nrows();
    let reg = q + DMatrix::identity(n, n) * (FACTOR_REGULARIZATION * trace);
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("quadratic form factorization failed".into()))?;
    Ok(Some(chol.l().transpose()))
}

fn to_socp(qcqp: &ConvexQcqp) -> Result<SocpProblem> {
    let layout = &qcqp.layout;
    let n = layout.n_precoder();
    let dim = layout.dimension();
    let xi_col = n;
    let xi_c_col = n + 1;

    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut nonneg_rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut soc_dims = Vec::new();
    for c in &qcqp.constraints {
        // Affine part as g^T z + d, with z = [x; xi; xi_c].
        let mut g = vec![0.0; dim];
        g[..n].copy_from_slice(c.b.as_slice());
        g[xi_col] = c.xi;
        if layout.has_common {
            g[xi_c_col] = c.xi_common;
        }
        match cone_factor(&c.q)? {
            None => nonneg_rows.push((g, -c.d)),
            Some(f) => {
                // ||F x||^2 <= tau, tau = -(g^T z + d), as
                // ((tau / beta + beta) / 2, (tau / beta - beta) / 2, F x) in
                // the cone. beta ~ sqrt(tau) keeps the first two entries
                // apart when the constant is large.
                let beta = c.d.abs().max(1.0).sqrt();
                let scaled: Vec<f64> = g.iter().map(|v| 0.5 * v / beta).collect();
                rows.push((scaled.clone(), 0.5 * (beta - c.d / beta)));
                rows.push((scaled, 0.5 * (-beta - c.d / beta)));
                for r in 0..f.nrows() {
                    let mut row = vec![0.0; dim];
                    for j in 0..n {
                        row[j] = -f[(r, j)];
                    }
                    rows.push((row, 0.0));
                }
                soc_dims.push(f.nrows() + 2);
            }
        }
    }
    // Power: (sqrt(P_t), x) in the cone.
    rows.push((vec![0.0; dim], qcqp.power_cap.sqrt()));
    for j in 0..n {
        let mut row = vec![0.0; dim];
        row[j] = -1.0;
        rows.push((row, 0.0));
    }
    soc_dims.push(n + 1);

    let mut cones = Vec::new();
    if !nonneg_rows.is_empty() {
        cones.push(Cone::NonNeg(nonneg_rows.len()));
    }
    cones.extend(soc_dims.into_iter().map(Cone::Soc));
    let all: Vec<_> = nonneg_rows.into_iter().chain(rows).collect();
    let g = DMatrix::from_fn(all.len(), dim, |i, j| all[i].0[j]);
    let h = DVector::from_iterator(all.len(), all.iter().map(|r| r.1));
    let mut cost = DVector::zeros(dim);
    cost[xi_col] = 1.0;
    Ok(SocpProblem { c: cost, g, h, cones })
}

/// Minimizes `xi` over the QCQP.
///
/// A `MaxIterations` or `NumericalTrouble` report still carries the last
/// iterate; the caller decides whether to use it.
pub fn solve(qcqp: &ConvexQcqp, settings: &SolverSettings) -> Result<SolverReport> {
    let problem = to_socp(qcqp)?;
    let sol = solve_socp(&problem, settings.tol, settings.max_iterations);
    let layout = &qcqp.layout;
    let n = layout.n_precoder();
    let mut x = sol.x.rows(0, n).into_owned();
    // Pull the iterate back onto the power ball if it ended just outside.
    let norm_sq = x.norm_squared();
    if norm_sq > qcqp.power_cap {
        x *= (qcqp.power_cap / norm_sq).sqrt();
    }
    let xi = sol.x[n];
    let xi_common = if layout.has_common { sol.x[n + 1] } else { 0.0 };
    let max_violation = qcqp
        .constraints
        .iter()
        .map(|c| c.value(&x, xi, xi_common))
        .fold(norm_sq.sqrt() - qcqp.power_cap.sqrt(), f64::max);
    let status = match sol.status {
        SocpStatus::Optimal => SolverStatus::Optimal,
        SocpStatus::MaxIterations => SolverStatus::MaxIterations,
        SocpStatus::NumericalTrouble => SolverStatus::NumericalTrouble,
    };
    Ok(SolverReport {
        precoder: layout.precoder(&x),
        x,
        xi,
        xi_common,
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual(),
        max_violation,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::awmse::{build_components, update_equalizers_weights};
    use crate::model::{complex_gaussian, draw_sample_set, Channel, RngStream};

    fn ball_problem(power_cap: f64) -> ConvexQcqp {
        // x is one complex scalar column: layout n_tx = 1, one user, no common.
        let layout = Layout {
            n_tx: 1,
            n_users: 1,
            has_common: false,
        };
        let n = layout.n_precoder();
        let mut b = DVector::zeros(n);
        b[0] = -2.0;
        let c = QuadConstraint {
            q: DMatrix::identity(n, n),
            b,
            d: 0.0,
            xi: -1.0,
            xi_common: 0.0,
        };
        ConvexQcqp::new(layout, vec![c], power_cap).unwrap()
    }

    #[test]
    fn interior_unconstrained_optimum() {
        let r = solve(&ball_problem(4.0), &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Optimal);
        assert!((r.xi + 1.0).abs() < 1e-9, "{}", r.xi);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && r.x[1].abs() < 1e-6);
    }

    #[test]
    fn power_limited_optimum() {
        let r = solve(&ball_problem(0.25), &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Optimal);
        assert!((r.xi + 0.75).abs() < 1e-9, "{}", r.xi);
        assert!((r.x[0] - 0.5).abs() < 1e-8);
        assert!(r.kkt_residual <= 1e-8);
    }

    fn random_components(seed: u64, with_common: bool) -> (AwmseComponents, Precoder) {
        let mut rng = RngStream::new(seed, 0).rng();
        let est = Channel::new(CMatrix::from_fn(2, 2, |_, _| complex_gaussian(&mut rng, 1.0))).unwrap();
        let ss = draw_sample_set(&RngStream::new(seed, 1), &est, 0.1, 50);
        let v = |rng: &mut rand_chacha::ChaCha8Rng| CVector::from_fn(2, |_, _| complex_gaussian(rng, 2.0));
        let mut pre = Precoder::new(v(&mut rng), vec![v(&mut rng), v(&mut rng)]).unwrap();
        if !with_common {
            pre = pre.with_zero_common();
        }
        let gw = update_equalizers_weights(&ss, &pre, 1.0);
        (build_components(&ss, &gw), pre)
    }

    #[test]
    fn constraint_count_and_dimension() {
        let (comp, _) = random_components(1, true);
        let q = assemble(&comp, Some(&[0.5, 0.5]), 1.0, 10.0).unwrap();
        assert_eq!(q.constraints.len(), 2 * 2);
        assert_eq!(q.dimension(), 2 * 2 * 3 + 2);
        let bc = assemble(&comp, None, 1.0, 10.0).unwrap();
        assert_eq!(bc.constraints.len(), 2);
        assert_eq!(bc.dimension(), 2 * 2 * 2 + 1);
        assert!(assemble(&comp, Some(&[1.0]), 1.0, 10.0).is_err());
    }

    #[test]
    fn real_embedding_preserves_constraint_values() {
        use crate::awmse::awmse_eval;
        let (comp, _) = random_components(2, true);
        let coeffs = [0.3, 0.7];
        let q = assemble(&comp, Some(&coeffs), 1.0, 10.0).unwrap();
        let mut rng = RngStream::new(3, 0).rng();
        for _ in 0..100 {
            let v = |rng: &mut rand_chacha::ChaCha8Rng| CVector::from_fn(2, |_, _| complex_gaussian(rng, 1.0));
            let pre = Precoder::new(v(&mut rng), vec![v(&mut rng), v(&mut rng)]).unwrap();
            let x = q.layout.embed(&pre);
            assert_eq!(q.layout.precoder(&x), pre);
            let (xc, xp) = awmse_eval(&comp, &pre, 1.0);
            for k in 0..2 {
                // private: xi_k + c_k (xi_c - 1) - xi with xi = xi_c = 0
                let emb = q.constraints[k].value(&x, 0.0, 0.0);
                assert!((emb - (xp[k] - coeffs[k])).abs() <= 1e-12 * (1.0 + xp[k].abs()));
                let emb_c = q.constraints[2 + k].value(&x, 0.0, 0.0);
                assert!((emb_c - xc[k]).abs() <= 1e-12 * (1.0 + xc[k].abs()));
            }
        }
    }

    #[test]
    fn zero_components_leave_power_ball() {
        let (mut comp, _) = random_components(4, true);
        for u in &mut comp.users {
            u.psi_common.fill(Complex64::new(0.0, 0.0));
            u.psi_private.fill(Complex64::new(0.0, 0.0));
            u.f_common.fill(Complex64::new(0.0, 0.0));
            u.f_private.fill(Complex64::new(0.0, 0.0));
            (
                u.t_common,
                u.t_private,
                u.u_common,
                u.u_private,
                u.v_common,
                u.v_private,
            ) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        }
        let q = assemble(&comp, Some(&[0.5, 0.5]), 1.0, 3.0).unwrap();
        assert!(q.constraints.iter().all(|c| c.q.amax() == 0.0 && c.b.amax() == 0.0));
        let r = solve(&q, &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Optimal);
        assert!(r.x.norm_squared() <= 3.0 + 1e-8);
    }

    #[test]
    fn solved_point_beats_current_precoder() {
        for seed in 0..5 {
            let (comp, pre) = random_components(10 + seed, true);
            let q = assemble(&comp, Some(&[0.4, 0.6]), 1.0, pre.power()).unwrap();
            let r = solve(&q, &SolverSettings::default()).unwrap();
            assert_eq!(r.status, SolverStatus::Optimal, "seed {seed}");
            let before = q.attained_objective(&q.layout.embed(&pre));
            let after = q.attained_objective(&r.x);
            assert!(after <= before + 1e-9, "{after} > {before}");
            assert!((after - r.xi).abs() <= 1e-6 * (1.0 + r.xi.abs()));
            assert!(r.precoder.power() <= pre.power() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rejects_indefinite_forms() {
        let layout = Layout {
            n_tx: 1,
            n_users: 1,
            has_common: false,
        };
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let c = QuadConstraint {
            q,
            b: DVector::zeros(2),
            d: 0.0,
            xi: -1.0,
            xi_common: 0.0,
        };
        assert!(ConvexQcqp::new(layout, vec![c], 1.0).is_err());
    }

    #[test]
    fn text_dump_round_trip() {
        let (comp, _) = random_components(5, true);
        let q = assemble(&comp, Some(&[0.2, 0.8]), 1.0, 10.0).unwrap();
        let back = ConvexQcqp::from_text(&q.to_text()).unwrap();
        assert_eq!(back.layout, q.layout);
        assert_eq!(back.constraints.len(), q.constraints.len());
        for (a, b) in back.constraints.iter().zip(&q.constraints) {
            assert!((&a.q - &b.q).amax() <= 1e-15 * b.q.amax().max(1.0));
            assert!((&a.b - &b.b).amax() <= 1e-15 * b.b.amax().max(1.0));
        }
        assert!(ConvexQcqp::from_text("qcqp 2\n").is_err());
    }

    #[test]
    fn solve_is_deterministic() {
        let (comp, _) = random_components(6, true);
        let q = assemble(&comp, Some(&[0.5, 0.5]), 1.0, 10.0).unwrap();
        let a = solve(&q, &SolverSettings::default()).unwrap();
        let b = solve(&q, &SolverSettings::default()).unwrap();
        assert_eq!(a, b);
    }
}
