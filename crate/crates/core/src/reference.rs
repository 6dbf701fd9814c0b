//! Slow independent solver for [`ConvexQcqp`] instances, used to check the
//! interior-point method.
//!
//! Eliminating the epigraph variables turns the problem into minimizing a
//! pointwise maximum of convex quadratics `phi_j(x)` over the power ball.
//! Its dual, `max_{lambda in simplex} min_{|x|^2 <= P} sum_j lambda_j phi_j(x)`,
//! is maximized by projected gradient ascent; the inner problem is a
//! trust-region subproblem solved by bisection on the ball multiplier.
//! Every dual iterate gives a lower bound and its inner minimizer an upper
//! bound, so the returned gap certifies the result.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::cone_solver::ConvexQcqp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub x: DVector<f64>,
    /// Best primal value found (upper bound on the optimum).
    pub upper: f64,
    /// Best dual value found (lower bound on the optimum).
    pub lower: f64,
    pub iterations: usize,
}

impl ReferenceSolution {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone)]
struct Quadratic {
    a: DMatrix<f64>,
    b: DVector<f64>,
    d: f64,
}

impl Quadratic {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.a * x)) + self.b.dot(x) + self.d
    }
}

/// Pieces `phi_j` with `attained_objective(x) = max_j phi_j(x)`.
fn pieces(qcqp: &ConvexQcqp) -> Result<Vec<Quadratic>> {
    let quad = |c: &crate::cone_solver::QuadConstraint, s: f64| Quadratic {
        a: &c.q * s,
        b: &c.b * s,
        d: c.d * s,
    };
    let commons: Vec<Quadratic> = qcqp
        .constraints
        .iter()
        .filter(|c| c.xi == 0.0 && c.xi_common < 0.0)
        .map(|c| quad(c, -1.0 / c.xi_common))
        .collect();
    let mut out = Vec::new();
    for c in qcqp.constraints.iter().filter(|c| c.xi < 0.0) {
        if c.xi_common < 0.0 {
            return Err(Error::InvalidInput("objective rows must not decrease with xi_c".into()));
        }
        let own = quad(c, -1.0 / c.xi);
        let w = c.xi_common / -c.xi;
        if w == 0.0 || commons.is_empty() {
            out.push(own);
            continue;
        }
        for g in &commons {
            out.push(Quadratic {
                a: &own.a + &g.a * w,
                b: &own.b + &g.b * w,
                d: own.d + w * g.d,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no constraint bounds the objective".into()));
    }
    Ok(out)
}

/// `argmin x^T A x + b^T x` over `|x|^2 <= cap` for PSD `A`.
fn ball_minimizer(a: &DMatrix<f64>, b: &DVector<f64>, cap: f64) -> DVector<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let beta = eig.eigenvectors.tr_mul(b);
    let lam = &eig.eigenvalues;
    let scale = lam.amax().max(1.0);
    let coords = |mu: f64| -> DVector<f64> {
        DVector::from_fn(beta.len(), |i, _| {
            let denom = 2.0 * (lam[i].max(0.0) + mu);
            if denom > 1e-14 * scale {
                -beta[i] / denom
            } else {
                // Flat direction with no linear pull: any value is optimal.
                0.0
            }
        })
    };
    let unconstrained_ok = (0..beta.len()).all(|i| lam[i] > 1e-14 * scale || beta[i].abs() <= 1e-300);
    let y0 = coords(0.0);
    let y = if unconstrained_ok && y0.norm_squared() <= cap {
        y0
    } else {
        let (mut lo, mut hi) = (0.0, b.norm() / (2.0 * cap.sqrt().max(f64::MIN_POSITIVE)) + 1e-300);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if coords(mid).norm_squared() > cap {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        coords(hi)
    };
    &eig.eigenvectors * y
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumulative += s;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// Solves to relative gap `tol` (relative to `max(1, |upper|)`) or until
/// `max_iterations` dual steps.
pub fn solve_reference(qcqp: &ConvexQcqp, tol: f64, max_iterations: usize) -> Result<ReferenceSolution> {
    let pieces = pieces(qcqp)?;
    let m = pieces.len();
    let cap = qcqp.power_cap;

    // Inner minimizer, dual value and the piece values there.
    let evaluate = |lambda: &DVector<f64>| {
        let n = pieces[0].b.len();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let mut d = 0.0;
        for (l, p) in lambda.iter().zip(&pieces) {
            a += &p.a * *l;
            b += &p.b * *l;
            d += l * p.d;
        }
        let x = ball_minimizer(&a, &b, cap);
        let dual = x.dot(&(&a * &x)) + b.dot(&x) + d;
        let values = DVector::from_iterator(m, pieces.iter().map(|p| p.eval(&x)));
        (x, dual, values)
    };

    let mut lambda = DVector::from_element(m, 1.0 / m as f64);
    let (x, mut dual, mut grad) = evaluate(&lambda);
    let mut best = ReferenceSolution {
        upper: grad.max(),
        lower: dual,
        x,
        iterations: 0,
    };
    let mut step = 1.0 / grad.amax().max(1.0);
    for it in 1..=max_iterations {
        best.iterations = it;
        if best.gap() <= tol * best.upper.abs().max(1.0) {
            break;
        }
        let trial = project_simplex(&(&lambda + &grad * step));
        let (tx, tdual, tgrad) = evaluate(&trial);
        if tgrad.max() < best.upper {
            best.upper = tgrad.max();
            best.x = tx;
        }
        if tdual >= dual {
            (lambda, dual, grad) = (trial, tdual, tgrad);
            best.lower = best.lower.max(dual);
            step *= 1.5;
        } else {
            step *= 0.5;
            if step < 1e-300 {
                break;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone_solver::{self, Layout, QuadConstraint, SolverSettings};

    fn ball(cap: f64) -> ConvexQcqp {
        let layout = Layout {
            n_tx: 1,
            n_users: 1,
            has_common: false,
        };
        let mut b = DVector::zeros(2);
        b[0] = -2.0;
        ConvexQcqp::new(
            layout,
            vec![QuadConstraint {
                q: DMatrix::identity(2, 2),
                b,
                d: 0.0,
                xi: -1.0,
                xi_common: 0.0,
            }],
            cap,
        )
        .unwrap()
    }

    #[test]
    fn closed_form_balls() {
        for (cap, expected) in [(4.0, -1.0), (0.25, -0.75)] {
            let r = solve_reference(&ball(cap), 1e-12, 1000).unwrap();
            assert!((r.upper - expected).abs() < 1e-10, "{r:?}");
            assert!((r.lower - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_lands_on_simplex() {
        let p = project_simplex(&DVector::from_vec(vec![0.9, 0.6, -0.2]));
        assert!((p.sum() - 1.0).abs() < 1e-15);
        assert!((p[0] - 0.65).abs() < 1e-15 && (p[1] - 0.35).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn ball_minimizer_hits_boundary() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let b = DVector::from_vec(vec![0.0, -1.0]);
        let x = ball_minimizer(&a, &b, 2.0);
        assert!((x.norm_squared() - 2.0).abs() < 1e-12);
        assert!((x[1] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn two_piece_minimax_matches_cone_solver() {
        // max((x1-1)^2 + x2^2, (x1+1)^2 + x2^2) is minimized at 0 with value 1.
        let layout = Layout {
            n_tx: 1,
            n_users: 2,
            has_common: false,
        };
        let mk = |sign: f64| {
            let mut q = DMatrix::zeros(4, 4);
            q[(0, 0)] = 1.0;
            q[(1, 1)] = 1.0;
            let mut b = DVector::zeros(4);
            b[0] = -2.0 * sign;
            QuadConstraint {
                q,
                b,
                d: 1.0,
                xi: -1.0,
                xi_common: 0.0,
            }
        };
        let qcqp = ConvexQcqp::new(layout, vec![mk(1.0), mk(-1.0)], 10.0).unwrap();
        let r = solve_reference(&qcqp, 1e-12, 10_000).unwrap();
        assert!((r.upper - 1.0).abs() < 1e-9, "{r:?}");
        let s = cone_solver::solve(&qcqp, &SolverSettings::default()).unwrap();
        assert!((s.xi - r.upper).abs() < 1e-7);
    }
}
