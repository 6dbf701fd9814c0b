//! Randomized oracle suites shared by the `verify` command and the
//! acceptance tests. Each suite returns a report instead of panicking.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::awmse;
use crate::cone_solver::{self, ConvexQcqp, Layout, QuadConstraint, SolverSettings, SolverStatus};
use crate::error::Result;
use crate::mmse::{self, Precoder};
use crate::model::{complex_gaussian, draw_sample_set, CMatrix, CVector, Channel, RngStream};
use crate::partition;
use crate::reference;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    /// One message per failed check.
    pub failures: Vec<String>,
    /// Worst observed values, `(label, value)`.
    pub metrics: Vec<(&'static str, f64)>,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        SuiteReport {
            name,
            cases: 0,
            failures: Vec::new(),
            metrics: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(msg());
        }
    }

    fn worst(&mut self, label: &'static str, value: f64) {
        match self.metrics.iter_mut().find(|(l, _)| *l == label) {
            Some((_, v)) => *v = v.max(value),
            None => self.metrics.push((label, value)),
        }
    }

    pub fn summary(&self) -> String {
        let metrics: Vec<String> = self.metrics.iter().map(|(l, v)| format!("{l}={v:.3e}")).collect();
        format!(
            "{}: {} cases, {} failures; {}",
            self.name,
            self.cases,
            self.failures.len(),
            metrics.join(", ")
        )
    }
}

/// Closed form vs bisection on random rate vectors with `K` in `1..=6`.
pub fn waterfill_suite(instances: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("waterfill-vs-lp");
    let mut rng = RngStream::new(seed, 0).rng();
    for i in 0..instances {
        let k = rng.random_range(1..=6);
        let rc: f64 = rng.random_range(0.01..5.0);
        let rs: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..6.0)).collect();
        let (Ok(a), Ok(b)) = (partition::waterfill(rc, &rs), partition::lp_oracle(rc, &rs)) else {
            rep.failures.push(format!("case {i}: partition rejected valid input"));
            continue;
        };
        rep.cases += 1;
        let dc = a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let dl = (a.level - b.level).abs();
        rep.worst("max_coeff_diff", dc);
        rep.worst("max_level_diff", dl);
        rep.check(dc <= 1e-7, || format!("case {i}: coefficient difference {dc:e}"));
        rep.check(dl <= 1e-9, || format!("case {i}: level difference {dl:e}"));

        // Complementary slackness, up to rounding of the level.
        let tol = 1e-12 * (1.0 + a.level);
        let sum: f64 = a.coeffs.iter().sum();
        rep.worst("sum_error", (sum - 1.0).abs());
        rep.check((sum - 1.0).abs() <= 1e-12 * (1.0 + a.level / rc), || {
            format!("case {i}: coefficients sum to {sum}")
        });
        for (c, r) in a.coeffs.iter().zip(&rs) {
            rep.check(*c >= 0.0, || format!("case {i}: negative coefficient {c}"));
            if *c > 0.0 {
                let slack = (r + c * rc - a.level).abs();
                rep.worst("active_slack", slack);
                rep.check(slack <= tol, || format!("case {i}: active user off level by {slack:e}"));
            } else {
                rep.check(*r >= a.level - tol, || format!("case {i}: inactive user below level"));
            }
        }
    }
    rep
}

fn random_channel(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Channel {
    Channel::new(CMatrix::from_fn(n, k, |_, _| complex_gaussian(rng, 1.0))).expect("finite entries")
}

fn random_precoder(rng: &mut ChaCha8Rng, n: usize, k: usize, power: f64) -> Precoder {
    let mut v = || CVector::from_fn(n, |_, _| complex_gaussian(rng, 1.0));
    let common = v();
    let private = (0..k).map(|_| v()).collect();
    let p = Precoder::new(common, private).expect("consistent dimensions");
    let scale = (power / p.power()).sqrt();
    p.scaled(scale)
}

fn random_coeffs(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|c| c / total).collect()
}

/// A random precoder-update problem built from random sample sets, with
/// precoder dimension at most 10 (real dimension at most 12).
pub fn random_qcqp(rng: &mut ChaCha8Rng) -> Result<ConvexQcqp> {
    // (n_tx, n_users, has_common) with 2 n_tx (K + common) <= 10.
    const SHAPES: [(usize, usize, bool); 5] = [(1, 1, true), (2, 1, true), (1, 2, true), (2, 2, false), (1, 1, false)];
    let (n, k, common) = SHAPES[rng.random_range(0..SHAPES.len())];
    let snr_db: f64 = rng.random_range(0.0..30.0);
    let power = 10f64.powf(snr_db / 10.0);
    let sigma_e2: f64 = rng.random_range(0.0..0.5);
    let m = rng.random_range(1..=30);
    let estimate = random_channel(rng, n, k);
    let ss = draw_sample_set(&RngStream::new(rng.random(), 0), &estimate, sigma_e2, m);
    let pre = random_precoder(rng, n, k, power);
    let gw = awmse::update_equalizers_weights(&ss, &pre, 1.0);
    let comp = awmse::build_components(&ss, &gw);
    let coeffs = random_coeffs(rng, k);
    cone_solver::assemble(&comp, common.then_some(coeffs.as_slice()), 1.0, power)
}

/// `minimize |x|^2 - 2 x_1` over `|x|^2 <= cap` through the epigraph.
pub fn ball_example(cap: f64) -> ConvexQcqp {
    let layout = Layout {
        n_tx: 1,
        n_users: 1,
        has_common: false,
    };
    let mut b = DVector::zeros(2);
    b[0] = -2.0;
    let c = QuadConstraint {
        q: DMatrix::identity(2, 2),
        b,
        d: 0.0,
        xi: -1.0,
        xi_common: 0.0,
    };
    ConvexQcqp::new(layout, vec![c], cap).expect("valid example")
}

/// Interior-point solver vs the dual reference, plus the two closed-form
/// ball examples.
pub fn solver_suite(instances: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("solver-vs-reference");
    let settings = SolverSettings::default();
    for (cap, expected) in [(4.0, -1.0), (0.25, -0.75)] {
        rep.cases += 1;
        match cone_solver::solve(&ball_example(cap), &settings) {
            Ok(r) => {
                let err = (r.xi - expected).abs();
                rep.worst("ball_error", err);
                rep.check(err <= 1e-9, || format!("ball cap {cap}: xi {} vs {expected}", r.xi));
            }
            Err(e) => rep.failures.push(format!("ball cap {cap}: {e}")),
        }
    }
    let mut rng = RngStream::new(seed, 1).rng();
    for i in 0..instances {
        rep.cases += 1;
        let qcqp = match random_qcqp(&mut rng) {
            Ok(q) => q,
            Err(e) => {
                rep.failures.push(format!("case {i}: assembly failed: {e}"));
                continue;
            }
        };
        let (ipm, refsol) = match (
            cone_solver::solve(&qcqp, &settings),
            reference::solve_reference(&qcqp, 1e-10, 200_000),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                rep.failures.push(format!("case {i}: {e}"));
                continue;
            }
        };
        let scale = refsol.upper.abs().max(1.0);
        rep.worst("reference_gap", refsol.gap() / scale);
        let attained = qcqp.attained_objective(&ipm.x);
        let rel = (attained - refsol.upper).abs() / scale;
        rep.worst("objective_rel_diff", rel);
        rep.check(rel <= 1e-6, || {
            format!(
                "case {i}: objective {attained} vs reference {} (gap {:e})",
                refsol.upper,
                refsol.gap()
            )
        });
        rep.check(ipm.status == SolverStatus::Optimal, || {
            format!("case {i}: status {:?}", ipm.status)
        });
        if ipm.status == SolverStatus::Optimal {
            rep.worst("kkt_residual", ipm.kkt_residual);
            rep.check(ipm.kkt_residual <= settings.tol, || {
                format!("case {i}: KKT residual {:e}", ipm.kkt_residual)
            });
        }
    }
    rep
}

/// Duality identities at the MMSE point, per realization and averaged, and
/// agreement of the two AWMSE evaluation paths.
pub fn awmse_suite(instances: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("awmse-duality");
    let mut rng = RngStream::new(seed, 2).rng();
    for i in 0..instances {
        rep.cases += 1;
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..=n);
        let power = 10f64.powf(rng.random_range(0.0..3.5));
        let noise = rng.random_range(0.5..2.0);
        let sigma_e2 = rng.random_range(0.0..0.5);
        let estimate = random_channel(&mut rng, n, k);
        let ss = draw_sample_set(&RngStream::new(seed, 100 + i as u64), &estimate, sigma_e2, 50);
        let pre = random_precoder(&mut rng, n, k, power);

        // Per realization.
        let mut worst_point = 0.0f64;
        for h in &ss.realizations {
            for user in 0..k {
                let hk = h.user(user);
                let up = mmse::mmse_point(&hk, &pre, user, noise);
                let (xc, xp) = mmse::augmented_wmse(&hk, &pre, user, noise, &up);
                let r = mmse::rates(&mmse::link_stats(&hk, &pre, user, noise));
                worst_point = worst_point
                    .max((xc - (1.0 - r.common)).abs())
                    .max((xp - (1.0 - r.private)).abs());
            }
        }
        rep.worst("pointwise_duality", worst_point);
        rep.check(worst_point <= 1e-10, || {
            format!("case {i}: pointwise duality error {worst_point:e}")
        });

        // Averaged, and through the components.
        let gw = awmse::update_equalizers_weights(&ss, &pre, noise);
        let rates = awmse::sample_average_rates(&ss, &pre, noise);
        let (dc, dp) = awmse::awmse_direct(&ss, &pre, noise, &gw);
        let comp = awmse::build_components(&ss, &gw);
        let (qc, qp) = awmse::awmse_eval(&comp, &pre, noise);
        let mut worst_avg = 0.0f64;
        let mut worst_path = 0.0f64;
        for user in 0..k {
            worst_avg = worst_avg
                .max((dc[user] - (1.0 - rates.common[user])).abs())
                .max((dp[user] - (1.0 - rates.private[user])).abs());
            worst_path = worst_path
                .max((qc[user] - dc[user]).abs())
                .max((qp[user] - dp[user]).abs());
        }
        rep.worst("average_duality", worst_avg);
        rep.worst("two_path", worst_path);
        rep.check(worst_avg <= 1e-10, || {
            format!("case {i}: averaged duality error {worst_avg:e}")
        });
        rep.check(worst_path <= 1e-10, || {
            format!("case {i}: two-path difference {worst_path:e}")
        });
    }
    rep
}

/// Every suite with its default size.
pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    vec![
        waterfill_suite(1000, seed),
        solver_suite(50, seed),
        awmse_suite(100, seed),
    ]
}
