//! Alternating optimization of the precoder, the common-rate partition and
//! the receive equalizers/weights, plus the zero-forcing initializations.
//!
//! Each iteration:
//!
//! 1. MMSE equalizers and weights for the current precoder; at this point
//!    every average augmented WMSE equals one minus the matching average
//!    rate.
//! 2. Water-filling of the common average rate over the private ones.
//! 3. Averaged quadratic-form components, then the convex precoder update.
//!
//! None of the three steps can lower the minimum average rate, so the
//! recorded objective is non-decreasing.

use nalgebra::{SymmetricEigen, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::awmse::{self, AverageRates};
use crate::cone_solver::{self, SolverSettings, SolverStatus};
use crate::error::{Error, Result};
use crate::mmse::Precoder;
use crate::model::{CMatrix, CVector, Channel, SampleSet, Scenario};
use crate::partition;

pub const DEFAULT_EPS_R: f64 = 1e-4;
pub const DEFAULT_N_MAX: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Common message plus private messages.
    Jmb,
    /// Private messages only.
    #[serde(rename = "bc", alias = "conventional_bc")]
    ConventionalBc,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Jmb => "jmb",
            Mode::ConventionalBc => "bc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Zero-forcing privates, common precoder on the first antenna.
    ZfE,
    /// Zero-forcing privates, common precoder on the dominant left singular
    /// vector of the estimate.
    ZfSvd,
    Custom(Precoder),
}

impl Init {
    pub fn label(&self) -> &'static str {
        match self {
            Init::ZfE => "zf-e",
            Init::ZfSvd => "zf-svd",
            Init::Custom(_) => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoConfig {
    pub eps_r: f64,
    pub n_max: usize,
    pub init: Init,
    pub mode: Mode,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl AoConfig {
    pub fn new(mode: Mode, init: Init) -> Self {
        AoConfig {
            eps_r: DEFAULT_EPS_R,
            n_max: DEFAULT_N_MAX,
            init,
            mode,
            solver: SolverSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_r.is_finite() && self.eps_r > 0.0) {
            return Err(Error::InvalidInput("eps_r must be positive".into()));
        }
        if self.n_max == 0 {
            return Err(Error::InvalidInput("n_max must be at least one".into()));
        }
        Ok(())
    }
}

/// Objective values observed inside one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Minimum average rate after the equalizer/weight update, using the
    /// previous partition.
    pub after_mmse: f64,
    /// After re-partitioning the common rate.
    pub after_partition: f64,
    /// `1 - xi` after the precoder update.
    pub objective: f64,
    /// `1 - xi` as reported by the solver's epigraph variable.
    pub solver_objective: f64,
    pub solver_iterations: usize,
    pub solver_status: SolverStatus,
    /// The solver point was worse than the incumbent and was rejected.
    pub kept_previous: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoResult {
    pub precoder: Precoder,
    /// Partition of the common rate at the final precoder. Uniform and
    /// unused in broadcast mode.
    pub coeffs: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub final_rates: AverageRates,
    /// Minimum average rate of the returned design on the sample set.
    pub objective: f64,
    pub mode: Mode,
    /// Zero-forcing directions needed regularization.
    pub init_regularized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    pub precoder: Precoder,
    pub regularized: bool,
}

/// Unit-norm zero-forcing directions `H (H^H H)^-1`, column-normalized.
pub fn zf_directions(estimate: &Channel) -> (Vec<CVector>, bool) {
    let h = estimate.matrix();
    let gram = h.adjoint() * h;
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let max = eig.iter().copied().fold(0.0, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let regularized = !(max > 0.0 && min > 1e-12 * max);
    let mut system = gram;
    if regularized {
        let delta = 1e-8 * h.norm().max(f64::MIN_POSITIVE);
        for i in 0..system.nrows() {
            system[(i, i)] += Complex64::from(delta);
        }
    }
    let inverse = system
        .try_inverse()
        .unwrap_or_else(|| CMatrix::identity(h.ncols(), h.ncols()));
    let w = h * inverse;
    let dirs = w
        .column_iter()
        .enumerate()
        .map(|(k, c)| {
            let norm = c.norm();
            if norm > 0.0 {
                c.into_owned() / Complex64::from(norm)
            } else {
                // Only reachable for an all-zero estimate.
                let mut e = CVector::zeros(h.nrows());
                e[k % h.nrows()] = Complex64::from(1.0);
                e
            }
        })
        .collect();
    (dirs, regularized)
}

fn power_split(power: f64, alpha: f64) -> (f64, f64) {
    let private_total = power.powf(alpha).min(power);
    (private_total, power - private_total)
}

fn zf_with_common(estimate: &Channel, power: f64, alpha: f64, common_dir: CVector) -> Initialization {
    let k = estimate.n_users();
    let (dirs, regularized) = zf_directions(estimate);
    let (private_total, common_power) = power_split(power, alpha);
    let scale = Complex64::from((private_total / k as f64).sqrt());
    let private = dirs.into_iter().map(|d| d * scale).collect();
    let common = common_dir * Complex64::from(common_power.sqrt());
    Initialization {
        precoder: Precoder::new(common, private).expect("consistent dimensions"),
        regularized,
    }
}

/// Private power `P_t^alpha` split evenly over ZF directions; the rest on
/// the first antenna as the common precoder.
pub fn init_zf_e(estimate: &Channel, power: f64, alpha: f64) -> Initialization {
    let mut e1 = CVector::zeros(estimate.n_tx());
    e1[0] = Complex64::from(1.0);
    zf_with_common(estimate, power, alpha, e1)
}

/// As [`init_zf_e`], with the common precoder on the dominant left singular
/// vector of the estimate.
pub fn init_zf_svd(estimate: &Channel, power: f64, alpha: f64) -> Initialization {
    zf_with_common(estimate, power, alpha, dominant_left_singular_vector(estimate.matrix()))
}

/// Dominant left singular vector, phase-normalized so that its first
/// non-negligible entry is real and positive.
pub fn dominant_left_singular_vector(h: &CMatrix) -> CVector {
    let svd = SVD::new(h.clone(), true, false);
    let u = svd.u.expect("left singular vectors requested");
    let best =
        svd.singular_values.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc },
        );
    normalize_phase(u.column(best.0).into_owned())
}

pub(crate) fn normalize_phase(v: CVector) -> CVector {
    let norm = v.norm();
    match v.iter().find(|z| z.norm() > 1e-12 * norm) {
        Some(z) => {
            let phase = z.conj() / z.norm();
            v * phase
        }
        None => v,
    }
}

/// Starting precoder for `cfg`; broadcast mode always starts from full-power
/// zero-forcing.
pub fn initial_precoder(sc: &Scenario, ss: &SampleSet, cfg: &AoConfig) -> Initialization {
    let alpha = sc.equivalent_alpha();
    match (&cfg.init, cfg.mode) {
        (Init::Custom(p), Mode::Jmb) => Initialization {
            precoder: p.clone(),
            regularized: false,
        },
        (Init::Custom(p), Mode::ConventionalBc) => Initialization {
            precoder: p.clone().with_zero_common(),
            regularized: false,
        },
        // Without a common stream all power goes to the ZF privates.
        (_, Mode::ConventionalBc) => init_zf_e(&ss.estimate, sc.power, 1.0),
        (Init::ZfE, Mode::Jmb) => init_zf_e(&ss.estimate, sc.power, alpha),
        (Init::ZfSvd, Mode::Jmb) => init_zf_svd(&ss.estimate, sc.power, alpha),
    }
}

fn check_consistency(sc: &Scenario, ss: &SampleSet, pre: &Precoder) -> Result<()> {
    sc.validate()?;
    if ss.is_empty() {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    let dims = [
        ("sample set antennas", sc.n_tx, ss.n_tx()),
        ("sample set users", sc.n_users, ss.n_users()),
        ("precoder antennas", sc.n_tx, pre.n_tx()),
        ("precoder users", sc.n_users, pre.n_users()),
    ];
    for (what, expected, got) in dims {
        if expected != got {
            return Err(Error::DimensionMismatch { what, expected, got });
        }
    }
    if let Some(r) = ss
        .realizations
        .iter()
        .find(|r| r.n_tx() != sc.n_tx || r.n_users() != sc.n_users)
    {
        return Err(Error::DimensionMismatch {
            what: "realization shape",
            expected: sc.n_tx,
            got: r.n_tx(),
        });
    }
    Ok(())
}

/// Partition of the current average rates and the resulting minimum.
fn partition_rates(rates: &AverageRates, mode: Mode) -> Result<(Vec<f64>, f64)> {
    let k = rates.private.len();
    match mode {
        Mode::Jmb => {
            let p = partition::waterfill(rates.common_min.max(0.0), &rates.private)?;
            Ok((p.coeffs, p.level))
        }
        Mode::ConventionalBc => Ok((vec![1.0 / k as f64; k], rates.min_private())),
    }
}

fn objective_with(rates: &AverageRates, coeffs: &[f64], mode: Mode) -> f64 {
    match mode {
        Mode::Jmb => rates.min_total(coeffs),
        Mode::ConventionalBc => rates.min_private(),
    }
}

pub fn ao_solve(sc: &Scenario, ss: &SampleSet, cfg: &AoConfig) -> Result<AoResult> {
    cfg.validate()?;
    let init = initial_precoder(sc, ss, cfg);
    check_consistency(sc, ss, &init.precoder)?;
    let noise = sc.noise_var;

    let mut precoder = init.precoder;
    let mut coeffs: Option<Vec<f64>> = None;
    let mut previous = 0.0;
    let mut trace = Vec::new();
    let mut records = Vec::new();
    let mut converged = false;

    for n in 1..=cfg.n_max {
        // Step 1: MMSE equalizers and weights for the incumbent precoder.
        let gw = awmse::update_equalizers_weights(ss, &precoder, noise);
        let rates = awmse::sample_average_rates(ss, &precoder, noise);
        let (new_coeffs, after_partition) = partition_rates(&rates, cfg.mode)?;
        let after_mmse = match &coeffs {
            Some(c) => objective_with(&rates, c, cfg.mode),
            None => after_partition,
        };

        // Step 3: components and precoder update.
        let comp = awmse::build_components(ss, &gw);
        let qcqp = cone_solver::assemble(
            &comp,
            (cfg.mode == Mode::Jmb).then_some(new_coeffs.as_slice()),
            noise,
            sc.power,
        )?;
        let report = cone_solver::solve(&qcqp, &cfg.solver)?;
        if report.status == SolverStatus::NumericalTrouble {
            return Err(Error::Solver {
                iteration: n,
                status: report.status,
            });
        }
        if report.status == SolverStatus::MaxIterations {
            log::warn!("precoder update hit the iteration cap at AO iteration {n}");
        }
        let incumbent = qcqp.attained_objective(&qcqp.layout.embed(&precoder));
        let candidate = qcqp.attained_objective(&report.x);
        // NaN from the solver counts as worse.
        let kept_previous = candidate.partial_cmp(&incumbent).is_none_or(|o| o.is_gt());
        let xi = if kept_previous {
            incumbent
        } else {
            precoder = report.precoder;
            if cfg.mode == Mode::ConventionalBc {
                precoder = precoder.with_zero_common();
            }
            candidate
        };
        let objective = 1.0 - xi;
        coeffs = Some(new_coeffs);
        records.push(IterationRecord {
            after_mmse,
            after_partition,
            objective,
            solver_objective: 1.0 - report.xi,
            solver_iterations: report.iterations,
            solver_status: report.status,
            kept_previous,
        });
        trace.push(objective);
        if (objective - previous).abs() < cfg.eps_r {
            converged = true;
            break;
        }
        previous = objective;
    }

    let final_rates = awmse::sample_average_rates(ss, &precoder, noise);
    let (coeffs, objective) = partition_rates(&final_rates, cfg.mode)?;
    Ok(AoResult {
        precoder,
        coeffs,
        objective_trace: trace,
        records,
        converged,
        final_rates,
        objective,
        mode: cfg.mode,
        init_regularized: init.regularized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{draw_sample_set, draw_true_channel, ErrorModel, RngStream};

    fn c(re: f64) -> Complex64 {
        Complex64::from(re)
    }

    fn identity_channel() -> Channel {
        Channel::new(CMatrix::identity(2, 2)).unwrap()
    }

    #[test]
    fn zf_e_on_identity_channel() {
        let init = init_zf_e(&identity_channel(), 100.0, 0.6);
        let p = &init.precoder;
        let per_user = 100f64.powf(0.6) / 2.0;
        for k in 0..2 {
            let mut expected = CVector::zeros(2);
            expected[k] = c(per_user.sqrt());
            assert!((p.private_for(k) - expected).norm() < 1e-12);
        }
        assert!((p.common().norm_squared() - (100.0 - 100f64.powf(0.6))).abs() < 1e-10);
        assert!((p.common()[0].re - p.common().norm()).abs() < 1e-12);
        assert!((p.power() - 100.0).abs() < 1e-10);
        assert!(!init.regularized);
    }

    #[test]
    fn full_exponent_is_pure_zf() {
        let init = init_zf_e(&identity_channel(), 10.0, 1.0);
        assert_eq!(init.precoder.common().norm(), 0.0);
        assert!((init.precoder.power() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zf_nulls_cross_interference() {
        let sc = Scenario::new(3, 3, 10.0, 1.0, ErrorModel::Fixed { sigma_e2: 0.1 }, 1).unwrap();
        for seed in 0..10 {
            let h = draw_true_channel(&RngStream::new(seed, 0), &sc);
            let init = init_zf_svd(&h, 10.0, 0.5);
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        let hi = h.user(i);
                        let pj = init.precoder.private_for(j);
                        assert!(hi.dotc(pj).norm() <= 1e-10 * hi.norm() * pj.norm());
                    }
                }
            }
            assert!((init.precoder.power() - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_deficient_estimate_falls_back() {
        let col = CVector::from_vec(vec![c(1.0), c(2.0)]);
        let h = Channel::from_columns(&[col.clone(), col]).unwrap();
        let init = init_zf_e(&h, 10.0, 0.5);
        assert!(init.regularized);
        assert!(init
            .precoder
            .private()
            .iter()
            .all(|p| (p.norm_squared() - 10f64.powf(0.5) / 2.0).abs() < 1e-9));
    }

    #[test]
    fn svd_direction_of_diagonal_channel() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = c(2.0);
        m[(1, 1)] = c(1.0);
        let v = dominant_left_singular_vector(&m);
        assert!((v[0] - c(1.0)).norm() < 1e-12 && v[1].norm() < 1e-12);
    }

    #[test]
    fn svd_direction_matches_power_iteration() {
        let sc = Scenario::new(4, 2, 10.0, 1.0, ErrorModel::Fixed { sigma_e2: 0.1 }, 1).unwrap();
        for seed in 0..10 {
            let h = draw_true_channel(&RngStream::new(100 + seed, 0), &sc);
            let gram = h.matrix() * h.matrix().adjoint();
            let mut v = CVector::from_element(4, c(1.0));
            for _ in 0..100 {
                v = &gram * v;
                v /= c(v.norm());
            }
            let v = normalize_phase(v);
            let u = dominant_left_singular_vector(h.matrix());
            assert!((u - v).norm() < 1e-8, "seed {seed}");
        }
    }

    fn orthonormal_case(power: f64) -> (Scenario, SampleSet) {
        let sc = Scenario::new(2, 2, power, 1.0, ErrorModel::Fixed { sigma_e2: 0.0 }, 1).unwrap();
        (sc, SampleSet::perfect(identity_channel()))
    }

    #[test]
    fn perfect_csit_orthonormal_channel_reaches_half_power_rate() {
        let (sc, ss) = orthonormal_case(10.0);
        let res = ao_solve(&sc, &ss, &AoConfig::new(Mode::Jmb, Init::ZfSvd)).unwrap();
        assert!(res.converged);
        assert!(res.objective >= 6f64.log2() - 0.01, "{}", res.objective);
    }

    #[test]
    fn trace_is_monotone_and_chain_holds() {
        let sc = Scenario::from_snr_db(2, 2, 20.0, ErrorModel::Decaying { alpha: 0.6 }, 100).unwrap();
        let h = draw_true_channel(&RngStream::new(9, 0), &sc);
        let ss = draw_sample_set(&RngStream::new(9, 1), &h, sc.effective_error_variance(), sc.sample_size);
        for init in [Init::ZfE, Init::ZfSvd] {
            let res = ao_solve(&sc, &ss, &AoConfig::new(Mode::Jmb, init)).unwrap();
            assert!(res.objective_trace.len() <= DEFAULT_N_MAX);
            for w in res.objective_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{w:?}");
            }
            for (i, r) in res.records.iter().enumerate() {
                if i > 0 {
                    assert!(r.after_mmse >= res.records[i - 1].objective - 1e-8);
                }
                assert!(r.after_partition >= r.after_mmse - 1e-12);
                assert!(r.objective >= r.after_partition - 1e-8);
            }
            assert!(res.precoder.power() <= sc.power * (1.0 + 1e-8));
        }
    }

    #[test]
    fn broadcast_never_beats_jmb_on_sampled_problem() {
        let (sc, ss) = orthonormal_case(10.0);
        let jmb = ao_solve(&sc, &ss, &AoConfig::new(Mode::Jmb, Init::ZfSvd)).unwrap();
        let bc = ao_solve(&sc, &ss, &AoConfig::new(Mode::ConventionalBc, Init::ZfSvd)).unwrap();
        assert!(bc.objective <= jmb.objective + 1e-6);
        assert_eq!(bc.precoder.common().norm(), 0.0);
    }

    #[test]
    fn rejects_mismatched_sample_set() {
        let (sc, _) = orthonormal_case(10.0);
        let ss = SampleSet::perfect(Channel::new(CMatrix::identity(3, 2)).unwrap());
        assert!(ao_solve(&sc, &ss, &AoConfig::new(Mode::Jmb, Init::ZfE)).is_err());
        let mut cfg = AoConfig::new(Mode::Jmb, Init::ZfE);
        cfg.eps_r = 0.0;
        assert!(ao_solve(&sc, &orthonormal_case(1.0).1, &cfg).is_err());
    }
}
