//! Sample-averaged quantities over a [`SampleSet`]: average rates, the MMSE
//! equalizer/weight update, and the quadratic-form components that express
//! every average augmented WMSE directly in terms of the precoder.

use std::f64::consts::LOG2_E;

use num_complex::Complex64;

use crate::mmse::{self, Precoder, UserPoint};
use crate::model::{CMatrix, CVector, SampleSet};
use crate::sum::{mean, CompensatedSum, ComplexCompensatedSum};

/// Equalizers and weights for every user `k` and realization `m`,
/// stored as `points[k][m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerWeightSet {
    points: Vec<Vec<UserPoint>>,
}

impl EqualizerWeightSet {
    pub fn new(points: Vec<Vec<UserPoint>>) -> Self {
        debug_assert!(points.iter().flatten().all(|p| p.w_common > 0.0 && p.w_private > 0.0));
        EqualizerWeightSet { points }
    }

    pub fn n_users(&self) -> usize {
        self.points.len()
    }

    pub fn n_realizations(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn get(&self, k: usize, m: usize) -> &UserPoint {
        &self.points[k][m]
    }

    pub fn user(&self, k: usize) -> &[UserPoint] {
        &self.points[k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageRates {
    pub common: Vec<f64>,
    pub private: Vec<f64>,
    /// `min_k common[k]`: the common rate every user can decode.
    pub common_min: f64,
}

impl AverageRates {
    /// `min_k (private[k] + c_k * common_min)`.
    pub fn min_total(&self, coeffs: &[f64]) -> f64 {
        self.private
            .iter()
            .zip(coeffs)
            .map(|(r, c)| r + c * self.common_min)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_private(&self) -> f64 {
        self.private.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Sample averages for one user. With `w = log2(e) u` the per-realization
/// definitions are `t = w|g|^2`, `Psi = t h h^H`, `f = w h g^*`,
/// `u = w + 1 - log2(e)` (the constant term) and `v = log2(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserComponents {
    pub psi_common: CMatrix,
    pub psi_private: CMatrix,
    pub f_common: CVector,
    pub f_private: CVector,
    pub t_common: f64,
    pub t_private: f64,
    pub u_common: f64,
    pub u_private: f64,
    pub v_common: f64,
    pub v_private: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AwmseComponents {
    pub users: Vec<UserComponents>,
}

impl AwmseComponents {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_tx(&self) -> usize {
        self.users.first().map_or(0, |u| u.f_private.len())
    }
}

pub fn sample_average_rates(ss: &SampleSet, pre: &Precoder, noise_var: f64) -> AverageRates {
    let k_count = ss.n_users();
    let mut common = Vec::with_capacity(k_count);
    let mut private = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let per: Vec<_> = ss
            .realizations
            .iter()
            .map(|h| mmse::rates(&mmse::link_stats(&h.user(k), pre, k, noise_var)))
            .collect();
        common.push(mean(per.iter().map(|r| r.common)));
        private.push(mean(per.iter().map(|r| r.private)));
    }
    let common_min = common.iter().copied().fold(f64::INFINITY, f64::min);
    AverageRates {
        common,
        private,
        common_min,
    }
}

/// MMSE equalizers and weights at every realization for a fixed precoder.
pub fn update_equalizers_weights(ss: &SampleSet, pre: &Precoder, noise_var: f64) -> EqualizerWeightSet {
    let points = (0..ss.n_users())
        .map(|k| {
            ss.realizations
                .iter()
                .map(|h| mmse::mmse_point(&h.user(k), pre, k, noise_var))
                .collect()
        })
        .collect();
    EqualizerWeightSet::new(points)
}

struct HermitianAccumulator {
    n: usize,
    // Upper triangle, column-major.
    upper: Vec<ComplexCompensatedSum>,
}

impl HermitianAccumulator {
    fn new(n: usize) -> Self {
        HermitianAccumulator {
            n,
            upper: vec![ComplexCompensatedSum::default(); n * (n + 1) / 2],
        }
    }

    /// Adds `scale * h h^H`.
    fn add_outer(&mut self, h: &CVector, scale: f64) {
        let mut idx = 0;
        for j in 0..self.n {
            for i in 0..=j {
                self.upper[idx].add(h[i] * h[j].conj() * scale);
                idx += 1;
            }
        }
    }

    fn mean(&self, count: usize) -> CMatrix {
        let inv = 1.0 / count as f64;
        let mut out = CMatrix::zeros(self.n, self.n);
        let mut idx = 0;
        for j in 0..self.n {
            for i in 0..=j {
                let v = self.upper[idx].value() * inv;
                if i == j {
                    out[(i, i)] = Complex64::new(v.re, 0.0);
                } else {
                    out[(i, j)] = v;
                    out[(j, i)] = v.conj();
                }
                idx += 1;
            }
        }
        out
    }
}

struct VectorAccumulator(Vec<ComplexCompensatedSum>);

impl VectorAccumulator {
    fn new(n: usize) -> Self {
        VectorAccumulator(vec![ComplexCompensatedSum::default(); n])
    }

    fn add_scaled(&mut self, h: &CVector, scale: Complex64) {
        for (acc, x) in self.0.iter_mut().zip(h.iter()) {
            acc.add(x * scale);
        }
    }

    fn mean(&self, count: usize) -> CVector {
        let inv = 1.0 / count as f64;
        CVector::from_iterator(self.0.len(), self.0.iter().map(|a| a.value() * inv))
    }
}

/// Averages the per-realization components over the sample set.
///
/// # Panics
///
/// If `gw` does not match the sample set's user and realization counts.
pub fn build_components(ss: &SampleSet, gw: &EqualizerWeightSet) -> AwmseComponents {
    assert_eq!(gw.n_users(), ss.n_users(), "user count mismatch");
    assert_eq!(gw.n_realizations(), ss.len(), "realization count mismatch");
    let n = ss.n_tx();
    let count = ss.len();
    let users = (0..ss.n_users())
        .map(|k| {
            let mut psi_c = HermitianAccumulator::new(n);
            let mut psi_p = HermitianAccumulator::new(n);
            let mut f_c = VectorAccumulator::new(n);
            let mut f_p = VectorAccumulator::new(n);
            let [mut t_c, mut t_p, mut u_c, mut u_p, mut v_c, mut v_p] = [CompensatedSum::default(); 6];
            for (h, up) in ss.realizations.iter().zip(gw.user(k)) {
                let h = h.user(k);
                let (wc, wp) = (LOG2_E * up.w_common, LOG2_E * up.w_private);
                let tc = wc * up.eq_common.norm_sqr();
                let tp = wp * up.eq_private.norm_sqr();
                psi_c.add_outer(&h, tc);
                psi_p.add_outer(&h, tp);
                f_c.add_scaled(&h, up.eq_common.conj() * wc);
                f_p.add_scaled(&h, up.eq_private.conj() * wp);
                t_c.add(tc);
                t_p.add(tp);
                u_c.add(wc + 1.0 - LOG2_E);
                u_p.add(wp + 1.0 - LOG2_E);
                v_c.add(up.w_common.log2());
                v_p.add(up.w_private.log2());
            }
            let avg = |s: CompensatedSum| s.value() / count as f64;
            UserComponents {
                psi_common: psi_c.mean(count),
                psi_private: psi_p.mean(count),
                f_common: f_c.mean(count),
                f_private: f_p.mean(count),
                t_common: avg(t_c),
                t_private: avg(t_p),
                u_common: avg(u_c),
                u_private: avg(u_p),
                v_common: avg(v_c),
                v_private: avg(v_p),
            }
        })
        .collect();
    AwmseComponents { users }
}

/// `p^H Q p` for Hermitian `Q`.
pub(crate) fn hermitian_form(q: &CMatrix, p: &CVector) -> f64 {
    p.dotc(&(q * p)).re
}

/// Average augmented WMSEs `(common, private)` of every user as quadratic
/// forms in the precoder.
pub fn awmse_eval(comp: &AwmseComponents, pre: &Precoder, noise_var: f64) -> (Vec<f64>, Vec<f64>) {
    comp.users
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let private_quad_c: f64 = pre.private().iter().map(|p| hermitian_form(&c.psi_common, p)).sum();
            let private_quad_p: f64 = pre.private().iter().map(|p| hermitian_form(&c.psi_private, p)).sum();
            let xi_c = hermitian_form(&c.psi_common, pre.common()) + private_quad_c + noise_var * c.t_common
                - 2.0 * c.f_common.dotc(pre.common()).re
                + c.u_common
                - c.v_common;
            let xi_p = private_quad_p + noise_var * c.t_private - 2.0 * c.f_private.dotc(pre.private_for(k)).re
                + c.u_private
                - c.v_private;
            (xi_c, xi_p)
        })
        .unzip()
}

/// Average augmented WMSEs computed realization by realization, without
/// going through the components.
pub fn awmse_direct(ss: &SampleSet, pre: &Precoder, noise_var: f64, gw: &EqualizerWeightSet) -> (Vec<f64>, Vec<f64>) {
    (0..ss.n_users())
        .map(|k| {
            let per: Vec<(f64, f64)> = ss
                .realizations
                .iter()
                .zip(gw.user(k))
                .map(|(h, up)| mmse::augmented_wmse(&h.user(k), pre, k, noise_var, up))
                .collect();
            (mean(per.iter().map(|x| x.0)), mean(per.iter().map(|x| x.1)))
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{complex_gaussian, draw_sample_set, Channel, RngStream};
    use nalgebra::SymmetricEigen;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_setup(seed: u64, n: usize, k: usize, m: usize, sigma_e2: f64) -> (SampleSet, Precoder) {
        let mut rng = RngStream::new(seed, 0).rng();
        let est = Channel::new(CMatrix::from_fn(n, k, |_, _| complex_gaussian(&mut rng, 1.0))).unwrap();
        let ss = draw_sample_set(&RngStream::new(seed, 1), &est, sigma_e2, m);
        let v = |rng: &mut rand_chacha::ChaCha8Rng, var| CVector::from_fn(n, |_, _| complex_gaussian(rng, var));
        let pre = Precoder::new(v(&mut rng, 3.0), (0..k).map(|_| v(&mut rng, 2.0)).collect()).unwrap();
        (ss, pre)
    }

    fn unit_case() -> (SampleSet, EqualizerWeightSet) {
        let e1 = CVector::from_vec(vec![c(1.0), c(0.0)]);
        let ss = SampleSet::perfect(Channel::from_columns(&[e1]).unwrap());
        let up = UserPoint {
            eq_common: c(1.0),
            eq_private: c(1.0),
            w_common: 1.0,
            w_private: 1.0,
        };
        (ss, EqualizerWeightSet::new(vec![vec![up]]))
    }

    #[test]
    fn single_realization_components() {
        let (ss, gw) = unit_case();
        let comp = build_components(&ss, &gw);
        let u = &comp.users[0];
        let l = std::f64::consts::LOG2_E;
        let mut e11 = CMatrix::zeros(2, 2);
        e11[(0, 0)] = c(l);
        assert_eq!(u.psi_private, e11);
        assert_eq!(u.f_private, CVector::from_vec(vec![c(l), c(0.0)]));
        assert_eq!((u.t_private, u.u_private, u.v_private), (l, 1.0, 0.0));

        let pre = Precoder::new(CVector::zeros(2), vec![CVector::from_vec(vec![c(1.0), c(0.0)])]).unwrap();
        let (_, xi_p) = awmse_eval(&comp, &pre, 1.0);
        assert!((xi_p[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_precoder_leaves_constant_terms() {
        let (ss, pre) = random_setup(4, 3, 2, 50, 0.2);
        let gw = update_equalizers_weights(&ss, &pre, 1.3);
        let comp = build_components(&ss, &gw);
        let (xc, xp) = awmse_eval(&comp, &Precoder::zeros(3, 2), 1.3);
        for (k, u) in comp.users.iter().enumerate() {
            assert!((xp[k] - (1.3 * u.t_private + u.u_private - u.v_private)).abs() < 1e-12);
            assert!((xc[k] - (1.3 * u.t_common + u.u_common - u.v_common)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_realization_rates_match_mmse() {
        let (ss, pre) = random_setup(8, 2, 2, 1, 0.5);
        let avg = sample_average_rates(&ss, &pre, 1.0);
        for k in 0..2 {
            let r = mmse::rates(&mmse::link_stats(&ss.realizations[0].user(k), &pre, k, 1.0));
            assert_eq!(avg.private[k], r.private);
            assert_eq!(avg.common[k], r.common);
        }
        assert_eq!(avg.common_min, avg.common[0].min(avg.common[1]));
    }

    #[test]
    fn perfect_csit_slices_identical() {
        let (ss, pre) = random_setup(9, 2, 2, 1, 0.0);
        let det = sample_average_rates(&ss, &pre, 1.0);
        let ss = draw_sample_set(&RngStream::new(1, 1), &ss.estimate, 0.0, 20);
        let gw = update_equalizers_weights(&ss, &pre, 1.0);
        for k in 0..2 {
            assert!(gw.user(k).iter().all(|p| p == gw.get(k, 0)));
        }
        let avg = sample_average_rates(&ss, &pre, 1.0);
        for k in 0..2 {
            assert!((avg.private[k] - det.private[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn update_matches_single_point_ops() {
        let (ss, pre) = random_setup(10, 3, 2, 40, 0.3);
        let gw = update_equalizers_weights(&ss, &pre, 0.9);
        for (k, m) in [(0, 0), (1, 17), (0, 39)] {
            let h = ss.realizations[m].user(k);
            let (gc, gp) = mmse::mmse_equalizers(&h, &pre, k, 0.9);
            let (ec, ep) = mmse::mmse_values(&mmse::link_stats(&h, &pre, k, 0.9));
            let p = gw.get(k, m);
            assert_eq!((p.eq_common, p.eq_private), (gc, gp));
            assert_eq!((p.w_common, p.w_private), (1.0 / ec, 1.0 / ep));
        }
    }

    #[test]
    fn duality_and_two_path_agreement() {
        for seed in 0..5 {
            let (ss, pre) = random_setup(100 + seed, 3, 3, 300, 0.25);
            let gw = update_equalizers_weights(&ss, &pre, 1.0);
            let comp = build_components(&ss, &gw);
            let rates = sample_average_rates(&ss, &pre, 1.0);
            let (qc, qp) = awmse_eval(&comp, &pre, 1.0);
            let (dc, dp) = awmse_direct(&ss, &pre, 1.0, &gw);
            for k in 0..3 {
                assert!((qc[k] - dc[k]).abs() <= 1e-10, "{} {}", qc[k], dc[k]);
                assert!((qp[k] - dp[k]).abs() <= 1e-10);
                assert!((dp[k] - (1.0 - rates.private[k])).abs() <= 1e-10);
                assert!((dc[k] - (1.0 - rates.common[k])).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn components_are_hermitian_psd_and_low_rank() {
        let (ss, pre) = random_setup(12, 4, 2, 2, 0.3);
        let gw = update_equalizers_weights(&ss, &pre, 1.0);
        let comp = build_components(&ss, &gw);
        for u in &comp.users {
            for psi in [&u.psi_common, &u.psi_private] {
                assert!((psi - psi.adjoint()).norm() <= 1e-12);
                let eig = SymmetricEigen::new(psi.clone()).eigenvalues;
                let trace = psi.trace().re;
                assert!(eig.iter().all(|&l| l >= -1e-10 * trace));
                let rank = eig.iter().filter(|&&l| l > 1e-9 * trace).count();
                assert!(rank <= 2);
            }
        }
    }

    #[test]
    fn mmse_pair_minimizes_pointwise() {
        let (ss, pre) = random_setup(13, 2, 2, 30, 0.4);
        let gw = update_equalizers_weights(&ss, &pre, 1.0);
        let mut rng = RngStream::new(14, 0).rng();
        for k in 0..2 {
            for (m, h) in ss.realizations.iter().enumerate() {
                let h = h.user(k);
                let best = mmse::augmented_wmse(&h, &pre, k, 1.0, gw.get(k, m));
                let p = gw.get(k, m);
                let perturbed = UserPoint {
                    eq_common: p.eq_common + complex_gaussian(&mut rng, 0.01),
                    eq_private: p.eq_private + complex_gaussian(&mut rng, 0.01),
                    w_common: p.w_common * (1.0 + 0.2 * complex_gaussian(&mut rng, 1.0).re).abs(),
                    w_private: p.w_private * (1.0 + 0.2 * complex_gaussian(&mut rng, 1.0).re).abs(),
                };
                let worse = mmse::augmented_wmse(&h, &pre, k, 1.0, &perturbed);
                assert!(worse.0 >= best.0 - 1e-12 && worse.1 >= best.1 - 1e-12);
            }
        }
    }

    #[test]
    fn sample_average_is_statistically_consistent() {
        let (ss_small, pre) = random_setup(20, 2, 2, 1000, 0.2);
        let ss_big = draw_sample_set(&RngStream::new(21, 0), &ss_small.estimate, 0.2, 10_000);
        let small = sample_average_rates(&ss_small, &pre, 1.0);
        let big = sample_average_rates(&ss_big, &pre, 1.0);
        for k in 0..2 {
            let per: Vec<f64> = ss_small
                .realizations
                .iter()
                .map(|h| mmse::rates(&mmse::link_stats(&h.user(k), &pre, k, 1.0)).private)
                .collect();
            let mu = small.private[k];
            let var = per.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / 999.0;
            let se = (var / 1000.0).sqrt();
            assert!((big.private[k] - mu).abs() <= 3.0 * se, "k={k}");
        }
    }
}
