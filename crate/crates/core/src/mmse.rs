//! Per-realization scalar quantities for one user: received powers, MMSE
//! equalizers and weights, MSEs, augmented WMSEs, SINRs and rates.
//!
//! Receivers are single-antenna. User `k` first decodes the common stream
//! treating every private stream as noise, cancels it, then decodes its own
//! private stream. With `T_k = sum_i |p_i^H h_k|^2 + sigma^2` and
//! `T_ck = |p_c^H h_k|^2 + T_k`, the MMSEs are `T_k / T_ck` (common) and
//! `(T_k - |p_k^H h_k|^2) / T_k` (private), and each rate is `-log2(MMSE)`.

use std::f64::consts::LOG2_E;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CVector;

/// Guard for `log2` of an MSE. Unreachable with positive noise variance.
const MSE_FLOOR: f64 = 1e-300;

/// The `(K+1)`-column precoding matrix `[p_c, p_1, ..., p_K]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PrecoderRepr", into = "PrecoderRepr")]
pub struct Precoder {
    common: CVector,
    private: Vec<CVector>,
}

#[derive(Serialize, Deserialize)]
struct PrecoderRepr {
    common: Vec<Complex64>,
    private: Vec<Vec<Complex64>>,
}

impl From<Precoder> for PrecoderRepr {
    fn from(p: Precoder) -> Self {
        PrecoderRepr {
            common: p.common.iter().copied().collect(),
            private: p.private.iter().map(|v| v.iter().copied().collect()).collect(),
        }
    }
}

impl TryFrom<PrecoderRepr> for Precoder {
    type Error = Error;

    fn try_from(r: PrecoderRepr) -> Result<Self> {
        Precoder::new(
            CVector::from_vec(r.common),
            r.private.into_iter().map(CVector::from_vec).collect(),
        )
    }
}

impl Precoder {
    pub fn new(common: CVector, private: Vec<CVector>) -> Result<Self> {
        if private.is_empty() {
            return Err(Error::InvalidInput("precoder needs at least one private stream".into()));
        }
        let n = common.len();
        if let Some(p) = private.iter().find(|p| p.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "private precoder length",
                expected: n,
                got: p.len(),
            });
        }
        Ok(Precoder { common, private })
    }

    pub fn zeros(n_tx: usize, n_users: usize) -> Self {
        Precoder {
            common: CVector::zeros(n_tx),
            private: vec![CVector::zeros(n_tx); n_users],
        }
    }

    pub fn common(&self) -> &CVector {
        &self.common
    }

    pub fn private(&self) -> &[CVector] {
        &self.private
    }

    pub fn private_for(&self, k: usize) -> &CVector {
        &self.private[k]
    }

    pub fn n_tx(&self) -> usize {
        self.common.len()
    }

    pub fn n_users(&self) -> usize {
        self.private.len()
    }

    /// `tr(P P^H)`.
    pub fn power(&self) -> f64 {
        self.common.norm_squared() + self.private.iter().map(|p| p.norm_squared()).sum::<f64>()
    }

    pub fn with_zero_common(mut self) -> Self {
        self.common.fill(Complex64::new(0.0, 0.0));
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.common *= Complex64::from(factor);
        for p in &mut self.private {
            *p *= Complex64::from(factor);
        }
        self
    }
}

/// Received powers seen by one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkStats {
    /// `T_ck = |p_c^H h|^2 + T_k`.
    pub t_common: f64,
    /// `T_k = sum_i |p_i^H h|^2 + sigma^2`.
    pub t_private: f64,
    /// Interference plus noise on the common stream, equal to `T_k`.
    pub e_common: f64,
    /// `T_k - |p_k^H h|^2`.
    pub e_private: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserPoint {
    pub eq_common: Complex64,
    pub eq_private: Complex64,
    pub w_common: f64,
    pub w_private: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePair {
    pub common: f64,
    pub private: f64,
    pub sinr_common: f64,
    pub sinr_private: f64,
}

/// `p^H h`.
#[inline]
pub(crate) fn project(p: &CVector, h: &CVector) -> Complex64 {
    p.dotc(h)
}

pub fn link_stats(h: &CVector, pre: &Precoder, k: usize, noise_var: f64) -> LinkStats {
    debug_assert!(noise_var > 0.0);
    // Interference is summed directly rather than as `T_k - |p_k^H h|^2`,
    // which cancels badly at high SNR.
    let mut interference = noise_var;
    let mut own = 0.0;
    for (i, p) in pre.private.iter().enumerate() {
        let g = project(p, h).norm_sqr();
        if i == k {
            own = g;
        } else {
            interference += g;
        }
    }
    let t_private = interference + own;
    let t_common = project(&pre.common, h).norm_sqr() + t_private;
    LinkStats {
        t_common,
        t_private,
        e_common: t_private,
        e_private: interference,
    }
}

/// MMSE equalizers `(g_c, g_k) = (p_c^H h / T_ck, p_k^H h / T_k)`.
pub fn mmse_equalizers(h: &CVector, pre: &Precoder, k: usize, noise_var: f64) -> (Complex64, Complex64) {
    let ls = link_stats(h, pre, k, noise_var);
    (
        project(&pre.common, h) / ls.t_common,
        project(&pre.private[k], h) / ls.t_private,
    )
}

/// MSEs of the common and private estimates for arbitrary equalizers.
pub fn mse(h: &CVector, pre: &Precoder, k: usize, noise_var: f64, g_c: Complex64, g_p: Complex64) -> (f64, f64) {
    let ls = link_stats(h, pre, k, noise_var);
    // h^H p = conj(p^H h)
    let hp_c = project(&pre.common, h).conj();
    let hp_k = project(&pre.private[k], h).conj();
    let eps_c = g_c.norm_sqr() * ls.t_common - 2.0 * (g_c * hp_c).re + 1.0;
    let eps_p = g_p.norm_sqr() * ls.t_private - 2.0 * (g_p * hp_k).re + 1.0;
    (eps_c, eps_p)
}

pub fn mmse_values(ls: &LinkStats) -> (f64, f64) {
    (ls.e_common / ls.t_common, ls.e_private / ls.t_private)
}

#[inline]
pub(crate) fn rate_from_mse(eps: f64) -> f64 {
    debug_assert!(eps >= MSE_FLOOR, "MSE collapsed to {eps}");
    -eps.max(MSE_FLOOR).log2()
}

pub fn rates(ls: &LinkStats) -> RatePair {
    let (eps_c, eps_p) = mmse_values(ls);
    RatePair {
        common: rate_from_mse(eps_c),
        private: rate_from_mse(eps_p),
        sinr_common: (1.0 - eps_c) / eps_c,
        sinr_private: (1.0 - eps_p) / eps_p,
    }
}

pub fn mmse_weights(eps_c_min: f64, eps_p_min: f64) -> (f64, f64) {
    debug_assert!(eps_c_min > 0.0 && eps_p_min > 0.0);
    (1.0 / eps_c_min, 1.0 / eps_p_min)
}

/// Equalizers and weights at the MMSE solution for user `k`.
pub fn mmse_point(h: &CVector, pre: &Precoder, k: usize, noise_var: f64) -> UserPoint {
    let ls = link_stats(h, pre, k, noise_var);
    let (eps_c, eps_p) = mmse_values(&ls);
    let (w_common, w_private) = mmse_weights(eps_c, eps_p);
    UserPoint {
        eq_common: project(&pre.common, h) / ls.t_common,
        eq_private: project(&pre.private[k], h) / ls.t_private,
        w_common,
        w_private,
    }
}

/// Augmented WMSE of one stream, `log2(e) (u eps - ln u) + 1 - log2(e)`.
///
/// This is `u eps - log2(u)` with the weight rescaled by `log2(e)`, so that
/// `u = 1/eps` is the minimizing weight and the minimum over equalizer and
/// weight is exactly `1 - R`.
#[inline]
pub fn augmented(u: f64, eps: f64) -> f64 {
    LOG2_E * (u * eps) - u.log2() + 1.0 - LOG2_E
}

/// Augmented WMSEs of both streams at the given equalizers and weights.
pub fn augmented_wmse(h: &CVector, pre: &Precoder, k: usize, noise_var: f64, up: &UserPoint) -> (f64, f64) {
    let (eps_c, eps_p) = mse(h, pre, k, noise_var, up.eq_common, up.eq_private);
    (augmented(up.w_common, eps_c), augmented(up.w_private, eps_p))
}
