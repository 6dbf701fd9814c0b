//! Scenario configuration, channel containers and all random sampling.
//!
//! Every random draw goes through an [`RngStream`]: a `(seed, stream_id)`
//! pair that maps onto an independent ChaCha8 keystream. Two draws with the
//! same stream produce bit-identical output no matter what else was sampled
//! in between or on which thread, which is what lets the Monte-Carlo harness
//! run channels in parallel and still write identical files.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// How the CSIT error variance relates to the transmit power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorModel {
    /// `sigma_e^2 = P_t^(-alpha)`.
    Decaying { alpha: f64 },
    /// Constant error variance, independent of power.
    Fixed { sigma_e2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_tx: usize,
    pub n_users: usize,
    /// Transmit power budget `P_t` (linear).
    pub power: f64,
    /// Per-user noise variance (linear).
    pub noise_var: f64,
    pub error_model: ErrorModel,
    /// Number of Monte-Carlo realizations `M` used by the transmitter.
    pub sample_size: usize,
}

impl Scenario {
    pub fn new(
        n_tx: usize,
        n_users: usize,
        power: f64,
        noise_var: f64,
        error_model: ErrorModel,
        sample_size: usize,
    ) -> Result<Self> {
        let sc = Scenario {
            n_tx,
            n_users,
            power,
            noise_var,
            error_model,
            sample_size,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Unit noise variance with `P_t = 10^(snr_db / 10)`.
    pub fn from_snr_db(
        n_tx: usize,
        n_users: usize,
        snr_db: f64,
        error_model: ErrorModel,
        sample_size: usize,
    ) -> Result<Self> {
        Self::new(n_tx, n_users, 10f64.powf(snr_db / 10.0), 1.0, error_model, sample_size)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidScenario(msg.to_string()));
        if self.n_tx == 0 || self.n_users == 0 {
            return bad("antenna and user counts must be positive");
        }
        if self.n_users > self.n_tx {
            return bad("user count must not exceed antenna count");
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return bad("power budget must be positive and finite");
        }
        // Finite SNR: every MMSE stays strictly positive.
        if !(self.noise_var.is_finite() && self.noise_var > 0.0) {
            return bad("noise variance must be positive and finite");
        }
        if self.sample_size == 0 {
            return bad("sample size must be at least one");
        }
        match self.error_model {
            ErrorModel::Decaying { alpha } if !(alpha.is_finite() && alpha >= 0.0) => {
                bad("decay exponent must be non-negative")
            }
            ErrorModel::Fixed { sigma_e2 } if !(sigma_e2.is_finite() && sigma_e2 >= 0.0) => {
                bad("error variance must be non-negative")
            }
            _ => Ok(()),
        }
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power / self.noise_var).log10()
    }

    pub fn effective_error_variance(&self) -> f64 {
        effective_error_variance(self)
    }

    /// Exponent used to split power at initialization.
    ///
    /// For a fixed error variance this is the exponent that would produce
    /// the same variance at the current power, clamped to `[0, 1]`.
    pub fn equivalent_alpha(&self) -> f64 {
        match self.error_model {
            ErrorModel::Decaying { alpha } => alpha.clamp(0.0, 1.0),
            ErrorModel::Fixed { sigma_e2 } => {
                if self.power <= 1.0 || sigma_e2 <= 0.0 {
                    1.0
                } else {
                    (-sigma_e2.ln() / self.power.ln()).clamp(0.0, 1.0)
                }
            }
        }
    }
}

pub fn effective_error_variance(sc: &Scenario) -> f64 {
    match sc.error_model {
        ErrorModel::Decaying { alpha } => sc.power.powf(-alpha),
        ErrorModel::Fixed { sigma_e2 } => sigma_e2,
    }
}

/// An `N_t x K` channel matrix; column `k` is user `k`'s channel vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    matrix: CMatrix,
}

impl Channel {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidInput("channel has non-finite entries".into()));
        }
        if matrix.ncols() == 0 || matrix.nrows() == 0 {
            return Err(Error::InvalidInput("channel must be non-empty".into()));
        }
        Ok(Channel { matrix })
    }

    pub fn from_columns(columns: &[CVector]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidInput("channel must be non-empty".into()));
        }
        let n = columns[0].len();
        if let Some(c) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "channel column length",
                expected: n,
                got: c.len(),
            });
        }
        Self::new(CMatrix::from_columns(columns))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn n_tx(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn user(&self, k: usize) -> CVector {
        self.matrix.column(k).into_owned()
    }
}

/// The Monte-Carlo realizations `H^(m) = H_hat + H_tilde^(m)` conditioned on
/// one channel estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub estimate: Channel,
    pub realizations: Vec<Channel>,
    pub error_var: f64,
}

impl SampleSet {
    /// A degenerate set with a single realization equal to the estimate.
    pub fn perfect(estimate: Channel) -> Self {
        SampleSet {
            realizations: vec![estimate.clone()],
            estimate,
            error_var: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }

    pub fn n_tx(&self) -> usize {
        self.estimate.n_tx()
    }

    pub fn n_users(&self) -> usize {
        self.estimate.n_users()
    }
}

/// A labelled, independently seekable random substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream keyed by `label`, independent of the parent's draws.
    pub fn split(&self, label: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: splitmix64(splitmix64(self.stream_id) ^ label),
        }
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Circularly-symmetric complex Gaussian draw with the given variance,
/// via Box-Muller.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    // u1 in (0, 1] keeps the log finite.
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    let radius = (-u1.ln() * variance).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    Complex64::new(radius * c, radius * s)
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, variance: f64) -> CMatrix {
    // Column-major fill: user 0's entries first.
    CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng, variance))
}

/// True channel with i.i.d. `CN(0, 1)` entries.
pub fn draw_true_channel(stream: &RngStream, sc: &Scenario) -> Channel {
    let mut rng = stream.rng();
    Channel {
        matrix: gaussian_matrix(&mut rng, sc.n_tx, sc.n_users, 1.0),
    }
}

/// Draws an estimation error `CN(0, sigma_e2)` and returns
/// `(estimate, error)` with `estimate = h_true - error`.
pub fn draw_estimate(stream: &RngStream, h_true: &Channel, sigma_e2: f64) -> (Channel, Channel) {
    assert!(
        sigma_e2.is_finite() && sigma_e2 >= 0.0,
        "error variance must be non-negative"
    );
    let mut rng = stream.rng();
    let error = gaussian_matrix(&mut rng, h_true.n_tx(), h_true.n_users(), sigma_e2);
    let estimate = &h_true.matrix - &error;
    (Channel { matrix: estimate }, Channel { matrix: error })
}

/// `m_count` realizations of `estimate + CN(0, sigma_e2)` perturbations.
pub fn draw_sample_set(stream: &RngStream, estimate: &Channel, sigma_e2: f64, m_count: usize) -> SampleSet {
    assert!(m_count >= 1, "sample set needs at least one realization");
    assert!(
        sigma_e2.is_finite() && sigma_e2 >= 0.0,
        "error variance must be non-negative"
    );
    let mut rng = stream.rng();
    let (rows, cols) = (estimate.n_tx(), estimate.n_users());
    let realizations = (0..m_count)
        .map(|_| {
            let perturbation = gaussian_matrix(&mut rng, rows, cols, sigma_e2);
            Channel {
                matrix: &estimate.matrix + perturbation,
            }
        })
        .collect();
    SampleSet {
        estimate: estimate.clone(),
        realizations,
        error_var: sigma_e2,
    }
}
