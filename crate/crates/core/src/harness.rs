//! Experiment orchestration: single solves, convergence traces, ergodic-rate
//! sweeps over random channels, and CSV output.
//!
//! Every channel draws from its own substream of the experiment seed, so
//! results do not depend on the number of worker threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ao::{self, AoConfig, AoResult, Init, Mode};
use crate::awmse;
use crate::cone_solver::{self, ConvexQcqp, SolverSettings};
use crate::error::{Error, Result};
use crate::mmse::{self, Precoder};
use crate::model::{
    draw_estimate, draw_sample_set, draw_true_channel, Channel, ErrorModel, RngStream, SampleSet, Scenario,
};
use crate::partition;
use crate::sum::mean;

/// Abort threshold on the fraction of failed channels.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

// Substream labels below a channel stream.
const STREAM_TRUE: u64 = 0;
const STREAM_ESTIMATE: u64 = 1;
const STREAM_SAMPLES: u64 = 2;
const UNPAIRED_TAG: u64 = 1 << 32;

/// Scenario fields that do not change across an SNR sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTemplate {
    pub n_tx: usize,
    pub n_users: usize,
    #[serde(default = "default_noise_var")]
    pub noise_var: f64,
    pub error_model: ErrorModel,
    pub sample_size: usize,
}

fn default_noise_var() -> f64 {
    1.0
}

impl Default for ScenarioTemplate {
    fn default() -> Self {
        ScenarioTemplate {
            n_tx: 2,
            n_users: 2,
            noise_var: 1.0,
            error_model: ErrorModel::Decaying { alpha: 0.6 },
            sample_size: 200,
        }
    }
}

impl ScenarioTemplate {
    /// `P_t = noise_var * 10^(snr_db / 10)`.
    pub fn at_snr(&self, snr_db: f64) -> Result<Scenario> {
        Scenario::new(
            self.n_tx,
            self.n_users,
            self.noise_var * 10f64.powf(snr_db / 10.0),
            self.noise_var,
            self.error_model,
            self.sample_size,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: ScenarioTemplate,
    pub snr_grid_db: Vec<f64>,
    pub n_channels: usize,
    pub seed: u64,
    /// Reuse the same channel draws at every SNR point.
    pub paired_sampling: bool,
    pub modes: Vec<Mode>,
    pub inits: Vec<Init>,
    pub eps_r: f64,
    pub n_max: usize,
    pub solver: SolverSettings,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            scenario: ScenarioTemplate::default(),
            snr_grid_db: (0..8).map(|i| 5.0 * i as f64).collect(),
            n_channels: 50,
            seed: 0,
            paired_sampling: true,
            modes: vec![Mode::Jmb, Mode::ConventionalBc],
            inits: vec![Init::ZfE],
            eps_r: ao::DEFAULT_EPS_R,
            n_max: ao::DEFAULT_N_MAX,
            solver: SolverSettings::default(),
        }
    }
}

impl ExperimentSpec {
    /// 200 channels and 1000 realizations per sample set.
    pub fn full_scale(mut self) -> Self {
        self.n_channels = 200;
        self.scenario.sample_size = 1000;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.to_string()));
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return bad("SNR grid must be non-empty and finite");
        }
        if self.n_channels == 0 {
            return bad("n_channels must be at least one");
        }
        if self.modes.is_empty() || self.inits.is_empty() {
            return bad("modes and inits must be non-empty");
        }
        if self.inits.iter().any(|i| matches!(i, Init::Custom(_))) {
            return bad("experiments only support the zf-e and zf-svd initializations");
        }
        // Catch scenario errors before any work is scheduled.
        for &snr in &self.snr_grid_db {
            self.scenario.at_snr(snr)?;
        }
        self.ao_config(Mode::Jmb, Init::ZfE).validate()
    }

    pub fn ao_config(&self, mode: Mode, init: Init) -> AoConfig {
        AoConfig {
            eps_r: self.eps_r,
            n_max: self.n_max,
            init,
            mode,
            solver: self.solver,
        }
    }

    /// Random stream of one evaluation channel at one SNR grid index.
    pub fn channel_stream(&self, snr_index: usize, channel: usize) -> RngStream {
        let base = RngStream::new(self.seed, 0).split(channel as u64);
        if self.paired_sampling {
            base
        } else {
            base.split(UNPAIRED_TAG | snr_index as u64)
        }
    }

    /// True channel, estimate and sample set for one channel index.
    pub fn instance(&self, snr_index: usize, channel: usize) -> Result<Instance> {
        let snr_db = *self
            .snr_grid_db
            .get(snr_index)
            .ok_or_else(|| Error::InvalidInput(format!("SNR index {snr_index} out of range")))?;
        let scenario = self.scenario.at_snr(snr_db)?;
        Ok(Instance::draw(scenario, &self.channel_stream(snr_index, channel)))
    }

    /// The (mode, init) pairs that are actually run. Broadcast mode ignores
    /// the common-precoder direction, so it runs once, labelled with the
    /// first configured init.
    fn combos(&self) -> Vec<(Mode, Init)> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            match mode {
                Mode::Jmb => out.extend(self.inits.iter().map(|i| (mode, i.clone()))),
                Mode::ConventionalBc => out.push((mode, self.inits[0].clone())),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub scenario: Scenario,
    pub h_true: Channel,
    pub samples: SampleSet,
}

impl Instance {
    pub fn draw(scenario: Scenario, stream: &RngStream) -> Instance {
        let sigma_e2 = scenario.effective_error_variance();
        let h_true = draw_true_channel(&stream.split(STREAM_TRUE), &scenario);
        let (estimate, _) = draw_estimate(&stream.split(STREAM_ESTIMATE), &h_true, sigma_e2);
        let samples = draw_sample_set(&stream.split(STREAM_SAMPLES), &estimate, sigma_e2, scenario.sample_size);
        Instance {
            scenario,
            h_true,
            samples,
        }
    }
}

/// Minimum total rate of a design on a given (true) channel.
///
/// The common rate is the smallest common rate over all users, since every
/// user has to decode the common stream before cancelling it.
pub fn achieved_min_rate(h_true: &Channel, pre: &Precoder, coeffs: &[f64], noise_var: f64, mode: Mode) -> f64 {
    let rates: Vec<mmse::RatePair> = (0..h_true.n_users())
        .map(|k| mmse::rates(&mmse::link_stats(&h_true.user(k), pre, k, noise_var)))
        .collect();
    let common = rates.iter().map(|r| r.common).fold(f64::INFINITY, f64::min);
    rates
        .iter()
        .enumerate()
        .map(|(k, r)| match mode {
            Mode::Jmb => r.private + coeffs[k] * common,
            Mode::ConventionalBc => r.private,
        })
        .fold(f64::INFINITY, f64::min)
}

/// Serializable summary of one solved instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub snr_db: f64,
    pub mode: Mode,
    pub init: String,
    pub error_var: f64,
    /// Minimum average rate on the sample set.
    pub objective_bits: f64,
    /// Minimum rate on the true channel.
    pub achieved_bits: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub coeffs: Vec<f64>,
    pub average_common_rates: Vec<f64>,
    pub average_private_rates: Vec<f64>,
    pub precoder: Precoder,
}

pub fn solve_instance(inst: &Instance, cfg: &AoConfig) -> Result<(AoResult, SolveOutput)> {
    let res = ao::ao_solve(&inst.scenario, &inst.samples, cfg)?;
    let achieved = achieved_min_rate(
        &inst.h_true,
        &res.precoder,
        &res.coeffs,
        inst.scenario.noise_var,
        cfg.mode,
    );
    let out = SolveOutput {
        snr_db: inst.scenario.snr_db(),
        mode: cfg.mode,
        init: cfg.init.label().to_string(),
        error_var: inst.samples.error_var,
        objective_bits: res.objective,
        achieved_bits: achieved,
        converged: res.converged,
        iterations: res.objective_trace.len(),
        objective_trace: res.objective_trace.clone(),
        coeffs: res.coeffs.clone(),
        average_common_rates: res.final_rates.common.clone(),
        average_private_rates: res.final_rates.private.clone(),
        precoder: res.precoder.clone(),
    };
    Ok((res, out))
}

/// The precoder-update problem of the first AO iteration, for dumping.
pub fn first_update_problem(inst: &Instance, cfg: &AoConfig) -> Result<ConvexQcqp> {
    let pre = ao::initial_precoder(&inst.scenario, &inst.samples, cfg).precoder;
    let noise = inst.scenario.noise_var;
    let gw = awmse::update_equalizers_weights(&inst.samples, &pre, noise);
    let comp = awmse::build_components(&inst.samples, &gw);
    let coeffs = match cfg.mode {
        Mode::Jmb => {
            let rates = awmse::sample_average_rates(&inst.samples, &pre, noise);
            Some(partition::waterfill(rates.common_min, &rates.private)?.coeffs)
        }
        Mode::ConventionalBc => None,
    };
    cone_solver::assemble(&comp, coeffs.as_deref(), noise, inst.scenario.power)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub snr_db: f64,
    pub init: String,
    pub objective_bits: f64,
}

/// Objective traces of joint-mode AO on channel 0 of the spec, for every
/// configured init at each SNR point, with `sigma_e^2 = P_t^(-alpha)`.
pub fn run_convergence(spec: &ExperimentSpec, snr_points: &[f64], alpha: f64) -> Result<Vec<TraceRow>> {
    let mut spec = spec.clone();
    spec.scenario.error_model = ErrorModel::Decaying { alpha };
    spec.snr_grid_db = snr_points.to_vec();
    spec.validate()?;
    let mut rows = Vec::new();
    for (s, &snr_db) in snr_points.iter().enumerate() {
        let inst = spec.instance(s, 0)?;
        for init in &spec.inits {
            let res = ao::ao_solve(&inst.scenario, &inst.samples, &spec.ao_config(Mode::Jmb, init.clone()))?;
            rows.extend(res.objective_trace.iter().enumerate().map(|(i, &obj)| TraceRow {
                iteration: i + 1,
                snr_db,
                init: init.label().to_string(),
                objective_bits: obj,
            }));
        }
    }
    Ok(rows)
}

/// Ergodic-rate estimate for one (SNR, mode, init) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErRecord {
    pub snr_db: f64,
    pub mode: Mode,
    pub init: String,
    /// Mean achieved minimum rate over the successful channels.
    pub ergodic_rate: f64,
    pub std_error: f64,
    pub mean_iterations: f64,
    /// Channels that contributed.
    pub n_channels: usize,
    pub failures: usize,
    pub m: usize,
}

/// Outcome of one (mode, init) run on one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelOutcome {
    pub mode: Mode,
    pub init: String,
    /// Minimum average rate on the sample set.
    pub sampled_objective: f64,
    /// Minimum rate on the true channel.
    pub achieved_rate: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicReport {
    pub records: Vec<ErRecord>,
    /// `channels[snr_index][channel][combo]`, `None` where the run failed.
    pub channels: Vec<Vec<Vec<Option<ChannelOutcome>>>>,
}

fn run_channel(
    spec: &ExperimentSpec,
    combos: &[(Mode, Init)],
    snr_index: usize,
    channel: usize,
) -> Vec<Option<ChannelOutcome>> {
    let inst = match spec.instance(snr_index, channel) {
        Ok(inst) => inst,
        Err(e) => {
            log::warn!("channel {channel}: {e}");
            return vec![None; combos.len()];
        }
    };
    combos
        .iter()
        .map(
            |(mode, init)| match solve_instance(&inst, &spec.ao_config(*mode, init.clone())) {
                Ok((res, out)) => Some(ChannelOutcome {
                    mode: *mode,
                    init: out.init,
                    sampled_objective: res.objective,
                    achieved_rate: out.achieved_bits,
                    iterations: out.iterations,
                    converged: out.converged,
                }),
                Err(e) => {
                    log::warn!("channel {channel}, {} / {}: {e}", mode.label(), init.label());
                    None
                }
            },
        )
        .collect()
}

pub fn run_ergodic(spec: &ExperimentSpec) -> Result<ErgodicReport> {
    spec.validate()?;
    let combos = spec.combos();
    let mut records = Vec::new();
    let mut channels = Vec::new();
    for (s, &snr_db) in spec.snr_grid_db.iter().enumerate() {
        // Indexed parallel collect keeps channel order.
        let per_channel: Vec<Vec<Option<ChannelOutcome>>> = (0..spec.n_channels)
            .into_par_iter()
            .map(|c| run_channel(spec, &combos, s, c))
            .collect();
        for (j, (mode, init)) in combos.iter().enumerate() {
            let ok: Vec<&ChannelOutcome> = per_channel.iter().filter_map(|row| row[j].as_ref()).collect();
            let failures = spec.n_channels - ok.len();
            if failures > 0 {
                log::warn!(
                    "{snr_db} dB, {} / {}: {failures} failed channels excluded",
                    mode.label(),
                    init.label()
                );
            }
            if failures as f64 > MAX_FAILURE_FRACTION * spec.n_channels as f64 {
                return Err(Error::TooManyFailures {
                    failed: failures,
                    total: spec.n_channels,
                });
            }
            let rates: Vec<f64> = ok.iter().map(|o| o.achieved_rate).collect();
            let (ergodic_rate, std_error) = mean_and_std_error(&rates);
            records.push(ErRecord {
                snr_db,
                mode: *mode,
                init: init.label().to_string(),
                ergodic_rate,
                std_error,
                mean_iterations: mean(ok.iter().map(|o| o.iterations as f64)),
                n_channels: ok.len(),
                failures,
                m: spec.scenario.sample_size,
            });
        }
        channels.push(per_channel);
    }
    Ok(ErgodicReport { records, channels })
}

/// Sample mean and its standard error (zero for fewer than two values).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let m = mean(values.iter().copied());
    let n = values.len();
    if n < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

#[derive(Serialize)]
struct ErgodicCsvRow<'a> {
    snr_db: f64,
    mode: &'a str,
    init: &'a str,
    ergodic_rate_bits: f64,
    std_error: f64,
    n_channels: usize,
    m: usize,
}

pub fn write_convergence_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["iteration", "snr_db", "init", "objective_bits"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ergodic_csv<W: Write>(records: &[ErRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(ErgodicCsvRow {
            snr_db: r.snr_db,
            mode: r.mode.label(),
            init: &r.init,
            ergodic_rate_bits: r.ergodic_rate,
            std_error: r.std_error,
            n_channels: r.n_channels,
            m: r.m,
        })?;
    }
    if records.is_empty() {
        w.write_record([
            "snr_db",
            "mode",
            "init",
            "ergodic_rate_bits",
            "std_error",
            "n_channels",
            "m",
        ])?;
    }
    w.flush()?;
    Ok(())
}
