//! Benchmark fixtures shared by the criterion targets.

use jmb_core::harness::{ExperimentSpec, Instance};

/// Instance for channel 0 at `snr_db` with the default 2x2 scenario.
pub fn instance(snr_db: f64, sample_size: usize) -> Instance {
    let mut spec = ExperimentSpec {
        snr_grid_db: vec![snr_db],
        ..ExperimentSpec::default()
    };
    spec.scenario.sample_size = sample_size;
    spec.instance(0, 0).expect("default spec is valid")
}
