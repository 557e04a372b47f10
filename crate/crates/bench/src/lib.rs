//! Fixtures shared by the benchmarks.

use nnflow_core::constitutive::PairSampling;
use nnflow_core::rel_energy::ReferencePair;
use nnflow_core::{FlowState, SimConfig, TravelingWave, ViscosityLaw};

/// Traveling-wave run on a periodic line of `n` cells, its initial state and
/// the exact reference at `t = 0`.
pub fn wave_setup(n: usize) -> (SimConfig, FlowState, ReferencePair) {
    let wave = TravelingWave::default();
    let grid = wave.grid(1, n).expect("valid grid");
    let cfg = wave
        .config(&ViscosityLaw::exponential(), grid, 0.1)
        .expect("valid wave");
    let state = cfg.initial_state();
    let reference = wave.reference(grid, 0.0).expect("positive density");
    (cfg, state, reference)
}

pub fn pairs(n_samples: usize) -> PairSampling {
    PairSampling {
        n_samples,
        entry_range: (-5.0, 5.0),
        seed: 1,
    }
}
