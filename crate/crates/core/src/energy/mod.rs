//! Operation counting and energy arithmetic.
//!
//! Counters follow the column set of the kernel cost table (`+ - x / exp x^2
//! sqrt >> LUT`). Kernel instrumentation is calibrated against that table:
//! sign selects, comparisons, clamps and exponent bookkeeping are wiring and
//! are not counted. See the module docs of each kernel for its tally.

mod cost;
mod counter;
mod measure;

pub use cost::{
    break_even_rate, delta_e, spiking_additions, table_cost, ComponentEnergies, CostReport,
    EnergyModel, Kernel, ModelSummary, OpWeights, DEFAULT_MULT_ADD_RATIO, DEFAULT_TIMESTEPS,
};
pub use counter::{counters_enabled, measure, Op, OpCounter};
pub use measure::{measure_block_spike_rates, measure_kernel, spike_rates_csv, BlockSpikeRate};
