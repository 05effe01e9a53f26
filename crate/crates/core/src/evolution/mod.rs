//! Outer-loop optimizers: a generational GA with rank selection, a steady-state
//! tournament GA, separable NES, and the mutation operators they share.

mod ga;
mod genome;
mod snes;

pub use ga::{
    draw_round, draw_tournament, generational_step, selection_probabilities, steady_state_step,
    GenerationalConfig, Member, PopulationState, Selection, SteadyStateConfig, Tournament,
};
pub use genome::{
    mutate, Genome, GenomeId, GenomeIds, Hyperparams, MutationConfig, DISCOUNT_RANGE,
    ENTROPY_SCALE_RANGE, LEARNING_RATE_RANGE,
};
pub use snes::{
    rank_utilities, snes_sample, snes_step, snes_update, SearchDistribution, SnesSample,
};
