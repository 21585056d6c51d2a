//! Seeded simulation populations, assignment and sampling draws, and
//! exhaustive-enumeration oracles.

pub mod enumerate;
pub mod populations;
pub mod rng;
pub mod sampling;

pub use enumerate::{
    configurations, counterexample_population, enumerated_theta_star, inclusion_moments,
    neighbourhood_effect_sum, owfe_estimand_enumerated, treatment_cross_moments,
    twfe_estimand_enumerated, variance_oracle, PotentialOutcomes, ProductRule, UnitModel,
    VarianceOracle, ENUMERATION_CAP,
};
pub use populations::{
    build_probit_population, build_tripled_population, build_twovar_population, draw_cluster_bits,
    grid_labels, AssignmentDraw, AssignmentRule, DesignName, Population, PopulationSpec,
    ProbitPopulation, TripledPopulation, TwoVarPopulation,
};
pub use sampling::{bernoulli_two_stage_sample, SamplingRates};
