//! Equilibria, hypothesis reports, region synthesis, attraction bounds and
//! basin censuses.

mod bounds;
mod census;
mod equilibria;
mod hypotheses;
mod regions;

pub use bounds::{
    attraction_bound, attraction_bound_with, band_capture, default_delta, estimate_m, trace_det_classify, AttractionBound, BandCheck, BoundError,
    PlanarClassification, StabilityClass,
};
pub use census::{basin_census, census_ic, census_ics, lifted_equilibria, BasinCensus, CensusError, ConvergedCounts, OutcomeCounts};
pub use equilibria::{find_equilibria, Equilibrium, EquilibriumOptions, EquilibriumSet};
pub use hypotheses::{check_hypotheses, HypothesisOptions, HypothesisReport, HypothesisResult, Status};
pub use regions::{example_form, synthesize_regions, ExampleForm, Synthesis, SynthesisError, B_FACTOR, SUP_SAFETY};
