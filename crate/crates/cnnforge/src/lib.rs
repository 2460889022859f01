//! Feature generation by transient cellular-network dynamics, template
//! search, a reference downstream classifier, and per-patient outcome
//! decisions.

pub mod engine;
pub mod reference;

pub use engine::{
    cell_derivative, neighborhood_offsets, pwl_output, run_transient, steady_state_bound,
    Boundary, CellField, DiffNonlinearity, EngineError, GridSpec, IntegrationConfig, Method,
    TemplateSet, TransientResult,
};
