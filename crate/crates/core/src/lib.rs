//! Informative path planning for self-reconfiguring modular robots on a grid.
//!
//! A GP over a scalar field scores cells by differential entropy. Each module
//! bids for target spots with a budgeted entropic-potential search, an
//! allocator pairs modules with spots, and the acting simulator moves them in
//! sequence while refining the GP from what they sense.

pub mod allocation;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod grid;
pub mod planner;
pub mod sim;

pub use allocation::{
    allocate_auction, allocate_sa, compute_bids, AllocatorKind, Assignment, AssignmentEntry, Bid,
    ModuleId,
};
pub use config::{generate_random, Spot, SpotId, TargetConfig, Violation};
pub use error::{Error, Result};
pub use gp::{
    entropy_from_variance, fit_hyperparameters, kernel, CandidateGrid, EntropyField, EntropySource,
    GpHyperparams, GpState, StaticEntropy,
};
pub use grid::{generate_field, manhattan_distance, Cell, GridMap, Heading, Pose};
pub use planner::{
    eps_search, eps_search_traced, shortest_path, PathPlan, SearchOutcome, SearchStats,
};
pub use sim::{
    check_no_hole, run_acting, ActingParams, ActingReport, EventKind, SimWorld, TraceEvent,
};
