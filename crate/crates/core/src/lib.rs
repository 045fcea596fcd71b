//! Monte Carlo resource adequacy with gradient-based capacity accreditation.
//!
//! A [`SystemSpec`] is sampled into a [`ScenarioBatch`] of thermal outage draws,
//! dispatched into hourly shortfall, and aggregated into adequacy metrics.
//! Accreditation factors come from ELCC root finding or from marginal
//! reliability impact (finite differences or IPA), all on one shared batch.
//! Small fleets can be checked against exact enumeration in [`oracle`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accreditation;
pub mod dispatch;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod gradient;
pub mod metrics;
pub mod oracle;
pub mod scenario;
pub mod system;

pub use accreditation::{
    accredit, accredit_many, AccreditMethod, AccreditationReport, MethodParams, SolverTrace, Study, StudyOptions,
};
pub use dispatch::{dispatch_scenario, shortfall_surface, Capacities, DispatchPolicy, ShortfallSurface, Simulator};
pub use error::{Error, Result};
pub use exec::Parallelism;
pub use gradient::{fd_gradient, ipa_gradient, GradientEstimate, GradientMethod};
pub use metrics::{aggregate, Metric, RiskEstimate, RiskOperator, ScenarioMetrics};
pub use oracle::{exact_weight_batch, oracle_assess, oracle_elcc, oracle_gradient, ExactAssessment};
pub use scenario::{sample_batch, RngPolicy, ScenarioBatch};
pub use system::{load_system_spec, scale_load, PerturbationDirection, SystemSpec};
