//! Capacity accreditation: marginal ELCC by root finding and MRI by gradient ratio.

mod elcc;
mod mri;
mod portfolio;
mod sweep;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;

use crate::dispatch::{Capacities, ShortfallSurface, Simulator};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Parallelism};
use crate::gradient::{summarize, FdScheme};
use crate::metrics::{Metric, ScenarioMetrics};
use crate::scenario::ScenarioBatch;
use crate::system::{PerturbationDirection, SystemSpec};

pub use elcc::{elcc_solve, elcc_solve_with, ConvergenceReason, ElccForm, SolverTrace, StepKind, TraceStep};
pub use mri::{accredit_mri_fd, accredit_mri_fd_with, accredit_mri_ipa};
pub use portfolio::{portfolio_perturb, PortfolioOutcome, StandaloneImpact};
pub use sweep::{sweep_load_scale, sweep_step_size, LoadSweepRow, StepSweepRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AccreditMethod {
    ElccBisection,
    ElccSecant,
    ElccNewtonIpa,
    MriFd,
    MriIpa,
}

impl AccreditMethod {
    pub const ALL: [AccreditMethod; 5] = [
        AccreditMethod::ElccBisection,
        AccreditMethod::ElccSecant,
        AccreditMethod::ElccNewtonIpa,
        AccreditMethod::MriFd,
        AccreditMethod::MriIpa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AccreditMethod::ElccBisection => "elcc_bisection",
            AccreditMethod::ElccSecant => "elcc_secant",
            AccreditMethod::ElccNewtonIpa => "elcc_newton_ipa",
            AccreditMethod::MriFd => "mri_fd",
            AccreditMethod::MriIpa => "mri_ipa",
        }
    }

    pub fn is_elcc(self) -> bool {
        matches!(
            self,
            AccreditMethod::ElccBisection | AccreditMethod::ElccSecant | AccreditMethod::ElccNewtonIpa
        )
    }
}

impl fmt::Display for AccreditMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AccreditMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "elcc_bisection" | "bisection" => AccreditMethod::ElccBisection,
            "elcc_secant" | "secant" => AccreditMethod::ElccSecant,
            "elcc_newton_ipa" | "newton_ipa" | "newton" => AccreditMethod::ElccNewtonIpa,
            "mri_fd" | "fd" => AccreditMethod::MriFd,
            "mri_ipa" | "ipa" => AccreditMethod::MriIpa,
            other => return Err(Error::invalid("method", format!("unknown method '{other}'"))),
        })
    }
}

/// One resource accredited by one method.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccreditationReport {
    pub resource_id: String,
    pub method: AccreditMethod,
    pub alpha: f64,
    pub alpha_stderr: f64,
    pub l_c_mw: Option<f64>,
    /// Candidate increment for ELCC, difference step for MRI-FD, absent for MRI-IPA.
    pub delta_x_mw: Option<f64>,
    pub iterations: usize,
    pub simulation_runs: usize,
    /// Standard error of the numerator gradient (MRI) or of the final root residual (ELCC).
    pub gradient_stderr: f64,
    pub wall_time_s: f64,
    pub flags: Vec<String>,
}

impl AccreditationReport {
    pub(crate) fn flag_alpha_range(&mut self) {
        if !(0.0..=1.0).contains(&self.alpha) {
            self.flags.push("alpha_outside_unit_interval".into());
        }
    }
}

/// Step sizes and tolerances shared by all methods.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethodParams {
    /// Finite-difference step for MRI-FD; defaults per resource when `None`.
    pub delta_mw: Option<f64>,
    pub delta_x_mw: f64,
    pub tolerance_mw: f64,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            delta_mw: None,
            delta_x_mw: 10.0,
            tolerance_mw: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudyOptions {
    pub metric: Metric,
    /// Largest acceptable baseline relative standard error on Monte Carlo batches.
    pub rse_ceiling: f64,
    pub max_iterations: usize,
    pub parallelism: Parallelism,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            metric: Metric::Ue,
            rse_ceiling: 0.05,
            max_iterations: 64,
            parallelism: Parallelism::default(),
        }
    }
}

type PerfectFdCache = HashMap<(u64, FdScheme), Arc<Vec<f64>>>;

/// A system and scenario batch with the baseline already simulated. Every method
/// run through a study shares the batch, so all comparisons use common random numbers.
pub struct Study<'a> {
    sim: Simulator<'a>,
    base: Capacities,
    options: StudyOptions,
    surface: ShortfallSurface,
    baseline: Vec<ScenarioMetrics>,
    baseline_values: Vec<f64>,
    baseline_mean: f64,
    baseline_se: f64,
    perfect_ipa: OnceLock<Vec<f64>>,
    perfect_fd: Mutex<PerfectFdCache>,
    ipa_charged: AtomicBool,
}

impl<'a> Study<'a> {
    pub fn new(system: &'a SystemSpec, batch: &'a ScenarioBatch, options: StudyOptions) -> Result<Self> {
        let sim = Simulator::new(system, batch)?.with_parallelism(options.parallelism);
        let base = Capacities::baseline(system);
        let surface = sim.surface(&base)?;
        let baseline = surface.scenario_metrics();
        let baseline_values: Vec<f64> = baseline.iter().map(|m| m.get(options.metric)).collect();
        let (baseline_mean, baseline_se) = summarize(&baseline_values, batch.weights())?;
        if baseline_mean <= 0.0 {
            return Err(Error::AdequateBaseline(baseline_mean));
        }
        if !batch.is_exact() && baseline_se / baseline_mean > options.rse_ceiling {
            return Err(Error::NoisyBaseline {
                rse: baseline_se / baseline_mean,
                ceiling: options.rse_ceiling,
            });
        }
        Ok(Self {
            sim,
            base,
            options,
            surface,
            baseline,
            baseline_values,
            baseline_mean,
            baseline_se,
            perfect_ipa: OnceLock::new(),
            perfect_fd: Mutex::new(HashMap::new()),
            ipa_charged: AtomicBool::new(false),
        })
    }

    pub fn system(&self) -> &'a SystemSpec {
        self.sim.system()
    }

    pub fn batch(&self) -> &'a ScenarioBatch {
        self.sim.batch()
    }

    pub fn options(&self) -> &StudyOptions {
        &self.options
    }

    pub fn metric(&self) -> Metric {
        self.options.metric
    }

    pub fn surface(&self) -> &ShortfallSurface {
        &self.surface
    }

    /// Baseline metric estimate `(mean, std_error)`.
    pub fn baseline(&self) -> (f64, f64) {
        (self.baseline_mean, self.baseline_se)
    }

    pub fn baseline_values(&self) -> &[f64] {
        &self.baseline_values
    }

    /// Total simulation runs on this study's batch, baseline included.
    pub fn runs(&self) -> usize {
        self.sim.runs()
    }

    pub(crate) fn simulator(&self) -> &Simulator<'a> {
        &self.sim
    }

    pub(crate) fn base(&self) -> &Capacities {
        &self.base
    }

    pub(crate) fn baseline_metrics(&self) -> &[ScenarioMetrics] {
        &self.baseline
    }

    pub(crate) fn weights(&self) -> Option<&[f64]> {
        self.sim.batch().weights()
    }

    /// Per-scenario metric values at `caps` (one run).
    pub(crate) fn evaluate(&self, caps: &Capacities) -> Result<Vec<f64>> {
        Ok(self
            .sim
            .run(caps)?
            .iter()
            .map(|m| m.get(self.options.metric))
            .collect())
    }

    pub(crate) fn summarize(&self, values: &[f64]) -> Result<(f64, f64)> {
        summarize(values, self.weights())
    }

    pub(crate) fn require_ue(&self, what: &'static str) -> Result<()> {
        if self.options.metric != Metric::Ue {
            return Err(Error::RequiresUnservedEnergy(what));
        }
        Ok(())
    }

    /// True exactly once per study: the first IPA report carries the baseline run.
    pub(crate) fn take_ipa_charge(&self) -> bool {
        !self.ipa_charged.swap(true, Ordering::SeqCst)
    }

    pub(crate) fn perfect_ipa(&self) -> &[f64] {
        self.perfect_ipa.get_or_init(|| {
            let batch = self.sim.batch();
            let w = crate::gradient::DirectionWeights::resolve(self.system(), batch, &PerturbationDirection::Perfect)
                .expect("perfect direction always resolves");
            (0..batch.n()).map(|i| w.pathwise(batch, &self.surface, i)).collect()
        })
    }

    /// Cached perfect-resource differences at step `delta`; the flag is true when
    /// this call performed the runs.
    pub(crate) fn perfect_fd(&self, delta: f64, scheme: FdScheme) -> Result<(Arc<Vec<f64>>, bool)> {
        let key = (delta.to_bits(), scheme);
        if let Some(v) = self.perfect_fd.lock().expect("cache lock").get(&key) {
            return Ok((Arc::clone(v), false));
        }
        let d = crate::gradient::fd_pathwise(
            &self.sim,
            &self.base,
            &PerturbationDirection::Perfect,
            delta,
            self.options.metric,
            scheme,
            Some(&self.baseline),
        )?;
        let d = Arc::new(d);
        self.perfect_fd.lock().expect("cache lock").insert(key, Arc::clone(&d));
        Ok((d, true))
    }
}

/// Accredits one resource by one method. ELCC methods also return their trace.
pub fn accredit(
    study: &Study<'_>,
    direction: &PerturbationDirection,
    method: AccreditMethod,
    params: &MethodParams,
) -> Result<(AccreditationReport, Option<SolverTrace>)> {
    match method {
        AccreditMethod::MriIpa => {
            let mut r = accredit_mri_ipa(study, std::slice::from_ref(direction))?;
            Ok((r.remove(0), None))
        }
        AccreditMethod::MriFd => {
            let delta = params.delta_mw.unwrap_or_else(|| mri::default_step(study.system(), direction));
            Ok((accredit_mri_fd(study, direction, delta)?, None))
        }
        _ => {
            let (r, t) = elcc_solve(study, direction, params.delta_x_mw, method, params.tolerance_mw)?;
            Ok((r, Some(t)))
        }
    }
}

/// One resource's outcome in [`accredit_many`].
pub type ResourceOutcome = Result<(AccreditationReport, Option<SolverTrace>)>;

/// Accredits several resources by one method, each with its own parameters.
/// ELCC resources run in parallel under the study's parallelism; outcomes are
/// in input order and do not depend on it. IPA skips storage resources with
/// an error outcome instead of failing the list.
pub fn accredit_many(
    study: &Study<'_>,
    items: &[(PerturbationDirection, MethodParams)],
    method: AccreditMethod,
) -> Result<Vec<ResourceOutcome>> {
    if items.is_empty() {
        return Err(Error::Empty("resource list"));
    }
    match method {
        AccreditMethod::MriIpa => {
            let system = study.system();
            let eligible: Vec<PerturbationDirection> = items
                .iter()
                .filter(|(d, _)| !d.involves_storage(system))
                .map(|(d, _)| d.clone())
                .collect();
            let mut reports = if eligible.is_empty() {
                vec![]
            } else {
                accredit_mri_ipa(study, &eligible)?
            }
            .into_iter();
            Ok(items
                .iter()
                .map(|(d, _)| match d.involves_storage(system) {
                    true => Err(Error::IpaStorage),
                    false => Ok((reports.next().expect("one report per eligible resource"), None)),
                })
                .collect())
        }
        // sequential, since the shared perfect-resource runs are cached on first use
        AccreditMethod::MriFd => Ok(items.iter().map(|(d, p)| accredit(study, d, method, p)).collect()),
        _ => Ok(map_indexed(items.len(), study.options.parallelism, |i| {
            accredit(study, &items[i].0, method, &items[i].1)
        })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::oracle::exact_weight_batch;

    #[test]
    fn method_names_round_trip() {
        for m in AccreditMethod::ALL {
            assert_eq!(m.name().parse::<AccreditMethod>().unwrap(), m);
        }
        assert!("brent".parse::<AccreditMethod>().is_err());
    }

    #[test]
    fn adequate_baseline_is_rejected() {
        let s = fixtures::firm_block(90.0);
        let b = exact_weight_batch(&s).unwrap();
        assert!(matches!(Study::new(&s, &b, StudyOptions::default()), Err(Error::AdequateBaseline(_))));
    }

    #[test]
    fn noisy_baseline_is_rejected() {
        let s = fixtures::toy3();
        let b = crate::scenario::sample_batch(&s, 20, &crate::scenario::RngPolicy::new(3)).unwrap();
        assert!(matches!(Study::new(&s, &b, StudyOptions::default()), Err(Error::NoisyBaseline { .. })));
    }
}
