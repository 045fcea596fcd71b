//! Monte Carlo directional derivatives: pathwise (IPA) and paired finite differences.

use serde::Serialize;

use crate::dispatch::{Capacities, ShortfallSurface, Simulator};
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::metrics::{aggregate_expectation, aggregate_weighted, Metric, ScenarioMetrics};
use crate::scenario::ScenarioBatch;
use crate::system::{GeneratorKind, PerturbationDirection, SystemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    Ipa,
    CentralFd,
    ForwardFd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FdScheme {
    #[default]
    Central,
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradientEstimate {
    pub value: f64,
    pub std_error: f64,
    pub method: GradientMethod,
    pub delta: Option<f64>,
    pub n: usize,
}

/// Mean and standard error of per-scenario values. Exact-weight batches carry no
/// sampling error; a single Monte Carlo scenario reports zero error.
pub(crate) fn summarize(values: &[f64], weights: Option<&[f64]>) -> Result<(f64, f64)> {
    match weights {
        Some(w) => aggregate_weighted(values, w).map(|e| (e.mean, 0.0)),
        None if values.len() == 1 => Ok((values[0], 0.0)),
        None => aggregate_expectation(values).map(|e| (e.mean, e.std_error)),
    }
}

/// A direction resolved against a batch: `v[i][t] = hourly[t] + sum(share * flag)`.
pub(crate) struct DirectionWeights {
    hourly: Vec<f64>,
    thermal: Vec<(usize, f64)>,
}

impl DirectionWeights {
    pub(crate) fn resolve(system: &SystemSpec, batch: &ScenarioBatch, direction: &PerturbationDirection) -> Result<Self> {
        if direction.involves_storage(system) {
            return Err(Error::IpaStorage);
        }
        direction.validate(system)?;
        let mut w = Self {
            hourly: vec![0.0; system.horizon()],
            thermal: vec![],
        };
        w.add(system, batch, direction, 1.0)?;
        Ok(w)
    }

    fn add(&mut self, system: &SystemSpec, batch: &ScenarioBatch, direction: &PerturbationDirection, share: f64) -> Result<()> {
        match direction {
            PerturbationDirection::Perfect => self.hourly.iter_mut().for_each(|h| *h += share),
            PerturbationDirection::ProfileVector { values } => {
                for (h, v) in self.hourly.iter_mut().zip(values) {
                    *h += share * v;
                }
            }
            PerturbationDirection::Resource { id } => {
                let g = system.generator_index(id).ok_or_else(|| Error::UnknownResource(id.clone()))?;
                let gen = &system.generators[g];
                match gen.kind {
                    GeneratorKind::Thermal => {
                        let col = batch
                            .thermal_index(id)
                            .ok_or_else(|| Error::BatchMismatch(format!("no draws for thermal unit '{id}'")))?;
                        self.thermal.push((col, share));
                    }
                    GeneratorKind::Profile => {
                        let shape = system.profile_values(gen).expect("validated");
                        for (h, v) in self.hourly.iter_mut().zip(shape) {
                            *h += share * v;
                        }
                    }
                    GeneratorKind::Perfect => self.hourly.iter_mut().for_each(|h| *h += share),
                }
            }
            PerturbationDirection::StoragePolicy { .. } => return Err(Error::IpaStorage),
            PerturbationDirection::Portfolio { members } => {
                for m in members {
                    self.add(system, batch, &m.direction, share * m.share)?;
                }
            }
        }
        Ok(())
    }

    /// `-sum_t v_t * S_t` for one scenario.
    pub(crate) fn pathwise(&self, batch: &ScenarioBatch, surface: &ShortfallSurface, scenario: usize) -> f64 {
        let mut d = 0.0;
        for t in 0..surface.horizon() {
            if surface.indicator(scenario, t) {
                let mut v = self.hourly[t];
                for &(col, share) in &self.thermal {
                    if batch.unit_flags(scenario, col)[t] != 0 {
                        v += share;
                    }
                }
                d -= v;
            }
        }
        d
    }
}

fn check_surface(system: &SystemSpec, surface: &ShortfallSurface, batch: &ScenarioBatch) -> Result<()> {
    if surface.n() != batch.n() || surface.horizon() != batch.horizon() || batch.horizon() != system.horizon() {
        return Err(Error::BatchMismatch(format!(
            "surface {}x{} vs batch {}x{}",
            surface.n(),
            surface.horizon(),
            batch.n(),
            batch.horizon()
        )));
    }
    Ok(())
}

/// Per-scenario IPA derivatives of UE along `direction`.
pub fn ipa_pathwise(
    system: &SystemSpec,
    surface: &ShortfallSurface,
    batch: &ScenarioBatch,
    direction: &PerturbationDirection,
) -> Result<Vec<f64>> {
    check_surface(system, surface, batch)?;
    let w = DirectionWeights::resolve(system, batch, direction)?;
    Ok((0..batch.n()).map(|i| w.pathwise(batch, surface, i)).collect())
}

/// Single-pass IPA estimate of the UE directional derivative from a baseline surface.
pub fn ipa_gradient(
    system: &SystemSpec,
    surface: &ShortfallSurface,
    batch: &ScenarioBatch,
    direction: &PerturbationDirection,
) -> Result<GradientEstimate> {
    let d = ipa_pathwise(system, surface, batch, direction)?;
    let (value, std_error) = summarize(&d, batch.weights())?;
    Ok(GradientEstimate {
        value,
        std_error,
        method: GradientMethod::Ipa,
        delta: None,
        n: batch.n(),
    })
}

/// Per-scenario finite differences of `metric` along `direction` around `base`.
/// Forward differences reuse `baseline` when given (saving one run).
pub fn fd_pathwise(
    sim: &Simulator<'_>,
    base: &Capacities,
    direction: &PerturbationDirection,
    delta: f64,
    metric: Metric,
    scheme: FdScheme,
    baseline: Option<&[ScenarioMetrics]>,
) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(Error::NonPositiveStep(delta));
    }
    let system = sim.system();
    direction.validate(system)?;
    let plus = base.perturbed(system, direction, delta)?;
    let (lower, width) = match scheme {
        FdScheme::Central => (Some(base.perturbed(system, direction, -delta)?), 2.0 * delta),
        FdScheme::Forward => (None, delta),
    };
    let hi = sim.run(&plus)?;
    let owned;
    let lo: &[ScenarioMetrics] = match (lower, baseline) {
        (Some(caps), _) => {
            owned = sim.run(&caps)?;
            &owned
        }
        (None, Some(b)) => b,
        (None, None) => {
            owned = sim.run(base)?;
            &owned
        }
    };
    if lo.len() != hi.len() {
        return Err(Error::BatchMismatch("baseline metrics length differs from batch".into()));
    }
    Ok(map_indexed(hi.len(), sim.parallelism(), |i| {
        (hi[i].get(metric) - lo[i].get(metric)) / width
    }))
}

/// Central finite difference with common random numbers on `batch`.
pub fn fd_gradient(
    system: &SystemSpec,
    direction: &PerturbationDirection,
    delta: f64,
    batch: &ScenarioBatch,
    metric: Metric,
) -> Result<GradientEstimate> {
    fd_gradient_with(system, direction, delta, batch, metric, FdScheme::Central)
}

pub fn fd_gradient_with(
    system: &SystemSpec,
    direction: &PerturbationDirection,
    delta: f64,
    batch: &ScenarioBatch,
    metric: Metric,
    scheme: FdScheme,
) -> Result<GradientEstimate> {
    let sim = Simulator::new(system, batch)?;
    let d = fd_pathwise(&sim, &Capacities::baseline(system), direction, delta, metric, scheme, None)?;
    let (value, std_error) = summarize(&d, batch.weights())?;
    Ok(GradientEstimate {
        value,
        std_error,
        method: match scheme {
            FdScheme::Central => GradientMethod::CentralFd,
            FdScheme::Forward => GradientMethod::ForwardFd,
        },
        delta: Some(delta),
        n: batch.n(),
    })
}

/// Default step: `max(0.5 MW, 1e-3 * nameplate)`.
pub fn default_delta(nameplate_mw: f64) -> f64 {
    (1e-3 * nameplate_mw).max(0.5)
}
