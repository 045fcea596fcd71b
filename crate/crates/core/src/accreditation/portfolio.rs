//! Joint versus standalone impact of a portfolio of additions.

use serde::Serialize;

use super::mri::ratio_stderr;
use super::Study;
use crate::error::{Error, Result};
use crate::system::PerturbationDirection;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StandaloneImpact {
    pub resource_id: String,
    pub share: f64,
    /// Baseline metric minus metric with this member added alone.
    pub delta_metric: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PortfolioOutcome {
    pub delta_mw: f64,
    pub joint_delta_metric: f64,
    pub joint_stderr: f64,
    pub standalone: Vec<StandaloneImpact>,
    /// Joint improvement minus the sum of standalone improvements.
    pub additivity_gap: f64,
    pub gap_stderr: f64,
    /// Joint improvement over that of a perfect resource of the portfolio's total nameplate.
    pub joint_alpha: f64,
    pub joint_alpha_stderr: f64,
    pub simulation_runs: usize,
}

/// Adds every member at `delta * share` MW, jointly in one run and alone in one
/// run each, on the study batch.
pub fn portfolio_perturb(study: &Study<'_>, portfolio: &PerturbationDirection, delta: f64) -> Result<PortfolioOutcome> {
    let PerturbationDirection::Portfolio { members } = portfolio else {
        return Err(Error::invalid("direction", "expected a portfolio"));
    };
    if members.is_empty() {
        return Err(Error::Empty("portfolio"));
    }
    if !(delta > 0.0) {
        return Err(Error::NonPositiveStep(delta));
    }
    portfolio.validate(study.system())?;
    let system = study.system();
    let base = study.base();
    let m0 = study.baseline_values();
    let improvement = |values: Vec<f64>| -> Vec<f64> { m0.iter().zip(values).map(|(a, b)| a - b).collect() };
    let mut runs = 0;

    let joint = improvement(study.evaluate(&base.perturbed(system, portfolio, delta)?)?);
    runs += 1;
    let mut gap = joint.clone();
    let mut standalone = Vec::with_capacity(members.len());
    for m in members {
        let alone = improvement(study.evaluate(&base.perturbed(system, &m.direction, delta * m.share)?)?);
        runs += 1;
        for (g, a) in gap.iter_mut().zip(&alone) {
            *g -= a;
        }
        let (mean, se) = study.summarize(&alone)?;
        standalone.push(StandaloneImpact {
            resource_id: m.direction.label(),
            share: m.share,
            delta_metric: mean,
            stderr: se,
        });
    }
    let nameplate: f64 = members.iter().map(|m| delta * m.share).sum();
    let perfect = improvement(study.evaluate(&base.clone().with_firm(nameplate))?);
    runs += 1;

    let (joint_mean, joint_se) = study.summarize(&joint)?;
    let (gap_mean, gap_se) = study.summarize(&gap)?;
    let (perfect_mean, _) = study.summarize(&perfect)?;
    let joint_alpha = joint_mean / perfect_mean;
    Ok(PortfolioOutcome {
        delta_mw: delta,
        joint_delta_metric: joint_mean,
        joint_stderr: joint_se,
        standalone,
        additivity_gap: gap_mean,
        gap_stderr: gap_se,
        joint_alpha,
        joint_alpha_stderr: ratio_stderr(study, &joint, &perfect, joint_alpha, perfect_mean)?,
        simulation_runs: runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accreditation::StudyOptions;
    use crate::fixtures;
    use crate::oracle::exact_weight_batch;

    #[test]
    fn synergy_gap() {
        let s = fixtures::synergy();
        let b = exact_weight_batch(&s).unwrap();
        let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
        let p = PerturbationDirection::portfolio([
            (PerturbationDirection::resource("pv"), 2.0),
            (PerturbationDirection::resource("bess"), 1.0),
        ]);
        let out = portfolio_perturb(&study, &p, 5.0).unwrap();
        assert_eq!(out.standalone[0].delta_metric, 5.0);
        assert_eq!(out.standalone[1].delta_metric, 0.0);
        assert_eq!(out.joint_delta_metric, 10.0);
        assert_eq!(out.additivity_gap, 5.0);
        assert!(matches!(
            portfolio_perturb(&study, &PerturbationDirection::Perfect, 5.0),
            Err(Error::Invalid { .. })
        ));
    }
}
