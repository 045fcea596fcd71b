//! Marginal reliability impact: candidate gradient over perfect-resource gradient.

use std::time::Instant;

use super::{AccreditMethod, AccreditationReport, Study};
use crate::error::{Error, Result};
use crate::gradient::{default_delta, fd_pathwise, ipa_pathwise, FdScheme};
use crate::system::{PerturbationDirection, SystemSpec};

/// Delta-method standard error of `mean(num) / mean(den)` from paired scenarios.
pub(crate) fn ratio_stderr(study: &Study<'_>, num: &[f64], den: &[f64], alpha: f64, den_mean: f64) -> Result<f64> {
    if study.weights().is_some() || den_mean == 0.0 {
        return Ok(0.0);
    }
    let z: Vec<f64> = num.iter().zip(den).map(|(n, d)| n - alpha * d).collect();
    Ok(study.summarize(&z)?.1 / den_mean.abs())
}

pub(crate) fn default_step(system: &SystemSpec, direction: &PerturbationDirection) -> f64 {
    let nameplate = match direction {
        PerturbationDirection::Resource { id } => system
            .generator_index(id)
            .map(|g| system.generators[g].nameplate_mw)
            .or_else(|| system.storage_index(id).map(|s| system.storages[s].power_mw))
            .unwrap_or(0.0),
        PerturbationDirection::StoragePolicy { storage_id } => system
            .storage_index(storage_id)
            .map_or(0.0, |s| system.storages[s].power_mw),
        _ => 0.0,
    };
    default_delta(nameplate)
}

/// IPA accreditation of every listed resource from the single baseline simulation.
pub fn accredit_mri_ipa(study: &Study<'_>, directions: &[PerturbationDirection]) -> Result<Vec<AccreditationReport>> {
    study.require_ue("mri_ipa")?;
    if directions.is_empty() {
        return Err(Error::Empty("resource list"));
    }
    if directions.iter().any(|d| d.involves_storage(study.system())) {
        return Err(Error::IpaStorage);
    }
    let den = study.perfect_ipa();
    let (den_mean, _) = study.summarize(den)?;
    let mut reports = Vec::with_capacity(directions.len());
    for direction in directions {
        let start = Instant::now();
        let num = ipa_pathwise(study.system(), study.surface(), study.batch(), direction)?;
        let (num_mean, num_se) = study.summarize(&num)?;
        let alpha = num_mean / den_mean;
        let mut report = AccreditationReport {
            resource_id: direction.label(),
            method: AccreditMethod::MriIpa,
            alpha,
            alpha_stderr: ratio_stderr(study, &num, den, alpha, den_mean)?,
            l_c_mw: None,
            delta_x_mw: None,
            iterations: 0,
            simulation_runs: study.take_ipa_charge() as usize,
            gradient_stderr: num_se,
            wall_time_s: start.elapsed().as_secs_f64(),
            flags: vec![],
        };
        report.flag_alpha_range();
        reports.push(report);
    }
    Ok(reports)
}

/// Central-difference accreditation with common random numbers.
pub fn accredit_mri_fd(study: &Study<'_>, direction: &PerturbationDirection, delta: f64) -> Result<AccreditationReport> {
    accredit_mri_fd_with(study, direction, delta, FdScheme::Central)
}

/// Finite-difference accreditation. A central step that would drive the
/// candidate negative switches numerator and denominator to forward differences
/// at the same step and flags the report. `simulation_runs` counts the
/// candidate's own runs; the shared baseline and perfect-resource runs show in
/// [`Study::runs`].
pub fn accredit_mri_fd_with(
    study: &Study<'_>,
    direction: &PerturbationDirection,
    delta: f64,
    scheme: FdScheme,
) -> Result<AccreditationReport> {
    if !(delta > 0.0) {
        return Err(Error::NonPositiveStep(delta));
    }
    let start = Instant::now();
    direction.validate(study.system())?;
    let mut flags = vec![];
    let scheme = match scheme {
        FdScheme::Central => match study.base().perturbed(study.system(), direction, -delta) {
            Ok(_) => FdScheme::Central,
            Err(Error::NegativeCapacity { .. }) => {
                flags.push("forward_fd".to_string());
                FdScheme::Forward
            }
            Err(e) => return Err(e),
        },
        FdScheme::Forward => FdScheme::Forward,
    };
    let (den, _) = study.perfect_fd(delta, scheme)?;
    let num = fd_pathwise(
        study.simulator(),
        study.base(),
        direction,
        delta,
        study.metric(),
        scheme,
        Some(study.baseline_metrics()),
    )?;
    let (num_mean, num_se) = study.summarize(&num)?;
    let (den_mean, _) = study.summarize(&den)?;
    if den_mean == 0.0 {
        flags.push("zero_denominator".into());
    }
    let alpha = num_mean / den_mean;
    let mut report = AccreditationReport {
        resource_id: direction.label(),
        method: AccreditMethod::MriFd,
        alpha,
        alpha_stderr: ratio_stderr(study, &num, &den, alpha, den_mean)?,
        l_c_mw: None,
        delta_x_mw: Some(delta),
        iterations: 0,
        simulation_runs: match scheme {
            FdScheme::Central => 2,
            FdScheme::Forward => 1,
        },
        gradient_stderr: num_se,
        wall_time_s: start.elapsed().as_secs_f64(),
        flags,
    };
    report.flag_alpha_range();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accreditation::StudyOptions;
    use crate::fixtures;
    use crate::oracle::exact_weight_batch;

    #[test]
    fn ipa_on_exact_batch() {
        let s = fixtures::toy3_with_candidate(0.9);
        let b = exact_weight_batch(&s).unwrap();
        let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
        let dirs = [
            PerturbationDirection::Perfect,
            PerturbationDirection::resource("cand"),
            PerturbationDirection::resource("g1"),
        ];
        let r = accredit_mri_ipa(&study, &dirs).unwrap();
        assert_eq!(r[0].alpha, 1.0);
        assert!((r[1].alpha - 0.9).abs() < 1e-12);
        assert_eq!(r.iter().map(|x| x.simulation_runs).sum::<usize>(), 1);
        assert_eq!(study.runs(), 1);
    }

    #[test]
    fn fd_falls_back_to_forward_for_zero_candidate() {
        let s = fixtures::toy3_with_candidate(0.9);
        let b = exact_weight_batch(&s).unwrap();
        let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
        let r = accredit_mri_fd(&study, &PerturbationDirection::resource("cand"), 0.5).unwrap();
        assert!((r.alpha - 0.9).abs() < 1e-12);
        assert_eq!(r.flags, vec!["forward_fd".to_string()]);
        assert_eq!(r.simulation_runs, 1);
        let p = accredit_mri_fd(&study, &PerturbationDirection::Perfect, 0.5).unwrap();
        assert_eq!(p.alpha, 1.0);
        assert_eq!(p.simulation_runs, 2);
    }

    #[test]
    fn storage_alone_earns_nothing() {
        let s = fixtures::synergy();
        let b = exact_weight_batch(&s).unwrap();
        let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
        let r = accredit_mri_fd(&study, &PerturbationDirection::resource("bess"), 5.0).unwrap();
        assert_eq!(r.alpha, 0.0);
        assert!(matches!(
            accredit_mri_ipa(&study, &[PerturbationDirection::resource("bess")]),
            Err(Error::IpaStorage)
        ));
    }
}
