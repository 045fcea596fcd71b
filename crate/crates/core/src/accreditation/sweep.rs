//! Step-size and load-scaling sweeps.

use serde::Serialize;

use super::{accredit, AccreditMethod, MethodParams, Study, StudyOptions};
use crate::error::{Error, Result};
use crate::scenario::ScenarioBatch;
use crate::system::{scale_load, PerturbationDirection, SystemSpec};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepSweepRow {
    pub delta_mw: f64,
    pub method: AccreditMethod,
    pub alpha: f64,
    pub alpha_stderr: f64,
    pub gradient_stderr: f64,
    pub l_c_mw: Option<f64>,
    pub iterations: usize,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoadSweepRow {
    pub multiplier: f64,
    pub baseline_metric: f64,
    pub alpha: Option<f64>,
    pub alpha_stderr: Option<f64>,
    pub adequate: bool,
    pub flags: Vec<String>,
}

/// Accreditation factor per step size and method. The step is the difference
/// step for MRI-FD and the candidate increment for ELCC methods; MRI-IPA does not
/// depend on it. Solver failures become flagged rows.
pub fn sweep_step_size(
    study: &Study<'_>,
    direction: &PerturbationDirection,
    deltas: &[f64],
    methods: &[AccreditMethod],
    tolerance_mw: f64,
) -> Result<Vec<StepSweepRow>> {
    if deltas.is_empty() {
        return Err(Error::Empty("delta list"));
    }
    if methods.is_empty() {
        return Err(Error::Empty("method list"));
    }
    if let Some(&d) = deltas.iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::NonPositiveStep(d));
    }
    if deltas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("deltas", "must be strictly ascending"));
    }
    let mut rows = Vec::with_capacity(deltas.len() * methods.len());
    for &delta in deltas {
        for &method in methods {
            let params = MethodParams {
                delta_mw: Some(delta),
                delta_x_mw: delta,
                tolerance_mw,
            };
            rows.push(match accredit(study, direction, method, &params) {
                Ok((r, _)) => StepSweepRow {
                    delta_mw: delta,
                    method,
                    alpha: r.alpha,
                    alpha_stderr: r.alpha_stderr,
                    gradient_stderr: r.gradient_stderr,
                    l_c_mw: r.l_c_mw,
                    iterations: r.iterations,
                    flags: r.flags,
                },
                Err(e) if !e.is_input_error() => StepSweepRow {
                    delta_mw: delta,
                    method,
                    alpha: f64::NAN,
                    alpha_stderr: f64::NAN,
                    gradient_stderr: f64::NAN,
                    l_c_mw: None,
                    iterations: 0,
                    flags: vec![format!("error: {e}")],
                },
                Err(e) => return Err(e),
            });
        }
    }
    Ok(rows)
}

/// Accreditation factor per load multiplier, all on the same batch. Multipliers
/// at which the baseline has no shortfall give rows flagged `adequate`.
pub fn sweep_load_scale(
    system: &SystemSpec,
    batch: &ScenarioBatch,
    multipliers: &[f64],
    direction: &PerturbationDirection,
    method: AccreditMethod,
    params: &MethodParams,
    options: StudyOptions,
) -> Result<Vec<LoadSweepRow>> {
    if multipliers.is_empty() {
        return Err(Error::Empty("multiplier list"));
    }
    let mut rows = Vec::with_capacity(multipliers.len());
    for &m in multipliers {
        let scaled = scale_load(system, m)?;
        let mut row = LoadSweepRow {
            multiplier: m,
            baseline_metric: 0.0,
            alpha: None,
            alpha_stderr: None,
            adequate: false,
            flags: vec![],
        };
        let study = match Study::new(&scaled, batch, options) {
            Ok(s) => s,
            Err(Error::AdequateBaseline(v)) => {
                row.baseline_metric = v;
                row.adequate = true;
                row.flags.push("adequate".into());
                rows.push(row);
                continue;
            }
            Err(e @ Error::NoisyBaseline { .. }) => {
                row.flags.push(format!("error: {e}"));
                rows.push(row);
                continue;
            }
            Err(e) => return Err(e),
        };
        row.baseline_metric = study.baseline().0;
        match accredit(&study, direction, method, params) {
            Ok((r, _)) => {
                row.alpha = Some(r.alpha);
                row.alpha_stderr = Some(r.alpha_stderr);
                row.flags = r.flags;
            }
            Err(e) if !e.is_input_error() => row.flags.push(format!("error: {e}")),
            Err(e) => return Err(e),
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::oracle::exact_weight_batch;

    #[test]
    fn perfect_resource_is_flat() {
        let s = fixtures::toy3();
        let b = exact_weight_batch(&s).unwrap();
        let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
        let rows = sweep_step_size(
            &study,
            &PerturbationDirection::Perfect,
            &[0.5, 2.0, 20.0],
            &[AccreditMethod::MriFd, AccreditMethod::MriIpa],
            0.01,
        )
        .unwrap();
        assert!(rows.iter().all(|r| r.alpha == 1.0));
    }

    #[test]
    fn rejects_bad_lists() {
        let s = fixtures::toy3();
        let b = exact_weight_batch(&s).unwrap();
        let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
        let dir = PerturbationDirection::Perfect;
        let m = [AccreditMethod::MriIpa];
        assert!(matches!(sweep_step_size(&study, &dir, &[], &m, 0.01), Err(Error::Empty(_))));
        assert!(sweep_step_size(&study, &dir, &[2.0, 1.0], &m, 0.01).is_err());
        assert!(matches!(sweep_step_size(&study, &dir, &[-1.0], &m, 0.01), Err(Error::NonPositiveStep(_))));
    }

    #[test]
    fn low_load_row_is_flagged_adequate() {
        let s = fixtures::firm_block(120.0);
        let b = exact_weight_batch(&s).unwrap();
        let rows = sweep_load_scale(
            &s,
            &b,
            &[0.8, 1.0],
            &PerturbationDirection::Perfect,
            AccreditMethod::MriIpa,
            &MethodParams::default(),
            StudyOptions::default(),
        )
        .unwrap();
        assert!(rows[0].adequate && rows[0].alpha.is_none());
        assert_eq!(rows[1].alpha, Some(1.0));
    }

    #[test]
    fn independent_candidate_ratio_is_load_invariant() {
        let s = fixtures::toy3_with_candidate(0.9);
        let b = exact_weight_batch(&s).unwrap();
        let rows = sweep_load_scale(
            &s,
            &b,
            &[0.97, 1.0, 1.03],
            &PerturbationDirection::resource("cand"),
            AccreditMethod::MriIpa,
            &MethodParams::default(),
            StudyOptions::default(),
        )
        .unwrap();
        for r in &rows {
            assert!((r.alpha.unwrap() - 0.9).abs() < 1e-12);
        }
    }
}
