//! Marginal ELCC by bracketed root finding on the shared batch.

use std::time::Instant;

use serde::Serialize;

use super::{AccreditMethod, AccreditationReport, Study};
use crate::dispatch::Capacities;
use crate::error::{Error, Result};
use crate::system::PerturbationDirection;

/// How the ELCC residual `g(c)` is formed; both are decreasing in `c` with the same `g(0)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ElccForm {
    /// `g(c) = M(x + c) - M(x + dx * A)`: equivalent firm capacity.
    #[default]
    FirmCapacity,
    /// `g(c) = M(x) - M(x + dx * A, L + c)`: largest added constant load.
    LoadShift,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Endpoint,
    Bisection,
    Secant,
    Newton,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceStep {
    pub k: usize,
    pub kind: StepKind,
    pub c_mw: f64,
    pub g: f64,
    pub g_stderr: f64,
    pub lo_mw: f64,
    pub hi_mw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceReason {
    BracketWidth,
    Residual,
    NullResource,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverTrace {
    pub resource_id: String,
    pub method: AccreditMethod,
    pub steps: Vec<TraceStep>,
    pub reason: ConvergenceReason,
}

#[derive(Clone, Copy, Debug)]
struct Point {
    c: f64,
    g: f64,
    se: f64,
    /// `g'(c) = -E[LOLH]` at the evaluated point, in either form (Newton only).
    slope: f64,
}

struct Residual<'s, 'a> {
    study: &'s Study<'a>,
    form: ElccForm,
    candidate: Capacities,
    /// Per-scenario `M(x + dx * A)` for the firm form, `M(x)` for the load form.
    anchor: Vec<f64>,
    with_slope: bool,
    runs: usize,
}

impl Residual<'_, '_> {
    fn caps(&self, c: f64) -> Capacities {
        match self.form {
            ElccForm::FirmCapacity => self.study.base().clone().with_firm(c),
            ElccForm::LoadShift => self.candidate.clone().with_load_shift(c),
        }
    }

    /// Per-scenario metric and minus expected shortage hours at `caps` (one run).
    fn simulate(&mut self, caps: &Capacities) -> Result<(Vec<f64>, f64)> {
        self.runs += 1;
        let sim = self.study.simulator();
        if !self.with_slope {
            return Ok((self.study.evaluate(caps)?, f64::NAN));
        }
        let metrics = sim.surface(caps)?.scenario_metrics();
        let lolh: Vec<f64> = metrics.iter().map(|m| m.lolh).collect();
        let values = metrics.iter().map(|m| m.get(self.study.metric())).collect();
        Ok((values, -self.study.summarize(&lolh)?.0))
    }

    fn point(&mut self, c: f64, values: &[f64], slope: f64) -> Result<Point> {
        let g: Vec<f64> = match self.form {
            ElccForm::FirmCapacity => values.iter().zip(&self.anchor).map(|(m, a)| m - a).collect(),
            ElccForm::LoadShift => self.anchor.iter().zip(values).map(|(a, m)| a - m).collect(),
        };
        let (g, se) = self.study.summarize(&g)?;
        Ok(Point { c, g, se, slope })
    }

    fn eval(&mut self, c: f64) -> Result<Point> {
        let caps = self.caps(c);
        let (values, slope) = self.simulate(&caps)?;
        self.point(c, &values, slope)
    }
}

/// ELCC accreditation on the firm-capacity form.
pub fn elcc_solve(
    study: &Study<'_>,
    direction: &PerturbationDirection,
    delta_x: f64,
    method: AccreditMethod,
    tolerance_mw: f64,
) -> Result<(AccreditationReport, SolverTrace)> {
    elcc_solve_with(study, direction, delta_x, method, tolerance_mw, ElccForm::FirmCapacity)
}

/// Finds `L_c` in `[0, dx]` with `g(L_c) = 0` and reports `alpha = L_c / dx`.
///
/// Runs: one for the candidate at `dx`, one for the upper bracket end, one per
/// iteration; `g(0)` reuses the study baseline where the form allows it.
pub fn elcc_solve_with(
    study: &Study<'_>,
    direction: &PerturbationDirection,
    delta_x: f64,
    method: AccreditMethod,
    tolerance_mw: f64,
    form: ElccForm,
) -> Result<(AccreditationReport, SolverTrace)> {
    if !method.is_elcc() {
        return Err(Error::invalid("method", format!("{method} is not an ELCC method")));
    }
    if !(delta_x > 0.0) {
        return Err(Error::NonPositiveStep(delta_x));
    }
    if !(tolerance_mw > 0.0) {
        return Err(Error::invalid("tolerance_mw", "must be positive"));
    }
    let newton = method == AccreditMethod::ElccNewtonIpa;
    if newton {
        study.require_ue("elcc_newton_ipa")?;
    }
    direction.validate(study.system())?;
    let start = Instant::now();
    let label = direction.label();
    let candidate = study.base().perturbed(study.system(), direction, delta_x)?;

    let mut r = Residual {
        study,
        form,
        candidate: candidate.clone(),
        anchor: vec![],
        with_slope: newton,
        runs: 0,
    };
    let (cand_values, cand_slope) = r.simulate(&candidate)?;
    let base_slope = if newton {
        -study.summarize(&study.baseline_metrics().iter().map(|m| m.lolh).collect::<Vec<_>>())?.0
    } else {
        f64::NAN
    };
    let p0 = match form {
        ElccForm::FirmCapacity => {
            r.anchor = cand_values;
            r.point(0.0, study.baseline_values(), base_slope)?
        }
        ElccForm::LoadShift => {
            r.anchor = study.baseline_values().to_vec();
            r.point(0.0, &cand_values, cand_slope)?
        }
    };
    let p_hi = r.eval(delta_x)?;

    let mut steps = vec![
        step(0, StepKind::Endpoint, &p0, 0.0, delta_x),
        step(0, StepKind::Endpoint, &p_hi, 0.0, delta_x),
    ];
    let finish = |l_c: f64, last: &Point, iterations: usize, runs: usize, reason, steps, slope: f64| {
        let mut report = AccreditationReport {
            resource_id: label.clone(),
            method,
            alpha: l_c / delta_x,
            alpha_stderr: if slope > 0.0 { last.se / slope / delta_x } else { 0.0 },
            l_c_mw: Some(l_c),
            delta_x_mw: Some(delta_x),
            iterations,
            simulation_runs: runs,
            gradient_stderr: last.se,
            wall_time_s: start.elapsed().as_secs_f64(),
            flags: vec![],
        };
        if reason == ConvergenceReason::MaxIterations {
            report.flags.push("max_iterations".into());
        }
        report.flag_alpha_range();
        let trace = SolverTrace {
            resource_id: label.clone(),
            method,
            steps,
            reason,
        };
        (report, trace)
    };

    if p0.g == 0.0 {
        return Ok(finish(0.0, &p0, 0, r.runs, ConvergenceReason::NullResource, steps, 0.0));
    }
    if p0.g <= 2.0 * p0.se {
        return Err(Error::IndistinguishableFromZero(label.clone()));
    }
    if p_hi.g > 2.0 * p_hi.se {
        return Err(Error::NoSignChange(format!(
            "'{label}': g({delta_x}) = {} > 2 se = {}",
            p_hi.g,
            2.0 * p_hi.se
        )));
    }

    // average |g'| over the bracket, so the residual test is in MW
    let slope = (p0.g - p_hi.g) / delta_x;
    let converged = |p: &Point| p.g.abs() <= (tolerance_mw * slope.abs()).max(2.0 * p.se);
    let max_iter = study.options().max_iterations;
    let (mut lo, mut hi) = (0.0_f64, delta_x);
    let mut iterations = 0;

    if method == AccreditMethod::ElccBisection {
        let mut last = p_hi;
        while hi - lo > tolerance_mw && iterations < max_iter {
            let mid = 0.5 * (lo + hi);
            let p = r.eval(mid)?;
            iterations += 1;
            if p.g > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            steps.push(step(iterations, StepKind::Bisection, &p, lo, hi));
            last = p;
        }
        let reason = if hi - lo <= tolerance_mw {
            ConvergenceReason::BracketWidth
        } else {
            ConvergenceReason::MaxIterations
        };
        return Ok(finish(0.5 * (lo + hi), &last, iterations, r.runs, reason, steps, slope));
    }

    if converged(&p_hi) {
        return Ok(finish(delta_x, &p_hi, 0, r.runs, ConvergenceReason::Residual, steps, slope));
    }
    let (mut prev, mut cur) = (p0, p_hi);
    loop {
        if iterations >= max_iter {
            return Ok(finish(cur.c, &cur, iterations, r.runs, ConvergenceReason::MaxIterations, steps, slope));
        }
        let (proposal, kind) = if newton {
            (cur.c - cur.g / cur.slope, StepKind::Newton)
        } else {
            let denom = cur.g - prev.g;
            (cur.c - cur.g * (cur.c - prev.c) / denom, StepKind::Secant)
        };
        let (c, kind) = if proposal.is_finite() && proposal > lo && proposal < hi {
            (proposal, kind)
        } else {
            (0.5 * (lo + hi), StepKind::Bisection)
        };
        let p = r.eval(c)?;
        iterations += 1;
        if p.g > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        steps.push(step(iterations, kind, &p, lo, hi));
        if converged(&p) {
            return Ok(finish(c, &p, iterations, r.runs, ConvergenceReason::Residual, steps, slope));
        }
        if hi - lo <= tolerance_mw {
            return Ok(finish(0.5 * (lo + hi), &p, iterations, r.runs, ConvergenceReason::BracketWidth, steps, slope));
        }
        if newton {
            cur = p;
        } else {
            prev = cur;
            cur = p;
        }
    }
}

fn step(k: usize, kind: StepKind, p: &Point, lo: f64, hi: f64) -> TraceStep {
    TraceStep {
        k,
        kind,
        c_mw: p.c,
        g: p.g,
        g_stderr: p.se,
        lo_mw: lo,
        hi_mw: hi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accreditation::StudyOptions;
    use crate::fixtures;
    use crate::oracle::exact_weight_batch;

    #[test]
    fn candidate_on_exact_batch() {
        let s = fixtures::toy3_with_candidate(0.9);
        let b = exact_weight_batch(&s).unwrap();
        let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
        let dir = PerturbationDirection::resource("cand");
        let (bis, trace) = elcc_solve(&study, &dir, 10.0, AccreditMethod::ElccBisection, 0.01).unwrap();
        assert_eq!(bis.iterations, 10);
        assert_eq!(bis.simulation_runs, 12);
        assert!((bis.l_c_mw.unwrap() - 9.0).abs() <= 0.005);
        assert_eq!(trace.reason, ConvergenceReason::BracketWidth);
        for m in [AccreditMethod::ElccSecant, AccreditMethod::ElccNewtonIpa] {
            let (r, _) = elcc_solve(&study, &dir, 10.0, m, 0.01).unwrap();
            assert!(r.iterations <= 5, "{m}: {}", r.iterations);
            assert!((r.alpha - 0.9).abs() < 1e-9, "{m}: {}", r.alpha);
        }
    }

    #[test]
    fn perfect_resource_credits_fully() {
        let s = fixtures::toy3();
        let b = exact_weight_batch(&s).unwrap();
        let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
        for m in [AccreditMethod::ElccBisection, AccreditMethod::ElccSecant, AccreditMethod::ElccNewtonIpa] {
            let (r, _) = elcc_solve(&study, &PerturbationDirection::Perfect, 10.0, m, 0.01).unwrap();
            assert!((r.l_c_mw.unwrap() - 10.0).abs() <= 0.01, "{m}");
        }
    }

    #[test]
    fn null_resource_has_zero_credit() {
        let s = fixtures::toy3_with_candidate(0.0);
        let b = exact_weight_batch(&s).unwrap();
        let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
        let (r, t) = elcc_solve(&study, &PerturbationDirection::resource("cand"), 10.0, AccreditMethod::ElccSecant, 0.01).unwrap();
        assert_eq!(r.alpha, 0.0);
        assert_eq!(t.reason, ConvergenceReason::NullResource);
    }

    #[test]
    fn both_forms_agree_bitwise_in_linear_region() {
        let s = fixtures::toy3_with_candidate(0.9);
        let b = exact_weight_batch(&s).unwrap();
        let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
        let dir = PerturbationDirection::resource("cand");
        let (firm, _) = elcc_solve_with(&study, &dir, 0.5, AccreditMethod::ElccBisection, 0.001, ElccForm::FirmCapacity).unwrap();
        let (load, _) = elcc_solve_with(&study, &dir, 0.5, AccreditMethod::ElccBisection, 0.001, ElccForm::LoadShift).unwrap();
        assert_eq!(firm.l_c_mw.unwrap().to_bits(), load.l_c_mw.unwrap().to_bits());
    }
}
