//! Exact enumeration over thermal outage states for small fleets.
//!
//! Thermal units are independent across hours, so every hour has the same
//! outage-state distribution. Hour-additive metrics (UE, LOLH) follow from a
//! capacity-outage table evaluated once per distinct net-load value; LOLD
//! combines the per-hour probabilities within each day.

use std::collections::HashMap;

use serde::Serialize;

use crate::dispatch::Capacities;
use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::scenario::ScenarioBatch;
use crate::system::{GeneratorKind, PerturbationDirection, SystemSpec};

pub const MAX_ORACLE_UNITS: usize = 20;

/// Distance below which a state's margin counts as a tie with load.
pub const KINK_EPS_MW: f64 = 1e-9;

/// One row of the capacity-outage table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OutageState {
    pub capacity_mw: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactAssessment {
    pub eue: f64,
    pub lolh: f64,
    pub lold: f64,
    pub lolp_per_hour: Vec<f64>,
    pub eue_per_hour: Vec<f64>,
    /// Distinct thermal capacities with their probabilities, ascending.
    pub state_table: Vec<OutageState>,
}

impl ExactAssessment {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Ue => self.eue,
            Metric::Lolh => self.lolh,
            Metric::Lold => self.lold,
        }
    }
}

/// Enumerated thermal states: bit `j` of the index is set when thermal unit `j` is up.
struct StateSpace {
    thermal: Vec<usize>,
    probability: Vec<f64>,
}

impl StateSpace {
    fn new(system: &SystemSpec) -> Result<Self> {
        if !system.storages.is_empty() {
            return Err(Error::OracleUnsupported("systems with storage".into()));
        }
        Self::enumerate(system)
    }

    fn enumerate(system: &SystemSpec) -> Result<Self> {
        let thermal: Vec<usize> = system
            .generators
            .iter()
            .enumerate()
            .filter(|(_, g)| g.kind == GeneratorKind::Thermal)
            .map(|(i, _)| i)
            .collect();
        if thermal.len() > MAX_ORACLE_UNITS {
            return Err(Error::OracleUnsupported(format!(
                "{} thermal units (limit {MAX_ORACLE_UNITS})",
                thermal.len()
            )));
        }
        let mut probability = vec![1.0];
        for &g in &thermal {
            let f = system.generators[g].for_rate.unwrap_or(0.0);
            let mut next = Vec::with_capacity(probability.len() * 2);
            next.extend(probability.iter().map(|p| p * f));
            next.extend(probability.iter().map(|p| p * (1.0 - f)));
            probability = next;
        }
        Ok(Self { thermal, probability })
    }

    fn len(&self) -> usize {
        self.probability.len()
    }

    fn is_up(&self, state: usize, unit: usize) -> bool {
        state >> unit & 1 == 1
    }

    fn capacities(&self, caps: &Capacities) -> Vec<f64> {
        let mut cap = vec![0.0];
        for &g in &self.thermal {
            let mw = caps.generator_mw[g];
            let mut next = Vec::with_capacity(cap.len() * 2);
            next.extend_from_slice(&cap);
            next.extend(cap.iter().map(|c| c + mw));
            cap = next;
        }
        cap
    }
}

/// Net load each hour after deterministic (profile, perfect, firm, explicit) supply.
fn residual_load(system: &SystemSpec, caps: &Capacities) -> Vec<f64> {
    let offset = caps.firm_mw - caps.load_shift_mw;
    let mut supply = vec![0.0; system.horizon()];
    for (g, &mw) in system.generators.iter().zip(&caps.generator_mw) {
        match g.kind {
            GeneratorKind::Thermal => {}
            GeneratorKind::Profile => {
                let shape = system.profile_values(g).expect("validated");
                for (s, v) in supply.iter_mut().zip(shape) {
                    *s += mw * v;
                }
            }
            GeneratorKind::Perfect => supply.iter_mut().for_each(|s| *s += mw),
        }
    }
    if let Some(extra) = &caps.extra_hourly_mw {
        for (s, e) in supply.iter_mut().zip(extra) {
            *s += e;
        }
    }
    system
        .load_values()
        .iter()
        .zip(&supply)
        .map(|(l, s)| l - (s + offset))
        .collect()
}

fn outage_table(space: &StateSpace, caps: &Capacities) -> Vec<OutageState> {
    let mut rows: Vec<OutageState> = space
        .capacities(caps)
        .into_iter()
        .zip(&space.probability)
        .filter(|(_, &p)| p > 0.0)
        .map(|(c, &p)| OutageState {
            capacity_mw: c,
            probability: p,
        })
        .collect();
    rows.sort_by(|a, b| a.capacity_mw.total_cmp(&b.capacity_mw));
    let mut merged: Vec<OutageState> = Vec::with_capacity(rows.len());
    for r in rows {
        match merged.last_mut() {
            Some(last) if last.capacity_mw == r.capacity_mw => last.probability += r.probability,
            _ => merged.push(r),
        }
    }
    merged
}

/// Exact assessment of the system as specified.
pub fn oracle_assess(system: &SystemSpec) -> Result<ExactAssessment> {
    oracle_assess_at(system, &Capacities::baseline(system))
}

/// Exact assessment at perturbed capacities.
pub fn oracle_assess_at(system: &SystemSpec, caps: &Capacities) -> Result<ExactAssessment> {
    let space = StateSpace::new(system)?;
    let table = outage_table(&space, caps);
    let residual = residual_load(system, caps);
    let mut cache: HashMap<u64, (f64, f64)> = HashMap::new();
    let mut lolp_per_hour = Vec::with_capacity(residual.len());
    let mut eue_per_hour = Vec::with_capacity(residual.len());
    for r in &residual {
        let (lolp, eue) = *cache.entry(r.to_bits()).or_insert_with(|| {
            table
                .iter()
                .filter(|s| *r > s.capacity_mw)
                .fold((0.0, 0.0), |(p, e), s| (p + s.probability, e + s.probability * (r - s.capacity_mw)))
        });
        lolp_per_hour.push(lolp);
        eue_per_hour.push(eue);
    }
    let lold = lolp_per_hour
        .chunks(system.hours_per_day)
        .map(|day| 1.0 - day.iter().map(|p| 1.0 - p).product::<f64>())
        .sum();
    Ok(ExactAssessment {
        eue: eue_per_hour.iter().sum(),
        lolh: lolp_per_hour.iter().sum(),
        lold,
        lolp_per_hour,
        eue_per_hour,
        state_table: table,
    })
}

/// Exact expected metric at perturbed capacities.
pub fn oracle_metric(system: &SystemSpec, caps: &Capacities, metric: Metric) -> Result<f64> {
    Ok(oracle_assess_at(system, caps)?.get(metric))
}

/// Fails with `IrregularBaseline` if some positive-probability state ties load in some hour.
pub fn check_regular(system: &SystemSpec, caps: &Capacities) -> Result<()> {
    let space = StateSpace::new(system)?;
    let table = outage_table(&space, caps);
    for (hour, r) in residual_load(system, caps).iter().enumerate() {
        if let Some(s) = table.iter().find(|s| (r - s.capacity_mw).abs() < KINK_EPS_MW) {
            return Err(Error::IrregularBaseline {
                hour,
                probability: s.probability,
            });
        }
    }
    Ok(())
}

/// Per-hour weight of a direction: `hourly[t] + sum(share * up(unit))`.
struct DirectionTerms {
    hourly: Vec<f64>,
    thermal: Vec<(usize, f64)>,
}

fn direction_terms(system: &SystemSpec, space: &StateSpace, direction: &PerturbationDirection) -> Result<DirectionTerms> {
    let mut terms = DirectionTerms {
        hourly: vec![0.0; system.horizon()],
        thermal: vec![],
    };
    collect_terms(system, space, direction, 1.0, &mut terms)?;
    Ok(terms)
}

fn collect_terms(
    system: &SystemSpec,
    space: &StateSpace,
    direction: &PerturbationDirection,
    share: f64,
    out: &mut DirectionTerms,
) -> Result<()> {
    match direction {
        PerturbationDirection::Perfect => out.hourly.iter_mut().for_each(|h| *h += share),
        PerturbationDirection::ProfileVector { values } => {
            if values.len() != out.hourly.len() {
                return Err(Error::DimensionMismatch("direction length differs from horizon".into()));
            }
            for (h, v) in out.hourly.iter_mut().zip(values) {
                *h += share * v;
            }
        }
        PerturbationDirection::Resource { id } => {
            let g = system
                .generator_index(id)
                .ok_or_else(|| match system.storage_index(id) {
                    Some(_) => Error::OracleUnsupported("storage directions".into()),
                    None => Error::UnknownResource(id.clone()),
                })?;
            let gen = &system.generators[g];
            match gen.kind {
                GeneratorKind::Thermal => {
                    let unit = space.thermal.iter().position(|&t| t == g).expect("thermal unit enumerated");
                    out.thermal.push((unit, share));
                }
                GeneratorKind::Profile => {
                    let shape = system.profile_values(gen).expect("validated");
                    for (h, v) in out.hourly.iter_mut().zip(shape) {
                        *h += share * v;
                    }
                }
                GeneratorKind::Perfect => out.hourly.iter_mut().for_each(|h| *h += share),
            }
        }
        PerturbationDirection::StoragePolicy { .. } => {
            return Err(Error::OracleUnsupported("storage directions".into()));
        }
        PerturbationDirection::Portfolio { members } => {
            for m in members {
                collect_terms(system, space, &m.direction, share * m.share, out)?;
            }
        }
    }
    Ok(())
}

/// Exact directional derivative of expected UE at the baseline: `-sum_t E[v_t * S_t]`.
pub fn oracle_gradient(system: &SystemSpec, direction: &PerturbationDirection) -> Result<f64> {
    oracle_gradient_at(system, &Capacities::baseline(system), direction)
}

pub fn oracle_gradient_at(system: &SystemSpec, caps: &Capacities, direction: &PerturbationDirection) -> Result<f64> {
    let space = StateSpace::new(system)?;
    let terms = direction_terms(system, &space, direction)?;
    check_regular(system, caps)?;
    let capacity = space.capacities(caps);
    let residual = residual_load(system, caps);
    let mut total = 0.0;
    for (s, (&p, &cap)) in space.probability.iter().zip(&capacity).enumerate() {
        if p == 0.0 {
            continue;
        }
        let thermal: f64 = terms
            .thermal
            .iter()
            .filter(|(u, _)| space.is_up(s, *u))
            .map(|(_, w)| w)
            .sum();
        let exposure: f64 = residual
            .iter()
            .zip(&terms.hourly)
            .filter(|(r, _)| **r > cap)
            .map(|(_, h)| h + thermal)
            .sum();
        total += p * exposure;
    }
    Ok(-total)
}

/// Exact ELCC of a candidate increment under both root formulations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleElcc {
    /// Root of the firm-capacity form: M(x + c) = M(x + dx * A).
    pub l_c: f64,
    pub alpha: f64,
    /// Root of the load-shift form: M(x + dx * A, L + c) = M(x, L).
    pub l_c_load_shift: f64,
    pub forms_agree: bool,
    pub iterations: usize,
}

/// Root of a nonincreasing `f` on `[lo, hi]` with `f(lo) >= 0 >= f(hi)`. Bisects to
/// `tol`, then solves the linear interpolant on the final bracket (exact where
/// the metric is linear, which it is between breakpoints).
fn bracket_root<F: FnMut(f64) -> Result<f64>>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, usize)> {
    let mut f_lo = f(lo)?;
    if f_lo <= 0.0 {
        return Ok((lo, 0));
    }
    let mut f_hi = f(hi)?;
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        iterations += 1;
        if f_mid > 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    let root = if f_hi >= 0.0 {
        hi
    } else {
        (lo - f_lo * (hi - lo) / (f_hi - f_lo)).clamp(lo, hi)
    };
    Ok((root, iterations))
}

pub fn oracle_elcc(
    system: &SystemSpec,
    direction: &PerturbationDirection,
    delta_x: f64,
    tolerance_mw: f64,
) -> Result<OracleElcc> {
    if !(delta_x > 0.0) {
        return Err(Error::NonPositiveStep(delta_x));
    }
    if !(tolerance_mw > 0.0) {
        return Err(Error::invalid("tolerance_mw", "must be positive"));
    }
    direction.validate(system)?;
    let base = Capacities::baseline(system);
    let m0 = oracle_metric(system, &base, Metric::Ue)?;
    if m0 <= 0.0 {
        return Err(Error::AdequateBaseline(m0));
    }
    let with_candidate = base.perturbed(system, direction, delta_x)?;
    let target = oracle_metric(system, &with_candidate, Metric::Ue)?;
    let (l_c, iterations) = bracket_root(
        |c| Ok(oracle_metric(system, &base.clone().with_firm(c), Metric::Ue)? - target),
        0.0,
        delta_x,
        tolerance_mw,
    )?;
    let (l_c_load_shift, _) = bracket_root(
        |c| Ok(m0 - oracle_metric(system, &with_candidate.clone().with_load_shift(c), Metric::Ue)?),
        0.0,
        delta_x,
        tolerance_mw,
    )?;
    Ok(OracleElcc {
        l_c,
        alpha: l_c / delta_x,
        l_c_load_shift,
        forms_agree: (l_c - l_c_load_shift).abs() <= tolerance_mw,
        iterations,
    })
}

/// Pseudo-batch with one scenario per thermal outage state, held for the whole
/// horizon, weighted by its probability. Exact for hour-additive metrics (UE,
/// LOLH) and their gradients; not for LOLD, whose day structure needs
/// independent hours. Storage is allowed, but dispatch then sees each outage
/// persist for the whole horizon, so only storage-free systems are exact.
pub fn exact_weight_batch(system: &SystemSpec) -> Result<ScenarioBatch> {
    let space = StateSpace::enumerate(system)?;
    let horizon = system.horizon();
    let k = space.thermal.len();
    let states: Vec<usize> = (0..space.len()).filter(|&s| space.probability[s] > 0.0).collect();
    let entries = states.len() * k * horizon;
    if entries > crate::scenario::MAX_BATCH_ENTRIES {
        return Err(Error::OracleUnsupported(format!("{entries} pseudo-batch entries")));
    }
    let mut flags = Vec::with_capacity(entries);
    for &s in &states {
        for u in 0..k {
            let f = space.is_up(s, u) as u8;
            flags.extend(std::iter::repeat_n(f, horizon));
        }
    }
    let ids = space.thermal.iter().map(|&g| system.generators[g].id.clone()).collect();
    let weights = states.iter().map(|&s| space.probability[s]).collect();
    ScenarioBatch::from_parts(horizon, ids, flags, Some(weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::system::GeneratorSpec;

    #[test]
    fn perfect_unit_is_adequate() {
        let s = SystemSpec::new(vec![GeneratorSpec::perfect("p", 100.0)], vec![], vec![], vec![50.0; 24]).unwrap();
        let a = oracle_assess(&s).unwrap();
        assert_eq!(a.eue, 0.0);
        assert!(a.lolp_per_hour.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn two_state_unit() {
        let s = SystemSpec::new(vec![GeneratorSpec::thermal("t", 100.0, 0.1)], vec![], vec![], vec![80.0]).unwrap();
        let a = oracle_assess(&s).unwrap();
        assert!((a.eue - 8.0).abs() < 1e-12);
        assert!((a.lolp_per_hour[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn toy3_matches_hand_enumeration() {
        // g1 down alone or g2+g3 down: short 49; g1 and one 50 MW down: short 99; all down: 149
        let p49 = 0.1 * 0.95 * 0.95 + 0.9 * 0.05 * 0.05;
        let p99 = 2.0 * 0.1 * 0.05 * 0.95;
        let p149 = 0.1 * 0.05 * 0.05;
        let a = oracle_assess(&fixtures::toy3()).unwrap();
        assert!((a.lolp_per_hour[0] - (p49 + p99 + p149)).abs() < 1e-12);
        assert!((a.eue_per_hour[0] - (49.0 * p49 + 99.0 * p99 + 149.0 * p149)).abs() < 1e-12);
        assert!((a.eue - 132.246).abs() < 1e-9);
        assert!((a.lolh - 2.454).abs() < 1e-9);
        let total: f64 = a.state_table.iter().map(|s| s.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn toy3_gradients() {
        let s = fixtures::toy3_with_candidate(0.9);
        let perfect = oracle_gradient(&s, &PerturbationDirection::Perfect).unwrap();
        let cand = oracle_gradient(&s, &PerturbationDirection::resource("cand")).unwrap();
        assert!((perfect + 2.454).abs() < 1e-9);
        assert!((cand + 2.2086).abs() < 1e-9);
        let zero = PerturbationDirection::ProfileVector { values: vec![0.0; 24] };
        assert_eq!(oracle_gradient(&s, &zero).unwrap(), 0.0);
    }

    #[test]
    fn kink_is_reported() {
        let err = oracle_gradient(&fixtures::toy3_with_load(150.0), &PerturbationDirection::Perfect).unwrap_err();
        assert!(matches!(err, Error::IrregularBaseline { .. }));
    }

    #[test]
    fn storage_is_unsupported() {
        assert!(matches!(oracle_assess(&fixtures::synergy()), Err(Error::OracleUnsupported(_))));
    }

    #[test]
    fn elcc_examples() {
        let s = fixtures::toy3_with_candidate(0.9);
        let perfect = oracle_elcc(&s, &PerturbationDirection::Perfect, 10.0, 0.01).unwrap();
        assert!((perfect.l_c - 10.0).abs() < 1e-9);
        let cand = oracle_elcc(&s, &PerturbationDirection::resource("cand"), 10.0, 0.01).unwrap();
        assert!((cand.l_c - 9.0).abs() < 1e-9);
        assert_eq!(cand.iterations, 10);
        let null = oracle_elcc(&fixtures::toy3_with_candidate(0.0), &PerturbationDirection::resource("cand"), 10.0, 0.01).unwrap();
        assert_eq!(null.l_c, 0.0);
        assert!(matches!(
            oracle_elcc(&fixtures::firm_block(90.0), &PerturbationDirection::Perfect, 10.0, 0.01),
            Err(Error::AdequateBaseline(_))
        ));
    }

    #[test]
    fn load_shift_form_diverges_outside_linear_region() {
        let s = fixtures::toy3_with_candidate(0.9);
        let e = oracle_elcc(&s, &PerturbationDirection::resource("cand"), 10.0, 1e-6).unwrap();
        assert!((e.l_c_load_shift - 8.3827).abs() < 1e-3);
        assert!(!e.forms_agree);
        let small = oracle_elcc(&s, &PerturbationDirection::resource("cand"), 0.5, 1e-6).unwrap();
        assert!(small.forms_agree);
    }

    #[test]
    fn pseudo_batch_enumerates_positive_states() {
        let b = exact_weight_batch(&fixtures::toy3_with_candidate(0.9)).unwrap();
        assert_eq!(b.n(), 16);
        let total: f64 = b.weights().unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(exact_weight_batch(&fixtures::toy3_with_candidate(0.0)).unwrap().n(), 8);
    }
}
