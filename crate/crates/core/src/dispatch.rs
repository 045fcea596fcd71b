//! Scenario dispatch: available capacity, greedy storage, hourly shortfall.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Parallelism};
use crate::metrics::ScenarioMetrics;
use crate::scenario::ScenarioBatch;
use crate::system::{GeneratorKind, PerturbationDirection, StorageSpec, SystemSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DispatchPolicy {
    /// Chronological and myopic: discharge into any deficit, charge from any surplus.
    #[default]
    GreedyShortfall,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StorageUnit {
    pub power_mw: f64,
    pub energy_mwh: f64,
    pub efficiency_charge: f64,
    pub efficiency_discharge: f64,
    pub initial_soc_fraction: f64,
}

impl From<&StorageSpec> for StorageUnit {
    fn from(s: &StorageSpec) -> Self {
        Self {
            power_mw: s.power_mw,
            energy_mwh: s.energy_mwh,
            efficiency_charge: s.efficiency_charge,
            efficiency_discharge: s.efficiency_discharge,
            initial_soc_fraction: s.initial_soc_fraction,
        }
    }
}

/// Installed capacities at which a system is evaluated: the baseline fleet plus
/// any perturbation. `firm_mw` is a perfect resource (x̂ + c·1) and
/// `load_shift_mw` a constant load addition (L + c·1).
#[derive(Clone, Debug, PartialEq)]
pub struct Capacities {
    pub generator_mw: Vec<f64>,
    pub storage: Vec<StorageUnit>,
    pub firm_mw: f64,
    pub load_shift_mw: f64,
    pub extra_hourly_mw: Option<Vec<f64>>,
}

impl Capacities {
    pub fn baseline(system: &SystemSpec) -> Self {
        Self {
            generator_mw: system.generators.iter().map(|g| g.nameplate_mw).collect(),
            storage: system.storages.iter().map(StorageUnit::from).collect(),
            firm_mw: 0.0,
            load_shift_mw: 0.0,
            extra_hourly_mw: None,
        }
    }

    pub fn with_firm(mut self, mw: f64) -> Self {
        self.firm_mw += mw;
        self
    }

    pub fn with_load_shift(mut self, mw: f64) -> Self {
        self.load_shift_mw += mw;
        self
    }

    /// Moves `amount` MW along `direction`. A negative amount that would drive a
    /// generator or storage unit below zero is an error; perfect and explicit
    /// profile directions act on the net margin and accept any sign.
    pub fn perturbed(&self, system: &SystemSpec, direction: &PerturbationDirection, amount: f64) -> Result<Self> {
        let mut next = self.clone();
        next.apply(system, direction, amount)?;
        Ok(next)
    }

    fn apply(&mut self, system: &SystemSpec, direction: &PerturbationDirection, amount: f64) -> Result<()> {
        match direction {
            PerturbationDirection::Perfect => self.firm_mw += amount,
            PerturbationDirection::ProfileVector { values } => {
                if values.len() != system.horizon() {
                    return Err(Error::DimensionMismatch(format!(
                        "direction has {} hours, system has {}",
                        values.len(),
                        system.horizon()
                    )));
                }
                let extra = self
                    .extra_hourly_mw
                    .get_or_insert_with(|| vec![0.0; system.horizon()]);
                for (e, v) in extra.iter_mut().zip(values) {
                    *e += amount * v;
                }
            }
            PerturbationDirection::Resource { id } => {
                if let Some(g) = system.generator_index(id) {
                    let mw = self.generator_mw[g] + amount;
                    if mw < 0.0 {
                        return Err(Error::NegativeCapacity {
                            resource: id.clone(),
                            capacity_mw: mw,
                        });
                    }
                    self.generator_mw[g] = mw;
                } else if system.storage_index(id).is_some() {
                    self.apply(system, &PerturbationDirection::storage(id.clone()), amount)?;
                } else {
                    return Err(Error::UnknownResource(id.clone()));
                }
            }
            PerturbationDirection::StoragePolicy { storage_id } => {
                let s = system
                    .storage_index(storage_id)
                    .ok_or_else(|| Error::UnknownResource(storage_id.clone()))?;
                let duration = system.storages[s].duration().ok_or_else(|| {
                    Error::invalid(format!("storages[{s}].duration_hours"), "required to perturb zero-power storage")
                })?;
                let unit = &mut self.storage[s];
                let power = unit.power_mw + amount;
                if power < 0.0 {
                    return Err(Error::NegativeCapacity {
                        resource: storage_id.clone(),
                        capacity_mw: power,
                    });
                }
                unit.power_mw = power;
                unit.energy_mwh = (unit.energy_mwh + amount * duration).max(0.0);
            }
            PerturbationDirection::Portfolio { members } => {
                if members.is_empty() {
                    return Err(Error::Empty("portfolio"));
                }
                for m in members {
                    self.apply(system, &m.direction, amount * m.share)?;
                }
            }
        }
        Ok(())
    }
}

/// One scenario's dispatch result.
#[derive(Clone, Debug, PartialEq)]
pub struct DispatchOutcome {
    pub shortfall: Vec<f64>,
    /// Total state of charge at the end of each hour; empty without storage.
    pub soc: Vec<f64>,
}

/// Core greedy kernel. `available` is x̂ per hour, storages are dispatched in order.
/// Writes hourly shortfall and, if given, end-of-hour total state of charge.
pub fn dispatch_hours(
    available: &[f64],
    load: &[f64],
    storages: &[StorageUnit],
    _policy: DispatchPolicy,
    shortfall: &mut [f64],
    mut soc_trace: Option<&mut [f64]>,
) {
    let mut soc: Vec<f64> = storages
        .iter()
        .map(|u| u.energy_mwh * u.initial_soc_fraction)
        .collect();
    for t in 0..load.len() {
        let mut net = available[t] - load[t];
        for (u, s) in storages.iter().zip(soc.iter_mut()) {
            if net < 0.0 {
                let d = (-net).min(u.power_mw).min(*s * u.efficiency_discharge);
                *s = (*s - d / u.efficiency_discharge).max(0.0);
                net += d;
            } else if net > 0.0 {
                let room = ((u.energy_mwh - *s) / u.efficiency_charge).max(0.0);
                let c = net.min(u.power_mw).min(room);
                *s = (*s + c * u.efficiency_charge).min(u.energy_mwh);
                net -= c;
            }
        }
        shortfall[t] = if net < 0.0 { -net } else { 0.0 };
        if let Some(trace) = soc_trace.as_deref_mut() {
            trace[t] = soc.iter().sum();
        }
    }
}

/// Dispatches one scenario given its generators x hours availability matrix.
pub fn dispatch_scenario(
    system: &SystemSpec,
    capacities: &Capacities,
    availability: &[Vec<f64>],
    policy: DispatchPolicy,
) -> Result<DispatchOutcome> {
    let horizon = system.horizon();
    if availability.len() != system.generators.len() || availability.iter().any(|a| a.len() != horizon) {
        return Err(Error::DimensionMismatch(format!(
            "availability must be {} generators x {horizon} hours",
            system.generators.len()
        )));
    }
    if capacities.generator_mw.len() != system.generators.len() || capacities.storage.len() != system.storages.len() {
        return Err(Error::DimensionMismatch("capacities do not match the system fleet".into()));
    }
    let mut avail = vec![0.0; horizon];
    for (mw, a) in capacities.generator_mw.iter().zip(availability) {
        for (x, v) in avail.iter_mut().zip(a) {
            *x += mw * v;
        }
    }
    let (avail, load) = finish_margin(system, capacities, avail);
    let mut out = DispatchOutcome {
        shortfall: vec![0.0; horizon],
        soc: if capacities.storage.is_empty() { vec![] } else { vec![0.0; horizon] },
    };
    let trace = (!capacities.storage.is_empty()).then_some(out.soc.as_mut_slice());
    dispatch_hours(&avail, &load, &capacities.storage, policy, &mut out.shortfall, trace);
    Ok(out)
}

/// Adds firm and explicit hourly capacity and folds the load shift into the margin.
/// `firm_mw - load_shift_mw` is formed first, so equal firm and load shifts cancel exactly.
fn finish_margin(system: &SystemSpec, caps: &Capacities, mut avail: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let offset = caps.firm_mw - caps.load_shift_mw;
    if let Some(extra) = &caps.extra_hourly_mw {
        for (x, e) in avail.iter_mut().zip(extra) {
            *x += e;
        }
    }
    if offset != 0.0 {
        for x in avail.iter_mut() {
            *x += offset;
        }
    }
    (avail, system.load_values().to_vec())
}

/// Per-scenario, per-hour shortfall after dispatch.
#[derive(Clone, Debug, PartialEq)]
pub struct ShortfallSurface {
    n: usize,
    horizon: usize,
    hours_per_day: usize,
    shortfall: Vec<f64>,
    soc: Option<Vec<f64>>,
}

impl ShortfallSurface {
    pub fn from_rows(rows: Vec<Vec<f64>>, hours_per_day: usize) -> Result<Self> {
        let horizon = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != horizon) || horizon == 0 || !horizon.is_multiple_of(hours_per_day) {
            return Err(Error::DimensionMismatch("surface rows must share a horizon divisible by hours_per_day".into()));
        }
        if rows.iter().flatten().any(|&s| !(s >= 0.0)) {
            return Err(Error::invalid("shortfall", "must be nonnegative"));
        }
        Ok(Self {
            n: rows.len(),
            horizon,
            hours_per_day,
            shortfall: rows.into_iter().flatten().collect(),
            soc: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn shortfall(&self, scenario: usize) -> &[f64] {
        &self.shortfall[scenario * self.horizon..(scenario + 1) * self.horizon]
    }

    /// S_τω: strict shortage, `L > x̂` after dispatch.
    pub fn indicator(&self, scenario: usize, hour: usize) -> bool {
        self.shortfall[scenario * self.horizon + hour] > 0.0
    }

    pub fn soc(&self, scenario: usize) -> Option<&[f64]> {
        self.soc
            .as_ref()
            .map(|s| &s[scenario * self.horizon..(scenario + 1) * self.horizon])
    }

    pub fn scenario_metrics(&self) -> Vec<ScenarioMetrics> {
        (0..self.n)
            .map(|i| ScenarioMetrics::from_shortfall(self.shortfall(i), self.hours_per_day))
            .collect()
    }
}

/// A system bound to a scenario batch. Every full-batch evaluation counts as one
/// simulation run.
pub struct Simulator<'a> {
    system: &'a SystemSpec,
    batch: &'a ScenarioBatch,
    columns: Vec<Option<usize>>,
    policy: DispatchPolicy,
    par: Parallelism,
    runs: AtomicUsize,
}

impl<'a> Simulator<'a> {
    pub fn new(system: &'a SystemSpec, batch: &'a ScenarioBatch) -> Result<Self> {
        Ok(Self {
            system,
            batch,
            columns: batch.columns_for(system)?,
            policy: DispatchPolicy::default(),
            par: Parallelism::default(),
            runs: AtomicUsize::new(0),
        })
    }

    pub fn with_parallelism(mut self, par: Parallelism) -> Self {
        self.par = par;
        self
    }

    pub fn with_policy(mut self, policy: DispatchPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn system(&self) -> &'a SystemSpec {
        self.system
    }

    pub fn batch(&self) -> &'a ScenarioBatch {
        self.batch
    }

    pub fn parallelism(&self) -> Parallelism {
        self.par
    }

    /// Number of full-batch simulations performed so far.
    pub fn runs(&self) -> usize {
        self.runs.load(Ordering::Relaxed)
    }

    fn check(&self, caps: &Capacities) -> Result<()> {
        if caps.generator_mw.len() != self.system.generators.len() || caps.storage.len() != self.system.storages.len() {
            return Err(Error::DimensionMismatch("capacities do not match the system fleet".into()));
        }
        Ok(())
    }

    fn available(&self, caps: &Capacities, scenario: usize, out: &mut [f64]) {
        out.fill(0.0);
        for ((g, &mw), col) in self.system.generators.iter().zip(&caps.generator_mw).zip(&self.columns) {
            if mw == 0.0 {
                continue;
            }
            match (g.kind, col) {
                (GeneratorKind::Thermal, Some(c)) => {
                    for (x, &f) in out.iter_mut().zip(self.batch.unit_flags(scenario, *c)) {
                        if f != 0 {
                            *x += mw;
                        }
                    }
                }
                (GeneratorKind::Profile, _) => {
                    let shape = self.system.profile_values(g).expect("validated");
                    for (x, v) in out.iter_mut().zip(shape) {
                        *x += mw * v;
                    }
                }
                _ => {
                    for x in out.iter_mut() {
                        *x += mw;
                    }
                }
            }
        }
    }

    fn scenario(&self, caps: &Capacities, scenario: usize, shortfall: &mut [f64], soc: Option<&mut [f64]>) {
        let mut avail = vec![0.0; self.system.horizon()];
        self.available(caps, scenario, &mut avail);
        let (avail, load) = finish_margin(self.system, caps, avail);
        dispatch_hours(&avail, &load, &caps.storage, self.policy, shortfall, soc);
    }

    /// Per-scenario metrics at the given capacities (one simulation run).
    pub fn run(&self, caps: &Capacities) -> Result<Vec<ScenarioMetrics>> {
        self.check(caps)?;
        self.runs.fetch_add(1, Ordering::Relaxed);
        let horizon = self.system.horizon();
        let hpd = self.system.hours_per_day;
        Ok(map_indexed(self.batch.n(), self.par, |i| {
            let mut sf = vec![0.0; horizon];
            self.scenario(caps, i, &mut sf, None);
            ScenarioMetrics::from_shortfall(&sf, hpd)
        }))
    }

    /// Full shortfall surface at the given capacities (one simulation run).
    pub fn surface(&self, caps: &Capacities) -> Result<ShortfallSurface> {
        self.check(caps)?;
        self.runs.fetch_add(1, Ordering::Relaxed);
        let horizon = self.system.horizon();
        let has_storage = !caps.storage.is_empty();
        let rows = map_indexed(self.batch.n(), self.par, |i| {
            let mut sf = vec![0.0; horizon];
            let mut soc = if has_storage { vec![0.0; horizon] } else { vec![] };
            self.scenario(caps, i, &mut sf, has_storage.then_some(soc.as_mut_slice()));
            (sf, soc)
        });
        let mut shortfall = Vec::with_capacity(self.batch.n() * horizon);
        let mut soc = Vec::with_capacity(if has_storage { self.batch.n() * horizon } else { 0 });
        for (sf, s) in rows {
            shortfall.extend_from_slice(&sf);
            soc.extend_from_slice(&s);
        }
        Ok(ShortfallSurface {
            n: self.batch.n(),
            horizon,
            hours_per_day: self.system.hours_per_day,
            shortfall,
            soc: has_storage.then_some(soc),
        })
    }
}

/// Baseline shortfall surface of `system` over `batch`.
pub fn shortfall_surface(system: &SystemSpec, batch: &ScenarioBatch, policy: DispatchPolicy) -> Result<ShortfallSurface> {
    Simulator::new(system, batch)?
        .with_policy(policy)
        .surface(&Capacities::baseline(system))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::scenario::{sample_batch, RngPolicy};
    use crate::system::{AvailabilityProfile, GeneratorSpec};

    fn run(avail: &[f64], load: &[f64], units: &[StorageUnit]) -> (Vec<f64>, Vec<f64>) {
        let mut sf = vec![0.0; load.len()];
        let mut soc = vec![0.0; load.len()];
        dispatch_hours(avail, load, units, DispatchPolicy::GreedyShortfall, &mut sf, Some(&mut soc));
        (sf, soc)
    }

    fn unit(power: f64, energy: f64, soc0: f64) -> StorageUnit {
        StorageUnit {
            power_mw: power,
            energy_mwh: energy,
            efficiency_charge: 1.0,
            efficiency_discharge: 1.0,
            initial_soc_fraction: soc0,
        }
    }

    #[test]
    fn shortfall_without_storage() {
        let (sf, _) = run(&[200.0, 100.0], &[149.0, 149.0], &[]);
        assert_eq!(sf, vec![0.0, 49.0]);
    }

    #[test]
    fn storage_shifts_surplus_into_deficit() {
        let (sf, soc) = run(&[10.0, 0.0], &[5.0, 5.0], &[unit(5.0, 5.0, 0.0)]);
        assert_eq!(sf, vec![0.0, 0.0]);
        assert_eq!(soc, vec![5.0, 0.0]);
    }

    #[test]
    fn empty_storage_without_surplus_contributes_nothing() {
        let (sf, _) = run(&[0.0, 0.0], &[5.0, 5.0], &[unit(5.0, 5.0, 0.0)]);
        assert_eq!(sf, vec![5.0, 5.0]);
    }

    #[test]
    fn losses_apply_on_both_sides() {
        let u = StorageUnit {
            efficiency_charge: 0.9,
            efficiency_discharge: 0.8,
            ..unit(10.0, 100.0, 0.0)
        };
        let (sf, soc) = run(&[20.0, 0.0], &[10.0, 10.0], &[u]);
        assert!((soc[0] - 9.0).abs() < 1e-12);
        assert!((sf[1] - (10.0 - 9.0 * 0.8)).abs() < 1e-12);
    }

    #[test]
    fn ties_are_not_shortage() {
        let (sf, _) = run(&[150.0], &[150.0], &[]);
        assert_eq!(sf, vec![0.0]);
    }

    #[test]
    fn dispatch_scenario_matches_kernel() {
        let s = SystemSpec::new(
            vec![GeneratorSpec::profile("pv", 10.0, "shape")],
            vec![StorageSpec::new("b", 5.0, 5.0).with_initial_soc(0.0)],
            vec![AvailabilityProfile { id: "shape".into(), values: vec![1.0, 0.0] }],
            vec![5.0, 5.0],
        )
        .unwrap();
        let out = dispatch_scenario(&s, &Capacities::baseline(&s), &[vec![1.0, 0.0]], DispatchPolicy::default()).unwrap();
        assert_eq!(out.shortfall, vec![0.0, 0.0]);
        assert!(dispatch_scenario(&s, &Capacities::baseline(&s), &[vec![1.0]], DispatchPolicy::default()).is_err());
    }

    #[test]
    fn adequate_batch_gives_zero_surface() {
        let s = fixtures::firm_block(90.0);
        let b = sample_batch(&s, 100, &RngPolicy::new(1)).unwrap();
        let surf = shortfall_surface(&s, &b, DispatchPolicy::default()).unwrap();
        assert!((0..surf.n()).all(|i| surf.shortfall(i).iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn surface_rows_match_single_scenario_dispatch() {
        let s = fixtures::toy3();
        let b = sample_batch(&s, 64, &RngPolicy::new(2)).unwrap();
        let surf = shortfall_surface(&s, &b, DispatchPolicy::default()).unwrap();
        let caps = Capacities::baseline(&s);
        for i in 0..b.n() {
            let a = b.availability(&s, i).unwrap();
            let row = dispatch_scenario(&s, &caps, &a, DispatchPolicy::default()).unwrap();
            assert_eq!(surf.shortfall(i), row.shortfall.as_slice());
            for t in 0..s.horizon() {
                assert_eq!(surf.indicator(i, t), row.shortfall[t] > 0.0);
                assert!(row.shortfall[t] <= s.load_values()[t]);
            }
        }
    }

    #[test]
    fn batch_must_cover_system() {
        let s = fixtures::toy3();
        let b = sample_batch(&s, 4, &RngPolicy::new(2)).unwrap();
        let bigger = fixtures::toy3_with_candidate(0.9);
        assert!(matches!(Simulator::new(&bigger, &b), Err(Error::BatchMismatch(_))));
    }

    #[test]
    fn negative_resource_capacity_is_reported() {
        let s = fixtures::toy3_with_candidate(0.9);
        let caps = Capacities::baseline(&s);
        let err = caps.perturbed(&s, &PerturbationDirection::resource("cand"), -0.5).unwrap_err();
        assert!(matches!(err, Error::NegativeCapacity { .. }));
        assert!(caps.perturbed(&s, &PerturbationDirection::Perfect, -0.5).is_ok());
    }
}
