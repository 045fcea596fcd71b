//! Baseline system description: fleet, storage, availability profiles, load.
//!
//! A [`SystemSpec`] is the pair (x̂, L) every study is evaluated against. It is
//! immutable once validated and is shared freely across worker threads.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

fn one() -> f64 {
    1.0
}

fn default_hours_per_day() -> usize {
    24
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Two-state unit with an independent hourly forced outage draw.
    Thermal,
    /// Deterministic per-hour availability taken from a named profile.
    Profile,
    /// Available at full nameplate in every hour.
    Perfect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub id: String,
    pub nameplate_mw: f64,
    pub kind: GeneratorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub for_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_id: Option<String>,
}

impl GeneratorSpec {
    pub fn thermal(id: impl Into<String>, nameplate_mw: f64, for_rate: f64) -> Self {
        Self {
            id: id.into(),
            nameplate_mw,
            kind: GeneratorKind::Thermal,
            for_rate: Some(for_rate),
            profile_id: None,
        }
    }

    pub fn profile(id: impl Into<String>, nameplate_mw: f64, profile_id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            nameplate_mw,
            kind: GeneratorKind::Profile,
            for_rate: None,
            profile_id: Some(profile_id.into()),
        }
    }

    pub fn perfect(id: impl Into<String>, nameplate_mw: f64) -> Self {
        Self {
            id: id.into(),
            nameplate_mw,
            kind: GeneratorKind::Perfect,
            for_rate: None,
            profile_id: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvailabilityProfile {
    pub id: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSpec {
    pub id: String,
    pub power_mw: f64,
    pub energy_mwh: f64,
    #[serde(default = "one")]
    pub efficiency_charge: f64,
    #[serde(default = "one")]
    pub efficiency_discharge: f64,
    #[serde(default = "one")]
    pub initial_soc_fraction: f64,
    /// Energy-to-power ratio used when the unit is perturbed from zero power.
    /// Ignored (derived from power and energy) when `power_mw > 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_hours: Option<f64>,
}

impl StorageSpec {
    pub fn new(id: impl Into<String>, power_mw: f64, energy_mwh: f64) -> Self {
        Self {
            id: id.into(),
            power_mw,
            energy_mwh,
            efficiency_charge: 1.0,
            efficiency_discharge: 1.0,
            initial_soc_fraction: 1.0,
            duration_hours: None,
        }
    }

    pub fn with_initial_soc(mut self, fraction: f64) -> Self {
        self.initial_soc_fraction = fraction;
        self
    }

    pub fn with_duration(mut self, hours: f64) -> Self {
        self.duration_hours = Some(hours);
        self
    }

    /// Energy duration in hours, if determinable.
    pub fn duration(&self) -> Option<f64> {
        if self.power_mw > 0.0 {
            Some(self.energy_mwh / self.power_mw)
        } else {
            self.duration_hours
        }
    }
}

/// Hourly load. Scaling is tracked as a single multiplier over the base values,
/// so repeated scaling composes exactly: scaling by `a` then `b` is bit-identical
/// to scaling by `a * b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadTrajectory {
    base: Vec<f64>,
    multiplier: f64,
    values: Vec<f64>,
}

impl LoadTrajectory {
    pub fn new(values: Vec<f64>) -> Self {
        Self::scaled(values, 1.0)
    }

    pub fn flat(mw: f64, hours: usize) -> Self {
        Self::new(vec![mw; hours])
    }

    fn scaled(base: Vec<f64>, multiplier: f64) -> Self {
        let values = base.iter().map(|v| v * multiplier).collect();
        Self {
            base,
            multiplier,
            values,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LoadRepr {
    Values(Vec<f64>),
    Scaled { values: Vec<f64>, multiplier: f64 },
}

impl Serialize for LoadTrajectory {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.multiplier == 1.0 {
            LoadRepr::Values(self.base.clone()).serialize(s)
        } else {
            LoadRepr::Scaled {
                values: self.base.clone(),
                multiplier: self.multiplier,
            }
            .serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for LoadTrajectory {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match LoadRepr::deserialize(d)? {
            LoadRepr::Values(v) => LoadTrajectory::new(v),
            LoadRepr::Scaled { values, multiplier } => LoadTrajectory::scaled(values, multiplier),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub generators: Vec<GeneratorSpec>,
    #[serde(default)]
    pub storages: Vec<StorageSpec>,
    #[serde(default)]
    pub profiles: Vec<AvailabilityProfile>,
    pub load: LoadTrajectory,
    pub horizon_hours: usize,
    #[serde(default = "default_hours_per_day")]
    pub hours_per_day: usize,
}

impl SystemSpec {
    /// Builds and validates a system with a 24-hour day partition.
    pub fn new(
        generators: Vec<GeneratorSpec>,
        storages: Vec<StorageSpec>,
        profiles: Vec<AvailabilityProfile>,
        load: Vec<f64>,
    ) -> Result<Self> {
        let horizon_hours = load.len();
        let hours_per_day = if horizon_hours.is_multiple_of(24) { 24 } else { horizon_hours };
        let spec = Self {
            generators,
            storages,
            profiles,
            load: LoadTrajectory::new(load),
            horizon_hours,
            hours_per_day,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: SystemSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("system spec is always serializable")
    }

    pub fn horizon(&self) -> usize {
        self.horizon_hours
    }

    pub fn load_values(&self) -> &[f64] {
        self.load.values()
    }

    pub fn days(&self) -> usize {
        self.horizon_hours / self.hours_per_day
    }

    pub fn generator_index(&self, id: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.id == id)
    }

    pub fn storage_index(&self, id: &str) -> Option<usize> {
        self.storages.iter().position(|s| s.id == id)
    }

    pub fn profile(&self, id: &str) -> Option<&AvailabilityProfile> {
        self.profiles.iter().find(|p| p.id == id)
    }

    /// Per-hour availability fractions of a profile generator.
    pub fn profile_values(&self, generator: &GeneratorSpec) -> Option<&[f64]> {
        generator
            .profile_id
            .as_deref()
            .and_then(|id| self.profile(id))
            .map(|p| p.values.as_slice())
    }

    pub fn thermal_ids(&self) -> Vec<String> {
        self.generators
            .iter()
            .filter(|g| g.kind == GeneratorKind::Thermal)
            .map(|g| g.id.clone())
            .collect()
    }

    pub fn thermal_count(&self) -> usize {
        self.generators
            .iter()
            .filter(|g| g.kind == GeneratorKind::Thermal)
            .count()
    }

    pub fn with_generator(&self, generator: GeneratorSpec) -> Result<Self> {
        let mut next = self.clone();
        next.generators.push(generator);
        next.validate()?;
        Ok(next)
    }

    pub fn without_generator(&self, id: &str) -> Self {
        let mut next = self.clone();
        next.generators.retain(|g| g.id != id);
        next
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_hours == 0 {
            return Err(Error::invalid("horizon_hours", "must be at least one hour"));
        }
        if self.hours_per_day == 0 {
            return Err(Error::invalid("hours_per_day", "must be at least one hour"));
        }
        if !self.horizon_hours.is_multiple_of(self.hours_per_day) {
            return Err(Error::IndivisibleHorizon {
                horizon: self.horizon_hours,
                hours_per_day: self.hours_per_day,
            });
        }
        if self.load.len() != self.horizon_hours {
            return Err(Error::invalid(
                "load",
                format!("has {} values, horizon is {}", self.load.len(), self.horizon_hours),
            ));
        }
        if !(self.load.multiplier.is_finite() && self.load.multiplier > 0.0) {
            return Err(Error::invalid("load.multiplier", "must be finite and positive"));
        }
        for (t, v) in self.load.values().iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::invalid(format!("load[{t}]"), "must be finite and nonnegative"));
            }
        }

        let mut profile_ids = HashSet::new();
        for (i, p) in self.profiles.iter().enumerate() {
            if !profile_ids.insert(p.id.as_str()) {
                return Err(Error::invalid(format!("profiles[{i}].id"), format!("duplicate id '{}'", p.id)));
            }
            if p.values.len() != self.horizon_hours {
                return Err(Error::invalid(
                    format!("profiles[{i}].values"),
                    format!("has {} values, horizon is {}", p.values.len(), self.horizon_hours),
                ));
            }
            check_fractions(&p.values, &format!("profiles[{i}].values"))?;
        }

        let mut ids = HashSet::new();
        for (i, g) in self.generators.iter().enumerate() {
            let at = |f: &str| format!("generators[{i}].{f}");
            if g.id.is_empty() {
                return Err(Error::invalid(at("id"), "must not be empty"));
            }
            if !ids.insert(g.id.as_str()) {
                return Err(Error::invalid(at("id"), format!("duplicate id '{}'", g.id)));
            }
            if !(g.nameplate_mw.is_finite() && g.nameplate_mw >= 0.0) {
                return Err(Error::invalid(at("nameplate_mw"), "must be finite and nonnegative"));
            }
            match g.kind {
                GeneratorKind::Thermal => {
                    match g.for_rate {
                        Some(f) if (0.0..=1.0).contains(&f) => {}
                        Some(_) => return Err(Error::invalid(at("for_rate"), "must lie in [0, 1]")),
                        None => return Err(Error::invalid(at("for_rate"), "required for thermal units")),
                    }
                    if g.profile_id.is_some() {
                        return Err(Error::invalid(at("profile_id"), "not allowed for thermal units"));
                    }
                }
                GeneratorKind::Profile => {
                    if g.for_rate.is_some() {
                        return Err(Error::invalid(at("for_rate"), "not allowed for profile units"));
                    }
                    match &g.profile_id {
                        None => return Err(Error::invalid(at("profile_id"), "required for profile units")),
                        Some(pid) if !profile_ids.contains(pid.as_str()) => {
                            return Err(Error::UnresolvedProfile {
                                field: at("profile_id"),
                                id: pid.clone(),
                            })
                        }
                        Some(_) => {}
                    }
                }
                GeneratorKind::Perfect => {
                    if g.for_rate.is_some() || g.profile_id.is_some() {
                        return Err(Error::invalid(at("kind"), "perfect units take neither for_rate nor profile_id"));
                    }
                }
            }
        }

        for (i, s) in self.storages.iter().enumerate() {
            let at = |f: &str| format!("storages[{i}].{f}");
            if !ids.insert(s.id.as_str()) {
                return Err(Error::invalid(at("id"), format!("duplicate id '{}'", s.id)));
            }
            if !(s.power_mw.is_finite() && s.power_mw >= 0.0) {
                return Err(Error::invalid(at("power_mw"), "must be finite and nonnegative"));
            }
            if !(s.energy_mwh.is_finite() && s.energy_mwh >= 0.0) {
                return Err(Error::invalid(at("energy_mwh"), "must be finite and nonnegative"));
            }
            for (name, eff) in [("efficiency_charge", s.efficiency_charge), ("efficiency_discharge", s.efficiency_discharge)] {
                if !(eff > 0.0 && eff <= 1.0) {
                    return Err(Error::invalid(at(name), "must lie in (0, 1]"));
                }
            }
            if !(0.0..=1.0).contains(&s.initial_soc_fraction) {
                return Err(Error::invalid(at("initial_soc_fraction"), "must lie in [0, 1]"));
            }
            if let Some(d) = s.duration_hours {
                if !(d.is_finite() && d >= 0.0) {
                    return Err(Error::invalid(at("duration_hours"), "must be finite and nonnegative"));
                }
            }
        }
        Ok(())
    }
}

fn check_fractions(values: &[f64], field: &str) -> Result<()> {
    for (t, v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(v) {
            return Err(Error::invalid(format!("{field}[{t}]"), "must lie in [0, 1]"));
        }
    }
    Ok(())
}

pub fn load_system_spec(path: impl AsRef<Path>) -> Result<SystemSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    SystemSpec::from_json_str(&text)
}

pub fn write_system_spec(system: &SystemSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, system.to_json_string()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Multiplies every hour of load by `multiplier`.
pub fn scale_load(system: &SystemSpec, multiplier: f64) -> Result<SystemSpec> {
    if !(multiplier.is_finite() && multiplier > 0.0) {
        return Err(Error::invalid("multiplier", format!("must be finite and positive, got {multiplier}")));
    }
    let mut next = system.clone();
    next.load = LoadTrajectory::scaled(system.load.base.clone(), system.load.multiplier * multiplier);
    Ok(next)
}

/// One component of a portfolio perturbation. `share` scales the common step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioMember {
    pub direction: PerturbationDirection,
    #[serde(default = "one")]
    pub share: f64,
}

/// A capacity-availability direction v along which the system is perturbed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum PerturbationDirection {
    /// Grow an existing generator (v = A_g) or storage unit by its id.
    Resource { id: String },
    /// The perfect resource, v = 1 in every hour.
    Perfect,
    /// An explicit deterministic per-hour direction.
    ProfileVector { values: Vec<f64> },
    /// Joint addition of several directions in one perturbed run.
    Portfolio { members: Vec<PortfolioMember> },
    /// Storage grown at fixed duration; the injection direction is induced by dispatch.
    StoragePolicy { storage_id: String },
}

impl PerturbationDirection {
    pub fn resource(id: impl Into<String>) -> Self {
        Self::Resource { id: id.into() }
    }

    pub fn storage(id: impl Into<String>) -> Self {
        Self::StoragePolicy { storage_id: id.into() }
    }

    pub fn portfolio<I>(members: I) -> Self
    where
        I: IntoIterator<Item = (PerturbationDirection, f64)>,
    {
        Self::Portfolio {
            members: members
                .into_iter()
                .map(|(direction, share)| PortfolioMember { direction, share })
                .collect(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Resource { id } => id.clone(),
            Self::Perfect => "perfect".into(),
            Self::ProfileVector { .. } => "profile_vector".into(),
            Self::StoragePolicy { storage_id } => storage_id.clone(),
            Self::Portfolio { members } => {
                let parts: Vec<String> = members.iter().map(|m| m.direction.label()).collect();
                format!("portfolio({})", parts.join("+"))
            }
        }
    }

    /// True when the direction (or any portfolio member) moves a storage unit.
    pub fn involves_storage(&self, system: &SystemSpec) -> bool {
        match self {
            Self::StoragePolicy { .. } => true,
            Self::Resource { id } => system.storage_index(id).is_some(),
            Self::Portfolio { members } => members.iter().any(|m| m.direction.involves_storage(system)),
            _ => false,
        }
    }

    pub fn validate(&self, system: &SystemSpec) -> Result<()> {
        match self {
            Self::Perfect => Ok(()),
            Self::Resource { id } => {
                if system.generator_index(id).is_some() || system.storage_index(id).is_some() {
                    Ok(())
                } else {
                    Err(Error::UnknownResource(id.clone()))
                }
            }
            Self::StoragePolicy { storage_id } => match system.storage_index(storage_id) {
                None => Err(Error::UnknownResource(storage_id.clone())),
                Some(i) if system.storages[i].duration().is_none() => Err(Error::invalid(
                    format!("storages[{i}].duration_hours"),
                    "required to perturb a storage unit with zero power",
                )),
                Some(_) => Ok(()),
            },
            Self::ProfileVector { values } => {
                if values.len() != system.horizon() {
                    return Err(Error::DimensionMismatch(format!(
                        "direction has {} hours, system has {}",
                        values.len(),
                        system.horizon()
                    )));
                }
                check_fractions(values, "direction.values")
            }
            Self::Portfolio { members } => {
                if members.is_empty() {
                    return Err(Error::Empty("portfolio"));
                }
                for (i, m) in members.iter().enumerate() {
                    if members[..i].iter().any(|o| o.direction == m.direction) {
                        return Err(Error::invalid(
                            format!("portfolio.members[{i}]"),
                            format!("duplicate member '{}'", m.direction.label()),
                        ));
                    }
                    if !(m.share.is_finite() && m.share >= 0.0) {
                        return Err(Error::invalid(format!("portfolio.members[{i}].share"), "must be finite and nonnegative"));
                    }
                    m.direction.validate(system)?;
                }
                Ok(())
            }
        }
    }
}
