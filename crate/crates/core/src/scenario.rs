//! Availability sampling with keyed, counter-style random streams.
//!
//! Every (master seed, resource id) pair maps to a ChaCha8 key; the scenario index
//! selects the ChaCha stream and the hour is the position inside it. No generator
//! state is shared or advanced across scenarios or resources, so a unit's draws do
//! not depend on which other units exist or on how work is split across threads.
//! That is what makes common random numbers hold across perturbed systems.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::{fill_chunks, Parallelism};
use crate::system::{GeneratorKind, SystemSpec};

/// Identifier of the stream derivation rule, recorded in outputs.
pub const STREAM_RULE: &str = "sha256-chacha8/v1";

/// Dense batches above this many thermal flags are refused.
pub const MAX_BATCH_ENTRIES: usize = 1_000_000_000;

const DUMP_MAGIC: &[u8; 8] = b"RABATCH1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngPolicy {
    pub master_seed: u64,
}

impl RngPolicy {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn rule(&self) -> &'static str {
        STREAM_RULE
    }

    fn key(&self, resource_id: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(STREAM_RULE.as_bytes());
        h.update(self.master_seed.to_le_bytes());
        h.update((resource_id.len() as u64).to_le_bytes());
        h.update(resource_id.as_bytes());
        h.finalize().into()
    }
}

/// The random substream for one (scenario, resource) pair. Hour `t` consumes the
/// `t`-th draw.
pub fn derive_stream(policy: &RngPolicy, scenario_index: u64, resource_id: &str) -> ChaCha8Rng {
    stream_from_key(policy.key(resource_id), scenario_index)
}

fn stream_from_key(key: [u8; 32], scenario_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(scenario_index);
    rng
}

/// Sampled (or enumerated) availability for all thermal units of a system.
///
/// Thermal flags are stored densely as `[scenario][unit][hour]`. Profile and
/// perfect units are deterministic and read from the system spec, never stored.
/// An exact-weight batch carries one probability per pseudo-scenario instead of
/// the implicit uniform 1/n weights of a Monte Carlo batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioBatch {
    n: usize,
    horizon: usize,
    thermal_ids: Vec<String>,
    flags: Vec<u8>,
    weights: Option<Vec<f64>>,
    policy: Option<RngPolicy>,
}

impl ScenarioBatch {
    /// Assembles a batch from raw flags; `weights` makes it an exact-weight batch.
    pub fn from_parts(
        horizon: usize,
        thermal_ids: Vec<String>,
        flags: Vec<u8>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let per = thermal_ids.len() * horizon;
        let n = match &weights {
            Some(w) => w.len(),
            None if per > 0 => flags.len() / per,
            None => return Err(Error::invalid("batch", "cannot infer scenario count without thermal units; pass weights")),
        };
        if flags.len() != n * per {
            return Err(Error::DimensionMismatch(format!(
                "{} flags for {n} scenarios x {} units x {horizon} hours",
                flags.len(),
                thermal_ids.len()
            )));
        }
        if n == 0 {
            return Err(Error::invalid("n", "batch needs at least one scenario"));
        }
        if flags.iter().any(|&f| f > 1) {
            return Err(Error::invalid("flags", "thermal availability flags must be 0 or 1"));
        }
        if let Some(w) = &weights {
            if w.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
                return Err(Error::invalid("weights", "must be finite and nonnegative"));
            }
        }
        Ok(Self {
            n,
            horizon,
            thermal_ids,
            flags,
            weights,
            policy: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn thermal_ids(&self) -> &[String] {
        &self.thermal_ids
    }

    pub fn thermal_index(&self, id: &str) -> Option<usize> {
        self.thermal_ids.iter().position(|t| t == id)
    }

    pub fn policy(&self) -> Option<RngPolicy> {
        self.policy
    }

    /// Scenario probabilities of an exact-weight batch; `None` for Monte Carlo.
    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn is_exact(&self) -> bool {
        self.weights.is_some()
    }

    /// Hourly 0/1 availability of thermal unit `unit` in scenario `scenario`.
    pub fn unit_flags(&self, scenario: usize, unit: usize) -> &[u8] {
        let k = self.thermal_ids.len();
        let start = (scenario * k + unit) * self.horizon;
        &self.flags[start..start + self.horizon]
    }

    pub fn flags(&self) -> &[u8] {
        &self.flags
    }

    /// Checks that every thermal unit of `system` has draws here, and returns the
    /// batch column for each generator (`None` for non-thermal generators).
    pub fn columns_for(&self, system: &SystemSpec) -> Result<Vec<Option<usize>>> {
        if system.horizon() != self.horizon {
            return Err(Error::BatchMismatch(format!(
                "batch horizon {} vs system horizon {}",
                self.horizon,
                system.horizon()
            )));
        }
        system
            .generators
            .iter()
            .map(|g| match g.kind {
                GeneratorKind::Thermal => self
                    .thermal_index(&g.id)
                    .map(Some)
                    .ok_or_else(|| Error::BatchMismatch(format!("no draws for thermal unit '{}'", g.id))),
                _ => Ok(None),
            })
            .collect()
    }

    /// One scenario's availability as a generators x hours matrix.
    pub fn availability(&self, system: &SystemSpec, scenario: usize) -> Result<Vec<Vec<f64>>> {
        let cols = self.columns_for(system)?;
        if scenario >= self.n {
            return Err(Error::DimensionMismatch(format!("scenario {scenario} of {}", self.n)));
        }
        Ok(system
            .generators
            .iter()
            .zip(&cols)
            .map(|(g, col)| match (g.kind, col) {
                (GeneratorKind::Thermal, Some(c)) => {
                    self.unit_flags(scenario, *c).iter().map(|&f| f as f64).collect()
                }
                (GeneratorKind::Profile, _) => system.profile_values(g).expect("validated").to_vec(),
                _ => vec![1.0; self.horizon],
            })
            .collect())
    }

    /// Writes the thermal flags in the documented binary dump format.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        match self.policy {
            Some(p) => {
                w.write_all(&[1])?;
                w.write_all(&p.master_seed.to_le_bytes())?;
            }
            None => {
                w.write_all(&[0])?;
                w.write_all(&0u64.to_le_bytes())?;
            }
        }
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.horizon as u32).to_le_bytes())?;
        w.write_all(&(self.thermal_ids.len() as u32).to_le_bytes())?;
        for id in &self.thermal_ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        w.write_all(&self.flags)
    }

    /// Reads a dump written by [`ScenarioBatch::write_dump`]. Weights are not stored,
    /// so the result is always a Monte Carlo batch.
    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let bad = |e: std::io::Error| Error::invalid("batch dump", e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::invalid("batch dump", "bad magic"));
        }
        let mut has_seed = [0u8; 1];
        r.read_exact(&mut has_seed).map_err(bad)?;
        let mut b8 = [0u8; 8];
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b8).map_err(bad)?;
        let seed = u64::from_le_bytes(b8);
        r.read_exact(&mut b8).map_err(bad)?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b4).map_err(bad)?;
        let horizon = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(bad)?;
        let k = u32::from_le_bytes(b4) as usize;
        let mut ids = Vec::with_capacity(k);
        for _ in 0..k {
            r.read_exact(&mut b4).map_err(bad)?;
            let mut buf = vec![0u8; u32::from_le_bytes(b4) as usize];
            r.read_exact(&mut buf).map_err(bad)?;
            ids.push(String::from_utf8(buf).map_err(|e| Error::invalid("batch dump", e.to_string()))?);
        }
        let mut flags = vec![0u8; n * k * horizon];
        r.read_exact(&mut flags).map_err(bad)?;
        let mut batch = Self::from_parts(horizon, ids, flags, None)?;
        if batch.n != n {
            return Err(Error::invalid("batch dump", "scenario count mismatch"));
        }
        if has_seed[0] == 1 {
            batch.policy = Some(RngPolicy::new(seed));
        }
        Ok(batch)
    }
}

pub fn sample_batch(system: &SystemSpec, n: usize, policy: &RngPolicy) -> Result<ScenarioBatch> {
    sample_batch_with(system, n, policy, Parallelism::default())
}

/// Draws `n` scenarios: each thermal unit is up in each hour independently with
/// probability `1 - for_rate`.
pub fn sample_batch_with(
    system: &SystemSpec,
    n: usize,
    policy: &RngPolicy,
    par: Parallelism,
) -> Result<ScenarioBatch> {
    if n == 0 {
        return Err(Error::invalid("n", "sample count must be at least 1"));
    }
    let thermal: Vec<(String, f64, [u8; 32])> = system
        .generators
        .iter()
        .filter(|g| g.kind == GeneratorKind::Thermal)
        .map(|g| (g.id.clone(), g.for_rate.expect("validated"), policy.key(&g.id)))
        .collect();
    let horizon = system.horizon();
    let per = thermal.len() * horizon;
    let total = n
        .checked_mul(per)
        .filter(|&t| t <= MAX_BATCH_ENTRIES)
        .ok_or_else(|| Error::invalid("n", format!("batch of {n} x {per} flags exceeds {MAX_BATCH_ENTRIES}")))?;

    let mut flags = vec![0u8; total];
    fill_chunks(&mut flags, per, par, |scenario, chunk| {
        for (unit, (_, for_rate, key)) in thermal.iter().enumerate() {
            let mut rng = stream_from_key(*key, scenario as u64);
            for slot in &mut chunk[unit * horizon..(unit + 1) * horizon] {
                *slot = (rng.gen::<f64>() >= *for_rate) as u8;
            }
        }
    });

    Ok(ScenarioBatch {
        n,
        horizon,
        thermal_ids: thermal.into_iter().map(|(id, _, _)| id).collect(),
        flags,
        weights: None,
        policy: Some(*policy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::system::{AvailabilityProfile, GeneratorSpec};

    fn draws(rng: &mut ChaCha8Rng, k: usize) -> Vec<u64> {
        (0..k).map(|_| rng.gen::<u64>()).collect()
    }

    #[test]
    fn streams_are_deterministic_and_keyed() {
        let p = RngPolicy::new(7);
        let a = draws(&mut derive_stream(&p, 0, "g1"), 16);
        let b = draws(&mut derive_stream(&p, 0, "g1"), 16);
        let c = draws(&mut derive_stream(&p, 0, "g2"), 16);
        let d = draws(&mut derive_stream(&p, 1, "g1"), 16);
        let e = draws(&mut derive_stream(&RngPolicy::new(8), 0, "g1"), 16);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_ne!(a, e);
    }

    #[test]
    fn perfect_unit_is_always_available() {
        let s = SystemSpec::new(vec![GeneratorSpec::perfect("p", 100.0)], vec![], vec![], vec![50.0; 24]).unwrap();
        let b = sample_batch(&s, 10, &RngPolicy::new(1)).unwrap();
        for i in 0..b.n() {
            assert!(b.availability(&s, i).unwrap()[0].iter().all(|&a| a == 1.0));
        }
    }

    #[test]
    fn profile_unit_repeats_profile_in_every_scenario() {
        let mut shape = vec![0.0; 24];
        shape[0] = 1.0;
        let s = SystemSpec::new(
            vec![GeneratorSpec::profile("pv", 10.0, "shape"), GeneratorSpec::thermal("t", 10.0, 0.2)],
            vec![],
            vec![AvailabilityProfile { id: "shape".into(), values: shape.clone() }],
            vec![5.0; 24],
        )
        .unwrap();
        let b = sample_batch(&s, 50, &RngPolicy::new(3)).unwrap();
        for i in 0..b.n() {
            assert_eq!(b.availability(&s, i).unwrap()[0], shape);
        }
    }

    #[test]
    fn thermal_mean_availability_is_calibrated() {
        let s = fixtures::toy3();
        let n = 200_000;
        let b = sample_batch(&s, n, &RngPolicy::new(11)).unwrap();
        let g1 = b.thermal_index("g1").unwrap();
        let ups: u64 = (0..n).map(|i| b.unit_flags(i, g1).iter().map(|&f| f as u64).sum::<u64>()).sum();
        let draws = (n * 24) as f64;
        let mean = ups as f64 / draws;
        assert!((mean - 0.9).abs() < 0.002, "mean {mean}");
        let se = (0.9f64 * 0.1 / draws).sqrt();
        assert!((mean - 0.9).abs() < 4.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn adding_a_unit_leaves_existing_draws_unchanged() {
        let base = fixtures::toy3();
        let extended = base.with_generator(GeneratorSpec::thermal("g9", 30.0, 0.2)).unwrap();
        let p = RngPolicy::new(42);
        let a = sample_batch(&base, 500, &p).unwrap();
        let b = sample_batch(&extended, 500, &p).unwrap();
        for id in ["g1", "g2", "g3"] {
            let (ia, ib) = (a.thermal_index(id).unwrap(), b.thermal_index(id).unwrap());
            for i in 0..500 {
                assert_eq!(a.unit_flags(i, ia), b.unit_flags(i, ib));
            }
        }
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(sample_batch(&fixtures::toy3(), 0, &RngPolicy::new(1)).is_err());
    }

    #[test]
    fn sequential_matches_parallel() {
        let s = fixtures::toy3_with_candidate(0.9);
        let p = RngPolicy::new(5);
        let a = sample_batch_with(&s, 3000, &p, Parallelism::Sequential).unwrap();
        let b = sample_batch_with(&s, 3000, &p, Parallelism::Rayon).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dump_round_trips() {
        let s = fixtures::toy3();
        let b = sample_batch(&s, 20, &RngPolicy::new(9)).unwrap();
        let mut buf = Vec::new();
        b.write_dump(&mut buf).unwrap();
        assert_eq!(&buf[..8], DUMP_MAGIC);
        let back = ScenarioBatch::read_dump(buf.as_slice()).unwrap();
        assert_eq!(back, b);
        assert!(ScenarioBatch::read_dump(&buf[..20]).is_err());
    }
}
