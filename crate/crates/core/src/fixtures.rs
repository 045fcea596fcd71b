//! Small hand-checkable systems used by tests, benches and the CLI examples.

use crate::system::{AvailabilityProfile, GeneratorSpec, StorageSpec, SystemSpec};

/// Three thermal units (100 MW FOR 0.10, 50 MW FOR 0.05, 50 MW FOR 0.05) serving a
/// flat 149 MW load for 24 hours.
pub fn toy3() -> SystemSpec {
    toy3_with_load(149.0)
}

pub fn toy3_with_load(load_mw: f64) -> SystemSpec {
    SystemSpec::new(
        vec![
            GeneratorSpec::thermal("g1", 100.0, 0.10),
            GeneratorSpec::thermal("g2", 50.0, 0.05),
            GeneratorSpec::thermal("g3", 50.0, 0.05),
        ],
        vec![],
        vec![],
        vec![load_mw; 24],
    )
    .expect("toy-3 is valid")
}

/// toy-3 plus a zero-capacity thermal candidate `cand` with availability `a`.
pub fn toy3_with_candidate(a: f64) -> SystemSpec {
    toy3()
        .with_generator(GeneratorSpec::thermal("cand", 0.0, 1.0 - a))
        .expect("candidate is valid")
}

/// Two hours of 5 MW load, no fleet, a zero-capacity PV candidate with profile
/// [1, 0] and a zero-size one-hour storage candidate starting empty.
pub fn synergy() -> SystemSpec {
    SystemSpec::new(
        vec![GeneratorSpec::profile("pv", 0.0, "pv-shape")],
        vec![StorageSpec::new("bess", 0.0, 0.0).with_initial_soc(0.0).with_duration(1.0)],
        vec![AvailabilityProfile {
            id: "pv-shape".into(),
            values: vec![1.0, 0.0],
        }],
        vec![5.0, 5.0],
    )
    .expect("synergy fixture is valid")
}

/// Two-hour oracle family: toy-3 fleet, hour 0 at `peak_mw`, hour 1 at `offpeak_mw`,
/// plus a zero-capacity profile candidate `cand` with the given shape.
pub fn two_hour(peak_mw: f64, offpeak_mw: f64, candidate_shape: [f64; 2]) -> SystemSpec {
    SystemSpec::new(
        vec![
            GeneratorSpec::thermal("g1", 100.0, 0.10),
            GeneratorSpec::thermal("g2", 50.0, 0.05),
            GeneratorSpec::thermal("g3", 50.0, 0.05),
            GeneratorSpec::profile("cand", 0.0, "cand-shape"),
        ],
        vec![],
        vec![AvailabilityProfile {
            id: "cand-shape".into(),
            values: candidate_shape.to_vec(),
        }],
        vec![peak_mw, offpeak_mw],
    )
    .expect("two-hour fixture is valid")
}

/// A firm 100 MW block plus one 50 MW thermal unit (FOR 0.1) against `load_mw`.
/// Adequate in every state whenever `load_mw <= 100`.
pub fn firm_block(load_mw: f64) -> SystemSpec {
    SystemSpec::new(
        vec![
            GeneratorSpec::perfect("firm", 100.0),
            GeneratorSpec::thermal("t1", 50.0, 0.10),
        ],
        vec![],
        vec![],
        vec![load_mw; 24],
    )
    .expect("firm block is valid")
}
