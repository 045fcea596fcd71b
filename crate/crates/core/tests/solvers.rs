use accredit_core::accreditation::{accredit_mri_ipa, sweep_load_scale, sweep_step_size};
use accredit_core::system::{AvailabilityProfile, GeneratorSpec};
use accredit_core::{
    accredit, accredit_many, exact_weight_batch, fixtures, oracle_elcc, oracle_gradient, AccreditMethod, MethodParams,
    PerturbationDirection, Study, StudyOptions, SystemSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random 3 to 6 unit fleet over 4 hours with a thermal candidate and two profile candidates.
fn random_system(seed: u64) -> SystemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let units = rng.gen_range(3..=6);
    let mut gens: Vec<GeneratorSpec> = (0..units)
        .map(|k| {
            GeneratorSpec::thermal(
                format!("u{k}"),
                rng.gen_range(20..=100) as f64,
                rng.gen_range(0.02..0.15),
            )
        })
        .collect();
    let total: f64 = gens.iter().map(|g| g.nameplate_mw).sum();
    gens.push(GeneratorSpec::thermal("cand_t", 0.0, rng.gen_range(0.05..0.4)));
    gens.push(GeneratorSpec::profile("cand_p", 0.0, "p"));
    gens.push(GeneratorSpec::profile("cand_q", 0.0, "q"));
    let shape = |rng: &mut ChaCha8Rng| (0..4).map(|_| rng.gen_range(0.0..=1.0)).collect::<Vec<f64>>();
    let profiles = vec![
        AvailabilityProfile { id: "p".into(), values: shape(&mut rng) },
        AvailabilityProfile { id: "q".into(), values: shape(&mut rng) },
    ];
    let load = (0..4).map(|_| (total * rng.gen_range(0.6..0.95)).round() + 0.5).collect();
    SystemSpec::new(gens, vec![], profiles, load).unwrap()
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

#[test]
fn secant_needs_fewer_iterations_than_bisection() {
    let mut bisect = vec![];
    let mut secant = vec![];
    for seed in 0..20 {
        let s = random_system(seed);
        let b = exact_weight_batch(&s).unwrap();
        let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
        let params = MethodParams {
            delta_x_mw: 10.0,
            ..MethodParams::default()
        };
        let dir = PerturbationDirection::resource("cand_t");
        let (rb, _) = accredit(&study, &dir, AccreditMethod::ElccBisection, &params).unwrap();
        let (rs, _) = accredit(&study, &dir, AccreditMethod::ElccSecant, &params).unwrap();
        assert_eq!(rb.iterations, 10);
        assert!((rb.alpha - rs.alpha).abs() <= 2.0 * params.tolerance_mw / params.delta_x_mw);
        bisect.push(rb.iterations);
        secant.push(rs.iterations);
    }
    assert!(median(secant.clone()) < median(bisect.clone()), "{secant:?} vs {bisect:?}");
}

#[test]
fn ranking_matches_between_ipa_and_secant() {
    let ids = ["cand_t", "cand_p", "cand_q"];
    for seed in 0..20 {
        let s = random_system(seed);
        let b = exact_weight_batch(&s).unwrap();
        let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
        let dirs: Vec<_> = ids.iter().map(|id| PerturbationDirection::resource(*id)).collect();
        let ipa: Vec<f64> = accredit_mri_ipa(&study, &dirs).unwrap().iter().map(|r| r.alpha).collect();
        let params = MethodParams {
            delta_x_mw: 0.1,
            tolerance_mw: 1e-6,
            ..MethodParams::default()
        };
        let items: Vec<_> = dirs.iter().map(|d| (d.clone(), params)).collect();
        let elcc: Vec<f64> = accredit_many(&study, &items, AccreditMethod::ElccSecant)
            .unwrap()
            .into_iter()
            .map(|r| r.unwrap().0.alpha)
            .collect();
        for i in 0..ids.len() {
            for j in 0..ids.len() {
                if ipa[i] > ipa[j] + 1e-3 {
                    assert!(elcc[i] > elcc[j], "seed {seed}: {ipa:?} vs {elcc:?}");
                }
            }
        }
    }
}

#[test]
fn elcc_is_flat_in_linear_region_and_converges_across_breakpoint() {
    let dir = PerturbationDirection::resource("cand");
    let s = fixtures::toy3_with_candidate(0.9);
    for dx in [20.0, 10.0, 5.0, 1.0] {
        let e = oracle_elcc(&s, &dir, dx, 1e-9).unwrap();
        assert!((e.alpha - 0.9).abs() <= 1e-9 / dx + 1e-12, "{dx}: {}", e.alpha);
    }

    // 1 MW short in the single-small-unit-out states puts a breakpoint just above zero.
    let s = fixtures::toy3_with_load(151.0)
        .with_generator(GeneratorSpec::thermal("cand", 0.0, 0.1))
        .unwrap();
    let ratio = oracle_gradient(&s, &dir).unwrap() / oracle_gradient(&s, &PerturbationDirection::Perfect).unwrap();
    let errors: Vec<f64> = [20.0, 10.0, 5.0, 1.0, 0.5, 0.1]
        .iter()
        .map(|&dx| (oracle_elcc(&s, &dir, dx, 1e-9).unwrap().alpha - ratio).abs())
        .collect();
    assert!(errors[..3].iter().all(|&e| e > 1e-3), "{errors:?}");
    assert!(errors[3..].iter().all(|&e| e < 1e-6), "{errors:?}");
}

#[test]
fn run_counters_follow_method_costs() {
    let s = random_system(42);
    let b = exact_weight_batch(&s).unwrap();
    let dirs: Vec<_> = ["u0", "u1", "u2"]
        .iter()
        .map(|id| PerturbationDirection::resource(*id))
        .collect();
    let g = dirs.len();
    let params = MethodParams {
        delta_mw: Some(0.5),
        delta_x_mw: 4.0,
        tolerance_mw: 0.01,
    };
    let items: Vec<_> = dirs.iter().map(|d| (d.clone(), params)).collect();

    let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
    let reports = accredit_many(&study, &items, AccreditMethod::MriIpa).unwrap();
    assert_eq!(reports.iter().map(|r| r.as_ref().unwrap().0.simulation_runs).sum::<usize>(), 1);
    assert_eq!(study.runs(), 1);

    let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
    let reports = accredit_many(&study, &items, AccreditMethod::MriFd).unwrap();
    assert!(reports.iter().all(|r| r.as_ref().unwrap().0.simulation_runs == 2));
    assert_eq!(study.runs(), 1 + 2 + 2 * g);

    let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
    let reports = accredit_many(&study, &items, AccreditMethod::ElccBisection).unwrap();
    let k = (4.0f64 / 0.01).log2().ceil() as usize;
    for r in &reports {
        assert_eq!(r.as_ref().unwrap().0.iterations, k);
    }
    assert_eq!(study.runs(), 1 + g * (2 + k));
}

#[test]
fn step_sweep_is_flat_until_breakpoint() {
    let s = fixtures::toy3_with_candidate(0.9);
    let b = exact_weight_batch(&s).unwrap();
    let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
    let dir = PerturbationDirection::resource("cand");
    let rows = sweep_step_size(&study, &dir, &[0.5, 1.0, 5.0, 10.0, 20.0, 40.0, 48.0], &AccreditMethod::ALL, 1e-10).unwrap();
    for r in &rows {
        assert!((r.alpha - 0.9).abs() <= 1e-9, "{r:?}");
    }
    let rows = sweep_step_size(&study, &dir, &[60.0, 100.0], &[AccreditMethod::ElccSecant, AccreditMethod::ElccBisection], 1e-10)
        .unwrap();
    for r in &rows {
        assert!((r.alpha - 0.9).abs() > 1e-6, "{r:?}");
    }
}

#[test]
fn peak_concentrated_candidate_gains_with_load() {
    let s = fixtures::two_hour(149.0, 40.0, [1.0, 0.0]);
    let b = exact_weight_batch(&s).unwrap();
    let dir = PerturbationDirection::resource("cand");
    let multipliers: Vec<f64> = (0..=14).map(|k| 0.5 + 0.05 * k as f64).collect();
    for method in [AccreditMethod::MriIpa, AccreditMethod::ElccSecant] {
        let params = MethodParams {
            delta_x_mw: 0.1,
            tolerance_mw: 1e-7,
            ..MethodParams::default()
        };
        let rows = sweep_load_scale(&s, &b, &multipliers, &dir, method, &params, StudyOptions::default()).unwrap();
        let alphas: Vec<f64> = rows.iter().map(|r| r.alpha.unwrap()).collect();
        assert!(alphas.windows(2).all(|w| w[1] >= w[0] - 1e-6), "{method}: {alphas:?}");
        assert!(alphas.last().unwrap() > alphas.first().unwrap());
    }
}
