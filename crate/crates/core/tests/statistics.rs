use accredit_core::accreditation::{portfolio_perturb, sweep_step_size};
use accredit_core::dispatch::{Capacities, DispatchPolicy};
use accredit_core::{
    accredit, fixtures, ipa_gradient, oracle_gradient, sample_batch, shortfall_surface, AccreditMethod, MethodParams,
    PerturbationDirection, RngPolicy, Simulator, Study, StudyOptions,
};

fn sample_var(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

#[test]
fn ipa_is_unbiased_across_seeds() {
    let s = fixtures::toy3_with_candidate(0.9);
    let dirs = [PerturbationDirection::Perfect, PerturbationDirection::resource("cand")];
    let exact: Vec<f64> = dirs.iter().map(|d| oracle_gradient(&s, d).unwrap()).collect();
    assert!((exact[0] + 2.454).abs() < 1e-12);
    assert!((exact[1] + 2.2086).abs() < 1e-12);

    let mut per_seed = vec![vec![]; dirs.len()];
    for seed in 0..30 {
        let b = sample_batch(&s, 20_000, &RngPolicy::new(seed)).unwrap();
        let surf = shortfall_surface(&s, &b, DispatchPolicy::GreedyShortfall).unwrap();
        for (k, d) in dirs.iter().enumerate() {
            let g = ipa_gradient(&s, &surf, &b, d).unwrap();
            assert!((g.value - exact[k]).abs() <= 5.0 * g.std_error);
            per_seed[k].push(g.value);
        }
    }
    for (k, vals) in per_seed.iter().enumerate() {
        let mean = vals.iter().sum::<f64>() / 30.0;
        let se = (sample_var(vals) / 30.0).sqrt();
        assert!((mean - exact[k]).abs() <= 4.0 * se, "direction {k}: {mean} vs {}", exact[k]);
    }
}

#[test]
fn common_random_numbers_reduce_difference_variance() {
    let s = fixtures::toy3();
    let base = Capacities::baseline(&s);
    let up = base.clone().with_firm(0.5);
    let mut wins = 0;
    for r in 0..30 {
        let a = sample_batch(&s, 2000, &RngPolicy::new(r)).unwrap();
        let b = sample_batch(&s, 2000, &RngPolicy::new(10_000 + r)).unwrap();
        let sa = Simulator::new(&s, &a).unwrap();
        let sb = Simulator::new(&s, &b).unwrap();
        let y = sa.run(&base).unwrap();
        let paired: Vec<f64> = sa.run(&up).unwrap().iter().zip(&y).map(|(p, q)| p.ue - q.ue).collect();
        let indep: Vec<f64> = sb.run(&up).unwrap().iter().zip(&y).map(|(p, q)| p.ue - q.ue).collect();
        if sample_var(&paired) < sample_var(&indep) {
            wins += 1;
        }
    }
    assert!(wins >= 27, "{wins}/30");
}

#[test]
fn elcc_and_mri_agree_on_sampled_batch() {
    let s = fixtures::toy3_with_candidate(0.9);
    let b = sample_batch(&s, 20_000, &RngPolicy::new(3)).unwrap();
    let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
    let dir = PerturbationDirection::resource("cand");
    let params = MethodParams {
        delta_x_mw: 10.0,
        ..MethodParams::default()
    };
    let (mri, _) = accredit(&study, &dir, AccreditMethod::MriIpa, &params).unwrap();
    for m in [AccreditMethod::ElccBisection, AccreditMethod::ElccSecant, AccreditMethod::ElccNewtonIpa] {
        let (e, _) = accredit(&study, &dir, m, &params).unwrap();
        let combined = (e.alpha_stderr.powi(2) + mri.alpha_stderr.powi(2)).sqrt();
        assert!((e.alpha - mri.alpha).abs() <= 4.0 * combined + params.tolerance_mw / 10.0, "{m}");
    }
}

#[test]
fn sampled_step_sweep_stays_in_band() {
    let s = fixtures::toy3_with_candidate(0.9);
    let b = sample_batch(&s, 20_000, &RngPolicy::new(5)).unwrap();
    let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
    let rows = sweep_step_size(
        &study,
        &PerturbationDirection::resource("cand"),
        &[0.5, 2.0, 10.0, 30.0],
        &[AccreditMethod::MriFd, AccreditMethod::ElccSecant],
        0.01,
    )
    .unwrap();
    for r in rows {
        assert!((r.alpha - 0.9).abs() <= 4.0 * r.alpha_stderr + 1e-3, "{r:?}");
    }
}

#[test]
fn independent_thermal_candidates_are_additive() {
    let s = fixtures::toy3()
        .with_generator(accredit_core::system::GeneratorSpec::thermal("c1", 0.0, 0.1))
        .unwrap()
        .with_generator(accredit_core::system::GeneratorSpec::thermal("c2", 0.0, 0.25))
        .unwrap();
    let b = sample_batch(&s, 20_000, &RngPolicy::new(9)).unwrap();
    let study = Study::new(&s, &b, StudyOptions::default()).unwrap();
    let p = PerturbationDirection::portfolio([
        (PerturbationDirection::resource("c1"), 1.0),
        (PerturbationDirection::resource("c2"), 1.0),
    ]);
    let out = portfolio_perturb(&study, &p, 5.0).unwrap();
    assert!(out.additivity_gap.abs() <= 4.0 * out.gap_stderr + 1e-9, "{out:?}");
    assert!(out.standalone.iter().all(|m| m.delta_metric > 0.0));
}
