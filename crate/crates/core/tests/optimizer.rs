mod common;

use dosedesign::closed_form::{emax_global_conditions, min_supported_optimal};
use dosedesign::design::{information_matrix, Candidate};
use dosedesign::optimize::{improve, locally_optimal, maximize, Method, Objective, OptimizerSettings};
use dosedesign::{Design, GroupDesign, ModelFamily, ModelSpec, SharingPattern};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn settings(restarts: usize, seed: u64) -> OptimizerSettings {
    OptimizerSettings { restarts, seed, ..OptimizerSettings::default() }
}

fn sigmoid_ls(gamma: f64) -> ModelSpec {
    ModelSpec::new(
        ModelFamily::SigmoidEmax { gamma },
        SharingPattern::SharedLocationScale,
        vec![0.0, 1.0],
        vec![vec![0.3], vec![0.55]],
        vec![1.0, 1.0],
        vec![1.0, 1.0],
    )
    .unwrap()
}

#[test]
fn trace_never_decreases() {
    let spec = sigmoid_ls(2.0);
    let res = maximize(&Objective::LocallyD(spec), &settings(4, 3)).unwrap();
    assert!(res.converged);
    for w in res.trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0), "{:?}", res.trace);
    }
}

#[test]
fn same_seed_same_design() {
    let spec = sigmoid_ls(3.0);
    let a = maximize(&Objective::LocallyD(spec.clone()), &settings(6, 9)).unwrap();
    let b = maximize(&Objective::LocallyD(spec), &settings(6, 9)).unwrap();
    assert_eq!(a.design, b.design);
    assert_eq!(a.criterion.to_bits(), b.criterion.to_bits());
    assert_eq!(a.restart_criteria, b.restart_criteria);
}

#[test]
fn more_restarts_never_hurt() {
    let spec = sigmoid_ls(2.5);
    let few = maximize(&Objective::LocallyD(spec.clone()), &settings(3, 5)).unwrap();
    let many = maximize(&Objective::LocallyD(spec), &settings(9, 5)).unwrap();
    assert_eq!(&many.restart_criteria[..3], &few.restart_criteria[..]);
    assert!(many.criterion >= few.criterion - 1e-12);
    let best = many.restart_criteria.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(many.criterion >= best - 1e-12);
}

#[test]
fn optimizer_agrees_with_minimal_design_inside_region() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut tested = 0;
    while tested < 10 {
        let a: f64 = rng.gen_range(0.02..0.6);
        let b = rng.gen_range(0.02..0.95);
        if (a - b).abs() < 0.05 {
            continue;
        }
        let r = (rng.gen_range((0.1f64).ln()..(5.0f64).ln())).exp();
        let spec = common::emax_ls([a, b], [r, 1.0]);
        let (design, case) = min_supported_optimal(&spec).unwrap();
        if !emax_global_conditions(&spec, &case).unwrap().holds {
            continue;
        }
        let res = maximize(&Objective::LocallyD(spec.clone()), &settings(4, tested as u64)).unwrap();
        let analytic = information_matrix(&spec, &design).unwrap().logdet();
        assert!((res.criterion - analytic).abs() <= 1e-6, "{a} {b} {r}: {} vs {analytic}", res.criterion);
        tested += 1;
    }
}

#[test]
fn finer_candidate_grid_gives_same_optimum() {
    for spec in [sigmoid_ls(2.0), sigmoid_ls(4.0)] {
        let coarse = maximize(&Objective::LocallyD(spec.clone()), &OptimizerSettings { grid_density: 201, ..settings(4, 1) }).unwrap();
        let fine = maximize(&Objective::LocallyD(spec), &OptimizerSettings { grid_density: 401, ..settings(4, 1) }).unwrap();
        assert!((coarse.criterion - fine.criterion).abs() <= 1e-8 * coarse.criterion.abs().max(1.0));
    }
}

/// With `u = d^gamma` the sigmoid model is an Emax model in `u` with ED50 `theta^gamma`.
#[test]
fn sigmoid_optimum_maps_to_emax_optimum() {
    let gamma = 2.0;
    let sig = sigmoid_ls(gamma);
    let emax = ModelSpec::new(
        ModelFamily::Emax,
        SharingPattern::SharedLocationScale,
        vec![0.0, 1.0],
        vec![vec![0.3f64.powf(gamma)], vec![0.55f64.powf(gamma)]],
        vec![1.0, 1.0],
        vec![1.0, 1.0],
    )
    .unwrap();
    let s = locally_optimal(&sig, &settings(8, 0)).unwrap();
    let e = locally_optimal(&emax, &settings(8, 0)).unwrap();
    assert!(e.converged && s.converged);
    let back = e.design.map_doses(|_, u| u.powf(1.0 / gamma)).unwrap();
    let mapped = information_matrix(&sig, &back).unwrap().logdet();
    assert!((mapped - s.criterion).abs() <= 1e-6, "{mapped} vs {}", s.criterion);
}

#[test]
fn improve_never_lowers_log_det() {
    let spec = sigmoid_ls(3.0);
    let start = Design::from_groups(
        vec![GroupDesign::uniform(vec![0.0, 0.5, 1.0]).unwrap(), GroupDesign::uniform(vec![0.2, 1.0]).unwrap()],
        vec![0.5, 0.5],
    )
    .unwrap();
    let before = information_matrix(&spec, &start).unwrap().logdet();
    let res = improve(&spec, &start, &OptimizerSettings::default()).unwrap();
    assert!(res.criterion >= before);
}

#[test]
fn rescaled_problem_has_mapped_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for (fam, sharing) in [
        (ModelFamily::Emax, SharingPattern::SharedLocationScale),
        (ModelFamily::SigmoidEmax { gamma: 2.0 }, SharingPattern::SharedLocationScale),
        (ModelFamily::LinearInLog, SharingPattern::SharedLocation),
        (ModelFamily::SigmoidEmax { gamma: 3.0 }, SharingPattern::SharedLocation),
    ] {
        let spec = common::random_spec(&mut rng, fam, sharing, 2);
        let (unit, map) = spec.rescale_to_unit();
        let a = locally_optimal(&spec, &settings(4, 2)).unwrap();
        let b = locally_optimal(&unit, &settings(4, 2)).unwrap();
        let back = b.design.map_doses(|g, t| map.from_unit(g, t)).unwrap();
        for i in 0..2 {
            let (ga, gb) = (a.design.group(i), back.group(i));
            assert_eq!(ga.len(), gb.len(), "{fam:?}");
            for ((x, y), (v, w)) in ga.points().iter().zip(gb.points()).zip(ga.weights().iter().zip(gb.weights())) {
                assert!((x - y).abs() <= 1e-6 * spec.dmax()[i], "{fam:?}: {x} vs {y}");
                assert!((v - w).abs() <= 1e-8);
            }
            assert!((a.design.lambda()[i] - back.lambda()[i]).abs() <= 1e-8);
        }
        let probe = common::random_design(&mut rng, &spec, 3);
        let probe_unit = probe.map_doses(|g, d| map.to_unit(g, d)).unwrap();
        let ea = Candidate::new("a", spec.clone(), 1.0, a.design.clone()).unwrap().efficiency(&probe).unwrap();
        let eb = Candidate::new("b", unit.clone(), 1.0, b.design.clone()).unwrap().efficiency(&probe_unit).unwrap();
        assert!((ea - eb).abs() <= 1e-10, "{fam:?}: {ea} vs {eb}");
    }
}

#[test]
fn dispatch_selects_analytic_paths() {
    let sl = ModelSpec::new(
        ModelFamily::Exponential,
        SharingPattern::SharedLocation,
        vec![0.0],
        vec![vec![1.0, 0.4], vec![2.0, 0.7]],
        vec![1.0, 2.0],
        vec![1.0, 1.0],
    )
    .unwrap();
    assert_eq!(locally_optimal(&sl, &OptimizerSettings::default()).unwrap().method, Method::ClosedForm);
    let ls = common::emax_ls([0.2, 0.5], [1.0, 1.0]);
    assert_eq!(locally_optimal(&ls, &OptimizerSettings::default()).unwrap().method, Method::MinimallySupported);
}
