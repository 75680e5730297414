use gdfcv_core::learners::{BaggedTrees, Glm, SplineAdditive};
use gdfcv_core::{
    compare_models, estimate_gdf, make_folds, repeated_cv, simulate_bernoulli, simulate_gaussian,
    CriteriaOptions, Family, KSpec, Learner, PlanTemplate, RoundDesign,
};
use proptest::prelude::*;

fn single_point_plan(n: usize, per_datum: usize, seed: u64) -> gdfcv_core::PerturbationPlan {
    PlanTemplate {
        k: KSpec::Count(1),
        perturbations_per_datum: per_datum,
        design: RoundDesign::Balanced,
        ..PlanTemplate::default()
    }
    .resolve(n, Family::Gaussian, seed)
    .unwrap()
}

#[test]
fn fixed_penalty_spline_gdf_is_its_trace() {
    let data = simulate_gaussian(100, 2).unwrap().data;
    let spline = SplineAdditive::with_fixed_lambda(8, vec![1.0, 0.1, 10.0, 1.0]);
    let edf = spline.fit(&data, 0).unwrap().self_dof().unwrap();
    let est = estimate_gdf(&spline, &data, &single_point_plan(100, 3, 5)).unwrap();
    assert!((est.gdf - edf).abs() < 1e-6, "{} vs {edf}", est.gdf);
}

#[test]
fn estimates_do_not_depend_on_the_thread_pool() {
    let data = simulate_gaussian(60, 3).unwrap().data;
    let forest = BaggedTrees::with_trees(10);
    let plan = PlanTemplate {
        k: KSpec::Count(12),
        perturbations_per_datum: 2,
        design: RoundDesign::Balanced,
        ..PlanTemplate::default()
    }
    .resolve(60, Family::Gaussian, 9)
    .unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                (
                    estimate_gdf(&forest, &data, &plan).unwrap(),
                    repeated_cv(&forest, &data, 5, 2, 4).unwrap(),
                )
            })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn comparison_prefers_the_glm_on_linear_data() {
    let sim = simulate_bernoulli(200, 6).unwrap();
    let data = &sim.data;
    let glm = Glm::default();
    let cv = repeated_cv(&glm, data, 10, 3, 1).unwrap();
    let wide = repeated_cv(&glm, data, 10, 3, 1).unwrap();
    // same fit, but charged ten extra parameters
    let cmp = compare_models(
        &["glm".into(), "glm_padded".into()],
        &[cv.p_hat, cv.p_hat + 10.0],
        &[cv, wide],
        data.n(),
        CriteriaOptions::default(),
    )
    .unwrap();
    assert!(cmp.rows[0].w_aic > cmp.rows[1].w_aic);
    assert!((cmp.rows[0].w_cv - 0.5).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_the_rows(n in 10usize..200, k in 2usize..10, seed: u64) {
        let plan = make_folds(n, k, None, seed).unwrap();
        let mut seen = vec![0u32; n];
        for f in 0..k {
            for i in plan.test_rows(f) {
                seen[i] += 1;
            }
            prop_assert_eq!(plan.test_rows(f).len() + plan.train_rows(f).len(), n);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes = plan.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
