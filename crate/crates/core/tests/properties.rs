use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nvselect::bfs::{solve_bfs, BfsOptions};
use nvselect::datagen::{make_instance, shuffle_split, Dataset, DemandKind, DemandModelSpec};
use nvselect::erm::{
    fit_erm, fit_erm_l0, fit_erm_l1, grid_search, CostParams, DecisionFunction, FeatureMask, GridOptions, L0Options,
    LambdaGrid, Regularizer, Validation,
};
use nvselect::metrics::{accuracy, newsvendor_cost, signed_ranks, wilcoxon_exact, wilcoxon_normal};
use nvselect::milp::SolveLimits;

fn kind_strategy() -> impl Strategy<Value = DemandKind> {
    prop_oneof![
        Just(DemandKind::Linear),
        Just(DemandKind::NonlinearHomoscedastic),
        Just(DemandKind::NonlinearHeteroscedastic),
    ]
}

fn costs_strategy() -> impl Strategy<Value = CostParams> {
    (1.0..10.0f64, 1.0..10.0f64).prop_map(|(b, h)| CostParams::new(b, h).unwrap())
}

fn instance(n: usize, m: usize, seed: u64) -> (Dataset, Dataset) {
    let b = make_instance(n, m, DemandModelSpec { kind: DemandKind::Linear, sigma_eps: 1.0 }, seed).unwrap();
    (b.train, b.validation)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn demands_are_nonnegative_and_reproducible(kind in kind_strategy(), sigma in 0.1..5.0f64, seed in any::<u64>()) {
        let spec = DemandModelSpec { kind, sigma_eps: sigma };
        let a = make_instance(30, 5, spec, seed).unwrap();
        prop_assert!(a.train.demands.iter().chain(&a.validation.demands).chain(&a.test.demands).all(|d| *d >= 0.0));
        prop_assert_eq!(&a, &make_instance(30, 5, spec, seed).unwrap());
    }

    #[test]
    fn splits_are_disjoint_and_sized(n in 2usize..500, k in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = shuffle_split(n, k, &mut rng).unwrap();
        prop_assert_eq!(s.splits.len(), k);
        for (t, v) in &s.splits {
            prop_assert_eq!(t.len() + v.len(), n.min(200));
            prop_assert!(t.len() >= v.len());
            prop_assert!(t.iter().all(|i| !v.contains(i) && *i < n));
        }
    }

    #[test]
    fn cost_is_jointly_homogeneous(seed in any::<u64>(), scale in 0.1..20.0f64, costs in costs_strategy()) {
        let (t, _) = instance(20, 4, seed);
        let beta = DecisionFunction { beta: vec![4.0, 0.3, -0.2, 0.0, 0.1] };
        let scaled = CostParams::new(costs.b * scale, costs.h * scale).unwrap();
        let a = newsvendor_cost(&beta, &t, &costs).unwrap() * scale;
        let b = newsvendor_cost(&beta, &t, &scaled).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn accuracy_ignores_consistent_permutations(
        pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..30),
        shuffle_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let (a, b): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
        let mut perm = pairs.clone();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let (pa, pb): (Vec<bool>, Vec<bool>) = perm.into_iter().unzip();
        let x = accuracy(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((x - accuracy(&pa, &pb).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_branches_agree_at_the_crossover(diffs in proptest::collection::vec(-5.0..5.0f64, 20)) {
        let (r, p) = signed_ranks(&diffs);
        prop_assume!(r.len() == 20);
        prop_assert!((wilcoxon_exact(&r, &p) - wilcoxon_normal(&r, &p)).abs() <= 0.01);
    }

    #[test]
    fn intercept_only_fit_is_a_critical_quantile(
        demands in proptest::collection::vec(0.0..50.0f64, 1..40),
        costs in costs_strategy(),
    ) {
        let data = Dataset::new(vec![vec![1.0]; demands.len()], demands.clone()).unwrap();
        let fit = fit_erm(&data, &costs, Some(&FeatureMask::intercept_only(0))).unwrap();
        let best = demands
            .iter()
            .map(|&q| newsvendor_cost(&DecisionFunction { beta: vec![q] }, &data, &costs).unwrap())
            .fold(f64::INFINITY, f64::min);
        prop_assert!((fit.train_cost - best).abs() <= 1e-9 * best.max(1.0));
        let again = fit_erm(&data, &costs, Some(&FeatureMask::intercept_only(0))).unwrap();
        prop_assert_eq!(fit.function, again.function);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn zero_lambda_matches_plain_erm(seed in any::<u64>(), costs in costs_strategy()) {
        let (t, _) = instance(30, 4, seed);
        let plain = fit_erm(&t, &costs, None).unwrap().objective;
        let l1 = fit_erm_l1(&t, &costs, 0.0, true).unwrap().objective;
        let l0 = fit_erm_l0(&t, &costs, 0.0, &L0Options { limits: SolveLimits::unlimited(), ..Default::default() })
            .unwrap()
            .objective;
        prop_assert!((plain - l1).abs() <= 1e-7);
        prop_assert!((plain - l0).abs() <= 1e-7);
    }

    #[test]
    fn l0_sparsity_is_monotone_on_optimal_points(seed in any::<u64>(), costs in costs_strategy()) {
        let (t, _) = instance(30, 4, seed);
        let grid = LambdaGrid::data_scaled(&t, &costs, 8).unwrap();
        let opts = L0Options { limits: SolveLimits::unlimited(), ..Default::default() };
        let counts: Vec<usize> = grid
            .values
            .iter()
            .map(|&l| fit_erm_l0(&t, &costs, l, &opts).unwrap())
            .map(|f| f.mask.count())
            .collect();
        prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{:?}", counts);
    }

    #[test]
    fn bfs_is_optimistic_and_certified(seed in any::<u64>(), costs in costs_strategy()) {
        let (t, v) = instance(40, 4, seed);
        let sol = solve_bfs(&t, &v, &costs, &BfsOptions { limits: SolveLimits::unlimited(), ..Default::default() }).unwrap();
        let refit = fit_erm(&t, &costs, Some(&sol.mask)).unwrap();
        let again = newsvendor_cost(&refit.function, &v, &costs).unwrap();
        prop_assert!(again >= sol.validation_cost - 1e-6);
        prop_assert!(sol.boxes_hold(&costs));
        prop_assert!(sol.max_duality_residual() <= 1e-6);
        let l0 = grid_search(
            Validation::Holdout { train: &t, validation: &v },
            &costs,
            Regularizer::L0,
            &LambdaGrid::data_scaled(&t, &costs, 10).unwrap(),
            &GridOptions { limits: SolveLimits::unlimited(), ..GridOptions::default() },
        )
        .unwrap();
        prop_assert!(sol.validation_cost <= l0.validation_cost + 1e-6);
    }
}
