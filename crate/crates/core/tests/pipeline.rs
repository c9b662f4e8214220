use nvselect::bfs::{brute_force_bfs_cv, solve_bfs_cv, BfsOptions};
use nvselect::datagen::{instance_splits, load_instance, make_instance, save_instance, DemandKind, DemandModelSpec};
use nvselect::erm::CostParams;
use nvselect::harness::report::{emit_figure_data, figure};
use nvselect::harness::{read_results, run_experiment, run_method, ExperimentConfig, Method, RunOptions, RESULTS_FILE};
use nvselect::milp::SolveLimits;
use nvselect::par::Exec;

#[test]
fn stored_instance_solves_like_the_original() {
    let bundle = make_instance(40, 4, DemandModelSpec { kind: DemandKind::Linear, sigma_eps: 1.0 }, 9).unwrap();
    let splits = instance_splits(&bundle, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_instance(dir.path(), &bundle, Some(&splits)).unwrap();
    let (loaded, stored) = load_instance(dir.path()).unwrap();
    assert_eq!(stored.as_ref(), Some(&splits));
    let costs = CostParams::new(2.0, 1.0).unwrap();
    let opts = BfsOptions { limits: SolveLimits::unlimited(), ..Default::default() };
    let a = solve_bfs_cv(&bundle.in_sample(), &splits, &costs, &opts).unwrap();
    let b = solve_bfs_cv(&loaded.in_sample(), &splits, &costs, &opts).unwrap();
    assert!((a.validation_cost - b.validation_cost).abs() < 1e-9);
    let oracle = brute_force_bfs_cv(&loaded.in_sample(), &splits, &costs, Exec::Parallel).unwrap();
    assert!((a.validation_cost - oracle.validation_cost).abs() < 1e-6);
}

#[test]
fn every_method_runs_end_to_end() {
    let cfg = ExperimentConfig { k: 3, grid_points: 5, ..ExperimentConfig::desk_default() };
    let bundle = make_instance(40, 4, DemandModelSpec { kind: DemandKind::Linear, sigma_eps: 1.0 }, 5).unwrap();
    let splits = instance_splits(&bundle, cfg.k).unwrap();
    for method in Method::ALL {
        let o = run_method(method, &bundle, &splits, &cfg.costs[0], &cfg.method_settings()).unwrap();
        assert_eq!(o.mask.m(), 4);
        assert_eq!(o.deployed.beta.len(), 5);
        assert!(o.validation_cost.is_finite());
        assert_eq!(o.lambda.is_some(), !matches!(method, Method::Bfs | Method::BfsCv));
        // deselected coefficients are exact zeros
        for (z, b) in o.mask.z.iter().zip(&o.deployed.beta) {
            if !z {
                assert_eq!(*b, 0.0, "{method}");
            }
        }
    }
}

#[test]
fn sweep_over_two_sizes_feeds_a_figure() {
    let cfg = ExperimentConfig {
        n: vec![24, 40],
        m: vec![4],
        replications: 2,
        methods: vec![Method::BfsCv, Method::ErmL1Cv],
        k: 2,
        grid_points: 4,
        ..ExperimentConfig::desk_default()
    };
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(&cfg, dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(s.rows, 8);
    let rows = read_results(dir.path().join(RESULTS_FILE)).unwrap();
    let fig = emit_figure_data(&rows, &figure("accuracy-n").unwrap()).unwrap();
    assert_eq!(fig.len(), 2 * cfg.methods.len());
    let dev = emit_figure_data(&rows, &figure("deviation-n").unwrap()).unwrap();
    assert!(dev.iter().all(|r| r.method == Method::ErmL1Cv && r.count == 2));
}
