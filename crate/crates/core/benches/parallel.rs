use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nvselect::bfs::brute_force_bfs;
use nvselect::datagen::{make_instance, DemandKind, DemandModelSpec};
use nvselect::erm::{grid_search, CostParams, GridOptions, LambdaGrid, Regularizer, Validation};
use nvselect::harness::{run_cell, Cell, Method};
use nvselect::milp::SolveLimits;
use nvselect::par::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn spec() -> DemandModelSpec {
    DemandModelSpec { kind: DemandKind::Linear, sigma_eps: 1.0 }
}

fn oracle(c: &mut Criterion) {
    let bundle = make_instance(100, 6, spec(), 1).unwrap();
    let costs = CostParams { b: 2.0, h: 1.0 };
    let mut g = c.benchmark_group("brute_force_bfs_m6");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| brute_force_bfs(&bundle.train, &bundle.validation, &costs, exec).unwrap())
        });
    }
    g.finish();
}

fn l1_grid(c: &mut Criterion) {
    let bundle = make_instance(200, 8, spec(), 2).unwrap();
    let costs = CostParams { b: 2.0, h: 1.0 };
    let grid = LambdaGrid::data_scaled(&bundle.train, &costs, 20).unwrap();
    let mut g = c.benchmark_group("l1_grid_20");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = GridOptions { limits: SolveLimits::default(), exec, penalize_intercept: true, beta_bound: None };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let data = Validation::Holdout { train: &bundle.train, validation: &bundle.validation };
                grid_search(data, &costs, Regularizer::L1, &grid, &opts).unwrap()
            })
        });
    }
    g.finish();
}

fn sweep_cells(c: &mut Criterion) {
    let cells: Vec<Cell> = (0..4)
        .map(|rep| Cell {
            n: 60,
            m: 4,
            kind: DemandKind::Linear,
            sigma_eps: 1.0,
            costs: CostParams { b: 2.0, h: 1.0 },
            rep,
            seed: 100 + rep as u64,
        })
        .collect();
    let settings = nvselect::harness::MethodSettings {
        limits: SolveLimits { time_limit: 60.0, ..SolveLimits::default() },
        k: 3,
        grid_points: 8,
        deploy: Default::default(),
        penalize_intercept: true,
        exec: Exec::Sequential,
    };
    let methods = [Method::Bfs, Method::ErmL1Cv];
    let mut g = c.benchmark_group("cells_4");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| nvselect::par::map(exec, &cells, |cell| run_cell(cell, &methods, &settings)))
        });
    }
    g.finish();
}

criterion_group!(benches, oracle, l1_grid, sweep_cells);
criterion_main!(benches);
