use proptest::prelude::*;

use super::*;

fn approx(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Brute-force LP oracle for a handful of variables: enumerate every choice of
/// `n` active constraints (rows as equalities plus finite bounds), solve the
/// square system, keep feasible points, return the best objective.
fn vertex_oracle(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars;
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in &lp.rows {
        let mut a = vec![0.0; n];
        for &(j, v) in &row.coeffs {
            a[j] += v;
        }
        planes.push((a, row.rhs));
    }
    for (j, &(lo, hi)) in lp.var_bounds.iter().enumerate() {
        for b in [lo, hi] {
            if b.is_finite() {
                let mut a = vec![0.0; n];
                a[j] = 1.0;
                planes.push((a, b));
            }
        }
    }
    let k = planes.len();
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        return None;
    }
    loop {
        // Gaussian elimination on the chosen planes
        let mut m: Vec<Vec<f64>> = idx
            .iter()
            .map(|&p| {
                let mut r = planes[p].0.clone();
                r.push(planes[p].1);
                r
            })
            .collect();
        let mut ok = true;
        for c in 0..n {
            let piv = (c..n).max_by(|&a, &b| m[a][c].abs().partial_cmp(&m[b][c].abs()).unwrap()).unwrap();
            if m[piv][c].abs() < 1e-10 {
                ok = false;
                break;
            }
            m.swap(c, piv);
            for r in 0..n {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for cc in c..=n {
                        m[r][cc] -= f * m[c][cc];
                    }
                }
            }
        }
        if ok {
            let x: Vec<f64> = (0..n).map(|i| m[i][n] / m[i][i]).collect();
            if lp.primal_infeasibility(&x) <= 1e-9 {
                let obj = lp.objective_value(&x);
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < k - n + i {
                idx[i] += 1;
                for t in i + 1..n {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

fn check_certificates(lp: &LinearProgram, sol: &LpSolution) {
    assert!(sol.is_optimal());
    assert!(lp.primal_infeasibility(&sol.primal) <= 1e-7, "primal infeasible");
    assert!(dual_infeasibility(lp, sol).unwrap() <= 1e-7, "dual infeasible");
    assert!(duality_residual(lp, sol).unwrap() <= 1e-8, "duality gap");
    assert!(complementary_slackness(lp, sol).unwrap() <= 1e-8, "complementary slackness");
}

#[test]
fn single_binding_constraint() {
    let mut lp = LinearProgram::new(1);
    lp.objective[0] = 1.0;
    lp.add_row(vec![(0, 1.0)], Relation::Ge, 3.0);
    let sol = solve_lp(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!(approx(sol.primal[0], 3.0, 1e-12));
    assert!(approx(sol.objective, 3.0, 1e-12));
    // binding >= row in a minimization: dual is +1
    assert!(approx(sol.duals[0], 1.0, 1e-12));
    assert!(duality_residual(&lp, &sol).unwrap() <= 1e-8);
    check_certificates(&lp, &sol);
}

#[test]
fn perturbed_dual_shifts_residual_by_rhs() {
    let mut lp = LinearProgram::new(1);
    lp.objective[0] = 1.0;
    lp.add_row(vec![(0, 1.0)], Relation::Ge, 3.0);
    let mut sol = solve_lp(&lp).unwrap();
    sol.duals[0] += 1.0;
    assert!(approx(duality_residual(&lp, &sol).unwrap(), 3.0, 1e-10));
}

#[test]
fn contradictory_rows_are_infeasible() {
    let mut lp = LinearProgram::new(1);
    lp.objective[0] = 1.0;
    lp.var_bounds[0] = (f64::NEG_INFINITY, f64::INFINITY);
    lp.add_row(vec![(0, 1.0)], Relation::Ge, 3.0);
    lp.add_row(vec![(0, 1.0)], Relation::Le, 2.0);
    let sol = solve_lp(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Infeasible);
    assert!(sol.primal.is_empty());
    assert!(duality_residual(&lp, &sol).is_err());
}

#[test]
fn face_optimum_is_a_vertex_of_the_triangle() {
    let mut lp = LinearProgram::new(2);
    lp.objective = vec![-1.0, -1.0];
    lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Le, 1.0);
    let sol = solve_lp(&lp).unwrap();
    assert_eq!(vertex_oracle(&lp), Some(-1.0));
    assert!(approx(sol.objective, -1.0, 1e-12));
    assert!(approx(sol.primal[0] + sol.primal[1], 1.0, 1e-12));
    check_certificates(&lp, &sol);
}

#[test]
fn unbounded_ray_is_detected() {
    let mut lp = LinearProgram::new(2);
    lp.objective = vec![-1.0, 0.0];
    lp.add_row(vec![(0, 1.0), (1, -1.0)], Relation::Le, 1.0);
    let sol = solve_lp(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Unbounded);
}

#[test]
fn malformed_programs_are_rejected_not_infeasible() {
    let mut lp = LinearProgram::new(1);
    lp.add_row(vec![(3, 1.0)], Relation::Le, 1.0);
    assert!(matches!(solve_lp(&lp), Err(Error::Malformed(_))));
    let mut lp = LinearProgram::new(1);
    lp.var_bounds[0] = (2.0, 1.0);
    assert!(matches!(solve_lp(&lp), Err(Error::Malformed(_))));
}

#[test]
fn free_variables_and_equalities() {
    // min |x - 2| + |y + 1| via splitting, x, y free
    let mut lp = LinearProgram::new(0);
    let x = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
    let y = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
    let p = lp.add_var(1.0, 0.0, f64::INFINITY);
    let q = lp.add_var(1.0, 0.0, f64::INFINITY);
    lp.add_row(vec![(p, 1.0), (x, 1.0)], Relation::Ge, 2.0);
    lp.add_row(vec![(p, 1.0), (x, -1.0)], Relation::Ge, -2.0);
    lp.add_row(vec![(q, 1.0), (y, 1.0)], Relation::Ge, -1.0);
    lp.add_row(vec![(q, 1.0), (y, -1.0)], Relation::Ge, 1.0);
    lp.add_row(vec![(x, 1.0), (y, 1.0)], Relation::Eq, 3.0);
    let sol = solve_lp(&lp).unwrap();
    // x + y = 3 forces a total deviation of 2
    assert!(approx(sol.objective, 2.0, 1e-9));
    check_certificates(&lp, &sol);
}

#[test]
fn degenerate_duplicated_rows_terminate() {
    // many copies of the same constraints through one vertex
    for copies in [2usize, 5, 20] {
        let mut lp = LinearProgram::new(3);
        lp.objective = vec![-1.0, -1.0, -1.0];
        for _ in 0..copies {
            lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Le, 1.0);
            lp.add_row(vec![(1, 1.0), (2, 1.0)], Relation::Le, 1.0);
            lp.add_row(vec![(0, 1.0), (2, 1.0)], Relation::Le, 1.0);
            lp.add_row(vec![(0, 1.0), (1, 1.0), (2, 1.0)], Relation::Le, 1.5);
        }
        let opts = LpOptions { max_iterations: Some(10_000), ..Default::default() };
        let sol = solve_lp_with(&lp, &opts).unwrap();
        assert!(approx(sol.objective, -1.5, 1e-9));
        assert!(sol.iterations < 10_000);
        check_certificates(&lp, &sol);
    }
}

#[test]
fn dense_and_sparse_factorizations_agree() {
    let lp = random_lp(42, 30, 20);
    let dense = solve_lp_with(&lp, &LpOptions { factorization: Factorization::Dense, ..Default::default() }).unwrap();
    let sparse = solve_lp_with(&lp, &LpOptions { factorization: Factorization::Sparse, ..Default::default() }).unwrap();
    assert_eq!(dense.status, sparse.status);
    if dense.is_optimal() {
        assert!(approx(dense.objective, sparse.objective, 1e-8));
    }
}

#[test]
fn identical_programs_give_identical_solutions() {
    let lp = random_lp(7, 25, 15);
    let a = solve_lp(&lp).unwrap();
    let b = solve_lp(&lp).unwrap();
    assert_eq!(a, b);
}

#[test]
fn lp_text_dump_lists_sections() {
    let mut lp = LinearProgram::new(0);
    let x = lp.add_named_var("beta0", 1.0, f64::NEG_INFINITY, f64::INFINITY);
    let z = lp.add_named_var("z0", 0.0, 0.0, 1.0);
    lp.add_row(vec![(x, 1.0), (z, -3.0)], Relation::Le, 0.0);
    let mut out = Vec::new();
    write_lp_format(&lp, &[z], &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("Minimize"));
    assert!(text.contains("c0: 1 beta0 - 3 z0 <= 0"));
    assert!(text.contains("beta0 free"));
    assert!(text.contains("Binaries\n z0"));
}

/// Random feasible LP: rows built around a known interior point, box bounds
/// keep it bounded; some variables are free with box rows instead.
fn random_lp(seed: u64, rows: usize, vars: usize) -> LinearProgram {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut lp = LinearProgram::new(vars);
    let x0: Vec<f64> = (0..vars).map(|_| rng.random_range(-1.0..1.0)).collect();
    for j in 0..vars {
        lp.objective[j] = rng.random_range(-2.0..2.0);
        lp.var_bounds[j] = match j % 3 {
            0 => (-2.0, 2.0),
            1 => (-3.0, f64::INFINITY),
            _ => (f64::NEG_INFINITY, 3.0),
        };
    }
    for _ in 0..rows {
        let mut coeffs = Vec::new();
        for j in 0..vars {
            if rng.random::<f64>() < 0.4 {
                coeffs.push((j, rng.random_range(-1.0..1.0)));
            }
        }
        let act: f64 = coeffs.iter().map(|&(j, a)| a * x0[j]).sum();
        match rng.random_range(0..3) {
            0 => lp.add_row(coeffs, Relation::Le, act + rng.random_range(0.0..1.0)),
            1 => lp.add_row(coeffs, Relation::Ge, act - rng.random_range(0.0..1.0)),
            _ => lp.add_row(coeffs, Relation::Eq, act),
        };
    }
    // keep the half-bounded variables bounded through rows
    for j in 0..vars {
        if j % 3 != 0 {
            lp.add_row(vec![(j, 1.0)], Relation::Le, 4.0);
            lp.add_row(vec![(j, 1.0)], Relation::Ge, -4.0);
        }
    }
    lp
}

#[test]
fn random_lps_carry_valid_certificates() {
    for seed in 0..100 {
        let rows = 5 + (seed as usize % 20);
        let vars = 3 + (seed as usize % 12);
        let lp = random_lp(seed, rows, vars);
        let sol = solve_lp(&lp).unwrap();
        check_certificates(&lp, &sol);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_vertex_enumeration(
        costs in prop::collection::vec(-3.0f64..3.0, 3),
        rows in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 3), 0usize..3, -2.0f64..2.0), 1..6),
    ) {
        let mut lp = LinearProgram::new(3);
        lp.objective = costs;
        lp.var_bounds = vec![(-2.0, 2.0), (-1.0, 3.0), (0.0, 1.5)];
        for (a, rel, b) in rows {
            let rel = [Relation::Le, Relation::Ge, Relation::Eq][rel];
            lp.add_row(a.into_iter().enumerate().collect(), rel, b);
        }
        let sol = solve_lp(&lp).unwrap();
        match vertex_oracle(&lp) {
            Some(best) => {
                prop_assert_eq!(sol.status, LpStatus::Optimal);
                prop_assert!((sol.objective - best).abs() <= 1e-7 * best.abs().max(1.0));
                prop_assert!(duality_residual(&lp, &sol).unwrap() <= 1e-8);
                prop_assert!(complementary_slackness(&lp, &sol).unwrap() <= 1e-8);
            }
            None => prop_assert_eq!(sol.status, LpStatus::Infeasible),
        }
    }
}
