use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use ztube::containment::{
    containment_oracle, emit_phi_constraints, phi0_runtime_condition, phi_feasible, precompute_phi0, solve_gamma,
    solve_phi_unscaled,
    InclusionInstance, SymInstance, Term,
};
use ztube::invariance::{compute_rpi, invariance_slack, krylov_generators, mrpi_reference, RpiObjective};
use ztube::program::{const_vec, ConvexProgram, Family, LinExpr};
use ztube::sets::{Polyhedron, Zonotope, DEFAULT_TOL};
use ztube::solver::{ClarabelAdapter, SolverAdapter, Status};

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn vector(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(lo..hi, n).prop_map(DVector::from_vec)
}

fn zonotope2(max_gens: usize) -> impl Strategy<Value = Zonotope> {
    (1..=max_gens)
        .prop_flat_map(|d| (vector(2, -3.0, 3.0), matrix(2, d, -2.0, 2.0)))
        .prop_map(|(c, g)| Zonotope::new(c, g).unwrap())
}

fn polyhedron2() -> impl Strategy<Value = Polyhedron> {
    (3usize..8)
        .prop_flat_map(|q| (matrix(q, 2, -1.0, 1.0), vector(q, 0.5, 6.0)))
        .prop_filter("nonzero normals", |(f, _)| f.row_iter().all(|r| r.norm() > 1e-3))
        .prop_map(|(f, t)| Polyhedron::new(f, t).unwrap())
}

fn same_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    if a.shape() != b.shape() {
        return false;
    }
    let mut used = vec![false; b.ncols()];
    a.column_iter().all(|ca| {
        (0..b.ncols()).any(|j| {
            if !used[j] && (ca - b.column(j)).amax() < 1e-12 {
                used[j] = true;
                true
            } else {
                false
            }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn support_of_sum_is_sum_of_supports(a in zonotope2(5), b in zonotope2(5), d in vector(2, -1.0, 1.0)) {
        let s = a.minkowski_sum(&b).unwrap();
        let lhs = s.support_value(&d).unwrap();
        let rhs = a.support_value(&d).unwrap() + b.support_value(&d).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn affine_map_distributes(a in zonotope2(4), b in zonotope2(4), m in matrix(3, 2, -2.0, 2.0)) {
        let left = a.minkowski_sum(&b).unwrap().affine_map(&m).unwrap();
        let right = a.affine_map(&m).unwrap().minkowski_sum(&b.affine_map(&m).unwrap()).unwrap();
        prop_assert!((left.center() - right.center()).amax() < 1e-12);
        prop_assert!(same_columns(left.generators(), right.generators()));
    }

    #[test]
    fn support_test_matches_vertex_oracle(z in zonotope2(6), p in polyhedron2()) {
        let support = p.contains_zonotope(&z, 1e-9).unwrap();
        let verts = z.vertices_2d().unwrap();
        let oracle = verts.iter().all(|v| p.max_violation(&DVector::from_vec(v.to_vec())) <= 1e-9);
        prop_assert_eq!(support, oracle);
    }

    #[test]
    fn subset_reflexive_and_transitive(p in polyhedron2(), s1 in 1.0f64..2.0, s2 in 1.0f64..2.0) {
        let q = Polyhedron::new(p.normals().clone(), p.offsets() * s1).unwrap();
        let r = Polyhedron::new(q.normals().clone(), q.offsets() * s2).unwrap();
        prop_assert!(p.is_subset_of(&p, DEFAULT_TOL).unwrap());
        prop_assert!(p.is_subset_of(&q, DEFAULT_TOL).unwrap());
        prop_assert!(q.is_subset_of(&r, DEFAULT_TOL).unwrap());
        prop_assert!(p.is_subset_of(&r, DEFAULT_TOL).unwrap());
    }

    #[test]
    fn redundancy_removal_keeps_the_set(p in polyhedron2(), extra in matrix(3, 2, -1.0, 1.0)) {
        // add rows implied by the original ones
        let mut f = p.normals().clone();
        let mut t = p.offsets().clone();
        for row in extra.row_iter() {
            let c = row.transpose();
            if let ztube::sets::LpMax::Bounded(v) = p.maximize(&c, &[]).unwrap() {
                let last = f.nrows();
                f = f.insert_row(last, 0.0);
                f.row_mut(last).copy_from(&row);
                t = t.push(v + 0.5);
            }
        }
        let big = Polyhedron::new(f, t).unwrap();
        let small = big.remove_redundancy(DEFAULT_TOL).unwrap();
        prop_assert!(small.num_rows() <= p.num_rows());
        prop_assert!(small.is_subset_of(&big, DEFAULT_TOL).unwrap());
        prop_assert!(big.is_subset_of(&small, DEFAULT_TOL).unwrap());
    }

    #[test]
    fn certificates_are_sound_and_equivalent(l in zonotope2(4), r in zonotope2(4)) {
        let inst = InclusionInstance::new(vec![Term::from_zonotope(&l)], Term::from_zonotope(&r)).unwrap();
        let g = solve_gamma(&inst, DEFAULT_TOL).unwrap().is_feasible();
        let p = solve_phi_unscaled(&inst, DEFAULT_TOL).unwrap().is_feasible();
        prop_assert_eq!(g, p);
        if g {
            prop_assert!(containment_oracle(&inst, DEFAULT_TOL).unwrap());
        }
    }

    /// A fixed `Phi0` passing the runtime rows implies the per-step
    /// certificate exists, and numeric scaled emission agrees with the
    /// folded unscaled solve.
    #[test]
    fn phi0_rows_imply_phi_and_scaled_form_is_consistent(
        gl in matrix(2, 2, -1.0, 1.0),
        gw in matrix(2, 1, -0.5, 0.5),
        gr in matrix(2, 3, -2.0, 2.0),
        dl in vector(2, 0.0, 1.5),
        dr in vector(3, 0.0, 1.5),
    ) {
        let unit = InclusionInstance::new(
            vec![Term::new(DVector::zeros(2), gl.clone()), Term::new(DVector::zeros(2), gw.clone())],
            Term::new(DVector::zeros(2), gr.clone()),
        ).unwrap();
        let scaled = InclusionInstance::new(
            vec![Term::new(DVector::zeros(2), gl.clone()).scaled(dl.clone()), Term::new(DVector::zeros(2), gw.clone())],
            Term::new(DVector::zeros(2), gr.clone()).scaled(dr.clone()),
        ).unwrap();
        let folded = InclusionInstance::new(
            vec![
                Term::new(DVector::zeros(2), scaled.lhs[0].folded_generators()),
                Term::new(DVector::zeros(2), gw.clone()),
            ],
            Term::new(DVector::zeros(2), scaled.rhs.folded_generators()),
        ).unwrap();
        let unscaled = solve_phi_unscaled(&folded, DEFAULT_TOL).unwrap().is_feasible();

        let sym = SymInstance::from_numeric(&scaled);
        let mut prog = ConvexProgram::new();
        emit_phi_constraints(&mut prog, &sym, "phi", Family::Reach).unwrap();
        let sol = ClarabelAdapter::default().solve(&prog);
        let emitted = sol.status == Status::Optimal;
        prop_assert_eq!(emitted, unscaled);

        if let Some(phi0) = precompute_phi0(&unit, DEFAULT_TOL).unwrap().feasible() {
            let budget = phi0.runtime_budget(&[dl.clone(), DVector::from_element(1, 1.0)]).unwrap();
            let rows_ok = budget.iter().zip(dr.iter()).all(|(b, d)| *b <= d + 1e-9);
            let mut prog = ConvexProgram::new();
            let deltas = vec![const_vec(&dl), vec![LinExpr::constant(1.0)]];
            phi0_runtime_condition(&mut prog, &phi0, &deltas, &const_vec(&dr), Family::Reach).unwrap();
            let viol = prog.residual(&[]);
            prop_assert_eq!(rows_ok, viol <= 1e-9);
            if rows_ok {
                prop_assert!(emitted);
            }
        }
    }
}

fn stable_2x2() -> impl Strategy<Value = DMatrix<f64>> {
    matrix(2, 2, -0.9, 0.9).prop_filter("contractive", |a| ztube::linalg::spectral_radius(a) < 0.85)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The reference scaling `(1 - mu)^-1` on the first `s` blocks is a
    /// feasible point of the RPI program, so the optimum never exceeds it.
    #[test]
    fn rpi_is_invariant_and_no_larger_than_reference_point(a in stable_2x2(), g in matrix(2, 2, -0.3, 0.3), s in 2usize..5) {
        prop_assume!(g.determinant().abs() > 1e-3);
        let w = Zonotope::new(DVector::zeros(2), g).unwrap();
        let reference = mrpi_reference(&a, &w, s);
        prop_assume!(reference.is_ok());
        let mu = reference.unwrap().mu;
        let rpi = compute_rpi(&a, &w, s, RpiObjective::Minimize).unwrap();
        prop_assert!(invariance_slack(&a, &w, &rpi.zonotope()).unwrap() <= 1e-6);
        let dw = w.num_generators();
        let g_bar = krylov_generators(&a, w.generators(), s);
        let delta_f = DVector::from_fn(g_bar.ncols(), |i, _| if i < s * dw { 1.0 / (1.0 - mu) } else { 0.0 });
        let inst = InclusionInstance::new(
            vec![
                Term::new(DVector::zeros(2), &a * &g_bar).scaled(delta_f.clone()),
                Term::from_zonotope(&w),
            ],
            Term::new(DVector::zeros(2), g_bar).scaled(delta_f.clone()),
        ).unwrap();
        prop_assert!(phi_feasible(&inst).unwrap());
        prop_assert!(rpi.delta.sum() <= delta_f.sum() * (1.0 + 1e-7) + 1e-9);
    }

    #[test]
    fn longer_expansion_never_costs_more(a in stable_2x2(), g in matrix(2, 2, -0.3, 0.3), s in 1usize..4) {
        let w = Zonotope::new(DVector::zeros(2), g).unwrap();
        // short expansions can be infeasible when W is nearly flat
        let short = compute_rpi(&a, &w, s, RpiObjective::Minimize);
        prop_assume!(short.is_ok());
        let short = short.unwrap();
        let long = compute_rpi(&a, &w, s + 1, RpiObjective::Minimize).unwrap();
        prop_assert!(long.delta.sum() <= short.delta.sum() + 1e-6);
    }
}
