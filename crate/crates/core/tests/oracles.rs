mod common;

use cemgms::auxiliary::AuxiliarySpace;
use cemgms::cem_offline::{build_basis_matrix, BasisSet, Variant};
use cemgms::online::{enrich_loop, EnrichMode, OnlineSettings, ResidualEstimator, StopReason};
use common::*;

#[test]
fn partition_of_unity_sums_to_one() {
    assert!(pou_defect(2, 32, 4) <= 1e-14);
    assert!(pou_defect(3, 8, 2) <= 1e-14);
}

#[test]
fn homogeneous_block_has_rigid_kernel() {
    assert_eq!(rigid_kernel(2, 32, 4), (3, 3));
    assert_eq!(rigid_kernel(3, 8, 4), (6, 6));
}

#[test]
fn constrained_columns_are_phi_orthogonal() {
    let p = preset_problem(32, 4, 1e4);
    assert!(phi_orthogonality(&p, 3, 1) <= 1e-8);
}

#[test]
fn sparse_saddle_point_matches_null_space() {
    let p = preset_problem(16, 4, 1e4);
    assert!(kkt_vs_null_space(&p, 3, 1) <= 1e-8);
}

#[test]
fn relaxed_columns_satisfy_weak_form() {
    let p = preset_problem(32, 4, 1e4);
    assert!(relaxed_weak_form(&p, 3, 1, 8, 11) <= 1e-8);
}

#[test]
fn coarse_solution_is_galerkin() {
    let p = preset_problem(32, 4, 1e4);
    for variant in [Variant::Constrained, Variant::Relaxed] {
        let (orth, pyth) = galerkin_checks(&p, variant, 3, 1);
        assert!(orth <= 1e-8, "{variant:?} {orth:e}");
        assert!(pyth <= 1e-8, "{variant:?} {pyth:e}");
    }
}

#[test]
fn whole_domain_columns_match_global_oracle() {
    let p = preset_problem(16, 2, 1e3);
    for variant in [Variant::Constrained, Variant::Relaxed] {
        let gap = localization_limit(&p, variant, 3);
        assert!(gap <= 1e-8, "{variant:?} {gap:e}");
    }
}

#[test]
fn residual_norms_match_dense_solves() {
    let p = preset_problem(16, 4, 1e4);
    assert!(delta_vs_dense(&p, 2, 1) <= 1e-6);
}

#[test]
fn fine_solver_converges_at_first_order() {
    let ns = [8, 16, 32];
    let hs: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let es: Vec<f64> = ns.iter().map(|&n| manufactured_error(n)).collect();
    let slope = loglog_slope(&hs, &es);
    assert!((slope - 1.0).abs() <= 0.15, "slope {slope}");
}

#[test]
fn enrichment_never_increases_energy_error() {
    let p = preset_problem(32, 8, 1e4);
    let aux = AuxiliarySpace::build_uniform(&p.grid, &p.coeffs, 2).unwrap();
    let basis = build_basis_matrix(&p.grid, &p.a, &aux, Variant::Relaxed, 1).unwrap();
    for mode in [EnrichMode::Uniform, EnrichMode::Adaptive] {
        let settings = OnlineSettings { theta: 0.3, mode, tol: 0.0, max_iter: 3, layers: Some(1) };
        let state = enrich_loop(&p, &aux, basis.clone(), &settings, 1).unwrap();
        assert!(state.history.len() >= 2);
        for w in state.history.windows(2) {
            assert!(w[1].e_h1 <= w[0].e_h1 + 1e-10, "{mode:?}: {} -> {}", w[0].e_h1, w[1].e_h1);
            assert!(w[1].dof >= w[0].dof);
        }
    }
}

#[test]
fn zero_residual_stops_immediately() {
    let p = preset_problem(16, 4, 1e2);
    let zeros = vec![0.0; p.grid.n_free()];
    let estimator = ResidualEstimator::new(&p.grid, &p.a, p.grid.interior_vertices()).unwrap();
    assert!(estimator.estimate(&p.grid, &p.pou, &zeros).iter().all(|&d| d == 0.0));

    let aux = AuxiliarySpace::build_uniform(&p.grid, &p.coeffs, 2).unwrap();
    let settings = OnlineSettings { mode: EnrichMode::Uniform, ..OnlineSettings::default() };
    let state = enrich_loop(&p, &aux, BasisSet::identity(&p.grid), &settings, 1).unwrap();
    assert_eq!(state.history.len(), 1);
    assert!(matches!(state.stop, StopReason::ZeroResidual | StopReason::Converged));
    assert!(state.history[0].e_h1 <= 1e-8);
}
