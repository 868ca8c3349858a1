mod common;

use std::sync::OnceLock;

use cemgms::auxiliary::{pi_project, s_inner, AuxiliarySpace, PiecewiseField};
use cemgms::cem_offline::{build_basis_matrix, BasisSet, Variant};
use cemgms::coarse::coarse_solve;
use cemgms::experiment::{ExperimentConfig, Oversampling};
use cemgms::fem::{assemble_stiffness, energy_by_cells};
use cemgms::grid::{build_pou, GridHierarchy};
use cemgms::media::{generate_medium, kappa_tilde, lame_from_young, LameConvention, MediumSpec, Preset, RandomLayout};
use cemgms::online::select_neighborhoods;
use cemgms::problem::FineProblem;
use common::*;
use proptest::prelude::*;

struct Fixture {
    problem: FineProblem,
    aux: AuxiliarySpace,
    basis: BasisSet,
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let problem = preset_problem(16, 4, 1e4);
        let aux = AuxiliarySpace::build_uniform(&problem.grid, &problem.coeffs, 3).unwrap();
        let basis = build_basis_matrix(&problem.grid, &problem.a, &aux, Variant::Relaxed, 1).unwrap();
        Fixture { problem, aux, basis }
    })
}

fn grid_strategy() -> impl Strategy<Value = GridHierarchy> {
    (2usize..=3, 2usize..=4, 1usize..=4).prop_filter_map("size", |(dim, nc, ratio)| {
        let n = nc * ratio;
        (dim == 2 || n <= 8).then(|| GridHierarchy::new(dim, n, nc).unwrap())
    })
}

fn layout_strategy() -> impl Strategy<Value = RandomLayout> {
    (0usize..6, 0usize..10, 0.02f64..0.1, 0.2f64..0.5, 0.0f64..0.5, 0.0f64..1.0, 0.0f64..0.1).prop_map(
        |(channels, inclusions, thickness, min_length, extra, bend, gap)| RandomLayout {
            channels,
            inclusions,
            thickness,
            min_length,
            max_length: min_length + extra,
            bend_probability: bend,
            min_inclusion: 0.03,
            max_inclusion: 0.1,
            min_gap: gap,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn blocks_tile_the_fine_grid(grid in grid_strategy()) {
        let mut seen = vec![0usize; grid.n_cells()];
        for b in 0..grid.n_blocks() {
            for c in grid.block_cells(b) {
                seen[c] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&k| k == 1));
    }

    #[test]
    fn oversampling_is_monotone_and_partitioned(grid in grid_strategy(), block in any::<prop::sample::Index>(), m in 0usize..3) {
        let b = block.index(grid.n_blocks());
        let small = grid.oversample_block(b, m).unwrap();
        let large = grid.oversample_block(b, m + 1).unwrap();
        prop_assert!(small.dofs.iter().all(|d| large.dofs.binary_search(d).is_ok()));
        prop_assert!(small.interior.iter().all(|d| small.boundary.binary_search(d).is_err()));
        let mut union: Vec<usize> = small.interior.iter().chain(&small.boundary).copied().collect();
        union.sort_unstable();
        prop_assert_eq!(union, small.dofs.clone());
    }

    #[test]
    fn hats_form_a_partition_reproducing_linears(grid in grid_strategy()) {
        let pou = build_pou(&grid);
        for node in 0..grid.n_nodes() {
            let x = grid.node_position(node);
            let mut sum = 0.0;
            let mut lin = [0.0; 3];
            for v in 0..grid.n_vertices() {
                let chi = pou.value(&grid, v, node);
                prop_assert!((0.0..=1.0).contains(&chi));
                sum += chi;
                let xv = grid.vertex_position(v);
                for k in 0..3 {
                    lin[k] += chi * xv[k];
                }
            }
            prop_assert!((sum - 1.0).abs() <= 1e-14);
            for k in 0..grid.dim() {
                prop_assert!((lin[k] - x[k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn medium_generation_is_pure_and_binary(layout in layout_strategy(), seed in any::<u64>(), contrast in 2.0f64..1e6) {
        let mut spec = MediumSpec::uniform(2, 32);
        spec.e_high = contrast;
        spec.random = Some(layout);
        spec.seed = seed;
        let first = generate_medium(&spec).unwrap();
        prop_assert_eq!(&first, &generate_medium(&spec).unwrap());
        prop_assert!(first.iter().all(|&e| e == 1.0 || e == contrast));
    }

    #[test]
    fn kappa_is_linear_in_the_modulus(scale in 0.1f64..100.0) {
        let grid = GridHierarchy::new(2, 16, 4).unwrap();
        let pou = build_pou(&grid);
        let young = generate_medium(&MediumSpec::preset(Preset::Model1Like, 16, 1e3)).unwrap();
        let scaled: Vec<f64> = young.iter().map(|e| e * scale).collect();
        let (l1, m1) = lame_from_young(&young, NU, LameConvention::Paper).unwrap();
        let (l2, m2) = lame_from_young(&scaled, NU, LameConvention::Paper).unwrap();
        let k1 = kappa_tilde(&grid, &l1, &m1, &pou);
        let k2 = kappa_tilde(&grid, &l2, &m2, &pou);
        for (a, b) in k1.iter().zip(&k2) {
            prop_assert!((a * scale - b).abs() <= 1e-12 * b.abs().max(1.0));
            prop_assert!(*a > 0.0);
        }
    }

    #[test]
    fn matrix_energy_matches_cell_loop(values in prop::collection::vec(-1.0f64..1.0, 2 * 15 * 15), scale in 0.5f64..4.0) {
        let p = &fixture().problem;
        let a = &p.a;
        let e_mat = a.bilinear(&values, &values);
        let e_cells = energy_by_cells(&p.grid, &p.coeffs.lambda, &p.coeffs.mu, &values);
        prop_assert!((e_mat - e_cells).abs() <= 1e-12 * e_cells);
        let lam: Vec<f64> = p.coeffs.lambda.iter().map(|v| v * scale).collect();
        let mu: Vec<f64> = p.coeffs.mu.iter().map(|v| v * scale).collect();
        let a2 = assemble_stiffness(&p.grid, &lam, &mu).unwrap();
        prop_assert!((a2.bilinear(&values, &values) - scale * e_mat).abs() <= 1e-12 * scale * e_mat);
    }

    #[test]
    fn projection_is_self_adjoint_and_idempotent(
        u in prop::collection::vec(-1.0f64..1.0, 2 * 15 * 15),
        v in prop::collection::vec(-1.0f64..1.0, 2 * 15 * 15),
    ) {
        let aux = &fixture().aux;
        let fu = PiecewiseField::from_global(aux, &u);
        let fv = PiecewiseField::from_global(aux, &v);
        let pu = pi_project(aux, &fu);
        let pv = pi_project(aux, &fv);
        let left = s_inner(aux, &pu, &fv);
        let right = s_inner(aux, &fu, &pv);
        let scale = s_inner(aux, &fu, &fu).sqrt() * s_inner(aux, &fv, &fv).sqrt();
        prop_assert!((left - right).abs() <= 1e-10 * scale);
        prop_assert!(pi_project(aux, &pu).max_abs_diff(&pu) <= 1e-10 * pu.max_abs().max(1e-300));
    }

    #[test]
    fn removing_columns_never_reduces_the_error(keep in prop::collection::vec(any::<bool>(), 48)) {
        let fx = fixture();
        let p = &fx.problem;
        let full = coarse_solve(&fx.basis, &p.a, &p.f).unwrap();
        let mut fewer = fx.basis.clone();
        let mut mask = keep.clone();
        mask.resize(fewer.n_cols(), true);
        if mask.iter().all(|k| !k) {
            mask[0] = true;
        }
        fewer.retain_columns(&mask);
        let part = coarse_solve(&fewer, &p.a, &p.f).unwrap();
        let e_full = p.errors(&full.fine).unwrap().e_h1;
        let e_part = p.errors(&part.fine).unwrap().e_h1;
        prop_assert!(e_full <= e_part + 1e-10);
    }

    #[test]
    fn bulk_selection_is_minimal(deltas in prop::collection::vec(0.0f64..10.0, 1..40), theta in 0.0f64..1.0) {
        let chosen = select_neighborhoods(&deltas, theta);
        let total: f64 = deltas.iter().map(|d| d * d).sum();
        let tail = |set: &[usize]| total - set.iter().map(|&i| deltas[i] * deltas[i]).sum::<f64>();
        prop_assert!(tail(&chosen) <= theta * theta * total * (1.0 + 1e-12) + 1e-12);
        if let Some((_, shorter)) = chosen.split_last() {
            prop_assert!(tail(shorter) > theta * theta * total * (1.0 - 1e-12));
        }
        for w in chosen.windows(2) {
            prop_assert!(deltas[w[0]] >= deltas[w[1]]);
        }
    }

    #[test]
    fn config_round_trips_through_json(
        n_coarse in prop::collection::vec(prop::sample::select(vec![2usize, 4, 8, 16]), 1..3),
        n_basis in prop::collection::vec(1usize..8, 1..3),
        layers in prop::collection::vec(prop_oneof![Just(Oversampling::Auto), (0usize..6).prop_map(Oversampling::Fixed)], 1..3),
        contrast in prop::collection::vec(1.0f64..1e6, 1..3),
        seed in any::<Option<u64>>(),
    ) {
        let mut cfg = ExperimentConfig::for_preset(Preset::Model1Like, 4, Variant::Relaxed, 4);
        cfg.n_fine = 32;
        cfg.n_coarse = n_coarse;
        cfg.n_basis = n_basis;
        cfg.oversampling = layers;
        cfg.contrast = contrast;
        cfg.seed = seed;
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.cases(), cfg.cases());
    }
}
