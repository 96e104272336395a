use h2hinf_core::scenario::scenario_to_json;
use h2hinf_core::simulate::sample_brownian;
use h2hinf_core::synthesis::solve_coupled_riccati;
use h2hinf_core::{parse_scenario, solve_filter_covariance, SystemModel, TimeGrid};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, bound: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-bound..bound, rows * cols)
        .prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn model() -> impl Strategy<Value = SystemModel> {
    let n = 2;
    (
        matrix(n, n, 1.0),
        matrix(n, 1, 1.0),
        matrix(n, 1, 1.0),
        matrix(n, 1, 0.5),
        matrix(1, n, 1.0),
        0.3f64..2.0,
        matrix(n, n, 1.0),
        matrix(n, 1, 0.2),
        prop::collection::vec(-1.0f64..1.0, n),
    )
        .prop_map(|(a, b1, b2, c, e, f, q, b, x0)| {
            SystemModel::builder(
                a,
                b1,
                b2,
                c,
                e,
                DMatrix::from_element(1, 1, f),
                q,
                DMatrix::identity(1, 1),
            )
            .affine(b)
            .gamma(5.0)
            .x0(DVector::from_vec(x0))
            .build()
            .unwrap()
        })
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

fn max_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scenario_json_round_trips(m in model(), steps in 10usize..500) {
        let grid = TimeGrid::new(1.5, steps).unwrap();
        let json = scenario_to_json(&m, &grid).unwrap();
        let (back, back_grid) = parse_scenario(&json).unwrap();
        prop_assert_eq!(back_grid, grid);
        prop_assert_eq!(back.a.node(0), m.a.node(0));
        prop_assert_eq!(back.b.node(0), m.b.node(0));
        prop_assert_eq!(&back.x0, &m.x0);
        prop_assert_eq!(back.gamma, m.gamma);
        prop_assert_eq!(scenario_to_json(&back, &back_grid).unwrap(), json);
    }

    #[test]
    fn riccati_solutions_are_symmetric_with_opposite_signs(m in model()) {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let pair = solve_coupled_riccati(&m, &grid).unwrap();
        for k in 0..grid.node_count() {
            let (p1, p2) = (pair.p1.node(k), pair.p2.node(k));
            prop_assert_eq!(p1, &p1.transpose());
            prop_assert_eq!(p2, &p2.transpose());
            prop_assert!(max_eig(p1) <= 1e-10, "P1 not negative semidefinite at node {}", k);
            prop_assert!(min_eig(p2) >= -1e-10, "P2 not positive semidefinite at node {}", k);
        }
    }

    #[test]
    fn filter_covariance_is_symmetric_psd(m in model()) {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let plan = solve_filter_covariance(&m, &grid).unwrap();
        for k in 0..grid.node_count() {
            let s = plan.sigma.node(k);
            prop_assert_eq!(s, &s.transpose());
        }
        prop_assert!(plan.min_sigma_eigenvalue(&grid) >= -1e-12);
    }

    #[test]
    fn brownian_increments_depend_only_on_seed(seed in any::<u64>()) {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let a = sample_brownian(&grid, 2, 1, seed);
        let b = sample_brownian(&grid, 2, 1, seed);
        prop_assert_eq!(&a.dw, &b.dw);
        prop_assert_eq!(&a.dw_tilde, &b.dw_tilde);
        let other = sample_brownian(&grid, 2, 1, seed.wrapping_add(1));
        prop_assert_ne!(&a.dw, &other.dw);
    }
}
