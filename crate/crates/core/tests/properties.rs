use curious_ilqr::arm::{self, Action, ArmParams, State};
use curious_ilqr::gp::{GpHyperparams, GpModel, HyperparamSpec, KernelParams, MIN_JITTER};
use curious_ilqr::ilqr::{backward_pass, forward_pass, LinearDynamics};
use curious_ilqr::{CostExpansion, LinearizedStep};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn angles(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.2..3.2f64, n)
}

fn fixed_gp(inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> GpModel {
    let k = KernelParams::new(1.3, vec![0.7, 0.9, 1.1], 0.01);
    let spec = HyperparamSpec::Fixed(GpHyperparams::shared(1, k, MIN_JITTER));
    GpModel::fit_matrices(1, inputs.clone(), targets.clone(), &spec, 0).unwrap()
}

fn scalar_problem(sigma_next: f64, q: f64, r: f64) -> (LinearizedStep, Vec<CostExpansion>) {
    let one = DMatrix::from_element(1, 1, 1.0);
    let step = LinearizedStep { a: one.clone(), b: one.clone(), c: one.clone(), sigma_next: one.clone() * sigma_next };
    let stage = CostExpansion {
        q0: 0.0,
        q_x: DVector::from_element(1, 0.3),
        q_xx: one.clone() * q,
        r_u: DVector::zeros(1),
        r_uu: one.clone() * r,
        p_xu: DMatrix::zeros(1, 1),
    };
    let terminal = CostExpansion { r_uu: DMatrix::zeros(1, 1), ..stage.clone() };
    (step, vec![stage.clone(), stage, terminal])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_matrix_is_symmetric_positive_definite(n in 1usize..=4, th in angles(4)) {
        let p = ArmParams::uniform_rods(n, 0.1, 0.05);
        let m = arm::mass_matrix(&p, &DVector::from_row_slice(&th[..n])).unwrap();
        prop_assert!((&m - m.transpose()).amax() < 1e-15);
        prop_assert!(m.cholesky().is_some());
    }

    #[test]
    fn steps_stay_finite_under_limited_torque(th in angles(2), om in prop::collection::vec(-10.0..10.0f64, 2), tau in prop::collection::vec(-5.0..5.0f64, 2)) {
        let p = ArmParams::default();
        let mut s = State::new(DVector::from_vec(th), DVector::from_vec(om));
        for _ in 0..50 {
            s = arm::step(&p, &s, &Action::from_slice(&tau)).unwrap();
        }
        prop_assert!(s.is_finite());
    }

    #[test]
    fn adding_a_point_never_raises_variance(
        xs in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 2..15),
        extra in prop::collection::vec(-1.0..1.0f64, 3),
        query in prop::collection::vec(-2.0..2.0f64, 3),
    ) {
        let n = xs.len();
        let inputs = DMatrix::from_fn(n, 3, |i, j| xs[i][j]);
        let targets = DMatrix::from_fn(n, 1, |i, _| xs[i][0].sin());
        let mut more = inputs.clone().insert_row(n, 0.0);
        more.row_mut(n).copy_from_slice(&extra);
        let more_targets = targets.clone().insert_row(n, 0.0);
        let z = DVector::from_vec(query);
        let v0 = fixed_gp(&inputs, &targets).predict_input(&z, true).unwrap().variance.unwrap()[0];
        let v1 = fixed_gp(&more, &more_targets).predict_input(&z, true).unwrap().variance.unwrap()[0];
        prop_assert!(v1 <= v0 + 1e-9, "{v1} > {v0}");
        prop_assert!(v1 >= 0.0);
    }

    #[test]
    fn mean_is_invariant_to_data_order(
        xs in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), 3..12),
        query in prop::collection::vec(-1.5..1.5f64, 3),
    ) {
        let n = xs.len();
        let inputs = DMatrix::from_fn(n, 3, |i, j| xs[i][j]);
        let targets = DMatrix::from_fn(n, 1, |i, _| xs[i][1] - xs[i][2]);
        let rev_in = DMatrix::from_fn(n, 3, |i, j| xs[n - 1 - i][j]);
        let rev_t = DMatrix::from_fn(n, 1, |i, _| targets[(n - 1 - i, 0)]);
        let z = DVector::from_vec(query);
        let a = fixed_gp(&inputs, &targets).predict_input(&z, true).unwrap();
        let b = fixed_gp(&rev_in, &rev_t).predict_input(&z, true).unwrap();
        prop_assert!((a.mean[0] - b.mean[0]).abs() < 1e-8);
        prop_assert!((a.variance.unwrap()[0] - b.variance.unwrap()[0]).abs() < 1e-8);
    }

    #[test]
    fn more_risk_seeking_lowers_the_control_hessian(w in 0.01..2.0f64, q in 0.1..5.0f64, r in 0.1..5.0f64, s1 in -0.5..0.5f64, s2 in -0.5..0.5f64) {
        let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
        prop_assume!(hi - lo > 1e-3);
        let (step, costs) = scalar_problem(w, q, r);
        let steps = vec![step.clone(), step];
        // very negative sigma may lose positive definiteness; a factorisation
        // failure may only appear on the low side
        match (backward_pass(&steps, &costs, lo, 0.0), backward_pass(&steps, &costs, hi, 0.0)) {
            (Ok(a), Ok(b)) => prop_assert!(a.hessians[1][(0, 0)] < b.hessians[1][(0, 0)]),
            (Ok(_), Err(_)) => prop_assert!(false, "only the larger sigma failed"),
            _ => {}
        }
    }

    #[test]
    fn value_matrices_stay_symmetric(seed in 0u64..1000, sigma in -0.2..0.2f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let nx = 3;
        let a = DMatrix::from_fn(nx, nx, |i, j| if i == j { 1.0 } else { 0.0 } + 0.1 * rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(nx, 1, |_, _| rng.gen_range(-1.0..1.0));
        let l = DMatrix::from_fn(nx, nx, |_, _| 0.1 * rng.gen_range(-1.0..1.0));
        let step = LinearizedStep { a, b, c: DMatrix::identity(nx, nx), sigma_next: &l * l.transpose() };
        let stage = CostExpansion {
            q0: 0.0,
            q_x: DVector::zeros(nx),
            q_xx: DMatrix::identity(nx, nx),
            r_u: DVector::zeros(1),
            r_uu: DMatrix::identity(1, 1),
            p_xu: DMatrix::zeros(nx, 1),
        };
        let costs = vec![stage.clone(); 6];
        if let Ok(bp) = backward_pass(&vec![step; 5], &costs, sigma, 0.0) {
            for v in &bp.values {
                prop_assert!(v.s_mat == v.s_mat.transpose());
            }
        }
    }

    #[test]
    fn zero_gains_replay_the_nominal_controls(us in prop::collection::vec(-1.0..1.0f64, 5)) {
        let dynamics = LinearDynamics {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 0.1]),
            noise: DMatrix::zeros(2, 2),
        };
        let controls: Vec<_> = us.iter().map(|u| DVector::from_element(1, *u)).collect();
        let mut xs = vec![DVector::zeros(2)];
        for u in &controls {
            let next = &dynamics.a * xs.last().unwrap() + &dynamics.b * u;
            xs.push(next);
        }
        let k = vec![DVector::zeros(1); 5];
        let gains = vec![DMatrix::zeros(1, 2); 5];
        let f = forward_pass(&dynamics, &xs, &controls, &k, &gains, 1.0).unwrap();
        prop_assert_eq!(f.controls, controls);
        prop_assert_eq!(f.states, xs);
    }
}
