use cheap_knockoffs::knockoff_gen::{build_joint_covariance, precompute_sampler, select_s};
use cheap_knockoffs::linalg::min_eigenvalue;
use cheap_knockoffs::path_select::{build_path, order_features, true_wfdp, wfdp_bound};
use cheap_knockoffs::rng::stream;
use cheap_knockoffs::stat_engine::{compute_kappa_tau, compute_statistics};
use cheap_knockoffs::{BoundParams, CostVector, GaussianFeatureModel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn random_psd(p: usize, entries: &[f64], ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_column_slice(p, p, &entries[..p * p]);
    &a * a.transpose() + DMatrix::identity(p, p) * ridge
}

fn psd_strategy() -> impl Strategy<Value = (DMatrix<f64>, Vec<u32>)> {
    (2usize..7).prop_flat_map(|p| {
        (
            prop::collection::vec(-1.0f64..1.0, p * p),
            0.01f64..0.5,
            prop::collection::vec(2u32..7, p),
        )
            .prop_map(move |(entries, ridge, omega)| (random_psd(p, &entries, ridge), omega))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn chosen_s_always_factors((sigma, omega) in psd_strategy()) {
        let p = sigma.nrows();
        let model = GaussianFeatureModel::new(DVector::zeros(p), sigma.clone()).unwrap();
        let omega = CostVector::new(omega).unwrap();
        let sel = select_s(&model, &omega, 1.0).unwrap();
        prop_assert!(sel.gamma >= 0.0 && sel.gamma <= 1.0);
        for j in 0..p {
            prop_assert!(sel.s[j] >= 0.0 && sel.s[j] <= sigma[(j, j)] + 1e-12);
        }
        let plan = precompute_sampler(&model, &omega, &sel.s);
        prop_assert!(plan.is_ok());
        let g = build_joint_covariance(&model, &omega, &sel.s).unwrap();
        prop_assert!(min_eigenvalue(&g) >= -1e-8 * g.trace());
    }

    #[test]
    fn statistics_conserve_l1_mass(
        omega in prop::collection::vec(2u32..6, 1..8),
        seed in any::<u64>(),
    ) {
        let omega = CostVector::new(omega).unwrap();
        let w = omega.total();
        let mut rng = stream(seed, 0);
        let theta = DVector::from_fn(w, |_, _| rand::Rng::random_range(&mut rng, -2.0..2.0));
        let table = compute_statistics(&theta, &omega, 1.0).unwrap();
        let total: f64 = table.t.iter().flatten().sum();
        prop_assert!((total - theta.lp_norm(1)).abs() <= 1e-12 * (1.0 + theta.lp_norm(1)));
    }

    #[test]
    fn tau_and_kappa_follow_copy_permutations(
        groups in prop::collection::vec(prop::collection::vec(0.0f64..3.0, 2..6), 1..6),
        shift in 0usize..5,
        seed in any::<u64>(),
    ) {
        let omega = CostVector::new(groups.iter().map(|g| g.len() as u32).collect()).unwrap();
        let rotated: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| {
                let mut r = g.clone();
                let k = shift % g.len();
                r.rotate_left(k);
                r
            })
            .collect();
        let make = |t: Vec<Vec<f64>>| cheap_knockoffs::StatisticTable { t, kappa: vec![], tau: vec![], lambda_used: 1.0, tie_events: 0 };
        let a = compute_kappa_tau(make(groups.clone()), &omega, &mut stream(seed, 0)).unwrap();
        let b = compute_kappa_tau(make(rotated), &omega, &mut stream(seed, 0)).unwrap();
        for (j, g) in groups.iter().enumerate() {
            prop_assert_eq!(a.tau[j], b.tau[j]);
            if a.tie_events == 0 {
                let w = g.len();
                let k = shift % w;
                let expected = (a.kappa[j] as usize - 1 + w - k) % w + 1;
                prop_assert_eq!(b.kappa[j] as usize, expected);
            }
        }
    }

    #[test]
    fn bound_never_below_zero_and_wfdp_in_unit_interval(
        omega in prop::collection::vec(2u32..8, 1..20),
        seed in any::<u64>(),
        alpha in 0.01f64..0.99,
        c in 0.1f64..3.0,
    ) {
        let p = omega.len();
        let omega = CostVector::new(omega).unwrap();
        let mut rng = stream(seed, 0);
        let tau: Vec<f64> = (0..p).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        let kappa: Vec<u32> = (0..p).map(|j| rand::Rng::random_range(&mut rng, 1..=omega.get(j))).collect();
        let h0: Vec<bool> = (0..p).map(|_| rand::Rng::random_bool(&mut rng, 0.5)).collect();
        let sigma = order_features(&tau, &omega);
        let path = build_path(&sigma, &kappa, &omega).unwrap();
        let ubar = wfdp_bound(&path, &omega, &BoundParams::new(alpha, c).unwrap()).unwrap();
        let wfdp = true_wfdp(&path, &omega, &h0).unwrap();
        for k in 0..p {
            prop_assert!(ubar[k] > 0.0);
            prop_assert!((0.0..=1.0).contains(&wfdp[k]));
        }
    }
}
