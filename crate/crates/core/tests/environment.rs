use proptest::prelude::*;
use rwre::environment::KernelField;
use rwre::{apply_trap, build_environment, EnvironmentModel, Site, TrapOverlay, Variant};

fn site(coords: &[i64]) -> Site {
    Site::new(coords)
}

fn dirichlet(d: usize, kappa: f64) -> EnvironmentModel {
    EnvironmentModel {
        d,
        kappa,
        variant: Variant::DirichletSites { concentration: vec![1.0; 2 * d] },
        test_mode: false,
    }
}

fn models() -> impl Strategy<Value = EnvironmentModel> {
    prop_oneof![
        (2usize..=4, 0.0f64..0.1).prop_map(|(d, k)| dirichlet(d, k.max(1e-3))),
        (0.0f64..0.2).prop_map(|eps| EnvironmentModel {
            d: 2,
            kappa: 0.05,
            variant: Variant::PerturbedSrw { epsilon: eps, axis: 0 },
            test_mode: false,
        }),
        (0.0f64..=1.0).prop_map(|p| EnvironmentModel {
            d: 2,
            kappa: 0.1,
            variant: Variant::TwoPointMixture {
                kernel_plus: vec![0.4, 0.1, 0.25, 0.25],
                kernel_minus: vec![0.1, 0.4, 0.25, 0.25],
                p_mix: p,
            },
            test_mode: false,
        }),
    ]
}

proptest! {
    #[test]
    fn kernels_are_elliptic_and_normalized(model in models(), seed in any::<u64>(), x in -50i64..50, y in -50i64..50) {
        let env = build_environment(&model, seed).unwrap();
        let mut coords = vec![0; model.d];
        coords[0] = x;
        coords[1] = y;
        let k = env.kernel(&site(&coords));
        let total: f64 = k.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(k.min() >= model.kappa - 1e-15);
    }

    #[test]
    fn lookups_are_reproducible(seed in any::<u64>(), x in -1000i64..1000) {
        let a = build_environment(&dirichlet(2, 0.05), seed).unwrap();
        let b = build_environment(&dirichlet(2, 0.05), seed).unwrap();
        let s = site(&[x, -x]);
        prop_assert_eq!(a.kernel(&s), b.kernel(&s));
    }

    #[test]
    fn trap_touches_only_its_ball(r in 0u64..5, x in -8i64..8, y in -8i64..8) {
        let env = build_environment(&dirichlet(2, 0.05), 7).unwrap();
        let overlay = TrapOverlay { center: site(&[1, -1]), radius: r, inward_bias: 0.0, floor: 0.01, test_mode: false };
        let trapped = apply_trap(&env, &overlay).unwrap();
        let s = site(&[x, y]);
        let dist = (x - 1).abs() + (y + 1).abs();
        if dist == 0 || dist as u64 > r {
            prop_assert_eq!(trapped.kernel(&s), env.kernel(&s));
        } else {
            let k = trapped.kernel(&s);
            prop_assert!((k.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(k.min() >= 0.01 - 1e-15);
        }
    }
}

#[test]
fn deterministic_model_has_one_kernel() {
    let env = build_environment(&EnvironmentModel::deterministic(&[0.4, 0.2, 0.2, 0.2], 0.2), 3).unwrap();
    for s in [site(&[0, 0]), site(&[17, -4]), site(&[-100, 100])] {
        assert_eq!(env.kernel(&s).probs(), &[0.4, 0.2, 0.2, 0.2]);
    }
}

#[test]
fn zero_perturbation_is_the_simple_random_walk() {
    let model = EnvironmentModel {
        d: 3,
        kappa: 0.1,
        variant: Variant::PerturbedSrw { epsilon: 0.0, axis: 0 },
        test_mode: false,
    };
    let env = build_environment(&model, 11).unwrap();
    for x in -5..5 {
        let k = env.kernel(&site(&[x, 2 * x, -x]));
        assert!(k.probs().iter().all(|p| (p - 1.0 / 6.0).abs() < 1e-15));
    }
}

#[test]
fn dirichlet_sites_are_not_all_equal() {
    let env = build_environment(&dirichlet(2, 0.05), 7).unwrap();
    let a = env.kernel(&site(&[0, 0]));
    let b = env.kernel(&site(&[1, 0]));
    let c = env.kernel(&site(&[0, 1]));
    assert!(a != b || a != c);
}

#[test]
fn kappa_above_the_maximum_is_rejected() {
    let bad = EnvironmentModel::deterministic(&[0.25; 4], 0.3);
    assert!(matches!(build_environment(&bad, 0), Err(rwre::Error::ModelInvalid(_))));
}

#[test]
fn radius_zero_overlay_is_the_identity() {
    let env = build_environment(&dirichlet(2, 0.05), 1).unwrap();
    let overlay = TrapOverlay { center: site(&[0, 0]), radius: 0, inward_bias: 0.0, floor: 0.01, test_mode: false };
    let same = apply_trap(&env, &overlay).unwrap();
    for x in -3..=3 {
        for y in -3..=3 {
            assert_eq!(same.kernel(&site(&[x, y])), env.kernel(&site(&[x, y])));
        }
    }
}
