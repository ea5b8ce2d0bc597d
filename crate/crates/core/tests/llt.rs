use proptest::prelude::*;
use rwre::llt::convolve;
use rwre::{convolve_power, llt_discrepancy_report, LatticeLaw, Site};

fn kernels() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, 4).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

fn max_gap(a: &LatticeLaw<f64>, b: &LatticeLaw<f64>) -> f64 {
    let mut gap = 0.0f64;
    for (x, _) in a.atoms().iter().chain(b.atoms()) {
        gap = gap.max((a.prob(x) - b.prob(x)).abs());
    }
    gap
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn powers_compose(k in kernels(), m in 1u64..6, n in 1u64..6) {
        let law = LatticeLaw::<f64>::from_kernel(&k).unwrap();
        let whole = convolve_power(&law, m + n, 10_000).unwrap();
        let split = convolve(&convolve_power(&law, m, 10_000).unwrap(), &convolve_power(&law, n, 10_000).unwrap(), 10_000).unwrap();
        prop_assert!(max_gap(&whole, &split) < 1e-12);
        prop_assert!((whole.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn differences_are_bounded_by_the_sup(k in kernels(), n in 2u64..12) {
        let law = LatticeLaw::<f64>::from_kernel(&k).unwrap();
        let rep = llt_discrepancy_report(&law, &[n, n + 2, n + 4], 10_000).unwrap();
        for row in &rep.rows {
            prop_assert!(row.first_difference <= 2.0 * row.sup + 1e-15);
            prop_assert!(row.second_difference <= 2.0 * row.first_difference + 1e-15);
        }
    }
}

#[test]
fn two_steps_in_one_dimension() {
    let two = convolve_power(&LatticeLaw::<f64>::simple_random_walk(1), 2, 100).unwrap();
    assert_eq!(two.prob(&Site::new(&[0])), 0.5);
    assert_eq!(two.prob(&Site::new(&[2])), 0.25);
    assert_eq!(two.prob(&Site::new(&[1])), 0.0);
}

#[test]
fn two_steps_in_two_dimensions_return_a_quarter_of_the_time() {
    let two = convolve_power(&LatticeLaw::<f64>::simple_random_walk(2), 2, 100).unwrap();
    assert!((two.prob(&Site::origin(2)) - 0.25).abs() < 1e-15);
    assert!((two.mass() - 1.0).abs() < 1e-15);
}

#[test]
fn hundred_step_return_probability() {
    let rep = llt_discrepancy_report(&LatticeLaw::<f64>::simple_random_walk(1), &[96, 98, 100], 10_000).unwrap();
    // C(100, 50) / 2^100
    assert!((rep.rows[2].sup - 0.079_589_237_387_178_72).abs() < 1e-12, "{}", rep.rows[2].sup);
    assert!(rep.parity_restricted);
    assert_eq!(rep.step, 2);
}

#[test]
fn single_atom_law_is_degenerate() {
    let law = LatticeLaw::<f64>::new([(Site::new(&[0, 1]), 1.0)]).unwrap();
    assert!(matches!(llt_discrepancy_report(&law, &[2, 4], 100), Err(rwre::Error::DegenerateLaw)));
}

#[test]
fn exponents_are_reproducible() {
    let law = LatticeLaw::<f64>::simple_random_walk(2);
    let a = llt_discrepancy_report(&law, &[8, 16, 32], 100_000).unwrap();
    let b = llt_discrepancy_report(&law, &[8, 16, 32], 100_000).unwrap();
    assert_eq!(a, b);
    assert!(a.exponents.mixed_difference.is_some());
}
