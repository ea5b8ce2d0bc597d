use rwre::exit_stats::{
    atypical_exit_tail, exit_point_floor, intersection_census, ExitTailQuery, IntersectionParams, TailGeometry,
};
use rwre::{Ensemble, EnvironmentModel, Site, SolveOptions, Variant};

fn biased() -> Ensemble {
    Ensemble::new(EnvironmentModel::deterministic(&[0.4, 0.2, 0.2, 0.2], 0.2), 5).unwrap()
}

fn dirichlet(d: usize, seed: u64) -> Ensemble {
    let mut concentration = vec![1.0; 2 * d];
    concentration[0] = 4.0;
    let model = EnvironmentModel { d, kappa: 0.02, variant: Variant::DirichletSites { concentration }, test_mode: false };
    Ensemble::new(model, seed).unwrap()
}

fn box_query(c: f64) -> ExitTailQuery {
    ExitTailQuery {
        geometry: TailGeometry::Box { direction: vec![1.0, 0.0], k: 1.0 },
        c,
        beta: 0.5,
        length: 8.0,
        replicas: 6,
        lengths: vec![],
        mc_walks: 100,
    }
}

#[test]
fn identical_environments_give_an_all_or_nothing_tail() {
    for c in [0.01, 0.5, 3.0] {
        let r = atypical_exit_tail(&biased(), &box_query(c), &SolveOptions::default()).unwrap();
        let s = r.fraction.successes;
        assert!(s == 0 || s == r.fraction.trials, "c = {c}: {s} of {}", r.fraction.trials);
    }
}

#[test]
fn tail_threshold_can_underflow() {
    let r = atypical_exit_tail(&dirichlet(2, 1), &ExitTailQuery { c: 1e6, ..box_query(1.0) }, &SolveOptions::default())
        .unwrap();
    assert!(r.underflow);
    assert_eq!(r.fraction.successes, 0);
}

#[test]
fn floor_table_carries_the_right_exit_mass() {
    let r = exit_point_floor(&dirichlet(2, 7), 4, 6, 1.0, Site::origin(2), &[1.0, 0.0], &SolveOptions::default()).unwrap();
    let total: f64 = r.table.iter().map(|row| row.prob).sum();
    assert!((total - r.right_prob).abs() < 1e-9, "{total} vs {}", r.right_prob);
    assert!(r.table.iter().all(|row| row.site.get(0) == 16));
    // the floor is L^{d−1} times the smallest admissible exit probability
    let lowest = r.table.iter().filter(|row| row.admissible).map(|row| row.prob).fold(f64::INFINITY, f64::min);
    assert!((r.floor - 4.0 * lowest).abs() <= 1e-15 * r.floor.max(1.0));
}

#[test]
fn shared_start_always_intersects() {
    let p = IntersectionParams {
        length: 4,
        replicas: 12,
        starts: [Site::new(&[0, 1]), Site::new(&[0, 1])],
        v_hat: vec![1.0, 0.0],
        multipliers: vec![1, 2],
        streams: [0, 1],
        step_cap: 100_000,
    };
    let r = intersection_census(&dirichlet(2, 3), &p).unwrap();
    assert!(r.counts.iter().all(|&c| c >= 1));
    assert!(r.dimension_warning);
}

#[test]
fn swapping_the_two_walks_changes_nothing() {
    let p = IntersectionParams {
        length: 4,
        replicas: 16,
        starts: [Site::new(&[0, 0, 0]), Site::new(&[0, 2, -1])],
        v_hat: vec![1.0, 0.0, 0.0],
        multipliers: vec![1],
        streams: [3, 8],
        step_cap: 100_000,
    };
    let swapped = IntersectionParams { starts: [p.starts[1], p.starts[0]], streams: [8, 3], ..p.clone() };
    let e = dirichlet(3, 2);
    let a = intersection_census(&e, &p).unwrap();
    let b = intersection_census(&e, &swapped).unwrap();
    assert_eq!(a.counts, b.counts);
    assert!(a.dimension_warning);
}
