//! Finite-horizon regeneration times in direction `e_1`, the event `A_N`
//! and the empirical asymptotic direction.
//!
//! A time `n ≥ 1` is a regeneration candidate when `X_n·e_1` is a strict new
//! maximum. It is accepted once `confirm_horizon` further steps have been
//! observed without `X·e_1` dropping below `X_n·e_1`; a candidate whose
//! horizon runs past the end of the trajectory leaves the record censored.

use crate::environment::Ensemble;
use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::scales::scale_r_unchecked;
use crate::stats::{mean_estimate, Z};
use crate::walk::{simulate_with, walk_key, Trajectory, Unstopped};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegenerationRecord {
    pub times: Vec<u64>,
    pub positions: Vec<Site>,
    /// `radii[n-1]` is the largest ℓ1 distance from the previous regeneration
    /// position (the start for `n = 1`) up to the `n`th regeneration.
    pub radii: Vec<u64>,
    pub censored: bool,
}

impl RegenerationRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `X_{τ_2} − X_{τ_1}` when both are confirmed.
    pub fn second_increment(&self) -> Option<Site> {
        (self.positions.len() >= 2).then(|| self.positions[1].sub(&self.positions[0]))
    }
}

/// Splits a trajectory at its confirmed regeneration times.
pub fn regeneration_decompose(traj: &Trajectory, confirm_horizon: u64) -> RegenerationRecord {
    decompose_positions(&traj.positions(), confirm_horizon)
}

pub(crate) fn decompose_positions(pos: &[Site], confirm_horizon: u64) -> RegenerationRecord {
    let t_end = pos.len() - 1;
    let level: Vec<i64> = pos.iter().map(|p| p.get(0)).collect();
    // next strictly lower level after each index (monotone stack)
    let mut next_lower = vec![usize::MAX; pos.len()];
    let mut stack: Vec<usize> = Vec::new();
    for (k, &v) in level.iter().enumerate() {
        while let Some(&top) = stack.last() {
            if v < level[top] {
                next_lower[top] = k;
                stack.pop();
            } else {
                break;
            }
        }
        stack.push(k);
    }
    let h = confirm_horizon as usize;
    let mut times = Vec::new();
    let mut censored = false;
    let mut best = level[0];
    for n in 1..=t_end {
        if level[n] <= best {
            continue;
        }
        best = level[n];
        let undercut = next_lower[n];
        if undercut <= n.saturating_add(h) && undercut <= t_end {
            continue;
        }
        if n.saturating_add(h) > t_end {
            censored = true;
            break;
        }
        times.push(n);
    }
    let mut radii = Vec::with_capacity(times.len());
    let mut prev = 0usize;
    for &t in &times {
        let base = pos[prev];
        let r = pos[prev..=t].iter().map(|p| p.sub(&base).l1()).max().unwrap_or(0);
        radii.push(r as u64);
        prev = t;
    }
    RegenerationRecord {
        positions: times.iter().map(|&t| pos[t]).collect(),
        times: times.into_iter().map(|t| t as u64).collect(),
        radii,
        censored,
    }
}

/// `A_N`: the first `2N²` regeneration radii are all below `R_2(N)`.
pub fn check_event_a_n(record: &RegenerationRecord, n: u64) -> Result<bool> {
    let need = (2 * n * n) as usize;
    if record.len() < need {
        return Err(Error::InsufficientData(format!(
            "{} regenerations, A_N needs {need}",
            record.len()
        )));
    }
    let r2 = if n >= 16 { crate::scales::scale_r(2, n)? } else { scale_r_unchecked(2, n) };
    Ok(record.radii[..need].iter().all(|&r| r < r2))
}

/// Settings shared by the direction estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionParams {
    pub replicas: u64,
    /// Steps simulated per replica.
    pub horizon: u64,
    pub confirm_horizon: u64,
    /// Scale `L` of the event `A_L`.
    pub scale: u64,
}

/// What one replica contributes to the direction estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSample {
    pub endpoint: Site,
    pub increment: Option<Site>,
    /// `None` when too few regenerations were confirmed to decide `A_L`.
    pub a_l: Option<bool>,
    pub first_radius: Option<u64>,
    pub censored: bool,
}

/// One walk of `horizon` steps per replica, each in a fresh environment.
pub fn direction_samples(ensemble: &Ensemble, p: &DirectionParams) -> Vec<DirectionSample> {
    let d = ensemble.dim();
    (0..p.replicas)
        .into_par_iter()
        .map(|r| {
            let env = ensemble.replica(r).env;
            let traj = simulate_with(
                &env,
                walk_key(env.seed(), r),
                Site::origin(d),
                &Unstopped,
                p.horizon,
                r,
            )
            .expect("unstopped walks start anywhere");
            let pos = traj.positions();
            let rec = decompose_positions(&pos, p.confirm_horizon);
            DirectionSample {
                endpoint: *pos.last().unwrap(),
                increment: rec.second_increment(),
                a_l: check_event_a_n(&rec, p.scale).ok(),
                first_radius: rec.radii.first().copied(),
                censored: rec.censored,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionEstimate {
    pub v_hat: Option<Vec<f64>>,
    pub v_hat_l: Option<Vec<f64>>,
    pub drift_detected: bool,
    pub mean_increment: Vec<f64>,
    pub increment_std_error: Vec<f64>,
    pub mean_endpoint: Vec<f64>,
    pub endpoint_std_error: Vec<f64>,
    /// Replicas with two confirmed regenerations.
    pub uncensored: u64,
    pub a_l_holds: u64,
    pub a_l_undecided: u64,
}

fn coordinate_means(xs: &[Site], d: usize) -> (Vec<f64>, Vec<f64>) {
    (0..d)
        .map(|i| {
            let col: Vec<f64> = xs.iter().map(|x| x.get(i) as f64).collect();
            mean_estimate(&col).map(|m| (m.mean, m.std_error)).unwrap_or((f64::NAN, f64::NAN))
        })
        .unzip()
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    crate::lattice::normalized(v)
}

/// Aggregates replica samples into `v̂` and `v̂_L`.
///
/// Drift is declared only when the mean endpoint differs from the origin by
/// more than `Z` standard errors in some coordinate and the mean regeneration
/// increment has norm at least `Z` standard errors. The increment test alone
/// is not enough: increments always point forward in `e_1`.
pub fn aggregate_direction(samples: &[DirectionSample], d: usize) -> DirectionEstimate {
    let incs: Vec<Site> = samples.iter().filter_map(|s| s.increment).collect();
    let ends: Vec<Site> = samples.iter().map(|s| s.endpoint).collect();
    let (mean_end, se_end) = coordinate_means(&ends, d);
    let (mean_inc, se_inc) = coordinate_means(&incs, d);
    let endpoint_moves =
        mean_end.iter().zip(&se_end).any(|(m, s)| m.abs() > Z * s && m.abs() > 0.0);
    let inc_norm = crate::lattice::norm2(&mean_inc);
    let inc_se = se_inc.iter().map(|s| s * s).sum::<f64>().sqrt();
    let drift_detected = incs.len() >= 2 && endpoint_moves && inc_norm >= Z * inc_se;
    let held: Vec<Site> = samples
        .iter()
        .filter(|s| s.a_l == Some(true))
        .filter_map(|s| s.increment)
        .collect();
    let (mean_held, _) = coordinate_means(&held, d);
    DirectionEstimate {
        v_hat: if drift_detected { unit(&mean_inc) } else { None },
        v_hat_l: if drift_detected && !held.is_empty() { unit(&mean_held) } else { None },
        drift_detected,
        mean_increment: mean_inc,
        increment_std_error: se_inc,
        mean_endpoint: mean_end,
        endpoint_std_error: se_end,
        uncensored: incs.len() as u64,
        a_l_holds: held.len() as u64,
        a_l_undecided: samples.iter().filter(|s| s.a_l.is_none()).count() as u64,
    }
}

/// Empirical `v̂` and `v̂_L` from `X_{τ_2} − X_{τ_1}` over replicas.
pub fn estimate_direction(ensemble: &Ensemble, p: &DirectionParams) -> Result<DirectionEstimate> {
    if p.replicas == 0 {
        return Err(Error::BadParameter("at least one replica is required".into()));
    }
    Ok(aggregate_direction(&direction_samples(ensemble, p), ensemble.dim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::StopReason;

    fn traj(moves: &[u8]) -> Trajectory {
        Trajectory {
            start: Site::origin(2),
            moves: moves.to_vec(),
            stop_reason: StopReason::StepCap,
            stream_id: 0,
        }
    }

    #[test]
    fn straight_walk_regenerates_every_step() {
        let rec = regeneration_decompose(&traj(&[0; 10]), 3);
        assert_eq!(rec.times, (1..=7).collect::<Vec<_>>());
        assert!(rec.radii.iter().all(|&r| r == 1));
        assert!(rec.censored);
        let full = regeneration_decompose(&traj(&[0; 10]), 10);
        assert!(full.is_empty() && full.censored);
    }

    #[test]
    fn dip_cancels_a_candidate() {
        // +e1, -e1, +e1, +e1, then straight on
        let mut m = vec![0, 1, 0, 0];
        m.extend([0; 10]);
        let rec = regeneration_decompose(&traj(&m), 2);
        assert_eq!(rec.times[0], 4);
        assert_eq!(rec.positions[0], Site::new(&[2, 0]));
        assert_eq!(rec.radii[0], 2);
    }

    #[test]
    fn larger_horizon_never_adds() {
        let m = [0, 2, 0, 1, 0, 0, 3, 0, 1, 0, 0, 0, 2, 0, 0, 0, 0];
        let a = regeneration_decompose(&traj(&m), 1);
        let b = regeneration_decompose(&traj(&m), 4);
        assert!(b.times.iter().all(|t| a.times.contains(t)));
    }

    #[test]
    fn event_a_n() {
        let rec = RegenerationRecord {
            times: (1..=512).collect(),
            positions: (1..=512).map(|k| Site::new(&[k, 0])).collect(),
            radii: vec![1; 512],
            censored: false,
        };
        assert!(check_event_a_n(&rec, 16).unwrap());
        let mut bad = rec.clone();
        bad.radii[100] = 3;
        assert!(!check_event_a_n(&bad, 16).unwrap());
        let mut short = rec;
        short.times.pop();
        short.positions.pop();
        short.radii.pop();
        assert!(matches!(check_event_a_n(&short, 16), Err(Error::InsufficientData(_))));
    }
}
