//! Quenched walk simulation with region or halfspace stopping.
//!
//! The uniform consumed at step `n` of stream `s` in an environment with
//! seed `σ` is `hash(WALK, σ, s, n)`, so a trajectory depends only on
//! `(environment, start, stop rule, stream)`.

use crate::environment::{Ensemble, Environment, KernelField};
use crate::error::{Error, Result};
use crate::hashing::{hash_words, tags, unit_f64};
use crate::lattice::{Direction, Site, MAX_DIM};
use crate::region::{Region, Side};
use crate::stats::Proportion;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RightBoundary,
    OtherBoundary,
    LeftHalfspace,
    StepCap,
}

impl StopReason {
    fn code(self) -> u8 {
        match self {
            StopReason::RightBoundary => 0,
            StopReason::OtherBoundary => 1,
            StopReason::LeftHalfspace => 2,
            StopReason::StepCap => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => StopReason::RightBoundary,
            1 => StopReason::OtherBoundary,
            2 => StopReason::LeftHalfspace,
            3 => StopReason::StepCap,
            _ => return None,
        })
    }
}

/// Decides when a walk stops and which site's kernel drives it.
pub trait StopRule: Sync {
    fn check(&self, x: &Site) -> Option<StopReason>;

    fn kernel_site(&self, x: &Site) -> Site {
        *x
    }
}

impl StopRule for Region {
    #[inline]
    fn check(&self, x: &Site) -> Option<StopReason> {
        if self.contains(x) {
            None
        } else {
            Some(match self.exit_side(x) {
                Side::Right => StopReason::RightBoundary,
                Side::Other => StopReason::OtherBoundary,
            })
        }
    }

    #[inline]
    fn kernel_site(&self, x: &Site) -> Site {
        self.canonical(x)
    }
}

/// Stops at `x·l ≥ right_level` or `x·l ≤ −left_level`.
#[derive(Clone, Debug)]
pub struct Halfspaces {
    pub direction: Vec<f64>,
    pub right_level: f64,
    pub left_level: f64,
}

impl StopRule for Halfspaces {
    #[inline]
    fn check(&self, x: &Site) -> Option<StopReason> {
        let t = x.dot(&self.direction);
        if t >= self.right_level {
            Some(StopReason::RightBoundary)
        } else if t <= -self.left_level {
            Some(StopReason::LeftHalfspace)
        } else {
            None
        }
    }
}

/// Never stops; only the step cap ends the walk.
pub struct Unstopped;

impl StopRule for Unstopped {
    #[inline]
    fn check(&self, _: &Site) -> Option<StopReason> {
        None
    }
}

/// Key of the per-step uniforms of one stream.
#[inline]
pub fn walk_key(env_seed: u64, stream_id: u64) -> u64 {
    hash_words(&[tags::WALK, env_seed, stream_id])
}

#[inline]
fn step_uniform(key: u64, step: u64) -> f64 {
    unit_f64(hash_words(&[key, step]))
}

/// End state of a walk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub end: Site,
    pub steps: u64,
    pub reason: StopReason,
}

/// Runs a walk, reporting every move to `visit`. The start itself is never
/// tested against the stop rule.
pub fn run_walk<F, S, V>(field: &F, key: u64, start: Site, rule: &S, cap: u64, mut visit: V) -> Outcome
where
    F: KernelField + ?Sized,
    S: StopRule + ?Sized,
    V: FnMut(usize, &Site),
{
    let mut x = start;
    let mut n = 0;
    while n < cap {
        let k = field.kernel(&rule.kernel_site(&x));
        let dir = k.sample(step_uniform(key, n));
        x = x.step(dir);
        n += 1;
        visit(dir, &x);
        if let Some(reason) = rule.check(&x) {
            return Outcome { end: x, steps: n, reason };
        }
    }
    Outcome { end: x, steps: n, reason: StopReason::StepCap }
}

/// A recorded walk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: Site,
    /// Direction indices, `2i` for `+e_{i+1}` and `2i + 1` for `−e_{i+1}`.
    pub moves: Vec<u8>,
    pub stop_reason: StopReason,
    pub stream_id: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    /// Positions `X_0, …, X_T`.
    pub fn positions(&self) -> Vec<Site> {
        let mut out = Vec::with_capacity(self.moves.len() + 1);
        let mut x = self.start;
        out.push(x);
        for &m in &self.moves {
            x = x.step(m as usize);
            out.push(x);
        }
        out
    }

    pub fn end(&self) -> Site {
        self.moves.iter().fold(self.start, |x, &m| x.step(m as usize))
    }

    const MAGIC: &'static [u8; 4] = b"RWTR";

    /// Compact binary form: magic, version, dimension, stop code, stream id,
    /// start coordinates, move count, one byte per move.
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.start.dim();
        let mut out = Vec::with_capacity(4 + 3 + 8 + 8 * d + 8 + self.moves.len());
        out.extend_from_slice(Self::MAGIC);
        out.push(1);
        out.push(d as u8);
        out.push(self.stop_reason.code());
        out.extend_from_slice(&self.stream_id.to_le_bytes());
        for c in self.start.coords() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&(self.moves.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.moves);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(m.to_string());
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated trajectory"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != Self::MAGIC {
            return Err(bad("bad magic"));
        }
        if take(1)?[0] != 1 {
            return Err(bad("unsupported version"));
        }
        let d = take(1)?[0] as usize;
        if !(1..=MAX_DIM).contains(&d) {
            return Err(bad("bad dimension"));
        }
        let stop_reason = StopReason::from_code(take(1)?[0]).ok_or_else(|| bad("bad stop code"))?;
        let word = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
        let stream_id = word(take(8)?);
        let mut start = Site::origin(d);
        for i in 0..d {
            start.set(i, word(take(8)?) as i64);
        }
        let n = word(take(8)?) as usize;
        let moves = take(n)?.to_vec();
        if moves.iter().any(|&m| m as usize >= 2 * d) {
            return Err(bad("move out of range"));
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { start, moves, stop_reason, stream_id })
    }
}

/// Simulates the quenched walk from `start` until it leaves `region` or
/// `step_cap` moves have been made.
pub fn simulate(
    env: &Environment,
    start: Site,
    region: &Region,
    step_cap: u64,
    stream_id: u64,
) -> Result<Trajectory> {
    if step_cap < 1 {
        return Err(Error::BadParameter("step_cap must be >= 1".into()));
    }
    simulate_with(env, walk_key(env.seed(), stream_id), start, region, step_cap, stream_id)
}

/// [`simulate`] for an arbitrary kernel field and stop rule.
pub fn simulate_with<F: KernelField + ?Sized, S: StopRule + ?Sized>(
    field: &F,
    key: u64,
    start: Site,
    rule: &S,
    step_cap: u64,
    stream_id: u64,
) -> Result<Trajectory> {
    if rule.check(&start).is_some() {
        return Err(Error::StartOutside);
    }
    let mut moves = Vec::new();
    let out = run_walk(field, key, start, rule, step_cap, |dir, _| moves.push(dir as u8));
    Ok(Trajectory { start, moves, stop_reason: out.reason, stream_id })
}

/// Annealed estimate of `P_0(T_L^l > T_{bL}^{−l})`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionalReport {
    pub direction: Vec<f64>,
    pub b: f64,
    pub length: f64,
    pub replicas: u64,
    /// Walks that exited backwards first, over the uncensored walks.
    pub backward: Proportion,
    /// Walks stopped by the safety cap.
    pub censored: u64,
    pub safety_cap: u64,
}

/// Default safety cap on the number of steps of one halfspace walk.
pub const DIRECTIONAL_SAFETY_CAP: u64 = 50_000_000;

/// One fresh environment per replica, walk from the origin until it reaches
/// `{x·l ≥ L}` or `{x·l ≤ −bL}`.
pub fn directional_report(
    ensemble: &Ensemble,
    l: &[f64],
    b: f64,
    length: f64,
    replicas: u64,
    safety_cap: u64,
) -> Result<DirectionalReport> {
    if !(b > 0.0) {
        return Err(Error::BadParameter(format!("b must be positive, got {b}")));
    }
    if replicas == 0 {
        return Err(Error::BadParameter("at least one replica is required".into()));
    }
    if !(length > 0.0) {
        return Err(Error::BadParameter("L must be positive".into()));
    }
    let direction = crate::lattice::normalized(l)
        .ok_or_else(|| Error::BadParameter("direction must be nonzero".into()))?;
    let rule = Halfspaces { direction: direction.clone(), right_level: length, left_level: b * length };
    let start = Site::origin(ensemble.dim());
    let reasons: Vec<StopReason> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let env = ensemble.replica(r).env;
            run_walk(&env, walk_key(env.seed(), r), start, &rule, safety_cap, |_, _| {}).reason
        })
        .collect();
    let censored = reasons.iter().filter(|&&r| r == StopReason::StepCap).count() as u64;
    let back = reasons.iter().filter(|&&r| r == StopReason::LeftHalfspace).count() as u64;
    let trials = replicas - censored;
    if trials == 0 {
        return Err(Error::InsufficientData("every walk hit the safety cap".into()));
    }
    Ok(DirectionalReport {
        direction,
        b,
        length,
        replicas,
        backward: Proportion::new(back, trials),
        censored,
        safety_cap,
    })
}

/// Step direction index for `+e_axis`/`−e_axis`; re-exported for callers
/// assembling move lists by hand.
pub fn move_index(axis: usize, positive: bool) -> u8 {
    (if positive { Direction::plus(axis) } else { Direction::minus(axis) }) as u8
}
