//! Quenched exit statistics measured across environments: atypical
//! right-exit tails, the annealed exit-point floor and variance of a block,
//! the gap between `v̂` and `v̂_L`, transversal fluctuations before `T_{L²}`
//! and intersections of two walks in one environment.

use crate::environment::{Ensemble, KernelField};
use crate::error::{Error, Result};
use crate::hashing::{hash_words, tags};
use crate::lattice::{for_each_in_box, norm1, norm2, norm_inf, normalized, project_oblique_perp, Site};
use crate::regeneration::{direction_samples, DirectionParams, DirectionSample};
use crate::region::Region;
use crate::replicas::{map_environments, map_replicas};
use crate::scalar::CompensatedSum;
use crate::scales::scale_r_unchecked;
use crate::solver::{conditional_exit_stats, solve_exit, solve_exit_sparse, ExitAtom, ExitSolution, SolveOptions};
use crate::stats::{bootstrap_ci, bootstrap_se, least_squares, Proportion};
use crate::walk::{run_walk, walk_key, StopReason, DIRECTIONAL_SAFETY_CAP};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

/// Region whose right-exit probability is measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TailGeometry {
    /// `{−L^β ≤ x·l ≤ L}`; success is leaving with `x·l > 0`.
    Slab { direction: Vec<f64> },
    /// `{0 ≤ x·l ≤ L, ‖π_{l⊥}x‖_∞ ≤ KL}`; success is leaving through `x·l > L`.
    Box { direction: Vec<f64>, k: f64 },
    /// The cone window of length `L` and opening `δ` around `direction`.
    Cone { axis: usize, delta: f64, direction: Vec<f64> },
}

impl TailGeometry {
    pub fn region(&self, length: f64, beta: f64) -> Result<Region> {
        let r = match self {
            TailGeometry::Slab { direction } => {
                nonzero(direction)?;
                Region::slab(direction, length.powf(beta) + 1e-9, length + 1e-9, Default::default())
            }
            TailGeometry::Box { direction, k } => {
                nonzero(direction)?;
                Region::directed_box(direction, length, *k)
            }
            TailGeometry::Cone { axis, delta, direction } => {
                nonzero(direction)?;
                Region::cone(*axis, length, *delta, direction)
            }
        };
        r.validate()?;
        Ok(r)
    }
}

fn nonzero(v: &[f64]) -> Result<()> {
    normalized(v).map(|_| ()).ok_or_else(|| Error::BadParameter("direction must be nonzero".into()))
}

fn default_mc_walks() -> u64 {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitTailQuery {
    pub geometry: TailGeometry,
    pub c: f64,
    pub beta: f64,
    pub length: f64,
    pub replicas: u64,
    /// Extra lengths for the tail-exponent fit.
    #[serde(default)]
    pub lengths: Vec<f64>,
    /// Walks per environment when the region is too large to solve.
    #[serde(default = "default_mc_walks")]
    pub mc_walks: u64,
}

impl ExitTailQuery {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadParameter(m));
        if self.replicas == 0 {
            return bad("at least one environment is required".into());
        }
        if !(self.c > 0.0) {
            return bad(format!("c must be positive, got {}", self.c));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta {} outside (0, 1)", self.beta));
        }
        if !(self.length >= 1.0) || self.lengths.iter().any(|l| !(*l >= 1.0)) {
            return bad("lengths must be at least 1".into());
        }
        if self.mc_walks == 0 {
            return bad("mc_walks must be positive".into());
        }
        Ok(())
    }

    /// `e^{−cL^β}`.
    pub fn threshold(&self, length: f64) -> f64 {
        (-self.c * length.powf(self.beta)).exp()
    }
}

/// Right-exit probability of one environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentTail {
    pub replica: u64,
    pub seed: u64,
    pub trapped: bool,
    pub right_prob: f64,
    pub lo: f64,
    pub hi: f64,
    /// Exact solve rather than simulated walks.
    pub exact: bool,
    pub below: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCell {
    pub length: f64,
    pub threshold: f64,
    pub underflow: bool,
    pub fraction: Proportion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub query: ExitTailQuery,
    pub threshold: f64,
    /// The threshold rounds to zero, so no environment can fall below it.
    pub underflow: bool,
    pub environments: Vec<EnvironmentTail>,
    pub fraction: Proportion,
    pub grid: Vec<TailCell>,
    /// Slope of `log(−log fraction)` against `log L` over the grid.
    pub tail_exponent: Option<f64>,
}

struct Estimate {
    p: f64,
    lo: f64,
    hi: f64,
    exact: bool,
}

fn right_exit_estimate<F: KernelField + ?Sized>(
    field: &F,
    seed: u64,
    region: &Region,
    walks: u64,
    opts: &SolveOptions,
) -> Result<Estimate> {
    let start = region.default_start();
    let exact = if matches!(region, Region::Slab { .. }) {
        solve_exit_sparse::<f64, F>(field, region, start, opts).map(|s| {
            let p = s.right_exit_mass().clamp(0.0, 1.0);
            Estimate { p, lo: p, hi: (p + s.stats.undelivered_mass).min(1.0), exact: true }
        })
    } else {
        let o = SolveOptions { exit_distribution: false, ..opts.clone() };
        solve_exit::<f64, F>(field, region, start, &o).map(|s| {
            let p = s.h_start().clamp(0.0, 1.0);
            Estimate { p, lo: p, hi: p, exact: true }
        })
    };
    match exact {
        Err(Error::RegionTooLarge { .. }) => {
            let hits = (0..walks)
                .filter(|&w| {
                    let out = run_walk(field, walk_key(seed, w), start, region, DIRECTIONAL_SAFETY_CAP, |_, _| {});
                    out.reason != StopReason::StepCap && region.right_boundary(&out.end)
                })
                .count() as u64;
            let pr = Proportion::new(hits, walks);
            Ok(Estimate { p: pr.estimate, lo: pr.lo, hi: pr.hi, exact: false })
        }
        other => other,
    }
}

fn tail_cell(
    ensemble: &Ensemble,
    q: &ExitTailQuery,
    length: f64,
    opts: &SolveOptions,
) -> Result<(TailCell, Vec<EnvironmentTail>)> {
    let region = q.geometry.region(length, q.beta)?;
    let threshold = q.threshold(length);
    let underflow = threshold == 0.0;
    if underflow {
        log::warn!("threshold e^(-c L^beta) underflows at L = {length}; no environment can fall below it");
    }
    let est = map_environments(ensemble, q.replicas, |rep| {
        right_exit_estimate(&rep.env, rep.env.seed(), &region, q.mc_walks, opts)
            .map(|e| (e.p, e.lo, e.hi, e.exact))
    })?;
    let envs: Vec<EnvironmentTail> = est
        .into_iter()
        .enumerate()
        .map(|(i, (p, lo, hi, exact))| {
            let rep = ensemble.replica(i as u64);
            EnvironmentTail {
                replica: i as u64,
                seed: rep.env.seed(),
                trapped: rep.trapped,
                right_prob: p,
                lo,
                hi,
                exact,
                below: !underflow && p <= threshold,
            }
        })
        .collect();
    let below = envs.iter().filter(|e| e.below).count() as u64;
    let cell = TailCell { length, threshold, underflow, fraction: Proportion::new(below, q.replicas) };
    Ok((cell, envs))
}

/// Fraction of environments whose right-exit probability from the standard
/// start is at most `e^{−cL^β}`.
pub fn atypical_exit_tail(ensemble: &Ensemble, query: &ExitTailQuery, opts: &SolveOptions) -> Result<TailReport> {
    query.validate()?;
    let (main, environments) = tail_cell(ensemble, query, query.length, opts)?;
    let mut grid = Vec::with_capacity(query.lengths.len());
    for &l in &query.lengths {
        grid.push(if l == query.length { main.clone() } else { tail_cell(ensemble, query, l, opts)?.0 });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = grid
        .iter()
        .filter(|c| c.fraction.estimate > 0.0 && c.fraction.estimate < 1.0)
        .map(|c| (c.length.ln(), (-c.fraction.estimate.ln()).ln()))
        .unzip();
    let tail_exponent = if xs.len() >= 2 { least_squares(&xs, &ys).map(|f| f.slope) } else { None };
    Ok(TailReport {
        query: query.clone(),
        threshold: main.threshold,
        underflow: main.underflow,
        fraction: main.fraction,
        environments,
        grid,
        tail_exponent,
    })
}

/// Annealed exit law of one region and start: per-environment exact exit
/// distributions averaged over environments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealedExitLaw {
    pub region: Region,
    pub start: Site,
    pub replicas: u64,
    /// Atoms sorted by site.
    pub atoms: Vec<ExitAtom<f64>>,
    /// Largest per-environment mass left undelivered by the sparse solve.
    pub undelivered: f64,
}

impl AnnealedExitLaw {
    pub fn right_mass(&self) -> f64 {
        self.atoms.iter().filter(|a| a.right).map(|a| a.prob).collect::<CompensatedSum<f64>>().value()
    }

    pub fn prob(&self, y: &Site) -> f64 {
        self.atoms.binary_search_by(|a| a.site.cmp(y)).map(|i| self.atoms[i].prob).unwrap_or(0.0)
    }

    /// Conditioned expectation and ℓ1-squared variance on right exit.
    pub fn conditioned(&self, theta: f64) -> Result<crate::solver::ConditionedExit> {
        let sol = ExitSolution {
            region: self.region.clone(),
            start: self.start,
            sites: Vec::new(),
            right: Vec::new(),
            wrong: Vec::new(),
            exits: self.atoms.clone(),
            right_corner: self.region.block_right_corner(),
            stats: Default::default(),
        };
        conditional_exit_stats(&sol, theta)
    }
}

/// Averages sparse exact exit distributions over `m` environments.
pub fn annealed_exit_law(
    ensemble: &Ensemble,
    region: &Region,
    start: Site,
    m: u64,
    opts: &SolveOptions,
) -> Result<AnnealedExitLaw> {
    if m == 0 {
        return Err(Error::BadParameter("at least one environment is required".into()));
    }
    let sols = map_environments(ensemble, m, |rep| {
        let s = solve_exit_sparse::<f64, _>(&rep.env, region, start, opts)?;
        Ok((s.exits, s.stats.undelivered_mass))
    })?;
    let mut acc: BTreeMap<Site, (bool, CompensatedSum<f64>)> = BTreeMap::new();
    let mut undelivered = 0.0f64;
    for (exits, left) in &sols {
        undelivered = undelivered.max(*left);
        for a in exits {
            acc.entry(a.site).or_insert((a.right, CompensatedSum::default())).1.add(a.prob);
        }
    }
    let atoms = acc
        .into_iter()
        .map(|(site, (right, s))| ExitAtom { site, right, prob: s.value() / m as f64 })
        .collect();
    Ok(AnnealedExitLaw { region: region.clone(), start: region.canonical(&start), replicas: m, atoms, undelivered })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorRow {
    pub site: Site,
    pub admissible: bool,
    pub prob: f64,
    /// `L^{d−1}·prob`.
    pub scaled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorReport {
    pub length: u64,
    pub start: Site,
    pub c_prime: f64,
    pub replicas: u64,
    /// Minimum of `L^{d−1}·P̂_x(X_T = y)` over admissible right-face sites.
    pub floor: f64,
    pub argmin: Option<Site>,
    /// Every right-face site carrying mass or admissible, sorted by site.
    pub table: Vec<FloorRow>,
    pub right_prob: f64,
    pub conditioned_expectation: Vec<f64>,
    /// ℓ1-squared variance of the annealed conditioned exit law.
    pub conditioned_variance: f64,
    /// `conditioned_variance / L²`.
    pub variance_scaled: f64,
    pub undelivered: f64,
}

/// Exit-point floor and variance window of the block `𝒫(0,L)` from `start`.
///
/// A right-face site `y` is admissible when `‖π̃_{v̂⊥}(y − start)‖₁ < C′L`.
/// Scales below 16 use the extrapolated block width.
pub fn exit_point_floor(
    ensemble: &Ensemble,
    length: u64,
    m: u64,
    c_prime: f64,
    start: Site,
    v_hat: &[f64],
    opts: &SolveOptions,
) -> Result<FloorReport> {
    if !(c_prime > 0.0) {
        return Err(Error::BadParameter("C' must be positive".into()));
    }
    if length < 2 {
        return Err(Error::BadParameter("L must be at least 2".into()));
    }
    let v = normalized(v_hat)
        .filter(|v| v[0] > 0.0)
        .ok_or_else(|| Error::BadParameter("v̂ must have a positive e_1 component".into()))?;
    let d = ensemble.dim();
    if v.len() != d || start.dim() != d {
        return Err(Error::BadParameter("dimension mismatch".into()));
    }
    let block = Region::block(Site::origin(d), length, &v);
    if !block.in_middle_third(&start) {
        return Err(Error::BadParameter("start must lie in the middle third of the block".into()));
    }
    let law = annealed_exit_law(ensemble, &block, start, m, opts)?;
    let lf = length as f64;
    let scale = lf.powi(d as i32 - 1);
    let admissible = |y: &Site| norm1(&project_oblique_perp(&y.sub(&start).to_f64(), &v, 0)) < c_prime * lf;

    let mut rows: BTreeMap<Site, FloorRow> = law
        .atoms
        .iter()
        .filter(|a| a.right)
        .map(|a| (a.site, FloorRow { site: a.site, admissible: admissible(&a.site), prob: a.prob, scaled: scale * a.prob }))
        .collect();
    // admissible sites that received no mass still count
    let n2 = (length * length) as i64;
    let t = (n2 - start.get(0)) as f64 / v[0];
    let reach = c_prime * lf;
    let ranges: Vec<(i64, i64)> = (1..d)
        .map(|j| {
            let c = start.get(j) as f64 + t * v[j];
            ((c - reach).floor() as i64, (c + reach).ceil() as i64)
        })
        .collect();
    let back = crate::lattice::Direction::minus(0);
    let mut y = Site::origin(d);
    y.set(0, n2);
    for_each_in_box(&ranges, &mut |ks| {
        for (j, k) in ks.iter().enumerate() {
            y.set(j + 1, *k);
        }
        if block.contains(&y.step(back)) && admissible(&y) {
            rows.entry(y).or_insert(FloorRow { site: y, admissible: true, prob: 0.0, scaled: 0.0 });
        }
    });
    let table: Vec<FloorRow> = rows.into_values().collect();
    let best = table
        .iter()
        .filter(|r| r.admissible)
        .min_by(|a, b| a.scaled.total_cmp(&b.scaled).then(a.site.cmp(&b.site)));
    let cond = law.conditioned(1.0)?;
    Ok(FloorReport {
        length,
        start,
        c_prime,
        replicas: m,
        floor: best.map(|r| r.scaled).unwrap_or(f64::NAN),
        argmin: best.map(|r| r.site),
        right_prob: law.right_mass(),
        conditioned_expectation: cond.expectation,
        conditioned_variance: cond.variance,
        variance_scaled: cond.variance / (lf * lf),
        undelivered: law.undelivered,
        table,
    })
}

/// `‖v̂ − v̂_L‖₂` with a bootstrap interval over replicas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionGap {
    pub scale: u64,
    pub replicas: u64,
    pub v_hat: Vec<f64>,
    pub v_hat_l: Vec<f64>,
    pub gap: f64,
    pub std_error: f64,
    pub lo: f64,
    pub hi: f64,
    pub a_l_holds: u64,
}

fn gap_of<'a>(samples: impl Iterator<Item = &'a DirectionSample>, d: usize) -> Option<f64> {
    let mut all = vec![0.0; d];
    let mut held = vec![0.0; d];
    let mut n_held = 0;
    for s in samples {
        let Some(inc) = s.increment else { continue };
        for j in 0..d {
            all[j] += inc.get(j) as f64;
            if s.a_l == Some(true) {
                held[j] += inc.get(j) as f64;
            }
        }
        n_held += (s.a_l == Some(true)) as usize;
    }
    if n_held == 0 {
        return None;
    }
    let (a, h) = (normalized(&all)?, normalized(&held)?);
    Some(norm2(&a.iter().zip(&h).map(|(x, y)| x - y).collect::<Vec<_>>()))
}

pub const GAP_RESAMPLES: usize = 1000;

pub fn direction_gap(ensemble: &Ensemble, p: &DirectionParams) -> Result<DirectionGap> {
    if p.replicas == 0 {
        return Err(Error::BadParameter("at least one replica is required".into()));
    }
    let d = ensemble.dim();
    let samples = direction_samples(ensemble, p);
    let est = crate::regeneration::aggregate_direction(&samples, d);
    if !est.drift_detected {
        return Err(Error::NoDrift);
    }
    let (Some(v_hat), Some(v_hat_l)) = (est.v_hat, est.v_hat_l) else {
        return Err(Error::InsufficientData("no replica satisfied A_L".into()));
    };
    let gap = norm2(&v_hat.iter().zip(&v_hat_l).map(|(x, y)| x - y).collect::<Vec<_>>());
    let idx: Vec<f64> = (0..samples.len()).map(|i| i as f64).collect();
    let stat = |b: &[f64]| gap_of(b.iter().map(|&i| &samples[i as usize]), d).unwrap_or(f64::NAN);
    let seed = hash_words(&[tags::BOOTSTRAP, ensemble.master_seed, ensemble.tag, p.scale]);
    let (lo, hi) = bootstrap_ci(&idx, GAP_RESAMPLES, seed, 0.95, stat);
    let std_error = bootstrap_se(&idx, GAP_RESAMPLES, seed, stat);
    Ok(DirectionGap {
        scale: p.scale,
        replicas: p.replicas,
        v_hat,
        v_hat_l,
        gap,
        std_error,
        lo,
        hi,
        a_l_holds: est.a_l_holds,
    })
}

/// Settings of the transversal fluctuation experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctuationParams {
    pub length: u64,
    pub replicas: u64,
    pub start: Site,
    pub v_hat: Vec<f64>,
    /// Index `k` of the transversal radius `R_k(L)·L`.
    #[serde(default = "default_transversal_index")]
    pub transversal_index: u32,
    #[serde(default = "default_cap")]
    pub step_cap: u64,
}

fn default_transversal_index() -> u32 {
    3
}

fn default_cap() -> u64 {
    DIRECTIONAL_SAFETY_CAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub length: u64,
    pub transversal_radius: f64,
    pub backtrack_depth: u64,
    pub transversal: Proportion,
    pub backtrack: Proportion,
    pub union: Proportion,
    /// Walks that hit the step cap before `T_{L²}`.
    pub censored: u64,
}

/// Frequency of `‖π̃_{v̂⊥}(X_n − x)‖_∞ ≥ R_k(L)·L` or `(X_n − x)·e_1 < −R_2(L)`
/// for some `n ≤ T_{L²}`, one environment per replica.
pub fn transversal_fluctuation_tail(ensemble: &Ensemble, p: &FluctuationParams) -> Result<FluctuationReport> {
    if p.replicas == 0 || p.length < 2 || p.step_cap == 0 {
        return Err(Error::BadParameter("replicas, step_cap and L ≥ 2 are required".into()));
    }
    let v = normalized(&p.v_hat)
        .filter(|v| v[0] > 0.0 && v.len() == ensemble.dim())
        .ok_or_else(|| Error::BadParameter("v̂ must have a positive e_1 component".into()))?;
    let radius = scale_r_unchecked(p.transversal_index, p.length) as f64 * p.length as f64;
    let depth = scale_r_unchecked(2, p.length);
    let level = (p.length * p.length) as i64;
    let rule = crate::walk::Halfspaces {
        direction: crate::lattice::axis_vector(ensemble.dim(), 0),
        right_level: level as f64,
        left_level: f64::INFINITY,
    };
    let hits = map_replicas(ensemble, p.replicas, |rep| {
        if p.start.get(0) >= level {
            return Ok((false, false, false));
        }
        let (mut t, mut b) = (false, false);
        let key = walk_key(rep.env.seed(), rep.index);
        let out = run_walk(&rep.env, key, p.start, &rule, p.step_cap, |_, x| {
            let z = x.sub(&p.start);
            t |= norm_inf(&project_oblique_perp(&z.to_f64(), &v, 0)) >= radius;
            b |= z.get(0) < -(depth as i64);
        });
        Ok((t, b, out.reason == StopReason::StepCap))
    })?;
    let count = |f: &dyn Fn(&(bool, bool, bool)) -> bool| hits.iter().filter(|h| f(h)).count() as u64;
    Ok(FluctuationReport {
        length: p.length,
        transversal_radius: radius,
        backtrack_depth: depth,
        transversal: Proportion::new(count(&|h| h.0), p.replicas),
        backtrack: Proportion::new(count(&|h| h.1), p.replicas),
        union: Proportion::new(count(&|h| h.0 || h.1), p.replicas),
        censored: count(&|h| h.2),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionParams {
    pub length: u64,
    pub replicas: u64,
    pub starts: [Site; 2],
    pub v_hat: Vec<f64>,
    /// Multipliers `m` of the tail table.
    pub multipliers: Vec<u64>,
    /// Walk stream ids within each environment.
    #[serde(default = "default_streams")]
    pub streams: [u64; 2],
    #[serde(default = "default_cap")]
    pub step_cap: u64,
}

fn default_streams() -> [u64; 2] {
    [0, 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionTail {
    pub multiplier: u64,
    pub bound: u64,
    pub exceed: Proportion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionReport {
    pub length: u64,
    /// Per-replica intersection counts.
    pub counts: Vec<u64>,
    /// `(count, replicas)` pairs in increasing count order.
    pub distribution: Vec<(u64, u64)>,
    pub tail: Vec<IntersectionTail>,
    /// The decay statements this measures are made for `d ≥ 4`.
    pub dimension_warning: bool,
    pub censored: u64,
}

/// Distinct sites of `𝒫(0,L)` visited by both of two independent walks in
/// the same environment. Each walk runs until `X·e_1 ≥ L²`.
pub fn intersection_census(ensemble: &Ensemble, p: &IntersectionParams) -> Result<IntersectionReport> {
    let d = ensemble.dim();
    if p.replicas == 0 || p.length < 2 || p.step_cap == 0 {
        return Err(Error::BadParameter("replicas, step_cap and L ≥ 2 are required".into()));
    }
    if p.starts.iter().any(|s| s.dim() != d || s.get(0) != 0) {
        return Err(Error::BadParameter("starts must lie on the hyperplane x·e_1 = 0".into()));
    }
    let v = normalized(&p.v_hat)
        .filter(|v| v[0] > 0.0 && v.len() == d)
        .ok_or_else(|| Error::BadParameter("v̂ must have a positive e_1 component".into()))?;
    let block = Region::block(Site::origin(d), p.length, &v);
    let level = (p.length * p.length) as i64;
    let rule = crate::walk::Halfspaces {
        direction: crate::lattice::axis_vector(d, 0),
        right_level: level as f64,
        left_level: f64::INFINITY,
    };
    let res = map_replicas(ensemble, p.replicas, |rep| {
        let mut sets: [HashSet<Site>; 2] = Default::default();
        let mut censored = false;
        for (w, set) in sets.iter_mut().enumerate() {
            let start = p.starts[w];
            if block.contains(&start) {
                set.insert(start);
            }
            let key = walk_key(rep.env.seed(), p.streams[w]);
            let out = run_walk(&rep.env, key, start, &rule, p.step_cap, |_, x| {
                if block.contains(x) {
                    set.insert(*x);
                }
            });
            censored |= out.reason == StopReason::StepCap;
        }
        Ok((sets[0].intersection(&sets[1]).count() as u64, censored))
    })?;
    let counts: Vec<u64> = res.iter().map(|r| r.0).collect();
    let mut dist: BTreeMap<u64, u64> = BTreeMap::new();
    for &c in &counts {
        *dist.entry(c).or_default() += 1;
    }
    let r2 = scale_r_unchecked(2, p.length);
    let unit = r2.saturating_pow(d as u32 + 1);
    let tail = p
        .multipliers
        .iter()
        .map(|&m| {
            let bound = m.saturating_mul(unit);
            let k = counts.iter().filter(|&&c| c > bound).count() as u64;
            IntersectionTail { multiplier: m, bound, exceed: Proportion::new(k, p.replicas) }
        })
        .collect();
    Ok(IntersectionReport {
        length: p.length,
        distribution: dist.into_iter().collect(),
        counts,
        tail,
        dimension_warning: d < 4,
        censored: res.iter().filter(|r| r.1).count() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::EnvironmentModel;

    fn biased() -> Ensemble {
        Ensemble::new(EnvironmentModel::deterministic(&[0.4, 0.2, 0.2, 0.2], 0.2), 5).unwrap()
    }

    #[test]
    fn slab_tail_matches_ruin_formula() {
        let q = ExitTailQuery {
            geometry: TailGeometry::Slab { direction: vec![1.0, 0.0] },
            c: 1.0,
            beta: 0.5,
            length: 16.0,
            replicas: 3,
            lengths: vec![],
            mc_walks: 10,
        };
        let r = atypical_exit_tail(&biased(), &q, &SolveOptions::default()).unwrap();
        // left exit at x = −5, right exit at x = 17, ratio q/p = 1/2
        let (a, b) = (5.0f64, 17.0f64);
        let left = (1.0 - 0.5f64.powf(b)) / (0.5f64.powf(-a) - 0.5f64.powf(b));
        for e in &r.environments {
            assert!((e.right_prob - (1.0 - left)).abs() < 1e-9, "{}", e.right_prob);
            assert!(e.exact && !e.below);
        }
        assert_eq!(r.fraction.successes, 0);
    }

    #[test]
    fn huge_c_underflows() {
        let q = ExitTailQuery {
            geometry: TailGeometry::Box { direction: vec![1.0, 0.0], k: 1.0 },
            c: 1e6,
            beta: 0.9,
            length: 8.0,
            replicas: 2,
            lengths: vec![],
            mc_walks: 10,
        };
        let r = atypical_exit_tail(&biased(), &q, &SolveOptions::default()).unwrap();
        assert!(r.underflow);
        assert_eq!(r.fraction.estimate, 0.0);
    }

    #[test]
    fn zero_replicas_rejected() {
        let q = ExitTailQuery {
            geometry: TailGeometry::Box { direction: vec![1.0, 0.0], k: 1.0 },
            c: 1.0,
            beta: 0.5,
            length: 8.0,
            replicas: 0,
            lengths: vec![],
            mc_walks: 10,
        };
        assert!(matches!(atypical_exit_tail(&biased(), &q, &SolveOptions::default()), Err(Error::BadParameter(_))));
    }

    #[test]
    fn shared_start_always_intersects() {
        let e = Ensemble::new(EnvironmentModel::deterministic(&[0.4, 0.2, 0.2, 0.2], 0.2), 3).unwrap();
        let p = IntersectionParams {
            length: 4,
            replicas: 20,
            starts: [Site::origin(2), Site::origin(2)],
            v_hat: vec![1.0, 0.0],
            multipliers: vec![1],
            streams: [0, 1],
            step_cap: 100_000,
        };
        let r = intersection_census(&e, &p).unwrap();
        assert!(r.counts.iter().all(|&c| c >= 1));
        assert!(r.dimension_warning);
    }
}
