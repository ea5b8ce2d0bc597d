//! Blocks `𝒫(x,N)` on the anchor lattice, the annealed reference exit law,
//! good/bad classification and the per-level bad-block census.
//!
//! All exit statistics of a block come from one multi-field harmonic solve:
//! right and wrong exit probabilities, the right exit coordinates and one
//! indicator per right-face cube. Dividing by the right-exit probability
//! gives the conditioned law from every start site at once.

use crate::environment::{Ensemble, Environment, KernelField};
use crate::error::{Error, Result};
use crate::lattice::{for_each_in_box, normalized, Site};
use crate::region::{block_half_width, Region, Side};
use crate::replicas::map_environments;
use crate::scales::{scale_r, LadderParams, ScaleLadder};
use crate::solver::{cube_index, cube_side, harmonic_fields, SolveOptions};
use crate::walk::{run_walk, walk_key};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Spacings `(N², ⌊R_6(N)·N/4⌋)` of the anchor lattice `𝓛_N`.
pub fn anchor_spacing(n: u64) -> Result<(i64, i64)> {
    let r6 = scale_r(6, n)? as u128;
    let t = (r6 * n as u128 / 4).min(i64::MAX as u128) as i64;
    Ok(((n * n) as i64, t.max(1)))
}

fn unit_direction(v_hat: &[f64]) -> Result<Vec<f64>> {
    let v = normalized(v_hat).ok_or_else(|| Error::BadParameter("v̂ must be nonzero".into()))?;
    if !(v[0] > 0.0) {
        return Err(Error::BadParameter("v̂ must have a positive e_1 component".into()));
    }
    Ok(v)
}

/// Anchors `x ∈ 𝓛_N` whose block meets the interior of `window`, in
/// lexicographic order.
pub fn enumerate_blocks(n: u64, window: &Region, v_hat: &[f64], max_sites: usize) -> Result<Vec<Site>> {
    let (s1, st) = anchor_spacing(n)?;
    let v = unit_direction(v_hat)?;
    let d = window.dim();
    if v.len() != d {
        return Err(Error::BadParameter("v̂ dimension mismatch".into()));
    }
    let w = block_half_width(n);
    let mut found = BTreeSet::new();
    let mut probe = Region::block(Site::origin(d), n, &v);
    for y in window.interior_sites(max_sites)? {
        let y1 = y.get(0);
        let below = y1.div_euclid(s1) * s1;
        for x1 in [below, below + s1] {
            if (y1 - x1).abs() >= s1 {
                continue;
            }
            let t = (y1 - x1) as f64 / v[0];
            let ranges: Vec<(i64, i64)> = (1..d)
                .map(|j| {
                    let c = y.get(j) as f64 - t * v[j];
                    (((c - w) / st as f64).floor() as i64, ((c + w) / st as f64).ceil() as i64)
                })
                .collect();
            let mut x = Site::origin(d);
            x.set(0, x1);
            for_each_in_box(&ranges, &mut |ks| {
                for (j, k) in ks.iter().enumerate() {
                    x.set(j + 1, k * st);
                }
                if let Region::Block { anchor, .. } = &mut probe {
                    *anchor = x;
                }
                if probe.contains(&y) {
                    found.insert(x);
                }
            });
        }
    }
    Ok(found.into_iter().collect())
}

/// Which start sites of the middle third are tested.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestSites {
    All,
    /// Every site when there are at most `max_sites`, otherwise every
    /// `⌈count/max_sites⌉`-th site in lexicographic order.
    Budget { max_sites: usize },
}

impl Default for TestSites {
    fn default() -> Self {
        TestSites::Budget { max_sites: 100_000 }
    }
}

/// Middle-third offsets `z − x` selected by `policy`.
pub fn tested_offsets(n: u64, v: &[f64], policy: TestSites) -> Result<Vec<Site>> {
    let d = v.len();
    let block = Region::block(Site::origin(d), n, v);
    let n2 = (n * n) as i64;
    let w3 = block_half_width(n) / 3.0;
    let e1 = n2 / 3 + 1;
    let mut all = Vec::new();
    for z1 in -e1..=e1 {
        let t = z1 as f64 / v[0];
        let ranges: Vec<(i64, i64)> = (1..d)
            .map(|j| {
                let c = t * v[j];
                ((c - w3).floor() as i64, (c + w3).ceil() as i64)
            })
            .collect();
        let mut z = Site::origin(d);
        z.set(0, z1);
        for_each_in_box(&ranges, &mut |ks| {
            for (j, k) in ks.iter().enumerate() {
                z.set(j + 1, *k);
            }
            if block.in_middle_third(&z) {
                all.push(z);
            }
        });
    }
    all.sort();
    Ok(match policy {
        TestSites::Budget { max_sites } if max_sites > 0 && all.len() > max_sites => {
            let stride = all.len().div_ceil(max_sites);
            all.into_iter().step_by(stride).collect()
        }
        _ => all,
    })
}

/// Fixed tiling of a block's right face by `(d−1)`-cubes of side `⌈N^ϑ⌉`,
/// anchored at the face's minimal corner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeLayout {
    /// Minimal corner relative to the anchor.
    pub corner: Site,
    pub side: i64,
    pub indices: Vec<Vec<i64>>,
}

impl CubeLayout {
    pub fn of_block(block: &Region, theta: f64) -> Result<Self> {
        let Region::Block { anchor, n, .. } = block else {
            return Err(Error::BadParameter("cube layout needs a block".into()));
        };
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::BadParameter(format!("theta {theta} outside (0, 1]")));
        }
        let corner = block.block_right_corner().expect("blocks have a right corner");
        let side = cube_side(block, theta);
        let d = anchor.dim();
        let w = block_half_width(*n).ceil() as i64;
        let mut idx = BTreeSet::new();
        let ranges: Vec<(i64, i64)> = (1..d).map(|j| (corner.get(j), corner.get(j) + 2 * w + 1)).collect();
        let mut y = corner;
        for_each_in_box(&ranges, &mut |ks| {
            for (j, k) in ks.iter().enumerate() {
                y.set(j + 1, *k);
            }
            if block.contains(&y.step(crate::lattice::Direction::minus(0))) {
                idx.insert(cube_index(&y, &corner, 0, side));
            }
        });
        Ok(Self { corner: corner.sub(anchor), side, indices: idx.into_iter().collect() })
    }

    fn lookup(&self) -> BTreeMap<Vec<i64>, usize> {
        self.indices.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect()
    }
}

/// Joint exit data of one start site in one environment. `values` holds
/// `E_z[(X_j − corner_j + 1); right]` for `j ≥ 2` and then
/// `P_z(X ∈ Q, right)` for every cube.
#[derive(Clone)]
struct StartData {
    right: f64,
    values: Vec<f64>,
}

fn block_solve<F: KernelField + ?Sized>(
    field: &F,
    block: &Region,
    layout: &CubeLayout,
    offsets: &[Site],
    opts: &SolveOptions,
) -> Result<Vec<StartData>> {
    let anchor = block.default_start();
    let d = anchor.dim();
    let corner = anchor.add(&layout.corner);
    let lookup = layout.lookup();
    let nc = layout.indices.len();
    let nf = 2 + (d - 1) + nc;
    let boundary = |atoms: &[(Site, Side)]| {
        let mut v = vec![0.0; atoms.len() * nf];
        for (a, (y, side)) in atoms.iter().enumerate() {
            let row = &mut v[a * nf..(a + 1) * nf];
            if *side == Side::Right {
                row[0] = 1.0;
                for j in 1..d {
                    row[1 + j] = (y.get(j) - corner.get(j) + 1) as f64;
                }
                if let Some(&q) = lookup.get(&cube_index(y, &corner, 0, layout.side)) {
                    row[1 + d + q] = 1.0;
                }
            } else {
                row[1] = 1.0;
            }
        }
        (nf, v)
    };
    let fs = harmonic_fields::<f64, F>(field, block, &boundary, opts)?;
    offsets
        .iter()
        .map(|o| {
            let z = anchor.add(o);
            let i = fs.index_of(&z).ok_or(Error::StartOutside)?;
            Ok(StartData {
                right: fs.value(i, 0),
                values: (2..nf).map(|r| fs.value(i, r)).collect(),
            })
        })
        .collect()
}

/// Interior site count of a block, without enumerating it.
fn block_volume(n: u64, d: usize) -> f64 {
    (2 * n * n - 1) as f64 * (2.0 * block_half_width(n)).powi(d as i32 - 1)
}

/// Annealed conditioned exit law of `𝒫(0,N)` from each tested start.
///
/// Conditioned quantities are ratios of annealed averages,
/// `E[E_{z,ω}(f(X); right)] / E[P_{z,ω}(right)]`. Intervals are `Z`
/// standard errors of the ratio estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealedReference {
    pub n: u64,
    pub theta: f64,
    pub v_hat: Vec<f64>,
    pub replicas: u64,
    pub policy: TestSites,
    pub layout: CubeLayout,
    /// Tested starts relative to the anchor.
    pub offsets: Vec<Site>,
    /// Annealed right-exit probability per start.
    pub right_prob: Vec<f64>,
    /// Conditioned exit point relative to the anchor, per start.
    pub expectation: Vec<Vec<f64>>,
    pub expectation_half_width: Vec<Vec<f64>>,
    pub cube_probs: Vec<Vec<f64>>,
    pub cube_half_width: Vec<Vec<f64>>,
    /// Estimated from one simulated walk per start and environment because
    /// the block exceeds the exact-solve budget.
    pub fallback: bool,
}

/// Running sums of deviations from the first sample; identical samples
/// therefore average to exactly the first one.
#[derive(Clone, Default)]
struct RatioAcc {
    first: Option<(f64, f64)>,
    n: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl RatioAcc {
    fn add(&mut self, num: f64, den: f64) {
        let (y0, x0) = *self.first.get_or_insert((num, den));
        let (dy, dx) = (num - y0, den - x0);
        self.n += 1.0;
        self.sx += dx;
        self.sy += dy;
        self.sxx += dx * dx;
        self.syy += dy * dy;
        self.sxy += dx * dy;
    }

    /// Ratio of means and `Z` linearized standard errors.
    fn ratio(&self) -> (f64, f64) {
        let Some((y0, x0)) = self.first else { return (f64::NAN, f64::NAN) };
        let n = self.n;
        let (my, mx) = (y0 + self.sy / n, x0 + self.sx / n);
        if !(mx > 0.0) {
            return (f64::NAN, f64::NAN);
        }
        let r = my / mx;
        if n < 2.0 {
            return (r, 0.0);
        }
        let vy = (self.syy - self.sy * self.sy / n) / (n - 1.0);
        let vx = (self.sxx - self.sx * self.sx / n) / (n - 1.0);
        let cxy = (self.sxy - self.sx * self.sy / n) / (n - 1.0);
        let v = (vy - 2.0 * r * cxy + r * r * vx).max(0.0);
        (r, crate::stats::Z * (v / n).sqrt() / mx)
    }
}

/// Builds the annealed reference of `𝒫(0,N)` from `m` environments.
pub fn annealed_reference(
    ensemble: &Ensemble,
    n: u64,
    theta: f64,
    v_hat: &[f64],
    m: u64,
    policy: TestSites,
    opts: &SolveOptions,
) -> Result<AnnealedReference> {
    if m < 100 {
        return Err(Error::BadParameter(format!("annealed reference needs M ≥ 100, got {m}")));
    }
    scale_r(6, n)?;
    let v = unit_direction(v_hat)?;
    let d = ensemble.dim();
    let block = Region::block(Site::origin(d), n, &v);
    let layout = CubeLayout::of_block(&block, theta)?;
    let offsets = tested_offsets(n, &v, policy)?;
    let nq = (d - 1) + layout.indices.len();
    let fallback = block_volume(n, d) > opts.max_sites as f64;
    let per_env: Vec<Vec<StartData>> = if fallback {
        crate::replicas::map_replicas(ensemble, m, |rep| walk_samples(&rep.env, &block, &layout, &offsets))?
    } else {
        map_environments(ensemble, m, |rep| block_solve(&rep.env, &block, &layout, &offsets, opts))?
    };
    let mut right_acc = vec![RatioAcc::default(); offsets.len()];
    let mut accs = vec![RatioAcc::default(); offsets.len() * nq];
    for env in &per_env {
        for (k, s) in env.iter().enumerate() {
            right_acc[k].add(s.right, 1.0);
            for q in 0..nq {
                accs[k * nq + q].add(s.values[q], s.right);
            }
        }
    }
    let mut expectation = Vec::with_capacity(offsets.len());
    let mut expectation_half_width = Vec::with_capacity(offsets.len());
    let mut cube_probs = Vec::with_capacity(offsets.len());
    let mut cube_half_width = Vec::with_capacity(offsets.len());
    for k in 0..offsets.len() {
        let mut e = vec![(n * n) as f64];
        let mut eh = vec![0.0];
        for j in 1..d {
            let (r, h) = accs[k * nq + j - 1].ratio();
            e.push(r + (layout.corner.get(j) - 1) as f64);
            eh.push(h);
        }
        let (c, ch): (Vec<f64>, Vec<f64>) = (d - 1..nq).map(|q| accs[k * nq + q].ratio()).unzip();
        expectation.push(e);
        expectation_half_width.push(eh);
        cube_probs.push(c);
        cube_half_width.push(ch);
    }
    Ok(AnnealedReference {
        n,
        theta,
        v_hat: v,
        replicas: m,
        policy,
        layout,
        right_prob: right_acc.iter().map(|a| a.ratio().0).collect(),
        offsets,
        expectation,
        expectation_half_width,
        cube_probs,
        cube_half_width,
        fallback,
    })
}

/// One quenched walk per start: indicator samples of the joint exit data.
fn walk_samples(
    env: &Environment,
    block: &Region,
    layout: &CubeLayout,
    offsets: &[Site],
) -> Result<Vec<StartData>> {
    let anchor = block.default_start();
    let d = anchor.dim();
    let corner = anchor.add(&layout.corner);
    let lookup = layout.lookup();
    let nq = (d - 1) + layout.indices.len();
    Ok(offsets
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let z = anchor.add(o);
            let out = run_walk(env, walk_key(env.seed(), k as u64), z, block, u64::MAX, |_, _| {});
            let mut values = vec![0.0; nq];
            let right = block.right_boundary(&out.end);
            if right {
                for j in 1..d {
                    values[j - 1] = (out.end.get(j) - corner.get(j) + 1) as f64;
                }
                if let Some(&q) = lookup.get(&cube_index(&out.end, &corner, 0, layout.side)) {
                    values[d - 1 + q] = 1.0;
                }
            }
            StartData { right: right as u8 as f64, values }
        })
        .collect())
}

/// Settings of the good/bad test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyParams {
    pub gamma: f64,
    pub theta: f64,
    #[serde(default)]
    pub test_sites: TestSites,
}

/// The three thresholds of a scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// `e^{−R_1(N)^γ}`, compared with `≤`.
    pub exit: f64,
    /// `R_4(N)`, compared with `≤`.
    pub expectation: f64,
    /// `N^{(ϑ−1)(d−1) − ϑ(d−1)/(d+1)}`, compared with `<`.
    pub cube: f64,
}

pub fn thresholds(n: u64, d: usize, gamma: f64, theta: f64) -> Result<Thresholds> {
    let r1 = scale_r(1, n)? as f64;
    let r4 = scale_r(4, n)? as f64;
    let e = (d - 1) as f64;
    Ok(Thresholds {
        exit: (-r1.powf(gamma)).exp(),
        expectation: r4,
        cube: (n as f64).powf((theta - 1.0) * e - theta * e / (d as f64 + 1.0)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub anchor: Site,
    pub n: u64,
    /// Largest quenched probability over the tested starts of not leaving
    /// through the right face, walks that never leave included.
    pub metric_1: f64,
    /// Largest ℓ1 gap between quenched and annealed conditioned exit points.
    pub metric_2: f64,
    /// Largest gap between quenched and annealed conditioned cube masses.
    pub metric_3: f64,
    pub thresholds: Thresholds,
    pub good: bool,
    /// A metric lies within the reference interval of its threshold.
    pub borderline: bool,
    pub tested_sites: usize,
    pub policy: TestSites,
}

impl BlockReport {
    /// Recomputes `good` against other thresholds.
    pub fn good_under(&self, t: &Thresholds) -> bool {
        self.metric_1 <= t.exit && self.metric_2 <= t.expectation && self.metric_3 < t.cube
    }
}

fn same_direction(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

/// Classifies `𝒫(anchor, N)` in `env` against `reference`.
pub fn classify_block(
    env: &Environment,
    anchor: Site,
    n: u64,
    params: &ClassifyParams,
    reference: &AnnealedReference,
    opts: &SolveOptions,
) -> Result<BlockReport> {
    let mismatch = |m: &str| Err(Error::ReferenceMismatch(m.into()));
    if reference.n != n {
        return mismatch(&format!("reference scale {} vs block scale {n}", reference.n));
    }
    if reference.theta != params.theta {
        return mismatch("theta differs");
    }
    if reference.policy != params.test_sites {
        return mismatch("test-site policy differs");
    }
    if reference.v_hat.len() != anchor.dim() {
        return mismatch("dimension differs");
    }
    let block = Region::block(anchor, n, &reference.v_hat);
    let layout = CubeLayout::of_block(&block, params.theta)?;
    if layout != reference.layout {
        return mismatch("cube layout differs");
    }
    let d = anchor.dim();
    let thr = thresholds(n, d, params.gamma, params.theta)?;
    let data = block_solve(env, &block, &layout, &reference.offsets, opts)?;
    let (mut m1, mut m2, mut m3) = (0.0f64, 0.0f64, 0.0f64);
    let (mut hw2, mut hw3) = (0.0f64, 0.0f64);
    for (k, s) in data.iter().enumerate() {
        m1 = m1.max(1.0 - s.right);
        if !(s.right > 0.0) {
            m2 = f64::INFINITY;
            m3 = 1.0;
            continue;
        }
        let mut gap = 0.0;
        for j in 1..d {
            let q = s.values[j - 1] / s.right + (layout.corner.get(j) - 1) as f64;
            gap += (q - reference.expectation[k][j]).abs();
        }
        m2 = m2.max(gap);
        hw2 = hw2.max(reference.expectation_half_width[k].iter().sum());
        for (q, want) in reference.cube_probs[k].iter().enumerate() {
            m3 = m3.max((s.values[d - 1 + q] / s.right - want).abs());
        }
        hw3 = hw3.max(reference.cube_half_width[k].iter().copied().fold(0.0, f64::max));
    }
    let mut report = BlockReport {
        anchor,
        n,
        metric_1: m1,
        metric_2: m2,
        metric_3: m3,
        thresholds: thr,
        good: false,
        borderline: (m2 - thr.expectation).abs() <= hw2 || (m3 - thr.cube).abs() <= hw3,
        tested_sites: data.len(),
        policy: params.test_sites,
    };
    report.good = report.good_under(&thr);
    Ok(report)
}

/// Bad-block counts of one ladder level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCensus {
    pub scale: u64,
    pub blocks: u64,
    pub bad: u64,
    pub reports: Vec<BlockReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub length: u64,
    pub levels: Vec<LevelCensus>,
    /// `L^{α+δ}`.
    pub threshold: f64,
    pub theta_holds: bool,
}

fn touches_overlay(env: &Environment, block: &Region) -> bool {
    let Some((lo, hi)) = block.bounding_box() else { return true };
    env.overlays().iter().any(|o| {
        let r = o.radius as i64 + 1;
        (0..lo.dim()).all(|j| o.center.get(j) + r >= lo.get(j) && o.center.get(j) - r <= hi.get(j))
    })
}

/// Classifies every block of every level that meets the cone `C_L`.
///
/// When the base model is deterministic, blocks clear of all trap overlays
/// see a translate of one and the same kernel field, so they share a
/// single classification.
#[allow(clippy::too_many_arguments)]
pub fn bad_block_census(
    env: &Environment,
    length: u64,
    ladder: &ScaleLadder,
    params: &LadderParams,
    class: &ClassifyParams,
    references: &[AnnealedReference],
    v_hat: &[f64],
    opts: &SolveOptions,
) -> Result<CensusReport> {
    if class.theta != params.theta {
        return Err(Error::BadParameter("classification and ladder disagree on theta".into()));
    }
    let v = unit_direction(v_hat)?;
    let window = Region::cone(0, length as f64, params.delta, &v);
    let threshold = (length as f64).powf(params.alpha + params.delta);
    let mut levels = Vec::with_capacity(ladder.levels.len());
    for &n in &ladder.levels {
        let reference = references
            .iter()
            .find(|r| r.n == n)
            .ok_or_else(|| Error::ReferenceMismatch(format!("no reference for scale {n}")))?;
        if !same_direction(&reference.v_hat, &v) {
            return Err(Error::ReferenceMismatch("reference built for another v̂".into()));
        }
        let anchors = enumerate_blocks(n, &window, &v, opts.max_sites)?;
        let mut shared: Option<BlockReport> = None;
        let mut reports = Vec::with_capacity(anchors.len());
        for x in anchors {
            let block = Region::block(x, n, &v);
            let r = if env.model().is_deterministic() && !touches_overlay(env, &block) {
                if shared.is_none() {
                    shared = Some(classify_block(env, x, n, class, reference, opts)?);
                }
                BlockReport { anchor: x, ..shared.clone().expect("set above") }
            } else {
                classify_block(env, x, n, class, reference, opts)?
            };
            reports.push(r);
        }
        let bad = reports.iter().filter(|r| !r.good).count() as u64;
        levels.push(LevelCensus { scale: n, blocks: reports.len() as u64, bad, reports });
    }
    let theta_holds = levels.iter().all(|l| l.bad as f64 <= threshold);
    Ok(CensusReport { length, levels, threshold, theta_holds })
}
