//! Exact quenched exit quantities on finite regions.
//!
//! Harmonic functions of the killed chain (right-exit probability, exit
//! expectations, cube indicators) are computed by Gauss–Seidel or Jacobi
//! sweeps over the interior sites in lexicographic order. The exit
//! distribution of a single start site is computed on the adjoint side by
//! pushing mass through the chain until all but `tolerance` of it has been
//! absorbed; this never requires one solve per boundary atom.

use crate::environment::KernelField;
use crate::error::{Error, Result};
use crate::hashing::SiteMap;
use crate::lattice::Site;
use crate::region::{Region, Side};
use crate::scalar::{CompensatedSum, Real};
use serde::{Deserialize, Serialize};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    GaussSeidel,
    Jacobi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Pointwise relative residual target of the harmonic sweeps, and the
    /// largest undelivered mass of the exit distribution. Floored at a few
    /// units of roundoff of the scalar type.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub method: Method,
    /// Over-relaxation factor of the Gauss–Seidel sweeps; 1 is plain
    /// Gauss–Seidel. Ignored by Jacobi.
    pub relaxation: f64,
    pub max_sites: usize,
    /// Also compute the start-site exit distribution.
    pub exit_distribution: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 1_000_000,
            method: Method::GaussSeidel,
            relaxation: 1.5,
            max_sites: 10_000_000,
            exit_distribution: true,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::BadParameter(format!(
                "solver tolerance {} must be positive and relaxation {} in (0, 2)",
                self.tolerance, self.relaxation
            )));
        }
        Ok(())
    }

    fn tol<T: Real>(&self) -> T {
        T::of(self.tolerance).max(T::epsilon() * T::of(8.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub interior_sites: usize,
    /// Harmonic sweeps performed.
    pub iterations: usize,
    /// Largest pointwise relative residual after the last sweep.
    pub residual: f64,
    /// Adjoint sweeps performed for the exit distribution.
    pub exit_sweeps: usize,
    /// Start mass not yet absorbed when the exit sweeps stopped.
    pub undelivered_mass: f64,
}

/// The killed chain on a region, discovered lazily from a seed set.
pub(crate) struct Graph<'a, F: ?Sized, T> {
    field: &'a F,
    region: &'a Region,
    width: usize,
    pub sites: Vec<Site>,
    pub side: Vec<Option<Side>>,
    index: SiteMap<Site, u32>,
    row_of: Vec<u32>,
    targets: Vec<u32>,
    probs: Vec<T>,
}

impl<'a, F: KernelField + ?Sized, T: Real> Graph<'a, F, T> {
    pub fn new(field: &'a F, region: &'a Region) -> Self {
        Self {
            field,
            region,
            width: 2 * region.dim(),
            sites: Vec::new(),
            side: Vec::new(),
            index: SiteMap::default(),
            row_of: Vec::new(),
            targets: Vec::new(),
            probs: Vec::new(),
        }
    }

    /// Graph over all interior sites, which receive ids `0..n` in
    /// lexicographic order.
    pub fn dense(field: &'a F, region: &'a Region, max_sites: usize) -> Result<(Self, usize)> {
        let interior = region.interior_sites(max_sites)?;
        let n = interior.len();
        let mut g = Self::new(field, region);
        g.index.reserve(n + n / 4);
        for s in interior {
            g.node(&s);
        }
        for id in 0..n {
            g.row(id as u32);
        }
        Ok((g, n))
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn id(&self, x: &Site) -> Option<u32> {
        self.index.get(&self.region.canonical(x)).copied()
    }

    pub fn node(&mut self, y: &Site) -> u32 {
        let key = self.region.canonical(y);
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.sites.len() as u32;
        let side = if self.region.contains(y) { None } else { Some(self.region.exit_side(y)) };
        self.sites.push(key);
        self.side.push(side);
        self.row_of.push(NONE);
        self.index.insert(key, id);
        id
    }

    /// Row of an interior node: `width` (target, probability) pairs, with
    /// `NONE` targets for zero-probability moves.
    pub fn row(&mut self, id: u32) -> usize {
        let r = self.row_of[id as usize];
        if r != NONE {
            return r as usize;
        }
        debug_assert!(self.side[id as usize].is_none());
        let x = self.sites[id as usize];
        let k = self.field.kernel(&x);
        let r = self.row_of_len();
        for dir in 0..self.width {
            let p = k.p(dir);
            let t = if p > 0.0 { self.node(&x.step(dir)) } else { NONE };
            self.targets.push(t);
            self.probs.push(T::of(p));
        }
        self.row_of[id as usize] = r as u32;
        r
    }

    fn row_of_len(&self) -> usize {
        self.targets.len() / self.width
    }

    #[inline]
    fn entries(&self, row: usize) -> impl Iterator<Item = (u32, T)> + '_ {
        let w = self.width;
        self.targets[row * w..(row + 1) * w]
            .iter()
            .zip(&self.probs[row * w..(row + 1) * w])
            .filter(|(t, _)| **t != NONE)
            .map(|(t, p)| (*t, *p))
    }
}

/// Harmonic fields on the interior sites of a region.
#[derive(Clone, Debug)]
pub struct FieldSolution<T> {
    pub sites: Vec<Site>,
    pub fields: usize,
    /// `values[i * fields + r]` is field `r` at `sites[i]`.
    pub values: Vec<T>,
    pub atoms: Vec<(Site, Side)>,
    pub iterations: usize,
    pub residual: f64,
}

impl<T: Real> FieldSolution<T> {
    pub fn index_of(&self, x: &Site) -> Option<usize> {
        self.sites.binary_search(x).ok()
    }

    pub fn value(&self, i: usize, r: usize) -> T {
        self.values[i * self.fields + r]
    }
}

/// Boundary data: given the boundary atoms in discovery order, return the
/// number of fields and the row-major `atoms × fields` boundary values.
pub type BoundaryData<'b> = dyn Fn(&[(Site, Side)]) -> (usize, Vec<f64>) + 'b;

/// Solves `u = P u` on the interior with `u = g` on the boundary atoms for
/// every field at once.
pub fn harmonic_fields<T: Real, F: KernelField + ?Sized>(
    field: &F,
    region: &Region,
    boundary: &BoundaryData<'_>,
    opts: &SolveOptions,
) -> Result<FieldSolution<T>> {
    region.validate()?;
    opts.validate()?;
    let (g, n) = Graph::<F, T>::dense(field, region, opts.max_sites)?;
    harmonic_on_graph(&g, n, boundary, opts)
}

fn harmonic_on_graph<T: Real, F: KernelField + ?Sized>(
    g: &Graph<'_, F, T>,
    n: usize,
    boundary: &BoundaryData<'_>,
    opts: &SolveOptions,
) -> Result<FieldSolution<T>> {
    let atoms: Vec<(Site, Side)> =
        (n..g.len()).map(|id| (g.sites[id], g.side[id].expect("boundary node"))).collect();
    let (nf, gvals) = boundary(&atoms);
    assert_eq!(gvals.len(), atoms.len() * nf, "boundary data has the wrong shape");
    // interior transitions in CSR form and the boundary constant per field
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols: Vec<u32> = Vec::with_capacity(n * g.width);
    let mut vals: Vec<T> = Vec::with_capacity(n * g.width);
    let mut c = vec![T::zero(); n * nf];
    offsets.push(0u32);
    for i in 0..n {
        let row = g.row_of[i] as usize;
        for (t, p) in g.entries(row) {
            let t = t as usize;
            if t < n {
                cols.push(t as u32);
                vals.push(p);
            } else {
                let a = t - n;
                for r in 0..nf {
                    c[i * nf + r] += p * T::of(gvals[a * nf + r]);
                }
            }
        }
        offsets.push(cols.len() as u32);
    }
    let tol = opts.tol::<T>();
    let omega = T::of(opts.relaxation);
    let tiny = T::min_positive_value();
    let rel = |upd: T, x: T| if upd == T::zero() { T::zero() } else { upd / x.abs().max(tiny) };
    let mut x = vec![T::zero(); n * nf];
    let mut scratch = vec![T::zero(); nf];
    let mut next = if opts.method == Method::Jacobi { vec![T::zero(); n * nf] } else { Vec::new() };
    let residual = |x: &[T], scratch: &mut [T]| -> T {
        let mut worst = T::zero();
        for i in 0..n {
            scratch.copy_from_slice(&c[i * nf..(i + 1) * nf]);
            for k in offsets[i] as usize..offsets[i + 1] as usize {
                let j = cols[k] as usize;
                for r in 0..nf {
                    scratch[r] += vals[k] * x[j * nf + r];
                }
            }
            for r in 0..nf {
                worst = worst.max(rel((scratch[r] - x[i * nf + r]).abs(), scratch[r]));
            }
        }
        worst
    };
    let mut iterations = 0;
    let mut last = T::infinity();
    while iterations < opts.max_iterations {
        iterations += 1;
        let mut worst = T::zero();
        match opts.method {
            Method::GaussSeidel => {
                let forward = iterations % 2 == 1;
                for step in 0..n {
                    let i = if forward { step } else { n - 1 - step };
                    scratch.copy_from_slice(&c[i * nf..(i + 1) * nf]);
                    for k in offsets[i] as usize..offsets[i + 1] as usize {
                        let j = cols[k] as usize;
                        for r in 0..nf {
                            scratch[r] += vals[k] * x[j * nf + r];
                        }
                    }
                    for r in 0..nf {
                        let old = x[i * nf + r];
                        worst = worst.max(rel((scratch[r] - old).abs(), scratch[r]));
                        x[i * nf + r] = old + omega * (scratch[r] - old);
                    }
                }
            }
            Method::Jacobi => {
                for i in 0..n {
                    scratch.copy_from_slice(&c[i * nf..(i + 1) * nf]);
                    for k in offsets[i] as usize..offsets[i + 1] as usize {
                        let j = cols[k] as usize;
                        for r in 0..nf {
                            scratch[r] += vals[k] * x[j * nf + r];
                        }
                    }
                    for r in 0..nf {
                        worst = worst.max(rel((scratch[r] - x[i * nf + r]).abs(), scratch[r]));
                        next[i * nf + r] = scratch[r];
                    }
                }
                std::mem::swap(&mut x, &mut next);
            }
        }
        if worst <= tol {
            last = residual(&x, &mut scratch);
            if last <= tol {
                break;
            }
        } else {
            last = worst;
        }
    }
    if !(last <= tol) {
        return Err(Error::NoConvergence { iterations, residual: last.f64() });
    }
    Ok(FieldSolution {
        sites: g.sites[..n].to_vec(),
        fields: nf,
        values: x,
        atoms,
        iterations,
        residual: last.f64(),
    })
}

const LEFT_CHECK_EVERY: usize = 4;

/// Exit distribution from one start site, by Gauss–Seidel mass pushing.
///
/// Sweeps visit nodes in id order, alternating direction; dense graphs
/// number interior sites lexicographically, sparse ones by discovery.
/// Nodes holding at most `prune` mass are left in place; their total is
/// reported as undelivered.
/// Absorbed `(site, side, mass)` atoms, sweeps used and undelivered mass.
type PushedMass<T> = (Vec<(Site, Side, T)>, usize, f64);

pub(crate) fn push_exit_mass<T: Real, F: KernelField + ?Sized>(
    g: &mut Graph<'_, F, T>,
    start: u32,
    prune: T,
    opts: &SolveOptions,
) -> Result<PushedMass<T>> {
    let tol = opts.tol::<T>();
    let omega = T::of(opts.relaxation);
    let mut mass: Vec<T> = vec![T::zero(); g.len()];
    let mut absorbed: Vec<T> = vec![T::zero(); g.len()];
    mass[start as usize] = T::one();
    let mut sweeps = 0;
    let mut left = T::one();
    let w = g.width;
    while left > tol {
        if sweeps >= opts.max_iterations {
            return Err(Error::NoConvergence { iterations: sweeps, residual: left.f64() });
        }
        sweeps += 1;
        let forward = sweeps % 2 == 1;
        let len = g.len();
        let mut moved = false;
        for step in 0.. {
            let i = if forward {
                if step >= g.len() {
                    break;
                }
                step
            } else {
                if step >= len {
                    break;
                }
                len - 1 - step
            };
            let m = mass[i];
            if m.abs() <= prune || g.side[i].is_some() {
                continue;
            }
            moved = true;
            let q = m * omega;
            mass[i] = m - q;
            let row = g.row(i as u32);
            if g.len() > mass.len() {
                if g.len() > opts.max_sites {
                    return Err(Error::RegionTooLarge { sites: g.len(), limit: opts.max_sites });
                }
                mass.resize(g.len(), T::zero());
                absorbed.resize(g.len(), T::zero());
            }
            for k in 0..w {
                let t = g.targets[row * w + k];
                if t == NONE {
                    continue;
                }
                let t = t as usize;
                let p = g.probs[row * w + k];
                if g.side[t].is_some() {
                    absorbed[t] += q * p;
                } else {
                    mass[t] += q * p;
                }
            }
        }
        // the remaining mass costs a full pass, so it is checked every few sweeps
        if moved && sweeps % LEFT_CHECK_EVERY != 0 {
            continue;
        }
        left = (0..g.len())
            .filter(|&i| g.side[i].is_none())
            .map(|i| mass[i].abs())
            .collect::<CompensatedSum<T>>()
            .value();
        if !moved {
            break;
        }
    }
    // over-relaxed pushes carry signed mass; losing conservation means the
    // cancellations swamped the result
    let total: T = absorbed.iter().chain(mass.iter()).copied().collect::<CompensatedSum<T>>().value();
    if (total - T::one()).abs() > T::of(1e-9).max(tol) {
        return Err(Error::NoConvergence { iterations: sweeps, residual: (total - T::one()).abs().f64() });
    }
    let mut exits: Vec<(Site, Side, T)> = (0..g.len())
        .filter_map(|i| {
            let side = g.side[i]?;
            (absorbed[i] > T::zero()).then(|| (g.sites[i], side, absorbed[i]))
        })
        .collect();
    exits.sort_by_key(|a| a.0);
    Ok((exits, sweeps, left.f64()))
}

/// One boundary atom of an exit distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitAtom<T> {
    pub site: Site,
    pub right: bool,
    pub prob: T,
}

/// Exact quenched exit data of one region and start site.
#[derive(Clone, Debug)]
pub struct ExitSolution<T> {
    pub region: Region,
    pub start: Site,
    /// Interior sites in lexicographic order; empty when only the exit
    /// distribution was computed.
    pub sites: Vec<Site>,
    /// Right-exit probability per interior site.
    pub right: Vec<T>,
    /// Probability of exiting anywhere else, solved separately so that
    /// small values keep their relative accuracy.
    pub wrong: Vec<T>,
    /// Exit distribution of the start site, sorted by site.
    pub exits: Vec<ExitAtom<T>>,
    /// Minimal corner of the right boundary part, when known.
    pub right_corner: Option<Site>,
    pub stats: SolverStats,
}

impl<T: Real> ExitSolution<T> {
    pub fn index_of(&self, x: &Site) -> Option<usize> {
        self.sites.binary_search(&self.region.canonical(x)).ok()
    }

    /// Right-exit probability from `x`.
    pub fn h(&self, x: &Site) -> Option<T> {
        self.index_of(x).map(|i| self.right[i])
    }

    pub fn h_start(&self) -> T {
        self.h(&self.start).expect("start is interior")
    }

    pub fn wrong_start(&self) -> T {
        self.index_of(&self.start).map(|i| self.wrong[i]).expect("start is interior")
    }

    /// Odds of a wrong exit from the start.
    pub fn rho(&self) -> Result<f64> {
        let h = self.h_start().f64();
        if h <= 0.0 {
            return Err(Error::DegenerateRho);
        }
        Ok(self.wrong_start().f64() / h)
    }

    pub fn exit_mass(&self) -> f64 {
        self.exits.iter().map(|a| a.prob).collect::<CompensatedSum<T>>().value().f64()
    }

    pub fn right_exit_mass(&self) -> f64 {
        self.exits
            .iter()
            .filter(|a| a.right)
            .map(|a| a.prob)
            .collect::<CompensatedSum<T>>()
            .value()
            .f64()
    }
}

pub type ExitSolution64 = ExitSolution<f64>;
pub type ExitSolution32 = ExitSolution<f32>;

fn right_wrong(atoms: &[(Site, Side)]) -> (usize, Vec<f64>) {
    let mut v = Vec::with_capacity(2 * atoms.len());
    for (_, side) in atoms {
        let r = (*side == Side::Right) as u8 as f64;
        v.push(r);
        v.push(1.0 - r);
    }
    (2, v)
}

/// Right-exit and wrong-exit probabilities at every interior site and,
/// if requested, the exit distribution of `start`.
pub fn solve_exit<T: Real, F: KernelField + ?Sized>(
    field: &F,
    region: &Region,
    start: Site,
    opts: &SolveOptions,
) -> Result<ExitSolution<T>> {
    region.validate()?;
    if !region.contains(&start) {
        return Err(Error::StartOutside);
    }
    let (mut g, n) = Graph::<F, T>::dense(field, region, opts.max_sites)?;
    let fs = harmonic_on_graph(&g, n, &right_wrong, opts)?;
    let right_corner = region.block_right_corner().or_else(|| min_corner(&fs.atoms));
    let mut stats = SolverStats {
        interior_sites: n,
        iterations: fs.iterations,
        residual: fs.residual,
        ..Default::default()
    };
    let mut exits = Vec::new();
    if opts.exit_distribution {
        let s = g.id(&start).expect("start is interior");
        let (e, sweeps, left) = push_exit_mass(&mut g, s, T::zero(), opts)?;
        stats.exit_sweeps = sweeps;
        stats.undelivered_mass = left;
        exits = to_atoms(e);
    }
    // over-relaxation may overshoot [0, 1] by up to the tolerance
    let unit = |v: T| v.max(T::zero()).min(T::one());
    let (right, wrong) = (0..n).map(|i| (unit(fs.value(i, 0)), unit(fs.value(i, 1)))).unzip();
    Ok(ExitSolution {
        region: region.clone(),
        start: region.canonical(&start),
        sites: fs.sites,
        right,
        wrong,
        exits,
        right_corner,
        stats,
    })
}

fn to_atoms<T: Real>(e: Vec<(Site, Side, T)>) -> Vec<ExitAtom<T>> {
    e.into_iter().map(|(site, side, prob)| ExitAtom { site, right: side == Side::Right, prob }).collect()
}

fn min_corner(atoms: &[(Site, Side)]) -> Option<Site> {
    let mut it = atoms.iter().filter(|a| a.1 == Side::Right).map(|a| a.0);
    let first = it.next()?;
    Some(it.fold(first, |mut c, s| {
        for i in 0..c.dim() {
            c.set(i, c.get(i).min(s.get(i)));
        }
        c
    }))
}

/// Mass below which the sparse exit solve stops tracking a site.
pub const SPARSE_PRUNE: f64 = 1e-18;

/// Exit distribution of `start` without enumerating the region: sites are
/// discovered as mass reaches them, which keeps very wide regions (large
/// blocks) tractable. Sites holding at most [`SPARSE_PRUNE`] are frozen and
/// their mass is reported as undelivered.
pub fn solve_exit_sparse<T: Real, F: KernelField + ?Sized>(
    field: &F,
    region: &Region,
    start: Site,
    opts: &SolveOptions,
) -> Result<ExitSolution<T>> {
    region.validate()?;
    if !region.contains(&start) {
        return Err(Error::StartOutside);
    }
    let mut g = Graph::<F, T>::new(field, region);
    let s = g.node(&start);
    let (e, sweeps, left) = push_exit_mass(&mut g, s, T::of(SPARSE_PRUNE), opts)?;
    let interior = g.side.iter().filter(|s| s.is_none()).count();
    Ok(ExitSolution {
        region: region.clone(),
        start: region.canonical(&start),
        sites: Vec::new(),
        right: Vec::new(),
        wrong: Vec::new(),
        exits: to_atoms(e),
        right_corner: region.block_right_corner(),
        stats: SolverStats {
            interior_sites: interior,
            exit_sweeps: sweeps,
            undelivered_mass: left,
            ..Default::default()
        },
    })
}

/// `ρ = P(wrong exit)/P(right exit)` from the region's standard start.
pub fn rho_of_box<F: KernelField + ?Sized>(field: &F, region: &Region, opts: &SolveOptions) -> Result<f64> {
    let o = SolveOptions { exit_distribution: false, ..opts.clone() };
    solve_exit::<f64, F>(field, region, region.default_start(), &o)?.rho()
}

/// One cube of the right-face tiling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeMass {
    /// Tile index along each non-forward axis.
    pub index: Vec<i64>,
    pub corner: Site,
    pub prob: f64,
}

/// Exit statistics conditioned on leaving through the right boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionedExit {
    pub right_mass: f64,
    pub expectation: Vec<f64>,
    /// `E‖Z − EZ‖₁²` under the conditioned law.
    pub variance: f64,
    pub cube_side: i64,
    /// Cubes carrying positive conditioned mass, in index order.
    pub cubes: Vec<CubeMass>,
}

/// Side `⌈L^ϑ⌉` of the right-face cubes of a region.
pub fn cube_side(region: &Region, theta: f64) -> i64 {
    (region.scale().powf(theta) - 1e-9).ceil().max(1.0) as i64
}

/// Tile index of a right-boundary site.
pub fn cube_index(site: &Site, corner: &Site, axis: usize, side: i64) -> Vec<i64> {
    (0..site.dim())
        .filter(|&j| j != axis)
        .map(|j| (site.get(j) - corner.get(j)).div_euclid(side))
        .collect()
}

/// Conditioned exit expectation, ℓ1-squared variance and cube masses.
pub fn conditional_exit_stats<T: Real>(sol: &ExitSolution<T>, theta: f64) -> Result<ConditionedExit> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::BadParameter(format!("theta {theta} outside (0, 1]")));
    }
    let right: Vec<(Site, f64)> =
        sol.exits.iter().filter(|a| a.right).map(|a| (a.site, a.prob.f64())).collect();
    let mass: f64 = right.iter().map(|a| a.1).collect::<CompensatedSum<f64>>().value();
    if !(mass > 0.0) {
        return Err(Error::NoRightExit);
    }
    let d = sol.start.dim();
    let expectation: Vec<f64> = (0..d)
        .map(|j| {
            right.iter().map(|(s, p)| p * s.get(j) as f64).collect::<CompensatedSum<f64>>().value()
                / mass
        })
        .collect();
    let variance = right
        .iter()
        .map(|(s, p)| {
            let dev: f64 = (0..d).map(|j| (s.get(j) as f64 - expectation[j]).abs()).sum();
            p * dev * dev
        })
        .collect::<CompensatedSum<f64>>()
        .value()
        / mass;
    let axis = sol.region.forward_axis();
    let side = cube_side(&sol.region, theta);
    let corner = sol.right_corner.or_else(|| {
        let pts: Vec<(Site, Side)> = right.iter().map(|a| (a.0, Side::Right)).collect();
        min_corner(&pts)
    });
    let corner = corner.expect("right mass implies right atoms");
    let mut tiles: std::collections::BTreeMap<Vec<i64>, CompensatedSum<f64>> = Default::default();
    for (s, p) in &right {
        tiles.entry(cube_index(s, &corner, axis, side)).or_default().add(*p);
    }
    let cubes = tiles
        .into_iter()
        .map(|(index, acc)| {
            let mut c = corner;
            let mut k = 0;
            for j in 0..d {
                if j != axis {
                    c.set(j, corner.get(j) + index[k] * side);
                    k += 1;
                }
            }
            CubeMass { index, corner: c, prob: acc.value() / mass }
        })
        .collect();
    Ok(ConditionedExit { right_mass: mass, expectation, variance, cube_side: side, cubes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{build_environment, EnvironmentModel};
    use crate::region::Transversal;

    fn biased() -> crate::environment::Environment {
        build_environment(&EnvironmentModel::deterministic(&[0.4, 0.2, 0.2, 0.2], 0.2), 0).unwrap()
    }

    #[test]
    fn single_column_slab() {
        // interior is the single column x_1 = 0
        let r = Region::axis_slab(2, 0, 1.0, 1.0, Transversal::Periodic { width: 3 });
        let sol = solve_exit::<f64, _>(&biased(), &r, Site::origin(2), &SolveOptions::default()).unwrap();
        for h in &sol.right {
            assert!((h - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ruin_formula() {
        let r = Region::axis_slab(2, 0, 8.0, 8.0, Transversal::Periodic { width: 4 });
        let sol = solve_exit::<f64, _>(&biased(), &r, Site::origin(2), &SolveOptions::default()).unwrap();
        let want = (1.0 - 0.5f64.powi(8)) / (1.0 - 0.5f64.powi(16));
        assert!((sol.h_start() - want).abs() < 1e-10);
        assert!((sol.exit_mass() - 1.0).abs() < 1e-9);
        assert!((sol.right_exit_mass() - want).abs() < 1e-9);
    }

    #[test]
    fn jacobi_agrees_with_gauss_seidel() {
        let r = Region::axis_slab(2, 0, 5.0, 4.0, Transversal::Absorbing { width: 3 });
        let env = build_environment(
            &EnvironmentModel {
                d: 2,
                kappa: 0.05,
                variant: crate::environment::Variant::DirichletSites { concentration: vec![1.0; 4] },
                test_mode: false,
            },
            3,
        )
        .unwrap();
        let gs = solve_exit::<f64, _>(&env, &r, Site::origin(2), &SolveOptions::default()).unwrap();
        let jo = SolveOptions { method: Method::Jacobi, ..Default::default() };
        let ja = solve_exit::<f64, _>(&env, &r, Site::origin(2), &jo).unwrap();
        assert!((gs.h_start() - ja.h_start()).abs() < 1e-11);
        assert!((gs.h_start() + gs.wrong_start() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn single_precision_solve() {
        let r = Region::axis_slab(2, 0, 8.0, 8.0, Transversal::Periodic { width: 4 });
        let sol = solve_exit::<f32, _>(&biased(), &r, Site::origin(2), &SolveOptions::default()).unwrap();
        let want = (1.0 - 0.5f64.powi(8)) / (1.0 - 0.5f64.powi(16));
        assert!((sol.h_start() as f64 - want).abs() < 1e-5);
    }

    #[test]
    fn sparse_matches_dense() {
        let r = Region::directed_box(&[1.0, 0.0], 10.0, 0.5);
        let env = biased();
        let dense = solve_exit::<f64, _>(&env, &r, Site::origin(2), &SolveOptions::default()).unwrap();
        let sparse = solve_exit_sparse::<f64, _>(&env, &r, Site::origin(2), &SolveOptions::default()).unwrap();
        assert_eq!(dense.exits.len(), sparse.exits.len());
        for (a, b) in dense.exits.iter().zip(&sparse.exits) {
            assert_eq!(a.site, b.site);
            assert!((a.prob - b.prob).abs() < 1e-12);
        }
    }

    #[test]
    fn straight_walk_conditioned_stats() {
        let env = build_environment(&EnvironmentModel::test_kernel(&[1.0, 0.0, 0.0, 0.0]), 0).unwrap();
        let r = Region::directed_box(&[1.0, 0.0], 6.0, 1.0);
        let sol = solve_exit::<f64, _>(&env, &r, Site::new(&[0, 2]), &SolveOptions::default()).unwrap();
        let st = conditional_exit_stats(&sol, 0.5).unwrap();
        assert_eq!(st.expectation, vec![7.0, 2.0]);
        assert_eq!(st.variance, 0.0);
        assert_eq!(sol.rho().unwrap(), 0.0);
    }

    #[test]
    fn left_only_walk_has_no_right_exit() {
        let env = build_environment(&EnvironmentModel::test_kernel(&[0.0, 1.0, 0.0, 0.0]), 0).unwrap();
        let r = Region::directed_box(&[1.0, 0.0], 6.0, 1.0);
        let sol = solve_exit::<f64, _>(&env, &r, Site::new(&[3, 0]), &SolveOptions::default()).unwrap();
        assert!(matches!(conditional_exit_stats(&sol, 0.5), Err(Error::NoRightExit)));
        assert!(matches!(sol.rho(), Err(Error::DegenerateRho)));
    }
}
