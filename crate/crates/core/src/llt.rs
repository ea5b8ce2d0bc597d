//! Exact lattice convolutions and the local-limit discrepancy report, plus
//! the smoothness of the annealed exit kernel of a block.

use crate::environment::Ensemble;
use crate::error::{Error, Result};
use crate::exit_stats::annealed_exit_law;
use crate::lattice::{normalized, Direction, Site};
use crate::region::Region;
use crate::scalar::{CompensatedSum, Real};
use crate::solver::SolveOptions;
use crate::stats::least_squares;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Default cap on the number of support points of a convolved law.
pub const DEFAULT_SUPPORT_CAP: usize = 5_000_000;

/// A probability law with finite support on `ℤ^d`, atoms sorted by site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeLaw<T> {
    dim: usize,
    atoms: Vec<(Site, T)>,
}

pub type LatticeLaw64 = LatticeLaw<f64>;
pub type LatticeLaw32 = LatticeLaw<f32>;

fn mass_tolerance<T: Real>(atoms: usize) -> f64 {
    1e-12f64.max(8.0 * T::epsilon().f64() * atoms as f64)
}

impl<T: Real> LatticeLaw<T> {
    /// Merges duplicate sites, drops zero atoms and checks normalization.
    pub fn new(atoms: impl IntoIterator<Item = (Site, T)>) -> Result<Self> {
        let mut acc: BTreeMap<Site, CompensatedSum<T>> = BTreeMap::new();
        for (s, p) in atoms {
            if !(p >= T::zero()) || !p.is_finite() {
                return Err(Error::BadParameter(format!("invalid probability {p}")));
            }
            acc.entry(s).or_default().add(p);
        }
        let atoms: Vec<(Site, T)> =
            acc.into_iter().map(|(s, p)| (s, p.value())).filter(|(_, p)| *p > T::zero()).collect();
        let dim = atoms.first().map(|a| a.0.dim()).ok_or(Error::BadParameter("empty law".into()))?;
        if atoms.iter().any(|a| a.0.dim() != dim) {
            return Err(Error::BadParameter("atoms of mixed dimension".into()));
        }
        let law = Self { dim, atoms };
        let tol = mass_tolerance::<T>(law.atoms.len());
        if (law.mass() - 1.0).abs() > tol {
            return Err(Error::BadParameter(format!("total mass {} is not 1", law.mass())));
        }
        Ok(law)
    }

    /// Nearest-neighbour steps with probability `1/(2d)` each.
    pub fn simple_random_walk(d: usize) -> Self {
        let p = T::one() / T::of((2 * d) as f64);
        Self::new((0..2 * d).map(|dir| (Site::origin(d).step(dir), p))).expect("valid law")
    }

    /// One step of a kernel given in direction order `+e_1, −e_1, +e_2, …`.
    pub fn from_kernel(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() || !probs.len().is_multiple_of(2) {
            return Err(Error::BadParameter("kernel needs 2d entries".into()));
        }
        let d = probs.len() / 2;
        Self::new(probs.iter().enumerate().map(|(dir, &p)| (Site::origin(d).step(dir), T::of(p))))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[(Site, T)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn prob(&self, x: &Site) -> T {
        self.atoms.binary_search_by(|a| a.0.cmp(x)).map(|i| self.atoms[i].1).unwrap_or(T::zero())
    }

    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).collect::<CompensatedSum<T>>().value().f64()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| {
                self.atoms.iter().map(|(s, p)| p.f64() * s.get(j) as f64).collect::<CompensatedSum<f64>>().value()
            })
            .collect()
    }

    /// All atoms on one class of `x ↦ Σ x_j mod 2`.
    pub fn is_bipartite(&self) -> bool {
        let parity = |s: &Site| s.coords().iter().sum::<i64>().rem_euclid(2);
        let first = parity(&self.atoms[0].0);
        self.atoms.iter().all(|a| parity(&a.0) == first)
    }
}

/// Exact law of the sum of independent draws from `a` and `b`. Each output
/// atom is a compensated sum over `b` in site order.
pub fn convolve<T: Real>(a: &LatticeLaw<T>, b: &LatticeLaw<T>, cap: usize) -> Result<LatticeLaw<T>> {
    if a.dim != b.dim {
        return Err(Error::BadParameter("dimension mismatch".into()));
    }
    let mut support = BTreeSet::new();
    for (x, _) in &a.atoms {
        for (y, _) in &b.atoms {
            support.insert(x.add(y));
            if support.len() > cap {
                return Err(Error::SupportTooLarge { size: support.len(), cap });
            }
        }
    }
    let index: HashMap<Site, T> = a.atoms.iter().copied().collect();
    let support: Vec<Site> = support.into_iter().collect();
    let atoms: Vec<(Site, T)> = support
        .into_par_iter()
        .map(|z| {
            let mut acc = CompensatedSum::new();
            for (y, q) in &b.atoms {
                if let Some(p) = index.get(&z.sub(y)) {
                    acc.add(*p * *q);
                }
            }
            (z, acc.value())
        })
        .collect();
    Ok(LatticeLaw { dim: a.dim, atoms: atoms.into_iter().filter(|a| a.1 > T::zero()).collect() })
}

/// Exact law of `Y_1 + … + Y_n`.
pub fn convolve_power<T: Real>(law: &LatticeLaw<T>, n: u64, cap: usize) -> Result<LatticeLaw<T>> {
    if n == 0 {
        return Err(Error::BadParameter("n must be at least 1".into()));
    }
    let mut out = law.clone();
    for _ in 1..n {
        out = convolve(&out, law, cap)?;
    }
    let tol = mass_tolerance::<T>(out.len()).max(1e-12 * n as f64);
    if (out.mass() - 1.0).abs() > tol {
        return Err(Error::NoConvergence { iterations: n as usize, residual: (out.mass() - 1.0).abs() });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LltRow {
    pub n: u64,
    pub sup: f64,
    pub first_difference: f64,
    pub second_difference: f64,
    /// `None` in dimension one.
    pub mixed_difference: Option<f64>,
}

/// Decay exponents: `stat ≈ C·n^{−exponent}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayExponents {
    pub sup: f64,
    pub first_difference: f64,
    pub second_difference: f64,
    pub mixed_difference: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LltReport {
    pub dim: usize,
    /// The law lives on one parity class; differences then use steps of
    /// length two so both points share the class.
    pub parity_restricted: bool,
    pub step: i64,
    pub rows: Vec<LltRow>,
    pub exponents: DecayExponents,
}

fn shifted(x: &Site, axis: usize, by: i64) -> Site {
    let mut y = *x;
    y.set(axis, x.get(axis) + by);
    y
}

fn row_of<T: Real>(law: &LatticeLaw<T>, n: u64, h: i64) -> LltRow {
    let d = law.dim;
    let p = |x: &Site| law.prob(x).f64();
    let sup = law.atoms.iter().map(|a| a.1.f64()).fold(0.0, f64::max);
    // every nonzero difference has a support point among its arguments, so
    // scanning shifts of the support covers the whole lattice
    let mut first = 0.0f64;
    let mut second = 0.0f64;
    let mut mixed: Option<f64> = (d >= 2).then_some(0.0);
    for (x, _) in &law.atoms {
        for j in 0..d {
            for base in [*x, shifted(x, j, -h)] {
                first = first.max((p(&shifted(&base, j, h)) - p(&base)).abs());
            }
            for base in [*x, shifted(x, j, h), shifted(x, j, -h)] {
                let v = p(&shifted(&base, j, h)) - 2.0 * p(&base) + p(&shifted(&base, j, -h));
                second = second.max(v.abs());
            }
            if let Some(m) = mixed.as_mut() {
                for i in 0..d {
                    if i == j {
                        continue;
                    }
                    // steps u, w with u − w and u + w inside the parity class
                    let (u, w): (Site, Site) = if h == 1 {
                        (Site::unit(d, i), Site::unit(d, j))
                    } else {
                        let (ei, ej) = (Site::unit(d, i), Site::unit(d, j));
                        (ei.add(&ej), ei.sub(&ej))
                    };
                    for base in [*x, x.sub(&u), x.sub(&w), x.sub(&u).sub(&w)] {
                        let v = p(&base.add(&u).add(&w)) - p(&base.add(&u)) - p(&base.add(&w)) + p(&base);
                        *m = m.max(v.abs());
                    }
                }
            }
        }
    }
    LltRow { n, sup, first_difference: first, second_difference: second, mixed_difference: mixed }
}

fn exponent(ns: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    least_squares(&lx, &ly).map(|f| -f.slope).unwrap_or(f64::NAN)
}

/// Sup, first, second and mixed differences of the `n`-step laws over
/// `n_grid`, with log-log decay exponents.
pub fn llt_discrepancy_report<T: Real>(law: &LatticeLaw<T>, n_grid: &[u64], cap: usize) -> Result<LltReport> {
    if law.len() < 2 {
        return Err(Error::DegenerateLaw);
    }
    if n_grid.len() < 3 || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::BadParameter("n grid must be increasing with at least 3 positive points".into()));
    }
    let parity = law.is_bipartite();
    if parity && n_grid.iter().any(|n| n % 2 != n_grid[0] % 2) {
        return Err(Error::BadParameter("a bipartite law needs an n grid of one parity".into()));
    }
    let h = if parity { 2 } else { 1 };
    let mut rows = Vec::with_capacity(n_grid.len());
    let mut cur = law.clone();
    let mut at = 1;
    for &n in n_grid {
        while at < n {
            cur = convolve(&cur, law, cap)?;
            at += 1;
        }
        rows.push(row_of(&cur, n, h));
    }
    let ns: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
    let col = |f: &dyn Fn(&LltRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let exponents = DecayExponents {
        sup: exponent(&ns, &col(&|r| r.sup)),
        first_difference: exponent(&ns, &col(&|r| r.first_difference)),
        second_difference: exponent(&ns, &col(&|r| r.second_difference)),
        mixed_difference: (law.dim >= 2).then(|| exponent(&ns, &col(&|r| r.mixed_difference.unwrap_or(f64::NAN)))),
    };
    Ok(LltReport { dim: law.dim, parity_restricted: parity, step: h, rows, exponents })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelRow {
    pub length: u64,
    pub right_mass: f64,
    pub sup: f64,
    /// `sup_y |ν(y) − ν(y ± e_j)|` over transversal `j`.
    pub sup_difference: f64,
    /// `L^{d−1}·sup`.
    pub sup_scaled: f64,
    /// `L^d·sup_difference`.
    pub difference_scaled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub replicas: u64,
    pub rows: Vec<KernelRow>,
}

/// Annealed exit kernel `ν` of `𝒫(0,L)` on its right face, started at the
/// anchor, for each `L` of the grid.
pub fn exit_kernel_smoothness(
    ensemble: &Ensemble,
    lengths: &[u64],
    m: u64,
    v_hat: &[f64],
    opts: &SolveOptions,
) -> Result<KernelReport> {
    let v = normalized(v_hat)
        .filter(|v| v[0] > 0.0 && v.len() == ensemble.dim())
        .ok_or_else(|| Error::BadParameter("v̂ must have a positive e_1 component".into()))?;
    let d = ensemble.dim();
    let mut rows = Vec::with_capacity(lengths.len());
    for &l in lengths {
        if l < 2 {
            return Err(Error::BadParameter("L must be at least 2".into()));
        }
        let block = Region::block(Site::origin(d), l, &v);
        let law = annealed_exit_law(ensemble, &block, Site::origin(d), m, opts)?;
        let nu: BTreeMap<Site, f64> = law.atoms.iter().filter(|a| a.right).map(|a| (a.site, a.prob)).collect();
        let on_face = |y: &Site| block.contains(&y.step(Direction::minus(0)));
        let sup = nu.values().copied().fold(0.0, f64::max);
        let mut diff = 0.0f64;
        for (y, p) in &nu {
            for j in 1..d {
                for s in [-1, 1] {
                    let z = shifted(y, j, s);
                    if on_face(&z) {
                        diff = diff.max((p - nu.get(&z).copied().unwrap_or(0.0)).abs());
                    }
                }
            }
        }
        let lf = l as f64;
        rows.push(KernelRow {
            length: l,
            right_mass: law.right_mass(),
            sup,
            sup_difference: diff,
            sup_scaled: lf.powi(d as i32 - 1) * sup,
            difference_scaled: lf.powi(d as i32) * diff,
        });
    }
    Ok(KernelReport { replicas: m, rows })
}
