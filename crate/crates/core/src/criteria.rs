//! Empirical ballisticity diagnostics: the `(T)_γ` decay of backward exits,
//! moments of the first regeneration radius, the effective criterion and
//! the split of `Eρ^a` into exit-probability bands.

use crate::environment::Ensemble;
use crate::error::{Error, Result};
use crate::hashing::{hash_words, tags};
use crate::lattice::{normalized, Site};
use crate::regeneration::decompose_positions;
use crate::region::{Region, Transversal};
use crate::replicas::{map_environments, map_replicas};
use crate::solver::{solve_exit, SolveOptions};
use crate::stats::{bootstrap_ci, least_squares, mean, mean_estimate, median, MeanEstimate, Proportion};
use crate::walk::{directional_report, simulate_with, walk_key, Unstopped, DIRECTIONAL_SAFETY_CAP};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ConsistentWithTGamma,
    Inconsistent,
    Inconclusive,
}

/// One length of a `(T)_γ` scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TGammaCell {
    pub length: f64,
    pub backward: Proportion,
    pub censored: u64,
    /// `L^{−γ} log p̂`; for a zero count this is the rule-of-three bound.
    pub normalized: f64,
    /// `None` stands for `−∞` (the interval reaches `p = 0`).
    pub normalized_lo: Option<f64>,
    pub normalized_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TGammaReport {
    pub gamma: f64,
    pub direction: Vec<f64>,
    pub b: f64,
    pub replicas: u64,
    pub cells: Vec<TGammaCell>,
    /// Least-squares slope of the normalized values against `L`.
    pub trend_slope: Option<f64>,
    pub verdict: Verdict,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::BadParameter(format!("gamma {gamma} outside (0, 1)")));
    }
    Ok(())
}

/// Scans `P_0(T_L^l > T_{bL}^{−l})` over `lengths`, each with its own
/// replicas, and grades the decay.
///
/// The verdict is `consistent` when every normalized interval lies below 0
/// and no normalized value rises significantly (intervals of neighbours
/// overlap or fall). It is `inconsistent` when some interval reaches 0 or
/// when the backward probability at the largest length is not
/// significantly below the one at the smallest; otherwise `inconclusive`.
pub fn t_gamma_estimate(
    ensemble: &Ensemble,
    l: &[f64],
    b: f64,
    gamma: f64,
    lengths: &[f64],
    replicas: u64,
) -> Result<TGammaReport> {
    check_gamma(gamma)?;
    if lengths.is_empty() || lengths.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::BadParameter("length grid must be nonempty and increasing".into()));
    }
    let mut cells = Vec::with_capacity(lengths.len());
    let mut direction = Vec::new();
    for &len in lengths {
        let ens = ensemble.clone().with_tag(hash_words(&[ensemble.tag, len.to_bits()]));
        let rep = directional_report(&ens, l, b, len, replicas, DIRECTIONAL_SAFETY_CAP)?;
        direction = rep.direction.clone();
        let scale = len.powf(-gamma);
        let p = rep.backward;
        let point = if p.successes == 0 { p.hi } else { p.estimate };
        cells.push(TGammaCell {
            length: len,
            backward: p,
            censored: rep.censored,
            normalized: scale * point.ln(),
            normalized_lo: (p.lo > 0.0).then(|| scale * p.lo.ln()),
            normalized_hi: scale * p.hi.ln(),
        });
    }
    let xs: Vec<f64> = cells.iter().map(|c| c.length).collect();
    let ys: Vec<f64> = cells.iter().map(|c| c.normalized).collect();
    let trend_slope = least_squares(&xs, &ys).map(|f| f.slope);
    let verdict = grade(&cells);
    Ok(TGammaReport { gamma, direction, b, replicas, cells, trend_slope, verdict })
}

fn grade(cells: &[TGammaCell]) -> Verdict {
    let below = cells.iter().all(|c| c.normalized_hi < 0.0);
    let no_rise = cells
        .windows(2)
        .all(|w| w[1].normalized_lo.is_none_or(|lo| lo <= w[0].normalized_hi));
    if below && no_rise {
        return Verdict::ConsistentWithTGamma;
    }
    let (first, last) = (&cells[0].backward, &cells[cells.len() - 1].backward);
    if !below || first.lo <= last.hi {
        return Verdict::Inconsistent;
    }
    Verdict::Inconclusive
}

/// Settings of [`regeneration_tail`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailMomentParams {
    pub gamma: f64,
    pub c: f64,
    pub replicas: u64,
    pub horizon: u64,
    pub confirm_horizon: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailMomentReport {
    pub gamma: f64,
    pub c: f64,
    pub replicas: u64,
    pub uncensored: u64,
    pub censored: u64,
    /// Mean of `exp(c·X*^γ)` over the replicas with a confirmed first
    /// regeneration.
    pub statistic: f64,
    /// `(radius, count)` pairs in increasing radius.
    pub histogram: Vec<(u64, u64)>,
}

/// Sample moment `E_0 exp{c (X^{*(1)})^γ}` of the first regeneration radius.
pub fn regeneration_tail(ensemble: &Ensemble, p: &TailMomentParams) -> Result<TailMomentReport> {
    check_gamma(p.gamma)?;
    if !(p.c > 0.0) {
        return Err(Error::BadParameter(format!("c = {} must be positive", p.c)));
    }
    let d = ensemble.dim();
    let radii = map_replicas(ensemble, p.replicas, |rep| {
        let traj = simulate_with(
            &rep.env,
            walk_key(rep.env.seed(), rep.index),
            Site::origin(d),
            &Unstopped,
            p.horizon,
            rep.index,
        )?;
        Ok(decompose_positions(&traj.positions(), p.confirm_horizon).radii.first().copied())
    })?;
    let seen: Vec<u64> = radii.iter().flatten().copied().collect();
    if seen.is_empty() {
        return Err(Error::InsufficientData("no replica confirmed a first regeneration".into()));
    }
    let mut histogram: BTreeMap<u64, u64> = BTreeMap::new();
    for &r in &seen {
        *histogram.entry(r).or_default() += 1;
    }
    let terms: Vec<f64> = seen.iter().map(|&r| (p.c * (r as f64).powf(p.gamma)).exp()).collect();
    Ok(TailMomentReport {
        gamma: p.gamma,
        c: p.c,
        replicas: p.replicas,
        uncensored: seen.len() as u64,
        censored: p.replicas - seen.len() as u64,
        statistic: mean(&terms),
        histogram: histogram.into_iter().collect(),
    })
}

/// Constants of the effective criterion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionConstants {
    pub c1: f64,
    pub c2: f64,
}

impl Default for CriterionConstants {
    fn default() -> Self {
        Self { c1: 1.0, c2: 4.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecGeometry {
    /// The rotated box `𝓑(R, L−2, L+2, L̃)`.
    #[default]
    BoxSpec,
    /// The slab `−(L−2) < x·l < L+2` with periodic transversal width
    /// `2⌈L̃⌉`; only for axis directions.
    PeriodicSlab,
}

/// A box specification `𝓑(R, L−2, L+2, L̃)` with `R(e_1) = l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionSpec {
    pub direction: Vec<f64>,
    pub length: f64,
    pub width: f64,
    #[serde(default)]
    pub geometry: SpecGeometry,
}

impl CriterionSpec {
    pub fn new(direction: &[f64], length: f64, width: f64) -> Self {
        Self { direction: direction.to_vec(), length, width, geometry: SpecGeometry::BoxSpec }
    }

    pub fn validate(&self, consts: &CriterionConstants) -> Result<()> {
        let d = self.direction.len() as f64;
        let bad = |m: String| Err(Error::SpecInvalid(m));
        if normalized(&self.direction).is_none() {
            return bad("direction must be nonzero".into());
        }
        if !(self.length >= consts.c2) {
            return bad(format!("L = {} is below c2 = {}", self.length, consts.c2));
        }
        if !(self.width >= 3.0 * d.sqrt() && self.width < self.length.powi(3)) {
            return bad(format!("width {} outside [3√d, L³)", self.width));
        }
        if self.geometry == SpecGeometry::PeriodicSlab
            && self.direction.iter().filter(|&&c| c != 0.0).count() != 1
        {
            return bad("periodic slabs need an axis direction".into());
        }
        Ok(())
    }

    pub fn region(&self) -> Region {
        let (back, front) = (self.length - 2.0, self.length + 2.0);
        match self.geometry {
            SpecGeometry::BoxSpec => Region::box_spec(&self.direction, back, front, self.width),
            SpecGeometry::PeriodicSlab => {
                let width = 2 * self.width.ceil() as i64;
                Region::slab(&self.direction, back, front, Transversal::Periodic { width })
            }
        }
    }
}

/// `P_{0,ω}(right exit)` and `ρ` of one replica.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoSample {
    pub h: f64,
    pub rho: f64,
}

/// Exact `(h, ρ)` from the origin for replicas `0..m`.
pub fn rho_samples(ensemble: &Ensemble, region: &Region, m: u64, opts: &SolveOptions) -> Result<Vec<RhoSample>> {
    region.validate()?;
    let o = SolveOptions { exit_distribution: false, ..opts.clone() };
    let start = Site::origin(ensemble.dim());
    map_environments(ensemble, m, |rep| {
        let sol = solve_exit::<f64, _>(&rep.env, region, start, &o)?;
        Ok(RhoSample { h: sol.h_start(), rho: sol.rho()? })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub spec: CriterionSpec,
    pub a: f64,
    pub replicas: u64,
    /// Empirical `Eρ^a` with its normal interval.
    pub mean_rho_a: MeanEstimate,
    pub median_rho_a: f64,
    pub bootstrap_lo: f64,
    pub bootstrap_hi: f64,
    /// `max/mean > 100` over the sample.
    pub heavy_tailed: bool,
    pub constants: CriterionConstants,
    pub kappa: f64,
    /// Everything but `Eρ^a`.
    pub prefactor: f64,
    pub value: f64,
    pub half_width: f64,
    pub pass: bool,
}

/// Number of bootstrap resamples in every criterion report.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// `c1 (log 1/κ)^{3(d−1)} L̃^{d−1} L^{3(d−1)+1}`.
pub fn criterion_prefactor(d: usize, kappa: f64, length: f64, width: f64, c1: f64) -> f64 {
    let e = (d - 1) as i32;
    c1 * (1.0 / kappa).ln().powi(3 * e) * width.powi(e) * length.powi(3 * e + 1)
}

fn ensemble_kappa(ensemble: &Ensemble) -> f64 {
    let k = ensemble.model.kappa;
    match &ensemble.traps {
        Some(t) if t.weight > 0.0 => k.min(t.overlay.floor),
        _ => k,
    }
}

/// Builds a report from per-replica `ρ` values.
pub fn criterion_from_rhos(
    spec: &CriterionSpec,
    kappa: f64,
    a: f64,
    rhos: &[f64],
    consts: &CriterionConstants,
    seed: u64,
) -> Result<CriterionReport> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::BadParameter(format!("a = {a} outside [0, 1]")));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::BadParameter(format!("criterion needs 0 < κ < 1, got {kappa}")));
    }
    spec.validate(consts)?;
    let xs: Vec<f64> = rhos.iter().map(|r| r.powf(a)).collect();
    let est = mean_estimate(&xs).ok_or_else(|| Error::InsufficientData("no replicas".into()))?;
    let max = xs.iter().copied().fold(0.0, f64::max);
    let heavy_tailed = est.mean > 0.0 && max / est.mean > 100.0;
    if heavy_tailed {
        log::warn!(
            "heavy-tailed ρ^a sample at L = {}, a = {a}: max/mean = {:.3e}",
            spec.length,
            max / est.mean
        );
    }
    let bseed = hash_words(&[tags::BOOTSTRAP, seed, spec.length.to_bits(), a.to_bits()]);
    let (blo, bhi) = bootstrap_ci(&xs, BOOTSTRAP_RESAMPLES, bseed, 0.95, mean);
    let d = spec.direction.len();
    let prefactor = criterion_prefactor(d, kappa, spec.length, spec.width, consts.c1);
    let value = prefactor * est.mean;
    let half_width = prefactor * est.half_width();
    Ok(CriterionReport {
        spec: spec.clone(),
        a,
        replicas: xs.len() as u64,
        mean_rho_a: est,
        median_rho_a: median(&xs),
        bootstrap_lo: blo,
        bootstrap_hi: bhi,
        heavy_tailed,
        constants: *consts,
        kappa,
        prefactor,
        value,
        half_width,
        pass: value + half_width < 1.0,
    })
}

/// Evaluates the criterion for one box and one exponent over `m` replicas.
pub fn effective_criterion_evaluate(
    ensemble: &Ensemble,
    spec: &CriterionSpec,
    a: f64,
    m: u64,
    consts: &CriterionConstants,
    opts: &SolveOptions,
) -> Result<CriterionReport> {
    spec.validate(consts)?;
    if spec.direction.len() != ensemble.dim() {
        return Err(Error::SpecInvalid("direction dimension mismatch".into()));
    }
    let rhos: Vec<f64> = rho_samples(ensemble, &spec.region(), m, opts)?.iter().map(|s| s.rho).collect();
    criterion_from_rhos(spec, ensemble_kappa(ensemble), a, &rhos, consts, ensemble.master_seed)
}

/// How `L̃` follows from `L` in a search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum WidthRule {
    /// `L̃ = L^exponent`.
    Power { exponent: f64 },
    Fixed { width: f64 },
}

impl Default for WidthRule {
    fn default() -> Self {
        WidthRule::Power { exponent: 2.0 }
    }
}

impl WidthRule {
    pub fn width(&self, length: f64) -> f64 {
        match *self {
            WidthRule::Power { exponent } => length.powf(exponent),
            WidthRule::Fixed { width } => width,
        }
    }
}

/// The grid of an effective criterion search. Each `ε` contributes the
/// exponent `a = L^{−ε}` at every length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchGrid {
    pub lengths: Vec<f64>,
    #[serde(default)]
    pub a_values: Vec<f64>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub width_rule: WidthRule,
    #[serde(default)]
    pub geometry: SpecGeometry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionSearch {
    /// One report per `(L, a)` cell, by increasing `L` then `a`.
    pub cells: Vec<CriterionReport>,
    pub best: CriterionReport,
    /// Smallest length with a passing cell.
    pub first_passing_length: Option<f64>,
}

/// Minimizes the criterion value over the grid; ties go to the smaller `L`
/// and then the smaller `a`.
pub fn effective_criterion_search(
    ensemble: &Ensemble,
    direction: &[f64],
    grid: &SearchGrid,
    m: u64,
    consts: &CriterionConstants,
    opts: &SolveOptions,
) -> Result<CriterionSearch> {
    if grid.lengths.is_empty() || (grid.a_values.is_empty() && grid.epsilons.is_empty()) {
        return Err(Error::BadParameter("search grid is empty".into()));
    }
    if grid.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::BadParameter("every ε must lie in (0, 1)".into()));
    }
    let mut lengths = grid.lengths.clone();
    lengths.sort_by(f64::total_cmp);
    lengths.dedup();
    let kappa = ensemble_kappa(ensemble);
    let mut cells = Vec::new();
    for &len in &lengths {
        let spec = CriterionSpec {
            direction: direction.to_vec(),
            length: len,
            width: grid.width_rule.width(len),
            geometry: grid.geometry,
        };
        spec.validate(consts)?;
        let rhos: Vec<f64> =
            rho_samples(ensemble, &spec.region(), m, opts)?.iter().map(|s| s.rho).collect();
        let mut a_values: Vec<f64> = grid.a_values.clone();
        a_values.extend(grid.epsilons.iter().map(|e| len.powf(-e)));
        a_values.sort_by(f64::total_cmp);
        a_values.dedup();
        for a in a_values {
            cells.push(criterion_from_rhos(&spec, kappa, a, &rhos, consts, ensemble.master_seed)?);
        }
    }
    let best = cells
        .iter()
        .min_by(|x, y| {
            x.value
                .total_cmp(&y.value)
                .then(x.spec.length.total_cmp(&y.spec.length))
                .then(x.a.total_cmp(&y.a))
        })
        .cloned()
        .expect("grid is nonempty");
    let first_passing_length = cells.iter().find(|c| c.pass).map(|c| c.spec.length);
    Ok(CriterionSearch { cells, best, first_passing_length })
}

/// Band layout of the decomposition of `Eρ^a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandParams {
    pub gamma: f64,
    /// `γ = β_1 < … < β_n = 1`.
    pub betas: Vec<f64>,
    /// `k_1, …, k_n`, all positive.
    pub ks: Vec<f64>,
    /// `a = L^{−ε}`.
    pub epsilon: f64,
    pub length: f64,
}

impl BandParams {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        let n = self.betas.len();
        let bad = |m: &str| Err(Error::BadParameter(m.into()));
        if n < 2 || self.ks.len() != n {
            return bad("need n ≥ 2 band exponents and as many constants");
        }
        if self.betas[0] != self.gamma || self.betas[n - 1] != 1.0 {
            return bad("band exponents must start at γ and end at 1");
        }
        if self.betas.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("band exponents must be strictly increasing");
        }
        if self.ks.iter().any(|k| !(*k > 0.0)) {
            return bad("band constants must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) || !(self.length > 0.0) {
            return bad("need ε in (0, 1) and L > 0");
        }
        Ok(())
    }

    /// `e^{−k_j L^{β_j}}` for `j = 1..n`.
    pub fn thresholds(&self) -> Vec<f64> {
        self.betas.iter().zip(&self.ks).map(|(b, k)| (-k * self.length.powf(*b)).exp()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandDecomposition {
    pub params: BandParams,
    pub a: f64,
    pub thresholds: Vec<f64>,
    /// Samples per band `0..=n`.
    pub counts: Vec<u64>,
    /// `Ê_0, …, Ê_n`.
    pub masses: Vec<f64>,
    /// `Σ_j Ê_j`, added in band order.
    pub total: f64,
    /// Finite-`L` value `−L^{−γ} log P̂_0(wrong exit)`, a stand-in for the
    /// limsup that defines `δ_1`.
    pub delta_1_estimate: Option<f64>,
}

/// Band of one right-exit probability: 0 above `t_1`, `j` when
/// `t_{j+1} < h ≤ t_j`, and `n` for everything else. The first matching
/// band wins, so the bands partition the sample even when the thresholds
/// are not decreasing.
pub fn band_of(h: f64, thresholds: &[f64]) -> usize {
    let n = thresholds.len();
    if h > thresholds[0] {
        return 0;
    }
    (1..n).find(|&j| h > thresholds[j]).unwrap_or(n)
}

/// Splits the sample mean of `ρ^a` by the band of each sample's `h`.
pub fn rho_band_decomposition(samples: &[RhoSample], params: &BandParams) -> Result<BandDecomposition> {
    params.validate()?;
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let a = params.length.powf(-params.epsilon);
    let thresholds = params.thresholds();
    let n = thresholds.len();
    let m = samples.len() as f64;
    let mut sums = vec![0.0; n + 1];
    let mut counts = vec![0u64; n + 1];
    for s in samples {
        let j = band_of(s.h, &thresholds);
        sums[j] += s.rho.powf(a);
        counts[j] += 1;
    }
    let masses: Vec<f64> = sums.iter().map(|s| s / m).collect();
    let total = masses.iter().fold(0.0, |acc, x| acc + x);
    let wrong = mean(&samples.iter().map(|s| s.rho * s.h).collect::<Vec<_>>());
    let delta_1_estimate = (wrong > 0.0).then(|| -params.length.powf(-params.gamma) * wrong.ln());
    Ok(BandDecomposition { params: params.clone(), a, thresholds, counts, masses, total, delta_1_estimate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::EnvironmentModel;

    #[test]
    fn gamma_must_be_open() {
        let e = Ensemble::new(EnvironmentModel::simple_random_walk(2), 1).unwrap();
        assert!(matches!(
            t_gamma_estimate(&e, &[1.0, 0.0], 1.0, 1.0, &[4.0], 10),
            Err(Error::BadParameter(_))
        ));
    }

    #[test]
    fn band_assignment() {
        let t = [0.5, 0.1, 0.01];
        assert_eq!(band_of(0.9, &t), 0);
        assert_eq!(band_of(0.5, &t), 1);
        assert_eq!(band_of(0.05, &t), 2);
        assert_eq!(band_of(0.01, &t), 3);
        assert_eq!(band_of(0.0, &t), 3);
    }

    #[test]
    fn spec_constraints() {
        let c = CriterionConstants::default();
        assert!(CriterionSpec::new(&[1.0, 0.0], 3.0, 9.0).validate(&c).is_err());
        assert!(CriterionSpec::new(&[1.0, 0.0], 4.0, 4.0).validate(&c).is_err());
        assert!(CriterionSpec::new(&[1.0, 0.0], 4.0, 64.0).validate(&c).is_err());
        assert!(CriterionSpec::new(&[1.0, 0.0], 4.0, 16.0).validate(&c).is_ok());
    }

    #[test]
    fn prefactor_is_linear_in_c1() {
        let one = criterion_prefactor(2, 0.2, 8.0, 64.0, 1.0);
        assert_eq!(criterion_prefactor(2, 0.2, 8.0, 64.0, 2.0), 2.0 * one);
    }
}
