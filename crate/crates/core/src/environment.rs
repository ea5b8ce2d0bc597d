//! I.i.d. uniformly elliptic environments on Z^d, realized lazily: the kernel
//! at a site is a pure function of `(master_seed, site)`.

use crate::error::{Error, Result};
use crate::hashing::{hash_words, replica_seed, tags, unit_f64, CounterStream};
use crate::lattice::{Direction, Site, MAX_DIM};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const SUM_TOL: f64 = 1e-12;

/// Transition probabilities of one site, indexed `(+e_1, −e_1, …, +e_d, −e_d)`.
#[derive(Clone, Copy, PartialEq)]
pub struct Kernel {
    dim: u8,
    probs: [f64; 2 * MAX_DIM],
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Kernel{:?}", self.probs())
    }
}

impl Kernel {
    /// Builds a kernel after checking it is a probability vector.
    pub fn new(probs: &[f64]) -> Result<Self> {
        if !probs.len().is_multiple_of(2) || probs.is_empty() || probs.len() > 2 * MAX_DIM {
            return Err(Error::ModelInvalid(format!("kernel of length {}", probs.len())));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::ModelInvalid("kernel has a negative or non-finite entry".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::ModelInvalid(format!("kernel sums to {total}")));
        }
        Ok(Self::from_slice_unchecked(probs))
    }

    pub(crate) fn from_slice_unchecked(probs: &[f64]) -> Self {
        let mut p = [0.0; 2 * MAX_DIM];
        p[..probs.len()].copy_from_slice(probs);
        Self { dim: (probs.len() / 2) as u8, probs: p }
    }

    pub fn uniform(d: usize) -> Self {
        Self::from_slice_unchecked(&vec![1.0 / (2 * d) as f64; 2 * d])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs[..2 * self.dim as usize]
    }

    #[inline]
    pub fn p(&self, dir: usize) -> f64 {
        self.probs[dir]
    }

    pub fn min(&self) -> f64 {
        self.probs().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Local drift `Σ_e ω(e) e`.
    pub fn drift(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.probs[2 * i] - self.probs[2 * i + 1]).collect()
    }

    /// Index of the direction sampled by `u ∈ [0, 1)`.
    #[inline]
    pub fn sample(&self, u: f64) -> usize {
        let n = 2 * self.dim as usize;
        let mut acc = 0.0;
        let mut last = 0;
        for k in 0..n {
            let p = self.probs[k];
            if p > 0.0 {
                acc += p;
                last = k;
                if u < acc {
                    return k;
                }
            }
        }
        last
    }
}

/// The random family a model draws its site kernels from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    /// The same kernel at every site.
    Deterministic { kernel: Vec<f64> },
    /// `1/(2d)` perturbed by at most `epsilon`: the drift axis gains
    /// `epsilon·U` forward (`U` uniform on [0, 1]), every other axis gets a
    /// symmetric tilt `±epsilon·W` with `W` uniform on [−1, 1].
    PerturbedSrw { epsilon: f64, axis: usize },
    /// `kernel_plus` with probability `p_mix`, otherwise `kernel_minus`.
    TwoPointMixture { kernel_plus: Vec<f64>, kernel_minus: Vec<f64>, p_mix: f64 },
    /// `kappa + (1 − 2d·kappa)·Dirichlet(concentration)`.
    DirichletSites { concentration: Vec<f64> },
}

/// An i.i.d. environment law on Z^d with ellipticity floor `kappa`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentModel {
    pub d: usize,
    pub kappa: f64,
    pub variant: Variant,
    /// Permits `kappa = 0` (degenerate kernels) for oracle tests.
    #[serde(default)]
    pub test_mode: bool,
}

/// The serialized form of a model together with its master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescription {
    pub d: usize,
    pub kappa: f64,
    pub variant: Variant,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub test_mode: bool,
}

impl ModelDescription {
    pub fn model(&self) -> EnvironmentModel {
        EnvironmentModel {
            d: self.d,
            kappa: self.kappa,
            variant: self.variant.clone(),
            test_mode: self.test_mode,
        }
    }

    pub fn from_model(model: &EnvironmentModel, seed: u64) -> Self {
        Self {
            d: model.d,
            kappa: model.kappa,
            variant: model.variant.clone(),
            seed,
            test_mode: model.test_mode,
        }
    }
}

impl EnvironmentModel {
    pub fn deterministic(kernel: &[f64], kappa: f64) -> Self {
        Self {
            d: kernel.len() / 2,
            kappa,
            variant: Variant::Deterministic { kernel: kernel.to_vec() },
            test_mode: false,
        }
    }

    /// A degenerate deterministic kernel with `kappa = 0`.
    pub fn test_kernel(kernel: &[f64]) -> Self {
        Self {
            d: kernel.len() / 2,
            kappa: 0.0,
            variant: Variant::Deterministic { kernel: kernel.to_vec() },
            test_mode: true,
        }
    }

    pub fn simple_random_walk(d: usize) -> Self {
        Self::deterministic(&vec![1.0 / (2 * d) as f64; 2 * d], 1.0 / (2 * d) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if !(2..=MAX_DIM).contains(&d) {
            return Err(Error::ModelInvalid(format!("dimension {d} outside 2..={MAX_DIM}")));
        }
        let kmax = 1.0 / (2 * d) as f64;
        if !(self.kappa.is_finite() && self.kappa >= 0.0 && self.kappa <= kmax + 1e-15) {
            return Err(Error::ModelInvalid(format!("kappa {} outside [0, {kmax}]", self.kappa)));
        }
        if self.kappa == 0.0 && !self.test_mode {
            return Err(Error::ModelInvalid("kappa = 0 requires test_mode".into()));
        }
        let check = |k: &[f64]| -> Result<()> {
            if k.len() != 2 * d {
                return Err(Error::ModelInvalid(format!(
                    "kernel of length {} in dimension {d}",
                    k.len()
                )));
            }
            let kern = Kernel::new(k)?;
            if kern.min() < self.kappa - 1e-15 {
                return Err(Error::ModelInvalid(format!(
                    "kernel entry {} below kappa {}",
                    kern.min(),
                    self.kappa
                )));
            }
            Ok(())
        };
        match &self.variant {
            Variant::Deterministic { kernel } => check(kernel)?,
            Variant::PerturbedSrw { epsilon, axis } => {
                if *axis >= d {
                    return Err(Error::ModelInvalid(format!("drift axis {axis} >= d")));
                }
                if !(epsilon.is_finite() && *epsilon >= 0.0) {
                    return Err(Error::ModelInvalid("epsilon must be >= 0".into()));
                }
                if kmax - epsilon < self.kappa - 1e-15 {
                    return Err(Error::ModelInvalid(format!(
                        "epsilon {epsilon} pushes entries below kappa {}",
                        self.kappa
                    )));
                }
            }
            Variant::TwoPointMixture { kernel_plus, kernel_minus, p_mix } => {
                check(kernel_plus)?;
                check(kernel_minus)?;
                if !(0.0..=1.0).contains(p_mix) {
                    return Err(Error::ModelInvalid(format!("p_mix {p_mix} outside [0, 1]")));
                }
            }
            Variant::DirichletSites { concentration } => {
                if concentration.len() != 2 * d {
                    return Err(Error::ModelInvalid("concentration must have 2d entries".into()));
                }
                if concentration.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                    return Err(Error::ModelInvalid("concentrations must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// True when every site carries the same kernel regardless of the seed.
    pub fn is_deterministic(&self) -> bool {
        match &self.variant {
            Variant::Deterministic { .. } => true,
            Variant::PerturbedSrw { epsilon, .. } => *epsilon == 0.0,
            Variant::TwoPointMixture { kernel_plus, kernel_minus, p_mix } => {
                *p_mix == 0.0 || *p_mix == 1.0 || kernel_plus == kernel_minus
            }
            Variant::DirichletSites { .. } => false,
        }
    }

    /// Expected kernel under the site law.
    pub fn mean_kernel(&self) -> Vec<f64> {
        let d = self.d;
        let u = 1.0 / (2 * d) as f64;
        match &self.variant {
            Variant::Deterministic { kernel } => kernel.clone(),
            Variant::PerturbedSrw { epsilon, axis } => {
                let mut k = vec![u; 2 * d];
                k[Direction::plus(*axis)] += epsilon / 2.0;
                k[Direction::minus(*axis)] -= epsilon / 2.0;
                k
            }
            Variant::TwoPointMixture { kernel_plus, kernel_minus, p_mix } => kernel_plus
                .iter()
                .zip(kernel_minus)
                .map(|(a, b)| p_mix * a + (1.0 - p_mix) * b)
                .collect(),
            Variant::DirichletSites { concentration } => {
                let total: f64 = concentration.iter().sum();
                let scale = 1.0 - 2.0 * d as f64 * self.kappa;
                concentration.iter().map(|a| self.kappa + scale * a / total).collect()
            }
        }
    }

    fn kernel_at(&self, seed: u64, x: &Site) -> Kernel {
        let d = self.d;
        match &self.variant {
            Variant::Deterministic { kernel } => Kernel::from_slice_unchecked(kernel),
            Variant::PerturbedSrw { epsilon, axis } => {
                let base = 1.0 / (2 * d) as f64;
                let mut p = vec![base; 2 * d];
                if *epsilon > 0.0 {
                    let key = site_key(seed, x);
                    for i in 0..d {
                        let u = unit_f64(hash_words(&[key, i as u64]));
                        let tilt = if i == *axis { epsilon * u } else { epsilon * (2.0 * u - 1.0) };
                        p[Direction::plus(i)] += tilt;
                        p[Direction::minus(i)] -= tilt;
                    }
                }
                Kernel::from_slice_unchecked(&p)
            }
            Variant::TwoPointMixture { kernel_plus, kernel_minus, p_mix } => {
                let u = unit_f64(site_key(seed, x));
                if u < *p_mix {
                    Kernel::from_slice_unchecked(kernel_plus)
                } else {
                    Kernel::from_slice_unchecked(kernel_minus)
                }
            }
            Variant::DirichletSites { concentration } => {
                let mut rng = CounterStream::new(site_key(seed, x));
                let mut g = [0.0; 2 * MAX_DIM];
                let mut total = 0.0;
                for (k, &a) in concentration.iter().enumerate() {
                    let gamma = Gamma::new(a, 1.0).expect("validated concentration");
                    // a zero draw is possible only through underflow; redraw
                    let mut v = gamma.sample(&mut rng);
                    while v <= 0.0 {
                        v = gamma.sample(&mut rng);
                    }
                    g[k] = v;
                    total += v;
                }
                let scale = 1.0 - 2.0 * d as f64 * self.kappa;
                let mut p = [0.0; 2 * MAX_DIM];
                for k in 0..2 * d {
                    p[k] = self.kappa + scale * g[k] / total;
                }
                Kernel::from_slice_unchecked(&p[..2 * d])
            }
        }
    }
}

fn site_key(seed: u64, x: &Site) -> u64 {
    let mut words = [0u64; MAX_DIM + 3];
    words[0] = tags::SITE;
    words[1] = seed;
    words[2] = x.dim() as u64;
    for (i, c) in x.coords().iter().enumerate() {
        words[3 + i] = *c as u64;
    }
    hash_words(&words[..3 + x.dim()])
}

/// A ball of sites whose kernels point toward `center`.
///
/// Inside `0 < ‖y − center‖₁ ≤ radius` every direction that does not reduce
/// the ℓ1 distance to the center gets probability `floor`; the remaining mass
/// is split evenly over the inward directions. The center keeps its kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapOverlay {
    pub center: Site,
    pub radius: u64,
    #[serde(default)]
    pub inward_bias: f64,
    pub floor: f64,
    /// Allows `floor = 0`, i.e. a closed trap.
    #[serde(default)]
    pub test_mode: bool,
}

impl TrapOverlay {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.center.dim() != d {
            return Err(Error::OverlayInvalid("center dimension mismatch".into()));
        }
        let fmax = 1.0 / (2 * d) as f64;
        if !(self.floor.is_finite() && self.floor >= 0.0 && self.floor <= fmax) {
            return Err(Error::OverlayInvalid(format!("floor {} outside [0, {fmax}]", self.floor)));
        }
        if self.floor == 0.0 && !self.test_mode {
            return Err(Error::OverlayInvalid("floor = 0 requires test_mode".into()));
        }
        let max_bias = 1.0 - (2 * d - 1) as f64 * self.floor;
        if !(self.inward_bias >= 0.0 && self.inward_bias <= max_bias + 1e-15) {
            return Err(Error::OverlayInvalid(format!(
                "inward_bias {} incompatible with floor {} (max {max_bias})",
                self.inward_bias, self.floor
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn covers(&self, x: &Site) -> bool {
        let r = x.sub(&self.center).l1();
        r > 0 && r as u64 <= self.radius
    }

    fn kernel_at(&self, x: &Site) -> Kernel {
        let d = x.dim();
        let mut inward = [false; 2 * MAX_DIM];
        let mut n_in = 0;
        for i in 0..d {
            let delta = x.get(i) - self.center.get(i);
            if delta > 0 {
                inward[Direction::minus(i)] = true;
                n_in += 1;
            } else if delta < 0 {
                inward[Direction::plus(i)] = true;
                n_in += 1;
            }
        }
        let n_out = 2 * d - n_in;
        let share = (1.0 - n_out as f64 * self.floor) / n_in as f64;
        let p: Vec<f64> =
            (0..2 * d).map(|k| if inward[k] { share } else { self.floor }).collect();
        Kernel::from_slice_unchecked(&p)
    }
}

/// Anything that assigns a kernel to every site.
pub trait KernelField: Sync {
    fn dim(&self) -> usize;
    fn kernel(&self, x: &Site) -> Kernel;
}

/// A sampled environment: a model, a master seed and optional trap overlays.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    model: EnvironmentModel,
    seed: u64,
    overlays: Vec<TrapOverlay>,
}

/// Validates `model` and returns the environment addressed by `seed`.
pub fn build_environment(model: &EnvironmentModel, seed: u64) -> Result<Environment> {
    model.validate()?;
    Ok(Environment { model: model.clone(), seed, overlays: Vec::new() })
}

/// Overlays a trap; kernels outside the ball are untouched.
pub fn apply_trap(env: &Environment, overlay: &TrapOverlay) -> Result<Environment> {
    overlay.validate(env.model.d)?;
    let mut out = env.clone();
    if overlay.radius > 0 {
        out.overlays.push(overlay.clone());
    }
    Ok(out)
}

impl Environment {
    pub fn model(&self) -> &EnvironmentModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn overlays(&self) -> &[TrapOverlay] {
        &self.overlays
    }

    /// Ellipticity floor actually guaranteed, including overlays.
    pub fn kappa(&self) -> f64 {
        self.overlays.iter().fold(self.model.kappa, |k, o| k.min(o.floor))
    }

    /// True when every site has the same kernel.
    pub fn is_homogeneous(&self) -> bool {
        self.overlays.is_empty() && self.model.is_deterministic()
    }

    pub fn site_kernel(&self, x: &Site) -> Kernel {
        debug_assert_eq!(x.dim(), self.model.d);
        for o in self.overlays.iter().rev() {
            if o.covers(x) {
                return o.kernel_at(x);
            }
        }
        self.model.kernel_at(self.seed, x)
    }
}

impl KernelField for Environment {
    fn dim(&self) -> usize {
        self.model.d
    }

    fn kernel(&self, x: &Site) -> Kernel {
        self.site_kernel(x)
    }
}

/// Kernels of a finite window materialized once; other sites fall through
/// to the environment.
pub struct FrozenWindow<'a> {
    env: &'a Environment,
    cache: HashMap<Site, Kernel>,
}

impl<'a> FrozenWindow<'a> {
    pub fn new(env: &'a Environment, sites: impl IntoIterator<Item = Site>) -> Self {
        let cache = sites.into_iter().map(|s| (s, env.site_kernel(&s))).collect();
        Self { env, cache }
    }
}

impl KernelField for FrozenWindow<'_> {
    fn dim(&self) -> usize {
        self.env.dim()
    }

    fn kernel(&self, x: &Site) -> Kernel {
        match self.cache.get(x) {
            Some(k) => *k,
            None => self.env.site_kernel(x),
        }
    }
}

/// Random trap insertion on top of a base model: each replica independently
/// receives `overlay` with probability `weight`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapMixture {
    pub weight: f64,
    pub overlay: TrapOverlay,
}

/// A seeded family of independent environments, one per replica index.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub model: EnvironmentModel,
    pub master_seed: u64,
    pub tag: u64,
    pub traps: Option<TrapMixture>,
}

/// One member of an [`Ensemble`].
#[derive(Clone, Debug)]
pub struct Replica {
    pub index: u64,
    pub env: Environment,
    pub trapped: bool,
}

impl Ensemble {
    pub fn new(model: EnvironmentModel, master_seed: u64) -> Result<Self> {
        model.validate()?;
        Ok(Self { model, master_seed, tag: 0, traps: None })
    }

    pub fn with_tag(mut self, tag: u64) -> Self {
        self.tag = tag;
        self
    }

    pub fn with_traps(mut self, traps: TrapMixture) -> Result<Self> {
        traps.overlay.validate(self.model.d)?;
        if !(0.0..=1.0).contains(&traps.weight) {
            return Err(Error::BadParameter(format!("trap weight {}", traps.weight)));
        }
        self.traps = Some(traps);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.model.d
    }

    /// True when all replicas are the same environment.
    pub fn is_degenerate(&self) -> bool {
        self.model.is_deterministic() && self.traps.as_ref().is_none_or(|t| t.weight == 0.0)
    }

    pub fn replica(&self, index: u64) -> Replica {
        let seed = replica_seed(self.master_seed, self.tag, index);
        let mut env = Environment { model: self.model.clone(), seed, overlays: Vec::new() };
        let mut trapped = false;
        if let Some(t) = &self.traps {
            let u = unit_f64(hash_words(&[tags::TRAP, self.master_seed, self.tag, index]));
            if u < t.weight && t.overlay.radius > 0 {
                env.overlays.push(t.overlay.clone());
                trapped = true;
            }
        }
        Replica { index, env, trapped }
    }
}
