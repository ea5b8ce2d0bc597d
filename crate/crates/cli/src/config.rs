//! Experiment configuration: one JSON document per run.

use rwre::criteria::{BandParams, CriterionConstants, CriterionSpec, SearchGrid};
use rwre::multiscale::ClassifyParams;
use rwre::exit_stats::{ExitTailQuery, FluctuationParams, IntersectionParams};
use rwre::regeneration::DirectionParams;
use rwre::{LadderParams, ModelDescription, Region, Site, SolveOptions, TrapMixture, TrapOverlay};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    EnvDump,
    Walk,
    Solve,
    TGamma,
    Criterion,
    CriterionSearch,
    Bands,
    Ladder,
    Census,
    Tails,
    Floor,
    Direction,
    Fluctuation,
    Intersections,
    Llt,
    ExitKernel,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::EnvDump => "env-dump",
            Kind::Walk => "walk",
            Kind::Solve => "solve",
            Kind::TGamma => "t-gamma",
            Kind::Criterion => "criterion",
            Kind::CriterionSearch => "criterion-search",
            Kind::Bands => "bands",
            Kind::Ladder => "ladder",
            Kind::Census => "census",
            Kind::Tails => "tails",
            Kind::Floor => "floor",
            Kind::Direction => "direction",
            Kind::Fluctuation => "fluctuation",
            Kind::Intersections => "intersections",
            Kind::Llt => "llt",
            Kind::ExitKernel => "exit-kernel",
        }
    }

    /// Ensemble tag separating the replica seeds of different kinds.
    pub fn tag(self) -> u64 {
        let words: Vec<u64> = self.name().bytes().map(u64::from).collect();
        rwre::hashing::hash_words(&words)
    }

    fn needs_model(self) -> bool {
        !matches!(self, Kind::Ladder | Kind::Llt)
    }
}

fn one() -> u64 {
    1
}

/// The document as read from disk, with `params` still untyped.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelDescription>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traps: Option<TrapMixture>,
    #[serde(default = "one")]
    pub replicas: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub params: Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvDump {
    pub lo: Site,
    pub hi: Site,
    #[serde(default)]
    pub replica: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Walk {
    #[serde(default)]
    pub start: Option<Site>,
    /// Walks run unstopped up to the cap when absent.
    #[serde(default)]
    pub region: Option<Region>,
    pub step_cap: u64,
    #[serde(default = "one")]
    pub walks: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solve {
    pub region: Region,
    #[serde(default)]
    pub start: Option<Site>,
    #[serde(default)]
    pub replica: u64,
    /// Also report the conditioned exit statistics with cubes of side `L^theta`.
    #[serde(default)]
    pub theta: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TGamma {
    pub direction: Vec<f64>,
    pub b: f64,
    pub gamma: f64,
    pub lengths: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Criterion {
    pub spec: CriterionSpec,
    pub a: f64,
    #[serde(default)]
    pub constants: CriterionConstants,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionSearch {
    pub direction: Vec<f64>,
    pub grid: SearchGrid,
    #[serde(default)]
    pub constants: CriterionConstants,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bands {
    pub spec: CriterionSpec,
    pub bands: BandParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ladder {
    pub length: u64,
    pub ladder: LadderParams,
}

fn hundred() -> u64 {
    100
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Census {
    pub length: u64,
    pub ladder: LadderParams,
    pub classify: ClassifyParams,
    pub v_hat: Vec<f64>,
    /// Environments behind each annealed reference.
    #[serde(default = "hundred")]
    pub reference_replicas: u64,
    /// The replica whose blocks are classified.
    #[serde(default)]
    pub replica: u64,
    /// Extra overlay placed on the classified environment.
    #[serde(default)]
    pub overlay: Option<TrapOverlay>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Floor {
    pub length: u64,
    pub c_prime: f64,
    #[serde(default)]
    pub start: Option<Site>,
    pub v_hat: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    SimpleRandomWalk { d: usize },
    Kernel { probs: Vec<f64> },
}

fn support_cap() -> usize {
    rwre::llt::DEFAULT_SUPPORT_CAP
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Llt {
    pub law: LawSpec,
    pub n_grid: Vec<u64>,
    #[serde(default = "support_cap")]
    pub support_cap: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitKernel {
    pub lengths: Vec<u64>,
    pub v_hat: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum Params {
    EnvDump(EnvDump),
    Walk(Walk),
    Solve(Solve),
    TGamma(TGamma),
    Criterion(Criterion),
    CriterionSearch(CriterionSearch),
    Bands(Bands),
    Ladder(Ladder),
    Census(Box<Census>),
    Tails(ExitTailQuery),
    Floor(Floor),
    Direction(DirectionParams),
    Fluctuation(FluctuationParams),
    Intersections(IntersectionParams),
    Llt(Llt),
    ExitKernel(ExitKernel),
}

/// A fully checked configuration.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub raw: RawConfig,
    pub params: Params,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

fn typed<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, String> {
    serde_json::from_value(v).map_err(|e| format!("params: {e}"))
}

/// Kinds whose core parameters carry the replica count take it from the
/// top level unless the params repeat it with the same value.
fn with_replicas(mut v: Value, replicas: u64) -> Result<Value, String> {
    let obj = v.as_object_mut().ok_or("params must be an object")?;
    match obj.get("replicas") {
        None => {
            obj.insert("replicas".into(), replicas.into());
        }
        Some(r) if r.as_u64() == Some(replicas) => {}
        Some(r) => return Err(format!("params.replicas = {r} disagrees with replicas = {replicas}")),
    }
    Ok(v)
}

impl Experiment {
    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self, String> {
        let mut raw: RawConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if let Some(seed) = overrides.seed {
            if let Some(m) = raw.model.as_mut() {
                m.seed = seed;
            }
        }
        if overrides.workers.is_some() {
            raw.workers = overrides.workers;
        }
        if overrides.out.is_some() {
            raw.out = overrides.out.clone();
        }
        if raw.params.is_null() {
            raw.params = Value::Object(Default::default());
        }
        let params = Self::typed_params(&raw)?;
        let exp = Self { raw, params };
        exp.validate()?;
        Ok(exp)
    }

    fn typed_params(raw: &RawConfig) -> Result<Params, String> {
        let v = raw.params.clone();
        let r = raw.replicas;
        Ok(match raw.kind {
            Kind::EnvDump => Params::EnvDump(typed(v)?),
            Kind::Walk => Params::Walk(typed(v)?),
            Kind::Solve => Params::Solve(typed(v)?),
            Kind::TGamma => Params::TGamma(typed(v)?),
            Kind::Criterion => Params::Criterion(typed(v)?),
            Kind::CriterionSearch => Params::CriterionSearch(typed(v)?),
            Kind::Bands => Params::Bands(typed(v)?),
            Kind::Ladder => Params::Ladder(typed(v)?),
            Kind::Census => Params::Census(Box::new(typed(v)?)),
            Kind::Tails => Params::Tails(typed(with_replicas(v, r)?)?),
            Kind::Floor => Params::Floor(typed(v)?),
            Kind::Direction => Params::Direction(typed(with_replicas(v, r)?)?),
            Kind::Fluctuation => Params::Fluctuation(typed(with_replicas(v, r)?)?),
            Kind::Intersections => Params::Intersections(typed(with_replicas(v, r)?)?),
            Kind::Llt => Params::Llt(typed(v)?),
            Kind::ExitKernel => Params::ExitKernel(typed(v)?),
        })
    }

    /// Checks that need no simulation. Deeper parameter errors raised by
    /// the operations themselves are also reported as config errors.
    fn validate(&self) -> Result<(), String> {
        let raw = &self.raw;
        if raw.replicas == 0 {
            return Err("replicas must be at least 1".into());
        }
        if raw.workers == Some(0) {
            return Err("workers must be at least 1".into());
        }
        if raw.kind.needs_model() && raw.model.is_none() {
            return Err(format!("kind {} needs a model", raw.kind.name()));
        }
        if let Some(m) = &raw.model {
            let model = m.model();
            model.validate().map_err(|e| e.to_string())?;
            if let Some(t) = &raw.traps {
                if !(0.0..=1.0).contains(&t.weight) {
                    return Err(format!("trap weight {} outside [0, 1]", t.weight));
                }
                t.overlay.validate(model.d).map_err(|e| e.to_string())?;
            }
        }
        let s = &raw.solver;
        if !(s.tolerance > 0.0) || s.max_iterations == 0 || s.max_sites == 0 {
            return Err("solver tolerance, max_iterations and max_sites must be positive".into());
        }
        if !(s.relaxation > 0.0 && s.relaxation < 2.0) {
            return Err(format!("relaxation {} outside (0, 2)", s.relaxation));
        }
        let d = raw.model.as_ref().map(|m| m.d);
        let dim_ok = |n: usize, what: &str| match d {
            Some(d) if d != n => Err(format!("{what} has dimension {n}, model has {d}")),
            _ => Ok(()),
        };
        match &self.params {
            Params::EnvDump(p) => {
                dim_ok(p.lo.dim(), "lo")?;
                dim_ok(p.hi.dim(), "hi")?;
                if (0..p.lo.dim()).any(|j| p.lo.get(j) > p.hi.get(j)) {
                    return Err("lo must not exceed hi".into());
                }
            }
            Params::Walk(p) => {
                if p.step_cap == 0 || p.walks == 0 {
                    return Err("step_cap and walks must be positive".into());
                }
                if let Some(r) = &p.region {
                    r.validate().map_err(|e| e.to_string())?;
                    dim_ok(r.dim(), "region")?;
                }
                if let Some(x) = &p.start {
                    dim_ok(x.dim(), "start")?;
                }
            }
            Params::Solve(p) => {
                p.region.validate().map_err(|e| e.to_string())?;
                dim_ok(p.region.dim(), "region")?;
                if let Some(x) = &p.start {
                    dim_ok(x.dim(), "start")?;
                }
                if let Some(t) = p.theta {
                    if !(t > 0.0 && t < 1.0) {
                        return Err(format!("theta {t} outside (0, 1)"));
                    }
                }
            }
            Params::TGamma(p) => dim_ok(p.direction.len(), "direction")?,
            Params::Criterion(p) => {
                p.spec.validate(&p.constants).map_err(|e| e.to_string())?;
                dim_ok(p.spec.direction.len(), "direction")?;
            }
            Params::CriterionSearch(p) => dim_ok(p.direction.len(), "direction")?,
            Params::Bands(p) => {
                p.spec.validate(&CriterionConstants::default()).map_err(|e| e.to_string())?;
                p.bands.validate().map_err(|e| e.to_string())?;
                dim_ok(p.spec.direction.len(), "direction")?;
            }
            Params::Ladder(_) => {}
            Params::Census(p) => {
                dim_ok(p.v_hat.len(), "v_hat")?;
                dim_ok(p.ladder.d, "ladder")?;
                if let (Some(o), Some(d)) = (&p.overlay, d) {
                    o.validate(d).map_err(|e| e.to_string())?;
                }
            }
            Params::Tails(q) => q.validate().map_err(|e| e.to_string())?,
            Params::Floor(p) => {
                dim_ok(p.v_hat.len(), "v_hat")?;
                if let Some(x) = &p.start {
                    dim_ok(x.dim(), "start")?;
                }
            }
            Params::Direction(p) => {
                if p.horizon == 0 || p.scale == 0 {
                    return Err("horizon and scale must be positive".into());
                }
            }
            Params::Fluctuation(p) => {
                dim_ok(p.v_hat.len(), "v_hat")?;
                dim_ok(p.start.dim(), "start")?;
            }
            Params::Intersections(p) => {
                dim_ok(p.v_hat.len(), "v_hat")?;
                dim_ok(p.starts[0].dim(), "starts")?;
                dim_ok(p.starts[1].dim(), "starts")?;
            }
            Params::Llt(p) => {
                if let LawSpec::SimpleRandomWalk { d } = p.law {
                    if !(1..=rwre::lattice::MAX_DIM).contains(&d) {
                        return Err(format!("law dimension {d} outside 1..={}", rwre::lattice::MAX_DIM));
                    }
                }
                if p.n_grid.is_empty() {
                    return Err("n_grid must not be empty".into());
                }
            }
            Params::ExitKernel(p) => {
                dim_ok(p.v_hat.len(), "v_hat")?;
                if p.lengths.is_empty() {
                    return Err("lengths must not be empty".into());
                }
            }
        }
        Ok(())
    }

    /// The configuration as hashed into the manifest: overrides applied,
    /// worker count and output directory dropped.
    pub fn canonical_json(&self) -> Vec<u8> {
        let mut raw = self.raw.clone();
        raw.workers = None;
        raw.out = None;
        serde_json::to_vec(&raw).expect("config serializes")
    }
}
