//! The slowly growing scale functions `R_k(N) = ⌈exp((ln ln N)^{k+1})⌉` and
//! the geometric scale ladder used by the block classification.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// `⌈exp((ln ln N)^{k+1})⌉`, for `N ≥ 16`.
///
/// Values saturate at `u64::MAX`.
pub fn scale_r(k: u32, n: u64) -> Result<u64> {
    if k == 0 {
        return Err(Error::BadParameter("scale index must be positive".into()));
    }
    if n < 16 {
        return Err(Error::BadParameter(format!("scale function needs N >= 16, got {n}")));
    }
    Ok(scale_r_unchecked(k, n))
}

/// Same formula without the `N ≥ 16` guard; returns 1 when `ln ln N ≤ 0`.
///
/// Small blocks (`N < 16`) still need a width, and the formula stays
/// meaningful for every `N ≥ 3`.
pub fn scale_r_unchecked(k: u32, n: u64) -> u64 {
    let ll = (n as f64).ln().ln();
    if !(ll > 0.0) {
        return 1;
    }
    let e = ll.powi(k as i32 + 1);
    if e >= (u64::MAX as f64).ln() {
        return u64::MAX;
    }
    let v = e.exp();
    let m = v.round();
    if (v - m).abs() < 1e-9 * m.max(1.0) {
        // Near an integer the ceiling is decided in log space, where the
        // comparison `e ≤ ln m` is well conditioned.
        let m = m as u64;
        if e <= (m as f64).ln() { m } else { m + 1 }
    } else {
        v.ceil() as u64
    }
}

/// How the ladder's first level and multiplier are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LadderMode {
    /// `L_1 = ⌊L^ψ⌋`, `m = ⌊L^χ⌋`.
    Power,
    Explicit { l1: u64, multiplier: u64 },
}

/// Exponents of the multiscale regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderParams {
    pub d: usize,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub psi: f64,
    pub chi: f64,
    pub theta: f64,
    pub mode: LadderMode,
}

impl LadderParams {
    /// Explicit ladder with `ψ, χ, ϑ` set to a regime-consistent choice.
    pub fn explicit(d: usize, l1: u64, multiplier: u64, delta: f64) -> Self {
        Self {
            d,
            alpha: 0.5,
            beta: 0.5,
            delta,
            psi: 2.1 * delta,
            chi: 0.5 * delta,
            theta: 0.5 * delta,
            mode: LadderMode::Explicit { l1, multiplier },
        }
    }

    /// Checks the parameter regime required of the power-law ladder.
    pub fn validate_regime(&self) -> Result<()> {
        let d = self.d as f64;
        let bad = |m: String| Err(Error::BadParameter(m));
        if self.d < 2 {
            return bad(format!("dimension {} < 2", self.d));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta {} outside (0, 1)", self.beta));
        }
        if !(self.alpha > 0.0 && self.alpha < self.beta * d) {
            return bad(format!("alpha {} outside (0, beta*d)", self.alpha));
        }
        let dmax = (self.beta * d - self.alpha) / (12.0 * d);
        if !(self.delta > 0.0 && self.delta < dmax) {
            return bad(format!("delta {} outside (0, {dmax})", self.delta));
        }
        if !(self.psi > 2.0 * self.delta && self.psi < 20.0 * self.delta / 9.0) {
            return bad(format!("psi {} outside (2 delta, 20 delta / 9)", self.psi));
        }
        let cmax = ((self.beta - 6.0 * self.delta) / 2.0).min(self.psi / 4.0).min(6.0 / (d - 1.0));
        if !(self.chi > 0.0 && self.chi < cmax) {
            return bad(format!("chi {} outside (0, {cmax})", self.chi));
        }
        if self.theta != self.chi {
            return bad("theta must equal chi".into());
        }
        Ok(())
    }
}

/// Levels `L_1 < … < L_ι` with `L_{k+1} = m·L_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleLadder {
    pub base: u64,
    pub levels: Vec<u64>,
    pub multiplier: u64,
    pub iota: usize,
}

/// Builds levels up to the first `L_k` with `L_k² > L^{1+δ}`.
pub fn build_ladder(l: u64, params: &LadderParams) -> Result<ScaleLadder> {
    if l < 2 {
        return Err(Error::BadParameter(format!("base length {l} < 2")));
    }
    if !(params.delta > 0.0) {
        return Err(Error::BadParameter("delta must be positive".into()));
    }
    let lf = l as f64;
    let (l1, m) = match params.mode {
        LadderMode::Power => {
            params.validate_regime()?;
            (lf.powf(params.psi).floor() as u64, lf.powf(params.chi).floor() as u64)
        }
        LadderMode::Explicit { l1, multiplier } => (l1, multiplier),
    };
    if m <= 1 {
        return Err(Error::DegenerateLadder(format!("multiplier {m} at L = {l}")));
    }
    if l1 < 1 {
        return Err(Error::DegenerateLadder(format!("first level {l1} at L = {l}")));
    }
    let target = lf.powf(1.0 + params.delta);
    let mut levels = vec![l1];
    while (*levels.last().unwrap() as f64).powi(2) <= target {
        let next = levels.last().unwrap().checked_mul(m).ok_or_else(|| {
            Error::DegenerateLadder("ladder overflowed before reaching its top".into())
        })?;
        levels.push(next);
    }
    Ok(ScaleLadder { base: l, iota: levels.len(), levels, multiplier: m })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_values() {
        assert_eq!(scale_r(1, 16).unwrap(), 3);
        assert_eq!(scale_r(1, 100).unwrap(), 11);
        assert_eq!(scale_r(2, 100).unwrap(), 36);
        assert_eq!(scale_r(2, 16).unwrap(), 3);
        assert_eq!(scale_r(6, 16).unwrap(), 4);
        assert_eq!(scale_r(6, 32).unwrap(), 98);
        assert!(matches!(scale_r(1, 15), Err(Error::BadParameter(_))));
    }

    #[test]
    fn unchecked_small_arguments() {
        assert_eq!(scale_r_unchecked(6, 8), 2);
        assert_eq!(scale_r_unchecked(3, 2), 1);
    }

    #[test]
    fn monotone_in_index() {
        for n in [16u64, 17, 100, 1000, 12345, 1_000_000] {
            for k in 1..9 {
                assert!(scale_r(k + 1, n).unwrap() >= scale_r(k, n).unwrap());
            }
        }
    }

    #[test]
    fn explicit_ladder() {
        let p = LadderParams::explicit(2, 4, 3, 0.05);
        let lad = build_ladder(10_000, &p).unwrap();
        assert_eq!(lad.levels, vec![4, 12, 36, 108, 324]);
        assert_eq!(lad.iota, 5);
    }

    #[test]
    fn power_ladder_degenerates_at_desk_scale() {
        let p = LadderParams {
            d: 2,
            alpha: 0.5,
            beta: 0.9,
            delta: 0.04,
            psi: 0.085,
            chi: 0.02,
            theta: 0.02,
            mode: LadderMode::Power,
        };
        assert!(p.validate_regime().is_ok());
        assert!(matches!(build_ladder(1_000_000, &p), Err(Error::DegenerateLadder(_))));
    }

    #[test]
    fn regime_violations() {
        let mut p = LadderParams {
            d: 2,
            alpha: 0.5,
            beta: 0.9,
            delta: 0.0099,
            psi: 0.021,
            chi: 0.004,
            theta: 0.004,
            mode: LadderMode::Power,
        };
        assert!(p.validate_regime().is_ok());
        p.psi = 0.03;
        assert!(p.validate_regime().is_err());
        p.psi = 0.021;
        p.theta = 0.003;
        assert!(p.validate_regime().is_err());
    }
}
