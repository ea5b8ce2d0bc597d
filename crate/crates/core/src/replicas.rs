//! Parallel maps over the replicas of an ensemble with index-ordered output.

use crate::environment::{Ensemble, Replica};
use crate::error::Result;
use rayon::prelude::*;

/// Evaluates `f` on replicas `0..m`. Results come back in replica order and
/// the first failing replica (by index) decides the error.
pub fn map_replicas<R, F>(ensemble: &Ensemble, m: u64, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&Replica) -> Result<R> + Sync,
{
    let out: Vec<Result<R>> = (0..m).into_par_iter().map(|i| f(&ensemble.replica(i))).collect();
    out.into_iter().collect()
}

/// Like [`map_replicas`] for quantities that depend on a replica only through
/// its kernel field. A deterministic model has at most two distinct fields
/// (with and without the trap), so each is evaluated once.
pub fn map_environments<R, F>(ensemble: &Ensemble, m: u64, f: F) -> Result<Vec<R>>
where
    R: Send + Sync + Clone,
    F: Fn(&Replica) -> Result<R> + Sync,
{
    if !ensemble.model.is_deterministic() {
        return map_replicas(ensemble, m, f);
    }
    let mut plain: Option<R> = None;
    let mut trapped: Option<R> = None;
    let mut out = Vec::with_capacity(m as usize);
    for i in 0..m {
        let rep = ensemble.replica(i);
        let slot = if rep.trapped { &mut trapped } else { &mut plain };
        if slot.is_none() {
            *slot = Some(f(&rep)?);
        }
        out.push(slot.clone().expect("filled above"));
    }
    Ok(out)
}
