//! Dispatch from an experiment to the laboratory's operations.

use crate::config::{Experiment, LawSpec, Params};
use crate::output::{flag, num, opt, Artifacts, Table};
use rwre::criteria::{
    effective_criterion_evaluate, effective_criterion_search, rho_band_decomposition, rho_samples,
    t_gamma_estimate, CriterionReport,
};
use rwre::exit_stats::{
    atypical_exit_tail, direction_gap, exit_point_floor, intersection_census, transversal_fluctuation_tail,
};
use rwre::llt::exit_kernel_smoothness;
use rwre::multiscale::{annealed_reference, bad_block_census};
use rwre::replicas::map_replicas;
use rwre::stats::Proportion;
use rwre::walk::{run_walk, walk_key, StopRule, Unstopped};
use rwre::{
    apply_trap, build_ladder, conditional_exit_stats, llt_discrepancy_report, solve_exit, Ensemble, Error,
    LatticeLaw64, Result, Site,
};
use serde_json::{json, Value};

fn ensemble(exp: &Experiment) -> Result<Ensemble> {
    let m = exp.raw.model.as_ref().ok_or_else(|| Error::BadParameter("model missing".into()))?;
    let ens = Ensemble::new(m.model(), m.seed)?.with_tag(exp.raw.kind.tag());
    match &exp.raw.traps {
        Some(t) => ens.with_traps(t.clone()),
        None => Ok(ens),
    }
}

fn axis_columns(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("{prefix}{j}")).collect()
}

fn coords(x: &Site) -> Vec<String> {
    x.coords().iter().map(|c| c.to_string()).collect()
}

fn table(name: &str, lead: &[&str], d: Option<(&str, usize)>, tail: &[&str]) -> Table {
    let mut cols: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    if let Some((prefix, d)) = d {
        cols.extend(axis_columns(prefix, d));
    }
    cols.extend(tail.iter().map(|s| s.to_string()));
    let mut t = Table::new(name, &[]);
    t.columns = cols;
    t
}

fn proportion_cells(p: &Proportion) -> Vec<String> {
    vec![p.successes.to_string(), p.trials.to_string(), num(p.estimate), num(p.lo), num(p.hi)]
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("reports serialize")
}

pub fn run(exp: &Experiment) -> Result<Artifacts> {
    let raw = &exp.raw;
    let m = raw.replicas;
    let opts = &raw.solver;
    match &exp.params {
        Params::EnvDump(p) => {
            let ens = ensemble(exp)?;
            let rep = ens.replica(p.replica);
            let d = ens.dim();
            let count: f64 = (0..d).map(|j| (p.hi.get(j) - p.lo.get(j) + 1) as f64).product();
            if count > opts.max_sites as f64 {
                return Err(Error::RegionTooLarge { sites: count as usize, limit: opts.max_sites });
            }
            let kernel_cols: Vec<String> =
                (1..=d).flat_map(|j| [format!("p_plus_{j}"), format!("p_minus_{j}")]).collect();
            let mut t = table("environment", &[], Some(("x", d)), &[]);
            t.columns.extend(kernel_cols);
            let mut x = p.lo;
            loop {
                let mut row = coords(&x);
                row.extend(rep.env.site_kernel(&x).probs().iter().map(|&q| num(q)));
                t.push(row);
                // Odometer over the box, last axis fastest.
                let mut j = d;
                loop {
                    if j == 0 {
                        let summary = json!({
                            "model": raw.model,
                            "replica": p.replica,
                            "replica_seed": rep.env.seed(),
                            "trapped": rep.trapped,
                            "sites": t.rows.len(),
                        });
                        return Ok(Artifacts { tables: vec![t], summary });
                    }
                    j -= 1;
                    if x.get(j) < p.hi.get(j) {
                        x.set(j, x.get(j) + 1);
                        break;
                    }
                    x.set(j, p.lo.get(j));
                }
            }
        }
        Params::Walk(p) => {
            let ens = ensemble(exp)?;
            let d = ens.dim();
            let start = p
                .start
                .or_else(|| p.region.as_ref().map(|r| r.default_start()))
                .unwrap_or_else(|| Site::origin(d));
            let rule: &dyn StopRule = match &p.region {
                Some(r) => r,
                None => &Unstopped,
            };
            if rule.check(&start).is_some() {
                return Err(Error::StartOutside);
            }
            let outcomes = map_replicas(&ens, m, |rep| {
                Ok((0..p.walks)
                    .map(|s| run_walk(&rep.env, walk_key(rep.env.seed(), s), start, rule, p.step_cap, |_, _| {}))
                    .collect::<Vec<_>>())
            })?;
            let mut t = table("walks", &["replica", "stream", "steps", "stop_reason"], Some(("end_x", d)), &[]);
            let mut by_reason = std::collections::BTreeMap::<String, u64>::new();
            let mut steps = 0u128;
            for (i, outs) in outcomes.iter().enumerate() {
                for (s, o) in outs.iter().enumerate() {
                    let reason = to_value(&o.reason).as_str().unwrap_or_default().to_string();
                    *by_reason.entry(reason.clone()).or_default() += 1;
                    steps += o.steps as u128;
                    let mut row = vec![i.to_string(), s.to_string(), o.steps.to_string(), reason];
                    row.extend(coords(&o.end));
                    t.push(row);
                }
            }
            let n = t.rows.len();
            let summary = json!({
                "start": start,
                "walks": n,
                "stop_reasons": by_reason,
                "mean_steps": steps as f64 / n as f64,
            });
            Ok(Artifacts { tables: vec![t], summary })
        }
        Params::Solve(p) => {
            let ens = ensemble(exp)?;
            let env = ens.replica(p.replica).env;
            let start = p.start.unwrap_or_else(|| p.region.default_start());
            let sol = solve_exit::<f64, _>(&env, &p.region, start, opts)?;
            let mut t = table("exits", &[], Some(("x", ens.dim())), &["probability", "right"]);
            for a in &sol.exits {
                let mut row = coords(&a.site);
                row.push(num(a.prob));
                row.push(flag(a.right));
                t.push(row);
            }
            let conditioned = match p.theta {
                Some(theta) => Some(conditional_exit_stats(&sol, theta)?),
                None => None,
            };
            let summary = json!({
                "start": sol.start,
                "h_start": sol.h_start(),
                "wrong_start": sol.wrong_start(),
                "rho": sol.rho().ok(),
                "iterations": sol.stats.iterations,
                "residual": sol.stats.residual,
                "interior_sites": sol.stats.interior_sites,
                "exit_sweeps": sol.stats.exit_sweeps,
                "undelivered_mass": sol.stats.undelivered_mass,
                "exit_mass": sol.exit_mass(),
                "right_exit_mass": sol.right_exit_mass(),
                "conditioned": conditioned,
            });
            Ok(Artifacts { tables: vec![t], summary })
        }
        Params::TGamma(p) => {
            let ens = ensemble(exp)?;
            let rep = t_gamma_estimate(&ens, &p.direction, p.b, p.gamma, &p.lengths, m)?;
            let mut t = table(
                "t_gamma",
                &["length", "backward", "trials", "estimate", "lo", "hi"],
                None,
                &["censored", "normalized", "normalized_lo", "normalized_hi"],
            );
            for c in &rep.cells {
                let mut row = vec![num(c.length)];
                row.extend(proportion_cells(&c.backward));
                row.extend([c.censored.to_string(), num(c.normalized), opt(c.normalized_lo), num(c.normalized_hi)]);
                t.push(row);
            }
            Ok(Artifacts { tables: vec![t], summary: to_value(&rep) })
        }
        Params::Criterion(p) => {
            let ens = ensemble(exp)?;
            let rep = effective_criterion_evaluate(&ens, &p.spec, p.a, m, &p.constants, opts)?;
            let mut t = criterion_table();
            t.push(criterion_row(&rep));
            Ok(Artifacts { tables: vec![t], summary: to_value(&rep) })
        }
        Params::CriterionSearch(p) => {
            let ens = ensemble(exp)?;
            let search = effective_criterion_search(&ens, &p.direction, &p.grid, m, &p.constants, opts)?;
            let mut t = criterion_table();
            for c in &search.cells {
                t.push(criterion_row(c));
            }
            let summary = json!({
                "first_passing_length": search.first_passing_length,
                "best": search.best,
                "cells": search.cells.len(),
            });
            Ok(Artifacts { tables: vec![t], summary })
        }
        Params::Bands(p) => {
            let ens = ensemble(exp)?;
            if p.spec.direction.len() != ens.dim() {
                return Err(Error::SpecInvalid("direction dimension mismatch".into()));
            }
            let samples = rho_samples(&ens, &p.spec.region(), m, opts)?;
            let dec = rho_band_decomposition(&samples, &p.bands)?;
            let mut bands = table("bands", &["band", "count", "mass"], None, &[]);
            for (j, (c, mass)) in dec.counts.iter().zip(&dec.masses).enumerate() {
                bands.push(vec![j.to_string(), c.to_string(), num(*mass)]);
            }
            let mut rows = table("samples", &["replica", "h", "rho"], None, &[]);
            for (i, s) in samples.iter().enumerate() {
                rows.push(vec![i.to_string(), num(s.h), num(s.rho)]);
            }
            Ok(Artifacts { tables: vec![bands, rows], summary: to_value(&dec) })
        }
        Params::Ladder(p) => {
            let ladder = build_ladder(p.length, &p.ladder)?;
            let mut t = table("ladder", &["level", "scale"], None, &[]);
            for (k, s) in ladder.levels.iter().enumerate() {
                t.push(vec![(k + 1).to_string(), s.to_string()]);
            }
            Ok(Artifacts { tables: vec![t], summary: to_value(&ladder) })
        }
        Params::Census(p) => {
            let ens = ensemble(exp)?;
            let ladder = build_ladder(p.length, &p.ladder)?;
            let references = ladder
                .levels
                .iter()
                .map(|&n| {
                    let c = &p.classify;
                    annealed_reference(&ens, n, c.theta, &p.v_hat, p.reference_replicas, c.test_sites, opts)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut env = ens.replica(p.replica).env;
            if let Some(o) = &p.overlay {
                env = apply_trap(&env, o)?;
            }
            let census =
                bad_block_census(&env, p.length, &ladder, &p.ladder, &p.classify, &references, &p.v_hat, opts)?;
            let mut t = table(
                "census",
                &["level", "scale"],
                Some(("anchor_x", ens.dim())),
                &[
                    "metric_1",
                    "metric_2",
                    "metric_3",
                    "exit_threshold",
                    "expectation_threshold",
                    "cube_threshold",
                    "good",
                    "borderline",
                ],
            );
            for (k, level) in census.levels.iter().enumerate() {
                for r in &level.reports {
                    let mut row = vec![(k + 1).to_string(), level.scale.to_string()];
                    row.extend(coords(&r.anchor));
                    row.extend([
                        num(r.metric_1),
                        num(r.metric_2),
                        num(r.metric_3),
                        num(r.thresholds.exit),
                        num(r.thresholds.expectation),
                        num(r.thresholds.cube),
                        flag(r.good),
                        flag(r.borderline),
                    ]);
                    t.push(row);
                }
            }
            let levels: Vec<Value> = census
                .levels
                .iter()
                .map(|l| json!({ "scale": l.scale, "blocks": l.blocks, "bad": l.bad }))
                .collect();
            let summary = json!({
                "length": census.length,
                "ladder": ladder,
                "levels": levels,
                "threshold": census.threshold,
                "theta_holds": census.theta_holds,
            });
            Ok(Artifacts { tables: vec![t], summary })
        }
        Params::Tails(q) => {
            let ens = ensemble(exp)?;
            let rep = atypical_exit_tail(&ens, q, opts)?;
            let mut t = table(
                "tails",
                &["replica", "seed", "trapped", "right_prob", "lo", "hi", "exact", "below"],
                None,
                &[],
            );
            for e in &rep.environments {
                t.push(vec![
                    e.replica.to_string(),
                    e.seed.to_string(),
                    flag(e.trapped),
                    num(e.right_prob),
                    num(e.lo),
                    num(e.hi),
                    flag(e.exact),
                    flag(e.below),
                ]);
            }
            let summary = json!({
                "query": rep.query,
                "threshold": rep.threshold,
                "underflow": rep.underflow,
                "fraction": rep.fraction,
                "grid": rep.grid,
                "tail_exponent": rep.tail_exponent,
            });
            Ok(Artifacts { tables: vec![t], summary })
        }
        Params::Floor(p) => {
            let ens = ensemble(exp)?;
            let start = p.start.unwrap_or_else(|| Site::origin(ens.dim()));
            let rep = exit_point_floor(&ens, p.length, m, p.c_prime, start, &p.v_hat, opts)?;
            let mut t = table("floor", &[], Some(("x", ens.dim())), &["admissible", "probability", "scaled"]);
            for r in &rep.table {
                let mut row = coords(&r.site);
                row.extend([flag(r.admissible), num(r.prob), num(r.scaled)]);
                t.push(row);
            }
            let mut summary = to_value(&rep);
            summary.as_object_mut().expect("object").remove("table");
            Ok(Artifacts { tables: vec![t], summary })
        }
        Params::Direction(p) => {
            let ens = ensemble(exp)?;
            let gap = direction_gap(&ens, p)?;
            let mut t = table("direction", &["axis", "v_hat", "v_hat_l"], None, &[]);
            for (j, (a, b)) in gap.v_hat.iter().zip(&gap.v_hat_l).enumerate() {
                t.push(vec![(j + 1).to_string(), num(*a), num(*b)]);
            }
            Ok(Artifacts { tables: vec![t], summary: to_value(&gap) })
        }
        Params::Fluctuation(p) => {
            let ens = ensemble(exp)?;
            let rep = transversal_fluctuation_tail(&ens, p)?;
            let mut t = table("fluctuation", &["event", "count", "trials", "estimate", "lo", "hi"], None, &[]);
            for (name, pr) in [("transversal", &rep.transversal), ("backtrack", &rep.backtrack), ("union", &rep.union)] {
                let mut row = vec![name.to_string()];
                row.extend(proportion_cells(pr));
                t.push(row);
            }
            Ok(Artifacts { tables: vec![t], summary: to_value(&rep) })
        }
        Params::Intersections(p) => {
            let ens = ensemble(exp)?;
            let rep = intersection_census(&ens, p)?;
            let mut counts = table("intersections", &["replica", "count"], None, &[]);
            for (i, c) in rep.counts.iter().enumerate() {
                counts.push(vec![i.to_string(), c.to_string()]);
            }
            let mut tail =
                table("intersection_tail", &["multiplier", "bound", "exceed", "trials", "estimate", "lo", "hi"], None, &[]);
            for r in &rep.tail {
                let mut row = vec![r.multiplier.to_string(), r.bound.to_string()];
                row.extend(proportion_cells(&r.exceed));
                tail.push(row);
            }
            let mut summary = to_value(&rep);
            summary.as_object_mut().expect("object").remove("counts");
            Ok(Artifacts { tables: vec![counts, tail], summary })
        }
        Params::Llt(p) => {
            let law = match &p.law {
                LawSpec::SimpleRandomWalk { d } => LatticeLaw64::simple_random_walk(*d),
                LawSpec::Kernel { probs } => LatticeLaw64::from_kernel(probs)?,
            };
            let rep = llt_discrepancy_report(&law, &p.n_grid, p.support_cap)?;
            let mut t = table("llt", &["n", "statistic", "value"], None, &[]);
            for r in &rep.rows {
                let mut stats = vec![
                    ("sup", r.sup),
                    ("first_difference", r.first_difference),
                    ("second_difference", r.second_difference),
                ];
                if let Some(x) = r.mixed_difference {
                    stats.push(("mixed_difference", x));
                }
                for (name, v) in stats {
                    t.push(vec![r.n.to_string(), name.to_string(), num(v)]);
                }
            }
            let summary = json!({
                "dim": rep.dim,
                "parity_restricted": rep.parity_restricted,
                "step": rep.step,
                "exponents": rep.exponents,
            });
            Ok(Artifacts { tables: vec![t], summary })
        }
        Params::ExitKernel(p) => {
            let ens = ensemble(exp)?;
            let rep = exit_kernel_smoothness(&ens, &p.lengths, m, &p.v_hat, opts)?;
            let mut t = table(
                "exit_kernel",
                &["length", "right_mass", "sup", "sup_difference", "sup_scaled", "difference_scaled"],
                None,
                &[],
            );
            for r in &rep.rows {
                t.push(vec![
                    r.length.to_string(),
                    num(r.right_mass),
                    num(r.sup),
                    num(r.sup_difference),
                    num(r.sup_scaled),
                    num(r.difference_scaled),
                ]);
            }
            Ok(Artifacts { tables: vec![t], summary: to_value(&rep) })
        }
    }
}

fn criterion_table() -> Table {
    table(
        "criterion",
        &[
            "length",
            "width",
            "a",
            "replicas",
            "mean_rho_a",
            "std_error",
            "median_rho_a",
            "bootstrap_lo",
            "bootstrap_hi",
            "prefactor",
            "value",
            "half_width",
            "pass",
            "heavy_tailed",
        ],
        None,
        &[],
    )
}

fn criterion_row(r: &CriterionReport) -> Vec<String> {
    vec![
        num(r.spec.length),
        num(r.spec.width),
        num(r.a),
        r.replicas.to_string(),
        num(r.mean_rho_a.mean),
        num(r.mean_rho_a.std_error),
        num(r.median_rho_a),
        num(r.bootstrap_lo),
        num(r.bootstrap_hi),
        num(r.prefactor),
        num(r.value),
        num(r.half_width),
        flag(r.pass),
        flag(r.heavy_tailed),
    ]
}

/// Whether a failure of the operations points at the configuration rather
/// than at the run.
pub fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::ModelInvalid(_)
            | Error::OverlayInvalid(_)
            | Error::BadParameter(_)
            | Error::SpecInvalid(_)
            | Error::StartOutside
            | Error::ReferenceMismatch(_)
    )
}
