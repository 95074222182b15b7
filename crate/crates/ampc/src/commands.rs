//! Subcommand implementations. Each writes one artifact directory with a manifest.
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ampc_core::checks::{self, iss_diagnostic, iss_summary, IssSummary, IssTarget};
use ampc_core::data::{self, generate_dataset, sample_states, DatasetRecord};
use ampc_core::linalg::Matrix;
use ampc_core::nn::{HyperGrid, Mlp, TrainSummary};
use ampc_core::policyfit::{self, LookAhead, PolicyModel};
use ampc_core::presets;
use ampc_core::rng::derive_seed;
use ampc_core::simulate::{
    self, closed_loop, consistency_experiment, evaluate_suite, linspace, GridPolicy, MpcPolicy, NetPolicy, NoClock,
    Policy, SuiteConfig, Trajectory,
};
use ampc_core::valuefit::{self, ErrorBounds, ValueModel};
use anyhow::{anyhow, bail, Result};
use serde_json::{json, Value};

use crate::cli::{Ctx, Method};
use crate::clock::StdClock;
use crate::config::Experiment;
use crate::exec::Threaded;
use crate::io::{dataset_to_csv, fmt_f64, parse_f64, read_dataset, read_json, to_json, Csv};
use crate::manifest::{self, sha256_hex, Manifest, OutputDir};

/// Samples per input-constraint audit.
pub const AUDIT_SAMPLES: usize = 100_000;
const DEFAULT_GRID_POINTS: usize = 100;

pub fn parse_vec(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_f64).collect()
}

pub fn parse_pair(s: &str) -> Result<[f64; 2]> {
    match parse_vec(s)?.as_slice() {
        &[a, b] if a < b => Ok([a, b]),
        _ => bail!("expected an interval a,b with a < b, got {s:?}"),
    }
}

fn experiment_of(m: &Manifest) -> Result<Experiment> {
    Experiment::from_manifest(&m.experiment, &m.meta["problem"])
}

fn same_problem(a: &Manifest, b: &Manifest) -> Result<()> {
    if a.problem_hash != b.problem_hash {
        bail!("inputs belong to different problems ({} {} vs {} {})", a.kind, a.experiment, b.kind, b.experiment);
    }
    Ok(())
}

fn iss_target(exp: &Experiment) -> IssTarget {
    if exp.tag == "unicycle" {
        IssTarget::Component(1)
    } else {
        IssTarget::Norm
    }
}

fn curve_csv(s: &TrainSummary) -> String {
    let mut c = Csv::new(&["epoch", "loss"]);
    for (e, l) in s.curve.iter().enumerate() {
        c.row(&[(e + 1).to_string(), fmt_f64(*l)]);
    }
    c.into_string()
}

/// Summary without the per-epoch curve (which goes to its own CSV).
fn brief(s: &TrainSummary) -> Value {
    json!({"final_loss": s.final_loss, "lr": s.lr, "lr_decay": s.lr_decay, "cells": s.cells})
}

fn config_key(command: &str, v: &Value) -> String {
    format!("{command}:{}", &sha256_hex(v.to_string().as_bytes())[..16])
}

/// Adds audit results under `key` to `dir/audits.json`, replacing an earlier run with the
/// same key.
pub fn append_audits(dir: &Path, key: &str, audits: Value) -> Result<()> {
    let path = dir.join("audits.json");
    let mut all: BTreeMap<String, Value> = if path.exists() { read_json(&path)? } else { BTreeMap::new() };
    all.insert(key.into(), audits);
    fs::write(&path, to_json(&all)?)?;
    Ok(())
}

pub fn gen_data(ctx: &Ctx, experiment: Option<String>, n: Option<usize>, interval: Option<String>, out: &Path) -> Result<i32> {
    let tag = experiment.or_else(|| ctx.config.experiment.clone()).ok_or_else(|| anyhow!("--experiment is required"))?;
    let exp = Experiment::resolve(&tag)?;
    let mut cfg = ctx.config.clone();
    cfg.n = n.or(cfg.n);
    if let Some(i) = interval {
        cfg.interval = Some(parse_pair(&i)?);
    }
    let plan = exp.plan(&cfg)?;
    let solver = exp.solver(&cfg);
    let states = sample_states(&plan, derive_seed(ctx.seed, 0))?;
    let records = generate_dataset(&exp.problem, &states, &solver, derive_seed(ctx.seed, 1), &Threaded::new(ctx.workers))?;
    let flagged = records.iter().filter(|r| r.flag).count();

    let mut m = Manifest::new("dataset", &exp.tag, &exp.hash(), ctx.seed, json!({"plan": plan, "solver": solver}));
    m.meta = json!({"problem": exp.spec, "rows": records.len(), "flagged": flagged});
    let mut dir = OutputDir::create(out, m)?;
    dir.write("dataset.csv", &dataset_to_csv(&records))?;
    dir.write("dataset.json", &to_json(&records)?)?;
    dir.finish()?;
    if flagged > 0 {
        eprintln!("{flagged} of {} solves failed; rows flagged", records.len());
        return Ok(2);
    }
    Ok(0)
}

pub fn load_dataset(dir: &Path) -> Result<(Manifest, Experiment, Vec<DatasetRecord>)> {
    let m = manifest::load(dir, "dataset")?;
    let exp = experiment_of(&m)?;
    let records = read_dataset(&dir.join("dataset.csv"))?;
    if data::usable(&records).next().is_none() {
        bail!("{} has no usable rows", dir.display());
    }
    Ok((m, exp, records))
}

pub fn load_value(dir: &Path) -> Result<(Manifest, Experiment, ValueModel)> {
    let m = manifest::load(dir, "value")?;
    let exp = experiment_of(&m)?;
    let vm = match m.meta["value_kind"].as_str() {
        Some("quadratic") => ValueModel::Quadratic { p: read_json::<Matrix>(&dir.join("quadratic.json"))? },
        Some("network") => {
            let net_p: Mlp = read_json(&dir.join("net_p.json"))?;
            let xi_path = dir.join("net_xi.json");
            let net_xi = if xi_path.exists() { Some(read_json::<Mlp>(&xi_path)?) } else { None };
            ValueModel::Network { net_p, net_xi }
        }
        other => bail!("unknown value kind {other:?} in {}", dir.display()),
    };
    vm.validate()?;
    Ok((m, exp, vm))
}

pub fn load_policy(dir: &Path) -> Result<(Manifest, Experiment, PolicyModel)> {
    let m = manifest::load(dir, "policy")?;
    let exp = experiment_of(&m)?;
    let p: PolicyModel = read_json(&dir.join("policy.json"))?;
    p.net.validate()?;
    Ok((m, exp, p))
}

pub fn fit_value(ctx: &Ctx, data_dir: Option<&Path>, exact: bool, experiment: Option<String>, grid: bool, out: &Path) -> Result<i32> {
    let loaded = data_dir.map(load_dataset).transpose()?;
    let exp = match (&loaded, experiment.or_else(|| ctx.config.experiment.clone())) {
        (Some((_, e, _)), _) => e.clone(),
        (None, Some(tag)) => Experiment::resolve(&tag)?,
        (None, None) => bail!("--experiment is required without --data"),
    };

    if exact {
        if !exp.is_quad1d() {
            bail!("--exact-value is only available for the quad1d experiment");
        }
        let vm = ValueModel::exact_quad1d();
        let mut m = Manifest::new("value", &exp.tag, &exp.hash(), ctx.seed, json!({"exact": true}));
        let mut meta = json!({"problem": exp.spec, "value_kind": "quadratic", "combine": "x^T P x"});
        if let Some((dm, _, records)) = &loaded {
            m.inputs.insert("dataset".into(), dm.id.clone());
            let t = data::value_targets(records)?;
            meta["eps_v"] = json!(valuefit::estimate_eps_v(&vm, &t.states, &t.totals())?);
        }
        m.meta = meta;
        let mut dir = OutputDir::create(out, m)?;
        let ValueModel::Quadratic { p } = &vm else { unreachable!() };
        dir.write("quadratic.json", &to_json(p)?)?;
        dir.finish()?;
        return Ok(0);
    }

    let (dm, _, records) = loaded.ok_or_else(|| anyhow!("--data is required unless --exact-value is given"))?;
    let targets = data::value_targets(&records)?;
    let arch = exp.value_arch(&ctx.config);
    let mut train = exp.value_train(&ctx.config);
    if grid {
        train.grid = Some(HyperGrid::extended());
    }
    let fit = valuefit::fit_value(&targets, &arch, &train, derive_seed(ctx.seed, 2))?;
    let eps = valuefit::estimate_eps_v(&fit.model, &targets.states, &targets.totals())?;

    let mut m = Manifest::new("value", &exp.tag, &exp.hash(), ctx.seed, json!({"arch": arch, "train": train}));
    m.inputs.insert("dataset".into(), dm.id.clone());
    m.meta = json!({
        "problem": exp.spec,
        "value_kind": "network",
        "combine": "max(0, net_p(x)) + max(0, net_xi(x))",
        "arch": arch,
        "eps_v": eps,
        "train_p": brief(&fit.summary_p),
        "train_xi": fit.summary_xi.as_ref().map(brief),
    });
    let metrics = json!({
        "eps_v": eps,
        "mse_p": fit.summary_p.final_loss,
        "mse_xi": fit.summary_xi.as_ref().map(|s| s.final_loss),
        "samples": targets.len(),
    });
    let mut dir = OutputDir::create(out, m)?;
    let ValueModel::Network { net_p, net_xi } = &fit.model else { unreachable!() };
    dir.write("net_p.json", &to_json(net_p)?)?;
    dir.write("curve_p.csv", &curve_csv(&fit.summary_p))?;
    if let (Some(net), Some(s)) = (net_xi, &fit.summary_xi) {
        dir.write("net_xi.json", &to_json(net)?)?;
        dir.write("curve_xi.csv", &curve_csv(s))?;
    }
    dir.write("metrics.json", &to_json(&metrics)?)?;
    dir.finish()?;
    Ok(0)
}

fn state_bounds(states: &[f64], n_x: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; n_x];
    let mut hi = vec![f64::NEG_INFINITY; n_x];
    for x in states.chunks_exact(n_x) {
        for d in 0..n_x {
            lo[d] = lo[d].min(x[d]);
            hi[d] = hi[d].max(x[d]);
        }
    }
    (lo, hi)
}

/// Input-box audit over the dataset's bounding box widened by half its extent per side.
pub fn input_audit(policy: &PolicyModel, states: &[f64], seed: u64, samples: usize) -> Result<checks::AssumptionAudit> {
    let (lo, hi) = state_bounds(states, policy.n_x());
    let (lo, hi): (Vec<f64>, Vec<f64>) = lo.iter().zip(&hi).map(|(&a, &b)| (a - 0.5 * (b - a), b + 0.5 * (b - a))).unzip();
    Ok(checks::audit_input_constraint(&mut NetPolicy::new(policy), &policy.lo, &policy.hi, &lo, &hi, samples, seed)?)
}

pub fn fit_policy(ctx: &Ctx, method: Method, data_dir: &Path, value_dir: Option<&Path>, grid: bool, out: &Path) -> Result<i32> {
    let (dm, exp, records) = load_dataset(data_dir)?;
    let value = value_dir.map(load_value).transpose()?;
    if let Some((vm, _, _)) = &value {
        same_problem(&dm, vm)?;
    }
    let states = data::states_of(&records);
    let arch = exp.policy_arch(&ctx.config);
    let mut train = exp.policy_train(&ctx.config);
    if grid {
        train.grid = Some(HyperGrid::extended());
    }
    let seed = derive_seed(ctx.seed, 3);
    let fit = match method {
        Method::Il => {
            let (_, _, vm) = value.as_ref().ok_or_else(|| anyhow!("--value is required for --method il"))?;
            policyfit::train_policy_il(&states, LookAhead::new(&exp.problem, vm), &arch, &train, seed)?
        }
        Method::Bc => policyfit::train_policy_bc(&states, &data::inputs_of(&records), &exp.problem.model, &arch, &train, seed)?,
    };
    let grid_points = ctx.config.grid_points.unwrap_or(DEFAULT_GRID_POINTS);
    let eps_pi: Option<ErrorBounds> = match &value {
        Some((_, _, vm)) if exp.problem.model.n_u() == 1 => {
            Some(policyfit::estimate_eps_pi(&fit.policy, &states, &LookAhead::new(&exp.problem, vm), grid_points)?)
        }
        _ => None,
    };
    let audit = input_audit(&fit.policy, &states, derive_seed(ctx.seed, 4), AUDIT_SAMPLES)?;

    let config = json!({"method": method.tag(), "arch": arch, "train": train, "grid_points": grid_points});
    let mut m = Manifest::new("policy", &exp.tag, &exp.hash(), ctx.seed, config.clone());
    m.inputs.insert("dataset".into(), dm.id.clone());
    if let Some((vm, _, _)) = &value {
        m.inputs.insert("value".into(), vm.id.clone());
    }
    m.meta = json!({
        "problem": exp.spec,
        "method": method.tag(),
        "arch": arch,
        "train": brief(&fit.summary),
        "eps_pi": eps_pi,
    });
    let metrics = json!({
        "method": method.tag(),
        "final_loss": fit.summary.final_loss,
        "eps_pi": eps_pi,
        "input_audit": audit,
    });
    let mut dir = OutputDir::create(out, m)?;
    dir.write("policy.json", &to_json(&fit.policy)?)?;
    dir.write("curve.csv", &curve_csv(&fit.summary))?;
    dir.write("metrics.json", &to_json(&metrics)?)?;
    dir.finish()?;
    append_audits(out, &config_key("fit-policy", &config), json!([audit]))?;
    Ok(0)
}

fn trajectory_rows(csv: &mut Csv, label: &[String], t: &Trajectory, n_x: usize, n_u: usize) {
    let steps = t.inputs.len() / n_u;
    for k in 0..=steps {
        let mut f = label.to_vec();
        f.push(k.to_string());
        f.extend(t.states[k * n_x..(k + 1) * n_x].iter().map(|&v| fmt_f64(v)));
        if k < steps {
            f.extend(t.inputs[k * n_u..(k + 1) * n_u].iter().map(|&v| fmt_f64(v)));
        } else {
            f.extend((0..n_u).map(|_| String::new()));
        }
        csv.row(&f);
    }
}

fn trajectory_header(prefix: &[&str], n_x: usize, n_u: usize) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.push("k".into());
    h.extend((0..n_x).map(|i| format!("x{i}")));
    h.extend((0..n_u).map(|i| format!("u{i}")));
    h
}

fn csv_with(header: &[String]) -> Csv {
    Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    ctx: &Ctx,
    policy_dir: Option<&Path>,
    pistar: bool,
    mpc: bool,
    value_dir: Option<&Path>,
    experiment: Option<String>,
    x0: &[String],
    steps: usize,
    out: &Path,
) -> Result<i32> {
    let policy = policy_dir.map(load_policy).transpose()?;
    let value = value_dir.map(load_value).transpose()?;
    let exp = match (&policy, &value, experiment.or_else(|| ctx.config.experiment.clone())) {
        (Some((_, e, _)), _, _) | (None, Some((_, e, _)), _) => e.clone(),
        (None, None, Some(tag)) => Experiment::resolve(&tag)?,
        _ => bail!("--experiment is required when neither a policy nor a value is given"),
    };
    if let (Some((pm, _, _)), Some((vm, _, _))) = (&policy, &value) {
        same_problem(pm, vm)?;
    }
    let n_x = exp.problem.model.n_x();
    let starts = x0.iter().map(|s| parse_vec(s)).collect::<Result<Vec<_>>>()?;
    if let Some(bad) = starts.iter().find(|s| s.len() != n_x) {
        bail!("initial state {bad:?} does not have {n_x} components");
    }
    let grid_points = ctx.config.grid_points.unwrap_or(DEFAULT_GRID_POINTS);
    let vm = value.as_ref().map(|v| &v.2);
    let (label, mut controller): (&str, Box<dyn Policy + '_>) = match (&policy, pistar, mpc) {
        (Some((_, _, p)), _, _) => ("policy", Box::new(NetPolicy::new(p))),
        (None, true, _) => {
            let vm = vm.ok_or_else(|| anyhow!("--pistar needs --value"))?;
            ("pistar", Box::new(GridPolicy::new(LookAhead::new(&exp.problem, vm), grid_points)))
        }
        (None, false, true) => ("mpc", Box::new(MpcPolicy::new(&exp.problem, exp.solver(&ctx.config), derive_seed(ctx.seed, 5)))),
        _ => bail!("choose a controller: --policy DIR, --pistar or --mpc"),
    };
    let clock = StdClock::new();
    let iss_cfg = ctx.config.iss.unwrap_or_default();
    let n_u = exp.problem.model.n_u();
    let mut csv = csv_with(&trajectory_header(&["traj"], n_x, n_u));
    let mut summaries = Vec::new();
    let mut times = Vec::new();
    for (i, s) in starts.iter().enumerate() {
        let t = closed_loop(controller.as_mut(), &exp.problem, vm, s, steps, &clock)?;
        trajectory_rows(&mut csv, &[i.to_string()], &t, n_x, n_u);
        let iss = iss_diagnostic(&t.states, n_x, iss_target(&exp), &iss_cfg);
        summaries.push(json!({"x0": s, "p_t": t.p_t, "p_c": t.p_c, "violations": t.violations, "iss": iss}));
        times.extend(t.step_times);
    }
    let config = json!({"controller": label, "x0": starts, "steps": steps, "grid_points": grid_points});
    let mut m = Manifest::new("simulation", &exp.tag, &exp.hash(), ctx.seed, config);
    if let Some((pm, _, _)) = &policy {
        m.inputs.insert("policy".into(), pm.id.clone());
    }
    if let Some((vm, _, _)) = &value {
        m.inputs.insert("value".into(), vm.id.clone());
    }
    m.meta = json!({"problem": exp.spec});
    let mut dir = OutputDir::create(out, m)?;
    dir.write("trajectories.csv", &csv.into_string())?;
    dir.write("summary.json", &to_json(&summaries)?)?;
    dir.write_timing("timing.json", &to_json(&json!({"median_step_time_s": median(times)}))?)?;
    dir.finish()?;
    Ok(0)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// One benchmark row.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TableRow {
    pub method: String,
    pub perf: f64,
    pub p_t: f64,
    pub p_c: f64,
    pub violations: usize,
    pub n_traj: usize,
}

pub fn evaluate(ctx: &Ctx, value_dir: &Path, il: Option<&Path>, bc: Option<&Path>, with_pistar: bool, out: &Path) -> Result<i32> {
    let (vmf, exp, vm) = load_value(value_dir)?;
    let mut policies = Vec::new();
    for (tag, dir) in [("il", il), ("bc", bc)] {
        if let Some(d) = dir {
            let (pm, _, p) = load_policy(d)?;
            same_problem(&vmf, &pm)?;
            policies.push((tag, pm, p));
        }
    }
    let suite: SuiteConfig = ctx.config.suite.clone().unwrap_or_default();
    let grid_points = ctx.config.grid_points.unwrap_or(DEFAULT_GRID_POINTS);
    let suite_seed = derive_seed(ctx.seed, 6);
    let clock = StdClock::new();
    let iss_cfg = ctx.config.iss.unwrap_or_default();
    let (n_x, n_u) = (exp.problem.model.n_x(), exp.problem.model.n_u());

    let mut runs: Vec<(String, simulate::SuiteReport)> = Vec::new();
    for (tag, _, p) in &policies {
        runs.push((tag.to_string(), evaluate_suite(&mut NetPolicy::new(p), &exp.problem, Some(&vm), &suite, suite_seed, &clock)?));
    }
    if with_pistar && n_u == 1 {
        let mut g = GridPolicy::new(LookAhead::new(&exp.problem, &vm), grid_points);
        runs.push(("pistar".into(), evaluate_suite(&mut g, &exp.problem, Some(&vm), &suite, suite_seed, &clock)?));
    }

    let config = json!({"suite": suite, "grid_points": grid_points, "pistar": with_pistar && n_u == 1});
    let mut m = Manifest::new("evaluation", &exp.tag, &exp.hash(), ctx.seed, config.clone());
    m.inputs.insert("value".into(), vmf.id.clone());
    for (tag, pm, _) in &policies {
        m.inputs.insert(tag.to_string(), pm.id.clone());
    }
    m.meta = json!({"problem": exp.spec});
    let mut dir = OutputDir::create(out, m)?;

    let mut table = Csv::new(&["method", "perf", "p_t", "p_c", "eval_time", "violations"]);
    let mut rows = Vec::new();
    let mut timing = BTreeMap::new();
    let mut audits = Vec::new();
    for (tag, r) in &runs {
        let a = &r.aggregates;
        table.row(&[
            tag.clone(),
            fmt_f64(a.mean_perf),
            fmt_f64(a.mean_p_t),
            fmt_f64(a.mean_p_c),
            fmt_f64(a.median_step_time_s),
            a.total_violations.to_string(),
        ]);
        rows.push(TableRow {
            method: tag.clone(),
            perf: a.mean_perf,
            p_t: a.mean_p_t,
            p_c: a.mean_p_c,
            violations: a.total_violations,
            n_traj: a.n_traj,
        });
        timing.insert(tag.clone(), a.median_step_time_s);

        let mut per = Csv::new(&["traj", "x0_0", "x0_1", "p_t", "p_c", "violations"]);
        for (i, t) in r.trajectories.iter().enumerate() {
            let mut f = vec![i.to_string()];
            f.extend((0..2).map(|d| t.x0.get(d).map_or(String::new(), |&v| fmt_f64(v))));
            f.extend([fmt_f64(t.p_t), fmt_f64(t.p_c), t.violations.to_string()]);
            per.row(&f);
        }
        dir.write(&format!("trajectories_{tag}.csv"), &per.into_string())?;
        let mut states = csv_with(&trajectory_header(&["traj"], n_x, n_u));
        for (i, t) in r.trajectories.iter().take(10).enumerate() {
            trajectory_rows(&mut states, &[i.to_string()], t, n_x, n_u);
        }
        dir.write(&format!("states_{tag}.csv"), &states.into_string())?;
        let iss: IssSummary =
            iss_summary(r.trajectories.iter().map(|t| iss_diagnostic(&t.states, n_x, iss_target(&exp), &iss_cfg)).collect());
        audits.push(json!({"method": tag, "iss": {"pass": iss.pass, "n_pass": iss.n_pass, "n_traj": iss.n_traj, "worst_offset": iss.worst_offset}}));
    }
    dir.write("metrics.json", &to_json(&json!({ "rows": rows }))?)?;
    dir.write_timing("table.csv", &table.into_string())?;
    dir.write_timing("timing.json", &to_json(&timing)?)?;
    dir.finish()?;
    append_audits(out, &config_key("evaluate", &config), Value::Array(audits))?;
    Ok(0)
}

pub fn consistency(ctx: &Ctx, ns: Option<Vec<usize>>, seeds: Option<Vec<u64>>, interval: Option<String>, out: &Path) -> Result<i32> {
    let mut cfg = ctx.config.consistency.clone().unwrap_or_default();
    if let Some(ns) = ns {
        cfg.ns_list = ns;
    }
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(i) = interval.or_else(|| ctx.config.interval.map(|[a, b]| format!("{a},{b}"))) {
        cfg.interval = parse_pair(&i)?;
    }
    if cfg.ns_list.is_empty() || cfg.seeds.is_empty() || cfg.ns_list.contains(&0) {
        bail!("consistency needs nonempty sample sizes and seeds");
    }
    let rows = consistency_experiment(&cfg, &Threaded::new(ctx.workers))?;
    let mut csv = Csv::new(&["method", "n_s", "seed", "mean_dist", "sup_dist", "max_abs_u", "final_loss"]);
    for r in &rows {
        csv.row(&[
            r.method.clone(),
            r.n_s.to_string(),
            r.seed.to_string(),
            fmt_f64(r.mean_dist),
            fmt_f64(r.sup_dist),
            fmt_f64(r.max_abs_u),
            fmt_f64(r.final_loss),
        ]);
    }
    let exp = Experiment::resolve("quad1d")?;
    let mut m = Manifest::new("consistency", "quad1d", &exp.hash(), ctx.seed, json!(cfg));
    m.meta = json!({"problem": exp.spec});
    let mut dir = OutputDir::create(out, m)?;
    dir.write("consistency.csv", &csv.into_string())?;
    dir.write("rows.json", &to_json(&rows)?)?;
    dir.finish()?;
    Ok(0)
}

/// Input ids that must agree between the two policies of a report.
fn check_report_provenance(il: &Manifest, bc: &Manifest, value: Option<&Manifest>) -> Result<()> {
    same_problem(il, bc)?;
    if il.meta["method"] != "il" || bc.meta["method"] != "bc" {
        bail!("--il and --bc must point to policies trained with those methods");
    }
    if il.inputs.get("dataset") != bc.inputs.get("dataset") {
        bail!("mixed provenance: the two policies were trained on different datasets");
    }
    if let Some(v) = value {
        same_problem(il, v)?;
        for p in [il, bc] {
            if let Some(id) = p.inputs.get("value") {
                if id != &v.id {
                    bail!("mixed provenance: the {} policy was built with a different value function", p.meta["method"]);
                }
            }
        }
    }
    Ok(())
}

pub fn report(ctx: &Ctx, il_dir: &Path, bc_dir: &Path, value_dir: Option<&Path>, out: &Path) -> Result<i32> {
    let (ilm, exp, il) = load_policy(il_dir)?;
    let (bcm, _, bc) = load_policy(bc_dir)?;
    let value = value_dir.map(load_value).transpose()?;
    check_report_provenance(&ilm, &bcm, value.as_ref().map(|v| &v.0))?;
    let vm = value.as_ref().map(|v| &v.2);
    let grid_points = ctx.config.grid_points.unwrap_or(DEFAULT_GRID_POINTS);
    let (n_x, n_u) = (exp.problem.model.n_x(), exp.problem.model.n_u());
    let iss_cfg = ctx.config.iss.unwrap_or_default();

    let mut files: Vec<(String, String)> = Vec::new();
    let mut audits = Vec::new();
    if n_x == 1 && n_u == 1 {
        let [a, b] = ctx.config.interval.unwrap_or([-1.0, 1.0]);
        let mut csv = Csv::new(&["x", "il", "bc", "pistar", "mpc_plus", "mpc_minus"]);
        for x in linspace(a, b, 401) {
            let ps = match vm {
                Some(v) => fmt_f64(simulate::pi_star_grid(&[x], v, &exp.problem, grid_points.max(1000))?),
                None => String::new(),
            };
            csv.row(&[fmt_f64(x), fmt_f64(il.act(&[x])?[0]), fmt_f64(bc.act(&[x])?[0]), ps, fmt_f64(x), fmt_f64(-x)]);
        }
        files.push(("fig1_policies.csv".into(), csv.into_string()));
        let mut runs = Csv::new(&["method", "x0", "k", "x", "u"]);
        for (tag, p) in [("il", &il), ("bc", &bc)] {
            let mut diag = Vec::new();
            for x0 in linspace(-1.0, 1.0, 21) {
                let t = closed_loop(&mut NetPolicy::new(p), &exp.problem, vm, &[x0], 100, &NoClock)?;
                for k in 0..=100 {
                    let u = if k < 100 { fmt_f64(t.inputs[k]) } else { String::new() };
                    runs.row(&[tag.into(), fmt_f64(x0), k.to_string(), fmt_f64(t.states[k]), u]);
                }
                diag.push(iss_diagnostic(&t.states, 1, IssTarget::Norm, &iss_cfg));
            }
            audits.push(json!({"method": tag, "iss": iss_summary(diag)}));
        }
        files.push(("closed_loop.csv".into(), runs.into_string()));
    } else if n_x == 2 {
        let mut csv = csv_with(&trajectory_header(&["method", "start"], n_x, n_u));
        let mut controllers: Vec<(&str, Box<dyn Policy>)> =
            vec![("il", Box::new(NetPolicy::new(&il))), ("bc", Box::new(NetPolicy::new(&bc)))];
        if let (Some(v), 1) = (vm, n_u) {
            controllers.push(("pistar", Box::new(GridPolicy::new(LookAhead::new(&exp.problem, v), grid_points))));
        }
        for (tag, c) in controllers.iter_mut() {
            let mut diag = Vec::new();
            for (i, s) in presets::fig2_starts().iter().enumerate() {
                let t = closed_loop(c.as_mut(), &exp.problem, vm, s, 100, &NoClock)?;
                trajectory_rows(&mut csv, &[tag.to_string(), i.to_string()], &t, n_x, n_u);
                diag.push(iss_diagnostic(&t.states, n_x, iss_target(&exp), &iss_cfg));
            }
            audits.push(json!({"method": tag, "iss": iss_summary(diag)}));
        }
        files.push(("fig2_trajectories.csv".into(), csv.into_string()));
        if let Some(v) = vm {
            let mut lv = Csv::new(&["x0", "x1", "V", "V_p", "V_xi"]);
            for x1 in linspace(-2.0, 2.0, 81) {
                for x2 in linspace(-1.5, 1.5, 61) {
                    let (p, xi) = v.parts(&[x1, x2]);
                    lv.row(&[fmt_f64(x1), fmt_f64(x2), fmt_f64(p + xi), fmt_f64(p), fmt_f64(xi)]);
                }
            }
            files.push(("value_levels.csv".into(), lv.into_string()));
        }
    } else {
        bail!("reports cover scalar and planar experiments only");
    }

    let config = json!({"grid_points": grid_points, "iss": iss_cfg});
    let mut m = Manifest::new("report", &exp.tag, &exp.hash(), ctx.seed, config.clone());
    m.inputs.insert("il".into(), ilm.id.clone());
    m.inputs.insert("bc".into(), bcm.id.clone());
    if let Some((v, _, _)) = &value {
        m.inputs.insert("value".into(), v.id.clone());
    }
    m.meta = json!({"problem": exp.spec});
    let mut dir = OutputDir::create(out, m)?;
    for (name, content) in &files {
        dir.write(name, content)?;
    }
    dir.write("iss.json", &to_json(&audits)?)?;
    dir.finish()?;
    let mut all = checks::unchecked_assumptions().into_iter().map(|a| json!(a)).collect::<Vec<_>>();
    all.extend(audits);
    append_audits(out, &config_key("report", &config), Value::Array(all))?;
    Ok(0)
}
