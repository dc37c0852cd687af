//! One function per subcommand. Each validates its arguments, writes its
//! files and prints a summary.

use std::collections::hash_map::{Entry, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gmip::accountant::{
    compose_k_steps, compose_subsampled, dp_to_mip, mip_to_dp, mu_step, n_effective, subsampling_ratio, Notion,
    SubsamplingPlan,
};
use gmip::calibrator::{calibrate, format_tau_table, preset, reproduce_tau_table, write_tau_csv, CalibrationTarget};
use gmip::glir::{run_audit, AuditConfig, Estimation, Family, GlirScorer, GradientModel};
use gmip::linreg_lrt::{run_linreg_experiment, AUDIT_FPRS};
use gmip::roc::{ci_check, CiMode};
use gmip::sgd::{train, TrainSpec};
use gmip::trace::{Background, Trace};
use gmip::tradeoff::{evaluation_grid, gaussian_limit_gap, tabulate, OneStepParams, TradeoffCurve};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::output::{emit, io_error, num, usage, CliError, CliResult, Format};
use crate::{
    AccountantArgs, AuditKind, CalibrateArgs, Cli, Command, Conversion, FamilyArg, GlirSimArgs, GlirTraceArgs,
    LinregArgs, NotionArg, ReproduceWhat, TradeoffArgs, TrainArgs,
};

/// FPRs at which audits compare against the analytical curve.
const CHECK_FPRS: [f64; 5] = [0.01, 0.05, 0.1, 0.25, 0.5];

pub fn run(cli: &Cli) -> CliResult<()> {
    let ctx = Context {
        format: cli.format,
        out_dir: cli.out_dir.clone(),
    };
    match &cli.command {
        Command::Tradeoff(a) => tradeoff(&ctx, a),
        Command::Accountant(a) => accountant(&ctx, a),
        Command::Calibrate(a) => calibrate_cmd(&ctx, a),
        Command::Reproduce { what: ReproduceWhat::TauTable } => tau_table(&ctx),
        Command::Audit { kind } => match kind {
            AuditKind::GlirSim(a) => glir_sim(&ctx, a),
            AuditKind::GlirTrace(a) => glir_trace(&ctx, a),
            AuditKind::Linreg(a) => linreg(&ctx, a),
        },
        Command::Train(a) => train_cmd(&ctx, a),
    }
}

struct Context {
    format: Format,
    out_dir: PathBuf,
}

impl Context {
    /// Creates `name` in the output directory and hands a writer to `body`.
    fn write_file(
        &self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> gmip::Result<()>,
    ) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out_dir).map_err(|e| io_error(&self.out_dir, e))?;
        let path = self.out_dir.join(name);
        let file = File::create(&path).map_err(|e| io_error(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w).map_err(|e| CliError::from(e).in_file(&path))?;
        w.flush().map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

fn as_count(x: f64, name: &str) -> CliResult<u64> {
    if x >= 0.0 && x.fract() == 0.0 && x <= u64::MAX as f64 {
        Ok(x as u64)
    } else {
        Err(usage(format!("{name} must be a non-negative integer, got {x}")))
    }
}

fn tradeoff(ctx: &Context, a: &TradeoffArgs) -> CliResult<()> {
    let mut summary = serde_json::Map::new();
    let curve = match (a.gmip, &a.onestep) {
        (Some(mu), None) => {
            summary.insert("curve".into(), json!("gaussian"));
            summary.insert("mu".into(), num(mu));
            TradeoffCurve::gaussian(mu)?
        }
        (None, Some(v)) => {
            let n = as_count(v[0], "N")?;
            let d = u32::try_from(as_count(v[1], "D")?).map_err(|_| usage("D is too large"))?;
            let params = OneStepParams::new(n, d, v[2], v[3], v[4])?;
            summary.insert("curve".into(), json!("onestep"));
            summary.insert("n_effective".into(), num(params.n_effective()));
            summary.insert("mu_step".into(), num(mu_step(&params)));
            summary.insert("gaussian_sup_gap".into(), num(gaussian_limit_gap(&params)));
            TradeoffCurve::OneStep(params)
        }
        _ => return Err(usage("give exactly one of --gmip or --onestep")),
    };
    let (path, rows) = match a.grid {
        Some(g) => {
            let table = tabulate(&curve, g)?;
            (ctx.write_file(&a.output, |w| table.write_csv(w, &[]))?, g)
        }
        None => {
            let mut grid = evaluation_grid();
            grid.extend(CHECK_FPRS);
            grid.push(0.0);
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            (ctx.write_file(&a.output, |w| curve.write_csv(w, &grid))?, grid.len())
        }
    };
    summary.insert("rows".into(), json!(rows));
    summary.insert("file".into(), path_value(&path));
    emit(&Value::Object(summary), ctx.format);
    Ok(())
}

/// Accountant inputs; also the `input` block of the JSON report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AccountantInput {
    n: u64,
    d: u64,
    tau2: f64,
    #[serde(with = "extended_f64")]
    clip: f64,
    k: Option<f64>,
    #[serde(flatten)]
    mode: AccountantMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum AccountantMode {
    Single,
    Steps { steps: u64 },
    Subsample { dataset_size: u64, epochs: f64 },
    Convert { direction: Conversion, mu: f64 },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AccountantConfig {
    Report { input: AccountantInput },
    Input(AccountantInput),
}

fn accountant_input(a: &AccountantArgs) -> CliResult<AccountantInput> {
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let cfg: AccountantConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::from(gmip::Error::from(e)).in_file(path))?;
        return Ok(match cfg {
            AccountantConfig::Report { input } | AccountantConfig::Input(input) => input,
        });
    }
    let mode = match (a.steps, &a.subsample, a.convert) {
        (Some(steps), None, None) => AccountantMode::Steps { steps },
        (None, Some(v), None) => AccountantMode::Subsample {
            dataset_size: as_count(v[0], "N")?,
            epochs: v[1],
        },
        (None, None, Some(direction)) => AccountantMode::Convert {
            direction,
            mu: a.mu.ok_or_else(|| usage("--convert needs --mu"))?,
        },
        (None, None, None) => AccountantMode::Single,
        _ => return Err(usage("--steps, --subsample and --convert are exclusive")),
    };
    Ok(AccountantInput {
        n: a.n.ok_or_else(|| usage("--n is required"))?,
        d: a.d.ok_or_else(|| usage("--d is required"))?,
        tau2: a.tau2,
        clip: a.clip,
        k: a.k,
        mode,
    })
}

fn accountant(ctx: &Context, a: &AccountantArgs) -> CliResult<()> {
    let input = accountant_input(a)?;
    let d = u32::try_from(input.d).map_err(|_| usage("d is too large"))?;
    let params = OneStepParams::new(input.n, d, input.tau2, input.clip, input.k.unwrap_or(input.d as f64))?;
    let ne = n_effective(input.n, input.tau2, input.clip)?;
    let step = mu_step(&params);
    let mut summary = serde_json::Map::new();
    summary.insert("input".into(), serde_json::to_value(&input).map_err(gmip::Error::from)?);
    summary.insert("n_effective".into(), num(ne));
    summary.insert("mu_step".into(), num(step));
    match &input.mode {
        AccountantMode::Single => {}
        AccountantMode::Steps { steps } => {
            summary.insert("mu".into(), num(compose_k_steps(step, *steps)?));
        }
        AccountantMode::Subsample { dataset_size, epochs } => {
            let plan = SubsamplingPlan::new(*dataset_size, input.n, *epochs)?;
            let c = subsampling_ratio(&plan);
            summary.insert("iterations".into(), num(plan.iterations()));
            summary.insert("ratio".into(), num(c));
            summary.insert("mu".into(), num(compose_subsampled(step, c)?));
        }
        AccountantMode::Convert { direction, mu } => {
            let out = match direction {
                Conversion::DpToMip => dp_to_mip(*mu, input.n, input.d, input.clip)?,
                Conversion::MipToDp => mip_to_dp(*mu, input.n, input.d, input.clip)?,
            };
            summary.insert("converted_mu".into(), num(out));
        }
    }
    emit(&Value::Object(summary), ctx.format);
    Ok(())
}

fn calibrate_cmd(ctx: &Context, a: &CalibrateArgs) -> CliResult<()> {
    let notion = match a.notion {
        NotionArg::Gmip => Notion::Gmip,
        NotionArg::Gdp => Notion::Gdp,
    };
    let target = match &a.dataset {
        Some(name) => {
            let p = preset(name).ok_or_else(|| usage(format!("unknown dataset preset `{name}`")))?;
            CalibrationTarget::new(notion, a.mu, p.plan(), p.d, a.clip.unwrap_or(p.clip), a.k)?
        }
        None => {
            let need = |name: &str| usage(format!("--{name} is required without --dataset"));
            let plan = SubsamplingPlan::new(
                a.dataset_size.ok_or_else(|| need("dataset-size"))?,
                a.batch_size.ok_or_else(|| need("batch-size"))?,
                a.epochs.ok_or_else(|| need("epochs"))?,
            )?;
            let clip = a.clip.ok_or_else(|| need("clip"))?;
            CalibrationTarget::new(notion, a.mu, plan, a.d.ok_or_else(|| need("d"))?, clip, a.k)?
        }
    };
    let tau = calibrate(&target)?;
    let summary = json!({
        "notion": notion.to_string(),
        "target_mu": num(target.target_mu),
        "dataset_size": target.plan.dataset_size(),
        "batch_size": target.plan.batch_size(),
        "epochs": num(target.plan.epochs()),
        "d": target.d,
        "clip": num(target.clip),
        "k": num(target.k),
        "tau": num(tau),
        "achieved_mu": num(target.achieved_mu(tau)),
        "gdp_mu": num(target.gdp_mu(tau)),
        "gmip_mu": num(target.gmip_mu(tau)),
    });
    emit(&summary, ctx.format);
    Ok(())
}

fn tau_table(ctx: &Context) -> CliResult<()> {
    let cells = reproduce_tau_table()?;
    let path = ctx.write_file("tau_table.csv", |w| write_tau_csv(&cells, w))?;
    let diffs: Vec<Value> = cells
        .iter()
        .filter(|c| !c.matches())
        .map(|c| {
            json!({"dataset": c.dataset, "notion": c.notion.to_string(), "mu": num(c.mu),
                   "tau": num(c.tau), "reference": num(c.reference)})
        })
        .collect();
    match ctx.format {
        Format::Text => {
            print!("{}", format_tau_table(&cells));
            println!("cells differing from the reference by more than 0.01: {} of {}", diffs.len(), cells.len());
            for d in &diffs {
                println!("  {d}");
            }
            println!("file: {}", path.display());
        }
        Format::Csv => {
            write_tau_csv(&cells, std::io::stdout().lock())?;
        }
        Format::Json => {
            let rows: Vec<Value> = cells
                .iter()
                .map(|c| {
                    json!({"dataset": c.dataset, "notion": c.notion.to_string(), "mu": num(c.mu),
                           "tau": num(c.tau), "reference": num(c.reference), "matches": c.matches()})
                })
                .collect();
            emit(&json!({"mismatches": diffs.len(), "file": path_value(&path), "cells": rows}), Format::Json);
        }
    }
    Ok(())
}

fn glir_sim(ctx: &Context, a: &GlirSimArgs) -> CliResult<()> {
    let family = match a.family {
        FamilyArg::Gaussian => Family::Gaussian,
        FamilyArg::Uniform => Family::Uniform,
    };
    let d = u32::try_from(a.d).map_err(|_| usage("--d is too large"))?;
    let model = GradientModel::standard(a.d, family)?;
    let estimation = match a.background {
        Some(samples) => Estimation::Estimated { samples, ridge: a.ridge },
        None => Estimation::Exact,
    };
    let cfg = AuditConfig {
        n: a.n,
        steps: a.steps,
        trials: a.trials,
        tau2: a.tau2,
        clip: a.clip,
        estimation,
        seed: a.seed,
    };
    let params = OneStepParams::new(a.n as u64, d, a.tau2, a.clip, a.d as f64)?;
    let out = run_audit(&model, &cfg)?;
    // the exact one-step curve is only exact for a single unclipped step;
    // otherwise the composed Gaussian approximation serves as a bound
    let (curve, mode) = if a.steps == 1 && a.clip.is_infinite() {
        (TradeoffCurve::OneStep(params), CiMode::TwoSided)
    } else {
        let mu = compose_k_steps(mu_step(&params), a.steps as u64)?;
        (TradeoffCurve::gaussian(mu)?, CiMode::Bound)
    };
    let rows = ci_check(&out.roc, &curve, &CHECK_FPRS, a.k_se, mode);
    let roc_path = ctx.write_file("glir_sim_roc.csv", |w| out.roc.write_csv(w))?;
    let curve_path = ctx.write_file("glir_sim_analytical.csv", |w| curve.write_csv(w, &evaluation_grid()))?;
    let passed = rows.iter().all(|r| r.pass);
    let summary = json!({
        "trials_per_class": a.trials,
        "analytical": match mode { CiMode::TwoSided => "onestep", CiMode::Bound => "gaussian bound" },
        "auc": num(out.roc.auc()),
        "pass": passed,
        "roc_file": path_value(&roc_path),
        "analytical_file": path_value(&curve_path),
        "checks": rows.iter().map(|r| json!({
            "fpr": num(r.fpr), "empirical_fnr": num(r.empirical_fnr),
            "analytical_fnr": num(r.analytical_fnr), "se": num(r.se), "pass": r.pass,
        })).collect::<Vec<_>>(),
    });
    emit(&summary, ctx.format);
    if passed {
        Ok(())
    } else {
        Err(CliError::FailedCheck("empirical ROC is outside the confidence band".into()))
    }
}

fn read_trace(path: &Path, batch_size: Option<usize>) -> CliResult<Trace> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let parsed = if bytes.starts_with(b"step,") {
        let n = batch_size.ok_or_else(|| usage("CSV traces need --batch-size").in_file(path))?;
        Trace::read_csv(bytes.as_slice(), n)
    } else {
        Trace::read_binary(bytes.as_slice())
    };
    parsed.map_err(|e| CliError::from(e).in_file(path))
}

fn glir_trace(ctx: &Context, a: &GlirTraceArgs) -> CliResult<()> {
    let bg_file = File::open(&a.background).map_err(|e| io_error(&a.background, e))?;
    let background = Background::read_binary(std::io::BufReader::new(bg_file))
        .map_err(|e| CliError::from(e).in_file(&a.background))?;
    let mut scorers: HashMap<usize, Vec<GlirScorer>> = HashMap::new();
    let mut rows = Vec::new();
    for path in &a.traces {
        let trace = read_trace(path, a.batch_size)?;
        if trace.dim() != background.dim() {
            return Err(usage("trace and background dimensions differ").in_file(path));
        }
        let n = trace.batch_size();
        let per_step = match scorers.entry(n) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(background.scorers(n, a.tau2, a.ridge)?),
        };
        let score = trace.score_with(per_step).map_err(|e| CliError::from(e).in_file(path))?;
        rows.push(json!({"file": path_value(path), "steps": trace.steps(), "log_pvalue": num(score)}));
    }
    emit(&json!({ "scores": rows }), ctx.format);
    Ok(())
}

fn linreg(ctx: &Context, a: &LinregArgs) -> CliResult<()> {
    let exp = run_linreg_experiment(a.n, a.p, a.sigma2, a.trials, a.seed)?;
    let mut fprs: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    fprs.extend(AUDIT_FPRS);
    fprs.sort_by(f64::total_cmp);
    fprs.dedup();
    let roc_path = ctx.write_file("linreg_roc.csv", |w| exp.roc.write_csv(w))?;
    let tpr_path = ctx.write_file("linreg_tpr.csv", |w| exp.write_csv(w, &fprs))?;
    let passed = exp.passed();
    let summary = json!({
        "convention": exp.convention,
        "trials": a.trials,
        "singular_redraws": exp.singular_redraws,
        "ks_statistic": num(exp.ks_statistic),
        "ks_critical": num(exp.ks_critical),
        "pass": passed,
        "roc_file": path_value(&roc_path),
        "tpr_file": path_value(&tpr_path),
        "checks": exp.rows.iter().map(|r| json!({
            "fpr": num(r.fpr), "tpr_empirical": num(r.tpr_empirical),
            "tpr_analytical": num(r.tpr_analytical), "se": num(r.se), "pass": r.pass,
        })).collect::<Vec<_>>(),
    });
    emit(&summary, ctx.format);
    if passed {
        Ok(())
    } else {
        Err(CliError::FailedCheck("closed form rejected at the audited FPRs".into()))
    }
}

fn train_cmd(ctx: &Context, a: &TrainArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.spec).map_err(|e| io_error(&a.spec, e))?;
    let spec: TrainSpec =
        serde_json::from_str(&text).map_err(|e| CliError::from(gmip::Error::from(e)).in_file(&a.spec))?;
    let out = train(&spec.task, &spec.config, &spec.probes)?;
    let mut files = Vec::new();
    for (i, p) in out.trace.probes.iter().enumerate() {
        let trace = out.trace.probe_trace(i)?;
        let kind = if p.member { "member" } else { "nonmember" };
        let ext = if a.csv { "csv" } else { "gmip" };
        let path = ctx.write_file(&format!("probe_{i:04}_{kind}.{ext}"), |w| {
            if a.csv {
                trace.write_csv(w)
            } else {
                trace.write_binary(w)
            }
        })?;
        files.push(path_value(&path));
    }
    let mut summary = serde_json::Map::new();
    if !out.trace.background.is_empty() {
        let bg = out.trace.background_set()?;
        let path = ctx.write_file("background.gmbg", |w| bg.write_binary(w))?;
        summary.insert("background_file".into(), path_value(&path));
    }
    summary.insert("steps".into(), json!(out.trace.means.len()));
    summary.insert("dim".into(), json!(out.trace.dim));
    summary.insert("batch_size".into(), json!(out.trace.batch_size));
    summary.insert("params".into(), Value::Array(out.params.iter().map(|&x| num(x)).collect()));
    summary.insert("probe_files".into(), Value::Array(files));
    emit(&Value::Object(summary), ctx.format);
    Ok(())
}

/// Serializes non-finite floats as the strings "inf", "-inf" and "nan".
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}
