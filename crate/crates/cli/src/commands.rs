use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use mkv_fbsde::coefficients::probe_assumptions;
use mkv_fbsde::fixed_point::{
    continuation_solve, multi_start, solve, write_history_csv, SolutionBundle,
};
use mkv_fbsde::inner_solver::{write_paths_binary, write_paths_summary_csv};
use mkv_fbsde::measure::io::{fmt_f64, read_measure_csv};
use mkv_fbsde::measure::{w2_with_method, W2Method};
use mkv_fbsde::problems::{build_problem, Problem, ReferenceSolution};
use mkv_fbsde::{Error, Result};

use crate::output::{
    reference_errors, run_id, write_plot_csv, RunDir, RunManifest, SCHEMA_VERSION,
};
use crate::settings::{resolve_problem, Settings};
use crate::Format;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_WARN: i32 = 2;

pub struct Common {
    pub problem: String,
    pub settings: Settings,
    pub seed: Option<u64>,
    pub threads: usize,
    pub format: Format,
}

impl Common {
    fn load(&self) -> Result<Problem> {
        self.settings.check_keys()?;
        let mut p = resolve_problem(&self.problem, &self.settings)?;
        if let Some(s) = self.seed {
            p.config.seed = s;
        }
        Ok(p)
    }
}

fn description(problem: &Problem) -> Value {
    json!({
        "problem": problem.name,
        "params": problem.params,
        "config": problem.config,
    })
}

fn manifest(command: &str, common: &Common, problem: Option<&Problem>) -> RunManifest {
    let (name, params, config, id) = match problem {
        Some(p) => {
            let desc = description(p);
            (
                p.name.clone(),
                p.params.clone(),
                serde_json::to_value(&p.config).unwrap_or(Value::Null),
                run_id(&desc),
            )
        }
        None => (
            common.problem.clone(),
            BTreeMap::new(),
            Value::Null,
            String::new(),
        ),
    };
    RunManifest {
        schema_version: SCHEMA_VERSION,
        tool: env!("CARGO_BIN_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        run_id: id,
        problem: name,
        params,
        settings: common.settings.entries().clone(),
        config,
        threads: common.threads,
        status: String::new(),
        exit_code: EXIT_ERROR,
        message: None,
        timings_ms: BTreeMap::new(),
        result: Value::Null,
        files: Vec::new(),
    }
}

/// Records a failure in the manifest when the run directory exists.
fn fail(run: Option<RunDir>, mut m: RunManifest, e: Error) -> Result<i32> {
    if let Some(run) = run {
        m.status = "error".into();
        m.exit_code = EXIT_ERROR;
        m.message = Some(e.to_string());
        run.finish(m)?;
    }
    Err(e)
}

fn write_bundle(
    run: &mut RunDir,
    prefix: &str,
    bundle: &SolutionBundle,
    reference: Option<&ReferenceSolution>,
    paths: bool,
) -> Result<()> {
    run.write(
        &format!("{prefix}convergence.csv"),
        "per-iteration distances and monitors",
        |w| write_history_csv(&bundle.history, w),
    )?;
    run.write(
        &format!("{prefix}field.csv"),
        "decoupling field u at every grid node",
        |w| bundle.field.write_csv(w),
    )?;
    run.write(
        &format!("{prefix}flow_summary.csv"),
        "mean, variance and quantiles of X and Y per time",
        |w| write_paths_summary_csv(&bundle.paths, w),
    )?;
    run.write(
        &format!("{prefix}plot.csv"),
        "means against the reference per time",
        |w| write_plot_csv(bundle, reference, w),
    )?;
    if paths {
        run.write(
            &format!("{prefix}paths.bin"),
            "particle paths (MKVPATH1 binary)",
            |w| write_paths_binary(&bundle.paths, w),
        )?;
    }
    Ok(())
}

fn bundle_summary(bundle: &SolutionBundle, reference: Option<&ReferenceSolution>) -> Value {
    let errors = reference.map(|r| reference_errors(bundle, r));
    json!({
        "converged": bundle.converged,
        "iterations": bundle.iterations,
        "delta_u": bundle.delta_u,
        "delta_flow": bundle.delta_flow,
        "mean_y0": bundle.mean_y(0),
        "history": bundle.history,
        "diagnostics": bundle.diagnostics,
        "reference": reference.map(|r| json!({
            "description": r.description,
            "validity": r.validity,
            "max_error_x": errors.map(|e| e.0),
            "max_error_y": errors.map(|e| e.1),
        })),
    })
}

fn print_summary(format: Format, fields: &[(&str, String)], full: &Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(full)?)?,
        Format::Csv => {
            writeln!(out, "key,value")?;
            for (k, v) in fields {
                writeln!(out, "{k},{v}")?;
            }
        }
    }
    Ok(())
}

pub fn cmd_solve(common: &Common, out: &Path) -> Result<i32> {
    let m = manifest("solve", common, None);
    let problem = match common.load() {
        Ok(p) => p,
        Err(e) => return fail(None, m, e),
    };
    let mut m = manifest("solve", common, Some(&problem));
    let mut run = match RunDir::create(out) {
        Ok(r) => r,
        Err(e) => return fail(None, m, e),
    };
    let want_paths = match common.settings.wants_paths() {
        Ok(v) => v,
        Err(e) => return fail(Some(run), m, e),
    };
    let cfg = &problem.config;
    let solved = run.time("solve", |_| -> Result<_> {
        let init = problem.init.as_ref().map(|f| f(cfg)).transpose()?;
        if cfg.truncation_ladder.is_empty() {
            Ok((solve(&problem.coefficients, cfg, init)?, None, None))
        } else {
            let o = continuation_solve(&problem.coefficients, cfg, init)?;
            Ok((o.bundle, Some(o.levels), o.aborted))
        }
    });
    let (bundle, levels, aborted) = match solved {
        Ok(v) => v,
        Err(e) => return fail(Some(run), m, e),
    };
    let reference = problem.reference.as_ref();
    let written = run.time("write", |run| {
        write_bundle(run, "", &bundle, reference, want_paths)
    });
    if let Err(e) = written {
        return fail(Some(run), m, e);
    }
    if let Some(levels) = &levels {
        let r = run.write("levels.csv", "truncation ladder levels", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["level", "converged", "iterations", "delta_u", "delta_flow"])?;
            for l in levels {
                c.write_record([
                    fmt_f64(l.level),
                    l.converged.to_string(),
                    l.iterations.to_string(),
                    l.delta_u.map(fmt_f64).unwrap_or_default(),
                    l.delta_flow.map(fmt_f64).unwrap_or_default(),
                ])?;
            }
            c.flush()?;
            Ok(())
        });
        if let Err(e) = r {
            return fail(Some(run), m, e);
        }
    }
    let converged = bundle.converged && aborted.is_none();
    m.exit_code = if converged { EXIT_OK } else { EXIT_WARN };
    m.status = if converged {
        "converged"
    } else {
        "not_converged"
    }
    .into();
    m.message = aborted;
    let mut result = bundle_summary(&bundle, reference);
    result["levels"] = json!(levels);
    m.result = result;
    let m = run.finish(m)?;
    let mut fields = vec![
        ("status", m.status.clone()),
        ("run_id", m.run_id.clone()),
        ("iterations", bundle.iterations.to_string()),
        ("delta_u", fmt_f64(bundle.delta_u)),
        ("delta_flow", fmt_f64(bundle.delta_flow)),
    ];
    fields.extend(
        bundle
            .mean_y(0)
            .iter()
            .enumerate()
            .map(|(j, v)| ("mean_y0", format!("{j}:{}", fmt_f64(*v)))),
    );
    fields.push(("out", out.display().to_string()));
    print_summary(common.format, &fields, &serde_json::to_value(&m)?)?;
    Ok(m.exit_code)
}

pub enum InitValues {
    List(Vec<f64>),
    Random(usize),
}

pub fn cmd_multistart(common: &Common, values: InitValues, out: &Path) -> Result<i32> {
    let m = manifest("multistart", common, None);
    let problem = match common.load() {
        Ok(p) => p,
        Err(e) => return fail(None, m, e),
    };
    let mut m = manifest("multistart", common, Some(&problem));
    let Some((key, family)) = problem.family.clone() else {
        return fail(
            None,
            m,
            Error::Config(format!(
                "problem `{}` has no initialization family",
                problem.name
            )),
        );
    };
    let cfg = &problem.config;
    let values = match values {
        InitValues::List(v) => v,
        InitValues::Random(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
            (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
        }
    };
    if values.len() < 2 {
        return fail(
            None,
            m,
            Error::Config(format!(
                "multistart needs at least 2 initial values, got {}",
                values.len()
            )),
        );
    }
    let mut run = match RunDir::create(out) {
        Ok(r) => r,
        Err(e) => return fail(None, m, e),
    };
    // A family key that is also a problem parameter selects the reference
    // of the problem built with that value.
    let references = values
        .iter()
        .map(|&v| {
            if problem.params.contains_key(&key) {
                let mut params = problem.params.clone();
                params.insert(key.clone(), v);
                build_problem(&problem.name, &params).map(|p| p.reference)
            } else {
                Ok(problem.reference.clone())
            }
        })
        .collect::<Result<Vec<_>>>();
    let references = match references {
        Ok(r) => r,
        Err(e) => return fail(Some(run), m, e),
    };
    let result = run.time("solve", |_| -> Result<_> {
        let inits = values
            .iter()
            .map(|&v| family(v, cfg))
            .collect::<Result<Vec<_>>>()?;
        multi_start(&problem.coefficients, cfg, inits)
    });
    let result = match result {
        Ok(r) => r,
        Err(e) => return fail(Some(run), m, e),
    };
    let want_paths = common.settings.wants_paths().unwrap_or(false);
    let written = run.time("write", |run| -> Result<()> {
        for (i, b) in result.bundles.iter().enumerate() {
            write_bundle(
                run,
                &format!("run_{i}/"),
                b,
                references[i].as_ref(),
                want_paths,
            )?;
        }
        run.write(
            "distances.csv",
            "pairwise distances between converged runs",
            |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["i", "j", "value_i", "value_j", "flow_w2", "field_distance"])?;
                let n = values.len();
                for i in 0..n {
                    for j in 0..n {
                        c.write_record([
                            i.to_string(),
                            j.to_string(),
                            fmt_f64(values[i]),
                            fmt_f64(values[j]),
                            fmt_f64(result.flow_distances[i][j]),
                            fmt_f64(result.field_distances[i][j]),
                        ])?;
                    }
                }
                c.flush()?;
                Ok(())
            },
        )
    });
    if let Err(e) = written {
        return fail(Some(run), m, e);
    }
    let all_converged = result.bundles.iter().all(|b| b.converged);
    let verdict = format!(
        "{} distinct solution{}",
        result.distinct,
        if result.distinct == 1 { "" } else { "s" }
    );
    m.exit_code = if all_converged { EXIT_OK } else { EXIT_WARN };
    m.status = if all_converged {
        "converged"
    } else {
        "not_converged"
    }
    .into();
    m.result = json!({
        "verdict": verdict,
        "distinct": result.distinct,
        "family_key": key,
        "values": values,
        "labels": result.labels,
        "threshold": result.threshold,
        "flow_distances": result.flow_distances,
        "field_distances": result.field_distances,
        "runs": result.bundles.iter().zip(&references).map(|(b, r)| bundle_summary(b, r.as_ref())).collect::<Vec<_>>(),
    });
    let m = run.finish(m)?;
    let fields = vec![
        ("status", m.status.clone()),
        ("verdict", verdict),
        (
            "labels",
            result
                .labels
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(" "),
        ),
        ("out", out.display().to_string()),
    ];
    print_summary(common.format, &fields, &serde_json::to_value(&m)?)?;
    Ok(m.exit_code)
}

pub fn cmd_validate(common: &Common, out: Option<&PathBuf>) -> Result<i32> {
    let problem = common.load()?;
    let opts = common.settings.probe_options(problem.config.horizon())?;
    let report = probe_assumptions(&problem.coefficients, &opts)?;
    let warnings = report.warnings();
    let (code, status) = if report.has_hard_violation() {
        (EXIT_ERROR, "violation")
    } else if !warnings.is_empty() {
        (EXIT_WARN, "warnings")
    } else {
        (EXIT_OK, "ok")
    };
    let full = json!({
        "problem": problem.name,
        "params": problem.params,
        "status": status,
        "warnings": warnings,
        "report": report,
    });
    if let Some(dir) = out {
        let mut m = manifest("validate", common, Some(&problem));
        let mut run = RunDir::create(dir)?;
        run.write("report.json", "assumption probe report", |w| {
            serde_json::to_writer_pretty(&mut *w, &full)?;
            Ok(writeln!(w)?)
        })?;
        m.status = status.into();
        m.exit_code = code;
        m.result = full.clone();
        run.finish(m)?;
    }
    let est = &report.lipschitz_estimates;
    let mut fields = vec![
        ("status", status.to_string()),
        ("declared_l", fmt_f64(report.declared_l)),
        ("lipschitz_b", fmt_f64(est.drift)),
        ("lipschitz_f", fmt_f64(est.driver)),
        ("lipschitz_sigma", fmt_f64(est.volatility)),
        ("lipschitz_g", fmt_f64(est.terminal)),
        ("ellipticity_min", fmt_f64(report.ellipticity_min)),
        (
            "growth_violations",
            report.growth_violation_count.to_string(),
        ),
    ];
    fields.extend(warnings.iter().map(|w| ("warning", format!("\"{w}\""))));
    print_summary(common.format, &fields, &full)?;
    Ok(code)
}

pub fn cmd_w2(a: &Path, b: &Path, format: Format) -> Result<i32> {
    let read = |p: &Path| -> Result<_> {
        let f = File::open(p)
            .map_err(|e| Error::Config(format!("cannot open {}: {e}", p.display())))?;
        read_measure_csv(BufReader::new(f))
    };
    let (ma, mb) = (read(a)?, read(b)?);
    let (d, method) = w2_with_method(&ma, &mb)?;
    let method = match method {
        W2Method::Quantile => "quantile",
        W2Method::Assignment => "assignment",
        W2Method::Sliced => "sliced",
    };
    let full = json!({ "w2": d, "method": method, "atoms": [ma.len(), mb.len()], "dim": ma.dim() });
    print_summary(
        format,
        &[("w2", fmt_f64(d)), ("method", method.to_string())],
        &full,
    )?;
    Ok(EXIT_OK)
}
