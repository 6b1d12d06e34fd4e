//! Layered key-value run settings.
//!
//! Keys are dotted (`grid.n_t`, `solver.theta`, `problem.A`). Sources are
//! applied in order: the problem's own defaults, the `--config` TOML file,
//! `MKVFBSDE_<SECTION>__<KEY>` environment variables, then `--set key=value`.
//! A key without a section names a problem parameter, so `--set A=1` and
//! `--set problem.A=1` are the same.

use std::collections::BTreeMap;
use std::path::Path;

use mkv_fbsde::coefficients::ProbeOptions;
use mkv_fbsde::fixed_point::SolverConfig;
use mkv_fbsde::problems::{build_problem, parse_problem_spec, Problem, PROBLEM_NAMES};
use mkv_fbsde::{Error, GridSpec, Result};

pub const ENV_PREFIX: &str = "MKVFBSDE_";

const KNOWN_KEYS: &[&str] = &[
    "grid.n_t",
    "grid.n_x",
    "grid.x_max",
    "grid.substeps",
    "grid.cfl",
    "solver.x0",
    "solver.particles",
    "solver.theta",
    "solver.tol_u",
    "solver.tol_flow",
    "solver.max_iters",
    "solver.ladder",
    "solver.seed",
    "solver.antithetic",
    "solver.auto_substeps",
    "caps.gamma",
    "caps.lipschitz",
    "caps.gamma_prime",
    "coefficients.declared_l",
    "probe.samples",
    "probe.radius",
    "probe.seed",
    "probe.cloud_size",
    "output.paths",
];

/// Settings in application order; later entries win.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    entries: BTreeMap<String, String>,
}

impl Settings {
    pub fn insert(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(normalize_key(key), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn load_toml(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let mut flat = Vec::new();
        flatten("", &toml::Value::Table(table), &mut flat)?;
        for (k, v) in flat {
            self.insert(&k, v);
        }
        Ok(())
    }

    pub fn load_env<I>(&mut self, vars: I)
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let rest = k.strip_prefix(ENV_PREFIX)?;
                let (section, key) = rest.split_once("__")?;
                let section = section.to_ascii_lowercase();
                let key = if section == "problem" {
                    key.to_string()
                } else {
                    key.to_ascii_lowercase()
                };
                Some((format!("{section}.{key}"), v))
            })
            .collect();
        found.sort();
        for (k, v) in found {
            self.insert(&k, v);
        }
    }

    pub fn load_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{pair}`")))?;
            self.insert(k.trim(), v.trim());
        }
        Ok(())
    }

    /// Problem parameters given as settings, keyed without the section.
    fn problem_params(&self) -> Vec<(&str, &str)> {
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("problem.").map(|k| (k, v.as_str())))
            .collect()
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`"))),
        }
    }

    fn parse_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => parse_f64_list(v)
                .map(Some)
                .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}` as a number list"))),
        }
    }

    /// Rejects keys no command understands.
    pub fn check_keys(&self) -> Result<()> {
        for k in self.entries.keys() {
            if k.starts_with("problem.") || KNOWN_KEYS.contains(&k.as_str()) {
                continue;
            }
            let hint = closest(k, KNOWN_KEYS.iter().copied())
                .map(|s| format!("; did you mean `{s}`?"))
                .unwrap_or_default();
            return Err(Error::Config(format!("unknown setting `{k}`{hint}")));
        }
        Ok(())
    }

    pub fn wants_paths(&self) -> Result<bool> {
        Ok(self.parse("output.paths")?.unwrap_or(false))
    }

    pub fn probe_options(&self, horizon: f64) -> Result<ProbeOptions> {
        let mut o = ProbeOptions {
            horizon,
            ..ProbeOptions::default()
        };
        if let Some(v) = self.parse("probe.samples")? {
            o.n_samples = v;
        }
        if let Some(v) = self.parse("probe.radius")? {
            o.box_radius = v;
        }
        if let Some(v) = self.parse("probe.seed")? {
            o.seed = v;
        }
        if let Some(v) = self.parse("probe.cloud_size")? {
            o.cloud_size = v;
        }
        Ok(o)
    }
}

fn normalize_key(key: &str) -> String {
    match key.split_once('.') {
        Some((section, rest)) if section.eq_ignore_ascii_case("problem") => {
            format!("problem.{rest}")
        }
        Some(_) => key.to_ascii_lowercase(),
        None => format!("problem.{key}"),
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) -> Result<()> {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out)?;
            }
        }
        toml::Value::Array(items) => {
            let parts = items
                .iter()
                .map(|v| match v {
                    toml::Value::Integer(i) => Ok(i.to_string()),
                    toml::Value::Float(f) => Ok(f.to_string()),
                    _ => Err(Error::Config(format!(
                        "{prefix}: arrays may only hold numbers"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            out.push((prefix.to_string(), parts.join(",")));
        }
        toml::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        toml::Value::Integer(i) => out.push((prefix.to_string(), i.to_string())),
        toml::Value::Float(f) => out.push((prefix.to_string(), f.to_string())),
        toml::Value::Boolean(b) => out.push((prefix.to_string(), b.to_string())),
        toml::Value::Datetime(_) => {
            return Err(Error::Config(format!("{prefix}: dates are not settings")))
        }
    }
    Ok(())
}

pub fn parse_f64_list(s: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    s.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::parse)
        .collect()
}

pub fn closest<'a, I>(name: &str, candidates: I) -> Option<&'a str>
where
    I: IntoIterator<Item = &'a str>,
{
    candidates
        .into_iter()
        .map(|c| (strsim::jaro_winkler(name, c), c))
        .filter(|(score, _)| *score > 0.7)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
}

/// Builds the problem named by `name?k=v` with its query parameters and
/// then the `problem.*` settings.
pub fn resolve_problem(spec: &str, settings: &Settings) -> Result<Problem> {
    let (name, mut params) = parse_problem_spec(spec)?;
    if !PROBLEM_NAMES.contains(&name.as_str()) {
        let hint = closest(&name, PROBLEM_NAMES.iter().copied())
            .map(|s| format!("did you mean `{s}`? "))
            .unwrap_or_default();
        return Err(Error::Config(format!(
            "unknown problem `{name}`; {hint}registered problems: {}",
            PROBLEM_NAMES.join(", ")
        )));
    }
    for (k, v) in settings.problem_params() {
        let value = v
            .parse()
            .map_err(|_| Error::Config(format!("problem.{k}: cannot parse `{v}`")))?;
        params.insert(k.to_string(), value);
    }
    let mut problem = build_problem(&name, &params)?;
    if let Some(l) = settings.parse::<f64>("coefficients.declared_l")? {
        if l.is_nan() || l <= 0.0 {
            return Err(Error::Config(format!(
                "coefficients.declared_l: must be positive, got {l}"
            )));
        }
        problem.coefficients.declared_l = l;
    }
    apply_solver_settings(&mut problem.config, settings)?;
    Ok(problem)
}

pub fn apply_solver_settings(cfg: &mut SolverConfig, s: &Settings) -> Result<()> {
    let grid_keys = [
        "grid.n_t",
        "grid.n_x",
        "grid.x_max",
        "grid.substeps",
        "grid.cfl",
    ];
    if grid_keys.iter().any(|k| s.get(k).is_some()) {
        let old = &cfg.grid;
        let axis = old.axes()[0];
        if old.axes().iter().any(|a| *a != axis) {
            return Err(Error::Config(
                "grid.*: overrides need a grid with identical axes".into(),
            ));
        }
        let n_t = s.parse("grid.n_t")?.unwrap_or(old.n_steps());
        let n_x = s.parse("grid.n_x")?.unwrap_or(axis.nodes);
        let x_max = s.parse("grid.x_max")?.unwrap_or(axis.half_width);
        let grid = GridSpec::uniform(old.horizon(), n_t, old.dim(), x_max, n_x)
            .map_err(|e| Error::Config(format!("grid: {e}")))?
            .with_substeps(s.parse("grid.substeps")?.unwrap_or(old.substeps()))
            .map_err(|e| Error::Config(format!("grid.substeps: {e}")))?
            .with_cfl_factor(s.parse("grid.cfl")?.unwrap_or(old.cfl_factor()))
            .map_err(|e| Error::Config(format!("grid.cfl: {e}")))?;
        cfg.grid = grid;
    }
    if let Some(v) = s.parse_list("solver.x0")? {
        cfg.x0 = v;
    }
    if let Some(v) = s.parse("solver.particles")? {
        cfg.particles = v;
    }
    if let Some(v) = s.parse("solver.theta")? {
        cfg.theta = v;
    }
    if let Some(v) = s.parse("solver.tol_u")? {
        cfg.tol_u = v;
    }
    if let Some(v) = s.parse("solver.tol_flow")? {
        cfg.tol_flow = v;
    }
    if let Some(v) = s.parse("solver.max_iters")? {
        cfg.max_iters = v;
    }
    if let Some(v) = s.parse_list("solver.ladder")? {
        cfg.truncation_ladder = v;
    }
    if let Some(v) = s.parse("solver.seed")? {
        cfg.seed = v;
    }
    if let Some(v) = s.parse("solver.antithetic")? {
        cfg.antithetic = v;
    }
    if let Some(v) = s.parse("solver.auto_substeps")? {
        cfg.auto_substeps = v;
    }
    if let Some(v) = s.parse("caps.gamma")? {
        cfg.gamma_cap = Some(v);
    }
    if let Some(v) = s.parse("caps.lipschitz")? {
        cfg.lipschitz_cap = Some(v);
    }
    if let Some(v) = s.parse("caps.gamma_prime")? {
        cfg.gamma_prime = Some(v);
    }
    cfg.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_keys_are_problem_parameters() {
        let mut s = Settings::default();
        s.load_overrides(&["A=0.5".into(), "Solver.Theta=0.25".into()])
            .unwrap();
        assert_eq!(s.get("problem.A"), Some("0.5"));
        assert_eq!(s.get("solver.theta"), Some("0.25"));
        let p = resolve_problem("counterexample", &s).unwrap();
        assert_eq!(p.params["A"], 0.5);
        assert_eq!(p.config.theta, 0.25);
    }

    #[test]
    fn precedence_and_sources() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[grid]\nn_t = 40\nn_x = 81\n[solver]\ntheta = 0.3\nladder = [1, 2.5]\n[problem]\nA = 0.25\n",
        )
        .unwrap();
        let mut s = Settings::default();
        s.load_toml(&path).unwrap();
        s.load_env([
            ("MKVFBSDE_SOLVER__THETA".to_string(), "0.4".to_string()),
            ("MKVFBSDE_SEED".to_string(), "9".to_string()),
            ("OTHER__X".to_string(), "1".to_string()),
        ]);
        s.load_overrides(&["grid.n_t=50".into()]).unwrap();
        s.check_keys().unwrap();
        let p = resolve_problem("counterexample?A=0.1", &s).unwrap();
        assert_eq!(p.config.grid.n_steps(), 50);
        assert_eq!(p.config.grid.axes()[0].nodes, 81);
        assert_eq!(p.config.theta, 0.4);
        assert_eq!(p.config.truncation_ladder, vec![1.0, 2.5]);
        assert_eq!(p.params["A"], 0.25);
    }

    #[test]
    fn errors_name_the_field() {
        let mut s = Settings::default();
        s.load_overrides(&["solver.theta=2".into()]).unwrap();
        let e = resolve_problem("decoupled", &s).unwrap_err().to_string();
        assert!(e.contains("theta"), "{e}");

        let mut s = Settings::default();
        s.load_overrides(&["grid.n_t=abc".into()]).unwrap();
        let e = resolve_problem("decoupled", &s).unwrap_err().to_string();
        assert!(e.contains("grid.n_t"), "{e}");

        let mut s = Settings::default();
        s.load_overrides(&["solver.thetta=0.5".into()]).unwrap();
        let e = s.check_keys().unwrap_err().to_string();
        assert!(e.contains("solver.theta"), "{e}");

        assert!(Settings::default()
            .load_overrides(&["novalue".into()])
            .is_err());
    }

    #[test]
    fn unknown_problem_gets_a_suggestion() {
        let e = resolve_problem("counterexampel", &Settings::default())
            .unwrap_err()
            .to_string();
        assert!(e.contains("did you mean `counterexample`"), "{e}");
    }

    #[test]
    fn number_lists() {
        assert_eq!(parse_f64_list("[-1, 0,1]").unwrap(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(parse_f64_list("2").unwrap(), vec![2.0]);
        assert!(parse_f64_list("1,x").is_err());
    }
}
