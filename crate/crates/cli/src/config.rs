//! Flat `key = value` run configuration.

use std::path::PathBuf;

use sweepopt::instance::Params;

use crate::CliError;

/// Keys accepted besides `param.<name>`.
pub const KEYS: &[&str] = &[
    "instance",
    "seed",
    "grid.n",
    "schedule.gamma0",
    "schedule.growth",
    "schedule.count",
    "optimizer.reference",
    "optimizer.max_iters",
    "optimizer.stage_tol",
    "optimizer.mu0",
    "optimizer.mu_growth",
    "optimizer.max_escalations",
    "optimizer.endpoint_tol",
    "certify.tol",
    "certify.endpoint_tol",
    "simulate.gamma",
    "simulate.control",
    "oracle.gamma",
    "oracle.sizes",
    "output.dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub instance: String,
    pub params: Params,
    pub seed: u64,
    pub grid_n: usize,
    /// Defaults to `4 Mbar / eta` of the instance.
    pub gamma0: Option<f64>,
    pub growth: f64,
    pub count: usize,
    /// `analytic` or `previous`; `analytic` when the instance has a closed
    /// form.
    pub reference: Option<String>,
    pub max_iters: Option<usize>,
    pub stage_tol: Option<f64>,
    pub mu0: Option<f64>,
    pub mu_growth: Option<f64>,
    pub max_escalations: Option<usize>,
    pub endpoint_tol: Option<f64>,
    pub certify_tol: Option<f64>,
    pub certify_endpoint_tol: f64,
    pub simulate_gamma: f64,
    /// `reference`, `guess` or a control CSV path.
    pub simulate_control: Option<String>,
    pub oracle_gamma: f64,
    pub oracle_sizes: Vec<usize>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            instance: "annulus_example".into(),
            params: Params::new(),
            seed: 0,
            grid_n: 2000,
            gamma0: None,
            growth: 3.0,
            count: 8,
            reference: None,
            max_iters: None,
            stage_tol: None,
            mu0: None,
            mu_growth: None,
            max_escalations: None,
            endpoint_tol: None,
            certify_tol: None,
            certify_endpoint_tol: 1e-3,
            simulate_gamma: 1e4,
            simulate_control: None,
            oracle_gamma: 1e4,
            oracle_sizes: vec![500, 1000, 2000, 4000],
            output_dir: PathBuf::from("out"),
        }
    }
}

fn invalid(key: &str, value: &str, why: &str) -> CliError {
    CliError::Config(format!("`{key} = {value}`: {why}"))
}

fn positive(key: &str, value: &str) -> Result<f64, CliError> {
    let v: f64 = value
        .parse()
        .map_err(|_| invalid(key, value, "not a number"))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(invalid(key, value, "must be positive"));
    }
    Ok(v)
}

fn count(key: &str, value: &str) -> Result<usize, CliError> {
    let v: usize = value
        .parse()
        .map_err(|_| invalid(key, value, "not a nonnegative integer"))?;
    if v == 0 {
        return Err(invalid(key, value, "must be at least 1"));
    }
    Ok(v)
}

/// Splits `key = value`, ignoring blank lines and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if let Some(name) = key.strip_prefix("param.") {
            let v: f64 = value
                .parse()
                .map_err(|_| invalid(key, value, "not a number"))?;
            if !v.is_finite() {
                return Err(invalid(key, value, "must be finite"));
            }
            self.params.insert(name.to_string(), v);
            return Ok(());
        }
        match key {
            "instance" => self.instance = value.to_string(),
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| invalid(key, value, "not a nonnegative integer"))?
            }
            "grid.n" => self.grid_n = count(key, value)?,
            "schedule.gamma0" => self.gamma0 = Some(positive(key, value)?),
            "schedule.growth" => {
                let g = positive(key, value)?;
                if g <= 1.0 {
                    return Err(invalid(key, value, "must exceed 1"));
                }
                self.growth = g;
            }
            "schedule.count" => self.count = count(key, value)?,
            "optimizer.reference" => match value {
                "analytic" | "previous" => self.reference = Some(value.to_string()),
                _ => return Err(invalid(key, value, "expected `analytic` or `previous`")),
            },
            "optimizer.max_iters" => self.max_iters = Some(count(key, value)?),
            "optimizer.stage_tol" => self.stage_tol = Some(positive(key, value)?),
            "optimizer.mu0" => self.mu0 = Some(positive(key, value)?),
            "optimizer.mu_growth" => {
                let g = positive(key, value)?;
                if g <= 1.0 {
                    return Err(invalid(key, value, "must exceed 1"));
                }
                self.mu_growth = Some(g);
            }
            "optimizer.max_escalations" => {
                self.max_escalations = Some(
                    value
                        .parse()
                        .map_err(|_| invalid(key, value, "not a nonnegative integer"))?,
                )
            }
            "optimizer.endpoint_tol" => self.endpoint_tol = Some(positive(key, value)?),
            "certify.tol" => self.certify_tol = Some(positive(key, value)?),
            "certify.endpoint_tol" => self.certify_endpoint_tol = positive(key, value)?,
            "simulate.gamma" => self.simulate_gamma = positive(key, value)?,
            "simulate.control" => self.simulate_control = Some(value.to_string()),
            "oracle.gamma" => self.oracle_gamma = positive(key, value)?,
            "oracle.sizes" => {
                let sizes = value
                    .split(',')
                    .map(|s| count(key, s.trim()))
                    .collect::<Result<Vec<_>, _>>()?;
                if sizes.len() < 2 {
                    return Err(invalid(key, value, "need at least two sizes"));
                }
                self.oracle_sizes = sizes;
            }
            "output.dir" => self.output_dir = PathBuf::from(value),
            _ => {
                return Err(CliError::Config(format!(
                    "unknown key `{key}` (known: {}, param.<name>)",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Defaults, then the config file, then `--set` overrides in order.
    pub fn load(file: Option<&str>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(text) = file {
            for (k, v) in parse_pairs(text)? {
                cfg.set(&k, &v)?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("`--set {o}`: expected key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}
