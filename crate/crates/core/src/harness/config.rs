//! Study configuration and its flat `key = value` file format.
//!
//! ```text
//! # exponential RDS study
//! model = exponential
//! params = 0.1
//! n = 100000
//! trunc_a = 0
//! trunc_b = 1
//! alpha = 0.9            # or censor_c / censor_d
//! estimators = uniform, rds, rds:4000:400
//! r = 1000
//! r0 = 400
//! m = 200
//! seed = 42
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::datagen::{calibrate_alpha, GenConfig, TruncationMode};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorSpec, Method};
use crate::models::{ModelKind, ParamVector};
use crate::optimizer::OptimizerConfig;

/// Parsed `key = value` pairs that remember which keys were read.
#[derive(Debug)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!("line {}: expected key = value", i + 1)));
            };
            let key = k.trim().to_ascii_lowercase().replace('-', "_");
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::InvalidConfig(format!("line {}: duplicate key '{key}'", i + 1)));
            }
        }
        Ok(KeyValues { map, used: BTreeSet::new() })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.map.insert(key.to_string(), value.into());
    }

    pub fn raw(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.map.get(key).cloned()
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::InvalidConfig(format!("invalid value '{v}' for key '{key}'"))),
        }
    }

    pub fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::InvalidConfig(format!("missing key '{key}'")))
    }

    pub fn list_f64(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => parse_f64_list(&v).map(Some),
        }
    }

    /// Errors on keys that were never read.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&str> = self.map.keys().filter(|k| !self.used.contains(*k)).map(|k| k.as_str()).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("unknown keys: {}", unknown.join(", "))))
        }
    }
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim())
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<f64>().map_err(|_| Error::InvalidConfig(format!("'{x}' is not a number"))))
        .collect()
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::InvalidConfig(format!("'{other}' is not a boolean"))),
    }
}

/// How censoring times are drawn: an explicit window or a target rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorSpec {
    Window(f64, f64),
    TargetAlpha(f64),
}

/// Synthetic data description before calibration and seeding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenSpec {
    pub true_params: ParamVector,
    pub n: usize,
    pub trunc_window: (f64, f64),
    pub censor: CensorSpec,
    pub truncation_mode: TruncationMode,
    pub fixed_uncensored: Option<usize>,
}

impl GenSpec {
    /// Calibrates the censoring window if a target rate was given.
    pub fn resolve(&self, probe_seed: u64) -> Result<GenConfig> {
        let window = match self.censor {
            CensorSpec::Window(c, d) => (c, d),
            CensorSpec::TargetAlpha(alpha) => {
                calibrate_alpha(&self.true_params, alpha, self.trunc_window, self.truncation_mode, probe_seed)?
            }
        };
        let cfg = GenConfig {
            true_params: self.true_params,
            n: self.n,
            trunc_window: self.trunc_window,
            censor_window: window,
            truncation_mode: self.truncation_mode,
            seed: 0,
            fixed_uncensored: self.fixed_uncensored,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads model, params, mixing, n, trunc_a/b, censor_c/d or alpha,
    /// truncation_mode and n_uncensored.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let true_params = read_params(kv)?
            .ok_or_else(|| Error::InvalidConfig("missing key 'params' (true parameters)".into()))?;
        let n: usize = kv.require("n")?;
        let trunc_window = (kv.get_or("trunc_a", 0.0)?, kv.get_or("trunc_b", 1.0)?);
        let censor = match (kv.get::<f64>("alpha")?, kv.get::<f64>("censor_c")?, kv.get::<f64>("censor_d")?) {
            (Some(a), None, None) => CensorSpec::TargetAlpha(a),
            (None, Some(c), Some(d)) => CensorSpec::Window(c, d),
            _ => return Err(Error::InvalidConfig("give either 'alpha' or both 'censor_c' and 'censor_d'".into())),
        };
        let truncation_mode = kv.get_or("truncation_mode", TruncationMode::Conditional)?;
        let fixed_uncensored = kv.get("n_uncensored")?;
        Ok(GenSpec { true_params, n, trunc_window, censor, truncation_mode, fixed_uncensored })
    }
}

/// Reads `model`, `mixing` and (optionally) `params`.
pub fn read_model(kv: &mut KeyValues) -> Result<ModelKind> {
    let model: ModelKind = kv.require("model")?;
    match kv.get::<f64>("mixing")? {
        Some(p) => model.with_mixing(p),
        None => Ok(model),
    }
}

fn read_params(kv: &mut KeyValues) -> Result<Option<ParamVector>> {
    let model = read_model(kv)?;
    match kv.list_f64("params")? {
        None => Ok(None),
        Some(v) => ParamVector::new(model, &v).map(Some),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DataSource {
    Generate(GenSpec),
    File { path: PathBuf, time_scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    FullMle,
    TrueTheta,
}

impl FromStr for Reference {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full_mle" | "fullmle" | "mle" => Ok(Reference::FullMle),
            "true_theta" | "truetheta" | "true" => Ok(Reference::TrueTheta),
            other => Err(Error::InvalidConfig(format!("unknown reference '{other}'"))),
        }
    }
}

/// An estimator in a study, labelled for the output tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorEntry {
    pub label: String,
    pub spec: EstimatorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub model: ModelKind,
    pub true_params: Option<ParamVector>,
    pub source: DataSource,
    pub estimators: Vec<EstimatorEntry>,
    pub m: usize,
    pub reference: Reference,
    pub seed: u64,
    /// Worker threads; 0 picks the rayon default.
    pub workers: usize,
    /// Reuse one dataset across replicates instead of generating fresh ones.
    pub fix_dataset: bool,
    pub level: f64,
    /// Emit wall-clock times in outputs (makes them non-reproducible).
    pub record_time: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("replicate count m must be positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("no estimators configured".into()));
        }
        let mut labels = BTreeSet::new();
        for e in &self.estimators {
            e.spec.validate()?;
            if !labels.insert(&e.label) {
                return Err(Error::InvalidConfig(format!("duplicate estimator label '{}'", e.label)));
            }
        }
        if !(0.0..1.0).contains(&self.level) {
            return Err(Error::InvalidConfig(format!("level must lie in [0, 1), got {}", self.level)));
        }
        if self.reference == Reference::TrueTheta && self.true_params.is_none() {
            return Err(Error::InvalidConfig("reference = true_theta needs 'params'".into()));
        }
        if let Some(p) = &self.true_params {
            if p.model() != self.model {
                return Err(Error::InvalidConfig("true parameters belong to a different model".into()));
            }
        }
        Ok(())
    }

    /// Parses a configuration file; relative `data` paths resolve against `base_dir`.
    pub fn from_text(text: &str, base_dir: &Path) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let cfg = Self::from_kv(&mut kv, base_dir)?;
        kv.finish()?;
        Ok(cfg)
    }

    pub fn from_kv(kv: &mut KeyValues, base_dir: &Path) -> Result<Self> {
        let model = read_model(kv)?;
        let source = match kv.raw("data") {
            Some(path) => {
                let true_params = read_params(kv)?;
                let path = base_dir.join(path);
                let time_scale = kv.get_or("time_scale", 1.0)?;
                (true_params, DataSource::File { path, time_scale })
            }
            None => {
                let spec = GenSpec::from_kv(kv)?;
                (Some(spec.true_params), DataSource::Generate(spec))
            }
        };
        let (true_params, source) = source;
        let optimizer = OptimizerConfig {
            max_iters: kv.get_or("max_iters", 100)?,
            grad_tol: kv.get_or("grad_tol", 1e-8)?,
            ..OptimizerConfig::default()
        };
        let r: usize = kv.get_or("r", 1000)?;
        let r0: usize = kv.get_or("r0", 400)?;
        let xi: f64 = kv.get_or("xi", 0.1)?;
        let xi_c: f64 = kv.get_or("xi_c", 0.1)?;
        let include_gamma = parse_bool(&kv.raw("include_gamma").unwrap_or_else(|| "true".into()))?;
        let tokens = kv.raw("estimators").unwrap_or_else(|| "uniform,rds".into());
        let mut estimators = Vec::new();
        for token in tokens.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            estimators.push(parse_estimator(token, r, r0, xi, xi_c, include_gamma, optimizer)?);
        }
        let is_file = matches!(source, DataSource::File { .. });
        let cfg = SimConfig {
            model,
            true_params,
            source,
            estimators,
            m: kv.get_or("m", 100)?,
            reference: kv.get_or("reference", Reference::FullMle)?,
            seed: kv.get_or("seed", 0)?,
            workers: kv.get_or("workers", 0)?,
            fix_dataset: is_file || parse_bool(&kv.raw("fix_dataset").unwrap_or_else(|| "false".into()))?,
            level: kv.get_or("level", 0.95)?,
            record_time: parse_bool(&kv.raw("record_time").unwrap_or_else(|| "false".into()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `method[:r[:r0]]`, e.g. `rds:4000:400`.
fn parse_estimator(
    token: &str,
    r: usize,
    r0: usize,
    xi: f64,
    xi_c: f64,
    include_gamma: bool,
    optimizer: OptimizerConfig,
) -> Result<EstimatorEntry> {
    let mut parts = token.split(':');
    let method: Method = parts.next().unwrap_or("").parse()?;
    let num = |p: Option<&str>, default: usize| -> Result<usize> {
        match p {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| Error::InvalidConfig(format!("bad size '{s}' in estimator '{token}'"))),
        }
    };
    let r = num(parts.next(), r)?;
    let r0 = num(parts.next(), r0)?;
    if parts.next().is_some() {
        return Err(Error::InvalidConfig(format!("estimator '{token}' has too many fields")));
    }
    let xi = if method == Method::Rdcs { xi_c } else { xi };
    let spec = EstimatorSpec { method, r, r0, xi, optimizer, include_gamma };
    Ok(EstimatorEntry { label: token.to_string(), spec })
}
