//! Typed parameter tables: schema, config-file parsing and resolution.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    Real,
    Positive,
    NonNegative,
    /// Positive real or `auto`.
    PositiveOrAuto,
    /// Integer `>= 1`.
    Count,
    /// Any `u64`.
    Seed,
    /// Comma-separated reals.
    Reals,
    /// Comma-separated integers `>= 1`.
    Counts,
    Choice(&'static [&'static str]),
}

pub struct Param {
    pub name: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub help: &'static str,
}

const fn p(name: &'static str, kind: Kind, default: &'static str, help: &'static str) -> Param {
    Param { name, kind, default, help }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Auto,
    Count(u64),
    Reals(Vec<f64>),
    Counts(Vec<u32>),
    Choice(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: Vec<String>| v.join(",");
        match self {
            Value::Real(x) => write!(f, "{x}"),
            Value::Auto => write!(f, "auto"),
            Value::Count(n) => write!(f, "{n}"),
            Value::Reals(v) => write!(f, "{}", join(v.iter().map(|x| x.to_string()).collect())),
            Value::Counts(v) => write!(f, "{}", join(v.iter().map(|x| x.to_string()).collect())),
            Value::Choice(s) => write!(f, "{s}"),
        }
    }
}

fn parse_real(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_count(s: &str) -> Option<u64> {
    s.trim().parse::<u64>().ok().filter(|&n| n >= 1)
}

impl Kind {
    fn parse(self, raw: &str) -> Result<Value, String> {
        let raw = raw.trim();
        let bad = |what: &str| Err(format!("expected {what}, got {raw:?}"));
        match self {
            Kind::Real => parse_real(raw).map(Value::Real).map_or_else(|| bad("a finite number"), Ok),
            Kind::Positive => match parse_real(raw) {
                Some(x) if x > 0.0 => Ok(Value::Real(x)),
                _ => bad("a positive number"),
            },
            Kind::NonNegative => match parse_real(raw) {
                Some(x) if x >= 0.0 => Ok(Value::Real(x)),
                _ => bad("a non-negative number"),
            },
            Kind::PositiveOrAuto => match raw {
                "auto" => Ok(Value::Auto),
                _ => match parse_real(raw) {
                    Some(x) if x > 0.0 => Ok(Value::Real(x)),
                    _ => bad("a positive number or auto"),
                },
            },
            Kind::Count => parse_count(raw).map(Value::Count).map_or_else(|| bad("an integer >= 1"), Ok),
            Kind::Seed => raw.parse::<u64>().map(Value::Count).or_else(|_| bad("an unsigned integer")),
            Kind::Reals => {
                let v: Option<Vec<f64>> = raw.split(',').map(parse_real).collect();
                match v {
                    Some(v) if !v.is_empty() => Ok(Value::Reals(v)),
                    _ => bad("a comma-separated list of numbers"),
                }
            }
            Kind::Counts => {
                let v: Option<Vec<u32>> =
                    raw.split(',').map(|s| parse_count(s).and_then(|n| u32::try_from(n).ok())).collect();
                match v {
                    Some(v) if !v.is_empty() => Ok(Value::Counts(v)),
                    _ => bad("a comma-separated list of integers >= 1"),
                }
            }
            Kind::Choice(options) => {
                if options.contains(&raw) {
                    Ok(Value::Choice(raw.to_string()))
                } else {
                    Err(format!("expected one of {}, got {raw:?}", options.join(", ")))
                }
            }
        }
    }
}

const MODES: &[&str] = &["closed_form", "retarded_sum"];

pub struct Schema {
    pub name: &'static str,
    pub about: &'static str,
    pub params: &'static [Param],
}

pub static SCHEMAS: &[Schema] = &[
    Schema {
        name: "displacement",
        about: "Exact and weak evolution of the postselected packet, peak and sampled displacements",
        params: &[
            p("alpha-up", Kind::Real, "0.8", "postselected amplitude of spin up"),
            p("alpha-down", Kind::Real, "-0.6", "postselected amplitude of spin down"),
            p("n", Kind::Count, "1000", "number of spins"),
            p("t", Kind::PositiveOrAuto, "auto", "evolution time; auto puts w t = 3 eps"),
            p("eps", Kind::Positive, "1", "packet width"),
            p("points", Kind::Count, "801", "profile grid points"),
            p("trials", Kind::Count, "20000", "Monte Carlo samples per histogram"),
            p("bins", Kind::Count, "120", "histogram bins"),
            p("seed", Kind::Seed, "1", "random seed"),
        ],
    },
    Schema {
        name: "convergence",
        about: "Fidelity of exact against weak evolution over a ladder of N",
        params: &[
            p("alpha-up", Kind::Real, "0.8", "postselected amplitude of spin up"),
            p("alpha-down", Kind::Real, "-0.6", "postselected amplitude of spin down"),
            p("ladder", Kind::Counts, "250,500,1000,2000", "spin counts"),
            p("t", Kind::PositiveOrAuto, "auto", "evolution time; auto puts w t = 3 eps"),
            p("eps", Kind::Positive, "1", "packet width"),
        ],
    },
    Schema {
        name: "probabilities",
        about: "Error, postselection and e^-N probabilities in log space",
        params: &[
            p("alpha-up", Kind::Real, "0.8", "postselected amplitude of spin up"),
            p("alpha-down", Kind::Real, "-0.6", "postselected amplitude of spin down"),
            p("n", Kind::Count, "1000", "number of spins"),
            p("t", Kind::PositiveOrAuto, "auto", "evolution time; auto puts w t = 3 eps"),
            p("eps", Kind::Positive, "1", "packet width"),
        ],
    },
    Schema {
        name: "moments",
        about: "Relative error of exact against weak velocity moments",
        params: &[
            p("alpha-up", Kind::Real, "0.8", "postselected amplitude of spin up"),
            p("alpha-down", Kind::Real, "-0.6", "postselected amplitude of spin down"),
            p("n-max", Kind::Seed, "3", "highest moment order"),
            p("p-grid", Kind::Reals, "0,0.5,1,1.5,2", "momenta p (with t = 1 these are pT)"),
            p("t", Kind::Positive, "1", "evolution time"),
            p("ladder", Kind::Counts, "100,200,400,800", "spin counts"),
        ],
    },
    Schema {
        name: "field-map",
        about: "Scalar and vector potential of a uniformly moving charge on a (rho, z) grid",
        params: &[
            p("q", Kind::Real, "1", "charge"),
            p("v", Kind::Real, "7", "speed of the charge"),
            p("t", Kind::Real, "1", "observation time"),
            p("mode", Kind::Choice(MODES), "retarded_sum", "closed_form or retarded_sum"),
            p("rho-min", Kind::NonNegative, "0", "smallest rho"),
            p("rho-max", Kind::Positive, "3", "largest rho"),
            p("n-rho", Kind::Count, "61", "rho points"),
            p("z-min", Kind::Real, "-20", "smallest z"),
            p("z-max", Kind::Real, "8", "largest z"),
            p("n-z", Kind::Count, "281", "z points"),
        ],
    },
    Schema {
        name: "retarded-oracle",
        about: "Closed form against the retarded-root sum, with root residuals",
        params: &[
            p("q", Kind::Real, "1", "charge"),
            p("v", Kind::Real, "0.9", "speed of the charge"),
            p("t", Kind::Real, "1", "observation time"),
            p("rho-min", Kind::NonNegative, "0.05", "smallest rho"),
            p("rho-max", Kind::Positive, "3", "largest rho"),
            p("n-rho", Kind::Count, "64", "rho points"),
            p("z-min", Kind::Real, "-3", "smallest z"),
            p("z-max", Kind::Real, "4", "largest z"),
            p("n-z", Kind::Count, "64", "z points"),
        ],
    },
    Schema {
        name: "kick-compare",
        about: "Joint charge/test-particle state after the kick: exact sector sum against weak substitution",
        params: &[
            p("alpha-up", Kind::Real, "0.8", "postselected amplitude of spin up"),
            p("alpha-down", Kind::Real, "-0.6", "postselected amplitude of spin down"),
            p("n", Kind::Count, "250", "number of spins"),
            p("t", Kind::PositiveOrAuto, "auto", "evolution time; auto puts w t = 3 eps"),
            p("eps", Kind::Positive, "1", "width of both packets"),
            p("q", Kind::Real, "1", "charge of the walker"),
            p("test-z", Kind::Real, "-42", "centre of the test particle"),
            p("dx", Kind::NonNegative, "3", "transverse offset of the test particle"),
            p("phase", Kind::Positive, "0.3", "largest weak kick phase; fixes q'"),
            p("points", Kind::Count, "128", "grid points per axis"),
            p("mode", Kind::Choice(MODES), "closed_form", "field mode of the weak branch"),
            p("mass", Kind::PositiveOrAuto, "auto", "test-particle mass; auto is infinite"),
            p("substeps", Kind::Count, "8", "split-step substeps for finite mass"),
        ],
    },
    Schema {
        name: "light-cone",
        about: "Exact evolution of a hard-truncated packet and its support bound",
        params: &[
            p("alpha-up", Kind::Real, "0.8", "postselected amplitude of spin up"),
            p("alpha-down", Kind::Real, "-0.6", "postselected amplitude of spin down"),
            p("n", Kind::Count, "1000", "number of spins"),
            p("t", Kind::PositiveOrAuto, "auto", "evolution time; auto puts w t = 3 eps"),
            p("eps", Kind::Positive, "1", "packet width"),
            p("truncation", Kind::Positive, "5", "truncation half-width in units of eps"),
            p("spacing", Kind::Positive, "0.125", "grid spacing in units of eps"),
        ],
    },
    Schema {
        name: "causality",
        about: "Resolution and fluctuation conditions for an observer of the field",
        params: &[
            p("q2", Kind::Positive, "0.0072992700729927005", "squared charge q^2"),
            p("n", Kind::Count, "137", "number of spins"),
            p("w", Kind::Real, "7", "weak velocity"),
            p("eps", Kind::Positive, "1", "packet width"),
            p("distance", Kind::Positive, "1", "observer distance D"),
            p("horizon", Kind::Positive, "1", "time horizon T"),
            p("delta-e", Kind::PositiveOrAuto, "auto", "field resolution; auto is 1/D^2"),
        ],
    },
];

pub fn schema(name: &str) -> Option<&'static Schema> {
    SCHEMAS.iter().find(|s| s.name == name)
}

/// Flat `key = value` text; `#` starts a comment. Keys may use `_` or `-`.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, Failure> {
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Failure::Usage(format!("config line {}: expected key = value", k + 1)));
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Failure::Usage(format!("config line {}: empty key", k + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Failure::Usage(format!("config line {}: duplicate key {key}", k + 1)));
        }
    }
    Ok(out)
}

/// Resolved parameters of one subcommand, in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub subcommand: &'static str,
    values: Vec<(&'static str, Value)>,
}

impl Params {
    /// Flags override the config file, which overrides the defaults.
    /// `config` may hold `out`; every other key must belong to the schema.
    pub fn resolve(
        schema: &'static Schema,
        flags: &BTreeMap<&'static str, String>,
        config: &BTreeMap<String, String>,
    ) -> Result<Self, Failure> {
        for key in config.keys() {
            if key != "out" && !schema.params.iter().any(|p| p.name == key) {
                return Err(Failure::Usage(format!("config: unknown key {key:?} for {}", schema.name)));
            }
        }
        let mut values = Vec::with_capacity(schema.params.len());
        for p in schema.params {
            let raw = flags
                .get(p.name)
                .map(String::as_str)
                .or_else(|| config.get(p.name).map(String::as_str))
                .unwrap_or(p.default);
            let v = p.kind.parse(raw).map_err(|e| Failure::Usage(format!("--{}: {e}", p.name)))?;
            values.push((p.name, v));
        }
        Ok(Self { subcommand: schema.name, values })
    }

    fn get(&self, name: &str) -> &Value {
        &self.values.iter().find(|(k, _)| *k == name).unwrap_or_else(|| panic!("no parameter {name}")).1
    }

    pub fn real(&self, name: &str) -> f64 {
        match self.get(name) {
            Value::Real(x) => *x,
            v => panic!("{name} is not a number: {v:?}"),
        }
    }

    /// `None` for `auto`.
    pub fn real_or_auto(&self, name: &str) -> Option<f64> {
        match self.get(name) {
            Value::Real(x) => Some(*x),
            Value::Auto => None,
            v => panic!("{name} is not a number: {v:?}"),
        }
    }

    pub fn count(&self, name: &str) -> u64 {
        match self.get(name) {
            Value::Count(n) => *n,
            v => panic!("{name} is not an integer: {v:?}"),
        }
    }

    pub fn spins(&self, name: &str) -> Result<u32, Failure> {
        u32::try_from(self.count(name)).map_err(|_| Failure::Usage(format!("--{name} is too large")))
    }

    pub fn reals(&self, name: &str) -> &[f64] {
        match self.get(name) {
            Value::Reals(v) => v,
            v => panic!("{name} is not a list: {v:?}"),
        }
    }

    pub fn counts(&self, name: &str) -> &[u32] {
        match self.get(name) {
            Value::Counts(v) => v,
            v => panic!("{name} is not a list: {v:?}"),
        }
    }

    pub fn choice(&self, name: &str) -> &str {
        match self.get(name) {
            Value::Choice(s) => s,
            v => panic!("{name} is not a choice: {v:?}"),
        }
    }

    /// Config-file text that reproduces this parameter set.
    pub fn to_config(&self) -> String {
        let mut s = format!("# weakflow {}\n", self.subcommand);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// SHA-256 of the subcommand name and the canonical parameter text.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_config().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        for (k, v) in &self.values {
            let j = match v {
                Value::Real(x) => serde_json::json!(x),
                Value::Count(n) => serde_json::json!(n),
                Value::Reals(x) => serde_json::json!(x),
                Value::Counts(x) => serde_json::json!(x),
                Value::Auto => serde_json::json!("auto"),
                Value::Choice(s) => serde_json::json!(s),
            };
            m.insert((*k).to_string(), j);
        }
        serde_json::Value::Object(m)
    }
}
