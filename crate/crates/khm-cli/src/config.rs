//! Flat `section.key = value` configuration with typed validation.

use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;

pub const CONFIG_ENV: &str = "KHM_CONFIG";

#[derive(Clone, Copy, Debug)]
enum Kind {
    Float { min: f64, max: f64 },
    Int { min: u64, max: u64 },
    Choice(&'static [&'static str]),
    Bool,
    Text,
}

struct KeySpec {
    key: &'static str,
    default: &'static str,
    kind: Kind,
}

const fn float(key: &'static str, default: &'static str, min: f64, max: f64) -> KeySpec {
    KeySpec { key, default, kind: Kind::Float { min, max } }
}

const fn int(key: &'static str, default: &'static str, min: u64, max: u64) -> KeySpec {
    KeySpec { key, default, kind: Kind::Int { min, max } }
}

const fn choice(key: &'static str, default: &'static str, options: &'static [&'static str]) -> KeySpec {
    KeySpec { key, default, kind: Kind::Choice(options) }
}

const INF: f64 = f64::INFINITY;

const KEYS: &[KeySpec] = &[
    KeySpec { key: "output.dir", default: "khm-out", kind: Kind::Text },
    int("run.threads", "0", 0, 4096),
    KeySpec { key: "run.deterministic", default: "false", kind: Kind::Bool },
    int("grid.n", "32", 4, 1024),
    choice("kernel.profile", "bump", &["bump", "gaussian"]),
    float("kernel.epsilon", "0.5", 1e-6, 3.2),
    choice("quad.scheme", "fibonacci", &["fibonacci", "fibonacci_equal", "gauss_product"]),
    int("quad.directions", "512", 2, 1 << 20),
    int("quad.radial_nodes", "32", 1, 4096),
    float("quad.grading", "2", 1.0, 16.0),
    float("scan.lambda_min", "0.1", 1e-9, 3.2),
    float("scan.lambda_max", "1.0", 1e-9, 3.2),
    int("scan.lambda_count", "8", 1, 4096),
    int("scan.stride", "1", 1, 64),
    choice("solver.model", "emhd", &["emhd", "hallmhd"]),
    float("solver.d_i", "1", 0.0, INF),
    float("solver.nu", "0", 0.0, INF),
    float("solver.eta", "0", 0.0, INF),
    float("solver.hyper_nu", "0", 0.0, INF),
    float("solver.dt", "1e-3", 1e-12, INF),
    float("solver.t_end", "1", 0.0, INF),
    float("solver.cfl", "0.5", 1e-6, 10.0),
    float("solver.snapshot_interval", "0.25", 0.0, INF),
    choice("ic.kind", "random_lowk", &["abc", "random_lowk", "orszag_tang_3d"]),
    int("ic.seed", "1", 0, u64::MAX),
    float("ic.kmax", "3", 1.0, INF),
    float("ic.amplitude", "1", 0.0, INF),
    int("identities.grid_n", "32", 8, 256),
    int("identities.kmax", "4", 1, 64),
    int("identities.seed", "11", 0, u64::MAX),
    int("identities.samples", "10000", 1, 100_000_000),
    int("identities.per_axis", "4", 1, 64),
    int("audit.warmup_steps", "100", 0, 10_000_000),
    int("audit.gap_steps", "2", 1, 10_000),
    float("laws.window_start", "0", 0.0, INF),
    float("laws.window_end", "inf", 0.0, INF),
    float("laws.ratio_lo", "0.5", 0.0, INF),
    float("laws.ratio_hi", "2.0", 0.0, INF),
    float("laws.min_decades", "0.5", 0.0, INF),
    float("laws.max_route_gap", "0.2", 0.0, INF),
    float("tolerances.constants", "1e-8", 0.0, INF),
    float("tolerances.projection", "1e-6", 0.0, INF),
    float("tolerances.lemma21", "1e-12", 0.0, INF),
    float("tolerances.lemma22", "5e-3", 0.0, INF),
    float("tolerances.hall_rewrites", "1e-10", 0.0, INF),
    float("tolerances.operators", "1e-10", 0.0, INF),
    float("tolerances.conservation", "1e-6", 0.0, INF),
    float("tolerances.khm", "1e-2", 0.0, INF),
];

#[derive(Debug, Default)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for p in &self.problems {
            writeln!(f, "  {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|s| s.key == key)
}

fn check(spec: &KeySpec, value: &str) -> Result<String, String> {
    let key = spec.key;
    match spec.kind {
        Kind::Float { min, max } => {
            let v: f64 = value.parse().map_err(|_| format!("{key}: '{value}' is not a number"))?;
            if v.is_nan() || v < min || v > max {
                return Err(format!("{key}: {v} outside [{min}, {max}]"));
            }
            Ok(value.to_string())
        }
        Kind::Int { min, max } => {
            let v: u64 = value.parse().map_err(|_| format!("{key}: '{value}' is not a non-negative integer"))?;
            if v < min || v > max {
                return Err(format!("{key}: {v} outside [{min}, {max}]"));
            }
            Ok(value.to_string())
        }
        Kind::Choice(opts) => {
            if opts.contains(&value) {
                Ok(value.to_string())
            } else {
                Err(format!("{key}: '{value}' is not one of {}", opts.join(", ")))
            }
        }
        Kind::Bool => match value {
            "true" | "false" => Ok(value.to_string()),
            _ => Err(format!("{key}: '{value}' is not true/false")),
        },
        Kind::Text => {
            if value.is_empty() {
                Err(format!("{key}: empty value"))
            } else {
                Ok(value.to_string())
            }
        }
    }
}

/// Split `key = value`, dropping `#` comments and blank lines.
fn parse_line(line: &str) -> Option<Result<(String, String), String>> {
    let line = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
    .trim();
    if line.is_empty() {
        return None;
    }
    Some(match line.split_once('=') {
        Some((k, v)) => Ok((k.trim().to_string(), v.trim().to_string())),
        None => Err(format!("expected 'key = value', got '{line}'")),
    })
}

impl Config {
    pub fn defaults() -> Self {
        Config { values: KEYS.iter().map(|s| (s.key.to_string(), s.default.to_string())).collect() }
    }

    /// Build from an optional file (None or "default" means built-in
    /// defaults) and `K=V` overrides. All problems are collected before
    /// returning so the user sees every bad key at once.
    pub fn resolve(file: Option<&str>, sets: &[String]) -> Result<Self, ConfigError> {
        let mut cfg = Config::defaults();
        let mut err = ConfigError::default();
        let mut apply = |origin: &str, k: String, v: String, err: &mut ConfigError| match spec(&k) {
            None => err.problems.push(format!("{origin}: unknown key '{k}'")),
            Some(s) => match check(s, &v) {
                Ok(v) => {
                    cfg.values.insert(k, v);
                }
                Err(e) => err.problems.push(format!("{origin}: {e}")),
            },
        };
        if let Some(path) = file.filter(|p| *p != "default") {
            match std::fs::read_to_string(path) {
                Err(e) => err.problems.push(format!("{path}: {e}")),
                Ok(text) => {
                    for (i, line) in text.lines().enumerate() {
                        let origin = format!("{path}:{}", i + 1);
                        match parse_line(line) {
                            None => {}
                            Some(Err(e)) => err.problems.push(format!("{origin}: {e}")),
                            Some(Ok((k, v))) => apply(&origin, k, v, &mut err),
                        }
                    }
                }
            }
        }
        for s in sets {
            match s.split_once('=') {
                Some((k, v)) => apply("--set", k.trim().to_string(), v.trim().to_string(), &mut err),
                None => err.problems.push(format!("--set: expected K=V, got '{s}'")),
            }
        }
        if err.problems.is_empty() {
            cfg.cross_checks(&mut err);
        }
        if err.problems.is_empty() {
            Ok(cfg)
        } else {
            Err(err)
        }
    }

    fn cross_checks(&self, err: &mut ConfigError) {
        if self.f64("scan.lambda_min") > self.f64("scan.lambda_max") {
            err.problems.push("scan.lambda_min: larger than scan.lambda_max".into());
        }
        if self.f64("laws.window_start") > self.f64("laws.window_end") {
            err.problems.push("laws.window_start: larger than laws.window_end".into());
        }
        if self.f64("laws.ratio_lo") > self.f64("laws.ratio_hi") {
            err.problems.push("laws.ratio_lo: larger than laws.ratio_hi".into());
        }
        if self.usize("grid.n") % 2 != 0 {
            err.problems.push("grid.n: must be even".into());
        }
        if self.usize("identities.grid_n") % 2 != 0 {
            err.problems.push("identities.grid_n: must be even".into());
        }
    }

    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("config key '{key}' is not declared"))
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.raw(key).parse().expect("validated float")
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.raw(key).parse().expect("validated integer")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.u64(key) as usize
    }

    pub fn bool(&self, key: &str) -> bool {
        self.raw(key) == "true"
    }

    pub fn text(&self, key: &str) -> &str {
        self.raw(key)
    }

    /// Sorted `key = value` lines; parsing this text gives the same config.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass_their_own_validation() {
        for s in KEYS {
            assert!(check(s, s.default).is_ok(), "{}", s.key);
        }
        assert!(Config::resolve(None, &[]).is_ok());
    }

    #[test]
    fn unknown_and_bad_keys_are_all_reported() {
        let sets = vec!["solver.modle=emhd".to_string(), "kernel.epsilon=-1".into(), "ic.kind=vortex".into(), "grid.n".into()];
        let e = Config::resolve(Some("default"), &sets).unwrap_err();
        assert_eq!(e.problems.len(), 4, "{e}");
        assert!(e.problems[0].contains("solver.modle"));
        assert!(e.problems[1].contains("kernel.epsilon"));
    }

    #[test]
    fn resolved_text_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let c = Config::resolve(None, &["solver.model=hallmhd".into(), "ic.seed=42".into()]).unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, c.to_text()).unwrap();
        let back = Config::resolve(p.to_str(), &[]).unwrap();
        assert_eq!(back.to_text(), c.to_text());
        assert_eq!(back.hash(), c.hash());
        assert_eq!(back.text("solver.model"), "hallmhd");
        assert_eq!(back.u64("ic.seed"), 42);
    }

    #[test]
    fn file_comments_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "# run\nsolver.dt = 2e-3  # coarse\n\nic.kind = abc\n").unwrap();
        let c = Config::resolve(p.to_str(), &["solver.dt=5e-4".into()]).unwrap();
        assert_eq!(c.f64("solver.dt"), 5e-4);
        assert_eq!(c.text("ic.kind"), "abc");
        std::fs::write(&p, "solver.dt 2e-3\n").unwrap();
        let e = Config::resolve(p.to_str(), &[]).unwrap_err();
        assert!(e.problems[0].contains(":1:"));
    }

    #[test]
    fn cross_field_checks() {
        let e = Config::resolve(None, &["scan.lambda_min=2".into(), "scan.lambda_max=1".into()]).unwrap_err();
        assert!(e.problems[0].contains("scan.lambda_min"));
    }
}
