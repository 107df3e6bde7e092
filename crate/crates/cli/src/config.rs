//! Flat `key = value` config files and flag/file/env/default resolution.
//!
//! Precedence, highest first: command-line flag, config file, `UL_SEED`
//! (seed keys only), built-in default. Every resolved key is echoed to
//! stderr in config-file syntax, so the echo can be fed back via `--config`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Display};
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Marks errors that map to the usage exit code.
#[derive(Debug)]
pub struct Usage(pub String);

impl Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub const SEED_ENV: &str = "UL_SEED";

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str, origin: &str) -> anyhow::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{origin}:{}: expected `key = value`, got {raw:?}", i + 1)))?;
        let key = normalize(k);
        if key.is_empty() {
            return Err(usage(format!("{origin}:{}: empty key", i + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(usage(format!("{origin}:{}: duplicate key {key:?}", i + 1)));
        }
    }
    Ok(out)
}

pub struct Resolver {
    command: &'static str,
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn new(command: &'static str, config: Option<&Path>) -> anyhow::Result<Self> {
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text, &p.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { command, file, used: BTreeSet::new(), resolved: Vec::new() })
    }

    fn from_file<T>(&mut self, key: &str) -> anyhow::Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(raw) = self.file.get(key) else { return Ok(None) };
        self.used.insert(key.to_string());
        raw.parse::<T>().map(Some).map_err(|e| usage(format!("config key {key} = {raw:?}: {e}")))
    }

    fn record(&mut self, key: &str, value: String) {
        self.resolved.push((key.to_string(), value));
    }

    /// Flag, then config file, then `default`.
    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> anyhow::Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_file = self.from_file(key)?;
        let v = flag.or(from_file).unwrap_or(default);
        self.record(key, v.to_string());
        Ok(v)
    }

    /// Like [`Resolver::value`] without a default; absent keys are not echoed.
    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> anyhow::Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_file = self.from_file(key)?;
        let v = flag.or(from_file);
        if let Some(x) = &v {
            self.record(key, x.to_string());
        }
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> anyhow::Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| usage(format!("{} requires --{} (or `{key} = ...` in the config file)", self.command, key.replace('_', "-"))))
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> anyhow::Result<Option<PathBuf>> {
        Ok(self.optional::<String>(key, flag.map(|p| p.display().to_string()))?.map(PathBuf::from))
    }

    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
        Ok(PathBuf::from(self.required::<String>(key, flag.map(|p| p.display().to_string()))?))
    }

    /// Repeatable path flag; the config file form is comma-separated.
    pub fn paths(&mut self, key: &str, flag: Vec<PathBuf>) -> anyhow::Result<Vec<PathBuf>> {
        let from_file: Option<String> = self.from_file(key)?;
        let v: Vec<PathBuf> = if !flag.is_empty() {
            flag
        } else {
            from_file
                .map(|s| s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect())
                .unwrap_or_default()
        };
        if !v.is_empty() {
            let joined: Vec<String> = v.iter().map(|p| p.display().to_string()).collect();
            self.record(key, joined.join(","));
        }
        Ok(v)
    }

    /// Flag, then config file, then `UL_SEED`, then 0.
    pub fn seed(&mut self, key: &str, flag: Option<u64>) -> anyhow::Result<u64> {
        let env = match std::env::var(SEED_ENV) {
            Ok(s) => Some(s.trim().parse::<u64>().map_err(|e| usage(format!("{SEED_ENV}={s:?}: {e}")))?),
            Err(_) => None,
        };
        let from_file = self.from_file(key)?;
        let v = flag.or(from_file).or(env).unwrap_or(0);
        self.record(key, v.to_string());
        Ok(v)
    }

    /// Echoes a value that did not come from flags (e.g. read from a checkpoint).
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.record(key, value.to_string());
    }

    /// Rejects unknown config keys and echoes the resolved config to stderr.
    pub fn finish(self) -> anyhow::Result<()> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if !unknown.is_empty() {
            let names: Vec<&str> = unknown.iter().map(|s| s.as_str()).collect();
            return Err(usage(format!("unknown config key(s) for {}: {}", self.command, names.join(", "))));
        }
        eprint!("{}", self.echo());
        Ok(())
    }

    pub fn echo(&self) -> String {
        let mut s = format!("# ulkit {}\n", self.command);
        for (k, v) in &self.resolved {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dashes() {
        let m = parse_config("# top\nbatch-size = 8  # trailing\n\nlr=0.01\n", "x").unwrap();
        assert_eq!(m["batch_size"], "8");
        assert_eq!(m["lr"], "0.01");
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn rejects_malformed_and_duplicates() {
        assert!(parse_config("steps 10", "x").is_err());
        assert!(parse_config("steps = 1\nsteps = 2", "x").is_err());
        assert!(parse_config("= 3", "x").is_err());
    }

    fn with_file(text: &str) -> Resolver {
        Resolver { command: "t", file: parse_config(text, "x").unwrap(), used: BTreeSet::new(), resolved: Vec::new() }
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let mut r = with_file("steps = 5\nlr = 0.5");
        assert_eq!(r.value("steps", Some(9usize), 1).unwrap(), 9);
        assert_eq!(r.value("lr", None, 1.0f64).unwrap(), 0.5);
        assert_eq!(r.value("warmup", None, 7usize).unwrap(), 7);
        assert_eq!(r.echo(), "# ulkit t\nsteps = 9\nlr = 0.5\nwarmup = 7\n");
        r.finish().unwrap();
    }

    #[test]
    fn unknown_key_is_usage_error() {
        let mut r = with_file("steps = 5\nbogus = 1");
        r.value("steps", None, 1usize).unwrap();
        let e = r.finish().unwrap_err();
        assert!(e.downcast_ref::<Usage>().is_some());
    }

    #[test]
    fn bad_file_value_is_usage_error() {
        let mut r = with_file("steps = many");
        assert!(r.value("steps", None, 1usize).unwrap_err().downcast_ref::<Usage>().is_some());
    }

    #[test]
    fn path_lists() {
        let mut r = with_file("data = a, b");
        let v = r.paths("data", vec![]).unwrap();
        assert_eq!(v, vec![PathBuf::from("a"), PathBuf::from("b")]);
        assert!(r.echo().contains("data = a,b"));
    }
}
