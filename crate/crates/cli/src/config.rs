//! Sectioned `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

const SCHEMA: &[(&str, &[&str])] = &[
    (
        "scenario",
        &[
            "family",
            "setting",
            "n",
            "noise",
            "length_scale",
            "reps",
            "replicates_per_subject",
            "grid_size",
            "seed",
            "covariate_basis",
            "p_rounding",
            "binary_link",
            "surrogate",
            "p",
        ],
    ),
    (
        "solver",
        &["tol", "max_iter", "max_halvings", "jacobian_ridge", "outer_max", "gaussian_equation"],
    ),
    ("selection", &["epsilon", "cap", "source", "p_n"]),
    ("io", &["out", "curves", "replicates", "response", "diagnostics"]),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    entries: BTreeMap<(String, String), Entry>,
    source: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        cfg.source = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = strip_comment(raw).trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|c| c.strip_suffix(']')) {
                let name = name.trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(ConfigError(format!("line {line}: unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {line}: expected 'key = value', found '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| ConfigError(format!("line {line}: key '{key}' appears before any [section]")))?;
            let known = SCHEMA.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
            if !known.contains(&key) {
                return Err(ConfigError(format!("line {line}: unknown key '{key}' in [{sec}]")));
            }
            if value.is_empty() {
                return Err(ConfigError(format!("line {line}: [{sec}] {key} has no value")));
            }
            let slot = (sec.to_string(), key.to_string());
            if let Some(prev) = entries.get(&slot) {
                let prev: &Entry = prev;
                return Err(ConfigError(format!(
                    "line {line}: [{sec}] {key} is already set on line {}",
                    prev.line
                )));
            }
            entries.insert(
                slot,
                Entry {
                    value: value.to_string(),
                    line,
                },
            );
        }
        Ok(RunConfig { entries, source: None })
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(|e| e.value.as_str())
    }

    fn bad(&self, section: &str, key: &str, msg: impl fmt::Display) -> ConfigError {
        let line = self
            .entries
            .get(&(section.to_string(), key.to_string()))
            .map(|e| format!(" (line {})", e.line))
            .unwrap_or_default();
        ConfigError(format!("[{section}] {key}{line}: {msg}"))
    }

    pub fn get<T>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| self.bad(section, key, format!("cannot parse '{v}': {e}"))),
        }
    }

    pub fn require<T>(&self, section: &str, key: &str) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.get(section, key)?
            .ok_or_else(|| ConfigError(format!("missing required key [{section}] {key}")))
    }

    /// Comma-separated values; a single value is a one-element list.
    pub fn list<T>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let Some(v) = self.raw(section, key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse::<T>()
                    .map_err(|e| self.bad(section, key, format!("cannot parse '{item}': {e}")))
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    pub fn require_list<T>(&self, section: &str, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.list(section, key)?
            .ok_or_else(|| ConfigError(format!("missing required key [{section}] {key}")))
    }

    /// A positive real, e.g. a noise level.
    pub fn check_positive(&self, section: &str, key: &str, value: f64) -> Result<(), ConfigError> {
        if value > 0.0 && value.is_finite() {
            Ok(())
        } else {
            Err(self.bad(section, key, format!("must be > 0, got {value}")))
        }
    }

    pub fn check(&self, section: &str, key: &str, ok: bool, msg: impl fmt::Display) -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            Err(self.bad(section, key, msg))
        }
    }

    /// Paths in `[io]` are relative to the config file's directory.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = PathBuf::from(self.raw("io", key)?);
        match (&self.source, raw.is_relative()) {
            (Some(src), true) => Some(src.parent().unwrap_or(Path::new("")).join(raw)),
            _ => Some(raw),
        }
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_lists_and_comments() {
        let cfg = RunConfig::parse(
            "# sweep\n[scenario]\nfamily = gaussian\nlength_scale = 0.05, 0.08 ,0.1  # three\n\n[solver]\ntol=1e-9\n",
        )
        .unwrap();
        assert_eq!(cfg.raw("scenario", "family"), Some("gaussian"));
        assert_eq!(cfg.list::<f64>("scenario", "length_scale").unwrap().unwrap(), vec![0.05, 0.08, 0.1]);
        assert_eq!(cfg.get::<f64>("solver", "tol").unwrap(), Some(1e-9));
        assert_eq!(cfg.get::<usize>("solver", "max_iter").unwrap(), None);
    }

    #[test]
    fn unknown_keys_and_sections_are_named() {
        let e = RunConfig::parse("[scenario]\nlengthscale = 0.1\n").unwrap_err();
        assert!(e.0.contains("unknown key 'lengthscale'") && e.0.contains("line 2"), "{e}");
        let e = RunConfig::parse("[scenarios]\n").unwrap_err();
        assert!(e.0.contains("unknown section [scenarios]"));
        let e = RunConfig::parse("n = 3\n").unwrap_err();
        assert!(e.0.contains("before any [section]"));
        let e = RunConfig::parse("[scenario]\nn = 3\nn = 4\n").unwrap_err();
        assert!(e.0.contains("already set on line 2"));
    }

    #[test]
    fn bad_values_name_the_key() {
        let cfg = RunConfig::parse("[scenario]\nn = many\nnoise = -1\n").unwrap();
        let e = cfg.get::<usize>("scenario", "n").unwrap_err();
        assert!(e.0.contains("[scenario] n (line 2)"), "{e}");
        let e = cfg.check_positive("scenario", "noise", -1.0).unwrap_err();
        assert!(e.0.contains("noise") && e.0.contains("must be > 0"), "{e}");
        assert!(cfg.require::<f64>("scenario", "length_scale").unwrap_err().0.contains("missing"));
    }
}
