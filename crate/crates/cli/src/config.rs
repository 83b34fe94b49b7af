//! TOML config files: top-level keys plus one level of `[section]`s.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use toml::Value;

use crate::error::CliError;

/// Parsed config. Getters consume keys so leftovers can be reported.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    path: PathBuf,
    text: String,
    entries: BTreeMap<(String, String), Value>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let text = e.to_string();
            let msg: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            CliError::config(format!("{}: {}", path.display(), msg.join(" ")))
        })?;
        let mut entries = BTreeMap::new();
        for (key, value) in table {
            match value {
                Value::Table(inner) => {
                    for (k, v) in inner {
                        if v.is_table() {
                            return Err(CliError::config(format!(
                                "{}: nested table `{key}.{k}` is not supported",
                                path.display()
                            )));
                        }
                        entries.insert((key.clone(), k), v);
                    }
                }
                v => {
                    entries.insert((String::new(), key), v);
                }
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            text: text.to_string(),
            entries,
        })
    }

    fn bad(&self, section: &str, key: &str, value: &Value, why: impl std::fmt::Display) -> CliError {
        CliError::config(format!(
            "{}: bad value {value} for {}: {why}",
            self.path.display(),
            qualified(section, key)
        ))
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.entries.keys().any(|(s, _)| s == section)
    }

    /// String value; numbers and booleans are accepted in their TOML spelling.
    pub fn take_str(&mut self, section: &str, key: &str) -> Option<String> {
        self.entries.remove(&(section.to_string(), key.to_string())).map(|v| scalar_text(&v))
    }

    pub fn take<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.entries.remove(&(section.to_string(), key.to_string())) else {
            return Ok(None);
        };
        if v.is_array() {
            return Err(self.bad(section, key, &v, "expected a single value"));
        }
        scalar_text(&v).parse().map(Some).map_err(|err| self.bad(section, key, &v, err))
    }

    pub fn take_or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(section, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, section: &str, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.take(section, key)?
            .ok_or_else(|| CliError::config(format!("{}: missing {}", self.path.display(), qualified(section, key))))
    }

    /// Array value; a lone scalar counts as a one-element list.
    pub fn take_list<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.entries.remove(&(section.to_string(), key.to_string())) else {
            return Ok(None);
        };
        let items = match &v {
            Value::Array(items) => items.clone(),
            other => vec![other.clone()],
        };
        items
            .iter()
            .map(|item| match item {
                Value::Array(_) | Value::Table(_) => Err(self.bad(section, key, &v, "expected a flat list")),
                _ => scalar_text(item).parse::<T>().map_err(|err| self.bad(section, key, &v, err)),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Path relative to the config file's directory.
    pub fn take_path(&mut self, section: &str, key: &str) -> Option<PathBuf> {
        self.take_str(section, key).map(|p| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                self.path.parent().unwrap_or(Path::new(".")).join(p)
            }
        })
    }

    /// Fails on any key nobody asked for.
    pub fn finish(self) -> Result<(), CliError> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some((s, k)) => Err(CliError::config(format!(
                "{}: unknown key {}",
                self.path.display(),
                qualified(s, k)
            ))),
        }
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        format!("`{key}`")
    } else {
        format!("`{section}.{key}`")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_leftovers() {
        let text = "seed = 3 # run seed\n[til]\ncapacity = 30\nhidden = [8, 8]\nname = \"x\"\nlr = 1e-3\n";
        let mut c = ConfigFile::parse(Path::new("c.toml"), text).unwrap();
        assert_eq!(c.take::<u64>("", "seed").unwrap(), Some(3));
        assert_eq!(c.take_list::<usize>("til", "hidden").unwrap(), Some(vec![8, 8]));
        assert_eq!(c.take_str("til", "name").as_deref(), Some("x"));
        assert_eq!(c.take::<f64>("til", "lr").unwrap(), Some(1e-3));
        assert!(c.take::<f64>("til", "missing").unwrap().is_none());
        let err = c.finish().unwrap_err();
        assert!(err.to_string().contains("til.capacity"), "{err}");
    }

    #[test]
    fn malformed_input_is_one_line() {
        for bad in ["[til\n", "justaword\n", "a = 1\na = 2\n", "[a.b]\nc = 1\n"] {
            let err = ConfigFile::parse(Path::new("c"), bad).unwrap_err().to_string();
            assert_eq!(err.lines().count(), 1, "{err}");
        }
        let mut c = ConfigFile::parse(Path::new("c"), "a = \"x\"\nb = [1, 2]\n").unwrap();
        assert!(c.take::<u32>("", "a").unwrap_err().to_string().contains("`a`"));
        assert!(c.take::<u32>("", "b").is_err());
        assert_eq!(c.take::<f64>("", "missing").unwrap(), None);
    }
}
