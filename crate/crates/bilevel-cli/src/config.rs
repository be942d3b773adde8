//! Flat key/value experiment configuration.
//!
//! The format is a plain INI-style text file: `[section]` headers, one
//! `key = value` pair per line, `#` comments. Sections and keys keep their
//! order, so a config round-trips losslessly through
//! [`ExperimentConfig::parse`] / [`ExperimentConfig::to_config_string`].
//!
//! ```text
//! [experiment]
//! name = demo
//! seeds = 1,2,3
//!
//! [instance]
//! kind = scalar_quadratic
//!
//! [solver]
//! kind = f2ba
//! eps = 1e-3
//! ```

use anyhow::{anyhow, Context, Result};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        if let Some(e) = self.entries.iter_mut().find(|(k, _)| k == key) {
            e.1 = value.to_string();
        } else {
            self.entries.push((key.to_string(), value.to_string()));
        }
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .with_context(|| format!("key '{key}': expected a number, got '{v}'"))
            })
            .transpose()
    }

    pub fn usize_opt(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .with_context(|| format!("key '{key}': expected an integer, got '{v}'"))
            })
            .transpose()
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<bool>()
                .with_context(|| format!("key '{key}': expected true/false, got '{v}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub sections: Vec<Section>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<Section> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("line {}: unterminated section header", ln + 1))?;
                sections.push(Section {
                    name: name.trim().to_string(),
                    entries: Vec::new(),
                });
            } else {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| anyhow!("line {}: expected 'key = value'", ln + 1))?;
                let section = sections
                    .last_mut()
                    .ok_or_else(|| anyhow!("line {}: key before any [section]", ln + 1))?;
                section
                    .entries
                    .push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        Ok(Self { sections })
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            let _ = writeln!(out, "[{}]", s.name);
            for (k, v) in &s.entries {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| anyhow!("missing [{name}] section"))
    }

    pub fn section_mut(&mut self, name: &str) -> &mut Section {
        if !self.sections.iter().any(|s| s.name == name) {
            self.sections.push(Section {
                name: name.to_string(),
                entries: Vec::new(),
            });
        }
        self.sections.iter_mut().find(|s| s.name == name).unwrap()
    }

    /// Apply a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("override '{spec}' must look like section.key=value"))?;
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| anyhow!("override '{spec}' must name section.key"))?;
        self.section_mut(section.trim()).set(key.trim(), value.trim());
        Ok(())
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        let exp = self.section("experiment")?;
        let raw = exp.get("seeds").unwrap_or("0");
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .with_context(|| format!("bad seed '{s}'"))
            })
            .collect()
    }

    pub fn name(&self) -> String {
        self.section("experiment")
            .ok()
            .and_then(|s| s.get("name"))
            .unwrap_or("experiment")
            .to_string()
    }
}
