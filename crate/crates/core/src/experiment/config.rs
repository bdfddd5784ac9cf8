//! Run configuration: JSON with defaults for every field, plus dotted
//! `key=value` overrides. Errors name the offending key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::aggregation::AggMethod;
use crate::error::{Error, Result};
use crate::netlab::{HeadKind, NetConfig};
use crate::simgen::{ScenarioId, ScenarioSpec};

/// What to run. Every field has a default, so `{}` is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub variants: Vec<HeadKind>,
    pub methods: Vec<AggMethod>,
    /// Members trained per repetition and variant.
    pub max_members: usize,
    /// Ensemble sizes evaluated; each uses the first `n` members.
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    /// Network settings shared by all variants; `head` is set per variant
    /// and `seed` is the base of the member seeds.
    pub net: NetConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSpec::new(ScenarioId::S1, 0),
            variants: HeadKind::ALL.to_vec(),
            methods: AggMethod::ALL.to_vec(),
            max_members: 20,
            sizes: (1..=10).map(|k| 2 * k).collect(),
            repetitions: 10,
            net: NetConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items.iter().enumerate().any(|(i, a)| items[..i].contains(a))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.net.validate().map_err(|e| match e {
            Error::Config { key, message } => Error::config(format!("net.{key}"), message),
            other => other,
        })?;
        if self.variants.is_empty() || has_duplicates(&self.variants) {
            return Err(Error::config("variants", "must be a nonempty list without repeats"));
        }
        if has_duplicates(&self.methods) {
            return Err(Error::config("methods", "must not repeat a method"));
        }
        if self.max_members == 0 {
            return Err(Error::config("max_members", "must be at least 1"));
        }
        if self.sizes.is_empty() {
            return Err(Error::config("sizes", "must list at least one ensemble size"));
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| n < 2 || n > self.max_members) {
            return Err(Error::config(
                "sizes",
                format!("size {n} is outside [2, max_members = {}]", self.max_members),
            ));
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("sizes", "must be strictly increasing"));
        }
        if self.repetitions == 0 {
            return Err(Error::config("repetitions", "must be at least 1"));
        }
        Ok(())
    }

    /// Parses a JSON configuration, applies `key=value` overrides and validates.
    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let user: Value = serde_json::from_str(text)
            .map_err(|e| Error::config("<root>", format!("not valid JSON: {e}")))?;
        Self::from_value(user, overrides)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text, overrides)
    }

    /// Layers `user` over the defaults, then applies the overrides. Unknown
    /// keys are rejected with their dotted path.
    pub fn from_value(user: Value, overrides: &[String]) -> Result<Self> {
        let mut merged = serde_json::to_value(Self::default())?;
        merge(&mut merged, user, "")?;
        for item in overrides {
            apply_override(&mut merged, item)?;
        }
        let config: Self = serde_path_to_error::deserialize(merged).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Recursively replaces values of `base` by those of `user`; objects merge key by key.
fn merge(base: &mut Value, user: Value, path: &str) -> Result<()> {
    match (base, user) {
        (Value::Object(base), Value::Object(user)) => {
            for (key, value) in user {
                let here = join(path, &key);
                let slot = base
                    .get_mut(&key)
                    .ok_or_else(|| Error::config(here.clone(), "unknown field"))?;
                merge(slot, value, &here)?;
            }
            Ok(())
        }
        (Value::Object(_), other) => Err(Error::config(
            if path.is_empty() { "<root>" } else { path },
            format!("expected an object, got {}", json_kind(&other)),
        )),
        (base, user) => {
            *base = user;
            Ok(())
        }
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "a list",
        Value::Object(_) => "an object",
    }
}

/// Parses one override value: JSON where possible, a bare string otherwise,
/// and a comma-separated list where the target is a list.
fn parse_override_value(raw: &str, current: &Value) -> Value {
    let raw = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        if !(current.is_array() && !v.is_array()) {
            return v;
        }
    }
    if current.is_array() {
        let items = raw
            .trim_start_matches('[')
            .trim_end_matches(']')
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string())))
            .collect();
        return Value::Array(items);
    }
    Value::String(raw.to_string())
}

/// Applies `a.b.c=value` to the merged configuration.
fn apply_override(config: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::config(item, "override must have the form key=value"))?;
    let key = key.trim();
    let mut slot = &mut *config;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::config(key, "unknown key"))?;
    }
    if slot.is_object() {
        return Err(Error::config(key, "cannot override a whole section; set its fields"));
    }
    *slot = parse_override_value(raw, slot);
    Ok(())
}
