//! Experiment configuration: typed parameter declarations, `key=value`
//! parsing and validation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

/// Type of a parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Float,
    Int,
    FloatList,
}

/// A parsed parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    FloatList(Vec<f64>),
}

/// Declaration of one experiment parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub key: String,
    pub kind: ParamKind,
    /// `None` marks a required key.
    pub default: Option<String>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub help: String,
}

impl ParamSpec {
    pub fn float(key: &str, default: Option<&str>, help: &str) -> Self {
        Self {
            key: key.into(),
            kind: ParamKind::Float,
            default: default.map(Into::into),
            min: None,
            max: None,
            help: help.into(),
        }
    }

    pub fn int(key: &str, default: Option<&str>, help: &str) -> Self {
        Self { kind: ParamKind::Int, ..Self::float(key, default, help) }
    }

    pub fn list(key: &str, default: Option<&str>, help: &str) -> Self {
        Self { kind: ParamKind::FloatList, ..Self::float(key, default, help) }
    }

    /// Inclusive bounds, applied to every element of a list.
    pub fn range(mut self, min: f64, max: f64) -> Self {
        self.min = Some(min);
        self.max = Some(max);
        self
    }

    pub fn required(&self) -> bool {
        self.default.is_none()
    }

    fn parse(&self, raw: &str) -> Result<ParamValue, String> {
        let raw = raw.trim();
        let value = match self.kind {
            ParamKind::Float => ParamValue::Float(parse_float(raw)?),
            ParamKind::Int => ParamValue::Int(raw.parse::<i64>().map_err(|e| format!("`{raw}`: {e}"))?),
            ParamKind::FloatList => {
                let items: Result<Vec<f64>, String> = raw.split(',').map(|s| parse_float(s.trim())).collect();
                let items = items?;
                if items.is_empty() {
                    return Err("empty list".into());
                }
                ParamValue::FloatList(items)
            }
        };
        let numbers: Vec<f64> = match &value {
            ParamValue::Int(i) => vec![*i as f64],
            ParamValue::Float(x) => vec![*x],
            ParamValue::FloatList(v) => v.clone(),
        };
        for x in numbers {
            if self.min.is_some_and(|m| x < m) || self.max.is_some_and(|m| x > m) {
                return Err(format!(
                    "{x} outside [{}, {}]",
                    self.min.unwrap_or(f64::NEG_INFINITY),
                    self.max.unwrap_or(f64::INFINITY)
                ));
            }
        }
        Ok(value)
    }
}

fn parse_float(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|e| format!("`{s}`: {e}"))?;
    if !x.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok(x)
}

/// Validated parameters of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Params(BTreeMap<String, ParamValue>);

impl Params {
    pub fn as_map(&self) -> &BTreeMap<String, ParamValue> {
        &self.0
    }

    fn get(&self, key: &str) -> &ParamValue {
        self.0.get(key).unwrap_or_else(|| panic!("parameter `{key}` is not declared"))
    }

    pub fn f64(&self, key: &str) -> f64 {
        match self.get(key) {
            ParamValue::Float(x) => *x,
            ParamValue::Int(i) => *i as f64,
            ParamValue::FloatList(_) => panic!("parameter `{key}` is a list"),
        }
    }

    pub fn usize(&self, key: &str) -> usize {
        match self.get(key) {
            ParamValue::Int(i) => (*i).max(0) as usize,
            _ => panic!("parameter `{key}` is not an integer"),
        }
    }

    pub fn list(&self, key: &str) -> Vec<f64> {
        match self.get(key) {
            ParamValue::FloatList(v) => v.clone(),
            ParamValue::Float(x) => vec![*x],
            ParamValue::Int(i) => vec![*i as f64],
        }
    }
}

/// Parses flat `key = value` text; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, HarnessError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = parse_assignment(line).map_err(|e| HarnessError::Config(format!("line {}: {e}", n + 1)))?;
        out.insert(k, v);
    }
    Ok(out)
}

/// Splits one `key=value` assignment.
pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// Checks `raw` against `specs`, filling defaults. All offending keys are
/// reported together.
pub fn validate(specs: &[ParamSpec], raw: &BTreeMap<String, String>) -> Result<Params, HarnessError> {
    let mut keys = Vec::new();
    let mut problems = Vec::new();
    for k in raw.keys() {
        if !specs.iter().any(|s| &s.key == k) {
            keys.push(k.clone());
            problems.push(format!("{k}: unknown parameter"));
        }
    }
    let mut values = BTreeMap::new();
    for spec in specs {
        let Some(text) = raw.get(&spec.key).or(spec.default.as_ref()) else {
            keys.push(spec.key.clone());
            problems.push(format!("{}: missing required parameter", spec.key));
            continue;
        };
        match spec.parse(text) {
            Ok(v) => {
                values.insert(spec.key.clone(), v);
            }
            Err(e) => {
                keys.push(spec.key.clone());
                problems.push(format!("{}: {e}", spec.key));
            }
        }
    }
    if keys.is_empty() {
        Ok(Params(values))
    } else {
        Err(HarnessError::Validation { keys, problems })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        vec![
            ParamSpec::float("K", None, "coupling").range(0.0, 100.0),
            ParamSpec::int("n", Some("10"), "count").range(2.0, 1e9),
            ParamSpec::list("times", Some("1,2,5"), "times"),
        ]
    }

    #[test]
    fn parses_file_text() {
        let m = parse_key_values("# header\nK = 2.5  # trailing\n\nn=4\n").unwrap();
        assert_eq!(m["K"], "2.5");
        assert_eq!(m["n"], "4");
        assert!(parse_key_values("K 2").is_err());
    }

    #[test]
    fn fills_defaults_and_types() {
        let raw = BTreeMap::from([("K".to_string(), "2".to_string())]);
        let p = validate(&specs(), &raw).unwrap();
        assert_eq!(p.f64("K"), 2.0);
        assert_eq!(p.usize("n"), 10);
        assert_eq!(p.list("times"), vec![1.0, 2.0, 5.0]);
    }

    #[test]
    fn reports_every_offending_key() {
        let raw = BTreeMap::from([
            ("n".to_string(), "1".to_string()),
            ("bogus".to_string(), "3".to_string()),
            ("times".to_string(), "1,x".to_string()),
        ]);
        match validate(&specs(), &raw) {
            Err(HarnessError::Validation { keys, .. }) => {
                assert_eq!(keys, vec!["bogus", "K", "n", "times"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_finite() {
        let raw = BTreeMap::from([("K".to_string(), "inf".to_string())]);
        assert!(validate(&specs(), &raw).is_err());
    }
}
