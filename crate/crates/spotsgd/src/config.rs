//! Flat `key = value` config files for the analysis constants and the
//! runtime model. One key per line, `#` starts a comment.
//!
//! Keys for the SGD constants: `lipschitz`, `strong_convexity`,
//! `moment_lower`, `moment_upper`, `variance_offset`, `variance_scalar`,
//! `step_size`, `initial_gap`.
//!
//! Keys for the runtime model: `runtime_family` (one of `exponential`,
//! `shifted-exponential`, `deterministic`), `runtime_rate`, `runtime_shift`,
//! `runtime_time`, `runtime_overhead`.

use std::collections::BTreeMap;

use crate::convergence::SgdConstants;
use crate::error::{Error, Result};
use crate::runtime::RuntimeModel;

/// Parse a flat key-value document. Duplicate keys are rejected.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                idx + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("duplicate key `{key}`")));
        }
    }
    Ok(map)
}

/// Render a map back into the flat format (keys sorted).
pub fn write_flat(map: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in map {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}

fn get_f64(map: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::Config(format!("key `{key}`: unparseable number `{raw}`")))
}

pub fn sgd_constants_from_map(map: &BTreeMap<String, String>) -> Result<SgdConstants> {
    let k = SgdConstants {
        lipschitz: get_f64(map, "lipschitz")?,
        strong_convexity: get_f64(map, "strong_convexity")?,
        moment_lower: get_f64(map, "moment_lower")?,
        moment_upper: get_f64(map, "moment_upper")?,
        variance_offset: get_f64(map, "variance_offset")?,
        variance_scalar: get_f64(map, "variance_scalar")?,
        step_size: get_f64(map, "step_size")?,
        initial_gap: get_f64(map, "initial_gap")?,
    };
    k.validate()?;
    Ok(k)
}

pub fn sgd_constants_to_map(k: &SgdConstants) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    let mut put = |key: &str, v: f64| {
        map.insert(key.to_string(), format!("{v}"));
    };
    put("lipschitz", k.lipschitz);
    put("strong_convexity", k.strong_convexity);
    put("moment_lower", k.moment_lower);
    put("moment_upper", k.moment_upper);
    put("variance_offset", k.variance_offset);
    put("variance_scalar", k.variance_scalar);
    put("step_size", k.step_size);
    put("initial_gap", k.initial_gap);
    map
}

pub fn runtime_model_from_map(map: &BTreeMap<String, String>) -> Result<RuntimeModel> {
    let family = map
        .get("runtime_family")
        .ok_or_else(|| Error::Config("missing key `runtime_family`".into()))?;
    let overhead = if map.contains_key("runtime_overhead") {
        get_f64(map, "runtime_overhead")?
    } else {
        0.0
    };
    let model = match family.as_str() {
        "exponential" => RuntimeModel::Exponential {
            rate: get_f64(map, "runtime_rate")?,
            overhead,
        },
        "shifted-exponential" => RuntimeModel::ShiftedExponential {
            shift: get_f64(map, "runtime_shift")?,
            rate: get_f64(map, "runtime_rate")?,
            overhead,
        },
        "deterministic" => RuntimeModel::Deterministic {
            time: get_f64(map, "runtime_time")?,
            overhead,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown runtime_family `{other}` (expected exponential, shifted-exponential, or deterministic)"
            )))
        }
    };
    model.validate()?;
    Ok(model)
}

pub fn runtime_model_to_map(model: &RuntimeModel) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    let mut put = |key: &str, v: String| {
        map.insert(key.to_string(), v);
    };
    match *model {
        RuntimeModel::Exponential { rate, overhead } => {
            put("runtime_family", "exponential".into());
            put("runtime_rate", format!("{rate}"));
            put("runtime_overhead", format!("{overhead}"));
        }
        RuntimeModel::ShiftedExponential { shift, rate, overhead } => {
            put("runtime_family", "shifted-exponential".into());
            put("runtime_shift", format!("{shift}"));
            put("runtime_rate", format!("{rate}"));
            put("runtime_overhead", format!("{overhead}"));
        }
        RuntimeModel::Deterministic { time, overhead } => {
            put("runtime_family", "deterministic".into());
            put("runtime_time", format!("{time}"));
            put("runtime_overhead", format!("{overhead}"));
        }
    }
    map
}
