//! Report serialization: JSON with floats rounded to six significant digits.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use pasc_core::fmt::round6;
use serde::Serialize;
use serde_json::Value;

/// Rounds every non-integer number in `v`. Integers stay exact.
pub fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let f = n.as_f64().expect("f64 number");
            *v = serde_json::Number::from_f64(round6(f)).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

pub fn to_json(report: &impl Serialize) -> Result<String> {
    let mut v = serde_json::to_value(report)?;
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Writes the JSON report to `out` (and `csv` next to it with a `.csv`
/// extension), or prints the JSON when `out` is absent.
pub fn emit(report: &impl Serialize, csv: Option<&str>, out: Option<&Path>) -> Result<()> {
    let json = to_json(report)?;
    match out {
        None => print!("{json}"),
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
            if let Some(csv) = csv {
                let p = path.with_extension("csv");
                fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?;
            }
        }
    }
    Ok(())
}
