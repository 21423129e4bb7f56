//! Byte-stable JSON output: object keys sorted, two-space indent, shortest
//! round-trip decimal for every float, trailing newline.

use anyhow::Result;
use serde::Serialize;
use serde_json::Value;

/// Serializes through [`Value`], whose map type keeps keys sorted.
pub fn to_string<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = serde_json::to_string_pretty(&sorted(v))?;
    out.push('\n');
    Ok(out)
}

// Re-sorts explicitly so the output does not depend on serde_json's
// `preserve_order` feature being off somewhere in the dependency graph.
fn sorted(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, sorted(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sorted).collect()),
        other => other,
    }
}

pub fn write<T: Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    std::fs::write(path, to_string(value)?)
        .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn keys_sorted_at_every_level() {
        let mut inner = HashMap::new();
        inner.insert("zeta", 1.0);
        inner.insert("alpha", 0.1);
        let mut outer = HashMap::new();
        outer.insert("b", vec![inner.clone()]);
        outer.insert("a", vec![inner]);
        let text = to_string(&outer).unwrap();
        let a = text.find("\"a\"").unwrap();
        let b = text.find("\"b\"").unwrap();
        assert!(a < b);
        let alpha = text.find("alpha").unwrap();
        let zeta = text.find("zeta").unwrap();
        assert!(alpha < zeta);
        assert!(text.ends_with("}\n"));
    }

    #[test]
    fn floats_round_trip() {
        let xs = vec![0.1, 1.0 / 3.0, -2.5e-12, 1e300];
        let text = to_string(&xs).unwrap();
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, xs);
        assert!(text.contains("0.1,"));
    }
}
