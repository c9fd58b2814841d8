//! Self-describing JSON and CSV reports with a content hash.

use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

/// Keys left out of the content hash because they vary between identical runs.
pub const VOLATILE_KEYS: &[&str] = &["timestamp", "elapsed_ms"];

fn strip(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.iter()
                .filter(|(k, _)| !VOLATILE_KEYS.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), strip(v)))
                .collect::<Map<_, _>>(),
        ),
        Value::Array(a) => Value::Array(a.iter().map(strip).collect()),
        other => other.clone(),
    }
}

/// SHA-256 of the compact JSON with volatile keys removed (object keys are sorted).
pub fn content_hash(v: &Value) -> String {
    let canon = serde_json::to_string(&strip(v)).expect("json values always serialize");
    Sha256::digest(canon.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// `{"command", "config", "result", "timestamp", "hash"}`; the hash covers everything but itself
/// and the volatile keys.
pub fn envelope(command: &str, config: &impl Serialize, result: &impl Serialize) -> Value {
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut v = json!({
        "command": command,
        "config": config,
        "result": result,
        "timestamp": ts,
    });
    let h = content_hash(&v);
    v["hash"] = Value::String(h);
    v
}

/// Recomputes the hash of an envelope, ignoring its stored `hash` field.
pub fn verify_envelope(v: &Value) -> bool {
    let Some(stored) = v.get("hash").and_then(Value::as_str) else { return false };
    let mut body = v.clone();
    if let Value::Object(m) = &mut body {
        m.remove("hash");
    }
    content_hash(&body) == stored
}

/// Quotes a CSV field when needed.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Leading `# key=value` comment lines carrying the resolved config and its hash.
pub fn csv_preamble(command: &str, config: &impl Serialize) -> String {
    let cfg = serde_json::to_value(config).unwrap_or(Value::Null);
    let mut s = format!("# command={command}\n# config={}\n", serde_json::to_string(&cfg).unwrap_or_default());
    s += &format!("# hash={}\n", content_hash(&json!({ "command": command, "config": cfg })));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_volatile_keys_and_order() {
        let a = json!({"b": 1.5, "a": [1, {"elapsed_ms": 3, "x": 2}], "timestamp": 9});
        let b = json!({"a": [1, {"x": 2, "elapsed_ms": 70}], "b": 1.5, "timestamp": 10});
        assert_eq!(content_hash(&a), content_hash(&b));
        let c = json!({"a": [1, {"x": 3}], "b": 1.5});
        assert_ne!(content_hash(&a), content_hash(&c));
    }

    #[test]
    fn envelope_round_trip() {
        let e = envelope("x", &json!({"seed": 1}), &json!([1, 2]));
        assert!(verify_envelope(&e));
        let mut bad = e.clone();
        bad["result"] = json!([1, 3]);
        assert!(!verify_envelope(&bad));
        assert_eq!(csv_field("a,b"), "\"a,b\"");
    }
}
