use serde::Deserialize;
use serde_json::{json, Map, Value};

/// One parsed request line, minus its echoed `req` id.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WireRequest {
    Submit {
        function_id: String,
        #[serde(default)]
        service_hint_ms: Option<u64>,
        #[serde(default = "default_memory")]
        memory_gb: f64,
        #[serde(default)]
        features: Vec<f64>,
    },
    Stats,
    ConfigGet,
    ConfigSet {
        config: Map<String, Value>,
    },
    Shutdown,
}

fn default_memory() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseFailure {
    /// Not a JSON object.
    Syntax,
    UnknownOp(String),
    BadRequest(String),
}

const OPS: [&str; 5] = ["submit", "stats", "config_get", "config_set", "shutdown"];

/// Splits a line into its `req` id (null when absent) and the request.
pub fn parse_line(line: &str) -> (Value, Result<WireRequest, ParseFailure>) {
    let mut obj = match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(m)) => m,
        _ => return (Value::Null, Err(ParseFailure::Syntax)),
    };
    let req = obj.remove("req").unwrap_or(Value::Null);
    let op = match obj.get("op") {
        Some(Value::String(s)) => s.clone(),
        Some(other) => return (req, Err(ParseFailure::UnknownOp(other.to_string()))),
        None => return (req, Err(ParseFailure::UnknownOp(String::new()))),
    };
    if !OPS.contains(&op.as_str()) {
        return (req, Err(ParseFailure::UnknownOp(op)));
    }
    let parsed = serde_json::from_value(Value::Object(obj)).map_err(|e| ParseFailure::BadRequest(e.to_string()));
    (req, parsed)
}

/// `{"req": .., "ok": true, ..fields}` as one line without the newline.
pub fn ok_line(req: &Value, fields: Map<String, Value>) -> String {
    let mut m = Map::new();
    m.insert("req".into(), req.clone());
    m.insert("ok".into(), Value::Bool(true));
    m.extend(fields);
    Value::Object(m).to_string()
}

pub fn err_line(req: &Value, code: &str, detail: Option<&str>) -> String {
    let mut v = json!({ "req": req, "ok": false, "err": code });
    if let Some(d) = detail {
        v["detail"] = Value::String(d.to_string());
    }
    v.to_string()
}

pub fn failure_line(req: &Value, f: &ParseFailure) -> String {
    match f {
        ParseFailure::Syntax => err_line(req, "parse", None),
        ParseFailure::UnknownOp(op) => err_line(req, "unknown_op", Some(op)),
        ParseFailure::BadRequest(d) => err_line(req, "bad_request", Some(d)),
    }
}
