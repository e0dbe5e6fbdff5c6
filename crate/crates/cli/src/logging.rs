//! Structured logs: JSON lines on standard error.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

fn emit(level: &str, event: &str, fields: &[(&str, &str)]) {
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let mut obj = serde_json::Map::new();
    obj.insert("ts".into(), ts.into());
    obj.insert("level".into(), level.into());
    obj.insert("event".into(), event.into());
    for (k, v) in fields {
        obj.insert((*k).into(), (*v).into());
    }
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{}", serde_json::Value::Object(obj));
}

pub fn info(event: &str, fields: &[(&str, &str)]) {
    emit("info", event, fields);
}

pub fn error(event: &str, fields: &[(&str, &str)]) {
    emit("error", event, fields);
}
