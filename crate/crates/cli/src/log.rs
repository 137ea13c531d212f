//! Structured JSON log lines on standard error.

use std::io::Write;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};

fn emit(mut record: Map<String, Value>) {
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    record.insert("ts".into(), json!(ts));
    let line = Value::Object(record).to_string();
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

/// Times one stage and logs its start and completion.
pub struct StageTimer {
    stage: String,
    start: Instant,
}

impl StageTimer {
    pub fn start(stage: &str) -> Self {
        let mut m = Map::new();
        m.insert("stage".into(), json!(stage));
        m.insert("event".into(), json!("start"));
        emit(m);
        StageTimer { stage: stage.to_string(), start: Instant::now() }
    }

    pub fn done(self, outputs: &Value) {
        let mut m = Map::new();
        m.insert("stage".into(), json!(self.stage));
        m.insert("event".into(), json!("done"));
        m.insert("wall_s".into(), json!(self.start.elapsed().as_secs_f64()));
        m.insert("outputs".into(), outputs.clone());
        emit(m);
    }

    pub fn failed(self, error: &str) {
        let mut m = Map::new();
        m.insert("stage".into(), json!(self.stage));
        m.insert("event".into(), json!("error"));
        m.insert("wall_s".into(), json!(self.start.elapsed().as_secs_f64()));
        m.insert("error".into(), json!(error));
        emit(m);
    }
}

/// Free-form progress record for a stage.
pub fn info(stage: &str, fields: Value) {
    let mut m = Map::new();
    m.insert("stage".into(), json!(stage));
    m.insert("event".into(), json!("info"));
    if let Value::Object(f) = fields {
        m.extend(f);
    }
    emit(m);
}
