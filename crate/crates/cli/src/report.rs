use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA: &str = "apfree.run-report/1";

/// The JSON document written next to every increment output.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<Value>,
    pub seed: Option<u64>,
    pub timings: Timings,
    pub results: Value,
    pub trace: Option<String>,
}

#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub total_ms: f64,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        Self {
            schema: SCHEMA,
            command: command.to_owned(),
            args: std::env::args().skip(1).collect(),
            config: None,
            seed: None,
            timings: Timings::default(),
            results: Value::Null,
            trace: None,
        }
    }

    pub fn config(mut self, config: Value) -> Self {
        self.config = Some(config);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn results(mut self, results: Value) -> Self {
        self.results = results;
        self
    }

    pub fn trace(mut self, path: &Path) -> Self {
        self.trace = Some(path.display().to_string());
        self
    }

    pub fn finish(mut self, start: Instant) -> Self {
        self.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
        self
    }
}
