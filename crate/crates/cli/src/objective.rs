//! Shared `main` for the synthetic objective executables.
//!
//! Each objective reads the job config path from its first argument,
//! evaluates, and prints one result line. `AUP_OBJECTIVE_DELAY_MS` adds a
//! fixed delay before evaluation.

use aup_core::resources::format_result_line;
use serde_json::Value;
use std::time::Duration;

pub fn number(cfg: &Value, key: &str) -> Result<f64, String> {
    cfg.get(key).and_then(Value::as_f64).ok_or_else(|| format!("job config lacks numeric `{key}`"))
}

/// Numeric hyperparameters, skipping bookkeeping keys.
pub fn numeric_params(cfg: &Value) -> Vec<f64> {
    let Some(obj) = cfg.as_object() else { return Vec::new() };
    obj.iter()
        .filter(|(k, _)| !matches!(k.as_str(), "job_id" | "n_iterations" | "resume_from"))
        .filter_map(|(_, v)| v.as_f64())
        .collect()
}

fn delay() {
    if let Some(ms) = std::env::var("AUP_OBJECTIVE_DELAY_MS").ok().and_then(|v| v.parse::<u64>().ok()) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Runs `eval` on the config named by `argv[1]` and prints the result;
/// returns the process exit code.
pub fn run(eval: impl FnOnce(&Value) -> Result<(f64, Option<String>), String>) -> i32 {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: <objective> <job-config.json>");
        return 2;
    };
    let cfg: Value = match std::fs::read_to_string(&path).map_err(|e| e.to_string()).and_then(|t| {
        serde_json::from_str(&t).map_err(|e| e.to_string())
    }) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{path}: {e}");
            return 2;
        }
    };
    delay();
    match eval(&cfg).and_then(|(s, aux)| format_result_line(s, aux.as_deref()).map_err(|e| e.to_string())) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("{e}");
            1
        }
    }
}
