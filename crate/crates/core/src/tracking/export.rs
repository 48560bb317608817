use super::{JobRecord, JobState, Store, TrackingError};
use crate::space::{Atom, JobConfig, ParamValue, Target};
use serde_json::{json, Value};
use std::collections::BTreeSet;

/// One point of a best-so-far curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    /// 1-based index among finished jobs, in completion order.
    pub index: usize,
    pub jid: u64,
    pub score: f64,
    pub best: f64,
}

/// Running best of finished scores ordered by completion.
pub fn best_so_far(jobs: &[JobRecord], target: Target) -> Vec<SeriesPoint> {
    let mut done: Vec<&JobRecord> = jobs.iter().filter(|j| j.status == JobState::Finished).collect();
    done.sort_by_key(|j| (j.completion_seq, j.end_time, j.jid));
    let mut best: Option<f64> = None;
    done.iter()
        .enumerate()
        .map(|(i, j)| {
            let s = j.score.expect("finished rows carry a score");
            let b = match best {
                Some(b) if !target.better(s, b) => b,
                _ => s,
            };
            best = Some(b);
            SeriesPoint { index: i + 1, jid: j.jid, score: s, best: b }
        })
        .collect()
}

fn atom_cell(a: &Atom) -> String {
    match a {
        Atom::Bool(b) => b.to_string(),
        Atom::Int(i) => i.to_string(),
        Atom::Float(f) => f.to_string(),
        Atom::Str(s) => s.clone(),
    }
}

fn value_cell(v: &ParamValue) -> String {
    match v {
        ParamValue::Float(f) => f.to_string(),
        ParamValue::Int(i) => i.to_string(),
        ParamValue::Choice(a) => atom_cell(a),
    }
}

fn json_cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per job: `jid`, each parameter by name, `n_iterations`, the union
/// of aux keys (sorted), `score`, `status`, `aux_string`, `start_time`,
/// `end_time`. Absent values are empty cells.
pub fn export_csv(store: &Store, eid: i64) -> Result<String, TrackingError> {
    let space = store.experiment(eid)?.config()?.space;
    let jobs = store.jobs(eid)?;
    let configs: Vec<JobConfig> = jobs
        .iter()
        .map(|j| JobConfig::load(&j.job_config, &space).map_err(|e| TrackingError::Corrupt(e.to_string())))
        .collect::<Result<_, _>>()?;
    let aux_keys: BTreeSet<&str> = configs.iter().flat_map(|c| c.aux.keys().map(String::as_str)).collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["jid".to_string()];
    header.extend(space.iter().map(|p| p.name().to_string()));
    header.push("n_iterations".into());
    header.extend(aux_keys.iter().map(|k| k.to_string()));
    header.extend(["score", "status", "aux_string", "start_time", "end_time"].map(String::from));
    w.write_record(&header).map_err(|e| TrackingError::Io(e.to_string()))?;
    for (j, c) in jobs.iter().zip(&configs) {
        let mut row = vec![j.jid.to_string()];
        row.extend(space.iter().map(|p| value_cell(&c.values[p.name()])));
        row.push(opt(c.n_iterations));
        row.extend(aux_keys.iter().map(|k| c.aux.get(*k).map(json_cell).unwrap_or_default()));
        row.push(opt(j.score));
        row.push(j.status.to_string());
        row.push(j.aux_string.clone().unwrap_or_default());
        row.push(j.start_time.to_string());
        row.push(opt(j.end_time));
        w.write_record(&row).map_err(|e| TrackingError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| TrackingError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `{"eid", "target", "series": [{"index", "jid", "score", "best"}]}`.
pub fn export_series(store: &Store, eid: i64) -> Result<Value, TrackingError> {
    let target = store.experiment(eid)?.config()?.target;
    let series: Vec<Value> = best_so_far(&store.jobs(eid)?, target)
        .into_iter()
        .map(|p| json!({"index": p.index, "jid": p.jid, "score": p.score, "best": p.best}))
        .collect();
    Ok(json!({"eid": eid, "target": target.as_str(), "series": series}))
}
