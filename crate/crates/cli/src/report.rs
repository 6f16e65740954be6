//! Artifact writing: `<command>_<hash>.{csv,json}` plus a verdict file.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::stages::{Command, StageOutput};

pub const VERSION: &str = env!("WEAKKAM_DESCRIBE");

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn write_json(path: &Path, value: &Value) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

/// Writes every stage's artifacts and the verdict file for `command`.
/// Returns the paths written.
pub fn emit(
    cfg: &ExperimentConfig,
    dir: &Path,
    command: Command,
    stages: &[StageOutput],
    wall_times: &BTreeMap<String, f64>,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    let mut written = Vec::new();
    let envelope = |name: &str, body: Value| {
        json!({
            "command": name,
            "version": VERSION,
            "config_hash": hash,
            "config": cfg,
            "body": body,
            "wall_times": wall_times,
        })
    };
    for s in stages {
        let name = s.command.name();
        if cfg.output.wants("json") {
            let path = dir.join(format!("{name}_{hash}.json"));
            let body = json!({ "verdict": verdict(s.pass()), "checks": s.checks, "results": s.results });
            write_json(&path, &envelope(name, body))?;
            written.push(path);
        }
        if let (true, Some(t)) = (cfg.output.wants("csv"), &s.table) {
            let path = dir.join(format!("{name}_{hash}.csv"));
            write_csv(&path, t.header, &t.rows)?;
            written.push(path);
        }
    }
    let pass = stages.iter().all(StageOutput::pass);
    let failed: Vec<String> = stages
        .iter()
        .flat_map(|s| s.checks.iter().filter(|(_, ok)| !**ok).map(move |(k, _)| format!("{}.{k}", s.command.name())))
        .collect();
    let per_stage: BTreeMap<&str, &str> = stages.iter().map(|s| (s.command.name(), verdict(s.pass()))).collect();
    let path = dir.join(format!("{}_{hash}.verdict.json", command.name()));
    let body = json!({ "verdict": verdict(pass), "stages": per_stage, "failed": failed });
    write_json(&path, &envelope(command.name(), body))?;
    written.push(path);
    Ok(written)
}
