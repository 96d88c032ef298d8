//! Built-in classical task actions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::patterns::{warm_start, VqeResult};
use crate::qsim::Observable;
use crate::workflow::{read_file, resolve};

pub const ACTIONS: &[&str] = &["compute", "feedback", "load_hamiltonian", "select_min", "write_report"];

/// A file produced by a task, written out once the run has finished.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub task_id: String,
    pub path: PathBuf,
    pub contents: String,
}

pub struct ActionContext<'a> {
    pub task_id: &'a str,
    pub params: &'a Value,
    /// Outputs of the declared inputs, in declaration order.
    pub inputs: Vec<(&'a str, &'a Value)>,
    pub base_dir: &'a Path,
}

pub struct ActionOutput {
    pub value: Value,
    pub artifact: Option<Artifact>,
}

fn str_param<'v>(params: &'v Value, key: &str) -> Result<&'v str, String> {
    params
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("parameter \"{key}\" (string) is required"))
}

/// Static parameter checks done before a run starts.
pub fn check_params(action: &str, params: &Value) -> Result<(), String> {
    match action {
        "load_hamiltonian" | "write_report" => str_param(params, "path").map(|_| ()),
        a if ACTIONS.contains(&a) => Ok(()),
        other => Err(format!("unknown action \"{other}\"")),
    }
}

pub fn run_action(action: &str, ctx: &ActionContext<'_>) -> Result<ActionOutput, String> {
    let plain = |value| Ok(ActionOutput { value, artifact: None });
    match action {
        "compute" => plain(json!({ "inputs": ctx.inputs.iter().map(|(id, _)| *id).collect::<Vec<_>>() })),
        "feedback" => {
            let counts = ctx
                .inputs
                .iter()
                .find_map(|(_, v)| v.get("counts"))
                .ok_or("no input carries measurement counts")?;
            plain(json!({ "counts": counts }))
        }
        "load_hamiltonian" => {
            let path = str_param(ctx.params, "path")?;
            let text = read_file(ctx.base_dir, path).map_err(|e| e.to_string())?;
            let h = Observable::parse(&text).map_err(|e| format!("{path}: {e}"))?;
            let warm = ctx.params.get("warm_start").and_then(Value::as_bool).unwrap_or(false);
            let initial = if warm { json!(warm_start(&h)) } else { Value::Null };
            plain(json!({
                "hamiltonian": h.to_string(),
                "num_qubits": h.num_qubits(),
                "initial_params": initial,
            }))
        }
        "select_min" => {
            let mut members = Map::new();
            let mut best: Option<(&str, f64)> = None;
            for (id, v) in &ctx.inputs {
                let Some(e) = v.get("final_energy").and_then(Value::as_f64) else {
                    continue;
                };
                members.insert(id.to_string(), json!(e));
                if best.is_none_or(|(_, b)| e < b) {
                    best = Some((id, e));
                }
            }
            let (id, e) = best.ok_or("no input reports a final_energy")?;
            plain(json!({ "best": id, "final_energy": e, "members": members }))
        }
        "write_report" => {
            let path = str_param(ctx.params, "path")?;
            let (source, value) = ctx
                .inputs
                .iter()
                .find(|(_, v)| v.get("final_energy").is_some())
                .ok_or("no input reports a final_energy")?;
            let result: VqeResult = serde_json::from_value((*value).clone())
                .map_err(|e| format!("input {source}: {e}"))?;
            let text = render_report(source, &result);
            let full = resolve(ctx.base_dir, path);
            Ok(ActionOutput {
                value: json!({ "path": full.display().to_string(), "final_energy": result.final_energy }),
                artifact: Some(Artifact {
                    task_id: ctx.task_id.to_string(),
                    path: full,
                    contents: text,
                }),
            })
        }
        other => Err(format!("unknown action \"{other}\"")),
    }
}

pub fn render_report(source: &str, r: &VqeResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "source {source}");
    let _ = writeln!(s, "final_energy {}", r.final_energy);
    let _ = writeln!(s, "iterations {}", r.iterations_used);
    let _ = writeln!(s, "circuit_evaluations {}", r.circuit_evaluations);
    let _ = writeln!(s, "converged {}", r.converged);
    let _ = writeln!(s);
    let _ = writeln!(s, "parameter value");
    for (j, t) in r.final_params.iter().enumerate() {
        let _ = writeln!(s, "theta[{j}] {t}");
    }
    s
}
