//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per
//! criterion and exits non-zero if any fails.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use serde_json::json;

use qhpc_core::fabric::Fabric;
use qhpc_core::par::Execution;
use qhpc_core::patterns::{parameter_shift_gradient, EvalMode, VqeResult};
use qhpc_core::qasm::{emit_qasm, parse_qasm, Severity};
use qhpc_core::qsim::{self, ClassicalRegister, StateVector};
use qhpc_core::runtime::{execute, RunConfig, RunReport};
use qhpc_core::trace::Outcome;
use qhpc_core::workflow::{compile, TemplateRegistry, Workload, WorkflowSpec};
use qhpc_core::workload::BindingMode;
use qhpc_core::rng;

#[path = "../../core/tests/support/mod.rs"]
mod support;

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn load(workflow: &str, fabric: &str) -> (Workload, Fabric) {
    let dir = support::fixtures();
    let spec = WorkflowSpec::load(&dir.join("workflows").join(workflow)).unwrap();
    let wl = compile(&spec, &TemplateRegistry::standard()).unwrap();
    let fabric = Fabric::load(&dir.join("fabrics").join(fabric)).unwrap();
    (wl, fabric)
}

fn run(wl: &Workload, fabric: &Fabric, cfg: RunConfig) -> RunReport {
    let r = execute(wl, fabric, &cfg).unwrap();
    assert_eq!(r.outcome, Outcome::Success, "{:?}", r.error);
    r
}

fn driver_result(r: &RunReport) -> VqeResult {
    serde_json::from_value(r.outputs["vqe.driver"].clone()).unwrap()
}

fn qhpc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qhpc"))
}

/// Copies the fixture tree so runs can write next to the workflows.
fn fixture_copy() -> (tempfile::TempDir, PathBuf) {
    fn copy(from: &Path, to: &Path) {
        fs::create_dir_all(to).unwrap();
        for e in fs::read_dir(from).unwrap() {
            let p = e.unwrap().path();
            let dest = to.join(p.file_name().unwrap());
            if p.is_dir() {
                copy(&p, &dest);
            } else {
                fs::copy(&p, &dest).unwrap();
            }
        }
    }
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("fixtures");
    copy(&support::fixtures(), &root);
    (tmp, root)
}

fn criterion_1() -> Verdict {
    let h = support::two_qubit_hamiltonian();
    let (oracle, at) = support::grid_minimum(&h, &support::two_qubit_ansatz());
    let (wl, fabric) = load("chemistry.json", "colocated.json");
    let t = Instant::now();
    let r = run(&wl, &fabric, RunConfig::default());
    let secs = t.elapsed().as_secs_f64();
    let e = driver_result(&r).final_energy;
    let gap = (e - oracle).abs();
    let detail = format!("E={e:.6} grid={oracle:.6} at {at:.4?} |Δ|={gap:.2e} {secs:.2}s");
    ensure(gap <= 1e-2, format!("{detail}: |Δ| > 1e-2"))?;
    ensure(secs < 10.0, format!("{detail}: over 10 s"))?;
    Ok(detail)
}

fn criterion_2() -> Verdict {
    let (wl, fabric) = load("chemistry.json", "colocated.json");
    let exact = driver_result(&run(&wl, &fabric, RunConfig::default())).final_energy;
    let t = Instant::now();
    let cfg = RunConfig { mode: EvalMode::Sampled { shots: 4096 }, ..RunConfig::default() };
    let sampled = driver_result(&run(&wl, &fabric, cfg));
    let secs = t.elapsed().as_secs_f64();
    let gap = (sampled.final_energy - exact).abs();
    let detail = format!("sampled={:.6} exact={exact:.6} |Δ|={gap:.4} {secs:.2}s", sampled.final_energy);
    ensure(gap <= 0.05, format!("{detail}: |Δ| > 0.05"))?;
    ensure(secs < 60.0, format!("{detail}: over 60 s"))?;
    Ok(detail)
}

fn criterion_3() -> Verdict {
    let mut worst_sin = 0f64;
    for k in 0..10 {
        let theta = -PI + 2.0 * PI * (k as f64 + 0.5) / 10.0;
        let g = parameter_shift_gradient(&support::one_qubit_z(theta, 0.1), &[theta]).map_err(|e| e.to_string())?;
        worst_sin = worst_sin.max((g[0] + theta.sin()).abs());
    }
    ensure(worst_sin <= 1e-9, format!("shift vs -sin θ off by {worst_sin:e}"))?;

    let cfg = support::two_qubit_config(vec![0.0, 0.0], EvalMode::Exact);
    let mut r = rng::stream(3, &[]);
    let h = 1e-5;
    let mut worst_fd = 0f64;
    for _ in 0..5 {
        let theta = [r.random_range(-PI..PI), r.random_range(-PI..PI)];
        let g = parameter_shift_gradient(&cfg, &theta).map_err(|e| e.to_string())?;
        for j in 0..2 {
            let (mut plus, mut minus) = (theta, theta);
            plus[j] += h;
            minus[j] -= h;
            let e = |t: &[f64; 2]| support::dense_expectation(&cfg.ansatz.instantiate(t), &cfg.hamiltonian);
            worst_fd = worst_fd.max((g[j] - (e(&plus) - e(&minus)) / (2.0 * h)).abs());
        }
    }
    ensure(worst_fd <= 1e-4, format!("shift vs central differences off by {worst_fd:e}"))?;
    Ok(format!("max |g+sin θ|={worst_sin:.1e} max |g-fd|={worst_fd:.1e}"))
}

fn criterion_4() -> Verdict {
    let (wl, fabric) = load("dynamic.json", "colocated.json");
    let r = run(&wl, &fabric, RunConfig::default());
    let shots = r.outputs["circuit"]["shots"].as_u64().unwrap();
    let counts = &r.outputs["feedback"]["counts"];
    ensure(*counts == json!({"0": shots}), format!("colocated counts {counts}"))?;

    let dir = support::fixtures();
    let tmp = tempfile::tempdir().unwrap();
    let status = qhpc()
        .arg("run")
        .arg(dir.join("workflows/dynamic.json"))
        .arg(dir.join("fabrics/remote.json"))
        .arg("--trace")
        .arg(tmp.path().join("t.jsonl"))
        .arg("--metrics")
        .arg(tmp.path().join("m.json"))
        .output()
        .unwrap()
        .status;
    ensure(status.code() == Some(2), format!("remote exit {status}"))?;
    Ok(format!("colocated {counts} over {shots} shots, remote exit 2"))
}

fn criterion_5() -> Verdict {
    let fabric = support::islands_fabric();
    let mut tasks = 0;
    let mut constraints = 0;
    for seed in 0..100u64 {
        let wl = support::compile_json(&support::random_workflow(seed), &support::fixtures());
        tasks += wl.tasks.len();
        constraints += wl.constraints.len();
        for binding in [BindingMode::Early, BindingMode::Late] {
            let cfg = RunConfig { binding, seed, ..RunConfig::default() };
            let r = execute(&wl, &fabric, &cfg).map_err(|e| e.to_string())?;
            ensure(r.outcome == Outcome::Success, format!("seed {seed} {binding}: {:?}", r.error))?;
            let v = support::schedule_violations(&wl, &fabric, &r);
            ensure(v.is_empty(), format!("seed {seed} {binding}: {}", v.join("; ")))?;
        }
    }
    Ok(format!("200 runs, {tasks} tasks, {constraints} latency constraints, no violations"))
}

fn criterion_6() -> Verdict {
    let (_, _, early) = support::straggler_run(BindingMode::Early);
    let (_, _, late) = support::straggler_run(BindingMode::Late);
    let (e, l) = (early.metrics.makespan_us, late.metrics.makespan_us);
    ensure(l < e, format!("late {l} µs, early {e} µs"))?;
    Ok(format!("late {l} µs < early {e} µs"))
}

fn criterion_7() -> Verdict {
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let (_tmp, root) = fixture_copy();
        let out = qhpc()
            .current_dir(&root)
            .args(["run", "workflows/chemistry.json", "fabrics/two_qpu.json"])
            .args(["--mode", "sampled", "--seed", "7", "--binding", "late"])
            .output()
            .unwrap();
        ensure(out.status.success(), format!("exit {}: {}", out.status, String::from_utf8_lossy(&out.stderr)))?;
        let read = |p: &str| fs::read(root.join(p)).unwrap();
        outputs.push((out.stdout, read("trace.jsonl"), read("metrics.json"), read("workflows/out/chemistry_report.txt")));
    }
    ensure(outputs[0] == outputs[1], "outputs differ between runs")?;
    Ok(format!("trace {} bytes, metrics and report identical", outputs[0].1.len()))
}

fn criterion_8() -> Verdict {
    let dir = support::fixtures().join("qasm");
    let mut files: Vec<PathBuf> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.retain(|p| p.extension().is_some_and(|e| e == "qasm"));
    ensure(files.len() == 20, format!("{} corpus files", files.len()))?;
    for f in &files {
        let c = parse_qasm(&fs::read_to_string(f).unwrap()).map_err(|d| format!("{}: {d:?}", f.display()))?;
        let back = parse_qasm(&emit_qasm(&c)).map_err(|d| format!("{}: re-parse {d:?}", f.display()))?;
        ensure(c.structurally_eq(&back, 1e-11), format!("{} changed on round trip", f.display()))?;
    }
    let mut errors = 0;
    for e in fs::read_dir(dir.join("errors")).unwrap() {
        let f = e.unwrap().path();
        let text = fs::read_to_string(&f).unwrap();
        let (line, _) = text.lines().next().unwrap().strip_prefix("// expect line ").unwrap().split_once(": ").unwrap();
        let diags = parse_qasm(&text).err().ok_or(format!("{} parsed", f.display()))?;
        let first = diags.iter().find(|d| d.severity == Severity::Error).unwrap();
        ensure(first.line.to_string() == line, format!("{}: reported line {}", f.display(), first.line))?;
        errors += 1;
    }
    Ok(format!("20 files round-trip, {errors} error files report the right line"))
}

fn criterion_9() -> Verdict {
    let (wl, two) = load("ensemble.json", "two_qpu.json");
    let (_, one) = load("ensemble.json", "one_qpu.json");
    let m2 = run(&wl, &two, RunConfig::default()).metrics.makespan_us;
    let m1 = run(&wl, &one, RunConfig::default()).metrics.makespan_us;
    let ratio = m2 as f64 / m1 as f64;
    let detail = format!("2 QPUs {m2} µs, 1 QPU {m1} µs, ratio {ratio:.3}");
    ensure(ratio <= 0.6, detail.clone())?;
    Ok(detail)
}

fn criterion_10() -> Verdict {
    let bell = parse_qasm(&fs::read_to_string(support::fixtures().join("qasm/bell.qasm")).unwrap()).unwrap();
    let r = qsim::run_with(&bell, 4096, 0, Execution::Parallel).map_err(|e| e.to_string())?;
    let n00 = r.counts.get("00").copied().unwrap_or(0);
    let n11 = r.counts.get("11").copied().unwrap_or(0);
    ensure(n00 + n11 == 4096 && n00.abs_diff(2048) <= 96, format!("bell counts {:?}", r.counts))?;

    let mut worst_norm = 0f64;
    for e in fs::read_dir(support::fixtures().join("qasm")).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_none_or(|e| e != "qasm") {
            continue;
        }
        let c = parse_qasm(&fs::read_to_string(&p).unwrap()).unwrap();
        for seed in 0..8 {
            let mut state = StateVector::zero(c.num_qubits);
            let mut reg = ClassicalRegister::default();
            let mut g = rng::stream(seed, &[]);
            for inst in &c.instructions {
                qsim::apply(&mut state, inst, &mut reg, &mut g).map_err(|e| e.to_string())?;
                worst_norm = worst_norm.max((state.norm_sqr() - 1.0).abs());
            }
        }
    }
    ensure(worst_norm <= 1e-9, format!("norm drift {worst_norm:e}"))?;

    let mut worst_dense = 0f64;
    for seed in 0..200u64 {
        let n = 1 + seed as usize % 3;
        let c = support::random_unitary_circuit(seed, n, 20);
        let psi = qsim::final_state(&c).map_err(|e| e.to_string())?;
        for (a, b) in psi.amplitudes().iter().zip(support::dense_state(&c)) {
            worst_dense = worst_dense.max((a - b).norm());
        }
        let h = support::random_observable(seed, n, 4);
        let e = qsim::expectation(&c, &h).map_err(|e| e.to_string())?;
        worst_dense = worst_dense.max((e - support::dense_expectation(&c, &h)).abs());
    }
    ensure(worst_dense <= 1e-10, format!("dense oracle gap {worst_dense:e}"))?;
    Ok(format!("bell 00={n00} 11={n11}, norm drift {worst_norm:.1e}, dense gap {worst_dense:.1e}"))
}

fn main() {
    let criteria: [fn() -> Verdict; 10] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(c)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(d) => println!("criterion {}: PASS {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {}: FAIL {d}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 10 criteria failed");
        std::process::exit(1);
    }
}
