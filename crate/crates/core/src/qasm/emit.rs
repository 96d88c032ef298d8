use std::f64::consts::PI;
use std::fmt::Write;

use super::{Circuit, Instruction, Op};

/// Prints an angle with 12 significant digits, or as `pi`/`pi/k` when the
/// value is exactly π/k for k ≤ 16.
pub fn format_angle(theta: f64) -> String {
    for k in 1..=16u32 {
        let v = PI / f64::from(k);
        let sym = if k == 1 {
            "pi".to_string()
        } else {
            format!("pi/{k}")
        };
        if theta == v {
            return sym;
        }
        if theta == -v {
            return format!("-{sym}");
        }
    }
    let rounded: f64 = format!("{theta:.11e}")
        .parse()
        .expect("scientific notation from the formatter parses");
    if rounded == 0.0 {
        // no "-0"
        return "0".to_string();
    }
    format!("{rounded}")
}

fn write_instruction(out: &mut String, inst: &Instruction) {
    if let Some(cond) = inst.condition {
        let _ = write!(out, "if(c=={}) ", cond.value);
    }
    match &inst.op {
        Op::Gate { gate, qubit } => match gate.angle() {
            Some(theta) => {
                let _ = write!(out, "{}({}) q[{qubit}];", gate.name(), format_angle(theta));
            }
            None => {
                let _ = write!(out, "{} q[{qubit}];", gate.name());
            }
        },
        Op::Cx { control, target } => {
            let _ = write!(out, "cx q[{control}],q[{target}];");
        }
        Op::Measure { qubit, clbit } => {
            let _ = write!(out, "measure q[{qubit}] -> c[{clbit}];");
        }
        Op::Barrier { qubits } => {
            let args: Vec<String> = qubits.iter().map(|q| format!("q[{q}]")).collect();
            let _ = write!(out, "barrier {};", args.join(","));
        }
    }
}

/// Canonical text: one statement per line, registers named `q` and `c`.
pub fn emit_qasm(c: &Circuit) -> String {
    let mut out = String::from("OPENQASM 2.0;\n");
    let _ = writeln!(out, "qreg q[{}];", c.num_qubits);
    if c.num_clbits > 0 {
        let _ = writeln!(out, "creg c[{}];", c.num_clbits);
    }
    for inst in &c.instructions {
        write_instruction(&mut out, inst);
        out.push('\n');
    }
    out
}
