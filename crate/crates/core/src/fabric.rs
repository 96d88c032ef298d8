//! Resource layer: classical nodes, QPUs, links and the QPU timing model.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::qasm::{Circuit, Op};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalNode {
    pub id: String,
    pub cores: u32,
    pub gpus: u32,
    pub core_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Simulated,
    Superconducting,
    IonTrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpuDevice {
    pub id: String,
    pub num_qubits: usize,
    pub modality: Modality,
    pub coherence_time_us: f64,
    pub gate_time_1q_us: f64,
    pub gate_time_2q_us: f64,
    pub readout_time_us: f64,
    pub shot_overhead_us: f64,
    pub compile_overhead_us: f64,
    pub failure_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub a: String,
    pub b: String,
    pub latency_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fabric {
    pub nodes: Vec<ClassicalNode>,
    pub qpus: Vec<QpuDevice>,
    pub links: Vec<Link>,
    pub default_latency_us: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FabricError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("duplicate resource id \"{0}\"")]
    DuplicateId(String),
    #[error("link endpoint \"{0}\" is not a known resource")]
    DanglingLink(String),
    #[error("{field} of \"{id}\" must be positive")]
    NonPositive { id: String, field: &'static str },
    #[error("{field} of \"{id}\" must be non-negative")]
    Negative { id: String, field: &'static str },
    #[error("failure_prob of \"{0}\" must lie in [0, 1]")]
    FailureProb(String),
    #[error("unknown resource \"{0}\"")]
    UnknownResource(String),
    #[error("circuit needs {needed} qubits but {qpu} has {available}")]
    TooWide {
        qpu: String,
        needed: usize,
        available: usize,
    },
    #[error("shots must be at least 1")]
    ZeroShots,
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// A resource looked up by id.
#[derive(Debug, Clone, Copy)]
pub enum Resource<'a> {
    Node(&'a ClassicalNode),
    Qpu(&'a QpuDevice),
}

impl<'a> Resource<'a> {
    pub fn id(&self) -> &'a str {
        match self {
            Resource::Node(n) => &n.id,
            Resource::Qpu(q) => &q.id,
        }
    }
}

fn positive(id: &str, field: &'static str, v: f64) -> Result<(), FabricError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(FabricError::NonPositive {
            id: id.to_string(),
            field,
        })
    }
}

fn non_negative(id: &str, field: &'static str, v: f64) -> Result<(), FabricError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(FabricError::Negative {
            id: id.to_string(),
            field,
        })
    }
}

impl Fabric {
    /// Parses and validates the JSON fabric format. Type errors carry the
    /// key path of the offending value.
    pub fn from_json(text: &str) -> Result<Fabric, FabricError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let fabric: Fabric =
            serde_path_to_error::deserialize(de).map_err(|e| FabricError::Parse {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        fabric.validate()?;
        Ok(fabric)
    }

    pub fn validate(&self) -> Result<(), FabricError> {
        let mut seen = BTreeSet::new();
        for id in self.resource_ids() {
            if !seen.insert(id) {
                return Err(FabricError::DuplicateId(id.to_string()));
            }
        }
        for n in &self.nodes {
            if n.cores == 0 {
                return Err(FabricError::NonPositive {
                    id: n.id.clone(),
                    field: "cores",
                });
            }
            positive(&n.id, "core_speed", n.core_speed)?;
        }
        for q in &self.qpus {
            if q.num_qubits == 0 {
                return Err(FabricError::NonPositive {
                    id: q.id.clone(),
                    field: "num_qubits",
                });
            }
            positive(&q.id, "coherence_time_us", q.coherence_time_us)?;
            positive(&q.id, "gate_time_1q_us", q.gate_time_1q_us)?;
            positive(&q.id, "gate_time_2q_us", q.gate_time_2q_us)?;
            positive(&q.id, "readout_time_us", q.readout_time_us)?;
            positive(&q.id, "shot_overhead_us", q.shot_overhead_us)?;
            positive(&q.id, "compile_overhead_us", q.compile_overhead_us)?;
            if !(0.0..=1.0).contains(&q.failure_prob) {
                return Err(FabricError::FailureProb(q.id.clone()));
            }
        }
        for l in &self.links {
            for end in [&l.a, &l.b] {
                if !seen.contains(end.as_str()) {
                    return Err(FabricError::DanglingLink(end.clone()));
                }
            }
            non_negative(&format!("{}-{}", l.a, l.b), "latency_us", l.latency_us)?;
        }
        non_negative("fabric", "default_latency_us", self.default_latency_us)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Fabric, FabricError> {
        let text = std::fs::read_to_string(path).map_err(|e| FabricError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Fabric::from_json(&text)
    }

    pub fn resource_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes
            .iter()
            .map(|n| n.id.as_str())
            .chain(self.qpus.iter().map(|q| q.id.as_str()))
    }

    pub fn resource(&self, id: &str) -> Option<Resource<'_>> {
        self.node(id)
            .map(Resource::Node)
            .or_else(|| self.qpu(id).map(Resource::Qpu))
    }

    pub fn node(&self, id: &str) -> Option<&ClassicalNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn qpu(&self, id: &str) -> Option<&QpuDevice> {
        self.qpus.iter().find(|q| q.id == id)
    }

    /// One-way latency in microseconds. Symmetric; zero on the diagonal;
    /// unlisted pairs use `default_latency_us`.
    pub fn latency(&self, r1: &str, r2: &str) -> Result<f64, FabricError> {
        for r in [r1, r2] {
            if self.resource(r).is_none() {
                return Err(FabricError::UnknownResource(r.to_string()));
            }
        }
        if r1 == r2 {
            return Ok(0.0);
        }
        Ok(self
            .links
            .iter()
            .find(|l| (l.a == r1 && l.b == r2) || (l.a == r2 && l.b == r1))
            .map_or(self.default_latency_us, |l| l.latency_us))
    }

    /// Full latency table, used where the scheduler queries many pairs.
    pub fn latency_table(&self) -> LatencyTable {
        let ids: Vec<String> = self.resource_ids().map(String::from).collect();
        let mut table = BTreeMap::new();
        for a in &ids {
            for b in &ids {
                let l = self.latency(a, b).expect("ids come from the fabric");
                table.insert((a.clone(), b.clone()), l);
            }
        }
        LatencyTable { table }
    }
}

#[derive(Debug, Clone)]
pub struct LatencyTable {
    table: BTreeMap<(String, String), f64>,
}

impl LatencyTable {
    pub fn get(&self, a: &str, b: &str) -> f64 {
        self.table
            .get(&(a.to_string(), b.to_string()))
            .copied()
            .unwrap_or(f64::INFINITY)
    }
}

impl QpuDevice {
    /// Σ_inst t(inst) for one shot.
    pub fn shot_time_us(&self, c: &Circuit) -> f64 {
        c.instructions
            .iter()
            .map(|inst| match inst.op {
                Op::Gate { .. } => self.gate_time_1q_us,
                Op::Cx { .. } => self.gate_time_2q_us,
                Op::Measure { .. } => self.readout_time_us,
                Op::Barrier { .. } => 0.0,
            })
            .sum()
    }

    /// compile + shots × (shot overhead + per-shot gate and readout time).
    pub fn exec_time_us(&self, c: &Circuit, shots: u64) -> Result<f64, FabricError> {
        if c.num_qubits > self.num_qubits {
            return Err(FabricError::TooWide {
                qpu: self.id.clone(),
                needed: c.num_qubits,
                available: self.num_qubits,
            });
        }
        if shots == 0 {
            return Err(FabricError::ZeroShots);
        }
        Ok(self.compile_overhead_us
            + shots as f64 * (self.shot_overhead_us + self.shot_time_us(c)))
    }

    /// Per-shot time plus a feedback round trip for every conditioned
    /// instruction must fit in the coherence window.
    pub fn coherence_budget_ok(&self, c: &Circuit, feedback_latency_us: f64) -> bool {
        let feedback = c.conditioned_count() as f64 * 2.0 * feedback_latency_us;
        self.shot_time_us(c) + feedback <= self.coherence_time_us
    }
}

/// Free-function form of [`QpuDevice::exec_time_us`].
pub fn qpu_exec_time(q: &QpuDevice, c: &Circuit, shots: u64) -> Result<f64, FabricError> {
    q.exec_time_us(c, shots)
}

pub fn coherence_budget_ok(q: &QpuDevice, c: &Circuit, feedback_latency_us: f64) -> bool {
    q.coherence_budget_ok(c, feedback_latency_us)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qasm::parse_qasm;

    const TWO_NODES: &str = r#"{
        "nodes": [
            {"id": "n1", "cores": 4, "gpus": 0, "core_speed": 1.0},
            {"id": "n2", "cores": 2, "gpus": 1, "core_speed": 2.0}
        ],
        "qpus": [
            {"id": "q1", "num_qubits": 5, "modality": "superconducting",
             "coherence_time_us": 100, "gate_time_1q_us": 0.05, "gate_time_2q_us": 0.3,
             "readout_time_us": 1, "shot_overhead_us": 10, "compile_overhead_us": 1000,
             "failure_prob": 0}
        ],
        "links": [{"a": "n1", "b": "q1", "latency_us": 0.5}],
        "default_latency_us": 10000
    }"#;

    fn qpu() -> QpuDevice {
        Fabric::from_json(TWO_NODES).unwrap().qpus[0].clone()
    }

    #[test]
    fn loads_three_resources() {
        let f = Fabric::from_json(TWO_NODES).unwrap();
        assert_eq!(f.resource_ids().count(), 3);
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = TWO_NODES.replace("\"id\": \"n2\"", "\"id\": \"n1\"");
        let err = Fabric::from_json(&text).unwrap_err();
        assert_eq!(err, FabricError::DuplicateId("n1".into()));
        assert!(err.to_string().contains("n1"));
    }

    #[test]
    fn dangling_link_and_bad_times() {
        let text = TWO_NODES.replace("\"b\": \"q1\"", "\"b\": \"q9\"");
        assert_eq!(
            Fabric::from_json(&text).unwrap_err(),
            FabricError::DanglingLink("q9".into())
        );
        let text = TWO_NODES.replace("\"gate_time_2q_us\": 0.3", "\"gate_time_2q_us\": 0");
        assert!(matches!(
            Fabric::from_json(&text).unwrap_err(),
            FabricError::NonPositive { field: "gate_time_2q_us", .. }
        ));
    }

    #[test]
    fn malformed_number_reports_key_path() {
        let text = TWO_NODES.replace("\"coherence_time_us\": 100", "\"coherence_time_us\": \"x\"");
        match Fabric::from_json(&text).unwrap_err() {
            FabricError::Parse { path, .. } => assert_eq!(path, "qpus[0].coherence_time_us"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = TWO_NODES.replace("\"default_latency_us\"", "\"colour\": 1, \"default_latency_us\"");
        assert!(matches!(
            Fabric::from_json(&text).unwrap_err(),
            FabricError::Parse { .. }
        ));
    }

    #[test]
    fn latency_rules() {
        let f = Fabric::from_json(TWO_NODES).unwrap();
        assert_eq!(f.latency("q1", "q1").unwrap(), 0.0);
        assert_eq!(f.latency("n1", "q1").unwrap(), 0.5);
        assert_eq!(f.latency("q1", "n1").unwrap(), 0.5);
        assert_eq!(f.latency("n2", "q1").unwrap(), 10000.0);
        assert!(f.latency("n1", "zz").is_err());
        let t = f.latency_table();
        for a in f.resource_ids() {
            for b in f.resource_ids() {
                assert_eq!(t.get(a, b), t.get(b, a));
            }
        }
    }

    #[test]
    fn exec_time_formula() {
        let bell = parse_qasm(
            "OPENQASM 2.0; qreg q[2]; creg c[2]; h q[0]; cx q[0],q[1]; measure q[0] -> c[0]; measure q[1] -> c[1];",
        )
        .unwrap();
        // 1000 + 1000 × (10 + 0.05 + 0.3 + 1 + 1)
        assert!((qpu().exec_time_us(&bell, 1000).unwrap() - 13350.0).abs() < 1e-6);
        assert!((qpu().exec_time_us(&bell, 1).unwrap() - (1000.0 + 12.35)).abs() < 1e-9);
        assert_eq!(qpu().exec_time_us(&bell, 0), Err(FabricError::ZeroShots));
        let empty = Circuit::new("e", 1, 0);
        assert_eq!(qpu().exec_time_us(&empty, 10).unwrap(), 1000.0 + 100.0);
        let wide = Circuit::new("w", 6, 0);
        assert!(matches!(
            qpu().exec_time_us(&wide, 1),
            Err(FabricError::TooWide { .. })
        ));
    }

    #[test]
    fn coherence_budget() {
        let mut q = qpu();
        q.gate_time_1q_us = 1.0;
        q.readout_time_us = 1.0;
        // per-shot 2 µs: one measure + one conditioned x
        let c = parse_qasm("OPENQASM 2.0; qreg q[1]; creg c[1]; measure q[0] -> c[0]; if(c==1) x q[0];")
            .unwrap();
        assert!((q.shot_time_us(&c) - 2.0).abs() < 1e-12);
        assert!(q.coherence_budget_ok(&c, 0.5)); // 3 ≤ 100
        assert!(!q.coherence_budget_ok(&c, 10000.0)); // 20002 > 100
        let plain = parse_qasm("OPENQASM 2.0; qreg q[1]; x q[0];").unwrap();
        q.coherence_time_us = 1.0;
        assert!(q.coherence_budget_ok(&plain, 1e9));
        q.coherence_time_us = 0.5;
        assert!(!q.coherence_budget_ok(&plain, 0.0));
    }
}
