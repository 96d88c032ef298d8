//! Hybrid quantum-HPC middleware.
//!
//! Declarative workflows are compiled into workloads, bound to a simulated
//! fabric of classical nodes and QPUs by a coupling-aware scheduler, and
//! executed through pilot-based task managers on a deterministic
//! discrete-event engine. Quantum tasks run on the built-in statevector
//! simulator.

pub mod engine;
pub mod par;
pub mod qasm;
pub mod rng;
pub mod qsim;
pub mod fabric;
pub mod workflow;
pub mod workload;
pub mod patterns;
pub mod taskmgr;
pub mod trace;
pub mod runtime;
