// SPDX-License-Identifier: Apache-2.0

//! Cycle-driven mesh network-on-chip simulator for comparing input-buffer
//! organizations (SAMQ, DAMQA, DAMQS, DAMQAS) under odd-even adaptive routing
//! with permanent link faults.
//!
//! The crate is layered bottom-up:
//!
//! * [`model`] - mesh geometry, faults, configuration and flits.
//! * [`buffers`] - the four buffer organizations and a naive reference model.
//! * [`routing`] - odd-even turn rules, fault-aware output selection, detours.
//! * [`router`] - per-node routers and the [`router::Network`] that wires them.
//! * [`traffic`] - uniform and trace-driven packet sources.
//! * [`engine`] - the cycle loop and metrics.
//! * [`config`], [`report`] - key=value configuration, CSV records, sweeps and
//!   comparisons used by the `damqsim` binary.

pub mod buffers;
pub mod config;
pub mod engine;
pub mod model;
pub mod report;
pub mod router;
pub mod routing;
pub mod traffic;

pub use buffers::{BufferError, BufferLayoutSpec, SharedBufferState, VcKey};

pub use model::{
    buf_total, column_parity, generate_faults, Coord, Direction, FaultMap, Flit, FlitKind, Mesh,
    ModelError, Parity, Scheme, SimConfig, TrafficSpec,
};

pub use engine::{run, saturation_sweep, EngineError, MetricsReport, RunStatus, Simulation};
pub use routing::{OddEvenRouting, RouteDecision, RouteRequest};
