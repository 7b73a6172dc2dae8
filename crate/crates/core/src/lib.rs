//! Deterministic simulator of collaborative semantic caching for early-exit
//! inference on a fleet of edge clients.

pub mod allocation;
pub mod cachemath;
pub mod client;
pub mod cost;
pub mod engine;
pub mod error;
pub mod rng;
pub mod server;
pub mod workload;

pub use allocation::AllocationMatrix;
pub use cachemath::SemanticVector;
pub use client::{ClientParams, ClientState, InferenceOutcome, LocalCache, Thresholds, UploadPayload};
pub use cost::{CostProfile, RunMetrics};
pub use engine::{run_scenario, Scenario, ScenarioResult, Simulation};
pub use error::{CocaError, Result};
pub use server::{GlobalCacheTable, Policy};
