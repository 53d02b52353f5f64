//! Closed-loop planar world: unicycle dynamics, a ray-cast range sensor,
//! random obstacle fields, single trials and paired benchmarks.

pub mod benchmark;
pub mod dynamics;
pub mod env;
pub mod sensor;
pub mod trial;

pub use benchmark::{run_benchmark, BenchmarkReport, MethodMetrics, SignTest};
pub use dynamics::{nominal_control, unicycle_step, NominalGains};
pub use env::{generate_environment, EnvConfig, Environment};
pub use sensor::{lidar_scan, Scan, SensorConfig};
pub use trial::{run_trial, Method, Perception, TrajectoryRow, TrialOutcome, TrialParams};
