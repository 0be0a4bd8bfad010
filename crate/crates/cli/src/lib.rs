//! Batch front-end for the solver library: scenario configurations, bundled
//! suites, run manifests and plot-ready tables.

pub mod config;
pub mod manifest;
pub mod plot;
pub mod run;
pub mod suite;

pub use config::{config_digest, parse_config, serialize_config, ScenarioConfig};
pub use manifest::RunManifest;
pub use plot::emit_plotdata;
pub use run::{run_config, run_scenario, RunError, RunOutput};
pub use suite::{run_suite, suite_scenario_config, suite_scenarios};
