pub mod channel_plan;
pub mod grid_map;
pub mod mac_engine;
pub mod metrics;
pub mod mobility;
pub mod radio_controller;
pub mod scenario_cli;
