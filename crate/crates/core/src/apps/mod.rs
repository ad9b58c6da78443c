//! Ready-made models: the ferry-assisted wireless LAN and the distributed
//! waste collector, with their closed-form workloads and design optimizers.

pub mod fwlan;
pub mod optimize;
pub mod waste;

pub use fwlan::{
    fwlan_hybrid_workload, fwlan_measure, fwlan_moments, fwlan_optimize, fwlan_workload, Architecture,
    FwlanGeometry, FwlanOptimum, Objective,
};
pub use waste::{waste_optimize, waste_workload, WasteOptimum, WasteSpec};
