//! Reference boundary, interface maps and validity monitoring.

pub mod interface;
pub mod mesh;
pub mod validity;

pub use interface::{InterfaceMap, InterfaceNorms};
pub use mesh::{BoundaryMesh, BoundaryPoint, Component, Orientation};
pub use validity::{clearance, diffeo_check, BlowupReason, ValidityReport};
