//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use lgrowth_core::{BoundaryMesh, InterfaceMap, Kernel, KernelFamily, KernelSpec, Normalization};

/// Unit circle with `n` nodes, the identity map on it and the default
/// wrapped-Gaussian kernel.
pub fn circle_fixture(n: usize) -> (InterfaceMap, Kernel) {
    let mesh = Arc::new(BoundaryMesh::circle([0.0, 0.0], 1.0, n).expect("valid circle"));
    let spec = KernelSpec {
        family: KernelFamily::WrappedGaussian,
        bandwidth: 0.3,
        coupling: 0.0,
        normalization: Normalization::UnitSpeed,
    };
    let kernel = Kernel::new(spec, mesh.clone()).expect("valid kernel");
    (InterfaceMap::identity(mesh), kernel)
}
