//! Benchmark fixtures shared by the criterion targets.

use ph2d_core::domain::{generate_centers, rasterize, HoleSet, PerforationConfig};

/// Lattice perforation used by every kernel benchmark.
pub fn lattice(epsilon: f64) -> HoleSet {
    generate_centers(&PerforationConfig::paper(epsilon, 2.1, 0.04)).expect("valid perforation")
}

pub fn mask(epsilon: f64, nx: usize) -> ph2d_core::GridMask {
    rasterize(&lattice(epsilon), nx)
}
