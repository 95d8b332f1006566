//! Anchor lattice over the detector's output grid.

use crate::boxes::Cube;
use serde::{Deserialize, Serialize};

/// Reference anchor sizes plus the grid stride that places them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub sizes: Vec<f64>,
    pub stride: usize,
}

impl AnchorSpec {
    pub fn new(sizes: Vec<f64>, stride: usize) -> Self {
        assert!(stride > 0, "stride must be positive");
        assert!(
            sizes.windows(2).all(|w| w[0] < w[1]),
            "anchor sizes must be strictly increasing, got {sizes:?}"
        );
        Self { sizes, stride }
    }
}

/// One anchor per (size, grid cell), cell centers at `(i + 0.5) * stride`.
///
/// Ordering matches the head tensor layout: size-major, then z, y, x — so
/// the anchor at flat index `a * G^3 + cell` pairs with channel `a` of the
/// classification head at that cell.
pub fn anchor_grid(grid: [usize; 3], stride: usize, sizes: &[f64]) -> Vec<Cube> {
    let mut out = Vec::with_capacity(sizes.len() * grid[0] * grid[1] * grid[2]);
    for &size in sizes {
        for z in 0..grid[0] {
            for y in 0..grid[1] {
                for x in 0..grid[2] {
                    out.push(Cube::new(
                        (z as f64 + 0.5) * stride as f64,
                        (y as f64 + 0.5) * stride as f64,
                        (x as f64 + 0.5) * stride as f64,
                        size,
                    ));
                }
            }
        }
    }
    out
}
