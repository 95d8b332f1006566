//! Patch extraction: deterministic test tiling and randomized training
//! sampling with nodule oversampling.

use super::Volume;
use crate::boxes::Cube;
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Patch {
    /// Origin of the patch in volume voxel coordinates (may be clamped to 0
    /// only; tiles never start negative).
    pub origin: [isize; 3],
    pub data: Tensor<f32>,
    /// Annotations whose centers fall inside the patch, in patch-local
    /// coordinates.
    pub annotations: Vec<Cube>,
}

/// Tile origins along one axis: stride `patch - overlap`, with a final
/// edge-aligned tile so the axis is covered exactly.
pub fn tile_origins(len: usize, patch: usize, overlap: usize) -> Vec<usize> {
    assert!(patch > overlap, "overlap must be smaller than the patch");
    if len <= patch {
        return vec![0];
    }
    let stride = patch - overlap;
    let mut out = Vec::new();
    let mut pos = 0usize;
    loop {
        if pos + patch >= len {
            out.push(len - patch);
            break;
        }
        out.push(pos);
        pos += stride;
    }
    out.dedup();
    out
}

/// Copy a cube of `size^3` voxels starting at `origin` (which may be
/// negative or extend past the volume); out-of-range voxels are zero.
pub fn extract_patch(volume: &Volume, origin: [isize; 3], size: usize) -> Patch {
    let [d, h, w] = volume.shape();
    let src = volume.intensities.data();
    let mut data = vec![0f32; size * size * size];
    for z in 0..size {
        let sz = origin[0] + z as isize;
        if sz < 0 || sz >= d as isize {
            continue;
        }
        for y in 0..size {
            let sy = origin[1] + y as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let x_lo = (-origin[2]).clamp(0, size as isize) as usize;
            let x_hi = ((w as isize - origin[2]).clamp(0, size as isize)) as usize;
            if x_lo >= x_hi {
                continue;
            }
            let dst_row = (z * size + y) * size;
            let src_row = (sz as usize * h + sy as usize) * w;
            let sx = (origin[2] + x_lo as isize) as usize;
            data[dst_row + x_lo..dst_row + x_hi]
                .copy_from_slice(&src[src_row + sx..src_row + sx + (x_hi - x_lo)]);
        }
    }
    let annotations = volume
        .annotations
        .iter()
        .filter_map(|a| {
            let local = Cube {
                z: a.z - origin[0] as f64,
                y: a.y - origin[1] as f64,
                x: a.x - origin[2] as f64,
                d: a.d,
            };
            let inside = |v: f64| v >= 0.0 && v < size as f64;
            (inside(local.z) && inside(local.y) && inside(local.x)).then_some(local)
        })
        .collect();
    Patch {
        origin,
        data: Tensor::new(vec![size, size, size], data),
        annotations,
    }
}

/// Deterministic sliding-window tiling with the given overlap.
pub fn extract_test_tiles(volume: &Volume, patch: usize, overlap: usize) -> Vec<Patch> {
    let [d, h, w] = volume.shape();
    let mut out = Vec::new();
    for &oz in &tile_origins(d, patch, overlap) {
        for &oy in &tile_origins(h, patch, overlap) {
            for &ox in &tile_origins(w, patch, overlap) {
                out.push(extract_patch(volume, [oz as isize, oy as isize, ox as isize], patch));
            }
        }
    }
    out
}

/// Sample one training patch. With probability `nodule_prob` the patch is
/// centered loosely on a random annotated nodule; otherwise its origin is
/// uniform over the volume.
pub fn sample_train_patch<R: Rng>(
    volume: &Volume,
    patch: usize,
    nodule_prob: f64,
    rng: &mut R,
) -> Patch {
    let [d, h, w] = volume.shape();
    let range = |len: usize| {
        if len > patch {
            (len - patch) as i64
        } else {
            0
        }
    };
    let origin = if !volume.annotations.is_empty() && rng.random::<f64>() < nodule_prob {
        let a = &volume.annotations[rng.random_range(0..volume.annotations.len())];
        let mut o = [0isize; 3];
        for (ax, center) in [a.z, a.y, a.x].into_iter().enumerate() {
            let len = [d, h, w][ax];
            // keep the nodule at least a quarter patch away from the border
            let pad = (patch / 4) as i64;
            let lo = (center as i64 - patch as i64 + 1 + pad).max(0);
            let hi = (center as i64 - pad).min(range(len)).max(lo);
            o[ax] = rng.random_range(lo..=hi) as isize;
        }
        o
    } else {
        [
            rng.random_range(0..=range(d)) as isize,
            rng.random_range(0..=range(h)) as isize,
            rng.random_range(0..=range(w)) as isize,
        ]
    };
    extract_patch(volume, origin, patch)
}
