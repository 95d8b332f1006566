//! Volume I/O, preprocessing, augmentation, and synthetic data generation.

pub mod augment;
pub mod csvio;
pub mod mhd;
pub mod patches;
pub mod synth;

pub use augment::{cross_section_augment, shift_cube, shift_tensor3, CrossSection};
pub use mhd::{load_mhd, write_mhd};
pub use patches::{extract_patch, tile_origins, Patch};
pub use synth::{synth_generate, SynthConfig};

use crate::boxes::Cube;
use crate::tensor::Tensor;

/// One CT scan (or synthetic stand-in): intensities on a `(D, H, W)` grid
/// with optional lung mask and its nodule annotations, everything in voxel
/// coordinates with z slowest.
#[derive(Clone, Debug)]
pub struct Volume {
    pub series_id: String,
    pub intensities: Tensor<f32>,
    /// mm per voxel, `(z, y, x)`.
    pub spacing: [f64; 3],
    /// World offset, `(z, y, x)` in mm.
    pub origin: [f64; 3],
    /// Binary mask of the lung region; same shape as the intensities.
    pub lung_mask: Option<Tensor<f32>>,
    pub annotations: Vec<Cube>,
    pub irrelevant: Vec<Cube>,
}

impl Volume {
    pub fn new(
        series_id: String,
        intensities: Tensor<f32>,
        spacing: [f64; 3],
        origin: [f64; 3],
    ) -> Self {
        assert_eq!(intensities.rank(), 3, "volume must be (D, H, W)");
        Self {
            series_id,
            intensities,
            spacing,
            origin,
            lung_mask: None,
            annotations: Vec::new(),
            irrelevant: Vec::new(),
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.intensities.shape();
        [s[0], s[1], s[2]]
    }

    pub fn with_mask(mut self, mask: Tensor<f32>) -> Self {
        assert_eq!(
            mask.shape(),
            self.intensities.shape(),
            "mask shape must equal intensity shape"
        );
        self.lung_mask = Some(mask);
        self
    }

    pub fn with_annotations(mut self, annotations: Vec<Cube>) -> Self {
        let [d, h, w] = self.shape();
        for a in &annotations {
            assert!(a.d > 0.0, "annotation diameter must be positive");
            assert!(
                a.z >= 0.0 && a.z < d as f64 && a.y >= 0.0 && a.y < h as f64 && a.x >= 0.0 && a.x < w as f64,
                "annotation center {a:?} outside volume {:?}",
                self.shape()
            );
        }
        self.annotations = annotations;
        self
    }

    /// Voxel-space cube to the LUNA-style world convention
    /// `(coordX, coordY, coordZ, diameter_mm)`.
    pub fn voxel_to_world(&self, c: &Cube) -> (f64, f64, f64, f64) {
        (
            self.origin[2] + c.x * self.spacing[2],
            self.origin[1] + c.y * self.spacing[1],
            self.origin[0] + c.z * self.spacing[0],
            c.d * self.spacing[2],
        )
    }
}

/// Clip intensities to `[-1200, 600]` HU, rescale to `[0, 1]`, and mask out
/// everything outside the lung when a mask is present.
pub fn preprocess_hu(volume: &Volume) -> Volume {
    let mut out = volume.clone();
    let rescale = |v: f32| ((v.clamp(-1200.0, 600.0) + 1200.0) / 1800.0).clamp(0.0, 1.0);
    out.intensities = match &volume.lung_mask {
        Some(mask) => volume
            .intensities
            .zip(mask, |v, m| if m > 0.0 { rescale(v) } else { 0.0 }),
        None => volume.intensities.map(rescale),
    };
    out
}
