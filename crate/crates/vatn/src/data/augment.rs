//! Lossless cross-sectional reorientation and one-voxel shift augmentation.

use super::Volume;
use crate::boxes::Cube;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// The three orthogonal viewing planes. Each reorientation is an exact axis
/// permutation of `(z, y, x)`, so a transform followed by its inverse is
/// bit-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossSection {
    Axial,
    Coronal,
    Sagittal,
}

impl CrossSection {
    pub const ALL: [CrossSection; 3] = [Self::Axial, Self::Coronal, Self::Sagittal];

    /// Axis order of the reoriented volume: output axis `i` reads input axis
    /// `perm()[i]`.
    pub fn perm(self) -> [usize; 3] {
        match self {
            Self::Axial => [0, 1, 2],
            Self::Coronal => [1, 0, 2],
            Self::Sagittal => [2, 0, 1],
        }
    }

    pub fn inverse_perm(self) -> [usize; 3] {
        let p = self.perm();
        let mut inv = [0usize; 3];
        for (i, &ax) in p.iter().enumerate() {
            inv[ax] = i;
        }
        inv
    }

    pub fn apply_to_volume(self, v: &Volume) -> Volume {
        if self == Self::Axial {
            return v.clone();
        }
        let p = self.perm();
        let mut out = v.clone();
        out.intensities = v.intensities.permute(&p);
        out.lung_mask = v.lung_mask.as_ref().map(|m| m.permute(&p));
        out.spacing = permute3(v.spacing, p);
        out.origin = permute3(v.origin, p);
        out.annotations = v.annotations.iter().map(|c| permute_cube(c, p)).collect();
        out.irrelevant = v.irrelevant.iter().map(|c| permute_cube(c, p)).collect();
        out
    }

    pub fn invert_volume(self, v: &Volume) -> Volume {
        match self {
            Self::Axial => v.clone(),
            Self::Coronal => Self::Coronal.apply_to_volume(v), // involution
            Self::Sagittal => {
                let inv = self.inverse_perm();
                let mut out = v.clone();
                out.intensities = v.intensities.permute(&inv);
                out.lung_mask = v.lung_mask.as_ref().map(|m| m.permute(&inv));
                out.spacing = permute3(v.spacing, inv);
                out.origin = permute3(v.origin, inv);
                out.annotations = v.annotations.iter().map(|c| permute_cube(c, inv)).collect();
                out.irrelevant = v.irrelevant.iter().map(|c| permute_cube(c, inv)).collect();
                out
            }
        }
    }

    /// Map a cube from the reoriented frame back to the original frame.
    pub fn cube_to_original(self, c: &Cube) -> Cube {
        permute_cube(c, self.inverse_perm())
    }
}

fn permute3(v: [f64; 3], p: [usize; 3]) -> [f64; 3] {
    [v[p[0]], v[p[1]], v[p[2]]]
}

fn permute_cube(c: &Cube, p: [usize; 3]) -> Cube {
    let coords = [c.z, c.y, c.x];
    Cube {
        z: coords[p[0]],
        y: coords[p[1]],
        x: coords[p[2]],
        d: c.d,
    }
}

/// The original volume plus its coronal and sagittal reorientations, with
/// annotations transformed alongside.
pub fn cross_section_augment(v: &Volume) -> [Volume; 3] {
    [
        v.clone(),
        CrossSection::Coronal.apply_to_volume(v),
        CrossSection::Sagittal.apply_to_volume(v),
    ]
}

/// Integer translation of a `(D, H, W)` tensor with zero fill at exposed
/// borders.
pub fn shift_tensor3(t: &Tensor<f32>, shift: [isize; 3]) -> Tensor<f32> {
    let s = t.shape();
    assert_eq!(s.len(), 3);
    let (d, h, w) = (s[0] as isize, s[1] as isize, s[2] as isize);
    let src = t.data();
    let mut out = vec![0f32; t.numel()];
    for z in 0..d {
        let sz = z - shift[0];
        if sz < 0 || sz >= d {
            continue;
        }
        for y in 0..h {
            let sy = y - shift[1];
            if sy < 0 || sy >= h {
                continue;
            }
            for x in 0..w {
                let sx = x - shift[2];
                if sx < 0 || sx >= w {
                    continue;
                }
                out[((z * h + y) * w + x) as usize] = src[((sz * h + sy) * w + sx) as usize];
            }
        }
    }
    Tensor::new(s.to_vec(), out)
}

/// Shift an annotation by the same integer offsets as its volume.
pub fn shift_cube(c: &Cube, shift: [isize; 3]) -> Cube {
    Cube {
        z: c.z + shift[0] as f64,
        y: c.y + shift[1] as f64,
        x: c.x + shift[2] as f64,
        d: c.d,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marker_volume() -> Volume {
        let mut t = Tensor::<f32>::zeros(vec![4, 5, 6]);
        t.data_mut()[(1 * 5 + 2) * 6 + 3] = 1.0; // marker at (z=1, y=2, x=3)
        Volume::new("m".into(), t, [2.0, 0.8, 0.7], [1.0, 2.0, 3.0]).with_annotations(vec![
            Cube::new(1.0, 2.0, 3.0, 2.0),
        ])
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let v = marker_volume();
        for cs in CrossSection::ALL {
            let there = cs.apply_to_volume(&v);
            let back = cs.invert_volume(&there);
            assert_eq!(back.intensities, v.intensities, "{cs:?}");
            assert_eq!(back.annotations, v.annotations, "{cs:?}");
            assert_eq!(back.spacing, v.spacing, "{cs:?}");
        }
    }

    #[test]
    fn marker_voxel_follows_annotation() {
        let v = marker_volume();
        for cs in CrossSection::ALL {
            let t = cs.apply_to_volume(&v);
            let a = &t.annotations[0];
            let val = t.intensities.at(&[a.z as usize, a.y as usize, a.x as usize]);
            assert_eq!(val, 1.0, "{cs:?}: annotation must track the marker voxel");
            assert_eq!(a.d, 2.0, "diameter unchanged under permutation");
        }
    }

    #[test]
    fn augment_returns_three_views() {
        let v = marker_volume();
        let views = cross_section_augment(&v);
        assert_eq!(views[0].shape(), [4, 5, 6]);
        assert_eq!(views[1].shape(), [5, 4, 6]);
        assert_eq!(views[2].shape(), [6, 4, 5]);
    }

    #[test]
    fn shift_zero_is_identity_and_borders_zero_fill() {
        let t = Tensor::<f32>::from_fn(vec![3, 3, 3], |i| (i[0] * 9 + i[1] * 3 + i[2]) as f32 + 1.0);
        assert_eq!(shift_tensor3(&t, [0, 0, 0]), t);

        let fwd = shift_tensor3(&t, [1, 0, 0]);
        let back = shift_tensor3(&fwd, [-1, 0, 0]);
        // everything restored except the last z slice, which was pushed out
        for z in 0..2 {
            for y in 0..3 {
                for x in 0..3 {
                    assert_eq!(back.at(&[z, y, x]), t.at(&[z, y, x]));
                }
            }
        }
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(back.at(&[2, y, x]), 0.0);
            }
        }
    }

    #[test]
    fn cube_shift_matches_voxel_shift() {
        let c = Cube::new(5.0, 6.0, 7.0, 3.0);
        let s = shift_cube(&c, [1, -1, 0]);
        assert_eq!((s.z, s.y, s.x, s.d), (6.0, 5.0, 7.0, 3.0));
    }
}
