//! Detection and annotation CSV formats, plus the dataset manifest.

use super::Volume;
use crate::boxes::{Cube, DetectionBox};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const ANNOTATION_HEADER: &str = "series_id,z,y,x,diameter";
pub const ANNOTATION_WORLD_HEADER: &str = "seriesuid,coordX,coordY,coordZ,diameter_mm";
pub const DETECTION_HEADER: &str = "series_id,z,y,x,diameter_vox,score";

pub fn write_annotations_csv(path: &Path, rows: &[(String, Cube)]) -> Result<()> {
    let mut out = String::from(ANNOTATION_HEADER);
    out.push('\n');
    for (id, c) in rows {
        writeln!(out, "{id},{:.6},{:.6},{:.6},{:.6}", c.z, c.y, c.x, c.d).expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_annotations_csv(path: &Path) -> Result<Vec<(String, Cube)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::data("empty annotations csv"))?;
    if header != ANNOTATION_HEADER {
        return Err(Error::data(format!(
            "unexpected annotations header '{header}', want '{ANNOTATION_HEADER}'"
        )));
    }
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::data(format!("bad annotation row {}: '{line}'", ln + 2)));
        }
        let f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::data(format!("bad number '{s}' on row {}: {e}", ln + 2)))
        };
        out.push((
            parts[0].to_string(),
            Cube::new(f(parts[1])?, f(parts[2])?, f(parts[3])?, f(parts[4])?),
        ));
    }
    Ok(out)
}

/// LUNA-style world-coordinate annotation export for volumes with spacing
/// metadata.
pub fn write_annotations_world_csv(path: &Path, volumes: &[Volume]) -> Result<()> {
    let mut out = String::from(ANNOTATION_WORLD_HEADER);
    out.push('\n');
    for v in volumes {
        for a in &v.annotations {
            let (x, y, z, d) = v.voxel_to_world(a);
            writeln!(out, "{},{x:.6},{y:.6},{z:.6},{d:.6}", v.series_id).expect("string write");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_detections_csv(path: &Path, rows: &[(String, DetectionBox)]) -> Result<()> {
    let mut out = String::from(DETECTION_HEADER);
    out.push('\n');
    for (id, b) in rows {
        writeln!(
            out,
            "{id},{:.6},{:.6},{:.6},{:.6},{:.6}",
            b.z, b.y, b.x, b.d, b.score
        )
        .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_detections_csv(path: &Path) -> Result<Vec<(String, DetectionBox)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::data("empty detections csv"))?;
    if header != DETECTION_HEADER {
        return Err(Error::data(format!(
            "unexpected detections header '{header}', want '{DETECTION_HEADER}'"
        )));
    }
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(Error::data(format!("bad detection row {}: '{line}'", ln + 2)));
        }
        let f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::data(format!("bad number '{s}' on row {}: {e}", ln + 2)))
        };
        out.push((
            parts[0].to_string(),
            DetectionBox::new(f(parts[1])?, f(parts[2])?, f(parts[3])?, f(parts[4])?, f(parts[5])?),
        ));
    }
    Ok(out)
}

/// Dataset manifest: one entry per volume plus generation metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub volumes: Vec<ManifestEntry>,
    /// `normalized` intensities are already in [0, 1]; `hu` volumes need the
    /// clip-and-rescale preprocessing.
    pub intensity: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub series_id: String,
    pub mhd: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";

impl Manifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("manifest serialization: {e}")))?;
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("manifest parse: {e}")))
    }
}

/// Load every volume of a dataset directory, attaching its annotations.
pub fn load_dataset(dir: &Path) -> Result<Vec<Volume>> {
    let manifest = Manifest::load(dir)?;
    let annotations = read_annotations_csv(&dir.join(ANNOTATIONS_FILE))?;
    let mut volumes = Vec::new();
    for entry in &manifest.volumes {
        let mut v = super::load_mhd(&dir.join(&entry.mhd))?;
        v.series_id = entry.series_id.clone();
        let anns: Vec<Cube> = annotations
            .iter()
            .filter(|(id, _)| id == &entry.series_id)
            .map(|(_, c)| *c)
            .collect();
        v = v.with_annotations(anns);
        volumes.push(v);
    }
    Ok(volumes)
}
