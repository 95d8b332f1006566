//! MetaImage (.mhd header + .raw payload) reader and writer.
//!
//! Supports the subset LUNA-style volumes use: `NDims = 3`, little-endian
//! `MET_SHORT` or `MET_FLOAT` data, `DimSize`/`ElementSpacing`/`Offset` in
//! the header's `(x, y, z)` order remapped to the in-memory `(z, y, x)`.

use super::Volume;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

pub fn load_mhd(header_path: &Path) -> Result<Volume> {
    let text = std::fs::read_to_string(header_path)?;
    let mut keys: HashMap<String, String> = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::data(format!("malformed header line '{line}'")))?;
        keys.insert(k.trim().to_string(), v.trim().to_string());
    }

    let ndims: usize = get(&keys, "NDims")?.parse().map_err(bad("NDims"))?;
    if ndims != 3 {
        return Err(Error::data(format!("only NDims = 3 supported, got {ndims}")));
    }
    if let Some(msb) = keys
        .get("ElementByteOrderMSB")
        .or_else(|| keys.get("BinaryDataByteOrderMSB"))
    {
        if msb.eq_ignore_ascii_case("true") {
            return Err(Error::data("big-endian MetaImage data is not supported"));
        }
    }

    let dims = parse_triple(get(&keys, "DimSize")?)?;
    let (nx, ny, nz) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let spacing = keys
        .get("ElementSpacing")
        .map(|s| parse_triple(s))
        .transpose()?
        .unwrap_or([1.0, 1.0, 1.0]);
    let offset = keys
        .get("Offset")
        .map(|s| parse_triple(s))
        .transpose()?
        .unwrap_or([0.0, 0.0, 0.0]);

    let elem_type = get(&keys, "ElementType")?;
    let data_file = get(&keys, "ElementDataFile")?;
    if data_file == "LOCAL" || data_file == "LIST" {
        return Err(Error::data(format!(
            "ElementDataFile = {data_file} is not supported"
        )));
    }
    let raw_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(data_file);

    let numel = nx * ny * nz;
    let raw_len = std::fs::metadata(&raw_path)?.len() as usize;
    let mut reader = BufReader::new(std::fs::File::open(&raw_path)?);
    let data: Vec<f32> = match elem_type.as_str() {
        "MET_SHORT" => {
            check_size(raw_len, numel, 2, &dims)?;
            let mut v = Vec::with_capacity(numel);
            for _ in 0..numel {
                v.push(reader.read_i16::<LittleEndian>()? as f32);
            }
            v
        }
        "MET_FLOAT" => {
            check_size(raw_len, numel, 4, &dims)?;
            let mut v = Vec::with_capacity(numel);
            for _ in 0..numel {
                v.push(reader.read_f32::<LittleEndian>()?);
            }
            v
        }
        other => {
            return Err(Error::data(format!(
                "unsupported ElementType '{other}' (expected MET_SHORT or MET_FLOAT)"
            )))
        }
    };

    // x varies fastest in the raw stream, so the buffer is already (z, y, x)
    let intensities = Tensor::new(vec![nz, ny, nx], data);
    let series_id = header_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".to_string());
    Ok(Volume::new(
        series_id,
        intensities,
        [spacing[2], spacing[1], spacing[0]],
        [offset[2], offset[1], offset[0]],
    ))
}

/// Write a volume as `<stem>.mhd` + `<stem>.raw` with MET_FLOAT payload.
pub fn write_mhd(volume: &Volume, dir: &Path, stem: &str) -> Result<()> {
    let [d, h, w] = volume.shape();
    let raw_name = format!("{stem}.raw");
    let header = format!(
        "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n\
         DimSize = {w} {h} {d}\nElementSpacing = {} {} {}\nOffset = {} {} {}\n\
         ElementType = MET_FLOAT\nElementDataFile = {raw_name}\n",
        volume.spacing[2],
        volume.spacing[1],
        volume.spacing[0],
        volume.origin[2],
        volume.origin[1],
        volume.origin[0],
    );
    std::fs::write(dir.join(format!("{stem}.mhd")), header)?;
    let mut wtr = BufWriter::new(std::fs::File::create(dir.join(raw_name))?);
    for &v in volume.intensities.data() {
        wtr.write_f32::<LittleEndian>(v)?;
    }
    wtr.flush()?;
    Ok(())
}

fn get<'a>(keys: &'a HashMap<String, String>, key: &str) -> Result<&'a String> {
    keys.get(key)
        .ok_or_else(|| Error::data(format!("missing MetaImage key '{key}'")))
}

fn bad(key: &'static str) -> impl Fn(std::num::ParseIntError) -> Error {
    move |e| Error::data(format!("bad value for {key}: {e}"))
}

fn parse_triple(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split_whitespace()
        .map(|p| p.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::data(format!("bad triple '{s}': {e}")))?;
    if parts.len() != 3 {
        return Err(Error::data(format!("expected 3 values, got '{s}'")));
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn check_size(raw_len: usize, numel: usize, elem: usize, dims: &[f64; 3]) -> Result<()> {
    if raw_len != numel * elem {
        return Err(Error::data(format!(
            "raw size mismatch: DimSize {dims:?} implies {} bytes, file has {raw_len}",
            numel * elem
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_dir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("vatn-mhd-{name}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn hand_written_short_fixture_loads_exactly() {
        let dir = fixture_dir("fixture");
        let header = "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n\
                      ElementSpacing = 0.7 0.8 2.5\nOffset = -100 -90 -80\n\
                      ElementType = MET_SHORT\nElementDataFile = vals.raw\n";
        std::fs::write(dir.join("vals.mhd"), header).unwrap();
        let raw: Vec<u8> = (0i16..8).flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(dir.join("vals.raw"), raw).unwrap();

        let vol = load_mhd(&dir.join("vals.mhd")).unwrap();
        assert_eq!(vol.shape(), [2, 2, 2]);
        assert_eq!(
            vol.intensities.data(),
            &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
        );
        // header order is (x, y, z); memory order is (z, y, x)
        assert_eq!(vol.spacing, [2.5, 0.8, 0.7]);
        assert_eq!(vol.origin, [-80.0, -90.0, -100.0]);
        assert_eq!(vol.series_id, "vals");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn dimsize_mismatch_is_an_error() {
        let dir = fixture_dir("mismatch");
        let header = "NDims = 3\nDimSize = 2 2 2\nElementType = MET_SHORT\nElementDataFile = short.raw\n";
        std::fs::write(dir.join("short.mhd"), header).unwrap();
        std::fs::write(dir.join("short.raw"), [0u8; 10]).unwrap();
        let err = load_mhd(&dir.join("short.mhd")).unwrap_err();
        assert!(err.to_string().contains("size mismatch"), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unsupported_type_is_an_error() {
        let dir = fixture_dir("unsupported");
        let header = "NDims = 3\nDimSize = 1 1 1\nElementType = MET_DOUBLE\nElementDataFile = d.raw\n";
        std::fs::write(dir.join("d.mhd"), header).unwrap();
        std::fs::write(dir.join("d.raw"), [0u8; 8]).unwrap();
        assert!(load_mhd(&dir.join("d.mhd")).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn write_read_round_trip() {
        let dir = fixture_dir("roundtrip");
        let vol = Volume::new(
            "rt".into(),
            Tensor::from_fn(vec![3, 4, 5], |i| (i[0] * 20 + i[1] * 5 + i[2]) as f32 * 0.5),
            [2.0, 0.7, 0.7],
            [-10.0, -20.0, -30.0],
        );
        write_mhd(&vol, &dir, "rt").unwrap();
        let back = load_mhd(&dir.join("rt.mhd")).unwrap();
        assert_eq!(back.shape(), [3, 4, 5]);
        assert_eq!(back.intensities.data(), vol.intensities.data());
        assert_eq!(back.spacing, vol.spacing);
        assert_eq!(back.origin, vol.origin);
        std::fs::remove_dir_all(&dir).ok();
    }
}
