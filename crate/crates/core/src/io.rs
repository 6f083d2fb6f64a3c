//! On-disk formats.
//!
//! Arrays are stored as a JSON header `<stem>.hdr.json` next to a raw file
//! `<stem>.raw` of interleaved little-endian `f32` (real, imag) pairs in
//! row-major (line, readout, coil) order. Masks are plain JSON.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{CoilArray, GridSpec, SamplingMask};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub shape: [usize; 3],
    pub dtype: String,
    pub layout: String,
    pub byte_order: String,
}

impl ArrayHeader {
    pub fn for_grid(grid: GridSpec) -> Self {
        ArrayHeader {
            shape: grid.shape(),
            dtype: "complex64".into(),
            layout: "row-major".into(),
            byte_order: "little".into(),
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.shape[0], self.shape[1], self.shape[2])
    }
}

pub fn header_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".hdr.json")
}

pub fn raw_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".raw")
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Encodes samples as interleaved little-endian `f32` pairs.
pub fn encode_complex64(data: &[Complex64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&(v.re as f32).to_le_bytes());
        bytes.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    bytes
}

pub fn decode_complex64(bytes: &[u8]) -> Option<Vec<Complex64>> {
    if !bytes.len().is_multiple_of(8) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                Complex64::new(re as f64, im as f64)
            })
            .collect(),
    )
}

pub fn write_array(stem: &Path, array: &CoilArray) -> Result<()> {
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let header = ArrayHeader::for_grid(array.grid());
    fs::write(header_path(stem), serde_json::to_vec(&header)?)?;
    fs::write(raw_path(stem), encode_complex64(&array.to_row_major()))?;
    Ok(())
}

pub fn read_header(stem: &Path) -> Result<ArrayHeader> {
    let hp = header_path(stem);
    let header: ArrayHeader = serde_json::from_slice(&fs::read(&hp)?)?;
    if header.dtype != "complex64" || header.layout != "row-major" || header.byte_order != "little"
    {
        return Err(format_err(&hp, "unsupported dtype, layout or byte order"));
    }
    Ok(header)
}

pub fn read_array(stem: &Path) -> Result<CoilArray> {
    let header = read_header(stem)?;
    let grid = header.grid()?;
    let rp = raw_path(stem);
    let bytes = fs::read(&rp)?;
    let data =
        decode_complex64(&bytes).ok_or_else(|| format_err(&rp, "length is not a multiple of 8"))?;
    if data.len() != grid.len() {
        return Err(format_err(
            &rp,
            format!(
                "expected {} samples for shape {:?}, found {}",
                grid.len(),
                header.shape,
                data.len()
            ),
        ));
    }
    CoilArray::from_row_major(grid, &data)
}

pub fn write_mask(path: &Path, mask: &SamplingMask) -> Result<()> {
    fs::write(path, serde_json::to_vec(mask)?)?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<SamplingMask> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Binary 8-bit PGM (P5) rendering of a plane of non-negative values, scaled to [0, max].
pub fn write_pgm(path: &Path, values: &[f64], rows: usize, cols: usize) -> Result<()> {
    if values.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a {rows}x{cols} image",
            values.len()
        )));
    }
    let max = values.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut out = fs::File::create(path)?;
    write!(out, "P5\n{cols} {rows}\n255\n")?;
    let pixels: Vec<u8> = values
        .iter()
        .map(|v| (v.max(0.0) * scale).round().min(255.0) as u8)
        .collect();
    out.write_all(&pixels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::new(4, 3, 2).unwrap();
        let data: Vec<Complex64> = (0..grid.len())
            .map(|i| Complex64::new(i as f64 * 0.5, -(i as f64)))
            .collect();
        let a = CoilArray::from_coil_major(grid, data).unwrap();
        let stem = dir.path().join("sub").join("ksp");
        write_array(&stem, &a).unwrap();

        let hdr: serde_json::Value =
            serde_json::from_slice(&fs::read(header_path(&stem)).unwrap()).unwrap();
        assert_eq!(
            hdr,
            serde_json::json!({"shape":[4,3,2],"dtype":"complex64","layout":"row-major","byte_order":"little"})
        );
        let raw = fs::read(raw_path(&stem)).unwrap();
        assert_eq!(raw.len(), grid.len() * 8);
        // First sample is (line 0, readout 0, coil 0); second is coil 1 of the same pixel.
        let second = f32::from_le_bytes([raw[8], raw[9], raw[10], raw[11]]);
        assert_eq!(second as f64, a.get(0, 0, 1).re);

        assert_eq!(read_array(&stem).unwrap(), a);
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::new(2, 2, 1).unwrap();
        let stem = dir.path().join("x");
        write_array(&stem, &CoilArray::zeros(grid)).unwrap();
        fs::write(raw_path(&stem), [0u8; 16]).unwrap();
        assert!(matches!(read_array(&stem), Err(Error::Format { .. })));
    }

    #[test]
    fn pgm_header_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        write_pgm(&p, &[0.0, 1.0, 2.0, 4.0], 2, 2).unwrap();
        let bytes = fs::read(&p).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 64, 128, 255]);
    }
}
