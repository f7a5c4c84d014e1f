//! Binary interchange formats: the raw float32 tensor file (magic `EQTF`)
//! and PNG import/export for grayscale fields. All integers little-endian.

use crate::field::{FeatureField, FiberType};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const TENSOR_MAGIC: &[u8; 4] = b"EQTF";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic at offset {offset}: expected {expected:?}")]
    BadMagic { offset: u64, expected: &'static str },
    #[error("tensor rank {0} is unreasonably large")]
    BadRank(u32),
    #[error("tensor dims overflow")]
    DimsOverflow,
    #[error("png import supports 8/16-bit grayscale only")]
    UnsupportedPng,
    #[error("png export requires a single-channel field")]
    NotSingleChannel,
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
}

/// Write `dims` + row-major f32 data in the raw tensor format.
pub fn write_tensor_to<W: Write>(w: &mut W, dims: &[usize], data: &[f32]) -> Result<(), IoError> {
    assert_eq!(dims.iter().product::<usize>(), data.len());
    w.write_all(TENSOR_MAGIC)?;
    w.write_u32::<LittleEndian>(dims.len() as u32)?;
    for &d in dims {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for &v in data {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

/// Read one tensor record, returning `(dims, data)`.
pub fn read_tensor_from<R: Read>(r: &mut R) -> Result<(Vec<usize>, Vec<f32>), IoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(IoError::BadMagic { offset: 0, expected: "EQTF" });
    }
    let rank = r.read_u32::<LittleEndian>()?;
    if rank > 8 {
        return Err(IoError::BadRank(rank));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    let mut len: usize = 1;
    for _ in 0..rank {
        let d = r.read_u32::<LittleEndian>()? as usize;
        len = len.checked_mul(d).ok_or(IoError::DimsOverflow)?;
        dims.push(d);
    }
    if len > (1 << 30) {
        return Err(IoError::DimsOverflow);
    }
    let mut data = vec![0f32; len];
    r.read_f32_into::<LittleEndian>(&mut data)?;
    Ok((dims, data))
}

pub fn write_tensor_file(path: &Path, dims: &[usize], data: &[f32]) -> Result<(), IoError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor_to(&mut f, dims, data)
}

pub fn read_tensor_file(path: &Path) -> Result<(Vec<usize>, Vec<f32>), IoError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor_from(&mut f)
}

/// Serialize a field as a rank-3 `[C,H,W]` float32 tensor.
pub fn field_to_tensor_bytes(field: &FeatureField) -> Vec<u8> {
    let (c, h, w) = field.shape();
    let data: Vec<f32> = field.data().iter().map(|&v| v as f32).collect();
    let mut out = Vec::with_capacity(16 + data.len() * 4);
    write_tensor_to(&mut out, &[c, h, w], &data).expect("in-memory write cannot fail");
    out
}

/// Read a rank-3 tensor back into a trivial-fiber field.
pub fn field_from_tensor<R: Read>(r: &mut R, pixel_pitch: f64) -> Result<FeatureField, IoError> {
    let (dims, data) = read_tensor_from(r)?;
    let (c, h, w) = match dims.as_slice() {
        [c, h, w] => (*c, *h, *w),
        [h, w] => (1, *h, *w),
        _ => return Err(IoError::BadRank(dims.len() as u32)),
    };
    let f64_data = data.iter().map(|&v| v as f64).collect();
    Ok(FeatureField::new(f64_data, (c, h, w), FiberType::trivial(c), pixel_pitch)?)
}

/// Export a single-channel field as 16-bit grayscale PNG; values are
/// clamped to `[0, 1]` and quantized.
pub fn export_png(field: &FeatureField, path: &Path) -> Result<(), IoError> {
    let (c, h, w) = field.shape();
    if c != 1 {
        return Err(IoError::NotSingleChannel);
    }
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for r in 0..h {
        for cc in 0..w {
            let v = field.get(0, r, cc).clamp(0.0, 1.0);
            img.put_pixel(cc as u32, r as u32, image::Luma([(v * 65535.0).round() as u16]));
        }
    }
    img.save(path)?;
    Ok(())
}

/// Import an 8- or 16-bit grayscale PNG as a trivial single-channel field
/// scaled to `[0, 1]`.
pub fn import_png(path: &Path, pixel_pitch: f64) -> Result<FeatureField, IoError> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        image::DynamicImage::ImageLuma8(buf) => {
            buf.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect()
        }
        image::DynamicImage::ImageLuma16(buf) => {
            buf.pixels().map(|p| f64::from(p.0[0]) / 65535.0).collect()
        }
        _ => return Err(IoError::UnsupportedPng),
    };
    Ok(FeatureField::new(data, (1, h, w), FiberType::trivial(1), pixel_pitch)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_roundtrip() {
        let dims = vec![2usize, 3, 4];
        let data: Vec<f32> = (0..24).map(|i| i as f32 * 0.5).collect();
        let mut buf = Vec::new();
        write_tensor_to(&mut buf, &dims, &data).unwrap();
        let (d2, v2) = read_tensor_from(&mut buf.as_slice()).unwrap();
        assert_eq!(d2, dims);
        assert_eq!(v2, data);
        // byte-identical when rewritten
        let mut buf2 = Vec::new();
        write_tensor_to(&mut buf2, &d2, &v2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOPE\x01\x00\x00\x00".to_vec();
        assert!(read_tensor_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn png_roundtrip_quantized() {
        let dir = std::env::temp_dir().join("eqtp_png_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.png");
        let mut f = FeatureField::zeros((1, 4, 5), FiberType::trivial(1), 1.0);
        f.set(0, 1, 2, 0.5);
        f.set(0, 3, 4, 1.0);
        export_png(&f, &path).unwrap();
        let back = import_png(&path, 1.0).unwrap();
        assert_eq!(back.shape(), (1, 4, 5));
        assert!((back.get(0, 1, 2) - 0.5).abs() < 1e-4);
        assert_eq!(back.get(0, 3, 4), 1.0);
    }
}
