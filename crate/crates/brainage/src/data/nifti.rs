//! Minimal NIfTI-1 volume I/O.
//!
//! Reads the datatypes that show up in practice (u8, i16, i32, f32, f64,
//! with scl_slope/scl_inter applied) and writes f32 or f64 single-file
//! `.nii` / `.nii.gz`. The voxel array is (slices, rows, cols) = (z, y, x);
//! on disk the layout is the standard x-fastest Fortran order. Only the
//! sform affine is carried.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use ndarray::Array3;

use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: f32 = 352.0;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

/// Identity affine with unit voxel spacing.
pub fn identity_affine() -> [[f64; 4]; 4] {
    let mut a = [[0.0; 4]; 4];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    a
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if is_gz(path) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Read a NIfTI-1 volume as (slices, rows, cols) voxels plus the sform affine.
pub fn read_nifti(path: &Path) -> Result<(Array3<f64>, [[f64; 4]; 4])> {
    let bytes = read_all(path)?;
    if bytes.len() < HEADER_SIZE + 4 {
        return Err(Error::parse(path.display().to_string(), "file shorter than a NIfTI-1 header"));
    }
    let sizeof_hdr = LittleEndian::read_i32(&bytes[0..4]);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(Error::parse(
            path.display().to_string(),
            format!("unsupported header size {sizeof_hdr} (big-endian or NIfTI-2?)"),
        ));
    }
    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        return Err(Error::parse(path.display().to_string(), "missing n+1 magic"));
    }
    let ndim = LittleEndian::read_i16(&bytes[40..42]);
    if !(2..=4).contains(&ndim) {
        return Err(Error::parse(
            path.display().to_string(),
            format!("unsupported dimensionality {ndim}"),
        ));
    }
    let nx = LittleEndian::read_i16(&bytes[42..44]).max(1) as usize;
    let ny = LittleEndian::read_i16(&bytes[44..46]).max(1) as usize;
    let nz = if ndim >= 3 {
        LittleEndian::read_i16(&bytes[46..48]).max(1) as usize
    } else {
        1
    };
    if ndim == 4 && LittleEndian::read_i16(&bytes[48..50]) > 1 {
        return Err(Error::parse(
            path.display().to_string(),
            "multi-frame volumes are not supported",
        ));
    }
    let datatype = LittleEndian::read_i16(&bytes[70..72]);
    let vox_offset = LittleEndian::read_f32(&bytes[108..112]) as usize;
    let mut slope = LittleEndian::read_f32(&bytes[112..116]) as f64;
    let inter = LittleEndian::read_f32(&bytes[116..120]) as f64;
    if slope == 0.0 || !slope.is_finite() {
        slope = 1.0;
    }

    let mut affine = identity_affine();
    let sform_code = LittleEndian::read_i16(&bytes[254..256]);
    if sform_code > 0 {
        for (r, off) in [(0usize, 280usize), (1, 296), (2, 312)] {
            for c in 0..4 {
                affine[r][c] = LittleEndian::read_f32(&bytes[off + 4 * c..off + 4 * c + 4]) as f64;
            }
        }
    }

    let n = nx * ny * nz;
    let elem = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::parse(
                path.display().to_string(),
                format!("unsupported datatype code {other}"),
            ))
        }
    };
    let data = bytes
        .get(vox_offset..vox_offset + n * elem)
        .ok_or_else(|| Error::parse(path.display().to_string(), "truncated voxel data"))?;

    let mut flat = vec![0.0f64; n];
    match datatype {
        DT_UINT8 => {
            for (v, &b) in flat.iter_mut().zip(data) {
                *v = b as f64;
            }
        }
        DT_INT16 => {
            for (i, v) in flat.iter_mut().enumerate() {
                *v = LittleEndian::read_i16(&data[2 * i..2 * i + 2]) as f64;
            }
        }
        DT_INT32 => {
            for (i, v) in flat.iter_mut().enumerate() {
                *v = LittleEndian::read_i32(&data[4 * i..4 * i + 4]) as f64;
            }
        }
        DT_FLOAT32 => {
            for (i, v) in flat.iter_mut().enumerate() {
                *v = LittleEndian::read_f32(&data[4 * i..4 * i + 4]) as f64;
            }
        }
        DT_FLOAT64 => {
            for (i, v) in flat.iter_mut().enumerate() {
                *v = LittleEndian::read_f64(&data[8 * i..8 * i + 8]);
            }
        }
        _ => unreachable!(),
    }
    if slope != 1.0 || inter != 0.0 {
        for v in &mut flat {
            *v = *v * slope + inter;
        }
    }

    // Disk order is x-fastest; voxels[(z, y, x)].
    let mut voxels = Array3::<f64>::zeros((nz, ny, nx));
    {
        let vs = voxels.as_slice_mut().expect("standard layout");
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    vs[(z * ny + y) * nx + x] = flat[(z * ny + y) * nx + x];
                }
            }
        }
    }
    Ok((voxels, affine))
}

/// Precision to store voxels with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageDtype {
    F32,
    F64,
}

/// Write a (slices, rows, cols) volume as single-file NIfTI-1. Gzip is
/// chosen by the `.gz` suffix.
pub fn write_nifti(
    path: &Path,
    voxels: &Array3<f64>,
    affine: &[[f64; 4]; 4],
    dtype: StorageDtype,
) -> Result<()> {
    let (nz, ny, nx) = voxels.dim();
    let mut header = vec![0u8; HEADER_SIZE + 4];
    LittleEndian::write_i32(&mut header[0..4], HEADER_SIZE as i32);
    LittleEndian::write_i16(&mut header[40..42], 3);
    LittleEndian::write_i16(&mut header[42..44], nx as i16);
    LittleEndian::write_i16(&mut header[44..46], ny as i16);
    LittleEndian::write_i16(&mut header[46..48], nz as i16);
    for k in 4..8 {
        LittleEndian::write_i16(&mut header[40 + 2 * k..42 + 2 * k], 1);
    }
    let (dt, bitpix) = match dtype {
        StorageDtype::F32 => (DT_FLOAT32, 32i16),
        StorageDtype::F64 => (DT_FLOAT64, 64i16),
    };
    LittleEndian::write_i16(&mut header[70..72], dt);
    LittleEndian::write_i16(&mut header[72..74], bitpix);
    // pixdim: qfac and unit voxel spacing.
    for k in 0..4 {
        LittleEndian::write_f32(&mut header[76 + 4 * k..80 + 4 * k], 1.0);
    }
    LittleEndian::write_f32(&mut header[108..112], VOX_OFFSET);
    LittleEndian::write_f32(&mut header[112..116], 1.0); // scl_slope
    LittleEndian::write_i16(&mut header[254..256], 1); // sform_code = scanner
    for (r, off) in [(0usize, 280usize), (1, 296), (2, 312)] {
        for c in 0..4 {
            LittleEndian::write_f32(
                &mut header[off + 4 * c..off + 4 * c + 4],
                affine[r][c] as f32,
            );
        }
    }
    header[344..348].copy_from_slice(b"n+1\0");

    let vs = voxels.as_standard_layout();
    let flat = vs.as_slice().expect("standard layout");
    let mut body: Vec<u8> = Vec::with_capacity(flat.len() * 8);
    match dtype {
        StorageDtype::F32 => {
            for &v in flat {
                body.write_f32::<LittleEndian>(v as f32).expect("vec write");
            }
        }
        StorageDtype::F64 => {
            for &v in flat {
                body.write_f64::<LittleEndian>(v).expect("vec write");
            }
        }
    }

    let write_to = |w: &mut dyn Write| -> std::io::Result<()> {
        w.write_all(&header)?;
        w.write_all(&body)
    };

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    if is_gz(path) {
        let mut enc = GzEncoder::new(file, flate2::Compression::default());
        write_to(&mut enc).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?;
    } else {
        let mut file = file;
        write_to(&mut file).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
