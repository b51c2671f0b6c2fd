//! NIfTI-1 reading and writing for 3-D single-frame volumes.
//!
//! Supports the single-file layout (`.nii` / `.nii.gz`): a 348-byte
//! little-endian header, an optional extension gap, and the voxel payload at
//! `vox_offset`. Parsing is total: any byte stream yields either a valid
//! [`Volume`] or a typed [`Error`], never a panic.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array3, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::affine::{self, Affine};
use crate::error::{Error, Result};

/// Byte offsets of the NIfTI-1 header fields used by this crate.
mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const SROW_X: usize = 280;
    pub const SROW_Y: usize = 296;
    pub const SROW_Z: usize = 312;
    pub const MAGIC: usize = 344;
}

/// Fixed header length of the NIfTI-1 format.
pub const HEADER_LEN: usize = 348;
/// Payload offset written by this crate (header + 4-byte extender).
const DEFAULT_VOX_OFFSET: usize = 352;
/// Single-file magic tag.
const MAGIC: &[u8; 4] = b"n+1\0";
/// NIFTI_UNITS_MM.
const UNITS_MM: u8 = 2;

/// Voxel datatypes this crate can read and write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Datatype {
    UInt8,
    Int16,
    Float32,
    Float64,
}

impl Datatype {
    /// Maps a NIfTI datatype code to a supported datatype.
    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Datatype::UInt8),
            4 => Ok(Datatype::Int16),
            16 => Ok(Datatype::Float32),
            64 => Ok(Datatype::Float64),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    /// The on-disk NIfTI code.
    pub fn code(self) -> i16 {
        match self {
            Datatype::UInt8 => 2,
            Datatype::Int16 => 4,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    /// Bytes per voxel.
    pub fn size(self) -> usize {
        match self {
            Datatype::UInt8 => 1,
            Datatype::Int16 => 2,
            Datatype::Float32 => 4,
            Datatype::Float64 => 8,
        }
    }

    /// Human-readable name used in error messages.
    pub fn name(self) -> &'static str {
        match self {
            Datatype::UInt8 => "uint8",
            Datatype::Int16 => "int16",
            Datatype::Float32 => "float32",
            Datatype::Float64 => "float64",
        }
    }
}

/// Anatomical direction of a voxel axis under the LPS world convention
/// (+x = left, +y = posterior, +z = superior).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisCode {
    Left,
    Right,
    Posterior,
    Anterior,
    Superior,
    Inferior,
}

impl AxisCode {
    /// Index of the world axis this code lies along (0 = L/R, 1 = P/A, 2 = S/I).
    pub fn world_axis(self) -> usize {
        match self {
            AxisCode::Left | AxisCode::Right => 0,
            AxisCode::Posterior | AxisCode::Anterior => 1,
            AxisCode::Superior | AxisCode::Inferior => 2,
        }
    }

    /// True when the axis points along the positive world direction.
    pub fn is_positive(self) -> bool {
        matches!(self, AxisCode::Left | AxisCode::Posterior | AxisCode::Superior)
    }

    fn from_parts(world_axis: usize, positive: bool) -> Self {
        match (world_axis, positive) {
            (0, true) => AxisCode::Left,
            (0, false) => AxisCode::Right,
            (1, true) => AxisCode::Posterior,
            (1, false) => AxisCode::Anterior,
            (2, true) => AxisCode::Superior,
            _ => AxisCode::Inferior,
        }
    }
}

impl std::fmt::Display for AxisCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let c = match self {
            AxisCode::Left => 'L',
            AxisCode::Right => 'R',
            AxisCode::Posterior => 'P',
            AxisCode::Anterior => 'A',
            AxisCode::Superior => 'S',
            AxisCode::Inferior => 'I',
        };
        write!(f, "{c}")
    }
}

/// The subset of NIfTI-1 header fields this crate interprets.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dims: [usize; 3],
    pub pixdim: [f64; 3],
    pub datatype: Datatype,
    pub vox_offset: usize,
    pub scl_slope: f64,
    pub scl_inter: f64,
    pub affine: Affine,
}

/// A 3-D scalar image with a voxel-to-world affine.
///
/// Voxel values are stored as `f32` in index order `(i, j, k)`; the affine
/// maps voxel indices to world millimetres under the LPS convention.
#[derive(Debug, Clone)]
pub struct Volume {
    pub data: Array3<f32>,
    pub affine: Affine,
    /// Anatomical direction of each voxel axis, derived from the affine.
    pub axis_codes: [AxisCode; 3],
    /// Set when the source voxels were float64 and lost precision on the
    /// way to the internal f32 representation.
    pub lossy_downcast: bool,
}

impl Volume {
    /// Wraps voxel data and an affine, validating that the affine is finite,
    /// invertible, and orients every voxel axis unambiguously.
    pub fn new(data: Array3<f32>, affine: Affine) -> Result<Self> {
        let axis_codes = orientation_codes(&affine)?;
        Ok(Volume {
            data,
            affine,
            axis_codes,
            lossy_downcast: false,
        })
    }

    /// Volume dimensions `(ni, nj, nk)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Voxel spacing in millimetres along each voxel axis.
    pub fn spacing(&self) -> [f64; 3] {
        [
            affine::column_norm(&self.affine, 0),
            affine::column_norm(&self.affine, 1),
            affine::column_norm(&self.affine, 2),
        ]
    }
}

/// Derives the anatomical direction of each voxel axis from an affine.
///
/// Each voxel axis is assigned the world axis with the largest absolute
/// component in the corresponding affine column, signed by that component.
/// Fails when the affine is singular or two voxel axes map to the same
/// world axis.
pub fn orientation_codes(affine: &Affine) -> Result<[AxisCode; 3]> {
    for row in affine.iter().take(3) {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidHeader("affine contains non-finite values".into()));
        }
    }
    if affine::det3(affine).abs() < 1e-12 {
        return Err(Error::SingularAffine);
    }
    let mut codes = [AxisCode::Left; 3];
    let mut claimed: [Option<usize>; 3] = [None; 3];
    for col in 0..3 {
        let mut best_axis = 0;
        let mut best_mag = -1.0f64;
        for row in 0..3 {
            let mag = affine[row][col].abs();
            if mag > best_mag {
                best_mag = mag;
                best_axis = row;
            }
        }
        if let Some(prev_col) = claimed[best_axis] {
            return Err(Error::AmbiguousOrientation(prev_col, col));
        }
        claimed[best_axis] = Some(col);
        codes[col] = AxisCode::from_parts(best_axis, affine[best_axis][col] > 0.0);
    }
    Ok(codes)
}

fn read_i16(bytes: &[u8], at: usize) -> i16 {
    i16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn read_i32(bytes: &[u8], at: usize) -> i32 {
    i32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

impl NiftiHeader {
    /// Parses and validates the fixed 348-byte header.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::HeaderTooShort(bytes.len()));
        }
        let magic = [bytes[offsets::MAGIC], bytes[offsets::MAGIC + 1], bytes[offsets::MAGIC + 2], bytes[offsets::MAGIC + 3]];
        if &magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let sizeof_hdr = read_i32(bytes, offsets::SIZEOF_HDR);
        if sizeof_hdr != HEADER_LEN as i32 {
            if sizeof_hdr.swap_bytes() == HEADER_LEN as i32 {
                return Err(Error::BigEndian);
            }
            return Err(Error::InvalidHeader(format!(
                "sizeof_hdr is {sizeof_hdr}, expected {HEADER_LEN}"
            )));
        }

        let datatype = Datatype::from_code(read_i16(bytes, offsets::DATATYPE))?;
        let bitpix = read_i16(bytes, offsets::BITPIX);
        if bitpix as usize != datatype.size() * 8 {
            return Err(Error::InvalidHeader(format!(
                "bitpix {bitpix} does not match datatype {}",
                datatype.name()
            )));
        }

        let ndim = read_i16(bytes, offsets::DIM);
        if !(1..=3).contains(&ndim) {
            return Err(Error::InvalidHeader(format!(
                "only 3-D single-frame images are supported (dim[0] = {ndim})"
            )));
        }
        let mut dims = [1usize; 3];
        for (i, d) in dims.iter_mut().enumerate().take(ndim as usize) {
            let raw = read_i16(bytes, offsets::DIM + 2 * (i + 1));
            if raw < 1 {
                return Err(Error::InvalidHeader(format!("dim[{}] = {raw} must be >= 1", i + 1)));
            }
            *d = raw as usize;
        }

        let mut pixdim = [1.0f64; 3];
        for (i, p) in pixdim.iter_mut().enumerate() {
            let raw = read_f32(bytes, offsets::PIXDIM + 4 * (i + 1));
            if !raw.is_finite() || raw <= 0.0 {
                return Err(Error::InvalidHeader(format!("pixdim[{}] = {raw} must be > 0", i + 1)));
            }
            *p = raw as f64;
        }

        let vox_offset_raw = read_f32(bytes, offsets::VOX_OFFSET);
        if !vox_offset_raw.is_finite()
            || vox_offset_raw < HEADER_LEN as f32
            || vox_offset_raw > 1e9
            || vox_offset_raw.fract() != 0.0
        {
            return Err(Error::InvalidHeader(format!("vox_offset {vox_offset_raw} is invalid")));
        }
        let vox_offset = vox_offset_raw as usize;

        // Non-finite slope/intercept occur in the wild; treat them as absent.
        let slope_raw = read_f32(bytes, offsets::SCL_SLOPE);
        let inter_raw = read_f32(bytes, offsets::SCL_INTER);
        let scl_slope = if slope_raw.is_finite() { slope_raw as f64 } else { 0.0 };
        let scl_inter = if inter_raw.is_finite() { inter_raw as f64 } else { 0.0 };

        let sform_code = read_i16(bytes, offsets::SFORM_CODE);
        if sform_code < 1 {
            return Err(Error::InvalidHeader(format!(
                "sform_code {sform_code}: an sform affine is required"
            )));
        }
        let mut affine = affine::IDENTITY;
        for (r, base) in [offsets::SROW_X, offsets::SROW_Y, offsets::SROW_Z].iter().enumerate() {
            for c in 0..4 {
                let v = read_f32(bytes, base + 4 * c);
                if !v.is_finite() {
                    return Err(Error::InvalidHeader(format!("srow[{r}][{c}] is not finite")));
                }
                affine[r][c] = v as f64;
            }
        }

        Ok(NiftiHeader {
            dims,
            pixdim,
            datatype,
            vox_offset,
            scl_slope,
            scl_inter,
            affine,
        })
    }

    fn payload_len(&self) -> Result<usize> {
        self.dims
            .iter()
            .try_fold(self.datatype.size(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidHeader("volume size overflows".into()))
    }
}

fn decode_payload(header: &NiftiHeader, payload: &[u8]) -> (Vec<f32>, bool) {
    let n = header.dims[0] * header.dims[1] * header.dims[2];
    let (slope, inter) = if header.scl_slope == 0.0 {
        (1.0f64, 0.0f64)
    } else {
        (header.scl_slope, header.scl_inter)
    };
    let identity_scale = slope == 1.0 && inter == 0.0;
    let mut lossy = false;
    let mut out = Vec::with_capacity(n);
    match header.datatype {
        Datatype::UInt8 => {
            out.extend(payload[..n].iter().map(|&b| (b as f64 * slope + inter) as f32));
        }
        Datatype::Int16 => {
            out.extend(payload[..2 * n].chunks_exact(2).map(|c| {
                let raw = i16::from_le_bytes([c[0], c[1]]) as f64;
                (raw * slope + inter) as f32
            }));
        }
        Datatype::Float32 => {
            out.extend(payload[..4 * n].chunks_exact(4).map(|c| {
                let raw = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if identity_scale {
                    raw
                } else {
                    (raw as f64 * slope + inter) as f32
                }
            }));
        }
        Datatype::Float64 => {
            lossy = true;
            out.extend(payload[..8 * n].chunks_exact(8).map(|c| {
                let raw = f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]);
                (raw * slope + inter) as f32
            }));
        }
    }
    (out, lossy)
}

fn volume_from_parts(header: &NiftiHeader, payload: &[u8]) -> Result<Volume> {
    let (values, lossy) = decode_payload(header, payload);
    // NIfTI payloads run with the first index fastest (Fortran order);
    // re-layout once so downstream slicing sees standard order.
    let (ni, nj, nk) = (header.dims[0], header.dims[1], header.dims[2]);
    let fortran = Array3::from_shape_vec((ni, nj, nk).f(), values)
        .expect("payload length was validated against dims");
    let data = fortran.as_standard_layout().to_owned();
    let mut vol = Volume::new(data, header.affine)?;
    vol.lossy_downcast = lossy;
    Ok(vol)
}

/// Parses a NIfTI-1 byte stream into a [`Volume`].
///
/// With `gzipped` set, `bytes` is treated as a gzip member and decompressed
/// incrementally with an explicit bound, so corrupt streams cannot trigger
/// unbounded allocation. Voxel values are rescaled by `scl_slope` /
/// `scl_inter` (a zero slope means no scaling).
pub fn read_nifti(bytes: &[u8], gzipped: bool) -> Result<Volume> {
    if !gzipped {
        let header = NiftiHeader::parse(bytes)?;
        let expected = header.payload_len()?;
        let available = bytes.len().saturating_sub(header.vox_offset);
        if available < expected {
            return Err(Error::TruncatedPayload {
                expected,
                actual: available,
                offset: header.vox_offset,
            });
        }
        return volume_from_parts(&header, &bytes[header.vox_offset..header.vox_offset + expected]);
    }

    let mut decoder = GzDecoder::new(bytes);
    let mut head = vec![0u8; HEADER_LEN];
    let got = read_fully(&mut decoder, &mut head)?;
    if got < HEADER_LEN {
        return Err(Error::HeaderTooShort(got));
    }
    let header = NiftiHeader::parse(&head)?;
    let expected = header.payload_len()?;
    let total = header
        .vox_offset
        .checked_add(expected)
        .ok_or_else(|| Error::InvalidHeader("volume size overflows".into()))?;
    // DEFLATE expands at most ~1032x; anything larger cannot be present.
    let inflate_bound = bytes.len().saturating_mul(1040).saturating_add(1 << 16);
    if total > inflate_bound {
        return Err(Error::TruncatedPayload {
            expected,
            actual: inflate_bound.saturating_sub(header.vox_offset),
            offset: header.vox_offset,
        });
    }
    let mut rest = vec![0u8; total - HEADER_LEN];
    let got = read_fully(&mut decoder, &mut rest)?;
    if got < rest.len() {
        return Err(Error::TruncatedPayload {
            expected,
            actual: (HEADER_LEN + got).saturating_sub(header.vox_offset),
            offset: header.vox_offset,
        });
    }
    let payload_start = header.vox_offset - HEADER_LEN;
    volume_from_parts(&header, &rest[payload_start..])
}

/// Reads into `buf` until full or EOF, returning the byte count.
fn read_fully<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(Error::Io(e)),
        }
    }
    Ok(filled)
}

fn put_i16(buf: &mut [u8], at: usize, v: i16) {
    buf[at..at + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_i32(buf: &mut [u8], at: usize, v: i32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut [u8], at: usize, v: f32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn encode_value(v: f32, datatype: Datatype, index: usize, out: &mut Vec<u8>) -> Result<()> {
    match datatype {
        Datatype::UInt8 => {
            let r = (v as f64).round();
            if !r.is_finite() || !(0.0..=255.0).contains(&r) {
                return Err(Error::ValueOutOfRange {
                    value: v as f64,
                    index,
                    datatype: datatype.name(),
                });
            }
            out.push(r as u8);
        }
        Datatype::Int16 => {
            let r = (v as f64).round();
            if !r.is_finite() || !(-32768.0..=32767.0).contains(&r) {
                return Err(Error::ValueOutOfRange {
                    value: v as f64,
                    index,
                    datatype: datatype.name(),
                });
            }
            out.extend_from_slice(&(r as i16).to_le_bytes());
        }
        Datatype::Float32 => out.extend_from_slice(&v.to_le_bytes()),
        Datatype::Float64 => out.extend_from_slice(&(v as f64).to_le_bytes()),
    }
    Ok(())
}

/// Serializes a volume as single-file NIfTI-1 bytes.
///
/// Values are written unscaled (`scl_slope = 1`); integer datatypes use
/// round-to-nearest and fail with [`Error::ValueOutOfRange`] when a value
/// cannot be represented.
pub fn write_nifti(vol: &Volume, datatype: Datatype) -> Result<Vec<u8>> {
    let (ni, nj, nk) = vol.dims();
    let n = ni * nj * nk;
    let mut buf = vec![0u8; DEFAULT_VOX_OFFSET];

    put_i32(&mut buf, offsets::SIZEOF_HDR, HEADER_LEN as i32);
    buf[38] = b'r'; // regular
    put_i16(&mut buf, offsets::DIM, 3);
    for (i, d) in [ni, nj, nk].iter().enumerate() {
        if *d > i16::MAX as usize {
            return Err(Error::InvalidConfig(format!("dimension {d} exceeds NIfTI-1 limits")));
        }
        put_i16(&mut buf, offsets::DIM + 2 * (i + 1), *d as i16);
    }
    for i in 4..8 {
        put_i16(&mut buf, offsets::DIM + 2 * i, 1);
    }
    put_i16(&mut buf, offsets::DATATYPE, datatype.code());
    put_i16(&mut buf, offsets::BITPIX, (datatype.size() * 8) as i16);
    put_f32(&mut buf, offsets::PIXDIM, 1.0);
    let spacing = vol.spacing();
    for (i, s) in spacing.iter().enumerate() {
        put_f32(&mut buf, offsets::PIXDIM + 4 * (i + 1), *s as f32);
    }
    for i in 4..8 {
        put_f32(&mut buf, offsets::PIXDIM + 4 * i, 1.0);
    }
    put_f32(&mut buf, offsets::VOX_OFFSET, DEFAULT_VOX_OFFSET as f32);
    put_f32(&mut buf, offsets::SCL_SLOPE, 1.0);
    put_f32(&mut buf, offsets::SCL_INTER, 0.0);
    buf[offsets::XYZT_UNITS] = UNITS_MM;
    let descrip = format!("multiview-mri v{}", env!("CARGO_PKG_VERSION"));
    let descrip_bytes = descrip.as_bytes();
    buf[offsets::DESCRIP..offsets::DESCRIP + descrip_bytes.len().min(79)]
        .copy_from_slice(&descrip_bytes[..descrip_bytes.len().min(79)]);
    put_i16(&mut buf, offsets::QFORM_CODE, 0);
    put_i16(&mut buf, offsets::SFORM_CODE, 1);
    for (r, base) in [offsets::SROW_X, offsets::SROW_Y, offsets::SROW_Z].iter().enumerate() {
        for c in 0..4 {
            put_f32(&mut buf, base + 4 * c, vol.affine[r][c] as f32);
        }
    }
    buf[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(MAGIC);
    // bytes 348..352 stay zero: no header extensions.

    buf.reserve(n * datatype.size());
    // Payload runs first index fastest.
    let mut index = 0;
    for k in 0..nk {
        for j in 0..nj {
            for i in 0..ni {
                encode_value(vol.data[[i, j, k]], datatype, index, &mut buf)?;
                index += 1;
            }
        }
    }
    Ok(buf)
}

/// Serializes a volume as gzip-compressed NIfTI-1 bytes.
pub fn write_nifti_gz(vol: &Volume, datatype: Datatype) -> Result<Vec<u8>> {
    use flate2::{write::GzEncoder, Compression};
    use std::io::Write;
    let raw = write_nifti(vol, datatype)?;
    let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
    enc.write_all(&raw)?;
    Ok(enc.finish()?)
}

/// True when the stream starts with the gzip magic bytes.
pub fn is_gzipped(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Reads a `.nii` or `.nii.gz` file, detecting compression from the content.
pub fn read_nifti_file(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path)?;
    read_nifti(&bytes, is_gzipped(&bytes))
}

/// Writes a volume to disk, gzip-compressing when the path ends in `.gz`.
pub fn write_nifti_file(path: &Path, vol: &Volume, datatype: Datatype) -> Result<()> {
    let gz = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let bytes = if gz {
        write_nifti_gz(vol, datatype)?
    } else {
        write_nifti(vol, datatype)?
    };
    std::fs::write(path, bytes)?;
    Ok(())
}
