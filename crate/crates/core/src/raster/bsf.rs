//! Band-Stack Format: `BSF1` magic, little-endian u32 header length, JSON
//! header, optional row-major validity bitmask (1 = valid, LSB first within
//! each byte), then band-planar little-endian `f32` planes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Band, GeoGrid, Raster};
use crate::error::{Error, Result};

pub const BSF_MAGIC: [u8; 4] = *b"BSF1";

#[derive(Debug, Serialize, Deserialize)]
struct BandEntry {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wavelength_nm: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    width: usize,
    height: usize,
    bands: Vec<BandEntry>,
    dtype: String,
    geotransform: [f64; 6],
    nodata_mask: bool,
}

pub fn write_bsf(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let bytes = write_bsf_bytes(r)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_bsf_bytes(r: &Raster) -> Result<Vec<u8>> {
    if r.n_bands() == 0 {
        return Err(Error::Validation("cannot write a raster with no bands".into()));
    }
    r.grid().validate()?;
    let has_mask = r.mask().iter().any(|&m| !m);
    let header = Header {
        width: r.width(),
        height: r.height(),
        bands: r.bands().iter().map(|b| BandEntry { name: b.name.clone(), wavelength_nm: b.wavelength_nm }).collect(),
        dtype: "f32".into(),
        geotransform: r.grid().geotransform(),
        nodata_mask: has_mask,
    };
    let json = serde_json::to_vec(&header)?;
    let n = r.grid().len();
    let mask_len = if has_mask { n.div_ceil(8) } else { 0 };
    let mut out = Vec::with_capacity(8 + json.len() + mask_len + 4 * n * r.n_bands());
    out.extend_from_slice(&BSF_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    if has_mask {
        let mut bits = vec![0u8; mask_len];
        for (i, &m) in r.mask().iter().enumerate() {
            if m {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bits);
    }
    for b in r.bands() {
        for v in &b.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_bsf(path: impl AsRef<Path>) -> Result<Raster> {
    let bytes = fs::read(path)?;
    read_bsf_bytes(&bytes)
}

pub fn read_bsf_bytes(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 4 {
        return Err(Error::Format { offset: bytes.len() as u64, msg: "truncated magic".into() });
    }
    if bytes[..4] != BSF_MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("bad magic {:02x?}", &bytes[..4]) });
    }
    if bytes.len() < 8 {
        return Err(Error::Format { offset: 4, msg: "truncated header length".into() });
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let hend = 8usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| Error::Format {
        offset: 4,
        msg: format!("header length {hlen} exceeds file size {}", bytes.len()),
    })?;
    let header: Header = serde_json::from_slice(&bytes[8..hend]).map_err(|e| Error::Format {
        // The header is written on one line, so the column is the byte offset.
        offset: 8 + e.column().saturating_sub(1) as u64,
        msg: format!("invalid header: {e}"),
    })?;
    if header.dtype != "f32" {
        return Err(Error::Format { offset: 8, msg: format!("unsupported dtype '{}'", header.dtype) });
    }
    let gt = header.geotransform;
    if gt[2] != 0.0 || gt[4] != 0.0 {
        return Err(Error::Format { offset: 8, msg: "rotated geotransforms are not supported".into() });
    }
    let grid = GeoGrid::new(gt[0], gt[3], gt[1], -gt[5], header.width, header.height)
        .map_err(|e| Error::Format { offset: 8, msg: e.to_string() })?;
    if header.bands.is_empty() {
        return Err(Error::Format { offset: 8, msg: "header lists no bands".into() });
    }
    let n = grid.len();
    let mask_len = if header.nodata_mask { n.div_ceil(8) } else { 0 };
    let plane = n.checked_mul(4).ok_or_else(|| Error::Corruption("raster dimensions overflow".into()))?;
    let expected = header
        .bands
        .len()
        .checked_mul(plane)
        .and_then(|p| p.checked_add(mask_len))
        .ok_or_else(|| Error::Corruption("raster dimensions overflow".into()))?;
    let payload = &bytes[hend..];
    if payload.len() != expected {
        return Err(Error::Corruption(format!(
            "payload is {} bytes, header implies {expected} ({} bands of {}x{}{})",
            payload.len(),
            header.bands.len(),
            header.width,
            header.height,
            if header.nodata_mask { " plus mask" } else { "" }
        )));
    }
    let mask = if header.nodata_mask {
        let bits = &payload[..mask_len];
        Some((0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect())
    } else {
        None
    };
    let planes = &payload[mask_len..];
    let bands = header
        .bands
        .into_iter()
        .enumerate()
        .map(|(bi, entry)| {
            let data = planes[bi * plane..(bi + 1) * plane]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Band { name: entry.name, wavelength_nm: entry.wavelength_nm, data }
        })
        .collect();
    Raster::new(grid, bands, mask)
}
