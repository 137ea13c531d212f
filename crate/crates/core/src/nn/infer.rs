use rayon::prelude::*;

use super::model::SrcnnModel;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scalar::Scalar;

pub const DEFAULT_TILE: usize = 512;
pub const MIN_OVERLAP: usize = 16;

/// Tiling used by [`infer_tiled_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSpec {
    pub tile: usize,
    pub overlap: usize,
}

impl TileSpec {
    /// 512-pixel tiles with an overlap of at least 16 pixels and never less
    /// than the network's receptive radius.
    pub fn for_model<T>(model: &SrcnnModel<T>) -> Self {
        TileSpec { tile: DEFAULT_TILE, overlap: MIN_OVERLAP.max(model.arch.receptive_radius()) }
    }
}

/// Core windows `[start, end)` along one axis.
fn cores(len: usize, core: usize) -> Vec<(usize, usize)> {
    (0..len.div_ceil(core)).map(|i| (i * core, ((i + 1) * core).min(len))).collect()
}

pub fn infer_tiled<T: Scalar>(model: &SrcnnModel<T>, input: &Raster) -> Result<Raster> {
    infer_tiled_with(model, input, TileSpec::for_model(model))
}

/// Runs the network tile by tile. Each tile carries `overlap` pixels of
/// context on every side that is not an image border; only its core is
/// kept. Invalid input pixels are zeroed before inference and stay invalid
/// in the output.
pub fn infer_tiled_with<T: Scalar>(model: &SrcnnModel<T>, input: &Raster, spec: TileSpec) -> Result<Raster> {
    if input.n_bands() != model.arch.in_channels {
        return Err(Error::Shape(format!(
            "input has {} bands, model expects {}",
            input.n_bands(),
            model.arch.in_channels
        )));
    }
    if spec.tile <= 2 * spec.overlap {
        return Err(Error::Config(format!("tile {} leaves no core with overlap {}", spec.tile, spec.overlap)));
    }
    let x = Tensor::<T>::from_raster(input);
    let (h, w) = (x.height, x.width);
    let out = if h <= spec.tile && w <= spec.tile {
        model.forward(&x)?
    } else {
        let core = spec.tile - 2 * spec.overlap;
        let ov = spec.overlap;
        let jobs: Vec<((usize, usize), (usize, usize))> =
            cores(h, core).into_iter().flat_map(|r| cores(w, core).into_iter().map(move |c| (r, c))).collect();
        let pieces: Vec<Tensor<T>> = jobs
            .par_iter()
            .map(|&((r0, r1), (c0, c1))| {
                let (wy0, wy1) = (r0.saturating_sub(ov), (r1 + ov).min(h));
                let (wx0, wx1) = (c0.saturating_sub(ov), (c1 + ov).min(w));
                let tile = x.crop(wy0, wx0, wy1 - wy0, wx1 - wx0);
                let y = model.forward(&tile)?;
                Ok(y.crop(r0 - wy0, c0 - wx0, r1 - r0, c1 - c0))
            })
            .collect::<Result<_>>()?;
        let mut out = Tensor::zeros(model.arch.out_channels, h, w);
        for (&((r0, r1), (c0, c1)), piece) in jobs.iter().zip(&pieces) {
            let pw = c1 - c0;
            for c in 0..out.channels {
                for y in r0..r1 {
                    let src = &piece.plane(c)[(y - r0) * pw..(y - r0 + 1) * pw];
                    out.plane_mut(c)[y * w + c0..y * w + c1].copy_from_slice(src);
                }
            }
        }
        out
    };
    let names: Vec<String> = if model.meta.target_bands.len() == model.arch.out_channels {
        model.meta.target_bands.clone()
    } else {
        (0..model.arch.out_channels).map(|c| format!("sr{c}")).collect()
    };
    out.to_raster(*input.grid(), &names, Some(input.mask().to_vec()))
}
