use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::score::{BandFit, PixelShift, ShiftScore, ShiftScorer, MIN_COVERED};
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Lattice stride of the first search pass, in fine pixels.
pub const COARSE_STRIDE: i64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Search {
    /// Stride-8 lattice, then stride 1 within ±8 of the lattice optimum.
    #[default]
    CoarseToFine,
    /// Every whole-pixel shift in range.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegisterOptions {
    pub search: Search,
    /// Search radius in fine pixels; defaults to one coarse pixel.
    pub radius: Option<i64>,
}

/// Result of a registration search.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftEstimate {
    pub shift_px: PixelShift,
    /// Shift in meters along the grid axes (x right, y down).
    pub shift_x: f64,
    pub shift_y: f64,
    pub score: f64,
    /// Every evaluated shift with its score, sorted by shift.
    pub score_grid: Vec<(PixelShift, f64)>,
    pub fits: Vec<BandFit>,
    pub n_pixels: usize,
}

impl ShiftEstimate {
    pub fn evaluations(&self) -> usize {
        self.score_grid.len()
    }

    pub fn report(&self) -> RegistrationReport {
        RegistrationReport {
            shift_m: [self.shift_x, self.shift_y],
            shift_px: [self.shift_px.x, self.shift_px.y],
            score: self.score,
            gains: self.fits.iter().map(|f| f.gains.clone()).collect(),
            offsets: self.fits.iter().map(|f| f.offset).collect(),
            evaluations: self.evaluations(),
        }
    }
}

/// JSON registration report; `gains` holds one row of regressor gains per
/// coarse band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub shift_m: [f64; 2],
    pub shift_px: [i64; 2],
    pub score: f64,
    pub gains: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    pub evaluations: usize,
}

/// Strict ordering used for the argmin: score, then distance from the
/// origin, then x, then y.
fn better(a: &(PixelShift, f64), b: &(PixelShift, f64)) -> bool {
    match a.1.total_cmp(&b.1) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => (a.0.norm2(), a.0.x, a.0.y) < (b.0.norm2(), b.0.x, b.0.y),
    }
}

fn argmin(evals: &BTreeMap<PixelShift, f64>) -> (PixelShift, f64) {
    let mut it = evals.iter().map(|(&s, &v)| (s, v));
    let mut best = it.next().expect("no evaluations");
    for e in it {
        if better(&e, &best) {
            best = e;
        }
    }
    best
}

/// Registers with the default coarse-to-fine search over ±1 coarse pixel.
pub fn register(fine: &Raster, coarse: &Raster) -> Result<ShiftEstimate> {
    register_with(fine, coarse, RegisterOptions::default())
}

pub fn register_with(fine: &Raster, coarse: &Raster, opts: RegisterOptions) -> Result<ShiftEstimate> {
    let scorer = ShiftScorer::new(fine, coarse)?;
    let radius = opts.radius.unwrap_or(scorer.factor() as i64);
    if radius < 0 {
        return Err(Error::Validation("search radius must be nonnegative".into()));
    }
    // All candidates are scored on the same pixels so their RSS is comparable.
    let pixels = scorer.covered_with_margin(PixelShift::ZERO, radius);
    if pixels.len() < MIN_COVERED {
        return Err(Error::Coverage(format!(
            "only {} coarse pixels stay covered over the ±{radius} px search; need {MIN_COVERED}",
            pixels.len()
        )));
    }

    let mut evals: BTreeMap<PixelShift, f64> = BTreeMap::new();
    let run = |evals: &mut BTreeMap<PixelShift, f64>, shifts: Vec<PixelShift>| -> Result<()> {
        let todo: Vec<PixelShift> = shifts.into_iter().filter(|s| !evals.contains_key(s)).collect();
        let scored: Vec<Result<ShiftScore>> = todo.par_iter().map(|&s| scorer.score_on(s, &pixels)).collect();
        for r in scored {
            let r = r?;
            evals.insert(r.shift, r.score);
        }
        Ok(())
    };

    match opts.search {
        Search::Exhaustive => {
            run(&mut evals, square(0, 0, radius, radius, 1))?;
        }
        Search::CoarseToFine => {
            let mut lattice: Vec<i64> = (-radius..=radius).step_by(COARSE_STRIDE as usize).collect();
            if *lattice.last().unwrap() != radius {
                lattice.push(radius);
            }
            let pass1: Vec<PixelShift> =
                lattice.iter().flat_map(|&y| lattice.iter().map(move |&x| PixelShift::new(x, y))).collect();
            run(&mut evals, pass1)?;
            let (c, _) = argmin(&evals);
            run(&mut evals, square(c.x, c.y, COARSE_STRIDE, radius, 1))?;
        }
    }

    let (best, score) = argmin(&evals);
    let detail = scorer.score_on(best, &pixels)?;
    let cg = coarse.grid();
    let px_w = cg.pixel_w / scorer.factor() as f64;
    let px_h = cg.pixel_h / scorer.factor() as f64;
    Ok(ShiftEstimate {
        shift_px: best,
        shift_x: best.x as f64 * px_w,
        shift_y: best.y as f64 * px_h,
        score,
        score_grid: evals.into_iter().collect(),
        fits: detail.fits,
        n_pixels: detail.n_pixels,
    })
}

/// Shifts within `±half` of (cx, cy), clipped to `±limit`.
fn square(cx: i64, cy: i64, half: i64, limit: i64, stride: usize) -> Vec<PixelShift> {
    let xs: Vec<i64> = ((cx - half).max(-limit)..=(cx + half).min(limit)).step_by(stride).collect();
    let ys: Vec<i64> = ((cy - half).max(-limit)..=(cy + half).min(limit)).step_by(stride).collect();
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| PixelShift::new(x, y))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_break_prefers_small_shifts() {
        let mut e = BTreeMap::new();
        e.insert(PixelShift::new(1, 0), 1.0);
        e.insert(PixelShift::new(0, -1), 1.0);
        e.insert(PixelShift::new(-1, 0), 1.0);
        e.insert(PixelShift::new(2, 2), 1.0);
        assert_eq!(argmin(&e).0, PixelShift::new(-1, 0));
        e.insert(PixelShift::new(0, 0), 1.0);
        assert_eq!(argmin(&e).0, PixelShift::ZERO);
    }

    #[test]
    fn square_is_clipped() {
        let s = square(7, 0, 8, 8, 1);
        assert_eq!(s.iter().map(|p| p.x).max(), Some(8));
        assert_eq!(s.iter().map(|p| p.x).min(), Some(-1));
        assert_eq!(s.len(), 10 * 17);
    }
}
