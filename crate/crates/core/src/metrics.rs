//! Image fidelity metrics: RMSE, MAE and PSNR on a unit reflectance scale,
//! pooled over all bands of the jointly valid pixels.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scalar::Scalar;

/// Peak value used by PSNR.
pub const PSNR_PEAK: f64 = 1.0;
/// PSNR reported when the RMSE is below [`RMSE_FLOOR`].
pub const PSNR_CAP: f64 = 240.0;
pub const RMSE_FLOOR: f64 = 1e-12;

/// `20·log10(PEAK / rmse)`, or the cap with `true` when `rmse < 1e-12`.
pub fn psnr_from_rmse<T: Scalar>(rmse: T) -> (T, bool) {
    if rmse.as_f64() < RMSE_FLOOR {
        (T::lit(PSNR_CAP), true)
    } else {
        (T::lit(20.0) * (T::lit(PSNR_PEAK) / rmse).log10(), false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMetrics {
    pub band: String,
    pub rmse: f64,
    pub mae: f64,
    pub psnr: f64,
    pub psnr_capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    pub psnr: f64,
    pub psnr_capped: bool,
    /// Jointly valid pixels.
    pub n_valid: usize,
    pub n_bands: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_band: Option<Vec<BandMetrics>>,
}

pub fn evaluate(pred: &Raster, truth: &Raster) -> Result<MetricsReport> {
    evaluate_with(pred, truth, false)
}

/// Statistics over pixels valid in both rasters, accumulated in f64.
pub fn evaluate_with(pred: &Raster, truth: &Raster, per_band: bool) -> Result<MetricsReport> {
    if !pred.grid().matches(truth.grid()) {
        return Err(Error::Alignment(format!(
            "prediction grid {:?} differs from truth grid {:?}",
            pred.grid(),
            truth.grid()
        )));
    }
    if pred.n_bands() != truth.n_bands() {
        return Err(Error::Alignment(format!(
            "prediction has {} bands, truth has {}",
            pred.n_bands(),
            truth.n_bands()
        )));
    }
    let joint: Vec<bool> = pred.mask().iter().zip(truth.mask()).map(|(&a, &b)| a && b).collect();
    let n_valid = joint.iter().filter(|&&v| v).count();
    if n_valid == 0 || pred.n_bands() == 0 {
        return Err(Error::Coverage("no jointly valid pixels".into()));
    }
    let sums: Vec<(f64, f64)> = pred
        .bands()
        .iter()
        .zip(truth.bands())
        .map(|(p, t)| {
            let mut se = 0.0;
            let mut ae = 0.0;
            for ((&a, &b), &ok) in p.data.iter().zip(&t.data).zip(&joint) {
                if ok {
                    let d = a as f64 - b as f64;
                    se += d * d;
                    ae += d.abs();
                }
            }
            (se, ae)
        })
        .collect();
    let total = (n_valid * pred.n_bands()) as f64;
    let se: f64 = sums.iter().map(|s| s.0).sum();
    let ae: f64 = sums.iter().map(|s| s.1).sum();
    let rmse = (se / total).sqrt();
    let (psnr, psnr_capped) = psnr_from_rmse(rmse);
    let per_band = per_band.then(|| {
        sums.iter()
            .zip(pred.bands())
            .map(|(&(se, ae), b)| {
                let rmse = (se / n_valid as f64).sqrt();
                let (psnr, capped) = psnr_from_rmse(rmse);
                BandMetrics { band: b.name.clone(), rmse, mae: ae / n_valid as f64, psnr, psnr_capped: capped }
            })
            .collect()
    });
    Ok(MetricsReport { rmse, mae: ae / total, psnr, psnr_capped, n_valid, n_bands: pred.n_bands(), per_band })
}

/// A report tagged with the image it describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub site: String,
    pub date: String,
    #[serde(flatten)]
    pub report: MetricsReport,
}

/// One labelled prediction/truth pair for [`evaluate_many`].
pub struct EvalItem<'a> {
    pub site: String,
    pub date: String,
    pub pred: &'a Raster,
    pub truth: &'a Raster,
}

/// Evaluates images in parallel; results keep the input order.
pub fn evaluate_many(items: &[EvalItem<'_>], per_band: bool) -> Result<Vec<ImageMetrics>> {
    items
        .par_iter()
        .map(|it| {
            Ok(ImageMetrics {
                site: it.site.clone(),
                date: it.date.clone(),
                report: evaluate_with(it.pred, it.truth, per_band)?,
            })
        })
        .collect()
}

/// CSV with columns `site,date,rmse,mae,psnr,n_valid`.
pub fn write_metrics_csv(rows: &[ImageMetrics], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["site", "date", "rmse", "mae", "psnr", "n_valid"])?;
    for r in rows {
        w.write_record([
            r.site.clone(),
            r.date.clone(),
            format!("{}", r.report.rmse),
            format!("{}", r.report.mae),
            format!("{}", r.report.psnr),
            r.report.n_valid.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{Band, GeoGrid};

    fn r(data: Vec<f32>, mask: Option<Vec<bool>>) -> Raster {
        let g = GeoGrid::pixels(data.len(), 1).unwrap();
        Raster::new(g, vec![Band::new("a", data)], mask).unwrap()
    }

    #[test]
    fn identity_is_capped() {
        let a = r(vec![0.1, 0.2, 0.3], None);
        let m = evaluate(&a, &a).unwrap();
        assert_eq!((m.rmse, m.mae, m.psnr, m.psnr_capped), (0.0, 0.0, PSNR_CAP, true));
    }

    #[test]
    fn psnr_of_known_rmse() {
        let (p, capped) = psnr_from_rmse(0.1f64);
        assert!((p - 20.0).abs() < 1e-12 && !capped);
        let (p32, _) = psnr_from_rmse(0.01f32);
        assert!((p32 - 40.0).abs() < 1e-4);
    }

    #[test]
    fn masked_pixels_are_ignored() {
        let a = r(vec![0.5, 0.5, 0.9], Some(vec![true, true, false]));
        let b = r(vec![0.4, 0.6, 0.0], None);
        let m = evaluate(&a, &b).unwrap();
        assert_eq!(m.n_valid, 2);
        assert!((m.rmse - 0.1).abs() < 1e-6 && (m.mae - 0.1).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        let a = r(vec![0.5], Some(vec![false]));
        assert!(matches!(evaluate(&a, &a), Err(Error::Coverage(_))));
        let b = r(vec![0.5, 0.1], None);
        assert!(matches!(evaluate(&a, &b), Err(Error::Alignment(_))));
    }
}
