use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

pub const DEFAULT_QUADRAT_SIDE: f64 = 0.5;

/// A square field plot centered at `(x_m, y_m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadrat {
    pub id: String,
    pub x_m: f64,
    pub y_m: f64,
    pub side_m: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratSample {
    pub id: String,
    pub x_m: f64,
    pub y_m: f64,
    pub side_m: f64,
    pub target: f64,
    /// Mean reflectance per band.
    pub features: Vec<f64>,
}

/// Samples sharing one feature schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub feature_names: Vec<String>,
    pub samples: Vec<QuadratSample>,
}

impl SampleSet {
    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if s.features.len() != self.feature_names.len() {
                return Err(Error::Schema(format!(
                    "sample '{}' has {} features, expected {}",
                    s.id,
                    s.features.len(),
                    self.feature_names.len()
                )));
            }
            if !(s.side_m > 0.0) {
                return Err(Error::Validation(format!("sample '{}' has side {}", s.id, s.side_m)));
            }
            if s.features.iter().any(|v| !v.is_finite()) || !s.target.is_finite() {
                return Err(Error::Validation(format!("sample '{}' has a non-finite value", s.id)));
            }
        }
        Ok(())
    }

    /// The same samples restricted to the named feature columns.
    pub fn select(&self, names: &[&str]) -> Result<SampleSet> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| Error::Schema(format!("no feature column '{n}'")))
            })
            .collect::<Result<_>>()?;
        Ok(SampleSet {
            feature_names: names.iter().map(|s| s.to_string()).collect(),
            samples: self
                .samples
                .iter()
                .map(|s| QuadratSample { features: idx.iter().map(|&i| s.features[i]).collect(), ..s.clone() })
                .collect(),
        })
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.features.clone()).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.target).collect()
    }

    /// CSV with columns `id,x_m,y_m,side_m,target,<feature columns>`.
    pub fn to_csv_writer(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id", "x_m", "y_m", "side_m", "target"];
        header.extend(self.feature_names.iter().map(|s| s.as_str()));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![s.id.clone(), fmt(s.x_m), fmt(s.y_m), fmt(s.side_m), fmt(s.target)];
            rec.extend(s.features.iter().map(|&v| fmt(v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_csv_writer(std::fs::File::create(path)?)
    }

    pub fn from_csv_reader(input: impl Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let fixed = ["id", "x_m", "y_m", "side_m", "target"];
        if header.len() < fixed.len() || fixed.iter().zip(header.iter()).any(|(a, b)| *a != b.trim()) {
            return Err(Error::Schema(format!("samples CSV must start with {}", fixed.join(","))));
        }
        let feature_names: Vec<String> = header.iter().skip(fixed.len()).map(|s| s.trim().to_string()).collect();
        let mut samples = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Schema(format!("row {} has {} fields", line + 1, rec.len())));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Schema(format!("row {}: column '{}' is not a number", line + 1, &header[i])))
            };
            samples.push(QuadratSample {
                id: rec[0].to_string(),
                x_m: num(1)?,
                y_m: num(2)?,
                side_m: num(3)?,
                target: num(4)?,
                features: (fixed.len()..rec.len()).map(num).collect::<Result<_>>()?,
            });
        }
        let set = SampleSet { feature_names, samples };
        set.validate()?;
        Ok(set)
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Pixel index range `[lo, hi)` whose centers `origin + (i + 0.5)·step`
/// fall in `[a, b)`.
fn center_range(a: f64, b: f64, origin: f64, step: f64, n: usize) -> (usize, usize) {
    let lo = ((a - origin) / step - 0.5).ceil().max(0.0);
    let hi = ((b - origin) / step - 0.5).ceil().max(0.0);
    ((lo as usize).min(n), (hi as usize).min(n))
}

/// Per-band mean over valid pixels whose centers lie in the half-open square
/// `[x − s/2, x + s/2) × [y − s/2, y + s/2)`.
pub fn extract_quadrat_features(r: &Raster, quadrats: &[Quadrat]) -> Result<SampleSet> {
    let g = r.grid();
    let mut samples = Vec::with_capacity(quadrats.len());
    for q in quadrats {
        if !(q.side_m > 0.0) || !q.x_m.is_finite() || !q.y_m.is_finite() {
            return Err(Error::Validation(format!("quadrat '{}' has invalid geometry", q.id)));
        }
        let h = q.side_m / 2.0;
        let (c0, c1) = center_range(q.x_m - h, q.x_m + h, g.origin_x, g.pixel_w, g.width);
        // Rows run downward: center y = origin_y − (row + 0.5)·pixel_h.
        let (r0, r1) = {
            let lo = ((g.origin_y - (q.y_m + h)) / g.pixel_h - 0.5).floor() + 1.0;
            let hi = ((g.origin_y - (q.y_m - h)) / g.pixel_h - 0.5).floor() + 1.0;
            ((lo.max(0.0) as usize).min(g.height), (hi.max(0.0) as usize).min(g.height))
        };
        let mut sums = vec![0.0f64; r.n_bands()];
        let mut n = 0usize;
        for row in r0..r1 {
            for col in c0..c1 {
                if !r.is_valid(col, row) {
                    continue;
                }
                n += 1;
                for (b, s) in sums.iter_mut().enumerate() {
                    *s += r.get(b, col, row) as f64;
                }
            }
        }
        if n == 0 {
            return Err(Error::Coverage(format!("quadrat '{}' contains no valid pixel", q.id)));
        }
        samples.push(QuadratSample {
            id: q.id.clone(),
            x_m: q.x_m,
            y_m: q.y_m,
            side_m: q.side_m,
            target: q.target,
            features: sums.into_iter().map(|s| s / n as f64).collect(),
        });
    }
    Ok(SampleSet { feature_names: r.band_names().iter().map(|s| s.to_string()).collect(), samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{Band, GeoGrid};

    fn grid_raster() -> Raster {
        let g = GeoGrid::new(100.0, 200.0, 0.125, 0.125, 16, 16).unwrap();
        let data = (0..256).map(|i| i as f32).collect();
        Raster::new(g, vec![Band::new("v", data)], None).unwrap()
    }

    #[test]
    fn corner_aligned_quadrat_takes_sixteen_pixels() {
        let r = grid_raster();
        // Square spanning columns 4..8 and rows 2..6.
        let q = Quadrat { id: "q".into(), x_m: 100.0 + 0.75, y_m: 200.0 - 0.5, side_m: 0.5, target: 1.0 };
        let s = extract_quadrat_features(&r, &[q]).unwrap();
        let mut expect = 0.0;
        for row in 2..6 {
            for col in 4..8 {
                expect += (row * 16 + col) as f64;
            }
        }
        assert!((s.samples[0].features[0] - expect / 16.0).abs() < 1e-9);
    }

    #[test]
    fn outside_quadrat_is_coverage_error() {
        let r = grid_raster();
        let q = Quadrat { id: "far".into(), x_m: 0.0, y_m: 0.0, side_m: 0.5, target: 1.0 };
        match extract_quadrat_features(&r, &[q]) {
            Err(Error::Coverage(m)) => assert!(m.contains("far")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let set = SampleSet {
            feature_names: vec!["B2".into(), "B8".into()],
            samples: vec![QuadratSample {
                id: "a".into(),
                x_m: 1.5,
                y_m: -2.25,
                side_m: 0.5,
                target: 3.1,
                features: vec![0.1, 0.45],
            }],
        };
        let mut buf = Vec::new();
        set.to_csv_writer(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("id,x_m,y_m,side_m,target,B2,B8"));
        assert_eq!(SampleSet::from_csv_reader(&buf[..]).unwrap(), set);
        assert!(SampleSet::from_csv_reader(&b"id,x,y\n"[..]).is_err());
    }
}
