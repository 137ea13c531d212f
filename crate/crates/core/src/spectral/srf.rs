use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampled response curve of one target sensor band.
#[derive(Debug, Clone, PartialEq)]
pub struct SrfBand {
    pub name: String,
    pub wavelengths_nm: Vec<f64>,
    pub responses: Vec<f64>,
}

impl SrfBand {
    pub fn new(name: impl Into<String>, wavelengths_nm: Vec<f64>, responses: Vec<f64>) -> Result<Self> {
        let band = SrfBand { name: name.into(), wavelengths_nm, responses };
        band.validate()?;
        Ok(band)
    }

    fn validate(&self) -> Result<()> {
        if self.wavelengths_nm.len() != self.responses.len() {
            return Err(Error::Validation(format!("band {}: length mismatch", self.name)));
        }
        if self.wavelengths_nm.len() < 2 {
            return Err(Error::Validation(format!("band {}: needs at least 2 samples", self.name)));
        }
        if self.wavelengths_nm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation(format!("band {}: wavelengths must be strictly increasing", self.name)));
        }
        if self.responses.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Validation(format!("band {}: responses must lie in [0, 1]", self.name)));
        }
        Ok(())
    }

    /// Linear interpolation; zero outside the sampled range.
    pub fn response_at(&self, nm: f64) -> f64 {
        let wl = &self.wavelengths_nm;
        if nm < wl[0] || nm > wl[wl.len() - 1] {
            return 0.0;
        }
        let i = wl.partition_point(|&w| w <= nm);
        if i == 0 {
            return self.responses[0];
        }
        if i == wl.len() {
            return self.responses[wl.len() - 1];
        }
        let t = (nm - wl[i - 1]) / (wl[i] - wl[i - 1]);
        self.responses[i - 1] + t * (self.responses[i] - self.responses[i - 1])
    }

    /// Integer-nanometer grid covering the sampled range.
    pub fn nm_grid(&self) -> Vec<f64> {
        let lo = self.wavelengths_nm[0].ceil() as i64;
        let hi = self.wavelengths_nm[self.wavelengths_nm.len() - 1].floor() as i64;
        (lo..=hi).map(|v| v as f64).collect()
    }
}

/// Normalized spectral response functions of the target sensor bands.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpectralResponseTable {
    pub bands: Vec<SrfBand>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SrfRow {
    band: String,
    wavelength_nm: f64,
    response: f64,
}

/// Nominal center wavelength and bandwidth (nm) of the Sentinel-2A VNIR bands.
pub const SENTINEL2_VNIR: [(&str, f64, f64); 8] = [
    ("B2", 492.7, 65.0),
    ("B3", 559.8, 35.0),
    ("B4", 664.6, 30.0),
    ("B5", 704.1, 14.0),
    ("B6", 740.5, 14.0),
    ("B7", 782.8, 19.0),
    ("B8", 832.8, 105.0),
    ("B8A", 864.7, 21.0),
];

impl SpectralResponseTable {
    pub fn new(bands: Vec<SrfBand>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::Validation("response table has no bands".into()));
        }
        for b in &bands {
            b.validate()?;
        }
        Ok(SpectralResponseTable { bands })
    }

    pub fn band(&self, name: &str) -> Option<&SrfBand> {
        self.bands.iter().find(|b| b.name == name)
    }

    /// Flat-top approximation of the Sentinel-2 VNIR responses: super-Gaussian
    /// curves of order 6 whose half-maximum width equals the nominal bandwidth,
    /// sampled every nm over 390–1010 nm. Stand-in for the measured tables.
    pub fn sentinel2_vnir_approx() -> Self {
        let grid: Vec<f64> = (390..=1010).map(|v| v as f64).collect();
        let bands = SENTINEL2_VNIR
            .iter()
            .map(|&(name, center, width)| {
                let responses = grid
                    .iter()
                    .map(|&nm| {
                        let u = (2.0 * (nm - center) / width).abs();
                        let r = (-std::f64::consts::LN_2 * u.powi(6)).exp();
                        if r < 1e-4 {
                            0.0
                        } else {
                            r
                        }
                    })
                    .collect();
                SrfBand { name: name.to_string(), wavelengths_nm: grid.clone(), responses }
            })
            .collect();
        SpectralResponseTable { bands }
    }

    /// Parses `band,wavelength_nm,response` rows, grouped by band in file order.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["band", "wavelength_nm", "response"] {
            return Err(Error::Schema(format!(
                "expected header band,wavelength_nm,response, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut bands: Vec<SrfBand> = Vec::new();
        for row in rdr.deserialize() {
            let row: SrfRow = row?;
            match bands.last_mut() {
                Some(b) if b.name == row.band => {
                    b.wavelengths_nm.push(row.wavelength_nm);
                    b.responses.push(row.response);
                }
                _ => {
                    if bands.iter().any(|b| b.name == row.band) {
                        return Err(Error::Schema(format!("rows of band {} are not contiguous", row.band)));
                    }
                    bands.push(SrfBand {
                        name: row.band,
                        wavelengths_nm: vec![row.wavelength_nm],
                        responses: vec![row.response],
                    });
                }
            }
        }
        Self::new(bands)
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn to_csv_writer(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for b in &self.bands {
            for (&wl, &r) in b.wavelengths_nm.iter().zip(&b.responses) {
                w.serialize(SrfRow { band: b.name.clone(), wavelength_nm: wl, response: r })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_csv_writer(std::fs::File::create(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let t = SpectralResponseTable::sentinel2_vnir_approx();
        let mut buf = Vec::new();
        t.to_csv_writer(&mut buf).unwrap();
        assert!(buf.starts_with(b"band,wavelength_nm,response\n"));
        let back = SpectralResponseTable::from_csv_reader(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn approx_table_peaks_and_half_width() {
        let t = SpectralResponseTable::sentinel2_vnir_approx();
        assert_eq!(t.bands.len(), 8);
        let b4 = t.band("B4").unwrap();
        // Sampled on whole nm, so only approximately at the peak and edges.
        assert!(b4.response_at(665.0) > 0.999);
        assert!((b4.response_at(664.6 + 15.0) - 0.5).abs() < 0.15);
        assert_eq!(b4.response_at(700.0), 0.0);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(SrfBand::new("x", vec![1.0, 1.0], vec![0.0, 1.0]).is_err());
        assert!(SrfBand::new("x", vec![1.0, 2.0], vec![0.0, 1.5]).is_err());
        assert!(SrfBand::new("x", vec![1.0], vec![0.0]).is_err());
        let csv = "band,wavelength_nm,response\nB2,400,0.1\nB3,500,0.2\nB2,401,0.1\n";
        assert!(matches!(SpectralResponseTable::from_csv_reader(csv.as_bytes()), Err(Error::Schema(_))));
        let csv = "band,wl,response\nB2,400,0.1\n";
        assert!(SpectralResponseTable::from_csv_reader(csv.as_bytes()).is_err());
    }

    #[test]
    fn interpolation() {
        let b = SrfBand::new("x", vec![10.0, 20.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(b.response_at(15.0), 0.5);
        assert_eq!(b.response_at(25.0), 0.0);
        assert_eq!(b.nm_grid().len(), 11);
    }
}
