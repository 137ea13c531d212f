use skyfuse::align::{register, register_with, score_shift, PixelShift, RegisterOptions, Search, ShiftScorer};
use skyfuse::raster::block_mean;
use skyfuse::synth::{default_weights, degrade, simulate_scene, SceneConfig};
use skyfuse::{Band, Error, GeoGrid, Raster};

fn scene(shift: [i64; 2]) -> SceneConfig {
    SceneConfig { seed: 5, width: 80, height: 72, scale: 8, shift, ..SceneConfig::default() }
}

/// Per-band OLS of coarse on block means with intercept, summed RSS. The
/// fine window of coarse pixel (i, j) is its footprint moved by `-shift`.
fn rss_oracle(fine: &Raster, coarse: &Raster, f: usize, shift: PixelShift, pixels: &[(usize, usize)]) -> f64 {
    let (fg, cg) = (fine.grid(), coarse.grid());
    let off_x = ((cg.origin_x - fg.origin_x) / fg.pixel_w).round() as i64;
    let off_y = ((fg.origin_y - cg.origin_y) / fg.pixel_h).round() as i64;
    let mut total = 0.0;
    for b in 0..coarse.n_bands() {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for &(i, j) in pixels {
            let c0 = off_x + (i * f) as i64 - shift.x;
            let r0 = off_y + (j * f) as i64 - shift.y;
            let mut s = 0.0;
            for r in r0..r0 + f as i64 {
                for c in c0..c0 + f as i64 {
                    s += fine.get(b, c as usize, r as usize) as f64;
                }
            }
            xs.push(s / (f * f) as f64);
            ys.push(coarse.get(b, i, j) as f64);
        }
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let gain = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        total += xs.iter().zip(&ys).map(|(x, y)| (y - my - gain * (x - mx)).powi(2)).sum::<f64>();
    }
    total
}

#[test]
fn scores_match_a_direct_regression() {
    let cfg = scene([0, 0]);
    let truth = simulate_scene(&cfg, 0, &default_weights(&cfg).unwrap()).unwrap();
    let coarse = degrade(&truth, &SceneConfig { shift: [3, -2], ..cfg.clone() }).unwrap();
    let scorer = ShiftScorer::new(&truth, &coarse).unwrap();
    for shift in [PixelShift::new(-3, 2), PixelShift::new(0, 0), PixelShift::new(4, -5)] {
        let pixels = scorer.covered(shift);
        let got = scorer.score_on(shift, &pixels).unwrap();
        let want = rss_oracle(&truth, &coarse, 8, shift, &pixels);
        assert!((got.score - want).abs() <= 1e-9 * want.max(1e-12), "{shift:?}: {} vs {want}", got.score);
        assert_eq!(score_shift(&truth, &coarse, shift).unwrap().score, scorer.score(shift).unwrap().score);
    }
}

#[test]
fn gain_and_offset_do_not_move_the_optimum() {
    let cfg = scene([5, 6]);
    let truth = simulate_scene(&cfg, 1, &default_weights(&cfg).unwrap()).unwrap();
    let coarse =
        degrade(&truth, &SceneConfig { gains: Some(vec![0.6; 8]), offsets: Some(vec![0.05; 8]), ..cfg.clone() })
            .unwrap();
    let est = register(&truth, &coarse).unwrap();
    assert_eq!(est.shift_px, PixelShift::new(-5, -6));
    assert!(est.score < 1e-8, "{}", est.score);
    for fit in &est.fits {
        assert!((fit.gains[0] - 0.6).abs() < 1e-3);
    }
}

#[test]
fn both_searches_agree_for_every_radius() {
    let cfg = scene([-7, 2]);
    let truth = simulate_scene(&cfg, 2, &default_weights(&cfg).unwrap()).unwrap();
    let coarse = degrade(&truth, &cfg).unwrap();
    for radius in [7, 8, 10, 12] {
        let a = register_with(&truth, &coarse, RegisterOptions { search: Search::CoarseToFine, radius: Some(radius) })
            .unwrap();
        let b = register_with(&truth, &coarse, RegisterOptions { search: Search::Exhaustive, radius: Some(radius) })
            .unwrap();
        assert_eq!(a.shift_px, b.shift_px, "radius {radius}");
        assert_eq!(a.shift_px, PixelShift::new(7, -2));
        assert!(a.evaluations() < b.evaluations());
        assert_eq!(b.evaluations(), ((2 * radius + 1) * (2 * radius + 1)) as usize);
    }
}

#[test]
fn too_little_overlap_is_a_coverage_error() {
    let fine = Raster::filled(GeoGrid::new(0.0, 4.0, 0.5, 0.5, 8, 8).unwrap(), 1, 0.5).unwrap();
    let coarse = block_mean(&fine, 4).unwrap();
    assert!(matches!(register(&fine, &coarse), Err(Error::Coverage(_))));
}

#[test]
fn incompatible_grids_are_geometry_errors() {
    let fine = Raster::filled(GeoGrid::new(0.0, 64.0, 1.0, 1.0, 64, 64).unwrap(), 1, 0.5).unwrap();
    let odd =
        Raster::new(GeoGrid::new(0.0, 64.0, 2.5, 2.5, 20, 20).unwrap(), vec![Band::new("a", vec![0.5; 400])], None)
            .unwrap();
    assert!(matches!(register(&fine, &odd), Err(Error::Geometry(_))));
    let offset =
        Raster::new(GeoGrid::new(0.3, 64.0, 4.0, 4.0, 8, 8).unwrap(), vec![Band::new("a", vec![0.5; 64])], None)
            .unwrap();
    assert!(matches!(register(&fine, &offset), Err(Error::Geometry(_))));
}
