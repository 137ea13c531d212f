use proptest::prelude::*;
use skyfuse::raster::{block_mean, read_bsf, read_bsf_bytes, upsample_bicubic, write_bsf, write_bsf_bytes};
use skyfuse::{Band, Error, GeoGrid, Raster};

fn arb_raster() -> impl Strategy<Value = Raster> {
    (1usize..10, 1usize..10, 1usize..4, any::<bool>()).prop_flat_map(|(w, h, nb, masked)| {
        let n = w * h;
        (
            prop::collection::vec(prop::collection::vec(-1e3f32..1e3, n), nb),
            prop::collection::vec(any::<bool>(), n),
            prop::option::of(300.0f64..1100.0),
            -1e6f64..1e6,
            0.01f64..50.0,
        )
            .prop_map(move |(planes, mask, wl, origin, px)| {
                let bands = planes
                    .into_iter()
                    .enumerate()
                    .map(|(i, data)| Band { name: format!("band{i}"), wavelength_nm: wl.map(|v| v + i as f64), data })
                    .collect();
                let grid = GeoGrid::new(origin, -origin, px, px * 1.5, w, h).unwrap();
                Raster::new(grid, bands, masked.then_some(mask)).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bsf_round_trip_is_bit_exact(r in arb_raster()) {
        let bytes = write_bsf_bytes(&r).unwrap();
        let back = read_bsf_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &r);
        prop_assert_eq!(write_bsf_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn every_truncation_is_an_error(r in arb_raster(), frac in 0.0f64..1.0) {
        let bytes = write_bsf_bytes(&r).unwrap();
        let cut = (frac * bytes.len() as f64) as usize;
        prop_assert!(read_bsf_bytes(&bytes[..cut]).is_err());
    }

    #[test]
    fn block_mean_matches_loop_oracle(
        (f, cw, ch) in (1usize..4, 1usize..5, 1usize..5),
        seed in any::<u64>(),
    ) {
        let (w, h) = (cw * f, ch * f);
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let data: Vec<f32> = (0..w * h).map(|_| (next() % 1000) as f32 / 1000.0).collect();
        let mask: Vec<bool> = (0..w * h).map(|_| next() % 4 != 0).collect();
        let r = Raster::new(GeoGrid::pixels(w, h).unwrap(), vec![Band::new("a", data.clone())], Some(mask.clone()))
            .unwrap();
        let m = block_mean(&r, f).unwrap();
        for j in 0..ch {
            for i in 0..cw {
                let (mut sum, mut n) = (0.0f64, 0usize);
                for y in j * f..(j + 1) * f {
                    for x in i * f..(i + 1) * f {
                        if mask[y * w + x] {
                            sum += data[y * w + x] as f64;
                            n += 1;
                        }
                    }
                }
                let valid = n > 0 && 2 * n >= f * f;
                prop_assert_eq!(m.is_valid(i, j), valid);
                if valid {
                    prop_assert!((m.get(0, i, j) as f64 - sum / n as f64).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn file_round_trip_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let g = GeoGrid::new(10.0, 20.0, 0.5, 0.5, 3, 2).unwrap();
    let r =
        Raster::new(g, vec![Band::new("x", vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).with_wavelength(665.0)], None).unwrap();
    let path = dir.path().join("r.bsf");
    write_bsf(&r, &path).unwrap();
    assert_eq!(read_bsf(&path).unwrap(), r);
    assert!(matches!(read_bsf(dir.path().join("absent.bsf")), Err(Error::Io(_))));
}

#[test]
fn bicubic_reproduces_linear_ramps_away_from_edges() {
    let (w, h, f) = (12, 9, 4);
    let data: Vec<f32> = (0..w * h).map(|i| 0.01 * (i % w) as f32 + 0.03 * (i / w) as f32).collect();
    let r = Raster::new(GeoGrid::pixels(w, h).unwrap(), vec![Band::new("a", data)], None).unwrap();
    let u = upsample_bicubic(&r, f).unwrap();
    assert_eq!((u.width(), u.height()), (w * f, h * f));
    assert_eq!(u.grid().pixel_w, 0.25);
    // Source coordinate of output pixel i is (i + 0.5) / f - 0.5.
    let src = |i: usize| (i as f64 + 0.5) / f as f64 - 0.5;
    let interior = |i: usize, n: usize| {
        let base = src(i).floor();
        base >= 1.0 && base + 2.0 <= (n - 1) as f64
    };
    let mut checked = 0;
    for y in (0..h * f).filter(|&y| interior(y, h)) {
        for x in (0..w * f).filter(|&x| interior(x, w)) {
            let expect = 0.01 * src(x) + 0.03 * src(y);
            assert!((u.get(0, x, y) as f64 - expect).abs() < 1e-6, "({x}, {y})");
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn block_mean_undoes_bicubic_on_constants() {
    let r = Raster::filled(GeoGrid::pixels(5, 4).unwrap(), 2, 0.37).unwrap();
    let back = block_mean(&upsample_bicubic(&r, 3).unwrap(), 3).unwrap();
    assert_eq!(back.grid(), r.grid());
    for b in back.bands() {
        assert!(b.data.iter().all(|v| (v - 0.37).abs() < 1e-6));
    }
}
