//! Property tests for the invariants each module documents.

use fishrec::dtree::{gini, Node, TreeParams};
use fishrec::imageio::{
    decode_image, encode_bmp, encode_ppm, parse_manifest, to_indexed, write_manifest,
};
use fishrec::mlp::{momentum_step, TrainingSample};
use fishrec::preprocess::median_filter;
use fishrec::segment::{divide_segments, extract_mask, group_by_color, trace_contour, FishMask};
use fishrec::{ManifestEntry, Mlp, Rgb, RgbImage, Split, TrainConfig, Tree};
use proptest::prelude::*;

fn rgb() -> impl Strategy<Value = Rgb> {
    any::<[u8; 3]>().prop_map(|[r, g, b]| Rgb::new(r, g, b))
}

fn image(max: usize) -> impl Strategy<Value = RgbImage> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        prop::collection::vec(rgb(), w * h).prop_map(move |px| RgbImage::new(w, h, px).unwrap())
    })
}

/// A blob mask on a small canvas plus a few random colors over it.
fn blob_scene() -> impl Strategy<Value = (RgbImage, Rgb)> {
    (
        4usize..24,
        4usize..24,
        prop::collection::vec(any::<bool>(), 24 * 24),
        prop::collection::vec(0u8..4, 24 * 24),
    )
        .prop_map(|(w, h, bits, shades)| {
            let bg = Rgb::new(0, 0, 255);
            let palette = [
                Rgb::new(200, 40, 40),
                Rgb::new(210, 50, 45),
                Rgb::new(40, 200, 40),
                Rgb::WHITE,
            ];
            let mut img = RgbImage::filled(w, h, bg);
            for y in 0..h {
                for x in 0..w {
                    if bits[y * 24 + x] || (x == w / 2 && y == h / 2) {
                        img.set(x, y, palette[shades[y * 24 + x] as usize]);
                    }
                }
            }
            (img, bg)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ppm_round_trip(img in image(12)) {
        prop_assert_eq!(decode_image(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn bmp_round_trip(img in image(12)) {
        let bytes = encode_bmp(&img);
        // Rows are padded to four bytes.
        let row = (3 * img.width()).div_ceil(4) * 4;
        prop_assert_eq!(bytes.len(), 54 + row * img.height());
        prop_assert_eq!(decode_image(&bytes).unwrap(), img);
    }

    #[test]
    fn truncated_ppm_never_panics(img in image(6), cut in 0usize..200) {
        let bytes = encode_ppm(&img);
        let cut = cut.min(bytes.len().saturating_sub(1));
        prop_assert!(decode_image(&bytes[..cut]).is_err());
    }

    #[test]
    fn gray_index_is_the_gray_level(v in any::<u8>(), w in 1usize..5, h in 1usize..5) {
        let idx = to_indexed(&RgbImage::filled(w, h, Rgb::new(v, v, v)));
        prop_assert!(idx.index.iter().all(|&i| i == v));
    }

    #[test]
    fn median_of_constant_is_constant(c in rgb(), w in 1usize..8, h in 1usize..8, r in 0usize..3) {
        let img = RgbImage::filled(w, h, c);
        prop_assert_eq!(median_filter(&img, r), img);
    }

    #[test]
    fn manifest_round_trip(rows in prop::collection::vec((0usize..4, any::<bool>(), 0usize..3), 1..12)) {
        let names = ["Alpha", "Beta", "Gamma", "Delta"];
        let entries: Vec<ManifestEntry> = rows
            .iter()
            .enumerate()
            .map(|(k, &(f, test, _))| ManifestEntry {
                path: format!("img_{k}.ppm").into(),
                family: names[f].into(),
                poison: f == 3,
                cluster: if f == 3 { "poison".into() } else { format!("c{}", f % 2) },
                split: if test { Split::Test } else { Split::Train },
            })
            .collect();
        let mut buf = Vec::new();
        write_manifest(&mut buf, &entries).unwrap();
        prop_assert_eq!(parse_manifest(std::str::from_utf8(&buf).unwrap()).unwrap(), entries);
    }

    #[test]
    fn segmentation_invariants((img, bg) in blob_scene(), eps_lo in 0.0f64..30.0, extra in 0.0f64..300.0, k in 1usize..9) {
        let mask = extract_mask(&img, bg, 60.0).unwrap();

        let contour = trace_contour(&mask);
        prop_assert!(contour.points.iter().all(|&(x, y)| mask.is_boundary(x, y)));
        prop_assert!(contour.perimeter >= 0.0);

        let bands = divide_segments(&mask, &img, k);
        prop_assert_eq!(bands.len(), k);
        prop_assert_eq!(bands.iter().map(|s| s.count).sum::<usize>(), mask.area);
        prop_assert_eq!(bands.iter().map(|s| s.bounds.w).sum::<usize>(), mask.bbox.w);

        let fine = group_by_color(&mask, &img, eps_lo);
        let coarse = group_by_color(&mask, &img, eps_lo + extra);
        prop_assert!(coarse.group_count <= fine.group_count);
        prop_assert!(fine.group_count >= 1 && fine.group_count <= mask.area);
        for (i, &g) in fine.group_of.iter().enumerate() {
            prop_assert_eq!(g == u32::MAX, !mask.bits[i]);
        }
    }

    #[test]
    fn mask_from_bits_stats(bits in prop::collection::vec(any::<bool>(), 1..100), w in 1usize..10) {
        let h = bits.len().div_ceil(w);
        let mut bits = bits;
        bits.resize(w * h, false);
        match FishMask::from_bits(w, h, bits.clone()) {
            None => prop_assert!(bits.iter().all(|b| !b)),
            Some(m) => {
                prop_assert_eq!(m.area, bits.iter().filter(|&&b| b).count());
                prop_assert_eq!(m.pixels().count(), m.area);
                let b = m.bbox;
                prop_assert!(m.centroid.0 >= b.x0 as f64 && m.centroid.0 <= (b.x0 + b.w - 1) as f64);
                prop_assert!(m.centroid.1 >= b.y0 as f64 && m.centroid.1 <= (b.y0 + b.h - 1) as f64);
            }
        }
    }

    #[test]
    fn gini_bounds(labels in prop::collection::vec(0usize..7, 1..60)) {
        let g = gini(&labels).unwrap();
        let classes = labels.iter().max().unwrap() + 1;
        prop_assert!(g >= 0.0 && g <= 1.0 - 1.0 / classes as f64 + 1e-12);
        prop_assert_eq!(g == 0.0, labels.iter().all(|&l| l == labels[0]));
    }

    #[test]
    fn tree_structure_and_fit(rows in prop::collection::vec((prop::collection::vec(0u8..6, 3), 0usize..4), 1..60)) {
        let mut data: Vec<(Vec<f64>, usize)> = Vec::new();
        for (x, c) in rows {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            if !data.iter().any(|(y, _)| *y == x) {
                data.push((x, c));
            }
        }
        let tree = Tree::fit(&data, TreeParams::fully_grown()).unwrap();
        prop_assert_eq!(&Tree::fit(&data, TreeParams::fully_grown()).unwrap(), &tree);
        for (i, n) in tree.nodes().iter().enumerate() {
            if let Node::Split { feature, left, right, .. } = *n {
                prop_assert!(feature < 3);
                prop_assert!(left > i && right > i && left < tree.nodes().len() && right < tree.nodes().len());
            }
        }
        for (x, c) in &data {
            prop_assert_eq!(tree.predict_class(x).unwrap(), *c);
        }
        let shallow = Tree::fit(&data, TreeParams { max_depth: 2, min_leaf: 1 }).unwrap();
        prop_assert!(shallow.depth() <= 2);
    }

    #[test]
    fn momentum_telescopes(eta in 0.01f64..1.0, g in -2.0f64..2.0, alpha in 0.0f64..0.95, t in 1usize..50) {
        let mut buf = 0.0;
        for _ in 0..t {
            buf = momentum_step(eta, g, alpha, buf);
        }
        let want = -eta * g * (1.0 - alpha.powi(t as i32)) / (1.0 - alpha);
        prop_assert!((buf - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn training_is_deterministic(seed in any::<u64>()) {
        let cfg = TrainConfig { seed, max_epochs: 20, ..Default::default() };
        let samples: Vec<TrainingSample<f64>> = (0..6)
            .map(|i| TrainingSample {
                input: vec![f64::from(i) / 6.0, 1.0 - f64::from(i) / 6.0, 0.5],
                target: vec![f64::from(i % 2), f64::from(1 - i % 2)],
            })
            .collect();
        let run = || {
            let mut m = Mlp::init(&[3, 4, 2], &cfg).unwrap();
            let r = m.train(&samples, &cfg).unwrap();
            (m, r)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ra, rb);
    }
}
