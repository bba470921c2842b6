use kronmark::augment::{augment, box_blur, warp_affine, Affine, AugmentationConfig};
use kronmark::dataset::{index_text, load_dataset, read_index, save_dataset, split, split_indices, INDEX_FILE};
use kronmark::image::Image;
use kronmark::landmarks::{LandmarkSet, Point, HEATMAP_SIZE, IMAGE_SIZE, NUM_LANDMARKS};
use kronmark::morphometrics::{extract_traits, pearson};
use kronmark::net::{decode_peak, decode_refined};
use kronmark::rng::{stream, substream};
use kronmark::synth::*;
use kronmark::Error;
use proptest::prelude::*;

const W: f64 = IMAGE_SIZE as f64;

fn cfg() -> GeneratorConfig {
    GeneratorConfig::default()
}

#[test]
fn same_seed_same_record() {
    let a = generate_specimen(7, 3, &cfg()).unwrap();
    let b = generate_specimen(7, 3, &cfg()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.landmarks, generate_specimen(8, 3, &cfg()).unwrap().landmarks);
    let batch = generate_dataset(7, 5, &cfg()).unwrap();
    assert_eq!(batch[3], a);
}

#[test]
fn records_satisfy_their_invariants() {
    for rec in generate_dataset(1, 40, &cfg()).unwrap() {
        assert_eq!((rec.image.width(), rec.image.height()), (IMAGE_SIZE, IMAGE_SIZE));
        assert!(rec.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(rec.landmarks.within(W - 1.0, W - 1.0));
        assert!(rec.weight > 0.0);
        assert_eq!(rec.mm_per_px, 0.6);
        for p in rec.landmarks.points {
            assert_eq!((p.x * 100.0).round() / 100.0, p.x);
        }
    }
}

#[test]
fn canonical_pose_ordering() {
    for rec in generate_dataset(2, 40, &cfg()).unwrap() {
        let lm = rec.landmarks;
        let x1 = lm.number(1).x;
        assert!(lm.points.iter().all(|p| p.x >= x1), "landmark 1 is the leftmost point");
        for (dorsal, ventral) in [(7, 8), (9, 10), (11, 12), (4, 6)] {
            assert!(lm.number(dorsal).y < lm.number(ventral).y);
        }
    }
}

#[test]
fn noise_free_weight_follows_the_law() {
    let c = GeneratorConfig { noise_std: 0.0, length_mm: (120.0, 120.0), height_ratio: (0.22, 0.22), ..cfg() };
    let rec = generate_specimen(5, 0, &c).unwrap();
    let want = 1.2e-5 * 120f64.powi(3) * (1.0 + 0.3 * (0.22 / 0.2 - 1.0));
    assert!((rec.weight - want).abs() <= 1e-12 * want);
    assert_eq!(c.weight(120.0, 0.22, 0.0), rec.weight);
}

#[test]
fn weight_tracks_length() {
    let recs = generate_dataset(11, 1000, &cfg()).unwrap();
    let law: Vec<f64> = recs
        .iter()
        .map(|r| {
            let total = extract_traits(&r.landmarks, r.mm_per_px).unwrap().total_length;
            1.2e-5 * total.powi(3)
        })
        .collect();
    let w: Vec<f64> = recs.iter().map(|r| r.weight).collect();
    assert!(pearson(&law, &w).unwrap() >= 0.99);
}

#[test]
fn generator_config_validation() {
    assert!(matches!(generate_specimen(0, 0, &GeneratorConfig { allometry_b: 4.0, ..cfg() }), Err(Error::Config(_))));
    assert!(GeneratorConfig { length_mm: (150.0, 100.0), ..cfg() }.validate().is_err());
    assert!(GeneratorConfig { mm_per_px: 0.2, ..cfg() }.validate().is_err());
    assert!(GeneratorConfig { allometry_a: 0.0, ..cfg() }.validate().is_err());
}

fn centered() -> LandmarkSet {
    LandmarkSet::new(std::array::from_fn(|i| Point::new(40.0 + 20.0 * i as f64, 100.0 + 9.0 * i as f64)))
}

#[test]
fn heatmap_targets_are_normalized_gaussians() {
    let h = default_heatmap_targets(&centered(), 1.5).unwrap();
    assert_eq!(h.size(), HEATMAP_SIZE);
    for ch in h.channels() {
        assert!((ch.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    // a landmark exactly on the center of cell (10, 20)
    let mut lm = centered();
    lm.points[0] = Point::new(20.5 * W / 56.0, 10.5 * W / 56.0);
    let h = default_heatmap_targets(&lm, 1.5).unwrap();
    let ch = h.channel(0);
    let peak = ch[10 * 56 + 20];
    assert!(ch.iter().all(|&v| v <= peak));
    assert!((peak / ch[10 * 56 + 21] - (1.0 / (2.0 * 1.5 * 1.5f64)).exp()).abs() < 1e-12);
    assert!((peak / ch[10 * 56 + 21] - 1.249).abs() < 1e-3);
}

#[test]
fn heatmap_targets_reject_outside_landmarks() {
    let mut lm = centered();
    lm.points[5].x = -1.0;
    assert!(matches!(default_heatmap_targets(&lm, 1.5), Err(Error::Contract(_))));
    assert!(default_heatmap_targets(&centered(), 0.0).is_err());
}

#[test]
fn decoding_targets_recovers_landmarks() {
    let cell = W / 56.0;
    for rec in generate_dataset(3, 20, &cfg()).unwrap() {
        let h = default_heatmap_targets(&rec.landmarks, 1.5).unwrap();
        for dec in [decode_peak(&h, W, W), decode_refined(&h, W, W, 3)] {
            for (p, g) in dec.points.iter().zip(rec.landmarks.points) {
                assert!((p.x - g.x).abs() <= cell && (p.y - g.y).abs() <= cell);
            }
        }
    }
}

#[test]
fn decode_examples() {
    let g = HEATMAP_SIZE;
    let mut data = vec![0.0; NUM_LANDMARKS * g * g];
    for k in 0..NUM_LANDMARKS {
        data[k * g * g + 10 * g + 20] = 1.0;
    }
    let h = kronmark::landmarks::HeatmapStack::new(g, data).unwrap();
    let p = decode_peak(&h, W, W).points[0];
    assert_eq!((p.x, p.y), (20.5 * W / 56.0, 10.5 * W / 56.0));

    let uniform = kronmark::landmarks::HeatmapStack::new(g, vec![1.0 / (g * g) as f64; NUM_LANDMARKS * g * g]).unwrap();
    let p = decode_peak(&uniform, W, W).points[3];
    assert_eq!((p.x, p.y), (0.5 * W / 56.0, 0.5 * W / 56.0));

    let mut data = vec![0.0; NUM_LANDMARKS * g * g];
    for k in 0..NUM_LANDMARKS {
        data[k * g * g + g * g - 1] = 1.0;
    }
    let last = kronmark::landmarks::HeatmapStack::new(g, data).unwrap();
    assert!(decode_peak(&last, W, W).points.iter().all(|p| p.x < W && p.y < W));
}

fn only(f: impl FnOnce(&mut AugmentationConfig)) -> AugmentationConfig {
    let mut c = AugmentationConfig::none();
    f(&mut c);
    c
}

#[test]
fn augmentation_defaults() {
    let c = AugmentationConfig::default();
    assert_eq!((c.hflip_p, c.vflip_p, c.shift_scale_p, c.rotate_p, c.blur_p, c.rgb_shift_p), (0.5, 0.5, 0.5, 0.5, 0.3, 0.3));
    assert_eq!((c.shift_limit, c.scale_limit, c.rotate_limit, c.blur_limit), (0.0625, 0.20, 20.0, 1));
    assert_eq!(c.rgb_shift_limit, 25.0 / 255.0);
}

#[test]
fn horizontal_flip_mirrors_landmarks_and_pixels() {
    let rec = generate_specimen(4, 0, &cfg()).unwrap();
    let (out, info) = augment(&rec, &only(|c| c.hflip_p = 1.0), &mut substream(0, stream::AUGMENT, 0));
    assert!(info.hflip && !info.vflip);
    for (p, q) in out.landmarks.points.iter().zip(rec.landmarks.points) {
        assert_eq!((p.x, p.y), (W - 1.0 - q.x, q.y));
    }
    for c in 0..3 {
        for y in [0, 77, 319] {
            for x in [0, 5, 160, 319] {
                assert_eq!(out.image.get(c, x, y), rec.image.get(c, IMAGE_SIZE - 1 - x, y));
            }
        }
    }
}

#[test]
fn disabled_augmentation_is_identity() {
    let rec = generate_specimen(4, 1, &cfg()).unwrap();
    let (out, info) = augment(&rec, &AugmentationConfig::none(), &mut substream(0, stream::AUGMENT, 1));
    assert_eq!(out, rec);
    assert_eq!(info.transform, Affine::IDENTITY);
    let zero = warp_affine(&rec.image, &Affine::rotation(0.0, Point::new(159.5, 159.5)));
    assert_eq!(zero, rec.image);
}

#[test]
fn rotation_matches_trig_oracle() {
    let rec = generate_specimen(4, 2, &cfg()).unwrap();
    let c = only(|c| {
        c.rotate_p = 1.0;
        c.rotate_limit = 20.0;
    });
    let mut found = false;
    for i in 0..50 {
        let (out, info) = augment(&rec, &c, &mut substream(9, stream::AUGMENT, i));
        let theta = info.rotation_deg.to_radians();
        let (cx, cy) = (159.5, 159.5);
        for (k, (p, q)) in out.landmarks.points.iter().zip(rec.landmarks.points).enumerate() {
            if info.clamped.contains(&k) {
                continue;
            }
            // counter-clockwise on screen with y pointing down
            let x = cx + theta.cos() * (q.x - cx) + theta.sin() * (q.y - cy);
            let y = cy - theta.sin() * (q.x - cx) + theta.cos() * (q.y - cy);
            assert!((p.x - x).abs() <= 0.5 && (p.y - y).abs() <= 0.5);
        }
        found |= info.rotation_deg.abs() > 15.0;
    }
    assert!(found);
    let exact = Affine::rotation(20.0, Point::new(159.5, 159.5)).apply(Point::new(259.5, 159.5));
    let t = 20f64.to_radians();
    assert!((exact.x - (159.5 + 100.0 * t.cos())).abs() < 1e-9 && (exact.y - (159.5 - 100.0 * t.sin())).abs() < 1e-9);
}

#[test]
fn rotation_moves_image_content_with_landmarks() {
    let mut img = Image::filled(320, 320, [0.0; 3]);
    for y in 195..206 {
        for x in 255..266 {
            (0..3).for_each(|c| img.set(c, x, y, 1.0));
        }
    }
    let m = Affine::rotation(20.0, Point::new(159.5, 159.5));
    let warped = warp_affine(&img, &m);
    let q = m.apply(Point::new(260.0, 200.0));
    assert!(warped.get(0, q.x.round() as usize, q.y.round() as usize) > 0.99);
    assert!(warped.get(0, 260, 200) < 0.01);
}

#[test]
fn affine_algebra() {
    let a = Affine::rotation(13.0, Point::new(10.0, 20.0));
    let b = Affine::scale_shift(1.1, 3.0, -2.0, Point::new(159.5, 159.5));
    let p = Point::new(33.0, 71.0);
    let ab = a.compose(&b).apply(p);
    let step = a.apply(b.apply(p));
    assert!((ab.x - step.x).abs() < 1e-9 && (ab.y - step.y).abs() < 1e-9);
    let back = a.compose(&b).inverse().apply(ab);
    assert!((back.x - p.x).abs() < 1e-9 && (back.y - p.y).abs() < 1e-9);
    assert_eq!(Affine::hflip(320).compose(&Affine::hflip(320)), Affine::IDENTITY);
}

#[test]
fn box_blur_preserves_constants() {
    let img = Image::filled(9, 7, [0.25, 0.5, 1.0]);
    let b = box_blur(&img, 1);
    for (x, y) in b.data().iter().zip(img.data()) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn augmented_landmarks_follow_the_recorded_transform() {
    let rec = generate_specimen(6, 0, &cfg()).unwrap();
    let c = AugmentationConfig::default();
    for i in 0..40 {
        let (out, info) = augment(&rec, &c, &mut substream(1, stream::AUGMENT, i));
        for (k, (p, q)) in out.landmarks.points.iter().zip(rec.landmarks.points).enumerate() {
            let m = info.transform.apply(q);
            let inside = (0.0..=W - 1.0).contains(&m.x) && (0.0..=W - 1.0).contains(&m.y);
            assert_eq!(inside, !info.clamped.contains(&k));
            let want = Point::new(m.x.clamp(0.0, W - 1.0), m.y.clamp(0.0, W - 1.0));
            assert!(p.dist(want) <= 0.5);
        }
        assert_eq!(out.weight, rec.weight);
    }
}

#[test]
fn split_sizes_and_partition() {
    let items: Vec<u32> = (0..10).collect();
    let (a, b, c) = split(&items, (0.4, 0.2, 0.4), 3).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (4, 2, 4));
    let mut all: Vec<u32> = a.iter().chain(&b).chain(&c).copied().collect();
    all.sort();
    assert_eq!(all, items);
    assert_eq!(split_indices(10, (0.4, 0.2, 0.4), 3).unwrap(), split_indices(10, (0.4, 0.2, 0.4), 3).unwrap());
    assert_ne!(split_indices(50, (0.4, 0.2, 0.4), 3).unwrap(), split_indices(50, (0.4, 0.2, 0.4), 4).unwrap());
    assert!(matches!(split(&items[..2], (0.4, 0.2, 0.4), 0), Err(Error::Input(_))));
    assert!(split(&items, (0.5, 0.2, 0.4), 0).is_err());
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let recs = generate_dataset(7, 6, &cfg()).unwrap();
    save_dataset(&recs, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), recs.len());
    for (a, b) in recs.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.landmarks, b.landmarks);
        assert_eq!(a.weight, b.weight);
        assert_eq!(a.mm_per_px, b.mm_per_px);
        assert_eq!(a.image, b.image, "generated images are already 8-bit");
    }
    let text = std::fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
    assert_eq!(text, index_text(&recs));
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("{\"id\":0,\"image\":\"images/000000.png\",\"landmarks\":[["));
}

#[test]
fn weights_round_trip_through_text() {
    let recs: Vec<SpecimenRecord> = (0..100)
        .map(|i| SpecimenRecord {
            id: i,
            image: Image::filled(2, 2, [0.0; 3]),
            landmarks: centered(),
            weight: 1.0 / (i as f64 + 3.0) + 17.0,
            mm_per_px: 0.1 + i as f64 * 1e-3,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(INDEX_FILE), index_text(&recs)).unwrap();
    for (r, i) in recs.iter().zip(read_index(dir.path()).unwrap()) {
        assert_eq!((r.weight, r.mm_per_px), (i.weight, i.mm_per_px));
    }
}

#[test]
fn dataset_errors() {
    let dir = tempfile::tempdir().unwrap();
    let recs = generate_dataset(7, 3, &cfg()).unwrap();
    save_dataset(&recs, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("images/000001.png")).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile(p)) if p.ends_with("000001.png")));

    let mut lines: Vec<String> = index_text(&recs).lines().map(String::from).collect();
    lines[1] = lines[1].replace("\"weight\"", "\"wieght\"");
    std::fs::write(dir.path().join(INDEX_FILE), lines.join("\n")).unwrap();
    assert!(matches!(read_index(dir.path()), Err(Error::Parse { line: 2, .. })));

    std::fs::write(dir.path().join(INDEX_FILE), "{\"id\":1}\n").unwrap();
    assert!(matches!(read_index(dir.path()), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(read_index(&dir.path().join("nope")), Err(Error::Io { .. })));
}

proptest! {
    #[test]
    fn heatmap_peak_is_nearest_cell(x in 0.0f64..320.0, y in 0.0f64..320.0) {
        let mut lm = centered();
        lm.points[0] = Point::new(x, y);
        let h = default_heatmap_targets(&lm, 1.5).unwrap();
        let ch = h.channel(0);
        let best = ch.iter().enumerate().fold(0, |b, (i, &v)| if v > ch[b] { i } else { b });
        let (u, v) = (pixel_to_grid(x, W, 56), pixel_to_grid(y, W, 56));
        let (r, c) = ((best / 56) as f64, (best % 56) as f64);
        prop_assert!((c - u.clamp(0.0, 55.0)).abs() <= 0.5 + 1e-9);
        prop_assert!((r - v.clamp(0.0, 55.0)).abs() <= 0.5 + 1e-9);
    }
}
