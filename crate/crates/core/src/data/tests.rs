use super::*;
use crate::geometry::{gt_from_sides, CubicBezier, Point2, TextInstanceGT};
use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn p(x: f64, y: f64) -> Point2 {
    Point2::new(x, y)
}

fn close(a: Point2, b: Point2, tol: f64) -> bool {
    (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol
}

fn inside(poly: &[Point2], q: Point2) -> bool {
    let mut c = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.y > q.y) != (b.y > q.y) && q.x < (b.x - a.x) * (q.y - a.y) / (b.y - a.y) + a.x {
            c = !c;
        }
    }
    c
}

#[test]
fn stencils_are_pairwise_distinct() {
    for size in [12, 40, GlyphSet::MAX] {
        let g = GlyphSet::with_size(size).unwrap();
        assert_eq!(g.len(), size);
        for a in 1..=size {
            for b in a + 1..=size {
                assert!(hamming(g.stencil(a), g.stencil(b)) >= MIN_HAMMING, "{a} vs {b}");
            }
        }
        let mut chars = g.chars().to_vec();
        chars.sort();
        chars.dedup();
        assert_eq!(chars.len(), size);
    }
    assert!(GlyphSet::with_size(0).is_err());
    assert!(GlyphSet::with_size(97).is_err());
}

#[test]
fn encode_decode_round_trip() {
    let g = GlyphSet::toy();
    let classes = g.encode("0A9H").unwrap();
    assert_eq!(classes, vec![1, 11, 10, 12]);
    assert_eq!(g.decode(&classes), "0A9H");
    assert!(g.encode("Z").is_err());
}

#[test]
fn scenes_are_deterministic_and_in_vocabulary() {
    let cfg = GeneratorConfig::default();
    let g = GlyphSet::toy();
    let (s1, r1) = generate_scene(&cfg, &g, 7).unwrap();
    let (s2, r2) = generate_scene(&cfg, &g, 7).unwrap();
    assert_eq!(s1, s2);
    assert_eq!(r1.image, r2.image);
    assert_eq!(r1.gts, r2.gts);
    let (s3, _) = generate_scene(&cfg, &g, 8).unwrap();
    assert_ne!(s1, s3);
    for seed in 0..40 {
        let (spec, scene) = generate_scene(&cfg, &g, seed).unwrap();
        assert!((cfg.min_instances..=cfg.max_instances).contains(&spec.instances.len()) || !spec.instances.is_empty());
        for ((inst, gt), &count) in spec.instances.iter().zip(&scene.gts).zip(&scene.glyph_counts) {
            assert_eq!(count, inst.text.chars().count());
            assert!(count <= cfg.n_points - 2);
            assert!(g.encode(&gt.transcript).is_ok());
            assert_eq!(gt.num_points(), cfg.n_points);
            assert_eq!(gt.polygon().unwrap().len(), 2 * cfg.n_points);
        }
    }
}

#[test]
fn generated_ground_truth_tracks_the_ribbon() {
    let cfg = GeneratorConfig::default();
    let g = GlyphSet::toy();
    for seed in 0..20 {
        let (spec, scene) = generate_scene(&cfg, &g, seed).unwrap();
        let (w, h) = (spec.width as f64, spec.height as f64);
        for ((inst, gt), poly) in spec.instances.iter().zip(&scene.gts).zip(&scene.polygons) {
            // center points sit inside the ribbon and near the guide
            for &c in &gt.center[1..gt.center.len() - 1] {
                let px = p(c.x * w, c.y * h);
                assert!(inside(poly, px));
                let nearest = (0..=200).map(|i| inst.guide.at(i as f64 / 200.0).distance(px)).fold(f64::INFINITY, f64::min);
                assert!(nearest < 0.12 * inst.glyph_height, "seed {seed}: {nearest}");
            }
            for (t, b) in gt.top.as_ref().unwrap().iter().zip(gt.bot.as_ref().unwrap()) {
                let span = p(t.x * w, t.y * h).distance(p(b.x * w, b.y * h));
                assert!((span - inst.glyph_height).abs() < 0.12 * inst.glyph_height, "seed {seed}: span {span} vs {}", inst.glyph_height);
            }
        }
    }
}

#[test]
fn ink_stays_inside_the_ribbons() {
    let cfg = GeneratorConfig::default();
    let g = GlyphSet::toy();
    for seed in 0..10 {
        let (spec, scene) = generate_scene(&cfg, &g, seed).unwrap();
        let mut inked = vec![0usize; spec.instances.len()];
        for (x, y, px) in scene.image.enumerate_pixels() {
            if px.0 == spec.background {
                continue;
            }
            let q = p(x as f64 + 0.5, y as f64 + 0.5);
            // rigid glyph boxes may overhang the bent ribbon edge slightly
            let hit = scene.polygons.iter().position(|poly| {
                [(-1.5, -1.5), (1.5, -1.5), (-1.5, 1.5), (1.5, 1.5), (0.0, 0.0)].iter().any(|&(dx, dy)| inside(poly, p(q.x + dx, q.y + dy)))
            });
            let i = hit.unwrap_or_else(|| panic!("seed {seed}: stray ink at ({x}, {y})"));
            inked[i] += 1;
        }
        assert!(inked.iter().all(|&c| c > 20), "seed {seed}: {inked:?}");
    }
}

#[test]
fn straight_guides_give_collinear_centers() {
    let g = GlyphSet::toy();
    let spec = SceneSpec {
        width: 128,
        height: 96,
        background: [200, 200, 200],
        instances: vec![InstanceSpec {
            guide: CubicBezier::line(p(20.0, 40.0), p(100.0, 40.0)),
            text: "A12".into(),
            glyph_height: 18.0,
            thickness: 1.0,
            ink: [10, 10, 10],
        }],
        seed: 0,
    };
    let scene = render_scene(&spec, &g, 13, 2).unwrap();
    let gt = &scene.gts[0];
    assert_eq!(scene.glyph_counts, vec![3]);
    for c in &gt.center {
        assert!((c.y - 40.0 / 96.0).abs() < 1e-6);
    }
    assert!(close(gt.center[0], p(20.0 / 128.0, 40.0 / 96.0), 1e-6));
    assert!(close(gt.center[12], p(100.0 / 128.0, 40.0 / 96.0), 1e-6));
    assert!(render_scene(&SceneSpec { instances: vec![InstanceSpec { text: "Z".into(), ..spec.instances[0].clone() }], ..spec }, &g, 13, 2).is_err());
}

#[test]
fn identity_policy_is_a_no_op() {
    let (img, gts) = sample_gt(4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (out, g2) = augment(&img, &gts, &AugmentPolicy::none(), &mut rng).unwrap();
    assert_eq!(out, img);
    assert_eq!(g2, gts);
    let lines = AugmentPolicy::default().for_lines();
    assert!(lines.crop_min.is_none() && lines.rotate_deg.is_some());
}

#[test]
fn rotating_a_quarter_turn_maps_as_expected() {
    let q = rotate_point(p(0.25, 0.5), 90.0, 100.0, 100.0);
    assert!(close(q, p(0.5, 0.25), 1e-12));
    let q = rotate_point(p(0.3, 0.7), 0.0, 64.0, 32.0);
    assert!(close(q, p(0.3, 0.7), 1e-12));
}

#[test]
fn rotation_moves_pixels_with_their_labels() {
    let mut img = RgbImage::from_pixel(64, 48, Rgb([0, 0, 0]));
    for dy in 0..2 {
        for dx in 0..2 {
            img.put_pixel(40 + dx, 10 + dy, Rgb([255, 255, 255]));
        }
    }
    let marker = p(41.0 / 64.0, 11.0 / 48.0);
    let gt = TextInstanceGT { center: vec![marker, marker], top: None, bot: None, transcript: "1".into() };
    for deg in [-45.0, -20.0, 30.0, 90.0] {
        let (out, gts) = rotate(&img, &[gt.clone()], deg);
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for (x, y, px) in out.enumerate_pixels() {
            let v = px.0[0] as f64;
            sx += v * (x as f64 + 0.5);
            sy += v * (y as f64 + 0.5);
            sw += v;
        }
        let c = gts[0].center[0];
        let q = p(c.x * out.width() as f64, c.y * out.height() as f64);
        assert!(q.distance(p(sx / sw, sy / sw)) < 0.75, "deg {deg}");
    }
}

fn sample_gt(seed: u64) -> (RgbImage, Vec<TextInstanceGT>) {
    let (_, scene) = generate_scene(&GeneratorConfig::default(), &GlyphSet::toy(), seed).unwrap();
    (scene.image, scene.gts)
}

#[test]
fn crops_keep_whole_instances_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cropped = 0;
    for seed in 0..30 {
        let (img, gts) = sample_gt(seed);
        if let Some((out, kept)) = instance_crop(&img, &gts, 0.6, &mut rng) {
            cropped += 1;
            assert!(!kept.is_empty() && kept.len() <= gts.len());
            for g in &kept {
                assert!(g.center.iter().chain(g.top.iter().flatten()).all(|q| (0.0..=1.0).contains(&q.x) && (0.0..=1.0).contains(&q.y)));
                assert!(gts.iter().any(|o| o.transcript == g.transcript));
            }
            assert!(out.width() <= img.width() && out.height() <= img.height());
        }
    }
    assert!(cropped > 10);
}

#[test]
fn crop_coordinates_follow_pixels() {
    let mut img = RgbImage::from_pixel(100, 80, Rgb([0, 0, 0]));
    img.put_pixel(60, 50, Rgb([255, 0, 0]));
    let mark = p(60.5 / 100.0, 50.5 / 80.0);
    let gt = TextInstanceGT { center: vec![mark, mark], top: None, bot: None, transcript: "1".into() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (out, kept) = instance_crop(&img, &[gt], 0.5, &mut rng).unwrap();
    let c = kept[0].center[0];
    let (x, y) = ((c.x * out.width() as f64).floor() as u32, (c.y * out.height() as f64).floor() as u32);
    assert_eq!(out.get_pixel(x, y).0, [255, 0, 0]);
}

#[test]
fn resize_and_jitter_leave_labels_alone() {
    let (img, gts) = sample_gt(2);
    let policy = AugmentPolicy { rotate_deg: None, crop_min: None, resize: Some((0.5, 0.5)), jitter: Some(0.3) };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (out, g2) = augment(&img, &gts, &policy, &mut rng).unwrap();
    assert_eq!(out.dimensions(), (64, 64));
    assert_eq!(g2, gts);
    assert!(augment(&img, &gts, &AugmentPolicy { crop_min: Some(0.0), ..AugmentPolicy::none() }, &mut rng).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augmentation_keeps_center_between_sides(seed in 0u64..500, aug_seed in 0u64..1000) {
        let (img, gts) = sample_gt(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(aug_seed);
        let (_, out) = augment(&img, &gts, &AugmentPolicy::default(), &mut rng).unwrap();
        prop_assert!(!out.is_empty());
        for g in &out {
            // reading order: the first center point stays closest to the first top point
            let t = g.top.as_ref().unwrap();
            prop_assert!(g.center[0].distance(t[0]) < g.center[0].distance(t[t.len() - 1]));
            for ((c, t), b) in g.center.iter().zip(g.top.as_ref().unwrap()).zip(g.bot.as_ref().unwrap()) {
                prop_assert!(close(*c, t.midpoint(*b), 1e-9));
            }
            for q in g.center.iter().chain(g.top.iter().flatten()).chain(g.bot.iter().flatten()) {
                prop_assert!((-1e-9..=1.0 + 1e-9).contains(&q.x) && (-1e-9..=1.0 + 1e-9).contains(&q.y));
            }
        }
    }
}

#[test]
fn export_then_load_round_trips() {
    let cfg = GeneratorConfig::default();
    let g = GlyphSet::toy();
    let dir = tempfile::tempdir().unwrap();
    let ds = write_generated(&cfg, &g, 6, 11, dir.path()).unwrap();
    let back = load_dataset(&dir.path().join("annotations.json"), &g, cfg.n_points).unwrap();
    assert_eq!(back.len(), ds.len());
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!(a.image, b.image);
        assert_eq!(a.gts.len(), b.gts.len());
        for (x, y) in a.gts.iter().zip(&b.gts) {
            assert_eq!(x.transcript, y.transcript);
            let pa = x.center.iter().chain(x.top.iter().flatten()).chain(x.bot.iter().flatten());
            let pb = y.center.iter().chain(y.top.iter().flatten()).chain(y.bot.iter().flatten());
            for (u, v) in pa.zip(pb) {
                assert!(close(*u, *v, 1e-9), "{u:?} vs {v:?}");
            }
        }
    }
    let manifest: SeedManifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join("seeds.json")).unwrap()).unwrap();
    assert_eq!(manifest.scenes.len(), 6);
    let (again, _) = generate_dataset(&cfg, &g, 6, 11).unwrap();
    assert_eq!(again.samples[3].image, ds.samples[3].image);
    // line-only export round trips too
    let lines = ds.to_lines();
    let ldir = tempfile::tempdir().unwrap();
    let file = export_dataset(&lines, ldir.path()).unwrap();
    assert!(file.images[0].instances.iter().all(|i| i.kind == InstanceKind::Line));
    let lback = load_dataset(&ldir.path().join("annotations.json"), &g, cfg.n_points).unwrap();
    for (x, y) in lines.samples[0].gts.iter().zip(&lback.samples[0].gts) {
        assert!(y.top.is_none());
        for (u, v) in x.center.iter().zip(&y.center) {
            assert!(close(*u, *v, 1e-9));
        }
    }
}

#[test]
fn bad_records_name_index_and_field() {
    let doc = r#"{"images":[
        {"file":"a.png","width":10,"height":10,"instances":[]},
        {"file":"b.png","width":10,"height":10,"instances":[{"kind":"circle","points":[],"transcript":"1"}]}]}"#;
    match parse_annotations(doc) {
        Err(crate::Error::Annotation { record, field, .. }) => {
            assert_eq!(record, 1);
            assert_eq!(field, "instances[0].kind");
        }
        other => panic!("{other:?}"),
    }
    let doc = r#"{"images":[{"file":"a.png","width":10,"instances":[]}]}"#;
    assert!(matches!(parse_annotations(doc), Err(crate::Error::Annotation { record: 0, ref field, .. }) if field == "height"));
    let doc = r#"{"images":[{"file":"a.png","width":10,"height":10,"instances":[{"kind":"line","points":[[1,2],[3]],"transcript":"1"}]}]}"#;
    assert!(matches!(parse_annotations(doc), Err(crate::Error::Annotation { ref field, .. }) if field == "instances[0].points[1]"));
    let doc = r#"{"images":[{"file":"a.png","width":10,"height":10,"instances":[{"kind":"line","points":[[1,2],[3,4]],"transcript":"1Z"}]}]}"#;
    let file = parse_annotations(doc).unwrap();
    let err = record_to_gts(&file.images[0], 0, &GlyphSet::toy(), 13, 11).unwrap_err();
    assert!(matches!(err, crate::Error::Annotation { ref field, .. } if field == "instances[0].transcript"));
}

#[test]
fn bezier_pair_records_use_control_points() {
    let doc = r#"{"images":[{"file":"a.png","width":100,"height":50,"instances":[{"kind":"bezier_pair",
        "points":[[10,10],[40,5],[60,5],[90,10],[90,30],[60,25],[40,25],[10,30]],"transcript":"12"}]}]}"#;
    let file = parse_annotations(doc).unwrap();
    let gts = record_to_gts(&file.images[0], 0, &GlyphSet::toy(), 9, 7).unwrap();
    let q = |x: f64, y: f64| p(x / 100.0, y / 50.0);
    let top = CubicBezier::new(q(10.0, 10.0), q(40.0, 5.0), q(60.0, 5.0), q(90.0, 10.0));
    let bot = CubicBezier::new(q(10.0, 30.0), q(40.0, 25.0), q(60.0, 25.0), q(90.0, 30.0));
    assert_eq!(gts[0], gt_from_sides(&top, &bot, "12", 9).unwrap());
}

#[test]
fn batches_pad_and_rescale() {
    let g = GlyphSet::toy();
    let (ds, _) = generate_dataset(&GeneratorConfig::default(), &g, 2, 5).unwrap();
    let mut wide = ds.samples[1].clone();
    wide.image = image::imageops::resize(&wide.image, 128, 64, image::imageops::FilterType::Triangle);
    let samples = vec![ds.samples[0].clone(), wide];
    let b: Batch<f32> = batch_samples(&samples, 96, 32).unwrap();
    assert_eq!(b.len(), 2);
    assert_eq!(b.images[0].shape, vec![96, 96, 3]);
    assert_eq!(b.valid, vec![(96, 96), (48, 96)]);
    // the wide sample occupies the top half of the padded canvas
    for (x, y) in samples[1].gts[0].center.iter().zip(&b.gts[1][0].center) {
        assert!((y.x - x.x).abs() < 1e-12 && (y.y - x.y * 0.5).abs() < 1e-12);
    }
    let t = &b.images[1];
    assert!(t.data[(60 * 96) * 3..].iter().all(|&v| v == 0.0));
    assert_eq!(normalize_pixel::<f64>(0), -1.0);
    assert_eq!(normalize_pixel::<f64>(255), 1.0);
    assert!(batch_samples::<f32>(&[], 96, 32).is_err());
    assert!(make_batch::<f32>(&ds, &[], 96, 32).is_err());
    assert!(make_batch::<f32>(&ds, &[2], 96, 32).is_err());
    let odd: Batch<f32> = batch_samples(&samples[1..], 90, 32).unwrap();
    assert_eq!(odd.images[0].shape, vec![64, 96, 3]);
    assert_eq!(odd.valid, vec![(45, 90)]);
    for (x, y) in samples[1].gts[0].center.iter().zip(&odd.gts[0][0].center) {
        assert!((y.x - x.x * 90.0 / 96.0).abs() < 1e-12 && (y.y - x.y * 45.0 / 64.0).abs() < 1e-12);
    }
    let one: Batch<f64> = make_batch(&ds, &[1], 128, 32).unwrap();
    assert_eq!(one.valid, vec![(128, 128)]);
    assert_eq!(one.gts[0], ds.samples[1].gts);
    // a pixel value survives resize-free batching at its labelled position
    let src = &ds.samples[1].image;
    let px = src.get_pixel(37, 90);
    for c in 0..3 {
        assert_eq!(one.images[0].data[(90 * 128 + 37) * 3 + c], normalize_pixel::<f64>(px.0[c]));
    }
}

#[test]
fn epoch_order_is_a_seeded_permutation() {
    let a = epoch_order(20, 4, 0);
    assert_eq!(a, epoch_order(20, 4, 0));
    assert_ne!(a, epoch_order(20, 4, 1));
    let mut s = a.clone();
    s.sort();
    assert_eq!(s, (0..20).collect::<Vec<_>>());
}
