use kronmark::landmarks::{LandmarkSet, Point, NUM_LANDMARKS};
use kronmark::metrics::*;
use kronmark::Error;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn set(f: impl Fn(usize) -> Point) -> LandmarkSet {
    LandmarkSet::new(std::array::from_fn(f))
}

fn spread() -> LandmarkSet {
    set(|i| Point::new(10.0 + 20.0 * i as f64, 50.0 + 7.0 * (i % 4) as f64))
}

#[test]
fn euclidean_examples() {
    let o = [Point::new(0.0, 0.0)];
    assert_eq!(euclidean_distance(&o, &o).unwrap(), 0.0);
    assert!(close(euclidean_distance(&o, &[Point::new(3.0, 4.0)]).unwrap(), 5.0, 1e-12));
    let g = [Point::new(0.0, 0.0), Point::new(1.0, 1.0)];
    let p = [Point::new(3.0, 4.0), Point::new(4.0, 5.0)];
    assert!(close(euclidean_distance(&g, &p).unwrap(), 50f64.sqrt(), 1e-12));
    assert!(euclidean_distance(&g, &o).is_err());
}

#[test]
fn kld_examples() {
    assert_eq!(kld(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
    assert!(close(kld(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 2f64.ln(), 1e-12));
    assert!(matches!(kld(&[0.5, 0.5], &[1.0, 0.0]), Err(Error::InfiniteDivergence { index: 1 })));
    assert!(kld(&[0.5, 0.6], &[0.5, 0.5]).is_err());
}

#[test]
fn jsd_examples() {
    assert_eq!(jsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
    assert!(close(jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2f64.ln().sqrt(), 1e-12));
    // mixture M = [0.25, 0.75]
    let m = [0.25, 0.75];
    let want = 0.5 * (0.5 * (0.5f64 / m[0]).ln() + 0.5 * (0.5f64 / m[1]).ln() + 1.0 * (1.0f64 / m[1]).ln());
    assert!(close(jsd(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), want.sqrt(), 1e-12));
}

#[test]
fn oks_examples() {
    let gt = spread();
    let cfg = OksConfig::default();
    assert_eq!(oks(&gt, &gt, &cfg).unwrap(), 1.0);

    let s = cfg.scale_for(&gt).unwrap();
    let (x0, y0, x1, y1) = gt.bbox();
    assert!(close(s, ((x1 - x0) * (y1 - y0)).sqrt(), 1e-12));

    let mut single = OksConfig { visible: [false; NUM_LANDMARKS], ..cfg.clone() };
    single.visible[4] = true;
    let d = s * 0.1 * 2f64.sqrt();
    let mut pred = gt;
    pred.points[4].x += d;
    assert!(close(oks(&pred, &gt, &single).unwrap(), (-1.0f64).exp(), 1e-12));

    let far = gt.map(|p| Point::new(p.x + 1e9, p.y));
    assert_eq!(oks(&far, &gt, &cfg).unwrap(), 0.0);

    let none = OksConfig { visible: [false; NUM_LANDMARKS], ..cfg };
    assert!(matches!(oks(&gt, &gt, &none), Err(Error::UndefinedMetric(_))));
}

#[test]
fn oks_fixed_scale() {
    let gt = spread();
    let cfg = OksConfig { scale: ScaleRule::Fixed(10.0), ..Default::default() };
    let pred = gt.map(|p| Point::new(p.x + 1.0, p.y));
    // every keypoint off by 1 px with s k = 1
    assert!(close(oks(&pred, &gt, &cfg).unwrap(), (-0.5f64).exp(), 1e-12));
    let degenerate = set(|_| Point::new(3.0, 3.0));
    assert!(OksConfig::default().scale_for(&degenerate).is_err());
}

#[test]
fn ap_ar_examples() {
    let ones = ap_ar(&[1.0; 5]).unwrap();
    assert_eq!((ones.ap, ones.ap50, ones.ap75, ones.ar), (1.0, 1.0, 1.0, 1.0));
    assert!(ones.per_threshold.iter().all(|&v| v == 1.0));
    let zeros = ap_ar(&[0.0; 3]).unwrap();
    assert_eq!((zeros.ap, zeros.ar), (0.0, 0.0));
    // both pass .50 to .60, only 0.9 passes .65 to .90, neither passes .95
    let r = ap_ar(&[0.6, 0.9]).unwrap();
    assert!(close(r.ap, (3.0 + 6.0 * 0.5) / 10.0, 1e-12));
    assert_eq!((r.ap50, r.ap75), (1.0, 0.5));
    assert!(ap_ar(&[]).is_err());
}

#[test]
fn regression_examples() {
    let r = regression_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!((r.mae, r.mse, r.r2), (0.0, 0.0, 1.0));
    let r = regression_metrics(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(r.r2, 0.0);
    let r = regression_metrics(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
    assert!(close(r.mae, 1.0 / 3.0, 1e-15) && close(r.mse, 1.0 / 3.0, 1e-15) && close(r.r2, 0.5, 1e-15));
    assert!(matches!(regression_metrics(&[1.0, 2.0], &[5.0, 5.0]), Err(Error::UndefinedMetric(_))));
    assert!(regression_metrics(&[], &[]).is_err());
}

#[test]
fn mad_examples() {
    assert_eq!(mad(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(mad(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
    assert_eq!(mad(&[2.0, 4.0], &[1.0, 2.0]).unwrap(), 1.5);
    assert!(mad(&[1.0], &[]).is_err());
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_filter_map("positive mass", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #[test]
    fn jsd_is_bounded_and_symmetric(p in distribution(6), q in distribution(6)) {
        let a = jsd(&p, &q).unwrap();
        prop_assert!(a * a <= 2f64.ln() + 1e-12);
        prop_assert!(close(a, jsd(&q, &p).unwrap(), 1e-12));
        prop_assert!(jsd(&p, &p).unwrap() < 1e-7);
    }

    #[test]
    fn kld_is_nonnegative(p in distribution(5), q in distribution(5)) {
        if q.iter().all(|&v| v > 0.0) {
            prop_assert!(kld(&p, &q).unwrap() >= 0.0);
        }
    }

    #[test]
    fn oks_is_scale_invariant(factor in 0.1f64..10.0, dx in -20.0f64..20.0, dy in -20.0f64..20.0) {
        let gt = spread();
        let pred = gt.map(|p| Point::new(p.x + dx, p.y - dy * 0.5));
        let scaled = |s: &LandmarkSet| s.map(|p| Point::new(p.x * factor, p.y * factor));
        let a = oks(&pred, &gt, &OksConfig::default()).unwrap();
        let b = oks(&scaled(&pred), &scaled(&gt), &OksConfig::default()).unwrap();
        prop_assert!(close(a, b, 1e-12));
    }

    #[test]
    fn ap_curve_is_non_increasing(v in prop::collection::vec(0.0f64..1.0, 1..40)) {
        let r = ap_ar(&v).unwrap();
        prop_assert!(r.per_threshold.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(r.ap50 >= r.ap75);
        prop_assert!((0.0..=1.0).contains(&r.ap));
    }

    #[test]
    fn regression_bounds(pred in prop::collection::vec(-5.0f64..5.0, 4), truth in prop::collection::vec(-5.0f64..5.0, 4)) {
        if let Ok(r) = regression_metrics(&pred, &truth) {
            prop_assert!(r.mae >= 0.0 && r.mse >= 0.0 && r.r2 <= 1.0);
        }
    }
}
