use std::f64::consts::PI;

use gesturebench::mask::{
    encode_pgm, normalize, parse_pgm, rotate_point, BinaryMask, NormalizationConfig, Point, WristAnnotation,
};
use gesturebench::synth::{render_instance, GestureSpec, Jitter};
use proptest::prelude::*;

fn arb_mask(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<bool>(), w * h).prop_map(move |px| BinaryMask::new(w, h, px).unwrap())
    })
}

fn wrap(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

proptest! {
    #[test]
    fn pgm_round_trip(m in arb_mask(40)) {
        prop_assert_eq!(parse_pgm(&encode_pgm(&m)).unwrap(), m);
    }

    #[test]
    fn normalize_width_and_wrist_cut(
        m in arb_mask(48),
        lx in 0usize..48, ly in 0usize..48, rx in 0usize..48, ry in 0usize..48,
        target in 8usize..128,
    ) {
        let (w, h) = (m.width(), m.height());
        let wrist = WristAnnotation::new(
            Point::new((lx % w) as f64, (ly % h) as f64),
            Point::new((rx % w) as f64, (ry % h) as f64),
        );
        let cfg = NormalizationConfig { target_width: target };
        if let Ok(n) = normalize(&m, &wrist, &cfg) {
            prop_assert_eq!(n.width(), target);
            prop_assert!(n.height() >= 1);
            // upscaling visits every source row and column, so the crop stays tight
            if n.scale_applied >= 1.0 {
                let (x0, y0, x1, y1) = n.bounding_box().unwrap();
                prop_assert_eq!((x0, y0, x1, y1), (0, 0, target - 1, n.height() - 1));
            }
        }
    }

    #[test]
    fn normalize_is_idempotent(class in 0usize..15, inst in 0usize..5) {
        let spec = GestureSpec::prototype(class).unwrap();
        let s = render_instance(&spec, &Jitter::level(1.0), 5, class, inst);
        let cfg = NormalizationConfig::default();
        let once = normalize(&s.mask, &s.wrist, &cfg).unwrap();
        let bottom = (once.height() - 1) as f64;
        let implied = WristAnnotation::new(Point::new(0.0, bottom), Point::new((once.width() - 1) as f64, bottom));
        let last = once.height() - 1;
        prop_assert!((0..once.width()).any(|x| once.get(x, last)), "bottom row is empty");
        let twice = normalize(&once.mask, &implied, &cfg).unwrap();
        prop_assert_eq!(twice.rotation_applied, 0.0);
        prop_assert!((twice.scale_applied - 1.0).abs() <= 0.02);
    }

    #[test]
    fn normalize_recovers_rotation(class in 0usize..15, theta in -3.0f64..3.0) {
        let spec = GestureSpec::prototype(class).unwrap();
        let s = render_instance(&spec, &Jitter::NONE, 1, class, 0);
        let base = normalize(&s.mask, &s.wrist, &NormalizationConfig::default()).unwrap();
        let c = s.wrist.midpoint();
        // rotate about the wrist midpoint, then shift into a larger canvas
        let pad = 120.0;
        let (w, h) = (s.mask.width() + 240, s.mask.height() + 240);
        let rotated = BinaryMask::from_fn(w, h, |x, y| {
            let q = Point::new(x as f64 - pad, y as f64 - pad);
            let p = rotate_point(q, c, -theta);
            s.mask.get_signed(p.x.round() as i64, p.y.round() as i64)
        })
        .unwrap();
        let shift = |p: Point| {
            let q = rotate_point(p, c, theta);
            Point::new(q.x + pad, q.y + pad)
        };
        let wrist = WristAnnotation::new(shift(s.wrist.left), shift(s.wrist.right));
        let n = normalize(&rotated, &wrist, &NormalizationConfig::default()).unwrap();
        let err = wrap(n.rotation_applied - (base.rotation_applied - theta)).abs();
        prop_assert!(err <= 0.01, "theta {theta}: applied {} vs base {}", n.rotation_applied, base.rotation_applied);
    }
}

#[test]
fn synthetic_masks_all_normalize() {
    let cfg = gesturebench::synth::SynthConfig::default();
    let samples = gesturebench::synth::render_dataset(&cfg).unwrap();
    for s in &samples {
        let n = normalize(&s.mask, &s.wrist, &NormalizationConfig::default());
        assert!(n.is_ok(), "{}: {:?}", s.id, n.err());
    }
}
