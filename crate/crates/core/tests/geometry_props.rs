use gesturebench::geometry::{distance_transform, extract_contour, resample_contour, Contour};
use gesturebench::mask::{BinaryMask, Point};
use proptest::prelude::*;

/// Union of up to four ellipses with some salt noise.
fn arb_blob() -> impl Strategy<Value = BinaryMask> {
    (
        8usize..=64,
        8usize..=64,
        proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.05f64..0.5, 0.05f64..0.5), 1..=4),
        proptest::collection::vec(0usize..4096, 0..20),
    )
        .prop_map(|(w, h, blobs, salt)| {
            let mut m = BinaryMask::from_fn(w, h, |x, y| {
                blobs.iter().any(|&(cx, cy, rx, ry)| {
                    let dx = (x as f64 / w as f64 - cx) / rx;
                    let dy = (y as f64 / h as f64 - cy) / ry;
                    dx * dx + dy * dy <= 1.0
                })
            })
            .unwrap();
            for s in salt {
                let (x, y) = (s % w, (s / w) % h);
                let v = m.get(x, y);
                m.set(x, y, !v);
            }
            m
        })
}

fn brute_edt(m: &BinaryMask, contour: &Contour) -> Vec<f64> {
    (0..m.height())
        .flat_map(|y| (0..m.width()).map(move |x| (x, y)))
        .map(|(x, y)| {
            if !m.get(x, y) {
                return 0.0;
            }
            contour
                .points()
                .iter()
                .map(|q| (x as f64 - q.x).powi(2) + (y as f64 - q.y).powi(2))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn contour_is_closed_8_connected_cycle(m in arb_blob()) {
        if let Ok(c) = extract_contour(&m) {
            let pts = c.points();
            for (a, b) in pts.iter().zip(pts.iter().cycle().skip(1)) {
                let (dx, dy) = ((a.x - b.x).abs(), (a.y - b.y).abs());
                prop_assert!(dx <= 1.0 && dy <= 1.0 && dx + dy > 0.0, "{a:?} -> {b:?}");
            }
            for p in pts {
                prop_assert!(m.get(p.x as usize, p.y as usize));
            }
        }
    }

    #[test]
    fn distance_transform_matches_brute_force(m in arb_blob()) {
        if let Ok(c) = extract_contour(&m) {
            let field = distance_transform(&m, &c).unwrap();
            let oracle = brute_edt(&m, &c);
            for (i, (&got, &want)) in field.values().iter().zip(&oracle).enumerate() {
                prop_assert!((got - want).abs() <= 1e-9, "pixel {i}: {got} vs {want}");
                prop_assert_eq!(field.in_domain()[i], m.pixels()[i]);
            }
        }
    }

    #[test]
    fn translation_equivariance(m in arb_blob(), dx in 0usize..20, dy in 0usize..20) {
        if let Ok(c) = extract_contour(&m) {
            let (w, h) = (m.width() + dx + 3, m.height() + dy + 3);
            let moved = m.translated(dx, dy, w, h);
            let c2 = extract_contour(&moved).unwrap();
            let shifted: Vec<Point> = c.points().iter().map(|p| Point::new(p.x + dx as f64, p.y + dy as f64)).collect();
            prop_assert_eq!(c2.points(), &shifted[..]);
            let f1 = distance_transform(&m, &c).unwrap();
            let f2 = distance_transform(&moved, &c2).unwrap();
            for y in 0..m.height() {
                for x in 0..m.width() {
                    if m.get(x, y) {
                        prop_assert_eq!(f1.get(x, y), f2.get(x + dx, y + dy));
                    }
                }
            }
        }
    }

    #[test]
    fn resampled_arc_gaps_are_uniform(m in arb_blob(), count in 3usize..60) {
        if let Ok(c) = extract_contour(&m) {
            let s = resample_contour(&c, count).unwrap();
            prop_assert_eq!(s.points.len(), count);
            let pts = c.points();
            let n = pts.len();
            let perimeter = c.perimeter();
            let mut cum = vec![0.0; n + 1];
            for i in 0..n {
                cum[i + 1] = cum[i] + pts[i].dist(pts[(i + 1) % n]);
            }
            // every arc position at which `p` lies on the closed polyline
            let positions = |p: Point| -> Vec<f64> {
                (0..n)
                    .filter_map(|i| {
                        let (a, b) = (pts[i], pts[(i + 1) % n]);
                        let t = a.dist(p);
                        (t + p.dist(b) - a.dist(b) <= 1e-9).then_some(cum[i] + t)
                    })
                    .collect()
            };
            let step = perimeter / count as f64;
            let origin = positions(s.points[0]);
            prop_assert!(!origin.is_empty());
            for (k, p) in s.points.iter().enumerate() {
                let hit = positions(*p).iter().any(|&pos| {
                    origin.iter().any(|&o| {
                        let rel = (pos - o).rem_euclid(perimeter);
                        let d = (rel - k as f64 * step).abs();
                        d <= 1e-6 || (perimeter - d).abs() <= 1e-6
                    })
                });
                prop_assert!(hit, "sample {k} at {p:?} is not at arc length {}", k as f64 * step);
            }
        }
    }
}
