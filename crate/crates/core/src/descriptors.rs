//! Per-image shape features.
//!
//! A [`DescriptorBundle`] holds everything the matchers need for one
//! normalized mask: the traced contour, its shape contexts, the histogram of
//! the contour distance transform, a Sobel orientation histogram and the
//! seven Hu invariants. Members are optional so a caller timing a single
//! method can compute only what that method reads.

use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{
    distance_transform, extract_contour, resample_contour, Contour, DistanceField, GeometryError,
    SampledContour, DEFAULT_SC_POINTS,
};
use crate::mask::{BinaryMask, Point};

/// Radial range of the log-polar bins, as multiples of the mean pairwise distance.
pub const SC_INNER_RADIUS: f64 = 0.125;
pub const SC_OUTER_RADIUS: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescriptorError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("shape-context points are degenerate (mean pairwise distance is zero)")]
    DegeneratePoints,
    #[error("shape contexts need at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("distance field has no in-domain pixels")]
    EmptyField,
    #[error("image has no non-zero gradient")]
    NoGradient,
    #[error("mask has no hand pixels")]
    EmptyMask,
    #[error("invalid feature configuration: {0}")]
    Config(String),
}

/// A member failure inside [`build_bundle`], tagged with the feature name.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{feature}: {source}")]
pub struct BundleError {
    pub feature: &'static str,
    #[source]
    pub source: DescriptorError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub sc_points: usize,
    pub sc_radial_bins: usize,
    pub sc_angular_bins: usize,
    pub dt_bins: usize,
    pub hog_bins: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sc_points: DEFAULT_SC_POINTS,
            sc_radial_bins: 5,
            sc_angular_bins: 12,
            dt_bins: 32,
            hog_bins: 36,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), DescriptorError> {
        let bad = |msg: &str| Err(DescriptorError::Config(msg.to_string()));
        if self.sc_points < 4 {
            return bad("sc_points must be at least 4");
        }
        if self.sc_radial_bins < 2 || self.sc_angular_bins < 1 {
            return bad("shape context needs >= 2 radial and >= 1 angular bins");
        }
        if self.dt_bins < 1 || self.hog_bins < 1 {
            return bad("histograms need at least one bin");
        }
        Ok(())
    }

    /// Upper edges of the radial bins: log-spaced from the inner to the outer
    /// radius. The innermost bin also takes everything closer than the inner
    /// radius; the outermost takes everything farther than the outer radius.
    pub fn radial_edges(&self) -> Vec<f64> {
        let n = self.sc_radial_bins;
        let ratio = SC_OUTER_RADIUS / SC_INNER_RADIUS;
        (0..n)
            .map(|k| SC_INNER_RADIUS * ratio.powf(k as f64 / (n - 1) as f64))
            .collect()
    }
}

/// One unit-sum log-polar histogram per sampled contour point, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeContextSet {
    points: usize,
    radial_bins: usize,
    angular_bins: usize,
    data: Vec<f64>,
}

impl ShapeContextSet {
    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    pub fn bins(&self) -> usize {
        self.radial_bins * self.angular_bins
    }

    pub fn radial_bins(&self) -> usize {
        self.radial_bins
    }

    pub fn angular_bins(&self) -> usize {
        self.angular_bins
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.bins();
        &self.data[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.bins())
    }
}

fn mean_pairwise_distance(points: &[Point]) -> f64 {
    let n = points.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += points[i].dist(points[j]);
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

/// Flat bin index (`radial * angular_bins + angular`) of every ordered pair
/// `(i, j)`, `j != i`, row `i` listing the other points in order.
pub fn shape_context_bins(
    points: &[Point],
    cfg: &FeatureConfig,
) -> Result<Vec<Vec<usize>>, DescriptorError> {
    let n = points.len();
    if n < 4 {
        return Err(DescriptorError::TooFewPoints(n));
    }
    let mean = mean_pairwise_distance(points);
    if mean <= 0.0 || !mean.is_finite() {
        return Err(DescriptorError::DegeneratePoints);
    }
    let edges = cfg.radial_edges();
    let angular = cfg.sc_angular_bins;
    let sector = 2.0 * PI / angular as f64;
    let mut out = Vec::with_capacity(n);
    for (i, &p) in points.iter().enumerate() {
        let mut row = Vec::with_capacity(n - 1);
        for (j, &q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let r = p.dist(q) / mean;
            let rbin = edges
                .iter()
                .position(|&e| r < e)
                .unwrap_or(edges.len() - 1);
            let mut theta = (q.y - p.y).atan2(q.x - p.x);
            if theta < 0.0 {
                theta += 2.0 * PI;
            }
            // sector boundaries belong to the sector above them
            let abin = ((theta / sector + 1e-9).floor() as usize) % angular;
            row.push(rbin * angular + abin);
        }
        out.push(row);
    }
    Ok(out)
}

pub fn shape_contexts(
    sampled: &SampledContour,
    cfg: &FeatureConfig,
) -> Result<ShapeContextSet, DescriptorError> {
    let bins = shape_context_bins(&sampled.points, cfg)?;
    let n = sampled.points.len();
    let k = cfg.sc_radial_bins * cfg.sc_angular_bins;
    let mut data = vec![0.0; n * k];
    let mass = 1.0 / (n - 1) as f64;
    for (i, row) in bins.iter().enumerate() {
        for &b in row {
            data[i * k + b] += mass;
        }
    }
    Ok(ShapeContextSet {
        points: n,
        radial_bins: cfg.sc_radial_bins,
        angular_bins: cfg.sc_angular_bins,
        data,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtHistogram {
    pub bins: Vec<f64>,
    pub pixel_count: usize,
}

/// Histogram of in-mask contour distances over `[0, width / 2]`, unit sum.
/// Distances past the range land in the last bin.
pub fn dt_histogram(field: &DistanceField, bins: usize) -> Result<DtHistogram, DescriptorError> {
    let range = field.width() as f64 / 2.0;
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for d in field.domain_values() {
        let b = ((d / range * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(DescriptorError::EmptyField);
    }
    Ok(DtHistogram {
        bins: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        pixel_count: total,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationHistogram {
    pub bins: Vec<f64>,
}

/// Sobel gradient at `(x, y)` with edge replication.
fn sobel(mask: &BinaryMask, x: usize, y: usize) -> (f64, f64) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let px = |dx: i64, dy: i64| -> f64 {
        let xx = (x as i64 + dx).clamp(0, w - 1) as usize;
        let yy = (y as i64 + dy).clamp(0, h - 1) as usize;
        if mask.get(xx, yy) {
            1.0
        } else {
            0.0
        }
    };
    let gx = (px(1, -1) + 2.0 * px(1, 0) + px(1, 1)) - (px(-1, -1) + 2.0 * px(-1, 0) + px(-1, 1));
    let gy = (px(-1, 1) + 2.0 * px(0, 1) + px(1, 1)) - (px(-1, -1) + 2.0 * px(0, -1) + px(1, -1));
    (gx, gy)
}

/// Magnitude-weighted histogram of Sobel orientations folded to `[0, pi)`.
pub fn orientation_histogram(
    mask: &BinaryMask,
    bins: usize,
) -> Result<OrientationHistogram, DescriptorError> {
    if mask.is_empty() {
        return Err(DescriptorError::EmptyMask);
    }
    let mut acc = vec![0.0; bins];
    let mut total = 0.0;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let (gx, gy) = sobel(mask, x, y);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += PI;
            }
            if theta >= PI {
                theta -= PI;
            }
            let b = ((theta / PI * bins as f64 + 1e-9).floor() as usize) % bins;
            acc[b] += mag;
            total += mag;
        }
    }
    if total == 0.0 {
        return Err(DescriptorError::NoGradient);
    }
    acc.iter_mut().for_each(|v| *v /= total);
    Ok(OrientationHistogram { bins: acc })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuVector(pub [f64; 7]);

/// Normalized central moments `eta[p][q]` for `p + q` in 2..=3.
pub fn normalized_central_moments(mask: &BinaryMask) -> Result<[[f64; 4]; 4], DescriptorError> {
    let (mut m00, mut m10, mut m01) = (0.0, 0.0, 0.0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                m00 += 1.0;
                m10 += x as f64;
                m01 += y as f64;
            }
        }
    }
    if m00 == 0.0 {
        return Err(DescriptorError::EmptyMask);
    }
    let (cx, cy) = (m10 / m00, m01 / m00);
    let mut mu = [[0.0f64; 4]; 4];
    for y in 0..mask.height() {
        let dy = y as f64 - cy;
        for x in 0..mask.width() {
            if !mask.get(x, y) {
                continue;
            }
            let dx = x as f64 - cx;
            mu[2][0] += dx * dx;
            mu[1][1] += dx * dy;
            mu[0][2] += dy * dy;
            mu[3][0] += dx * dx * dx;
            mu[2][1] += dx * dx * dy;
            mu[1][2] += dx * dy * dy;
            mu[0][3] += dy * dy * dy;
        }
    }
    let mut eta = [[0.0f64; 4]; 4];
    for (p, row) in mu.iter().enumerate() {
        for (q, &v) in row.iter().enumerate() {
            if (2..=3).contains(&(p + q)) {
                eta[p][q] = v / m00.powf(1.0 + (p + q) as f64 / 2.0);
            }
        }
    }
    Ok(eta)
}

pub fn hu_from_eta(eta: &[[f64; 4]; 4]) -> HuVector {
    let (n20, n02, n11) = (eta[2][0], eta[0][2], eta[1][1]);
    let (n30, n03, n21, n12) = (eta[3][0], eta[0][3], eta[2][1], eta[1][2]);
    let a = n30 + n12;
    let b = n21 + n03;
    let c = n30 - 3.0 * n12;
    let d = 3.0 * n21 - n03;
    HuVector([
        n20 + n02,
        (n20 - n02).powi(2) + 4.0 * n11 * n11,
        c * c + d * d,
        a * a + b * b,
        c * a * (a * a - 3.0 * b * b) + d * b * (3.0 * a * a - b * b),
        (n20 - n02) * (a * a - b * b) + 4.0 * n11 * a * b,
        d * a * (a * a - 3.0 * b * b) - c * b * (3.0 * a * a - b * b),
    ])
}

pub fn hu_moments(mask: &BinaryMask) -> Result<HuVector, DescriptorError> {
    normalized_central_moments(mask).map(|eta| hu_from_eta(&eta))
}

/// Which members of a bundle to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FeatureSet {
    pub contour: bool,
    pub shape_context: bool,
    pub dt_histogram: bool,
    pub orientation: bool,
    pub hu: bool,
}

impl FeatureSet {
    pub const ALL: FeatureSet = FeatureSet {
        contour: true,
        shape_context: true,
        dt_histogram: true,
        orientation: true,
        hu: true,
    };

    pub fn union(self, other: FeatureSet) -> FeatureSet {
        FeatureSet {
            contour: self.contour || other.contour,
            shape_context: self.shape_context || other.shape_context,
            dt_histogram: self.dt_histogram || other.dt_histogram,
            orientation: self.orientation || other.orientation,
            hu: self.hu || other.hu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorBundle {
    pub mask: Arc<BinaryMask>,
    pub contour: Option<Contour>,
    pub sampled: Option<SampledContour>,
    pub sc: Option<ShapeContextSet>,
    pub dt_hist: Option<DtHistogram>,
    pub ohist: Option<OrientationHistogram>,
    pub hu: Option<HuVector>,
}

fn tag<T>(feature: &'static str, r: Result<T, DescriptorError>) -> Result<T, BundleError> {
    r.map_err(|source| BundleError { feature, source })
}

type ContourPart = (Contour, Option<(SampledContour, ShapeContextSet)>, Option<DtHistogram>);

/// Computes every member of the bundle.
pub fn build_bundle(mask: &BinaryMask, cfg: &FeatureConfig) -> Result<DescriptorBundle, BundleError> {
    build_features(mask, cfg, FeatureSet::ALL)
}

/// Computes the requested members. The independent features run as a
/// fork-join on the current rayon pool; assembly order and error precedence
/// are fixed, so the result does not depend on scheduling.
pub fn build_features(
    mask: &BinaryMask,
    cfg: &FeatureConfig,
    want: FeatureSet,
) -> Result<DescriptorBundle, BundleError> {
    tag("config", cfg.validate())?;
    let need_contour = want.contour || want.shape_context || want.dt_histogram;

    let contour_part = || -> Option<Result<ContourPart, BundleError>> {
        if !need_contour {
            return None;
        }
        Some((|| {
            let contour = tag("contour", extract_contour(mask).map_err(Into::into))?;
            let (sc, dt) = rayon::join(
                || -> Option<Result<_, BundleError>> {
                    want.shape_context.then(|| {
                        let sampled = tag(
                            "shape_contexts",
                            resample_contour(&contour, cfg.sc_points).map_err(Into::into),
                        )?;
                        let sc = tag("shape_contexts", shape_contexts(&sampled, cfg))?;
                        Ok((sampled, sc))
                    })
                },
                || -> Option<Result<_, BundleError>> {
                    want.dt_histogram.then(|| {
                        let field = tag(
                            "dt_histogram",
                            distance_transform(mask, &contour).map_err(Into::into),
                        )?;
                        tag("dt_histogram", dt_histogram(&field, cfg.dt_bins))
                    })
                },
            );
            Ok((contour, sc.transpose()?, dt.transpose()?))
        })())
    };
    let appearance_part = || {
        rayon::join(
            || {
                want.orientation
                    .then(|| tag("orientation_histogram", orientation_histogram(mask, cfg.hog_bins)))
            },
            || want.hu.then(|| tag("hu_moments", hu_moments(mask))),
        )
    };
    let (contour_res, (ohist, hu)) = rayon::join(contour_part, appearance_part);

    let (contour, sc_part, dt_hist) = match contour_res.transpose()? {
        Some((c, sc, dt)) => (Some(c), sc, dt),
        None => (None, None, None),
    };
    let ohist = ohist.transpose()?;
    let hu = hu.transpose()?;
    let (sampled, sc) = match sc_part {
        Some((s, h)) => (Some(s), Some(h)),
        None => (None, None),
    };
    Ok(DescriptorBundle {
        mask: Arc::new(mask.clone()),
        contour: want.contour.then_some(contour).flatten(),
        sampled,
        sc,
        dt_hist,
        ohist,
        hu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_points() -> Vec<Point> {
        vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ]
    }

    #[test]
    fn radial_edges_double() {
        let e = FeatureConfig::default().radial_edges();
        let expect = [0.125, 0.25, 0.5, 1.0, 2.0];
        for (a, b) in e.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_square_contexts() {
        // mean pairwise distance (4 + 2 sqrt 2) / 6 ~ 1.138: sides map to
        // r ~ 0.879 (bin 3) and the diagonal to r ~ 1.243 (bin 4).
        let cfg = FeatureConfig::default();
        let bins = shape_context_bins(&square_points(), &cfg).unwrap();
        // from (0,0): (1,0) at 0 rad, (1,1) at pi/4, (0,1) at pi/2
        assert_eq!(bins[0], vec![3 * 12, 4 * 12 + 1, 3 * 12 + 3]);
        // from (1,1): (0,0) at 5pi/4, (1,0) at 3pi/2, (0,1) at pi
        assert_eq!(bins[2], vec![4 * 12 + 7, 3 * 12 + 9, 3 * 12 + 6]);
        let sampled = SampledContour {
            points: square_points(),
            source_length: 4,
        };
        let sc = shape_contexts(&sampled, &cfg).unwrap();
        for row in sc.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let radial3: f64 = row[36..48].iter().sum();
            let radial4: f64 = row[48..60].iter().sum();
            assert!((radial3 - 2.0 / 3.0).abs() < 1e-12);
            assert!((radial4 - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let pts = vec![Point::new(2.0, 2.0); 5];
        assert_eq!(
            shape_context_bins(&pts, &FeatureConfig::default()),
            Err(DescriptorError::DegeneratePoints)
        );
        assert_eq!(
            shape_context_bins(&pts[..3], &FeatureConfig::default()),
            Err(DescriptorError::TooFewPoints(3))
        );
    }

    fn field_of(mask: &BinaryMask) -> DistanceField {
        let c = extract_contour(mask).unwrap();
        distance_transform(mask, &c).unwrap()
    }

    #[test]
    fn dt_histogram_zero_distances_in_first_bin() {
        // a 2-pixel-thick bar is all contour
        let m = BinaryMask::filled(100, 2, true).unwrap();
        let h = dt_histogram(&field_of(&m), 32).unwrap();
        assert_eq!(h.bins[0], 1.0);
        assert_eq!(h.pixel_count, 200);
    }

    #[test]
    fn dt_histogram_binning_and_clamp() {
        // 101 wide, so the range is 50.5 and 1/32 of it is ~1.578
        let m = BinaryMask::filled(101, 101, true).unwrap();
        let f = field_of(&m);
        let h = dt_histogram(&f, 32).unwrap();
        assert!((h.bins.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // the centre pixel is 50 from the border: bin floor(50 / 50.5 * 32) = 31
        assert!(h.bins[31] > 0.0);
        let m = BinaryMask::filled(8, 8, true).unwrap();
        let h = dt_histogram(&field_of(&m), 4).unwrap();
        // range 4: distance 0 -> bin 0, 1 -> bin 1, 2 -> bin 2, 3 -> bin 3
        assert_eq!(h.bins, vec![28.0 / 64.0, 20.0 / 64.0, 12.0 / 64.0, 4.0 / 64.0]);
    }

    #[test]
    fn half_plane_orientation_is_horizontal_gradient() {
        let m = BinaryMask::from_fn(20, 20, |x, _| x >= 10).unwrap();
        let h = orientation_histogram(&m, 36).unwrap();
        assert_eq!(h.bins[0], 1.0);
        assert!(h.bins[1..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn uniform_image_has_no_gradient() {
        let m = BinaryMask::filled(10, 10, true).unwrap();
        assert_eq!(orientation_histogram(&m, 36), Err(DescriptorError::NoGradient));
        let e = BinaryMask::filled(10, 10, false).unwrap();
        assert_eq!(orientation_histogram(&e, 36), Err(DescriptorError::EmptyMask));
    }

    #[test]
    fn orientation_quarter_turn_shifts_half_the_bins() {
        let m = BinaryMask::from_fn(40, 30, |x, y| {
            let (dx, dy) = (x as f64 - 15.0, y as f64 - 14.0);
            dx * dx / 140.0 + dy * dy / 60.0 <= 1.0 || ((20..36).contains(&x) && (10..14).contains(&y))
        })
        .unwrap();
        let a = orientation_histogram(&m, 36).unwrap();
        let b = orientation_histogram(&m.rotate90(), 36).unwrap();
        let l1: f64 = (0..36).map(|i| (a.bins[i] - b.bins[(i + 18) % 36]).abs()).sum();
        assert!(l1 < 0.05, "L1 = {l1}");
    }

    #[test]
    fn hu_of_empty_mask_errors() {
        let m = BinaryMask::filled(3, 3, false).unwrap();
        assert_eq!(hu_moments(&m), Err(DescriptorError::EmptyMask));
    }

    #[test]
    fn hu_mirror_flips_phi7() {
        let m = BinaryMask::from_fn(30, 30, |x, y| (x < 20 && y < 6) || (x < 5 && y < 25) || (x + y < 12)).unwrap();
        let a = hu_moments(&m).unwrap().0;
        let b = hu_moments(&m.flip_horizontal()).unwrap().0;
        for k in 0..6 {
            assert!((a[k] - b[k]).abs() <= 1e-6 * a[k].abs().max(1e-12), "phi{}", k + 1);
        }
        assert!(a[6] != 0.0);
        assert!((a[6] + b[6]).abs() <= 1e-6 * a[6].abs());
    }

    #[test]
    fn bundle_has_every_member() {
        let m = BinaryMask::from_fn(40, 50, |x, y| {
            let (dx, dy) = (x as f64 - 20.0, y as f64 - 30.0);
            dx * dx + dy * dy < 300.0 || ((15..22).contains(&x) && y < 30)
        })
        .unwrap();
        let b = build_bundle(&m, &FeatureConfig::default()).unwrap();
        assert!(b.contour.is_some());
        assert_eq!(b.sampled.as_ref().unwrap().len(), 20);
        assert_eq!(b.sc.as_ref().unwrap().len(), 20);
        assert!(b.dt_hist.is_some() && b.ohist.is_some() && b.hu.is_some());
    }

    #[test]
    fn bundle_error_names_the_feature() {
        let m = BinaryMask::filled(20, 20, true).unwrap();
        let err = build_bundle(&m, &FeatureConfig::default()).unwrap_err();
        assert_eq!(err.feature, "orientation_histogram");
        assert_eq!(err.source, DescriptorError::NoGradient);
    }

    #[test]
    fn partial_feature_sets() {
        let m = BinaryMask::from_fn(20, 20, |x, y| x + y < 25).unwrap();
        let want = FeatureSet {
            hu: true,
            ..FeatureSet::default()
        };
        let b = build_features(&m, &FeatureConfig::default(), want).unwrap();
        assert!(b.hu.is_some());
        assert!(b.contour.is_none() && b.sc.is_none() && b.dt_hist.is_none() && b.ohist.is_none());
    }
}
