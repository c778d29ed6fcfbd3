//! Contour extraction (Moore-neighbour tracing), arc-length resampling and
//! the exact Euclidean distance transform measured from the contour.

use thiserror::Error;

use crate::mask::{BinaryMask, Point};

/// Default number of contour samples used for shape-context matching.
pub const DEFAULT_SC_POINTS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("mask has no hand pixels")]
    EmptyMask,
    #[error("contour has {0} points, at least 3 are required")]
    TooSmall(usize),
    #[error("cannot resample {points} points into {count}: both must be at least 3")]
    TooFewPoints { points: usize, count: usize },
    #[error("contour does not belong to a {width}x{height} mask")]
    ContourOutOfBounds { width: usize, height: usize },
}

/// Closed boundary of the largest hand component, counter-clockwise on screen.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    points: Vec<Point>,
}

impl Contour {
    pub fn new(points: Vec<Point>) -> Result<Self, GeometryError> {
        if points.len() < 3 {
            return Err(GeometryError::TooSmall(points.len()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Length of the closed polyline.
    pub fn perimeter(&self) -> f64 {
        let n = self.points.len();
        (0..n).map(|i| self.points[i].dist(self.points[(i + 1) % n])).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledContour {
    pub points: Vec<Point>,
    pub source_length: usize,
}

impl SampledContour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

// Clockwise on screen (y down), starting west.
const NEIGHBOURS: [(i64, i64); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

fn direction_of(dx: i64, dy: i64) -> usize {
    NEIGHBOURS
        .iter()
        .position(|&d| d == (dx, dy))
        .expect("offset is a unit neighbour")
}

/// Labels 8-connected components; returns the pixel set of the largest one
/// (ties resolved by raster order of the first pixel).
fn largest_component(mask: &BinaryMask) -> Option<BinaryMask> {
    let (w, h) = (mask.width(), mask.height());
    let mut label = vec![0u32; w * h];
    let mut best: Option<(usize, u32)> = None;
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.pixels()[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        let mut size = 0usize;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for (dx, dy) in NEIGHBOURS {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_signed(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if label[j] == 0 {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
        if best.is_none_or(|(s, _)| size > s) {
            best = Some((size, next));
        }
    }
    let (_, keep) = best?;
    let pixels = label.iter().map(|&l| l == keep).collect();
    Some(BinaryMask::new(w, h, pixels).expect("same dimensions"))
}

/// Traces the outer boundary of the largest 8-connected hand component using
/// Moore-neighbour tracing with Jacob's stopping criterion. Holes are ignored.
pub fn extract_contour(mask: &BinaryMask) -> Result<Contour, GeometryError> {
    let comp = largest_component(mask).ok_or(GeometryError::EmptyMask)?;
    let w = comp.width();
    let first = comp
        .pixels()
        .iter()
        .position(|&p| p)
        .ok_or(GeometryError::EmptyMask)?;
    let start = ((first % w) as i64, (first / w) as i64);

    // Jacob's criterion: stop once the start pixel is left again by the same
    // move that opened the trace.
    let mut trace = vec![start];
    let mut current = start;
    // raster order guarantees the west neighbour is background
    let mut back = 0usize;
    let mut first_move = None;
    loop {
        let found = (1..=8).map(|k| ((back + k) % 8, (back + k - 1) % 8)).find(|&(d, _)| {
            let (dx, dy) = NEIGHBOURS[d];
            comp.get_signed(current.0 + dx, current.1 + dy)
        });
        let Some((dir, prev)) = found else {
            // isolated pixel
            break;
        };
        if current == start {
            match first_move {
                None => first_move = Some(dir),
                Some(d) if d == dir => {
                    trace.pop();
                    break;
                }
                Some(_) => {}
            }
        }
        let (dx, dy) = NEIGHBOURS[dir];
        let next = (current.0 + dx, current.1 + dy);
        // new backtrack: the last background cell examined, seen from `next`
        let (px, py) = NEIGHBOURS[prev];
        back = direction_of(current.0 + px - next.0, current.1 + py - next.1);
        trace.push(next);
        current = next;
        assert!(
            trace.len() <= 4 * comp.width() * comp.height() + 8,
            "Moore tracing failed to terminate"
        );
    }

    let mut points: Vec<Point> = trace
        .into_iter()
        .map(|(x, y)| Point::new(x as f64, y as f64))
        .collect();
    if points.len() < 3 {
        return Err(GeometryError::TooSmall(points.len()));
    }
    // Tracing runs clockwise on screen; shoelace > 0 in y-down axes means clockwise.
    if signed_area(&points) > 0.0 {
        points[1..].reverse();
    }
    Contour::new(points)
}

/// Shoelace area in raw coordinates (positive = clockwise on screen).
pub fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

/// Resamples the closed polyline at `count` uniform arc-length positions,
/// starting from the point with minimal y (then minimal x).
pub fn resample_contour(contour: &Contour, count: usize) -> Result<SampledContour, GeometryError> {
    let pts = contour.points();
    if pts.len() < 3 || count < 3 {
        return Err(GeometryError::TooFewPoints {
            points: pts.len(),
            count,
        });
    }
    let n = pts.len();
    let start = (0..n)
        .min_by(|&a, &b| {
            pts[a]
                .y
                .total_cmp(&pts[b].y)
                .then(pts[a].x.total_cmp(&pts[b].x))
        })
        .expect("non-empty");
    let ring: Vec<Point> = (0..=n).map(|i| pts[(start + i) % n]).collect();
    let mut cumulative = Vec::with_capacity(n + 1);
    cumulative.push(0.0);
    for i in 0..n {
        let l = cumulative[i] + ring[i].dist(ring[i + 1]);
        cumulative.push(l);
    }
    let perimeter = cumulative[n];
    if perimeter == 0.0 {
        return Err(GeometryError::TooFewPoints { points: 1, count });
    }

    let mut out = Vec::with_capacity(count);
    let mut seg = 0usize;
    for k in 0..count {
        let s = perimeter * k as f64 / count as f64;
        while seg + 1 < n && cumulative[seg + 1] <= s {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 { (s - cumulative[seg]) / len } else { 0.0 };
        let (a, b) = (ring[seg], ring[seg + 1]);
        out.push(if t == 0.0 {
            a
        } else {
            Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
        });
    }
    Ok(SampledContour {
        points: out,
        source_length: n,
    })
}

/// Per-pixel Euclidean distance to the nearest contour pixel, defined on
/// hand pixels only.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    values: Vec<f64>,
    in_domain: Vec<bool>,
}

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Distance at `(x, y)`; `None` outside the mask.
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.in_domain[i].then_some(self.values[i])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn in_domain(&self) -> &[bool] {
        &self.in_domain
    }

    /// Distances of all in-domain pixels, row-major.
    pub fn domain_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.in_domain)
            .filter_map(|(&v, &d)| d.then_some(v))
    }
}

/// Exact EDT from the contour pixels: separable squared-distance transform
/// (lower envelope of parabolas, one pass per axis), then square root.
pub fn distance_transform(mask: &BinaryMask, contour: &Contour) -> Result<DistanceField, GeometryError> {
    let (w, h) = (mask.width(), mask.height());
    if mask.is_empty() || contour.is_empty() {
        return Err(GeometryError::EmptyMask);
    }
    let big = 2.0 * ((w * w + h * h) as f64) + 1.0;
    let mut grid = vec![big; w * h];
    for p in contour.points() {
        let (x, y) = (p.x.round(), p.y.round());
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            return Err(GeometryError::ContourOutOfBounds { width: w, height: h });
        }
        grid[y as usize * w + x as usize] = 0.0;
    }

    let mut scratch = EnvelopeScratch::new(w.max(h));
    let mut line = vec![0.0; h.max(w)];
    for x in 0..w {
        for y in 0..h {
            line[y] = grid[y * w + x];
        }
        scratch.transform(&mut line[..h]);
        for y in 0..h {
            grid[y * w + x] = line[y];
        }
    }
    for y in 0..h {
        scratch.transform(&mut grid[y * w..(y + 1) * w]);
    }

    let in_domain = mask.pixels().to_vec();
    let values = grid
        .iter()
        .zip(&in_domain)
        .map(|(&d2, &inside)| if inside { d2.sqrt() } else { 0.0 })
        .collect();
    Ok(DistanceField {
        width: w,
        height: h,
        values,
        in_domain,
    })
}

struct EnvelopeScratch {
    f: Vec<f64>,
    v: Vec<usize>,
    z: Vec<f64>,
}

impl EnvelopeScratch {
    fn new(n: usize) -> Self {
        Self {
            f: vec![0.0; n],
            v: vec![0; n],
            z: vec![0.0; n + 1],
        }
    }

    /// 1-D squared distance transform of a sampled function, in place.
    fn transform(&mut self, d: &mut [f64]) {
        let n = d.len();
        self.f[..n].copy_from_slice(d);
        let (f, v, z) = (&self.f, &mut self.v, &mut self.z);
        let mut k = 0usize;
        v[0] = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for q in 1..n {
            let fq = f[q] + (q * q) as f64;
            loop {
                let p = v[k];
                let s = (fq - (f[p] + (p * p) as f64)) / (2 * (q - p)) as f64;
                if s <= z[k] && k > 0 {
                    k -= 1;
                    continue;
                }
                if s <= z[k] {
                    // k == 0 and the new parabola dominates everywhere
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                } else {
                    k += 1;
                    v[k] = q;
                    z[k] = s;
                    z[k + 1] = f64::INFINITY;
                }
                break;
            }
        }
        let mut k = 0usize;
        for (q, out) in d.iter_mut().enumerate() {
            while z[k + 1] < q as f64 {
                k += 1;
            }
            let p = v[k];
            let diff = q as f64 - p as f64;
            *out = diff * diff + f[p];
        }
    }
}
