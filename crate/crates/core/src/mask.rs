//! Binary hand masks, wrist annotations and the wrist-line normalization
//! pipeline (rotate, cut below the wrist, crop, rescale to a fixed width).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::ops::Deref;
use std::path::Path;

use thiserror::Error;

/// Default normalized width in pixels.
pub const DEFAULT_TARGET_WIDTH: usize = 100;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("image has zero area")]
    ZeroArea,
    #[error("pixel buffer length {got} does not match {width}x{height}")]
    BufferSize { width: usize, height: usize, got: usize },
    #[error("wrist csv parse failure: {0}")]
    Parse(String),
    #[error("duplicate wrist annotation id `{0}`")]
    DuplicateId(String),
    #[error("degenerate wrist annotation `{0}`: left and right points coincide")]
    DegenerateWrist(String),
    #[error("wrist point ({x}, {y}) outside {width}x{height} image")]
    WristOutOfBounds { x: f64, y: f64, width: usize, height: usize },
    #[error("mask has no hand pixels")]
    EmptyMask,
    #[error("no hand pixels remain above the wrist line")]
    EmptyAfterWristCut,
    #[error("target width {0} is below the minimum of 8")]
    TargetWidth(usize),
}

fn io_err(path: &Path, source: std::io::Error) -> MaskError {
    MaskError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Row-major binary raster; `true` marks a hand pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::ZeroArea);
        }
        if pixels.len() != width * height {
            return Err(MaskError::BufferSize {
                width,
                height,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self, MaskError> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds a mask by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self, MaskError> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    /// Bounds-checked lookup with signed coordinates; outside is background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return false;
        }
        self.pixels[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.iter().any(|&p| p)
    }

    /// Tight bounding box of the hand pixels as `(x0, y0, x1, y1)`, inclusive.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bbox
    }

    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryMask {
        let w = x1 - x0 + 1;
        let h = y1 - y0 + 1;
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..=y1 {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..=y * self.width + x1]);
        }
        BinaryMask {
            width: w,
            height: h,
            pixels,
        }
    }

    /// Mirror image about the vertical axis.
    pub fn flip_horizontal(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
            .expect("dimensions already validated")
    }

    /// Quarter turn; `(x, y)` moves to `(height - 1 - y, x)`.
    pub fn rotate90(&self) -> BinaryMask {
        let (w, h) = (self.height, self.width);
        BinaryMask::from_fn(w, h, |x, y| self.get(y, self.height - 1 - x))
            .expect("dimensions already validated")
    }

    /// Places the mask on a larger canvas at offset `(dx, dy)`.
    pub fn translated(&self, dx: usize, dy: usize, width: usize, height: usize) -> BinaryMask {
        assert!(dx + self.width <= width && dy + self.height <= height);
        BinaryMask::from_fn(width, height, |x, y| {
            x >= dx && y >= dy && x < dx + self.width && y < dy + self.height && self.get(x - dx, y - dy)
        })
        .expect("dimensions already validated")
    }
}

/// Loads a P5 (binary) or P2 (ASCII) PGM; samples at or above 128/255 of
/// the declared maximum become hand pixels.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask, MaskError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<BinaryMask, MaskError> {
    let mut cursor = 0usize;
    let magic = next_token(bytes, &mut cursor)
        .ok_or_else(|| MaskError::MalformedHeader("missing magic".into()))?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        other => {
            return Err(MaskError::MalformedHeader(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        let tok = next_token(bytes, &mut cursor)
            .ok_or_else(|| MaskError::MalformedHeader(format!("missing {name}")))?;
        *slot = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MaskError::MalformedHeader(format!("bad {name}")))?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return Err(MaskError::ZeroArea);
    }
    if maxval == 0 || maxval > 65535 {
        return Err(MaskError::MalformedHeader(format!("maxval {maxval} out of range")));
    }
    // 128 on the 8-bit scale, rescaled to the declared depth.
    let threshold = (128 * maxval).div_ceil(255);
    let n = width
        .checked_mul(height)
        .ok_or_else(|| MaskError::MalformedHeader("dimensions overflow".into()))?;
    let mut pixels = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        cursor += 1;
        let depth = if maxval > 255 { 2 } else { 1 };
        let raster = bytes
            .get(cursor..cursor + n * depth)
            .ok_or_else(|| MaskError::MalformedHeader("raster truncated".into()))?;
        if depth == 1 {
            pixels.extend(raster.iter().map(|&v| v as usize >= threshold));
        } else {
            pixels.extend(
                raster
                    .chunks_exact(2)
                    .map(|c| (((c[0] as usize) << 8) | c[1] as usize) >= threshold),
            );
        }
    } else {
        for _ in 0..n {
            let tok = next_token(bytes, &mut cursor)
                .ok_or_else(|| MaskError::MalformedHeader("raster truncated".into()))?;
            let v: usize = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| MaskError::MalformedHeader("bad sample".into()))?;
            pixels.push(v >= threshold);
        }
    }
    BinaryMask::new(width, height, pixels)
}

/// Whitespace-delimited header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], cursor: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    (*cursor > start).then(|| &bytes[start..*cursor])
}

pub fn encode_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.pixels.iter().map(|&p| if p { 255u8 } else { 0 }));
    out
}

/// Writes a P5 PGM with hand pixels at 255 and background at 0.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<(), MaskError> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&encode_pgm(mask)).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    #[inline]
    pub fn dist_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WristAnnotation {
    pub left: Point,
    pub right: Point,
}

impl WristAnnotation {
    pub fn new(left: Point, right: Point) -> Self {
        Self { left, right }
    }

    pub fn midpoint(&self) -> Point {
        Point::new((self.left.x + self.right.x) / 2.0, (self.left.y + self.right.y) / 2.0)
    }
}

#[derive(Debug, serde::Deserialize)]
struct WristRow {
    id: String,
    lx: i64,
    ly: i64,
    rx: i64,
    ry: i64,
}

/// Reads the `id,lx,ly,rx,ry` wrist sidecar. Lines starting with `#` are ignored.
pub fn load_wrist_annotations(
    path: impl AsRef<Path>,
) -> Result<BTreeMap<String, WristAnnotation>, MaskError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_wrist_csv(&text)
}

pub fn parse_wrist_csv(text: &str) -> Result<BTreeMap<String, WristAnnotation>, MaskError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| MaskError::Parse(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "lx", "ly", "rx", "ry"] {
        return Err(MaskError::Parse(format!(
            "expected header id,lx,ly,rx,ry, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<WristRow>() {
        let row = row.map_err(|e| MaskError::Parse(e.to_string()))?;
        if (row.lx, row.ly) == (row.rx, row.ry) {
            return Err(MaskError::DegenerateWrist(row.id));
        }
        if out.contains_key(&row.id) {
            return Err(MaskError::DuplicateId(row.id));
        }
        let ann = WristAnnotation::new(
            Point::new(row.lx as f64, row.ly as f64),
            Point::new(row.rx as f64, row.ry as f64),
        );
        out.insert(row.id, ann);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormalizationConfig {
    pub target_width: usize,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            target_width: DEFAULT_TARGET_WIDTH,
        }
    }
}

/// A mask in the canonical frame: wrist horizontal at the bottom edge,
/// fingers up, width fixed by [`NormalizationConfig::target_width`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMask {
    pub mask: BinaryMask,
    pub source_id: String,
    /// Counter-clockwise angle (radians, image axes) applied about the wrist
    /// midpoint, wrapped to `(-pi, pi]`.
    pub rotation_applied: f64,
    pub scale_applied: f64,
}

impl NormalizedMask {
    /// Wraps a mask that is already in the canonical frame.
    pub fn from_canonical(mask: BinaryMask, source_id: impl Into<String>) -> Self {
        Self {
            mask,
            source_id: source_id.into(),
            rotation_applied: 0.0,
            scale_applied: 1.0,
        }
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }
}

impl Deref for NormalizedMask {
    type Target = BinaryMask;

    fn deref(&self) -> &BinaryMask {
        &self.mask
    }
}

/// Rotates `p` by `angle` about `center`, in image coordinates
/// (x right, y down): `(x, y) -> (x cos - y sin, x sin + y cos)`.
pub fn rotate_point(p: Point, center: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    let dx = p.x - center.x;
    let dy = p.y - center.y;
    Point::new(center.x + dx * c - dy * s, center.y + dx * s + dy * c)
}

fn wrap_angle(mut a: f64) -> f64 {
    while a <= -PI {
        a += 2.0 * PI;
    }
    while a > PI {
        a -= 2.0 * PI;
    }
    a
}

pub fn normalize(
    mask: &BinaryMask,
    wrist: &WristAnnotation,
    cfg: &NormalizationConfig,
) -> Result<NormalizedMask, MaskError> {
    if cfg.target_width < 8 {
        return Err(MaskError::TargetWidth(cfg.target_width));
    }
    for p in [wrist.left, wrist.right] {
        if p.x < 0.0 || p.y < 0.0 || p.x > (mask.width - 1) as f64 || p.y > (mask.height - 1) as f64 {
            return Err(MaskError::WristOutOfBounds {
                x: p.x,
                y: p.y,
                width: mask.width,
                height: mask.height,
            });
        }
    }
    if wrist.left == wrist.right {
        return Err(MaskError::DegenerateWrist(String::new()));
    }
    let hand: Vec<Point> = (0..mask.height)
        .flat_map(|y| (0..mask.width).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .map(|(x, y)| Point::new(x as f64, y as f64))
        .collect();
    if hand.is_empty() {
        return Err(MaskError::EmptyMask);
    }

    let mid = wrist.midpoint();
    let n = hand.len() as f64;
    let centroid = Point::new(
        hand.iter().map(|p| p.x).sum::<f64>() / n,
        hand.iter().map(|p| p.y).sum::<f64>() / n,
    );
    // Level the wrist segment, then flip if the hand ended up below it.
    let heading = (wrist.right.y - wrist.left.y).atan2(wrist.right.x - wrist.left.x);
    let mut angle = wrap_angle(-heading);
    if rotate_point(centroid, mid, angle).y > mid.y {
        angle = wrap_angle(angle + PI);
    }
    // Snap near-quarter turns so axis-aligned inputs resample exactly.
    let quarter = (angle / (PI / 2.0)).round();
    if (angle - quarter * PI / 2.0).abs() < 1e-12 {
        angle = wrap_angle(quarter * PI / 2.0);
    }

    // Output grid: integer positions in the rotated frame, wrist line at y = mid.y.
    let (mut x_lo, mut x_hi, mut y_lo) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for &p in &hand {
        let q = rotate_point(p, mid, angle);
        x_lo = x_lo.min(q.x);
        x_hi = x_hi.max(q.x);
        y_lo = y_lo.min(q.y);
    }
    let x0 = x_lo.floor() as i64 - 1;
    let x1 = x_hi.ceil() as i64 + 1;
    let y0 = y_lo.floor() as i64 - 1;
    // rows strictly below the wrist line are discarded
    let y1 = (mid.y + 1e-9).floor() as i64;
    if y1 < y0 {
        return Err(MaskError::EmptyAfterWristCut);
    }
    let rw = (x1 - x0 + 1) as usize;
    let rh = (y1 - y0 + 1) as usize;
    let rotated = BinaryMask::from_fn(rw, rh, |i, j| {
        let q = Point::new((x0 + i as i64) as f64, (y0 + j as i64) as f64);
        let p = rotate_point(q, mid, -angle);
        mask.get_signed(p.x.round() as i64, p.y.round() as i64)
    })?;

    let (bx0, by0, bx1, by1) = rotated.bounding_box().ok_or(MaskError::EmptyAfterWristCut)?;
    let cropped = rotated.crop(bx0, by0, bx1, by1);

    let scale = cfg.target_width as f64 / cropped.width as f64;
    let out_w = cfg.target_width;
    let out_h = ((cropped.height as f64 * scale).round() as usize).max(1);
    let scaled = resample_nearest(&cropped, out_w, out_h);
    Ok(NormalizedMask {
        mask: scaled,
        source_id: String::new(),
        rotation_applied: angle,
        scale_applied: scale,
    })
}

/// Corner-aligned nearest-neighbour resampling: the first and last rows and
/// columns of the output sample the first and last of the source.
fn resample_nearest(src: &BinaryMask, out_w: usize, out_h: usize) -> BinaryMask {
    let map = |i: usize, n_out: usize, n_src: usize| -> usize {
        if n_out == 1 {
            (n_src - 1) / 2
        } else {
            ((i as f64 * (n_src - 1) as f64 / (n_out - 1) as f64).round() as usize).min(n_src - 1)
        }
    };
    let cols: Vec<usize> = (0..out_w).map(|i| map(i, out_w, src.width)).collect();
    BinaryMask::from_fn(out_w, out_h, |x, y| {
        // bottom row always samples the wrist row
        let sy = if y + 1 == out_h {
            src.height - 1
        } else {
            map(y, out_h, src.height)
        };
        src.get(cols[x], sy)
    })
    .expect("non-zero output dimensions")
}
