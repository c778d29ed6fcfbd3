//! Seeded synthetic hand silhouettes.
//!
//! Each class is a palm ellipse with a chosen subset of capsule fingers
//! extended; instances perturb the pose (rotation, scale, finger splay and
//! length) and roughen the boundary with smooth noise. Every instance draws
//! from its own ChaCha stream, so output does not depend on render order.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{write_manifest, ManifestEntry};
use crate::mask::{encode_pgm, rotate_point, BinaryMask, Point, WristAnnotation};

pub const CANVAS_WIDTH: usize = 200;
pub const CANVAS_HEIGHT: usize = 240;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Thumb, index, middle, ring, pinky.
pub const FINGER_NAMES: [&str; 5] = ["thumb", "index", "middle", "ring", "pinky"];

#[derive(Debug, Clone, PartialEq)]
pub struct GestureSpec {
    pub class_id: String,
    pub extended: [bool; 5],
    /// Extra splay (degrees) added to each extended finger's base direction,
    /// scaled by its distance from the middle finger.
    pub spread_deg: f64,
    pub palm_rx: f64,
    pub palm_ry: f64,
    pub finger_length: [f64; 5],
    pub finger_radius: [f64; 5],
    /// Base direction of each finger, degrees clockwise from straight up.
    pub finger_angle_deg: [f64; 5],
}

const CURATED: [([bool; 5], f64); 15] = [
    ([false, false, false, false, false], 0.0),
    ([false, true, false, false, false], 0.0),
    ([false, true, true, false, false], 12.0),
    ([false, true, true, true, false], 0.0),
    ([false, true, true, true, true], 0.0),
    ([true, true, true, true, true], 0.0),
    ([true, false, false, false, false], 0.0),
    ([true, true, false, false, false], 0.0),
    ([false, false, false, false, true], 0.0),
    ([false, true, false, false, true], 0.0),
    ([true, false, false, false, true], 0.0),
    ([false, true, true, false, false], 0.0),
    ([true, true, true, false, false], 0.0),
    ([false, false, true, false, false], 0.0),
    ([true, true, true, true, true], 12.0),
];

impl GestureSpec {
    /// Prototype for class `index`: the curated 15 first, then the remaining
    /// finger subsets with and without spread.
    pub fn prototype(index: usize) -> Option<GestureSpec> {
        let (extended, spread) = if index < CURATED.len() {
            CURATED[index]
        } else {
            let mut extra = (0..64u32)
                .map(|k| {
                    let ext = std::array::from_fn(|f| k & (1 << f) != 0);
                    (ext, if k >= 32 { 12.0 } else { 0.0 })
                })
                .filter(|c| !CURATED.contains(c));
            extra.nth(index - CURATED.len())?
        };
        Some(GestureSpec {
            class_id: format!("g{index:02}"),
            extended,
            spread_deg: spread,
            palm_rx: 28.0,
            palm_ry: 32.0,
            finger_length: [34.0, 46.0, 50.0, 46.0, 36.0],
            finger_radius: [8.0, 6.5, 6.8, 6.5, 5.6],
            finger_angle_deg: [-62.0, -22.0, -5.0, 11.0, 27.0],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    /// Whole-hand rotation, +/- degrees.
    pub rotation_deg: f64,
    /// Uniform scale, +/- percent.
    pub scale_pct: f64,
    /// Amplitude of smooth boundary noise, pixels.
    pub noise_px: f64,
    /// Per-finger splay, +/- degrees.
    pub splay_deg: f64,
    /// Per-finger length, +/- percent.
    pub length_pct: f64,
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        rotation_deg: 0.0,
        scale_pct: 0.0,
        noise_px: 0.0,
        splay_deg: 0.0,
        length_pct: 0.0,
    };

    /// Jitter preset scaled by `level`.
    pub fn level(level: f64) -> Jitter {
        Jitter {
            rotation_deg: 15.0 * level,
            scale_pct: 10.0 * level,
            noise_px: 2.0 * level,
            splay_deg: 12.0 * level,
            length_pct: 25.0 * level,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Jitter::NONE
    }
}

/// Calibrated default jitter level (see `tests/calibration.rs`).
pub const DEFAULT_JITTER_LEVEL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
    pub jitter: Jitter,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 15,
            per_class: 30,
            seed: 7,
            jitter: Jitter::level(DEFAULT_JITTER_LEVEL),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.classes < 2 || self.per_class < 2 {
            return Err(SynthError::InvalidConfig(
                "classes and per_class must both be at least 2".into(),
            ));
        }
        if GestureSpec::prototype(self.classes - 1).is_none() {
            return Err(SynthError::InvalidConfig(format!(
                "at most {} distinct classes are available",
                (0..).take_while(|&i| GestureSpec::prototype(i).is_some()).count()
            )));
        }
        let j = &self.jitter;
        let fields = [j.rotation_deg, j.scale_pct, j.noise_px, j.splay_deg, j.length_pct];
        if fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SynthError::InvalidConfig("jitter values must be finite and >= 0".into()));
        }
        if j.rotation_deg > 60.0 || j.scale_pct > 30.0 || j.noise_px > 6.0 || j.length_pct > 60.0 {
            return Err(SynthError::InvalidConfig("jitter exceeds the canvas budget".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub class_id: String,
    pub mask: BinaryMask,
    pub wrist: WristAnnotation,
}

struct Capsule {
    a: Point,
    b: Point,
    r: f64,
}

impl Capsule {
    fn sdf(&self, p: Point) -> f64 {
        let (abx, aby) = (self.b.x - self.a.x, self.b.y - self.a.y);
        let (apx, apy) = (p.x - self.a.x, p.y - self.a.y);
        let t = ((apx * abx + apy * aby) / (abx * abx + aby * aby)).clamp(0.0, 1.0);
        Point::new(self.a.x + t * abx, self.a.y + t * aby).dist(p) - self.r
    }
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

/// Hand geometry in a local frame: palm centre at the origin, y down,
/// fingers towards negative y.
struct HandShape {
    palm_rx: f64,
    palm_ry: f64,
    fingers: Vec<Capsule>,
    wrist_y: f64,
    wrist_half: f64,
    forearm_len: f64,
}

impl HandShape {
    fn sdf(&self, p: Point) -> f64 {
        let (rx, ry) = (self.palm_rx, self.palm_ry);
        let palm = ((p.x / rx).hypot(p.y / ry) - 1.0) * rx.min(ry);
        let forearm = {
            let cy = self.wrist_y + self.forearm_len / 2.0;
            let qx = p.x.abs() - self.wrist_half;
            let qy = (p.y - cy).abs() - self.forearm_len / 2.0;
            qx.max(0.0).hypot(qy.max(0.0)) + qx.max(qy).min(0.0)
        };
        self.fingers
            .iter()
            .map(|f| f.sdf(p))
            .fold(palm.min(forearm), f64::min)
    }
}

fn uniform(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        // keep the stream position independent of the jitter setting
        let _: f64 = rng.random();
        0.0
    } else {
        half_width * (2.0 * rng.random::<f64>() - 1.0)
    }
}

pub fn render_instance(spec: &GestureSpec, jitter: &Jitter, seed: u64, class_index: usize, instance: usize) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class_index as u64) << 32) | instance as u64);

    let rotation = uniform(&mut rng, jitter.rotation_deg).to_radians();
    let scale = 1.0 + uniform(&mut rng, jitter.scale_pct) / 100.0;
    let (rx, ry) = (spec.palm_rx, spec.palm_ry);
    let mut fingers = Vec::new();
    for f in 0..5 {
        let splay = uniform(&mut rng, jitter.splay_deg);
        let stretch = 1.0 + uniform(&mut rng, jitter.length_pct) / 100.0;
        let base_deg = spec.finger_angle_deg[f];
        let spread = spec.spread_deg * (base_deg - spec.finger_angle_deg[2]) / 20.0;
        let angle = (base_deg + spread + splay).to_radians();
        let (s, c) = base_deg.to_radians().sin_cos();
        let base = Point::new(0.82 * rx * s, -0.82 * ry * c);
        let len = if spec.extended[f] {
            spec.finger_length[f] * stretch
        } else {
            // folded finger: a short knuckle bump
            0.18 * spec.finger_length[f]
        };
        let (ds, dc) = angle.sin_cos();
        let tip = Point::new(base.x + len * ds, base.y - len * dc);
        fingers.push(Capsule {
            a: base,
            b: tip,
            r: spec.finger_radius[f],
        });
    }
    let wrist_y = 0.75 * ry;
    let wrist_half = rx * (1.0f64 - 0.75 * 0.75).sqrt();
    let shape = HandShape {
        palm_rx: rx,
        palm_ry: ry,
        fingers,
        wrist_y,
        wrist_half,
        forearm_len: 22.0,
    };
    let waves: Vec<Wave> = (0..3)
        .map(|_| {
            let theta = rng.random::<f64>() * 2.0 * PI;
            let k = 0.08 + 0.17 * rng.random::<f64>();
            Wave {
                kx: k * theta.cos(),
                ky: k * theta.sin(),
                phase: rng.random::<f64>() * 2.0 * PI,
                amp: jitter.noise_px / 3.0,
            }
        })
        .collect();

    // image frame: wrist midpoint pinned at the pivot, hand scaled then rotated
    let pivot = Point::new(CANVAS_WIDTH as f64 / 2.0, 170.0);
    let local_mid = Point::new(0.0, wrist_y);
    let to_image = |q: Point| {
        let scaled = Point::new(pivot.x + (q.x - local_mid.x) * scale, pivot.y + (q.y - local_mid.y) * scale);
        rotate_point(scaled, pivot, rotation)
    };
    let mask = BinaryMask::from_fn(CANVAS_WIDTH, CANVAS_HEIGHT, |x, y| {
        let p = Point::new(x as f64, y as f64);
        let u = rotate_point(p, pivot, -rotation);
        let q = Point::new(local_mid.x + (u.x - pivot.x) / scale, local_mid.y + (u.y - pivot.y) / scale);
        let noise: f64 = waves
            .iter()
            .map(|w| w.amp * (w.kx * p.x + w.ky * p.y + w.phase).sin())
            .sum();
        shape.sdf(q) * scale + noise < 0.0
    })
    .expect("canvas dimensions are non-zero");

    let l = to_image(Point::new(-wrist_half, wrist_y));
    let r = to_image(Point::new(wrist_half, wrist_y));
    let wrist = WristAnnotation::new(Point::new(l.x.round(), l.y.round()), Point::new(r.x.round(), r.y.round()));
    SynthSample {
        id: format!("{}_{instance:03}", spec.class_id),
        class_id: spec.class_id.clone(),
        mask,
        wrist,
    }
}

/// Renders the whole dataset in memory, ordered by class then instance.
pub fn render_dataset(cfg: &SynthConfig) -> Result<Vec<SynthSample>, SynthError> {
    cfg.validate()?;
    let specs: Vec<GestureSpec> = (0..cfg.classes)
        .map(|c| GestureSpec::prototype(c).expect("validated"))
        .collect();
    Ok((0..cfg.classes * cfg.per_class)
        .into_par_iter()
        .map(|k| {
            let (c, i) = (k / cfg.per_class, k % cfg.per_class);
            render_instance(&specs[c], &cfg.jitter, cfg.seed, c, i)
        })
        .collect())
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthManifest {
    pub manifest_path: PathBuf,
    pub wrist_path: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// Writes `<id>.pgm` masks, `wrists.csv` and `manifest.csv` into `out_dir`.
pub fn generate(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<SynthManifest, SynthError> {
    let out_dir = out_dir.as_ref();
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| SynthError::Io { path, source }
    };
    let samples = render_dataset(cfg)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut entries = Vec::with_capacity(samples.len());
    let mut wrists = String::from("id,lx,ly,rx,ry\n");
    for s in &samples {
        let file = format!("{}.pgm", s.id);
        let path = out_dir.join(&file);
        fs::write(&path, encode_pgm(&s.mask)).map_err(io_err(&path))?;
        let w = &s.wrist;
        wrists.push_str(&format!(
            "{},{},{},{},{}\n",
            s.id, w.left.x as i64, w.left.y as i64, w.right.x as i64, w.right.y as i64
        ));
        entries.push(ManifestEntry {
            id: s.id.clone(),
            class: s.class_id.clone(),
            path: file,
        });
    }
    let wrist_path = out_dir.join("wrists.csv");
    fs::write(&wrist_path, wrists).map_err(io_err(&wrist_path))?;
    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&manifest_path, &entries).map_err(io_err(&manifest_path))?;
    Ok(SynthManifest {
        manifest_path,
        wrist_path,
        entries,
    })
}
