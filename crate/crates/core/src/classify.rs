//! Gallery/probe classification engine and the rank / cumulative response
//! curve evaluation protocol.
//!
//! Parallelism is nested the same way at every level: probes, then gallery
//! entries within a probe (and the feature fork-join inside bundle
//! construction). All per-pair costs are pure, and results are collected in
//! input order, so outputs are bit-identical for any thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::descriptors::{DescriptorBundle, FeatureSet};
use crate::matching::{
    chi_square, combined_cost, hausdorff, hu_distance, sc_cost, template_ssd, CombineWeights,
    MatchError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodId {
    Sc,
    Scdt,
    Sch,
    Hog,
    Dt,
    Tm,
    Hd,
    Hm,
}

impl MethodId {
    pub const ALL: [MethodId; 8] = [
        MethodId::Sc,
        MethodId::Scdt,
        MethodId::Sch,
        MethodId::Hog,
        MethodId::Dt,
        MethodId::Tm,
        MethodId::Hd,
        MethodId::Hm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Sc => "SC",
            MethodId::Scdt => "SCDT",
            MethodId::Sch => "SCH",
            MethodId::Hog => "HOG",
            MethodId::Dt => "DT",
            MethodId::Tm => "TM",
            MethodId::Hd => "HD",
            MethodId::Hm => "HM",
        }
    }

    /// Bundle members this method reads.
    pub fn features(self) -> FeatureSet {
        let none = FeatureSet::default();
        match self {
            MethodId::Sc => FeatureSet {
                shape_context: true,
                ..none
            },
            MethodId::Scdt => FeatureSet {
                shape_context: true,
                dt_histogram: true,
                ..none
            },
            MethodId::Sch => FeatureSet {
                shape_context: true,
                orientation: true,
                ..none
            },
            MethodId::Hog => FeatureSet {
                orientation: true,
                ..none
            },
            MethodId::Dt => FeatureSet {
                dt_histogram: true,
                ..none
            },
            MethodId::Tm => none,
            MethodId::Hd => FeatureSet {
                contour: true,
                ..none
            },
            MethodId::Hm => FeatureSet { hu: true, ..none },
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown method `{0}`; valid methods: sc, scdt, sch, hog, dt, tm, hd, hm")]
pub struct UnknownMethod(pub String);

impl FromStr for MethodId {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("method {method} needs feature `{feature}`, which the bundle lacks")]
    MissingFeature {
        method: MethodId,
        feature: &'static str,
    },
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("gallery class `{label}` has {have} entries, expected {expected}")]
    UnevenGallery {
        label: String,
        have: usize,
        expected: usize,
    },
    #[error("label `{0}` is not present in the gallery")]
    UnknownLabel(String),
    #[error("class `{class}` has {have} images; more than {g} are needed")]
    InsufficientImages { class: String, have: usize, g: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("probe `{probe_id}`: {source}")]
    Probe {
        probe_id: String,
        #[source]
        source: Box<ClassifyError>,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// One labelled image with its descriptors.
#[derive(Debug, Clone)]
pub struct LabeledBundle {
    pub id: String,
    pub label: String,
    pub bundle: Arc<DescriptorBundle>,
}

impl LabeledBundle {
    pub fn new(id: impl Into<String>, label: impl Into<String>, bundle: DescriptorBundle) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            bundle: Arc::new(bundle),
        }
    }
}

fn need<'a, T>(x: &'a Option<T>, method: MethodId, feature: &'static str) -> Result<&'a T, ClassifyError> {
    x.as_ref()
        .ok_or(ClassifyError::MissingFeature { method, feature })
}

/// Matching cost between two images under `method`; lower is more similar.
pub fn score(
    probe: &DescriptorBundle,
    entry: &DescriptorBundle,
    method: MethodId,
    weights: &CombineWeights,
) -> Result<f64, ClassifyError> {
    let sc = |m| -> Result<f64, ClassifyError> {
        Ok(sc_cost(need(&probe.sc, m, "shape_contexts")?, need(&entry.sc, m, "shape_contexts")?)?)
    };
    let dt = |m| -> Result<f64, ClassifyError> {
        let a = need(&probe.dt_hist, m, "dt_histogram")?;
        let b = need(&entry.dt_hist, m, "dt_histogram")?;
        Ok(chi_square(&a.bins, &b.bins)? / 2.0)
    };
    let hog = |m| -> Result<f64, ClassifyError> {
        let a = need(&probe.ohist, m, "orientation_histogram")?;
        let b = need(&entry.ohist, m, "orientation_histogram")?;
        Ok(chi_square(&a.bins, &b.bins)? / 2.0)
    };
    let cost = match method {
        MethodId::Sc => sc(method)?,
        MethodId::Scdt => {
            let d = dt(method)?;
            combined_cost(sc(method)?, d.min(1.0), weights)?
        }
        MethodId::Sch => {
            let d = hog(method)?;
            combined_cost(sc(method)?, d.min(1.0), weights)?
        }
        MethodId::Hog => hog(method)?,
        MethodId::Dt => dt(method)?,
        MethodId::Tm => template_ssd(&probe.mask, &entry.mask)?,
        MethodId::Hd => hausdorff(
            need(&probe.contour, method, "contour")?.points(),
            need(&entry.contour, method, "contour")?.points(),
        )?,
        MethodId::Hm => hu_distance(need(&probe.hu, method, "hu_moments")?, need(&entry.hu, method, "hu_moments")?),
    };
    Ok(cost)
}

/// Immutable labelled reference set with exactly `g` images per class.
#[derive(Debug, Clone)]
pub struct Gallery {
    entries: Vec<LabeledBundle>,
    labels: Vec<String>,
    per_class: usize,
}

impl Gallery {
    pub fn new(entries: Vec<LabeledBundle>) -> Result<Self, ClassifyError> {
        if entries.is_empty() {
            return Err(ClassifyError::EmptyGallery);
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &entries {
            *counts.entry(e.label.as_str()).or_default() += 1;
        }
        let expected = counts.values().copied().max().unwrap_or(0);
        if let Some((label, &have)) = counts.iter().find(|(_, &c)| c != expected) {
            return Err(ClassifyError::UnevenGallery {
                label: label.to_string(),
                have,
                expected,
            });
        }
        let labels = counts.keys().map(|s| s.to_string()).collect();
        Ok(Self {
            entries,
            labels,
            per_class: expected,
        })
    }

    pub fn entries(&self) -> &[LabeledBundle] {
        &self.entries
    }

    /// Class labels in ascending order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn per_class(&self) -> usize {
        self.per_class
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub label: String,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub probe_id: String,
    pub true_label: String,
    /// Every gallery class, best (lowest per-class cost) first.
    pub candidates: Vec<Candidate>,
    /// 1-based position of the true class in `candidates`.
    pub rank: usize,
}

impl ProbeResult {
    pub fn top1(&self) -> &Candidate {
        &self.candidates[0]
    }
}

/// Compares one probe with every gallery entry, collapses to the best cost
/// per class and ranks the classes (ties by ascending label).
pub fn classify_one(
    probe: &LabeledBundle,
    gallery: &Gallery,
    method: MethodId,
    weights: &CombineWeights,
) -> Result<ProbeResult, ClassifyError> {
    if !gallery.labels.iter().any(|l| *l == probe.label) {
        return Err(ClassifyError::UnknownLabel(probe.label.clone()));
    }
    let costs: Vec<f64> = gallery
        .entries
        .par_iter()
        .map(|e| score(&probe.bundle, &e.bundle, method, weights))
        .collect::<Result<_, _>>()?;
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for (e, &c) in gallery.entries.iter().zip(&costs) {
        best.entry(e.label.as_str())
            .and_modify(|b| *b = b.min(c))
            .or_insert(c);
    }
    // BTreeMap iterates labels ascending, so a stable sort breaks ties by label
    let mut candidates: Vec<Candidate> = best
        .into_iter()
        .map(|(label, cost)| Candidate {
            label: label.to_string(),
            cost,
        })
        .collect();
    candidates.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    let rank = 1 + candidates
        .iter()
        .position(|c| c.label == probe.label)
        .expect("label checked above");
    Ok(ProbeResult {
        probe_id: probe.id.clone(),
        true_label: probe.label.clone(),
        candidates,
        rank,
    })
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R, ClassifyError> {
    if threads == 0 {
        return Err(ClassifyError::InvalidArgument("thread count must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ClassifyError::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Classifies probes on the current rayon pool; results keep input order and
/// failures are tagged with the probe id.
pub fn classify_all(
    probes: &[LabeledBundle],
    gallery: &Gallery,
    method: MethodId,
    weights: &CombineWeights,
) -> Vec<Result<ProbeResult, ClassifyError>> {
    probes
        .par_iter()
        .map(|p| {
            classify_one(p, gallery, method, weights).map_err(|e| ClassifyError::Probe {
                probe_id: p.id.clone(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// [`classify_all`] on a pool of `threads` workers.
pub fn classify_batch(
    probes: &[LabeledBundle],
    gallery: &Gallery,
    method: MethodId,
    weights: &CombineWeights,
    threads: usize,
) -> Result<Vec<Result<ProbeResult, ClassifyError>>, ClassifyError> {
    with_threads(threads, || classify_all(probes, gallery, method, weights))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub method: MethodId,
    pub g: usize,
    pub repeats: usize,
    pub seed: u64,
    pub threads: usize,
    pub weights: CombineWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrcReport {
    pub method: MethodId,
    pub g: usize,
    pub repeats: usize,
    /// `per_repeat[k][r - 1]` is CR(r) in percent for repeat `k`.
    pub per_repeat: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Population standard deviation across repeats.
    pub sigma: Vec<f64>,
}

impl CrcReport {
    pub fn ranks(&self) -> usize {
        self.mean.len()
    }
}

/// Percentage of ranks `<= r` for `r = 1..=classes`.
pub fn cumulative_response(ranks: &[usize], classes: usize) -> Vec<f64> {
    let mut hist = vec![0usize; classes + 1];
    for &r in ranks {
        hist[r.min(classes)] += 1;
    }
    let total = ranks.len().max(1) as f64;
    let mut acc = 0usize;
    (1..=classes)
        .map(|r| {
            acc += hist[r];
            100.0 * acc as f64 / total
        })
        .collect()
}

/// Gallery indices (into `dataset`) for every repeat.
pub fn draw_galleries(
    classes: &BTreeMap<String, Vec<usize>>,
    g: usize,
    repeats: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    let smallest = classes.values().map(Vec::len).min().unwrap_or(0);
    if g == 1 && repeats <= smallest {
        // disjoint single-image galleries: one shuffled order per class
        let orders: Vec<Vec<usize>> = classes
            .values()
            .enumerate()
            .map(|(ci, members)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(ci as u64);
                let mut order = members.clone();
                order.shuffle(&mut rng);
                order
            })
            .collect();
        return (0..repeats)
            .map(|r| orders.iter().map(|o| o[r]).collect())
            .collect();
    }
    (0..repeats)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1 << 32 | r as u64);
            classes
                .values()
                .flat_map(|members| {
                    let mut picked: Vec<usize> =
                        sample(&mut rng, members.len(), g).into_iter().map(|i| members[i]).collect();
                    picked.sort_unstable();
                    picked
                })
                .collect()
        })
        .collect()
}

/// Repeated gallery/probe evaluation producing mean and sigma of CR(r).
pub fn evaluate(dataset: &[LabeledBundle], cfg: &EvalConfig) -> Result<CrcReport, ClassifyError> {
    if cfg.g == 0 || cfg.repeats == 0 {
        return Err(ClassifyError::InvalidArgument("g and repeats must be at least 1".into()));
    }
    let mut classes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, item) in dataset.iter().enumerate() {
        classes.entry(item.label.clone()).or_default().push(i);
    }
    if classes.is_empty() {
        return Err(ClassifyError::EmptyGallery);
    }
    for (class, members) in &classes {
        if members.len() <= cfg.g {
            return Err(ClassifyError::InsufficientImages {
                class: class.clone(),
                have: members.len(),
                g: cfg.g,
            });
        }
    }
    let draws = draw_galleries(&classes, cfg.g, cfg.repeats, cfg.seed);
    let n_classes = classes.len();
    let per_repeat = with_threads(cfg.threads, || -> Result<Vec<Vec<f64>>, ClassifyError> {
        draws
            .iter()
            .map(|picked| {
                let mut in_gallery = vec![false; dataset.len()];
                picked.iter().for_each(|&i| in_gallery[i] = true);
                let gallery = Gallery::new(picked.iter().map(|&i| dataset[i].clone()).collect())?;
                let probes: Vec<LabeledBundle> = dataset
                    .iter()
                    .zip(&in_gallery)
                    .filter(|(_, &g)| !g)
                    .map(|(p, _)| p.clone())
                    .collect();
                let ranks = classify_all(&probes, &gallery, cfg.method, &cfg.weights)
                    .into_iter()
                    .map(|r| r.map(|p| p.rank))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(cumulative_response(&ranks, n_classes))
            })
            .collect()
    })??;

    let k = per_repeat.len() as f64;
    let mean: Vec<f64> = (0..n_classes)
        .map(|r| per_repeat.iter().map(|c| c[r]).sum::<f64>() / k)
        .collect();
    let sigma = (0..n_classes)
        .map(|r| {
            let var = per_repeat.iter().map(|c| (c[r] - mean[r]).powi(2)).sum::<f64>() / k;
            var.sqrt()
        })
        .collect();
    Ok(CrcReport {
        method: cfg.method,
        g: cfg.g,
        repeats: cfg.repeats,
        per_repeat,
        mean,
        sigma,
    })
}

/// `probe_id,true_label,rank,top1,top1_cost`
pub fn write_results_csv<W: Write>(out: W, results: &[ProbeResult]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["probe_id", "true_label", "rank", "top1", "top1_cost"])?;
    for r in results {
        let top = r.top1();
        w.write_record([
            r.probe_id.as_str(),
            r.true_label.as_str(),
            &r.rank.to_string(),
            top.label.as_str(),
            &format!("{:.9}", top.cost),
        ])?;
    }
    w.flush()
}

/// `method,g,rank,cr_mean,cr_sigma`
pub fn write_crc_csv<W: Write>(out: W, reports: &[CrcReport]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "g", "rank", "cr_mean", "cr_sigma"])?;
    for rep in reports {
        for r in 0..rep.ranks() {
            w.write_record([
                rep.method.as_str(),
                &rep.g.to_string(),
                &(r + 1).to_string(),
                &format!("{:.4}", rep.mean[r]),
                &format!("{:.4}", rep.sigma[r]),
            ])?;
        }
    }
    w.flush()
}
