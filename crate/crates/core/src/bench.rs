//! Analysis-time measurement: feature extraction plus classification at a
//! given thread count, with speedup and efficiency against a T=1 baseline.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::time::Instant;

use thiserror::Error;

use crate::classify::{
    classify_all, draw_galleries, with_threads, ClassifyError, Gallery, LabeledBundle, MethodId, ProbeResult,
};
use crate::dataset::LabeledMask;
use crate::descriptors::{build_features, FeatureConfig};
use crate::matching::CombineWeights;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("thread list must contain 1 for the baseline")]
    MissingBaseline,
    #[error("image `{id}`: {source}")]
    Features {
        id: String,
        #[source]
        source: crate::descriptors::BundleError,
    },
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("log write failed: {0}")]
    Log(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRecord {
    pub method: MethodId,
    pub g: usize,
    pub threads: usize,
    /// Seconds.
    pub tau_f: f64,
    pub tau_c: f64,
    pub tau: f64,
    pub speedup: f64,
    pub efficiency: f64,
}

impl BenchRecord {
    fn new(method: MethodId, g: usize, threads: usize, tau_f: f64, tau_c: f64, baseline: f64) -> Self {
        let tau = tau_f + tau_c;
        let speedup = baseline / tau;
        Self {
            method,
            g,
            threads,
            tau_f,
            tau_c,
            tau,
            speedup,
            efficiency: speedup / threads as f64,
        }
    }
}

/// True iff the speedup exceeds the thread count.
pub fn superlinear_flag(r: &BenchRecord) -> bool {
    r.speedup > r.threads as f64
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub method: MethodId,
    pub g: usize,
    pub repetitions: usize,
    /// Selects the gallery split.
    pub seed: u64,
    pub features: FeatureConfig,
    pub weights: CombineWeights,
}

impl BenchSpec {
    pub fn new(method: MethodId, g: usize) -> Self {
        Self {
            method,
            g,
            repetitions: 3,
            seed: 0,
            features: FeatureConfig::default(),
            weights: CombineWeights::default(),
        }
    }
}

/// One timed configuration with the classification output of its last run.
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub record: BenchRecord,
    pub results: Vec<ProbeResult>,
}

#[derive(serde::Serialize)]
struct LogLine<'a> {
    method: &'a str,
    g: usize,
    #[serde(rename = "T")]
    threads: usize,
    rep: usize,
    tau_f: f64,
    tau_c: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn split(dataset: &[LabeledMask], g: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>), BenchError> {
    if dataset.is_empty() {
        return Err(BenchError::InsufficientData("dataset is empty".into()));
    }
    let mut classes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, m) in dataset.iter().enumerate() {
        classes.entry(m.label.clone()).or_default().push(i);
    }
    if let Some((c, v)) = classes.iter().find(|(_, v)| v.len() <= g) {
        return Err(BenchError::InsufficientData(format!(
            "class `{c}` has {} images, needs more than g={g}",
            v.len()
        )));
    }
    let gallery = draw_galleries(&classes, g, 1, seed).remove(0);
    let mut in_gallery = vec![false; dataset.len()];
    gallery.iter().for_each(|&i| in_gallery[i] = true);
    let probes = (0..dataset.len()).filter(|&i| !in_gallery[i]).collect();
    Ok((gallery, probes))
}

fn run_once(
    dataset: &[LabeledMask],
    gallery_idx: &[usize],
    probe_idx: &[usize],
    spec: &BenchSpec,
) -> Result<(f64, f64, Vec<ProbeResult>), BenchError> {
    use rayon::prelude::*;
    let want = spec.method.features();
    let t0 = Instant::now();
    let bundles: Vec<LabeledBundle> = dataset
        .par_iter()
        .map(|m| {
            build_features(&m.mask, &spec.features, want)
                .map(|b| LabeledBundle::new(m.id.clone(), m.label.clone(), b))
                .map_err(|source| BenchError::Features { id: m.id.clone(), source })
        })
        .collect::<Result<_, _>>()?;
    let tau_f = t0.elapsed().as_secs_f64();

    let gallery = Gallery::new(gallery_idx.iter().map(|&i| bundles[i].clone()).collect())?;
    let probes: Vec<LabeledBundle> = probe_idx.iter().map(|&i| bundles[i].clone()).collect();
    let t1 = Instant::now();
    let results = classify_all(&probes, &gallery, spec.method, &spec.weights)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let tau_c = t1.elapsed().as_secs_f64();
    Ok((tau_f, tau_c, results))
}

/// Times the full pipeline at `threads` workers: one discarded warm-up, then
/// `spec.repetitions` runs, keeping the median of each phase. `baseline` is
/// the T=1 analysis time of the same session; `None` means this run is the
/// baseline.
pub fn time_analysis(
    dataset: &[LabeledMask],
    spec: &BenchSpec,
    threads: usize,
    baseline: Option<f64>,
    log: Option<&mut (dyn Write + '_)>,
) -> Result<BenchOutcome, BenchError> {
    if spec.repetitions < 3 {
        return Err(BenchError::InsufficientData("at least 3 repetitions are required".into()));
    }
    if baseline.is_none() && threads != 1 {
        return Err(BenchError::MissingBaseline);
    }
    let (gallery_idx, probe_idx) = split(dataset, spec.g, spec.seed)?;
    let (runs, results) = with_threads(threads, || -> Result<_, BenchError> {
        run_once(dataset, &gallery_idx, &probe_idx, spec)?;
        let mut runs = Vec::with_capacity(spec.repetitions);
        let mut last = Vec::new();
        for _ in 0..spec.repetitions {
            let (f, c, r) = run_once(dataset, &gallery_idx, &probe_idx, spec)?;
            runs.push((f, c));
            last = r;
        }
        Ok((runs, last))
    })??;
    if let Some(w) = log {
        for (rep, &(tau_f, tau_c)) in runs.iter().enumerate() {
            let line = LogLine {
                method: spec.method.as_str(),
                g: spec.g,
                threads,
                rep,
                tau_f,
                tau_c,
            };
            serde_json::to_writer(&mut *w, &line).map_err(io::Error::from)?;
            writeln!(w)?;
        }
    }
    let tf = median(runs.iter().map(|r| r.0).collect());
    let tc = median(runs.iter().map(|r| r.1).collect());
    let tau = tf + tc;
    Ok(BenchOutcome {
        record: BenchRecord::new(spec.method, spec.g, threads, tf, tc, baseline.unwrap_or(tau)),
        results,
    })
}

/// Measures every thread count in `threads`, T=1 first.
pub fn bench_series(
    dataset: &[LabeledMask],
    spec: &BenchSpec,
    threads: &[usize],
    mut log: Option<&mut (dyn Write + '_)>,
) -> Result<Vec<BenchRecord>, BenchError> {
    if !threads.contains(&1) {
        return Err(BenchError::MissingBaseline);
    }
    let base = time_analysis(dataset, spec, 1, None, log.as_deref_mut())?.record;
    let mut out = vec![base];
    let mut rest: Vec<usize> = threads.iter().copied().filter(|&t| t != 1).collect();
    rest.sort_unstable();
    rest.dedup();
    for t in rest {
        out.push(time_analysis(dataset, spec, t, Some(base.tau), log.as_deref_mut())?.record);
    }
    Ok(out)
}

pub const BENCH_HEADER: &str = "method,g,T,tau_f_s,tau_c_s,tau_s,speedup,efficiency";

/// Writes the bench table sorted by (g, method, T).
pub fn emit_bench_table<W: Write>(mut out: W, records: &[BenchRecord]) -> io::Result<()> {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| (r.g, r.method, r.threads));
    writeln!(out, "{BENCH_HEADER}")?;
    for r in &sorted {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.4},{:.4}",
            r.method, r.g, r.threads, r.tau_f, r.tau_c, r.tau, r.speedup, r.efficiency
        )?;
    }
    Ok(())
}
