mod params;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use gesturebench::bench::{bench_series, emit_bench_table, BenchRecord, BenchSpec};
use gesturebench::classify::{classify_batch, evaluate, write_crc_csv, write_results_csv, EvalConfig, Gallery, MethodId};
use gesturebench::dataset::{load_dataset, prepare_bundles_with, write_manifest, ManifestEntry, MANIFEST_FILE};
use gesturebench::descriptors::FeatureSet;
use gesturebench::mask::{load_mask, load_wrist_annotations, normalize, save_mask};
use gesturebench::synth::{generate, Jitter, SynthConfig, DEFAULT_JITTER_LEVEL};

use crate::params::Params;

const THREADS_ENV: &str = "GESTUREBENCH_THREADS";

#[derive(Parser)]
#[command(name = "gesturebench", version, about = "Hand shape classification benchmark")]
struct Cli {
    /// key=value parameter file (alpha, beta, target_width, sc_points,
    /// sc_radial_bins, sc_angular_bins, dt_bins, hog_bins); flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic hand-mask dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 15)]
        classes: usize,
        #[arg(long, default_value_t = 30)]
        per_class: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Jitter level; 0 renders identical instances per class.
        #[arg(long, default_value_t = DEFAULT_JITTER_LEVEL)]
        jitter: f64,
    },
    /// Rotate, cut and rescale masks using their wrist points.
    Normalize {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        /// Defaults to <in>/wrists.csv.
        #[arg(long)]
        wrists: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        target_width: Option<usize>,
    },
    /// Rank every probe against a gallery.
    Classify {
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: MethodId,
        #[command(flatten)]
        threads: ThreadArg,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cumulative response curves over repeated gallery draws.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "sc,scdt,sch,hog,dt,tm,hd,hm")]
        methods: Vec<MethodId>,
        #[arg(long, default_value_t = 1)]
        g: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        threads: ThreadArg,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analysis time, speedup and efficiency per thread count.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "sc,scdt,sch,hog,dt,tm,hd,hm")]
        methods: Vec<MethodId>,
        #[arg(long, default_value_t = 1)]
        g: usize,
        /// Must include 1, the baseline.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        threads: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        weights: WeightArgs,
        /// Per-run JSONL timing log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ThreadArg {
    /// Worker threads; falls back to GESTUREBENCH_THREADS, then the core count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct WeightArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

fn parse_method(s: &str) -> Result<MethodId, String> {
    s.parse().map_err(|e: gesturebench::classify::UnknownMethod| e.to_string())
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    let t = match flag {
        Some(t) => t,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV}=`{v}` is not a thread count"))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if t == 0 {
        bail!("thread count must be at least 1");
    }
    Ok(t)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_synth(out: &Path, classes: usize, per_class: usize, seed: u64, jitter: f64) -> Result<()> {
    if !(jitter.is_finite() && jitter >= 0.0) {
        bail!("--jitter must be a non-negative number");
    }
    let cfg = SynthConfig {
        classes,
        per_class,
        seed,
        jitter: Jitter::level(jitter),
    };
    let m = generate(&cfg, out)?;
    eprintln!("wrote {} masks to {}", m.entries.len(), out.display());
    Ok(())
}

/// Returns the number of failed images.
fn cmd_normalize(input: &Path, wrists: &Path, out: &Path, params: &Params) -> Result<usize> {
    let mut pgms: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    if pgms.is_empty() {
        bail!("no inputs");
    }
    pgms.sort();
    let annotations = load_wrist_annotations(wrists)?;
    let labels = match input.join(MANIFEST_FILE) {
        p if p.is_file() => Some(gesturebench::dataset::read_manifest(&p)?),
        _ => None,
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut log = create(&out.join("normalize_log.csv"))?;
    writeln!(log, "id,rotation_applied,scale_applied,width,height")?;
    let mut entries = Vec::new();
    let mut failures = 0;
    for path in &pgms {
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let result = (|| -> Result<_> {
            let wrist = annotations.get(&id).context("no wrist annotation")?;
            let mask = load_mask(path)?;
            let n = normalize(&mask, wrist, &params.normalization)?;
            save_mask(&n.mask, out.join(format!("{id}.pgm")))?;
            Ok(n)
        })();
        match result {
            Ok(n) => {
                writeln!(
                    log,
                    "{id},{:.9},{:.9},{},{}",
                    n.rotation_applied,
                    n.scale_applied,
                    n.width(),
                    n.height()
                )?;
                if let Some(class) = labels.as_ref().and_then(|l| l.iter().find(|e| e.id == id)) {
                    entries.push(ManifestEntry {
                        id: id.clone(),
                        class: class.class.clone(),
                        path: format!("{id}.pgm"),
                    });
                }
            }
            Err(e) => {
                eprintln!("{id}: {e:#}");
                failures += 1;
            }
        }
    }
    log.flush()?;
    if labels.is_some() {
        write_manifest(&out.join(MANIFEST_FILE), &entries)?;
    }
    eprintln!("normalized {} of {} masks into {}", pgms.len() - failures, pgms.len(), out.display());
    Ok(failures)
}

/// Returns the number of probes that could not be classified.
fn cmd_classify(gallery: &Path, probes: &Path, method: MethodId, threads: usize, params: &Params, out: &Path) -> Result<usize> {
    let want = method.features();
    let g = prepare_bundles_with(&load_dataset(gallery)?, &params.features, want, threads)?;
    let p = prepare_bundles_with(&load_dataset(probes)?, &params.features, want, threads)?;
    let gallery = Gallery::new(g)?;
    let mut ok = Vec::new();
    let mut failures = 0;
    for r in classify_batch(&p, &gallery, method, &params.weights, threads)? {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => {
                eprintln!("{e}");
                failures += 1;
            }
        }
    }
    write_results_csv(create(out)?, &ok)?;
    let top1 = ok.iter().filter(|r| r.rank == 1).count();
    eprintln!("{method}: {top1}/{} probes ranked 1", ok.len());
    Ok(failures)
}

fn cmd_evaluate(
    dataset: &Path,
    methods: &[MethodId],
    cfg: EvalConfig,
    params: &Params,
    out: &Path,
) -> Result<()> {
    let masks = load_dataset(dataset)?;
    let want = methods.iter().fold(FeatureSet::default(), |f, m| f.union(m.features()));
    let bundles = prepare_bundles_with(&masks, &params.features, want, cfg.threads)?;
    let mut reports = Vec::new();
    for &method in methods {
        reports.push(evaluate(&bundles, &EvalConfig { method, ..cfg })?);
    }
    write_crc_csv(create(out)?, &reports)?;
    let stdout = io::stdout();
    let mut o = stdout.lock();
    writeln!(o, "g={} repeats={}  CR(r) % mean ± sigma", cfg.g, cfg.repeats)?;
    writeln!(o, "{:<6}{:>16}{:>16}{:>16}{:>16}", "method", "r=1", "r=2", "r=3", "r=4")?;
    for rep in &reports {
        write!(o, "{:<6}", rep.method.as_str())?;
        for r in 0..4.min(rep.ranks()) {
            write!(o, "{:>16}", format!("{:.1} ± {:.1}", rep.mean[r], rep.sigma[r]))?;
        }
        writeln!(o)?;
    }
    Ok(())
}

fn cmd_bench(
    dataset: &Path,
    methods: &[MethodId],
    spec: BenchSpec,
    threads: &[usize],
    log: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let masks = load_dataset(dataset)?;
    let mut log_file = log.map(create).transpose()?;
    let mut records: Vec<BenchRecord> = Vec::new();
    for &method in methods {
        let spec = BenchSpec { method, ..spec.clone() };
        let sink = log_file.as_mut().map(|f| f as &mut dyn Write);
        let recs = bench_series(&masks, &spec, threads, sink)?;
        for r in &recs {
            eprintln!(
                "{} g={} T={}: tau={:.4}s S={:.3} E={:.3}{}",
                r.method,
                r.g,
                r.threads,
                r.tau,
                r.speedup,
                r.efficiency,
                if gesturebench::bench::superlinear_flag(r) { " (superlinear)" } else { "" }
            );
        }
        records.extend(recs);
    }
    if let Some(f) = log_file.as_mut() {
        f.flush()?;
    }
    let mut w = create(out)?;
    emit_bench_table(&mut w, &records)?;
    w.flush()?;
    eprintln!("wrote {} bench rows to {}", records.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let base = Params::load(cli.config.as_deref())?;
    let failures = match cli.command {
        Command::Synth {
            out,
            classes,
            per_class,
            seed,
            jitter,
        } => {
            cmd_synth(&out, classes, per_class, seed, jitter)?;
            0
        }
        Command::Normalize {
            input,
            wrists,
            out,
            target_width,
        } => {
            let params = base.finish(None, None, target_width)?;
            let wrists = wrists.unwrap_or_else(|| input.join("wrists.csv"));
            cmd_normalize(&input, &wrists, &out, &params)?
        }
        Command::Classify {
            gallery,
            probes,
            method,
            threads,
            weights,
            out,
        } => {
            let params = base.finish(weights.alpha, weights.beta, None)?;
            let t = resolve_threads(threads.threads)?;
            cmd_classify(&gallery, &probes, method, t, &params, &out)?
        }
        Command::Evaluate {
            dataset,
            methods,
            g,
            repeats,
            seed,
            threads,
            weights,
            out,
        } => {
            let params = base.finish(weights.alpha, weights.beta, None)?;
            let cfg = EvalConfig {
                method: methods[0],
                g,
                repeats,
                seed,
                threads: resolve_threads(threads.threads)?,
                weights: params.weights,
            };
            cmd_evaluate(&dataset, &methods, cfg, &params, &out)?;
            0
        }
        Command::Bench {
            dataset,
            methods,
            g,
            threads,
            repetitions,
            seed,
            weights,
            log,
            out,
        } => {
            let params = base.finish(weights.alpha, weights.beta, None)?;
            let spec = BenchSpec {
                repetitions,
                seed,
                features: params.features,
                weights: params.weights,
                ..BenchSpec::new(methods[0], g)
            };
            cmd_bench(&dataset, &methods, spec, &threads, log.as_deref(), &out)?;
            0
        }
    };
    if failures > 0 {
        eprintln!("{failures} item(s) failed");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn check_usage(cli: &Cli) {
    if let Command::Bench { threads, .. } = &cli.command {
        let msg = if !threads.contains(&1) {
            "--threads must include 1, the sequential baseline"
        } else if threads.contains(&0) {
            "--threads values must be at least 1"
        } else {
            return;
        };
        Cli::command().error(ErrorKind::ValueValidation, msg).exit();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    check_usage(&cli);
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
