//! `key=value` parameter files.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gesturebench::descriptors::FeatureConfig;
use gesturebench::mask::NormalizationConfig;
use gesturebench::matching::CombineWeights;

pub const KEYS: [&str; 8] = [
    "alpha",
    "beta",
    "target_width",
    "sc_points",
    "sc_radial_bins",
    "sc_angular_bins",
    "dt_bins",
    "hog_bins",
];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Params {
    pub weights: CombineWeights,
    pub normalization: NormalizationConfig,
    pub features: FeatureConfig,
}

impl Params {
    pub fn parse(text: &str) -> Result<Params> {
        let mut p = Params::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = || format!("line {}", lineno + 1);
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}: expected key=value", at()))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                bail!("{}: unknown key `{key}`; allowed keys: {}", at(), KEYS.join(", "));
            }
            if seen.contains(&key) {
                bail!("{}: `{key}` given twice", at());
            }
            seen.push(key);
            let float = || value.parse::<f64>().with_context(|| format!("{}: `{key}` needs a number", at()));
            let int = || {
                value
                    .parse::<usize>()
                    .with_context(|| format!("{}: `{key}` needs a non-negative integer", at()))
            };
            match key {
                "alpha" => p.weights.alpha = float()?,
                "beta" => p.weights.beta = float()?,
                "target_width" => p.normalization.target_width = int()?,
                "sc_points" => p.features.sc_points = int()?,
                "sc_radial_bins" => p.features.sc_radial_bins = int()?,
                "sc_angular_bins" => p.features.sc_angular_bins = int()?,
                "dt_bins" => p.features.dt_bins = int()?,
                _ => p.features.hog_bins = int()?,
            }
        }
        Ok(p)
    }

    pub fn load(path: Option<&Path>) -> Result<Params> {
        match path {
            None => Ok(Params::default()),
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Params::parse(&text).with_context(|| format!("config {}", path.display()))
            }
        }
    }

    /// Applies flag overrides, then validates everything.
    pub fn finish(mut self, alpha: Option<f64>, beta: Option<f64>, target_width: Option<usize>) -> Result<Params> {
        if let Some(a) = alpha {
            self.weights.alpha = a;
        }
        if let Some(b) = beta {
            self.weights.beta = b;
        }
        if let Some(w) = target_width {
            self.normalization.target_width = w;
        }
        self.weights.validate()?;
        self.features.validate()?;
        if self.normalization.target_width < 8 {
            bail!("target_width must be at least 8");
        }
        Ok(self)
    }
}
