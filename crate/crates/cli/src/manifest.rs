//! Experiment manifests.
//!
//! ```toml
//! [model]
//! experiment = "student-t"   # or "custom"
//! n = 10
//! seed = 7
//!
//! [strategies]
//! list = ["vb-mean", "vb-mean-var"]
//!
//! [oracle]
//! iterations = 200000
//! burn_in = 20000
//! chains = 4
//!
//! [output]
//! dir = "out"
//! ```
//!
//! A custom model is given either as a model JSON file (`[data] file`,
//! relative to the manifest) or inline: `likelihood`, `blocks`,
//! `hyperprior` and `fixed_theta` under `[model]`, `y` and dense `design`
//! rows under `[data]`.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use skewinla::experiments::ExperimentName;
use skewinla::io::ModelFile;
use skewinla::likelihood::LikelihoodFamily;
use skewinla::model::{Hyperprior, PriorBlock};
use skewinla::sparse::CscMatrix;
use skewinla::{Dataset, LatentModel, Strategy};
use toml::Spanned;

/// A manifest problem with its 1-based line.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ManifestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "manifest line {l}: {}", self.message),
            None => write!(f, "manifest: {}", self.message),
        }
    }
}

impl std::error::Error for ManifestError {}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn at(src: &str, span: Range<usize>, message: impl Into<String>) -> ManifestError {
    ManifestError { line: Some(line_of(src, span.start)), message: message.into() }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    model: RawModel,
    #[serde(default)]
    data: Option<RawData>,
    #[serde(default)]
    strategies: Option<RawStrategies>,
    #[serde(default)]
    oracle: Option<OracleSettings>,
    #[serde(default)]
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    experiment: Spanned<String>,
    n: Option<Spanned<i64>>,
    seed: Option<Spanned<i64>>,
    likelihood: Option<LikelihoodFamily>,
    blocks: Option<Vec<PriorBlock>>,
    hyperprior: Option<Vec<Hyperprior>>,
    fixed_theta: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    file: Option<Spanned<String>>,
    y: Option<Spanned<Vec<f64>>>,
    design: Option<Spanned<Vec<Vec<f64>>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStrategies {
    list: Vec<Spanned<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    pub enabled: bool,
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings { enabled: true, iterations: 200_000, burn_in: 20_000, chains: 4 }
    }
}

/// Where the model comes from.
#[derive(Debug, Clone)]
pub enum ModelSource {
    Experiment { name: ExperimentName, n: Option<usize> },
    Custom { model: Box<LatentModel>, data: Dataset },
}

#[derive(Debug, Clone)]
pub struct ExperimentManifest {
    pub source: ModelSource,
    pub seed: u64,
    pub strategies: Vec<Strategy>,
    pub oracle: OracleSettings,
    pub out_dir: PathBuf,
}

impl ExperimentManifest {
    pub fn experiment_name(&self) -> String {
        match &self.source {
            ModelSource::Experiment { name, .. } => name.to_string(),
            ModelSource::Custom { .. } => "custom".into(),
        }
    }
}

/// Strategies run by default for a named experiment.
pub fn default_strategies(name: Option<ExperimentName>) -> Vec<Strategy> {
    match name {
        Some(ExperimentName::SkewSim) | Some(ExperimentName::ImbalancedLogistic) => {
            vec![Strategy::VbMean, Strategy::VbMeanVar, Strategy::SgcVb]
        }
        _ => vec![Strategy::VbMean, Strategy::VbMeanVar],
    }
}

/// Parse a comma-separated strategy list.
pub fn parse_strategy_list(s: &str) -> Result<Vec<Strategy>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let st: Strategy = part.parse().map_err(|e: skewinla::Error| e.to_string())?;
        if !out.contains(&st) {
            out.push(st);
        }
    }
    if out.is_empty() {
        return Err("empty strategy list".into());
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<ExperimentManifest, ManifestError> {
    let src = std::fs::read_to_string(path).map_err(|e| ManifestError { line: None, message: format!("{}: {e}", path.display()) })?;
    parse(&src, path.parent().unwrap_or(Path::new(".")))
}

/// Parse manifest text; relative file references resolve against `base`.
pub fn parse(src: &str, base: &Path) -> Result<ExperimentManifest, ManifestError> {
    let raw: RawManifest = toml::from_str(src).map_err(|e| ManifestError {
        line: e.span().map(|s| line_of(src, s.start)),
        message: e.message().to_string(),
    })?;
    let m = raw.model;
    let seed = match &m.seed {
        None => return Err(ManifestError { line: None, message: "[model] needs an explicit `seed`".into() }),
        Some(s) if *s.get_ref() < 0 => return Err(at(src, s.span(), "`seed` must be non-negative")),
        Some(s) => *s.get_ref() as u64,
    };
    let n = match &m.n {
        None => None,
        Some(v) if *v.get_ref() < 1 => return Err(at(src, v.span(), "`n` must be at least 1")),
        Some(v) => Some(*v.get_ref() as usize),
    };
    let source = if m.experiment.get_ref() == "custom" {
        custom_model(src, base, &m, raw.data)?
    } else {
        let name: ExperimentName = m
            .experiment
            .get_ref()
            .parse()
            .map_err(|e: skewinla::Error| at(src, m.experiment.span(), format!("`experiment`: {e}")))?;
        if m.likelihood.is_some() || m.blocks.is_some() || raw.data.is_some() {
            return Err(at(src, m.experiment.span(), "model fields and [data] are only allowed with experiment = \"custom\""));
        }
        ModelSource::Experiment { name, n }
    };
    let strategies = match raw.strategies {
        None => default_strategies(match &source {
            ModelSource::Experiment { name, .. } => Some(*name),
            ModelSource::Custom { .. } => None,
        }),
        Some(s) => {
            let mut out = Vec::new();
            for item in &s.list {
                let st: Strategy = item.get_ref().parse().map_err(|e: skewinla::Error| at(src, item.span(), format!("`list`: {e}")))?;
                if !out.contains(&st) {
                    out.push(st);
                }
            }
            if out.is_empty() {
                return Err(ManifestError { line: None, message: "[strategies] list is empty".into() });
            }
            out
        }
    };
    Ok(ExperimentManifest {
        source,
        seed,
        strategies,
        oracle: raw.oracle.unwrap_or_default(),
        out_dir: raw.output.map(|o| PathBuf::from(o.dir)).unwrap_or_else(|| PathBuf::from("out")),
    })
}

fn custom_model(src: &str, base: &Path, m: &RawModel, data: Option<RawData>) -> Result<ModelSource, ManifestError> {
    let data = data.ok_or_else(|| at(src, m.experiment.span(), "a custom model needs a [data] section"))?;
    if let Some(file) = &data.file {
        let path = base.join(file.get_ref());
        let reader = std::fs::File::open(&path).map_err(|e| at(src, file.span(), format!("`file` {}: {e}", path.display())))?;
        let (model, data) = ModelFile::read(reader)
            .and_then(ModelFile::into_parts)
            .map_err(|e| at(src, file.span(), format!("`file` {}: {e}", path.display())))?;
        return Ok(ModelSource::Custom { model: Box::new(model), data });
    }
    let missing = |what: &str| at(src, m.experiment.span(), format!("custom model is missing `{what}`"));
    let y = data.y.ok_or_else(|| missing("y"))?;
    let design = data.design.ok_or_else(|| missing("design"))?;
    let rows = design.get_ref();
    if rows.len() != y.get_ref().len() {
        return Err(at(src, design.span(), format!("`design` has {} rows for {} responses", rows.len(), y.get_ref().len())));
    }
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(at(src, design.span(), "`design` rows differ in length"));
    }
    let trip: Vec<(usize, usize, f64)> =
        rows.iter().enumerate().flat_map(|(i, r)| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(j, &v)| (i, j, v))).collect();
    let design_matrix = CscMatrix::from_triplets(rows.len(), p, &trip).map_err(|e| at(src, design.span(), e.to_string()))?;
    let model = LatentModel {
        design: design_matrix,
        blocks: m.blocks.clone().ok_or_else(|| missing("blocks"))?,
        likelihood: m.likelihood.clone().ok_or_else(|| missing("likelihood"))?,
        hyperprior: m.hyperprior.clone().unwrap_or_default(),
        fixed_theta: m.fixed_theta.clone(),
    };
    Ok(ModelSource::Custom { model: Box::new(model), data: Dataset::new(y.into_inner()) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_numbers() {
        assert_eq!(line_of("a\nb\nc", 0), 1);
        assert_eq!(line_of("a\nb\nc", 2), 2);
        assert_eq!(line_of("a\nb\nc", 4), 3);
    }

    #[test]
    fn strategy_list() {
        assert_eq!(parse_strategy_list("gaussian, sgc-vb,gaussian").unwrap(), vec![Strategy::Gaussian, Strategy::SgcVb]);
        assert!(parse_strategy_list("laplace").is_err());
    }
}
