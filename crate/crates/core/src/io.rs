//! CSV and JSON exports. Floating-point CSV fields carry 17 significant
//! digits so that values round-trip exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::inla::{FitReport, Timings};
use crate::likelihood::LikelihoodFamily;
use crate::model::{Dataset, Hyperprior, LatentModel, PriorBlock};
use crate::optim::TraceRow;
use crate::oracle::Chain;
use crate::sparse::CscMatrix;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

pub const MARGINAL_HEADER: [&str; 3] = ["component", "abscissa", "density"];
pub const ETA_HEADER: [&str; 3] = ["observation", "abscissa", "density"];
pub const TRACE_HEADER: [&str; 5] = ["stage", "iteration", "objective", "grad_norm", "delta"];
pub const CONTOUR_HEADER: [&str; 3] = ["x", "y", "density"];

/// `x` in scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn grid_rows<W: Write>(out: &mut csv::Writer<W>, label: &str, g: &DensityGrid<f64>) -> Result<()> {
    for (i, d) in g.density.iter().enumerate() {
        out.write_record([label, &fmt_f64(g.x(i)), &fmt_f64(*d)])?;
    }
    Ok(())
}

/// Marginal densities of a report; `names` label the components, falling
/// back to their indices.
pub fn write_marginals_csv<W: Write>(w: W, report: &FitReport, names: Option<&[String]>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(MARGINAL_HEADER)?;
    for m in &report.marginals {
        let label = names.and_then(|n| n.get(m.index)).cloned().unwrap_or_else(|| m.index.to_string());
        grid_rows(&mut out, &label, &m.density)?;
    }
    out.flush()?;
    Ok(())
}

/// Labelled densities, e.g. oracle histograms, in the marginal layout.
pub fn write_densities_csv<W: Write>(w: W, densities: &[(String, &DensityGrid<f64>)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(MARGINAL_HEADER)?;
    for (label, g) in densities {
        grid_rows(&mut out, label, g)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-observation linear-predictor densities.
pub fn write_eta_densities_csv<W: Write>(w: W, densities: &[DensityGrid<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ETA_HEADER)?;
    for (i, g) in densities.iter().enumerate() {
        grid_rows(&mut out, &i.to_string(), g)?;
    }
    out.flush()?;
    Ok(())
}

/// Optimizer traces; `δ` entries are joined with `;`.
pub fn write_trace_csv<W: Write>(w: W, traces: &[(&str, &[TraceRow])]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER)?;
    for (stage, rows) in traces {
        for r in *rows {
            let delta = r.x.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";");
            out.write_record([stage.to_string(), r.iteration.to_string(), fmt_f64(r.objective), fmt_f64(r.grad_norm), delta])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_contour_csv<W: Write>(w: W, table: &[(f64, f64, f64)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CONTOUR_HEADER)?;
    for &(x, y, d) in table {
        out.write_record([fmt_f64(x), fmt_f64(y), fmt_f64(d)])?;
    }
    out.flush()?;
    Ok(())
}

/// Draws of every chain: `chain, iteration, f<index>…`.
pub fn write_chains_csv<W: Write>(w: W, chains: &[Chain]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let Some(first) = chains.first() else {
        out.write_record(["chain", "iteration"])?;
        out.flush()?;
        return Ok(());
    };
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(first.tracked.iter().map(|i| format!("f{i}")));
    out.write_record(&header)?;
    for (c, chain) in chains.iter().enumerate() {
        for (it, draw) in chain.draws.iter().enumerate() {
            let mut row = vec![c.to_string(), it.to_string()];
            row.extend(draw.iter().map(|v| fmt_f64(*v)));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_report_json<W: Write>(w: W, report: &FitReport) -> Result<()> {
    write_json(w, report)
}

#[derive(Serialize)]
struct TimingsFile<'a> {
    schema_version: u32,
    strategy: &'a str,
    seconds: &'a Timings,
}

/// Stage timings, kept apart from the reproducible report.
pub fn write_timings_json<W: Write>(w: W, report: &FitReport) -> Result<()> {
    write_json(w, &TimingsFile { schema_version: MODEL_SCHEMA_VERSION, strategy: report.strategy.as_str(), seconds: &report.timings })
}

/// Versioned JSON form of a model with its responses. The design matrix is
/// stored as triplets and rebuilt (and checked) on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub n_obs: usize,
    pub n_latent: usize,
    pub design: Vec<(usize, usize, f64)>,
    pub blocks: Vec<PriorBlock>,
    pub likelihood: LikelihoodFamily,
    pub hyperprior: Vec<Hyperprior>,
    pub fixed_theta: Option<Vec<f64>>,
    pub y: Vec<f64>,
}

impl ModelFile {
    pub fn new(model: &LatentModel<f64>, data: &Dataset<f64>) -> ModelFile {
        ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            n_obs: model.n_obs(),
            n_latent: model.n_latent(),
            design: model.design.triplets(),
            blocks: model.blocks.clone(),
            likelihood: model.likelihood.clone(),
            hyperprior: model.hyperprior.clone(),
            fixed_theta: model.fixed_theta.clone(),
            y: data.y.clone(),
        }
    }

    pub fn into_parts(self) -> Result<(LatentModel<f64>, Dataset<f64>)> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Io(format!("unsupported model schema_version {}", self.schema_version)));
        }
        let design = CscMatrix::from_triplets(self.n_obs, self.n_latent, &self.design)?;
        let model = LatentModel {
            design,
            blocks: self.blocks,
            likelihood: self.likelihood,
            hyperprior: self.hyperprior,
            fixed_theta: self.fixed_theta,
        };
        Ok((model, Dataset::new(self.y)))
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        write_json(w, self)
    }

    pub fn read<R: Read>(r: R) -> Result<ModelFile> {
        Ok(serde_json::from_reader(r)?)
    }
}
