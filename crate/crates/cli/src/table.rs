//! Strategy-versus-oracle comparison tables.

use std::io::Write;

use serde::Serialize;
use skewinla::io::fmt_f64;

pub const TABLE_HEADER: [&str; 5] = ["parameter", "statistic", "method", "value", "relative_error"];

/// Parameter label used for whole-run rows such as timings.
pub const ALL_PARAMETERS: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    Mean,
    Sd,
    Skewness,
    TimeSeconds,
}

impl Statistic {
    pub const SUMMARIES: [Statistic; 3] = [Statistic::Mean, Statistic::Sd, Statistic::Skewness];

    pub fn as_str(&self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Sd => "sd",
            Statistic::Skewness => "skewness",
            Statistic::TimeSeconds => "time-seconds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub parameter: String,
    pub statistic: Statistic,
    pub method: String,
    /// Missing when the method failed.
    pub value: Option<f64>,
    /// `(value − oracle) / |oracle|`, for non-oracle rows with an oracle.
    pub relative_error: Option<f64>,
}

/// Summaries of one method: per parameter `[mean, sd, skewness]`.
#[derive(Debug, Clone)]
pub struct MethodColumn {
    pub method: String,
    pub summaries: Option<Vec<[f64; 3]>>,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<Row>,
}

impl ComparisonTable {
    /// One row per (parameter, statistic, method), the oracle last in each
    /// group. Timing rows close the table.
    pub fn build(parameters: &[String], methods: &[MethodColumn], oracle: Option<&MethodColumn>) -> ComparisonTable {
        let mut rows = Vec::new();
        let all: Vec<&MethodColumn> = methods.iter().chain(oracle).collect();
        for (k, name) in parameters.iter().enumerate() {
            for (s, stat) in Statistic::SUMMARIES.into_iter().enumerate() {
                let reference = oracle.and_then(|o| o.summaries.as_ref()).map(|v| v[k][s]);
                for (m, col) in all.iter().enumerate() {
                    let is_oracle = oracle.is_some() && m == all.len() - 1;
                    let value = col.summaries.as_ref().map(|v| v[k][s]);
                    let relative_error = match (is_oracle, value, reference) {
                        (false, Some(v), Some(r)) if r != 0.0 => Some((v - r) / r.abs()),
                        _ => None,
                    };
                    rows.push(Row { parameter: name.clone(), statistic: stat, method: col.method.clone(), value, relative_error });
                }
            }
        }
        for col in &all {
            rows.push(Row {
                parameter: ALL_PARAMETERS.into(),
                statistic: Statistic::TimeSeconds,
                method: col.method.clone(),
                value: col.seconds,
                relative_error: None,
            });
        }
        ComparisonTable { rows }
    }

    pub fn get(&self, parameter: &str, statistic: Statistic, method: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.parameter == parameter && r.statistic == statistic && r.method == method)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TABLE_HEADER)?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.rows {
            out.write_record([r.parameter.as_str(), r.statistic.as_str(), r.method.as_str(), &opt(r.value), &opt(r.relative_error)])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Plain-text pivot of one statistic: parameters down, methods across.
    pub fn pivot(&self, statistic: Statistic) -> String {
        let mut methods: Vec<&str> = Vec::new();
        let mut params: Vec<&str> = Vec::new();
        for r in self.rows.iter().filter(|r| r.statistic == statistic) {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
            if !params.contains(&r.parameter.as_str()) {
                params.push(&r.parameter);
            }
        }
        let mut s = format!("{:<12}", statistic.as_str());
        for m in &methods {
            s.push_str(&format!("{m:>14}"));
        }
        s.push('\n');
        for p in &params {
            s.push_str(&format!("{p:<12}"));
            for m in &methods {
                match self.get(p, statistic, m).and_then(|r| r.value) {
                    Some(v) => s.push_str(&format!("{v:>14.4}")),
                    None => s.push_str(&format!("{:>14}", "-")),
                }
            }
            s.push('\n');
        }
        s
    }
}
