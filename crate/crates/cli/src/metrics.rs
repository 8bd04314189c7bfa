//! Long-form metric rows and their CSV encoding.

use std::path::Path;

use anyhow::{Context, Result};

pub const HEADER: [&str; 7] = ["experiment", "seed", "variable", "value", "metric", "metric_value", "wall_seconds"];

/// One measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub experiment: String,
    pub seed: u64,
    pub variable: String,
    pub value: f64,
    pub metric: String,
    pub metric_value: f64,
    /// Zero unless timing was requested, so reruns stay byte-identical.
    pub wall_seconds: f64,
}

/// Header plus rows, comma-separated with LF line endings.
pub fn to_csv(rows: &[MetricsRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.seed.to_string(),
            r.variable.clone(),
            r.value.to_string(),
            r.metric.clone(),
            r.metric_value.to_string(),
            r.wall_seconds.to_string(),
        ])?;
    }
    w.into_inner().context("flushing csv")
}

pub fn write_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, to_csv(rows)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or_default();
            Ok(MetricsRow {
                experiment: field(0).to_string(),
                seed: field(1).parse()?,
                variable: field(2).to_string(),
                value: field(3).parse()?,
                metric: field(4).to_string(),
                metric_value: field(5).parse()?,
                wall_seconds: field(6).parse()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(metric: &str, v: f64) -> MetricsRow {
        MetricsRow {
            experiment: "e-1".into(),
            seed: 2,
            variable: "sigma".into(),
            value: 0.2,
            metric: metric.into(),
            metric_value: v,
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn lf_endings_and_header() {
        let bytes = to_csv(&[row("accuracy", 0.5)]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(text, "experiment,seed,variable,value,metric,metric_value,wall_seconds\ne-1,2,sigma,0.2,accuracy,0.5,0\n");
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![row("a", 0.1), row("b", 1.0 / 3.0)];
        write_csv(&path, &rows).unwrap();
        assert_eq!(read_csv(&path).unwrap(), rows);
    }
}
