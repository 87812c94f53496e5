use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// Metrics document written by every command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    /// One value per graph; `null` where the metric is undefined.
    pub per_graph: Vec<Option<f64>>,
    /// Secondary scalar results of the same command.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl Metrics {
    /// Mean and population standard deviation over the defined values.
    pub fn from_per_graph(metric: &str, per_graph: Vec<Option<f64>>) -> Self {
        let xs: Vec<f64> = per_graph.iter().flatten().copied().collect();
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            metric: metric.to_owned(),
            mean,
            std: var.sqrt(),
            per_graph,
            extra: BTreeMap::new(),
        }
    }

    /// Overrides the mean, e.g. with a pooled value.
    pub fn with_mean(mut self, mean: f64) -> Self {
        self.mean = mean;
        self
    }

    pub fn with_extra(mut self, key: &str, value: f64) -> Self {
        self.extra.insert(key.to_owned(), value);
        self
    }

    pub fn write(&self, path: Option<&Path>) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("metrics serialize");
        match path {
            Some(p) => std::fs::write(p, text + "\n").map_err(|e| CliError::io(p, e)),
            None => {
                let mut out = std::io::stdout().lock();
                writeln!(out, "{text}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
            }
        }
    }
}

/// Writes rows under `header` as CSV.
pub fn write_csv<R, I>(path: &Path, header: &[String], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Shortest round-trip formatting of a float.
pub fn fmt(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std_ignores_undefined() {
        let m = Metrics::from_per_graph("x", vec![Some(1.0), None, Some(3.0)]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, 1.0);
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["per_graph"][1], serde_json::Value::Null);
        assert!(v.get("extra").is_none());
    }
}
