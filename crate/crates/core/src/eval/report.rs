use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Key of the overall cell.
pub const OVERALL: &str = "all/all";

const METRICS: [&str; 5] = ["precision", "recall", "f1", "n_pred", "n_ref"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_pred: usize,
    pub n_ref: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub name: String,
    /// Keyed `"<user group>/<item group>"`, either side may be `all`.
    pub cells: BTreeMap<String, CellMetrics>,
}

/// Per-model, per-cell metrics. Models keep roster order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub models: Vec<ModelReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Table,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(format!(
                "unknown report format {s:?} (expected table, json or csv)"
            )),
        }
    }
}

fn bad(reason: impl Into<String>) -> Error {
    Error::InvalidConfig(reason.into())
}

impl EvalReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn overall(&self, name: &str) -> Option<&CellMetrics> {
        self.model(name)?.cells.get(OVERALL)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Table => self.to_table(),
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut root = Map::new();
        for m in &self.models {
            let cells: Map<String, Value> = m
                .cells
                .iter()
                .map(|(k, c)| (k.clone(), serde_json::to_value(c).expect("plain struct")))
                .collect();
            root.insert(m.name.clone(), Value::Object(cells));
        }
        let mut s = serde_json::to_string_pretty(&Value::Object(root)).expect("plain value");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let root: Map<String, Value> = serde_json::from_str(text)?;
        let models = root
            .into_iter()
            .map(|(name, cells)| {
                let cells: BTreeMap<String, CellMetrics> = serde_json::from_value(cells)?;
                Ok(ModelReport { name, cells })
            })
            .collect::<Result<_>>()?;
        Ok(EvalReport { models })
    }

    /// Flat `model,user_group,item_group,metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "user_group", "item_group", "metric", "value"])
            .expect("in-memory write");
        for m in &self.models {
            for (key, c) in &m.cells {
                let (ug, ig) = key.split_once('/').unwrap_or((key.as_str(), "all"));
                let values = [
                    c.precision.to_string(),
                    c.recall.to_string(),
                    c.f1.to_string(),
                    c.n_pred.to_string(),
                    c.n_ref.to_string(),
                ];
                for (metric, value) in METRICS.iter().zip(values) {
                    w.write_record([m.name.as_str(), ug, ig, metric, &value])
                        .expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut order: Vec<String> = Vec::new();
        let mut partial: BTreeMap<(String, String), [Option<f64>; 5]> = BTreeMap::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(format!("report csv: {e}")))?;
            if rec.len() != 5 {
                return Err(bad(format!(
                    "report csv: expected 5 fields, got {}",
                    rec.len()
                )));
            }
            let model = rec[0].to_string();
            if !order.contains(&model) {
                order.push(model.clone());
            }
            let slot = METRICS
                .iter()
                .position(|m| *m == &rec[3])
                .ok_or_else(|| bad(format!("report csv: unknown metric {:?}", &rec[3])))?;
            let value: f64 = rec[4]
                .parse()
                .map_err(|_| bad(format!("report csv: bad value {:?}", &rec[4])))?;
            let cell = partial
                .entry((model, format!("{}/{}", &rec[1], &rec[2])))
                .or_default();
            cell[slot] = Some(value);
        }
        let mut models: Vec<ModelReport> = order
            .into_iter()
            .map(|name| ModelReport {
                name,
                cells: BTreeMap::new(),
            })
            .collect();
        for ((model, key), v) in partial {
            let [Some(p), Some(r), Some(f), Some(np), Some(nr)] = v else {
                return Err(bad(format!("report csv: incomplete cell {model} {key}")));
            };
            let target = models
                .iter_mut()
                .find(|m| m.name == model)
                .expect("model registered in order");
            target.cells.insert(
                key,
                CellMetrics {
                    precision: p,
                    recall: r,
                    f1: f,
                    n_pred: np as usize,
                    n_ref: nr as usize,
                },
            );
        }
        Ok(EvalReport { models })
    }

    /// Group1..Group3 and Overall rows, a P and an F column per model.
    pub fn to_table(&self) -> String {
        let mut header = vec!["Group".to_string()];
        for m in &self.models {
            header.push(format!("{} P", m.name));
            header.push(format!("{} F", m.name));
        }
        let mut rows = vec![header];
        if !self.models.is_empty() {
            for (label, key) in [
                ("Group1", "1/all"),
                ("Group2", "2/all"),
                ("Group3", "3/all"),
                ("Overall", OVERALL),
            ] {
                let mut row = vec![label.to_string()];
                for m in &self.models {
                    match m.cells.get(key) {
                        Some(c) => {
                            row.push(format!("{:.3}", c.precision));
                            row.push(format!("{:.3}", c.f1));
                        }
                        None => row.extend(["-".to_string(), "-".to_string()]),
                    }
                }
                rows.push(row);
            }
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    if c == 0 {
                        format!("{v:<w$}", w = widths[c])
                    } else {
                        format!("{v:>w$}", w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}
