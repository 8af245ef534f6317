//! Node × time × variable observation panels and their on-disk format.
//!
//! A panel file is a delimited table with header
//! `node_id,timestamp,<var_1>,...,<var_F>`, one row per (node, timestamp).
//! Empty fields mark missing entries. A JSON sidecar maps every variable to
//! its role:
//!
//! ```json
//! { "variables": { "no2": "target", "traffic": "past-exogenous", "temp": "future-exogenous" } }
//! ```
//!
//! Every node must report the same strictly increasing timestamps.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariableRole {
    Target,
    PastExogenous,
    FutureExogenous,
    /// Calendar features. Synthesized from timestamps and fed to both branches.
    DateExogenous,
}

impl VariableRole {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "target" => Ok(Self::Target),
            "past-exogenous" => Ok(Self::PastExogenous),
            "future-exogenous" => Ok(Self::FutureExogenous),
            "date-exogenous" => Ok(Self::DateExogenous),
            other => Err(Error::UnknownRole(other.to_string())),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Target => "target",
            Self::PastExogenous => "past-exogenous",
            Self::FutureExogenous => "future-exogenous",
            Self::DateExogenous => "date-exogenous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub role: VariableRole,
}

/// Sidecar descriptor: variable name → role tag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub variables: BTreeMap<String, String>,
}

impl Schema {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn role_of(&self, name: &str) -> Result<VariableRole> {
        let tag = self
            .variables
            .get(name)
            .ok_or_else(|| Error::Malformed(format!("variable `{name}` missing from schema")))?;
        VariableRole::parse(tag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    nodes: Vec<String>,
    timestamps: Vec<NaiveDateTime>,
    variables: Vec<Variable>,
    /// Row-major `N × T × F`.
    data: Vec<f64>,
    missing: Option<Vec<bool>>,
    /// Position of this panel's first step within the panel it was cut from.
    origin: usize,
}

impl Panel {
    pub fn new(
        nodes: Vec<String>,
        timestamps: Vec<NaiveDateTime>,
        variables: Vec<Variable>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let panel = Self {
            nodes,
            timestamps,
            variables,
            data,
            missing: None,
            origin: 0,
        };
        panel.validate()?;
        Ok(panel)
    }

    fn validate(&self) -> Result<()> {
        let (n, t, f) = (self.n_nodes(), self.n_steps(), self.n_vars());
        if self.data.len() != n * t * f {
            return Err(Error::Malformed(format!(
                "data holds {} values, expected {n}×{t}×{f}",
                self.data.len()
            )));
        }
        let targets = self.variables.iter().filter(|v| v.role == VariableRole::Target).count();
        if targets != 1 {
            return Err(Error::Malformed(format!(
                "exactly one target variable required, found {targets}"
            )));
        }
        if let Some(v) = self.variables.iter().find(|v| v.role == VariableRole::DateExogenous) {
            return Err(Error::Malformed(format!(
                "`{}`: date channels are derived from timestamps, not ingested",
                v.name
            )));
        }
        if let Some(w) = self.timestamps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotone {
                node: self.nodes.first().cloned().unwrap_or_default(),
                at: w[1].format(TIMESTAMP_FORMAT).to_string(),
            });
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_steps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_nodes(), self.n_steps(), self.n_vars())
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn missing_mask(&self) -> Option<&[bool]> {
        self.missing.as_deref()
    }

    fn index(&self, node: usize, step: usize, var: usize) -> usize {
        (node * self.n_steps() + step) * self.n_vars() + var
    }

    pub fn value(&self, node: usize, step: usize, var: usize) -> f64 {
        self.data[self.index(node, step, var)]
    }

    pub fn set_value(&mut self, node: usize, step: usize, var: usize, value: f64) {
        let i = self.index(node, step, var);
        self.data[i] = value;
    }

    pub fn target_index(&self) -> usize {
        self.variables
            .iter()
            .position(|v| v.role == VariableRole::Target)
            .expect("validated panel has a target")
    }

    pub fn channels_with_role(&self, role: VariableRole) -> Vec<usize> {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Target history as `N` rows of length `T`.
    pub fn target_series(&self) -> Vec<Vec<f64>> {
        let ti = self.target_index();
        (0..self.n_nodes())
            .map(|n| (0..self.n_steps()).map(|t| self.value(n, t, ti)).collect())
            .collect()
    }

    /// Contiguous time segment `[start, start + len)`.
    pub fn segment(&self, start: usize, len: usize) -> Panel {
        assert!(start + len <= self.n_steps(), "segment out of range");
        let f = self.n_vars();
        let mut data = Vec::with_capacity(self.n_nodes() * len * f);
        let mut missing = self.missing.as_ref().map(|_| Vec::new());
        for n in 0..self.n_nodes() {
            let from = self.index(n, start, 0);
            data.extend_from_slice(&self.data[from..from + len * f]);
            if let (Some(dst), Some(src)) = (missing.as_mut(), self.missing.as_ref()) {
                dst.extend_from_slice(&src[from..from + len * f]);
            }
        }
        Panel {
            nodes: self.nodes.clone(),
            timestamps: self.timestamps[start..start + len].to_vec(),
            variables: self.variables.clone(),
            data,
            missing,
            origin: self.origin + start,
        }
    }

    pub(crate) fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Panel {
        let nv = self.n_vars();
        let data = self.data.iter().enumerate().map(|(i, &v)| f(i % nv, v)).collect();
        Panel { data, ..self.clone() }
    }

    /// Forward-fills missing entries along time, zero-filling any leading gap.
    pub fn fill_missing(&mut self) {
        let Some(mask) = self.missing.clone() else {
            return;
        };
        let (n_nodes, n_steps, n_vars) = self.shape();
        for n in 0..n_nodes {
            for v in 0..n_vars {
                let mut last = 0.0;
                for t in 0..n_steps {
                    let i = self.index(n, t, v);
                    if mask[i] {
                        self.data[i] = last;
                    } else {
                        last = self.data[i];
                    }
                }
            }
        }
    }

    /// Reads a panel file plus its role sidecar. Missing entries are recorded
    /// in the mask and then forward-filled.
    pub fn load(path: &Path, schema: &Schema) -> Result<Panel> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        if header.len() < 3 || &header[0] != "node_id" || &header[1] != "timestamp" {
            return Err(Error::Malformed(
                "header must start with `node_id,timestamp` followed by variables".into(),
            ));
        }
        let variables: Vec<Variable> = header
            .iter()
            .skip(2)
            .map(|name| {
                Ok(Variable {
                    name: name.to_string(),
                    role: schema.role_of(name)?,
                })
            })
            .collect::<Result<_>>()?;
        if let Some(extra) = schema
            .variables
            .keys()
            .find(|k| !variables.iter().any(|v| &v.name == *k))
        {
            return Err(Error::Malformed(format!(
                "schema names `{extra}`, which the panel does not contain"
            )));
        }

        let mut order: Vec<String> = Vec::new();
        let mut by_node: HashMap<String, (Vec<NaiveDateTime>, Vec<Option<f64>>)> = HashMap::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let row = line + 2;
            if record.len() != header.len() {
                return Err(Error::Malformed(format!(
                    "row {row}: {} fields, expected {}",
                    record.len(),
                    header.len()
                )));
            }
            let node = record[0].to_string();
            let ts = parse_timestamp(&record[1])
                .ok_or_else(|| Error::Malformed(format!("row {row}: bad timestamp `{}`", &record[1])))?;
            let entry = by_node.entry(node.clone()).or_insert_with(|| {
                order.push(node.clone());
                (Vec::new(), Vec::new())
            });
            if let Some(prev) = entry.0.last() {
                if ts <= *prev {
                    return Err(Error::NonMonotone {
                        node,
                        at: ts.format(TIMESTAMP_FORMAT).to_string(),
                    });
                }
            }
            entry.0.push(ts);
            for field in record.iter().skip(2) {
                let value = if field.is_empty() || field.eq_ignore_ascii_case("nan") {
                    None
                } else {
                    Some(
                        field
                            .parse::<f64>()
                            .map_err(|_| Error::Malformed(format!("row {row}: `{field}` is not a number")))?,
                    )
                };
                entry.1.push(value);
            }
        }
        let first = order
            .first()
            .ok_or_else(|| Error::Malformed("panel has no rows".into()))?;
        let timestamps = by_node[first].0.clone();
        let mut data = Vec::with_capacity(order.len() * timestamps.len() * variables.len());
        let mut missing = Vec::with_capacity(data.capacity());
        for node in &order {
            let (ts, values) = &by_node[node];
            if *ts != timestamps {
                return Err(Error::Malformed(format!(
                    "node `{node}` does not share the timestamps of node `{first}`"
                )));
            }
            for v in values {
                data.push(v.unwrap_or(0.0));
                missing.push(v.is_none());
            }
        }
        let any_missing = missing.iter().any(|&m| m);
        let mut panel = Panel::new(order, timestamps, variables, data)?;
        if any_missing {
            panel.missing = Some(missing);
            panel.fill_missing();
        }
        Ok(panel)
    }

    /// Writes the panel file and its sidecar schema.
    pub fn save(&self, path: &Path, schema_path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["node_id".to_string(), "timestamp".to_string()];
        header.extend(self.variables.iter().map(|v| v.name.clone()));
        writer.write_record(&header)?;
        for (n, node) in self.nodes.iter().enumerate() {
            for (t, ts) in self.timestamps.iter().enumerate() {
                let mut row = vec![node.clone(), ts.format(TIMESTAMP_FORMAT).to_string()];
                for v in 0..self.n_vars() {
                    let i = self.index(n, t, v);
                    let is_missing = self.missing.as_ref().is_some_and(|m| m[i]);
                    row.push(if is_missing {
                        String::new()
                    } else {
                        self.data[i].to_string()
                    });
                }
                writer.write_record(&row)?;
            }
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Malformed(format!("csv buffer: {e}")))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        self.schema().save(schema_path)
    }

    pub fn schema(&self) -> Schema {
        Schema {
            variables: self
                .variables
                .iter()
                .map(|v| (v.name.clone(), v.role.tag().to_string()))
                .collect(),
        }
    }
}

/// ISO-8601 wall-clock timestamp; any offset is dropped, keeping local time.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_local());
    }
    [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}
