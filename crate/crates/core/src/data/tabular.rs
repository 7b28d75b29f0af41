//! Comma-separated client data.
//!
//! The first row is a header. One column holds the client id; every distinct
//! id becomes one [`ClientDataset`], in order of first appearance. Feature
//! and target columns must parse as finite numbers; an optional group column
//! holds the sensitive attribute as `0`/`1`.
//!
//! Populations are dumped as such a file plus a JSON sidecar naming the
//! columns and carrying per-client group and generator metadata.

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{ClientDataset, DataError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSchema {
    pub client_column: String,
    pub target_column: String,
    pub feature_columns: Vec<String>,
    #[serde(default)]
    pub group_column: Option<String>,
    /// Affine rescaling of each feature column to `[0, 1]` over the file.
    #[serde(default)]
    pub scale_features: bool,
}

struct Row {
    client: String,
    features: Vec<f64>,
    target: f64,
    group: Option<bool>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn number(record: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("");
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DataError::NonNumeric {
            line,
            column: name.to_string(),
            value: raw.to_string(),
        }),
    }
}

/// Parses client data from any reader.
pub fn read_tabular<R: Read>(reader: R, schema: &TabularSchema) -> Result<Vec<ClientDataset>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let client_idx = column(&headers, &schema.client_column)?;
    let target_idx = column(&headers, &schema.target_column)?;
    let feature_idx = schema
        .feature_columns
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let group_idx = schema
        .group_column
        .as_deref()
        .map(|c| column(&headers, c))
        .transpose()?;

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let client = record.get(client_idx).unwrap_or("").trim().to_string();
        if client.is_empty() {
            return Err(DataError::EmptyClientId { line });
        }
        let features = feature_idx
            .iter()
            .zip(&schema.feature_columns)
            .map(|(&i, name)| number(&record, i, name, line))
            .collect::<Result<Vec<_>>>()?;
        let target = number(&record, target_idx, &schema.target_column, line)?;
        let group = match (group_idx, schema.group_column.as_deref()) {
            (Some(i), Some(name)) => {
                let raw = record.get(i).unwrap_or("").trim();
                Some(match raw {
                    "1" => true,
                    "0" => false,
                    _ => {
                        return Err(DataError::InvalidGroup {
                            line,
                            column: name.to_string(),
                            value: raw.to_string(),
                        })
                    }
                })
            }
            _ => None,
        };
        rows.push(Row {
            client,
            features,
            target,
            group,
        });
    }
    if rows.is_empty() {
        return Err(DataError::NoRows);
    }

    if schema.scale_features {
        for j in 0..schema.feature_columns.len() {
            let (lo, hi) = rows
                .iter()
                .map(|r| r.features[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let span = hi - lo;
            for r in &mut rows {
                r.features[j] = if span > 0.0 { (r.features[j] - lo) / span } else { 0.0 };
            }
        }
    }

    let mut grouped: IndexMap<String, Vec<Row>> = IndexMap::new();
    for r in rows {
        grouped.entry(r.client.clone()).or_default().push(r);
    }
    let d = schema.feature_columns.len();
    Ok(grouped
        .into_iter()
        .map(|(id, rows)| {
            let features = DMatrix::from_fn(rows.len(), d, |i, j| rows[i].features[j]);
            ClientDataset {
                id,
                features,
                targets: rows.iter().map(|r| r.target).collect(),
                sensitive: rows[0].group,
                generator: None,
            }
        })
        .collect())
}

pub fn load_tabular(path: &Path, schema: &TabularSchema) -> Result<Vec<ClientDataset>> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_tabular(std::io::BufReader::new(file), schema)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientMeta {
    pub id: String,
    #[serde(default)]
    pub sensitive: Option<bool>,
    #[serde(default)]
    pub generator: Option<usize>,
}

/// JSON sidecar of a dumped population.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSidecar {
    pub client_column: String,
    pub target_column: String,
    pub feature_columns: Vec<String>,
    pub clients: Vec<ClientMeta>,
}

pub fn read_sidecar(json: &str) -> Result<PopulationSidecar> {
    serde_json::from_str(json).map_err(|e| DataError::Sidecar(e.to_string()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `clients` as `client_id,x0,..,x{d-1},y` plus the JSON sidecar.
pub fn write_population(clients: &[ClientDataset], csv_path: &Path, sidecar_path: &Path) -> Result<()> {
    let d = clients.first().map_or(0, |c| c.features.ncols());
    let feature_columns: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    let file = File::create(csv_path).map_err(io_err(csv_path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| DataError::Csv {
        line: 0,
        message: e.to_string(),
    };
    let mut header = vec!["client_id".to_string()];
    header.extend(feature_columns.iter().cloned());
    header.push("y".to_string());
    w.write_record(&header).map_err(csv_err)?;
    for c in clients {
        for i in 0..c.len() {
            let mut rec = vec![c.id.clone()];
            rec.extend((0..d).map(|j| c.features[(i, j)].to_string()));
            rec.push(c.targets[i].to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(csv_path))?;

    let sidecar = PopulationSidecar {
        client_column: "client_id".into(),
        target_column: "y".into(),
        feature_columns,
        clients: clients
            .iter()
            .map(|c| ClientMeta {
                id: c.id.clone(),
                sensitive: c.sensitive,
                generator: c.generator,
            })
            .collect(),
    };
    let mut f = File::create(sidecar_path).map_err(io_err(sidecar_path))?;
    f.write_all(serde_json::to_string_pretty(&sidecar).expect("sidecar serializes").as_bytes())
        .map_err(io_err(sidecar_path))?;
    Ok(())
}

/// Reloads a population written by [`write_population`].
pub fn load_population(csv_path: &Path, sidecar_path: &Path) -> Result<Vec<ClientDataset>> {
    let json = std::fs::read_to_string(sidecar_path).map_err(io_err(sidecar_path))?;
    let sidecar = read_sidecar(&json)?;
    let schema = TabularSchema {
        client_column: sidecar.client_column.clone(),
        target_column: sidecar.target_column.clone(),
        feature_columns: sidecar.feature_columns.clone(),
        group_column: None,
        scale_features: false,
    };
    let mut by_id: IndexMap<String, ClientDataset> = load_tabular(csv_path, &schema)?
        .into_iter()
        .map(|c| (c.id.clone(), c))
        .collect();
    if by_id.len() != sidecar.clients.len() {
        return Err(DataError::Sidecar(format!(
            "sidecar lists {} clients, file has {}",
            sidecar.clients.len(),
            by_id.len()
        )));
    }
    sidecar
        .clients
        .into_iter()
        .map(|meta| {
            let mut c = by_id
                .swap_remove(&meta.id)
                .ok_or_else(|| DataError::Sidecar(format!("client {:?} missing from data file", meta.id)))?;
            c.sensitive = meta.sensitive;
            c.generator = meta.generator;
            Ok(c)
        })
        .collect()
}
