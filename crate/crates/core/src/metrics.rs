//! Clustering agreement and sweep aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `I(A; B) / sqrt(H(A) · H(B))`, natural logs.
/// Zero when either labelling is constant.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let (ha, hb) = (entropy(ca.values().copied(), n), entropy(cb.values().copied(), n));
    if ha <= 0.0 || hb <= 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (ca[&x] as f64 * cb[&y] as f64)).ln()
        })
        .sum();
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptySet);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Named metrics from one run in one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell: String,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub runs: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub metric_names: Vec<String>,
    pub cells: Vec<CellSummary>,
}

fn mean_std(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MetricSummary { mean, std: var.sqrt() }
}

/// Mean and population std of every metric per cell, in the order of `cells`.
/// Every record must carry the same metric names and every cell needs at
/// least one record.
pub fn aggregate(cells: &[String], records: &[CellRecord]) -> Result<SummaryTable> {
    let Some(first) = records.first() else {
        return Err(Error::Aggregate("no records".into()));
    };
    let metric_names: Vec<String> = first.metrics.keys().cloned().collect();
    for r in records {
        if !r.metrics.keys().eq(first.metrics.keys()) {
            return Err(Error::Aggregate(format!(
                "cell {:?} reports {:?}, expected {:?}",
                r.cell,
                r.metrics.keys().collect::<Vec<_>>(),
                metric_names
            )));
        }
        if !cells.contains(&r.cell) {
            return Err(Error::Aggregate(format!("record for unplanned cell {:?}", r.cell)));
        }
    }
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let rows: Vec<&CellRecord> = records.iter().filter(|r| &r.cell == cell).collect();
        if rows.is_empty() {
            return Err(Error::Aggregate(format!("cell {cell:?} has no records")));
        }
        let metrics = metric_names
            .iter()
            .map(|m| {
                let vals: Vec<f64> = rows.iter().map(|r| r.metrics[m]).collect();
                (m.clone(), mean_std(&vals))
            })
            .collect();
        out.push(CellSummary {
            cell: cell.clone(),
            runs: rows.len(),
            metrics,
        });
    }
    Ok(SummaryTable {
        metric_names,
        cells: out,
    })
}

impl SummaryTable {
    /// Columns `cell, runs, <metric>_mean, <metric>_std, …`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["cell".to_string(), "runs".to_string()];
        for m in &self.metric_names {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        w.write_record(&header)?;
        for c in &self.cells {
            let mut row = vec![c.cell.clone(), c.runs.to_string()];
            for m in &self.metric_names {
                row.push(format!("{}", c.metrics[m].mean));
                row.push(format!("{}", c.metrics[m].std));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}
