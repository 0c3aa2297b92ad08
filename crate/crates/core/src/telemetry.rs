//! Dimension-weighted norms and effective learning rates of the critic,
//! split into encoder and predictor layers.
//!
//! Grouping: each row of a weight matrix is a group of its own, so a
//! network whose rows are all unit-norm has weighted weight norm exactly 1.
//! Vector parameters (scalers, interpolation vectors, biases, gains) form
//! one group each. The ELR is taken over the weight-matrix rows, which is
//! where the hyperspherical constraint acts and where norms cannot vanish.

use std::io::Write;

use crate::error::{Error, Result};
use crate::params::{Membership, ParamStore};
use crate::tensor::Tensor;

/// `sqrt(sum_i w_i * norm2_i)` with `w_i = dims_i / sum_j dims_j`.
pub fn weighted_norm(groups: &[(f64, usize)]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Usage("weighted_norm of an empty group list".into()));
    }
    if groups.iter().any(|g| g.1 == 0) {
        return Err(Error::Usage("group with zero dimensions".into()));
    }
    let total: usize = groups.iter().map(|g| g.1).sum();
    let s: f64 = groups
        .iter()
        .map(|&(n2, d)| d as f64 / total as f64 * n2)
        .sum();
    Ok(s.sqrt())
}

/// `sqrt(sum_i w_i * grad2_i / param2_i)` over `(grad2, param2, dims)`.
pub fn elr(groups: &[(f64, f64, usize)]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Usage("elr of an empty group list".into()));
    }
    if let Some(g) = groups.iter().find(|g| !(g.1 > 0.0)) {
        return Err(Error::Numeric(format!(
            "parameter norm {} in elr",
            g.1.sqrt()
        )));
    }
    let total: usize = groups.iter().map(|g| g.2).sum();
    let s: f64 = groups
        .iter()
        .map(|&(g2, p2, d)| d as f64 / total as f64 * g2 / p2)
        .sum();
    Ok(s.sqrt())
}

/// Per-side statistics of one record.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SideStats {
    pub feat_norm: f64,
    pub w_norm_constrained: f64,
    pub w_norm_all: f64,
    pub g_norm: f64,
    pub elr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct TelemetryRecord {
    pub update_step: u64,
    pub encoder: SideStats,
    pub predictor: SideStats,
}

pub const CSV_HEADER: &str =
    "update_step,enc_feat_norm,enc_w_norm_constrained,enc_w_norm_all,enc_g_norm,enc_elr,\
pred_feat_norm,pred_w_norm_constrained,pred_w_norm_all,pred_g_norm,pred_elr";

/// Nine significant digits in scientific notation.
pub fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

impl TelemetryRecord {
    pub fn csv_row(&self) -> String {
        let side = |s: &SideStats| {
            [
                s.feat_norm,
                s.w_norm_constrained,
                s.w_norm_all,
                s.g_norm,
                s.elr,
            ]
            .iter()
            .map(|v| fmt_sig9(*v))
            .collect::<Vec<_>>()
            .join(",")
        };
        format!(
            "{},{},{}",
            self.update_step,
            side(&self.encoder),
            side(&self.predictor)
        )
    }

    pub fn is_valid(&self) -> bool {
        [self.encoder, self.predictor].iter().all(|s| {
            [
                s.feat_norm,
                s.w_norm_constrained,
                s.w_norm_all,
                s.g_norm,
                s.elr,
            ]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
        })
    }
}

/// A feature tensor together with the parameter count of the layer that
/// produced it (its weight in the feature-norm average).
#[derive(Clone, Debug)]
pub struct Feature {
    pub value: Tensor,
    pub layer_params: usize,
}

fn mean_row_norm2(t: &Tensor) -> f64 {
    let rows = t.rows().max(1);
    t.sum_sq() / rows as f64
}

fn side(
    store: &ParamStore,
    grads: &[Tensor],
    features: &[Feature],
    group: Membership,
) -> Result<SideStats> {
    let mut constrained = Vec::new();
    let mut all = Vec::new();
    let mut grad_groups = Vec::new();
    let mut elr_groups = Vec::new();
    for (p, g) in store.iter().zip(grads).filter(|(p, _)| p.group == group) {
        if p.kind.is_matrix() {
            let c = p.value.cols();
            for (wr, gr) in p.value.data().chunks(c).zip(g.data().chunks(c)) {
                let w2: f64 = wr.iter().map(|v| v * v).sum();
                let g2: f64 = gr.iter().map(|v| v * v).sum();
                constrained.push((w2, c));
                all.push((w2, c));
                grad_groups.push((g2, c));
                elr_groups.push((g2, w2, c));
            }
        } else {
            let d = p.value.numel();
            all.push((p.value.sum_sq(), d));
            grad_groups.push((g.sum_sq(), d));
        }
    }
    let feats: Vec<(f64, usize)> = features
        .iter()
        .map(|f| (mean_row_norm2(&f.value), f.layer_params))
        .collect();
    Ok(SideStats {
        feat_norm: weighted_norm(&feats)?,
        w_norm_constrained: weighted_norm(&constrained)?,
        w_norm_all: weighted_norm(&all)?,
        g_norm: weighted_norm(&grad_groups)?,
        elr: elr(&elr_groups)?,
    })
}

/// Builds a record from a critic's parameters, the gradients of its last
/// backward pass (before projection) and its captured features.
pub fn record(
    update_step: u64,
    store: &ParamStore,
    grads: &[Tensor],
    encoder_features: &[Feature],
    predictor_features: &[Feature],
) -> Result<TelemetryRecord> {
    if grads.len() != store.len() {
        return Err(Error::Usage(format!(
            "{} gradients for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    Ok(TelemetryRecord {
        update_step,
        encoder: side(store, grads, encoder_features, Membership::Encoder)?,
        predictor: side(store, grads, predictor_features, Membership::Predictor)?,
    })
}

/// Writes the header and rows in order.
pub struct CsvWriter<W: Write> {
    out: W,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, header: &str) -> Result<Self> {
        writeln!(out, "{header}")?;
        Ok(Self { out })
    }

    /// Continues a file that already has its header.
    pub fn resume(out: W) -> Self {
        Self { out }
    }

    pub fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Summary of one numeric column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

pub fn summarize(values: &[f64]) -> Option<ColumnSummary> {
    if values.is_empty() {
        return None;
    }
    Some(ColumnSummary {
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: values.iter().sum::<f64>() / values.len() as f64,
    })
}

/// `max / min` of the second half of a series; `None` when empty or when
/// the minimum is not positive.
pub fn drift_ratio(series: &[f64]) -> Option<f64> {
    let tail = &series[series.len() / 2..];
    let s = summarize(tail)?;
    (s.min > 0.0).then(|| s.max / s.min)
}

/// Parsed telemetry CSV: header names and numeric columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Config("empty CSV file".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut columns = vec![Vec::new(); header.len()];
        for (n, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(Error::Config(format!(
                    "row {} has {} cells, header has {}",
                    n + 2,
                    cells.len(),
                    header.len()
                )));
            }
            for (col, cell) in columns.iter_mut().zip(cells) {
                col.push(
                    cell.trim().parse().map_err(|_| {
                        Error::Config(format!("row {}: bad number '{cell}'", n + 2))
                    })?,
                );
            }
        }
        Ok(Self { header, columns })
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| &self.columns[i][..])
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}
