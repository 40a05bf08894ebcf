use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};

use super::external::{run_external_metric, ExternalMetric};
use super::{band_edge_index, psnr, ssim};
use crate::error::{arg_err, Result};
use crate::exec::{map_ordered, ExecMode};
use crate::feature::FeatureMap;
use crate::freqmask::MaskMap;

/// One image to score: the reference, the degraded input and the output.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub id: String,
    pub pristine: FeatureMap,
    pub banded: FeatureMap,
    pub restored: FeatureMap,
    pub mask: Option<MaskMap>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub image_id: String,
    pub variant: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub bei_banded: f64,
    pub bei_restored: f64,
    /// Restored PSNR minus banded PSNR, both against pristine.
    pub delta_psnr: f64,
    /// Restored BEI minus banded BEI.
    pub delta_bei: f64,
    pub mask_mean: Option<f64>,
    /// Values of `MetricReport::external_columns`, in order.
    pub external: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowError {
    pub image_id: String,
    pub variant: String,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Aggregate {
    fn of(values: &[f64]) -> Option<Aggregate> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Aggregate {
            count: values.len(),
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub errors: Vec<RowError>,
    pub external_columns: Vec<String>,
}

const FIXED_COLUMNS: [&str; 6] = ["psnr_db", "ssim", "bei_banded", "bei_restored", "delta_psnr", "delta_bei"];

impl MetricRow {
    fn fixed(&self) -> [f64; 6] {
        [self.psnr_db, self.ssim, self.bei_banded, self.bei_restored, self.delta_psnr, self.delta_bei]
    }
}

fn fmt_value(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricReport {
    /// Variant labels in first-appearance order.
    pub fn variants(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.variant) {
                out.push(r.variant.clone());
            }
        }
        out
    }

    pub fn rows_for<'a>(&'a self, variant: &'a str) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows.iter().filter(move |r| r.variant == variant)
    }

    /// Per-column aggregates for one variant. Optional columns aggregate
    /// over the rows where they are present.
    pub fn aggregates(&self, variant: &str) -> BTreeMap<String, Aggregate> {
        let rows: Vec<&MetricRow> = self.rows_for(variant).collect();
        let mut out = BTreeMap::new();
        for (i, name) in FIXED_COLUMNS.iter().enumerate() {
            let vals: Vec<f64> = rows.iter().map(|r| r.fixed()[i]).collect();
            if let Some(a) = Aggregate::of(&vals) {
                out.insert(name.to_string(), a);
            }
        }
        let masks: Vec<f64> = rows.iter().filter_map(|r| r.mask_mean).collect();
        if let Some(a) = Aggregate::of(&masks) {
            out.insert("mask_mean".to_string(), a);
        }
        for (j, name) in self.external_columns.iter().enumerate() {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.external.get(j).copied().flatten()).collect();
            if let Some(a) = Aggregate::of(&vals) {
                out.insert(name.clone(), a);
            }
        }
        out
    }

    pub fn mean(&self, variant: &str, column: &str) -> Option<f64> {
        self.aggregates(variant).get(column).map(|a| a.mean)
    }

    /// Appends another report, widening external columns as needed.
    pub fn merge(&mut self, other: MetricReport) {
        let mut columns = self.external_columns.clone();
        for c in &other.external_columns {
            if !columns.contains(c) {
                columns.push(c.clone());
            }
        }
        let remap = |row: MetricRow, names: &[String]| -> MetricRow {
            let mut ext = vec![None; columns.len()];
            for (j, name) in names.iter().enumerate() {
                let k = columns.iter().position(|c| c == name).expect("merged column");
                ext[k] = row.external.get(j).copied().flatten();
            }
            MetricRow { external: ext, ..row }
        };
        let own = std::mem::take(&mut self.rows);
        let own_names = self.external_columns.clone();
        self.rows = own.into_iter().map(|r| remap(r, &own_names)).collect();
        self.rows
            .extend(other.rows.into_iter().map(|r| remap(r, &other.external_columns)));
        self.errors.extend(other.errors);
        self.external_columns = columns;
    }

    /// Comma-separated table. Columns: `image_id, variant, psnr_db, ssim,
    /// bei_banded, bei_restored, delta_psnr, delta_bei, mask_mean`, then one
    /// column per external metric. Reals use six decimals; absent values are
    /// empty fields.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image_id,variant");
        for c in FIXED_COLUMNS {
            s.push(',');
            s.push_str(c);
        }
        s.push_str(",mask_mean");
        for c in &self.external_columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{}", r.image_id, r.variant);
            for v in r.fixed() {
                let _ = write!(s, ",{}", fmt_value(Some(v)));
            }
            let _ = write!(s, ",{}", fmt_value(r.mask_mean));
            for j in 0..self.external_columns.len() {
                let _ = write!(s, ",{}", fmt_value(r.external.get(j).copied().flatten()));
            }
            s.push('\n');
        }
        s
    }

    /// JSON summary: row and error counts plus per-variant aggregates.
    pub fn summary_json(&self) -> String {
        let mut variants = serde_json::Map::new();
        for v in self.variants() {
            let aggs: serde_json::Map<String, Value> = self
                .aggregates(&v)
                .into_iter()
                .map(|(k, a)| (k, json!({"count": a.count, "mean": a.mean, "std": a.std})))
                .collect();
            variants.insert(v, Value::Object(aggs));
        }
        let summary = json!({
            "rows": self.rows.len(),
            "errors": self.errors,
            "external_columns": self.external_columns,
            "variants": variants,
        });
        let mut out = serde_json::to_string_pretty(&summary).expect("summary serialises");
        out.push('\n');
        out
    }
}

fn score(item: &EvalItem, variant: &str) -> Result<MetricRow> {
    let psnr_r = psnr(&item.restored, &item.pristine)?;
    let psnr_b = psnr(&item.banded, &item.pristine)?;
    let ssim_r = ssim(&item.restored, &item.pristine)?;
    let bei_b = band_edge_index(&item.banded);
    let bei_r = band_edge_index(&item.restored);
    Ok(MetricRow {
        image_id: item.id.clone(),
        variant: variant.to_string(),
        psnr_db: psnr_r,
        ssim: ssim_r,
        bei_banded: bei_b,
        bei_restored: bei_r,
        delta_psnr: psnr_r - psnr_b,
        delta_bei: bei_r - bei_b,
        mask_mean: item.mask.as_ref().map(|m| m.mean()),
        external: Vec::new(),
    })
}

/// Scores every item against its pristine reference. Rows that fail (for
/// example on a size mismatch) are recorded in `errors` and skipped; the
/// call fails only when no row succeeds.
pub fn evaluate(items: &[EvalItem], variant: &str) -> Result<MetricReport> {
    evaluate_with_external(items, variant, &[])
}

/// [`evaluate`] plus one extra column per external metric command.
pub fn evaluate_with_external(items: &[EvalItem], variant: &str, external: &[ExternalMetric]) -> Result<MetricReport> {
    if items.is_empty() {
        return arg_err("nothing to evaluate");
    }
    let scored = map_ordered(items, ExecMode::default(), |item| score(item, variant));
    let mut report = MetricReport {
        external_columns: external.iter().map(|m| m.name.clone()).collect(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for (item, res) in items.iter().zip(scored) {
        match res {
            Ok(row) => {
                report.rows.push(row);
                kept.push(item);
            }
            Err(e) => {
                log::warn!("{}: {e}", item.id);
                report.errors.push(RowError {
                    image_id: item.id.clone(),
                    variant: variant.to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    if report.rows.is_empty() {
        return arg_err(format!("all {} rows failed for variant {variant}", items.len()));
    }
    let columns: Vec<Vec<Option<f64>>> = external.iter().map(|m| run_external_metric(m, &kept)).collect();
    for (i, row) in report.rows.iter_mut().enumerate() {
        row.external = columns.iter().map(|c| c[i]).collect();
    }
    Ok(report)
}
