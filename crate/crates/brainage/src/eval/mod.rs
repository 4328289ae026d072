//! Evaluation: image-quality metrics, the predicted-age-difference proxy,
//! registration-map comparisons and the one-way ANOVA.
//!
//! MSE/PSNR/SSIM are computed on intensities remapped from [-1, 1] to
//! [0, 1] with peak 1; the convention and the SSIM constants are recorded in
//! every report header.

pub mod predictor;
pub mod ssim;
pub mod stats;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::SliceImage;

pub use predictor::{
    dataset_mae, load_predictor, save_predictor, train_age_predictor, AgePredictorParams,
    PredictorArch, PredictorTrainConfig,
};
pub use stats::{jacobian_relative_error, one_way_anova, relative_change};

/// PSNR of identical images is reported as this sentinel, with a flag.
pub const PSNR_SENTINEL_DB: f64 = 99.0;

fn to_unit(image: &SliceImage) -> Array2<f64> {
    image.pixels().mapv(|v| (v + 1.0) / 2.0)
}

/// Mean squared error on the [0, 1] intensity scale.
pub fn mse(a: &SliceImage, b: &SliceImage) -> f64 {
    let ua = to_unit(a);
    let ub = to_unit(b);
    let n = ua.len() as f64;
    ua.iter()
        .zip(ub.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Peak signal-to-noise ratio in dB with peak 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    /// True when MSE was zero and the sentinel value is reported.
    pub saturated: bool,
}

pub fn psnr(a: &SliceImage, b: &SliceImage) -> Psnr {
    psnr_from_mse(mse(a, b))
}

/// PSNR of a known MSE on the [0, 1] scale: `10 log10(1 / mse)`.
pub fn psnr_from_mse(mse: f64) -> Psnr {
    if mse == 0.0 {
        Psnr {
            db: PSNR_SENTINEL_DB,
            saturated: true,
        }
    } else {
        Psnr {
            db: -10.0 * mse.log10(),
            saturated: false,
        }
    }
}

/// Mean SSIM (11x11 Gaussian window) on the [0, 1] intensity scale.
pub fn ssim(a: &SliceImage, b: &SliceImage) -> f64 {
    ssim::ssim_01(&to_unit(a), &to_unit(b))
}

/// Predicted age difference: mean |f_pred(image) - target age| in years.
pub fn pad(
    predictor: &AgePredictorParams,
    images: &[&SliceImage],
    target_ages: &[u32],
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Argument("PAD over an empty image list".into()));
    }
    if images.len() != target_ages.len() {
        return Err(Error::Argument(format!(
            "PAD length mismatch: {} images vs {} ages",
            images.len(),
            target_ages.len()
        )));
    }
    let preds = predictor.predict(images);
    Ok(preds
        .iter()
        .zip(target_ages)
        .map(|(p, &a)| (p - a as f64).abs())
        .sum::<f64>()
        / preds.len() as f64)
}

/// One evaluation pair: a synthesized image against its ground-truth
/// follow-up, plus (optionally) the baseline input for the non-learned
/// reference row.
pub struct EvalPair<'a> {
    pub id: String,
    pub synthetic: &'a SliceImage,
    pub ground_truth: &'a SliceImage,
    pub target_age: u32,
    pub baseline: Option<&'a SliceImage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub ssim: f64,
    pub psnr_db: f64,
    pub psnr_saturated: bool,
    pub mse: f64,
    pub pad_years: Option<f64>,
}

/// Mean and standard deviation over per-pair values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Aggregate {
        mean,
        std: var.sqrt(),
    }
}

/// Conventions recorded with every report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportHeader {
    pub intensity_scale: String,
    pub ssim_window: usize,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub psnr_sentinel_db: f64,
}

impl Default for ReportHeader {
    fn default() -> Self {
        ReportHeader {
            intensity_scale: "[0,1], peak 1".into(),
            ssim_window: ssim::SSIM_WINDOW,
            ssim_k1: ssim::SSIM_K1,
            ssim_k2: ssim::SSIM_K2,
            psnr_sentinel_db: PSNR_SENTINEL_DB,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub ssim: Aggregate,
    pub psnr_db: Aggregate,
    pub mse: Aggregate,
    pub pad_years: Option<Aggregate>,
}

/// Per-pair records plus aggregates for the synthetic row and, when
/// baselines were supplied, the non-learned baseline row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub header: ReportHeader,
    pub records: Vec<PairRecord>,
    pub baseline_records: Vec<PairRecord>,
}

impl MetricsReport {
    pub fn summary(&self) -> MetricsSummary {
        summarize(&self.records)
    }

    pub fn baseline_summary(&self) -> Option<MetricsSummary> {
        if self.baseline_records.is_empty() {
            None
        } else {
            Some(summarize(&self.baseline_records))
        }
    }

    /// Per-pair CSV with the record rows.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let mut w =
            csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
        #[derive(Serialize)]
        struct Row<'a> {
            row_kind: &'a str,
            id: &'a str,
            ssim: f64,
            psnr_db: f64,
            psnr_saturated: bool,
            mse: f64,
            pad_years: Option<f64>,
        }
        for (kind, records) in [("synthetic", &self.records), ("baseline", &self.baseline_records)]
        {
            for r in records {
                w.serialize(Row {
                    row_kind: kind,
                    id: &r.id,
                    ssim: r.ssim,
                    psnr_db: r.psnr_db,
                    psnr_saturated: r.psnr_saturated,
                    mse: r.mse,
                    pad_years: r.pad_years,
                })
                .map_err(|e| Error::parse(path.display().to_string(), e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Human-readable key-value summary.
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let s = self.summary();
        out.push_str(&format!("intensity_scale = {}\n", self.header.intensity_scale));
        out.push_str(&format!(
            "ssim_window = {}\nssim_k1 = {}\nssim_k2 = {}\npsnr_sentinel_db = {}\n",
            self.header.ssim_window, self.header.ssim_k1, self.header.ssim_k2,
            self.header.psnr_sentinel_db
        ));
        out.push_str(&format!("pairs = {}\n", self.records.len()));
        out.push_str(&format!("ssim_mean = {}\nssim_std = {}\n", s.ssim.mean, s.ssim.std));
        out.push_str(&format!(
            "psnr_mean_db = {}\npsnr_std_db = {}\n",
            s.psnr_db.mean, s.psnr_db.std
        ));
        out.push_str(&format!("mse_mean = {}\nmse_std = {}\n", s.mse.mean, s.mse.std));
        if let Some(p) = &s.pad_years {
            out.push_str(&format!("pad_mean_years = {}\npad_std_years = {}\n", p.mean, p.std));
        }
        if let Some(b) = self.baseline_summary() {
            out.push_str(&format!(
                "baseline_ssim_mean = {}\nbaseline_psnr_mean_db = {}\nbaseline_mse_mean = {}\n",
                b.ssim.mean, b.psnr_db.mean, b.mse.mean
            ));
        }
        out
    }
}

fn summarize(records: &[PairRecord]) -> MetricsSummary {
    let ssim_vals: Vec<f64> = records.iter().map(|r| r.ssim).collect();
    let psnr_vals: Vec<f64> = records.iter().map(|r| r.psnr_db).collect();
    let mse_vals: Vec<f64> = records.iter().map(|r| r.mse).collect();
    let pad_vals: Vec<f64> = records.iter().filter_map(|r| r.pad_years).collect();
    MetricsSummary {
        ssim: aggregate(&ssim_vals),
        psnr_db: aggregate(&psnr_vals),
        mse: aggregate(&mse_vals),
        pad_years: if pad_vals.len() == records.len() && !pad_vals.is_empty() {
            Some(aggregate(&pad_vals))
        } else {
            None
        },
    }
}

/// Compute per-pair metrics (and PAD when a predictor is supplied), plus the
/// baseline row for pairs that carry a baseline image.
pub fn evaluate_pairs(
    predictor: Option<&AgePredictorParams>,
    pairs: &[EvalPair],
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Argument("no evaluation pairs".into()));
    }
    let mut records = Vec::with_capacity(pairs.len());
    let mut baseline_records = Vec::new();
    for pair in pairs {
        let p = psnr(pair.synthetic, pair.ground_truth);
        let pad_years = match predictor {
            Some(pred) => Some(pad(pred, &[pair.synthetic], &[pair.target_age])?),
            None => None,
        };
        records.push(PairRecord {
            id: pair.id.clone(),
            ssim: ssim(pair.synthetic, pair.ground_truth),
            psnr_db: p.db,
            psnr_saturated: p.saturated,
            mse: mse(pair.synthetic, pair.ground_truth),
            pad_years,
        });
        if let Some(base) = pair.baseline {
            let bp = psnr(base, pair.ground_truth);
            baseline_records.push(PairRecord {
                id: pair.id.clone(),
                ssim: ssim(base, pair.ground_truth),
                psnr_db: bp.db,
                psnr_saturated: bp.saturated,
                mse: mse(base, pair.ground_truth),
                pad_years: None,
            });
        }
    }
    Ok(MetricsReport {
        header: ReportHeader::default(),
        records,
        baseline_records,
    })
}
