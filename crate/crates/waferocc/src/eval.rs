//! Anomaly scoring, threshold search on the validation split, and metric
//! reporting with defect as the positive class.
//!
//! Scores are deterministic: the encoder's mean head is used directly, no
//! sampling. The threshold grid walks m + 0.1ks over the train-score
//! mean/std; the returned threshold is the exhaustive argmax of validation
//! F1 over that grid, ties resolved toward the larger threshold.

use crate::train::{ModelBundle, ModelKind, TrainConfig};
use crate::wafer::{encode_batch, EncodedWafer, WaferLabel, WaferMap, ENCODED_LEN};
use crate::{Error, Result};

/// Rows scored per forward pass; bounds peak memory, not the result.
pub const SCORE_BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truth {
    Normal,
    Defect,
}

/// Normal for the None label, Defect for every defect pattern, None for
/// Unlabeled (callers must exclude those before scoring).
pub fn truth_of(label: WaferLabel) -> Option<Truth> {
    match label {
        WaferLabel::None => Some(Truth::Normal),
        WaferLabel::Unlabeled => None,
        _ => Some(Truth::Defect),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub score: f32,
    pub truth: Truth,
    pub predicted: Option<Truth>,
}

fn score_weight(bundle: &ModelBundle) -> Result<f64> {
    match bundle.kind {
        ModelKind::AaeDsvdd => {
            let raw = TrainConfig::blob_value(&bundle.identity_blob, "w_svdd")
                .ok_or_else(|| Error::Config("bundle identity lacks w_svdd".into()))?;
            raw.parse::<f64>()
                .map_err(|_| Error::Config(format!("bundle w_svdd {raw:?} unparseable")))
        }
        _ => Ok(0.0),
    }
}

/// Scores one interleaved batch (rows x ENCODED_LEN).
fn batch_scores(bundle: &ModelBundle, data: &[f32], rows: usize) -> Result<Vec<f32>> {
    let latent = bundle.encoder.latent_dim();
    let mu = bundle.encoder.infer_mu(data, rows);
    match bundle.kind {
        ModelKind::Dsvdd => {
            let sphere = bundle
                .sphere
                .as_ref()
                .ok_or_else(|| Error::Config("bundle is missing hypersphere state".into()))?;
            Ok(signed_sq_dists(&mu, latent, sphere.radius, &sphere.center))
        }
        ModelKind::Aae => {
            let dec = bundle
                .decoder
                .as_ref()
                .ok_or_else(|| Error::Config("bundle is missing its decoder".into()))?;
            let xhat = dec.infer(&mu, rows);
            Ok(row_l1(&xhat, data))
        }
        ModelKind::AaeDsvdd => {
            let sphere = bundle
                .sphere
                .as_ref()
                .ok_or_else(|| Error::Config("bundle is missing hypersphere state".into()))?;
            let dec = bundle
                .decoder
                .as_ref()
                .ok_or_else(|| Error::Config("bundle is missing its decoder".into()))?;
            let w = score_weight(bundle)?;
            let xhat = dec.infer(&mu, rows);
            let l1 = row_l1(&xhat, data);
            let sd = signed_sq_dists(&mu, latent, sphere.radius, &sphere.center);
            Ok(l1
                .iter()
                .zip(&sd)
                .map(|(&a, &b)| (a as f64 + w * b as f64) as f32)
                .collect())
        }
    }
}

/// ||mu - C||^2 - R^2 per row, accumulated in f64.
fn signed_sq_dists(mu: &[f32], latent: usize, radius: f32, center: &[f32]) -> Vec<f32> {
    let r2 = radius as f64 * radius as f64;
    mu.chunks_exact(latent)
        .map(|row| {
            let d2: f64 = row
                .iter()
                .zip(center)
                .map(|(&z, &c)| {
                    let d = (z - c) as f64;
                    d * d
                })
                .sum();
            (d2 - r2) as f32
        })
        .collect()
}

/// Mean absolute error per row, accumulated in f64.
fn row_l1(xhat: &[f32], x: &[f32]) -> Vec<f32> {
    xhat.chunks_exact(ENCODED_LEN)
        .zip(x.chunks_exact(ENCODED_LEN))
        .map(|(a, b)| {
            let s: f64 = a
                .iter()
                .zip(b)
                .map(|(&p, &q)| (p as f64 - q as f64).abs())
                .sum();
            (s / ENCODED_LEN as f64) as f32
        })
        .collect()
}

pub fn anomaly_score(bundle: &ModelBundle, x: &EncodedWafer) -> Result<f32> {
    let batch = crate::wafer::batch_from_encoded(&[x]);
    Ok(batch_scores(bundle, &batch.data, 1)?[0])
}

/// Scores a whole dataset in [`SCORE_BATCH`] chunks.
pub fn score_maps(bundle: &ModelBundle, maps: &[WaferMap]) -> Result<Vec<f32>> {
    if maps.is_empty() {
        return Ok(Vec::new());
    }
    let data = encode_batch(maps);
    let rows = maps.len();
    let mut out = Vec::with_capacity(rows);
    for start in (0..rows).step_by(SCORE_BATCH) {
        let end = (start + SCORE_BATCH).min(rows);
        let chunk = &data.data[start * ENCODED_LEN..end * ENCODED_LEN];
        out.extend(batch_scores(bundle, chunk, end - start)?);
    }
    for (i, &s) in out.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::Numeric(format!("non-finite anomaly score at index {i}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub k: i64,
    pub threshold: f64,
    pub f1: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub mean: f64,
    pub std: f64,
    pub points: Vec<GridPoint>,
}

fn recall_at(valid: &[ScoredSample], threshold: f64) -> f64 {
    let (mut tp, mut fnc) = (0usize, 0usize);
    for s in valid {
        if s.truth == Truth::Defect {
            if (s.score as f64) > threshold {
                tp += 1;
            } else {
                fnc += 1;
            }
        }
    }
    if tp + fnc == 0 {
        0.0
    } else {
        tp as f64 / (tp + fnc) as f64
    }
}

fn f1_at(valid: &[ScoredSample], threshold: f64) -> (f64, f64) {
    let (mut tp, mut fp, mut fnc) = (0usize, 0usize, 0usize);
    for s in valid {
        let pred_defect = (s.score as f64) > threshold;
        match (pred_defect, s.truth) {
            (true, Truth::Defect) => tp += 1,
            (true, Truth::Normal) => fp += 1,
            (false, Truth::Defect) => fnc += 1,
            (false, Truth::Normal) => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fnc == 0 { 0.0 } else { tp as f64 / (tp + fnc) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (f1, recall)
}

/// Grid argmax of validation F1 over {m + 0.1ks : -100 <= k <= k_U} where
/// k_U is the largest k keeping validation recall at 1 (0 when recall is
/// already below 1 at the mean). Ties go to the larger threshold.
pub fn threshold_search(train_scores: &[f32], valid: &[ScoredSample]) -> Result<(f64, GridReport)> {
    if train_scores.is_empty() {
        return Err(Error::Data("threshold search needs train scores".into()));
    }
    if !valid.iter().any(|s| s.truth == Truth::Defect)
        || !valid.iter().any(|s| s.truth == Truth::Normal)
    {
        return Err(Error::Data(
            "validation set must contain both normal and defect samples".into(),
        ));
    }
    if train_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite training score".into()));
    }

    let n = train_scores.len() as f64;
    let mean = train_scores.iter().map(|&s| s as f64).sum::<f64>() / n;
    let var = train_scores
        .iter()
        .map(|&s| {
            let d = s as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Err(Error::Numeric(
            "degenerate score distribution (zero standard deviation)".into(),
        ));
    }

    let at = |k: i64| mean + k as f64 * 0.1 * std;

    let mut k_upper: i64 = 0;
    if recall_at(valid, at(0)) >= 1.0 {
        // recall is monotone non-increasing in the threshold, so walk up
        // until it first drops
        let mut k = 1;
        while recall_at(valid, at(k)) >= 1.0 {
            k_upper = k;
            k += 1;
            if k > 10_000_000 {
                return Err(Error::Numeric("threshold grid failed to terminate".into()));
            }
        }
    }

    let mut points = Vec::with_capacity((k_upper + 101) as usize);
    let mut best: Option<(f64, f64)> = None; // (f1, threshold)
    for k in -100..=k_upper {
        let t = at(k);
        let (f1, recall) = f1_at(valid, t);
        points.push(GridPoint { k, threshold: t, f1, recall });
        let better = match best {
            None => true,
            Some((bf, _)) => f1 >= bf,
        };
        if better {
            best = Some((f1, t));
        }
    }
    let (_, threshold) = best.expect("grid is never empty");
    Ok((threshold, GridReport { mean, std, points }))
}

/// Defect iff score > threshold, compared in f64.
pub fn classify(scores: &[f32], threshold: f64) -> Vec<Truth> {
    scores
        .iter()
        .map(|&s| {
            if (s as f64) > threshold {
                Truth::Defect
            } else {
                Truth::Normal
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Metrics that hit a zero denominator and were reported as 0.
    pub zero_division: Vec<&'static str>,
}

pub fn metrics(predictions: &[Truth], truths: &[Truth], threshold: f64) -> Result<EvalReport> {
    if predictions.len() != truths.len() {
        return Err(Error::Data(format!(
            "prediction/truth length mismatch: {} vs {}",
            predictions.len(),
            truths.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fnc) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p, t) {
            (Truth::Defect, Truth::Defect) => tp += 1,
            (Truth::Defect, Truth::Normal) => fp += 1,
            (Truth::Normal, Truth::Normal) => tn += 1,
            (Truth::Normal, Truth::Defect) => fnc += 1,
        }
    }
    let mut flags = Vec::new();
    let total = tp + fp + tn + fnc;
    let accuracy = if total == 0 {
        flags.push("accuracy");
        0.0
    } else {
        (tp + tn) as f64 / total as f64
    };
    let precision = if tp + fp == 0 {
        flags.push("precision");
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fnc == 0 {
        flags.push("recall");
        0.0
    } else {
        tp as f64 / (tp + fnc) as f64
    };
    let f1 = if precision + recall == 0.0 {
        flags.push("f1");
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EvalReport {
        threshold,
        true_pos: tp,
        false_pos: fp,
        true_neg: tn,
        false_neg: fnc,
        accuracy,
        precision,
        recall,
        f1,
        zero_division: flags,
    })
}

/// Aligned two-column table mirroring the report row order.
pub fn render_table(valid: &EvalReport, test: &EvalReport) -> String {
    let rows = [
        ("Threshold", valid.threshold, test.threshold),
        ("Accuracy", valid.accuracy, test.accuracy),
        ("Precision", valid.precision, test.precision),
        ("Recall", valid.recall, test.recall),
        ("F1", valid.f1, test.f1),
    ];
    let mut s = String::new();
    s.push_str(&format!("{:<12}{:>12}{:>12}\n", "", "valid", "test"));
    for (name, v, t) in rows {
        s.push_str(&format!("{name:<12}{v:>12.6}{t:>12.6}\n"));
    }
    s
}

fn push_kv(s: &mut String, prefix: &str, r: &EvalReport) {
    s.push_str(&format!("{prefix}.threshold={:.9}\n", r.threshold));
    s.push_str(&format!("{prefix}.tp={}\n", r.true_pos));
    s.push_str(&format!("{prefix}.fp={}\n", r.false_pos));
    s.push_str(&format!("{prefix}.tn={}\n", r.true_neg));
    s.push_str(&format!("{prefix}.fn={}\n", r.false_neg));
    s.push_str(&format!("{prefix}.accuracy={:.9}\n", r.accuracy));
    s.push_str(&format!("{prefix}.precision={:.9}\n", r.precision));
    s.push_str(&format!("{prefix}.recall={:.9}\n", r.recall));
    s.push_str(&format!("{prefix}.f1={:.9}\n", r.f1));
    s.push_str(&format!("{prefix}.zero_division={}\n", r.zero_division.join(",")));
}

/// Machine-readable key=value form; `extra` pairs (dataset digests, model
/// kind) are emitted first, sorted by key.
pub fn render_kv(valid: &EvalReport, test: &EvalReport, extra: &[(String, String)]) -> String {
    let mut s = String::new();
    let mut pairs: Vec<_> = extra.to_vec();
    pairs.sort();
    for (k, v) in pairs {
        s.push_str(&format!("{k}={v}\n"));
    }
    push_kv(&mut s, "valid", valid);
    push_kv(&mut s, "test", test);
    s
}
