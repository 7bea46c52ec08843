//! Surface and image quality metrics.

use rayon::prelude::*;
use rstar::RTree;
use serde::Serialize;

use crate::{Error, Result, RgbImage, Vec3};

/// Default number of surface samples drawn from a mesh for evaluation.
pub const DEFAULT_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Chamfer {
    pub accuracy: f64,
    pub completeness: f64,
    pub chamfer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

/// Exact nearest-neighbor distances from every query to `targets`.
pub fn nearest_distances(queries: &[Vec3], targets: &[Vec3]) -> Vec<f64> {
    let tree = RTree::bulk_load(targets.iter().map(|p| [p.x, p.y, p.z]).collect());
    queries
        .par_iter()
        .map(|q| {
            let p = [q.x, q.y, q.z];
            tree.nearest_neighbor(&p)
                .map(|n| ((n[0] - p[0]).powi(2) + (n[1] - p[1]).powi(2) + (n[2] - p[2]).powi(2)).sqrt())
                .unwrap_or(f64::INFINITY)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn chamfer(pred: &[Vec3], gt: &[Vec3]) -> Result<Chamfer> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyInput);
    }
    let accuracy = mean(&nearest_distances(pred, gt));
    let completeness = mean(&nearest_distances(gt, pred));
    Ok(Chamfer {
        accuracy,
        completeness,
        chamfer: (accuracy + completeness) / 2.0,
    })
}

pub fn fscore(pred: &[Vec3], gt: &[Vec3], tau: f64) -> Result<FScore> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "f-score threshold {tau} must be positive"
        )));
    }
    Ok(fscore_from_distances(
        &nearest_distances(pred, gt),
        &nearest_distances(gt, pred),
        tau,
    ))
}

/// F-score from precomputed pred-to-gt and gt-to-pred distances.
pub fn fscore_from_distances(pred_to_gt: &[f64], gt_to_pred: &[f64], tau: f64) -> FScore {
    let frac = |d: &[f64]| d.iter().filter(|&&v| v < tau).count() as f64 / d.len() as f64;
    let precision = frac(pred_to_gt);
    let recall = frac(gt_to_pred);
    let fscore = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    FScore {
        precision,
        recall,
        fscore,
    }
}

/// Peak signal-to-noise ratio for images in `[0, 1]`, capped at 99 dB.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.check_shape(b, "psnr inputs")?;
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).norm_squared())
        .sum::<f64>()
        / (3 * a.len()) as f64;
    Ok(if mse < 1e-10 {
        99.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(99.0)
    })
}

pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    crate::ssim::ssim(a, b)
}
