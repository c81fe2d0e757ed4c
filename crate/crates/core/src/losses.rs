//! Loss terms and their gradients with respect to their inputs.
//!
//! Every `*_with_grad` function returns the loss value together with the
//! gradients needed to backpropagate into the networks; the plain functions
//! return the value only.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::layers::sigmoid;

/// Added to the population standard deviation before dividing.
pub const ZSCORE_EPS: f64 = 1e-8;

/// Columns whose Z-scored norm falls below this are scaled by it instead of
/// being projected to unit length, so constant (dead) feature dimensions
/// produce near-zero correlations rather than amplified round-off.
pub const NORM_FLOOR: f64 = 1e-4;

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_batch(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        Err(Error::Argument(format!("{name}: empty batch")))
    } else {
        Ok(())
    }
}

/// Classifier loss: originals labelled 1, intervened labelled 0, with
/// per-stream batch means. Returns `(loss, dL/dlogits_s, dL/dlogits_a)`.
pub fn loss_cls_with_grad(logits_s: &[f64], logits_a: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_batch("loss_cls logits_s", logits_s)?;
    check_batch("loss_cls logits_a", logits_a)?;
    let (ns, na) = (logits_s.len() as f64, logits_a.len() as f64);
    let loss = logits_s.iter().map(|&l| softplus(-l)).sum::<f64>() / ns
        + logits_a.iter().map(|&l| softplus(l)).sum::<f64>() / na;
    let ds = logits_s.iter().map(|&l| (sigmoid(l) - 1.0) / ns).collect();
    let da = logits_a.iter().map(|&l| sigmoid(l) / na).collect();
    Ok((loss, ds, da))
}

pub fn loss_cls(logits_s: &[f64], logits_a: &[f64]) -> Result<f64> {
    Ok(loss_cls_with_grad(logits_s, logits_a)?.0)
}

/// Confusion loss: intervened samples pushed toward the "original" label.
pub fn loss_con_with_grad(logits_a: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_batch("loss_con logits_a", logits_a)?;
    let n = logits_a.len() as f64;
    let loss = logits_a.iter().map(|&l| softplus(-l)).sum::<f64>() / n;
    let d = logits_a.iter().map(|&l| (sigmoid(l) - 1.0) / n).collect();
    Ok((loss, d))
}

pub fn loss_con(logits_a: &[f64]) -> Result<f64> {
    Ok(loss_con_with_grad(logits_a)?.0)
}

/// Cross-correlation matrix between the dimensions of two feature batches.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(pub Array2<f64>);

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn identity(n: usize) -> Self {
        CorrelationMatrix(Array2::eye(n))
    }
}

/// Intermediates kept for the backward pass of [`correlation_matrix`].
pub struct CorrelationCache {
    s: ColumnCache,
    a: ColumnCache,
}

struct ColumnCache {
    centered: Array2<f64>,
    std: Array1<f64>,
    zhat: Array2<f64>,
    norm: Array1<f64>,
    unit: Array2<f64>,
}

fn normalize_columns(z: &ArrayView2<f64>) -> ColumnCache {
    let b = z.nrows() as f64;
    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = z - &mean;
    let std = centered.map_axis(Axis(0), |c| (c.dot(&c) / b).sqrt());
    let zhat = &centered / &std.mapv(|s| s + ZSCORE_EPS);
    let norm = zhat.map_axis(Axis(0), |c| c.dot(&c).sqrt());
    let unit = &zhat / &norm.mapv(|n| n.max(NORM_FLOOR));
    ColumnCache { centered, std, zhat, norm, unit }
}

/// Z-score each column across the batch, then take cosine similarities
/// between column `i` of `zs` and column `j` of `za`.
pub fn correlation_matrix_with_cache(
    zs: &ArrayView2<f64>,
    za: &ArrayView2<f64>,
) -> Result<(CorrelationMatrix, CorrelationCache)> {
    if zs.dim() != za.dim() {
        return Err(Error::Dimension(format!(
            "feature batches differ in shape: {:?} vs {:?}",
            zs.dim(),
            za.dim()
        )));
    }
    if zs.nrows() < 2 {
        return Err(Error::Argument(format!(
            "correlation needs at least 2 samples, got {}",
            zs.nrows()
        )));
    }
    let s = normalize_columns(zs);
    let a = normalize_columns(za);
    let m = s.unit.t().dot(&a.unit);
    Ok((CorrelationMatrix(m), CorrelationCache { s, a }))
}

pub fn correlation_matrix(zs: &ArrayView2<f64>, za: &ArrayView2<f64>) -> Result<CorrelationMatrix> {
    Ok(correlation_matrix_with_cache(zs, za)?.0)
}

fn column_backward(c: &ColumnCache, dunit: &Array2<f64>) -> Array2<f64> {
    let b = c.zhat.nrows() as f64;
    let mut dz = Array2::<f64>::zeros(c.zhat.dim());
    for j in 0..c.zhat.ncols() {
        let du = dunit.column(j);
        let u = c.unit.column(j);
        let n = c.norm[j];
        let dzhat: Array1<f64> = if n >= NORM_FLOOR {
            (&du - &(&u * u.dot(&du))) / n
        } else {
            du.to_owned() / NORM_FLOOR
        };
        let d = c.centered.column(j);
        let sd = c.std[j];
        let denom = sd + ZSCORE_EPS;
        let mut dd = &dzhat / denom;
        if sd > 0.0 {
            let dstd = -dzhat.dot(&d) / (denom * denom);
            dd.scaled_add(dstd / (b * sd), &d);
        }
        let mean = dd.sum() / b;
        dz.column_mut(j).assign(&dd.mapv(|v| v - mean));
    }
    dz
}

/// Backpropagate `dL/dM` to both feature batches.
pub fn correlation_backward(cache: &CorrelationCache, dm: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let dunit_s = cache.a.unit.dot(&dm.t());
    let dunit_a = cache.s.unit.dot(dm);
    (column_backward(&cache.s, &dunit_s), column_backward(&cache.a, &dunit_a))
}

/// `0.5 * ||M - I||_F^2` and its gradient `M - I`.
pub fn loss_fac_with_grad(m: &CorrelationMatrix) -> Result<(f64, Array2<f64>)> {
    let (r, c) = m.0.dim();
    if r != c {
        return Err(Error::Dimension(format!("correlation matrix is {r}x{c}, not square")));
    }
    let diff = &m.0 - &Array2::<f64>::eye(r);
    let loss = 0.5 * diff.iter().map(|v| v * v).sum::<f64>();
    Ok((loss, diff))
}

pub fn loss_fac(m: &CorrelationMatrix) -> Result<f64> {
    Ok(loss_fac_with_grad(m)?.0)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_pair(y: &ArrayView2<f64>, yhat: &ArrayView2<f64>) -> Result<()> {
    if y.dim() != yhat.dim() || y.ncols() != 2 {
        return Err(Error::Dimension(format!(
            "label batch {:?} and prediction batch {:?} must both be Bx2",
            y.dim(),
            yhat.dim()
        )));
    }
    if y.nrows() == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    Ok(())
}

/// Mean over the batch of the per-sample L1 distance (summed over pitch and
/// yaw), with its gradient w.r.t. the predictions.
pub fn l1_with_grad(y: &ArrayView2<f64>, yhat: &ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    check_pair(y, yhat)?;
    let b = y.nrows() as f64;
    let mut grad = Array2::<f64>::zeros(y.dim());
    let mut total = 0.0;
    Zip::from(&mut grad).and(y).and(yhat).for_each(|g, &t, &p| {
        total += (t - p).abs();
        *g = sign(p - t) / b;
    });
    Ok((total / b, grad))
}

/// `0.5 * L1(y, yhat_s) + 0.5 * L1(y, yhat_a)`; both streams are scored
/// against the clean labels.
pub fn loss_gaze_with_grad(
    y: &ArrayView2<f64>,
    yhat_s: &ArrayView2<f64>,
    yhat_a: &ArrayView2<f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let (ls, gs) = l1_with_grad(y, yhat_s)?;
    let (la, ga) = l1_with_grad(y, yhat_a)?;
    Ok((0.5 * ls + 0.5 * la, gs * 0.5, ga * 0.5))
}

pub fn loss_gaze(y: &ArrayView2<f64>, yhat_s: &ArrayView2<f64>, yhat_a: &ArrayView2<f64>) -> Result<f64> {
    Ok(loss_gaze_with_grad(y, yhat_s, yhat_a)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub con: f64,
    pub fac: f64,
    pub gaze: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { con: 3.0, fac: 2.0, gaze: 5.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("con", self.con), ("fac", self.fac), ("gaze", self.gaze)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss_weights.{name}: must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Weighted primary objective.
pub fn loss_prim(l_con: f64, l_fac: f64, l_gaze: f64, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [("l_con", l_con), ("l_fac", l_fac), ("l_gaze", l_gaze)] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} is not finite ({v})")));
        }
    }
    Ok(weights.con * l_con + weights.fac * l_fac + weights.gaze * l_gaze)
}
