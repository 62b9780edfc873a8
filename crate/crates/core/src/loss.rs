//! Training objectives with analytic gradients.
//!
//! All losses are sums over the batch. Euclidean distances are not squared;
//! where two points coincide the distance gradient is taken as zero, and a
//! hinge sitting exactly at zero counts as inactive.

use crate::error::{Error, Result};
use crate::matrix::{euclidean, Matrix};
use crate::sampling::RankedTriplet;

/// Loss value plus its gradient with respect to the loss inputs (features or logits).
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: Matrix,
}

impl LossResult {
    /// Extends the gradient with zero rows up to `rows`.
    pub fn padded(mut self, rows: usize) -> Result<Self> {
        if rows < self.grad.rows() {
            return Err(Error::ShapeMismatch(format!(
                "cannot pad {} rows down to {rows}",
                self.grad.rows()
            )));
        }
        let cols = self.grad.cols();
        let mut data = self.grad.into_vec();
        data.resize(rows * cols, 0.0);
        self.grad = Matrix::from_vec(rows, cols, data)?;
        Ok(self)
    }
}

/// `d(a, b)` contribution to the gradient, scaled by `sign`.
fn push_distance_grad(grad: &mut Matrix, features: &Matrix, a: usize, b: usize, sign: f64) {
    let d = euclidean(features.row(a), features.row(b));
    if d == 0.0 {
        return;
    }
    for k in 0..features.cols() {
        let g = sign * (features[(a, k)] - features[(b, k)]) / d;
        grad[(a, k)] += g;
        grad[(b, k)] -= g;
    }
}

/// Batch-hard triplet loss over pseudo labels:
/// `sum_a [m + max_p d(a, p) - min_n d(a, n)]_+`.
pub fn ctl_loss(features: &Matrix, labels: &[usize], margin: f64) -> Result<LossResult> {
    let b = features.rows();
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {b} rows",
            labels.len()
        )));
    }
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateBatch("fewer than two labels".into()));
    }
    for &l in &distinct {
        if labels.iter().filter(|&&x| x == l).count() < 2 {
            return Err(Error::DegenerateBatch(format!(
                "label {l} has a single instance"
            )));
        }
    }

    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, features.cols());
    for a in 0..b {
        let mut pos = (usize::MAX, f64::NEG_INFINITY);
        let mut neg = (usize::MAX, f64::INFINITY);
        for j in 0..b {
            if j == a {
                continue;
            }
            let d = euclidean(features.row(a), features.row(j));
            if labels[j] == labels[a] {
                if d > pos.1 {
                    pos = (j, d);
                }
            } else if d < neg.1 {
                neg = (j, d);
            }
        }
        let arg = margin + pos.1 - neg.1;
        if arg > 0.0 {
            value += arg;
            push_distance_grad(&mut grad, features, a, pos.0, 1.0);
            push_distance_grad(&mut grad, features, a, neg.0, -1.0);
        }
    }
    Ok(LossResult { value, grad })
}

/// Rank-based triplet loss with a soft margin:
/// `sum [ |P_p - P_n| / eta * m + d(a, p) - d(a, n) ]_+`.
///
/// Triplet ids index rows of `features`.
pub fn rtl_loss(
    features: &Matrix,
    triplets: &[RankedTriplet],
    margin: f64,
    eta: usize,
) -> Result<LossResult> {
    let b = features.rows();
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, features.cols());
    for t in triplets {
        if t.anchor >= b || t.positive >= b || t.negative >= b {
            return Err(Error::ShapeMismatch(format!(
                "triplet {t:?} references rows beyond {b}"
            )));
        }
        let soft = t.pos_rank.abs_diff(t.neg_rank) as f64 / eta as f64 * margin;
        let dp = euclidean(features.row(t.anchor), features.row(t.positive));
        let dn = euclidean(features.row(t.anchor), features.row(t.negative));
        let arg = soft + dp - dn;
        if arg > 0.0 {
            value += arg;
            push_distance_grad(&mut grad, features, t.anchor, t.positive, 1.0);
            push_distance_grad(&mut grad, features, t.anchor, t.negative, -1.0);
        }
    }
    Ok(LossResult { value, grad })
}

/// `L_RTL + lambda * L_CTL`.
pub fn conservative_loss(ctl: &LossResult, rtl: &LossResult, lambda: f64) -> Result<LossResult> {
    if !ctl.grad.same_shape(&rtl.grad) {
        return Err(Error::ShapeMismatch(format!(
            "CTL gradient {}x{} vs RTL gradient {}x{}",
            ctl.grad.rows(),
            ctl.grad.cols(),
            rtl.grad.rows(),
            rtl.grad.cols()
        )));
    }
    let mut grad = rtl.grad.clone();
    for (g, c) in grad.as_mut_slice().iter_mut().zip(ctl.grad.as_slice()) {
        *g += lambda * c;
    }
    Ok(LossResult {
        value: rtl.value + lambda * ctl.value,
        grad,
    })
}

/// Summed softmax cross-entropy; the gradient is with respect to the logits.
pub fn softmax_ce_loss(logits: &Matrix, labels: &[usize]) -> Result<LossResult> {
    let (b, c) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {b} rows",
            labels.len()
        )));
    }
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, c);
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: c,
            });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_sum = sum.ln();
        value += log_sum - (row[y] - max);
        for (k, g) in grad.row_mut(i).iter_mut().enumerate() {
            *g = (row[k] - max).exp() / sum - if k == y { 1.0 } else { 0.0 };
        }
    }
    Ok(LossResult { value, grad })
}

/// Classifier weights `W` (`d x C`); column `c` scores class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    pub w: Matrix,
}

impl ClassifierWeights {
    pub fn num_classes(&self) -> usize {
        self.w.cols()
    }

    /// `features * W`.
    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        features.matmul(&self.w)
    }

    /// Gradients for `W` and for the features, given the logit gradient.
    pub fn backward(&self, features: &Matrix, logit_grad: &Matrix) -> Result<(Matrix, Matrix)> {
        Ok((
            features.t_matmul(logit_grad)?,
            logit_grad.matmul_t(&self.w)?,
        ))
    }
}

/// Classifier columns set to the cluster mean features.
pub fn init_classifier(cluster_means: &Matrix) -> ClassifierWeights {
    ClassifierWeights {
        w: cluster_means.transpose(),
    }
}
