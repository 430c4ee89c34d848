//! Segmentation metrics and losses.

use crate::error::{Error, Result};
use crate::field::Field;
use crate::params::sigmoid;

/// Smoothing term of the soft Dice loss.
pub const SOFT_DICE_SMOOTH: f64 = 1.0;

/// `2|A∩B| / (|A| + |B|)` for masks thresholded at 0.5; 1 when both are empty.
pub fn dice_score(pred: &Field, truth: &Field) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::InvalidShape(format!(
            "prediction {}x{} vs mask {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
        let (p, t) = (p > 0.5, t > 0.5);
        inter += usize::from(p && t);
        a += usize::from(p);
        b += usize::from(t);
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Soft Dice + binary cross-entropy on logits. Returns the loss and
/// `dL/dlogits`.
pub fn dice_bce_loss(logits: &Field, truth: &Field) -> (f64, Field) {
    let n = logits.len() as f64;
    let probs: Vec<f64> = logits.as_slice().iter().map(|&s| sigmoid(s)).collect();
    let y = truth.as_slice();

    let inter: f64 = probs.iter().zip(y).map(|(p, t)| p * t).sum();
    let denom = probs.iter().sum::<f64>() + y.iter().sum::<f64>() + SOFT_DICE_SMOOTH;
    let numer = 2.0 * inter + SOFT_DICE_SMOOTH;
    let dice_loss = 1.0 - numer / denom;

    // softplus(s) - y*s, computed without overflow
    let bce: f64 = logits
        .as_slice()
        .iter()
        .zip(y)
        .map(|(&s, &t)| s.max(0.0) - s * t + (-s.abs()).exp().ln_1p())
        .sum::<f64>()
        / n;

    let grad = logits
        .as_slice()
        .iter()
        .zip(&probs)
        .zip(y)
        .map(|((_, &p), &t)| {
            let d_dice_dp = -(2.0 * t * denom - numer) / (denom * denom);
            d_dice_dp * p * (1.0 - p) + (p - t) / n
        })
        .collect();
    (
        dice_loss + bce,
        Field::from_vec(logits.height(), logits.width(), grad).expect("shape"),
    )
}
