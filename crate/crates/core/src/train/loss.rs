use crate::error::{Error, Result};
use crate::maps::{ContourPrediction, LabelMap};
use crate::tensor::{Element, Tape, Var};

/// Class-weighted logistic loss settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight on contour pixels.
    pub beta: f64,
    /// Predictions are clamped to `[eps, 1 - eps]` before the logarithms.
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { beta: 10.0, eps: 1e-7 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("loss beta must be positive, got {}", self.beta)));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::Config(format!("loss eps must lie in (0, 0.5), got {}", self.eps)));
        }
        Ok(())
    }

    /// Probability minimising the loss of a pixel labelled contour and
    /// non-contour equally often: `beta / (1 + beta)`.
    pub fn compromise_point(&self) -> f64 {
        self.beta / (1.0 + self.beta)
    }
}

/// Loss of a single pixel.
pub fn pixel_loss(h: f64, y: f64, cfg: &LossConfig) -> f64 {
    let h = h.clamp(cfg.eps, 1.0 - cfg.eps);
    -y * cfg.beta * h.ln() - (1.0 - y) * (1.0 - h).ln()
}

/// Records the mean per-pixel loss of `pred` (probabilities on the tape)
/// against `label`.
pub fn weighted_logistic_loss<T: Element>(
    tape: &mut Tape<T>,
    pred: Var,
    label: &LabelMap,
    cfg: &LossConfig,
) -> Result<Var> {
    let s = tape.shape(pred);
    if s.c() != 1 || !label.same_extent(s.w(), s.h()) {
        return Err(Error::shape(
            "loss",
            format!("prediction {s} against {}x{} label", label.width(), label.height()),
        ));
    }
    // Batches of one label repeated over N are allowed.
    let mut y: Vec<T> = label.to_values();
    if s.n() > 1 {
        y = y.repeat(s.n());
    }
    tape.weighted_logistic(pred, &y, T::of(cfg.beta), T::of(cfg.eps))
}

/// Mean loss between a stored prediction and a label.
pub fn map_loss(pred: &ContourPrediction, label: &LabelMap, cfg: &LossConfig) -> Result<f64> {
    if !label.same_extent(pred.width(), pred.height()) {
        return Err(Error::shape("loss", "prediction and label extents differ"));
    }
    let total: f64 = pred
        .values()
        .iter()
        .zip(label.pixels())
        .map(|(&h, &y)| pixel_loss(h as f64, y as f64, cfg))
        .sum();
    Ok(total / label.pixels().len() as f64)
}
