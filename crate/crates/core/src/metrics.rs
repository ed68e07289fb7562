//! Training-stability measurements: smoothing, loss rebound, and a
//! random-direction sharpness proxy.

use crate::adapters::{MlpModel, ParamVector};
use crate::error::{Error, Result};
use crate::numcore::{unit_gaussian_direction, Rng};
use crate::tasks::Dataset;

pub const DEFAULT_SMOOTHING_WINDOW: usize = 25;
pub const DEFAULT_SHARPNESS_SAMPLES: usize = 20;

/// Per-step losses plus the smoothing window already applied (1 = raw).
#[derive(Clone, Debug, PartialEq)]
pub struct LossCurve {
    losses: Vec<f64>,
    smoothing_window: usize,
}

impl LossCurve {
    pub fn new(losses: Vec<f64>) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::usage("a loss curve needs at least one point"));
        }
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::numeric("loss curve"));
        }
        Ok(Self {
            losses,
            smoothing_window: 1,
        })
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn smoothing_window(&self) -> usize {
        self.smoothing_window
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }
}

/// Centered moving average. Near the ends the window is truncated to the
/// points that exist. For even windows the extra point is on the right.
pub fn smooth(curve: &LossCurve, window: usize) -> Result<LossCurve> {
    let n = curve.len();
    if window == 0 || window > n {
        return Err(Error::usage(format!(
            "smoothing window {window} must lie in 1..={n}"
        )));
    }
    let left = (window - 1) / 2;
    let right = window / 2;
    let losses = (0..n)
        .map(|i| {
            if window == 1 {
                return curve.losses[i];
            }
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(n - 1);
            curve.losses[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    Ok(LossCurve {
        losses,
        smoothing_window: window * curve.smoothing_window,
    })
}

/// Largest rise of the curve above its running minimum.
pub fn rebound_raw(curve: &LossCurve) -> f64 {
    let mut running_min = f64::INFINITY;
    let mut worst: f64 = 0.0;
    for &l in &curve.losses {
        running_min = running_min.min(l);
        worst = worst.max(l - running_min);
    }
    worst
}

/// [`rebound_raw`] divided by the drop from the first point to the overall
/// minimum. Zero for non-increasing curves and for curves that never drop
/// below their first point.
pub fn rebound_metric(curve: &LossCurve) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::usage("rebound needs at least two points"));
    }
    let first = curve.losses[0];
    let min = curve.losses.iter().copied().fold(f64::INFINITY, f64::min);
    let drop = first - min;
    if !(drop > 0.0) {
        return Ok(0.0);
    }
    Ok(rebound_raw(curve) / drop)
}

/// Something whose trainable parameters can be read, overwritten, and scored.
pub trait LossSurface {
    fn params(&self) -> ParamVector;
    fn set_params(&mut self, params: &ParamVector) -> Result<()>;
    fn loss(&self) -> Result<f64>;
}

/// A model scored on a fixed dataset.
pub struct ModelOnData<'a> {
    pub model: &'a mut MlpModel,
    pub data: &'a Dataset,
}

impl LossSurface for ModelOnData<'_> {
    fn params(&self) -> ParamVector {
        self.model.params()
    }

    fn set_params(&mut self, params: &ParamVector) -> Result<()> {
        self.model.set_params(params)
    }

    fn loss(&self) -> Result<f64> {
        self.data.loss_of(self.model)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SharpnessEstimate {
    /// Mean loss increase over the usable samples; NaN if none were usable.
    pub mean: f64,
    pub used: usize,
    /// Samples dropped because the perturbed loss was not finite.
    pub excluded: usize,
}

/// Mean of `L(θ + ρ·u) − L(θ)` over `k` random unit directions `u`.
/// Parameters are restored bit for bit before returning.
pub fn sharpness_proxy<S: LossSurface>(
    surface: &mut S,
    rho_eval: f64,
    k_samples: usize,
    rng: &mut Rng,
) -> Result<SharpnessEstimate> {
    if !(rho_eval > 0.0 && rho_eval.is_finite()) || k_samples == 0 {
        return Err(Error::usage("sharpness needs rho_eval > 0 and k_samples >= 1"));
    }
    let theta = surface.params();
    let base = surface.loss()?;
    let shapes = theta.shapes();
    let mut total = 0.0;
    let mut used = 0;
    let mut excluded = 0;
    for _ in 0..k_samples {
        let dir = theta.with_tensors(unit_gaussian_direction(rng, &shapes)?)?;
        let mut probe = theta.clone();
        probe.axpy(rho_eval, &dir)?;
        surface.set_params(&probe)?;
        let loss = surface.loss();
        surface.set_params(&theta)?;
        match loss {
            Ok(l) if l.is_finite() => {
                total += l - base;
                used += 1;
            }
            Ok(_) | Err(Error::Numeric(_)) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(SharpnessEstimate {
        mean: if used > 0 { total / used as f64 } else { f64::NAN },
        used,
        excluded,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryConfig {
    pub smoothing_window: usize,
    pub rho_eval: f64,
    pub sharpness_samples: usize,
    pub seed: u64,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
            rho_eval: 0.05,
            sharpness_samples: DEFAULT_SHARPNESS_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilitySummary {
    pub rebound: f64,
    pub rebound_raw: f64,
    pub final_loss: f64,
    pub best_loss: f64,
    pub steps_to_best: usize,
    pub sharpness: f64,
}

/// Curve statistics on the smoothed curve. The window is clamped to the
/// curve length.
pub fn curve_summary(curve: &LossCurve, window: usize) -> Result<StabilitySummary> {
    let smoothed = smooth(curve, window.clamp(1, curve.len()))?;
    let l = smoothed.losses();
    let (steps_to_best, best_loss) = l
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best });
    Ok(StabilitySummary {
        rebound: rebound_metric(&smoothed)?,
        rebound_raw: rebound_raw(&smoothed),
        final_loss: l[l.len() - 1],
        best_loss,
        steps_to_best,
        sharpness: f64::NAN,
    })
}

pub fn summarize(
    curve: &LossCurve,
    model: &mut MlpModel,
    dataset: &Dataset,
    cfg: &SummaryConfig,
) -> Result<StabilitySummary> {
    let mut summary = curve_summary(curve, cfg.smoothing_window)?;
    let mut surface = ModelOnData { model, data: dataset };
    summary.sharpness = sharpness_proxy(
        &mut surface,
        cfg.rho_eval,
        cfg.sharpness_samples,
        &mut Rng::new(cfg.seed),
    )?
    .mean;
    Ok(summary)
}
