//! Exposure controllers: the RoI-restricted momentum gradient-ascent
//! controller under benchmark, and three baselines it is compared against
//! (full-frame gradient ascent, a gamma-scan gradient maximizer, and a
//! classic mean-intensity rule).
//!
//! All controllers map a captured frame to the next exposure time, clamped
//! to the camera's exposure range. The ascent controllers share a
//! dimensionless step signal: dhat = dm/ddt * dt / (S * 255), which makes
//! gains comparable across RoI sizes and brightness scales.

use crate::camera::{CameraModel, Frame};
use crate::error::{Error, Result};
use crate::imgproc::{sobel_gradients, ImageF, Rect};
use crate::marker::{detect, roi_from_detection, DetectionResult, MarkerSpec};
use crate::metric::{eval_metric, mean_intensity, saturated_frac, DerivSource, MetricParams};

/// Gamma candidates scanned by the gamma-correction baseline.
pub const GEC_GAMMAS: [f64; 7] = [0.5, 0.67, 0.8, 1.0, 1.25, 1.5, 2.0];

/// Mid-gray target of the mean-intensity baseline, DN.
pub const DEFAULT_AE_TARGET_DN: f64 = 118.0;
/// Damping exponent of the mean-intensity baseline.
pub const DEFAULT_AE_EXPONENT: f64 = 0.7;

/// Shared controller tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams {
    /// Ascent gain on the dimensionless step signal.
    pub eta: f64,
    /// Momentum factor in [0, 1).
    pub momentum: f64,
    /// Dead band on |dhat|: below it the velocity only decays.
    pub deadband: f64,
    /// Metric shape.
    pub metric: MetricParams,
    /// Frames a stale RoI is trusted after losing the marker before falling
    /// back to full-frame search.
    pub hold_frames: u32,
    /// Saturated fraction that triggers the exposure-halving escape when a
    /// full-frame search finds nothing.
    pub sat_escape_frac: f64,
    /// Mean intensity (DN) below which a blind full-frame search doubles
    /// exposure instead of stepping on a gradient that barely exists.
    pub dark_escape_mean: f64,
    /// Mean-intensity baseline target, DN.
    pub ae_target_dn: f64,
    /// Mean-intensity baseline damping exponent.
    pub ae_exponent: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            eta: 200.0,
            momentum: 0.9,
            deadband: 5e-8,
            metric: MetricParams::default(),
            hold_frames: 10,
            sat_escape_frac: 0.05,
            dark_escape_mean: 65.0,
            ae_target_dn: DEFAULT_AE_TARGET_DN,
            ae_exponent: DEFAULT_AE_EXPONENT,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        self.metric.validate()?;
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::ParamOutOfRange { name: "eta", value: self.eta, min: 0.0, max: f64::MAX });
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::ParamOutOfRange { name: "momentum", value: self.momentum, min: 0.0, max: 1.0 });
        }
        if !(self.deadband.is_finite() && self.deadband >= 0.0) {
            return Err(Error::ParamOutOfRange { name: "deadband", value: self.deadband, min: 0.0, max: f64::MAX });
        }
        if !(self.sat_escape_frac.is_finite() && self.sat_escape_frac > 0.0 && self.sat_escape_frac <= 1.0) {
            return Err(Error::ParamOutOfRange { name: "sat_escape_frac", value: self.sat_escape_frac, min: 0.0, max: 1.0 });
        }
        if !(self.dark_escape_mean.is_finite() && (0.0..=255.0).contains(&self.dark_escape_mean)) {
            return Err(Error::ParamOutOfRange { name: "dark_escape_mean", value: self.dark_escape_mean, min: 0.0, max: 255.0 });
        }
        if !(self.ae_target_dn.is_finite() && self.ae_target_dn > 0.0 && self.ae_target_dn <= 255.0) {
            return Err(Error::ParamOutOfRange { name: "ae_target_dn", value: self.ae_target_dn, min: 0.0, max: 255.0 });
        }
        if !(self.ae_exponent.is_finite() && self.ae_exponent > 0.0 && self.ae_exponent <= 1.0) {
            return Err(Error::ParamOutOfRange { name: "ae_exponent", value: self.ae_exponent, min: 0.0, max: 1.0 });
        }
        Ok(())
    }
}

/// Controller variants available in the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    /// RoI-restricted momentum gradient ascent with marker tracking.
    Aaec,
    /// Full-frame gradient ascent on the same metric, no momentum, no RoI.
    AecGlobal,
    /// Gamma-scan baseline: picks the gamma whose remap maximizes gradient
    /// mass, then nudges exposure toward that gamma's implied direction.
    Gec,
    /// Mean-intensity servo toward mid-gray.
    DefaultAe,
}

impl ControllerKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "aaec" => Ok(Self::Aaec),
            "aec" => Ok(Self::AecGlobal),
            "gec" => Ok(Self::Gec),
            "default" => Ok(Self::DefaultAe),
            other => Err(Error::UnknownController(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Aaec => "aaec",
            Self::AecGlobal => "aec",
            Self::Gec => "gec",
            Self::DefaultAe => "default",
        }
    }

    pub fn all() -> [Self; 4] {
        [Self::Aaec, Self::AecGlobal, Self::Gec, Self::DefaultAe]
    }
}

/// Per-frame controller inputs that don't live in the controller itself.
pub struct StepContext<'a> {
    pub camera: &'a CameraModel,
    pub marker: &'a MarkerSpec,
    pub deriv: DerivSource<'a>,
}

/// What a controller did with one frame.
#[derive(Debug, Clone)]
pub struct StepLog {
    /// The controller's own objective value this frame (soft-percentile
    /// metric for the ascent controllers, gradient mass for the gamma scan,
    /// mean intensity for the mean servo).
    pub m: f64,
    /// Dimensionless ascent signal (zero for non-gradient controllers).
    pub dhat: f64,
    /// Momentum velocity after the update, ms.
    pub velocity: f64,
    /// Exposure chosen for the next frame, ms.
    pub dt_next_ms: f64,
    /// Region the objective was evaluated over.
    pub roi: Rect,
    /// Saturated fraction of that region.
    pub sat_frac: f64,
    /// Detection attempted by the controller itself (tracking controllers
    /// only; None when the controller never looks for the marker).
    pub detection: Option<DetectionResult>,
}

/// Tracking state of the RoI controller.
#[derive(Debug, Clone)]
pub struct TrackState {
    pub roi: Option<Rect>,
    pub frames_since_found: u32,
}

/// An exposure controller with its internal state.
#[derive(Debug, Clone)]
pub enum Controller {
    Aaec {
        params: ControllerParams,
        dt_ms: f64,
        velocity: f64,
        track: TrackState,
    },
    AecGlobal {
        params: ControllerParams,
        dt_ms: f64,
    },
    Gec {
        dt_ms: f64,
    },
    DefaultAe {
        params: ControllerParams,
        dt_ms: f64,
    },
}

impl Controller {
    /// Build a controller at an initial exposure (clamped to camera range).
    pub fn new(kind: ControllerKind, dt0_ms: f64, params: ControllerParams, camera: &CameraModel) -> Result<Self> {
        params.validate()?;
        if !dt0_ms.is_finite() || dt0_ms <= 0.0 {
            return Err(Error::ParamOutOfRange { name: "dt0_ms", value: dt0_ms, min: f64::MIN_POSITIVE, max: f64::MAX });
        }
        let dt_ms = camera.clamp_dt(dt0_ms);
        Ok(match kind {
            ControllerKind::Aaec => Controller::Aaec {
                params,
                dt_ms,
                velocity: 0.0,
                track: TrackState { roi: None, frames_since_found: 0 },
            },
            ControllerKind::AecGlobal => Controller::AecGlobal { params, dt_ms },
            ControllerKind::Gec => Controller::Gec { dt_ms },
            ControllerKind::DefaultAe => Controller::DefaultAe { params, dt_ms },
        })
    }

    pub fn kind(&self) -> ControllerKind {
        match self {
            Controller::Aaec { .. } => ControllerKind::Aaec,
            Controller::AecGlobal { .. } => ControllerKind::AecGlobal,
            Controller::Gec { .. } => ControllerKind::Gec,
            Controller::DefaultAe { .. } => ControllerKind::DefaultAe,
        }
    }

    /// Exposure the controller wants for the next capture, ms.
    pub fn dt_ms(&self) -> f64 {
        match self {
            Controller::Aaec { dt_ms, .. }
            | Controller::AecGlobal { dt_ms, .. }
            | Controller::Gec { dt_ms }
            | Controller::DefaultAe { dt_ms, .. } => *dt_ms,
        }
    }

    /// Consume one frame and update the exposure.
    pub fn step(&mut self, frame: &Frame, ctx: &StepContext) -> Result<StepLog> {
        match self {
            Controller::Aaec { params, dt_ms, velocity, track } => {
                aaec_step(frame, ctx, params, dt_ms, velocity, track)
            }
            Controller::AecGlobal { params, dt_ms } => aec_global_step(frame, ctx, params, dt_ms),
            Controller::Gec { dt_ms } => gec_step(frame, ctx, dt_ms),
            Controller::DefaultAe { params, dt_ms } => default_ae_step(frame, ctx, params, dt_ms),
        }
    }
}

#[inline]
fn normalized_direction(dm_ddt: f64, dt_ms: f64, samples: usize) -> f64 {
    dm_ddt * dt_ms / (samples as f64 * 255.0)
}

fn aaec_step(
    frame: &Frame,
    ctx: &StepContext,
    params: &ControllerParams,
    dt_ms: &mut f64,
    velocity: &mut f64,
    track: &mut TrackState,
) -> Result<StepLog> {
    let bounds = frame.image.bounds();
    let full_search = track.roi.is_none();
    let search = track.roi.unwrap_or(bounds);
    let det = detect(&frame.image, search, ctx.marker, &ctx.camera.intrinsics)?;
    if det.found {
        track.roi = Some(roi_from_detection(&det, bounds)?);
        track.frames_since_found = 0;
    } else {
        track.frames_since_found = track.frames_since_found.saturating_add(1);
        if track.frames_since_found > params.hold_frames {
            track.roi = None;
        }
    }
    let metric_roi = track.roi.unwrap_or(bounds);
    let sat = saturated_frac(&frame.image, metric_roi)?;
    let eval = eval_metric(&frame.image, metric_roi, &params.metric, &ctx.camera.crf, *dt_ms, ctx.deriv)?;
    let dhat = normalized_direction(eval.dm_ddt, *dt_ms, eval.sample_count);

    if full_search && !det.found && sat > params.sat_escape_frac {
        // Blinded by saturation with nothing to track: back exposure off
        // hard and drop any built-up momentum.
        *velocity = 0.0;
        *dt_ms = (*dt_ms / 2.0).max(ctx.camera.dt_min_ms);
    } else if full_search && !det.found && mean_intensity(&frame.image, metric_roi)? < params.dark_escape_mean {
        // Mirror case: the frame is nearly black, so the gradient signal is
        // noise. Jump exposure up until something becomes visible.
        *velocity = 0.0;
        *dt_ms = (*dt_ms * 2.0).min(ctx.camera.dt_max_ms);
    } else {
        if dhat.abs() < params.deadband {
            *velocity *= params.momentum;
        } else {
            *velocity = params.momentum * *velocity + params.eta * dhat * *dt_ms;
        }
        let target = *dt_ms + *velocity;
        let clamped = ctx.camera.clamp_dt(target);
        if clamped != target {
            *velocity = 0.0;
        }
        *dt_ms = clamped;
    }

    Ok(StepLog {
        m: eval.m,
        dhat,
        velocity: *velocity,
        dt_next_ms: *dt_ms,
        roi: metric_roi,
        sat_frac: sat,
        detection: Some(det),
    })
}

fn aec_global_step(
    frame: &Frame,
    ctx: &StepContext,
    params: &ControllerParams,
    dt_ms: &mut f64,
) -> Result<StepLog> {
    let bounds = frame.image.bounds();
    let sat = saturated_frac(&frame.image, bounds)?;
    let eval = eval_metric(&frame.image, bounds, &params.metric, &ctx.camera.crf, *dt_ms, ctx.deriv)?;
    let dhat = normalized_direction(eval.dm_ddt, *dt_ms, eval.sample_count);
    let step = params.eta * dhat * *dt_ms;
    *dt_ms = ctx.camera.clamp_dt(*dt_ms + step);
    Ok(StepLog {
        m: eval.m,
        dhat,
        velocity: 0.0,
        dt_next_ms: *dt_ms,
        roi: bounds,
        sat_frac: sat,
        detection: None,
    })
}

/// Total Sobel gradient magnitude of the frame remapped through
/// I -> 255 (I/255)^gamma.
fn gamma_gradient_mass(frame: &Frame, gamma: f64) -> Result<f64> {
    let mut lut = [0.0f64; 256];
    for (v, slot) in lut.iter_mut().enumerate() {
        *slot = 255.0 * (v as f64 / 255.0).powf(gamma);
    }
    let img = &frame.image;
    let remapped = ImageF::from_fn(img.width(), img.height(), |x, y| lut[img.get(x, y) as usize])?;
    let grads = sobel_gradients(&remapped)?;
    Ok(grads.mag.data().iter().sum())
}

fn gec_step(frame: &Frame, ctx: &StepContext, dt_ms: &mut f64) -> Result<StepLog> {
    let bounds = frame.image.bounds();
    let sat = saturated_frac(&frame.image, bounds)?;
    let mut best_gamma = GEC_GAMMAS[0];
    let mut best_mass = f64::NEG_INFINITY;
    for &g in &GEC_GAMMAS {
        let mass = gamma_gradient_mass(frame, g)?;
        // Ties go to the larger gamma, so a contrast-free (e.g. fully
        // saturated) frame reads as overexposed and backs off.
        if mass >= best_mass {
            best_mass = mass;
            best_gamma = g;
        }
    }
    // A winning gamma < 1 means midtones had to be lifted: underexposed,
    // lengthen. Gamma > 1 means the opposite. The step is proportional to
    // the implied brightness correction.
    *dt_ms = ctx.camera.clamp_dt(*dt_ms * (1.0 + 0.5 * (1.0 - best_gamma) / best_gamma));
    Ok(StepLog {
        m: best_mass,
        dhat: 0.0,
        velocity: 0.0,
        dt_next_ms: *dt_ms,
        roi: bounds,
        sat_frac: sat,
        detection: None,
    })
}

fn default_ae_step(
    frame: &Frame,
    ctx: &StepContext,
    params: &ControllerParams,
    dt_ms: &mut f64,
) -> Result<StepLog> {
    let bounds = frame.image.bounds();
    let sat = saturated_frac(&frame.image, bounds)?;
    let data = frame.image.data();
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64;
    let ratio = params.ae_target_dn / mean.max(1e-3);
    *dt_ms = ctx.camera.clamp_dt(*dt_ms * ratio.powf(params.ae_exponent));
    Ok(StepLog {
        m: mean,
        dhat: 0.0,
        velocity: 0.0,
        dt_next_ms: *dt_ms,
        roi: bounds,
        sat_frac: sat,
        detection: None,
    })
}
