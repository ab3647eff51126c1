//! Exposure-quality metric: a percentile-weighted sum of sorted image
//! gradient magnitudes over a region of interest, plus its analytic
//! derivative with respect to exposure time.
//!
//! The weight profile rises like sin^k up to the target percentile index
//! m = floor(p * S) of the ascending sort and falls like cos^k after it, so
//! the metric rewards a strong upper-quantile gradient population without
//! the discontinuity of a hard percentile. Saturated pixels stop
//! contributing to the derivative because the response derivative vanishes
//! there, which is what steers exposure away from clipping.

use crate::camera::Crf;
use crate::error::{Error, Result};
use crate::imgproc::{sobel_gradients, Image8, ImageF, Rect};

/// Percentile position of the weight peak in the ascending sort.
pub const DEFAULT_PERCENTILE: f64 = 0.75;
/// Sharpness exponent of the weight profile.
pub const DEFAULT_SHARPNESS: f64 = 5.0;

/// Metric shape parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricParams {
    /// Weight peak percentile, in (0, 1).
    pub p: f64,
    /// Weight sharpness exponent, > 0.
    pub k: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self { p: DEFAULT_PERCENTILE, k: DEFAULT_SHARPNESS }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p > 0.0 && self.p < 1.0) {
            return Err(Error::ParamOutOfRange { name: "p", value: self.p, min: 0.0, max: 1.0 });
        }
        if !(self.k.is_finite() && self.k >= 1.0) {
            return Err(Error::ParamOutOfRange { name: "k", value: self.k, min: 1.0, max: f64::MAX });
        }
        Ok(())
    }
}

/// Normalized weights over `s` ascending-sorted samples: rises as
/// sin(pi i / (2 m))^k for i <= m, falls as cos(pi (i - m) / (2 (s - m)))^k
/// beyond, with m = floor(p s). The peak weight sits exactly at index m.
pub fn percentile_weights(s: usize, p: f64, k: f64) -> Result<Vec<f64>> {
    MetricParams { p, k }.validate()?;
    if s == 0 {
        return Err(Error::NotEnoughSamples { need: 1, got: 0 });
    }
    let m = ((p * s as f64).floor() as usize).min(s - 1);
    let mut w = Vec::with_capacity(s);
    for i in 0..s {
        let base = if i <= m {
            if m == 0 {
                1.0
            } else {
                (std::f64::consts::PI * i as f64 / (2.0 * m as f64)).sin()
            }
        } else {
            (std::f64::consts::FRAC_PI_2
                - std::f64::consts::PI * (i - m) as f64 / (2.0 * (s - m) as f64))
                .sin()
        };
        w.push(base.powf(k));
    }
    let sum: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= sum;
    }
    Ok(w)
}

/// Weighted reduction of pre-sorted ascending values by the percentile
/// weight profile. `values` must already be ascending.
fn reduce_sorted(values: &[f64], p: f64, k: f64) -> Result<f64> {
    let w = percentile_weights(values.len(), p, k)?;
    Ok(values.iter().zip(&w).map(|(v, wi)| v * wi).sum())
}

/// Metric value together with its exposure derivative and sample count.
#[derive(Debug, Clone, Copy)]
pub struct MetricEval {
    /// Metric value in gradient DN units.
    pub m: f64,
    /// Analytic derivative of the metric with respect to exposure time,
    /// DN per ms.
    pub dm_ddt: f64,
    /// Number of interior pixels the metric was computed over.
    pub sample_count: usize,
}

/// Where the derivative gets the scene brightness it differentiates through.
#[derive(Debug, Clone, Copy)]
pub enum DerivSource<'a> {
    /// Use the true per-pixel irradiance field (full-frame raster, cropped
    /// internally). Available in simulation only.
    SceneIrradiance(&'a ImageF),
    /// Estimate irradiance from the image itself by inverting the response
    /// function: x = crf^-1(I), E = x / dt.
    InverseResponse,
}

fn interior_dims(roi: Rect) -> Result<(usize, usize)> {
    let iw = roi.w.saturating_sub(2) as usize;
    let ih = roi.h.saturating_sub(2) as usize;
    if iw * ih < 2 {
        return Err(Error::RegionTooSmall { w: roi.w, h: roi.h, op: "exposure metric" });
    }
    Ok((iw, ih))
}

/// Metric over the RoI crop of a continuous-valued image.
///
/// Gradients are taken on the crop; only interior pixels (full Sobel
/// support) are ranked. Errors if the interior holds fewer than 2 pixels.
pub fn m_softperc_real(img: &ImageF, roi: Rect, params: &MetricParams) -> Result<f64> {
    params.validate()?;
    interior_dims(roi)?;
    let crop = img.crop(roi)?;
    let grads = sobel_gradients(&crop)?;
    let mut vals = interior_values(&grads.mag);
    vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let sorted: Vec<f64> = vals.iter().map(|v| v.0).collect();
    reduce_sorted(&sorted, params.p, params.k)
}

/// Metric over the RoI crop of an 8-bit frame.
pub fn m_softperc(img: &Image8, roi: Rect, params: &MetricParams) -> Result<f64> {
    m_softperc_real(&img.crop(roi)?.to_f64(), Rect::new(0, 0, roi.w, roi.h)?, params)
}

/// Interior (x, y) values with their row-major interior index.
fn interior_values(mag: &ImageF) -> Vec<(f64, usize)> {
    let w = mag.width();
    let h = mag.height();
    let mut out = Vec::with_capacity(((w - 2) * (h - 2)) as usize);
    let mut idx = 0usize;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            out.push((mag.get(x, y), idx));
            idx += 1;
        }
    }
    out
}

/// Metric and analytic exposure derivative over the RoI crop of a
/// continuous-valued image.
///
/// The derivative propagates dI/ddt = crf'(x) * E per pixel through the
/// Sobel operator and the gradient-magnitude norm, holding the sort order
/// and weights fixed at the current frame. Pixels with zero gradient
/// magnitude contribute zero.
pub fn eval_metric_real(
    img: &ImageF,
    roi: Rect,
    params: &MetricParams,
    crf: &Crf,
    dt_ms: f64,
    source: DerivSource,
) -> Result<MetricEval> {
    params.validate()?;
    if !(dt_ms.is_finite() && dt_ms > 0.0) {
        return Err(Error::ParamOutOfRange { name: "dt_ms", value: dt_ms, min: f64::MIN_POSITIVE, max: f64::MAX });
    }
    interior_dims(roi)?;
    let crop = img.crop(roi)?;
    let grads = sobel_gradients(&crop)?;

    // Per-pixel brightness sensitivity dI/ddt over the crop.
    let sens = match source {
        DerivSource::SceneIrradiance(field) => {
            let e = field.crop(roi)?;
            ImageF::from_fn(crop.width(), crop.height(), |x, y| {
                let ev = e.get(x, y);
                crf.derivative(ev * dt_ms) * ev
            })?
        }
        DerivSource::InverseResponse => ImageF::from_fn(crop.width(), crop.height(), |x, y| {
            let xhat = crf.inverse(crop.get(x, y));
            crf.derivative(xhat) * (xhat / dt_ms)
        })?,
    };
    let dsens = sobel_gradients(&sens)?;

    let mut vals = interior_values(&grads.mag);
    vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let s = vals.len();
    let w = percentile_weights(s, params.p, params.k)?;

    let iw = crop.width() as usize - 2;
    let mut m = 0.0;
    let mut dm = 0.0;
    for (rank, &(g, idx)) in vals.iter().enumerate() {
        m += w[rank] * g;
        if g > 0.0 {
            let x = (idx % iw) as u32 + 1;
            let y = (idx / iw) as u32 + 1;
            let gx = grads.gx.get(x, y);
            let gy = grads.gy.get(x, y);
            let dg = (gx * dsens.gx.get(x, y) + gy * dsens.gy.get(x, y)) / g;
            dm += w[rank] * dg;
        }
    }
    Ok(MetricEval { m, dm_ddt: dm, sample_count: s })
}

/// Metric and exposure derivative over the RoI crop of an 8-bit frame.
pub fn eval_metric(
    img: &Image8,
    roi: Rect,
    params: &MetricParams,
    crf: &Crf,
    dt_ms: f64,
    source: DerivSource,
) -> Result<MetricEval> {
    let crop = img.crop(roi)?.to_f64();
    let local = Rect::new(0, 0, roi.w, roi.h)?;
    match source {
        DerivSource::SceneIrradiance(field) => {
            let efield = field.crop(roi)?;
            eval_metric_real(&crop, local, params, crf, dt_ms, DerivSource::SceneIrradiance(&efield))
        }
        DerivSource::InverseResponse => {
            eval_metric_real(&crop, local, params, crf, dt_ms, DerivSource::InverseResponse)
        }
    }
}

/// Fraction of pixels in the RoI crop at the saturation ceiling (255 DN).
pub fn saturated_frac(img: &Image8, roi: Rect) -> Result<f64> {
    let crop = img.crop(roi)?;
    let n = crop.data().len() as f64;
    let sat = crop.data().iter().filter(|&&v| v == 255).count() as f64;
    Ok(sat / n)
}

/// Mean intensity (DN) over `roi`.
pub fn mean_intensity(img: &Image8, roi: Rect) -> Result<f64> {
    let crop = img.crop(roi)?;
    let sum: u64 = crop.data().iter().map(|&v| u64::from(v)).sum();
    Ok(sum as f64 / crop.data().len() as f64)
}
