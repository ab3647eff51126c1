//! Photometric camera simulator: scene irradiance fields, camera response
//! functions, exposure, sensor noise, and quantization, plus the rigid-body
//! trajectories that move the marker through a run.
//!
//! Pixel formation: x = E * dt, I = quantize(crf(x) + noise), where E is
//! scene irradiance in 1/ms (so x is dimensionless exposure) and crf maps
//! [0, 1] onto [0, 255] with hard saturation above 1.

use nalgebra::{Vector2, Vector3};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geom::{Intrinsics, Pose};
use crate::imgproc::{Image8, ImageF};
use crate::marker::{render_marker, MarkerSpec};

/// Camera response function mapping exposure x to digital numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crf {
    /// I = 255 * min(x, 1).
    Linear,
    /// I = 255 * min(x, 1)^(1/gamma).
    Gamma { gamma: f64 },
}

impl Crf {
    pub fn gamma(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::ParamOutOfRange { name: "gamma", value: gamma, min: f64::MIN_POSITIVE, max: f64::MAX });
        }
        Ok(Crf::Gamma { gamma })
    }

    /// Response in DN (continuous, pre-noise, pre-quantization).
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        let xc = x.clamp(0.0, 1.0);
        match *self {
            Crf::Linear => 255.0 * xc,
            Crf::Gamma { gamma } => 255.0 * xc.powf(1.0 / gamma),
        }
    }

    /// Derivative dI/dx. Zero in the saturated region x >= 1 (and, for the
    /// gamma curve, at x = 0 where the true derivative is unbounded).
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        if x >= 1.0 || x < 0.0 {
            return 0.0;
        }
        match *self {
            Crf::Linear => 255.0,
            Crf::Gamma { gamma } => {
                if x == 0.0 {
                    0.0
                } else {
                    255.0 / gamma * x.powf(1.0 / gamma - 1.0)
                }
            }
        }
    }

    /// Inverse response: exposure that produces `dn` DN, clamped to [0, 1].
    #[inline]
    pub fn inverse(&self, dn: f64) -> f64 {
        let y = (dn / 255.0).clamp(0.0, 1.0);
        match *self {
            Crf::Linear => y,
            Crf::Gamma { gamma } => y.powf(gamma),
        }
    }
}

/// Sensor and optics description. Exposure time is bounded to
/// [dt_min_ms, dt_max_ms]; frames are at least 8x8.
#[derive(Debug, Clone)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    pub intrinsics: Intrinsics,
    pub crf: Crf,
    pub dt_min_ms: f64,
    pub dt_max_ms: f64,
    pub fps: f64,
    pub read_noise_dn: f64,
    pub shot_noise_scale: f64,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: u32,
        height: u32,
        intrinsics: Intrinsics,
        crf: Crf,
        dt_min_ms: f64,
        dt_max_ms: f64,
        fps: f64,
        read_noise_dn: f64,
        shot_noise_scale: f64,
    ) -> Result<Self> {
        if width < 8 || height < 8 {
            return Err(Error::ImageTooSmall { width, height, min_width: 8, min_height: 8 });
        }
        if !(dt_min_ms.is_finite() && dt_min_ms > 0.0) || !(dt_max_ms.is_finite() && dt_max_ms > dt_min_ms) {
            return Err(Error::ParamOutOfRange { name: "dt_ms", value: dt_min_ms, min: f64::MIN_POSITIVE, max: dt_max_ms });
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::ParamOutOfRange { name: "fps", value: fps, min: f64::MIN_POSITIVE, max: f64::MAX });
        }
        if !(read_noise_dn.is_finite() && read_noise_dn >= 0.0) {
            return Err(Error::ParamOutOfRange { name: "read_noise_dn", value: read_noise_dn, min: 0.0, max: f64::MAX });
        }
        if !(shot_noise_scale.is_finite() && shot_noise_scale >= 0.0) {
            return Err(Error::ParamOutOfRange { name: "shot_noise_scale", value: shot_noise_scale, min: 0.0, max: f64::MAX });
        }
        Ok(Self { width, height, intrinsics, crf, dt_min_ms, dt_max_ms, fps, read_noise_dn, shot_noise_scale })
    }

    /// Stock 640x480 camera used throughout the benchmarks.
    pub fn standard() -> Self {
        Self::new(
            640,
            480,
            Intrinsics::new(800.0, 800.0, 320.0, 240.0).unwrap(),
            Crf::Linear,
            0.01,
            50.0,
            20.0,
            2.0,
            0.5,
        )
        .unwrap()
    }

    #[inline]
    pub fn clamp_dt(&self, dt_ms: f64) -> f64 {
        dt_ms.clamp(self.dt_min_ms, self.dt_max_ms)
    }

    pub fn check_dt(&self, dt_ms: f64) -> Result<()> {
        if !dt_ms.is_finite() || dt_ms < self.dt_min_ms || dt_ms > self.dt_max_ms {
            return Err(Error::ExposureOutOfBounds { dt_ms, min_ms: self.dt_min_ms, max_ms: self.dt_max_ms });
        }
        Ok(())
    }

    /// Continuous sensor response to an irradiance field: crf applied to
    /// E * dt per pixel, before noise and quantization.
    pub fn expose_real(&self, irradiance: &ImageF, dt_ms: f64) -> Result<ImageF> {
        self.check_dt(dt_ms)?;
        let data: Vec<f64> = irradiance.data().iter().map(|&e| self.crf.apply(e * dt_ms)).collect();
        ImageF::new(irradiance.width(), irradiance.height(), data)
    }

    /// Full capture: exposure, one zero-mean Gaussian noise draw per pixel
    /// with variance shot^2 * I + read^2, then round-and-clamp to u8.
    ///
    /// The RNG is advanced exactly once per pixel in row-major order, so
    /// captures are reproducible for a given seed stream.
    pub fn capture(&self, irradiance: &ImageF, dt_ms: f64, rng: &mut ChaCha8Rng) -> Result<Image8> {
        self.check_dt(dt_ms)?;
        let w = irradiance.width();
        let h = irradiance.height();
        let mut out = Vec::with_capacity((w * h) as usize);
        for &e in irradiance.data() {
            let clean = self.crf.apply(e * dt_ms);
            let var = self.shot_noise_scale * self.shot_noise_scale * clean
                + self.read_noise_dn * self.read_noise_dn;
            let z: f64 = StandardNormal.sample(rng);
            let noisy = clean + var.sqrt() * z;
            out.push(noisy.round().clamp(0.0, 255.0) as u8);
        }
        Image8::new(w, h, out)
    }

    /// Noise-free capture: exposure then round-and-clamp.
    pub fn capture_clean(&self, irradiance: &ImageF, dt_ms: f64) -> Result<Image8> {
        self.check_dt(dt_ms)?;
        let w = irradiance.width();
        let h = irradiance.height();
        let data: Vec<u8> = irradiance
            .data()
            .iter()
            .map(|&e| self.crf.apply(e * dt_ms).round().clamp(0.0, 255.0) as u8)
            .collect();
        Image8::new(w, h, data)
    }
}

/// A captured frame with the exposure it was taken at.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: Image8,
    pub dt_ms: f64,
}

/// Rigid motion of the marker relative to the camera over a run.
#[derive(Debug, Clone)]
pub enum Trajectory {
    /// Marker fixed at a pose.
    Static { pose: Pose },
    /// Camera translates along +x at constant speed, so the marker drifts
    /// along -x in the camera frame, starting offset so the sweep is
    /// centered over the run.
    Lateral { base: Pose, speed_mps: f64, duration_s: f64 },
    /// Ornstein-Uhlenbeck positional jitter around a base pose, precomputed
    /// on a fixed grid and linearly interpolated.
    Jitter(JitterTrack),
}

/// Precomputed OU jitter offsets at `grid_hz` samples per second.
#[derive(Debug, Clone)]
pub struct JitterTrack {
    base: Pose,
    grid_hz: f64,
    offsets: Vec<Vector3<f64>>,
}

impl JitterTrack {
    /// Exact OU discretization: x_{k+1} = a x_k + sigma_stat sqrt(1-a^2) z,
    /// a = exp(-theta dt), stationary std `amplitude_m` per axis. The chain
    /// starts from its stationary distribution so the jitter has no warm-up
    /// transient.
    pub fn new(base: Pose, duration_s: f64, amplitude_m: f64, theta_hz: f64, seed: u64) -> Result<Self> {
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(Error::ParamOutOfRange { name: "duration_s", value: duration_s, min: f64::MIN_POSITIVE, max: f64::MAX });
        }
        if !(amplitude_m.is_finite() && amplitude_m >= 0.0) {
            return Err(Error::ParamOutOfRange { name: "amplitude_m", value: amplitude_m, min: 0.0, max: f64::MAX });
        }
        if !(theta_hz.is_finite() && theta_hz > 0.0) {
            return Err(Error::ParamOutOfRange { name: "theta_hz", value: theta_hz, min: f64::MIN_POSITIVE, max: f64::MAX });
        }
        let grid_hz = 100.0;
        let n = (duration_s * grid_hz).ceil() as usize + 2;
        let a = (-theta_hz / grid_hz).exp();
        let step_std = amplitude_m * (1.0 - a * a).sqrt();
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vector3::zeros();
        for i in 0..3 {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[i] = amplitude_m * z;
        }
        let mut offsets = Vec::with_capacity(n);
        offsets.push(x);
        for _ in 1..n {
            for i in 0..3 {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[i] = a * x[i] + step_std * z;
            }
            offsets.push(x);
        }
        Ok(Self { base, grid_hz, offsets })
    }

    fn offset_at(&self, t_s: f64) -> Vector3<f64> {
        let pos = (t_s * self.grid_hz).max(0.0);
        let i = (pos.floor() as usize).min(self.offsets.len() - 2);
        let frac = (pos - i as f64).clamp(0.0, 1.0);
        self.offsets[i] * (1.0 - frac) + self.offsets[i + 1] * frac
    }
}

impl Trajectory {
    /// Marker pose in the camera frame at time `t_s` from run start.
    pub fn pose_at(&self, t_s: f64) -> Pose {
        match self {
            Trajectory::Static { pose } => pose.clone(),
            Trajectory::Lateral { base, speed_mps, duration_s } => {
                let offset = speed_mps * (duration_s / 2.0 - t_s);
                let mut t = base.t;
                t.x += offset;
                Pose::new(base.rot, t)
            }
            Trajectory::Jitter(track) => {
                let off = track.offset_at(t_s);
                Pose::new(track.base.rot, track.base.t + off)
            }
        }
    }
}

/// Scene lighting description: background irradiance, illumination on the
/// marker plane, and an optional Gaussian glare source that tracks the
/// marker's projected center.
#[derive(Debug, Clone)]
pub struct SceneLighting {
    pub background_per_ms: f64,
    pub marker_illum_per_ms: f64,
    /// Relative contrast of a fixed sinusoidal pattern on the background,
    /// 0 for a uniform wall. The pattern is mean-preserving, so the average
    /// background level stays at `background_per_ms`.
    pub background_texture: f64,
    pub glare: Option<Glare>,
}

/// Additive Gaussian irradiance bump in image space.
#[derive(Debug, Clone)]
pub struct Glare {
    pub peak_per_ms: f64,
    /// Standard deviation as a multiple of the marker's projected radius.
    pub sigma_radius_scale: f64,
}

/// Everything needed to synthesize frames: camera, marker, lighting, motion.
#[derive(Debug, Clone)]
pub struct Scene {
    pub camera: CameraModel,
    pub marker: MarkerSpec,
    pub lighting: SceneLighting,
    pub trajectory: Trajectory,
}

impl Scene {
    /// Irradiance field (1/ms) for the marker at `pose`.
    pub fn irradiance(&self, pose: &Pose) -> Result<ImageF> {
        let w = self.camera.width;
        let h = self.camera.height;
        let mut base = ImageF::filled(w, h, self.lighting.background_per_ms)?;
        let contrast = self.lighting.background_texture;
        if contrast > 0.0 {
            // Fixed wall pattern with incommensurate periods so neither axis
            // degenerates; only visible once exposure is long enough.
            const PERIOD_X: f64 = 29.0;
            const PERIOD_Y: f64 = 37.0;
            let tau = std::f64::consts::TAU;
            for y in 0..h {
                let sy = (tau * y as f64 / PERIOD_Y).sin();
                for x in 0..w {
                    let sx = (tau * x as f64 / PERIOD_X).sin();
                    base.set(x, y, self.lighting.background_per_ms * (1.0 + contrast * sx * sy));
                }
            }
        }
        let mut illum = ImageF::filled(w, h, self.lighting.marker_illum_per_ms)?;
        if let Some(glare) = &self.lighting.glare {
            // Glare follows the marker's projected center; fall back to the
            // principal point when the marker is behind the camera.
            let center = self
                .camera
                .intrinsics
                .project(pose.t)
                .unwrap_or_else(|| Vector2::new(self.camera.intrinsics.cx, self.camera.intrinsics.cy));
            let radius_px = if pose.t.z > 0.0 {
                0.5 * self.marker.side_m() * self.camera.intrinsics.fx / pose.t.z
            } else {
                0.5 * self.marker.side_m() * self.camera.intrinsics.fx
            };
            let sigma = glare.sigma_radius_scale * radius_px * std::f64::consts::SQRT_2;
            let two_s2 = 2.0 * sigma * sigma;
            for y in 0..h {
                for x in 0..w {
                    let dx = x as f64 - center.x;
                    let dy = y as f64 - center.y;
                    let g = glare.peak_per_ms * (-(dx * dx + dy * dy) / two_s2).exp();
                    base.set(x, y, base.get(x, y) + g);
                    illum.set(x, y, illum.get(x, y) + g);
                }
            }
        }
        render_marker(&base, &illum, &self.marker, pose, &self.camera.intrinsics)
    }

    /// Irradiance field at time `t_s` along the trajectory.
    pub fn irradiance_at(&self, t_s: f64) -> Result<ImageF> {
        self.irradiance(&self.trajectory.pose_at(t_s))
    }

    /// Capture a frame at time `t_s` with exposure `dt_ms`.
    pub fn capture_at(&self, t_s: f64, dt_ms: f64, rng: &mut ChaCha8Rng) -> Result<Frame> {
        let field = self.irradiance_at(t_s)?;
        let image = self.camera.capture(&field, dt_ms, rng)?;
        Ok(Frame { image, dt_ms })
    }

    /// Noise-free capture at time `t_s`.
    pub fn capture_clean_at(&self, t_s: f64, dt_ms: f64) -> Result<Frame> {
        let field = self.irradiance_at(t_s)?;
        let image = self.camera.capture_clean(&field, dt_ms)?;
        Ok(Frame { image, dt_ms })
    }
}

/// Benchmark lighting scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    Normal,
    Lowlight,
    Adversarial,
}

impl ScenarioKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "normal" => Ok(Self::Normal),
            "lowlight" => Ok(Self::Lowlight),
            "adversarial" => Ok(Self::Adversarial),
            other => Err(Error::UnknownScenario(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Lowlight => "lowlight",
            Self::Adversarial => "adversarial",
        }
    }

    pub fn all() -> [Self; 3] {
        [Self::Normal, Self::Lowlight, Self::Adversarial]
    }

    pub fn lighting(&self) -> SceneLighting {
        self.lighting_with(&SceneParams::default())
    }

    pub fn lighting_with(&self, params: &SceneParams) -> SceneLighting {
        match self {
            // Comfortable indoor light: whites expose well near 2 ms.
            Self::Normal => SceneLighting {
                background_per_ms: 0.30,
                marker_illum_per_ms: 0.50,
                background_texture: 0.0,
                glare: None,
            },
            // Dim scene: whites need tens of ms.
            Self::Lowlight => SceneLighting {
                background_per_ms: 0.02,
                marker_illum_per_ms: 0.04,
                background_texture: 0.0,
                glare: None,
            },
            // Near-dark textured backdrop with an intense glare spot parked
            // on the marker: exposures long enough to show the backdrop have
            // already washed out the marker's whole neighborhood.
            Self::Adversarial => SceneLighting {
                background_per_ms: 0.005,
                marker_illum_per_ms: 0.0,
                background_texture: params.texture_contrast,
                glare: Some(Glare {
                    peak_per_ms: params.glare_peak_per_ms,
                    sigma_radius_scale: params.glare_sigma_scale,
                }),
            },
        }
    }
}

/// Scene-synthesis constants shared by the benchmark scenarios, all
/// overridable through the CLI config file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    /// Marker side length, meters.
    pub marker_side_m: f64,
    /// Peak glare irradiance (1/ms) in the adversarial scenario.
    pub glare_peak_per_ms: f64,
    /// Glare standard deviation as a multiple of the marker's projected
    /// radius.
    pub glare_sigma_scale: f64,
    /// Relative contrast of the adversarial background pattern; 0 gives a
    /// uniform backdrop.
    pub texture_contrast: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self { marker_side_m: 0.08, glare_peak_per_ms: 5.0, glare_sigma_scale: 1.2, texture_contrast: 0.8 }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.marker_side_m.is_finite() && self.marker_side_m > 0.0) {
            return Err(Error::ParamOutOfRange {
                name: "marker_side_m",
                value: self.marker_side_m,
                min: f64::MIN_POSITIVE,
                max: f64::MAX,
            });
        }
        if !(self.glare_peak_per_ms.is_finite() && self.glare_peak_per_ms >= 0.0) {
            return Err(Error::ParamOutOfRange {
                name: "glare_peak_per_ms",
                value: self.glare_peak_per_ms,
                min: 0.0,
                max: f64::MAX,
            });
        }
        if !(self.glare_sigma_scale.is_finite() && self.glare_sigma_scale > 0.0) {
            return Err(Error::ParamOutOfRange {
                name: "glare_sigma_scale",
                value: self.glare_sigma_scale,
                min: f64::MIN_POSITIVE,
                max: f64::MAX,
            });
        }
        if !(self.texture_contrast.is_finite() && (0.0..1.0).contains(&self.texture_contrast)) {
            return Err(Error::ParamOutOfRange {
                name: "texture_contrast",
                value: self.texture_contrast,
                min: 0.0,
                max: 1.0,
            });
        }
        Ok(())
    }
}

/// Marker motion patterns used in the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionKind {
    Static,
    Lateral,
    Jitter,
}

impl MotionKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "static" => Ok(Self::Static),
            "lateral" => Ok(Self::Lateral),
            "jitter" => Ok(Self::Jitter),
            other => Err(Error::UnknownScenario(format!("motion '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Lateral => "lateral",
            Self::Jitter => "jitter",
        }
    }
}

/// Nominal marker pose shared by the benchmark scenes: fronto-parallel, 1 m
/// straight ahead.
pub fn nominal_pose() -> Pose {
    Pose::fronto(Vector3::new(0.0, 0.0, 1.0))
}

/// Build a benchmark scene from scenario and motion labels.
pub fn make_scene(
    kind: ScenarioKind,
    motion: MotionKind,
    duration_s: f64,
    motion_seed: u64,
) -> Result<Scene> {
    make_scene_with(kind, motion, duration_s, motion_seed, &SceneParams::default())
}

/// `make_scene` with explicit synthesis constants.
pub fn make_scene_with(
    kind: ScenarioKind,
    motion: MotionKind,
    duration_s: f64,
    motion_seed: u64,
    params: &SceneParams,
) -> Result<Scene> {
    params.validate()?;
    let camera = CameraModel::standard();
    let marker = MarkerSpec::default_pattern(params.marker_side_m)?;
    let base = nominal_pose();
    let trajectory = match motion {
        MotionKind::Static => Trajectory::Static { pose: base },
        MotionKind::Lateral => Trajectory::Lateral { base, speed_mps: 0.004, duration_s },
        MotionKind::Jitter => Trajectory::Jitter(JitterTrack::new(base, duration_s, 0.002, 2.0, motion_seed)?),
    };
    Ok(Scene { camera, marker, lighting: kind.lighting_with(params), trajectory })
}
