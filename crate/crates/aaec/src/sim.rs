//! Closed-loop simulation: a scene, a camera, and a controller stepping
//! each other frame by frame, with everything logged for evaluation.
//!
//! Seeding is layered so results are reproducible and fair: the marker
//! trajectory derives from (seed, scenario) only — every controller sees
//! the same motion — while sensor noise derives from (seed, scenario,
//! controller) so runs are independent across controllers.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::{make_scene_with, Frame, MotionKind, Scene, SceneParams, ScenarioKind};
use crate::controller::{Controller, ControllerKind, ControllerParams, StepContext};
use crate::error::Result;
use crate::imgproc::Rect;
use crate::marker::{detect, project_corners, roi_from_corners, DetectionResult};
use crate::metric::{m_softperc, DerivSource, MetricParams};

/// Deterministic 64-bit seed derived from a user seed and string labels.
///
/// FNV-1a over the labels and seed bytes, finished with a splitmix64 mix.
/// Hand-rolled on purpose: the std hasher is not stable across releases,
/// and these seeds are recorded in result files.
pub fn stable_seed(user: u64, scenario: &str, role: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let eat = |h: &mut u64, bytes: &[u8]| {
        for &b in bytes {
            *h ^= b as u64;
            *h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&mut h, scenario.as_bytes());
    eat(&mut h, &[0x1f]);
    eat(&mut h, role.as_bytes());
    eat(&mut h, &[0x1f]);
    eat(&mut h, &user.to_le_bytes());
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Everything that defines one run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub scenario: ScenarioKind,
    pub motion: MotionKind,
    pub controller: ControllerKind,
    pub frames: u32,
    pub seed: u64,
    pub dt0_ms: f64,
    pub noise: bool,
    pub fps: f64,
    pub params: ControllerParams,
    pub scene: SceneParams,
    /// Differentiate through the true irradiance field instead of the
    /// inverse-response estimate (simulation-only analysis mode).
    pub ground_truth_deriv: bool,
}

impl RunSpec {
    pub fn new(scenario: ScenarioKind, controller: ControllerKind, frames: u32, seed: u64) -> Self {
        Self {
            scenario,
            motion: MotionKind::Static,
            controller,
            frames,
            seed,
            dt0_ms: default_dt0_ms(scenario),
            noise: true,
            fps: 20.0,
            params: ControllerParams::default(),
            scene: SceneParams::default(),
            ground_truth_deriv: false,
        }
    }
}

/// Benchmark starting exposure per scenario: deliberately off-optimum so
/// convergence behavior is visible, but within the detectable range.
pub fn default_dt0_ms(kind: ScenarioKind) -> f64 {
    match kind {
        ScenarioKind::Normal => 0.8,
        ScenarioKind::Lowlight => 14.0,
        // Start hot: the glare has already blinded a default camera.
        ScenarioKind::Adversarial => 2.0,
    }
}

/// One frame of a run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub frame: u32,
    pub t_s: f64,
    /// Exposure this frame was captured at, ms.
    pub dt_ms: f64,
    pub m: f64,
    pub dhat: f64,
    pub velocity: f64,
    pub found: bool,
    pub roi: Rect,
    pub sat_frac: f64,
    /// Estimated marker translation when found, meters.
    pub det_t: Option<Vector3<f64>>,
    pub reproj_px: Option<f64>,
    /// True marker translation, meters.
    pub gt_t: Vector3<f64>,
}

/// A complete run with its evaluation inputs.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario: ScenarioKind,
    pub motion: MotionKind,
    pub controller: ControllerKind,
    pub seed: u64,
    pub fps: f64,
    pub records: Vec<RunRecord>,
    /// Nominal ground-truth path endpoints (equal for static and jitter).
    pub gt_path: (Vector3<f64>, Vector3<f64>),
}

/// Execute a run: capture, control, and independently track the marker for
/// evaluation on every frame.
pub fn run(spec: &RunSpec) -> Result<RunResult> {
    run_observed(spec, |_, _| {})
}

/// Like [`run`], but hands every captured frame to `on_frame` (frame index,
/// frame) before the controller sees it — for image dumps and debugging.
pub fn run_observed(spec: &RunSpec, on_frame: impl FnMut(u32, &Frame)) -> Result<RunResult> {
    if !(spec.fps.is_finite() && spec.fps > 0.0) {
        return Err(crate::error::Error::ParamOutOfRange {
            name: "fps",
            value: spec.fps,
            min: f64::MIN_POSITIVE,
            max: f64::MAX,
        });
    }
    let duration_s = spec.frames as f64 / spec.fps;
    let motion_seed = stable_seed(spec.seed, spec.scenario.name(), "motion");
    let mut scene = make_scene_with(spec.scenario, spec.motion, duration_s, motion_seed, &spec.scene)?;
    scene.camera.fps = spec.fps;
    run_in_scene_observed(spec, &scene, on_frame)
}

/// Execute a run in a prebuilt scene (used by tests with custom scenes).
pub fn run_in_scene(spec: &RunSpec, scene: &Scene) -> Result<RunResult> {
    run_in_scene_observed(spec, scene, |_, _| {})
}

fn run_in_scene_observed(
    spec: &RunSpec,
    scene: &Scene,
    mut on_frame: impl FnMut(u32, &Frame),
) -> Result<RunResult> {
    let cam = &scene.camera;
    let mut controller = Controller::new(spec.controller, spec.dt0_ms, spec.params, cam)?;
    let noise_seed = stable_seed(spec.seed, spec.scenario.name(), spec.controller.name());
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut records = Vec::with_capacity(spec.frames as usize);

    for i in 0..spec.frames {
        let t_s = i as f64 / cam.fps;
        let dt_ms = controller.dt_ms();
        let field = scene.irradiance_at(t_s)?;
        let image = if spec.noise {
            cam.capture(&field, dt_ms, &mut rng)?
        } else {
            cam.capture_clean(&field, dt_ms)?
        };
        let frame = Frame { image, dt_ms };
        on_frame(i, &frame);
        let deriv = if spec.ground_truth_deriv {
            DerivSource::SceneIrradiance(&field)
        } else {
            DerivSource::InverseResponse
        };
        let ctx = StepContext { camera: cam, marker: &scene.marker, deriv };
        let log = controller.step(&frame, &ctx)?;
        // Controllers that don't track the marker still get evaluated on
        // tracking quality: run the detector over the full frame.
        let det: DetectionResult = match log.detection {
            Some(d) => d,
            None => detect(&frame.image, frame.image.bounds(), &scene.marker, &cam.intrinsics)?,
        };
        let gt_pose = scene.trajectory.pose_at(t_s);
        records.push(RunRecord {
            frame: i,
            t_s,
            dt_ms,
            m: log.m,
            dhat: log.dhat,
            velocity: log.velocity,
            found: det.found,
            roi: log.roi,
            sat_frac: log.sat_frac,
            det_t: det.found.then_some(det.translation),
            reproj_px: det.found.then_some(det.reproj_error_px),
            gt_t: gt_pose.t,
        });
    }

    let gt_path = match &scene.trajectory {
        crate::camera::Trajectory::Static { pose } => (pose.t, pose.t),
        crate::camera::Trajectory::Lateral { .. } => {
            (scene.trajectory.pose_at(0.0).t, scene.trajectory.pose_at(duration_of(spec, cam)).t)
        }
        crate::camera::Trajectory::Jitter(_) => {
            let base = crate::camera::nominal_pose();
            (base.t, base.t)
        }
    };

    Ok(RunResult {
        scenario: spec.scenario,
        motion: spec.motion,
        controller: spec.controller,
        seed: spec.seed,
        fps: cam.fps,
        records,
        gt_path,
    })
}

fn duration_of(spec: &RunSpec, cam: &crate::camera::CameraModel) -> f64 {
    spec.frames as f64 / cam.fps
}

/// One sample of the exposure-metric landscape.
#[derive(Debug, Clone, Copy)]
pub struct SweepPoint {
    pub dt_ms: f64,
    /// Metric over the ground-truth marker RoI.
    pub m_roi: f64,
    /// Metric over the whole frame.
    pub m_full: f64,
    /// Whether the detector finds the marker at this exposure.
    pub found: bool,
}

/// Sample the metric over a log-spaced exposure grid for a static,
/// noise-free scene, using the ground-truth marker RoI.
pub fn exposure_sweep(kind: ScenarioKind, n: usize, metric: &MetricParams) -> Result<Vec<SweepPoint>> {
    exposure_sweep_with(kind, n, metric, &SceneParams::default())
}

/// `exposure_sweep` with explicit scene-synthesis constants.
pub fn exposure_sweep_with(
    kind: ScenarioKind,
    n: usize,
    metric: &MetricParams,
    scene_params: &SceneParams,
) -> Result<Vec<SweepPoint>> {
    let scene = make_scene_with(kind, MotionKind::Static, 10.0, 0, scene_params)?;
    let cam = &scene.camera;
    let pose = scene.trajectory.pose_at(0.0);
    let corners = project_corners(&scene.marker, &pose, &cam.intrinsics)
        .ok_or(crate::error::Error::NotDetected)?;
    let field = scene.irradiance(&pose)?;
    let bounds = Rect::new(0, 0, cam.width, cam.height)?;
    let roi = roi_from_corners(&corners, bounds)?;
    let lo = cam.dt_min_ms.ln();
    let hi = cam.dt_max_ms.ln();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let f = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        let dt = (lo + f * (hi - lo)).exp();
        let img = cam.capture_clean(&field, dt)?;
        let m_roi = m_softperc(&img, roi, metric)?;
        let m_full = m_softperc(&img, bounds, metric)?;
        let found = detect(&img, bounds, &scene.marker, &cam.intrinsics)?.found;
        out.push(SweepPoint { dt_ms: dt, m_roi, m_full, found });
    }
    Ok(out)
}
