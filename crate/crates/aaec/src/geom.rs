//! Camera intrinsics and rigid poses shared by the simulator and the
//! marker pipeline. Coordinates follow the usual pinhole convention:
//! camera x right, y down, z forward (into the scene).

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Pinhole intrinsics (no distortion).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        for (name, v) in [("fx", fx), ("fy", fy)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::ParamOutOfRange { name, value: v, min: f64::MIN_POSITIVE, max: f64::MAX });
            }
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(Error::ParamOutOfRange { name: "cx/cy", value: cx, min: f64::MIN, max: f64::MAX });
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Project a camera-frame point with positive depth to pixels.
    pub fn project(&self, p: Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Rigid transform taking marker-frame points into the camera frame:
/// `p_cam = rot * p_marker + t`. The marker pattern lives in its own z = 0
/// plane with the origin at the marker center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rot: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Pose {
    pub fn new(rot: Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self { rot, t }
    }

    /// Fronto-parallel marker at camera-frame translation `t`.
    pub fn fronto(t: Vector3<f64>) -> Self {
        Self { rot: Matrix3::identity(), t }
    }

    /// Rotate the fronto-parallel pose by `angle` radians about `axis`,
    /// then translate to `t`.
    pub fn tilted(axis: Vector3<f64>, angle: f64, t: Vector3<f64>) -> Self {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self { rot: rot.into_inner(), t }
    }

    pub fn transform(&self, p_marker: Vector3<f64>) -> Vector3<f64> {
        self.rot * p_marker + self.t
    }
}
