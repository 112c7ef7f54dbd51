//! Pinhole camera with principal point at the image center and yaw-only
//! orientation.
//!
//! Camera frame: `z` forward along the yaw heading, `x` right, `y` down.
//! World frame: `z` up, yaw measured counter-clockwise from world `+x`.

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub horizontal_fov: f64,
    pub depth_far: f64,
}

impl CameraIntrinsics {
    pub fn new(width: usize, height: usize, horizontal_fov: f64, depth_far: f64) -> Result<Self> {
        let c = CameraIntrinsics {
            width,
            height,
            horizontal_fov,
            depth_far,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::contract("camera dimensions must be >= 1"));
        }
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov < 180.0) {
            return Err(Error::contract(format!(
                "horizontal_fov {} outside (0, 180)",
                self.horizontal_fov
            )));
        }
        if !(self.depth_far > 0.0 && self.depth_far.is_finite()) {
            return Err(Error::contract("depth_far must be positive and finite"));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.horizontal_fov.to_radians()).tan()
    }

    pub fn cx(&self) -> f64 {
        0.5 * self.width as f64
    }

    pub fn cy(&self) -> f64 {
        0.5 * self.height as f64
    }

    /// Normalized image x coordinate of the center of pixel column `col`.
    pub fn norm_x(&self, col: usize) -> f64 {
        (col as f64 + 0.5 - self.cx()) / self.focal()
    }

    /// Normalized image y coordinate of the center of pixel row `row`.
    pub fn norm_y(&self, row: usize) -> f64 {
        (row as f64 + 0.5 - self.cy()) / self.focal()
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Camera position and heading. Pitch and roll are always zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    pub yaw: f64,
}

impl CameraPose {
    pub fn new(position: Vec3, yaw: f64) -> Self {
        CameraPose { position, yaw }
    }

    /// Camera axes expressed in world coordinates: (right, down, forward).
    pub fn axes(&self) -> (Vec3, Vec3, Vec3) {
        let (s, c) = self.yaw.sin_cos();
        (
            Vec3::new(s, -c, 0.0),
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(c, s, 0.0),
        )
    }

    /// Rows are the camera axes, so `R * (p_world - position)` is the
    /// camera-frame point.
    pub fn world_to_camera(&self) -> Mat3 {
        let (x, y, z) = self.axes();
        [x.to_array(), y.to_array(), z.to_array()]
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let (x, y, z) = self.axes();
        let d = p - self.position;
        Vec3::new(d.dot(x), d.dot(y), d.dot(z))
    }

    pub fn to_world(&self, pc: Vec3) -> Vec3 {
        let (x, y, z) = self.axes();
        self.position + x * pc.x + y * pc.y + z * pc.z
    }

    /// Rotates a world-frame vector into the camera frame.
    pub fn rotate_to_camera(&self, v: Vec3) -> Vec3 {
        let (x, y, z) = self.axes();
        Vec3::new(v.dot(x), v.dot(y), v.dot(z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_from_fov() {
        let c = CameraIntrinsics::new(64, 48, 90.0, 20.0).unwrap();
        assert!((c.focal() - 32.0).abs() < 1e-12);
        assert!(CameraIntrinsics::new(0, 48, 90.0, 20.0).is_err());
        assert!(CameraIntrinsics::new(64, 48, 180.0, 20.0).is_err());
    }

    #[test]
    fn camera_world_round_trip() {
        let pose = CameraPose::new(Vec3::new(1.0, -2.0, 1.5), 0.7);
        let p = Vec3::new(3.0, 4.0, -1.0);
        let back = pose.to_world(pose.to_camera(p));
        assert!((back - p).norm() < 1e-12);
        // yaw 0 looks down world +x; right is world -y; down is world -z
        let pose0 = CameraPose::new(Vec3::ZERO, 0.0);
        assert_eq!(pose0.to_camera(Vec3::new(5.0, 0.0, 0.0)), Vec3::new(0.0, 0.0, 5.0));
        assert_eq!(pose0.to_camera(Vec3::new(0.0, -1.0, 0.0)), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(pose0.to_camera(Vec3::new(0.0, 0.0, -1.0)), Vec3::new(0.0, 1.0, 0.0));
    }
}
