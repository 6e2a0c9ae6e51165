use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const ORTHONORMALITY_TOL: f64 = 1e-9;

/// Pinhole camera: `p_cam = R * p_world + t`, z forward, y down, image
/// x right. Projection is `u = fx * x/z + cx`, `v = fy * y/z + cy` at
/// continuous pixel coordinates (pixel (i, j) spans [i, i+1) x [j, j+1)).
#[derive(Debug, Clone)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let err = (gram - Matrix3::identity()).abs().max();
        if err >= ORTHONORMALITY_TOL {
            return Err(Error::InvalidCamera(format!(
                "rotation orthonormality error {err:.3e} >= {ORTHONORMALITY_TOL:.0e}"
            )));
        }
        if rotation.determinant() <= 0.0 {
            return Err(Error::InvalidCamera("rotation determinant must be +1".into()));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera that sits at `eye` and looks at `target` with +y of the
    /// image pointing opposite `up`.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up parallel to view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let translation = -rotation * eye;
        Self::new(
            fx,
            fy,
            width as f64 / 2.0,
            height as f64 / 2.0,
            rotation,
            translation,
            width,
            height,
        )
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Projects a world point. Returns continuous pixel coordinates and the
    /// depth along the optical axis; depth <= 0 flags points behind the
    /// camera (coordinates are then meaningless).
    pub fn project(&self, world: &Vector3<f64>) -> Result<(f64, f64, f64)> {
        let p = self.rotation * world + self.translation;
        if p.norm() < 1e-12 {
            return Err(Error::CameraCenter);
        }
        let z = p.z;
        if z.abs() < 1e-300 {
            return Ok((f64::NAN, f64::NAN, z));
        }
        Ok((self.fx * p.x / z + self.cx, self.fy * p.y / z + self.cy, z))
    }

    /// Inverse of [`Camera::project`] at a given depth.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let x = (u - self.cx) / self.fx * depth;
        let y = (v - self.cy) / self.fy * depth;
        self.rotation.transpose() * (Vector3::new(x, y, depth) - self.translation)
    }

    /// Unit world-space direction of the ray through pixel coordinates (u, v).
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let d = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.rotation.transpose() * d).normalize()
    }

    /// Rotation from world to the per-view normal frame: x right, y up,
    /// z toward the camera. Normals facing the camera have positive z.
    pub fn view_rotation(&self) -> Matrix3<f64> {
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        flip * self.rotation
    }

    /// Unit viewing direction from `scene_center` toward the camera center,
    /// expressed in the world frame.
    pub fn omega_o_world(&self, scene_center: &Vector3<f64>) -> Vector3<f64> {
        (self.center() - scene_center).normalize()
    }
}
