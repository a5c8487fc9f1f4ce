//! Pinhole camera.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Point3, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Point3,
    pub look_at: Point3,
    #[serde(default = "default_up")]
    pub up: Vec3,
    /// Vertical field of view in degrees.
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

fn default_up() -> Vec3 {
    Vec3::z()
}

impl Camera {
    pub fn new(position: Point3, look_at: Point3, up: Vec3, fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let c = Camera {
            position,
            look_at,
            up,
            fov_deg,
            width,
            height,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_deg > 1.0 && self.fov_deg < 179.0) {
            return Err(Error::Config(format!("fov {} outside (1, 179) degrees", self.fov_deg)));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config(format!(
                "resolution {}x{} below 16x16",
                self.width, self.height
            )));
        }
        let fwd = self.look_at - self.position;
        if fwd.norm() == 0.0 || fwd.cross(&self.up).norm() < 1e-9 * fwd.norm() * self.up.norm() {
            return Err(Error::Config("camera forward and up are degenerate".into()));
        }
        Ok(())
    }

    fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let fwd = (self.look_at - self.position).normalize();
        let right = fwd.cross(&self.up).normalize();
        let up = right.cross(&fwd);
        (fwd, right, up)
    }

    /// Unit direction through the centre of pixel `(px, py)`; row 0 is the
    /// top of the image.
    pub fn direction(&self, px: usize, py: usize) -> Vec3 {
        let (fwd, right, up) = self.basis();
        let half = (self.fov_deg.to_radians() * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * (px as f64 + 0.5) / self.width as f64 - 1.0) * half * aspect;
        let sy = (1.0 - 2.0 * (py as f64 + 0.5) / self.height as f64) * half;
        (fwd + right * sx + up * sy).normalize()
    }
}
