//! Pinhole cameras, pixel rays and the camera-parameter file.
//!
//! Cameras use the computer-vision convention: the camera frame has +x to
//! the right, +y down and +z along the optical axis. Pixel coordinates are
//! continuous, so the pixel with integer index `(i, j)` covers
//! `[i, i + 1) x [j, j + 1)` and its center is at `(i + 0.5, j + 0.5)`.
//! World units are meters. No lens distortion is modeled.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Pt3 = Point3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// Translation in the camera frame: `p_cam = R p_world + t`.
    pub translation: Vec3,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Pt3,
    /// Unit length.
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Pt3 {
        self.origin + self.direction * t
    }
}

/// Result of projecting a world point into an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Camera-frame z of the point.
    pub depth: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vec3,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` aimed at `target`, with `fov_x_deg` the full
    /// horizontal field of view and the principal point at the image center.
    pub fn look_at(eye: Pt3, target: Pt3, up: Vec3, fov_x_deg: f64, width: u32, height: u32) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(Error::Domain("eye and target coincide".into()));
        }
        if !(fov_x_deg > 0.0 && fov_x_deg < 180.0) {
            return Err(Error::Domain(format!("field of view {fov_x_deg} outside (0, 180)")));
        }
        let z = forward.normalize();
        let right = z.cross(&up);
        if right.norm() < 1e-12 {
            return Err(Error::Domain("up vector parallel to viewing direction".into()));
        }
        let x = right.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye.coords);
        let f = (width as f64 / 2.0) / (fov_x_deg.to_radians() / 2.0).tan();
        Camera::new(
            f,
            f,
            width as f64 / 2.0,
            height as f64 / 2.0,
            rotation,
            translation,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.rotation.iter())
            .chain(self.translation.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("non-finite camera parameter".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Domain("image size must be nonzero".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Domain(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) || !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::Domain(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        let gram = self.rotation.transpose() * self.rotation;
        if (gram - Matrix3::identity()).amax() > ORTHONORMAL_TOL {
            return Err(Error::Domain("rotation is not orthonormal".into()));
        }
        if self.rotation.determinant() < 0.0 {
            return Err(Error::Domain("rotation has determinant -1 (reflection)".into()));
        }
        Ok(())
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Pt3 {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }

    /// Ray from the optical center through continuous image position `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Result<Ray> {
        if !self.contains_pixel(u, v) {
            return Err(Error::Domain(format!(
                "pixel ({u}, {v}) outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(self.ray_unchecked(u, v))
    }

    /// Ray through the center of the pixel with integer index `(i, j)`.
    pub fn pixel_center_ray(&self, i: u32, j: u32) -> Result<Ray> {
        self.pixel_ray(i as f64 + 0.5, j as f64 + 0.5)
    }

    pub(crate) fn ray_unchecked(&self, u: f64, v: f64) -> Ray {
        let d_cam = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let direction = (self.rotation.transpose() * d_cam).normalize();
        Ray {
            origin: self.center(),
            direction,
        }
    }

    pub fn to_camera_frame(&self, p: &Pt3) -> Vec3 {
        self.rotation * p.coords + self.translation
    }

    pub fn project(&self, p: &Pt3) -> Result<Projection> {
        let pc = self.to_camera_frame(p);
        if pc.z <= 0.0 {
            return Err(Error::BehindCamera { depth: pc.z });
        }
        Ok(Projection {
            u: self.fx * pc.x / pc.z + self.cx,
            v: self.fy * pc.y / pc.z + self.cy,
            depth: pc.z,
        })
    }

    /// Optical axis direction in world coordinates.
    pub fn axis(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }
}

// ----- camera-parameter file -------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CameraFile {
    camera: Vec<CameraRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major world-to-camera rotation.
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let r = &c.rotation;
        CameraRecord {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

/// Parse the TOML camera-parameter format: an array of `[[camera]]` tables.
pub fn parse_cameras(text: &str) -> Result<Vec<Camera>> {
    let file: CameraFile = toml::from_str(text).map_err(|e| Error::format("camera file", e.to_string()))?;
    file.camera
        .into_iter()
        .enumerate()
        .map(|(i, rec)| {
            Camera::new(
                rec.fx,
                rec.fy,
                rec.cx,
                rec.cy,
                Matrix3::from_row_slice(&rec.rotation),
                Vector3::from(rec.translation),
                rec.width,
                rec.height,
            )
            .map_err(|e| Error::format(format!("camera {i}"), e.to_string()))
        })
        .collect()
}

pub fn format_cameras(cameras: &[Camera]) -> String {
    let file = CameraFile {
        camera: cameras.iter().map(CameraRecord::from).collect(),
    };
    toml::to_string(&file).expect("camera records always serialize")
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text)
}

pub fn save_cameras(path: impl AsRef<Path>, cameras: &[Camera]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_cameras(cameras)).map_err(|e| Error::io(path, e))
}
