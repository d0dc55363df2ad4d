//! Equirectangular camera model and gravity-aligned pose algebra.
//!
//! World frame: x east, y up, z north. A camera with yaw 0 looks along +z;
//! positive yaw turns toward +x. Pixel column `x` maps linearly to longitude
//! `theta = 2*pi*x/W - pi` and row `y` to latitude `phi = pi/2 - pi*y/H`.
//! Integer pixel `i` samples at the continuous coordinate `i + 0.5`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Depth normalization bound (meters) used at model input/output boundaries.
pub const D_MAX: f64 = 10.0;

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid can return TAU itself after rounding
    if r >= PI {
        r - TAU
    } else {
        r
    }
}

/// Rotation about +y by `yaw`, taking +z toward +x.
#[inline]
pub fn rotate_yaw(yaw: f64, v: &Vec3) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    Vec3::new(c * v.x + s * v.z, v.y, -s * v.x + c * v.z)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Pose {
            position,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Pose::new(Vec3::zeros(), 0.0)
    }

    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Pose::new(Vec3::new(x, y, z), 0.0)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.position + rotate_yaw(self.yaw, &other.position),
            self.yaw + other.yaw,
        )
    }

    pub fn inverse(&self) -> Pose {
        Pose::new(-rotate_yaw(-self.yaw, &self.position), -self.yaw)
    }

    /// Maps a camera-frame point into the world frame.
    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        self.position + rotate_yaw(self.yaw, p)
    }

    /// Maps a world-frame point into the camera frame.
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        rotate_yaw(-self.yaw, &(p - self.position))
    }
}

/// Equirectangular image size. Always 2:1 and even-sized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry")]
pub struct PanoGeometry {
    width: usize,
    height: usize,
}

#[derive(Deserialize)]
struct RawGeometry {
    width: usize,
    height: usize,
}

impl TryFrom<RawGeometry> for PanoGeometry {
    type Error = Error;
    fn try_from(raw: RawGeometry) -> Result<Self> {
        PanoGeometry::new(raw.width, raw.height)
    }
}

impl PanoGeometry {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width != 2 * height {
            return Err(Error::Domain(format!(
                "panorama width {width} must be twice the height {height}"
            )));
        }
        if width < 8 || height < 4 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(Error::Domain(format!(
                "panorama {width}x{height} must be even and at least 8x4"
            )));
        }
        Ok(PanoGeometry { width, height })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Unit ray (camera frame) through continuous pixel coordinates.
    pub fn pixel_to_ray(&self, x: f64, y: f64) -> Result<Vec3> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(0.0..w).contains(&x) || !(0.0..h).contains(&y) {
            return Err(Error::Domain(format!(
                "pixel ({x}, {y}) outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(self.pixel_to_ray_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn pixel_to_ray_unchecked(&self, x: f64, y: f64) -> Vec3 {
        let theta = TAU * x / self.width as f64 - PI;
        let phi = PI / 2.0 - PI * y / self.height as f64;
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Vec3::new(cp * st, sp, cp * ct)
    }

    /// Continuous pixel coordinates of a unit ray (camera frame). `x` is
    /// wrapped into `[0, W)`; longitude at the poles is 0.
    pub fn ray_to_pixel(&self, d: &Vec3) -> Result<(f64, f64)> {
        let n = d.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Domain("ray_to_pixel of a zero vector".into()));
        }
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("ray has norm {n}, expected 1")));
        }
        Ok(self.unit_to_pixel(d))
    }

    #[inline]
    fn unit_to_pixel(&self, d: &Vec3) -> (f64, f64) {
        let (w, h) = (self.width as f64, self.height as f64);
        let theta = d.x.atan2(d.z);
        let phi = d.y.clamp(-1.0, 1.0).asin();
        let mut x = w * (theta + PI) / TAU;
        if x >= w {
            x -= w;
        }
        if x < 0.0 {
            x += w;
        }
        // x may still round up to w
        if x >= w {
            x = 0.0;
        }
        let y = h * (PI / 2.0 - phi) / PI;
        (x, y)
    }

    /// World point seen at pixel `(x, y)` with Euclidean ray length `depth`.
    pub fn backproject(&self, x: f64, y: f64, depth: f64, pose: &Pose) -> Result<Vec3> {
        if depth.is_nan() || depth <= 0.0 {
            return Err(Error::Domain(format!("depth {depth} must be positive")));
        }
        let ray = self.pixel_to_ray(x, y)?;
        Ok(pose.to_world(&(ray * depth)))
    }

    /// Inverse of [`backproject`](Self::backproject): `(x, y, depth)`.
    pub fn project(&self, point: &Vec3, pose: &Pose) -> Result<(f64, f64, f64)> {
        let cam = pose.to_camera(point);
        let depth = cam.norm();
        if depth == 0.0 {
            return Err(Error::DegenerateProjection);
        }
        let (x, y) = self.unit_to_pixel(&(cam / depth));
        Ok((x, y, depth))
    }
}
