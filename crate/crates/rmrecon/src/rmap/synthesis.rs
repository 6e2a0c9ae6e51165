//! Reflectance-map synthesis from explicit illumination and BRDF models:
//! the quadrature oracle behind ground-truth generation.
//!
//! `R(n) = integral L_i(w_i) f(w_i, w_o, n) max(w_i . n, 0) dw_i`
//! is evaluated with deterministic low-discrepancy cosine-hemisphere
//! sampling around each query normal, which folds the cosine factor into
//! the sample density: constant illumination with a Lambertian BRDF is
//! integrated exactly at any sample count.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::ReflectanceMap;
use crate::error::{Error, Result};
use crate::imaging::ImageF;

/// Tagged surface reflectance model used by the synthesis oracle.
#[derive(Debug, Clone)]
pub enum Brdf {
    Lambertian {
        albedo: [f64; 3],
    },
    BlinnPhong {
        diffuse: [f64; 3],
        specular: f64,
        exponent: f64,
    },
}

impl Brdf {
    pub fn validate(&self) -> Result<()> {
        let check_rho = |rho: &[f64; 3]| -> Result<()> {
            for &r in rho {
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::InvalidParameter(format!(
                        "albedo component {r} outside [0, 1]"
                    )));
                }
            }
            Ok(())
        };
        match self {
            Brdf::Lambertian { albedo } => check_rho(albedo),
            Brdf::BlinnPhong {
                diffuse,
                specular,
                exponent,
            } => {
                check_rho(diffuse)?;
                if *specular < 0.0 || *exponent < 0.0 {
                    return Err(Error::InvalidParameter(
                        "specular parameters must be nonnegative".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// BRDF value per channel; all directions unit and in one common frame,
    /// `wi` pointing away from the surface toward the light, `wo` toward
    /// the viewer.
    pub fn eval(&self, wi: &Vector3<f64>, wo: &Vector3<f64>, n: &Vector3<f64>) -> [f64; 3] {
        match self {
            Brdf::Lambertian { albedo } => {
                let k = std::f64::consts::FRAC_1_PI;
                [albedo[0] * k, albedo[1] * k, albedo[2] * k]
            }
            Brdf::BlinnPhong {
                diffuse,
                specular,
                exponent,
            } => {
                let k = std::f64::consts::FRAC_1_PI;
                let h = (wi + wo).try_normalize(1e-12);
                let spec = match h {
                    Some(h) => {
                        let nh = n.dot(&h).max(0.0);
                        specular * (exponent + 2.0) / std::f64::consts::TAU * nh.powf(*exponent)
                    }
                    None => 0.0,
                };
                [
                    diffuse[0] * k + spec,
                    diffuse[1] * k + spec,
                    diffuse[2] * k + spec,
                ]
            }
        }
    }
}

/// One directional illumination lobe: `L(w) = intensity * exp(sharpness * (w . direction - 1))`.
#[derive(Debug, Clone)]
pub struct Lobe {
    pub direction: Vector3<f64>,
    pub intensity: [f64; 3],
    pub sharpness: f64,
}

/// Latitude-longitude HDR raster of incident radiance, world frame.
/// Row zero is the +z pole; u wraps in azimuth.
#[derive(Debug, Clone)]
pub struct EnvMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl EnvMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "env map length {} != {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidImage(
                "env map radiance must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(value: [f64; 3]) -> Self {
        let (w, h) = (8, 4);
        let mut data = Vec::with_capacity(w * h * 3);
        for _ in 0..w * h {
            data.extend_from_slice(&value);
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }

    /// Bakes analytic lobes into a raster.
    pub fn from_lobes(lobes: &[Lobe], width: usize, height: usize) -> Result<Self> {
        let mut data = vec![0.0; width * height * 3];
        for j in 0..height {
            let theta = (j as f64 + 0.5) / height as f64 * std::f64::consts::PI;
            for i in 0..width {
                let phi = (i as f64 + 0.5) / width as f64 * std::f64::consts::TAU
                    - std::f64::consts::PI;
                let dir = Vector3::new(
                    theta.sin() * phi.cos(),
                    theta.sin() * phi.sin(),
                    theta.cos(),
                );
                let k = (j * width + i) * 3;
                for lobe in lobes {
                    let fall = (lobe.sharpness * (dir.dot(&lobe.direction.normalize()) - 1.0)).exp();
                    for c in 0..3 {
                        data[k + c] += lobe.intensity[c] * fall;
                    }
                }
            }
        }
        Self::new(width, height, data)
    }

    pub fn from_image(img: &ImageF) -> Result<Self> {
        img.validate_radiance()?;
        if img.channels != 3 {
            return Err(Error::InvalidImage("env map must be RGB".into()));
        }
        Self::new(img.width, img.height, img.data.clone())
    }

    /// Bilinear radiance lookup for a world direction (wrapping in azimuth,
    /// clamped at the poles).
    pub fn sample(&self, dir: &Vector3<f64>) -> [f64; 3] {
        let d = dir.normalize();
        let theta = d.z.clamp(-1.0, 1.0).acos();
        let phi = d.y.atan2(d.x);
        let u = (phi + std::f64::consts::PI) / std::f64::consts::TAU;
        let v = theta / std::f64::consts::PI;
        let px = u * self.width as f64 - 0.5;
        let py = v * self.height as f64 - 0.5;
        let x0 = px.floor();
        let y0 = py.floor();
        let fx = px - x0;
        let fy = py - y0;
        let wrap = |x: i64| -> usize { x.rem_euclid(self.width as i64) as usize };
        let clampy = |y: i64| -> usize { y.clamp(0, self.height as i64 - 1) as usize };
        let (x0i, x1i) = (wrap(x0 as i64), wrap(x0 as i64 + 1));
        let (y0i, y1i) = (clampy(y0 as i64), clampy(y0 as i64 + 1));
        let at = |x: usize, y: usize, c: usize| self.data[(y * self.width + x) * 3 + c];
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = at(x0i, y0i, c) * (1.0 - fx) + at(x1i, y0i, c) * fx;
            let bot = at(x0i, y1i, c) * (1.0 - fx) + at(x1i, y1i, c) * fx;
            out[c] = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    pub fn to_image(&self) -> ImageF {
        ImageF {
            width: self.width,
            height: self.height,
            channels: 3,
            data: self.data.clone(),
        }
    }
}

/// Radical-inverse (van der Corput) sequence in the given base.
#[inline]
pub fn radical_inverse(base: u64, mut i: u64) -> f64 {
    let inv_base = 1.0 / base as f64;
    let mut inv = inv_base;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv *= inv_base;
    }
    out
}

/// Deterministic orthonormal tangent basis around a unit vector.
#[inline]
pub fn orthonormal_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let sign = 1.0f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    (
        Vector3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x),
        Vector3::new(b, sign + n.y * n.y * a, -n.y),
    )
}

/// Synthesizes the reflectance map of a view by quadrature over incident
/// directions: cosine-hemisphere samples around each query normal from the
/// base-(2, 3) low-discrepancy sequence, identical for every pixel and
/// every call.
pub fn rm_from_scene(
    env: &EnvMap,
    brdf: &Brdf,
    omega_o_world: &Vector3<f64>,
    view_rotation: Matrix3<f64>,
    resolution: usize,
    n_samples: usize,
) -> Result<ReflectanceMap> {
    brdf.validate()?;
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    let m = resolution;
    let view_to_world = view_rotation.transpose();

    // shared sample set in the local cosine-hemisphere parameterization
    let local: Vec<(f64, f64, f64)> = (0..n_samples)
        .map(|i| {
            let a = radical_inverse(2, i as u64);
            let b = radical_inverse(3, i as u64);
            let r = a.sqrt();
            let phi = std::f64::consts::TAU * b;
            (r * phi.cos(), r * phi.sin(), (1.0 - a).sqrt())
        })
        .collect();

    let data: Vec<[f64; 3]> = (0..m * m)
        .into_par_iter()
        .map(|idx| {
            let i = idx % m;
            let j = idx / m;
            let u = (i as f64 + 0.5) / m as f64;
            let v = (j as f64 + 0.5) / m as f64;
            let du = u - 0.5;
            let dv = v - 0.5;
            if du * du + dv * dv >= 0.25 {
                return [0.0; 3];
            }
            let n_view = super::fisheye_unproject(u, v).expect("disc interior");
            let n_world = view_to_world * n_view;
            let (t, b) = orthonormal_basis(&n_world);
            let mut acc = [0.0f64; 3];
            for &(lx, ly, lz) in &local {
                let wi = lx * t + ly * b + lz * n_world;
                let li = env.sample(&wi);
                let f = brdf.eval(&wi, omega_o_world, &n_world);
                for c in 0..3 {
                    acc[c] += li[c] * f[c];
                }
            }
            // pdf = cos/pi, and the cosine factor cancels against it
            let scale = std::f64::consts::PI / n_samples as f64;
            [acc[0] * scale, acc[1] * scale, acc[2] * scale]
        })
        .collect();

    let mut flat = Vec::with_capacity(m * m * 3);
    for px in data {
        flat.extend_from_slice(&px);
    }
    let mut rm = ReflectanceMap::new(m, flat, view_rotation)?;
    rm.pad_invalid_from_nearest();
    Ok(rm)
}
