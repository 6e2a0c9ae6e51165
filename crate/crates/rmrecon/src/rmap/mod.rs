//! Camera-view reflectance maps: the angular fisheye raster, the
//! differentiable weighted mapping from image observations onto the
//! normal hemisphere, RM-based rendering, confidence alternation, and the
//! RM losses.
//!
//! A reflectance map stores, per view, the radiance a surface normal
//! reflects toward the camera. Observations (pixel radiance + normal)
//! scatter onto the raster through the kernel
//! `w'_m = w_m * max(n_m . omega_o, 0) * exp(s * n_m . n')`,
//! and each raster pixel is the convex combination
//! `R'(n') = sum w'_m I_m / sum w'_m`.

mod synthesis;

pub use synthesis::{rm_from_scene, Brdf, EnvMap, Lobe};

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ImageF, LOG_FLOOR};

/// Serialization tag for the raster convention.
pub const FISHEYE_CONVENTION: &str = "angular-fisheye-v1";

/// Maps a visible-hemisphere unit normal to fisheye raster coordinates in
/// [0, 1]^2: radius is proportional to the angle from the view axis, so
/// the pole lands at the center and the equator on the inscribed circle.
pub fn fisheye_project(n: &Vector3<f64>) -> Result<(f64, f64)> {
    if !(n.z > 0.0) {
        return Err(Error::OutOfHemisphere);
    }
    let rho = (n.x * n.x + n.y * n.y).sqrt();
    if rho == 0.0 {
        return Ok((0.5, 0.5));
    }
    let theta = rho.atan2(n.z);
    let r = theta / std::f64::consts::FRAC_PI_2;
    Ok((0.5 + 0.5 * r * n.x / rho, 0.5 + 0.5 * r * n.y / rho))
}

/// Inverse of [`fisheye_project`] on the open unit disc.
pub fn fisheye_unproject(u: f64, v: f64) -> Result<Vector3<f64>> {
    let dx = 2.0 * u - 1.0;
    let dy = 2.0 * v - 1.0;
    let r = (dx * dx + dy * dy).sqrt();
    if r >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "({u}, {v}) outside the valid fisheye disc"
        )));
    }
    if r == 0.0 {
        return Ok(Vector3::new(0.0, 0.0, 1.0));
    }
    let theta = r * std::f64::consts::FRAC_PI_2;
    let s = theta.sin();
    Ok(Vector3::new(s * dx / r, s * dy / r, theta.cos()))
}

/// Per-view reflectance map: an M x M RGB raster over the visible normal
/// hemisphere under the angular fisheye projection. Values outside the
/// inscribed disc are padding for interpolation; the valid mask is the
/// open disc.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectanceMap {
    pub resolution: usize,
    /// RGB data, row-major, `resolution^2 * 3` entries.
    pub data: Vec<f64>,
    /// World-to-view rotation the normals are expressed in.
    pub view_rotation: Matrix3<f64>,
}

impl ReflectanceMap {
    pub fn new(resolution: usize, data: Vec<f64>, view_rotation: Matrix3<f64>) -> Result<Self> {
        if data.len() != resolution * resolution * 3 {
            return Err(Error::InvalidParameter(format!(
                "rm data length {} != {}^2 * 3",
                data.len(),
                resolution
            )));
        }
        Ok(Self {
            resolution,
            data,
            view_rotation,
        })
    }

    pub fn constant(resolution: usize, value: [f64; 3], view_rotation: Matrix3<f64>) -> Self {
        let mut data = Vec::with_capacity(resolution * resolution * 3);
        for _ in 0..resolution * resolution {
            data.extend_from_slice(&value);
        }
        Self {
            resolution,
            data,
            view_rotation,
        }
    }

    /// Raster coordinates of the pixel center.
    #[inline]
    pub fn pixel_uv(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 + 0.5) / self.resolution as f64,
            (j as f64 + 0.5) / self.resolution as f64,
        )
    }

    /// True when the pixel center lies strictly inside the fisheye disc.
    #[inline]
    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        let (u, v) = self.pixel_uv(i, j);
        let du = u - 0.5;
        let dv = v - 0.5;
        du * du + dv * dv < 0.25
    }

    /// Unit normal at a valid pixel center.
    pub fn pixel_normal(&self, i: usize, j: usize) -> Result<Vector3<f64>> {
        let (u, v) = self.pixel_uv(i, j);
        fisheye_unproject(u, v)
    }

    #[inline]
    pub fn pixel(&self, i: usize, j: usize) -> [f64; 3] {
        let k = (j * self.resolution + i) * 3;
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    /// Indices of all valid pixels in row-major order.
    pub fn valid_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.resolution {
            for i in 0..self.resolution {
                if self.is_valid(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Bilinear sample at raster coordinates (u, v) in [0, 1]^2, clamped
    /// at the raster edge.
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let m = self.resolution;
        let px = u * m as f64 - 0.5;
        let py = v * m as f64 - 0.5;
        let x0 = px.floor();
        let y0 = py.floor();
        let fx = px - x0;
        let fy = py - y0;
        let clamp = |t: f64| -> usize { (t.max(0.0) as usize).min(m - 1) };
        let (x0i, x1i) = (clamp(x0), clamp(x0 + 1.0));
        let (y0i, y1i) = (clamp(y0), clamp(y0 + 1.0));
        let p00 = self.pixel(x0i, y0i);
        let p10 = self.pixel(x1i, y0i);
        let p01 = self.pixel(x0i, y1i);
        let p11 = self.pixel(x1i, y1i);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    /// Fills pixels outside the valid disc by repeatedly copying the mean
    /// of already-filled 8-neighbors, so bilinear lookups near the rim stay
    /// close to rim values.
    pub fn pad_invalid_from_nearest(&mut self) {
        let m = self.resolution;
        let mut filled: Vec<bool> = (0..m * m)
            .map(|idx| self.is_valid(idx % m, idx / m))
            .collect();
        if filled.iter().all(|&f| f) || !filled.iter().any(|&f| f) {
            return;
        }
        loop {
            let mut next = Vec::new();
            for j in 0..m {
                for i in 0..m {
                    if filled[j * m + i] {
                        continue;
                    }
                    let mut acc = [0.0; 3];
                    let mut count = 0usize;
                    for dj in -1i64..=1 {
                        for di in -1i64..=1 {
                            let (ni, nj) = (i as i64 + di, j as i64 + dj);
                            if ni < 0 || nj < 0 || ni >= m as i64 || nj >= m as i64 {
                                continue;
                            }
                            if filled[nj as usize * m + ni as usize] {
                                let p = self.pixel(ni as usize, nj as usize);
                                for c in 0..3 {
                                    acc[c] += p[c];
                                }
                                count += 1;
                            }
                        }
                    }
                    if count > 0 {
                        next.push((i, j, [acc[0] / count as f64, acc[1] / count as f64, acc[2] / count as f64]));
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            for (i, j, val) in next {
                let k = (j * m + i) * 3;
                self.data[k..k + 3].copy_from_slice(&val);
                filled[j * m + i] = true;
            }
        }
    }

    pub fn to_image(&self) -> ImageF {
        ImageF {
            width: self.resolution,
            height: self.resolution,
            channels: 3,
            data: self.data.clone(),
        }
    }

    /// Writes `<path>` as PFM plus a `<path>.json` sidecar with the raster
    /// convention and view rotation.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::imaging::save_pfm(&self.to_image(), path)?;
        let sidecar = RmSidecar {
            resolution: self.resolution,
            view_r: self.view_rotation.transpose().as_slice().to_vec(),
            convention: FISHEYE_CONVENTION.to_string(),
        };
        let sidecar_path = sidecar_path(path);
        std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?)
            .map_err(|e| Error::io(&sidecar_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = crate::imaging::load_pfm(path)?;
        if img.width != img.height || img.channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "reflectance map must be square RGB, got {}x{}x{}",
                img.width, img.height, img.channels
            )));
        }
        let sidecar_path = sidecar_path(path);
        let view_rotation = match std::fs::read_to_string(&sidecar_path) {
            Ok(text) => {
                let sc: RmSidecar = serde_json::from_str(&text)?;
                if sc.convention != FISHEYE_CONVENTION {
                    return Err(Error::InvalidParameter(format!(
                        "unknown rm convention {:?}",
                        sc.convention
                    )));
                }
                Matrix3::from_row_slice(&sc.view_r)
            }
            Err(_) => Matrix3::identity(),
        };
        ReflectanceMap::new(img.width, img.data, view_rotation)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    std::path::PathBuf::from(os)
}

#[derive(Serialize, Deserialize)]
struct RmSidecar {
    resolution: usize,
    view_r: Vec<f64>,
    convention: String,
}

/// Per-pixel observation confidence in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ConfidenceMap {
    pub fn uniform(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1.0; width * height],
        }
    }
}

/// Kernel parameters of the weighted mapping.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MapKernelParams {
    /// Primary interpolation sharpness `s`.
    pub sharpness: f64,
    /// Normalized-denominator floor below which a pixel is refilled.
    pub eps_den: f64,
    /// Wider second-pass sharpness for refilled pixels.
    pub fill_sharpness: f64,
}

impl Default for MapKernelParams {
    fn default() -> Self {
        // Kernel width trades interpolation bias against observation
        // sparsity; 400 keeps the blur below the rim-region accuracy
        // targets while a 128^2 view still lands ~10 observations per
        // kernel footprint.
        Self {
            sharpness: 400.0,
            eps_den: 1e-6,
            fill_sharpness: 8.0,
        }
    }
}

impl MapKernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sharpness > 0.0) {
            return Err(Error::InvalidParameter("sharpness must be > 0".into()));
        }
        if !(self.fill_sharpness < self.sharpness) {
            return Err(Error::InvalidParameter(
                "fill sharpness must be below the primary sharpness".into(),
            ));
        }
        if !(self.eps_den > 0.0) {
            return Err(Error::InvalidParameter("eps_den must be > 0".into()));
        }
        Ok(())
    }
}

/// Output of [`weighted_map`]: the feature raster, the per-pixel kernel
/// denominator `sum w'_m` of the primary pass, and the refill flags.
#[derive(Debug, Clone)]
pub struct WeightedMapOutput {
    pub features: Vec<f64>,
    pub weights: Vec<f64>,
    pub refilled: Vec<bool>,
}

/// Differentiable weighted mapping of per-pixel features onto the fisheye
/// raster. Every output pixel is an exact convex combination of input
/// features. Pixels whose normalized denominator falls below `eps_den`
/// are recomputed in a second pass with the wider `fill_sharpness`.
/// Confidence scale does not matter: scaling all confidences by a positive
/// constant leaves the features unchanged (the stored weights scale).
pub fn weighted_map(
    features: &[f64],
    channels: usize,
    normals: &[Vector3<f64>],
    confidence: &ConfidenceMap,
    valid: &[bool],
    omega_o: &Vector3<f64>,
    params: &MapKernelParams,
    resolution: usize,
) -> Result<WeightedMapOutput> {
    params.validate()?;
    let n_pixels = normals.len();
    assert_eq!(features.len(), n_pixels * channels);
    assert_eq!(confidence.data.len(), n_pixels);
    assert_eq!(valid.len(), n_pixels);

    // Gather contributing observations: valid, positive confidence, and
    // facing the viewer per Eq. 3's max(n . omega_o, 0) factor.
    let mut obs_n: Vec<Vector3<f64>> = Vec::new();
    let mut obs_logw: Vec<f64> = Vec::new();
    let mut obs_feat: Vec<f64> = Vec::new();
    let mut w_max = 0.0f64;
    for i in 0..n_pixels {
        if !valid[i] {
            continue;
        }
        let facing = normals[i].dot(omega_o).max(0.0);
        let w = confidence.data[i] * facing;
        if w > 0.0 {
            w_max = w_max.max(w);
        }
    }
    if w_max == 0.0 {
        return Err(Error::EmptyObservations);
    }
    for i in 0..n_pixels {
        if !valid[i] {
            continue;
        }
        let facing = normals[i].dot(omega_o).max(0.0);
        let w = confidence.data[i] * facing / w_max;
        if w > 0.0 {
            obs_n.push(normals[i]);
            obs_logw.push(w.ln());
            obs_feat.extend_from_slice(&features[i * channels..(i + 1) * channels]);
        }
    }

    let m = resolution;
    let log_eps = params.eps_den.ln();

    let blend = |query: &Vector3<f64>, sharpness: f64, out_feat: &mut [f64]| -> f64 {
        // log-sum-exp over observations with max subtraction
        let mut a_max = f64::NEG_INFINITY;
        for (n, lw) in obs_n.iter().zip(&obs_logw) {
            let a = lw + sharpness * n.dot(query);
            if a > a_max {
                a_max = a;
            }
        }
        let mut den = 0.0;
        for c in out_feat.iter_mut() {
            *c = 0.0;
        }
        for (k, (n, lw)) in obs_n.iter().zip(&obs_logw).enumerate() {
            let w = (lw + sharpness * n.dot(query) - a_max).exp();
            den += w;
            for c in 0..channels {
                out_feat[c] += w * obs_feat[k * channels + c];
            }
        }
        for c in out_feat.iter_mut() {
            *c /= den;
        }
        // normalized log denominator
        a_max + den.ln()
    };

    struct PixelOut {
        feat: Vec<f64>,
        log_den: f64,
        valid: bool,
    }

    let results: Vec<PixelOut> = (0..m * m)
        .into_par_iter()
        .map(|idx| {
            let i = idx % m;
            let j = idx / m;
            let u = (i as f64 + 0.5) / m as f64;
            let v = (j as f64 + 0.5) / m as f64;
            let du = u - 0.5;
            let dv = v - 0.5;
            if du * du + dv * dv >= 0.25 {
                return PixelOut {
                    feat: vec![0.0; channels],
                    log_den: f64::NEG_INFINITY,
                    valid: false,
                };
            }
            let query = fisheye_unproject(u, v).expect("disc interior");
            let mut feat = vec![0.0; channels];
            let log_den = blend(&query, params.sharpness, &mut feat);
            PixelOut {
                feat,
                log_den,
                valid: true,
            }
        })
        .collect();

    let mut out_features = vec![0.0f64; m * m * channels];
    let mut out_weights = vec![0.0f64; m * m];
    let mut refilled = vec![false; m * m];
    let mut fill_queue = Vec::new();
    for (idx, r) in results.iter().enumerate() {
        if !r.valid {
            continue;
        }
        out_features[idx * channels..(idx + 1) * channels].copy_from_slice(&r.feat);
        // report the primary-pass denominator at the original scale
        out_weights[idx] = (r.log_den + w_max.ln()).exp();
        if r.log_den < log_eps {
            refilled[idx] = true;
            fill_queue.push(idx);
        }
    }

    let fills: Vec<(usize, Vec<f64>)> = fill_queue
        .par_iter()
        .map(|&idx| {
            let i = idx % m;
            let j = idx / m;
            let u = (i as f64 + 0.5) / m as f64;
            let v = (j as f64 + 0.5) / m as f64;
            let query = fisheye_unproject(u, v).expect("disc interior");
            let mut feat = vec![0.0; channels];
            blend(&query, params.fill_sharpness, &mut feat);
            (idx, feat)
        })
        .collect();
    for (idx, feat) in fills {
        out_features[idx * channels..(idx + 1) * channels].copy_from_slice(&feat);
    }

    Ok(WeightedMapOutput {
        features: out_features,
        weights: out_weights,
        refilled,
    })
}

/// Renders an image from a reflectance map and a per-pixel normal map by
/// bilinear lookup at the fisheye projection of each covered normal.
/// Covered pixels whose normal leaves the visible hemisphere render as
/// zero and are counted in the return value.
pub fn render_from_rm(
    rm: &ReflectanceMap,
    normals: &[Vector3<f64>],
    coverage: &[bool],
    width: usize,
    height: usize,
) -> (ImageF, usize) {
    assert_eq!(normals.len(), width * height);
    assert_eq!(coverage.len(), width * height);
    let mut out = ImageF::zeros(width, height, 3);
    let mut below_horizon = 0usize;
    for i in 0..normals.len() {
        if !coverage[i] {
            continue;
        }
        match fisheye_project(&normals[i]) {
            Ok((u, v)) => {
                let val = rm.sample(u, v);
                out.data[i * 3..i * 3 + 3].copy_from_slice(&val);
            }
            Err(_) => below_horizon += 1,
        }
    }
    (out, below_horizon)
}

/// Photometric observation confidence:
/// `w = exp(-k * sum_c |log I_hat - log I|)`, always in (0, 1].
pub fn confidence_update(input: &ImageF, rendered: &ImageF, k: f64) -> ConfidenceMap {
    assert_eq!(input.width, rendered.width);
    assert_eq!(input.height, rendered.height);
    assert_eq!(input.channels, rendered.channels);
    let n = input.width * input.height;
    let c = input.channels;
    let mut data = Vec::with_capacity(n);
    for p in 0..n {
        let mut gap = 0.0;
        for ch in 0..c {
            let a = input.data[p * c + ch].max(LOG_FLOOR).ln();
            let b = rendered.data[p * c + ch].max(LOG_FLOOR).ln();
            gap += (a - b).abs();
        }
        data.push((-k * gap).exp());
    }
    ConfidenceMap {
        width: input.width,
        height: input.height,
        data,
    }
}

/// Estimation parameters for [`estimate_rm`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmEstimateParams {
    pub resolution: usize,
    pub kernel: MapKernelParams,
    /// Confidence decay rate on the per-pixel log discrepancy.
    pub confidence_k: f64,
    /// Alternations of mapping, rendering, and confidence refinement.
    pub rounds: usize,
}

impl Default for RmEstimateParams {
    fn default() -> Self {
        Self {
            resolution: 128,
            kernel: MapKernelParams::default(),
            confidence_k: 10.0,
            rounds: 3,
        }
    }
}

/// Estimates a reflectance map from one image and its normal map by
/// alternating confidence-weighted mapping with photometric confidence
/// refinement. Round zero uses unit confidence; each round maps raw
/// radiance, renders the estimate back, and refreshes the confidences.
pub fn estimate_rm(
    image: &ImageF,
    normals: &[Vector3<f64>],
    coverage: &[bool],
    omega_o_view: &Vector3<f64>,
    view_rotation: Matrix3<f64>,
    params: &RmEstimateParams,
) -> Result<(ReflectanceMap, ConfidenceMap)> {
    assert_eq!(image.channels, 3, "rm estimation expects RGB radiance");
    let mut confidence = ConfidenceMap::uniform(image.width, image.height);
    let mut rm = None;
    for _round in 0..params.rounds.max(1) {
        let mapped = weighted_map(
            &image.data,
            3,
            normals,
            &confidence,
            coverage,
            omega_o_view,
            &params.kernel,
            params.resolution,
        )?;
        let mut estimate = ReflectanceMap::new(params.resolution, mapped.features, view_rotation)?;
        estimate.pad_invalid_from_nearest();
        let (rendered, _) = render_from_rm(&estimate, normals, coverage, image.width, image.height);
        confidence = confidence_update(image, &rendered, params.confidence_k);
        rm = Some(estimate);
    }
    Ok((rm.expect("at least one round"), confidence))
}

/// Observations for the image-reconstruction loss term.
pub struct RmObservations<'a> {
    pub image: &'a ImageF,
    pub normals: &'a [Vector3<f64>],
    pub coverage: &'a [bool],
}

/// The reflectance-map losses.
#[derive(Debug, Clone, Default)]
pub struct RmLosses {
    /// Mean absolute log difference over the valid disc.
    pub log_l1: f64,
    /// Mean absolute difference of forward-difference log gradients.
    pub log_gradient: f64,
    /// Consistency-weighted image reconstruction loss; `None` without
    /// observations.
    pub image_recon: Option<f64>,
}

/// Compares an estimated reflectance map against a reference. The log-L1
/// and log-gradient terms run over valid-disc pixels; the reconstruction
/// term weights observations by their consistency with the reference
/// (`alpha = exp(-10 * |log R(n_m) - log I_m|_1)`).
pub fn rm_losses(
    estimate: &ReflectanceMap,
    truth: &ReflectanceMap,
    observations: Option<&RmObservations<'_>>,
) -> Result<RmLosses> {
    if estimate.resolution != truth.resolution {
        return Err(Error::LayoutMismatch(format!(
            "rm resolutions {} vs {}",
            estimate.resolution, truth.resolution
        )));
    }
    let m = estimate.resolution;
    let log = |x: f64| x.max(LOG_FLOOR).ln();

    let mut l1_sum = 0.0;
    let mut l1_count = 0usize;
    let mut grad_sum = 0.0;
    let mut grad_count = 0usize;
    for j in 0..m {
        for i in 0..m {
            if !estimate.is_valid(i, j) {
                continue;
            }
            let a = estimate.pixel(i, j);
            let b = truth.pixel(i, j);
            for c in 0..3 {
                l1_sum += (log(a[c]) - log(b[c])).abs();
            }
            l1_count += 1;
            // forward differences toward +x and +y, both endpoints valid
            for (ni, nj) in [(i + 1, j), (i, j + 1)] {
                if ni >= m || nj >= m || !estimate.is_valid(ni, nj) {
                    continue;
                }
                let a2 = estimate.pixel(ni, nj);
                let b2 = truth.pixel(ni, nj);
                for c in 0..3 {
                    let ga = log(a2[c]) - log(a[c]);
                    let gb = log(b2[c]) - log(b[c]);
                    grad_sum += (ga - gb).abs();
                }
                grad_count += 1;
            }
        }
    }
    if l1_count == 0 {
        return Err(Error::NoValidPixels);
    }

    let image_recon = observations.map(|obs| {
        let mut num = 0.0;
        let mut den = 0.0;
        for p in 0..obs.normals.len() {
            if !obs.coverage[p] {
                continue;
            }
            let Ok((u, v)) = fisheye_project(&obs.normals[p]) else {
                continue;
            };
            let r_true = truth.sample(u, v);
            let r_est = estimate.sample(u, v);
            let mut gap_true = 0.0;
            let mut gap_est = 0.0;
            for c in 0..3 {
                let li = log(obs.image.data[p * 3 + c]);
                gap_true += (log(r_true[c]) - li).abs();
                gap_est += (log(r_est[c]) - li).abs();
            }
            let alpha = (-10.0 * gap_true).exp();
            num += alpha * gap_est;
            den += alpha;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    });

    Ok(RmLosses {
        log_l1: l1_sum / (3 * l1_count) as f64,
        log_gradient: grad_sum / (3 * grad_count.max(1)) as f64,
        image_recon,
    })
}

/// Mean absolute log difference over the valid disc (the RM accuracy
/// metric).
pub fn rm_log_mae(estimate: &ReflectanceMap, truth: &ReflectanceMap) -> Result<f64> {
    Ok(rm_losses(estimate, truth, None)?.log_l1)
}
