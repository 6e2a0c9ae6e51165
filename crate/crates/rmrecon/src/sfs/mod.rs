//! Per-pixel surface-normal estimation from an image and its reflectance
//! map: observation likelihoods over a coarse candidate set, vMF mixture
//! summarization, mean-direction decoding, and continuous refinement in
//! the (p, q) hemisphere parameterization.

mod vmf;

pub use vmf::{
    fit_vmf, kappa_from_resultant, vmf_log_norm, vmf_log_pdf, vmf_nll, vmf_pdf, VmfComponent,
    VmfMixture, VmfMixtureMap, KAPPA_CAP,
};

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{ImageF, LOG_FLOOR};
use crate::rmap::{fisheye_project, fisheye_unproject, ReflectanceMap};

/// Coarse surface-normal candidates: fisheye pixel centers of a K x K grid
/// restricted to the valid disc.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub normals: Vec<Vector3<f64>>,
}

impl CandidateSet {
    pub fn new(k: usize) -> Self {
        let mut normals = Vec::new();
        for j in 0..k {
            for i in 0..k {
                let u = (i as f64 + 0.5) / k as f64;
                let v = (j as f64 + 0.5) / k as f64;
                if (u - 0.5).powi(2) + (v - 0.5).powi(2) < 0.25 {
                    normals.push(fisheye_unproject(u, v).expect("disc interior"));
                }
            }
        }
        Self { normals }
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }
}

impl Default for CandidateSet {
    fn default() -> Self {
        Self::new(8)
    }
}

/// Per-pixel probability vectors over the candidate set. Rows of
/// uncovered pixels are empty.
#[derive(Debug, Clone)]
pub struct LikelihoodMap {
    pub width: usize,
    pub height: usize,
    pub n_candidates: usize,
    /// `width * height * n_candidates`, zero outside coverage.
    pub probabilities: Vec<f64>,
    pub coverage: Vec<bool>,
}

impl LikelihoodMap {
    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.probabilities[pixel * self.n_candidates..(pixel + 1) * self.n_candidates]
    }
}

/// Log-radiance feature of one pixel.
#[inline]
fn log_feature(data: &[f64]) -> [f64; 3] {
    [
        data[0].max(LOG_FLOOR).ln(),
        data[1].max(LOG_FLOOR).ln(),
        data[2].max(LOG_FLOOR).ln(),
    ]
}

/// Observation likelihood: softmax over candidates of the negative
/// L2 distance between the pixel's log radiance and each candidate's
/// reflectance-map log radiance, at inverse temperature `beta`. Computed
/// with max subtraction; every covered row sums to 1.
pub fn observation_likelihood(
    image: &ImageF,
    rm: &ReflectanceMap,
    candidates: &CandidateSet,
    coverage: &[bool],
    beta: f64,
) -> Result<LikelihoodMap> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter("beta must be positive".into()));
    }
    assert_eq!(image.channels, 3);
    assert_eq!(coverage.len(), image.width * image.height);
    let n_c = candidates.len();
    if n_c == 0 {
        return Err(Error::EmptyObservations);
    }

    // candidate features through the same lookup path as rendering
    let cand_feat: Vec<[f64; 3]> = candidates
        .normals
        .iter()
        .map(|n| {
            let (u, v) = fisheye_project(n).expect("candidates are interior");
            log_feature(&rm.sample(u, v))
        })
        .collect();

    let n_px = image.width * image.height;
    let probabilities: Vec<f64> = (0..n_px)
        .into_par_iter()
        .flat_map_iter(|p| {
            let mut row = vec![0.0f64; n_c];
            if coverage[p] {
                let feat = log_feature(&image.data[p * 3..p * 3 + 3]);
                let mut a_max = f64::NEG_INFINITY;
                for (c, cf) in cand_feat.iter().enumerate() {
                    let d = ((feat[0] - cf[0]).powi(2)
                        + (feat[1] - cf[1]).powi(2)
                        + (feat[2] - cf[2]).powi(2))
                    .sqrt();
                    row[c] = -beta * d;
                    if row[c] > a_max {
                        a_max = row[c];
                    }
                }
                let mut sum = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - a_max).exp();
                    sum += *r;
                }
                for r in row.iter_mut() {
                    *r /= sum;
                }
            }
            row.into_iter()
        })
        .collect();

    Ok(LikelihoodMap {
        width: image.width,
        height: image.height,
        n_candidates: n_c,
        probabilities,
        coverage: coverage.to_vec(),
    })
}

/// Fits a per-pixel vMF mixture to every covered likelihood row.
pub fn fit_vmf_mixture(
    likelihood: &LikelihoodMap,
    candidates: &CandidateSet,
    k_v: usize,
) -> Result<VmfMixtureMap> {
    let n_px = likelihood.width * likelihood.height;
    let mixtures: Vec<Option<VmfMixture>> = (0..n_px)
        .into_par_iter()
        .map(|p| {
            if !likelihood.coverage[p] {
                return None;
            }
            fit_vmf(&candidates.normals, likelihood.row(p), k_v).ok()
        })
        .collect();
    Ok(VmfMixtureMap {
        width: likelihood.width,
        height: likelihood.height,
        mixtures,
    })
}

/// Hemisphere parameterization `n = (p, q, 1) / sqrt(p^2 + q^2 + 1)`;
/// the output always satisfies `|n| = 1` and `n_z > 0`.
#[inline]
pub fn pq_to_normal(p: f64, q: f64) -> Vector3<f64> {
    let l = (p * p + q * q + 1.0).sqrt();
    Vector3::new(p / l, q / l, 1.0 / l)
}

/// Inverse of [`pq_to_normal`]; defined only on the open upper hemisphere.
#[inline]
pub fn normal_to_pq(n: &Vector3<f64>) -> Result<(f64, f64)> {
    if !(n.z > 0.0) {
        return Err(Error::OutOfHemisphere);
    }
    Ok((n.x / n.z, n.y / n.z))
}

/// Per-pixel (p, q) raster.
#[derive(Debug, Clone)]
pub struct PqMap {
    pub width: usize,
    pub height: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl PqMap {
    pub fn from_normals(normals: &[Vector3<f64>], width: usize, height: usize) -> Result<Self> {
        let mut p = Vec::with_capacity(normals.len());
        let mut q = Vec::with_capacity(normals.len());
        for n in normals {
            let (pi, qi) = normal_to_pq(n)?;
            p.push(pi);
            q.push(qi);
        }
        Ok(Self {
            width,
            height,
            p,
            q,
        })
    }

    pub fn normal(&self, pixel: usize) -> Vector3<f64> {
        pq_to_normal(self.p[pixel], self.q[pixel])
    }
}

/// Photometric objective of [`refine_normals`]: L1 log-radiance gap
/// between the pixel and the reflectance map at a normal.
fn photometric_objective(feat: &[f64; 3], rm: &ReflectanceMap, n: &Vector3<f64>) -> f64 {
    match fisheye_project(n) {
        Ok((u, v)) => {
            let r = log_feature(&rm.sample(u, v));
            (feat[0] - r[0]).abs() + (feat[1] - r[1]).abs() + (feat[2] - r[2]).abs()
        }
        Err(_) => f64::INFINITY,
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Golden-section line minimization on [lo, hi]; returns the best probe.
fn golden_section(lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64, tol: f64) -> (f64, f64) {
    let mut a = lo;
    let mut b = hi;
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a).abs() > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Outcome of [`refine_normals`].
#[derive(Debug, Clone)]
pub struct RefinedNormals {
    pub normals: Vec<Vector3<f64>>,
    /// Final per-pixel photometric objective (log-L1 gap).
    pub objective: Vec<f64>,
}

/// Refines coarse per-pixel normals by guarded coordinate descent in
/// (p, q): per iteration, a golden-section search along each axis with a
/// shrinking bracket, accepting a move only when the photometric
/// objective strictly improves. The objective never increases; pixels
/// that cannot improve keep their coarse normal.
pub fn refine_normals(
    coarse: &[Vector3<f64>],
    image: &ImageF,
    rm: &ReflectanceMap,
    coverage: &[bool],
    iterations: usize,
) -> RefinedNormals {
    assert_eq!(coarse.len(), coverage.len());
    assert_eq!(coarse.len(), image.width * image.height);

    let results: Vec<(Vector3<f64>, f64)> = (0..coarse.len())
        .into_par_iter()
        .map(|px| {
            if !coverage[px] || !(coarse[px].z > 0.0) {
                return (coarse[px], f64::INFINITY);
            }
            let feat = log_feature(&image.data[px * 3..px * 3 + 3]);
            let (mut p, mut q) = (coarse[px].x / coarse[px].z, coarse[px].y / coarse[px].z);
            let mut best = photometric_objective(&feat, rm, &pq_to_normal(p, q));
            let mut bracket = 0.35;
            for _ in 0..iterations {
                for axis in 0..2 {
                    let eval = |t: f64| {
                        let (tp, tq) = if axis == 0 { (t, q) } else { (p, t) };
                        photometric_objective(&feat, rm, &pq_to_normal(tp, tq))
                    };
                    let center = if axis == 0 { p } else { q };
                    let (t_best, f_best) =
                        golden_section(center - bracket, center + bracket, eval, 1e-4);
                    if f_best < best {
                        best = f_best;
                        if axis == 0 {
                            p = t_best;
                        } else {
                            q = t_best;
                        }
                    }
                }
                bracket *= 0.5;
            }
            (pq_to_normal(p, q), best)
        })
        .collect();

    let mut normals = Vec::with_capacity(results.len());
    let mut objective = Vec::with_capacity(results.len());
    for (n, o) in results {
        normals.push(n);
        objective.push(o);
    }
    RefinedNormals { normals, objective }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn candidate_set_size_and_validity() {
        let cs = CandidateSet::new(8);
        assert!(cs.len() <= 64, "{} candidates", cs.len());
        assert!(cs.len() >= 48);
        for n in &cs.normals {
            assert!((n.norm() - 1.0).abs() < 1e-12);
            assert!(n.z > 0.0);
        }
    }

    #[test]
    fn pq_examples_and_round_trip() {
        assert!((pq_to_normal(0.0, 0.0) - Vector3::z()).norm() < 1e-15);
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        let n = pq_to_normal(1.0, 0.0);
        assert!((n - Vector3::new(inv_sqrt2, 0.0, inv_sqrt2)).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.01..1.0),
            )
            .normalize();
            if v.z <= 0.0 {
                continue;
            }
            let (p, q) = normal_to_pq(&v).unwrap();
            let back = pq_to_normal(p, q);
            assert!((back - v).norm() < 1e-14, "round trip {:?}", (back - v).norm());
            assert!(back.z > 0.0);
        }
        assert!(normal_to_pq(&Vector3::new(0.0, 0.0, -1.0)).is_err());
    }

    fn flat_rm_with(values: impl Fn(usize, usize) -> [f64; 3]) -> ReflectanceMap {
        let m = 32;
        let mut data = vec![0.0; m * m * 3];
        for j in 0..m {
            for i in 0..m {
                let v = values(i, j);
                data[(j * m + i) * 3..(j * m + i) * 3 + 3].copy_from_slice(&v);
            }
        }
        let mut rm = ReflectanceMap::new(m, data, Matrix3::identity()).unwrap();
        rm.pad_invalid_from_nearest();
        rm
    }

    #[test]
    fn likelihood_rows_sum_to_one_and_symmetry() {
        let rm = flat_rm_with(|i, j| [i as f64 * 0.1 + 0.2, j as f64 * 0.1 + 0.2, 1.0]);
        let cs = CandidateSet::new(4);
        let image = ImageF::constant(3, 1, 3, 0.7);
        let coverage = vec![true, true, false];
        let lm = observation_likelihood(&image, &rm, &cs, &coverage, 20.0).unwrap();
        for p in 0..2 {
            let sum: f64 = lm.row(p).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row {p} sums to {sum}");
        }
        assert!(lm.row(2).iter().all(|&v| v == 0.0));

        // two candidates at equal distance share probability equally
        let rm2 = flat_rm_with(|_, _| [1.0, 1.0, 1.0]);
        let lm2 = observation_likelihood(&image, &rm2, &cs, &coverage, 20.0).unwrap();
        let row = lm2.row(0);
        for c in 1..row.len() {
            assert_relative_eq!(row[c], row[0], max_relative = 1e-9);
        }
    }

    #[test]
    fn likelihood_invariant_to_distance_offset() {
        // adding a constant to all distances cancels in the softmax; an
        // overall radiance scale on the image shifts every log distance
        // similarly only when the RM is constant, so use that case
        let rm = flat_rm_with(|_, _| [1.0, 1.0, 1.0]);
        let cs = CandidateSet::new(6);
        let image = ImageF::constant(1, 1, 3, 0.5);
        let scaled = ImageF::constant(1, 1, 3, 0.5 * 2.0);
        let a = observation_likelihood(&image, &rm, &cs, &[true], 20.0).unwrap();
        let b = observation_likelihood(&scaled, &rm, &cs, &[true], 20.0).unwrap();
        for (x, y) in a.row(0).iter().zip(b.row(0)) {
            assert_relative_eq!(*x, *y, max_relative = 1e-9);
        }
    }

    /// Injective synthetic RM: three color-separated sharp lobes give every
    /// raster pixel a distinct radiance triple with strong gradients.
    fn injective_rm() -> ReflectanceMap {
        crate::rmap::rm_from_scene(
            &crate::rmap::EnvMap::from_lobes(
                &[
                    crate::rmap::Lobe {
                        direction: Vector3::new(0.5, 0.1, 0.86).normalize(),
                        intensity: [8.0, 0.5, 0.2],
                        sharpness: 7.0,
                    },
                    crate::rmap::Lobe {
                        direction: Vector3::new(-0.4, 0.5, 0.77).normalize(),
                        intensity: [0.3, 7.0, 0.8],
                        sharpness: 9.0,
                    },
                    crate::rmap::Lobe {
                        direction: Vector3::new(0.0, -0.6, 0.8).normalize(),
                        intensity: [0.5, 0.4, 8.0],
                        sharpness: 6.0,
                    },
                ],
                128,
                64,
            )
            .unwrap(),
            &crate::rmap::Brdf::Lambertian {
                albedo: [0.85, 0.8, 0.9],
            },
            &Vector3::z(),
            Matrix3::identity(),
            64,
            4096,
        )
        .unwrap()
    }

    fn sphere_pixels(size: usize) -> (Vec<Vector3<f64>>, Vec<bool>, Vec<bool>) {
        let mut normals = vec![Vector3::z(); size * size];
        let mut coverage = vec![false; size * size];
        let mut interior = vec![false; size * size];
        let c = (size as f64 - 1.0) / 2.0;
        let rad = size as f64 * 0.45;
        for y in 0..size {
            for x in 0..size {
                let dx = (x as f64 - c) / rad;
                let dy = (y as f64 - c) / rad;
                let d2 = dx * dx + dy * dy;
                if d2 < 0.995 {
                    normals[y * size + x] = Vector3::new(dx, dy, (1.0 - d2).sqrt());
                    coverage[y * size + x] = true;
                    interior[y * size + x] = d2 < 0.81;
                }
            }
        }
        (normals, coverage, interior)
    }

    /// Injective RM whose channels are affine in the normal components, so
    /// radiance distance between candidates is isotropic in normal space.
    fn affine_rm() -> ReflectanceMap {
        let m = 64;
        let mut data = vec![0.0; m * m * 3];
        for j in 0..m {
            for i in 0..m {
                let u = (i as f64 + 0.5) / m as f64;
                let v = (j as f64 + 0.5) / m as f64;
                if (u - 0.5).powi(2) + (v - 0.5).powi(2) >= 0.25 {
                    continue;
                }
                let n = fisheye_unproject(u, v).unwrap();
                let k = (j * m + i) * 3;
                data[k] = 8.0 + 2.0 * n.x;
                data[k + 1] = 8.0 + 2.0 * n.y;
                data[k + 2] = 8.0 + 2.0 * n.z;
            }
        }
        let mut rm = ReflectanceMap::new(m, data, Matrix3::identity()).unwrap();
        rm.pad_invalid_from_nearest();
        rm
    }

    #[test]
    fn likelihood_argmax_tracks_true_normal_on_sphere() {
        let rm = affine_rm();
        let (normals, coverage, interior) = sphere_pixels(64);
        let (image, _) = crate::rmap::render_from_rm(&rm, &normals, &coverage, 64, 64);
        let cs = CandidateSet::new(8);
        let lm = observation_likelihood(&image, &rm, &cs, &coverage, 20.0).unwrap();
        let mut hits = 0usize;
        let mut total = 0usize;
        for p in 0..normals.len() {
            if !interior[p] {
                continue;
            }
            total += 1;
            let row = lm.row(p);
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            let nearest = (0..cs.len())
                .max_by(|&a, &b| {
                    cs.normals[a]
                        .dot(&normals[p])
                        .partial_cmp(&cs.normals[b].dot(&normals[p]))
                        .unwrap()
                })
                .unwrap();
            if argmax == nearest {
                hits += 1;
            }
        }
        let rate = hits as f64 / total as f64;
        assert!(rate >= 0.95, "argmax matched nearest candidate on {rate:.3}");
    }

    #[test]
    fn refine_fixed_point_and_monotonicity() {
        let rm = injective_rm();
        let (normals, coverage, _) = sphere_pixels(32);
        let (image, _) = crate::rmap::render_from_rm(&rm, &normals, &coverage, 32, 32);

        // already-optimal coarse normals stay put
        let refined = refine_normals(&normals, &image, &rm, &coverage, 2);
        for p in 0..normals.len() {
            if coverage[p] {
                let before = photometric_objective(
                    &log_feature(&image.data[p * 3..p * 3 + 3]),
                    &rm,
                    &normals[p],
                );
                assert!(
                    refined.objective[p] <= before + 1e-12,
                    "objective increased at {p}"
                );
            }
        }
    }

    #[test]
    fn refine_beats_candidate_spacing_on_sphere() {
        let rm = injective_rm();
        let (true_normals, coverage, interior) = sphere_pixels(64);
        let (image, _) = crate::rmap::render_from_rm(&rm, &true_normals, &coverage, 64, 64);

        // coarse estimate: likelihood argmax over the K=8 candidate grid
        let cs = CandidateSet::new(8);
        let lm = observation_likelihood(&image, &rm, &cs, &coverage, 20.0).unwrap();
        let coarse: Vec<Vector3<f64>> = (0..true_normals.len())
            .map(|p| {
                if !coverage[p] {
                    return Vector3::z();
                }
                let row = lm.row(p);
                let argmax = (0..row.len())
                    .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                    .unwrap();
                cs.normals[argmax]
            })
            .collect();

        let refined = refine_normals(&coarse, &image, &rm, &coverage, 3);
        let mut errors: Vec<f64> = Vec::new();
        for p in 0..true_normals.len() {
            if interior[p] {
                let dot = refined.normals[p].dot(&true_normals[p]).clamp(-1.0, 1.0);
                errors.push(dot.acos().to_degrees());
            }
        }
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = errors[errors.len() / 2];
        assert!(
            median < 13.0,
            "median refined error {median} deg vs candidate spacing"
        );
    }
}
