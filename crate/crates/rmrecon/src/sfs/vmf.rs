//! Von Mises-Fisher mixtures over surface normals: density evaluation,
//! weighted moment-matched fitting, mean-direction decoding, and the
//! negative log likelihood.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Concentration cap applied when a cluster collapses onto one candidate.
pub const KAPPA_CAP: f64 = 1e4;

/// Log of the 3D vMF normalization constant `C3(k) = k / (4 pi sinh k)`,
/// evaluated in log space for large `k` and by series near zero.
pub fn vmf_log_norm(kappa: f64) -> f64 {
    debug_assert!(kappa >= 0.0);
    let log_4pi = (4.0 * std::f64::consts::PI).ln();
    if kappa < 1e-6 {
        // C3 -> 1/(4 pi) as k -> 0; sinh k = k (1 + k^2/6 + ...)
        -log_4pi - (kappa * kappa / 6.0).ln_1p()
    } else if kappa > 700.0 {
        // log sinh k = k + log(1 - e^{-2k}) - log 2
        kappa.ln() - log_4pi - (kappa + (-(2.0 * kappa)).exp().ln_1p() - std::f64::consts::LN_2)
    } else {
        kappa.ln() - log_4pi - kappa.sinh().ln()
    }
}

/// vMF density at a unit direction. `kappa = 0` is the uniform density on
/// the sphere.
pub fn vmf_pdf(x: &Vector3<f64>, mu: &Vector3<f64>, kappa: f64) -> f64 {
    vmf_log_pdf(x, mu, kappa).exp()
}

pub fn vmf_log_pdf(x: &Vector3<f64>, mu: &Vector3<f64>, kappa: f64) -> f64 {
    vmf_log_norm(kappa) + kappa * mu.dot(x)
}

/// One vMF component of a per-pixel mixture.
#[derive(Debug, Clone, Copy)]
pub struct VmfComponent {
    pub weight: f64,
    pub mean: Vector3<f64>,
    pub kappa: f64,
}

/// Per-pixel mixture; `capped` flags a degenerate cluster whose
/// concentration hit [`KAPPA_CAP`].
#[derive(Debug, Clone)]
pub struct VmfMixture {
    pub components: Vec<VmfComponent>,
    pub capped: bool,
}

impl VmfMixture {
    /// Direction of the weighted mean resultant,
    /// `sum_k pi_k mu_k / |sum_k pi_k mu_k|`. Near-antipodal cancellation
    /// is an error; callers fall back to [`VmfMixture::argmax_mean`].
    pub fn mean_direction(&self) -> Result<Vector3<f64>> {
        let mut r = Vector3::zeros();
        for c in &self.components {
            r += c.weight * c.mean;
        }
        let n = r.norm();
        if n <= 1e-9 {
            return Err(Error::UndefinedDirection(n));
        }
        Ok(r / n)
    }

    /// Mean of the heaviest component (first wins on ties).
    pub fn argmax_mean(&self) -> Vector3<f64> {
        let mut best: Option<&VmfComponent> = None;
        for c in &self.components {
            if best.is_none_or(|b| c.weight > b.weight) {
                best = Some(c);
            }
        }
        best.map(|c| c.mean).unwrap_or_else(Vector3::z)
    }

    /// Mixture density at a unit direction.
    pub fn pdf(&self, x: &Vector3<f64>) -> f64 {
        self.components
            .iter()
            .map(|c| {
                if c.weight > 0.0 {
                    c.weight * vmf_pdf(x, &c.mean, c.kappa)
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// Per-pixel mixtures for a full view.
#[derive(Debug, Clone)]
pub struct VmfMixtureMap {
    pub width: usize,
    pub height: usize,
    /// One entry per pixel; `None` where no likelihood was available.
    pub mixtures: Vec<Option<VmfMixture>>,
}

/// Moment-matched concentration from the mean resultant length:
/// `kappa = r (3 - r^2) / (1 - r^2)`, capped.
pub fn kappa_from_resultant(r_bar: f64) -> f64 {
    if r_bar >= 1.0 {
        return KAPPA_CAP;
    }
    let r = r_bar.max(0.0);
    (r * (3.0 - r * r) / (1.0 - r * r)).min(KAPPA_CAP)
}

/// Fits a `k_v`-component mixture to a discrete probability vector over
/// candidate directions: deterministic greedy seeding, weighted spherical
/// k-means, then per-cluster moment matching.
pub fn fit_vmf(
    candidates: &[Vector3<f64>],
    probabilities: &[f64],
    k_v: usize,
) -> Result<VmfMixture> {
    assert_eq!(candidates.len(), probabilities.len());
    if k_v == 0 {
        return Err(Error::InvalidParameter("k_v must be >= 1".into()));
    }
    let n = candidates.len();
    if n == 0 {
        return Err(Error::EmptyObservations);
    }
    let k = k_v.min(n);

    // Greedy seeds: heaviest candidate first, then candidates scored by
    // probability times angular spread from the chosen set.
    let mut seeds: Vec<usize> = Vec::with_capacity(k);
    let first = (0..n)
        .max_by(|&a, &b| {
            probabilities[a]
                .partial_cmp(&probabilities[b])
                .unwrap()
                .then(b.cmp(&a))
        })
        .unwrap();
    seeds.push(first);
    while seeds.len() < k {
        let next = (0..n)
            .max_by(|&a, &b| {
                let score = |i: usize| {
                    let min_dot = seeds
                        .iter()
                        .map(|&s| candidates[s].dot(&candidates[i]))
                        .fold(f64::INFINITY, f64::min);
                    probabilities[i] * (1.0 - min_dot)
                };
                score(a).partial_cmp(&score(b)).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        seeds.push(next);
    }
    let mut means: Vec<Vector3<f64>> = seeds.iter().map(|&s| candidates[s]).collect();

    let mut assign = vec![0usize; n];
    for _iter in 0..32 {
        let mut changed = false;
        for i in 0..n {
            let best = (0..means.len())
                .max_by(|&a, &b| {
                    means[a]
                        .dot(&candidates[i])
                        .partial_cmp(&means[b].dot(&candidates[i]))
                        .unwrap()
                        .then(b.cmp(&a))
                })
                .unwrap();
            if best != assign[i] {
                assign[i] = best;
                changed = true;
            }
        }
        let mut resultants = vec![Vector3::zeros(); means.len()];
        for i in 0..n {
            resultants[assign[i]] += probabilities[i] * candidates[i];
        }
        for (m, r) in means.iter_mut().zip(&resultants) {
            if let Some(dir) = r.try_normalize(1e-12) {
                *m = dir;
            }
        }
        if !changed {
            break;
        }
    }

    let mut components = Vec::with_capacity(means.len());
    let mut capped = false;
    for c in 0..means.len() {
        let mut mass = 0.0;
        let mut resultant = Vector3::zeros();
        for i in 0..n {
            if assign[i] == c {
                mass += probabilities[i];
                resultant += probabilities[i] * candidates[i];
            }
        }
        if mass <= 0.0 {
            continue;
        }
        let r_bar = (resultant.norm() / mass).min(1.0);
        let kappa = kappa_from_resultant(r_bar);
        if kappa >= KAPPA_CAP {
            capped = true;
        }
        components.push(VmfComponent {
            weight: mass,
            mean: resultant.try_normalize(1e-12).unwrap_or(means[c]),
            kappa,
        });
    }
    // normalize weights onto the simplex
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= total;
    }
    Ok(VmfMixture { components, capped })
}

/// Mean negative log likelihood of target normals under per-pixel
/// mixtures, floored at 1e-300 before the log. Returns the mean and the
/// number of floored pixels.
pub fn vmf_nll(map: &VmfMixtureMap, targets: &[Vector3<f64>], valid: &[bool]) -> Result<(f64, usize)> {
    assert_eq!(targets.len(), map.mixtures.len());
    assert_eq!(valid.len(), map.mixtures.len());
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut floored = 0usize;
    for i in 0..targets.len() {
        if !valid[i] {
            continue;
        }
        let Some(mix) = &map.mixtures[i] else {
            continue;
        };
        let mut p = mix.pdf(&targets[i]);
        if p < 1e-300 {
            p = 1e-300;
            floored += 1;
        }
        sum += -p.ln();
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok((sum / count as f64, floored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm() > 1e-3 && v.norm() < 1.0 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn uniform_limit() {
        let x = Vector3::new(0.3, -0.4, 0.866_025).normalize();
        let mu = Vector3::z();
        let quarter_pi = 1.0 / (4.0 * std::f64::consts::PI);
        assert_relative_eq!(vmf_pdf(&x, &mu, 0.0), quarter_pi, max_relative = 1e-12);
        assert_relative_eq!(vmf_pdf(&x, &mu, 1e-9), quarter_pi, max_relative = 1e-6);
    }

    #[test]
    fn closed_form_at_kappa_one() {
        // C3(1) * e, evaluated independently
        let expect = 1.0 / (4.0 * std::f64::consts::PI * 1.0f64.sinh()) * std::f64::consts::E;
        let v = vmf_pdf(&Vector3::z(), &Vector3::z(), 1.0);
        assert_relative_eq!(v, expect, max_relative = 1e-12);
    }

    #[test]
    fn large_kappa_log_space() {
        // beyond sinh overflow the log-space branch must stay finite
        let v = vmf_log_pdf(&Vector3::z(), &Vector3::z(), 1e3);
        assert!(v.is_finite());
        let v2 = vmf_log_pdf(&Vector3::z(), &Vector3::z(), 800.0);
        // log C3(k) + k ~ log(k/(2 pi)) for large k
        let expect = (800.0 / std::f64::consts::TAU).ln();
        assert_relative_eq!(v2, expect, max_relative = 1e-9);
    }

    /// Sphere quadrature of the density over [0, pi] x [0, 2 pi); the
    /// azimuthal integral is analytic by symmetry, so integrate
    /// 2 pi C3(k) exp(k t) over t = cos(theta) with composite Simpson.
    fn quadrature_integral(kappa: f64) -> f64 {
        let n = 1 << 17;
        let h = 2.0 / n as f64;
        let f = |t: f64| (vmf_log_norm(kappa) + kappa * t).exp();
        let mut sum = f(-1.0) + f(1.0);
        for i in 1..n {
            let t = -1.0 + i as f64 * h;
            sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
        }
        2.0 * std::f64::consts::PI * sum * h / 3.0
    }

    #[test]
    fn density_normalizes_on_sphere() {
        for kappa in [0.1, 1.0, 10.0, 100.0] {
            let integral = quadrature_integral(kappa);
            assert!(
                (integral - 1.0).abs() < 1e-6,
                "kappa {kappa}: integral {integral}"
            );
        }
    }

    #[test]
    fn point_mass_likelihood_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let candidates: Vec<Vector3<f64>> = (0..40)
            .map(|_| {
                let mut v = random_unit(&mut rng);
                v.z = v.z.abs().max(0.05);
                v.normalize()
            })
            .collect();
        let mut probs = vec![1e-9; 40];
        probs[17] = 1.0;
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        let mix = fit_vmf(&candidates, &probs, 2).unwrap();
        let dominant = mix
            .components
            .iter()
            .max_by(|a, b| a.weight.partial_cmp(&b.weight).unwrap())
            .unwrap();
        assert!(dominant.weight >= 0.99, "weight {}", dominant.weight);
        assert!((dominant.mean - candidates[17]).norm() < 1e-6);
    }

    #[test]
    fn uniform_likelihood_merged_component_is_diffuse() {
        // fisheye-disc candidate design, uniform weights, single cluster
        let cs = crate::sfs::CandidateSet::new(8);
        let n = cs.normals.len();
        let probs = vec![1.0 / n as f64; n];
        let mix = fit_vmf(&cs.normals, &probs, 1).unwrap();
        assert_eq!(mix.components.len(), 1);
        assert!(
            mix.components[0].kappa < 3.0,
            "kappa {} not near-isotropic",
            mix.components[0].kappa
        );
    }

    #[test]
    fn mean_direction_formula_and_symmetry() {
        let one = VmfMixture {
            components: vec![VmfComponent {
                weight: 1.0,
                mean: Vector3::new(0.6, 0.0, 0.8),
                kappa: 5.0,
            }],
            capped: false,
        };
        assert!((one.mean_direction().unwrap() - Vector3::new(0.6, 0.0, 0.8)).norm() < 1e-15);

        let symmetric = VmfMixture {
            components: vec![
                VmfComponent {
                    weight: 0.5,
                    mean: Vector3::new(0.6, 0.0, 0.8),
                    kappa: 5.0,
                },
                VmfComponent {
                    weight: 0.5,
                    mean: Vector3::new(-0.6, 0.0, 0.8),
                    kappa: 5.0,
                },
            ],
            capped: false,
        };
        assert!((symmetric.mean_direction().unwrap() - Vector3::z()).norm() < 1e-12);

        // random mixtures against the direct formula
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let k = rng.gen_range(1..4);
            let comps: Vec<VmfComponent> = (0..k)
                .map(|_| VmfComponent {
                    weight: rng.gen_range(0.01..1.0),
                    mean: random_unit(&mut rng),
                    kappa: rng.gen_range(0.0..50.0),
                })
                .collect();
            let total: f64 = comps.iter().map(|c| c.weight).sum();
            let comps: Vec<VmfComponent> = comps
                .into_iter()
                .map(|mut c| {
                    c.weight /= total;
                    c
                })
                .collect();
            let mix = VmfMixture {
                components: comps.clone(),
                capped: false,
            };
            let mut r = Vector3::zeros();
            for c in &comps {
                r += c.weight * c.mean;
            }
            if r.norm() <= 1e-9 {
                continue;
            }
            let expect = r / r.norm();
            assert!((mix.mean_direction().unwrap() - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn antipodal_cancellation_errors_with_fallback() {
        let mix = VmfMixture {
            components: vec![
                VmfComponent {
                    weight: 0.5,
                    mean: Vector3::z(),
                    kappa: 10.0,
                },
                VmfComponent {
                    weight: 0.5,
                    mean: -Vector3::z(),
                    kappa: 10.0,
                },
            ],
            capped: false,
        };
        assert!(matches!(
            mix.mean_direction(),
            Err(Error::UndefinedDirection(_))
        ));
        assert!((mix.argmax_mean() - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn nll_uniform_case_and_mode_optimality() {
        let map = VmfMixtureMap {
            width: 1,
            height: 1,
            mixtures: vec![Some(VmfMixture {
                components: vec![VmfComponent {
                    weight: 1.0,
                    mean: Vector3::z(),
                    kappa: 0.0,
                }],
                capped: false,
            })],
        };
        let (nll, floored) = vmf_nll(&map, &[Vector3::x()], &[true]).unwrap();
        assert_relative_eq!(
            nll,
            (4.0 * std::f64::consts::PI).ln(),
            max_relative = 1e-12
        );
        assert_eq!(floored, 0);

        // target at the mode of a concentrated component beats any other
        let sharp = VmfMixture {
            components: vec![VmfComponent {
                weight: 1.0,
                mean: Vector3::z(),
                kappa: 200.0,
            }],
            capped: false,
        };
        let at_mode = -sharp.pdf(&Vector3::z()).max(1e-300).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let other = random_unit(&mut rng);
            if (other - Vector3::z()).norm() < 1e-6 {
                continue;
            }
            let nll_other = -sharp.pdf(&other).max(1e-300).ln();
            assert!(nll_other > at_mode);
        }
    }

    #[test]
    fn nll_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let comps: Vec<VmfComponent> = (0..2)
                .map(|_| VmfComponent {
                    weight: 0.5,
                    mean: random_unit(&mut rng),
                    kappa: rng.gen_range(0.1..100.0),
                })
                .collect();
            let target = random_unit(&mut rng);
            let mix = VmfMixture {
                components: comps.clone(),
                capped: false,
            };
            let map = VmfMixtureMap {
                width: 1,
                height: 1,
                mixtures: vec![Some(mix)],
            };
            let (nll, _) = vmf_nll(&map, &[target], &[true]).unwrap();
            let direct: f64 = comps
                .iter()
                .map(|c| {
                    c.weight * (c.kappa / (4.0 * std::f64::consts::PI * c.kappa.sinh()))
                        * (c.kappa * c.mean.dot(&target)).exp()
                })
                .sum();
            let expect = -direct.ln();
            assert!(
                (nll - expect).abs() < 1e-10 * expect.abs().max(1.0),
                "nll {nll} vs direct {expect}"
            );
        }
    }
}
