//! Visual-hull initialization: silhouette carving on the node lattice
//! followed by a signed Euclidean distance transform.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::SdfGrid;
use crate::error::{Error, Result};
use crate::imaging::{MaskImage, SceneConfig};

/// Stand-in for infinity inside the squared distance transform; a finite
/// value keeps the parabola intersections NaN-free.
const BIG: f64 = 1e20;

/// Carves node occupancy from the silhouettes and converts it to a signed
/// distance field (negative inside, world units). Masks are dilated by one
/// pixel before carving so that nodes inside the true object can never be
/// carved away by pixel-center discretization of the silhouette; the hull
/// stays a superset of the object.
pub fn visual_hull(scene: &SceneConfig) -> Result<SdfGrid> {
    scene.validate()?;
    let (origin, spacing, dims) = grid_layout(scene);
    let dilated: Vec<MaskImage> = scene.views.iter().map(|v| v.mask.dilate()).collect();

    let n_nodes = dims[0] * dims[1] * dims[2];
    let occupied: Vec<bool> = (0..n_nodes)
        .into_par_iter()
        .map(|idx| {
            let i = idx % dims[0];
            let j = (idx / dims[0]) % dims[1];
            let k = idx / (dims[0] * dims[1]);
            let p = origin + spacing * Vector3::new(i as f64, j as f64, k as f64);
            scene.views.iter().zip(&dilated).all(|(view, mask)| {
                match view.camera.project(&p) {
                    Ok((u, v, depth)) => {
                        if depth <= 0.0 {
                            return false;
                        }
                        let (w, h) = (view.camera.width as f64, view.camera.height as f64);
                        if !(u >= 0.0 && u < w && v >= 0.0 && v < h) {
                            return false;
                        }
                        mask.get(u as usize, v as usize)
                    }
                    Err(_) => false,
                }
            })
        })
        .collect();

    if !occupied.iter().any(|&o| o) {
        return Err(Error::EmptyHull);
    }

    let dist_to_occupied = squared_edt(&occupied, dims, true);
    let dist_to_free = squared_edt(&occupied, dims, false);
    let coeffs: Vec<f64> = occupied
        .iter()
        .zip(dist_to_free.iter().zip(&dist_to_occupied))
        .map(|(&occ, (&d_free, &d_occ))| {
            if occ {
                -spacing * d_free.min(BIG).sqrt()
            } else {
                spacing * d_occ.min(BIG).sqrt()
            }
        })
        .collect();

    SdfGrid::new(origin, spacing, dims, coeffs)
}

/// Grid layout shared by hull construction and reconstruction: isotropic
/// spacing set by the longest volume axis at `grid_res` nodes.
pub fn grid_layout(scene: &SceneConfig) -> (Vector3<f64>, f64, [usize; 3]) {
    let ext = scene.volume.extent();
    let longest = ext.x.max(ext.y).max(ext.z);
    let spacing = longest / (scene.grid_res as f64 - 1.0);
    let dims = [
        ((ext.x / spacing).round() as usize + 1).max(4),
        ((ext.y / spacing).round() as usize + 1).max(4),
        ((ext.z / spacing).round() as usize + 1).max(4),
    ];
    (Vector3::from(scene.volume.min), spacing, dims)
}

/// Exact squared Euclidean distance (in node units) to the set of nodes
/// whose occupancy equals `target`, via per-axis parabola lower envelopes.
fn squared_edt(occupied: &[bool], dims: [usize; 3], target: bool) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut dist: Vec<f64> = occupied
        .iter()
        .map(|&o| if o == target { 0.0 } else { BIG })
        .collect();

    // x pass
    dist.par_chunks_mut(nx).for_each(|row| {
        let f = row.to_vec();
        dt1d(&f, row);
    });

    // y pass
    dist.par_chunks_mut(nx * ny).for_each(|slab| {
        let mut f = vec![0.0; ny];
        let mut d = vec![0.0; ny];
        for x in 0..nx {
            for y in 0..ny {
                f[y] = slab[y * nx + x];
            }
            dt1d(&f, &mut d);
            for y in 0..ny {
                slab[y * nx + x] = d[y];
            }
        }
    });

    // z pass: transform each (x, y) column, then scatter back
    let plane = nx * ny;
    let columns: Vec<Vec<f64>> = (0..plane)
        .into_par_iter()
        .map(|xy| {
            let mut f = vec![0.0; nz];
            for z in 0..nz {
                f[z] = dist[z * plane + xy];
            }
            let mut d = vec![0.0; nz];
            dt1d(&f, &mut d);
            d
        })
        .collect();
    let mut out = vec![0.0; dist.len()];
    for (xy, col) in columns.iter().enumerate() {
        for z in 0..nz {
            out[z * plane + xy] = col[z];
        }
    }
    out
}

/// 1D squared distance transform: d[i] = min_j (i-j)^2 + f[j].
fn dt1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    // q's parabola dominates everything so far
                    s = f64::NEG_INFINITY;
                    break;
                }
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{Camera, ImageF, SceneView, VolumeBox};

    fn ring_cameras(n: usize, radius: f64, size: usize) -> Vec<Camera> {
        (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                let eye = Vector3::new(radius * a.cos(), radius * a.sin(), 0.4 * radius);
                Camera::look_at(
                    eye,
                    Vector3::zeros(),
                    Vector3::z(),
                    size as f64 * 1.2,
                    size as f64 * 1.2,
                    size,
                    size,
                )
                .unwrap()
            })
            .collect()
    }

    /// Analytic silhouette of a sphere: pixel is masked iff the pixel-center
    /// ray hits the sphere.
    fn sphere_mask(cam: &Camera, center: Vector3<f64>, r: f64) -> MaskImage {
        let mut data = vec![false; cam.width * cam.height];
        for y in 0..cam.height {
            for x in 0..cam.width {
                let dir = cam.ray_direction(x as f64 + 0.5, y as f64 + 0.5);
                let oc = cam.center() - center;
                let b = oc.dot(&dir);
                let c = oc.norm_squared() - r * r;
                data[y * cam.width + x] = b * b - c >= 0.0 && -b > 0.0;
            }
        }
        MaskImage {
            width: cam.width,
            height: cam.height,
            data,
        }
    }

    fn sphere_scene(n_views: usize, r: f64, grid_res: usize) -> SceneConfig {
        let cams = ring_cameras(n_views, 6.0 * r, 64);
        let views = cams
            .into_iter()
            .map(|camera| {
                let mask = sphere_mask(&camera, Vector3::zeros(), r);
                SceneView {
                    image: ImageF::zeros(camera.width, camera.height, 3),
                    mask,
                    camera,
                }
            })
            .collect();
        SceneConfig {
            views,
            volume: VolumeBox {
                min: [-2.0 * r; 3],
                max: [2.0 * r; 3],
            },
            grid_res,
            ground_truth: None,
        }
    }

    #[test]
    fn white_masks_keep_center_occupied() {
        let mut scene = sphere_scene(4, 1.0, 24);
        for view in &mut scene.views {
            view.mask = MaskImage::filled(64, 64, true);
        }
        let hull = visual_hull(&scene).unwrap();
        let (_, _, dims) = grid_layout(&scene);
        let center = hull.node_index(dims[0] / 2, dims[1] / 2, dims[2] / 2);
        assert!(hull.coeffs[center] < 0.0, "volume center must be occupied");
    }

    #[test]
    fn hull_contains_sphere() {
        let r = 1.0;
        let scene = sphere_scene(10, r, 48);
        let hull = visual_hull(&scene).unwrap();
        // center is deep inside
        let f_center = hull.eval_field(&Vector3::zeros()).unwrap();
        assert!(f_center < 0.0);
        // all strictly interior surface points stay inside the hull
        let h = hull.spacing;
        let mut worst = f64::NEG_INFINITY;
        for i in 0..500 {
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / 500.0;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let p = (r - h) * Vector3::new(rho * phi.cos(), rho * phi.sin(), z);
            worst = worst.max(hull.eval_field(&p).unwrap());
        }
        assert!(worst < 0.0, "interior point escaped the hull: f={worst}");
        // points on the surface itself never see positive field
        let mut on_surface = f64::NEG_INFINITY;
        for i in 0..500 {
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / 500.0;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let p = r * Vector3::new(rho * phi.cos(), rho * phi.sin(), z);
            on_surface = on_surface.max(hull.eval_field(&p).unwrap());
        }
        assert!(on_surface <= 0.0, "surface sample outside hull: {on_surface}");
    }

    #[test]
    fn adding_views_never_enlarges_hull() {
        let r = 1.0;
        let full = sphere_scene(8, r, 32);
        let occupancy = |scene: &SceneConfig| -> Vec<bool> {
            let hull = visual_hull(scene).unwrap();
            hull.coeffs.iter().map(|&c| c < 0.0).collect()
        };
        let mut subset = full.clone();
        subset.views.truncate(4);
        let occ_few = occupancy(&subset);
        let occ_all = occupancy(&full);
        for (few, all) in occ_few.iter().zip(&occ_all) {
            assert!(
                *few || !*all,
                "a node occupied with more views must be occupied with fewer"
            );
        }
    }

    #[test]
    fn empty_masks_error() {
        let mut scene = sphere_scene(3, 1.0, 16);
        for view in &mut scene.views {
            view.mask = MaskImage::filled(64, 64, false);
        }
        assert!(matches!(visual_hull(&scene), Err(Error::EmptyHull)));
    }

    #[test]
    fn edt_matches_brute_force() {
        let dims = [7usize, 6, 5];
        let mut occ = vec![false; dims[0] * dims[1] * dims[2]];
        // a couple of occupied nodes
        occ[3 + 7 * (2 + 6 * 1)] = true;
        occ[1 + 7 * (4 + 6 * 3)] = true;
        occ[6 + 7 * (0 + 6 * 4)] = true;
        let d = squared_edt(&occ, dims, true);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let mut best = f64::INFINITY;
                    for kk in 0..dims[2] {
                        for jj in 0..dims[1] {
                            for ii in 0..dims[0] {
                                if occ[ii + dims[0] * (jj + dims[1] * kk)] {
                                    let dd = (i as f64 - ii as f64).powi(2)
                                        + (j as f64 - jj as f64).powi(2)
                                        + (k as f64 - kk as f64).powi(2);
                                    best = best.min(dd);
                                }
                            }
                        }
                    }
                    let got = d[i + dims[0] * (j + dims[1] * k)];
                    assert!((got - best).abs() < 1e-9, "({i},{j},{k}): {got} vs {best}");
                }
            }
        }
    }
}
