//! Signed-distance-field grid: cubic B-spline evaluation, visual-hull
//! initialization, and zero-level-set mesh extraction.

mod hull;
mod marching;
mod mesh;

pub use hull::visual_hull;
pub use marching::marching_cubes;
pub use mesh::{load_obj, save_obj, TriMesh};

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular 3D grid of signed-distance coefficients. The smooth field is
/// the tensor-product cubic B-spline blend of the coefficients:
/// `f(x) = sum_ijk theta[ijk] * B((x - x_ijk) / h)`. The blend
/// approximates (not interpolates) the node values.
#[derive(Debug, Clone)]
pub struct SdfGrid {
    pub origin: Vector3<f64>,
    /// Isotropic node spacing in world units.
    pub spacing: f64,
    pub dims: [usize; 3],
    pub coeffs: Vec<f64>,
}

/// Cubic B-spline basis weights for the 4-node support at fraction `t` in [0, 1].
/// Index 0 is the node one below the cell, index 3 the node two above.
#[inline]
pub(crate) fn bspline_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let omt = 1.0 - t;
    [
        omt * omt * omt / 6.0,
        2.0 / 3.0 - t2 + 0.5 * t3,
        2.0 / 3.0 - omt * omt + 0.5 * omt * omt * omt,
        t3 / 6.0,
    ]
}

/// Derivatives of [`bspline_weights`] with respect to `t`.
#[inline]
pub(crate) fn bspline_dweights(t: f64) -> [f64; 4] {
    let omt = 1.0 - t;
    [
        -0.5 * omt * omt,
        -2.0 * t + 1.5 * t * t,
        2.0 * omt - 1.5 * omt * omt,
        0.5 * t * t,
    ]
}

/// Per-axis support location: base node index (support covers base..base+4)
/// and the fractional offset within the cell.
#[inline]
fn axis_support(u: f64, n: usize) -> (usize, f64) {
    // Clamp the cell index into [1, n-3] so the 4-node support stays in
    // bounds; callers have already domain-checked u.
    let mut i = u.floor() as isize;
    if i < 1 {
        i = 1;
    }
    if i > n as isize - 3 {
        i = n as isize - 3;
    }
    (i as usize - 1, u - i as f64)
}

impl SdfGrid {
    pub fn new(origin: Vector3<f64>, spacing: f64, dims: [usize; 3], coeffs: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 4) {
            return Err(Error::InvalidParameter(format!(
                "grid dims must be >= 4 per axis, got {dims:?}"
            )));
        }
        if spacing <= 0.0 {
            return Err(Error::InvalidParameter("spacing must be positive".into()));
        }
        if coeffs.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidParameter(format!(
                "coefficient count {} != {}x{}x{}",
                coeffs.len(),
                dims[0],
                dims[1],
                dims[2]
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coefficient".into()));
        }
        Ok(Self {
            origin,
            spacing,
            dims,
            coeffs,
        })
    }

    /// Grid with all coefficients set by a function of node world position.
    pub fn from_fn(
        origin: Vector3<f64>,
        spacing: f64,
        dims: [usize; 3],
        f: impl Fn(Vector3<f64>) -> f64,
    ) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = origin
                        + spacing * Vector3::new(i as f64, j as f64, k as f64);
                    coeffs.push(f(p));
                }
            }
        }
        Self::new(origin, spacing, dims, coeffs)
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + self.spacing * Vector3::new(i as f64, j as f64, k as f64)
    }

    /// World-space box of the valid interior (one-cell margin per axis).
    pub fn interior_min(&self) -> Vector3<f64> {
        self.origin + Vector3::repeat(self.spacing)
    }

    pub fn interior_max(&self) -> Vector3<f64> {
        self.origin
            + self.spacing
                * Vector3::new(
                    self.dims[0] as f64 - 2.0,
                    self.dims[1] as f64 - 2.0,
                    self.dims[2] as f64 - 2.0,
                )
    }

    /// Grid coordinates of a world point (units of spacing from the origin).
    #[inline]
    pub fn to_grid(&self, x: &Vector3<f64>) -> Vector3<f64> {
        (x - self.origin) / self.spacing
    }

    #[inline]
    fn check_domain(&self, u: &Vector3<f64>, x: &Vector3<f64>) -> Result<()> {
        for a in 0..3 {
            if !(u[a] >= 1.0 && u[a] <= self.dims[a] as f64 - 2.0) {
                return Err(Error::OutOfDomain([x.x, x.y, x.z]));
            }
        }
        Ok(())
    }

    /// Smooth field value at a world point inside the valid interior.
    pub fn eval_field(&self, x: &Vector3<f64>) -> Result<f64> {
        let u = self.to_grid(x);
        self.check_domain(&u, x)?;
        let (bx, tx) = axis_support(u.x, self.dims[0]);
        let (by, ty) = axis_support(u.y, self.dims[1]);
        let (bz, tz) = axis_support(u.z, self.dims[2]);
        let wx = bspline_weights(tx);
        let wy = bspline_weights(ty);
        let wz = bspline_weights(tz);

        let mut sum = 0.0;
        for dk in 0..4 {
            let mut sum_k = 0.0;
            for dj in 0..4 {
                let row = self.node_index(bx, by + dj, bz + dk);
                let c = &self.coeffs[row..row + 4];
                sum_k += wy[dj] * (wx[0] * c[0] + wx[1] * c[1] + wx[2] * c[2] + wx[3] * c[3]);
            }
            sum += wz[dk] * sum_k;
        }
        Ok(sum)
    }

    /// Analytic spatial gradient of the field at a world point.
    pub fn eval_gradient(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        let u = self.to_grid(x);
        self.check_domain(&u, x)?;
        let (bx, tx) = axis_support(u.x, self.dims[0]);
        let (by, ty) = axis_support(u.y, self.dims[1]);
        let (bz, tz) = axis_support(u.z, self.dims[2]);
        let wx = bspline_weights(tx);
        let wy = bspline_weights(ty);
        let wz = bspline_weights(tz);
        let dx = bspline_dweights(tx);
        let dy = bspline_dweights(ty);
        let dz = bspline_dweights(tz);

        let mut g = Vector3::zeros();
        for dk in 0..4 {
            for dj in 0..4 {
                let row = self.node_index(bx, by + dj, bz + dk);
                let c = &self.coeffs[row..row + 4];
                let sx = wx[0] * c[0] + wx[1] * c[1] + wx[2] * c[2] + wx[3] * c[3];
                let sdx = dx[0] * c[0] + dx[1] * c[1] + dx[2] * c[2] + dx[3] * c[3];
                g.x += sdx * wy[dj] * wz[dk];
                g.y += sx * dy[dj] * wz[dk];
                g.z += sx * wy[dj] * dz[dk];
            }
        }
        Ok(g / self.spacing)
    }

    /// Sparse derivative of the field with respect to each coefficient:
    /// exactly 64 (node index, weight) entries whose weights sum to 1.
    pub fn basis_weights(&self, x: &Vector3<f64>) -> Result<Vec<(usize, f64)>> {
        let u = self.to_grid(x);
        self.check_domain(&u, x)?;
        let (bx, tx) = axis_support(u.x, self.dims[0]);
        let (by, ty) = axis_support(u.y, self.dims[1]);
        let (bz, tz) = axis_support(u.z, self.dims[2]);
        let wx = bspline_weights(tx);
        let wy = bspline_weights(ty);
        let wz = bspline_weights(tz);

        let mut out = Vec::with_capacity(64);
        for dk in 0..4 {
            for dj in 0..4 {
                let row = self.node_index(bx, by + dj, bz + dk);
                let wyz = wy[dj] * wz[dk];
                for di in 0..4 {
                    out.push((row + di, wx[di] * wyz));
                }
            }
        }
        Ok(out)
    }

    /// Writes `<base>.json` (layout header) and `<base>.raw` (little-endian
    /// f64 coefficients).
    pub fn save_checkpoint(&self, base: impl AsRef<Path>) -> Result<()> {
        let base = base.as_ref();
        let header = CheckpointHeader {
            origin: [self.origin.x, self.origin.y, self.origin.z],
            spacing: self.spacing,
            dims: self.dims,
        };
        let json_path = base.with_extension("json");
        let raw_path = base.with_extension("raw");
        std::fs::write(&json_path, serde_json::to_string_pretty(&header)?)
            .map_err(|e| Error::io(&json_path, e))?;
        let mut bytes = Vec::with_capacity(self.coeffs.len() * 8);
        for c in &self.coeffs {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
        std::fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))
    }

    pub fn load_checkpoint(base: impl AsRef<Path>) -> Result<SdfGrid> {
        let base = base.as_ref();
        let json_path = base.with_extension("json");
        let raw_path = base.with_extension("raw");
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let header: CheckpointHeader = serde_json::from_str(&text)?;
        let bytes = std::fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
        let n = header.dims[0] * header.dims[1] * header.dims[2];
        if bytes.len() != n * 8 {
            return Err(Error::InvalidParameter(format!(
                "checkpoint payload {} bytes != {} coefficients",
                bytes.len(),
                n
            )));
        }
        let coeffs = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        SdfGrid::new(
            Vector3::from(header.origin),
            header.spacing,
            header.dims,
            coeffs,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    origin: [f64; 3],
    spacing: f64,
    dims: [usize; 3],
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_interior_point(grid: &SdfGrid, rng: &mut impl Rng) -> Vector3<f64> {
        let lo = grid.interior_min();
        let hi = grid.interior_max();
        Vector3::new(
            rng.gen_range(lo.x..hi.x),
            rng.gen_range(lo.y..hi.y),
            rng.gen_range(lo.z..hi.z),
        )
    }

    fn random_grid(seed: u64, dims: [usize; 3]) -> SdfGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..dims[0] * dims[1] * dims[2])
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        SdfGrid::new(Vector3::new(-0.3, 0.1, 0.2), 0.17, dims, coeffs).unwrap()
    }

    #[test]
    fn constant_field_partition_of_unity() {
        let grid = SdfGrid::new(Vector3::zeros(), 0.5, [6, 6, 6], vec![2.5; 216]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = random_interior_point(&grid, &mut rng);
            assert!((grid.eval_field(&p).unwrap() - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_reproduction() {
        let a = Vector3::new(0.7, -1.3, 0.4);
        let b = 0.25;
        let grid = SdfGrid::from_fn(Vector3::new(-1.0, -1.0, -1.0), 0.25, [10, 10, 10], |p| {
            a.dot(&p) + b
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let p = random_interior_point(&grid, &mut rng);
            let v = grid.eval_field(&p).unwrap();
            assert!((v - (a.dot(&p) + b)).abs() < 1e-10, "affine value mismatch");
            let g = grid.eval_gradient(&p).unwrap();
            assert!((g - a).norm() < 1e-9, "affine gradient mismatch {g:?}");
        }
    }

    #[test]
    fn coincident_node_weight() {
        // B(0) = 2/3 per axis, so the coincident node carries (2/3)^3.
        let grid = random_grid(3, [8, 8, 8]);
        let p = grid.node_position(4, 4, 4);
        let weights = grid.basis_weights(&p).unwrap();
        let idx = grid.node_index(4, 4, 4);
        let w = weights.iter().find(|(i, _)| *i == idx).unwrap().1;
        let expect = (2.0f64 / 3.0).powi(3);
        assert!((w - expect).abs() < 1e-12, "w={w}, expect={expect}");
    }

    #[test]
    fn basis_weights_partition_and_reconstruction() {
        let grid = random_grid(4, [9, 7, 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let p = random_interior_point(&grid, &mut rng);
            let w = grid.basis_weights(&p).unwrap();
            assert_eq!(w.len(), 64);
            let sum: f64 = w.iter().map(|(_, w)| w).sum();
            assert!((sum - 1.0).abs() < 1e-12, "partition of unity: {sum}");
            let recon: f64 = w.iter().map(|(i, w)| grid.coeffs[*i] * w).sum();
            let direct = grid.eval_field(&p).unwrap();
            assert!((recon - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_weights_match_finite_differences() {
        let grid = random_grid(6, [8, 8, 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_interior_point(&grid, &mut rng);
        let weights = grid.basis_weights(&p).unwrap();
        let step = 1e-4;
        for &(idx, w) in weights.iter() {
            let mut plus = grid.clone();
            plus.coeffs[idx] += step;
            let mut minus = grid.clone();
            minus.coeffs[idx] -= step;
            let fd = (plus.eval_field(&p).unwrap() - minus.eval_field(&p).unwrap()) / (2.0 * step);
            let tol = 1e-5 * w.abs().max(1e-9);
            assert!((fd - w).abs() <= tol, "node {idx}: fd={fd}, w={w}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let grid = random_grid(8, [10, 9, 11]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5 * grid.spacing;
        for _ in 0..50 {
            let p = random_interior_point(&grid, &mut rng);
            let g = grid.eval_gradient(&p).unwrap();
            for a in 0..3 {
                let mut dp = Vector3::zeros();
                dp[a] = h;
                let f_plus = match grid.eval_field(&(p + dp)) {
                    Ok(v) => v,
                    Err(_) => continue,
                };
                let f_minus = match grid.eval_field(&(p - dp)) {
                    Ok(v) => v,
                    Err(_) => continue,
                };
                let fd = (f_plus - f_minus) / (2.0 * h);
                let denom = g[a].abs().max(1e-6);
                assert!(
                    ((fd - g[a]) / denom).abs() < 1e-4,
                    "axis {a}: fd={fd} g={}",
                    g[a]
                );
            }
        }
    }

    #[test]
    fn out_of_domain_rejected() {
        let grid = random_grid(10, [6, 6, 6]);
        let outside = grid.origin + Vector3::new(0.5 * grid.spacing, 2.0, 2.0);
        assert!(matches!(
            grid.eval_field(&outside),
            Err(Error::OutOfDomain(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let grid = random_grid(11, [6, 7, 8]);
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ckpt");
        grid.save_checkpoint(&base).unwrap();
        let back = SdfGrid::load_checkpoint(&base).unwrap();
        assert_eq!(grid.coeffs, back.coeffs);
        assert_eq!(grid.dims, back.dims);
        assert_eq!(grid.spacing, back.spacing);
        assert_eq!(grid.origin, back.origin);
    }
}
