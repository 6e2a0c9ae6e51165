//! Level-set SDF optimization: per-pixel normal loss, the chain rule from
//! vertex gradients to SDF coefficients, Adam updates, and silhouette
//! consistency by clamping against the visual-hull field.
//!
//! The chain rule treats each mesh vertex as a level-set sample: a change
//! of the field moves the vertex along the negative gradient direction, so
//! `dL/df(v) = -grad f(v) . dL/dv`, and coefficients collect that through
//! their basis weights at the vertex.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::imaging::MaskImage;
use crate::rasterizer::{backward_normals, GBuffer};
use crate::sdfgrid::{SdfGrid, TriMesh};

/// Adam optimizer state for the SDF coefficient vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Mean absolute per-view normal error and the pixel counts behind it.
#[derive(Debug, Clone, Default)]
pub struct SfSLossReport {
    pub mean_abs_error: f64,
    pub valid_pixels: usize,
}

/// L1 loss between rendered and target normals over valid covered pixels,
/// plus its gradient with respect to mesh vertices.
///
/// The loss is the mean over valid covered pixels of the per-axis absolute
/// difference; the subgradient uses sign(0) = 0. Targets must be unit
/// vectors wherever `validity` and coverage agree.
pub fn sfs_loss_and_vertex_grads(
    gbuffer: &GBuffer,
    mesh: &TriMesh,
    target_normals: &[Vector3<f64>],
    validity: &MaskImage,
) -> Result<(SfSLossReport, Vec<Vector3<f64>>)> {
    assert_eq!(target_normals.len(), gbuffer.coverage.len());
    assert_eq!(validity.data.len(), gbuffer.coverage.len());

    let mut n_valid = 0usize;
    for i in 0..gbuffer.coverage.len() {
        if gbuffer.coverage[i] && validity.data[i] {
            n_valid += 1;
        }
    }
    if n_valid == 0 {
        return Err(Error::NoValidPixels);
    }
    let scale = 1.0 / n_valid as f64;

    let mut loss = 0.0;
    let mut dldn = vec![Vector3::zeros(); gbuffer.coverage.len()];
    for i in 0..gbuffer.coverage.len() {
        if !(gbuffer.coverage[i] && validity.data[i]) {
            continue;
        }
        let diff = gbuffer.normal[i] - target_normals[i];
        loss += diff.x.abs() + diff.y.abs() + diff.z.abs();
        dldn[i] = Vector3::new(
            sign_sub(diff.x) * scale,
            sign_sub(diff.y) * scale,
            sign_sub(diff.z) * scale,
        );
    }
    loss *= scale;

    let grads = backward_normals(gbuffer, mesh, &dldn)?;
    Ok((
        SfSLossReport {
            mean_abs_error: loss,
            valid_pixels: n_valid,
        },
        grads,
    ))
}

#[inline]
fn sign_sub(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Chains per-vertex loss gradients to SDF coefficients:
/// `dL/dtheta = sum_j w_j(theta) * (-grad f(v_j) . dL/dv_j)`.
/// Vertices with zero gradient are skipped; any contributing vertex
/// outside the grid interior is an error naming the vertex.
pub fn chain_to_theta(
    mesh: &TriMesh,
    vertex_grads: &[Vector3<f64>],
    grid: &SdfGrid,
) -> Result<Vec<f64>> {
    assert_eq!(vertex_grads.len(), mesh.vertices.len());
    let mut dtheta = vec![0.0f64; grid.coeffs.len()];
    for (j, g) in vertex_grads.iter().enumerate() {
        if g.x == 0.0 && g.y == 0.0 && g.z == 0.0 {
            continue;
        }
        let v = &mesh.vertices[j];
        let grad_f = grid.eval_gradient(v).map_err(|_| Error::VertexOutsideGrid {
            index: j,
            position: [v.x, v.y, v.z],
        })?;
        let df = -grad_f.dot(g);
        if df == 0.0 {
            continue;
        }
        let weights = grid.basis_weights(v).map_err(|_| Error::VertexOutsideGrid {
            index: j,
            position: [v.x, v.y, v.z],
        })?;
        for (idx, w) in weights {
            dtheta[idx] += w * df;
        }
    }
    Ok(dtheta)
}

/// Standard bias-corrected Adam update. Non-finite gradient entries abort
/// rather than being clamped.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState) -> Result<()> {
    if theta.len() != grad.len() || theta.len() != state.m.len() {
        return Err(Error::LayoutMismatch(format!(
            "theta {}, grad {}, moments {}",
            theta.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(i));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..theta.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Elementwise `theta' = max(theta, theta_hull)`. The hull field is an
/// outer bound on the object, so a field clamped this way never admits a
/// surface outside the hull.
pub fn hull_clamp(theta: &mut [f64], theta_hull: &[f64]) -> Result<()> {
    if theta.len() != theta_hull.len() {
        return Err(Error::LayoutMismatch(format!(
            "theta {} vs hull {}",
            theta.len(),
            theta_hull.len()
        )));
    }
    for (t, &h) in theta.iter_mut().zip(theta_hull) {
        if *t < h {
            *t = h;
        }
    }
    Ok(())
}
