//! Deterministic per-view G-buffer rendering and backward propagation of
//! per-pixel normal gradients to mesh vertices.
//!
//! Rasterization casts one ray per pixel center against a BVH; visibility
//! is z-buffered with exact-depth ties broken by the lower face id, so the
//! output is independent of face order. The backward pass chains loss
//! gradients through each covered pixel's flat face normal (analytic
//! Jacobian of the normalized cross product); visibility and coverage are
//! treated as locally constant, so no gradient flows across silhouette or
//! occlusion edges.

mod bvh;

pub use bvh::{sq_dist_point_triangle, Bvh, Hit};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::Camera;
use crate::sdfgrid::TriMesh;

pub const NO_FACE: u32 = u32::MAX;

/// Per-pixel geometry attributes of one rendered view. Normals are unit
/// vectors in the per-view normal frame (z toward the camera, so visible
/// surfaces have positive z); positions and view directions are world-frame.
#[derive(Debug, Clone)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub coverage: Vec<bool>,
    pub face_id: Vec<u32>,
    pub bary: Vec<[f64; 3]>,
    pub normal: Vec<Vector3<f64>>,
    pub position: Vec<Vector3<f64>>,
    pub depth: Vec<f64>,
    pub view_dir: Vec<Vector3<f64>>,
    /// World-to-view-frame rotation used for the normals.
    pub view_rotation: Matrix3<f64>,
}

impl GBuffer {
    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coverage_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }

    /// Coverage as a mask image.
    pub fn coverage_mask(&self) -> crate::imaging::MaskImage {
        crate::imaging::MaskImage {
            width: self.width,
            height: self.height,
            data: self.coverage.clone(),
        }
    }
}

struct PixelSample {
    face: u32,
    bary: [f64; 3],
    normal: Vector3<f64>,
    position: Vector3<f64>,
    depth: f64,
    view_dir: Vector3<f64>,
}

/// Renders the mesh into a G-buffer for one camera. Back-facing fragments
/// are discarded; an empty mesh yields zero coverage.
pub fn render_gbuffer(mesh: &TriMesh, camera: &Camera, width: usize, height: usize) -> GBuffer {
    let bvh = Bvh::build(mesh);
    render_gbuffer_with_bvh(mesh, &bvh, camera, width, height)
}

/// Same as [`render_gbuffer`] but reuses a prebuilt BVH (the optimizer
/// renders the same mesh for several views per step).
pub fn render_gbuffer_with_bvh(
    mesh: &TriMesh,
    bvh: &Bvh,
    camera: &Camera,
    width: usize,
    height: usize,
) -> GBuffer {
    let origin = camera.center();
    let view_rotation = camera.view_rotation();

    let samples: Vec<Option<PixelSample>> = (0..width * height)
        .into_par_iter()
        .map(|idx| {
            let x = idx % width;
            let y = idx / width;
            let dir = camera.ray_direction(x as f64 + 0.5, y as f64 + 0.5);
            let hit = bvh.nearest_hit(&origin, &dir, true)?;
            let position = origin + hit.t * dir;
            let n_world = mesh
                .face_normal_raw(hit.face as usize)
                .try_normalize(1e-300)?;
            let normal = view_rotation * n_world;
            // depth along the optical axis, not along the ray
            let depth = (camera.rotation * position + camera.translation).z;
            Some(PixelSample {
                face: hit.face,
                bary: [1.0 - hit.u - hit.v, hit.u, hit.v],
                normal,
                position,
                depth,
                view_dir: (origin - position).normalize(),
            })
        })
        .collect();

    let n = width * height;
    let mut g = GBuffer {
        width,
        height,
        coverage: vec![false; n],
        face_id: vec![NO_FACE; n],
        bary: vec![[0.0; 3]; n],
        normal: vec![Vector3::zeros(); n],
        position: vec![Vector3::zeros(); n],
        depth: vec![0.0; n],
        view_dir: vec![Vector3::zeros(); n],
        view_rotation,
    };
    for (i, s) in samples.into_iter().enumerate() {
        if let Some(s) = s {
            g.coverage[i] = true;
            g.face_id[i] = s.face;
            g.bary[i] = s.bary;
            g.normal[i] = s.normal;
            g.position[i] = s.position;
            g.depth[i] = s.depth;
            g.view_dir[i] = s.view_dir;
        }
    }
    g
}

/// Propagates per-pixel view-frame normal gradients to mesh vertices
/// through the flat-normal Jacobian. `dldn[i]` must be zero on uncovered
/// pixels. Accumulation order is the fixed pixel order, so results are
/// deterministic.
pub fn backward_normals(
    gbuffer: &GBuffer,
    mesh: &TriMesh,
    dldn: &[Vector3<f64>],
) -> Result<Vec<Vector3<f64>>> {
    assert_eq!(dldn.len(), gbuffer.coverage.len(), "gradient buffer size");
    let v_t = gbuffer.view_rotation.transpose();
    let mut grad = vec![Vector3::zeros(); mesh.vertices.len()];
    for (i, g_view) in dldn.iter().enumerate() {
        if !gbuffer.coverage[i] {
            continue;
        }
        if g_view.x == 0.0 && g_view.y == 0.0 && g_view.z == 0.0 {
            continue;
        }
        let face = gbuffer.face_id[i];
        if face == NO_FACE || face as usize >= mesh.faces.len() {
            return Err(Error::MissingFace(face as usize));
        }
        let [i0, i1, i2] = mesh.faces[face as usize];
        let [p0, p1, p2] = mesh.face_vertices(face as usize);
        let e1 = p1 - p0;
        let e2 = p2 - p0;
        let c = e1.cross(&e2);
        let norm = c.norm();
        if norm < 1e-300 {
            continue;
        }
        let n = c / norm;
        let g_world = v_t * g_view;
        // d(n)/d(c) = (I - n n^T) / |c|
        let g_c = (g_world - n * n.dot(&g_world)) / norm;
        grad[i1 as usize] += e2.cross(&g_c);
        grad[i2 as usize] += g_c.cross(&e1);
        grad[i0 as usize] += (e1 - e2).cross(&g_c);
    }
    Ok(grad)
}
