//! Zero-level-set mesh extraction.
//!
//! The field is resampled on a lattice spanning the grid's valid interior
//! (separable B-spline passes, arithmetic-identical to `eval_field` at each
//! lattice point). Each lattice cell is split into six tetrahedra sharing
//! the cell's main diagonal; the split induces identical diagonals on the
//! faces shared by neighboring cells, so the extracted surface is
//! watertight by construction. Surface vertices are placed by linear
//! interpolation along lattice-cell edges and welded through a canonical
//! edge key.

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::{bspline_weights, SdfGrid, TriMesh};
use crate::error::{Error, Result};

const DEGENERATE_AREA: f64 = 1e-12;

/// Default sampling resolution: twice the node resolution per axis.
pub fn default_sample_res(grid: &SdfGrid) -> [usize; 3] {
    [2 * grid.dims[0], 2 * grid.dims[1], 2 * grid.dims[2]]
}

struct AxisTable {
    /// Base node index per sample (support covers base..base+4).
    base: Vec<usize>,
    weights: Vec<[f64; 4]>,
    /// World coordinate per sample.
    coord: Vec<f64>,
}

fn axis_table(grid: &SdfGrid, axis: usize, samples: usize) -> AxisTable {
    let n = grid.dims[axis];
    let u_min = 1.0;
    let u_max = n as f64 - 2.0;
    let step = (u_max - u_min) / (samples as f64 - 1.0);
    let mut base = Vec::with_capacity(samples);
    let mut weights = Vec::with_capacity(samples);
    let mut coord = Vec::with_capacity(samples);
    for s in 0..samples {
        let u = if s + 1 == samples { u_max } else { u_min + s as f64 * step };
        let mut i = u.floor() as isize;
        if i < 1 {
            i = 1;
        }
        if i > n as isize - 3 {
            i = n as isize - 3;
        }
        base.push(i as usize - 1);
        weights.push(bspline_weights(u - i as f64));
        coord.push(grid.origin[axis] + grid.spacing * u);
    }
    AxisTable {
        base,
        weights,
        coord,
    }
}

/// Extracts the zero level set of the grid's smooth field, sampling
/// `sample_res` points per axis across the valid interior. Returns an
/// empty mesh when the sampled field has uniform sign. Triangles wind so
/// normals point toward positive field values.
pub fn marching_cubes(grid: &SdfGrid, sample_res: [usize; 3]) -> Result<TriMesh> {
    for a in 0..3 {
        if sample_res[a] < grid.dims[a] {
            return Err(Error::InvalidParameter(format!(
                "sample_res {:?} must be >= grid dims {:?}",
                sample_res, grid.dims
            )));
        }
    }
    let [sx, sy, sz] = sample_res;
    let [nx, ny, nz] = grid.dims;
    let tx = axis_table(grid, 0, sx);
    let ty = axis_table(grid, 1, sy);
    let tz = axis_table(grid, 2, sz);

    // X pass: resample along x for every (j, k) node row.
    let mut ax = vec![0.0f64; sx * ny * nz];
    ax.par_chunks_mut(sx).enumerate().for_each(|(jk, row)| {
        let coeff_row = &grid.coeffs[jk * nx..jk * nx + nx];
        for (s, out) in row.iter_mut().enumerate() {
            let b = tx.base[s];
            let w = &tx.weights[s];
            let c = &coeff_row[b..b + 4];
            *out = w[0] * c[0] + w[1] * c[1] + w[2] * c[2] + w[3] * c[3];
        }
    });

    // Y pass: resample along y for every (sample x, node k) pair.
    let mut axy = vec![0.0f64; sx * sy * nz];
    axy.par_chunks_mut(sx * sy).enumerate().for_each(|(k, plane)| {
        for s in 0..sy {
            let b = ty.base[s];
            let w = &ty.weights[s];
            let r0 = &ax[(k * ny + b) * sx..(k * ny + b) * sx + sx];
            let r1 = &ax[(k * ny + b + 1) * sx..(k * ny + b + 1) * sx + sx];
            let r2 = &ax[(k * ny + b + 2) * sx..(k * ny + b + 2) * sx + sx];
            let r3 = &ax[(k * ny + b + 3) * sx..(k * ny + b + 3) * sx + sx];
            let out = &mut plane[s * sx..s * sx + sx];
            for i in 0..sx {
                out[i] = w[0] * r0[i] + w[1] * r1[i] + w[2] * r2[i] + w[3] * r3[i];
            }
        }
    });
    drop(ax);

    // Z pass is evaluated per sample plane on demand.
    let eval_plane = |s: usize, out: &mut Vec<f64>, row_neg: &mut Vec<bool>, row_pos: &mut Vec<bool>| {
        let b = tz.base[s];
        let w = &tz.weights[s];
        out.resize(sx * sy, 0.0);
        row_neg.clear();
        row_pos.clear();
        let planes: [&[f64]; 4] = [
            &axy[(b) * sx * sy..(b + 1) * sx * sy],
            &axy[(b + 1) * sx * sy..(b + 2) * sx * sy],
            &axy[(b + 2) * sx * sy..(b + 3) * sx * sy],
            &axy[(b + 3) * sx * sy..(b + 4) * sx * sy],
        ];
        let stats: Vec<(bool, bool)> = out
            .par_chunks_mut(sx)
            .enumerate()
            .map(|(y, row)| {
                let o = y * sx;
                let mut any_neg = false;
                let mut any_pos = false;
                for i in 0..sx {
                    let v = w[0] * planes[0][o + i]
                        + w[1] * planes[1][o + i]
                        + w[2] * planes[2][o + i]
                        + w[3] * planes[3][o + i];
                    row[i] = v;
                    if v < 0.0 {
                        any_neg = true;
                    } else {
                        any_pos = true;
                    }
                }
                (any_neg, any_pos)
            })
            .collect();
        for (n, p) in stats {
            row_neg.push(n);
            row_pos.push(p);
        }
    };

    // Six tetrahedra per cell, all sharing the 0-7 diagonal. Corner bits:
    // bit0 = x, bit1 = y, bit2 = z.
    const TETS: [[usize; 4]; 6] = [
        [0, 1, 3, 7],
        [0, 1, 5, 7],
        [0, 2, 3, 7],
        [0, 2, 6, 7],
        [0, 4, 5, 7],
        [0, 4, 6, 7],
    ];

    let point_id = |x: usize, y: usize, z: usize| -> u64 { ((z * sy + y) * sx + x) as u64 };

    let mut mesh = TriMesh::default();
    let mut edge_vertex: HashMap<(u64, u64), u32> = HashMap::new();

    let mut plane0 = Vec::new();
    let mut plane1 = Vec::new();
    let (mut rn0, mut rp0) = (Vec::new(), Vec::new());
    let (mut rn1, mut rp1) = (Vec::new(), Vec::new());
    eval_plane(0, &mut plane0, &mut rn0, &mut rp0);

    let mut corner_pos = [Vector3::zeros(); 8];
    let mut corner_val = [0.0f64; 8];
    let mut corner_id = [0u64; 8];

    for z in 0..sz - 1 {
        eval_plane(z + 1, &mut plane1, &mut rn1, &mut rp1);
        for y in 0..sy - 1 {
            let any_neg = rn0[y] || rn0[y + 1] || rn1[y] || rn1[y + 1];
            let any_pos = rp0[y] || rp0[y + 1] || rp1[y] || rp1[y + 1];
            if !(any_neg && any_pos) {
                continue;
            }
            for x in 0..sx - 1 {
                let mut neg = false;
                let mut pos = false;
                for c in 0..8usize {
                    let cx = x + (c & 1);
                    let cy = y + ((c >> 1) & 1);
                    let cz = (c >> 2) & 1;
                    let plane: &[f64] = if cz == 0 { &plane0 } else { &plane1 };
                    let v = plane[cy * sx + cx];
                    corner_val[c] = v;
                    if v < 0.0 {
                        neg = true;
                    } else {
                        pos = true;
                    }
                    corner_id[c] = point_id(cx, cy, z + cz);
                    corner_pos[c] = Vector3::new(tx.coord[cx], ty.coord[cy], tz.coord[z + cz]);
                }
                if !(neg && pos) {
                    continue;
                }
                for tet in TETS.iter() {
                    emit_tet(
                        tet,
                        &corner_pos,
                        &corner_val,
                        &corner_id,
                        &mut edge_vertex,
                        &mut mesh,
                    );
                }
            }
        }
        std::mem::swap(&mut plane0, &mut plane1);
        std::mem::swap(&mut rn0, &mut rn1);
        std::mem::swap(&mut rp0, &mut rp1);
    }

    Ok(mesh.cleaned(DEGENERATE_AREA))
}

fn emit_tet(
    tet: &[usize; 4],
    pos: &[Vector3<f64>; 8],
    val: &[f64; 8],
    ids: &[u64; 8],
    edge_vertex: &mut HashMap<(u64, u64), u32>,
    mesh: &mut TriMesh,
) {
    let mut inside = [false; 4];
    let mut n_inside = 0;
    for (t, &c) in tet.iter().enumerate() {
        inside[t] = val[c] < 0.0;
        if inside[t] {
            n_inside += 1;
        }
    }
    if n_inside == 0 || n_inside == 4 {
        return;
    }

    // Canonical vertex on the edge between tet-local corners a (inside) and
    // b (outside); keyed by global lattice ids so shared edges weld exactly.
    let mut cut = |mesh: &mut TriMesh, a: usize, b: usize| -> u32 {
        let (ca, cb) = (tet[a], tet[b]);
        let (id0, id1, c0, c1) = if ids[ca] < ids[cb] {
            (ids[ca], ids[cb], ca, cb)
        } else {
            (ids[cb], ids[ca], cb, ca)
        };
        *edge_vertex.entry((id0, id1)).or_insert_with(|| {
            let f0 = val[c0];
            let f1 = val[c1];
            let t = f0 / (f0 - f1);
            let p = pos[c0] + t * (pos[c1] - pos[c0]);
            mesh.vertices.push(p);
            (mesh.vertices.len() - 1) as u32
        })
    };

    let ins: Vec<usize> = (0..4).filter(|&t| inside[t]).collect();
    let outs: Vec<usize> = (0..4).filter(|&t| !inside[t]).collect();

    // Reference direction from the inside centroid toward the outside
    // centroid; triangle normals must point along it (toward positive field).
    let mean = |idx: &[usize]| -> Vector3<f64> {
        let mut m = Vector3::zeros();
        for &t in idx {
            m += pos[tet[t]];
        }
        m / idx.len() as f64
    };
    let ref_dir = mean(&outs) - mean(&ins);

    let push_oriented = |mesh: &mut TriMesh, a: u32, b: u32, c: u32| {
        let pa = mesh.vertices[a as usize];
        let pb = mesh.vertices[b as usize];
        let pc = mesh.vertices[c as usize];
        let n = (pb - pa).cross(&(pc - pa));
        if n.dot(&ref_dir) >= 0.0 {
            mesh.faces.push([a, b, c]);
        } else {
            mesh.faces.push([a, c, b]);
        }
    };

    match n_inside {
        1 => {
            let a = ins[0];
            let v0 = cut(mesh, a, outs[0]);
            let v1 = cut(mesh, a, outs[1]);
            let v2 = cut(mesh, a, outs[2]);
            push_oriented(mesh, v0, v1, v2);
        }
        3 => {
            let b = outs[0];
            let v0 = cut(mesh, ins[0], b);
            let v1 = cut(mesh, ins[1], b);
            let v2 = cut(mesh, ins[2], b);
            push_oriented(mesh, v0, v1, v2);
        }
        2 => {
            let (a0, a1) = (ins[0], ins[1]);
            let (b0, b1) = (outs[0], outs[1]);
            let v00 = cut(mesh, a0, b0);
            let v01 = cut(mesh, a0, b1);
            let v10 = cut(mesh, a1, b0);
            let v11 = cut(mesh, a1, b1);
            // quad v00, v10, v11, v01 in ring order
            push_oriented(mesh, v00, v10, v11);
            push_oriented(mesh, v00, v11, v01);
        }
        _ => unreachable!(),
    }
}
