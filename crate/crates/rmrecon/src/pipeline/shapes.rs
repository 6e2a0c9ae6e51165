//! Analytic test shapes: subdivided icospheres and superquadrics.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::sdfgrid::TriMesh;

/// Icosahedron subdivided `level` times and projected onto a sphere of
/// radius `r`. Faces wind outward.
pub fn icosphere(r: f64, level: u32) -> TriMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = vec![
        Vector3::new(-1.0, phi, 0.0),
        Vector3::new(1.0, phi, 0.0),
        Vector3::new(-1.0, -phi, 0.0),
        Vector3::new(1.0, -phi, 0.0),
        Vector3::new(0.0, -1.0, phi),
        Vector3::new(0.0, 1.0, phi),
        Vector3::new(0.0, -1.0, -phi),
        Vector3::new(0.0, 1.0, -phi),
        Vector3::new(phi, 0.0, -1.0),
        Vector3::new(phi, 0.0, 1.0),
        Vector3::new(-phi, 0.0, -1.0),
        Vector3::new(-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|v| v.normalize())
    .collect();

    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..level {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0u32; 3];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[e] = *midpoint.entry(key).or_insert_with(|| {
                    let m = (vertices[a as usize] + vertices[b as usize]).normalize();
                    vertices.push(m);
                    (vertices.len() - 1) as u32
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }

    TriMesh {
        vertices: vertices.into_iter().map(|v| r * v).collect(),
        faces,
    }
}

/// Superquadric (superellipsoid) surface mesh:
/// `x = sx * sgn(cos eta)|cos eta|^e1 * sgn(cos omega)|cos omega|^e2`, etc.
/// Tessellated on a (latitude, longitude) grid with welded pole fans.
pub fn superquadric(e1: f64, e2: f64, scale: Vector3<f64>, segments: usize) -> TriMesh {
    let spow = |v: f64, e: f64| -> f64 { v.signum() * v.abs().powf(e) };
    let n_lat = segments.max(8);
    let n_lon = 2 * segments.max(8);

    let mut vertices = Vec::new();
    // interior latitude rings (exclude the poles)
    for i in 1..n_lat {
        let eta = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / n_lat as f64;
        for j in 0..n_lon {
            let omega = std::f64::consts::TAU * j as f64 / n_lon as f64;
            let ce = eta.cos();
            let se = eta.sin();
            let co = omega.cos();
            let so = omega.sin();
            vertices.push(Vector3::new(
                scale.x * spow(ce, e1) * spow(co, e2),
                scale.y * spow(ce, e1) * spow(so, e2),
                scale.z * spow(se, e1),
            ));
        }
    }
    let south = vertices.len() as u32;
    vertices.push(Vector3::new(0.0, 0.0, -scale.z));
    let north = vertices.len() as u32;
    vertices.push(Vector3::new(0.0, 0.0, scale.z));

    let ring = |i: usize, j: usize| -> u32 { ((i - 1) * n_lon + (j % n_lon)) as u32 };
    let mut faces = Vec::new();
    // pole fans (outward winding: +z is "north")
    for j in 0..n_lon {
        faces.push([south, ring(1, j + 1), ring(1, j)]);
        faces.push([north, ring(n_lat - 1, j), ring(n_lat - 1, j + 1)]);
    }
    for i in 1..n_lat - 1 {
        for j in 0..n_lon {
            let a = ring(i, j);
            let b = ring(i, j + 1);
            let c = ring(i + 1, j);
            let d = ring(i + 1, j + 1);
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }

    TriMesh { vertices, faces }.cleaned(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_is_closed_and_round() {
        let mesh = icosphere(2.0, 3);
        let (boundary, nonmanifold) = mesh.edge_audit();
        assert_eq!(boundary, 0);
        assert_eq!(nonmanifold, 0);
        for v in &mesh.vertices {
            assert!((v.norm() - 2.0).abs() < 1e-12);
        }
        // outward winding
        for f in 0..mesh.faces.len() {
            let n = mesh.face_normal_raw(f);
            let [a, b, c] = mesh.face_vertices(f);
            assert!(n.dot(&((a + b + c) / 3.0)) > 0.0);
        }
    }

    #[test]
    fn superquadric_sphere_case() {
        // e1 = e2 = 1 is an ellipsoid; with equal scales, a sphere
        let mesh = superquadric(1.0, 1.0, Vector3::repeat(1.5), 24);
        let (boundary, nonmanifold) = mesh.edge_audit();
        assert_eq!(boundary, 0, "superquadric must be closed");
        assert_eq!(nonmanifold, 0);
        for v in &mesh.vertices {
            assert!((v.norm() - 1.5).abs() < 1e-9);
        }
    }

    #[test]
    fn superquadric_box_like_stays_in_bounds() {
        let scale = Vector3::new(1.0, 0.8, 0.6);
        let mesh = superquadric(0.3, 0.3, scale, 16);
        for v in &mesh.vertices {
            assert!(v.x.abs() <= scale.x + 1e-9);
            assert!(v.y.abs() <= scale.y + 1e-9);
            assert!(v.z.abs() <= scale.z + 1e-9);
        }
    }
}
