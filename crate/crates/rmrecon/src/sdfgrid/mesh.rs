use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Indexed triangle mesh. Faces wind counter-clockwise seen from outside.
#[derive(Debug, Clone, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_vertices(&self, f: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized face normal (cross product of edge vectors).
    pub fn face_normal_raw(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.face_vertices(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_normal_raw(f).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Welds exactly coincident vertices and eliminates degenerate faces
    /// (area <= `min_area`) by collapsing their shortest edge, so removal
    /// never opens a hole in a closed mesh. Unused vertices are dropped.
    pub fn cleaned(&self, min_area: f64) -> TriMesh {
        let mut key_to_new: HashMap<[u64; 3], u32> = HashMap::new();
        let mut remap = Vec::with_capacity(self.vertices.len());
        let mut verts = Vec::new();
        for v in &self.vertices {
            let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
            let idx = *key_to_new.entry(key).or_insert_with(|| {
                verts.push(*v);
                (verts.len() - 1) as u32
            });
            remap.push(idx);
        }

        // Union-find over welded vertices; the lower index is the root and
        // keeps its position.
        let mut parent: Vec<u32> = (0..verts.len() as u32).collect();
        fn find(parent: &mut [u32], mut i: u32) -> u32 {
            while parent[i as usize] != i {
                parent[i as usize] = parent[parent[i as usize] as usize];
                i = parent[i as usize];
            }
            i
        }

        let faces: Vec<[u32; 3]> = self
            .faces
            .iter()
            .map(|f| {
                [
                    remap[f[0] as usize],
                    remap[f[1] as usize],
                    remap[f[2] as usize],
                ]
            })
            .collect();

        for _pass in 0..32 {
            let mut changed = false;
            for f in &faces {
                let a = find(&mut parent, f[0]);
                let b = find(&mut parent, f[1]);
                let c = find(&mut parent, f[2]);
                if a == b || b == c || a == c {
                    continue;
                }
                let (pa, pb, pc) = (
                    verts[a as usize],
                    verts[b as usize],
                    verts[c as usize],
                );
                let area = 0.5 * (pb - pa).cross(&(pc - pa)).norm();
                if area > min_area {
                    continue;
                }
                // collapse the shortest edge
                let d_ab = (pa - pb).norm_squared();
                let d_bc = (pb - pc).norm_squared();
                let d_ca = (pc - pa).norm_squared();
                let (u, v) = if d_ab <= d_bc && d_ab <= d_ca {
                    (a, b)
                } else if d_bc <= d_ca {
                    (b, c)
                } else {
                    (c, a)
                };
                let (lo, hi) = (u.min(v), u.max(v));
                parent[hi as usize] = lo;
                changed = true;
            }
            if !changed {
                break;
            }
        }

        let mut mesh = TriMesh {
            vertices: verts,
            faces: Vec::with_capacity(faces.len()),
        };
        for f in &faces {
            let tri = [
                find(&mut parent, f[0]),
                find(&mut parent, f[1]),
                find(&mut parent, f[2]),
            ];
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                continue;
            }
            mesh.faces.push(tri);
        }
        mesh.drop_unused_vertices();
        mesh
    }

    fn drop_unused_vertices(&mut self) {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if used[i] {
                remap[i] = verts.len() as u32;
                verts.push(*v);
            }
        }
        for f in &mut self.faces {
            for i in f.iter_mut() {
                *i = remap[*i as usize];
            }
        }
        self.vertices = verts;
    }

    /// Counts of (boundary edges, non-manifold edges). A closed 2-manifold
    /// mesh has zero of both.
    pub fn edge_audit(&self) -> (usize, usize) {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for f in &self.faces {
            for e in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let key = (e.0.min(e.1), e.0.max(e.1));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        let boundary = counts.values().filter(|&&c| c == 1).count();
        let nonmanifold = counts.values().filter(|&&c| c > 2).count();
        (boundary, nonmanifold)
    }
}

/// Writes an OBJ with shortest-round-trip float formatting, so parsing the
/// file back yields bit-identical vertices.
pub fn save_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z).map_err(io_err)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut mesh = TriMesh::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in coords.iter_mut() {
                    let tok = parts.next().ok_or_else(|| Error::ObjParse {
                        line: lineno + 1,
                        msg: "vertex needs 3 coordinates".into(),
                    })?;
                    *c = tok.parse().map_err(|_| Error::ObjParse {
                        line: lineno + 1,
                        msg: format!("bad coordinate {tok:?}"),
                    })?;
                }
                mesh.vertices.push(Vector3::from(coords));
            }
            Some("f") => {
                let mut idx = [0u32; 3];
                for (slot, tok) in idx.iter_mut().zip(parts.by_ref()) {
                    // accept v, v/vt, v/vt/vn references
                    let first = tok.split('/').next().unwrap_or(tok);
                    let i: i64 = first.parse().map_err(|_| Error::ObjParse {
                        line: lineno + 1,
                        msg: format!("bad face index {tok:?}"),
                    })?;
                    if i < 1 {
                        return Err(Error::ObjParse {
                            line: lineno + 1,
                            msg: format!("face index {i} out of range"),
                        });
                    }
                    *slot = (i - 1) as u32;
                }
                if parts.next().is_some() {
                    return Err(Error::ObjParse {
                        line: lineno + 1,
                        msg: "only triangle faces are supported".into(),
                    });
                }
                mesh.faces.push(idx);
            }
            _ => {}
        }
    }
    for f in &mesh.faces {
        if f.iter().any(|&i| i as usize >= mesh.vertices.len()) {
            return Err(Error::ObjParse {
                line: 0,
                msg: "face references missing vertex".into(),
            });
        }
    }
    Ok(mesh)
}
