//! Axis-aligned BVH over mesh triangles: nearest ray hit, segment
//! occlusion, and closest-point queries.

use nalgebra::Vector3;

use crate::sdfgrid::TriMesh;

#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow_point(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn grow(&mut self, other: &Aabb) {
        self.min = self.min.inf(&other.min);
        self.max = self.max.sup(&other.max);
    }

    /// Slab test; returns the entry distance if the ray hits within
    /// [0, t_max], treating the origin-inside case as entry 0.
    #[inline]
    fn ray_entry(&self, orig: &Vector3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let ta = (self.min[a] - orig[a]) * inv_dir[a];
            let tb = (self.max[a] - orig[a]) * inv_dir[a];
            let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            if lo.is_nan() || hi.is_nan() {
                // ray parallel to slab: inside iff origin within bounds
                if orig[a] < self.min[a] || orig[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }

    #[inline]
    fn sq_distance(&self, p: &Vector3<f64>) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let v = if p[a] < self.min[a] {
                self.min[a] - p[a]
            } else if p[a] > self.max[a] {
                p[a] - self.max[a]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

#[derive(Debug, Clone)]
struct Node {
    aabb: Aabb,
    /// Leaf: (first, count) into `order`; inner: (left child, right child).
    a: u32,
    b: u32,
    is_leaf: bool,
}

/// Ray/point acceleration structure. Triangle data is flattened at build
/// time; face ids refer to the source mesh.
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    v0: Vec<Vector3<f64>>,
    e1: Vec<Vector3<f64>>,
    e2: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub face: u32,
    /// Barycentric weights of vertices 1 and 2 (vertex 0 gets 1 - u - v).
    pub u: f64,
    pub v: f64,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Self {
        let n = mesh.faces.len();
        let mut v0 = Vec::with_capacity(n);
        let mut e1 = Vec::with_capacity(n);
        let mut e2 = Vec::with_capacity(n);
        let mut boxes = Vec::with_capacity(n);
        let mut centroids = Vec::with_capacity(n);
        for f in 0..n {
            let [a, b, c] = mesh.face_vertices(f);
            v0.push(a);
            e1.push(b - a);
            e2.push(c - a);
            let mut bb = Aabb::empty();
            bb.grow_point(&a);
            bb.grow_point(&b);
            bb.grow_point(&c);
            boxes.push(bb);
            centroids.push((a + b + c) / 3.0);
        }

        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n.max(1));
        if n > 0 {
            build_node(&mut nodes, &mut order, &boxes, &centroids, 0, n);
        }
        Bvh {
            nodes,
            order,
            v0,
            e1,
            e2,
        }
    }

    /// Möller-Trumbore intersection against one triangle.
    #[inline]
    fn intersect_tri(
        &self,
        face: u32,
        orig: &Vector3<f64>,
        dir: &Vector3<f64>,
        cull_backface: bool,
    ) -> Option<Hit> {
        let f = face as usize;
        let pvec = dir.cross(&self.e2[f]);
        // det > 0 for front-facing triangles (CCW winding, normal toward ray origin)
        let det = self.e1[f].dot(&pvec);
        if cull_backface {
            if det <= 1e-300 {
                return None;
            }
        } else if det.abs() <= 1e-300 {
            return None;
        }
        let inv_det = 1.0 / det;
        let tvec = orig - self.v0[f];
        let u = tvec.dot(&pvec) * inv_det;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let qvec = tvec.cross(&self.e1[f]);
        let v = dir.dot(&qvec) * inv_det;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = self.e2[f].dot(&qvec) * inv_det;
        if t <= 0.0 {
            return None;
        }
        Some(Hit { t, face, u, v })
    }

    /// Nearest hit along the ray. Exact-depth ties resolve to the lower
    /// face id, so the result does not depend on traversal order.
    pub fn nearest_hit(
        &self,
        orig: &Vector3<f64>,
        dir: &Vector3<f64>,
        cull_backface: bool,
    ) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv_dir = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<Hit> = None;
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            let t_max = best.map_or(f64::INFINITY, |h| h.t);
            let Some(entry) = node.aabb.ray_entry(orig, &inv_dir, t_max) else {
                continue;
            };
            if entry > t_max {
                continue;
            }
            if node.is_leaf {
                for k in node.a..node.a + node.b {
                    let face = self.order[k as usize];
                    if let Some(hit) = self.intersect_tri(face, orig, dir, cull_backface) {
                        let better = match &best {
                            None => true,
                            Some(b) => hit.t < b.t || (hit.t == b.t && hit.face < b.face),
                        };
                        if better {
                            best = Some(hit);
                        }
                    }
                }
            } else {
                // Visit the nearer child first for earlier pruning.
                let (l, r) = (node.a, node.b);
                let el = self.nodes[l as usize].aabb.ray_entry(orig, &inv_dir, t_max);
                let er = self.nodes[r as usize].aabb.ray_entry(orig, &inv_dir, t_max);
                match (el, er) {
                    (Some(tl), Some(tr)) => {
                        if tl <= tr {
                            stack.push(r);
                            stack.push(l);
                        } else {
                            stack.push(l);
                            stack.push(r);
                        }
                    }
                    (Some(_), None) => stack.push(l),
                    (None, Some(_)) => stack.push(r),
                    (None, None) => {}
                }
            }
        }
        best
    }

    /// True if any triangle (either side) blocks the open segment
    /// `orig + t*dir, t in (t_min, t_max)`.
    pub fn occluded(
        &self,
        orig: &Vector3<f64>,
        dir: &Vector3<f64>,
        t_min: f64,
        t_max: f64,
    ) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let inv_dir = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.aabb.ray_entry(orig, &inv_dir, t_max).is_none() {
                continue;
            }
            if node.is_leaf {
                for k in node.a..node.a + node.b {
                    let face = self.order[k as usize];
                    if let Some(hit) = self.intersect_tri(face, orig, dir, false) {
                        if hit.t > t_min && hit.t < t_max {
                            return true;
                        }
                    }
                }
            } else {
                stack.push(node.a);
                stack.push(node.b);
            }
        }
        false
    }

    /// Squared distance from a point to the nearest triangle.
    pub fn sq_distance(&self, p: &Vector3<f64>) -> f64 {
        if self.nodes.is_empty() {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        // stack of (node, lower bound)
        let mut stack = vec![(0u32, self.nodes[0].aabb.sq_distance(p))];
        while let Some((ni, bound)) = stack.pop() {
            if bound >= best {
                continue;
            }
            let node = &self.nodes[ni as usize];
            if node.is_leaf {
                for k in node.a..node.a + node.b {
                    let f = self.order[k as usize] as usize;
                    let d = sq_dist_point_triangle(p, &self.v0[f], &self.e1[f], &self.e2[f]);
                    best = best.min(d);
                }
            } else {
                let dl = self.nodes[node.a as usize].aabb.sq_distance(p);
                let dr = self.nodes[node.b as usize].aabb.sq_distance(p);
                // push the farther child first so the nearer pops first
                if dl <= dr {
                    stack.push((node.b, dr));
                    stack.push((node.a, dl));
                } else {
                    stack.push((node.a, dl));
                    stack.push((node.b, dr));
                }
            }
        }
        best
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [u32],
    boxes: &[Aabb],
    centroids: &[Vector3<f64>],
    first: usize,
    count: usize,
) -> u32 {
    let mut aabb = Aabb::empty();
    for &f in order[..count].iter() {
        aabb.grow(&boxes[f as usize]);
    }
    let idx = nodes.len() as u32;
    if count <= LEAF_SIZE {
        nodes.push(Node {
            aabb,
            a: first as u32,
            b: count as u32,
            is_leaf: true,
        });
        return idx;
    }

    // split at the median of centroids along the widest centroid axis
    let mut cmin = Vector3::repeat(f64::INFINITY);
    let mut cmax = Vector3::repeat(f64::NEG_INFINITY);
    for &f in order[..count].iter() {
        cmin = cmin.inf(&centroids[f as usize]);
        cmax = cmax.sup(&centroids[f as usize]);
    }
    let ext = cmax - cmin;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = count / 2;
    order[..count].select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .partial_cmp(&centroids[b as usize][axis])
            .unwrap()
            .then(a.cmp(&b))
    });

    nodes.push(Node {
        aabb,
        a: 0,
        b: 0,
        is_leaf: false,
    });
    let (left_slice, right_slice) = order.split_at_mut(mid);
    let l = build_node(nodes, left_slice, boxes, centroids, first, mid);
    let r = build_node(nodes, right_slice, boxes, centroids, first + mid, count - mid);
    nodes[idx as usize].a = l;
    nodes[idx as usize].b = r;
    idx
}

/// Squared distance from p to triangle (v0, v0+e1, v0+e2), Ericson-style
/// closest-point classification.
pub fn sq_dist_point_triangle(
    p: &Vector3<f64>,
    v0: &Vector3<f64>,
    e1: &Vector3<f64>,
    e2: &Vector3<f64>,
) -> f64 {
    let ap = p - v0;
    let d1 = e1.dot(&ap);
    let d2 = e2.dot(&ap);
    let a11 = e1.dot(e1);
    let a12 = e1.dot(e2);
    let a22 = e2.dot(e2);

    // vertex region v0
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm_squared();
    }
    let bp = ap - e1;
    let d3 = e1.dot(&bp);
    let d4 = e2.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm_squared();
    }
    let cp = ap - e2;
    let d5 = e1.dot(&cp);
    let d6 = e2.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm_squared();
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        return (ap - t * e1).norm_squared();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        return (ap - t * e2).norm_squared();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        let closest = e1 + t * (e2 - e1);
        return (ap - closest).norm_squared();
    }

    // interior
    let denom = a11 * a22 - a12 * a12;
    if denom <= 0.0 {
        // degenerate triangle: fall back to the nearest edge
        let t1 = (d1 / a11).clamp(0.0, 1.0);
        let q1 = (ap - t1 * e1).norm_squared();
        let t2 = (d2 / a22).clamp(0.0, 1.0);
        let q2 = (ap - t2 * e2).norm_squared();
        return q1.min(q2);
    }
    let u = (a22 * d1 - a12 * d2) / denom;
    let v = (a11 * d2 - a12 * d1) / denom;
    (ap - u * e1 - v * e2).norm_squared()
}
