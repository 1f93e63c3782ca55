//! Median-split AABB tree over mesh faces.
//!
//! Used to accelerate closest-point queries (grid baking, batch SDF
//! evaluation) and ray casts (rasterizer oracle, parity sign). Brute force
//! stays the reference path; results agree exactly since both search the
//! same triangles.

use super::{Aabb, Mesh};
use crate::math::{self, V3};

struct Node {
    bbox: Aabb,
    /// Leaf: range into `order`. Inner: left child is `self+1`, right is `right`.
    right: usize,
    start: usize,
    count: usize,
}

pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

const LEAF_SIZE: usize = 8;

impl Bvh {
    pub fn build(mesh: &Mesh) -> Self {
        let n = mesh.faces.len();
        let mut order: Vec<usize> = (0..n).collect();
        let centroids: Vec<V3> = (0..n)
            .map(|f| {
                let [a, b, c] = mesh.face_vertices(f);
                math::scale(math::add(math::add(a, b), c), 1.0 / 3.0)
            })
            .collect();
        let boxes: Vec<Aabb> = (0..n)
            .map(|f| {
                let mut bb = Aabb::empty();
                for v in mesh.face_vertices(f) {
                    bb.grow(v);
                }
                bb
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 2);
        Self::build_range(&mut nodes, &mut order, &centroids, &boxes, 0, n);
        Bvh { nodes, order }
    }

    fn build_range(
        nodes: &mut Vec<Node>,
        order: &mut [usize],
        centroids: &[V3],
        boxes: &[Aabb],
        start: usize,
        count: usize,
    ) -> usize {
        let me = nodes.len();
        let mut bbox = Aabb::empty();
        for &f in &order[start..start + count] {
            bbox = bbox.union(&boxes[f]);
        }
        nodes.push(Node {
            bbox,
            right: 0,
            start,
            count,
        });
        if count <= LEAF_SIZE {
            return me;
        }
        // Split along the widest centroid axis at the median.
        let mut cmin = [f64::INFINITY; 3];
        let mut cmax = [f64::NEG_INFINITY; 3];
        for &f in &order[start..start + count] {
            for i in 0..3 {
                cmin[i] = cmin[i].min(centroids[f][i]);
                cmax[i] = cmax[i].max(centroids[f][i]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (cmax[a] - cmin[a]).partial_cmp(&(cmax[b] - cmin[b])).unwrap())
            .unwrap();
        let mid = count / 2;
        order[start..start + count].select_nth_unstable_by(mid, |&a, &b| {
            centroids[a][axis]
                .partial_cmp(&centroids[b][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        Self::build_range(nodes, order, centroids, boxes, start, mid);
        let right = Self::build_range(nodes, order, centroids, boxes, start + mid, count - mid);
        nodes[me].right = right;
        nodes[me].count = 0; // mark inner
        me
    }

    /// Closest surface point to `p`: (squared distance, face, point, barycentric).
    pub fn closest_point(&self, mesh: &Mesh, p: V3) -> (f64, usize, V3, [f64; 3]) {
        let mut best = (f64::INFINITY, 0usize, [0.0; 3], [0.0; 3]);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bbox.dist_sq(p) >= best.0 {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = mesh.face_vertices(f);
                    let (q, w) = super::distance::closest_point_triangle(p, a, b, c);
                    let d2 = math::norm_sq(math::sub(p, q));
                    if d2 < best.0 {
                        best = (d2, f, q, w);
                    }
                }
            } else {
                // Visit the nearer child first.
                let l = ni + 1;
                let r = node.right;
                let dl = self.nodes[l].bbox.dist_sq(p);
                let dr = self.nodes[r].bbox.dist_sq(p);
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }

    /// Nearest ray hit with t > t_min: (t, face, barycentric).
    pub fn ray_intersect(
        &self,
        mesh: &Mesh,
        origin: V3,
        dir: V3,
        t_min: f64,
    ) -> Option<(f64, usize, [f64; 3])> {
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            match node.bbox.ray_range(origin, dir) {
                None => continue,
                Some((t0, t1)) => {
                    if t1 < t_min {
                        continue;
                    }
                    if let Some((tb, _, _)) = best {
                        if t0 > tb {
                            continue;
                        }
                    }
                }
            }
            if node.count > 0 {
                for &f in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = mesh.face_vertices(f);
                    if let Some((t, bary)) = ray_triangle(origin, dir, a, b, c) {
                        if t > t_min && best.map_or(true, |(tb, _, _)| t < tb) {
                            best = Some((t, f, bary));
                        }
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(ni + 1);
            }
        }
        best
    }

    /// Number of ray/surface crossings for t > 0. Returns `None` when a hit
    /// grazes a triangle border or runs parallel to a face, in which case the
    /// caller should retry with a perturbed direction.
    pub fn ray_crossings(&self, mesh: &Mesh, origin: V3, dir: V3) -> Option<usize> {
        let mut count = 0usize;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            match node.bbox.ray_range(origin, dir) {
                None => continue,
                Some((_, t1)) if t1 < 0.0 => continue,
                _ => {}
            }
            if node.count > 0 {
                for &f in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = mesh.face_vertices(f);
                    match ray_triangle_robust(origin, dir, a, b, c) {
                        HitClass::Miss => {}
                        HitClass::Hit(t) => {
                            if t > 0.0 {
                                count += 1;
                            } else if t.abs() < 1e-12 {
                                return None; // origin on surface
                            }
                        }
                        HitClass::Marginal => return None,
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(ni + 1);
            }
        }
        Some(count)
    }
}

/// Moller-Trumbore. Returns (t, barycentric) for hits strictly inside.
fn ray_triangle(origin: V3, dir: V3, a: V3, b: V3, c: V3) -> Option<(f64, [f64; 3])> {
    let e1 = math::sub(b, a);
    let e2 = math::sub(c, a);
    let pv = math::cross(dir, e2);
    let det = math::dot(e1, pv);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = math::sub(origin, a);
    let u = math::dot(tv, pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = math::cross(tv, e1);
    let v = math::dot(dir, qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = math::dot(e2, qv) * inv;
    Some((t, [1.0 - u - v, u, v]))
}

enum HitClass {
    Miss,
    Hit(f64),
    Marginal,
}

const EDGE_EPS: f64 = 1e-10;

fn ray_triangle_robust(origin: V3, dir: V3, a: V3, b: V3, c: V3) -> HitClass {
    let e1 = math::sub(b, a);
    let e2 = math::sub(c, a);
    let pv = math::cross(dir, e2);
    let det = math::dot(e1, pv);
    if det.abs() < 1e-14 {
        // Parallel; cannot distinguish graze from miss.
        let n = math::cross(e1, e2);
        let d = math::dot(n, math::sub(origin, a));
        if d.abs() < 1e-12 * math::norm(n).max(1e-300) {
            return HitClass::Marginal;
        }
        return HitClass::Miss;
    }
    let inv = 1.0 / det;
    let tv = math::sub(origin, a);
    let u = math::dot(tv, pv) * inv;
    let qv = math::cross(tv, e1);
    let v = math::dot(dir, qv) * inv;
    let w = 1.0 - u - v;
    if u < -EDGE_EPS || v < -EDGE_EPS || w < -EDGE_EPS {
        return HitClass::Miss;
    }
    if u < EDGE_EPS || v < EDGE_EPS || w < EDGE_EPS {
        return HitClass::Marginal;
    }
    HitClass::Hit(math::dot(e2, qv) * inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_tetrahedron;

    #[test]
    fn bvh_matches_brute_force() {
        let m = unit_tetrahedron();
        let tree = Bvh::build(&m);
        let probes = [
            [0.2, 0.2, 0.2],
            [2.0, -1.0, 0.5],
            [0.0, 0.0, 5.0],
            [-0.3, -0.3, -0.3],
        ];
        for p in probes {
            let fast = tree.closest_point(&m, p);
            let slow = crate::mesh::signed_distance(&m, p, None);
            approx::assert_abs_diff_eq!(fast.0.sqrt(), slow.distance.abs(), epsilon = 1e-12);
        }
    }

    #[test]
    fn parity_inside_outside() {
        let m = unit_tetrahedron();
        let tree = Bvh::build(&m);
        let dir = math::normalize([0.31, 0.75, 0.59]);
        let inside = tree.ray_crossings(&m, [0.15, 0.15, 0.15], dir).unwrap();
        let outside = tree.ray_crossings(&m, [3.0, 3.0, 3.0], dir).unwrap();
        assert_eq!(inside % 2, 1);
        assert_eq!(outside % 2, 0);
    }

    #[test]
    fn ray_intersect_front_face() {
        let m = unit_tetrahedron();
        let tree = Bvh::build(&m);
        let hit = tree
            .ray_intersect(&m, [0.2, 0.2, 5.0], [0.0, 0.0, -1.0], 0.0)
            .unwrap();
        // Should hit the slanted face x+y+z=1 first at z = 0.6.
        approx::assert_abs_diff_eq!(hit.0, 4.4, epsilon = 1e-12);
    }
}
