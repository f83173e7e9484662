use super::{add, cross, dot, scale, sub, Point3, TriMesh};

const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Point3,
    hi: Point3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb { lo: [f64::INFINITY; 3], hi: [f64::NEG_INFINITY; 3] }
    }

    fn grow(&mut self, p: Point3) {
        for a in 0..3 {
            self.lo[a] = self.lo[a].min(p[a]);
            self.hi[a] = self.hi[a].max(p[a]);
        }
    }

    fn union(&mut self, o: &Aabb) {
        self.grow(o.lo);
        self.grow(o.hi);
    }

    fn dist2(&self, p: Point3) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let e = (self.lo[a] - p[a]).max(0.0).max(p[a] - self.hi[a]);
            d += e * e;
        }
        d
    }

    /// Slab test; returns the entry parameter when the ray hits within `[0, t_max]`.
    fn ray_entry(&self, o: Point3, inv: Point3, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for a in 0..3 {
            let mut ta = (self.lo[a] - o[a]) * inv[a];
            let mut tb = (self.hi[a] - o[a]) * inv[a];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            // NaN from 0 * inf means the origin lies on the slab plane of a parallel ray.
            if ta.is_nan() || tb.is_nan() {
                if o[a] < self.lo[a] || o[a] > self.hi[a] {
                    return None;
                }
                continue;
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: `start..start+count` into `order`; interior: children at `start` and `start+1`.
    start: usize,
    count: usize,
}

/// Bounding-volume hierarchy over a mesh's triangles.
#[derive(Clone, Debug)]
pub struct Bvh<'m> {
    mesh: &'m TriMesh,
    nodes: Vec<Node>,
    order: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub triangle: usize,
    pub point: Point3,
}

impl<'m> Bvh<'m> {
    pub fn new(mesh: &'m TriMesh) -> Self {
        let n = mesh.triangles.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let boxes: Vec<Aabb> = (0..n)
            .map(|t| {
                let mut b = Aabb::empty();
                mesh.corners(t).iter().for_each(|&p| b.grow(p));
                b
            })
            .collect();
        let centroids: Vec<Point3> = boxes.iter().map(|b| scale(add(b.lo, b.hi), 0.5)).collect();
        let mut nodes = vec![Node { bounds: Aabb::empty(), start: 0, count: n }];
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let (start, count) = (nodes[ni].start, nodes[ni].count);
            let mut bounds = Aabb::empty();
            let mut cbox = Aabb::empty();
            for &t in &order[start..start + count] {
                bounds.union(&boxes[t as usize]);
                cbox.grow(centroids[t as usize]);
            }
            nodes[ni].bounds = bounds;
            if count <= LEAF_SIZE {
                continue;
            }
            let ext = sub(cbox.hi, cbox.lo);
            let axis = if ext[0] >= ext[1] && ext[0] >= ext[2] {
                0
            } else if ext[1] >= ext[2] {
                1
            } else {
                2
            };
            let mid = count / 2;
            order[start..start + count].select_nth_unstable_by(mid, |&a, &b| {
                centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis]).then(a.cmp(&b))
            });
            let left = nodes.len();
            nodes.push(Node { bounds: Aabb::empty(), start, count: mid });
            nodes.push(Node { bounds: Aabb::empty(), start: start + mid, count: count - mid });
            nodes[ni].start = left;
            nodes[ni].count = 0;
            stack.push(left);
            stack.push(left + 1);
        }
        Bvh { mesh, nodes, order }
    }

    pub fn mesh(&self) -> &TriMesh {
        self.mesh
    }

    fn is_leaf(&self, ni: usize) -> bool {
        self.nodes[ni].count > 0 || self.order.is_empty()
    }

    fn leaf_tris(&self, ni: usize) -> &[u32] {
        let n = &self.nodes[ni];
        &self.order[n.start..n.start + n.count]
    }

    /// Exact closest surface point: `(distance, point, triangle)`; `None` for an empty mesh.
    pub fn closest_point(&self, p: Point3) -> Option<(f64, Point3, usize)> {
        if self.order.is_empty() {
            return None;
        }
        let mut best_d2 = f64::INFINITY;
        let mut best = (p, usize::MAX);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            if self.nodes[ni].bounds.dist2(p) > best_d2 {
                continue;
            }
            if self.is_leaf(ni) {
                for &t in self.leaf_tris(ni) {
                    let [a, b, c] = self.mesh.corners(t as usize);
                    let q = closest_on_triangle(p, a, b, c);
                    let d = sub(p, q);
                    let d2 = dot(d, d);
                    if d2 < best_d2 || (d2 == best_d2 && (t as usize) < best.1) {
                        best_d2 = d2;
                        best = (q, t as usize);
                    }
                }
            } else {
                let l = self.nodes[ni].start;
                let (dl, dr) = (self.nodes[l].bounds.dist2(p), self.nodes[l + 1].bounds.dist2(p));
                if dl <= dr {
                    stack.push(l + 1);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(l + 1);
                }
            }
        }
        Some((best_d2.sqrt(), best.0, best.1))
    }

    pub fn distance(&self, p: Point3) -> f64 {
        self.closest_point(p).map_or(f64::INFINITY, |c| c.0)
    }

    /// Whether any triangle lies within `eps` of `p`.
    pub fn within(&self, p: Point3, eps: f64) -> bool {
        let e2 = eps * eps;
        let mut stack = vec![0usize];
        if self.order.is_empty() {
            return false;
        }
        while let Some(ni) = stack.pop() {
            if self.nodes[ni].bounds.dist2(p) > e2 {
                continue;
            }
            if self.is_leaf(ni) {
                for &t in self.leaf_tris(ni) {
                    let [a, b, c] = self.mesh.corners(t as usize);
                    let d = sub(p, closest_on_triangle(p, a, b, c));
                    if dot(d, d) <= e2 {
                        return true;
                    }
                }
            } else {
                let l = self.nodes[ni].start;
                stack.push(l);
                stack.push(l + 1);
            }
        }
        false
    }

    fn for_each_ray_candidate(&self, o: Point3, dir: Point3, t_max: f64, mut f: impl FnMut(usize) -> f64) {
        if self.order.is_empty() {
            return;
        }
        let inv = [1.0 / dir[0], 1.0 / dir[1], 1.0 / dir[2]];
        let mut limit = t_max;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            if self.nodes[ni].bounds.ray_entry(o, inv, limit).is_none() {
                continue;
            }
            if self.is_leaf(ni) {
                for &t in self.leaf_tris(ni) {
                    limit = limit.min(f(t as usize));
                }
            } else {
                let l = self.nodes[ni].start;
                stack.push(l + 1);
                stack.push(l);
            }
        }
    }

    /// Number of triangles crossed by the ray `o + t·dir`, `t > 0`.
    pub fn crossings(&self, o: Point3, dir: Point3) -> usize {
        let mut n = 0;
        self.for_each_ray_candidate(o, dir, f64::INFINITY, |t| {
            let [a, b, c] = self.mesh.corners(t);
            if ray_triangle(o, dir, a, b, c).is_some() {
                n += 1;
            }
            f64::INFINITY
        });
        n
    }

    /// Nearest intersection along the ray; ties resolve to the lowest triangle index.
    pub fn first_hit(&self, o: Point3, dir: Point3) -> Option<RayHit> {
        let mut best: Option<(f64, usize)> = None;
        self.for_each_ray_candidate(o, dir, f64::INFINITY, |t| {
            let [a, b, c] = self.mesh.corners(t);
            if let Some(s) = ray_triangle(o, dir, a, b, c) {
                match best {
                    Some((bs, bt)) if s > bs || (s == bs && t > bt) => {}
                    _ => best = Some((s, t)),
                }
            }
            best.map_or(f64::INFINITY, |b| b.0)
        });
        best.map(|(t, triangle)| RayHit { t, triangle, point: add(o, scale(dir, t)) })
    }
}

/// Möller–Trumbore; returns `t > 0` for a hit inside the closed triangle.
pub(crate) fn ray_triangle(o: Point3, d: Point3, a: Point3, b: Point3, c: Point3) -> Option<f64> {
    let e1 = sub(b, a);
    let e2 = sub(c, a);
    let p = cross(d, e2);
    let det = dot(e1, p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = sub(o, a);
    let u = dot(s, p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = cross(s, e1);
    let v = dot(d, q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = dot(e2, q) * inv;
    (t > 0.0).then_some(t)
}

/// Closest point on triangle `abc` to `p` (Voronoi-region method).
pub fn closest_on_triangle(p: Point3, a: Point3, b: Point3, c: Point3) -> Point3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return add(a, scale(ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return add(a, scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, scale(sub(c, b), w));
    }
    let denom = va + vb + vc;
    if denom == 0.0 {
        // Degenerate (zero-area) triangle: fall back to its longest edge.
        let cands = [seg_closest(p, a, b), seg_closest(p, b, c), seg_closest(p, c, a)];
        return *cands
            .iter()
            .min_by(|x, y| dot(sub(p, **x), sub(p, **x)).total_cmp(&dot(sub(p, **y), sub(p, **y))))
            .unwrap();
    }
    let v = vb / denom;
    let w = vc / denom;
    add(a, add(scale(ab, v), scale(ac, w)))
}

fn seg_closest(p: Point3, a: Point3, b: Point3) -> Point3 {
    let ab = sub(b, a);
    let l = dot(ab, ab);
    if l == 0.0 {
        return a;
    }
    let t = (dot(sub(p, a), ab) / l).clamp(0.0, 1.0);
    add(a, scale(ab, t))
}
