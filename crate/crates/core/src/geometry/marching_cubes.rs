use std::collections::HashMap;
use std::sync::OnceLock;

use super::{cross, dot, sub, Point3, TriMesh, VoxelGrid};
use crate::error::{Error, Result};

/// Corner `c` sits at offset `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
fn corner_pos(c: usize) -> Point3 {
    [(c & 1) as f64, (c >> 1 & 1) as f64, (c >> 2 & 1) as f64]
}

/// Cube edges as corner pairs.
const EDGES: [(usize, usize); 12] =
    [(0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3), (4, 6), (5, 7), (0, 4), (1, 5), (2, 6), (3, 7)];

/// Faces as cyclic corner quadruples with their outward normals.
const FACES: [([usize; 4], Point3); 6] = [
    ([0, 2, 6, 4], [-1.0, 0.0, 0.0]),
    ([1, 3, 7, 5], [1.0, 0.0, 0.0]),
    ([0, 1, 5, 4], [0.0, -1.0, 0.0]),
    ([2, 3, 7, 6], [0.0, 1.0, 0.0]),
    ([0, 1, 3, 2], [0.0, 0.0, -1.0]),
    ([4, 5, 7, 6], [0.0, 0.0, 1.0]),
];

fn edge_between(a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    EDGES.iter().position(|&e| e == key).expect("corners share an edge")
}

fn edge_mid(e: usize) -> Point3 {
    let (a, b) = EDGES[e];
    let (pa, pb) = (corner_pos(a), corner_pos(b));
    std::array::from_fn(|i| 0.5 * (pa[i] + pb[i]))
}

/// Vertex ids at or above this refer to the center of `Case::loops[id - CENTER_BASE]`.
const CENTER_BASE: usize = 12;

struct Case {
    /// Outward-wound triangles over edge ids (and loop-center ids).
    tris: Vec<[u8; 3]>,
    loops: Vec<Vec<u8>>,
}

/// Triangulation for one inside-corner mask.
///
/// Each face contributes oriented segments between its crossing edges; faces
/// with two diagonal inside corners cut each inside corner off separately.
/// Neighbouring cubes see identical face decisions, so the surface closes.
fn build_case(mask: usize) -> Case {
    let inside = |c: usize| mask >> c & 1 == 1;
    let mut next: [Option<usize>; 12] = [None; 12];
    for (quad, normal) in FACES {
        let states: Vec<bool> = quad.iter().map(|&c| inside(c)).collect();
        let crossing: Vec<usize> = (0..4).filter(|&k| states[k] != states[(k + 1) % 4]).collect();
        // Segments as (edge, edge, an inside corner beside them).
        let mut segs = Vec::new();
        match crossing.len() {
            2 => {
                let (k0, k1) = (crossing[0], crossing[1]);
                let e0 = edge_between(quad[k0], quad[(k0 + 1) % 4]);
                let e1 = edge_between(quad[k1], quad[(k1 + 1) % 4]);
                let c = *quad.iter().find(|&&c| inside(c)).unwrap();
                segs.push((e0, e1, c));
            }
            4 => {
                for k in (0..4).filter(|&k| states[k]) {
                    let prev = edge_between(quad[(k + 3) % 4], quad[k]);
                    let nxt = edge_between(quad[k], quad[(k + 1) % 4]);
                    segs.push((prev, nxt, quad[k]));
                }
            }
            _ => {}
        }
        for (e0, e1, c) in segs {
            let (p, q) = (edge_mid(e0), edge_mid(e1));
            let left = dot(cross(sub(q, p), sub(corner_pos(c), p)), normal) > 0.0;
            let (from, to) = if left { (e0, e1) } else { (e1, e0) };
            debug_assert!(next[from].is_none());
            next[from] = Some(to);
        }
    }
    let mut seen = [false; 12];
    let mut tris = Vec::new();
    let mut loops: Vec<Vec<u8>> = Vec::new();
    for start in 0..12 {
        if seen[start] || next[start].is_none() {
            continue;
        }
        let mut ring = vec![start];
        seen[start] = true;
        let mut cur = next[start].unwrap();
        while cur != start {
            seen[cur] = true;
            ring.push(cur);
            cur = next[cur].expect("segments close into loops");
        }
        // Loops run clockwise seen from outside, so fans are emitted reversed.
        // A fan diagonal joining two vertices on one face could coincide with
        // the neighbouring cube's diagonal; such loops fan from a center vertex.
        let n = ring.len();
        let safe_start = (0..n).find(|&s| (2..n - 1).all(|i| !share_face(ring[s], ring[(s + i) % n])));
        match safe_start {
            Some(s) => {
                for i in 1..n - 1 {
                    tris.push([ring[s] as u8, ring[(s + i + 1) % n] as u8, ring[(s + i) % n] as u8]);
                }
            }
            None => {
                let center = (CENTER_BASE + loops.len()) as u8;
                for i in 0..n {
                    tris.push([center, ring[(i + 1) % n] as u8, ring[i] as u8]);
                }
                loops.push(ring.iter().map(|&e| e as u8).collect());
            }
        }
    }
    Case { tris, loops }
}

fn share_face(a: usize, b: usize) -> bool {
    FACES.iter().any(|(quad, _)| {
        let on = |e: usize| {
            let (p, q) = EDGES[e];
            quad.contains(&p) && quad.contains(&q)
        };
        on(a) && on(b)
    })
}

fn case_table() -> &'static [Case] {
    static TABLE: OnceLock<Vec<Case>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(build_case).collect())
}

/// Extracts the `iso` level set of a node-sampled field. Node `(i, j, k)` sits
/// at `origin + spacing·(i, j, k)`; values are x-fastest. The field is padded
/// with an outside value so the result is closed.
pub fn marching_cubes_field(
    values: &[f32],
    dims: [usize; 3],
    origin: Point3,
    spacing: f64,
    iso: f64,
) -> Result<TriMesh> {
    if values.len() != dims.iter().product::<usize>() || dims.iter().any(|&d| d < 2) {
        return Err(Error::config(format!("field of {} values does not match lattice {dims:?}", values.len())));
    }
    let pad = if iso > 0.0 { 0.0 } else { iso - 1.0 };
    let [nx, ny, nz] = dims.map(|d| d + 2);
    let sample = |i: usize, j: usize, k: usize| -> f64 {
        if i == 0 || j == 0 || k == 0 || i > dims[0] || j > dims[1] || k > dims[2] {
            pad
        } else {
            values[(i - 1) + dims[0] * ((j - 1) + dims[1] * (k - 1))] as f64
        }
    };
    let node_pos = |i: usize, j: usize, k: usize| -> Point3 {
        [
            origin[0] + (i as f64 - 1.0) * spacing,
            origin[1] + (j as f64 - 1.0) * spacing,
            origin[2] + (k as f64 - 1.0) * spacing,
        ]
    };

    let table = case_table();
    let mut mesh = TriMesh::empty();
    let mut ids: HashMap<usize, u32> = HashMap::new();
    let mut corner_vals = [0.0f64; 8];
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut mask = 0usize;
                for (c, v) in corner_vals.iter_mut().enumerate() {
                    *v = sample(i + (c & 1), j + (c >> 1 & 1), k + (c >> 2 & 1));
                    if *v >= iso {
                        mask |= 1 << c;
                    }
                }
                let case = &table[mask];
                if case.tris.is_empty() {
                    continue;
                }
                let mut local = [u32::MAX; CENTER_BASE];
                for &e in case.tris.iter().flatten() {
                    let e = e as usize;
                    if e >= CENTER_BASE || local[e] != u32::MAX {
                        continue;
                    }
                    let (a, b) = EDGES[e];
                    let (ia, ja, ka) = (i + (a & 1), j + (a >> 1 & 1), k + (a >> 2 & 1));
                    let axis = (a ^ b).trailing_zeros() as usize;
                    let key = 3 * (ia + nx * (ja + ny * ka)) + axis;
                    local[e] = *ids.entry(key).or_insert_with(|| {
                        let (va, vb) = (corner_vals[a], corner_vals[b]);
                        let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
                        let mut p = node_pos(ia, ja, ka);
                        p[axis] += t * spacing;
                        mesh.vertices.push(p);
                        (mesh.vertices.len() - 1) as u32
                    });
                }
                let first_center = mesh.vertices.len() as u32;
                for ring in &case.loops {
                    let mut c = [0.0; 3];
                    for &e in ring {
                        let p = mesh.vertices[local[e as usize] as usize];
                        (0..3).for_each(|a| c[a] += p[a] / ring.len() as f64);
                    }
                    mesh.vertices.push(c);
                }
                for tri in &case.tris {
                    mesh.triangles.push(tri.map(|e| {
                        let e = e as usize;
                        if e >= CENTER_BASE {
                            first_center + (e - CENTER_BASE) as u32
                        } else {
                            local[e]
                        }
                    }));
                }
            }
        }
    }
    Ok(mesh)
}

/// Level set of a voxel grid with nodes at voxel centers.
pub fn marching_cubes(grid: &VoxelGrid, iso: f64) -> TriMesh {
    let n = grid.resolution;
    marching_cubes_field(&grid.values, [n, n, n], grid.center(0, 0, 0), grid.voxel_size, iso)
        .expect("validated voxel grid")
}
