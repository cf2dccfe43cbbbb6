use std::collections::HashMap;

use rayon::prelude::*;

use crate::mesh::MeshData;
use crate::spline::ImplicitField;
use crate::{Error, Result, Vec3};

pub const MIN_RESOLUTION: usize = 8;

/// Cube corner offsets, bit 0 = x, bit 1 = y, bit 2 = z.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// The six tetrahedra of the Kuhn split along the main diagonal 0-7. Every cube
/// face is cut along the diagonal through its lowest corner, so neighboring cubes
/// agree on shared faces and the extracted surface has no cracks.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

struct Lattice {
    res: usize,
    values: Vec<f64>,
}

impl Lattice {
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let m = self.res + 1;
        i + m * (j + m * k)
    }

    fn point(&self, idx: usize) -> Vec3 {
        let m = self.res + 1;
        let (i, j, k) = (idx % m, (idx / m) % m, idx / (m * m));
        Vec3::new(i as f64, j as f64, k as f64) / self.res as f64
    }
}

/// A triangle whose corners are lattice edges (pairs of lattice indices).
type EdgeTriangle = [(usize, usize); 3];

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn crossing(lat: &Lattice, e: (usize, usize)) -> Vec3 {
    let (va, vb) = (lat.values[e.0], lat.values[e.1]);
    let t = va / (va - vb);
    let (pa, pb) = (lat.point(e.0), lat.point(e.1));
    pa + (pb - pa) * t
}

/// Triangles of one tetrahedron, oriented from inside (`F < 0`) to outside.
fn polygonize_tet(lat: &Lattice, v: [usize; 4], out: &mut Vec<EdgeTriangle>) {
    let inside: Vec<usize> = v.iter().copied().filter(|&i| lat.values[i] < 0.0).collect();
    let outside: Vec<usize> = v.iter().copied().filter(|&i| lat.values[i] >= 0.0).collect();
    let mut tris: Vec<EdgeTriangle> = Vec::with_capacity(2);
    match (inside.len(), outside.len()) {
        (1, 3) => {
            let a = inside[0];
            tris.push([
                edge_key(a, outside[0]),
                edge_key(a, outside[1]),
                edge_key(a, outside[2]),
            ]);
        }
        (3, 1) => {
            let b = outside[0];
            tris.push([
                edge_key(inside[0], b),
                edge_key(inside[1], b),
                edge_key(inside[2], b),
            ]);
        }
        (2, 2) => {
            let (a0, a1, b0, b1) = (inside[0], inside[1], outside[0], outside[1]);
            // quad a0b0, a0b1, a1b1, a1b0 in cyclic order
            let q = [
                edge_key(a0, b0),
                edge_key(a0, b1),
                edge_key(a1, b1),
                edge_key(a1, b0),
            ];
            tris.push([q[0], q[1], q[2]]);
            tris.push([q[0], q[2], q[3]]);
        }
        _ => return,
    }
    let centroid = |ids: &[usize]| ids.iter().map(|&i| lat.point(i)).sum::<Vec3>() / ids.len() as f64;
    let outward = centroid(&outside) - centroid(&inside);
    for mut t in tris {
        let p = t.map(|e| crossing(lat, e));
        if (p[1] - p[0]).cross(&(p[2] - p[0])).dot(&outward) < 0.0 {
            t.swap(1, 2);
        }
        out.push(t);
    }
}

/// Zero level set of `field` on a `res`-cell lattice over the unit cube. Cubes are
/// split into six tetrahedra, crossings are linear along lattice edges (diagonals
/// included) and welded by edge, so the result is closed wherever the surface
/// stays inside the cube. Faces point along `+grad F`. Values `>= 0` count as outside.
pub fn marching_cubes<F: ImplicitField + ?Sized>(field: &F, res: usize) -> Result<MeshData> {
    if res < MIN_RESOLUTION {
        return Err(Error::InvalidArgument(format!(
            "extraction resolution {res} below {MIN_RESOLUTION}"
        )));
    }
    let m = res + 1;
    let h = 1.0 / res as f64;
    let mut values = vec![0.0; m * m * m];
    values.par_chunks_mut(m * m).enumerate().for_each(|(k, slab)| {
        for j in 0..m {
            for i in 0..m {
                slab[i + m * j] = field.value(&Vec3::new(i as f64 * h, j as f64 * h, k as f64 * h));
            }
        }
    });
    let lat = Lattice { res, values };
    let slabs: Vec<Vec<EdgeTriangle>> = (0..res)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::new();
            for j in 0..res {
                for i in 0..res {
                    let ids = CORNERS.map(|c| lat.index(i + c[0], j + c[1], k + c[2]));
                    let signs = ids.iter().filter(|&&id| lat.values[id] < 0.0).count();
                    if signs == 0 || signs == 8 {
                        continue;
                    }
                    for tet in TETS {
                        polygonize_tet(&lat, tet.map(|c| ids[c]), &mut out);
                    }
                }
            }
            out
        })
        .collect();
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for tri in slabs.into_iter().flatten() {
        let t = tri.map(|e| {
            *index.entry(e).or_insert_with(|| {
                vertices.push(crossing(&lat, e));
                vertices.len() - 1
            })
        });
        triangles.push(t);
    }
    MeshData::new(vertices, triangles)
}
