//! Surface comparison metrics and topological counts for extracted meshes.
//!
//! Distances are measured between area-uniform random samples of the two meshes
//! (same seed on both sides); chamfer is the symmetric mean nearest-sample
//! distance scaled by 10³.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mesh::MeshData;
use crate::sdf::bvh::Bvh;
use crate::{Error, Result, Vec3};

pub const DEFAULT_SAMPLES: usize = 100_000;
pub const MIN_SAMPLES: usize = 1000;
pub const DEFAULT_SEED: u64 = 0x5eed;
/// F-score distance threshold in unit-cube units.
pub const DEFAULT_F_THRESHOLD: f64 = 0.01;

/// Points drawn uniformly by area, with the unit normal of their triangle.
/// Reversing triangle orientation flips the normals but keeps the points.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

pub fn sample_surface(mesh: &MeshData, count: usize, seed: u64) -> Result<SurfaceSamples> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.area(t);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.gen::<f64>() * total;
        let t = cdf.partition_point(|&c| c <= target).min(cdf.len() - 1);
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        // corners in index order so that flipping a face does not move its samples
        let mut ids = mesh.triangles[t];
        ids.sort_unstable();
        let [a, b, c] = ids.map(|i| mesh.vertices[i]);
        points.push(a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2));
        let n = mesh.face_cross(t);
        normals.push(if n.norm() > 0.0 { n.normalize() } else { n });
    }
    Ok(SurfaceSamples { points, normals })
}

/// Nearest-sample queries through the same hierarchy used for signed distance.
struct PointIndex<'a> {
    points: &'a [Vec3],
    bvh: Bvh,
}

impl<'a> PointIndex<'a> {
    fn new(points: &'a [Vec3]) -> Self {
        let boxes: Vec<(Vec3, Vec3)> = points.iter().map(|p| (*p, *p)).collect();
        PointIndex {
            points,
            bvh: Bvh::build(&boxes),
        }
    }

    fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let (i, d2) = self
            .bvh
            .nearest(q, |i| (self.points[i] - q).norm_squared())
            .expect("index is never empty");
        (i, d2.sqrt())
    }
}

/// Nearest-sample matches in both directions.
struct Matching {
    a: SurfaceSamples,
    b: SurfaceSamples,
    a_to_b: Vec<(usize, f64)>,
    b_to_a: Vec<(usize, f64)>,
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    Ok(())
}

fn matching(a: &MeshData, b: &MeshData, samples: usize, seed: u64) -> Result<Matching> {
    check_samples(samples)?;
    let sa = sample_surface(a, samples, seed)?;
    let sb = sample_surface(b, samples, seed)?;
    let ia = PointIndex::new(&sa.points);
    let ib = PointIndex::new(&sb.points);
    let a_to_b = sa.points.par_iter().map(|p| ib.nearest(p)).collect();
    let b_to_a = sb.points.par_iter().map(|p| ia.nearest(p)).collect();
    Ok(Matching {
        a: sa,
        b: sb,
        a_to_b,
        b_to_a,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

impl Matching {
    fn chamfer(&self) -> f64 {
        let ab = mean(self.a_to_b.iter().map(|m| m.1));
        let ba = mean(self.b_to_a.iter().map(|m| m.1));
        0.5 * (ab + ba) * 1e3
    }

    fn f_score(&self, threshold: f64) -> f64 {
        let frac = |m: &[(usize, f64)]| m.iter().filter(|x| x.1 <= threshold).count() as f64 / m.len() as f64;
        let (precision, recall) = (frac(&self.a_to_b), frac(&self.b_to_a));
        if precision + recall == 0.0 {
            0.0
        } else {
            100.0 * 2.0 * precision * recall / (precision + recall)
        }
    }

    fn normal_consistency(&self) -> f64 {
        let ab = mean(
            self.a_to_b
                .iter()
                .enumerate()
                .map(|(i, m)| self.a.normals[i].dot(&self.b.normals[m.0]).abs()),
        );
        let ba = mean(
            self.b_to_a
                .iter()
                .enumerate()
                .map(|(i, m)| self.b.normals[i].dot(&self.a.normals[m.0]).abs()),
        );
        50.0 * (ab + ba)
    }
}

/// Symmetric mean nearest-sample distance, times 10³.
pub fn chamfer_l1(a: &MeshData, b: &MeshData, samples: usize) -> Result<f64> {
    Ok(matching(a, b, samples, DEFAULT_SEED)?.chamfer())
}

/// Harmonic mean of precision and recall at `threshold`, as a percentage.
pub fn f_score(a: &MeshData, b: &MeshData, threshold: f64, samples: usize) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument("threshold must be positive".into()));
    }
    Ok(matching(a, b, samples, DEFAULT_SEED)?.f_score(threshold))
}

/// Mean `|cos|` between matched sample normals, symmetrized, as a percentage.
/// Orientation is ignored.
pub fn normal_consistency(a: &MeshData, b: &MeshData, samples: usize) -> Result<f64> {
    Ok(matching(a, b, samples, DEFAULT_SEED)?.normal_consistency())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentTopology {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub euler: i64,
    /// Every edge has exactly two faces traversing it in opposite directions.
    pub closed_orientable: bool,
    pub genus: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyCounts {
    pub component_count: usize,
    /// `None` where the component is open, non-manifold or non-orientable.
    pub genus_per_component: Vec<Option<i64>>,
    pub components: Vec<ComponentTopology>,
    /// Edges with a face count other than two, over the whole mesh.
    pub boundary_edges: usize,
    pub non_manifold_edges: usize,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components (shared vertices) and the genus of each closed one.
/// Components are ordered by their smallest vertex index.
pub fn topology_counts(mesh: &MeshData) -> TopologyCounts {
    let nv = mesh.vertices.len();
    let mut parent: Vec<usize> = (0..nv).collect();
    for tri in &mesh.triangles {
        for e in 0..3 {
            let (a, b) = (find(&mut parent, tri[e]), find(&mut parent, tri[(e + 1) % 3]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut roots = Vec::new();
    let mut used = vec![false; nv];
    for tri in &mesh.triangles {
        for &v in tri {
            used[v] = true;
        }
    }
    for v in 0..nv {
        if used[v] {
            let r = find(&mut parent, v);
            slot.entry(r).or_insert_with(|| {
                roots.push(r);
                roots.len() - 1
            });
        }
    }
    let mut comps = vec![
        ComponentTopology {
            vertices: 0,
            edges: 0,
            faces: 0,
            euler: 0,
            closed_orientable: true,
            genus: None,
        };
        roots.len()
    ];
    for v in 0..nv {
        if used[v] {
            comps[slot[&find(&mut parent, v)]].vertices += 1;
        }
    }
    // directed edge counts
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in &mesh.triangles {
        comps[slot[&find(&mut parent, tri[0])]].faces += 1;
        for e in 0..3 {
            *directed.entry((tri[e], tri[(e + 1) % 3])).or_insert(0) += 1;
        }
    }
    let mut boundary_edges = 0;
    let mut non_manifold_edges = 0;
    for (&(a, b), &forward) in &directed {
        if a > b && directed.contains_key(&(b, a)) {
            continue;
        }
        let backward = directed.get(&(b, a)).copied().unwrap_or(0);
        let comp = &mut comps[slot[&find(&mut parent, a)]];
        comp.edges += 1;
        if forward + backward == 1 {
            boundary_edges += 1;
        } else if forward + backward > 2 {
            non_manifold_edges += 1;
        }
        if !(forward == 1 && backward == 1) {
            comp.closed_orientable = false;
        }
    }
    for c in &mut comps {
        c.euler = c.vertices as i64 - c.edges as i64 + c.faces as i64;
        if c.closed_orientable && (2 - c.euler) % 2 == 0 {
            c.genus = Some((2 - c.euler) / 2);
        }
    }
    TopologyCounts {
        component_count: comps.len(),
        genus_per_component: comps.iter().map(|c| c.genus).collect(),
        components: comps,
        boundary_edges,
        non_manifold_edges,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsOptions {
    pub samples: usize,
    pub seed: u64,
    pub f_threshold: f64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        MetricsOptions {
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
            f_threshold: DEFAULT_F_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub chamfer: f64,
    pub f_score: f64,
    pub normal_consistency: f64,
    /// Topology of the first mesh.
    pub genus_per_component: Vec<Option<i64>>,
    pub component_count: usize,
    pub seed: u64,
    pub samples: usize,
    pub f_threshold: f64,
}

/// All metrics of `a` against reference `b` from one shared matching.
pub fn evaluate(a: &MeshData, b: &MeshData, options: &MetricsOptions) -> Result<MetricsReport> {
    if !(options.f_threshold > 0.0) {
        return Err(Error::InvalidArgument("threshold must be positive".into()));
    }
    let m = matching(a, b, options.samples, options.seed)?;
    let topo = topology_counts(a);
    Ok(MetricsReport {
        chamfer: m.chamfer(),
        f_score: m.f_score(options.f_threshold),
        normal_consistency: m.normal_consistency(),
        genus_per_component: topo.genus_per_component,
        component_count: topo.component_count,
        seed: options.seed,
        samples: options.samples,
        f_threshold: options.f_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{icosphere, torus};
    use crate::Mat3;

    fn square(z: f64) -> MeshData {
        MeshData::new(
            vec![
                Vec3::new(0.0, 0.0, z),
                Vec3::new(1.0, 0.0, z),
                Vec3::new(1.0, 1.0, z),
                Vec3::new(0.0, 1.0, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    fn brute_nearest(points: &[Vec3], q: &Vec3) -> f64 {
        points.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn samples_are_on_the_mesh_and_uniform() {
        let mesh = square(0.0);
        let s = sample_surface(&mesh, 20_000, 1).unwrap();
        assert!(s.points.iter().all(|p| p.z == 0.0 && (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)));
        let left = s.points.iter().filter(|p| p.x < 0.5).count() as f64 / 20_000.0;
        let upper = s.points.iter().filter(|p| p.y > p.x).count() as f64 / 20_000.0;
        assert!((left - 0.5).abs() < 0.02 && (upper - 0.5).abs() < 0.02);
        assert_eq!(s, sample_surface(&mesh, 20_000, 1).unwrap());
        assert!(sample_surface(&MeshData::default(), 10, 1).is_err());
    }

    #[test]
    fn identical_meshes() {
        let m = icosphere(2, Vec3::repeat(0.5), 0.3);
        let report = evaluate(&m, &m, &MetricsOptions { samples: 5000, ..Default::default() }).unwrap();
        assert!(report.chamfer.abs() < 1e-9);
        assert!((report.f_score - 100.0).abs() < 1e-9);
        assert!((report.normal_consistency - 100.0).abs() < 1e-9);
        assert_eq!(report.genus_per_component, vec![Some(0)]);
    }

    #[test]
    fn parallel_squares_match_brute_force() {
        let d = 0.05;
        let (a, b) = (square(0.0), square(d));
        let n = 2000;
        let sa = sample_surface(&a, n, DEFAULT_SEED).unwrap();
        let sb = sample_surface(&b, n, DEFAULT_SEED).unwrap();
        let brute = 0.5
            * (sa.points.iter().map(|p| brute_nearest(&sb.points, p)).sum::<f64>() / n as f64
                + sb.points.iter().map(|p| brute_nearest(&sa.points, p)).sum::<f64>() / n as f64)
            * 1e3;
        let fast = chamfer_l1(&a, &b, n).unwrap();
        assert!((fast - brute).abs() < 1e-9);
        let dense = chamfer_l1(&a, &b, 100_000).unwrap();
        assert!((dense / (1e3 * d) - 1.0).abs() < 0.01, "{dense}");
        assert_eq!(chamfer_l1(&a, &b, n).unwrap(), chamfer_l1(&b, &a, n).unwrap());
    }

    #[test]
    fn chamfer_grows_with_scale() {
        let base = icosphere(3, Vec3::repeat(0.5), 0.3);
        let values: Vec<f64> = [0.01, 0.03, 0.09]
            .iter()
            .map(|eps| {
                let scaled = base.transformed(|p| Vec3::repeat(0.5) + (p - Vec3::repeat(0.5)) * (1.0 + eps));
                chamfer_l1(&base, &scaled, 5000).unwrap()
            })
            .collect();
        assert!(values[0] < values[1] && values[1] < values[2], "{values:?}");
    }

    #[test]
    fn f_score_extremes() {
        let t = DEFAULT_F_THRESHOLD;
        assert_eq!(f_score(&square(0.0), &square(0.5), t, 2000).unwrap(), 0.0);
        assert_eq!(f_score(&square(0.0), &square(t / 2.0), t, DEFAULT_SAMPLES).unwrap(), 100.0);
        assert!(f_score(&square(0.0), &square(0.0), 0.0, 2000).is_err());
        assert!(f_score(&square(0.0), &square(0.0), t, 10).is_err());
    }

    #[test]
    fn normal_consistency_cases() {
        let s = icosphere(2, Vec3::repeat(0.5), 0.3);
        assert!((normal_consistency(&s, &s.flipped(), 3000).unwrap() - 100.0).abs() < 1e-9);
        let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), std::f64::consts::FRAC_PI_2);
        let c = Vec3::new(0.5, 0.5, 0.0);
        let turned = square(0.0).transformed(|p| c + rot * (p - c));
        let nc = normal_consistency(&square(0.0), &turned, 3000).unwrap();
        assert!(nc < 1e-6, "{nc}");
    }

    #[test]
    fn rigid_motion_invariance() {
        let a = icosphere(2, Vec3::repeat(0.5), 0.3);
        let b = torus(Vec3::repeat(0.5), 0.25, 0.08, 48, 24);
        let r: Mat3 = nalgebra::Rotation3::new(Vec3::new(0.3, -0.7, 0.2)).into_inner();
        let move_it = |m: &MeshData| m.transformed(|p| r * p + Vec3::new(0.1, -0.2, 0.3));
        let opts = MetricsOptions { samples: 4000, ..Default::default() };
        let x = evaluate(&a, &b, &opts).unwrap();
        let y = evaluate(&move_it(&a), &move_it(&b), &opts).unwrap();
        assert!((x.chamfer - y.chamfer).abs() < 1e-6);
        assert!((x.f_score - y.f_score).abs() < 1e-6);
        assert!((x.normal_consistency - y.normal_consistency).abs() < 1e-6);
    }

    /// Components by flood fill over faces sharing a vertex.
    fn flood_components(mesh: &MeshData) -> usize {
        let mut by_vertex: HashMap<usize, Vec<usize>> = HashMap::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            for &v in tri {
                by_vertex.entry(v).or_default().push(t);
            }
        }
        let mut seen = vec![false; mesh.triangles.len()];
        let mut count = 0;
        for start in 0..mesh.triangles.len() {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(t) = stack.pop() {
                for v in mesh.triangles[t] {
                    for &u in &by_vertex[&v] {
                        if !seen[u] {
                            seen[u] = true;
                            stack.push(u);
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn topology_of_primitives() {
        let sphere = icosphere(3, Vec3::repeat(0.5), 0.3);
        let t = topology_counts(&sphere);
        assert_eq!((t.genus_per_component.clone(), t.component_count), (vec![Some(0)], 1));
        let ring = torus(Vec3::repeat(0.5), 0.25, 0.08, 48, 24);
        let t = topology_counts(&ring);
        assert_eq!((t.genus_per_component.clone(), t.component_count), (vec![Some(1)], 1));
        let mut two = icosphere(2, Vec3::new(0.3, 0.5, 0.5), 0.1);
        two.merge(&icosphere(2, Vec3::new(0.7, 0.5, 0.5), 0.1));
        let t = topology_counts(&two);
        assert_eq!((t.genus_per_component.clone(), t.component_count), (vec![Some(0), Some(0)], 2));
        for m in [&sphere, &ring, &two] {
            assert_eq!(topology_counts(m).component_count, flood_components(m));
        }
        let mut mixed = two.clone();
        mixed.merge(&square(0.0));
        let t = topology_counts(&mixed);
        assert_eq!(t.component_count, 3);
        assert_eq!(t.genus_per_component, vec![Some(0), Some(0), None]);
        assert_eq!(t.boundary_edges, 4);
        assert_eq!(flood_components(&mixed), 3);
    }

    #[test]
    fn empty_mesh_topology() {
        let t = topology_counts(&MeshData::default());
        assert_eq!(t.component_count, 0);
        assert!(chamfer_l1(&MeshData::default(), &square(0.0), 2000).is_err());
    }
}
