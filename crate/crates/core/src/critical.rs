//! Exhaustive critical-point search on a fitted spline field.
//!
//! Every lattice cell gets conservative bounds on each gradient component from the
//! convex-hull property of the derivative spline. Cells whose bounds exclude zero
//! on some axis cannot hold a critical point; the rest are split once into eight
//! subcells whose centers seed damped Newton iterations on `grad F = 0`. Converged
//! points are merged, classified by the signs of their Hessian eigenvalues, and the
//! non-degenerate saddles are exposed for topology editing.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::sym_eigen;
use crate::spline::SplineField;
use crate::{Mat3, Vec3};

/// Newton convergence threshold on the gradient norm (unit-cube units).
pub const EPS_GRAD: f64 = 1e-9;
/// Eigenvalues below this fraction of the largest magnitude count as zero.
pub const EPS_LAMBDA_REL: f64 = 1e-6;
pub const NEWTON_MAX_ITER: usize = 20;
const MAX_HALVINGS: usize = 8;
const SINGULAR_DET: f64 = 1e-18;
const LEVENBERG_SHIFT: f64 = 1e-6;
/// Newton iterates may not leave this many cells (infinity norm) around their seed.
const WANDER_CELLS: f64 = 2.0;
/// Critical points this close to the cube faces (in cells) are artifacts of the
/// truncated boundary rows and are dropped after refinement.
pub const BOUNDARY_BAND_CELLS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalClass {
    Minimum,
    Saddle1,
    Saddle2,
    Maximum,
}

impl CriticalClass {
    pub fn from_negative_count(count: usize) -> Self {
        match count {
            0 => CriticalClass::Minimum,
            1 => CriticalClass::Saddle1,
            2 => CriticalClass::Saddle2,
            _ => CriticalClass::Maximum,
        }
    }

    pub fn is_saddle(self) -> bool {
        matches!(self, CriticalClass::Saddle1 | CriticalClass::Saddle2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub position: Vec3,
    pub value: f64,
    pub grad_norm: f64,
    /// Ascending.
    pub eigenvalues: [f64; 3],
    /// Unit eigenvectors as columns, paired with `eigenvalues`.
    pub eigenvectors: Mat3,
    pub class: CriticalClass,
    /// Some eigenvalue is numerically zero; such points are never exposed as saddles.
    pub degenerate: bool,
}

impl CriticalPoint {
    pub fn eigenvector(&self, i: usize) -> Vec3 {
        self.eigenvectors.column(i).into_owned()
    }
}

/// Conservative per-axis gradient bounds over one lattice cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellInterval {
    pub cell: [usize; 3],
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl CellInterval {
    pub fn contains_zero(&self) -> bool {
        (0..3).all(|d| self.lower[d] <= 0.0 && self.upper[d] >= 0.0)
    }
}

/// Bounds on each gradient component over cell `cell` (lower corner index).
///
/// Along axis `d` the derivative is a quadratic spline whose coefficients are the
/// scaled coefficient differences `(alpha_m - alpha_{m-1}) / w`, with coefficients
/// outside the lattice taken as zero; over one cell it is a convex combination of
/// the 3 x 4 x 4 differences touching the cell, so their min and max bound it.
pub fn gradient_bounds(field: &SplineField, cell: [usize; 3]) -> CellInterval {
    let spec = field.spec();
    let n = spec.cells() as i64;
    let inv_w = n as f64;
    let coeff = |idx: [i64; 3]| -> f64 {
        if idx.iter().all(|&v| (0..=n).contains(&v)) {
            field.coefficient(idx[0] as usize, idx[1] as usize, idx[2] as usize)
        } else {
            0.0
        }
    };
    let c = cell.map(|v| v as i64);
    let mut lower = [f64::INFINITY; 3];
    let mut upper = [f64::NEG_INFINITY; 3];
    for d in 0..3 {
        let (e1, e2) = ((d + 1) % 3, (d + 2) % 3);
        for m in c[d]..=c[d] + 2 {
            for a in c[e1] - 1..=c[e1] + 2 {
                for b in c[e2] - 1..=c[e2] + 2 {
                    let mut hi = [0i64; 3];
                    hi[d] = m;
                    hi[e1] = a;
                    hi[e2] = b;
                    let mut lo = hi;
                    lo[d] = m - 1;
                    let diff = (coeff(hi) - coeff(lo)) * inv_w;
                    lower[d] = lower[d].min(diff);
                    upper[d] = upper[d].max(diff);
                }
            }
        }
        // absorb rounding in the evaluation path
        let slack = 1e-12 * (upper[d].abs().max(lower[d].abs()));
        lower[d] -= slack;
        upper[d] += slack;
    }
    CellInterval { cell, lower, upper }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedSet {
    pub seeds: Vec<Vec3>,
    pub total_cells: usize,
    pub surviving_cells: usize,
}

/// Subcell centers of every cell whose gradient bounds contain zero on all axes.
pub fn seed_points(field: &SplineField) -> SeedSet {
    let spec = field.spec();
    let w = spec.spacing();
    let survivors: Vec<usize> = (0..spec.cell_count())
        .into_par_iter()
        .filter(|&idx| gradient_bounds(field, spec.cell_unindex(idx)).contains_zero())
        .collect();
    let mut seeds = Vec::with_capacity(survivors.len() * 8);
    for &idx in &survivors {
        let origin = spec.cell_origin(spec.cell_unindex(idx));
        for s in 0..8 {
            let sub = Vec3::new(
                if s & 1 == 0 { 0.25 } else { 0.75 },
                if s & 2 == 0 { 0.25 } else { 0.75 },
                if s & 4 == 0 { 0.25 } else { 0.75 },
            );
            seeds.push(origin + sub * w);
        }
    }
    SeedSet {
        seeds,
        total_cells: spec.cell_count(),
        surviving_cells: survivors.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOutcome {
    pub position: Vec3,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn inside_unit_cube(q: &Vec3) -> bool {
    q.iter().all(|c| (0.0..=1.0).contains(c))
}

/// Damped Newton iteration on `grad F = 0` from `seed`. Returns `None` on
/// divergence, leaving the unit cube, wandering more than two cells from the seed,
/// or when step halving cannot reduce the gradient norm.
pub fn newton_refine(
    field: &SplineField,
    seed: &Vec3,
    max_iter: usize,
    eps_grad: f64,
) -> Option<NewtonOutcome> {
    if !inside_unit_cube(seed) {
        return None;
    }
    let reach = WANDER_CELLS * field.spec().spacing();
    let mut q = *seed;
    let mut sample = field.eval_full(&q);
    let mut gn = sample.gradient.norm();
    for iteration in 0..=max_iter {
        if !gn.is_finite() {
            return None;
        }
        if gn <= eps_grad {
            return Some(NewtonOutcome {
                position: q,
                iterations: iteration,
                grad_norm: gn,
            });
        }
        if iteration == max_iter {
            break;
        }
        let mut h = sample.hessian;
        if h.determinant().abs() < SINGULAR_DET {
            let scale = (h.trace().abs() / 3.0).max(h.norm() / 3f64.sqrt());
            h += Mat3::identity() * (LEVENBERG_SHIFT * scale.max(f64::MIN_POSITIVE));
        }
        let step = -h.lu().solve(&sample.gradient)?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = q + step * t;
            if !inside_unit_cube(&candidate) || (candidate - seed).abs().max() > reach {
                return None;
            }
            let next = field.eval_full(&candidate);
            let next_gn = next.gradient.norm();
            if next_gn < gn {
                accepted = Some((candidate, next, next_gn));
                break;
            }
            t *= 0.5;
        }
        let (candidate, next, next_gn) = accepted?;
        q = candidate;
        sample = next;
        gn = next_gn;
    }
    None
}

/// Eigen-analysis of the Hessian at `s`.
pub fn classify(field: &SplineField, s: &Vec3) -> CriticalPoint {
    let sample = field.eval_full(s);
    let eig = sym_eigen(&sample.hessian);
    let scale = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let degenerate = scale == 0.0 || eig.values.iter().any(|v| v.abs() < EPS_LAMBDA_REL * scale);
    let negatives = eig.values.iter().filter(|&&v| v < 0.0).count();
    CriticalPoint {
        position: *s,
        value: sample.value,
        grad_norm: sample.gradient.norm(),
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        class: CriticalClass::from_negative_count(negatives),
        degenerate,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub total_cells: usize,
    pub surviving_cells: usize,
    pub seeds: usize,
    pub converged: usize,
    pub unique: usize,
    /// Merged points discarded for lying in the boundary band.
    pub boundary_rejected: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CriticalSearch {
    /// Every merged critical point outside the boundary band (extrema and degenerate
    /// ones included), in seed order.
    pub all: Vec<CriticalPoint>,
    /// Non-degenerate 1- and 2-saddles, by ascending `|F(s)|`.
    pub saddles: Vec<CriticalPoint>,
    pub stats: SearchStats,
}

/// Merges converged points closer than `radius`, keeping the smaller gradient norm.
/// Input order decides the representative slot, so the result is deterministic.
fn deduplicate(points: Vec<NewtonOutcome>, radius: f64) -> Vec<NewtonOutcome> {
    let key = |p: &Vec3| (p / radius).map(|c| c.floor() as i64);
    let mut buckets: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let mut kept: Vec<NewtonOutcome> = Vec::new();
    for point in points {
        let k = key(&point.position);
        let mut merged = false;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(slots) = buckets.get(&(k.x + dx, k.y + dy, k.z + dz)) else {
                        continue;
                    };
                    for &slot in slots {
                        if (kept[slot].position - point.position).norm() < radius {
                            if point.grad_norm < kept[slot].grad_norm {
                                kept[slot] = point;
                            }
                            merged = true;
                            break 'search;
                        }
                    }
                }
            }
        }
        if !merged {
            buckets.entry((k.x, k.y, k.z)).or_default().push(kept.len());
            kept.push(point);
        }
    }
    kept
}

/// Seed, refine, merge within `w / 4`, classify.
pub fn find_critical_points(field: &SplineField) -> CriticalSearch {
    let start = Instant::now();
    let seeds = seed_points(field);
    let converged: Vec<NewtonOutcome> = seeds
        .seeds
        .par_iter()
        .filter_map(|s| newton_refine(field, s, NEWTON_MAX_ITER, EPS_GRAD))
        .collect();
    let converged_count = converged.len();
    let w = field.spec().spacing();
    let unique = deduplicate(converged, w / 4.0);
    let band = BOUNDARY_BAND_CELLS * w;
    let merged = unique.len();
    let unique: Vec<NewtonOutcome> = unique
        .into_iter()
        .filter(|p| p.position.iter().all(|&c| c >= band && c <= 1.0 - band))
        .collect();
    let all: Vec<CriticalPoint> = unique.par_iter().map(|p| classify(field, &p.position)).collect();
    let mut saddles: Vec<CriticalPoint> = all
        .iter()
        .filter(|c| c.class.is_saddle() && !c.degenerate)
        .cloned()
        .collect();
    saddles.sort_by(|a, b| {
        a.value
            .abs()
            .total_cmp(&b.value.abs())
            .then_with(|| {
                let (p, q) = (a.position, b.position);
                p.x.total_cmp(&q.x)
                    .then(p.y.total_cmp(&q.y))
                    .then(p.z.total_cmp(&q.z))
            })
    });
    let stats = SearchStats {
        total_cells: seeds.total_cells,
        surviving_cells: seeds.surviving_cells,
        seeds: seeds.seeds.len(),
        converged: converged_count,
        unique: all.len(),
        boundary_rejected: merged - all.len(),
        seconds: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "critical search: {}/{} cells kept, {} seeds, {} converged, {} unique, {} saddles in {:.2}s",
        stats.surviving_cells,
        stats.total_cells,
        stats.seeds,
        stats.converged,
        stats.unique,
        saddles.len(),
        stats.seconds
    );
    CriticalSearch {
        all,
        saddles,
        stats,
    }
}

/// The exposed saddle list; extrema are kept only inside [`find_critical_points`].
pub fn find_saddles(field: &SplineField) -> Vec<CriticalPoint> {
    find_critical_points(field).saddles
}
