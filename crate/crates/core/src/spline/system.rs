//! The interpolation system `A alpha = c` with `A[(i'j'k'), (ijk)] = B_ijk(g_i'j'k')`,
//! stored as CSR or applied matrix-free from the 27-point stencil, and a
//! conjugate-gradient solver with deterministic reductions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::bspline_b;
use crate::grid::GridSpec;
use crate::sdf::SdfGrid;
use crate::{Error, Result};

/// Basis values at integer lattice offsets -1, 0, 1.
const NEIGHBOR_WEIGHTS: [f64; 3] = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];

fn stencil_weight(di: usize, dj: usize, dk: usize) -> f64 {
    debug_assert_eq!(bspline_b(1.0), NEIGHBOR_WEIGHTS[0]);
    NEIGHBOR_WEIGHTS[di] * NEIGHBOR_WEIGHTS[dj] * NEIGHBOR_WEIGHTS[dk]
}

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Symmetric sparse system in CSR form with its right-hand side.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub spec: GridSpec,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// Visits the in-range neighbors of vertex `row` in ascending linear index order.
#[inline]
fn for_each_neighbor(spec: &GridSpec, row: usize, mut f: impl FnMut(usize, f64)) {
    let m = spec.verts();
    let [i, j, k] = spec.unindex(row);
    for dk in 0..3 {
        let Some(kk) = (k + dk).checked_sub(1).filter(|&v| v < m) else {
            continue;
        };
        for dj in 0..3 {
            let Some(jj) = (j + dj).checked_sub(1).filter(|&v| v < m) else {
                continue;
            };
            for di in 0..3 {
                let Some(ii) = (i + di).checked_sub(1).filter(|&v| v < m) else {
                    continue;
                };
                f(spec.index(ii, jj, kk), stencil_weight(di, dj, dk));
            }
        }
    }
}

/// Builds the CSR matrix and copies the sampled distances into the right-hand side.
pub fn assemble_system(spec: GridSpec, grid: &SdfGrid) -> Result<SparseSystem> {
    if grid.spec != spec {
        return Err(Error::InvalidArgument(
            "grid was sampled on a different lattice".into(),
        ));
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..spec.vertex_count())
        .into_par_iter()
        .map(|row| {
            let mut entries = Vec::with_capacity(27);
            for_each_neighbor(&spec, row, |col, w| entries.push((col, w)));
            entries
        })
        .collect();
    let nnz = rows.iter().map(Vec::len).sum();
    let mut row_ptr = Vec::with_capacity(rows.len() + 1);
    let mut cols = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    row_ptr.push(0);
    for row in rows {
        for (c, v) in row {
            cols.push(c);
            values.push(v);
        }
        row_ptr.push(cols.len());
    }
    Ok(SparseSystem {
        spec,
        row_ptr,
        cols,
        values,
        rhs: grid.values.clone(),
    })
}

impl SparseSystem {
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }
}

impl LinearOperator for SparseSystem {
    fn dim(&self) -> usize {
        self.rhs.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(r, out)| {
            *out = self.row(r).map(|(c, v)| v * x[c]).sum();
        });
    }
}

/// Matrix-free form of the same operator.
#[derive(Debug, Clone, Copy)]
pub struct StencilOperator {
    pub spec: GridSpec,
}

impl LinearOperator for StencilOperator {
    fn dim(&self) -> usize {
        self.spec.vertex_count()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let spec = self.spec;
        y.par_iter_mut().enumerate().for_each(|(r, out)| {
            let mut acc = 0.0;
            for_each_neighbor(&spec, r, |c, w| acc += w * x[c]);
            *out = acc;
        });
    }
}

const REDUCE_CHUNK: usize = 4096;

/// Dot product with a fixed reduction tree: chunk partials summed in order,
/// independent of the worker count.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partials: Vec<f64> = a
        .par_chunks(REDUCE_CHUNK)
        .zip(b.par_chunks(REDUCE_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partials.iter().sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(y, x)| *y += alpha * x);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `||A alpha - c|| / ||c||`, recomputed from the final iterate.
    pub relative_residual: f64,
    pub converged: bool,
}

impl SolveReport {
    pub fn check(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged {
                residual: self.relative_residual,
                iterations: self.iterations,
            })
        }
    }
}

/// Unpreconditioned CG from a zero initial guess.
pub fn conjugate_gradient(
    op: &impl LinearOperator,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, SolveReport) {
    let n = op.dim();
    assert_eq!(rhs.len(), n, "right-hand side dimension mismatch");
    let mut x = vec![0.0; n];
    let rhs_norm = dot(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        return (
            x,
            SolveReport {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        );
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let relative_residual = loop {
        if rr.sqrt() <= tol * rhs_norm || iterations >= max_iter {
            // confirm against the true residual; restart from it if the recurrence drifted
            op.apply(&x, &mut ap);
            r.iter_mut()
                .zip(rhs.iter().zip(&ap))
                .for_each(|(r, (c, a))| *r = c - a);
            rr = dot(&r, &r);
            if rr.sqrt() <= tol * rhs_norm || iterations >= max_iter {
                break rr.sqrt() / rhs_norm;
            }
            p.copy_from_slice(&r);
        }
        op.apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        p.par_iter_mut()
            .zip(r.par_iter())
            .for_each(|(p, r)| *p = r + beta * *p);
        rr = rr_next;
        iterations += 1;
    };
    (
        x,
        SolveReport {
            iterations,
            relative_residual,
            converged: relative_residual <= tol,
        },
    )
}

/// Default iteration cap, `10 (n + 1)`.
pub fn default_max_iter(spec: &GridSpec) -> usize {
    10 * spec.verts()
}

/// Solves the stored system; see [`conjugate_gradient`].
pub fn solve_coefficients(system: &SparseSystem, tol: f64, max_iter: usize) -> (Vec<f64>, SolveReport) {
    conjugate_gradient(system, &system.rhs, tol, max_iter)
}
