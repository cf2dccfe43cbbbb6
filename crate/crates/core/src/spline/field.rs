use serde::{Deserialize, Serialize};

use super::basis::{bspline_b, bspline_b_d1, bspline_b_d2, tensor_b};
use super::system::{conjugate_gradient, default_max_iter, SolveReport, StencilOperator};
use crate::grid::GridSpec;
use crate::sdf::SdfGrid;
use crate::{Error, Mat3, Result, Vec3};

/// Value, gradient and Hessian of a field at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub value: f64,
    pub gradient: Vec3,
    pub hessian: Mat3,
    /// The point lies outside the unit cube, where bases are missing.
    pub extrapolated: bool,
}

impl FieldSample {
    pub fn zero(extrapolated: bool) -> Self {
        FieldSample {
            value: 0.0,
            gradient: Vec3::zeros(),
            hessian: Mat3::zeros(),
            extrapolated,
        }
    }
}

/// A C² scalar field on (and around) the unit cube, negative inside the shape.
pub trait ImplicitField: Sync {
    fn value(&self, q: &Vec3) -> f64;
    fn sample(&self, q: &Vec3) -> FieldSample;
}

impl ImplicitField for SplineField {
    #[inline]
    fn value(&self, q: &Vec3) -> f64 {
        self.eval(q)
    }

    #[inline]
    fn sample(&self, q: &Vec3) -> FieldSample {
        self.eval_full(q)
    }
}

/// Builds a symmetric matrix from (xx, xy, xz, yy, yz, zz).
#[inline]
pub(crate) fn symmetric(h: [f64; 6]) -> Mat3 {
    Mat3::new(h[0], h[1], h[2], h[1], h[3], h[4], h[2], h[4], h[5])
}

#[inline]
pub(crate) fn outside_unit_cube(q: &Vec3) -> bool {
    q.iter().any(|&c| !(0.0..=1.0).contains(&c))
}

/// The up-to-four lattice bases along one axis whose support contains a coordinate.
#[derive(Debug, Clone, Copy)]
struct AxisStencil {
    first: usize,
    len: usize,
    offsets: [f64; 4],
}

impl AxisStencil {
    #[inline]
    fn new(coord: f64, n: usize) -> Self {
        let u = coord * n as f64;
        let base = u.floor() as i64 - 1;
        let lo = base.max(0);
        let hi = (base + 3).min(n as i64);
        if !u.is_finite() || hi < lo {
            return AxisStencil {
                first: 0,
                len: 0,
                offsets: [0.0; 4],
            };
        }
        let mut offsets = [0.0; 4];
        for (a, slot) in offsets.iter_mut().enumerate().take((hi - lo + 1) as usize) {
            *slot = u - (lo + a as i64) as f64;
        }
        AxisStencil {
            first: lo as usize,
            len: (hi - lo + 1) as usize,
            offsets,
        }
    }

    #[inline]
    fn values(&self) -> [f64; 4] {
        self.offsets.map(bspline_b)
    }
}

/// Cubic tensor-product B-spline `F(q) = sum alpha_ijk B((q - g_ijk) / w)` over
/// bases rooted at every lattice vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineField {
    spec: GridSpec,
    coefficients: Vec<f64>,
}

impl SplineField {
    pub fn from_coefficients(spec: GridSpec, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != spec.vertex_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                spec.vertex_count(),
                coefficients.len()
            )));
        }
        Ok(SplineField { spec, coefficients })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        SplineField {
            spec,
            coefficients: vec![0.0; spec.vertex_count()],
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    #[inline]
    pub fn coefficient(&self, i: usize, j: usize, k: usize) -> f64 {
        self.coefficients[self.spec.index(i, j, k)]
    }

    pub fn eval(&self, q: &Vec3) -> f64 {
        let n = self.spec.cells();
        let m = self.spec.verts();
        let sx = AxisStencil::new(q.x, n);
        let sy = AxisStencil::new(q.y, n);
        let sz = AxisStencil::new(q.z, n);
        let (vx, vy, vz) = (sx.values(), sy.values(), sz.values());
        let mut value = 0.0;
        for c in 0..sz.len {
            for b in 0..sy.len {
                let wyz = vy[b] * vz[c];
                let row = sx.first + m * (sy.first + b + m * (sz.first + c));
                let coeffs = &self.coefficients[row..row + sx.len];
                for (a, alpha) in coeffs.iter().enumerate() {
                    value += alpha * (vx[a] * wyz);
                }
            }
        }
        value
    }

    /// Value plus a flag telling whether `q` lies outside the unit cube.
    pub fn eval_checked(&self, q: &Vec3) -> (f64, bool) {
        (self.eval(q), outside_unit_cube(q))
    }

    /// Value, analytic gradient and Hessian. The value is computed exactly as in [`Self::eval`].
    pub fn eval_full(&self, q: &Vec3) -> FieldSample {
        let n = self.spec.cells();
        let m = self.spec.verts();
        let inv_w = n as f64;
        let sx = AxisStencil::new(q.x, n);
        let sy = AxisStencil::new(q.y, n);
        let sz = AxisStencil::new(q.z, n);
        let (vx, vy, vz) = (sx.values(), sy.values(), sz.values());
        let (dx, dy, dz) = (
            sx.offsets.map(bspline_b_d1),
            sy.offsets.map(bspline_b_d1),
            sz.offsets.map(bspline_b_d1),
        );
        let (ssx, ssy, ssz) = (
            sx.offsets.map(bspline_b_d2),
            sy.offsets.map(bspline_b_d2),
            sz.offsets.map(bspline_b_d2),
        );
        let mut value = 0.0;
        let mut g = [0.0; 3];
        let mut h = [0.0; 6];
        for c in 0..sz.len {
            for b in 0..sy.len {
                let wyz = vy[b] * vz[c];
                let row = sx.first + m * (sy.first + b + m * (sz.first + c));
                let coeffs = &self.coefficients[row..row + sx.len];
                for (a, alpha) in coeffs.iter().enumerate() {
                    value += alpha * (vx[a] * wyz);
                    g[0] += alpha * dx[a] * vy[b] * vz[c];
                    g[1] += alpha * vx[a] * dy[b] * vz[c];
                    g[2] += alpha * vx[a] * vy[b] * dz[c];
                    h[0] += alpha * ssx[a] * vy[b] * vz[c];
                    h[1] += alpha * dx[a] * dy[b] * vz[c];
                    h[2] += alpha * dx[a] * vy[b] * dz[c];
                    h[3] += alpha * vx[a] * ssy[b] * vz[c];
                    h[4] += alpha * vx[a] * dy[b] * dz[c];
                    h[5] += alpha * vx[a] * vy[b] * ssz[c];
                }
            }
        }
        let w2 = inv_w * inv_w;
        FieldSample {
            value,
            gradient: Vec3::new(g[0], g[1], g[2]) * inv_w,
            hessian: symmetric(h.map(|v| v * w2)),
            extrapolated: outside_unit_cube(q),
        }
    }

    /// Largest |F(g) - c(g)| over all lattice vertices.
    pub fn max_interpolation_error(&self, grid: &SdfGrid) -> f64 {
        use rayon::prelude::*;
        (0..self.spec.vertex_count())
            .into_par_iter()
            .map(|idx| {
                let [i, j, k] = self.spec.unindex(idx);
                (self.eval(&self.spec.vertex(i, j, k)) - grid.values[idx]).abs()
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// `B_ijk(q)` for the basis rooted at lattice vertex `ijk`.
pub fn basis_value(spec: &GridSpec, ijk: [usize; 3], q: &Vec3) -> f64 {
    let n = spec.cells() as f64;
    tensor_b([
        q.x * n - ijk[0] as f64,
        q.y * n - ijk[1] as f64,
        q.z * n - ijk[2] as f64,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Relative residual target for conjugate gradient.
    pub tol: f64,
    /// Defaults to `10 (n + 1)`.
    pub max_iter: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-8,
            max_iter: None,
        }
    }
}

/// Solves for the coefficients interpolating `grid` (matrix-free CG, zero start).
/// Non-convergence is reported in the [`SolveReport`], not as an error.
pub fn fit(grid: &SdfGrid, options: FitOptions) -> (SplineField, SolveReport) {
    let spec = grid.spec;
    let max_iter = options.max_iter.unwrap_or_else(|| default_max_iter(&spec));
    let (coefficients, report) =
        conjugate_gradient(&StencilOperator { spec }, &grid.values, options.tol, max_iter);
    if !report.converged {
        log::warn!(
            "spline fit stopped at relative residual {:.3e} after {} iterations",
            report.relative_residual,
            report.iterations
        );
    }
    (SplineField { spec, coefficients }, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_grid(n: usize) -> SdfGrid {
        SdfGrid::from_fn(GridSpec::new(n).unwrap(), |q| {
            (q - Vec3::repeat(0.5)).norm() - 0.3
        })
    }

    fn random_point(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec3 {
        Vec3::new(
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
        )
    }

    #[test]
    fn basis_value_examples() {
        let spec = GridSpec::new(16).unwrap();
        let w = spec.spacing();
        let g = spec.vertex(5, 6, 7);
        assert!((basis_value(&spec, [5, 6, 7], &g) - 8.0 / 27.0).abs() < 1e-15);
        let q = g + Vec3::new(w, 0.0, 0.0);
        assert!((basis_value(&spec, [5, 6, 7], &q) - 2.0 / 27.0).abs() < 1e-15);
        let q = g + Vec3::new(2.0 * w, 0.0, 0.0);
        assert_eq!(basis_value(&spec, [5, 6, 7], &q), 0.0);
    }

    #[test]
    fn partition_of_unity_in_interior() {
        let spec = GridSpec::new(16).unwrap();
        let ones = SplineField::from_coefficients(spec, vec![1.0; spec.vertex_count()]).unwrap();
        let w = spec.spacing();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let q = random_point(&mut rng, 2.0 * w, 1.0 - 2.0 * w);
            assert!((ones.eval(&q) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_coefficient_has_compact_support() {
        let spec = GridSpec::new(16).unwrap();
        let (base, _) = fit(&sphere_grid(16), FitOptions::default());
        let mut bumped = base.clone();
        let (i, j, k) = (7, 8, 9);
        bumped.coefficients_mut()[spec.index(i, j, k)] += 0.25;
        let g = spec.vertex(i, j, k);
        let w = spec.spacing();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let q = random_point(&mut rng, 0.0, 1.0);
            let offset = (q - g).abs().max();
            let (a, b) = (base.eval(&q), bumped.eval(&q));
            if offset >= 2.0 * w {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert!((bumped.eval(&g) - base.eval(&g) - 0.25 * 8.0 / 27.0).abs() < 1e-15);
    }

    #[test]
    fn eval_and_eval_full_agree_bitwise() {
        let (field, _) = fit(&sphere_grid(16), FitOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let q = random_point(&mut rng, -0.1, 1.1);
            let full = field.eval_full(&q);
            assert_eq!(field.eval(&q).to_bits(), full.value.to_bits());
            assert_eq!(full.hessian, full.hessian.transpose());
            assert_eq!(full.extrapolated, outside_unit_cube(&q));
        }
    }

    #[test]
    fn constant_rhs_reproduces_one_away_from_the_boundary() {
        // The square system truncates boundary support, so coefficients deviate from 1
        // near the faces by a factor (sqrt(3) - 2) per cell; deep inside F == 1.
        let spec = GridSpec::new(48).unwrap();
        let grid = SdfGrid::from_fn(spec, |_| 1.0);
        let tol = 1e-11;
        let (field, report) = fit(&grid, FitOptions { tol, max_iter: None });
        assert!(report.converged);
        let w = spec.spacing();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut near: f64 = 0.0;
        let mut deep: f64 = 0.0;
        for _ in 0..2000 {
            let q = random_point(&mut rng, 2.0 * w, 1.0 - 2.0 * w);
            near = near.max((field.eval(&q) - 1.0).abs());
            let q = random_point(&mut rng, 18.0 * w, 1.0 - 18.0 * w);
            deep = deep.max((field.eval(&q) - 1.0).abs());
        }
        assert!(near < 2e-2, "near-boundary deviation {near}");
        assert!(deep < 10.0 * tol, "interior deviation {deep}");
        let decay = (field.coefficient(1, 24, 24) - 1.0) / (field.coefficient(0, 24, 24) - 1.0);
        assert!((decay - (3f64.sqrt() - 2.0)).abs() < 1e-3, "decay {decay}");
    }

    #[test]
    fn interpolates_sphere_samples() {
        let grid = sphere_grid(32);
        let (field, report) = fit(&grid, FitOptions::default());
        assert!(report.converged && report.relative_residual <= 1e-8);
        let err = field.max_interpolation_error(&grid);
        assert!(err <= 1e-6, "max interpolation error {err}");
        let c_norm = grid.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let kappa = err / (1e-8 * c_norm);
        println!("interpolation constant kappa = {kappa:.3}");
        assert!(kappa < 1.0);
    }

    #[test]
    fn hessian_is_continuous_across_cell_faces() {
        let (field, _) = fit(&sphere_grid(16), FitOptions::default());
        let spec = field.spec();
        let x = spec.vertex(9, 0, 0).x;
        for (y, z) in [(0.31, 0.62), (0.5, 0.5), (0.77, 0.2)] {
            let a = field.eval_full(&Vec3::new(x - 1e-13, y, z));
            let b = field.eval_full(&Vec3::new(x + 1e-13, y, z));
            assert!((a.hessian - b.hessian).abs().max() < 1e-9);
            assert!((a.gradient - b.gradient).abs().max() < 1e-9);
        }
    }

    #[test]
    fn superposition_is_linear() {
        let (a, _) = fit(&sphere_grid(16), FitOptions::default());
        let spec = a.spec();
        let b = SplineField::from_coefficients(
            spec,
            (0..spec.vertex_count()).map(|i| ((i * 31) % 17) as f64 * 0.01).collect(),
        )
        .unwrap();
        let sum = SplineField::from_coefficients(
            spec,
            a.coefficients().iter().zip(b.coefficients()).map(|(x, y)| x + y).collect(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let q = random_point(&mut rng, 0.0, 1.0);
            assert!((sum.eval(&q) - a.eval(&q) - b.eval(&q)).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_wrong_lattice_size() {
        let spec = GridSpec::new(8).unwrap();
        assert!(SplineField::from_coefficients(spec, vec![0.0; 10]).is_err());
    }
}
