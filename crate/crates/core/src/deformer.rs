//! Hessian-aligned tensor-product bumps added on top of the fitted field.
//!
//! A deformer rooted at `s` with orthonormal frame `Q` and axis lengths `W` adds
//! `beta * B(W^-1 Q^T (q - s))` to the field. Topology deformers sit on saddles and
//! are sized so that the default amplitude flips the sign of `F(s)`, merging or
//! splitting the surface there; geometry deformers sit on the surface and push it
//! in or out along the normal.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::critical::CriticalPoint;
use crate::linalg::sym_eigen;
use crate::spline::{symmetric, tensor_b, tensor_b_full, FieldSample, ImplicitField, SplineField, B_ZERO};
use crate::{Error, Mat3, Result, Vec3};

/// Surface tolerance for projection.
pub const PROJECTION_TOL: f64 = 1e-6;
const PROJECTION_MAX_ITER: usize = 50;
const PROJECTION_HALVINGS: usize = 16;
const FLAT_GRADIENT_SQ: f64 = 1e-12;
/// A saddle with `|F(s)|` below this lies on the surface.
pub const ON_SURFACE_VALUE: f64 = 1e-9;
/// Geometry edits need `|F(p)|` at most this.
pub const GEOMETRY_SURFACE_TOL: f64 = 1e-4;
const ALIGNMENT_TIE: f64 = 1e-9;
const EIGEN_TIE: f64 = 1e-9;
/// Largest lateral stretch of a geometry deformer relative to its radius.
pub const MAX_ANISOTROPY: f64 = 4.0;
pub const MAX_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformerParams {
    /// Normal-axis width as a multiple of `|F(s)|`.
    pub mu: f64,
    /// Lateral width in grid cells.
    pub phi: f64,
    /// Amplitude as a multiple of `-F(s)`.
    pub rho: f64,
}

impl Default for DeformerParams {
    fn default() -> Self {
        DeformerParams {
            mu: 2.0,
            phi: 4.0,
            rho: 5.0,
        }
    }
}

impl DeformerParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu.is_finite()
            && self.phi.is_finite()
            && self.rho.is_finite()
            && self.mu > 0.0
            && self.phi > 0.0
            && self.rho >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "deformer parameters need mu > 0, phi > 0, rho >= 0 (got {self:?})"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeformerKind {
    Topology,
    Bulge,
    Concavity,
}

impl DeformerKind {
    /// +1 for bulges (material added), -1 for concavities.
    fn geometry_sign(self) -> f64 {
        match self {
            DeformerKind::Concavity => -1.0,
            _ => 1.0,
        }
    }
}

/// How the frame of a deformer was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMode {
    Hessian,
    /// First axis along the gradient with an arbitrary lateral completion.
    NormalBased,
}

/// Inputs a deformer was built from, kept so it can be rebuilt with new values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DeformerSource {
    Topology {
        saddle: usize,
        params: DeformerParams,
    },
    Geometry {
        point: Vec3,
        radius: f64,
        /// Amplitude in grid cells (`|beta| = amplitude * w`).
        amplitude: f64,
        /// Lateral stretch of the flatter axis relative to `radius`.
        stretch: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deformer {
    pub id: u64,
    pub kind: DeformerKind,
    pub mode: FrameMode,
    pub anchor: Vec3,
    /// Orthonormal, right-handed; columns are the deformer axes.
    pub frame: Mat3,
    pub weights: [f64; 3],
    pub beta: f64,
    pub source: DeformerSource,
}

impl Deformer {
    /// `W^-1 Q^T (q - s)`.
    #[inline]
    pub fn local(&self, q: &Vec3) -> [f64; 3] {
        let d = q - self.anchor;
        let f = &self.frame;
        [
            (f[(0, 0)] * d.x + f[(1, 0)] * d.y + f[(2, 0)] * d.z) / self.weights[0],
            (f[(0, 1)] * d.x + f[(1, 1)] * d.y + f[(2, 1)] * d.z) / self.weights[1],
            (f[(0, 2)] * d.x + f[(1, 2)] * d.y + f[(2, 2)] * d.z) / self.weights[2],
        ]
    }

    /// Axis-aligned box containing the support.
    pub fn support_box(&self) -> (Vec3, Vec3) {
        let half = Vec3::from_fn(|d, _| {
            (0..3)
                .map(|e| self.frame[(d, e)].abs() * 2.0 * self.weights[e])
                .sum::<f64>()
        });
        (self.anchor - half, self.anchor + half)
    }

    #[inline]
    pub fn in_support(&self, q: &Vec3) -> bool {
        self.local(q).iter().all(|l| l.abs() < 2.0)
    }

    pub fn eval(&self, q: &Vec3) -> f64 {
        let l = self.local(q);
        if l.iter().any(|v| v.abs() >= 2.0) {
            return 0.0;
        }
        self.beta * tensor_b(l)
    }

    /// Value, gradient and Hessian in world coordinates.
    pub fn eval_full(&self, q: &Vec3) -> (f64, Vec3, Mat3) {
        let l = self.local(q);
        if l.iter().any(|v| v.abs() >= 2.0) {
            return (0.0, Vec3::zeros(), Mat3::zeros());
        }
        let (v, g, h) = tensor_b_full(l);
        // q -> l is affine with matrix M = W^-1 Q^T
        let inv_w = Mat3::from_diagonal(&Vec3::from(self.weights.map(|w| 1.0 / w)));
        let m = inv_w * self.frame.transpose();
        let grad = m.transpose() * Vec3::from(g);
        let hess = m.transpose() * symmetric(h) * m;
        let hess = (hess + hess.transpose()) * (0.5 * self.beta);
        (self.beta * v, grad * self.beta, hess)
    }
}

/// Base field plus a stack of deformers, summed in ascending id order.
///
/// Cloning is cheap for the base; edits produce new values so readers can keep
/// evaluating an older snapshot.
#[derive(Debug, Clone)]
pub struct CompositeField {
    base: Arc<SplineField>,
    deformers: Vec<Deformer>,
}

impl CompositeField {
    pub fn new(base: Arc<SplineField>) -> Self {
        CompositeField {
            base,
            deformers: Vec::new(),
        }
    }

    pub fn base(&self) -> &SplineField {
        &self.base
    }

    pub fn base_arc(&self) -> &Arc<SplineField> {
        &self.base
    }

    pub fn deformers(&self) -> &[Deformer] {
        &self.deformers
    }

    pub fn get(&self, id: u64) -> Option<&Deformer> {
        self.deformers
            .binary_search_by_key(&id, |d| d.id)
            .ok()
            .map(|i| &self.deformers[i])
    }

    /// Inserts `deformer`, or replaces the one with the same id.
    pub fn insert(&mut self, deformer: Deformer) {
        match self.deformers.binary_search_by_key(&deformer.id, |d| d.id) {
            Ok(i) => self.deformers[i] = deformer,
            Err(i) => self.deformers.insert(i, deformer),
        }
    }

    pub fn remove(&mut self, id: u64) -> Result<Deformer> {
        match self.deformers.binary_search_by_key(&id, |d| d.id) {
            Ok(i) => Ok(self.deformers.remove(i)),
            Err(_) => Err(Error::UnknownDeformer(id)),
        }
    }

    /// Copy of this composite without deformer `id`.
    pub fn without(&self, id: u64) -> CompositeField {
        CompositeField {
            base: Arc::clone(&self.base),
            deformers: self.deformers.iter().filter(|d| d.id != id).cloned().collect(),
        }
    }

    pub fn eval(&self, q: &Vec3) -> f64 {
        let mut value = self.base.eval(q);
        for d in &self.deformers {
            let l = d.local(q);
            if l.iter().all(|v| v.abs() < 2.0) {
                value += d.beta * tensor_b(l);
            }
        }
        value
    }

    pub fn eval_full(&self, q: &Vec3) -> FieldSample {
        let mut sample = self.base.eval_full(q);
        for d in &self.deformers {
            if d.in_support(q) {
                let (v, g, h) = d.eval_full(q);
                sample.value += v;
                sample.gradient += g;
                sample.hessian += h;
            }
        }
        sample
    }
}

impl ImplicitField for CompositeField {
    #[inline]
    fn value(&self, q: &Vec3) -> f64 {
        self.eval(q)
    }

    #[inline]
    fn sample(&self, q: &Vec3) -> FieldSample {
        self.eval_full(q)
    }
}

/// How a point was moved onto the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    GradientFlow,
    RaySearch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: Vec3,
    pub iterations: usize,
    pub method: ProjectionMethod,
}

/// Damped Newton flow `q <- q - F grad F / |grad F|^2` onto the zero level set,
/// halving steps that increase `|F|`. Fails where the gradient vanishes.
pub fn project_to_surface<F: ImplicitField + ?Sized>(field: &F, s: &Vec3) -> Result<Projection> {
    let fail = || Error::ProjectionFailed {
        x: s.x,
        y: s.y,
        z: s.z,
    };
    let mut q = *s;
    let mut sample = field.sample(&q);
    for iteration in 0..=PROJECTION_MAX_ITER {
        if sample.value.abs() <= PROJECTION_TOL {
            return Ok(Projection {
                point: q,
                iterations: iteration,
                method: ProjectionMethod::GradientFlow,
            });
        }
        if iteration == PROJECTION_MAX_ITER {
            break;
        }
        let g2 = sample.gradient.norm_squared();
        if !(g2 >= FLAT_GRADIENT_SQ) {
            break;
        }
        let step = -sample.gradient * (sample.value / g2);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=PROJECTION_HALVINGS {
            let candidate = q + step * t;
            let next = field.sample(&candidate);
            if next.value.abs() < sample.value.abs() {
                accepted = Some((candidate, next));
                break;
            }
            t *= 0.5;
        }
        let Some((candidate, next)) = accepted else {
            break;
        };
        q = candidate;
        sample = next;
    }
    Err(fail())
}

/// Marches from `s` along `dir` in steps of `step` until the sign of `F` changes
/// (or `max_distance` is exceeded), then bisects to the zero crossing.
pub fn ray_search<F: ImplicitField + ?Sized>(
    field: &F,
    s: &Vec3,
    dir: &Vec3,
    step: f64,
    max_distance: f64,
) -> Option<(Vec3, f64)> {
    let dir = dir.normalize();
    let f0 = field.value(s);
    if f0.abs() <= PROJECTION_TOL {
        return Some((*s, 0.0));
    }
    let mut t_prev = 0.0;
    let mut t = step;
    while t <= max_distance + 1e-12 {
        let v = field.value(&(s + dir * t));
        if v.signum() != f0.signum() || v.abs() <= PROJECTION_TOL {
            let (mut lo, mut hi) = (t_prev, t);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = field.value(&(s + dir * mid));
                if fm.abs() <= PROJECTION_TOL * 1e-3 || hi - lo < 1e-15 {
                    return Some((s + dir * mid, mid));
                }
                if fm.signum() == f0.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let mid = 0.5 * (lo + hi);
            return Some((s + dir * mid, mid));
        }
        t_prev = t;
        t += step;
    }
    None
}

/// Gradient flow, falling back to a ray search along `±fallback_dir`; the nearer
/// crossing wins, `+` on ties.
pub fn project_with_fallback<F: ImplicitField + ?Sized>(
    field: &F,
    s: &Vec3,
    fallback_dir: &Vec3,
    step: f64,
) -> Result<Projection> {
    if let Ok(p) = project_to_surface(field, s) {
        return Ok(p);
    }
    let plus = ray_search(field, s, fallback_dir, step, 1.0);
    let minus = ray_search(field, s, &-fallback_dir, step, 1.0);
    let best = match (plus, minus) {
        (Some(a), Some(b)) => Some(if b.1 < a.1 { b } else { a }),
        (a, b) => a.or(b),
    };
    best.map(|(point, _)| Projection {
        point,
        iterations: 0,
        method: ProjectionMethod::RaySearch,
    })
    .ok_or(Error::ProjectionFailed {
        x: s.x,
        y: s.y,
        z: s.z,
    })
}

/// Projects a saddle onto the surface, searching along its first eigenvector when
/// the flow stalls on the vanishing gradient.
pub fn project_saddle<F: ImplicitField + ?Sized>(
    field: &F,
    cp: &CriticalPoint,
    w: f64,
) -> Result<Projection> {
    project_with_fallback(field, &cp.position, &cp.eigenvector(0), w / 4.0)
}

/// Deformer axes with the eigenvalues they came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologyFrame {
    pub frame: Mat3,
    pub lambdas: [f64; 3],
    /// Eigenvalue index (ascending order) used for each axis.
    pub order: [usize; 3],
}

/// First axis: eigenvector best aligned with `s' - s`, pointing at `s'`. Second: one
/// whose eigenvalue has the opposite sign to the first (larger `|lambda|` if both
/// do). Third: the rest, signed to make the frame right-handed.
pub fn select_frame_topology(cp: &CriticalPoint, s_proj: &Vec3) -> TopologyFrame {
    let dir = s_proj - cp.position;
    let dir_norm = dir.norm();
    let first = if dir_norm > 0.0 {
        let cos: Vec<f64> = (0..3)
            .map(|i| cp.eigenvector(i).dot(&dir).abs() / dir_norm)
            .collect();
        let mut best = 0;
        for i in 1..3 {
            if cos[i] > cos[best] + ALIGNMENT_TIE {
                best = i;
            }
        }
        best
    } else {
        0
    };
    let mut a1 = cp.eigenvector(first);
    if a1.dot(&dir) < 0.0 {
        a1 = -a1;
    }
    let l1 = cp.eigenvalues[first];
    let rest: Vec<usize> = (0..3).filter(|&i| i != first).collect();
    let opposite: Vec<usize> = rest
        .iter()
        .copied()
        .filter(|&i| cp.eigenvalues[i].signum() != l1.signum())
        .collect();
    let pool = if opposite.is_empty() { &rest } else { &opposite };
    let mut second = pool[0];
    for &i in &pool[1..] {
        if cp.eigenvalues[i].abs() > cp.eigenvalues[second].abs() + EIGEN_TIE {
            second = i;
        }
    }
    let third = rest.iter().copied().find(|&i| i != second).unwrap();
    let a2 = cp.eigenvector(second);
    let mut a3 = cp.eigenvector(third);
    if a1.cross(&a2).dot(&a3) < 0.0 {
        a3 = -a3;
    }
    TopologyFrame {
        frame: Mat3::from_columns(&[a1, a2, a3]),
        lambdas: [l1, cp.eigenvalues[second], cp.eigenvalues[third]],
        order: [first, second, third],
    }
}

#[inline]
fn clamp_weight(v: f64, w: f64) -> f64 {
    if v.is_nan() {
        MAX_WEIGHT
    } else {
        v.clamp(0.5 * w, MAX_WEIGHT)
    }
}

/// `W1 = mu |F(s)|`, `W2 = phi w`, `W3 = W_ref |lambda3 / lambda_ref|` where the
/// reference axis is the first when `lambda3` shares its sign, else the second.
/// Every weight is clamped to `[w/2, 0.5]`; `W3` uses the clamped reference.
pub fn default_weights_topology(
    value: f64,
    frame: &TopologyFrame,
    params: &DeformerParams,
    w: f64,
) -> [f64; 3] {
    let w1 = clamp_weight(params.mu * value.abs(), w);
    let w2 = clamp_weight(params.phi * w, w);
    let [l1, l2, l3] = frame.lambdas;
    let (w_ref, l_ref) = if l3.signum() == l1.signum() {
        (w1, l1)
    } else {
        (w2, l2)
    };
    let w3 = clamp_weight(w_ref * (l3 / l_ref).abs(), w);
    [w1, w2, w3]
}

/// `beta` at which the composite value at `s` becomes zero: `-F(s) / B(0)`.
pub fn flip_threshold<F: ImplicitField + ?Sized>(field: &F, s: &Vec3) -> f64 {
    -field.value(s) / B_ZERO
}

/// Topology deformer at saddle `cp` (index `saddle` in the session list), sized
/// from the base field.
pub fn build_topology_deformer(
    base: &SplineField,
    cp: &CriticalPoint,
    saddle: usize,
    params: DeformerParams,
    id: u64,
) -> Result<Deformer> {
    params.validate()?;
    if !cp.class.is_saddle() {
        return Err(Error::InvalidArgument(format!(
            "topology deformers need a saddle, got {:?}",
            cp.class
        )));
    }
    let w = base.spec().spacing();
    let value = base.eval(&cp.position);
    let projection = project_saddle(base, cp, w)?;
    let frame = select_frame_topology(cp, &projection.point);
    let weights = default_weights_topology(value, &frame, &params, w);
    Ok(Deformer {
        id,
        kind: DeformerKind::Topology,
        mode: FrameMode::Hessian,
        anchor: cp.position,
        frame: frame.frame,
        weights,
        beta: -params.rho * value,
        source: DeformerSource::Topology { saddle, params },
    })
}

/// Some unit vector orthogonal to `n`, chosen deterministically.
fn orthogonal_to(n: &Vec3) -> Vec3 {
    let axis = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vec3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    n.cross(&axis).normalize()
}

/// Bulge or concavity at surface point `p`. The first axis is the Hessian
/// eigenvector of smallest `|lambda|` oriented along the gradient; the lateral
/// weights are `radius` scaled by the inverse ratio of the lateral eigenvalues
/// (capped at [`MAX_ANISOTROPY`]), so the footprint stretches along the flatter
/// direction. `|beta| = amplitude * w`.
pub fn build_geometry_deformer<F: ImplicitField + ?Sized>(
    field: &F,
    w: f64,
    p: &Vec3,
    kind: DeformerKind,
    radius: f64,
    amplitude: f64,
    id: u64,
) -> Result<Deformer> {
    if kind == DeformerKind::Topology {
        return Err(Error::InvalidArgument(
            "geometry deformers are bulges or concavities".into(),
        ));
    }
    if !(radius.is_finite() && radius > 0.0 && amplitude.is_finite() && amplitude >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need radius > 0 and amplitude >= 0 (got {radius}, {amplitude})"
        )));
    }
    let sample = field.sample(p);
    if !(sample.value.abs() <= GEOMETRY_SURFACE_TOL) {
        return Err(Error::InvalidArgument(format!(
            "point is not on the surface (F = {:.3e})",
            sample.value
        )));
    }
    let gradient = sample.gradient;
    let eig = sym_eigen(&sample.hessian);
    let mut by_magnitude = [0usize, 1, 2];
    by_magnitude.sort_by(|&a, &b| eig.values[a].abs().total_cmp(&eig.values[b].abs()));
    let scale = eig.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tie = (eig.values[by_magnitude[1]].abs() - eig.values[by_magnitude[0]].abs()).abs()
        < EIGEN_TIE * scale;
    let beta = -kind.geometry_sign() * amplitude * w;
    let base_weight = clamp_weight(radius, w);
    let (mode, frame, stretch) = if tie {
        if gradient.norm() == 0.0 {
            return Err(Error::InvalidArgument(
                "surface normal undefined at point".into(),
            ));
        }
        let n = gradient.normalize();
        let u = orthogonal_to(&n);
        let v = n.cross(&u);
        (FrameMode::NormalBased, Mat3::from_columns(&[n, u, v]), 1.0)
    } else {
        let mut n = eig.vector(by_magnitude[0]);
        if n.dot(&gradient) < 0.0 {
            n = -n;
        }
        let (ia, ib) = (by_magnitude[1], by_magnitude[2]);
        let a = eig.vector(ia);
        let mut b = eig.vector(ib);
        if n.cross(&a).dot(&b) < 0.0 {
            b = -b;
        }
        // |lambda_b| >= |lambda_a| > 0: the flatter lateral direction a stretches
        let ratio = (eig.values[ib].abs() / eig.values[ia].abs()).min(MAX_ANISOTROPY);
        (FrameMode::Hessian, Mat3::from_columns(&[n, a, b]), ratio)
    };
    Ok(Deformer {
        id,
        kind,
        mode,
        anchor: *p,
        frame,
        weights: [base_weight, clamp_weight(radius * stretch, w), base_weight],
        beta,
        source: DeformerSource::Geometry {
            point: *p,
            radius,
            amplitude,
            stretch,
        },
    })
}

/// Same geometry deformer with a new radius and amplitude; frame and stretch are kept.
pub fn retune_geometry(d: &Deformer, radius: f64, amplitude: f64, w: f64) -> Result<Deformer> {
    let DeformerSource::Geometry { point, stretch, .. } = d.source else {
        return Err(Error::InvalidArgument(format!(
            "deformer {} is not a geometry deformer",
            d.id
        )));
    };
    if !(radius.is_finite() && radius > 0.0 && amplitude.is_finite() && amplitude >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need radius > 0 and amplitude >= 0 (got {radius}, {amplitude})"
        )));
    }
    let base_weight = clamp_weight(radius, w);
    Ok(Deformer {
        weights: [base_weight, clamp_weight(radius * stretch, w), base_weight],
        beta: -d.kind.geometry_sign() * amplitude * w,
        source: DeformerSource::Geometry {
            point,
            radius,
            amplitude,
            stretch,
        },
        ..d.clone()
    })
}
