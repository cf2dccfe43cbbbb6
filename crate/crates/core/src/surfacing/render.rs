use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::spline::ImplicitField;
use crate::{Error, Result, Vec3};

/// Rays are clipped to the unit cube grown by this much.
const CUBE_INFLATION: f64 = 1e-6;
const SURFACE_COLOR: [f64; 3] = [0.86, 0.74, 0.58];
const AMBIENT: f64 = 0.12;
/// Transparent black.
pub const BACKGROUND: [u8; 4] = [0, 0, 0, 0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    /// Vertical field of view in degrees.
    pub fov_y: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            position: Vec3::new(0.5, 0.5, -1.2),
            target: Vec3::repeat(0.5),
            up: Vec3::y(),
            fov_y: 40.0,
        }
    }
}

impl Camera {
    /// Position and target from six numbers, `+y` up.
    pub fn from_six(v: [f64; 6]) -> Self {
        Camera {
            position: Vec3::new(v[0], v[1], v[2]),
            target: Vec3::new(v[3], v[4], v[5]),
            ..Camera::default()
        }
    }

    /// Orbit around `target`; angles in degrees, azimuth measured in the x-z plane.
    pub fn orbit(target: Vec3, azimuth: f64, elevation: f64, distance: f64) -> Self {
        let (a, e) = (azimuth.to_radians(), elevation.to_radians());
        let offset = Vec3::new(e.cos() * a.sin(), e.sin(), -e.cos() * a.cos()) * distance;
        Camera {
            position: target + offset,
            target,
            ..Camera::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let forward = self.target - self.position;
        let ok = forward.norm() > 0.0
            && forward.cross(&self.up).norm() > 1e-12 * forward.norm() * self.up.norm()
            && self.fov_y > 0.0
            && self.fov_y < 180.0
            && [self.position, self.target, self.up]
                .iter()
                .all(|v| v.iter().all(|c| c.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("degenerate camera {self:?}")))
        }
    }

    /// Orthonormal (right, up, forward) basis.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.target - self.position).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        (right, up, forward)
    }

    /// Unit direction through the center of pixel `(px, py)`, row 0 at the top.
    pub fn ray(&self, px: usize, py: usize, width: usize, height: usize) -> Vec3 {
        let (right, up, forward) = self.basis();
        let half = (0.5 * self.fov_y.to_radians()).tan();
        let aspect = width as f64 / height as f64;
        let x = (2.0 * (px as f64 + 0.5) / width as f64 - 1.0) * half * aspect;
        let y = (1.0 - 2.0 * (py as f64 + 0.5) / height as f64) * half;
        (forward + right * x + up * y).normalize()
    }

    /// Pixel coordinates of a world point, `None` behind the camera.
    pub fn project(&self, p: &Vec3, width: usize, height: usize) -> Option<(f64, f64)> {
        let (right, up, forward) = self.basis();
        let d = p - self.position;
        let z = d.dot(&forward);
        if z <= 0.0 {
            return None;
        }
        let half = (0.5 * self.fov_y.to_radians()).tan();
        let aspect = width as f64 / height as f64;
        let x = d.dot(&right) / z / (half * aspect);
        let y = d.dot(&up) / z / half;
        Some((
            (x + 1.0) * 0.5 * width as f64,
            (1.0 - y) * 0.5 * height as f64,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderParams {
    pub camera: Camera,
    pub width: usize,
    pub height: usize,
    pub max_steps: usize,
    pub step_scale: f64,
    pub hit_eps: f64,
    pub max_distance: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams {
            camera: Camera::default(),
            width: 256,
            height: 256,
            max_steps: 256,
            step_scale: 0.7,
            hit_eps: 1e-4,
            max_distance: 4.0,
        }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.width == 0 || self.height == 0 || self.width > 8192 || self.height > 8192 {
            return Err(Error::InvalidArgument(format!(
                "image size {}x{} out of range",
                self.width, self.height
            )));
        }
        if !(self.step_scale > 0.0 && self.step_scale <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "step_scale {} not in (0, 1]",
                self.step_scale
            )));
        }
        if !(self.hit_eps > 0.0 && self.max_distance > 0.0) {
            return Err(Error::InvalidArgument(
                "hit_eps and max_distance must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub point: Vec3,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceResult {
    pub hit: Option<Hit>,
    /// Field evaluations spent inside the clipped interval.
    pub steps: usize,
}

/// Parametric interval of the ray inside the inflated unit cube.
fn clip_to_cube(origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
    let (lo, hi) = (-CUBE_INFLATION, 1.0 + CUBE_INFLATION);
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo || origin[a] > hi {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut ta, mut tb) = ((lo - origin[a]) * inv, (hi - origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Sphere tracing with steps `step_scale * F`, restricted to the unit cube.
pub fn sphere_trace<F: ImplicitField + ?Sized>(
    field: &F,
    origin: &Vec3,
    dir: &Vec3,
    params: &RenderParams,
) -> TraceResult {
    let miss = |steps| TraceResult { hit: None, steps };
    let Some((t0, t1)) = clip_to_cube(origin, dir) else {
        return miss(0);
    };
    let t_end = t1.min(params.max_distance);
    let mut t = t0.max(0.0);
    if t > t_end {
        return miss(0);
    }
    for step in 0..params.max_steps {
        let p = origin + dir * t;
        let v = field.value(&p);
        if v < params.hit_eps {
            return TraceResult {
                hit: Some(Hit { point: p, distance: t }),
                steps: step + 1,
            };
        }
        t += params.step_scale * v;
        if t > t_end {
            return miss(step + 1);
        }
    }
    miss(params.max_steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major RGBA8, row 0 at the top.
    pub rgba: Vec<u8>,
    /// Hit distance per pixel, infinite on misses.
    pub depth: Vec<f32>,
    pub millis: f64,
}

impl RenderedFrame {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 4] {
        let i = 4 * (y * self.width + x);
        [self.rgba[i], self.rgba[i + 1], self.rgba[i + 2], self.rgba[i + 3]]
    }

    pub fn depth_at(&self, x: usize, y: usize) -> f32 {
        self.depth[y * self.width + x]
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            encoder.set_color(png::ColorType::Rgba);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header()?;
            writer.write_image_data(&self.rgba)?;
        }
        Ok(out)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    }
}

fn shade(field: &(impl ImplicitField + ?Sized), hit: &Hit, dir: &Vec3) -> [u8; 4] {
    let g = field.sample(&hit.point).gradient;
    let lambert = if g.norm() > 0.0 {
        (-g.normalize().dot(dir)).max(0.0)
    } else {
        0.0
    };
    let k = AMBIENT + (1.0 - AMBIENT) * lambert;
    let c = SURFACE_COLOR.map(|c| (c * k * 255.0).round().clamp(0.0, 255.0) as u8);
    [c[0], c[1], c[2], 255]
}

/// One primary ray per pixel, Lambertian headlight shading from the analytic
/// gradient. Rows are traced in parallel; every pixel is a pure function of its ray.
pub fn render<F: ImplicitField + ?Sized>(field: &F, params: &RenderParams) -> Result<RenderedFrame> {
    params.validate()?;
    let start = Instant::now();
    let (w, h) = (params.width, params.height);
    let cam = &params.camera;
    let mut rgba = vec![0u8; 4 * w * h];
    let mut depth = vec![f32::INFINITY; w * h];
    rgba.par_chunks_mut(4 * w)
        .zip(depth.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, drow))| {
            for x in 0..w {
                let dir = cam.ray(x, y, w, h);
                let trace = sphere_trace(field, &cam.position, &dir, params);
                let (px, d) = match trace.hit {
                    Some(hit) => (shade(field, &hit, &dir), hit.distance as f32),
                    None => (BACKGROUND, f32::INFINITY),
                };
                row[4 * x..4 * x + 4].copy_from_slice(&px);
                drow[x] = d;
            }
        });
    Ok(RenderedFrame {
        width: w,
        height: h,
        rgba,
        depth,
        millis: start.elapsed().as_secs_f64() * 1e3,
    })
}
