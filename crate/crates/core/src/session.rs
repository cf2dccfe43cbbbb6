//! Edit sessions: the fitted field, its saddles, the deformer stack and persistence.
//!
//! A session is saved as a JSON envelope plus a binary sidecar (`<name>.coeff`)
//! holding the coefficient lattice as little-endian `f64` in x-fastest order.
//! Both files are written to a temporary name and renamed into place, sidecar first.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::critical::{find_critical_points, CriticalPoint, SearchStats};
use crate::deformer::{
    build_geometry_deformer, build_topology_deformer, project_to_surface, retune_geometry,
    CompositeField, Deformer, DeformerKind, DeformerParams, DeformerSource, GEOMETRY_SURFACE_TOL,
};
use crate::grid::GridSpec;
use crate::mesh::load_mesh;
use crate::mesh::{normalize_to_unit, MeshData, NormalizationTransform};
use crate::sdf::{sample_grid, MeshSdf};
use crate::spline::{fit, FitOptions, SplineField};
use crate::{Error, Result, Vec3};

pub const FORMAT_VERSION: u32 = 1;
pub const HISTORY_LIMIT: usize = 256;
const COEFF_MAGIC: &[u8; 8] = b"MRPHCOEF";
const COEFF_HEADER: usize = 16;
/// Geometry deformer radius in grid cells when none is given.
pub const DEFAULT_GEOMETRY_RADIUS_CELLS: f64 = 4.0;
pub const DEFAULT_GEOMETRY_AMPLITUDE: f64 = 5.0;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub path: String,
    pub sha256: String,
    pub vertices: usize,
    pub triangles: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub tol: f64,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    pub max_interpolation_error: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub sample_seconds: f64,
    pub fit_seconds: f64,
    pub search_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditCommand {
    AddTopologyDeformer {
        saddle: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phi: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho: Option<f64>,
    },
    AddGeometryDeformer {
        point: Vec3,
        kind: DeformerKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amplitude: Option<f64>,
    },
    Retune {
        id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phi: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amplitude: Option<f64>,
    },
    Remove {
        id: u64,
    },
}

/// Result of one successful edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOutcome {
    pub revision: u64,
    /// The deformer added, retuned or removed.
    pub deformer: u64,
    /// Union of the support boxes before and after the edit, `None` if nothing moved.
    pub changed: Option<[Vec3; 2]>,
}

/// How to reverse an applied edit exactly.
#[derive(Debug, Clone)]
enum Inverse {
    Remove(u64),
    Restore(Deformer),
}

#[derive(Debug, Clone)]
pub struct EditSession {
    pub source: SourceInfo,
    pub margin: f64,
    pub transform: NormalizationTransform,
    pub fit: FitSummary,
    pub search: SearchStats,
    pub timings: Timings,
    pub params: DeformerParams,
    saddles: Arc<Vec<CriticalPoint>>,
    criticals: Arc<Vec<CriticalPoint>>,
    composite: Arc<CompositeField>,
    revision: u64,
    next_id: u64,
    history: VecDeque<Inverse>,
}

fn union_box(a: Option<[Vec3; 2]>, b: (Vec3, Vec3)) -> Option<[Vec3; 2]> {
    Some(match a {
        None => [b.0, b.1],
        Some([lo, hi]) => [lo.inf(&b.0), hi.sup(&b.1)],
    })
}

fn merge_param(value: Option<f64>, default: f64) -> f64 {
    value.unwrap_or(default)
}

impl EditSession {
    /// Fits a normalized mesh and searches its saddles.
    pub fn from_mesh(mesh: &MeshData, source: SourceInfo, n: usize, margin: f64) -> Result<Self> {
        let spec = GridSpec::new(n)?;
        let (normalized, transform) = normalize_to_unit(mesh, margin)?;
        let start = Instant::now();
        let sdf = MeshSdf::new(normalized)?;
        let grid = sample_grid(&sdf, spec);
        let sample_seconds = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let options = FitOptions::default();
        let (field, report) = fit(&grid, options);
        let fit_seconds = start.elapsed().as_secs_f64();
        let summary = FitSummary {
            tol: options.tol,
            iterations: report.iterations,
            relative_residual: report.relative_residual,
            converged: report.converged,
            max_interpolation_error: field.max_interpolation_error(&grid),
        };
        let mut session = EditSession::from_field(field, source, transform, margin, summary)?;
        session.timings.sample_seconds = sample_seconds;
        session.timings.fit_seconds = fit_seconds;
        Ok(session)
    }

    /// Wraps an already fitted field and searches its critical points.
    pub fn from_field(
        field: SplineField,
        source: SourceInfo,
        transform: NormalizationTransform,
        margin: f64,
        fit: FitSummary,
    ) -> Result<Self> {
        let search = find_critical_points(&field);
        Ok(EditSession {
            source,
            margin,
            transform,
            fit,
            timings: Timings {
                search_seconds: search.stats.seconds,
                ..Timings::default()
            },
            search: search.stats,
            params: DeformerParams::default(),
            saddles: Arc::new(search.saddles),
            criticals: Arc::new(search.all),
            composite: Arc::new(CompositeField::new(Arc::new(field))),
            revision: 0,
            next_id: 1,
            history: VecDeque::new(),
        })
    }

    pub fn field(&self) -> &SplineField {
        self.composite.base()
    }

    pub fn spec(&self) -> GridSpec {
        self.field().spec()
    }

    /// Exposed saddles, fixed for the lifetime of the session.
    pub fn saddles(&self) -> &[CriticalPoint] {
        &self.saddles
    }

    /// Every critical point found, extrema included.
    pub fn critical_points(&self) -> &[CriticalPoint] {
        &self.criticals
    }

    pub fn composite(&self) -> &CompositeField {
        &self.composite
    }

    /// Immutable view for readers; later edits do not affect it.
    pub fn snapshot(&self) -> (u64, Arc<CompositeField>) {
        (self.revision, Arc::clone(&self.composite))
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn deformers(&self) -> &[Deformer] {
        self.composite.deformers()
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    fn push_history(&mut self, inverse: Inverse) {
        if self.history.len() == HISTORY_LIMIT {
            self.history.pop_front();
        }
        self.history.push_back(inverse);
    }

    fn saddle(&self, id: usize) -> Result<&CriticalPoint> {
        self.saddles.get(id).ok_or(Error::UnknownSaddle(id))
    }

    fn existing(&self, id: u64) -> Result<&Deformer> {
        self.composite.get(id).ok_or(Error::UnknownDeformer(id))
    }

    /// Builds the deformer a command would produce without applying it.
    fn build(&self, cmd: &EditCommand) -> Result<Option<Deformer>> {
        let w = self.spec().spacing();
        match *cmd {
            EditCommand::AddTopologyDeformer { saddle, mu, phi, rho } => {
                let params = DeformerParams {
                    mu: merge_param(mu, self.params.mu),
                    phi: merge_param(phi, self.params.phi),
                    rho: merge_param(rho, self.params.rho),
                };
                let cp = self.saddle(saddle)?;
                build_topology_deformer(self.field(), cp, saddle, params, self.next_id).map(Some)
            }
            EditCommand::AddGeometryDeformer {
                point,
                kind,
                radius,
                amplitude,
            } => {
                let radius = merge_param(radius, DEFAULT_GEOMETRY_RADIUS_CELLS * w);
                let amplitude = merge_param(amplitude, DEFAULT_GEOMETRY_AMPLITUDE);
                let comp = &*self.composite;
                let p = if comp.eval(&point).abs() <= GEOMETRY_SURFACE_TOL {
                    point
                } else {
                    project_to_surface(comp, &point)?.point
                };
                build_geometry_deformer(comp, w, &p, kind, radius, amplitude, self.next_id).map(Some)
            }
            EditCommand::Retune {
                id,
                mu,
                phi,
                rho,
                radius,
                amplitude,
            } => {
                let d = self.existing(id)?;
                match d.source {
                    DeformerSource::Topology { saddle, params } => {
                        if radius.is_some() || amplitude.is_some() {
                            return Err(Error::InvalidArgument(format!(
                                "deformer {id} is a topology deformer; retune mu, phi or rho"
                            )));
                        }
                        let params = DeformerParams {
                            mu: merge_param(mu, params.mu),
                            phi: merge_param(phi, params.phi),
                            rho: merge_param(rho, params.rho),
                        };
                        build_topology_deformer(self.field(), self.saddle(saddle)?, saddle, params, id)
                            .map(Some)
                    }
                    DeformerSource::Geometry {
                        radius: r0,
                        amplitude: a0,
                        ..
                    } => {
                        if mu.is_some() || phi.is_some() || rho.is_some() {
                            return Err(Error::InvalidArgument(format!(
                                "deformer {id} is a geometry deformer; retune radius or amplitude"
                            )));
                        }
                        retune_geometry(d, merge_param(radius, r0), merge_param(amplitude, a0), w)
                            .map(Some)
                    }
                }
            }
            EditCommand::Remove { id } => {
                self.existing(id)?;
                Ok(None)
            }
        }
    }

    /// Applies one edit atomically: on error nothing changes.
    pub fn apply(&mut self, cmd: &EditCommand) -> Result<EditOutcome> {
        let built = self.build(cmd)?;
        let mut composite = (*self.composite).clone();
        let (target, inverse, changed) = match (cmd, built) {
            (EditCommand::Remove { id }, _) => {
                let old = composite.remove(*id)?;
                let changed = union_box(None, old.support_box());
                (*id, Inverse::Restore(old), changed)
            }
            (EditCommand::Retune { id, .. }, Some(new)) => {
                let old = composite.get(*id).cloned().ok_or(Error::UnknownDeformer(*id))?;
                let changed = union_box(union_box(None, old.support_box()), new.support_box());
                composite.insert(new);
                (*id, Inverse::Restore(old), changed)
            }
            (_, Some(new)) => {
                let id = new.id;
                let changed = union_box(None, new.support_box());
                composite.insert(new);
                self.next_id += 1;
                (id, Inverse::Remove(id), changed)
            }
            (_, None) => unreachable!("add and retune always build a deformer"),
        };
        self.composite = Arc::new(composite);
        self.push_history(inverse);
        self.revision += 1;
        Ok(EditOutcome {
            revision: self.revision,
            deformer: target,
            changed,
        })
    }

    /// Reverts the most recent edit; counts as an edit for the revision number.
    pub fn undo(&mut self) -> Result<EditOutcome> {
        let inverse = self.history.pop_back().ok_or(Error::NothingToUndo)?;
        let mut composite = (*self.composite).clone();
        let (id, changed) = match inverse {
            Inverse::Remove(id) => {
                let old = composite.remove(id)?;
                (id, union_box(None, old.support_box()))
            }
            Inverse::Restore(d) => {
                let id = d.id;
                let mut changed = union_box(None, d.support_box());
                if let Some(cur) = composite.get(id) {
                    changed = union_box(changed, cur.support_box());
                }
                composite.insert(d);
                (id, changed)
            }
        };
        self.composite = Arc::new(composite);
        self.revision += 1;
        Ok(EditOutcome {
            revision: self.revision,
            deformer: id,
            changed,
        })
    }

    /// Zero level set of the composite in original model coordinates.
    pub fn export_mesh(&self, res: usize) -> Result<MeshData> {
        let mesh = crate::surfacing::marching_cubes(&*self.composite, res)?;
        Ok(mesh.transformed(|p| self.transform.invert(p)))
    }
}

/// Loads and fits a mesh file. Nothing is written.
pub fn create_session(path: impl AsRef<Path>, n: usize, margin: f64) -> Result<EditSession> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mesh = load_mesh(path)?;
    let source = SourceInfo {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
    };
    EditSession::from_mesh(&mesh, source, n, margin)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CoefficientRef {
    file: String,
    sha256: String,
}

/// The JSON envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionFile {
    format_version: u32,
    source: SourceInfo,
    margin: f64,
    transform: NormalizationTransform,
    n: usize,
    coefficients: CoefficientRef,
    fit: FitSummary,
    search: SearchStats,
    timings: Timings,
    params: DeformerParams,
    revision: u64,
    next_id: u64,
    saddles: Vec<CriticalPoint>,
    critical_points: Vec<CriticalPoint>,
    deformers: Vec<Deformer>,
}

/// `<session>.coeff` next to the session file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("coeff")
}

pub fn encode_coefficients(field: &SplineField) -> Vec<u8> {
    let mut out = Vec::with_capacity(COEFF_HEADER + 8 * field.coefficients().len());
    out.extend_from_slice(COEFF_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(field.spec().cells() as u32).to_le_bytes());
    for c in field.coefficients() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn decode_coefficients(bytes: &[u8]) -> Result<SplineField> {
    if bytes.len() < COEFF_HEADER || &bytes[..8] != COEFF_MAGIC {
        return Err(Error::Session("coefficient file has a bad header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Session(format!(
            "coefficient format version {version} is not supported"
        )));
    }
    let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let spec = GridSpec::new(n)?;
    let body = &bytes[COEFF_HEADER..];
    if body.len() != 8 * spec.vertex_count() {
        return Err(Error::Session(format!(
            "coefficient file holds {} bytes, expected {} for n = {n}",
            body.len(),
            8 * spec.vertex_count()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SplineField::from_coefficients(spec, values)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

impl EditSession {
    fn envelope(&self, coefficients: CoefficientRef) -> SessionFile {
        SessionFile {
            format_version: FORMAT_VERSION,
            source: self.source.clone(),
            margin: self.margin,
            transform: self.transform,
            n: self.spec().cells(),
            coefficients,
            fit: self.fit,
            search: self.search,
            timings: self.timings,
            params: self.params,
            revision: self.revision,
            next_id: self.next_id,
            saddles: self.saddles.to_vec(),
            critical_points: self.criticals.to_vec(),
            deformers: self.deformers().to_vec(),
        }
    }

    /// Writes the sidecar then the envelope, each through a temporary file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let sidecar = sidecar_path(path);
        let coeff = encode_coefficients(self.field());
        let name = sidecar
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let envelope = self.envelope(CoefficientRef {
            file: name,
            sha256: sha256_hex(&coeff),
        });
        let mut json = serde_json::to_vec_pretty(&envelope)?;
        json.push(b'\n');
        write_atomic(&sidecar, &coeff)?;
        write_atomic(path, &json)
    }

    /// Reads a session saved by [`EditSession::save`]. Undo history starts empty.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: SessionFile = serde_json::from_slice(&text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Session(format!(
                "session format version {} is not supported",
                file.format_version
            )));
        }
        let sidecar = match path.parent() {
            Some(dir) => dir.join(&file.coefficients.file),
            None => PathBuf::from(&file.coefficients.file),
        };
        let bytes = fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        if sha256_hex(&bytes) != file.coefficients.sha256 {
            return Err(Error::Session(format!(
                "{} does not match the checksum recorded in the session",
                sidecar.display()
            )));
        }
        let field = decode_coefficients(&bytes)?;
        if field.spec().cells() != file.n {
            return Err(Error::Session(format!(
                "session says n = {} but the coefficient file has n = {}",
                file.n,
                field.spec().cells()
            )));
        }
        let mut composite = CompositeField::new(Arc::new(field));
        for d in file.deformers {
            if d.id >= file.next_id {
                return Err(Error::Session(format!("deformer id {} not below next_id", d.id)));
            }
            composite.insert(d);
        }
        Ok(EditSession {
            source: file.source,
            margin: file.margin,
            transform: file.transform,
            fit: file.fit,
            search: file.search,
            timings: file.timings,
            params: file.params,
            saddles: Arc::new(file.saddles),
            criticals: Arc::new(file.critical_points),
            composite: Arc::new(composite),
            revision: file.revision,
            next_id: file.next_id,
            history: VecDeque::new(),
        })
    }
}
