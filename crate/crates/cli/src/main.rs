mod script;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use morphield::critical::CriticalPoint;
use morphield::mesh::load_mesh;
use morphield::metrics::{evaluate, topology_counts, MetricsOptions, DEFAULT_F_THRESHOLD, DEFAULT_SAMPLES, DEFAULT_SEED};
use morphield::session::{create_session, EditSession};
use morphield::surfacing::{marching_cubes, render, Camera, RenderParams};
use morphield_server::{encode_frame, AppState};
use serde::Serialize;

use crate::script::{parse_script, Step};

/// Caps the worker pool used by fitting, search, rendering and metrics.
const THREADS_ENV: &str = "MORPHIELD_THREADS";

#[derive(Parser)]
#[command(name = "morphield", version, about = "Topology-aware editing of implicit surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a mesh and write a new session.
    Fit {
        mesh: PathBuf,
        #[arg(short, long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = morphield::mesh::DEFAULT_MARGIN)]
        margin: f64,
        /// Session file; defaults to the mesh path with `.session.json`.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// List exposed saddles, or every critical point.
    Saddles {
        session: PathBuf,
        #[arg(long)]
        all_criticals: bool,
        #[arg(long)]
        json: bool,
    },
    /// Apply an edit script and save the result.
    Edit {
        session: PathBuf,
        script: PathBuf,
        /// Write here instead of overwriting the input session.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Ray-march the edited surface to a PNG (or a binary frame with `--frame`).
    Render {
        session: PathBuf,
        /// Camera position then target, unit-cube coordinates.
        #[arg(long, num_args = 6, value_names = ["PX", "PY", "PZ", "TX", "TY", "TZ"], allow_negative_numbers = true)]
        cam: Option<Vec<f64>>,
        #[arg(long, default_value = "256x256", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        frame: bool,
    },
    /// Extract the edited surface as OBJ in the original mesh coordinates.
    Export {
        session: PathBuf,
        #[arg(long, default_value_t = 128)]
        res: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Compare mesh `a` against reference `b`.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_F_THRESHOLD)]
        threshold: f64,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP and WebSocket API for a session.
    Serve {
        session: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w = w.parse().map_err(|_| format!("bad width {w:?}"))?;
    let h = h.parse().map_err(|_| format!("bad height {h:?}"))?;
    Ok((w, h))
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn default_session_path(mesh: &Path) -> PathBuf {
    mesh.with_extension("session.json")
}

#[derive(Serialize)]
struct FitReport<'a> {
    session: &'a Path,
    n: usize,
    saddles: usize,
    critical_points: usize,
    fit: morphield::session::FitSummary,
    timings: morphield::session::Timings,
}

fn print_points(points: &[CriticalPoint]) {
    println!("{:>4}  {:<9} {:>9} {:>9} {:>9} {:>11} {:>10}", "id", "class", "x", "y", "z", "F", "|grad|");
    for (i, cp) in points.iter().enumerate() {
        let p = cp.position;
        let class = format!("{:?}", cp.class).to_lowercase();
        let flag = if cp.degenerate { "  degenerate" } else { "" };
        println!(
            "{i:>4}  {class:<9} {:>9.5} {:>9.5} {:>9.5} {:>11.6} {:>10.2e}{flag}",
            p.x, p.y, p.z, cp.value, cp.grad_norm
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { mesh, n, margin, out } => {
            let session = create_session(&mesh, n, margin)?;
            let path = out.unwrap_or_else(|| default_session_path(&mesh));
            session.save(&path).with_context(|| format!("saving {}", path.display()))?;
            print_json(&FitReport {
                session: &path,
                n,
                saddles: session.saddles().len(),
                critical_points: session.critical_points().len(),
                fit: session.fit,
                timings: session.timings,
            })
        }
        Command::Saddles { session, all_criticals, json } => {
            let s = EditSession::load(&session)?;
            let points = if all_criticals { s.critical_points() } else { s.saddles() };
            if json {
                print_json(&points)
            } else {
                print_points(points);
                Ok(())
            }
        }
        Command::Edit { session, script, out } => {
            let mut s = EditSession::load(&session)?;
            let text = fs::read_to_string(&script).with_context(|| format!("reading {}", script.display()))?;
            for (i, step) in parse_script(&text)?.into_iter().enumerate() {
                let outcome = match &step {
                    Step::Apply(cmd) => s.apply(cmd),
                    Step::Undo => s.undo(),
                }
                .with_context(|| format!("step {} ({step:?})", i + 1))?;
                println!("{}", serde_json::to_string(&outcome)?);
            }
            let path = out.unwrap_or(session);
            s.save(&path)?;
            Ok(())
        }
        Command::Render { session, cam, size, out, frame } => {
            let s = EditSession::load(&session)?;
            let camera = match cam {
                Some(v) => Camera::from_six(v.try_into().map_err(|_| anyhow!("--cam takes six numbers"))?),
                None => Camera::default(),
            };
            let params = RenderParams {
                camera,
                width: size.0,
                height: size.1,
                ..RenderParams::default()
            };
            let image = render(s.composite(), &params)?;
            if frame {
                fs::write(&out, encode_frame(&image, s.revision(), 0, true)).with_context(|| format!("writing {}", out.display()))?;
            } else {
                image.write_png(&out)?;
            }
            eprintln!("rendered {}x{} at revision {} in {:.1} ms", size.0, size.1, s.revision(), image.millis);
            Ok(())
        }
        Command::Export { session, res, out } => {
            let s = EditSession::load(&session)?;
            let mesh = marching_cubes(s.composite(), res)?;
            fs::write(&out, mesh.to_obj_string(Some(&s.transform))).with_context(|| format!("writing {}", out.display()))?;
            let topo = topology_counts(&mesh);
            eprintln!(
                "{} vertices, {} triangles, {} components, genus {:?}",
                mesh.vertices.len(),
                mesh.triangles.len(),
                topo.component_count,
                topo.genus_per_component
            );
            Ok(())
        }
        Command::Metrics { a, b, samples, seed, threshold, out } => {
            let options = MetricsOptions {
                samples,
                seed,
                f_threshold: threshold,
            };
            let report = evaluate(&load_mesh(&a)?, &load_mesh(&b)?, &options)?;
            if let Some(out) = out {
                fs::write(&out, serde_json::to_string_pretty(&report)? + "\n").with_context(|| format!("writing {}", out.display()))?;
            }
            print_json(&report)
        }
        Command::Serve { session, bind } => {
            let s = EditSession::load(&session)?;
            let state = AppState::new(s, Some(session));
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime
                .block_on(morphield_server::serve(state, bind))
                .with_context(|| format!("serving on {bind}"))
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads().and_then(|_| run(cli)) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
