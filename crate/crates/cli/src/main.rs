//! `fixtures`: batch front-end for surface fixtures.
//!
//! Every subcommand prints one JSON summary line on stdout. Exit status is 0
//! on success, 2 for invalid input (files, specs, labels, geometry), 3 when a
//! solve fails, 1 for other I/O failures. `FIXTURES_THREADS` caps the worker
//! pool.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use surface_fixtures::fixtures::{default_max_steps, sample_free_starts, simulate_agents, Outcome};
use surface_fixtures::io::{
    read_cloud_file, surface_from, write_field, write_trajectories, FieldRef, IoError, PlyFormat, SpecFile,
};
use surface_fixtures::operators::{assemble_laplacian, LaplacianParams, ScalarField};
use surface_fixtures::segmentation::{extract_open_boundary, DEFAULT_GAP_THRESHOLD};
use surface_fixtures::{
    apply_labels, build_guidance_fixture, build_value_fixture, FixtureError, FixtureKind, FixtureSpec,
    GuidanceFixture, PointCloud, RegionLabeling, DEFAULT_K,
};

#[derive(Parser)]
#[command(name = "fixtures", version, about = "Diffusion-based virtual fixtures on point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a cloud: size, spacing, regions, connectivity.
    Info {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Detect open scan boundaries by angular neighbor gap.
    Boundaries {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        /// Gap threshold in radians.
        #[arg(long, default_value_t = DEFAULT_GAP_THRESHOLD)]
        threshold: f64,
        /// PLY with `u` = 1 on flagged points.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        ascii: bool,
    },
    /// Interpolate annotated values over the free region.
    SolveValues {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ascii: bool,
    },
    /// Build the guidance field toward targets around obstacles.
    SolveGuidance {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Composed direction field.
        #[arg(long)]
        out: PathBuf,
        /// Raw target-attraction heat solution.
        #[arg(long)]
        scalar_out: Option<PathBuf>,
        #[arg(long)]
        ascii: bool,
    },
    /// Run agents through a guidance field and write their trajectories.
    Simulate {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Number of random free-region starts.
        #[arg(long, default_value_t = 100)]
        starts: usize,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Step length in meters; defaults to the mean spacing.
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Trajectory CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Idle session lifetime in seconds.
        #[arg(long, default_value_t = 3600)]
        ttl: u64,
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
}

enum Failure {
    Validation(String),
    Solver(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Io(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Solver(m) | Failure::Io(m) => m,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io(_) | IoError::Csv(_) => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<FixtureError> for Failure {
    fn from(e: FixtureError) -> Self {
        match e {
            FixtureError::Solve(_) => Failure::Solver(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

fn validation(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Io(format!("cannot create {}: {e}", path.display())))
}

fn format(ascii: bool) -> PlyFormat {
    if ascii {
        PlyFormat::Ascii
    } else {
        PlyFormat::BinaryLittleEndian
    }
}

struct Loaded {
    cloud: Arc<PointCloud>,
    labeling: RegionLabeling,
    input_points: usize,
}

fn load(path: &Path, k: usize) -> Result<Loaded, Failure> {
    let data = read_cloud_file(path)?;
    let (cloud, labels) = surface_from(&data, k).map_err(validation)?;
    let labeling = apply_labels(&cloud, &labels).map_err(validation)?;
    Ok(Loaded {
        cloud: Arc::new(cloud),
        labeling,
        input_points: data.positions.len(),
    })
}

fn load_with_spec(cloud: &Path, spec: &Path, kind: FixtureKind) -> Result<(Loaded, SpecFile, FixtureSpec), Failure> {
    let spec_file = SpecFile::read(spec)?;
    if spec_file.kind != kind {
        return Err(Failure::Validation(format!(
            "{}: expected a {kind:?} spec, found {:?}",
            spec.display(),
            spec_file.kind
        )));
    }
    let loaded = load(cloud, spec_file.k)?;
    let fixture_spec = spec_file.to_fixture_spec(loaded.labeling.labels())?;
    Ok((loaded, spec_file, fixture_spec))
}

fn region_counts(labeling: &RegionLabeling) -> Value {
    (0..labeling.region_count())
        .map(|r| (r.to_string(), json!(labeling.members(r as u32).len())))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn guidance(cloud: &Path, spec: &Path) -> Result<(Loaded, SpecFile, GuidanceFixture), Failure> {
    let (loaded, spec_file, fixture_spec) = load_with_spec(cloud, spec, FixtureKind::Guidance)?;
    let fixture = build_guidance_fixture(&loaded.cloud, &loaded.labeling, &fixture_spec)?;
    Ok((loaded, spec_file, fixture))
}

fn run(command: Command) -> Result<Value, Failure> {
    let started = Instant::now();
    let mut summary = match command {
        Command::Info { cloud, k } => {
            let loaded = load(&cloud, k)?;
            let op = assemble_laplacian(&loaded.cloud, &LaplacianParams::default()).map_err(validation)?;
            let open = extract_open_boundary(&loaded.cloud, &loaded.labeling, DEFAULT_GAP_THRESHOLD).map_err(validation)?;
            json!({
                "command": "info",
                "points": loaded.cloud.len(),
                "input_points": loaded.input_points,
                "k": k,
                "h": loaded.cloud.mean_spacing(),
                "components": op.components().count,
                "regions": region_counts(&loaded.labeling),
                "open_boundary_points": open.flagged.iter().filter(|&&f| f).count(),
            })
        }
        Command::Boundaries {
            cloud,
            k,
            threshold,
            out,
            ascii,
        } => {
            let loaded = load(&cloud, k)?;
            let open = extract_open_boundary(&loaded.cloud, &loaded.labeling, threshold).map_err(validation)?;
            if let Some(out) = &out {
                let field = ScalarField::new(open.flagged.iter().map(|&f| f as u8 as f64).collect());
                write_field(create(out)?, loaded.cloud.positions(), FieldRef::Scalar(&field), format(ascii))?;
            }
            let by_region: serde_json::Map<String, Value> = open
                .by_region
                .iter()
                .enumerate()
                .map(|(r, pts)| (r.to_string(), json!(pts.len())))
                .collect();
            json!({
                "command": "boundaries",
                "points": loaded.cloud.len(),
                "flagged": open.flagged.iter().filter(|&&f| f).count(),
                "by_region": by_region,
                "out": out,
            })
        }
        Command::SolveValues {
            cloud,
            spec,
            out,
            ascii,
        } => {
            let (loaded, _, fixture_spec) = load_with_spec(&cloud, &spec, FixtureKind::Value)?;
            let fixture = build_value_fixture(&loaded.cloud, &loaded.labeling, &fixture_spec)?;
            write_field(create(&out)?, loaded.cloud.positions(), FieldRef::Scalar(fixture.field()), format(ascii))?;
            let (min, max) = fixture.field().range().unwrap_or((f64::NAN, f64::NAN));
            json!({
                "command": "solve-values",
                "points": loaded.cloud.len(),
                "undefined_count": fixture.field().undefined_count(),
                "undefined_components": fixture.undefined_components().len(),
                "min": min,
                "max": max,
                "out": out,
            })
        }
        Command::SolveGuidance {
            cloud,
            spec,
            out,
            scalar_out,
            ascii,
        } => {
            let (loaded, _, fixture) = guidance(&cloud, &spec)?;
            let directions = fixture.directions();
            write_field(create(&out)?, loaded.cloud.positions(), FieldRef::Vector(&directions), format(ascii))?;
            if let Some(path) = &scalar_out {
                write_field(
                    create(path)?,
                    loaded.cloud.positions(),
                    FieldRef::Scalar(fixture.target_solve()),
                    format(ascii),
                )?;
            }
            json!({
                "command": "solve-guidance",
                "points": loaded.cloud.len(),
                "diffusion_time": fixture.diffusion_time(),
                "free_undefined": (0..loaded.cloud.len())
                    .filter(|&i| fixture.role_at(i) == surface_fixtures::Role::Free && !fixture.free_field().defined[i])
                    .count(),
                "out": out,
                "scalar_out": scalar_out,
            })
        }
        Command::Simulate {
            cloud,
            spec,
            starts,
            seed,
            step,
            max_steps,
            out,
        } => {
            let (loaded, spec_file, fixture) = guidance(&cloud, &spec)?;
            let seed = seed.or(spec_file.seed).unwrap_or(0);
            let start_points = sample_free_starts(&fixture, starts, seed);
            let step = step.unwrap_or(loaded.cloud.mean_spacing());
            let max_steps = max_steps.unwrap_or_else(|| default_max_steps(&loaded.cloud));
            let trajectories = simulate_agents(&fixture, &start_points, step, max_steps)?;
            let mut writer = create(&out)?;
            write_trajectories(&mut writer, &trajectories)?;
            writer.flush().map_err(|e| Failure::Io(e.to_string()))?;
            let count = |o: Outcome| trajectories.iter().filter(|t| t.outcome == o).count();
            json!({
                "command": "simulate",
                "agents": trajectories.len(),
                "seed": seed,
                "step": step,
                "max_steps": max_steps,
                "success": count(Outcome::Success),
                "stall": count(Outcome::Stall),
                "timeout": count(Outcome::Timeout),
                "out": out,
            })
        }
        Command::Serve {
            port,
            host,
            ttl,
            snapshot_dir,
        } => {
            let config = fixtures_service::ServiceConfig {
                ttl: Duration::from_secs(ttl),
                snapshot_dir,
                ..Default::default()
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .map_err(|e| Failure::Io(format!("cannot bind {host}:{port}: {e}")))?;
                let addr = listener.local_addr().map_err(|e| Failure::Io(e.to_string()))?;
                println!("{}", json!({"command": "serve", "listening": addr.to_string()}));
                fixtures_service::serve(listener, config)
                    .await
                    .map_err(|e| Failure::Io(e.to_string()))
            })?;
            json!({"command": "serve", "stopped": true})
        }
    };
    summary["elapsed_ms"] = json!(started.elapsed().as_secs_f64() * 1e3);
    Ok(summary)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(threads) = std::env::var("FIXTURES_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("ignoring FIXTURES_THREADS: {e}");
        }
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
