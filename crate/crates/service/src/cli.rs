use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use cvil_core::dataset::{self, write_export_csv, ClassSchema, EmbeddingDataset};
use cvil_core::measures::{MeasureConfig, NeighborhoodConfig};
use cvil_core::session::{Session, SessionConfig, SessionHeader};
use cvil_core::simulation::synthetic::{gaussian_blobs, BlobSpec};
use cvil_core::simulation::{bench_measures, run_simulation, SimulationConfig};

use crate::api::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "cvil", version, about = "Class-centric interactive labeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a feature file and optionally convert it between CSV and binary.
    Ingest(IngestArgs),
    /// Serve the labeling API for one dataset.
    Serve(ServeArgs),
    /// Run a labeling simulation from a JSON config and write its curves.
    Simulate(SimulateArgs),
    /// Time the three property measures on random data.
    Bench(BenchArgs),
    /// Export labels from a saved session.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Feature file, CSV or binary.
    #[arg(long = "in", visible_alias = "features")]
    pub features: PathBuf,
    /// Comma-separated class names, or a class count. Inferred from the
    /// labels when omitted.
    #[arg(long)]
    pub classes: Option<String>,
    /// `id,class_id` CSV replacing any label column of the feature file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Directory of images named by instance id.
    #[arg(long)]
    pub images: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Binary,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Write the validated dataset here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format; by default `.csv` means CSV and anything else binary.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Session save file; resumed when it exists, rewritten after every action.
    #[arg(long)]
    pub session: Option<PathBuf>,
    /// Session configuration JSON (model, training and measure settings).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Curve CSV; the JSON sidecar goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 16384)]
    pub n: usize,
    #[arg(long, default_value_t = 1024)]
    pub d: usize,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Runs per measure; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Feature file; defaults to the path recorded in the session.
    #[arg(long = "in", visible_alias = "features")]
    pub features: Option<PathBuf>,
    /// Export CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => ingest(args),
        Command::Serve(args) => serve(args),
        Command::Simulate(args) => simulate(args),
        Command::Bench(args) => bench(args),
        Command::Export(args) => export(args),
    }
}

pub fn parse_schema(arg: &str) -> Result<ClassSchema> {
    let schema = match arg.trim().parse::<usize>() {
        Ok(k) => ClassSchema::new((0..k).map(|c| format!("class{c}"))),
        Err(_) => ClassSchema::new(arg.split(',').map(str::trim)),
    };
    Ok(schema?)
}

/// Placeholder schema wide enough for any label when the class list is inferred.
const INFER_CLASSES: usize = 1 << 16;

pub fn load_dataset(
    features: &Path,
    classes: Option<&str>,
    labels: Option<&Path>,
    images: Option<&Path>,
) -> Result<EmbeddingDataset> {
    let context = || format!("ingesting {}", features.display());
    if let Some(arg) = classes {
        return dataset::ingest(features, parse_schema(arg)?, labels, images).with_context(context);
    }
    let wide = parse_schema(&INFER_CLASSES.to_string())?;
    let probe = dataset::ingest(features, wide, labels, None).with_context(context)?;
    let k = probe
        .ground_truth()
        .and_then(|gt| gt.iter().map(|c| c.index() + 1).max())
        .unwrap_or(2)
        .max(2);
    let ids = probe.ids().to_vec();
    let truth = probe.ground_truth().map(<[_]>::to_vec);
    let narrowed = EmbeddingDataset::new(parse_schema(&k.to_string())?, ids, probe.features().to_vec(), probe.dim(), truth)?;
    Ok(match images {
        Some(dir) => narrowed.with_images(dir)?,
        None => narrowed,
    })
}

fn load(args: &DatasetArgs) -> Result<EmbeddingDataset> {
    load_dataset(
        &args.features,
        args.classes.as_deref(),
        args.labels.as_deref(),
        args.images.as_deref(),
    )
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn ingest(args: IngestArgs) -> Result<()> {
    let dataset = load(&args.dataset)?;
    let labeled = dataset.ground_truth().map_or(0, <[_]>::len);
    println!(
        "{}: {} instances, {} dims, {} classes, {} labeled",
        args.dataset.features.display(),
        dataset.len(),
        dataset.dim(),
        dataset.num_classes(),
        labeled
    );
    if let Some(out) = &args.out {
        let format = args.format.unwrap_or(match out.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        });
        let mut w = create(out)?;
        match format {
            Format::Csv => dataset::write_csv(&dataset, &mut w)?,
            Format::Binary => dataset::write_binary(&dataset, &mut w)?,
        }
        w.flush()?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("malformed config {}", path.display()))
}

fn serve(args: ServeArgs) -> Result<()> {
    let dataset = Arc::new(load(&args.dataset)?);
    let config: SessionConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SessionConfig::default(),
    };
    let session = match &args.session {
        Some(path) if path.exists() => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let session = Session::replay(Arc::clone(&dataset), BufReader::new(file))
                .with_context(|| format!("resuming {}", path.display()))?;
            println!("resumed {} actions from {}", session.sequence(), path.display());
            session
        }
        _ => Session::new(Arc::clone(&dataset), config),
    };
    let mut state = AppState::new(session);
    if let Some(dir) = &args.dataset.images {
        state = state.with_images(dir.clone());
    }
    if let Some(path) = &args.session {
        let recorded = std::path::absolute(&args.dataset.features).unwrap_or_else(|_| args.dataset.features.clone());
        state = state.with_save_path(path.clone(), Some(recorded.display().to_string()));
    }
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .with_context(|| format!("invalid address {}:{}", args.host, args.port))?;

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, api::router(Arc::new(state)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// The fixed 3-class overlapping blob geometry.
    OverlappingTriplet { seed: u64 },
    Blobs(BlobSpec),
    File {
        features: PathBuf,
        classes: Option<String>,
        labels: Option<PathBuf>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub simulation: SimulationConfig,
    /// Curve CSV, relative to the config file.
    pub output: Option<PathBuf>,
}

impl DatasetSource {
    /// Builds the dataset; file paths are taken relative to `base`.
    pub fn load(&self, base: &Path) -> Result<EmbeddingDataset> {
        Ok(match self {
            DatasetSource::OverlappingTriplet { seed } => gaussian_blobs(&BlobSpec::overlapping_triplet(*seed)),
            DatasetSource::Blobs(spec) => gaussian_blobs(spec),
            DatasetSource::File {
                features,
                classes,
                labels,
            } => load_dataset(
                &base.join(features),
                classes.as_deref(),
                labels.as_ref().map(|l| base.join(l)).as_deref(),
                None,
            )?,
        })
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let file: SimulateFile = read_json(&args.config)?;
    let base = args.config.parent().unwrap_or(Path::new("")).to_path_buf();
    let dataset = file.dataset.load(&base)?;
    let out = match (&args.out, &file.output) {
        (Some(out), _) => out.clone(),
        (None, Some(out)) => base.join(out),
        (None, None) => args.config.with_extension("curves.csv"),
    };
    let run = run_simulation(&dataset, &file.simulation)?;
    let mut w = create(&out)?;
    run.write_csv(&mut w)?;
    w.flush()?;
    let sidecar = out.with_extension("json");
    let mut w = create(&sidecar)?;
    run.write_config_json(&mut w)?;
    w.flush()?;
    let last = run.final_record();
    println!(
        "{}: {} iterations, {} instance + {} batch labels, test acc {:.4}, export acc {:.4}, {} ms",
        file.simulation.strategy.as_str(),
        last.iteration,
        last.instance_labels,
        last.batch_labels,
        last.test_acc,
        last.export_acc,
        run.elapsed_ms
    );
    println!("wrote {} and {}", out.display(), sidecar.display());
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    if args.n < 2 || args.d == 0 {
        bail!("bench needs n >= 2 and d >= 1");
    }
    let config = MeasureConfig {
        neighborhood: NeighborhoodConfig { k: args.k.min(args.n - 1) },
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let rows = bench_measures(args.n, args.d, args.seed, args.repeat, &config)?;
    let total = start.elapsed();
    if args.json {
        let body = serde_json::json!({ "rows": rows, "total_ms": total.as_secs_f64() * 1e3 });
        println!("{}", serde_json::to_string_pretty(&body)?);
        return Ok(());
    }
    println!("{:<14} {:>8} {:>6} {:>12}", "measure", "n", "d", "ms");
    for r in &rows {
        println!(
            "{:<14} {:>8} {:>6} {:>12.3}",
            r.measure.as_str(),
            r.n,
            r.d,
            r.elapsed.as_secs_f64() * 1e3
        );
    }
    println!("total {:.3} s including data generation", total.as_secs_f64());
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.session).with_context(|| format!("reading {}", args.session.display()))?;
    let header_line = text.lines().next().unwrap_or_default();
    let header: SessionHeader =
        serde_json::from_str(header_line).with_context(|| format!("malformed session header in {}", args.session.display()))?;
    let features = match (&args.features, &header.dataset_path) {
        (Some(path), _) => path.clone(),
        (None, Some(path)) => PathBuf::from(path),
        (None, None) => bail!("the session does not record its dataset; pass --in"),
    };
    let schema = ClassSchema::new(header.classes.iter().cloned())?;
    let dataset = Arc::new(dataset::ingest(&features, schema, None, None).with_context(|| format!("ingesting {}", features.display()))?);
    let session = Session::replay(dataset, text.as_bytes()).with_context(|| format!("replaying {}", args.session.display()))?;
    let records = session.export()?;
    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            write_export_csv(&records, &mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            write_export_csv(&records, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}
