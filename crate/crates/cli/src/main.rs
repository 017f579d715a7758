use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use image::{GrayImage, Luma};
use refcut_api as api;
use refcut_client::{encode_png, Client};
use refcut_core::data::synth::{generate_synthetic, SynthConfig};
use refcut_core::data::{coco::convert_coco_parts, export_tda, load_part_dataset, Split};
use refcut_core::degrade::{sweep, sweep_csv, Degradation};
use refcut_core::maskops::{rle_decode, rle_encode, BitMask};
use refcut_core::model::RefCut;
use refcut_core::robot::{evaluate, EvalConfig, GuidanceMode, NoCReport, MAX_CLICKS, STOP_IOU};
use refcut_core::sampling::{build_eval_samples, manifest_jsonl};
use refcut_core::training::{train, TrainConfig};
use refcut_core::DType;
use refcut_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "refcut", version, about = "Reference-guided interactive segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic part dataset split.
    Generate(GenerateArgs),
    /// Convert COCO-style part annotations into the dataset layout.
    Export(ExportArgs),
    /// Train a model from a TOML config.
    Train(TrainArgs),
    /// Robot-clicker evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// Talk to a running service.
    Session {
        #[arg(long, default_value = "http://127.0.0.1:8080", global = true)]
        server: String,
        #[command(subcommand)]
        command: SessionCommand,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    /// TOML file with synthesis settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    categories: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset root holding `train/` (and optionally `val/`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Comma-separated subset of none,pos,neg,both.
    #[arg(long, default_value = "none,pos,neg,both", value_delimiter = ',')]
    modes: Vec<String>,
    #[arg(long, default_value_t = MAX_CLICKS)]
    max_clicks: usize,
    #[arg(long, default_value_t = STOP_IOU)]
    stop_iou: f64,
    /// 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Full reports, one JSON object per mode, as a JSON array.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the evaluation sample list as JSON lines.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Polygon-interval sweep levels (with guidance `both`).
    #[arg(long, value_delimiter = ',')]
    polygon: Vec<usize>,
    /// Reference-scale sweep levels (with guidance `both`).
    #[arg(long, value_delimiter = ',')]
    scale: Vec<f64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 64)]
    max_sessions: usize,
    #[arg(long, default_value_t = 4096 * 4096)]
    max_pixels: u64,
    #[arg(long, default_value_t = 1800)]
    ttl_secs: u64,
}

#[derive(Subcommand)]
enum SessionCommand {
    Health,
    /// Prints the new session id.
    Create {
        #[arg(long)]
        image: PathBuf,
        /// Optional ground-truth mask PNG (nonzero = foreground).
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    Reference {
        #[arg(long)]
        id: String,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        pos: Option<PathBuf>,
        #[arg(long)]
        neg: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
    },
    /// Prints the response; `--out` also writes the mask as PNG.
    Click {
        #[arg(long)]
        id: String,
        #[arg(long)]
        row: u32,
        #[arg(long)]
        col: u32,
        #[arg(long)]
        negative: bool,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Undo {
        #[arg(long)]
        id: String,
    },
    Reset {
        #[arg(long)]
        id: String,
    },
    Delete {
        #[arg(long)]
        id: String,
    },
}

fn read_mask(path: &Path) -> Result<BitMask> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(BitMask::from_fn(h as usize, w as usize, |r, c| {
        img.get_pixel(c as u32, r as u32)[0] > 0
    })?)
}

fn write_mask(mask: &BitMask, path: &Path) -> Result<()> {
    let (h, w) = mask.dims();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    img.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_rgb(path: &Path) -> Result<image::RgbImage> {
    Ok(image::open(path).with_context(|| format!("reading {}", path.display()))?.to_rgb8())
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.instances {
        cfg.instances_per_category = n;
    }
    if let Some(n) = args.categories {
        cfg.n_categories = n;
    }
    if let Some(n) = args.size {
        cfg.image_size = n;
    }
    let manifest = generate_synthetic(&cfg, &args.out, Split::parse(&args.split)?)?;
    println!("{} objects written to {}", manifest.entries.len(), manifest.root.display());
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let (dataset, contested) = convert_coco_parts(&args.annotations, &args.images)?;
    let manifest = export_tda(&dataset, &args.out, Split::parse(&args.split)?)?;
    println!(
        "{} objects written to {} ({contested} contested pixels resolved)",
        manifest.entries.len(),
        manifest.root.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let cfg: TrainConfig = toml::from_str(&text)?;
    cfg.validate()?;
    let dataset = load_part_dataset(&args.data, Split::Train)?;
    let held_out = if args.data.join(Split::Val.name()).is_dir() {
        Some(build_eval_samples(&load_part_dataset(&args.data, Split::Val)?))
    } else {
        None
    };
    tracing::info!(objects = dataset.len(), held_out = held_out.as_ref().map_or(0, |s| s.len()), "training");
    let outcome = train(&dataset, cfg, held_out.as_deref(), Some(&args.out))?;
    let last = outcome.history.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} steps, final loss {last:.4}, checkpoint {}",
        outcome.history.len(),
        outcome.final_checkpoint.as_deref().unwrap_or(Path::new("-")).display()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let model = RefCut::load(&args.checkpoint, DType::F32)?;
    let dataset = load_part_dataset(&args.data, Split::parse(&args.split)?)?;
    let samples = build_eval_samples(&dataset);
    if let Some(p) = &args.manifest {
        std::fs::write(p, manifest_jsonl(&samples)?)?;
    }
    let base = EvalConfig {
        max_clicks: args.max_clicks,
        stop_iou: args.stop_iou,
        workers: args.workers,
        ..EvalConfig::default()
    };
    let mut reports: Vec<NoCReport> = Vec::new();
    let mut csv = format!("{}\n", NoCReport::CSV_HEADER);
    for m in &args.modes {
        let config = EvalConfig {
            mode: GuidanceMode::parse(m)?,
            ..base
        };
        let report = evaluate(&model, &samples, &config)?;
        csv.push_str(&report.csv_row());
        csv.push('\n');
        reports.push(report);
    }
    print!("{csv}");
    if let Some(p) = &args.csv {
        std::fs::write(p, &csv)?;
    }
    if let Some(p) = &args.json {
        let values: Vec<serde_json::Value> = reports.iter().map(serde_json::to_value).collect::<Result<_, _>>()?;
        std::fs::write(p, serde_json::to_string_pretty(&values)?)?;
    }

    let mut levels: Vec<Degradation> = args.polygon.iter().map(|&k| Degradation::Polygon(k)).collect();
    levels.extend(args.scale.iter().map(|&s| Degradation::Scale(s)));
    if !levels.is_empty() {
        let config = EvalConfig {
            mode: GuidanceMode::Both,
            ..base
        };
        print!("{}", sweep_csv(&sweep(&model, &samples, &config, &levels)?));
    }
    Ok(())
}

async fn serve(args: ServeArgs) -> Result<()> {
    let model = RefCut::load(&args.checkpoint, DType::F32)?;
    let config = ServiceConfig {
        max_sessions: args.max_sessions,
        max_pixels: args.max_pixels,
        ttl: Duration::from_secs(args.ttl_secs),
        ..ServiceConfig::default()
    };
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse()?;
    let (listener, local) = refcut_service::bind(addr).await?;
    tracing::info!(%local, "listening");
    println!("listening on http://{local}");
    refcut_service::serve(listener, AppState::new(Arc::new(model), config)).await?;
    Ok(())
}

async fn session(server: String, command: SessionCommand) -> Result<()> {
    let client = Client::new(server);
    match command {
        SessionCommand::Health => print_json(&client.health().await?),
        SessionCommand::Create { image, gt } => {
            let mut req = api::CreateSessionRequest::new(encode_png(&read_rgb(&image)?)?);
            if let Some(p) = gt {
                req.gt_rle = Some(rle_encode(&read_mask(&p)?));
            }
            let resp = client.create_session(&req).await?;
            println!("{}", resp.session_id);
            Ok(())
        }
        SessionCommand::Reference {
            id,
            image,
            pos,
            neg,
            label,
        } => {
            let rle = |p: Option<PathBuf>| -> Result<Option<String>> {
                p.map(|p| read_mask(&p).map(|m| rle_encode(&m))).transpose()
            };
            let mut req = api::SetReferenceRequest::new(encode_png(&read_rgb(&image)?)?, rle(pos)?, rle(neg)?);
            req.label = label;
            print_json(&client.set_reference(&id, &req).await?)
        }
        SessionCommand::Click {
            id,
            row,
            col,
            negative,
            label,
            out,
        } => {
            let polarity = if negative {
                api::Polarity::Negative
            } else {
                api::Polarity::Positive
            };
            let mut req = api::ClickRequest::new(row, col, polarity);
            req.label = label;
            let resp = client.click(&id, &req).await?;
            if let Some(p) = out {
                write_mask(&rle_decode(&resp.mask_rle)?, &p)?;
            }
            print_json(&resp)
        }
        SessionCommand::Undo { id } => print_json(&client.undo(&id).await?),
        SessionCommand::Reset { id } => print_json(&client.reset(&id).await?),
        SessionCommand::Delete { id } => print_json(&client.delete_session(&id).await?),
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Export(a) => export(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Serve(a) => runtime()?.block_on(serve(a)),
        Command::Session { server, command } => runtime()?.block_on(session(server, command)),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Runtime::new()?)
}

