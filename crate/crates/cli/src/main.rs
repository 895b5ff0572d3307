use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use echomap_core::evalreport::{emit_report, ReportInputs};
use echomap_core::groundtruth::build_mask;
use echomap_core::io;
use echomap_core::mapping::{render_heatmap, ColorScale, Method, Palette};
use echomap_core::neural::{train, Model};
use echomap_core::pipeline::{
    cluster_stage, derive_seed, map_readings, overlay_stage, overlay_svg, run_field, run_lab,
    ClusterScope, PipelineConfig,
};
use echomap_core::seqdata::{normalize, read_jsonl, train_test_split, SequenceDataset};
use echomap_core::spectral::analyze;
use echomap_core::synthlab::{synth_slab, SlabSpec};
use echomap_core::DefectClass;

#[derive(Parser, Debug)]
#[command(
    name = "echomap",
    version,
    about = "Impact-echo defect mapping and classification"
)]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Pipeline configuration (JSON). Missing fields take defaults.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one synthetic slab: spec, waveforms and ground truth.
    Synth(SynthArgs),
    /// Waveforms CSV to peak-frequency readings CSV.
    Analyze {
        #[arg(long)]
        waveforms: PathBuf,
    },
    /// Interpolate readings onto a field and render a heatmap.
    Map(MapArgs),
    /// Two-means defect clustering of readings.
    Cluster {
        #[arg(long)]
        readings: PathBuf,
        /// Slab width in inches (zone boundaries); defaults to the config slab.
        #[arg(long)]
        width: Option<f64>,
        #[arg(long)]
        scope: Option<ClusterScope>,
    },
    /// Score defective points against a slab's ground-truth mask.
    Overlay {
        #[arg(long)]
        defective: PathBuf,
        /// Slab spec written by `synth`.
        #[arg(long)]
        spec: PathBuf,
        /// IoU rasterization radius in inches.
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Train the classifier on a JSON-lines dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Predict defect types for a JSON-lines dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Rebuild report.md, tables and figures from saved report inputs.
    Report {
        #[arg(long)]
        inputs: PathBuf,
    },
    /// Full lab pipeline over the synthetic slab corpus.
    RunLab {
        /// Widen every defect sub-band (class-overlap stress test).
        #[arg(long)]
        stress: bool,
    },
    /// Cluster a deck's readings and map predicted defect types.
    RunField {
        #[arg(long)]
        readings: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Which slab of the lab corpus to generate (its seed is derived from the master seed).
    #[arg(long, default_value_t = 1)]
    slab: usize,
    /// Slab spec JSON used instead of the config template.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    stress: bool,
}

#[derive(Args, Debug)]
struct MapArgs {
    #[arg(long)]
    readings: PathBuf,
    /// Slab spec giving grid shape and extent; defaults to the config slab.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    palette: Option<Palette>,
    /// Heatmap file name inside the output directory (.svg or .ppm).
    #[arg(long, default_value = "heatmap.svg")]
    image: String,
    /// Fixed color scale `MIN:MAX` in kHz, for comparable maps.
    #[arg(long, value_name = "MIN:MAX")]
    scale: Option<String>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = match &cli.config {
        Some(p) => io::read_json(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn parse_scale(s: &str) -> Result<ColorScale> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("scale must look like MIN:MAX"))?;
    let (min, max): (f64, f64) = (lo.trim().parse()?, hi.trim().parse()?);
    if !(min < max) {
        bail!("scale minimum must be below maximum");
    }
    Ok(ColorScale { min, max })
}

fn stress_bands(cfg: &mut PipelineConfig) {
    cfg.slab.band_table = PipelineConfig::stress().slab.band_table;
}

fn load_spec(path: Option<&Path>, cfg: &PipelineConfig) -> Result<SlabSpec> {
    Ok(match path {
        Some(p) => io::read_json(p)?,
        None => cfg.slab.clone(),
    })
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli).context("config")?;
    let out = &cli.out;
    match &cli.command {
        Command::Synth(a) => {
            if a.stress {
                stress_bands(&mut cfg);
            }
            let spec = match &a.spec {
                Some(p) => SlabSpec {
                    seed: cli.seed.unwrap_or(derive_seed(cfg.seed, "slab", 0)),
                    ..io::read_json(p)?
                },
                None => cfg.slab_spec(
                    a.slab
                        .checked_sub(1)
                        .ok_or_else(|| anyhow!("--slab counts from 1"))?,
                ),
            };
            let slab = synth_slab(&spec)?;
            io::write_json(&out.join("spec.json"), &slab.spec)?;
            io::write_waveforms(&out.join("waveforms.csv"), &slab.waveforms)?;
            io::write_json(&out.join("truth.json"), &slab.truth)?;
            println!(
                "{} waveforms written to {}",
                slab.waveforms.len(),
                out.display()
            );
        }
        Command::Analyze { waveforms } => {
            let ws = io::read_waveforms(waveforms)?;
            let readings = analyze(&ws, &cfg.analyze)?;
            let flagged = readings.iter().filter(|r| !r.qa.is_ok()).count();
            io::write_readings(&out.join("readings.csv"), &readings)?;
            println!("{} readings ({} flagged)", readings.len(), flagged);
        }
        Command::Map(a) => {
            let spec = load_spec(a.spec.as_deref(), &cfg)?;
            let readings = io::read_readings(&a.readings)?;
            let field = map_readings(
                &readings,
                &spec,
                a.method.unwrap_or(cfg.interpolation),
                cfg.field_resolution_in,
            )?;
            io::write_json(&out.join("field.json"), &field)?;
            let scale = a.scale.as_deref().map(parse_scale).transpose()?;
            let image = out.join(&a.image);
            std::fs::create_dir_all(out).with_context(|| out.display().to_string())?;
            render_heatmap(&field, &image, a.palette.unwrap_or(cfg.palette), scale)?;
            println!(
                "{}x{} field, heatmap {}",
                field.rows,
                field.cols,
                image.display()
            );
        }
        Command::Cluster {
            readings,
            width,
            scope,
        } => {
            let readings = io::read_readings(readings)?;
            let width = width.unwrap_or(cfg.slab.width_in);
            let clusters = cluster_stage(
                &readings,
                width,
                scope.unwrap_or(cfg.scope),
                derive_seed(cfg.seed, "kmeans", 0),
            )?;
            let defective: Vec<_> = clusters.iter().flat_map(|c| c.defective.clone()).collect();
            io::write_json(&out.join("clusters.json"), &clusters)?;
            io::write_readings(&out.join("defective.csv"), &defective)?;
            for c in &clusters {
                let name = c.class.map_or("deck".to_string(), |k| k.code().to_string());
                println!(
                    "{name}: {} defective, {} intact, {} excluded, centroids {:?}",
                    c.defective.len(),
                    c.intact_count,
                    c.excluded_count,
                    c.centroids
                );
            }
        }
        Command::Overlay {
            defective,
            spec,
            radius,
        } => {
            let spec: SlabSpec = io::read_json(spec)?;
            let points = io::read_readings(defective)?;
            let mask = build_mask(&spec.defects, spec.width_in, spec.height_in, 1.0)?;
            let mut ocfg = cfg.clone();
            ocfg.overlay_radius_in = radius.or(cfg.overlay_radius_in);
            let (px, py) = spec.pitch();
            let base = echomap_core::groundtruth::OverlayConfig {
                dilation_radius_in: ocfg.overlay_radius_in.unwrap_or(px.min(py) / 2.0),
                region_x: None,
            };
            let clusters = vec![echomap_core::clustering::ZoneClusters {
                class: None,
                x_lo_in: 0.0,
                x_hi_in: spec.width_in,
                defective: points.clone(),
                intact_count: 0,
                excluded_count: 0,
                centroids: vec![],
                cost: 0.0,
                degenerate: false,
            }];
            let overlays = overlay_stage(&clusters, &mask, &spec.grid_points(), &base)?;
            let zones: Vec<_> = overlays
                .iter()
                .map(|(class, o)| echomap_core::evalreport::ZoneScore {
                    class: *class,
                    metrics: o.metrics,
                })
                .collect();
            io::write_json(&out.join("overlay.json"), &zones)?;
            let valid: Vec<_> = overlays.iter().flat_map(|(_, o)| o.valid.clone()).collect();
            io::write_text(
                &out.join("overlay.svg"),
                &overlay_svg(&mask, &points, &valid),
            )?;
            for z in &zones {
                println!(
                    "{}: precision {:.4}, IoU {:.4}, recall {:.4}",
                    z.class.code(),
                    z.metrics.precision,
                    z.metrics.iou,
                    z.metrics.recall
                );
            }
        }
        Command::Train { dataset } => {
            let ds = read_jsonl(dataset)?;
            let ds = if ds.splits.len() == ds.len() {
                ds
            } else {
                train_test_split(
                    ds,
                    cfg.split_ratio,
                    derive_seed(cfg.seed, "split", 0),
                    cfg.stratified,
                )?
            };
            let ds = normalize(ds)?;
            let model_cfg = echomap_core::neural::ModelConfig {
                seed: derive_seed(cfg.seed, "model", 0),
                ..cfg.model.clone()
            };
            let (model, history) = train(&model_cfg, &ds)?;
            model.save(&out.join("model.json"))?;
            io::write_json(&out.join("history.json"), &history)?;
            if let Some(last) = history.epochs.last() {
                println!(
                    "trained {} epochs: loss {:.4}, train acc {:.4}, test acc {}",
                    history.epochs.len(),
                    last.train_loss,
                    last.train_accuracy,
                    last.test_accuracy
                        .map_or("n/a".into(), |a| format!("{a:.4}"))
                );
            }
        }
        Command::Predict { model, dataset } => {
            let model = Model::load(model)?;
            let ds: SequenceDataset = read_jsonl(dataset)?;
            let raw: Vec<Vec<f64>> = ds.sequences.iter().map(|s| s.values.clone()).collect();
            let preds = model.predict_raw(&raw)?;
            let mut csv = String::from("index,label,class,confidence,true_label\n");
            let mut correct = 0;
            for (i, (p, s)) in preds.iter().zip(&ds.sequences).enumerate() {
                let class = DefectClass::from_label(p.label).expect("four classes");
                correct += (p.label == s.label) as usize;
                csv.push_str(&format!(
                    "{i},{},{class},{:.6},{}\n",
                    p.label, p.confidence, s.label
                ));
            }
            io::write_text(&out.join("predictions.csv"), &csv)?;
            println!(
                "{} predictions; agreement with stored labels {:.4}",
                preds.len(),
                correct as f64 / preds.len().max(1) as f64
            );
        }
        Command::Report { inputs } => {
            let inputs: ReportInputs = io::read_json(inputs)?;
            let files = emit_report(&inputs, out)?;
            println!("{} report files written to {}", files.len(), out.display());
        }
        Command::RunLab { stress } => {
            if *stress {
                stress_bands(&mut cfg);
            }
            let outcome = run_lab(&cfg, out)?;
            let s = &outcome.summary;
            println!("mean IoU {:.4} ± {:.4}", s.mean_iou, s.std_iou);
            println!("mean overlay precision {:.4}", s.mean_precision);
            match s.test_accuracy {
                Some(a) => println!("test accuracy {a:.4} ({} test sequences)", s.test_sequences),
                None => println!("classifier skipped"),
            }
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::RunField { readings, model } => {
            let readings = io::read_readings(readings)?;
            let model = Model::load(model)?;
            let outcome = run_field(&cfg, &readings, &model, out)?;
            let s = &outcome.summary;
            println!(
                "{} defective points, {} sequences",
                s.defective_points, s.sequences
            );
            for (c, pct) in &s.class_percentages {
                println!("{:>22}: {pct:5.1}%", c.display_name());
            }
        }
    }
    Ok(())
}

fn stage_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Analyze { .. } => "analyze",
        Command::Map(_) => "map",
        Command::Cluster { .. } => "cluster",
        Command::Overlay { .. } => "overlay",
        Command::Train { .. } => "train",
        Command::Predict { .. } => "predict",
        Command::Report { .. } => "report",
        Command::RunLab { .. } => "run-lab",
        Command::RunField { .. } => "run-field",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("echomap {}: error: {e:#}", stage_name(&cli.command));
            ExitCode::FAILURE
        }
    }
}
