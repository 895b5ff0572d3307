//! Lab and field runs wiring every stage together, plus the per-stage
//! helpers the CLI exposes one by one.
//!
//! Lab layout under the output directory:
//!
//! ```text
//! slabs/slab_N/{spec.json,waveforms.csv,readings.csv,field.json,heatmap.svg,
//!               clusters.json,defective.csv,overlay.json,overlay.svg}
//! dataset.jsonl  model.json  history.json  summary.json  report_inputs.json
//! report.md  tables/*.csv  figures/*.svg
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_global, cluster_zone, ZoneClusters};
use crate::defect::DefectClass;
use crate::error::{Error, Result};
use crate::evalreport::{emit_report, ClassificationSection, ReportInputs, SlabScores, ZoneScore};
use crate::groundtruth::{overlay, GroundTruthMask, Overlay, OverlayConfig};
use crate::io;
use crate::mapping::{
    build_grid, heatmap_svg, interpolate, split_readings, zone_bounds, zone_index, ColorScale,
    Field, Method, Palette, Rgb, SlabBounds, SvgCanvas,
};
use crate::neural::{train, Model, ModelConfig, Prediction, TrainHistory};
use crate::seqdata::{
    anchored_windows, build_sequences, corpus_autocorr, normalize, train_test_split, write_jsonl,
    LabeledSequence, PointRun, SequenceConfig, SequenceDataset, Split,
};
use crate::spectral::{analyze, AnalyzeConfig, PeakReading};
use crate::synthlab::{synth_slab, SlabSpec, SyntheticSlab};

/// Deterministic child seed for a named stream (splitmix64 finalizer).
pub fn derive_seed(master: u64, stream: &str, index: u64) -> u64 {
    let mut h = crate::seqdata::fingerprint(&[f64::from_bits(master), f64::from_bits(index)]);
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterScope {
    /// Two-means inside each 30 in defect zone.
    #[default]
    Zone,
    /// Two-means over the whole deck.
    Global,
}

impl std::str::FromStr for ClusterScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zone" => Ok(ClusterScope::Zone),
            "global" => Ok(ClusterScope::Global),
            other => Err(Error::InvalidInput(format!(
                "unknown clustering scope `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub slabs: usize,
    /// Template for every lab slab; its seed is replaced per slab.
    pub slab: SlabSpec,
    pub analyze: AnalyzeConfig,
    pub interpolation: Method,
    pub field_resolution_in: f64,
    pub palette: Palette,
    /// Render every heatmap on one color scale.
    pub shared_color_scale: bool,
    pub scope: ClusterScope,
    /// Disc radius for IoU rasterization; default is half the grid pitch.
    pub overlay_radius_in: Option<f64>,
    pub sequences: SequenceConfig,
    pub field_sequences: SequenceConfig,
    pub split_ratio: f64,
    pub stratified: bool,
    pub model: ModelConfig,
    pub write_waveforms: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            slabs: 8,
            slab: SlabSpec::default(),
            analyze: AnalyzeConfig::default(),
            interpolation: Method::Bilinear,
            field_resolution_in: 1.0,
            palette: Palette::Viridis,
            shared_color_scale: true,
            scope: ClusterScope::Zone,
            overlay_radius_in: None,
            sequences: SequenceConfig {
                orderings: 2,
                ..SequenceConfig::default()
            },
            field_sequences: SequenceConfig {
                anchor_all: true,
                ..SequenceConfig::default()
            },
            split_ratio: 0.8,
            stratified: true,
            model: ModelConfig::default(),
            write_waveforms: true,
        }
    }
}

/// Half-width added to every defect sub-band by the stress preset.
pub const STRESS_WIDEN_KHZ: f64 = 1.0;

impl PipelineConfig {
    /// Default run with every defect sub-band widened by
    /// [`STRESS_WIDEN_KHZ`] on both sides, so classes overlap heavily.
    pub fn stress() -> Self {
        let mut cfg = PipelineConfig::default();
        cfg.slab.band_table = crate::synthlab::widened_band_table(STRESS_WIDEN_KHZ);
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.slabs == 0 {
            return Err(Error::InvalidInput("slabs must be at least 1".into()));
        }
        if !(self.field_resolution_in > 0.0) {
            return Err(Error::InvalidInput(
                "field resolution must be positive".into(),
            ));
        }
        if !(0.0 < self.split_ratio && self.split_ratio < 1.0) {
            return Err(Error::InvalidInput(format!(
                "split ratio {} outside (0, 1)",
                self.split_ratio
            )));
        }
        self.slab.validate()?;
        self.model.validate()
    }

    pub fn slab_spec(&self, index: usize) -> SlabSpec {
        SlabSpec {
            seed: derive_seed(self.seed, "slab", index as u64),
            ..self.slab.clone()
        }
    }

    fn overlay_config(&self, spec: &SlabSpec) -> OverlayConfig {
        let (px, py) = spec.pitch();
        OverlayConfig {
            dilation_radius_in: self.overlay_radius_in.unwrap_or(px.min(py) / 2.0),
            region_x: None,
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Peak grid and interpolated field for one slab's readings.
pub fn map_readings(
    readings: &[PeakReading],
    spec: &SlabSpec,
    method: Method,
    resolution_in: f64,
) -> Result<Field> {
    let grid = build_grid(
        readings,
        spec.grid_rows,
        spec.grid_cols,
        SlabBounds {
            width_in: spec.width_in,
            height_in: spec.height_in,
        },
    )?;
    interpolate(&grid, resolution_in, method)
}

/// Clusters readings per zone or over the whole deck.
pub fn cluster_stage(
    readings: &[PeakReading],
    width_in: f64,
    scope: ClusterScope,
    seed: u64,
) -> Result<Vec<ZoneClusters>> {
    match scope {
        ClusterScope::Zone => split_readings(readings, width_in)
            .iter()
            .enumerate()
            .map(|(i, z)| cluster_zone(z, derive_seed(seed, "zone", i as u64)))
            .collect(),
        ClusterScope::Global => Ok(vec![cluster_global(readings, width_in, seed)?]),
    }
}

/// Scores defective points zone by zone. IoU and recall use only the zone's
/// columns.
pub fn overlay_stage(
    clusters: &[ZoneClusters],
    mask: &GroundTruthMask,
    scan_points: &[(f64, f64)],
    base: &OverlayConfig,
) -> Result<Vec<(DefectClass, Overlay)>> {
    let width = mask.width_in;
    let defective: Vec<&PeakReading> = clusters.iter().flat_map(|c| &c.defective).collect();
    zone_bounds(width)
        .iter()
        .map(|&(class, lo, hi)| {
            let pts: Vec<PeakReading> = defective
                .iter()
                .filter(|p| zone_index(p.x_in, width) == class.label())
                .map(|p| (*p).clone())
                .collect();
            let cfg = OverlayConfig {
                region_x: Some((lo, hi)),
                ..*base
            };
            Ok((class, overlay(&pts, mask, scan_points, &cfg)?))
        })
        .collect()
}

const DEFECT_FILL: Rgb = Rgb(0xf4, 0xc7, 0xc3);
const INTACT_FILL: Rgb = Rgb(0xf2, 0xf2, 0xf2);

/// Mask cells with defective points on top: valid points green, others red.
pub fn overlay_svg(
    mask: &GroundTruthMask,
    defective: &[PeakReading],
    valid: &[PeakReading],
) -> String {
    let px = 6.0;
    let mut svg = SvgCanvas::new(mask.width_in * px, mask.height_in * px);
    let cell = mask.resolution_in * px;
    for r in 0..mask.rows {
        for c in 0..mask.cols {
            let fill = if mask.is_defect(r, c) {
                DEFECT_FILL
            } else {
                INTACT_FILL
            };
            svg.rect(c as f64 * cell, r as f64 * cell, cell, cell, fill, "mask");
        }
    }
    let valid_ids: std::collections::BTreeSet<usize> = valid.iter().map(|p| p.point_id).collect();
    for p in defective {
        let fill = if valid_ids.contains(&p.point_id) {
            Rgb(0x2c, 0xa0, 0x2c)
        } else {
            Rgb(0xd6, 0x27, 0x28)
        };
        svg.circle(
            p.x_in * px,
            p.y_in * px,
            5.0,
            fill,
            Some(Rgb(0, 0, 0)),
            "point",
        );
    }
    svg.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabSummary {
    pub seed: u64,
    pub slabs: Vec<SlabScores>,
    pub mean_iou: f64,
    pub std_iou: f64,
    pub mean_precision: f64,
    pub sequences: usize,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub test_accuracy: Option<f64>,
    pub full_gtm_accuracy: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LabOutcome {
    pub summary: LabSummary,
    pub model: Option<Model>,
    pub history: Option<TrainHistory>,
    pub out_dir: PathBuf,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (
        m,
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt(),
    )
}

struct SlabResult {
    scores: SlabScores,
    runs: Vec<PointRun>,
    gtm_runs: Vec<PointRun>,
    field: Field,
}

fn lab_slab(cfg: &PipelineConfig, index: usize, dir: &Path) -> Result<SlabResult> {
    let spec = cfg.slab_spec(index);
    let SyntheticSlab {
        waveforms, mask, ..
    } = stage("synth", synth_slab(&spec))?;
    io::write_json(&dir.join("spec.json"), &spec)?;
    if cfg.write_waveforms {
        io::write_waveforms(&dir.join("waveforms.csv"), &waveforms)?;
    }

    let readings = stage("analyze", analyze(&waveforms, &cfg.analyze))?;
    io::write_readings(&dir.join("readings.csv"), &readings)?;

    let field = stage(
        "map",
        map_readings(&readings, &spec, cfg.interpolation, cfg.field_resolution_in),
    )?;
    io::write_json(&dir.join("field.json"), &field)?;

    let clusters = stage(
        "cluster",
        cluster_stage(
            &readings,
            spec.width_in,
            cfg.scope,
            derive_seed(cfg.seed, "kmeans", index as u64),
        ),
    )?;
    io::write_json(&dir.join("clusters.json"), &clusters)?;
    let defective: Vec<PeakReading> = clusters.iter().flat_map(|c| c.defective.clone()).collect();
    io::write_readings(&dir.join("defective.csv"), &defective)?;

    let scan_points = spec.grid_points();
    let overlays = stage(
        "overlay",
        overlay_stage(&clusters, &mask, &scan_points, &cfg.overlay_config(&spec)),
    )?;
    let zones: Vec<ZoneScore> = overlays
        .iter()
        .map(|(class, o)| ZoneScore {
            class: *class,
            metrics: o.metrics,
        })
        .collect();
    io::write_json(&dir.join("overlay.json"), &zones)?;
    let valid: Vec<PeakReading> = overlays.iter().flat_map(|(_, o)| o.valid.clone()).collect();
    io::write_text(
        &dir.join("overlay.svg"),
        &overlay_svg(&mask, &defective, &valid),
    )?;

    // Training runs: valid overlap points per zone, labeled by the defect
    // type planted there.
    let mut runs = Vec::new();
    for (class, o) in &overlays {
        let mut by_class: BTreeMap<DefectClass, Vec<PeakReading>> = BTreeMap::new();
        for p in &o.valid {
            let c = spec.class_at(&mask, p.x_in, p.y_in).unwrap_or(*class);
            by_class.entry(c).or_default().push(p.clone());
        }
        runs.extend(by_class.into_iter().map(|(class, points)| PointRun {
            slab_id: index,
            class,
            points,
        }));
    }
    // Evaluation runs: every QA-clean reading inside the mask.
    let mut gtm: BTreeMap<DefectClass, Vec<PeakReading>> = BTreeMap::new();
    for p in readings.iter().filter(|p| p.qa.is_ok()) {
        if let Some(c) = spec.class_at(&mask, p.x_in, p.y_in) {
            gtm.entry(c).or_default().push(p.clone());
        }
    }
    let gtm_runs = gtm
        .into_iter()
        .map(|(class, points)| PointRun {
            slab_id: index,
            class,
            points,
        })
        .collect();

    Ok(SlabResult {
        scores: SlabScores {
            slab_id: index,
            zones,
        },
        runs,
        gtm_runs,
        field,
    })
}

fn labels_of(seqs: &[&LabeledSequence]) -> Vec<usize> {
    seqs.iter().map(|s| s.label).collect()
}

fn pred_labels(p: &[Prediction]) -> Vec<usize> {
    p.iter().map(|p| p.label).collect()
}

/// Synthesizes, analyzes, maps, clusters and scores every slab, then trains
/// and evaluates the classifier and writes the report.
pub fn run_lab(cfg: &PipelineConfig, out_dir: &Path) -> Result<LabOutcome> {
    stage("config", cfg.validate())?;
    let mut warnings = Vec::new();
    let mut results = Vec::with_capacity(cfg.slabs);
    for i in 0..cfg.slabs {
        log::info!("slab {}/{}", i + 1, cfg.slabs);
        let dir = out_dir.join("slabs").join(format!("slab_{}", i + 1));
        results.push(lab_slab(cfg, i, &dir)?);
    }

    let shared = cfg.shared_color_scale.then(|| {
        let (lo, hi) = results
            .iter()
            .filter_map(|r| r.field.range())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (lo, hi)| {
                (a.min(lo), b.max(hi))
            });
        ColorScale { min: lo, max: hi }
    });
    for (i, r) in results.iter().enumerate() {
        let path = out_dir
            .join("slabs")
            .join(format!("slab_{}", i + 1))
            .join("heatmap.svg");
        io::write_text(&path, &heatmap_svg(&r.field, cfg.palette, shared))?;
    }

    let slabs: Vec<SlabScores> = results.iter().map(|r| r.scores.clone()).collect();
    let runs: Vec<PointRun> = results.iter().flat_map(|r| r.runs.clone()).collect();
    let gtm_runs: Vec<PointRun> = results.iter().flat_map(|r| r.gtm_runs.clone()).collect();

    let raw = SequenceDataset::new(build_sequences(&runs, &cfg.sequences));
    let autocorr = corpus_autocorr(&raw.sequences);
    let present = raw.label_set();
    let mut classification = Vec::new();
    let (mut model, mut history) = (None, None);
    let (mut n_train, mut n_test) = (0, 0);
    if present.len() < 2 {
        let msg = format!(
            "classifier skipped: {} sequences covering {} class(es)",
            raw.len(),
            present.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    } else {
        if present.len() < DefectClass::COUNT {
            warnings.push(format!(
                "only {} of 4 classes have sequences",
                present.len()
            ));
        }
        let split = stage(
            "sequences",
            train_test_split(
                raw,
                cfg.split_ratio,
                derive_seed(cfg.seed, "split", 0),
                cfg.stratified,
            ),
        )?;
        stage(
            "sequences",
            write_jsonl(&split, &out_dir.join("dataset.jsonl")),
        )?;
        let ds = stage("sequences", normalize(split))?;
        n_train = ds.count(Split::Train);
        n_test = ds.count(Split::Test);

        let model_cfg = ModelConfig {
            seed: derive_seed(cfg.seed, "model", 0),
            ..cfg.model.clone()
        };
        let (m, h) = stage("train", train(&model_cfg, &ds))?;
        m.save(&out_dir.join("model.json"))?;
        io::write_json(&out_dir.join("history.json"), &h)?;

        let test: Vec<&LabeledSequence> = ds.part(Split::Test).collect();
        let preds = stage(
            "predict",
            m.predict_batch(&test.iter().map(|s| s.values.as_slice()).collect::<Vec<_>>()),
        )?;
        classification.push(stage(
            "report",
            ClassificationSection::new("Test split", &labels_of(&test), &pred_labels(&preds)),
        )?);

        let norm = ds.normalization.expect("normalized above");
        let gtm: Vec<LabeledSequence> = build_sequences(&gtm_runs, &cfg.sequences)
            .into_iter()
            .map(|s| LabeledSequence {
                values: norm.apply(&s.values),
                ..s
            })
            .collect();
        let gtm_ref: Vec<&LabeledSequence> = gtm.iter().collect();
        let preds = stage(
            "predict",
            m.predict_batch(&gtm.iter().map(|s| s.values.as_slice()).collect::<Vec<_>>()),
        )?;
        classification.push(stage(
            "report",
            ClassificationSection::new(
                "All GTM-validated points",
                &labels_of(&gtm_ref),
                &pred_labels(&preds),
            ),
        )?);
        model = Some(m);
        history = Some(h);
    }

    let slab_iou: Vec<f64> = slabs.iter().map(|s| s.mean(|m| m.iou)).collect();
    let (mean_iou, std_iou) = mean_std(&slab_iou);
    let (mean_precision, _) = mean_std(
        &slabs
            .iter()
            .map(|s| s.mean(|m| m.precision))
            .collect::<Vec<_>>(),
    );
    let summary = LabSummary {
        seed: cfg.seed,
        slabs: slabs.clone(),
        mean_iou,
        std_iou,
        mean_precision,
        sequences: n_train + n_test,
        train_sequences: n_train,
        test_sequences: n_test,
        test_accuracy: classification.first().map(|c| c.metrics.accuracy),
        full_gtm_accuracy: classification.get(1).map(|c| c.metrics.accuracy),
        warnings: warnings.clone(),
    };

    let mut facts = vec![
        ("Master seed".to_string(), cfg.seed.to_string()),
        ("Slabs".to_string(), cfg.slabs.to_string()),
        (
            "Clustering scope".to_string(),
            format!("{:?}", cfg.scope).to_lowercase(),
        ),
        (
            "Sequences".to_string(),
            format!("{} ({} train / {} test)", n_train + n_test, n_train, n_test),
        ),
    ];
    if let Some((mean, std)) = autocorr {
        facts.push((
            "Lag-1 autocorrelation".to_string(),
            format!("{mean:.3} ± {std:.3}"),
        ));
    }
    if let Some(m) = &model {
        facts.push(("Model parameters".to_string(), m.param_count().to_string()));
    }
    let inputs = ReportInputs {
        title: "Impact-echo lab run".into(),
        facts,
        slabs,
        classification,
        history: history.clone(),
        warnings,
    };
    io::write_json(&out_dir.join("report_inputs.json"), &inputs)?;
    io::write_json(&out_dir.join("summary.json"), &summary)?;
    stage("report", emit_report(&inputs, out_dir))?;
    Ok(LabOutcome {
        summary,
        model,
        history,
        out_dir: out_dir.to_path_buf(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPrediction {
    pub point_id: usize,
    pub x_in: f64,
    pub y_in: f64,
    pub f_peak_khz: f64,
    pub class: DefectClass,
    pub confidence: f64,
    /// Windows anchored at this point.
    pub votes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub points: usize,
    pub defective_points: usize,
    pub sequences: usize,
    /// Class share of attributed points in percent, class order.
    pub class_percentages: BTreeMap<DefectClass, f64>,
    pub modal_class: Option<DefectClass>,
    pub centroids_khz: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FieldOutcome {
    pub summary: FieldSummary,
    pub predictions: Vec<PointPrediction>,
}

/// Deck extent implied by a cell-centered scan grid.
pub fn deck_extent(readings: &[PeakReading]) -> (f64, f64) {
    let fold = |f: fn(&PeakReading) -> f64| {
        readings
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            })
    };
    let (x0, x1) = fold(|p| p.x_in);
    let (y0, y1) = fold(|p| p.y_in);
    if readings.is_empty() {
        (0.0, 0.0)
    } else {
        (x0 + x1, y0 + y1)
    }
}

pub const CLASS_COLORS: [Rgb; 4] = [
    Rgb(0xd6, 0x27, 0x28),
    Rgb(0xff, 0x7f, 0x0e),
    Rgb(0x94, 0x67, 0xbd),
    Rgb(0x1f, 0x77, 0xb4),
];

/// Deck outline with every scan point; predicted points colored by class.
pub fn prediction_map_svg(readings: &[PeakReading], preds: &[PointPrediction]) -> String {
    let (w, h) = deck_extent(readings);
    let px = 5.0;
    let legend = 150.0;
    let mut svg = SvgCanvas::new(w * px + legend, (h * px).max(80.0));
    svg.rect(0.0, 0.0, w * px, h * px, INTACT_FILL, "deck");
    for p in readings {
        svg.circle(
            p.x_in * px,
            p.y_in * px,
            1.5,
            Rgb(0xaa, 0xaa, 0xaa),
            None,
            "scan",
        );
    }
    for p in preds {
        svg.circle(
            p.x_in * px,
            p.y_in * px,
            4.0,
            CLASS_COLORS[p.class.label()],
            Some(Rgb(0, 0, 0)),
            "prediction",
        );
    }
    for c in DefectClass::ALL {
        let y = 16.0 + c.label() as f64 * 16.0;
        svg.rect(
            w * px + 10.0,
            y - 9.0,
            10.0,
            10.0,
            CLASS_COLORS[c.label()],
            "legend",
        );
        svg.text(w * px + 26.0, y, 10.0, "start", c.display_name());
    }
    svg.finish()
}

/// Global clustering of a whole deck, then per-point defect-type
/// predictions. Each window's prediction is credited to its first point;
/// points anchoring several windows average their probabilities.
pub fn run_field(
    cfg: &PipelineConfig,
    readings: &[PeakReading],
    model: &Model,
    out_dir: &Path,
) -> Result<FieldOutcome> {
    let norm = model.normalization.ok_or_else(|| {
        Error::InvalidInput("model carries no normalization parameters".into()).in_stage("predict")
    })?;
    let (width, _) = deck_extent(readings);
    let clusters = stage(
        "cluster",
        cluster_stage(
            readings,
            width,
            ClusterScope::Global,
            derive_seed(cfg.seed, "kmeans", 0),
        ),
    )?;
    io::write_json(&out_dir.join("clusters.json"), &clusters)?;
    let defective: Vec<PeakReading> = clusters.iter().flat_map(|c| c.defective.clone()).collect();
    io::write_readings(&out_dir.join("defective.csv"), &defective)?;

    let windows = anchored_windows(&defective, &cfg.field_sequences);
    let ds = SequenceDataset {
        sequences: windows
            .iter()
            .map(|w| LabeledSequence {
                values: norm.apply(&w.values),
                label: 0,
                slab_id: 0,
                zone: None,
                anchor_x_in: w.anchor.x_in,
                anchor_y_in: w.anchor.y_in,
                padded: w.padded,
            })
            .collect(),
        splits: Vec::new(),
        normalization: Some(norm),
    };
    let preds = stage("predict", model.predict(&ds))?;

    let mut acc: BTreeMap<usize, (&PeakReading, [f64; 4], usize)> = BTreeMap::new();
    for (w, p) in windows.iter().zip(&preds) {
        let e = acc
            .entry(w.anchor.point_id)
            .or_insert((&w.anchor, [0.0; 4], 0));
        for j in 0..4 {
            e.1[j] += p.probs[j];
        }
        e.2 += 1;
    }
    let predictions: Vec<PointPrediction> = acc
        .values()
        .map(|(p, probs, votes)| {
            let best = (0..4).fold(0, |b, j| if probs[j] > probs[b] { j } else { b });
            PointPrediction {
                point_id: p.point_id,
                x_in: p.x_in,
                y_in: p.y_in,
                f_peak_khz: p.f_peak_khz,
                class: DefectClass::from_label(best).expect("four classes"),
                confidence: probs[best] / *votes as f64,
                votes: *votes,
            }
        })
        .collect();

    let mut counts = [0usize; 4];
    for p in &predictions {
        counts[p.class.label()] += 1;
    }
    let total = predictions.len();
    let class_percentages: BTreeMap<DefectClass, f64> = DefectClass::ALL
        .iter()
        .filter(|_| total > 0)
        .map(|&c| (c, 100.0 * counts[c.label()] as f64 / total as f64))
        .collect();
    let modal_class = (total > 0).then(|| {
        let best = (0..4).fold(0, |b, j| if counts[j] > counts[b] { j } else { b });
        DefectClass::ALL[best]
    });
    let summary = FieldSummary {
        points: readings.len(),
        defective_points: defective.len(),
        sequences: windows.len(),
        class_percentages,
        modal_class,
        centroids_khz: clusters
            .first()
            .map(|c| c.centroids.clone())
            .unwrap_or_default(),
    };

    let mut csv = String::from("point_id,x_in,y_in,f_peak_khz,class,confidence,votes\n");
    for p in &predictions {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.6},{}\n",
            p.point_id, p.x_in, p.y_in, p.f_peak_khz, p.class, p.confidence, p.votes
        ));
    }
    io::write_text(&out_dir.join("predictions.csv"), &csv)?;
    io::write_json(&out_dir.join("field_summary.json"), &summary)?;
    io::write_text(
        &out_dir.join("figures/prediction_map.svg"),
        &prediction_map_svg(readings, &predictions),
    )?;

    let mut md = format!(
        "# Impact-echo field run\n\n- **Scan points**: {}\n- **Defective cluster points**: {}\n- **Sequences**: {}\n\n",
        summary.points, summary.defective_points, summary.sequences
    );
    md.push_str("## Predicted defect types\n\n");
    if total == 0 {
        md.push_str("No defective points were found; no predictions.\n");
    } else {
        md.push_str("| Class | Points | Share (%) |\n|---|---|---|\n");
        for c in DefectClass::ALL {
            md.push_str(&format!(
                "| {} ({}) | {} | {:.1} |\n",
                c.display_name(),
                c.code(),
                counts[c.label()],
                summary.class_percentages[&c]
            ));
        }
        md.push_str("\n![Prediction map](figures/prediction_map.svg)\n");
    }
    io::write_text(&out_dir.join("field_report.md"), &md)?;
    Ok(FieldOutcome {
        summary,
        predictions,
    })
}
