//! Confusion matrices, per-class metrics and the Markdown/CSV/SVG report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::defect::DefectClass;
use crate::error::{Error, Result};
use crate::groundtruth::OverlayMetrics;
use crate::mapping::{Palette, Rgb, SvgCanvas};
use crate::neural::TrainHistory;

const K: usize = DefectClass::COUNT;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

pub fn confusion(true_labels: &[usize], pred_labels: &[usize]) -> Result<ConfusionMatrix> {
    if true_labels.len() != pred_labels.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} predictions", true_labels.len()),
            actual: pred_labels.len().to_string(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in true_labels.iter().zip(pred_labels) {
        if t >= K || p >= K {
            return Err(Error::InvalidInput(format!(
                "label pair ({t}, {p}) out of range"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: DefectClass,
    pub precision: f64,
    /// Also the per-class accuracy.
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a denominator was zero and the metric was reported as 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub total: u64,
}

fn frac(n: u64, d: u64) -> (f64, bool) {
    if d == 0 {
        (0.0, true)
    } else {
        (n as f64 / d as f64, false)
    }
}

pub fn class_metrics(cm: &ConfusionMatrix) -> ClassificationMetrics {
    let per_class = DefectClass::ALL
        .iter()
        .map(|&class| {
            let j = class.label();
            let (precision, p_undef) = frac(cm.counts[j][j], cm.col_sum(j));
            let (recall, r_undef) = frac(cm.counts[j][j], cm.row_sum(j));
            ClassMetrics {
                class,
                precision,
                recall,
                f1: crate::groundtruth::f1_score(precision, recall),
                support: cm.row_sum(j),
                undefined: p_undef || r_undef,
            }
        })
        .collect();
    ClassificationMetrics {
        per_class,
        accuracy: frac(cm.trace(), cm.total()).0,
        total: cm.total(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneScore {
    pub class: DefectClass,
    pub metrics: OverlayMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabScores {
    pub slab_id: usize,
    pub zones: Vec<ZoneScore>,
}

impl SlabScores {
    pub fn mean(&self, f: impl Fn(&OverlayMetrics) -> f64) -> f64 {
        mean(&self.zones.iter().map(|z| f(&z.metrics)).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSection {
    pub name: String,
    pub confusion: ConfusionMatrix,
    pub metrics: ClassificationMetrics,
}

impl ClassificationSection {
    pub fn new(
        name: impl Into<String>,
        true_labels: &[usize],
        pred_labels: &[usize],
    ) -> Result<Self> {
        let confusion = confusion(true_labels, pred_labels)?;
        Ok(ClassificationSection {
            name: name.into(),
            metrics: class_metrics(&confusion),
            confusion,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportInputs {
    pub title: String,
    /// Key/value lines printed under the title.
    pub facts: Vec<(String, String)>,
    pub slabs: Vec<SlabScores>,
    pub classification: Vec<ClassificationSection>,
    pub history: Option<TrainHistory>,
    pub warnings: Vec<String>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// A plain table rendered both as CSV and as Markdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {} |\n", self.header.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(self.header.len()));
        for r in &self.rows {
            let _ = writeln!(s, "| {} |", r.join(" | "));
        }
        s
    }
}

fn zone_classes(slabs: &[SlabScores]) -> Vec<DefectClass> {
    let mut classes: Vec<DefectClass> = slabs
        .iter()
        .flat_map(|s| s.zones.iter().map(|z| z.class))
        .collect();
    classes.sort();
    classes.dedup();
    classes
}

/// One row per slab, one column per defect zone, a per-slab mean column and
/// a final `Avg` row.
pub fn overlay_table(slabs: &[SlabScores], f: impl Fn(&OverlayMetrics) -> f64) -> Table {
    let classes = zone_classes(slabs);
    let mut header = vec!["Slab".to_string()];
    header.extend(classes.iter().map(|c| c.code().to_string()));
    header.push("Mean".into());
    let cell = |s: &SlabScores, c: DefectClass| {
        s.zones.iter().find(|z| z.class == c).map(|z| f(&z.metrics))
    };
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));

    let mut rows = Vec::new();
    for s in slabs {
        let mut row = vec![format!("Slab {}", s.slab_id + 1)];
        row.extend(classes.iter().map(|&c| fmt(cell(s, c))));
        row.push(fmt(Some(s.mean(&f))));
        rows.push(row);
    }
    if !slabs.is_empty() {
        let mut avg = vec!["Avg".to_string()];
        for &c in &classes {
            let col: Vec<f64> = slabs.iter().filter_map(|s| cell(s, c)).collect();
            avg.push(fmt(Some(mean(&col))));
        }
        avg.push(fmt(Some(mean(
            &slabs.iter().map(|s| s.mean(&f)).collect::<Vec<_>>(),
        ))));
        rows.push(avg);
    }
    Table { header, rows }
}

pub fn classification_table(m: &ClassificationMetrics) -> Table {
    let mut rows: Vec<Vec<String>> = m
        .per_class
        .iter()
        .map(|c| {
            vec![
                format!("{} ({})", c.class.display_name(), c.class.code()),
                format!("{:.4}", c.precision),
                format!("{:.4}", c.recall),
                format!("{:.4}", c.f1),
                format!("{:.4}", c.recall),
                c.support.to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        "Overall accuracy".into(),
        String::new(),
        String::new(),
        String::new(),
        format!("{:.4}", m.accuracy),
        m.total.to_string(),
    ]);
    Table {
        header: [
            "Class",
            "Precision",
            "Recall",
            "F1",
            "Per-class accuracy",
            "Support",
        ]
        .map(String::from)
        .to_vec(),
        rows,
    }
}

pub fn confusion_table(cm: &ConfusionMatrix) -> Table {
    let mut header = vec!["True \\ Predicted".to_string()];
    header.extend(DefectClass::ALL.iter().map(|c| c.code().to_string()));
    let rows = DefectClass::ALL
        .iter()
        .map(|c| {
            let mut r = vec![c.code().to_string()];
            r.extend(cm.counts[c.label()].iter().map(u64::to_string));
            r
        })
        .collect();
    Table { header, rows }
}

pub fn history_table(h: &TrainHistory) -> Table {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
    let rows = std::iter::once(&h.initial)
        .chain(&h.epochs)
        .map(|e| {
            vec![
                e.epoch.to_string(),
                format!("{:.6}", e.train_loss),
                format!("{:.6}", e.train_accuracy),
                opt(e.test_loss),
                opt(e.test_accuracy),
            ]
        })
        .collect();
    Table {
        header: [
            "epoch",
            "train_loss",
            "train_accuracy",
            "test_loss",
            "test_accuracy",
        ]
        .map(String::from)
        .to_vec(),
        rows,
    }
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect::<String>()
        .split('_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

const ZONE_COLORS: [Rgb; 4] = [
    Rgb(0x1f, 0x77, 0xb4),
    Rgb(0xff, 0x7f, 0x0e),
    Rgb(0x2c, 0xa0, 0x2c),
    Rgb(0xd6, 0x27, 0x28),
];

/// Grouped bars: one group per slab, one bar per zone.
pub fn bar_chart_svg(
    slabs: &[SlabScores],
    title: &str,
    f: impl Fn(&OverlayMetrics) -> f64,
) -> String {
    let classes = zone_classes(slabs);
    let (left, top, plot_h, bar_w) = (40.0, 30.0, 200.0, 8.0);
    let group_w = bar_w * classes.len().max(1) as f64 + 12.0;
    let width = left + group_w * slabs.len().max(1) as f64 + 90.0;
    let mut svg = SvgCanvas::new(width, top + plot_h + 40.0);
    svg.text(width / 2.0, 18.0, 13.0, "middle", title);
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let y = top + plot_h * (1.0 - v);
        svg.rect(
            left - 4.0,
            y,
            width - left - 86.0,
            0.5,
            Rgb(0xcc, 0xcc, 0xcc),
            "grid",
        );
        svg.text(left - 6.0, y + 4.0, 9.0, "end", &format!("{v:.2}"));
    }
    for (si, s) in slabs.iter().enumerate() {
        let x0 = left + si as f64 * group_w + 6.0;
        for (ci, c) in classes.iter().enumerate() {
            if let Some(z) = s.zones.iter().find(|z| z.class == *c) {
                let v = f(&z.metrics).clamp(0.0, 1.0);
                let h = plot_h * v;
                svg.rect(
                    x0 + ci as f64 * bar_w,
                    top + plot_h - h,
                    bar_w - 1.0,
                    h,
                    ZONE_COLORS[c.label()],
                    "bar",
                );
            }
        }
        svg.text(
            x0 + group_w / 2.0 - 6.0,
            top + plot_h + 14.0,
            9.0,
            "middle",
            &format!("{}", s.slab_id + 1),
        );
    }
    for (ci, c) in classes.iter().enumerate() {
        let y = top + 10.0 + ci as f64 * 16.0;
        svg.rect(
            width - 80.0,
            y - 8.0,
            10.0,
            10.0,
            ZONE_COLORS[c.label()],
            "legend",
        );
        svg.text(width - 66.0, y, 10.0, "start", c.code());
    }
    svg.finish()
}

/// Training loss (left) and accuracy curves on one plot, all scaled to [0, 1]
/// by their own maxima for loss.
pub fn training_svg(h: &TrainHistory) -> String {
    let (left, top, w, hgt) = (50.0, 30.0, 400.0, 200.0);
    let mut svg = SvgCanvas::new(left + w + 130.0, top + hgt + 40.0);
    svg.text(left + w / 2.0, 18.0, 13.0, "middle", "Training history");
    let all: Vec<_> = std::iter::once(&h.initial).chain(&h.epochs).collect();
    let n = all.len().max(2) - 1;
    let max_loss = all.iter().map(|e| e.train_loss).fold(1e-12, f64::max);
    let x = |i: usize| left + w * i as f64 / n as f64;
    let y = |v: f64| top + hgt * (1.0 - v.clamp(0.0, 1.0));
    svg.rect(left, top + hgt, w, 0.8, Rgb(0, 0, 0), "axis");
    svg.rect(left, top, 0.8, hgt, Rgb(0, 0, 0), "axis");
    let series: [(&str, Rgb, Vec<(f64, f64)>); 3] = [
        (
            "train loss / max",
            ZONE_COLORS[0],
            all.iter()
                .enumerate()
                .map(|(i, e)| (x(i), y(e.train_loss / max_loss)))
                .collect(),
        ),
        (
            "train accuracy",
            ZONE_COLORS[1],
            all.iter()
                .enumerate()
                .map(|(i, e)| (x(i), y(e.train_accuracy)))
                .collect(),
        ),
        (
            "test accuracy",
            ZONE_COLORS[2],
            all.iter()
                .enumerate()
                .filter_map(|(i, e)| e.test_accuracy.map(|a| (x(i), y(a))))
                .collect(),
        ),
    ];
    for (k, (name, color, pts)) in series.iter().enumerate() {
        if pts.len() > 1 {
            svg.polyline(pts, *color, "series");
        }
        let ly = top + 10.0 + k as f64 * 16.0;
        svg.rect(left + w + 10.0, ly - 8.0, 10.0, 10.0, *color, "legend");
        svg.text(left + w + 24.0, ly, 10.0, "start", name);
    }
    svg.text(
        left + w / 2.0,
        top + hgt + 28.0,
        10.0,
        "middle",
        &format!("epoch (0..{n})"),
    );
    svg.finish()
}

pub fn confusion_svg(cm: &ConfusionMatrix, title: &str) -> String {
    let (cell, left, top) = (48.0, 50.0, 40.0);
    let mut svg = SvgCanvas::new(left + cell * K as f64 + 20.0, top + cell * K as f64 + 30.0);
    svg.text(left + cell * 2.0, 18.0, 12.0, "middle", title);
    for i in 0..K {
        let row_total = cm.row_sum(i).max(1) as f64;
        for j in 0..K {
            let t = cm.counts[i][j] as f64 / row_total;
            let (x, y) = (left + j as f64 * cell, top + i as f64 * cell);
            svg.rect(
                x,
                y,
                cell - 1.0,
                cell - 1.0,
                Palette::Viridis.color(t),
                "cell",
            );
            svg.text(
                x + cell / 2.0,
                y + cell / 2.0 + 4.0,
                11.0,
                "middle",
                &cm.counts[i][j].to_string(),
            );
        }
        let code = DefectClass::ALL[i].code();
        svg.text(
            left - 6.0,
            top + i as f64 * cell + cell / 2.0 + 4.0,
            10.0,
            "end",
            code,
        );
        svg.text(
            left + i as f64 * cell + cell / 2.0,
            top - 6.0,
            10.0,
            "middle",
            code,
        );
    }
    svg.finish()
}

/// Writes `report.md`, `tables/*.csv` and `figures/*.svg` under `out_dir`.
/// Returns the written paths in order.
pub fn emit_report(inputs: &ReportInputs, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |rel: String, text: String| -> Result<()> {
        let path = out_dir.join(rel);
        crate::io::write_text(&path, &text)?;
        written.push(path);
        Ok(())
    };

    let mut md = format!(
        "# {}\n\n",
        if inputs.title.is_empty() {
            "Report"
        } else {
            &inputs.title
        }
    );
    for (k, v) in &inputs.facts {
        let _ = writeln!(md, "- **{k}**: {v}");
    }
    if !inputs.facts.is_empty() {
        md.push('\n');
    }
    let mut warnings = inputs.warnings.clone();
    if inputs.slabs.is_empty() && inputs.classification.is_empty() {
        warnings.push("no metrics were produced".into());
    }
    if !warnings.is_empty() {
        md.push_str("## Warnings\n\n");
        for w in &warnings {
            let _ = writeln!(md, "- {w}");
        }
        md.push('\n');
    }

    if !inputs.slabs.is_empty() {
        let slab_iou: Vec<f64> = inputs.slabs.iter().map(|s| s.mean(|m| m.iou)).collect();
        let _ = writeln!(
            md,
            "## Ground-truth overlay\n\nMean IoU across slabs: {:.4} ± {:.4}. Mean overlay precision: {:.4}.\n",
            mean(&slab_iou),
            std_dev(&slab_iou),
            mean(&inputs.slabs.iter().map(|s| s.mean(|m| m.precision)).collect::<Vec<_>>())
        );
        let tables: [(&str, &str, fn(&OverlayMetrics) -> f64); 4] = [
            ("iou", "IoU per slab and defect zone", |m| m.iou),
            (
                "precision",
                "Overlay precision per slab and defect zone",
                |m| m.precision,
            ),
            (
                "overlap",
                "Valid overlap fraction per slab and defect zone",
                |m| m.overlap_pct,
            ),
            (
                "recall",
                "Defect-cell recall per slab and defect zone",
                |m| m.recall,
            ),
        ];
        for (name, caption, f) in tables {
            let t = overlay_table(&inputs.slabs, f);
            let _ = writeln!(md, "### {caption}\n\n{}", t.to_markdown());
            put(format!("tables/{name}.csv"), t.to_csv())?;
        }
        put(
            "figures/iou.svg".into(),
            bar_chart_svg(&inputs.slabs, "IoU by slab and zone", |m| m.iou),
        )?;
        put(
            "figures/precision.svg".into(),
            bar_chart_svg(&inputs.slabs, "Overlay precision by slab and zone", |m| {
                m.precision
            }),
        )?;
        md.push_str("![IoU](figures/iou.svg)\n\n![Precision](figures/precision.svg)\n\n");
    }

    for sec in &inputs.classification {
        let s = slug(&sec.name);
        let t = classification_table(&sec.metrics);
        let c = confusion_table(&sec.confusion);
        let _ = writeln!(
            md,
            "## Classification: {}\n\nAccuracy {:.4} over {} sequences.\n\n{}\n{}",
            sec.name,
            sec.metrics.accuracy,
            sec.metrics.total,
            t.to_markdown(),
            c.to_markdown()
        );
        put(format!("tables/classification_{s}.csv"), t.to_csv())?;
        put(format!("tables/confusion_{s}.csv"), c.to_csv())?;
        put(
            format!("figures/confusion_{s}.svg"),
            confusion_svg(&sec.confusion, &sec.name),
        )?;
        let _ = writeln!(md, "![Confusion matrix](figures/confusion_{s}.svg)\n");
    }

    if let Some(h) = &inputs.history {
        let t = history_table(h);
        put("tables/training.csv".into(), t.to_csv())?;
        put("figures/training.svg".into(), training_svg(h))?;
        if let Some(last) = h.epochs.last() {
            let _ = writeln!(
                md,
                "## Training\n\nInitial loss {:.4}; after {} epochs loss {:.4}, train accuracy {:.4}, test accuracy {}.\n\n![Training](figures/training.svg)\n",
                h.initial.train_loss,
                h.epochs.len(),
                last.train_loss,
                last.train_accuracy,
                last.test_accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
            );
        }
    }

    put("report.md".into(), md)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::EpochStats;
    use proptest::prelude::*;

    fn zone(class: DefectClass, v: f64) -> ZoneScore {
        ZoneScore {
            class,
            metrics: OverlayMetrics {
                defective_points: 9,
                valid_points: 8,
                overlap_pct: v,
                iou: v,
                precision: v,
                recall: v,
                f1: v,
            },
        }
    }

    fn slabs(n: usize) -> Vec<SlabScores> {
        (0..n)
            .map(|i| SlabScores {
                slab_id: i,
                zones: DefectClass::ALL
                    .iter()
                    .map(|&c| zone(c, 0.5 + 0.01 * i as f64))
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let labels = [0, 1, 2, 3, 3, 2];
        let cm = confusion(&labels, &labels).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(cm.counts[i][j], 0);
                }
            }
        }
        let m = class_metrics(&cm);
        assert_eq!(m.accuracy, 1.0);
        assert!(m
            .per_class
            .iter()
            .all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
    }

    #[test]
    fn all_zero_predictions_fill_one_column() {
        let cm = confusion(&[0, 1, 2, 3, 1], &[0; 5]).unwrap();
        assert_eq!(cm.col_sum(0), 5);
        assert!((1..4).all(|j| cm.col_sum(j) == 0));
        let m = class_metrics(&cm);
        assert!(m.per_class[1].undefined && m.per_class[1].precision == 0.0);
    }

    #[test]
    fn hand_counted_two_class_case() {
        let mut cm = ConfusionMatrix::default();
        cm.counts[0] = [8, 2, 0, 0];
        cm.counts[1] = [3, 7, 0, 0];
        let m = class_metrics(&cm);
        assert_eq!(m.per_class[0].precision, 8.0 / 11.0);
        assert_eq!(m.per_class[0].recall, 0.8);
        assert_eq!(m.accuracy, 0.75);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(confusion(&[0, 1], &[0]).is_err());
        assert!(confusion(&[4], &[0]).is_err());
    }

    #[test]
    fn iou_table_has_average_row() {
        let t = overlay_table(&slabs(8), |m| m.iou);
        assert_eq!(t.rows.len(), 9);
        assert_eq!(t.rows[8][0], "Avg");
        assert_eq!(t.header, vec!["Slab", "D1", "D2", "D3", "D4", "Mean"]);
        assert_eq!(t.rows[0][1], "0.5000");
        assert_eq!(t.rows[8][5], "0.5350");
    }

    #[test]
    fn empty_report_is_a_stub_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&ReportInputs::default(), dir.path()).unwrap();
        let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
        assert!(md.contains("## Warnings"));
        assert!(md.contains("no metrics"));
    }

    fn full_inputs() -> ReportInputs {
        let cm = confusion(&[0, 1, 2, 3, 0, 1], &[0, 1, 2, 2, 0, 3]).unwrap();
        let e = |epoch: usize| EpochStats {
            epoch,
            train_loss: 1.0 / (epoch + 1) as f64,
            train_accuracy: 0.2 * epoch as f64,
            test_loss: Some(1.0),
            test_accuracy: Some(0.1 * epoch as f64),
        };
        ReportInputs {
            title: "Lab run".into(),
            facts: vec![("seed".into(), "7".into())],
            slabs: slabs(8),
            classification: vec![ClassificationSection {
                name: "Test split".into(),
                confusion: cm,
                metrics: class_metrics(&cm),
            }],
            history: Some(TrainHistory {
                initial: e(0),
                epochs: (1..4).map(e).collect(),
                wall_time_s: 1.0,
            }),
            warnings: vec![],
        }
    }

    #[test]
    fn report_bytes_are_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let pa = emit_report(&full_inputs(), a.path()).unwrap();
        let pb = emit_report(&full_inputs(), b.path()).unwrap();
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(
                x.strip_prefix(a.path()).unwrap(),
                y.strip_prefix(b.path()).unwrap()
            );
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        for rel in [
            "report.md",
            "tables/iou.csv",
            "tables/classification_test_split.csv",
            "figures/training.svg",
        ] {
            assert!(a.path().join(rel).exists(), "{rel}");
        }
    }

    proptest! {
        #[test]
        fn marginals_and_weighted_recall(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..100)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let cm = confusion(&t, &p).unwrap();
            for i in 0..4 {
                prop_assert_eq!(cm.row_sum(i), t.iter().filter(|&&x| x == i).count() as u64);
                prop_assert_eq!(cm.col_sum(i), p.iter().filter(|&&x| x == i).count() as u64);
            }
            let m = class_metrics(&cm);
            let weighted: f64 = m.per_class.iter().map(|c| c.recall * c.support as f64).sum::<f64>() / m.total as f64;
            prop_assert!((weighted - m.accuracy).abs() < 1e-12);
        }
    }
}
