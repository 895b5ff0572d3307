use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use echomap_core::neural::ModelConfig;
use echomap_core::pipeline::{run_field, run_lab, PipelineConfig};
use echomap_core::spectral::analyze;
use echomap_core::synthlab::{synth_slab, DefectRect, SlabSpec};
use echomap_core::DefectClass;

fn small_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        seed,
        slabs: 3,
        model: ModelConfig {
            layer1_units: 16,
            layer2_units: 8,
            dense_units: 8,
            epochs: 25,
            batch_size: 16,
            learning_rate: 0.005,
            ..ModelConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn lab_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_lab(&small_config(5), dir.path()).unwrap();
    let s = &outcome.summary;
    assert_eq!(s.slabs.len(), 3);
    assert!(s.mean_iou > 0.5 && s.mean_iou <= 1.0, "{}", s.mean_iou);
    assert!(s.mean_precision > 0.7, "{}", s.mean_precision);
    assert_eq!(s.train_sequences + s.test_sequences, s.sequences);
    assert!(s.test_accuracy.is_some());

    let root = dir.path();
    for f in [
        "dataset.jsonl",
        "model.json",
        "history.json",
        "summary.json",
        "report_inputs.json",
        "report.md",
        "tables/iou.csv",
        "tables/precision.csv",
        "tables/training.csv",
        "figures/iou.svg",
        "figures/training.svg",
    ] {
        assert!(root.join(f).is_file(), "missing {f}");
    }
    for i in 1..=3 {
        let slab = root.join(format!("slabs/slab_{i}"));
        for f in [
            "spec.json",
            "waveforms.csv",
            "readings.csv",
            "heatmap.svg",
            "clusters.json",
            "overlay.svg",
        ] {
            assert!(slab.join(f).is_file(), "slab {i} missing {f}");
        }
    }
    let report = fs::read_to_string(root.join("report.md")).unwrap();
    assert!(
        report.contains("Slab 1") || report.contains("| 1 "),
        "{report}"
    );
}

#[test]
fn lab_runs_are_byte_identical_for_a_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = small_config(11);
    cfg.slabs = 2;
    cfg.model.epochs = 3;
    run_lab(&cfg, a.path()).unwrap();
    run_lab(&cfg, b.path()).unwrap();
    let fa = files_under(a.path());
    let fb = files_under(b.path());
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert!(v == &fb[k], "{} differs", k.display());
    }

    let c = tempfile::tempdir().unwrap();
    cfg.seed = 12;
    run_lab(&cfg, c.path()).unwrap();
    let fc = files_under(c.path());
    assert_ne!(
        fa[Path::new("dataset.jsonl")],
        fc[Path::new("dataset.jsonl")]
    );
}

#[test]
fn defect_free_slabs_skip_the_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(3);
    cfg.slabs = 2;
    cfg.slab.defects.clear();
    let outcome = run_lab(&cfg, dir.path()).unwrap();
    assert!(outcome.summary.test_accuracy.is_none());
    assert!(outcome.model.is_none());
    assert!(!outcome.summary.warnings.is_empty());
    assert!(dir.path().join("report.md").is_file());
}

#[test]
fn field_deck_dominated_by_shallow_delamination() {
    let lab_dir = tempfile::tempdir().unwrap();
    let cfg = small_config(21);
    let lab = run_lab(&cfg, lab_dir.path()).unwrap();
    let model = lab.model.expect("classifier trained");

    let deck = SlabSpec {
        seed: 99,
        defects: vec![
            DefectRect {
                x_in: 8.0,
                y_in: 6.0,
                w_in: 70.0,
                h_in: 28.0,
                class: DefectClass::ShallowDelam,
            },
            DefectRect {
                x_in: 92.0,
                y_in: 14.0,
                w_in: 12.0,
                h_in: 12.0,
                class: DefectClass::Void,
            },
        ],
        ..SlabSpec::default()
    };
    let slab = synth_slab(&deck).unwrap();
    let readings = analyze(&slab.waveforms, &cfg.analyze).unwrap();

    let out = tempfile::tempdir().unwrap();
    let field = run_field(&cfg, &readings, &model, out.path()).unwrap();
    let s = &field.summary;
    assert_eq!(s.points, readings.len());
    assert_eq!(field.predictions.len(), s.defective_points);
    assert!(s.defective_points > 50, "{}", s.defective_points);
    let total: f64 = s.class_percentages.values().sum();
    assert!((total - 100.0).abs() < 1e-9, "{total}");
    assert_eq!(
        s.modal_class,
        Some(DefectClass::ShallowDelam),
        "{:?}",
        s.class_percentages
    );
    for f in [
        "clusters.json",
        "defective.csv",
        "predictions.csv",
        "field_summary.json",
        "field_report.md",
    ] {
        assert!(out.path().join(f).is_file(), "missing {f}");
    }
    assert!(out.path().join("figures/prediction_map.svg").is_file());
}
