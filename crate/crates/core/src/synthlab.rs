//! Synthetic slabs and decks with seeded defects.
//!
//! Each scan point gets a thickness-mode frequency drawn from the band of the
//! defect it sits on (or the intact band), and a waveform whose spectrum has a
//! single dominant peak at that frequency. A smooth random field shared by the
//! whole slab decides where inside its band each point falls, so neighboring
//! points read similar frequencies.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::defect::DefectClass;
use crate::error::{Error, Result};
use crate::groundtruth::{build_mask, GroundTruthMask};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 200_000.0;
pub const DEFAULT_SAMPLES: usize = 1024;
pub const ZONE_WIDTH_IN: f64 = 30.0;
pub const DEFAULT_RECT_IN: f64 = 12.0;

/// Replacement bands for injected artifacts.
const HIGH_OUTLIER_BAND: Band = Band::new(15.0, 18.0);
const LOW_OUTLIER_BAND: Band = Band::new(0.3, 1.0);

/// Frequency band in kHz, `lo_khz < hi_khz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo_khz: f64,
    pub hi_khz: f64,
}

impl Band {
    pub const fn new(lo_khz: f64, hi_khz: f64) -> Self {
        Band { lo_khz, hi_khz }
    }

    pub fn contains(&self, f_khz: f64) -> bool {
        f_khz >= self.lo_khz && f_khz <= self.hi_khz
    }

    /// Maps `u` in [0, 1] linearly onto the band.
    pub fn at(&self, u: f64) -> f64 {
        self.lo_khz + u.clamp(0.0, 1.0) * (self.hi_khz - self.lo_khz)
    }

    fn widen(&self, by_khz: f64) -> Band {
        Band::new((self.lo_khz - by_khz).max(0.0), self.hi_khz + by_khz)
    }
}

/// Axis-aligned seeded defect, top-left corner plus size, in inches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectRect {
    pub x_in: f64,
    pub y_in: f64,
    pub w_in: f64,
    pub h_in: f64,
    pub class: DefectClass,
}

impl DefectRect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_in && x <= self.x_in + self.w_in && y >= self.y_in && y <= self.y_in + self.h_in
    }

    pub fn centroid(&self) -> (f64, f64) {
        (self.x_in + self.w_in / 2.0, self.y_in + self.h_in / 2.0)
    }

    pub fn inside(&self, width_in: f64, height_in: f64) -> bool {
        self.x_in >= 0.0
            && self.y_in >= 0.0
            && self.x_in + self.w_in <= width_in
            && self.y_in + self.h_in <= height_in
    }

    fn overlaps(&self, other: &DefectRect) -> bool {
        self.x_in < other.x_in + other.w_in
            && other.x_in < self.x_in + self.w_in
            && self.y_in < other.y_in + other.h_in
            && other.y_in < self.y_in + self.h_in
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlabSpec {
    pub width_in: f64,
    pub height_in: f64,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub defects: Vec<DefectRect>,
    pub band_table: BTreeMap<DefectClass, Band>,
    pub intact_band: Band,
    /// Gaussian noise standard deviation relative to the unit tone amplitude.
    pub noise_rms: f64,
    pub outlier_rate: f64,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub samples: usize,
    /// Correlation length of the in-band frequency field; 0 gives independent points.
    pub correlation_length_in: f64,
    /// Share of in-band variance that is spatially correlated, in [0, 1].
    pub spatial_weight: f64,
}

impl Default for SlabSpec {
    fn default() -> Self {
        SlabSpec {
            width_in: 120.0,
            height_in: 40.0,
            grid_cols: 28,
            grid_rows: 9,
            defects: default_gtm_layout(),
            band_table: default_band_table(),
            intact_band: Band::new(9.5, 15.0),
            noise_rms: 0.1,
            outlier_rate: 0.02,
            seed: 0,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            samples: DEFAULT_SAMPLES,
            correlation_length_in: 10.0,
            spatial_weight: 0.75,
        }
    }
}

/// Per-class defect sub-bands. Adjacent classes overlap.
pub fn default_band_table() -> BTreeMap<DefectClass, Band> {
    BTreeMap::from([
        (DefectClass::ShallowDelam, Band::new(4.5, 6.0)),
        (DefectClass::Honeycomb, Band::new(3.5, 5.0)),
        (DefectClass::Void, Band::new(3.0, 4.5)),
        (DefectClass::DeepDelam, Band::new(5.0, 6.5)),
    ])
}

/// Band table with every sub-band widened by `by_khz` on both sides, used to
/// stress the classifier with heavier class overlap.
pub fn widened_band_table(by_khz: f64) -> BTreeMap<DefectClass, Band> {
    default_band_table()
        .into_iter()
        .map(|(c, b)| (c, b.widen(by_khz)))
        .collect()
}

/// One 12x12 in defect centered in each 30 in zone of a 120x40 in slab.
pub fn default_gtm_layout() -> Vec<DefectRect> {
    layout_for(120.0, 40.0, DEFAULT_RECT_IN)
}

/// Centers one square defect of side `rect_in` in each longitudinal quarter.
pub fn layout_for(width_in: f64, height_in: f64, rect_in: f64) -> Vec<DefectRect> {
    let zone = width_in / 4.0;
    DefectClass::ALL
        .iter()
        .enumerate()
        .map(|(i, &class)| DefectRect {
            x_in: i as f64 * zone + (zone - rect_in) / 2.0,
            y_in: (height_in - rect_in) / 2.0,
            w_in: rect_in,
            h_in: rect_in,
            class,
        })
        .collect()
}

/// One impact-echo time trace at a scan point.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub point_id: usize,
    pub x_in: f64,
    pub y_in: f64,
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
}

/// What the generator put at a scan point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointTruth {
    pub x_in: f64,
    pub y_in: f64,
    pub class: Option<DefectClass>,
    pub f_peak_khz: f64,
    pub outlier: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticSlab {
    pub spec: SlabSpec,
    pub waveforms: Vec<Waveform>,
    pub mask: GroundTruthMask,
    pub truth: Vec<PointTruth>,
}

impl SlabSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.grid_cols == 0 || self.grid_rows == 0 {
            return bad("grid must have at least one row and one column".into());
        }
        if !(self.width_in > 0.0 && self.height_in > 0.0) {
            return bad("slab dimensions must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return bad(format!("outlier_rate {} outside [0, 1]", self.outlier_rate));
        }
        if !(self.noise_rms >= 0.0) {
            return bad("noise_rms must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.spatial_weight) || self.correlation_length_in < 0.0 {
            return bad("spatial field parameters out of range".into());
        }
        if self.samples < 64 {
            return bad(format!(
                "{} samples per waveform; need at least 64",
                self.samples
            ));
        }
        let bands = self
            .band_table
            .iter()
            .map(|(c, b)| (c.to_string(), *b))
            .chain(std::iter::once(("intact".to_string(), self.intact_band)));
        for (name, b) in bands {
            if !(b.lo_khz < b.hi_khz) || b.lo_khz < 0.0 {
                return bad(format!("band {name} must satisfy 0 <= low < high"));
            }
            if b.hi_khz * 1e3 * 2.0 >= self.sample_rate_hz {
                return bad(format!("band {name} reaches past Nyquist"));
            }
        }
        for (i, r) in self.defects.iter().enumerate() {
            if !(r.w_in > 0.0 && r.h_in > 0.0) {
                return bad(format!("defect {i} has non-positive size"));
            }
            if !r.inside(self.width_in, self.height_in) {
                return bad(format!("defect {i} extends outside the slab"));
            }
            if !self.band_table.contains_key(&r.class) {
                return bad(format!("no band configured for class {}", r.class));
            }
            for (j, other) in self.defects.iter().enumerate().skip(i + 1) {
                if r.class != other.class && r.overlaps(other) {
                    return bad(format!(
                        "defects {i} and {j} overlap with different classes"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Scan coordinates in row-major order, at cell centers of a regular grid.
    pub fn grid_points(&self) -> Vec<(f64, f64)> {
        let dx = self.width_in / self.grid_cols as f64;
        let dy = self.height_in / self.grid_rows as f64;
        (0..self.grid_rows)
            .flat_map(|r| {
                (0..self.grid_cols).map(move |c| ((c as f64 + 0.5) * dx, (r as f64 + 0.5) * dy))
            })
            .collect()
    }

    /// Grid spacing (x, y) in inches.
    pub fn pitch(&self) -> (f64, f64) {
        (
            self.width_in / self.grid_cols as f64,
            self.height_in / self.grid_rows as f64,
        )
    }

    /// The defect class governing a point, by the mask cell-center rule.
    pub fn class_at(&self, mask: &GroundTruthMask, x: f64, y: f64) -> Option<DefectClass> {
        let (cx, cy) = mask.cell_center_of(x, y)?;
        if !mask.is_defect_at(cx, cy) {
            return None;
        }
        self.defects
            .iter()
            .find(|r| r.contains(cx, cy))
            .map(|r| r.class)
    }
}

/// Damped sinusoid at `f_peak_khz` plus white noise.
///
/// The envelope decays to 1/e at mid-record.
pub fn synth_waveform<R: Rng + ?Sized>(
    f_peak_khz: f64,
    spec: &SlabSpec,
    rng: &mut R,
) -> Result<Waveform> {
    let nyquist_khz = spec.sample_rate_hz / 2.0 / 1e3;
    if !(f_peak_khz > 0.0 && f_peak_khz < nyquist_khz) {
        return Err(Error::InvalidInput(format!(
            "peak frequency {f_peak_khz} kHz outside (0, {nyquist_khz}) kHz"
        )));
    }
    let n = spec.samples;
    let tau = n as f64 / 2.0;
    let omega = 2.0 * PI * f_peak_khz * 1e3 / spec.sample_rate_hz;
    let noise = Normal::new(0.0, spec.noise_rms.max(0.0))
        .map_err(|e| Error::InvalidInput(format!("noise level: {e}")))?;
    let samples = (0..n)
        .map(|t| {
            let t = t as f64;
            let tone = (-t / tau).exp() * (omega * t).sin();
            if spec.noise_rms > 0.0 {
                tone + noise.sample(rng)
            } else {
                tone
            }
        })
        .collect();
    Ok(Waveform {
        point_id: 0,
        x_in: 0.0,
        y_in: 0.0,
        sample_rate_hz: spec.sample_rate_hz,
        samples,
    })
}

/// Smooth zero-mean, unit-variance random field built from random cosines.
struct SmoothField {
    waves: Vec<(f64, f64, f64)>,
}

impl SmoothField {
    const TERMS: usize = 16;

    fn new<R: Rng + ?Sized>(length_in: f64, rng: &mut R) -> Self {
        let waves = if length_in > 0.0 {
            (0..Self::TERMS)
                .map(|_| {
                    let kx: f64 = rng.sample::<f64, _>(StandardNormal) / length_in;
                    let ky: f64 = rng.sample::<f64, _>(StandardNormal) / length_in;
                    let phase = rng.random::<f64>() * 2.0 * PI;
                    (kx, ky, phase)
                })
                .collect()
        } else {
            Vec::new()
        };
        SmoothField { waves }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        if self.waves.is_empty() {
            return 0.0;
        }
        let scale = (2.0 / self.waves.len() as f64).sqrt();
        scale
            * self
                .waves
                .iter()
                .map(|&(kx, ky, p)| (kx * x + ky * y + p).cos())
                .sum::<f64>()
    }
}

/// Standard normal CDF.
fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

// Abramowitz & Stegun 7.1.26, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736
                + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Generates one waveform per grid point (row-major) and the matching mask.
pub fn synth_slab(spec: &SlabSpec) -> Result<SyntheticSlab> {
    spec.validate()?;
    let mask = build_mask(&spec.defects, spec.width_in, spec.height_in, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let field = SmoothField::new(spec.correlation_length_in, &mut rng);
    let w = spec.spatial_weight;

    let points = spec.grid_points();
    let mut waveforms = Vec::with_capacity(points.len());
    let mut truth = Vec::with_capacity(points.len());
    for (id, &(x, y)) in points.iter().enumerate() {
        let class = spec.class_at(&mask, x, y);
        let band = match class {
            Some(c) => spec.band_table[&c],
            None => spec.intact_band,
        };
        let jitter: f64 = rng.sample(StandardNormal);
        let z = w.sqrt() * field.at(x, y) + (1.0 - w).sqrt() * jitter;
        let mut f_peak = band.at(normal_cdf(z));

        let outlier = rng.random::<f64>() < spec.outlier_rate;
        if outlier {
            let high = rng.random::<bool>();
            let b = if high {
                HIGH_OUTLIER_BAND
            } else {
                LOW_OUTLIER_BAND
            };
            f_peak = b.at(rng.random::<f64>());
        }

        let mut wf = synth_waveform(f_peak, spec, &mut rng)?;
        wf.point_id = id;
        wf.x_in = x;
        wf.y_in = y;
        waveforms.push(wf);
        truth.push(PointTruth {
            x_in: x,
            y_in: y,
            class,
            f_peak_khz: f_peak,
            outlier,
        });
    }
    Ok(SyntheticSlab {
        spec: spec.clone(),
        waveforms,
        mask,
        truth,
    })
}
