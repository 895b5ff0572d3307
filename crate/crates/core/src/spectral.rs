//! Spectra and dominant peak-frequency extraction.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthlab::Waveform;

/// Minimal complex number for the transform.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    pub fn norm(self) -> f64 {
        self.re.hypot(self.im)
    }

    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }

    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }

    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
}

/// In-place iterative radix-2 forward transform, `X[f] = Σ x[t] e^{-j2πft/N}`.
///
/// Panics if the length is not a power of two.
pub fn fft_in_place(buf: &mut [Complex]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    assert!(n.is_power_of_two(), "fft length {n} is not a power of two");

    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }

    // Twiddles computed directly, not by recurrence, to keep error near 1 ulp.
    let twiddles: Vec<Complex> = (0..n / 2)
        .map(|k| {
            let a = -2.0 * PI * k as f64 / n as f64;
            Complex::new(a.cos(), a.sin())
        })
        .collect();

    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * step];
                let a = buf[start + k];
                let b = buf[start + k + half].mul(w);
                buf[start + k] = a.add(b);
                buf[start + k + half] = a.sub(b);
            }
        }
        len <<= 1;
    }
}

/// Optional taper applied before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    None,
    Hann,
}

/// One-sided magnitude spectrum, `N/2 + 1` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub point_id: usize,
    pub x_in: f64,
    pub y_in: f64,
    pub n_fft: usize,
    pub bin_width_hz: f64,
    pub magnitudes: Vec<f64>,
}

impl Spectrum {
    pub fn bin_khz(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width_hz / 1e3
    }
}

/// Removes the least-squares line (offset and slope).
pub fn detrend(w: &Waveform) -> Waveform {
    let n = w.samples.len();
    let mut out = w.clone();
    if n == 0 {
        return out;
    }
    let nf = n as f64;
    let t_mean = (nf - 1.0) / 2.0;
    let y_mean = w.samples.iter().sum::<f64>() / nf;
    let (mut sty, mut stt) = (0.0, 0.0);
    for (t, &y) in w.samples.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sty += dt * (y - y_mean);
        stt += dt * dt;
    }
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    for (t, y) in out.samples.iter_mut().enumerate() {
        *y -= y_mean + slope * (t as f64 - t_mean);
    }
    out
}

/// One-sided `|S(f)|` with zero padding to the next power of two.
pub fn dft_magnitude(w: &Waveform) -> Result<Spectrum> {
    spectrum_with(w, Window::None)
}

pub fn spectrum_with(w: &Waveform, window: Window) -> Result<Spectrum> {
    if w.samples.is_empty() {
        return Err(Error::InvalidInput(format!(
            "waveform {} has no samples",
            w.point_id
        )));
    }
    let len = w.samples.len();
    let n = len.next_power_of_two();
    let mut buf = vec![Complex::default(); n];
    for (t, (&s, slot)) in w.samples.iter().zip(buf.iter_mut()).enumerate() {
        let taper = match window {
            Window::None => 1.0,
            Window::Hann if len > 1 => 0.5 - 0.5 * (2.0 * PI * t as f64 / (len - 1) as f64).cos(),
            Window::Hann => 1.0,
        };
        slot.re = s * taper;
    }
    fft_in_place(&mut buf);
    Ok(Spectrum {
        point_id: w.point_id,
        x_in: w.x_in,
        y_in: w.y_in,
        n_fft: n,
        bin_width_hz: w.sample_rate_hz / n as f64,
        magnitudes: buf[..=n / 2].iter().map(|c| c.norm()).collect(),
    })
}

/// QA flag set on a peak reading. High and low outlier never co-occur.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct QaFlags {
    pub high_outlier: bool,
    pub low_outlier: bool,
    pub flat_spectrum: bool,
}

impl QaFlags {
    pub const OK: QaFlags = QaFlags {
        high_outlier: false,
        low_outlier: false,
        flat_spectrum: false,
    };

    pub fn is_ok(&self) -> bool {
        *self == QaFlags::OK
    }
}

impl fmt::Display for QaFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("OK");
        }
        let names: Vec<&str> = [
            (self.high_outlier, "HighOutlier"),
            (self.low_outlier, "LowOutlier"),
            (self.flat_spectrum, "FlatSpectrum"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        f.write_str(&names.join("|"))
    }
}

impl FromStr for QaFlags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut flags = QaFlags::OK;
        for part in s.split('|').map(str::trim) {
            match part {
                "OK" | "" => {}
                "HighOutlier" => flags.high_outlier = true,
                "LowOutlier" => flags.low_outlier = true,
                "FlatSpectrum" => flags.flat_spectrum = true,
                other => return Err(Error::parse("qa flags", format!("unknown flag `{other}`"))),
            }
        }
        if flags.high_outlier && flags.low_outlier {
            return Err(Error::parse(
                "qa flags",
                "HighOutlier and LowOutlier together",
            ));
        }
        Ok(flags)
    }
}

impl Serialize for QaFlags {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QaFlags {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakReading {
    pub point_id: usize,
    pub x_in: f64,
    pub y_in: f64,
    pub f_peak_khz: f64,
    pub qa: QaFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaThresholds {
    pub high_khz: f64,
    pub low_khz: f64,
    /// Minimum peak-to-median magnitude ratio.
    pub flat_ratio: f64,
}

impl Default for QaThresholds {
    fn default() -> Self {
        QaThresholds {
            high_khz: 15.0,
            low_khz: 1.0,
            flat_ratio: 3.0,
        }
    }
}

/// Bin-center argmax of `|S(f)|` over bins at or above `min_khz`, with
/// default QA thresholds.
pub fn peak_frequency(s: &Spectrum, min_khz: f64) -> PeakReading {
    peak_frequency_with(s, min_khz, &QaThresholds::default())
}

pub fn peak_frequency_with(s: &Spectrum, min_khz: f64, th: &QaThresholds) -> PeakReading {
    let mut reading = PeakReading {
        point_id: s.point_id,
        x_in: s.x_in,
        y_in: s.y_in,
        f_peak_khz: 0.0,
        qa: QaFlags::OK,
    };
    let first = (0..s.magnitudes.len()).find(|&b| s.bin_khz(b) >= min_khz);
    let Some(first) = first else {
        reading.qa.flat_spectrum = true;
        return reading;
    };
    let band = &s.magnitudes[first..];
    // First maximum wins ties.
    let (offset, peak) = band
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &m)| {
            if m > best.1 {
                (i, m)
            } else {
                best
            }
        });
    reading.f_peak_khz = s.bin_khz(first + offset);

    let med = median(band);
    if !(peak > 0.0) || (med > 0.0 && peak / med < th.flat_ratio) {
        reading.qa.flat_spectrum = true;
    }
    if reading.f_peak_khz > th.high_khz {
        reading.qa.high_outlier = true;
    } else if reading.f_peak_khz < th.low_khz {
        reading.qa.low_outlier = true;
    }
    reading
}

pub(crate) fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile of unsorted data.
pub(crate) fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Flags readings that deviate from the median of their neighbors (within
/// `radius_in`, excluding the point itself) by more than twice the
/// neighborhood interquartile range. Values are never changed.
pub fn qa_consistency(readings: &[PeakReading], radius_in: f64) -> Vec<PeakReading> {
    let r2 = radius_in * radius_in;
    readings
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let neighbors: Vec<f64> = readings
                .iter()
                .enumerate()
                .filter(|&(j, q)| {
                    j != i && (q.x_in - p.x_in).powi(2) + (q.y_in - p.y_in).powi(2) <= r2
                })
                .map(|(_, q)| q.f_peak_khz)
                .collect();
            let mut out = p.clone();
            if neighbors.is_empty() {
                return out;
            }
            let med = median(&neighbors);
            let iqr = quantile(&neighbors, 0.75) - quantile(&neighbors, 0.25);
            let dev = p.f_peak_khz - med;
            if dev.abs() > 2.0 * iqr {
                if dev > 0.0 && !out.qa.low_outlier {
                    out.qa.high_outlier = true;
                } else if dev < 0.0 && !out.qa.high_outlier {
                    out.qa.low_outlier = true;
                }
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeConfig {
    pub min_khz: f64,
    pub window: Window,
    pub detrend: bool,
    pub thresholds: QaThresholds,
    /// Neighborhood radius for the median consistency check; `None` skips it.
    pub qa_radius_in: Option<f64>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            min_khz: 0.3,
            window: Window::None,
            detrend: true,
            thresholds: QaThresholds::default(),
            qa_radius_in: Some(6.5),
        }
    }
}

/// Waveforms to peak readings, in input order.
pub fn analyze(waveforms: &[Waveform], cfg: &AnalyzeConfig) -> Result<Vec<PeakReading>> {
    let readings = waveforms
        .par_iter()
        .map(|w| {
            let w = if cfg.detrend { detrend(w) } else { w.clone() };
            let s = spectrum_with(&w, cfg.window)?;
            Ok(peak_frequency_with(&s, cfg.min_khz, &cfg.thresholds))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(match cfg.qa_radius_in {
        Some(r) => qa_consistency(&readings, r),
        None => readings,
    })
}
