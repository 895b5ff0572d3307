//! CSV and JSON file helpers.
//!
//! Waveforms: `point_id,x_in,y_in,sample_rate_hz,s0,s1,...`
//! Readings:  `point_id,x_in,y_in,f_peak_khz,qa`

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::PeakReading;
use crate::synthlab::Waveform;

/// Writes bytes, creating parent directories as needed.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn field<T: std::str::FromStr>(
    cells: &[&str],
    i: usize,
    name: &str,
    ctx: &dyn Fn() -> String,
) -> Result<T> {
    let raw = cells
        .get(i)
        .ok_or_else(|| Error::parse(ctx(), format!("missing column `{name}`")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(ctx(), format!("bad `{name}` value `{raw}`")))
}

/// Data rows of a CSV body, skipping blank lines and a header whose first
/// cell is `point_id`.
fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| (n + 1, l.split(',').collect::<Vec<_>>()))
        .filter(|(_, c)| c[0].trim() != "point_id")
}

pub fn waveforms_to_csv(ws: &[Waveform]) -> String {
    let n = ws.iter().map(|w| w.samples.len()).max().unwrap_or(0);
    let mut s = String::from("point_id,x_in,y_in,sample_rate_hz");
    for i in 0..n {
        let _ = write!(s, ",s{i}");
    }
    s.push('\n');
    for w in ws {
        let _ = write!(
            s,
            "{},{},{},{}",
            w.point_id, w.x_in, w.y_in, w.sample_rate_hz
        );
        for v in &w.samples {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_waveforms_csv(text: &str, source: &str) -> Result<Vec<Waveform>> {
    let mut out = Vec::new();
    for (line, cells) in rows(text) {
        let ctx = || format!("{source}:{line}");
        if cells.len() < 5 {
            return Err(Error::parse(ctx(), "waveform row has no samples"));
        }
        let samples = cells[4..]
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(ctx(), format!("bad sample: {e}")))?;
        out.push(Waveform {
            point_id: field(&cells, 0, "point_id", &ctx)?,
            x_in: field(&cells, 1, "x_in", &ctx)?,
            y_in: field(&cells, 2, "y_in", &ctx)?,
            sample_rate_hz: field(&cells, 3, "sample_rate_hz", &ctx)?,
            samples,
        });
    }
    Ok(out)
}

pub fn write_waveforms(path: &Path, ws: &[Waveform]) -> Result<()> {
    write_text(path, &waveforms_to_csv(ws))
}

pub fn read_waveforms(path: &Path) -> Result<Vec<Waveform>> {
    parse_waveforms_csv(&read_text(path)?, &path.display().to_string())
}

pub fn readings_to_csv(rs: &[PeakReading]) -> String {
    let mut s = String::from("point_id,x_in,y_in,f_peak_khz,qa\n");
    for r in rs {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.point_id, r.x_in, r.y_in, r.f_peak_khz, r.qa
        );
    }
    s
}

pub fn parse_readings_csv(text: &str, source: &str) -> Result<Vec<PeakReading>> {
    let mut out = Vec::new();
    for (line, cells) in rows(text) {
        let ctx = || format!("{source}:{line}");
        if cells.len() != 5 {
            return Err(Error::parse(
                ctx(),
                format!("expected 5 columns, found {}", cells.len()),
            ));
        }
        out.push(PeakReading {
            point_id: field(&cells, 0, "point_id", &ctx)?,
            x_in: field(&cells, 1, "x_in", &ctx)?,
            y_in: field(&cells, 2, "y_in", &ctx)?,
            f_peak_khz: field(&cells, 3, "f_peak_khz", &ctx)?,
            qa: cells[4]
                .trim()
                .parse()
                .map_err(|e: Error| Error::parse(ctx(), e.to_string()))?,
        });
    }
    Ok(out)
}

pub fn write_readings(path: &Path, rs: &[PeakReading]) -> Result<()> {
    write_text(path, &readings_to_csv(rs))
}

pub fn read_readings(path: &Path) -> Result<Vec<PeakReading>> {
    parse_readings_csv(&read_text(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::QaFlags;

    #[test]
    fn waveform_round_trip() {
        let ws = vec![Waveform {
            point_id: 3,
            x_in: 2.142857142857143,
            y_in: 0.1,
            sample_rate_hz: 200_000.0,
            samples: vec![0.5, -1e-17, 3.0],
        }];
        let csv = waveforms_to_csv(&ws);
        assert!(csv.starts_with("point_id,x_in,y_in,sample_rate_hz,s0,s1,s2\n"));
        assert_eq!(parse_waveforms_csv(&csv, "t").unwrap(), ws);
    }

    #[test]
    fn readings_round_trip() {
        let rs = vec![
            PeakReading {
                point_id: 0,
                x_in: 1.0,
                y_in: 2.0,
                f_peak_khz: 12.5,
                qa: QaFlags::OK,
            },
            PeakReading {
                point_id: 1,
                x_in: 1.5,
                y_in: 2.0,
                f_peak_khz: 0.0,
                qa: QaFlags {
                    low_outlier: true,
                    flat_spectrum: true,
                    ..QaFlags::OK
                },
            },
        ];
        let csv = readings_to_csv(&rs);
        assert!(csv.contains("LowOutlier|FlatSpectrum"));
        assert_eq!(parse_readings_csv(&csv, "t").unwrap(), rs);
    }

    #[test]
    fn bad_rows_report_location() {
        let err = parse_readings_csv("point_id,x_in,y_in,f_peak_khz,qa\n0,1,2,abc,OK\n", "r.csv")
            .unwrap_err();
        assert!(err.to_string().contains("r.csv:2"), "{err}");
        assert!(parse_readings_csv("0,1,2,3\n", "r").is_err());
        assert!(parse_readings_csv("0,1,2,3,Bogus\n", "r").is_err());
    }

    #[test]
    fn write_creates_directories() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/c.json");
        write_json(&p, &vec![1, 2]).unwrap();
        let back: Vec<i32> = read_json(&p).unwrap();
        assert_eq!(back, vec![1, 2]);
    }
}
