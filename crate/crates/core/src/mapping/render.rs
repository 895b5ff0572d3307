use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Field;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }
}

/// Color for cells outside the sampled hull.
const SENTINEL: Rgb = Rgb(0xdd, 0xdd, 0xdd);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    #[default]
    Viridis,
    Jet,
    Gray,
}

impl Palette {
    fn stops(self) -> &'static [Rgb] {
        match self {
            Palette::Viridis => &[
                Rgb(0x44, 0x01, 0x54),
                Rgb(0x3b, 0x52, 0x8b),
                Rgb(0x21, 0x91, 0x8c),
                Rgb(0x5e, 0xc9, 0x62),
                Rgb(0xfd, 0xe7, 0x25),
            ],
            Palette::Jet => &[
                Rgb(0x00, 0x00, 0x8f),
                Rgb(0x00, 0x80, 0xff),
                Rgb(0x80, 0xff, 0x80),
                Rgb(0xff, 0x80, 0x00),
                Rgb(0x80, 0x00, 0x00),
            ],
            Palette::Gray => &[Rgb(0, 0, 0), Rgb(0xff, 0xff, 0xff)],
        }
    }

    /// Color at `t` in [0, 1].
    pub fn color(self, t: f64) -> Rgb {
        let stops = self.stops();
        let t = if t.is_finite() {
            t.clamp(0.0, 1.0)
        } else {
            0.0
        };
        let pos = t * (stops.len() - 1) as f64;
        let i = (pos.floor() as usize).min(stops.len() - 2);
        let f = pos - i as f64;
        let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * f).round() as u8;
        let (a, b) = (stops[i], stops[i + 1]);
        Rgb(mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
    }
}

impl std::str::FromStr for Palette {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "viridis" => Ok(Palette::Viridis),
            "jet" => Ok(Palette::Jet),
            "gray" | "grey" => Ok(Palette::Gray),
            other => Err(Error::parse("palette", other)),
        }
    }
}

/// Linear value range mapped onto the palette. A shared scale lets several
/// slabs use the same colors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorScale {
    pub min: f64,
    pub max: f64,
}

impl ColorScale {
    pub fn of(field: &Field) -> ColorScale {
        let (min, max) = field.range().unwrap_or((0.0, 0.0));
        ColorScale { min, max }
    }

    pub fn t(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }

    pub fn ticks(&self) -> [f64; 3] {
        [self.min, (self.min + self.max) / 2.0, self.max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Svg,
    Ppm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<ImageFormat> {
        match path.extension()?.to_str()? {
            "svg" => Some(ImageFormat::Svg),
            "ppm" => Some(ImageFormat::Ppm),
            _ => None,
        }
    }
}

/// Small SVG builder with fixed-precision coordinates so output bytes are
/// stable.
#[derive(Debug, Clone)]
pub struct SvgCanvas {
    width: f64,
    height: f64,
    body: String,
}

impl SvgCanvas {
    pub fn new(width: f64, height: f64) -> Self {
        SvgCanvas {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: Rgb, class: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect class="{class}" x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{}"/>"#,
            fill.hex()
        );
    }

    pub fn circle(
        &mut self,
        cx: f64,
        cy: f64,
        r: f64,
        fill: Rgb,
        stroke: Option<Rgb>,
        class: &str,
    ) {
        let stroke = stroke
            .map(|s| format!(r#" stroke="{}" stroke-width="1""#, s.hex()))
            .unwrap_or_default();
        let _ = writeln!(
            self.body,
            r#"<circle class="{class}" cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="{}"{stroke}/>"#,
            fill.hex()
        );
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], stroke: Rgb, class: &str) {
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline class="{class}" points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            coords.join(" "),
            stroke.hex()
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, text: &str) {
        let escaped = text
            .replace('&', "&amp;")
            .replace('<', "&lt;")
            .replace('>', "&gt;");
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size:.1}" font-family="sans-serif" text-anchor="{anchor}">{escaped}</text>"#
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">\n\
             <rect x=\"0\" y=\"0\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"#ffffff\"/>\n{body}</svg>\n",
            w = self.width,
            h = self.height,
            body = self.body
        )
    }
}

const CELL_PX: f64 = 6.0;
const LEGEND_PX: f64 = 44.0;

/// Heatmap of a field as one SVG rect per cell, plus a color bar with ticks
/// at min, mid and max.
pub fn heatmap_svg(field: &Field, palette: Palette, scale: Option<ColorScale>) -> String {
    let scale = scale.unwrap_or_else(|| ColorScale::of(field));
    let px = CELL_PX * field.resolution_in.max(0.25).min(4.0);
    let (w, h) = (field.cols as f64 * px, field.rows as f64 * px);
    let mut svg = SvgCanvas::new(w.max(160.0), h + LEGEND_PX);
    for r in 0..field.rows {
        for c in 0..field.cols {
            let color = field
                .get(r, c)
                .map_or(SENTINEL, |v| palette.color(scale.t(v)));
            svg.rect(c as f64 * px, r as f64 * px, px, px, color, "cell");
        }
    }
    let bar_w = w.max(160.0) - 20.0;
    let steps = 64;
    for i in 0..steps {
        let t = i as f64 / (steps - 1) as f64;
        svg.rect(
            10.0 + bar_w * i as f64 / steps as f64,
            h + 8.0,
            bar_w / steps as f64 + 0.05,
            12.0,
            palette.color(t),
            "legend",
        );
    }
    for (tick, anchor, x) in scale
        .ticks()
        .into_iter()
        .zip(["start", "middle", "end"])
        .zip([10.0, 10.0 + bar_w / 2.0, 10.0 + bar_w])
        .map(|((v, a), x)| (v, a, x))
    {
        svg.text(x, h + 34.0, 10.0, anchor, &format!("{tick:.2} kHz"));
    }
    svg.finish()
}

/// Binary PPM (P6), `scale` pixels per cell. Legend values go in a header
/// comment.
pub fn heatmap_ppm(
    field: &Field,
    palette: Palette,
    scale: Option<ColorScale>,
    px: usize,
) -> Vec<u8> {
    let cs = scale.unwrap_or_else(|| ColorScale::of(field));
    let px = px.max(1);
    let (w, h) = (field.cols * px, field.rows * px);
    let [lo, mid, hi] = cs.ticks();
    let mut out = format!("P6\n# legend min={lo:.4} mid={mid:.4} max={hi:.4} kHz\n{w} {h}\n255\n")
        .into_bytes();
    out.reserve(w * h * 3);
    for r in 0..field.rows {
        let row: Vec<Rgb> = (0..field.cols)
            .map(|c| field.get(r, c).map_or(SENTINEL, |v| palette.color(cs.t(v))))
            .collect();
        for _ in 0..px {
            for color in &row {
                for _ in 0..px {
                    out.extend_from_slice(&[color.0, color.1, color.2]);
                }
            }
        }
    }
    out
}

/// Writes a heatmap; the format follows the file extension.
pub fn render_heatmap(
    field: &Field,
    path: &Path,
    palette: Palette,
    scale: Option<ColorScale>,
) -> Result<()> {
    let bytes = match ImageFormat::from_path(path) {
        Some(ImageFormat::Svg) => heatmap_svg(field, palette, scale).into_bytes(),
        Some(ImageFormat::Ppm) => heatmap_ppm(field, palette, scale, 4),
        None => {
            return Err(Error::InvalidInput(format!(
                "{}: heatmap path must end in .svg or .ppm",
                path.display()
            )))
        }
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
