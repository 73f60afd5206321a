//! File emission: CSV tables, JSON summaries, SVG figures.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter, Serializer};

/// Seventeen significant digits, exact round-trip for every `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Pretty JSON with floats in `fmt_f64` form (non-finite values become null).
struct FixedDigits<'a>(PrettyFormatter<'a>);

impl Formatter for FixedDigits<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, FixedDigits(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf)?)
}

/// A cell of a CSV row.
pub enum Cell {
    F(f64),
    I(i64),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::I(v as i64)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => fmt_f64(*v),
            Cell::I(v) => v.to_string(),
        }
    }
}

/// Files written into one output directory, in emission order.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display()))?;
        Ok(OutputDir { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        self.record(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = to_json(value).with_context(|| format!("cannot serialize {name}"))?;
        self.write_text(name, &text)
    }

    pub fn write_csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<Cell>>,
    {
        let path = self.root.join(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush().with_context(|| format!("cannot write {}", path.display()))?;
        self.record(name);
        Ok(())
    }

    /// Remove the files a previous run listed in `manifest.json`.
    pub fn clear_previous(&self) -> Result<()> {
        let manifest = self.root.join("manifest.json");
        let Ok(text) = fs::read_to_string(&manifest) else { return Ok(()) };
        let Ok(value) = serde_json::from_str::<serde_json::Value>(&text) else { return Ok(()) };
        if let Some(files) = value.get("files").and_then(|f| f.as_array()) {
            for name in files.iter().filter_map(|f| f.as_str()) {
                // Only plain names inside this directory.
                if !name.contains('/') && !name.contains('\\') && name != ".." {
                    let path = self.root.join(name);
                    if path.is_file() {
                        fs::remove_file(&path).with_context(|| format!("cannot remove {}", path.display()))?;
                    }
                }
            }
        }
        Ok(())
    }
}

pub mod svg {
    //! Minimal self-contained SVG figures.

    use std::fmt::Write;

    use super::fmt_f64;

    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const MARGIN: f64 = 56.0;

    fn short(v: f64) -> String {
        format!("{v:.4}")
    }

    fn extent(v: impl Iterator<Item = f64>) -> (f64, f64) {
        let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
            (a.min(x), b.max(x))
        });
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-300 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    }

    fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64)) {
        let _ = write!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{title}</text>\n\
             <rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{xlabel}</text>\n\
             <text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {})\">{ylabel}</text>\n",
            W / 2.0,
            W - 2.0 * MARGIN,
            H - 2.0 * MARGIN,
            W / 2.0,
            H - 16.0,
            H / 2.0,
            H / 2.0,
        );
        let label = |out: &mut String, px: f64, py: f64, anchor: &str, v: f64| {
            let _ = writeln!(
                out,
                "<text x=\"{px:.2}\" y=\"{py:.2}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
                short(v)
            );
        };
        label(out, MARGIN, H - MARGIN + 14.0, "start", x.0);
        label(out, W - MARGIN, H - MARGIN + 14.0, "end", x.1);
        label(out, MARGIN - 4.0, H - MARGIN, "end", y.0);
        label(out, MARGIN - 4.0, MARGIN + 8.0, "end", y.1);
    }

    fn map(v: f64, (lo, hi): (f64, f64), a: f64, b: f64) -> f64 {
        a + (v - lo) / (hi - lo) * (b - a)
    }

    /// Line plot of `(x, y)`; non-finite points break the line.
    pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, x: &[f64], y: &[f64]) -> String {
        let xr = extent(x.iter().copied());
        let yr = extent(y.iter().copied());
        let mut out = String::new();
        frame(&mut out, title, xlabel, ylabel, xr, yr);
        let mut segment = String::new();
        let flush = |out: &mut String, seg: &mut String| {
            if !seg.is_empty() {
                let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"1.5\" points=\"{}\"/>", seg.trim_end());
                seg.clear();
            }
        };
        for (&xi, &yi) in x.iter().zip(y) {
            if xi.is_finite() && yi.is_finite() {
                let px = map(xi, xr, MARGIN, W - MARGIN);
                let py = map(yi, yr, H - MARGIN, MARGIN);
                let _ = write!(segment, "{px:.2},{py:.2} ");
            } else {
                flush(&mut out, &mut segment);
            }
        }
        flush(&mut out, &mut segment);
        out.push_str("</svg>\n");
        out
    }

    /// Heat map of `values[i * n_y + j]` over the `x` by `y` node table,
    /// downsampled to at most `max_cells` per axis.
    pub fn heat_map(title: &str, xlabel: &str, ylabel: &str, x: &[f64], y: &[f64], values: &[f64], max_cells: usize) -> String {
        let (n_x, n_y) = (x.len(), y.len());
        let xr = extent(x.iter().copied());
        let yr = extent(y.iter().copied());
        let vr = extent(values.iter().copied());
        let mut out = String::new();
        frame(&mut out, title, xlabel, ylabel, xr, yr);
        let sx = n_x.div_ceil(max_cells).max(1);
        let sy = n_y.div_ceil(max_cells).max(1);
        let cols: Vec<usize> = (0..n_x).step_by(sx).collect();
        let rows: Vec<usize> = (0..n_y).step_by(sy).collect();
        let cw = (W - 2.0 * MARGIN) / cols.len() as f64;
        let ch = (H - 2.0 * MARGIN) / rows.len() as f64;
        for (a, &i) in cols.iter().enumerate() {
            for (b, &j) in rows.iter().enumerate() {
                let v = values[i * n_y + j];
                let t = if v.is_finite() { map(v, vr, 0.0, 1.0) } else { 0.0 };
                let (r, g, bl) = ((255.0 * t) as u8, (80.0 + 100.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8, (255.0 * (1.0 - t)) as u8);
                let _ = writeln!(
                    out,
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#{r:02x}{g:02x}{bl:02x}\"/>",
                    MARGIN + a as f64 * cw,
                    H - MARGIN - (b + 1) as f64 * ch,
                    cw + 0.05,
                    ch + 0.05
                );
            }
        }
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">range [{}, {}]</text>",
            W - MARGIN,
            MARGIN - 6.0,
            fmt_f64(vr.0),
            fmt_f64(vr.1)
        );
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_with_seventeen_digits() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17);
        }
    }

    #[test]
    fn json_uses_fixed_digits_and_parses_back() {
        let v = serde_json::json!({"a": 0.1, "b": [1.5, f64::NAN], "n": 3});
        let text = to_json(&v).unwrap();
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
        assert!(back["b"][1].is_null());
        assert_eq!(back["n"].as_i64(), Some(3));
    }

    #[test]
    fn svg_is_well_formed() {
        let s = svg::line_plot("t", "x", "y", &[0.0, 1.0, 2.0], &[1.0, f64::NAN, 0.0]);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        let h = svg::heat_map("t", "x", "y", &[0.0, 1.0], &[0.0, 1.0, 2.0], &[0.0; 6], 100);
        assert_eq!(h.matches("<rect").count(), 2 + 6);
    }
}
