//! Static report rendering: boxplot summary images.
//!
//! Plots are plain PNG files drawn directly onto a pixel buffer with an
//! embedded 5×7 bitmap font, so reports work without any display stack.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};

const FG: Rgb<u8> = Rgb([30, 30, 30]);
const BG: Rgb<u8> = Rgb([255, 255, 255]);
const BOX_FILL: Rgb<u8> = Rgb([173, 205, 235]);
const MARKER: Rgb<u8> = Rgb([200, 40, 40]);

/// One labeled distribution in a boxplot, with an optional highlighted value
/// (e.g. the run selected on the validation set).
#[derive(Debug, Clone)]
pub struct BoxSeries {
    pub label: String,
    pub values: Vec<f64>,
    pub marker: Option<f64>,
}

/// 5×7 bitmap glyphs; each byte is one row, low 5 bits used.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1E, 0x01, 0x01, 0x0E, 0x01, 0x01, 0x1E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '%' => [0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        'e' => [0x0E, 0x11, 0x1F, 0x10, 0x0E, 0x00, 0x00],
        _ => [0x00; 7],
    }
}

struct Canvas {
    buf: ImageBuffer<Rgb<u8>, Vec<u8>>,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Self { buf: ImageBuffer::from_pixel(w, h, BG) }
    }

    fn set(&mut self, x: i64, y: i64, color: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.buf.width() && (y as u32) < self.buf.height() {
            self.buf.put_pixel(x as u32, y as u32, color);
        }
    }

    fn hline(&mut self, x0: i64, x1: i64, y: i64, color: Rgb<u8>) {
        for x in x0.min(x1)..=x0.max(x1) {
            self.set(x, y, color);
        }
    }

    fn vline(&mut self, x: i64, y0: i64, y1: i64, color: Rgb<u8>) {
        for y in y0.min(y1)..=y0.max(y1) {
            self.set(x, y, color);
        }
    }

    fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
        for y in y0.min(y1)..=y0.max(y1) {
            self.hline(x0, x1, y, color);
        }
    }

    fn text(&mut self, x: i64, y: i64, s: &str, color: Rgb<u8>) {
        let mut cx = x;
        for c in s.chars() {
            let rows = glyph(c);
            for (ry, row) in rows.iter().enumerate() {
                for bit in 0..5 {
                    if row & (1 << (4 - bit)) != 0 {
                        self.set(cx + bit as i64, y + ry as i64, color);
                    }
                }
            }
            cx += 6;
        }
    }

    fn text_width(s: &str) -> i64 {
        s.chars().count() as i64 * 6
    }
}

fn quartiles(sorted: &[f64]) -> (f64, f64, f64) {
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    (q(0.25), q(0.5), q(0.75))
}

/// Renders a boxplot PNG: one box per series (quartiles, median, min/max
/// whiskers) with optional highlighted marker values.
pub fn render_boxplot<P: AsRef<Path>>(
    path: P,
    title: &str,
    y_label: &str,
    series: &[BoxSeries],
) -> Result<()> {
    if series.is_empty() || series.iter().any(|s| s.values.is_empty()) {
        return Err(Error::Empty("boxplot needs at least one non-empty series".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &v in &s.values {
            if !v.is_finite() {
                return Err(Error::Numeric("boxplot values must be finite".into()));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if let Some(m) = s.marker {
            lo = lo.min(m);
            hi = hi.max(m);
        }
    }
    if hi - lo < 1e-12 {
        hi += 1.0;
        lo -= 1.0;
    }
    let pad = 0.08 * (hi - lo);
    lo -= pad;
    hi += pad;

    let per_series = 72i64;
    let left = 64i64;
    let bottom_axis = 40i64;
    let top = 28i64;
    let width = (left + per_series * series.len() as i64 + 20) as u32;
    let height = 280u32;
    let plot_h = height as i64 - top - bottom_axis;
    let mut canvas = Canvas::new(width, height);

    let y_of = |v: f64| -> i64 { top + ((hi - v) / (hi - lo) * plot_h as f64).round() as i64 };

    canvas.text(8, 8, title, FG);
    canvas.text(8, top - 10, y_label, FG);
    // Axes.
    canvas.vline(left - 8, top, top + plot_h, FG);
    canvas.hline(left - 8, width as i64 - 10, top + plot_h, FG);
    // Y ticks.
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = y_of(v);
        canvas.hline(left - 12, left - 8, y, FG);
        canvas.text(2, y - 3, &format!("{v:.2}"), FG);
    }

    for (i, s) in series.iter().enumerate() {
        let cx = left + per_series * i as i64 + per_series / 2;
        let mut sorted = s.values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (q1, median, q3) = quartiles(&sorted);
        let min = sorted[0];
        let max = *sorted.last().unwrap();
        let half = 18i64;

        canvas.vline(cx, y_of(max), y_of(q3), FG);
        canvas.vline(cx, y_of(q1), y_of(min), FG);
        canvas.hline(cx - half / 2, cx + half / 2, y_of(max), FG);
        canvas.hline(cx - half / 2, cx + half / 2, y_of(min), FG);
        canvas.fill_rect(cx - half, y_of(q3), cx + half, y_of(q1), BOX_FILL);
        canvas.hline(cx - half, cx + half, y_of(q3), FG);
        canvas.hline(cx - half, cx + half, y_of(q1), FG);
        canvas.vline(cx - half, y_of(q3), y_of(q1), FG);
        canvas.vline(cx + half, y_of(q3), y_of(q1), FG);
        canvas.hline(cx - half, cx + half, y_of(median), FG);

        if let Some(m) = s.marker {
            let y = y_of(m);
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    if dx * dx + dy * dy <= 5 {
                        canvas.set(cx + dx, y + dy, MARKER);
                    }
                }
            }
        }

        let label_x = cx - Canvas::text_width(&s.label) / 2;
        canvas.text(label_x, top + plot_h + 8, &s.label, FG);
    }

    canvas.buf.save(path.as_ref())?;
    Ok(())
}
