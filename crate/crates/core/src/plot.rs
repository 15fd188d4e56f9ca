//! Static PNG rendering of trace panels and sweep heatmaps.
//!
//! Everything here works from the CSV text alone.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::analysis::SweepGrid;
use crate::engine::CsvTable;
use crate::error::{Error, Result};

const PANEL_W: u32 = 800;
const PANEL_H: u32 = 220;
const MARGIN: u32 = 12;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GRAY: Rgb<u8> = Rgb([160, 160, 160]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const LINE: Rgb<u8> = Rgb([20, 60, 170]);

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws `ys` against `xs` into the rectangle starting at row `top`.
fn draw_panel(img: &mut RgbImage, top: u32, xs: &[f64], ys: &[f64]) {
    let (x0, x1) = (MARGIN as f64, (PANEL_W - MARGIN) as f64);
    let (y0, y1) = ((top + MARGIN) as f64, (top + PANEL_H - MARGIN) as f64);
    let finite = |v: &&f64| v.is_finite();
    let tmin = xs.iter().filter(finite).copied().fold(f64::INFINITY, f64::min);
    let tmax = xs.iter().filter(finite).copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = ys.iter().filter(finite).copied().fold(f64::INFINITY, f64::min);
    let mut hi = ys.iter().filter(finite).copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite() && tmax > tmin) {
        return;
    }
    if hi - lo < 1e-300 {
        lo -= 1.0;
        hi += 1.0;
    }
    let px = |t: f64| (x0 + (t - tmin) / (tmax - tmin) * (x1 - x0)).round() as i64;
    let py = |v: f64| (y1 - (v - lo) / (hi - lo) * (y1 - y0)).round() as i64;
    let corners = [
        (x0 as i64, y0 as i64),
        (x1 as i64, y0 as i64),
        (x1 as i64, y1 as i64),
        (x0 as i64, y1 as i64),
    ];
    for k in 0..4 {
        draw_line(img, corners[k], corners[(k + 1) % 4], BLACK);
    }
    if lo < 0.0 && hi > 0.0 {
        draw_line(img, (px(tmin), py(0.0)), (px(tmax), py(0.0)), GRAY);
    }
    let pts: Vec<(i64, i64)> = xs
        .iter()
        .zip(ys)
        .filter(|(t, v)| t.is_finite() && v.is_finite())
        .map(|(&t, &v)| (px(t), py(v)))
        .collect();
    for w in pts.windows(2) {
        draw_line(img, w[0], w[1], LINE);
    }
}

/// Renders the given columns of a trace CSV as vertically stacked panels
/// sharing the time axis.
pub fn render_trace_panels(csv_text: &str, columns: &[&str], out: &Path) -> Result<()> {
    let table = CsvTable::parse(csv_text)?;
    let t = table
        .column("t")
        .ok_or_else(|| Error::Parse("trace CSV has no `t` column".into()))?;
    let mut img = RgbImage::from_pixel(PANEL_W, PANEL_H * columns.len() as u32, WHITE);
    for (k, name) in columns.iter().enumerate() {
        let ys = table
            .column(name)
            .ok_or_else(|| Error::Parse(format!("trace CSV has no `{name}` column")))?;
        draw_panel(&mut img, k as u32 * PANEL_H, &t, &ys);
    }
    save(&img, out)
}

/// Default panels of a chain trace: tracking error, control and the
/// disturbance estimation error (last `ztilde` column).
pub fn default_trace_columns(csv_text: &str) -> Result<Vec<String>> {
    let table = CsvTable::parse(csv_text)?;
    let last_z = table
        .header
        .iter()
        .rfind(|h| h.starts_with("ztilde"))
        .cloned()
        .ok_or_else(|| Error::Parse("trace CSV has no ztilde columns".into()))?;
    Ok(vec!["e".into(), "u".into(), last_z])
}

/// Diverging color for `v` in `[-1, 1]`: red (negative) through white to
/// blue (positive).
pub fn diverging(v: f64) -> Rgb<u8> {
    if !v.is_finite() {
        return GRAY;
    }
    let v = v.clamp(-1.0, 1.0);
    let fade = |a: f64| (255.0 * (1.0 - a)).round() as u8;
    if v >= 0.0 {
        Rgb([fade(v), fade(v * 0.6), 255])
    } else {
        Rgb([255, fade(-v * 0.6), fade(-v)])
    }
}

/// Heatmap of a sweep grid; rows are `axis_a` (top = first), columns
/// `axis_b`. The color scale is symmetric about zero with half-range
/// `scale` (default: max finite |cell|).
pub fn render_heatmap(grid: &SweepGrid, scale: Option<f64>, out: &Path) -> Result<()> {
    let rows = grid.cells.len() as u32;
    let cols = grid.axis_b.len() as u32;
    if rows == 0 || cols == 0 {
        return Err(Error::config("empty grid"));
    }
    let cell = (600 / rows.max(cols)).max(4);
    let scale = scale.unwrap_or_else(|| {
        grid.cells
            .iter()
            .flatten()
            .filter(|v| v.is_finite())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    });
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut img = RgbImage::from_pixel(cols * cell, rows * cell, WHITE);
    for (i, row) in grid.cells.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let c = diverging(v / scale);
            for dy in 0..cell {
                for dx in 0..cell {
                    img.put_pixel(j as u32 * cell + dx, i as u32 * cell + dy, c);
                }
            }
        }
    }
    save(&img, out)
}
