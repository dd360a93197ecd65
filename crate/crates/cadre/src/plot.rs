//! Static figure emission: adjacency heatmaps, loss curves, and arrow
//! overlays of the observation graph on spatial grids. Pure pixel drawing,
//! deterministic bytes for identical inputs.

use image::{Rgb, RgbImage};
use ndarray::Array2;
use std::path::Path;

use crate::error::Result;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const FG: Rgb<u8> = Rgb([40, 40, 40]);

fn diverging(v: f64) -> Rgb<u8> {
    // blue (-1) -> white (0) -> red (+1)
    let t = v.clamp(-1.0, 1.0);
    if t >= 0.0 {
        let s = 1.0 - t;
        Rgb([255, (255.0 * s) as u8, (255.0 * s) as u8])
    } else {
        let s = 1.0 + t;
        Rgb([(255.0 * s) as u8, (255.0 * s) as u8, 255])
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let (mut x, mut y) = (x0, y0);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
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

fn fill_circle(img: &mut RgbImage, cx: i64, cy: i64, r: i64, color: Rgb<u8>) {
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
}

/// Arrowhead at the end of the segment.
fn draw_arrow(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    draw_line(img, x0 as i64, y0 as i64, x1 as i64, y1 as i64, color);
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len = (dx * dx + dy * dy).sqrt().max(1e-9);
    let (ux, uy) = (dx / len, dy / len);
    let head = 6.0;
    for side in [-1.0, 1.0] {
        let px = x1 - head * (ux + side * 0.5 * uy);
        let py = y1 - head * (uy - side * 0.5 * ux);
        draw_line(img, x1 as i64, y1 as i64, px as i64, py as i64, color);
    }
}

/// Signed-value heatmap with one cell per matrix entry, scaled by the
/// largest absolute entry.
pub fn heatmap(matrix: &Array2<f64>, path: &Path) -> Result<()> {
    let (rows, cols) = matrix.dim();
    let cell = 24u32;
    let pad = 4u32;
    let w = cols as u32 * cell + 2 * pad;
    let h = rows as u32 * cell + 2 * pad;
    let mut img = RgbImage::from_pixel(w, h, BG);
    let max = matrix.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    for i in 0..rows {
        for j in 0..cols {
            let color = diverging(matrix[[i, j]] / max);
            for py in 0..cell {
                for px in 0..cell {
                    let x = pad + j as u32 * cell + px;
                    let y = pad + i as u32 * cell + py;
                    if px == 0 || py == 0 {
                        img.put_pixel(x, y, Rgb([200, 200, 200]));
                    } else {
                        img.put_pixel(x, y, color);
                    }
                }
            }
        }
    }
    save(img, path)
}

/// Loss curves from `(step, value)` series, linearly scaled, one polyline
/// per named series.
pub fn line_plot(series: &[(&str, Vec<f64>)], path: &Path) -> Result<()> {
    let w = 720u32;
    let h = 420u32;
    let margin = 40f64;
    let mut img = RgbImage::from_pixel(w, h, BG);
    let palette = [
        Rgb([202, 51, 51]),
        Rgb([51, 102, 202]),
        Rgb([40, 150, 70]),
        Rgb([180, 120, 30]),
        Rgb([120, 60, 160]),
        Rgb([30, 150, 150]),
        Rgb([120, 120, 120]),
    ];
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    if n >= 2 {
        let lo = series
            .iter()
            .flat_map(|(_, v)| v.iter())
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let hi = series
            .iter()
            .flat_map(|(_, v)| v.iter())
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        let to_xy = |i: usize, v: f64, len: usize| -> (f64, f64) {
            let x = margin + (w as f64 - 2.0 * margin) * i as f64 / (len - 1) as f64;
            let y = h as f64 - margin - (h as f64 - 2.0 * margin) * (v - lo) / span;
            (x, y)
        };
        for (si, (_, values)) in series.iter().enumerate() {
            if values.len() < 2 {
                continue;
            }
            let color = palette[si % palette.len()];
            for i in 1..values.len() {
                let (x0, y0) = to_xy(i - 1, values[i - 1], values.len());
                let (x1, y1) = to_xy(i, values[i], values.len());
                draw_line(&mut img, x0 as i64, y0 as i64, x1 as i64, y1 as i64, color);
            }
        }
    }
    // frame
    draw_line(
        &mut img,
        margin as i64,
        (h as f64 - margin) as i64,
        (w as f64 - margin) as i64,
        (h as f64 - margin) as i64,
        FG,
    );
    draw_line(
        &mut img,
        margin as i64,
        margin as i64,
        margin as i64,
        (h as f64 - margin) as i64,
        FG,
    );
    save(img, path)
}

/// Observation graph drawn as arrows between node positions; emits a file
/// even for an empty graph.
pub fn graph_overlay(coords: &Array2<f64>, adjacency: &Array2<f64>, path: &Path) -> Result<()> {
    let w = 720u32;
    let h = 720u32;
    let margin = 50f64;
    let mut img = RgbImage::from_pixel(w, h, BG);
    let d = coords.nrows();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for i in 0..d {
        xmin = xmin.min(coords[[i, 0]]);
        xmax = xmax.max(coords[[i, 0]]);
        ymin = ymin.min(coords[[i, 1]]);
        ymax = ymax.max(coords[[i, 1]]);
    }
    let sx = (w as f64 - 2.0 * margin) / (xmax - xmin).max(1e-9);
    let sy = (h as f64 - 2.0 * margin) / (ymax - ymin).max(1e-9);
    let to_px = |i: usize| -> (f64, f64) {
        (
            margin + (coords[[i, 0]] - xmin) * sx,
            h as f64 - margin - (coords[[i, 1]] - ymin) * sy,
        )
    };
    for i in 0..d {
        for j in 0..d {
            if adjacency[[i, j]] != 0.0 {
                let (x0, y0) = to_px(i);
                let (x1, y1) = to_px(j);
                draw_arrow(&mut img, x0, y0, x1, y1, Rgb([202, 51, 51]));
            }
        }
    }
    for i in 0..d {
        let (x, y) = to_px(i);
        fill_circle(&mut img, x as i64, y as i64, 4, Rgb([51, 102, 202]));
    }
    save(img, path)
}

fn save(img: RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    img.save(path)
        .map_err(|e| crate::error::CadreError::InvalidConfig(format!("image save failed: {e}")))?;
    Ok(())
}
