//! Minimal line plots written as PNG.

use std::path::Path;

use anyhow::Context;
use image::{Rgb, RgbImage};

const W: u32 = 640;
const H: u32 = 400;
const MARGIN: u32 = 40;
const COLORS: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < W && (y as u32) < H {
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

/// Plots each profile normalized to its first value against the ring
/// index. Series colors follow the order given; a legend of color swatches
/// sits in the top right corner.
pub fn plot_profiles(path: &Path, series: &[(String, Vec<f64>)]) -> anyhow::Result<()> {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let black = Rgb([0, 0, 0]);
    let (left, bottom, top, right) = (
        MARGIN as i64,
        (H - MARGIN) as i64,
        MARGIN as i64,
        (W - MARGIN) as i64,
    );
    line(&mut img, (left, bottom), (right, bottom), black);
    line(&mut img, (left, bottom), (left, top), black);

    let n = series
        .iter()
        .map(|(_, p)| p.len())
        .max()
        .unwrap_or(1)
        .max(2);
    for (i, (_, p)) in series.iter().enumerate() {
        let c = Rgb(COLORS[i % COLORS.len()]);
        let peak = p.first().copied().filter(|v| *v > 0.0).unwrap_or(1.0);
        let pts: Vec<(i64, i64)> = p
            .iter()
            .enumerate()
            .map(|(r, v)| {
                let x = left + ((right - left) as f64 * r as f64 / (n - 1) as f64).round() as i64;
                let y =
                    bottom - ((bottom - top) as f64 * (v / peak).clamp(0.0, 1.0)).round() as i64;
                (x, y)
            })
            .collect();
        for w in pts.windows(2) {
            line(&mut img, w[0], w[1], c);
        }
        let sy = MARGIN + 4 + 14 * i as u32;
        for y in sy..sy + 10 {
            for x in W - MARGIN - 10..W - MARGIN {
                img.put_pixel(x, y, c);
            }
        }
    }
    img.save(path)
        .with_context(|| format!("writing {}", path.display()))
}
