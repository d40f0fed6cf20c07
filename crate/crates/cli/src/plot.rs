use anyhow::{ensure, Result};
use hypermml::report::EvalReport;
use image::{Rgb, RgbImage};

const CELL: u32 = 48;
const GRID: Rgb<u8> = Rgb([150, 150, 150]);

/// Row-normalized heatmap, white to blue; one cell per (true, predicted) pair.
/// Labels are left to the SVG renderer.
pub fn confusion_png(report: &EvalReport) -> Result<RgbImage> {
    let m = &report.overall.confusion;
    let k = m.len() as u32;
    ensure!(k > 0 && m.iter().all(|r| r.len() == k as usize), "confusion matrix must be square and nonempty");
    let side = k * CELL + 1;
    let mut img = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    for (t, row) in m.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (p, &count) in row.iter().enumerate() {
            let frac = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            let shade = (255.0 * (1.0 - frac)).round() as u8;
            let (x0, y0) = (p as u32 * CELL, t as u32 * CELL);
            for y in y0..y0 + CELL {
                for x in x0..x0 + CELL {
                    let edge = x == x0 || y == y0;
                    img.put_pixel(x, y, if edge { GRID } else { Rgb([shade, shade, 255]) });
                }
            }
        }
    }
    for i in 0..side {
        img.put_pixel(side - 1, i, GRID);
        img.put_pixel(i, side - 1, GRID);
    }
    Ok(img)
}
