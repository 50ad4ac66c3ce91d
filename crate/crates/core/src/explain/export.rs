use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};

use super::Heatmap;
use crate::data::image::GrayImage;
use crate::error::{Error, Result};

/// Weight of the heat colour in exported overlays.
pub const OVERLAY_ALPHA: f32 = 0.5;

/// Blue-green-red ramp for a value in `[0, 1]`.
pub fn heat_color(v: f32) -> [f32; 3] {
    let ramp = |center: f32| (1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Raw grid as CSV: header `row,c0,c1,...`, one line per grid row.
pub fn write_grid_csv(heatmap: &Heatmap, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["row".to_string()];
    header.extend((0..heatmap.grid_width).map(|c| format!("c{c}")));
    w.write_record(&header)?;
    for r in 0..heatmap.grid_height {
        let mut rec = vec![r.to_string()];
        rec.extend(
            heatmap.grid[r * heatmap.grid_width..(r + 1) * heatmap.grid_width]
                .iter()
                .map(|v| format!("{v:.9e}")),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<grid>", e))?;
    Ok(())
}

impl Heatmap {
    pub fn save_grid_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_grid_csv(self, std::io::BufWriter::new(f))
    }

    /// Rendering as an 8-bit grayscale image.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::new(self.size, self.size, self.rendering.iter().map(|v| v * 255.0).collect())
            .expect("rendering is size x size")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image().save(path)
    }

    /// Colour composite of `base` (resized to the rendering) and the heat ramp.
    pub fn overlay(&self, base: &GrayImage) -> RgbImage {
        let base = if base.width == self.size && base.height == self.size {
            base.clone()
        } else {
            base.resize(self.size, self.size)
        };
        let n = self.size as u32;
        RgbImage::from_fn(n, n, |x, y| {
            let g = base.get(x as usize, y as usize) / 255.0;
            let heat = heat_color(self.rendering[y as usize * self.size + x as usize]);
            let px = heat.map(|h| ((1.0 - OVERLAY_ALPHA) * g + OVERLAY_ALPHA * h).clamp(0.0, 1.0) * 255.0);
            Rgb([px[0].round() as u8, px[1].round() as u8, px[2].round() as u8])
        })
    }

    pub fn save_overlay(&self, base: &GrayImage, path: &Path) -> Result<()> {
        self.overlay(base).save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> Heatmap {
        let grid = vec![0.0, 1.0, 2.0, 4.0];
        Heatmap {
            label: 3,
            grid_height: 2,
            grid_width: 2,
            rendering: super::super::normalize(&super::super::upsample_bilinear(&grid, 2, 2, 8)),
            grid,
            size: 8,
            source: None,
        }
    }

    #[test]
    fn grid_csv_layout() {
        let mut buf = Vec::new();
        write_grid_csv(&map(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "row,c0,c1");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,2.0"));
    }

    #[test]
    fn overlay_blends_half_and_half() {
        let hm = map();
        let base = GrayImage::filled(8, 8, 0.0);
        let img = hm.overlay(&base);
        // Brightest corner: heat 1.0 maps to dark red.
        assert_eq!(img.get_pixel(7, 7).0, [64, 0, 0]);
        let dir = tempfile::tempdir().unwrap();
        hm.save_overlay(&base, &dir.path().join("o.png")).unwrap();
        hm.save_png(&dir.path().join("h.png")).unwrap();
        hm.save_grid_csv(&dir.path().join("g.csv")).unwrap();
    }
}
