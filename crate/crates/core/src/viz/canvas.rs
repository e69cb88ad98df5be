//! A minimal 8-bit grayscale raster with the drawing primitives the figure
//! emitters need. PNG output is deterministic: same pixels, same bytes.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use super::font;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    pub fn new(w: usize, h: usize, background: u8) -> Canvas {
        Canvas {
            w,
            h,
            px: vec![background; w * h],
        }
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn pixels(&self) -> &[u8] {
        &self.px
    }

    /// Set one pixel; coordinates outside the canvas are clipped.
    pub fn set(&mut self, x: isize, y: isize, v: u8) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            self.px[y as usize * self.w + x as usize] = v;
        }
    }

    /// Darkening write: keeps the darker of the existing and new value, so
    /// overlapping shapes compound instead of occluding.
    pub fn darken(&mut self, x: isize, y: isize, v: u8) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let p = &mut self.px[y as usize * self.w + x as usize];
            *p = (*p).min(v);
        }
    }

    pub fn fill_rect(&mut self, x: isize, y: isize, w: usize, h: usize, v: u8) {
        for dy in 0..h as isize {
            for dx in 0..w as isize {
                self.set(x + dx, y + dy, v);
            }
        }
    }

    /// Fill a rectangle with the darkening rule.
    pub fn darken_rect(&mut self, x: isize, y: isize, w: usize, h: usize, v: u8) {
        for dy in 0..h as isize {
            for dx in 0..w as isize {
                self.darken(x + dx, y + dy, v);
            }
        }
    }

    /// One-pixel rectangle outline.
    pub fn frame(&mut self, x: isize, y: isize, w: usize, h: usize, v: u8) {
        if w == 0 || h == 0 {
            return;
        }
        let (w, h) = (w as isize, h as isize);
        for dx in 0..w {
            self.set(x + dx, y, v);
            self.set(x + dx, y + h - 1, v);
        }
        for dy in 0..h {
            self.set(x, y + dy, v);
            self.set(x + w - 1, y + dy, v);
        }
    }

    /// Bresenham line segment.
    pub fn line(&mut self, x0: isize, y0: isize, x1: isize, y1: isize, v: u8) {
        let (mut x, mut y) = (x0, y0);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set(x, y, v);
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

    pub fn text(&mut self, x: isize, y: isize, text: &str, scale: usize, ink: u8) {
        font::draw_text(&mut self.px, self.w, self.h, x, y, text, scale, ink);
    }

    /// Encode as an 8-bit grayscale PNG.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let encoder = PngEncoder::new(BufWriter::new(file));
        encoder
            .write_image(
                &self.px,
                self.w as u32,
                self.h as u32,
                ExtendedColorType::L8,
            )
            .map_err(|e| Error::format(path, format!("png encoding failed: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_clip_and_draw() {
        let mut c = Canvas::new(10, 10, 255);
        c.set(-1, -1, 0);
        c.set(100, 100, 0);
        c.fill_rect(2, 2, 3, 3, 0);
        assert_eq!(c.pixels()[2 * 10 + 2], 0);
        c.line(0, 0, 9, 9, 7);
        assert_eq!(c.pixels()[5 * 10 + 5], 7);
        c.darken(2, 2, 200);
        assert_eq!(c.pixels()[2 * 10 + 2], 7);
        c.darken(2, 2, 3);
        assert_eq!(c.pixels()[2 * 10 + 2], 3);
    }

    #[test]
    fn png_output_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Canvas::new(32, 16, 255);
        c.line(0, 0, 31, 15, 0);
        c.text(2, 2, "OK 1.5", 1, 0);
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        c.save(&a).unwrap();
        c.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn png_roundtrips_through_a_decoder() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Canvas::new(8, 4, 10);
        c.set(3, 2, 200);
        let p = dir.path().join("c.png");
        c.save(&p).unwrap();
        let img = image::open(&p).unwrap().to_luma8();
        assert_eq!(img.width(), 8);
        assert_eq!(img.height(), 4);
        assert_eq!(img.get_pixel(3, 2).0[0], 200);
        assert_eq!(img.get_pixel(0, 0).0[0], 10);
    }
}
