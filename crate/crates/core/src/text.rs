//! Bitmap text rendering on RGB rasters using the 8x8 public-domain font.

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};

pub const GLYPH_PX: u32 = 8;

/// Pixel size of `text` drawn at integer `scale`.
pub fn text_size(text: &str, scale: u32) -> (u32, u32) {
    (text.chars().count() as u32 * GLYPH_PX * scale, GLYPH_PX * scale)
}

/// Draws `text` with its top-left corner at `(x, y)`. Pixels falling outside
/// the image are clipped; unknown characters render as blanks.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, scale: u32, color: Rgb<u8>, text: &str) {
    let scale = scale.max(1) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    for (ci, ch) in text.chars().enumerate() {
        let Some(glyph) = BASIC_FONTS.get(ch) else {
            continue;
        };
        let gx = x + ci as i64 * GLYPH_PX as i64 * scale;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits & (1 << col) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let px = gx + col as i64 * scale + dx;
                        let py = y + row as i64 * scale + dy;
                        if px >= 0 && py >= 0 && px < w && py < h {
                            img.put_pixel(px as u32, py as u32, color);
                        }
                    }
                }
            }
        }
    }
}

/// Fills a disc of the given diameter centred at `(cx, cy)`.
pub fn fill_circle(img: &mut RgbImage, cx: f64, cy: f64, diameter: f64, color: Rgb<u8>) {
    let r = diameter / 2.0;
    let x0 = (cx - r).floor().max(0.0) as u32;
    let y0 = (cy - r).floor().max(0.0) as u32;
    let x1 = ((cx + r).ceil() as u32).min(img.width());
    let y1 = ((cy + r).ceil() as u32).min(img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= r * r {
                img.put_pixel(x, y, color);
            }
        }
    }
}
