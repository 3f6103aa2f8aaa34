//! PNG renderings of predictions and frequency-channel weights.

use image::{GrayImage, Luma, Rgb, RgbImage, Rgba, RgbaImage};
use tbnet_core::afs::ChannelWeights;
use tbnet_core::ImageTensor;

/// 8-bit probability map, `round(255·p)`.
pub fn probability_png(prob: &ImageTensor) -> GrayImage {
    GrayImage::from_fn(prob.width() as u32, prob.height() as u32, |x, y| {
        Luma([(prob.get(0, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

/// Red layer whose alpha is `round(255·p)` above the threshold and 0 elsewhere.
pub fn overlay_rgba(prob: &ImageTensor, threshold: f64) -> RgbaImage {
    RgbaImage::from_fn(prob.width() as u32, prob.height() as u32, |x, y| {
        let p = prob.get(0, y as usize, x as usize).clamp(0.0, 1.0);
        let a = if p > threshold { (p * 255.0).round() as u8 } else { 0 };
        Rgba([255, 0, 0, a])
    })
}

/// The overlay composited onto the input image.
pub fn composite(image: &ImageTensor, prob: &ImageTensor, threshold: f64) -> RgbImage {
    let layer = overlay_rgba(prob, threshold);
    RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let a = layer.get_pixel(x, y)[3] as f64 / 255.0 * 0.6;
        let px = |c: usize| image.get(c, y as usize, x as usize).clamp(0.0, 255.0);
        Rgb([
            (px(0) * (1.0 - a) + 255.0 * a).round() as u8,
            (px(1) * (1.0 - a)).round() as u8,
            (px(2) * (1.0 - a)).round() as u8,
        ])
    })
}

pub const COMPONENTS: [&str; 3] = ["Y", "Cb", "Cr"];

/// Geometry of the channel-weight grid: one `P×P` panel per colour component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeatmapLayout {
    pub block_size: usize,
    pub cell: usize,
    pub margin: usize,
    pub title: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeatmapCell {
    pub component: usize,
    /// Frequency index `u·P + v`, printed in the cell.
    pub index: usize,
    pub x: usize,
    pub y: usize,
}

impl HeatmapLayout {
    pub fn new(block_size: usize) -> Self {
        Self { block_size, cell: 26, margin: 12, title: 22 }
    }

    fn panel_side(&self) -> usize {
        self.block_size * self.cell
    }

    pub fn width(&self) -> usize {
        3 * self.panel_side() + 4 * self.margin
    }

    pub fn height(&self) -> usize {
        self.panel_side() + self.title + 2 * self.margin
    }

    /// Cells in component-major, index-ascending order.
    pub fn cells(&self) -> Vec<HeatmapCell> {
        let p = self.block_size;
        let mut out = Vec::with_capacity(3 * p * p);
        for component in 0..3 {
            let x0 = self.margin + component * (self.panel_side() + self.margin);
            let y0 = self.margin + self.title;
            for index in 0..p * p {
                out.push(HeatmapCell { component, index, x: x0 + (index % p) * self.cell, y: y0 + (index / p) * self.cell });
            }
        }
        out
    }
}

/// White for the smallest weight, deep blue for the largest.
pub fn weight_color(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0)])
}

// 3×5 bitmap glyphs, one row per 3-bit mask.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'Y' => [5, 5, 2, 2, 2],
        'C' => [7, 4, 4, 4, 7],
        'b' => [4, 4, 7, 5, 7],
        'r' => [0, 0, 7, 4, 4],
        _ => [0; 5],
    }
}

fn draw_text(img: &mut RgbImage, text: &str, x: usize, y: usize, scale: usize, color: Rgb<u8>) {
    for (i, c) in text.chars().enumerate() {
        let g = glyph(c);
        let gx = x + i * 4 * scale;
        for (row, bits) in g.iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let (px, py) = ((gx + col * scale + dx) as u32, (y + row * scale + dy) as u32);
                        if px < img.width() && py < img.height() {
                            img.put_pixel(px, py, color);
                        }
                    }
                }
            }
        }
    }
}

/// Y, Cb and Cr panels of `P×P` cells, shaded by weight on a shared scale and
/// labelled with their index `0 … P²−1`.
pub fn render_heatmap(weights: &ChannelWeights, block_size: usize) -> RgbImage {
    let layout = HeatmapLayout::new(block_size);
    let mut img = RgbImage::from_pixel(layout.width() as u32, layout.height() as u32, Rgb([255, 255, 255]));
    let (lo, hi) = weights.alpha.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    for cell in layout.cells() {
        let w = weights.component(cell.component, block_size)[cell.index];
        let t = (w - lo) / span;
        let color = weight_color(t);
        for dy in 1..layout.cell {
            for dx in 1..layout.cell {
                img.put_pixel((cell.x + dx) as u32, (cell.y + dy) as u32, color);
            }
        }
        let ink = if t > 0.5 { Rgb([255, 255, 255]) } else { Rgb([0, 0, 0]) };
        draw_text(&mut img, &cell.index.to_string(), cell.x + 3, cell.y + 3, 2, ink);
    }
    for (c, name) in COMPONENTS.iter().enumerate() {
        let x = layout.margin + c * (layout.block_size * layout.cell + layout.margin);
        draw_text(&mut img, name, x, layout.margin / 2, 3, Rgb([0, 0, 0]));
    }
    img
}
