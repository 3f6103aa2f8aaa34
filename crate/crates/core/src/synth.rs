//! Synthetic tampering data.
//!
//! Copy-move and splice forgeries are made from authentic source images, either
//! user-supplied photos or procedural scenes rendered here. Procedural scenes
//! carry a per-"camera" sensor noise level, so a spliced region differs from its
//! host in noise statistics, and copy-moved regions are resampled, which
//! smooths the noise they carry.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use tbnet_tensor::ops::resize_plane;

use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageTensor, ValueRange};
use crate::morphology::make_boundary_gt;

/// Structuring-element size used for boundary labels.
pub const BOUNDARY_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Manipulation {
    CopyMove,
    Splice,
    Authentic,
}

impl Manipulation {
    pub fn name(self) -> &'static str {
        match self {
            Self::CopyMove => "copy-move",
            Self::Splice => "splice",
            Self::Authentic => "authentic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "copy-move" => Some(Self::CopyMove),
            "splice" => Some(Self::Splice),
            "authentic" => Some(Self::Authentic),
            _ => None,
        }
    }
}

impl fmt::Display for Manipulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Similarity transform applied to the copied region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PasteTransform {
    pub scale: f64,
    pub rotation_deg: f64,
    pub flip: bool,
}

impl PasteTransform {
    pub const IDENTITY: Self = Self { scale: 1.0, rotation_deg: 0.0, flip: false };

    /// Maps an offset from the source centre to an offset from the target centre.
    pub fn forward(&self, dy: f64, dx: f64) -> (f64, f64) {
        let dx = if self.flip { -dx } else { dx };
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        (self.scale * (s * dx + c * dy), self.scale * (c * dx - s * dy))
    }

    pub fn inverse(&self, dy: f64, dx: f64) -> (f64, f64) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (dy, dx) = (dy / self.scale, dx / self.scale);
        let (ry, rx) = (c * dy - s * dx, s * dy + c * dx);
        (ry, if self.flip { -rx } else { rx })
    }
}

/// Where a forged region came from and where it went.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub host: String,
    pub donor: Option<String>,
    /// Polygon vertices `(y, x)` in the source (host for copy-move, donor for splice).
    pub source_polygon: Vec<(f64, f64)>,
    pub source_center: (f64, f64),
    pub target_center: (f64, f64),
    pub transform: PasteTransform,
    pub gain: f64,
    pub seam_blur: usize,
    /// Top-left corner of the emitted block inside the forged image.
    pub crop_origin: (usize, usize),
    pub flipped: (bool, bool),
}

#[derive(Clone, Debug)]
pub struct SamplePair {
    pub image: ImageTensor,
    pub region_mask: BinaryMask,
    pub boundary_mask: BinaryMask,
    pub manipulation: Manipulation,
    pub provenance: Option<Provenance>,
}

impl SamplePair {
    pub fn new(image: ImageTensor, region_mask: BinaryMask, manipulation: Manipulation, provenance: Option<Provenance>) -> Self {
        let boundary_mask = make_boundary_gt(&region_mask, BOUNDARY_KERNEL);
        Self { image, region_mask, boundary_mask, manipulation, provenance }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgeryOptions {
    /// Bounds on the pasted area as a fraction of the image.
    pub min_area: f64,
    pub max_area: f64,
    pub max_retries: usize,
    /// Copy-move: allowed scale range; values inside `(1 - min_scale_change, 1 + min_scale_change)` are skipped.
    pub scale_range: (f64, f64),
    pub min_scale_change: f64,
    pub max_rotation_deg: f64,
    pub allow_flip: bool,
    /// Minimum centre displacement between source and target, in pixels.
    pub min_offset: f64,
    /// Splice: feathering radius at the inner edge of the pasted region (0 = hard seam).
    pub seam_blur: usize,
    /// Splice: multiplicative brightness change range of the pasted region.
    pub gain_range: (f64, f64),
    pub polygon_vertices: (usize, usize),
    /// Probability of an axis-aligned rectangle instead of a polygon.
    pub rectangle_prob: f64,
}

impl Default for ForgeryOptions {
    fn default() -> Self {
        Self {
            min_area: 0.03,
            max_area: 0.25,
            max_retries: 200,
            scale_range: (0.7, 1.4),
            min_scale_change: 0.1,
            max_rotation_deg: 30.0,
            allow_flip: true,
            min_offset: 8.0,
            seam_blur: 1,
            gain_range: (0.85, 1.15),
            polygon_vertices: (5, 10),
            rectangle_prob: 0.25,
        }
    }
}

impl ForgeryOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.01..=0.6).contains(&self.min_area) || !(0.01..=0.6).contains(&self.max_area) || self.min_area > self.max_area {
            return Err(Error::Config(format!(
                "area bounds [{}, {}] must lie within [0.01, 0.6]",
                self.min_area, self.max_area
            )));
        }
        if self.scale_range.0 <= 0.0 || self.scale_range.0 > self.scale_range.1 {
            return Err(Error::Config("invalid scale range".into()));
        }
        if self.polygon_vertices.0 < 3 || self.polygon_vertices.0 > self.polygon_vertices.1 {
            return Err(Error::Config("polygons need at least three vertices".into()));
        }
        Ok(())
    }
}

/// Even-odd point-in-polygon test; vertices are `(y, x)`.
pub fn point_in_polygon(poly: &[(f64, f64)], y: f64, x: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (yi, xi) = poly[i];
        let (yj, xj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Pixels whose centres fall inside the polygon.
pub fn rasterize_polygon(poly: &[(f64, f64)], height: usize, width: usize) -> BinaryMask {
    BinaryMask::from_fn(height, width, |y, x| point_in_polygon(poly, y as f64, x as f64))
}

/// Bilinear sample at continuous pixel coordinates, clamped to the border.
pub fn sample_bilinear(img: &ImageTensor, c: usize, y: f64, x: f64) -> f64 {
    let (h, w) = (img.height(), img.width());
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = img.get(c, y0, x0) * (1.0 - fx) + img.get(c, y0, x1) * fx;
    let bot = img.get(c, y1, x0) * (1.0 - fx) + img.get(c, y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

fn quantize(v: f64) -> f64 {
    v.round().clamp(0.0, 255.0)
}

/// Star-shaped random polygon around the origin with mean radius 1.
fn random_shape<R: Rng + ?Sized>(rng: &mut R, opts: &ForgeryOptions) -> Vec<(f64, f64)> {
    if rng.random::<f64>() < opts.rectangle_prob {
        let aspect: f64 = rng.random_range(0.5..2.0);
        let (hy, hx) = (aspect.sqrt(), 1.0 / aspect.sqrt());
        return vec![(-hy, -hx), (-hy, hx), (hy, hx), (hy, -hx)];
    }
    let n = rng.random_range(opts.polygon_vertices.0..=opts.polygon_vertices.1);
    let mut angles: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random_range(0.1..0.9)) / n as f64).collect();
    angles.sort_by(|a, b| a.total_cmp(b));
    angles
        .into_iter()
        .map(|a| {
            let r = rng.random_range(0.55..1.2);
            let t = a * std::f64::consts::TAU;
            (r * t.sin(), r * t.cos())
        })
        .collect()
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (y0, x0) = poly[i];
            let (y1, x1) = poly[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

fn place(shape: &[(f64, f64)], radius: f64, center: (f64, f64)) -> Vec<(f64, f64)> {
    shape.iter().map(|&(y, x)| (center.0 + radius * y, center.1 + radius * x)).collect()
}

fn fits(poly: &[(f64, f64)], height: usize, width: usize) -> bool {
    poly.iter().all(|&(y, x)| y >= 1.0 && x >= 1.0 && y <= (height - 2) as f64 && x <= (width - 2) as f64)
}

fn sample_transform<R: Rng + ?Sized>(rng: &mut R, opts: &ForgeryOptions) -> PasteTransform {
    let scale = loop {
        let s = rng.random_range(opts.scale_range.0..=opts.scale_range.1);
        if (s - 1.0).abs() >= opts.min_scale_change || opts.scale_range.0 == opts.scale_range.1 {
            break s;
        }
    };
    let rotation_deg = if opts.max_rotation_deg > 0.0 { rng.random_range(-opts.max_rotation_deg..=opts.max_rotation_deg) } else { 0.0 };
    let flip = opts.allow_flip && rng.random_bool(0.5);
    PasteTransform { scale, rotation_deg, flip }
}

fn check_source(img: &ImageTensor, what: &str) -> Result<()> {
    img.require_channels(3)?;
    if img.height() < 32 || img.width() < 32 {
        return Err(Error::Generation(format!("{what} image is too small ({}×{})", img.height(), img.width())));
    }
    Ok(())
}

struct Placement {
    source_polygon: Vec<(f64, f64)>,
    source_center: (f64, f64),
    target_center: (f64, f64),
    mask: BinaryMask,
}

/// Picks a source polygon and a target position whose transformed footprint
/// lies inside the host with an admissible area.
#[allow(clippy::too_many_arguments)]
fn find_placement<R: Rng + ?Sized>(
    rng: &mut R,
    opts: &ForgeryOptions,
    source_dims: (usize, usize),
    host_dims: (usize, usize),
    transform: &PasteTransform,
    min_offset: f64,
) -> Result<Placement> {
    let (sh, sw) = source_dims;
    let (hh, hw) = host_dims;
    let host_area = (hh * hw) as f64;
    for _ in 0..opts.max_retries {
        let shape = random_shape(rng, opts);
        let target_area = rng.random_range(opts.min_area..=opts.max_area) * host_area;
        let radius = (target_area / polygon_area(&shape)).sqrt() / transform.scale;
        let source_center = (rng.random_range(0.0..sh as f64), rng.random_range(0.0..sw as f64));
        let source_polygon = place(&shape, radius, source_center);
        if !fits(&source_polygon, sh, sw) {
            continue;
        }
        let target_center = (rng.random_range(0.0..hh as f64), rng.random_range(0.0..hw as f64));
        let offset = ((target_center.0 - source_center.0).powi(2) + (target_center.1 - source_center.1).powi(2)).sqrt();
        if offset < min_offset {
            continue;
        }
        let target_polygon: Vec<(f64, f64)> = source_polygon
            .iter()
            .map(|&(y, x)| {
                let (dy, dx) = transform.forward(y - source_center.0, x - source_center.1);
                (target_center.0 + dy, target_center.1 + dx)
            })
            .collect();
        if !fits(&target_polygon, hh, hw) {
            continue;
        }
        let mask = rasterize_polygon(&target_polygon, hh, hw);
        let frac = mask.area_fraction();
        if frac < opts.min_area || frac > opts.max_area {
            continue;
        }
        return Ok(Placement { source_polygon, source_center, target_center, mask });
    }
    Err(Error::Generation(format!("no valid region placement after {} attempts", opts.max_retries)))
}

/// Copies a region of `src` to another location of the same image through a
/// resampling transform. Pasted pixels are bilinear samples of `src`.
pub fn generate_copy_move(src: &ImageTensor, seed: u64, opts: &ForgeryOptions) -> Result<SamplePair> {
    opts.validate()?;
    check_source(src, "source")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transform = sample_transform(&mut rng, opts);
    let dims = (src.height(), src.width());
    let p = find_placement(&mut rng, opts, dims, dims, &transform, opts.min_offset.max(1.0))?;
    let mut out = src.clone();
    for y in 0..dims.0 {
        for x in 0..dims.1 {
            if !p.mask.get(y, x) {
                continue;
            }
            let (dy, dx) = transform.inverse(y as f64 - p.target_center.0, x as f64 - p.target_center.1);
            let (sy, sx) = (p.source_center.0 + dy, p.source_center.1 + dx);
            for c in 0..3 {
                out.set(c, y, x, quantize(sample_bilinear(src, c, sy, sx)));
            }
        }
    }
    let prov = Provenance {
        seed,
        host: String::new(),
        donor: None,
        source_polygon: p.source_polygon,
        source_center: p.source_center,
        target_center: p.target_center,
        transform,
        gain: 1.0,
        seam_blur: 0,
        crop_origin: (0, 0),
        flipped: (false, false),
    };
    Ok(SamplePair::new(out, p.mask, Manipulation::CopyMove, Some(prov)))
}

/// Box-blurred mask restricted to its own support: 1 deep inside, falling
/// towards the inner edge, 0 outside.
fn feather(mask: &BinaryMask, radius: usize) -> Vec<f64> {
    let (h, w) = (mask.height(), mask.width());
    let m = mask.to_f64();
    if radius == 0 {
        return m;
    }
    let r = radius as isize;
    let blur = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for d in -r..=r {
                    let (yy, xx) = if horizontal { (y as isize, x as isize + d) } else { (y as isize + d, x as isize) };
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        acc += src[yy as usize * w + xx as usize];
                    }
                }
                dst[y * w + x] = acc / (2 * r + 1) as f64;
            }
        }
        dst
    };
    let b = blur(&blur(&m, true), false);
    b.iter().zip(&m).map(|(&b, &m)| if m > 0.0 { b } else { 0.0 }).collect()
}

/// Pastes a region of `donor` into `src`, optionally with a brightness change
/// and a feathered inner seam. Pixels outside the mask are untouched.
pub fn generate_splice(src: &ImageTensor, donor: &ImageTensor, seed: u64, opts: &ForgeryOptions) -> Result<SamplePair> {
    opts.validate()?;
    check_source(src, "host")?;
    check_source(donor, "donor")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transform = PasteTransform::IDENTITY;
    let p = find_placement(&mut rng, opts, (donor.height(), donor.width()), (src.height(), src.width()), &transform, 0.0)?;
    let gain = rng.random_range(opts.gain_range.0..=opts.gain_range.1);
    let alpha = feather(&p.mask, opts.seam_blur);
    let mut out = src.clone();
    let (h, w) = (src.height(), src.width());
    for y in 0..h {
        for x in 0..w {
            let a = alpha[y * w + x];
            if a <= 0.0 {
                continue;
            }
            let (sy, sx) = (p.source_center.0 + y as f64 - p.target_center.0, p.source_center.1 + x as f64 - p.target_center.1);
            for c in 0..3 {
                let d = sample_bilinear(donor, c, sy, sx) * gain;
                out.set(c, y, x, quantize(a * d + (1.0 - a) * src.get(c, y, x)));
            }
        }
    }
    let prov = Provenance {
        seed,
        host: String::new(),
        donor: Some(String::new()),
        source_polygon: p.source_polygon,
        source_center: p.source_center,
        target_center: p.target_center,
        transform,
        gain,
        seam_blur: opts.seam_blur,
        crop_origin: (0, 0),
        flipped: (false, false),
    };
    Ok(SamplePair::new(out, p.mask, Manipulation::Splice, Some(prov)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockOptions {
    pub size: usize,
    pub stride: usize,
    /// Random per-block shift, at most `size - stride` so no gaps open up.
    pub jitter: bool,
    pub flips: bool,
}

impl Default for BlockOptions {
    fn default() -> Self {
        Self { size: 256, stride: 128, jitter: true, flips: true }
    }
}

/// One window cut from a larger image.
#[derive(Clone, Debug)]
pub struct Block {
    pub image: ImageTensor,
    pub region_mask: BinaryMask,
    pub boundary_mask: BinaryMask,
    pub origin: (usize, usize),
    /// `(horizontal, vertical)` flips applied after cropping.
    pub flipped: (bool, bool),
    /// Set when the source was smaller than the window and was resized instead.
    pub resized: bool,
}

fn offsets<R: Rng + ?Sized>(len: usize, size: usize, stride: usize, jitter: usize, rng: &mut R) -> Vec<usize> {
    let last = len - size;
    let mut out = Vec::new();
    let mut base = 0;
    while base < last {
        // the first window stays at the border so the edge is covered
        let j = if jitter > 0 && base > 0 { rng.random_range(0..=jitter) } else { 0 };
        out.push((base + j).min(last));
        base += stride;
    }
    out.push(last);
    out.dedup();
    out
}

/// Overlapping `size²` windows with randomised offsets; each window is flipped
/// jointly with its mask. Images smaller than the window are resized to it.
pub fn extract_blocks<R: Rng + ?Sized>(
    img: &ImageTensor,
    mask: &BinaryMask,
    opts: &BlockOptions,
    rng: &mut R,
) -> Result<Vec<Block>> {
    if img.height() != mask.height() || img.width() != mask.width() {
        return Err(Error::Shape("image and mask sizes differ".into()));
    }
    if opts.size == 0 || opts.stride == 0 {
        return Err(Error::Config("block size and stride must be positive".into()));
    }
    let flip = |rng: &mut R, image: ImageTensor, mask: BinaryMask| {
        let (fh, fv) = if opts.flips { (rng.random_bool(0.5), rng.random_bool(0.5)) } else { (false, false) };
        let (mut image, mut mask) = (image, mask);
        if fh {
            image = image.flip_horizontal();
            mask = mask.flip_horizontal();
        }
        if fv {
            image = image.flip_vertical();
            mask = mask.flip_vertical();
        }
        (image, mask, (fh, fv))
    };
    if img.height() < opts.size || img.width() < opts.size {
        let (image, mask, flipped) = flip(rng, img.resize(opts.size, opts.size), mask.resize_nearest(opts.size, opts.size));
        let boundary_mask = make_boundary_gt(&mask, BOUNDARY_KERNEL);
        return Ok(vec![Block { image, region_mask: mask, boundary_mask, origin: (0, 0), flipped, resized: true }]);
    }
    let jitter = if opts.jitter { opts.size.saturating_sub(opts.stride).min(opts.stride / 2) } else { 0 };
    let ys = offsets(img.height(), opts.size, opts.stride, jitter, rng);
    let xs = offsets(img.width(), opts.size, opts.stride, jitter, rng);
    let mut blocks = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            let (image, m, flipped) = flip(rng, img.crop(y, x, opts.size, opts.size), mask.crop(y, x, opts.size, opts.size));
            let boundary_mask = make_boundary_gt(&m, BOUNDARY_KERNEL);
            blocks.push(Block { image, region_mask: m, boundary_mask, origin: (y, x), flipped, resized: false });
        }
    }
    Ok(blocks)
}

/// Per-"camera" rendering profile of procedural scenes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraProfile {
    pub id: usize,
    /// Standard deviation of additive Gaussian sensor noise, in 8-bit levels.
    pub noise_sigma: f64,
    /// Per-channel colour response.
    pub tint: [f64; 3],
}

/// Fixed camera set; noise levels are spread so that any two cameras used in
/// one splice differ clearly.
pub const CAMERAS: [CameraProfile; 6] = [
    CameraProfile { id: 0, noise_sigma: 0.0, tint: [1.0, 1.0, 1.0] },
    CameraProfile { id: 1, noise_sigma: 1.5, tint: [1.04, 1.0, 0.95] },
    CameraProfile { id: 2, noise_sigma: 3.0, tint: [0.96, 1.0, 1.05] },
    CameraProfile { id: 3, noise_sigma: 5.0, tint: [1.0, 1.03, 0.97] },
    CameraProfile { id: 4, noise_sigma: 7.0, tint: [1.02, 0.97, 1.0] },
    CameraProfile { id: 5, noise_sigma: 9.0, tint: [0.98, 1.02, 1.03] },
];

/// Minimum noise-level gap between host and donor cameras in procedural splices.
pub const MIN_SPLICE_SIGMA_GAP: f64 = 3.0;

/// Smooth random field in `[0, 1]` built from bilinearly upsampled lattices.
fn value_noise<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize, octaves: &[(usize, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; height * width];
    let mut norm = 0.0;
    let mut plane = vec![0.0; height * width];
    for &(cells, amp) in octaves {
        let lattice: Vec<f64> = (0..cells * cells).map(|_| rng.random::<f64>()).collect();
        resize_plane(&lattice, cells, cells, height, width, &mut plane);
        for (o, p) in out.iter_mut().zip(&plane) {
            *o += amp * p;
        }
        norm += amp;
    }
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

/// Renders an authentic procedural scene: a gradient background modulated by
/// multi-scale texture, a handful of textured shapes, the camera's colour
/// response and its sensor noise. Values are quantised to integers.
pub fn procedural_image(seed: u64, height: usize, width: usize, camera: &CameraProfile) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = ImageTensor::zeros(3, height, width, ValueRange::Pixel255);
    let color = |rng: &mut ChaCha8Rng| [rng.random_range(30.0..225.0), rng.random_range(30.0..225.0), rng.random_range(30.0..225.0)];
    let (c0, c1) = (color(&mut rng), color(&mut rng));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let texture = value_noise(&mut rng, height, width, &[(4, 1.0), (9, 0.6), (23, 0.35), (57, 0.2)]);
    let contrast = rng.random_range(40.0..90.0);
    for y in 0..height {
        for x in 0..width {
            let t = ((y as f64 / height as f64 - 0.5) * angle.sin() + (x as f64 / width as f64 - 0.5) * angle.cos() + 0.5).clamp(0.0, 1.0);
            let tex = (texture[y * width + x] - 0.5) * contrast;
            for c in 0..3 {
                img.set(c, y, x, c0[c] * (1.0 - t) + c1[c] * t + tex);
            }
        }
    }
    let shapes = rng.random_range(3..9);
    for _ in 0..shapes {
        let col = color(&mut rng);
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let ry = rng.random_range(0.05..0.3) * height as f64;
        let rx = rng.random_range(0.05..0.3) * width as f64;
        let ellipse = rng.random_bool(0.5);
        let tex = value_noise(&mut rng, height, width, &[(13, 1.0), (37, 0.5)]);
        let amp = rng.random_range(10.0..50.0);
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if ellipse { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    let t = (tex[y * width + x] - 0.5) * amp;
                    for c in 0..3 {
                        img.set(c, y, x, col[c] + t);
                    }
                }
            }
        }
    }
    let noise = Normal::new(0.0, camera.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    for c in 0..3 {
        for v in img.plane_mut(c) {
            let n = if camera.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            *v = quantize(*v * camera.tint[c] + n);
        }
    }
    img
}

/// Where authentic images come from.
#[derive(Clone, Debug)]
pub enum SourceImages {
    Procedural,
    /// User photos; each is randomly cropped (or resized) to the source size.
    Photos(Vec<PathBuf>),
}

impl SourceImages {
    /// All PNG/JPEG files of a directory, sorted.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!("no PNG/JPEG images in {}", dir.display())));
        }
        Ok(Self::Photos(files))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusOptions {
    pub seed: u64,
    /// Side of the emitted blocks.
    pub block_size: usize,
    /// Side of the authentic scene the forgery is made in; a block containing
    /// the whole pasted region is cut from it. Must be at least `block_size`.
    pub source_size: usize,
    pub train_count: usize,
    pub test_count: usize,
    /// Fraction of forged samples that are copy-move (the rest are splices).
    pub copy_move_fraction: f64,
    /// Fraction of samples left authentic.
    pub authentic_fraction: f64,
    pub flips: bool,
    pub forgery: ForgeryOptions,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            block_size: 256,
            source_size: 256,
            train_count: 200,
            test_count: 50,
            copy_move_fraction: 0.5,
            authentic_fraction: 0.0,
            flips: true,
            forgery: ForgeryOptions::default(),
        }
    }
}

impl CorpusOptions {
    pub fn validate(&self) -> Result<()> {
        self.forgery.validate()?;
        if self.block_size < 32 || self.source_size < self.block_size {
            return Err(Error::Config(format!(
                "need 32 <= block_size ({}) <= source_size ({})",
                self.block_size, self.source_size
            )));
        }
        if !(0.0..=1.0).contains(&self.copy_move_fraction) || !(0.0..=1.0).contains(&self.authentic_fraction) {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Deterministic 64-bit mix used to derive per-sample seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Manipulation kinds for `count` samples in a balanced, shuffled order.
pub fn manipulation_schedule(count: usize, opts: &CorpusOptions, seed: u64) -> Vec<Manipulation> {
    let authentic = (count as f64 * opts.authentic_fraction).round() as usize;
    let forged = count - authentic;
    let copy_move = (forged as f64 * opts.copy_move_fraction).round() as usize;
    let mut kinds = Vec::with_capacity(count);
    kinds.extend(std::iter::repeat_n(Manipulation::CopyMove, copy_move));
    kinds.extend(std::iter::repeat_n(Manipulation::Splice, forged - copy_move));
    kinds.extend(std::iter::repeat_n(Manipulation::Authentic, authentic));
    kinds.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    kinds
}

fn load_photo<R: Rng + ?Sized>(path: &Path, size: usize, rng: &mut R) -> Result<ImageTensor> {
    let img = ImageTensor::from_rgb8(&image::open(path)?.to_rgb8());
    if img.height() < size || img.width() < size {
        return Ok(img.resize(size, size));
    }
    let y = rng.random_range(0..=img.height() - size);
    let x = rng.random_range(0..=img.width() - size);
    Ok(img.crop(y, x, size, size))
}

/// Draws an authentic source of the given size and returns it with a label.
fn draw_source<R: Rng + ?Sized>(
    sources: &SourceImages,
    size: usize,
    rng: &mut R,
    avoid_sigma: Option<f64>,
) -> Result<(ImageTensor, String, Option<f64>)> {
    match sources {
        SourceImages::Procedural => {
            let candidates: Vec<&CameraProfile> = CAMERAS
                .iter()
                .filter(|c| avoid_sigma.is_none_or(|s| (c.noise_sigma - s).abs() >= MIN_SPLICE_SIGMA_GAP))
                .collect();
            let cam = candidates[rng.random_range(0..candidates.len())];
            let seed = rng.random::<u64>();
            Ok((procedural_image(seed, size, size, cam), format!("procedural:camera{}:{seed}", cam.id), Some(cam.noise_sigma)))
        }
        SourceImages::Photos(files) => {
            let path = &files[rng.random_range(0..files.len())];
            Ok((load_photo(path, size, rng)?, path.display().to_string(), None))
        }
    }
}

/// Cuts a `block²` window that contains the whole mask when possible.
fn crop_around<R: Rng + ?Sized>(img: &ImageTensor, mask: &BinaryMask, block: usize, rng: &mut R) -> (usize, usize) {
    let (h, w) = (img.height(), img.width());
    if h == block && w == block {
        return (0, 0);
    }
    let (mut y0, mut y1, mut x0, mut x1) = (h, 0, w, 0);
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                y0 = y0.min(y);
                y1 = y1.max(y);
                x0 = x0.min(x);
                x1 = x1.max(x);
            }
        }
    }
    let range = |lo: usize, hi: usize, len: usize| {
        if lo > hi {
            return (0, len - block);
        }
        let min = (hi + 1).saturating_sub(block);
        let max = lo.min(len - block);
        if min <= max {
            (min, max)
        } else {
            (max, max)
        }
    };
    let (ya, yb) = range(y0, y1, h);
    let (xa, xb) = range(x0, x1, w);
    (rng.random_range(ya..=yb), rng.random_range(xa..=xb))
}

/// Generates sample `index` of a corpus; a pure function of its arguments.
pub fn generate_sample(sources: &SourceImages, opts: &CorpusOptions, kind: Manipulation, seed: u64) -> Result<SamplePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = opts.source_size;
    // Region placement can fail on unlucky draws; a fresh forgery seed retries it.
    let mut last_err = None;
    for attempt in 0..8u64 {
        let (host, host_id, host_sigma) = draw_source(sources, size, &mut rng, None)?;
        let forged = match kind {
            Manipulation::Authentic => Ok(SamplePair::new(host.clone(), BinaryMask::zeros(size, size), kind, None)),
            Manipulation::CopyMove => generate_copy_move(&host, mix_seed(seed, attempt), &opts.forgery),
            Manipulation::Splice => {
                let (donor, donor_id, _) = draw_source(sources, size, &mut rng, host_sigma)?;
                generate_splice(&host, &donor, mix_seed(seed, attempt), &opts.forgery).map(|mut s| {
                    if let Some(p) = s.provenance.as_mut() {
                        p.donor = Some(donor_id);
                    }
                    s
                })
            }
        };
        let forged = match forged {
            Ok(s) => s,
            Err(e @ Error::Generation(_)) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let (cy, cx) = crop_around(&forged.image, &forged.region_mask, opts.block_size, &mut rng);
        let mut image = forged.image.crop(cy, cx, opts.block_size, opts.block_size);
        let mut mask = forged.region_mask.crop(cy, cx, opts.block_size, opts.block_size);
        let (fh, fv) = if opts.flips { (rng.random_bool(0.5), rng.random_bool(0.5)) } else { (false, false) };
        if fh {
            image = image.flip_horizontal();
            mask = mask.flip_horizontal();
        }
        if fv {
            image = image.flip_vertical();
            mask = mask.flip_vertical();
        }
        if kind != Manipulation::Authentic {
            let frac = mask.area_fraction();
            if frac < opts.forgery.min_area || frac > opts.forgery.max_area {
                last_err = Some(Error::Generation(format!("cropped area fraction {frac:.4} out of bounds")));
                continue;
            }
        }
        let provenance = forged.provenance.map(|mut p| {
            p.seed = seed;
            p.host = host_id.clone();
            p.crop_origin = (cy, cx);
            p.flipped = (fh, fv);
            p
        });
        return Ok(SamplePair::new(image, mask, kind, provenance));
    }
    Err(last_err.unwrap_or_else(|| Error::Generation("sample generation failed".into())))
}
