//! Binary morphology with a square structuring element.
//!
//! Pixels outside the image count as background for both operators, so erosion
//! peels a frame off a mask that touches the border.

use crate::image::BinaryMask;

/// Separable k×k max filter.
pub fn dilate(mask: &BinaryMask, kernel: usize) -> BinaryMask {
    filter(mask, kernel, true)
}

/// Separable k×k min filter with zero padding.
pub fn erode(mask: &BinaryMask, kernel: usize) -> BinaryMask {
    filter(mask, kernel, false)
}

fn filter(mask: &BinaryMask, kernel: usize, is_max: bool) -> BinaryMask {
    assert!(kernel >= 1, "structuring element must be at least 1×1");
    let (h, w) = (mask.height(), mask.width());
    let before = (kernel - 1) / 2;
    let after = kernel - 1 - before;
    let pass = |get: &dyn Fn(isize, isize) -> bool, horizontal: bool| {
        BinaryMask::from_fn(h, w, |y, x| {
            let window = (-(before as isize)..=after as isize).map(|d| {
                let (yy, xx) = if horizontal { (y as isize, x as isize + d) } else { (y as isize + d, x as isize) };
                get(yy, xx)
            });
            let mut window = window;
            if is_max {
                window.any(|v| v)
            } else {
                window.all(|v| v)
            }
        })
    };
    let inside = |m: &BinaryMask, y: isize, x: isize| {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && m.get(y as usize, x as usize)
    };
    let rows = pass(&|y, x| inside(mask, y, x), true);
    pass(&|y, x| inside(&rows, y, x), false)
}

/// Boundary ground truth: `dilate(mask) ∧ ¬erode(mask)`, a ring straddling each
/// region edge.
pub fn make_boundary_gt(mask: &BinaryMask, kernel: usize) -> BinaryMask {
    dilate(mask, kernel).and_not(&erode(mask, kernel))
}
