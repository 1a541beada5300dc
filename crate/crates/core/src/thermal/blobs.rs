//! 8-connected component extraction.

use super::BinaryMask;
use crate::io::BBox;

/// Tight box around one connected component.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobBox {
    /// Box in center-origin image coordinates.
    pub bbox: BBox,
    pub area: usize,
    /// Inclusive pixel bounds `(col_min, row_min, col_max, row_max)`.
    pub bounds: (usize, usize, usize, usize),
    /// Raster index of the component's first pixel.
    first_pixel: usize,
}

impl BlobBox {
    fn from_bounds(
        width: usize,
        height: usize,
        bounds: (usize, usize, usize, usize),
        area: usize,
        first_pixel: usize,
    ) -> Self {
        let (c0, r0, c1, r1) = bounds;
        let cx = (c0 + c1 + 1) as f64 / 2.0 - width as f64 / 2.0;
        let cy = height as f64 / 2.0 - (r0 + r1 + 1) as f64 / 2.0;
        let bbox = BBox::new(cx, cy, (c1 - c0 + 1) as f64, (r1 - r0 + 1) as f64);
        Self { bbox, area, bounds, first_pixel }
    }
}

/// Connected components of `mask`, largest first; equal areas keep raster order.
pub fn extract_blobs(mask: &BinaryMask) -> Vec<BlobBox> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut blobs = Vec::new();

    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut c0, mut r0, mut c1, mut r1) = (usize::MAX, usize::MAX, 0, 0);
        let mut area = 0;
        while let Some(i) = stack.pop() {
            let (c, r) = (i % w, i / w);
            area += 1;
            c0 = c0.min(c);
            c1 = c1.max(c);
            r0 = r0.min(r);
            r1 = r1.max(r);
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let j = rr * w + cc;
                    if mask.bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        blobs.push(BlobBox::from_bounds(w, h, (c0, r0, c1, r1), area, start));
    }
    blobs.sort_by(|a, b| b.area.cmp(&a.area).then(a.first_pixel.cmp(&b.first_pixel)));
    blobs
}
