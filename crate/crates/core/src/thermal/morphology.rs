//! Binary masks and square-element morphology.
//!
//! Windows are clipped at the image border, so erosion treats outside pixels
//! as set and dilation treats them as clear.

use crate::io::ThermalFrame;

/// Row-major object mask; `true` marks object pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_rows(rows: &[&[u8]]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let bits = rows.iter().flat_map(|r| r.iter().map(|&v| v != 0)).collect();
        Self { width, height, bits }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Marks pixels strictly brighter than `t` as object.
pub fn binarize(frame: &ThermalFrame, t: u8) -> BinaryMask {
    BinaryMask {
        width: frame.width as usize,
        height: frame.height as usize,
        bits: frame.pixels.iter().map(|&v| v > t).collect(),
    }
}

/// Sliding-window count along rows, then along columns. Windows are clipped
/// at the border, so erosion only needs the in-frame pixels set.
fn filter<const ERODE: bool>(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 || mask.bits.is_empty() {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    #[inline(always)]
    fn keep<const ERODE: bool>(count: u32, len: u32) -> bool {
        if ERODE {
            count == len
        } else {
            count > 0
        }
    }

    // Counts never exceed the frame size; wrapping ops keep the loops vectorizable.
    let mut horiz = vec![false; w * h];
    let mut prefix = vec![0u32; w + 1];
    let full = 2 * radius + 1;
    for (src, dst) in mask.bits.chunks_exact(w).zip(horiz.chunks_exact_mut(w)) {
        let mut acc = 0u32;
        for (p, &b) in prefix[1..].iter_mut().zip(src) {
            acc = acc.wrapping_add(b as u32);
            *p = acc;
        }
        if w > 2 * radius {
            // Windows fully inside the row: out[c] = prefix[c + r + 1] - prefix[c - r].
            for ((o, &hi), &lo) in dst[radius..w - radius].iter_mut().zip(&prefix[full..]).zip(&prefix) {
                *o = keep::<ERODE>(hi.wrapping_sub(lo), full as u32);
            }
        }
        for c in (0..radius.min(w)).chain(w.saturating_sub(radius).max(radius.min(w))..w) {
            let lo = c.saturating_sub(radius);
            let hi = (c + radius + 1).min(w);
            dst[c] = keep::<ERODE>(prefix[hi] - prefix[lo], (hi - lo) as u32);
        }
    }

    let mut out = vec![false; w * h];
    let mut counts = vec![0u32; w];
    let row = |r: usize| &horiz[r * w..(r + 1) * w];
    for r in 0..=radius.min(h - 1) {
        for (cnt, &b) in counts.iter_mut().zip(row(r)) {
            *cnt = cnt.wrapping_add(b as u32);
        }
    }
    for (r, dst) in out.chunks_exact_mut(w).enumerate() {
        let len = ((r + radius + 1).min(h) - r.saturating_sub(radius)) as u32;
        for (o, &cnt) in dst.iter_mut().zip(&counts) {
            *o = keep::<ERODE>(cnt, len);
        }
        if r + radius + 1 < h {
            for (cnt, &b) in counts.iter_mut().zip(row(r + radius + 1)) {
                *cnt = cnt.wrapping_add(b as u32);
            }
        }
        if r >= radius {
            for (cnt, &b) in counts.iter_mut().zip(row(r - radius)) {
                *cnt = cnt.wrapping_sub(b as u32);
            }
        }
    }
    BinaryMask { width: w, height: h, bits: out }
}

pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    filter::<true>(mask, radius)
}

/// Dilation with a `(2r+1) x (2r+1)` square element.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    filter::<false>(mask, radius)
}

pub fn open(mask: &BinaryMask, radius: usize) -> BinaryMask {
    dilate(&erode(mask, radius), radius)
}

pub fn close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    erode(&dilate(mask, radius), radius)
}

/// Opening (removes specks) followed by closing (fills pinholes).
pub fn postprocess(mask: &BinaryMask, open_radius: usize, close_radius: usize) -> BinaryMask {
    close(&open(mask, open_radius), close_radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct window scan over the clipped neighbourhood.
    fn naive(mask: &BinaryMask, r: usize, erode: bool) -> BinaryMask {
        let mut out = BinaryMask::new(mask.width, mask.height);
        for row in 0..mask.height {
            for col in 0..mask.width {
                let mut all = true;
                let mut any = false;
                for rr in row.saturating_sub(r)..=(row + r).min(mask.height - 1) {
                    for cc in col.saturating_sub(r)..=(col + r).min(mask.width - 1) {
                        let b = mask.get(cc, rr);
                        all &= b;
                        any |= b;
                    }
                }
                out.set(col, row, if erode { all } else { any });
            }
        }
        out
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h).prop_map(move |bits| BinaryMask {
                width: w,
                height: h,
                bits,
            })
        })
    }

    #[test]
    fn binarize_strictly_above() {
        let f = ThermalFrame::new(0.0, 2, 2, vec![0, 255, 255, 0]).unwrap();
        assert_eq!(binarize(&f, 127), BinaryMask::from_rows(&[&[0, 1], &[1, 0]]));
        let dark = ThermalFrame::new(0.0, 2, 2, vec![0, 254, 100, 3]).unwrap();
        assert_eq!(binarize(&dark, 254).count_ones(), 0);
    }

    #[test]
    fn hot_square_binarizes_exactly() {
        let mut px = vec![30u8; 20 * 20];
        for r in 5..10 {
            for c in 8..13 {
                px[r * 20 + c] = 220;
            }
        }
        let f = ThermalFrame::new(0.0, 20, 20, px).unwrap();
        let t = super::super::max_correlation_threshold(&super::super::histogram(&f).unwrap()).unwrap();
        let m = binarize(&f, t);
        for r in 0..20 {
            for c in 0..20 {
                assert_eq!(m.get(c, r), (5..10).contains(&r) && (8..13).contains(&c));
            }
        }
    }

    #[test]
    fn zero_radii_are_identity() {
        let m = BinaryMask::from_rows(&[&[1, 0, 1], &[0, 1, 0]]);
        assert_eq!(postprocess(&m, 0, 0), m);
    }

    #[test]
    fn opening_removes_isolated_pixel() {
        let mut m = BinaryMask::new(9, 9);
        m.set(4, 4, true);
        assert_eq!(postprocess(&m, 1, 0).count_ones(), 0);
    }

    #[test]
    fn closing_fills_interior_hole() {
        let mut m = BinaryMask::new(20, 20);
        for r in 5..15 {
            for c in 5..15 {
                m.set(c, r, true);
            }
        }
        let solid = m.clone();
        m.set(9, 9, false);
        assert_eq!(postprocess(&m, 0, 1), solid);
    }

    proptest! {
        #[test]
        fn matches_naive_window(m in arb_mask(), r in 0usize..4) {
            prop_assert_eq!(erode(&m, r), naive(&m, r, true));
            prop_assert_eq!(dilate(&m, r), naive(&m, r, false));
        }

        #[test]
        fn opening_is_idempotent(m in arb_mask(), r in 0usize..3) {
            let once = open(&m, r);
            prop_assert_eq!(open(&once, r), once);
        }
    }
}
