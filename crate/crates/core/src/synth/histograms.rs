//! Seeded gray-level histograms for threshold testing.

use super::SplitMix64;
use crate::thermal::GrayHistogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistogramKind {
    Unimodal,
    /// Two separated Gaussian modes.
    Bimodal,
    /// Every pixel in one gray level.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramCase {
    pub kind: HistogramKind,
    pub histogram: GrayHistogram,
    /// Mode centers for bimodal cases, low then high.
    pub modes: Option<(u8, u8)>,
}

impl HistogramCase {
    pub fn mode_gap(&self) -> Option<u8> {
        self.modes.map(|(a, b)| b - a)
    }
}

const KIND_CYCLE: [HistogramKind; 5] = [
    HistogramKind::Bimodal,
    HistogramKind::Unimodal,
    HistogramKind::Bimodal,
    HistogramKind::Unimodal,
    HistogramKind::Degenerate,
];

fn add_mode(counts: &mut [u64; 256], rng: &mut SplitMix64, center: f64, std: f64, pixels: u64) {
    for _ in 0..pixels {
        let g = rng.normal(center, std).round().clamp(0.0, 255.0);
        counts[g as usize] += 1;
    }
}

/// `n` histograms cycling bimodal, unimodal, bimodal, unimodal, degenerate.
pub fn gen_histogram_cases(seed: u64, n: usize) -> Vec<HistogramCase> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let kind = KIND_CYCLE[i % KIND_CYCLE.len()];
            let mut counts = [0u64; 256];
            let mut modes = None;
            match kind {
                HistogramKind::Degenerate => counts[rng.int(0, 255) as usize] = rng.int(1, 5000),
                HistogramKind::Unimodal => {
                    let (c, s) = (rng.range(30.0, 220.0), rng.range(2.0, 25.0));
                    let n = rng.int(500, 5000);
                    add_mode(&mut counts, &mut rng, c, s, n);
                }
                HistogramKind::Bimodal => {
                    let lo = rng.int(15, 110) as u8;
                    let hi = lo + rng.int(60, 130) as u8;
                    let (s_lo, s_hi) = (rng.range(2.0, 10.0), rng.range(2.0, 10.0));
                    let (n_lo, n_hi) = (rng.int(2000, 8000), rng.int(100, 2000));
                    add_mode(&mut counts, &mut rng, lo as f64, s_lo, n_lo);
                    add_mode(&mut counts, &mut rng, hi as f64, s_hi, n_hi);
                    modes = Some((lo, hi));
                }
            }
            let histogram = GrayHistogram::from_counts(&counts).expect("non-empty counts");
            HistogramCase { kind, histogram, modes }
        })
        .collect()
}
