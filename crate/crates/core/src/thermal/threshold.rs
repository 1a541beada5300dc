//! Gray-level histograms and the maximum-correlation threshold.

use super::ThermalError;
use crate::io::ThermalFrame;

/// Normalized 256-bin gray-level distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayHistogram {
    pub p: [f64; 256],
    pub n_pixels: usize,
}

impl GrayHistogram {
    /// Builds a histogram from raw bin counts.
    pub fn from_counts(counts: &[u64; 256]) -> Result<Self, ThermalError> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(ThermalError::EmptyFrame);
        }
        let mut p = [0.0; 256];
        for (pg, &c) in p.iter_mut().zip(counts) {
            *pg = c as f64 / n as f64;
        }
        Ok(Self { p, n_pixels: n as usize })
    }

    pub fn nonzero_bins(&self) -> usize {
        self.p.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Probability of each gray level in `frame`.
pub fn histogram(frame: &ThermalFrame) -> Result<GrayHistogram, ThermalError> {
    if frame.pixels.is_empty() {
        return Err(ThermalError::EmptyFrame);
    }
    let mut counts = [0u64; 256];
    for &v in &frame.pixels {
        counts[v as usize] += 1;
    }
    GrayHistogram::from_counts(&counts)
}

/// Threshold maximizing the total correlation of the object and background classes.
///
/// For a split at `t` with class masses `P(t)` and `1 - P(t)`:
///
/// ```text
/// TC(t) = -ln( sum_{g<=t} p_g^2 / P(t)^2 ) - ln( sum_{g>t} p_g^2 / (1 - P(t))^2 )
/// ```
///
/// Only splits with both classes non-empty are candidates; the smallest `t`
/// wins ties. Pixels strictly above the threshold belong to the object.
pub fn max_correlation_threshold(h: &GrayHistogram) -> Result<u8, ThermalError> {
    if h.nonzero_bins() < 2 {
        return Err(ThermalError::DegenerateHistogram);
    }
    // Lower-class mass and energy, accumulated upward.
    let mut lower_mass = [0.0; 256];
    let mut lower_energy = [0.0; 256];
    let (mut m, mut e) = (0.0, 0.0);
    for g in 0..256 {
        m += h.p[g];
        e += h.p[g] * h.p[g];
        lower_mass[g] = m;
        lower_energy[g] = e;
    }
    // Upper-class mass and energy for g > t, accumulated downward.
    let mut upper_mass = [0.0; 256];
    let mut upper_energy = [0.0; 256];
    let (mut m, mut e) = (0.0, 0.0);
    for t in (0..255).rev() {
        let g = t + 1;
        m += h.p[g];
        e += h.p[g] * h.p[g];
        upper_mass[t] = m;
        upper_energy[t] = e;
    }

    let mut best: Option<(usize, f64)> = None;
    for t in 0..255 {
        let (pl, pu) = (lower_mass[t], upper_mass[t]);
        if pl <= 0.0 || pu <= 0.0 {
            continue;
        }
        let tc = -(lower_energy[t] / (pl * pl)).ln() - (upper_energy[t] / (pu * pu)).ln();
        if best.is_none_or(|(_, b)| tc > b) {
            best = Some((t, tc));
        }
    }
    best.map(|(t, _)| t as u8).ok_or(ThermalError::DegenerateHistogram)
}
