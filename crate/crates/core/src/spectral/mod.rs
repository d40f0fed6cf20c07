//! Frequency-domain toolkit: one-sided transforms, EEG band masks, and the
//! differential-entropy / power-spectral-density band features.
//!
//! Band intervals are half-open `[low, high)` except the last band, which is
//! closed at its upper edge. DE is computed in nats on the band-limited time
//! signal obtained by inverse-transforming the masked spectrum.

pub(crate) mod fft;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variance floor inside the DE formula.
pub const DE_VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl Band {
    pub const ALL: [Band; 5] = [Band::Delta, Band::Theta, Band::Alpha, Band::Beta, Band::Gamma];

    pub fn name(self) -> &'static str {
        match self {
            Band::Delta => "delta",
            Band::Theta => "theta",
            Band::Alpha => "alpha",
            Band::Beta => "beta",
            Band::Gamma => "gamma",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Lower and upper edge (Hz) of each band, in [`Band::ALL`] order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandEdges(pub [(f64, f64); 5]);

impl Default for BandEdges {
    fn default() -> Self {
        Self([(0.5, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, 50.0)])
    }
}

impl BandEdges {
    pub fn validate(&self) -> Result<()> {
        for (i, &(lo, hi)) in self.0.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
                return Err(Error::Argument(format!("band {i} has edges [{lo}, {hi})")));
            }
            if i > 0 && lo < self.0[i - 1].1 {
                return Err(Error::Argument(format!(
                    "band {} [{lo}, {hi}) overlaps band {} ending at {}",
                    i,
                    i - 1,
                    self.0[i - 1].1
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, band: Band, freq: f64) -> bool {
        let (lo, hi) = self.0[band.index()];
        if band == Band::Gamma {
            freq >= lo && freq <= hi
        } else {
            freq >= lo && freq < hi
        }
    }
}

/// One-sided spectrum of a `C×L` real signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    /// Row-major `C×F` coefficients.
    pub coeffs: Vec<Complex64>,
    pub channels: usize,
    pub freq_axis: Vec<f64>,
    pub source_len: usize,
}

impl Spectrum {
    pub fn num_bins(&self) -> usize {
        self.freq_axis.len()
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let f = self.num_bins();
        &self.coeffs[c * f..(c + 1) * f]
    }

    /// `Σ_t x_t²` recovered from the one-sided coefficients.
    pub fn energy(&self) -> f64 {
        let n = self.source_len;
        let f = self.num_bins();
        let mut total = 0.0;
        for c in 0..self.channels {
            for (k, z) in self.channel(c).iter().enumerate() {
                let w = if k == 0 || (n.is_multiple_of(2) && k == f - 1) { 1.0 } else { 2.0 };
                total += w * z.norm_sqr();
            }
        }
        total / n as f64
    }
}

/// Frequencies (Hz) of the one-sided bins of a length-`len` transform.
pub fn freq_axis(len: usize, rate_hz: f64) -> Vec<f64> {
    (0..fft::num_bins(len)).map(|k| k as f64 * rate_hz / len as f64).collect()
}

fn check_matrix(signal: &Tensor) -> Result<(usize, usize)> {
    if signal.ndim() != 2 {
        return Err(Error::Shape(format!("expected a C×L matrix, got {:?}", signal.shape())));
    }
    Ok((signal.shape()[0], signal.shape()[1]))
}

/// One-sided DFT of each channel of a `C×L` signal.
pub fn forward_fft(signal: &Tensor, rate_hz: f64) -> Result<Spectrum> {
    let (channels, len) = check_matrix(signal)?;
    if len < 2 {
        return Err(Error::Argument(format!("need at least 2 samples, got {len}")));
    }
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(Error::Argument(format!("sampling rate must be positive, got {rate_hz}")));
    }
    if !signal.is_finite() {
        return Err(Error::Numeric("forward_fft input contains NaN or Inf".into()));
    }
    let (re, im) = fft::rfft_rows(signal.data(), len);
    Ok(Spectrum {
        coeffs: re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect(),
        channels,
        freq_axis: freq_axis(len, rate_hz),
        source_len: len,
    })
}

/// Per-sample transform of a `B×C×L` batch.
pub fn forward_fft_batch(batch: &Tensor, rate_hz: f64) -> Result<Vec<Spectrum>> {
    if batch.ndim() != 3 {
        return Err(Error::Shape(format!("expected B×C×L, got {:?}", batch.shape())));
    }
    (0..batch.shape()[0]).map(|b| forward_fft(&batch.slice0(b, b + 1).reshape(&batch.shape()[1..])?, rate_hz)).collect()
}

/// Real `C×L` reconstruction of a one-sided spectrum.
pub fn inverse_fft(spectrum: &Spectrum) -> Result<Tensor> {
    let f = spectrum.num_bins();
    if f != fft::num_bins(spectrum.source_len) || spectrum.coeffs.len() != f * spectrum.channels {
        return Err(Error::Shape(format!(
            "{} bins × {} channels inconsistent with source length {}",
            f, spectrum.channels, spectrum.source_len
        )));
    }
    let re: Vec<f64> = spectrum.coeffs.iter().map(|z| z.re).collect();
    let im: Vec<f64> = spectrum.coeffs.iter().map(|z| z.im).collect();
    Tensor::new(vec![spectrum.channels, spectrum.source_len], fft::irfft_rows(&re, &im, spectrum.source_len))
}

/// Binary per-bin selection masks for the five bands.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMaskSet {
    pub masks: [Vec<f64>; 5],
    pub edges: BandEdges,
}

impl BandMaskSet {
    pub fn mask(&self, band: Band) -> &[f64] {
        &self.masks[band.index()]
    }

    /// The masks as a `5×F` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let f = self.masks[0].len();
        Tensor::from_fn(&[5, f], |i| self.masks[i / f][i % f])
    }
}

pub fn band_masks(freq_axis: &[f64], edges: &BandEdges) -> Result<BandMaskSet> {
    edges.validate()?;
    if freq_axis.first() != Some(&0.0) || freq_axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("frequency axis must start at 0 and increase".into()));
    }
    let masks = Band::ALL.map(|b| freq_axis.iter().map(|&f| if edges.contains(b, f) { 1.0 } else { 0.0 }).collect());
    Ok(BandMaskSet { masks, edges: *edges })
}

/// `Γ ⊙ M` for one band mask.
pub fn apply_mask(spectrum: &Spectrum, mask: &[f64]) -> Spectrum {
    let f = spectrum.num_bins();
    let coeffs = spectrum.coeffs.iter().enumerate().map(|(i, z)| z * mask[i % f]).collect();
    Spectrum { coeffs, ..spectrum.clone() }
}

/// `½·ln(2πe·max(σ², ε))` per channel of a band-limited `C×L` signal.
pub fn differential_entropy(banded: &Tensor) -> Result<Vec<f64>> {
    let (_, len) = check_matrix(banded)?;
    Ok(banded.data().chunks(len.max(1)).map(|row| de_from_variance(variance(row))).collect())
}

pub fn de_from_variance(var: f64) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var.max(DE_VARIANCE_FLOOR)).ln()
}

fn variance(row: &[f64]) -> f64 {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// `(1/F)·Σ_f |Γ_f|²` per channel of a masked spectrum.
pub fn power_spectral_density(banded: &Spectrum) -> Vec<f64> {
    let f = banded.num_bins() as f64;
    (0..banded.channels).map(|c| banded.channel(c).iter().map(Complex64::norm_sqr).sum::<f64>() / f).collect()
}

#[derive(Clone, Debug)]
pub struct BandFeatures {
    pub band: Band,
    pub de: Vec<f64>,
    pub psd: Vec<f64>,
    pub banded_spectrum: Spectrum,
}

/// DE and PSD for all five bands of a `C×L` signal.
pub fn band_features(signal: &Tensor, rate_hz: f64, edges: &BandEdges) -> Result<Vec<BandFeatures>> {
    let spectrum = forward_fft(signal, rate_hz)?;
    let masks = band_masks(&spectrum.freq_axis, edges)?;
    Band::ALL
        .iter()
        .map(|&band| {
            let banded = apply_mask(&spectrum, masks.mask(band));
            let time = inverse_fft(&banded)?;
            Ok(BandFeatures {
                band,
                de: differential_entropy(&time)?,
                psd: power_spectral_density(&banded),
                banded_spectrum: banded,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    fn sinusoid(freq: f64, rate: f64, len: usize) -> Tensor {
        Tensor::from_fn(&[1, len], |t| (2.0 * PI * freq * t as f64 / rate).sin())
    }

    #[test]
    fn constant_signal_puts_everything_in_dc() {
        let x = Tensor::full(&[2, 16], 3.0);
        let s = forward_fft(&x, 100.0).unwrap();
        for c in 0..2 {
            let row = s.channel(c);
            assert!((row[0].re - 48.0).abs() < 1e-12);
            assert!(row[1..].iter().all(|z| z.norm() < 1e-9));
        }
    }

    #[test]
    fn bin_aligned_sinusoid_has_single_peak() {
        // 10 Hz at 100 Hz over 100 samples lands exactly on bin 10
        let s = forward_fft(&sinusoid(10.0, 100.0, 100), 100.0).unwrap();
        let mags: Vec<f64> = s.channel(0).iter().map(|z| z.norm()).collect();
        let argmax = mags.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(s.freq_axis[argmax], 10.0);
        let others: f64 = mags.iter().enumerate().filter(|(k, _)| *k != argmax).map(|(_, m)| m).sum();
        assert!(others < 1e-8);
    }

    #[test]
    fn freq_axis_ends_at_nyquist() {
        let ax = freq_axis(500, 500.0);
        assert_eq!(ax.len(), 251);
        assert_eq!(ax[0], 0.0);
        assert_eq!(*ax.last().unwrap(), 250.0);
    }

    #[test]
    fn nan_input_is_a_numeric_error() {
        let mut x = Tensor::zeros(&[1, 8]);
        x.data_mut()[3] = f64::NAN;
        assert!(matches!(forward_fft(&x, 100.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let s = forward_fft(&Tensor::zeros(&[3, 10]), 50.0).unwrap();
        let x = inverse_fft(&s).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inconsistent_spectrum_is_a_shape_error() {
        let mut s = forward_fft(&Tensor::zeros(&[1, 10]), 50.0).unwrap();
        s.source_len = 20;
        assert!(matches!(inverse_fft(&s), Err(Error::Shape(_))));
    }

    #[test]
    fn band_boundaries_follow_half_open_rule() {
        let ax = vec![0.0, 0.5, 4.0, 8.0, 10.0, 13.0, 30.0, 50.0, 60.0];
        let m = band_masks(&ax, &BandEdges::default()).unwrap();
        let which = |k: usize| -> Vec<f64> { Band::ALL.iter().map(|b| m.mask(*b)[k]).collect() };
        assert_eq!(which(0), vec![0.0; 5]);
        assert_eq!(which(1), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(which(2), vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(which(4), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(which(5), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(which(6), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(which(7), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(which(8), vec![0.0; 5]);
    }

    #[test]
    fn overlapping_edges_are_rejected() {
        let mut e = BandEdges::default();
        e.0[2] = (7.0, 13.0);
        assert!(band_masks(&freq_axis(64, 128.0), &e).is_err());
    }

    #[test]
    fn de_closed_forms() {
        assert!(de_from_variance(1.0 / (2.0 * PI * E)).abs() < 1e-12);
        assert!((de_from_variance(1.0) - 0.5 * (2.0 * PI * E).ln()).abs() < 1e-12);
        let zero = differential_entropy(&Tensor::zeros(&[2, 32])).unwrap();
        let floor = 0.5 * (2.0 * PI * E * 1e-8).ln();
        assert!(zero.iter().all(|&d| (d - floor).abs() < 1e-12));
    }

    #[test]
    fn psd_single_bin() {
        let mut s = forward_fft(&Tensor::zeros(&[1, 16]), 16.0).unwrap();
        s.coeffs[3] = Complex64::new(0.6, 0.8);
        assert!((power_spectral_density(&s)[0] - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn band_features_are_finite_and_nonnegative() {
        let x = Tensor::from_fn(&[3, 128], |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0);
        let feats = band_features(&x, 128.0, &BandEdges::default()).unwrap();
        assert_eq!(feats.len(), 5);
        for f in &feats {
            assert!(f.de.iter().all(|d| d.is_finite()));
            assert!(f.psd.iter().all(|&p| p >= 0.0));
        }
    }
}
