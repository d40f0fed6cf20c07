//! Row-wise real FFTs and their adjoints on flat buffers.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

pub(crate) fn num_bins(n: usize) -> usize {
    n / 2 + 1
}

/// Weight of bin `f` when folding a one-sided spectrum back into a full one.
fn fold_weight(f: usize, n: usize) -> f64 {
    if f == 0 || (n.is_multiple_of(2) && f == n / 2) {
        1.0
    } else {
        2.0
    }
}

/// One-sided forward DFT of every length-`n` row: `Γ_f = Σ_t x_t e^{-2πi f t / n}`.
pub(crate) fn rfft_rows(x: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let bins = num_bins(n);
    let rows = x.len() / n;
    let fft = plan(n, false);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut re = Vec::with_capacity(rows * bins);
    let mut im = Vec::with_capacity(rows * bins);
    for row in x.chunks(n) {
        for (b, &v) in buf.iter_mut().zip(row) {
            *b = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        for c in &buf[..bins] {
            re.push(c.re);
            im.push(c.im);
        }
    }
    (re, im)
}

/// Transpose of [`rfft_rows`]: maps cotangents on (re, im) back to the signal.
pub(crate) fn rfft_rows_adjoint(gre: &[f64], gim: &[f64], n: usize) -> Vec<f64> {
    let bins = num_bins(n);
    let ifft = plan(n, true);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut out = Vec::with_capacity(gre.len() / bins * n);
    for (r, i) in gre.chunks(bins).zip(gim.chunks(bins)) {
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for f in 0..bins {
            buf[f] = Complex64::new(r[f], i[f]);
        }
        ifft.process(&mut buf);
        out.extend(buf.iter().map(|c| c.re));
    }
    out
}

/// Real inverse of a one-sided spectrum, normalized by `1/n`.
pub(crate) fn irfft_rows(re: &[f64], im: &[f64], n: usize) -> Vec<f64> {
    let bins = num_bins(n);
    let ifft = plan(n, true);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut out = Vec::with_capacity(re.len() / bins * n);
    let scale = 1.0 / n as f64;
    for (r, i) in re.chunks(bins).zip(im.chunks(bins)) {
        buf[0] = Complex64::new(r[0], 0.0);
        for f in 1..bins {
            let c =
                if n.is_multiple_of(2) && f == n / 2 { Complex64::new(r[f], 0.0) } else { Complex64::new(r[f], i[f]) };
            buf[f] = c;
            buf[n - f] = c.conj();
        }
        ifft.process(&mut buf);
        out.extend(buf.iter().map(|c| c.re * scale));
    }
    out
}

/// Transpose of [`irfft_rows`].
pub(crate) fn irfft_rows_adjoint(g: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let bins = num_bins(n);
    let (mut re, mut im) = rfft_rows(g, n);
    for (k, (r, i)) in re.iter_mut().zip(im.iter_mut()).enumerate() {
        let f = k % bins;
        let w = fold_weight(f, n) / n as f64;
        *r *= w;
        *i = if w * n as f64 == 1.0 { 0.0 } else { *i * w };
    }
    (re, im)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len();
        (0..num_bins(n))
            .map(|f| {
                x.iter().enumerate().fold((0.0, 0.0), |(a, b), (t, &v)| {
                    let th = 2.0 * std::f64::consts::PI * (f * t) as f64 / n as f64;
                    (a + v * th.cos(), b - v * th.sin())
                })
            })
            .collect()
    }

    #[test]
    fn rfft_matches_direct_summation() {
        for n in [5usize, 8, 13, 16] {
            let x: Vec<f64> = (0..n).map(|t| (t as f64 * 0.37).cos() + 0.2 * t as f64).collect();
            let (re, im) = rfft_rows(&x, n);
            for (f, (a, b)) in naive_dft(&x).into_iter().enumerate() {
                assert!((re[f] - a).abs() < 1e-10 && (im[f] - b).abs() < 1e-10, "n={n} f={f}");
            }
        }
    }

    #[test]
    fn round_trip_even_and_odd() {
        for n in [7usize, 10, 64] {
            let x: Vec<f64> = (0..2 * n).map(|t| ((t * t) as f64 * 0.11).sin()).collect();
            let (re, im) = rfft_rows(&x, n);
            let y = irfft_rows(&re, &im, n);
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        // <A x, y> == <x, Aᵀ y> for both transforms
        for n in [6usize, 9] {
            let bins = num_bins(n);
            let x: Vec<f64> = (0..n).map(|t| (t as f64 * 1.3).sin()).collect();
            let yr: Vec<f64> = (0..bins).map(|f| (f as f64 * 0.7).cos()).collect();
            let yi: Vec<f64> = (0..bins).map(|f| (f as f64 * 0.3 + 0.5).sin()).collect();
            let (ar, ai) = rfft_rows(&x, n);
            let lhs: f64 = ar.iter().zip(&yr).map(|(a, b)| a * b).sum::<f64>()
                + ai.iter().zip(&yi).map(|(a, b)| a * b).sum::<f64>();
            let adj = rfft_rows_adjoint(&yr, &yi, n);
            let rhs: f64 = x.iter().zip(&adj).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);

            let z = irfft_rows(&yr, &yi, n);
            let lhs: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            let (gr, gi) = irfft_rows_adjoint(&x, n);
            let rhs: f64 = gr.iter().zip(&yr).map(|(a, b)| a * b).sum::<f64>()
                + gi.iter().zip(&yi).map(|(a, b)| a * b).sum::<f64>();
            assert!((lhs - rhs).abs() < 1e-10, "n={n}: {lhs} vs {rhs}");
        }
    }
}
