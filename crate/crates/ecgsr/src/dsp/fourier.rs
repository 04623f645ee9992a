//! Frequency-domain resampling and brick-wall band selection.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn fft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn ifft_real(mut spectrum: Vec<Complex64>, scale: f64) -> Vec<f64> {
    FftPlanner::new().plan_fft_inverse(spectrum.len()).process(&mut spectrum);
    spectrum.into_iter().map(|c| c.re * scale).collect()
}

/// Upsamples by zero-padding the DFT spectrum to `factor * n` bins.
///
/// The Nyquist bin of an even-length input is split in half between the
/// positive and negative sides. With the unscaled-inverse convention used
/// here the time-domain result is divided by the input length, which keeps
/// sinusoid amplitudes unchanged (total energy scales by `factor`).
pub fn fft_upsample_trace(x: &[f64], factor: usize) -> Vec<f64> {
    let n = x.len();
    let m = n * factor;
    let spec = fft(x);
    let mut padded = vec![Complex64::new(0.0, 0.0); m];
    padded[0] = spec[0];
    let half = (n - 1) / 2;
    for k in 1..=half {
        padded[k] = spec[k];
        padded[m - k] = spec[n - k];
    }
    if n % 2 == 0 {
        let h = n / 2;
        padded[h] = spec[h] * 0.5;
        padded[m - h] = spec[h] * 0.5;
    }
    ifft_real(padded, 1.0 / n as f64)
}

/// Zeroes every DFT bin whose frequency lies outside `[lo_hz, hi_hz]`,
/// then transforms back. DC is removed whenever `lo_hz > 0`.
pub fn fft_band_select_trace(x: &[f64], fs: f64, lo_hz: f64, hi_hz: f64) -> Vec<f64> {
    let n = x.len();
    let mut spec = fft(x);
    for (k, bin) in spec.iter_mut().enumerate() {
        let idx = k.min(n - k);
        let freq = idx as f64 * fs / n as f64;
        if freq < lo_hz || freq > hi_hz {
            *bin = Complex64::new(0.0, 0.0);
        }
    }
    ifft_real(spec, 1.0 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn upsample_reconstructs_bin_aligned_sinusoid() {
        let n = 250;
        let fs = 50.0;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 5.0 * i as f64 / fs).sin()).collect();
        let y = fft_upsample_trace(&x, 10);
        assert_eq!(y.len(), 2500);
        for (j, &v) in y.iter().enumerate() {
            let expect = (2.0 * PI * 5.0 * j as f64 / 500.0).sin();
            assert!((v - expect).abs() < 1e-6, "at {j}: {v} vs {expect}");
        }
    }

    #[test]
    fn upsample_keeps_constants() {
        let y = fft_upsample_trace(&vec![0.7; 100], 4);
        assert!(y.iter().all(|v| (v - 0.7).abs() < 1e-9));
    }

    #[test]
    fn upsample_energy_scales_by_factor() {
        let x: Vec<f64> = (0..240)
            .map(|i| (2.0 * PI * 3.0 * i as f64 / 240.0).sin() + 0.4 * (2.0 * PI * 7.0 * i as f64 / 240.0).cos())
            .collect();
        let y = fft_upsample_trace(&x, 5);
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ey: f64 = y.iter().map(|v| v * v).sum();
        assert!((ey / 5.0 - ex).abs() <= 1e-6 * ex, "energy {ey} vs {}", 5.0 * ex);
    }

    #[test]
    fn band_select_drops_out_of_band_tone() {
        let fs = 500.0;
        let n = 1000;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * PI * 10.0 * t).sin() + (2.0 * PI * 200.0 * t).sin()
            })
            .collect();
        let y = fft_band_select_trace(&x, fs, 0.5, 150.0);
        for (i, &v) in y.iter().enumerate() {
            let expect = (2.0 * PI * 10.0 * i as f64 / fs).sin();
            assert!((v - expect).abs() < 1e-9, "at {i}");
        }
    }
}
