//! Butterworth IIR design as second-order-section cascades, plus zero-phase
//! (forward-backward) application.
//!
//! The design path is the classic analog-prototype route: Butterworth poles
//! on the unit circle, frequency transform (lowpass/highpass/bandpass) with
//! prewarped cutoffs, bilinear transform, then conjugate-pair grouping into
//! biquads. Direct-form transposed II per section; cascading SOS keeps the
//! recursion stable at normalized cutoffs as low as 0.05 Hz on a 50 Hz
//! stream, where a flattened order-8 polynomial would be ill-conditioned.

use rustfft::num_complex::Complex64;
use std::f64::consts::PI;

/// One biquad section; `a[0]` is always 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

struct Zpk {
    z: Vec<Complex64>,
    p: Vec<Complex64>,
    k: f64,
}

impl Zpk {
    fn degree(&self) -> usize {
        self.p.len() - self.z.len()
    }
}

/// Analog Butterworth prototype: unit cutoff, no zeros, unit gain.
fn prototype(order: usize) -> Zpk {
    let n = order as f64;
    let p = (0..order)
        .map(|i| {
            let m = -n + 1.0 + 2.0 * i as f64;
            -(Complex64::new(0.0, PI * m / (2.0 * n))).exp()
        })
        .collect();
    Zpk { z: Vec::new(), p, k: 1.0 }
}

fn lp_to_lp(proto: Zpk, w0: f64) -> Zpk {
    let degree = proto.degree();
    Zpk {
        z: proto.z.iter().map(|&z| z * w0).collect(),
        p: proto.p.iter().map(|&p| p * w0).collect(),
        k: proto.k * w0.powi(degree as i32),
    }
}

fn lp_to_hp(proto: Zpk, w0: f64) -> Zpk {
    let degree = proto.degree();
    let num: Complex64 = proto.z.iter().map(|&z| -z).product();
    let den: Complex64 = proto.p.iter().map(|&p| -p).product();
    let mut z: Vec<Complex64> = proto.z.iter().map(|&z| w0 / z).collect();
    z.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(degree));
    Zpk {
        z,
        p: proto.p.iter().map(|&p| w0 / p).collect(),
        k: proto.k * (num / den).re,
    }
}

fn lp_to_bp(proto: Zpk, w0: f64, bw: f64) -> Zpk {
    let degree = proto.degree();
    let split = |roots: &[Complex64]| -> Vec<Complex64> {
        let mut out = Vec::with_capacity(roots.len() * 2);
        for &r in roots {
            let scaled = r * (bw / 2.0);
            let disc = (scaled * scaled - Complex64::new(w0 * w0, 0.0)).sqrt();
            out.push(scaled + disc);
            out.push(scaled - disc);
        }
        out
    };
    let mut z = split(&proto.z);
    z.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(degree));
    Zpk { z, p: split(&proto.p), k: proto.k * bw.powi(degree as i32) }
}

/// Bilinear transform at sampling rate `fs` (in the prewarped design domain).
fn bilinear(analog: Zpk, fs: f64) -> Zpk {
    let fs2 = Complex64::new(2.0 * fs, 0.0);
    let degree = analog.degree();
    let num: Complex64 = analog.z.iter().map(|&z| fs2 - z).product();
    let den: Complex64 = analog.p.iter().map(|&p| fs2 - p).product();
    let mut z: Vec<Complex64> = analog.z.iter().map(|&z| (fs2 + z) / (fs2 - z)).collect();
    z.extend(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(degree));
    Zpk {
        z,
        p: analog.p.iter().map(|&p| (fs2 + p) / (fs2 - p)).collect(),
        k: analog.k * (num / den).re,
    }
}

/// Groups roots into conjugate/real pairs. Requires an even count.
fn pair_roots(mut roots: Vec<Complex64>) -> Vec<(Complex64, Complex64)> {
    const TOL: f64 = 1e-8;
    let mut pairs = Vec::with_capacity(roots.len() / 2);
    let mut reals: Vec<Complex64> = Vec::new();
    while let Some(r) = roots.pop() {
        if r.im.abs() <= TOL * r.norm().max(1.0) {
            reals.push(r);
            continue;
        }
        let conj_at = roots
            .iter()
            .position(|c| (c - r.conj()).norm() <= TOL * r.norm().max(1.0) * 100.0)
            .expect("complex roots come in conjugate pairs");
        let c = roots.swap_remove(conj_at);
        pairs.push((r, c));
    }
    reals.sort_by(|a, b| a.re.total_cmp(&b.re));
    for chunk in reals.chunks(2) {
        assert_eq!(chunk.len(), 2, "odd real root count");
        pairs.push((chunk[0], chunk[1]));
    }
    pairs
}

/// Converts zeros/poles/gain to cascaded biquads. Pole pairs are matched
/// greedily with the nearest zero pair; sections are ordered with the pole
/// pair closest to the unit circle last, and the overall gain folded into
/// the first section.
fn zpk_to_sos(zpk: Zpk) -> Vec<Sos> {
    assert_eq!(zpk.z.len(), zpk.p.len(), "bilinear output is proper");
    assert_eq!(zpk.p.len() % 2, 0, "even filter order expected");
    let mut pole_pairs = pair_roots(zpk.p);
    // farthest from the unit circle first
    pole_pairs.sort_by(|a, b| {
        let da = (1.0 - a.0.norm()).abs();
        let db = (1.0 - b.0.norm()).abs();
        db.total_cmp(&da)
    });
    let mut zero_pairs = pair_roots(zpk.z);
    let mut sections = Vec::with_capacity(pole_pairs.len());
    for (p1, p2) in pole_pairs {
        let at = zero_pairs
            .iter()
            .enumerate()
            .min_by(|(_, z), (_, w)| {
                (z.0 - p1).norm().total_cmp(&(w.0 - p1).norm())
            })
            .map(|(i, _)| i)
            .expect("one zero pair per pole pair");
        let (z1, z2) = zero_pairs.swap_remove(at);
        let a1 = -(p1 + p2);
        let a2 = p1 * p2;
        let b1 = -(z1 + z2);
        let b2 = z1 * z2;
        sections.push(Sos {
            b: [1.0, b1.re, b2.re],
            a: [1.0, a1.re, a2.re],
        });
    }
    for c in sections[0].b.iter_mut() {
        *c *= zpk.k;
    }
    sections
}

fn prewarp(wn: f64) -> f64 {
    // internal design rate fs = 2
    4.0 * (PI * wn / 2.0).tan()
}

/// `cutoff_hz` as a fraction of Nyquist must lie in (0, 1).
pub fn butter_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Vec<Sos> {
    let wn = 2.0 * cutoff_hz / fs;
    zpk_to_sos(bilinear(lp_to_lp(prototype(order), prewarp(wn)), 2.0))
}

pub fn butter_highpass(order: usize, cutoff_hz: f64, fs: f64) -> Vec<Sos> {
    let wn = 2.0 * cutoff_hz / fs;
    zpk_to_sos(bilinear(lp_to_hp(prototype(order), prewarp(wn)), 2.0))
}

pub fn butter_bandpass(order: usize, lo_hz: f64, hi_hz: f64, fs: f64) -> Vec<Sos> {
    let w1 = prewarp(2.0 * lo_hz / fs);
    let w2 = prewarp(2.0 * hi_hz / fs);
    let w0 = (w1 * w2).sqrt();
    let bw = w2 - w1;
    zpk_to_sos(bilinear(lp_to_bp(prototype(order), w0, bw), 2.0))
}

/// Runs one pass of the cascade over `x` in place, each section starting
/// from its steady state for a constant input equal to the first sample.
/// That initialization removes the step transient a zero state would inject.
fn sosfilt_steady(sos: &[Sos], x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let mut dc_in = x[0];
    for sec in sos {
        let h1 = (sec.b[0] + sec.b[1] + sec.b[2]) / (1.0 + sec.a[1] + sec.a[2]);
        let y_dc = h1 * dc_in;
        // direct form II transposed steady state for constant input dc_in
        let mut s2 = sec.b[2] * dc_in - sec.a[2] * y_dc;
        let mut s1 = y_dc - sec.b[0] * dc_in;
        for v in x.iter_mut() {
            let xi = *v;
            let y = sec.b[0] * xi + s1;
            s1 = sec.b[1] * xi - sec.a[1] * y + s2;
            s2 = sec.b[2] * xi - sec.a[2] * y;
            *v = y;
        }
        dc_in = y_dc;
    }
}

/// Zero-phase filtering: odd-extension padding, forward pass, time reversal,
/// second pass, reversal, unpad. Magnitude response is applied twice; phase
/// cancels exactly.
pub fn sosfiltfilt(sos: &[Sos], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let padlen = (3 * (2 * sos.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for i in 0..padlen {
        ext.push(2.0 * x[0] - x[padlen - i]);
    }
    ext.extend_from_slice(x);
    for i in 0..padlen {
        ext.push(2.0 * x[n - 1] - x[n - 2 - i]);
    }
    sosfilt_steady(sos, &mut ext);
    ext.reverse();
    sosfilt_steady(sos, &mut ext);
    ext.reverse();
    ext[padlen..padlen + n].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Amplitude of the `f_hz` component via complex projection over an
    /// integer number of periods.
    pub(crate) fn tone_amplitude(x: &[f64], fs: f64, f_hz: f64) -> f64 {
        let period = fs / f_hz;
        let cycles = ((x.len() as f64 - 1.0) / period).floor().max(1.0);
        let span = (cycles * period).round() as usize;
        let span = span.min(x.len());
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &v) in x[..span].iter().enumerate() {
            let phase = -2.0 * PI * f_hz * i as f64 / fs;
            acc += v * Complex64::new(phase.cos(), phase.sin());
        }
        2.0 * acc.norm() / span as f64
    }

    fn sine(fs: f64, f: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn highpass_removes_dc_exactly() {
        let sos = butter_highpass(4, 0.05, 500.0);
        let x = vec![1.0; 5000];
        let y = sosfiltfilt(&sos, &x);
        let max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 0.01, "residual DC {max}");
    }

    #[test]
    fn bandpass_passes_midband_and_rejects_stopband() {
        let fs = 500.0;
        let sos = butter_bandpass(4, 0.05, 150.0, fs);
        let pass = sosfiltfilt(&sos, &sine(fs, 10.0, 5000));
        let amp_pass = tone_amplitude(&pass[1000..4000], fs, 10.0);
        assert!((amp_pass - 1.0).abs() < 0.05, "passband gain {amp_pass}");

        let stop = sosfiltfilt(&sos, &sine(fs, 200.0, 5000));
        let amp_stop = tone_amplitude(&stop[1000..4000], fs, 200.0);
        assert!(amp_stop < 0.1, "stopband gain {amp_stop}"); // >= 20 dB down
    }

    #[test]
    fn lowpass_passes_low_and_rejects_high() {
        let fs = 100.0;
        let sos = butter_lowpass(8, 20.0, fs);
        let low = sosfiltfilt(&sos, &sine(fs, 5.0, 2000));
        let amp_low = tone_amplitude(&low[500..1500], fs, 5.0);
        assert!((amp_low - 1.0).abs() < 0.01, "low gain {amp_low}");
        let high = sosfiltfilt(&sos, &sine(fs, 35.0, 2000));
        let amp_high = tone_amplitude(&high[500..1500], fs, 35.0);
        assert!(amp_high < 0.01, "high gain {amp_high}");
    }

    #[test]
    fn zero_phase_has_no_lag() {
        let fs = 500.0;
        let sos = butter_bandpass(4, 0.05, 150.0, fs);
        let x = sine(fs, 10.0, 5000);
        let y = sosfiltfilt(&sos, &x);
        // cross-correlation peak over generous lag range
        let mut best = (0i64, f64::MIN);
        for lag in -20i64..=20 {
            let mut acc = 0.0;
            for i in 1000..4000i64 {
                acc += x[i as usize] * y[(i + lag) as usize];
            }
            if acc > best.1 {
                best = (lag, acc);
            }
        }
        assert_eq!(best.0, 0, "cross-correlation peak at lag {}", best.0);
    }

    #[test]
    fn very_low_cutoff_cascade_stays_finite() {
        // 0.05 Hz on a 50 Hz stream: normalized cutoff 0.002
        let sos = butter_highpass(4, 0.05, 50.0);
        let x: Vec<f64> = (0..500).map(|i| 1.0 + (2.0 * PI * 5.0 * i as f64 / 50.0).sin()).collect();
        let y = sosfiltfilt(&sos, &x);
        assert!(y.iter().all(|v| v.is_finite()));
        let amp = tone_amplitude(&y[100..400], 50.0, 5.0);
        assert!((amp - 1.0).abs() < 0.05, "5 Hz gain {amp}");
    }
}
