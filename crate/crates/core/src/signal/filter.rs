//! IIR filter design and application with cascaded second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One section: `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad { b: [1.0, 0.0, 0.0], a: [0.0, 0.0] };

    pub fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = 1.0 + zi * (self.a[0] + zi * self.a[1]);
        num / den
    }

    /// Roots of `z² + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let [a1, a2] = self.a;
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    Forward,
    #[default]
    ForwardBackward,
}

impl BiquadCascade {
    pub fn new(sections: Vec<Biquad>) -> Self {
        Self { sections }
    }

    /// Sections applied one after another.
    pub fn then(mut self, other: &BiquadCascade) -> Self {
        self.sections.extend_from_slice(&other.sections);
        self
    }

    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    pub fn response(&self, f_hz: f64, fs: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * f_hz / fs);
        self.sections.iter().map(|s| s.response(z)).product()
    }

    pub fn magnitude(&self, f_hz: f64, fs: f64) -> f64 {
        self.response(f_hz, fs).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    /// Largest pole radius; the cascade is stable when this is below 1.
    pub fn pole_radius(&self) -> f64 {
        self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.pole_radius() < 1.0 - 1e-6
    }
}

fn check_band(op: &'static str, f: f64, fs: f64) -> Result<()> {
    if !(fs > 0.0) || !(f > 0.0 && f < fs / 2.0) {
        return Err(Error::invalid(op, format!("frequency {f} Hz outside (0, {}) Hz", fs / 2.0)));
    }
    Ok(())
}

fn bilinear(s: Complex64, fs2: f64) -> Complex64 {
    (fs2 + s) / (fs2 - s)
}

/// Butterworth bandpass from an `order`-pole lowpass prototype, giving
/// `order` sections. Unity gain at the band centre.
pub fn design_bandpass(low_hz: f64, high_hz: f64, fs: f64, order: usize) -> Result<BiquadCascade> {
    check_band("design_bandpass", low_hz, fs)?;
    check_band("design_bandpass", high_hz, fs)?;
    if low_hz >= high_hz {
        return Err(Error::invalid("design_bandpass", format!("low edge {low_hz} Hz not below high edge {high_hz} Hz")));
    }
    if order == 0 {
        return Err(Error::invalid("design_bandpass", "order must be at least 1"));
    }
    let fs2 = 2.0 * fs;
    let w1 = fs2 * (PI * low_hz / fs).tan();
    let w2 = fs2 * (PI * high_hz / fs).tan();
    let (bw, w0) = (w2 - w1, (w1 * w2).sqrt());

    let n = order as f64;
    let mut digital = Vec::with_capacity(2 * order);
    for k in 1..=order {
        let p = Complex64::from_polar(1.0, PI * (2.0 * k as f64 + n - 1.0) / (2.0 * n));
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0 * w0).sqrt();
        for s in [(pb + disc) / 2.0, (pb - disc) / 2.0] {
            digital.push(bilinear(s, fs2));
        }
    }

    let mut complex: Vec<Complex64> = digital.iter().copied().filter(|z| z.im > 1e-12).collect();
    let mut real: Vec<f64> = digital.iter().filter(|z| z.im.abs() <= 1e-12).map(|z| z.re).collect();
    complex.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    real.sort_by(f64::total_cmp);
    let mut sections: Vec<Biquad> = complex
        .iter()
        .map(|z| Biquad { b: [1.0, 0.0, -1.0], a: [-2.0 * z.re, z.norm_sqr()] })
        .collect();
    for pair in real.chunks(2) {
        let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [-(r1 + r2), r1 * r2] });
    }
    if sections.len() != order {
        return Err(Error::invalid("design_bandpass", "pole pairing failed; band too narrow"));
    }

    let mut cascade = BiquadCascade::new(sections);
    let f_center = fs / PI * (w0 / fs2).atan();
    let gain = cascade.magnitude(f_center, fs).recip().powf(1.0 / n);
    for s in &mut cascade.sections {
        s.b.iter_mut().for_each(|b| *b *= gain);
    }
    Ok(cascade)
}

/// Single-section notch with a null at `f0_hz`.
pub fn design_notch(f0_hz: f64, q: f64, fs: f64) -> Result<BiquadCascade> {
    check_band("design_notch", f0_hz, fs)?;
    if !(q > 0.0) {
        return Err(Error::invalid("design_notch", format!("quality factor {q} must be positive")));
    }
    let w0 = 2.0 * PI * f0_hz / fs;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let c = -2.0 * w0.cos() / a0;
    Ok(BiquadCascade::new(vec![Biquad { b: [1.0 / a0, c, 1.0 / a0], a: [c, (1.0 - alpha) / a0] }]))
}

fn run_section(s: &Biquad, x: &mut [f64], mut s1: f64, mut s2: f64) {
    let [b0, b1, b2] = s.b;
    let [a1, a2] = s.a;
    for v in x.iter_mut() {
        let input = *v;
        let y = b0 * input + s1;
        s1 = b1 * input - a1 * y + s2;
        s2 = b2 * input - a2 * y;
        *v = y;
    }
}

/// Runs the cascade in place, starting every section in the steady state
/// for a constant input equal to `x[0]` when `steady` is set.
fn run_cascade(filt: &BiquadCascade, x: &mut [f64], steady: bool) {
    let mut level = if steady { x.first().copied().unwrap_or(0.0) } else { 0.0 };
    for s in &filt.sections {
        let out = s.dc_gain() * level;
        let s2 = s.b[2] * level - s.a[1] * out;
        let s1 = s.b[1] * level - s.a[0] * out + s2;
        run_section(s, x, s1, s2);
        level = out;
    }
}

/// Edge padding length used by the zero-phase mode.
pub fn padlen(filt: &BiquadCascade) -> usize {
    3 * filt.order()
}

pub fn apply_filter(signal: &[f64], filt: &BiquadCascade, mode: FilterMode) -> Result<Vec<f64>> {
    match mode {
        FilterMode::Forward => {
            let mut y = signal.to_vec();
            run_cascade(filt, &mut y, false);
            Ok(y)
        }
        FilterMode::ForwardBackward => {
            let n = signal.len();
            let pad = padlen(filt);
            if n <= pad {
                return Err(Error::invalid(
                    "apply_filter",
                    format!("zero-phase filtering needs more than {pad} samples, got {n}"),
                ));
            }
            let mut ext = Vec::with_capacity(n + 2 * pad);
            ext.extend((1..=pad).rev().map(|i| 2.0 * signal[0] - signal[i]));
            ext.extend_from_slice(signal);
            ext.extend((1..=pad).map(|i| 2.0 * signal[n - 1] - signal[n - 1 - i]));
            run_cascade(filt, &mut ext, true);
            ext.reverse();
            run_cascade(filt, &mut ext, true);
            ext.reverse();
            Ok(ext[pad..pad + n].to_vec())
        }
    }
}
