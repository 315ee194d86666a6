use crate::error::{Error, Result};

/// Linear interpolation onto a uniform grid at `fs_out`. Output length is
/// `floor(len · fs_out / fs_in)`; sample `j` sits at input position
/// `j · fs_in / fs_out`.
pub fn resample(signal: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    if !(fs_in > 0.0 && fs_out > 0.0) {
        return Err(Error::invalid("resample", format!("rates must be positive, got {fs_in} and {fs_out}")));
    }
    if fs_in == fs_out {
        return Ok(signal.to_vec());
    }
    let n_out = (signal.len() as f64 * fs_out / fs_in).floor() as usize;
    let last = signal.len().saturating_sub(1);
    Ok((0..n_out)
        .map(|j| {
            let pos = j as f64 * fs_in / fs_out;
            let i = (pos.floor() as usize).min(last);
            let frac = pos - i as f64;
            if i == last || frac == 0.0 {
                signal[i]
            } else {
                signal[i] + frac * (signal[i + 1] - signal[i])
            }
        })
        .collect())
}
