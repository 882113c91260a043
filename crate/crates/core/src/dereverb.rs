//! Single-channel weighted prediction error (WPE) dereverberation and the
//! time-domain split of a signal into direct and reverberant parts.
//!
//! WPE runs independently in every STFT bin. It predicts the late
//! reverberation of frame `t` from frames `t - delay - k`, `k < taps`, using
//! a filter fitted by least squares weighted with the inverse of the current
//! estimate of the direct-signal power, and subtracts the prediction.

use ndarray::Axis;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{AudioClip, ComplexSpectrogram, Stft, StftConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WpeConfig {
    pub taps: usize,
    pub delay: usize,
    pub iterations: usize,
    /// Diagonal loading factor, scaled by `trace / taps`.
    pub regularization: f64,
    /// Lower bound on the power weights as a fraction of the largest
    /// time-frequency power in the analysed spectrogram.
    pub power_floor: f64,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self {
            taps: 60,
            delay: 5,
            iterations: 5,
            regularization: 1e-6,
            power_floor: 1e-10,
        }
    }
}

impl WpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 || self.delay == 0 || self.iterations == 0 {
            return Err(Error::invalid(format!(
                "WPE needs taps, delay and iterations >= 1, got {self:?}"
            )));
        }
        if !(self.regularization >= 0.0 && self.power_floor > 0.0) {
            return Err(Error::invalid(
                "WPE regularization must be >= 0 and power floor > 0",
            ));
        }
        Ok(())
    }
}

/// Direct estimate `d` and reverberant residual `r = x - d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectReverbPair {
    pub direct: AudioClip,
    pub reverberant: AudioClip,
    pub source_len: usize,
}

/// Dereverberates every frequency bin of `spec`. Output has the input's shape.
pub fn wpe(spec: &ComplexSpectrogram, cfg: &WpeConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let frames = spec.num_frames();
    if frames <= cfg.delay + cfg.taps {
        return Err(Error::invalid(format!(
            "WPE needs more than delay + taps = {} frames, got {frames}",
            cfg.delay + cfg.taps
        )));
    }
    if spec.values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::invalid("WPE input contains non-finite values"));
    }

    let peak = spec.values.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(spec.clone());
    }
    let floor = cfg.power_floor * peak;

    let columns: Vec<Vec<Complex64>> = spec
        .values
        .axis_iter(Axis(1))
        .map(|c| c.to_vec())
        .collect();
    let processed = columns
        .par_iter()
        .map(|col| wpe_bin(col, cfg, floor))
        .collect::<Result<Vec<_>>>()?;

    let mut out = spec.clone();
    for (mut dst, src) in out.values.axis_iter_mut(Axis(1)).zip(processed) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d = s;
        }
    }
    Ok(out)
}

fn wpe_bin(x: &[Complex64], cfg: &WpeConfig, floor: f64) -> Result<Vec<Complex64>> {
    let taps = cfg.taps;
    let frames = x.len();
    let delayed = |t: usize, k: usize| -> Complex64 {
        match t.checked_sub(cfg.delay + k) {
            Some(i) => x[i],
            None => Complex64::new(0.0, 0.0),
        }
    };

    let mut direct = x.to_vec();
    let mut corr = vec![Complex64::new(0.0, 0.0); taps * taps];
    let mut cross = vec![Complex64::new(0.0, 0.0); taps];
    let mut window = vec![Complex64::new(0.0, 0.0); taps];
    for _ in 0..cfg.iterations {
        corr.fill(Complex64::new(0.0, 0.0));
        cross.fill(Complex64::new(0.0, 0.0));
        for t in cfg.delay..frames {
            let inv_power = 1.0 / direct[t].norm_sqr().max(floor);
            for (k, w) in window.iter_mut().enumerate() {
                *w = delayed(t, k);
            }
            let target = x[t].conj();
            for i in 0..taps {
                let a = window[i] * inv_power;
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                cross[i] += a * target;
                let row = &mut corr[i * taps..(i + 1) * taps];
                for j in i..taps {
                    row[j] += a * window[j].conj();
                }
            }
        }
        for i in 0..taps {
            for j in 0..i {
                corr[i * taps + j] = corr[j * taps + i].conj();
            }
        }

        let filter = solve_regularized(&corr, &cross, taps, cfg.regularization)?;
        for t in 0..frames {
            let mut prediction = Complex64::new(0.0, 0.0);
            for (k, g) in filter.iter().enumerate() {
                prediction += g.conj() * delayed(t, k);
            }
            direct[t] = x[t] - prediction;
        }
    }
    Ok(direct)
}

/// Solves `(A + rho * tr(A)/n * I) g = b`, retrying once with ten times the
/// loading if the Cholesky factorisation breaks down.
fn solve_regularized(a: &[Complex64], b: &[Complex64], n: usize, rho: f64) -> Result<Vec<Complex64>> {
    let trace: f64 = (0..n).map(|i| a[i * n + i].re).sum();
    if !(trace > 0.0) {
        // nothing observed in this bin: no prediction
        return Ok(vec![Complex64::new(0.0, 0.0); n]);
    }
    for loading in [rho, 10.0 * rho] {
        let mut m = a.to_vec();
        for i in 0..n {
            m[i * n + i] += trace / n as f64 * loading;
        }
        if let Some(g) = cholesky_solve(&mut m, b, n) {
            return Ok(g);
        }
    }
    Err(Error::Numerical(format!(
        "WPE normal equations not positive definite even with loading {}",
        10.0 * rho
    )))
}

/// In-place Cholesky of a Hermitian matrix (row-major), then two triangular
/// solves. Returns `None` when a pivot is not positive.
fn cholesky_solve(m: &mut [Complex64], b: &[Complex64], n: usize) -> Option<Vec<Complex64>> {
    // lower factor L stored in the lower triangle, m = L L^H
    for j in 0..n {
        let mut diag = m[j * n + j].re;
        for k in 0..j {
            diag -= m[j * n + k].norm_sqr();
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        m[j * n + j] = Complex64::new(ljj, 0.0);
        for i in j + 1..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= m[i * n + k] * m[j * n + k].conj();
            }
            m[i * n + j] = s / ljj;
        }
    }
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= m[i * n + k] * y[k];
        }
        y[i] = s / m[i * n + i].re;
    }
    let mut g = vec![Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= m[k * n + i].conj() * g[k];
        }
        g[i] = s / m[i * n + i].re;
    }
    Some(g)
}

/// Estimates the direct component of `w_channel` with WPE and returns it
/// together with the residual `x - d`, both of the input's length.
pub fn split_direct_reverb(
    w_channel: &AudioClip,
    stft_cfg: StftConfig,
    wpe_cfg: &WpeConfig,
) -> Result<DirectReverbPair> {
    w_channel.require_channels(1)?;
    let x = w_channel.channel(0);
    if x.len() < stft_cfg.win_len {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than the {}-sample window",
            x.len(),
            stft_cfg.win_len
        )));
    }
    let stft = Stft::new(stft_cfg)?;
    let spec = stft.forward(x, w_channel.sample_rate())?;
    let mut direct = stft.inverse(&wpe(&spec, wpe_cfg)?)?;
    direct.resize(x.len(), 0.0);
    let reverberant: Vec<f64> = x.iter().zip(&direct).map(|(x, d)| x - d).collect();
    let sr = w_channel.sample_rate();
    Ok(DirectReverbPair {
        direct: AudioClip::mono(direct, sr)?,
        reverberant: AudioClip::mono(reverberant, sr)?,
        source_len: x.len(),
    })
}
