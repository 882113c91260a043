//! Shared signal-processing substrate: Hann windows, STFT with weighted
//! overlap-add inverse, HTK mel filterbank and log-power compression.
//!
//! Framing convention: frame `t` reads samples `[t*hop, t*hop + win_len)`,
//! with zeros past the end of the signal, and there are exactly
//! `floor(len / hop)` frames. No centre padding is applied.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, EPSILON};

/// Floor for the accumulated squared-window sum in the inverse STFT.
pub const ISTFT_WINDOW_FLOOR: f64 = 1e-8;

/// A multichannel waveform. Samples are full-scale ±1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if channels.is_empty() {
            return Err(Error::invalid("audio clip needs at least one channel"));
        }
        let len = channels[0].len();
        if let Some(bad) = channels.iter().position(|c| c.len() != len) {
            return Err(Error::invalid(format!(
                "channel {bad} has {} samples, channel 0 has {len}",
                channels[bad].len()
            )));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Copies `[start, start + len)` of every channel, zero-padding past the end.
    pub fn segment(&self, start: usize, len: usize) -> AudioClip {
        let channels = self
            .channels
            .iter()
            .map(|c| {
                let mut out = vec![0.0; len];
                if start < c.len() {
                    let end = (start + len).min(c.len());
                    out[..end - start].copy_from_slice(&c[start..end]);
                }
                out
            })
            .collect();
        AudioClip {
            channels,
            sample_rate: self.sample_rate,
        }
    }

    pub fn require_channels(&self, expected: usize) -> Result<()> {
        if self.num_channels() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} channel(s), got {}",
                self.num_channels()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub win_len: usize,
    pub fft_len: usize,
    pub hop: usize,
}

impl StftConfig {
    /// 512-point Hann window, hop 150: the log-mel / IV / DRR pipeline.
    pub const FEATURE: StftConfig = StftConfig {
        win_len: 512,
        fft_len: 512,
        hop: 150,
    };

    /// 1014-point Hann window in a 1024-point transform: the stpACC pipeline.
    pub const AUTOCORRELATION: StftConfig = StftConfig {
        win_len: 1014,
        fft_len: 1024,
        hop: 150,
    };

    pub fn new(win_len: usize, fft_len: usize, hop: usize) -> Result<Self> {
        let cfg = Self {
            win_len,
            fft_len,
            hop,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fft_len >= self.win_len && self.win_len > self.hop && self.hop > 0) {
            return Err(Error::invalid(format!(
                "STFT config needs fft_len >= win_len > hop > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// One-sided bin count.
    pub fn num_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    pub fn num_frames(&self, len: usize) -> usize {
        len / self.hop
    }
}

/// One-sided STFT grid indexed `(frame, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, config: StftConfig, sample_rate: u32) -> Self {
        Self {
            values: Array2::zeros((frames, config.num_bins())),
            config,
            sample_rate,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.values.ncols()
    }

    /// `|X(t,f)|^2`.
    pub fn power(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.mapv(|v| v * factor),
            ..*self
        }
    }

    pub fn same_shape(&self, other: &ComplexSpectrogram) -> bool {
        self.values.dim() == other.values.dim()
    }
}

/// Periodic Hann window, `w[i] = 0.5 * (1 - cos(2*pi*i/n))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("window length must be at least 1"));
    }
    Ok((0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect())
}

/// Reusable forward/inverse transform state for one [`StftConfig`].
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            config,
            window: hann_window(config.win_len)?,
            forward: planner.plan_fft_forward(config.fft_len),
            inverse: planner.plan_fft_inverse(config.fft_len),
        })
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Windowed, zero-padded, full two-sided spectrum of the frame starting at `start`.
    pub fn frame_spectrum(&self, samples: &[f64], start: usize, buf: &mut [Complex64]) {
        let cfg = self.config;
        buf.fill(Complex64::new(0.0, 0.0));
        for (i, w) in self.window.iter().enumerate() {
            if let Some(&s) = samples.get(start + i) {
                buf[i] = Complex64::new(s * w, 0.0);
            }
        }
        debug_assert_eq!(buf.len(), cfg.fft_len);
        self.forward.process(buf);
    }

    pub fn forward(&self, samples: &[f64], sample_rate: u32) -> Result<ComplexSpectrogram> {
        if samples.is_empty() {
            return Err(Error::invalid("cannot transform an empty signal"));
        }
        let cfg = self.config;
        let frames = cfg.num_frames(samples.len());
        let bins = cfg.num_bins();
        let mut spec = ComplexSpectrogram::zeros(frames, cfg, sample_rate);
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
        for (t, mut row) in spec.values.axis_iter_mut(Axis(0)).enumerate() {
            self.frame_spectrum(samples, t * cfg.hop, &mut buf);
            for (dst, src) in row.iter_mut().zip(&buf[..bins]) {
                *dst = *src;
            }
        }
        Ok(spec)
    }

    /// Weighted overlap-add with the analysis window as synthesis window,
    /// normalised by the accumulated squared window (floored at
    /// [`ISTFT_WINDOW_FLOOR`]). Output length is `frames * hop`.
    pub fn inverse(&self, spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
        let cfg = self.config;
        if spec.config != cfg {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram was made with {:?}, inverse configured for {cfg:?}",
                spec.config
            )));
        }
        if spec.num_bins() != cfg.num_bins() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} bins, got {}",
                cfg.num_bins(),
                spec.num_bins()
            )));
        }
        let frames = spec.num_frames();
        let out_len = frames * cfg.hop;
        let span = (frames.saturating_sub(1)) * cfg.hop + cfg.win_len;
        let mut acc = vec![0.0; span.max(out_len)];
        let mut norm = vec![0.0; span.max(out_len)];
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
        let scale = 1.0 / cfg.fft_len as f64;
        let half = cfg.fft_len / 2;
        for (t, row) in spec.values.axis_iter(Axis(0)).enumerate() {
            for (dst, src) in buf.iter_mut().zip(row.iter()) {
                *dst = *src;
            }
            for f in 1..cfg.fft_len - half {
                buf[cfg.fft_len - f] = buf[f].conj();
            }
            // a real signal has purely real DC and Nyquist bins
            buf[0].im = 0.0;
            if cfg.fft_len % 2 == 0 {
                buf[half].im = 0.0;
            }
            self.inverse.process(&mut buf);
            let start = t * cfg.hop;
            for (i, w) in self.window.iter().enumerate() {
                acc[start + i] += buf[i].re * scale * w;
                norm[start + i] += w * w;
            }
        }
        acc.truncate(out_len);
        Ok(acc
            .iter()
            .zip(&norm)
            .map(|(a, n)| a / n.max(ISTFT_WINDOW_FLOOR))
            .collect())
    }
}

pub fn stft(samples: &[f64], sample_rate: u32, cfg: StftConfig) -> Result<ComplexSpectrogram> {
    Stft::new(cfg)?.forward(samples, sample_rate)
}

pub fn istft(spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
    Stft::new(spec.config)?.inverse(spec)
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over one-sided FFT bins, `weights[(k, f)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    pub f_min: f64,
    pub f_max: f64,
    /// Centre frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.weights.ncols()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.weights.sum_axis(Axis(1)).to_vec()
    }

    /// The default 128-band filterbank over `[0, sr/2]`.
    pub fn standard(fft_len: usize, sample_rate: u32) -> Result<Self> {
        mel_filterbank(128, fft_len, sample_rate, 0.0, sample_rate as f64 / 2.0)
    }
}

/// Builds `n_mels` peak-normalised triangular filters with centres equally
/// spaced on the HTK mel scale between `f_min` and `f_max`.
///
/// Each row is scaled so that its largest weight is exactly 1. A filter
/// narrower than the FFT bin spacing may contain no bin at all; it then
/// collapses onto the single bin nearest its centre.
pub fn mel_filterbank(
    n_mels: usize,
    fft_len: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_mels == 0 || fft_len < 2 || sample_rate == 0 {
        return Err(Error::invalid(
            "mel filterbank needs n_mels >= 1, fft_len >= 2 and a positive sample rate",
        ));
    }
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(Error::invalid(format!(
            "mel range must satisfy 0 <= f_min < f_max <= {nyquist}, got [{f_min}, {f_max}]"
        )));
    }
    let bins = fft_len / 2 + 1;
    let bin_hz = sample_rate as f64 / fft_len as f64;
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    let mut weights = Array2::zeros((n_mels, bins));
    for k in 0..n_mels {
        let (lo, center, hi) = (edges[k], edges[k + 1], edges[k + 2]);
        let mut row = weights.row_mut(k);
        for (f, w) in row.iter_mut().enumerate() {
            let hz = f as f64 * bin_hz;
            let rising = (hz - lo) / (center - lo);
            let falling = (hi - hz) / (hi - center);
            *w = rising.min(falling).max(0.0);
        }
        let peak = row.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            row.mapv_inplace(|w| w / peak);
        } else {
            let nearest = ((center / bin_hz).round() as usize).min(bins - 1);
            row[nearest] = 1.0;
        }
    }
    Ok(MelFilterbank {
        weights,
        f_min,
        f_max,
        centers_hz: edges[1..=n_mels].to_vec(),
    })
}

/// `out(t, k) = sum_f H(k, f) * power(t, f)`.
pub fn apply_mel(power: ArrayView2<f64>, fb: &MelFilterbank) -> Result<Array2<f64>> {
    if power.ncols() != fb.num_bins() {
        return Err(Error::ShapeMismatch(format!(
            "power grid has {} bins, filterbank expects {}",
            power.ncols(),
            fb.num_bins()
        )));
    }
    Ok(power.dot(&fb.weights.t()))
}

/// `10 * log10(max(x, 1e-10))`.
pub fn log_power_db(x: f64) -> f64 {
    10.0 * x.max(EPSILON).log10()
}

pub fn log_power(x: ArrayView2<f64>) -> Array2<f64> {
    x.mapv(log_power_db)
}
