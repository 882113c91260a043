//! Network input features computed from 24 kHz FOA audio.
//!
//! Every feature map is `channels x frames x 128`. Frames follow the
//! 512-point / hop-150 framing of [`StftConfig::FEATURE`]; the stpACC map
//! uses the same hop with a 1014-point window, so all maps line up frame by
//! frame and can be stacked.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dereverb::{split_direct_reverb, DirectReverbPair, WpeConfig};
use crate::dsp::{
    apply_mel, hann_window, log_power, AudioClip, ComplexSpectrogram, MelFilterbank, Stft,
    StftConfig,
};
use crate::{Error, Result, EPSILON, SAMPLE_RATE};

pub const N_BINS: usize = 128;

/// Length of the Hann moving average applied to the squared autocorrelation.
pub const ACC_SMOOTHING_LEN: usize = 8;
/// Positive lags kept from the autocorrelation before pooling.
pub const ACC_LAGS: usize = 512;
/// Consecutive lags averaged into one output bin.
pub const ACC_POOL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    None,
    Drr,
    DPlusR,
    #[serde(rename = "stpacc")]
    StpAcc,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 4] = [
        FeatureMode::None,
        FeatureMode::Drr,
        FeatureMode::DPlusR,
        FeatureMode::StpAcc,
    ];

    pub fn num_channels(self) -> usize {
        match self {
            FeatureMode::None => 7,
            FeatureMode::Drr | FeatureMode::StpAcc => 8,
            FeatureMode::DPlusR => 9,
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            FeatureMode::None => 0,
            FeatureMode::Drr => 1,
            FeatureMode::DPlusR => 2,
            FeatureMode::StpAcc => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::None => "none",
            FeatureMode::Drr => "drr",
            FeatureMode::DPlusR => "dplusr",
            FeatureMode::StpAcc => "stpacc",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(FeatureMode::None),
            "drr" => Ok(FeatureMode::Drr),
            "dplusr" | "d_plus_r" | "d+r" => Ok(FeatureMode::DPlusR),
            "stpacc" => Ok(FeatureMode::StpAcc),
            other => Err(Error::invalid(format!(
                "unknown feature mode {other:?} (expected none, drr, dplusr or stpacc)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinSemantics {
    MelFrequency,
    TimeLag,
}

/// Every parameter that shapes the feature values. Written next to each
/// serialized tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionParams {
    pub sample_rate: u32,
    pub stft: StftConfig,
    pub window: String,
    pub framing: String,
    pub mel_scale: String,
    pub mel_norm: String,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub epsilon: f64,
    pub iv_normalization: String,
    pub wpe: WpeConfig,
    pub wpe_stft: StftConfig,
    pub acc_stft: StftConfig,
    pub acc_smoothing: String,
    pub acc_pooling: String,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            stft: StftConfig::FEATURE,
            window: "hann-periodic".into(),
            framing: "frame t = samples [t*hop, t*hop+win), tail zero-padded, floor(len/hop) frames".into(),
            mel_scale: "htk 2595*log10(1+f/700)".into(),
            mel_norm: "peak-normalized triangles".into(),
            n_mels: N_BINS,
            f_min: 0.0,
            f_max: SAMPLE_RATE as f64 / 2.0,
            epsilon: EPSILON,
            iv_normalization: "per-bin unit norm (+1e-10), mel-weighted average".into(),
            wpe: WpeConfig::default(),
            wpe_stft: StftConfig::FEATURE,
            acc_stft: StftConfig::AUTOCORRELATION,
            acc_smoothing: "normalize, square, centered 8-point periodic Hann with unit sum (circular)".into(),
            acc_pooling: "lags 1..=512, mean of 4 consecutive lags".into(),
        }
    }
}

/// Stacked network input `(channel, frame, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub data: Array3<f32>,
    pub channel_names: Vec<String>,
    pub mode: FeatureMode,
    /// Feature frames per second.
    pub frame_rate: f64,
    pub bin_semantics: Vec<BinSemantics>,
    pub params: ExtractionParams,
}

impl FeatureStack {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn channel(&self, name: &str) -> Option<ndarray::ArrayView2<'_, f32>> {
        let idx = self.channel_names.iter().position(|n| n == name)?;
        Some(self.data.index_axis(Axis(0), idx))
    }

    /// JSON metadata stored alongside the payload in tensor files.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "mode": self.mode,
            "channel_names": self.channel_names,
            "frame_rate": self.frame_rate,
            "bin_semantics": self.bin_semantics,
            "params": self.params,
        })
    }
}

/// Holds the transforms and filterbank shared by all feature maps.
pub struct FeatureExtractor {
    params: ExtractionParams,
    stft: Stft,
    filterbank: MelFilterbank,
    acc: AutocorrelationFeature,
}

impl FeatureExtractor {
    pub fn new(params: ExtractionParams) -> Result<Self> {
        let filterbank = crate::dsp::mel_filterbank(
            params.n_mels,
            params.stft.fft_len,
            params.sample_rate,
            params.f_min,
            params.f_max,
        )?;
        if params.n_mels != N_BINS {
            return Err(Error::invalid(format!(
                "feature stacks use {N_BINS} bins, got n_mels = {}",
                params.n_mels
            )));
        }
        Ok(Self {
            stft: Stft::new(params.stft)?,
            acc: AutocorrelationFeature::new(params.acc_stft)?,
            filterbank,
            params,
        })
    }

    pub fn params(&self) -> &ExtractionParams {
        &self.params
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn spectrogram(&self, samples: &[f64]) -> Result<ComplexSpectrogram> {
        self.stft.forward(samples, self.params.sample_rate)
    }

    fn check_rate(&self, clip: &AudioClip) -> Result<()> {
        if clip.sample_rate() != self.params.sample_rate {
            return Err(Error::invalid(format!(
                "expected {} Hz audio, got {} Hz",
                self.params.sample_rate,
                clip.sample_rate()
            )));
        }
        Ok(())
    }

    /// Log-mel spectrogram of one channel, `frames x 128`.
    pub fn logmel(&self, samples: &[f64]) -> Result<Array2<f64>> {
        let spec = self.spectrogram(samples)?;
        Ok(log_power(apply_mel(spec.power().view(), &self.filterbank)?.view()))
    }

    pub fn logmel_foa(&self, foa: &AudioClip) -> Result<Array3<f64>> {
        foa.require_channels(4)?;
        self.check_rate(foa)?;
        let maps = foa
            .channels()
            .iter()
            .map(|c| self.logmel(c))
            .collect::<Result<Vec<_>>>()?;
        stack_maps(&maps)
    }

    pub fn foa_spectrograms(&self, foa: &AudioClip) -> Result<Vec<ComplexSpectrogram>> {
        foa.require_channels(4)?;
        self.check_rate(foa)?;
        foa.channels().iter().map(|c| self.spectrogram(c)).collect()
    }

    pub fn intensity_vectors(&self, foa_spec: &[ComplexSpectrogram]) -> Result<Array3<f64>> {
        intensity_vectors(foa_spec, &self.filterbank)
    }

    pub fn split(&self, w_channel: &AudioClip) -> Result<DirectReverbPair> {
        split_direct_reverb(w_channel, self.params.wpe_stft, &self.params.wpe)
    }

    pub fn drr(&self, pair: &DirectReverbPair) -> Result<Array3<f64>> {
        drr_features(pair, self.params.stft, &self.filterbank)
    }

    pub fn d_plus_r(&self, pair: &DirectReverbPair) -> Result<Array3<f64>> {
        stack_maps(&[
            self.logmel(pair.direct.channel(0))?,
            self.logmel(pair.reverberant.channel(0))?,
        ])
    }

    pub fn stpacc(&self, w_channel: &AudioClip) -> Result<Array3<f64>> {
        w_channel.require_channels(1)?;
        self.check_rate(w_channel)?;
        let map = self.acc.compute(w_channel.channel(0))?;
        Ok(map.insert_axis(Axis(0)))
    }

    /// Builds the full input stack:
    /// `[logmel W, X, Y, Z, IV x, y, z, distance channels...]`.
    pub fn stack(&self, foa: &AudioClip, mode: FeatureMode) -> Result<FeatureStack> {
        foa.require_channels(4)?;
        self.check_rate(foa)?;
        if foa.channels().iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("audio contains non-finite samples"));
        }
        let w = AudioClip::mono(foa.channel(0).to_vec(), foa.sample_rate())?;

        let mut blocks = vec![self.logmel_foa(foa)?];
        blocks.push(self.intensity_vectors(&self.foa_spectrograms(foa)?)?);
        let mut names: Vec<String> = ["logmel_w", "logmel_x", "logmel_y", "logmel_z", "iv_x", "iv_y", "iv_z"]
            .into_iter()
            .map(String::from)
            .collect();
        let mut semantics = vec![BinSemantics::MelFrequency; 7];
        match mode {
            FeatureMode::None => {}
            FeatureMode::Drr => {
                blocks.push(self.drr(&self.split(&w)?)?);
                names.push("drr".into());
                semantics.push(BinSemantics::MelFrequency);
            }
            FeatureMode::DPlusR => {
                blocks.push(self.d_plus_r(&self.split(&w)?)?);
                names.extend(["logmel_direct".into(), "logmel_reverb".into()]);
                semantics.extend([BinSemantics::MelFrequency; 2]);
            }
            FeatureMode::StpAcc => {
                blocks.push(self.stpacc(&w)?);
                names.push("stpacc".into());
                semantics.push(BinSemantics::TimeLag);
            }
        }

        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::ShapeMismatch(format!("feature maps do not align: {e}")))?
            .mapv(|v| v as f32);
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("feature stack contains non-finite values".into()));
        }
        debug_assert_eq!(data.dim().0, mode.num_channels());
        Ok(FeatureStack {
            data,
            channel_names: names,
            mode,
            frame_rate: self.params.sample_rate as f64 / self.params.stft.hop as f64,
            bin_semantics: semantics,
            params: self.params.clone(),
        })
    }
}

fn stack_maps(maps: &[Array2<f64>]) -> Result<Array3<f64>> {
    let views: Vec<_> = maps.iter().map(|m| m.view()).collect();
    ndarray::stack(Axis(0), &views)
        .map_err(|e| Error::ShapeMismatch(format!("feature maps do not align: {e}")))
}

/// Stacks features with the default parameters.
pub fn stack_features(foa: &AudioClip, mode: FeatureMode) -> Result<FeatureStack> {
    FeatureExtractor::new(ExtractionParams::default())?.stack(foa, mode)
}

pub fn logmel_foa(foa: &AudioClip) -> Result<Array3<f64>> {
    FeatureExtractor::new(ExtractionParams::default())?.logmel_foa(foa)
}

pub fn stpacc_features(w_channel: &AudioClip) -> Result<Array3<f64>> {
    FeatureExtractor::new(ExtractionParams::default())?.stpacc(w_channel)
}

/// Direction-normalised intensity vectors in the mel domain, `3 x frames x n_mels`.
///
/// `I(t,f) = Re{conj(W) [X, Y, Z]}` is scaled to unit length per bin, then
/// each component is averaged over every mel filter with the filter weights.
pub fn intensity_vectors(foa_spec: &[ComplexSpectrogram], fb: &MelFilterbank) -> Result<Array3<f64>> {
    if foa_spec.len() != 4 {
        return Err(Error::invalid(format!(
            "intensity vectors need W, X, Y, Z spectrograms, got {}",
            foa_spec.len()
        )));
    }
    if foa_spec.iter().any(|s| !s.same_shape(&foa_spec[0])) {
        return Err(Error::ShapeMismatch("FOA spectrograms differ in shape".into()));
    }
    let w = &foa_spec[0].values;
    let mut components: Vec<Array2<f64>> = foa_spec[1..]
        .iter()
        .map(|a| {
            let mut out = Array2::zeros(w.dim());
            ndarray::Zip::from(&mut out)
                .and(w)
                .and(&a.values)
                .for_each(|o, w, a| *o = (w.conj() * a).re);
            out
        })
        .collect();
    let norm = ndarray::Zip::from(&components[0])
        .and(&components[1])
        .and(&components[2])
        .map_collect(|x, y, z| (x * x + y * y + z * z).sqrt() + EPSILON);
    let row_sums = fb.row_sums();
    let mut mel = Vec::with_capacity(3);
    for c in components.iter_mut() {
        *c /= &norm;
        let mut projected = apply_mel(c.view(), fb)?;
        for (k, mut col) in projected.axis_iter_mut(Axis(1)).enumerate() {
            col /= row_sums[k];
        }
        mel.push(projected);
    }
    stack_maps(&mel)
}

/// Mean direction encoded by an intensity-vector map, as (azimuth, elevation) in degrees.
pub fn iv_direction(iv: &Array3<f64>) -> (f64, f64) {
    let mean = |c: usize| iv.index_axis(Axis(0), c).mean().unwrap_or(0.0);
    let (x, y, z) = (mean(0), mean(1), mean(2));
    let az = y.atan2(x).to_degrees();
    let el = z.atan2((x * x + y * y).sqrt()).to_degrees();
    (az, el)
}

/// Clamped power spectral densities of the direct and reverberant parts.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdPair {
    pub p_direct: Array2<f64>,
    pub p_reverb: Array2<f64>,
    pub epsilon: f64,
}

impl PsdPair {
    pub fn from_pair(pair: &DirectReverbPair, cfg: StftConfig) -> Result<Self> {
        let stft = Stft::new(cfg)?;
        let sr = pair.direct.sample_rate();
        let d = stft.forward(pair.direct.channel(0), sr)?;
        let r = stft.forward(pair.reverberant.channel(0), sr)?;
        if !d.same_shape(&r) {
            return Err(Error::ShapeMismatch(
                "direct and reverberant parts differ in length".into(),
            ));
        }
        Ok(Self::from_spectra(&d, &r))
    }

    pub fn from_spectra(d: &ComplexSpectrogram, r: &ComplexSpectrogram) -> Self {
        Self {
            p_direct: d.power().mapv(|p| p.max(EPSILON)),
            p_reverb: r.power().mapv(|p| p.max(EPSILON)),
            epsilon: EPSILON,
        }
    }

    /// `10 log10(sum_f H(k,f) P_D / P_R)`, `1 x frames x n_mels`.
    pub fn drr_mel(&self, fb: &MelFilterbank) -> Result<Array3<f64>> {
        let ratio = &self.p_direct / &self.p_reverb;
        Ok(log_power(apply_mel(ratio.view(), fb)?.view()).insert_axis(Axis(0)))
    }
}

pub fn drr_features(pair: &DirectReverbPair, cfg: StftConfig, fb: &MelFilterbank) -> Result<Array3<f64>> {
    PsdPair::from_pair(pair, cfg)?.drr_mel(fb)
}

pub fn d_plus_r_features(pair: &DirectReverbPair, cfg: StftConfig, fb: &MelFilterbank) -> Result<Array3<f64>> {
    let stft = Stft::new(cfg)?;
    let sr = pair.direct.sample_rate();
    let maps = [pair.direct.channel(0), pair.reverberant.channel(0)]
        .into_iter()
        .map(|x| {
            let spec = stft.forward(x, sr)?;
            Ok(log_power(apply_mel(spec.power().view(), fb)?.view()))
        })
        .collect::<Result<Vec<_>>>()?;
    stack_maps(&maps)
}

/// Short-term power of the normalised autocorrelation (stpACC).
pub struct AutocorrelationFeature {
    stft: Stft,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
    kernel: Vec<f64>,
}

impl AutocorrelationFeature {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        if cfg.fft_len < 2 * ACC_LAGS {
            return Err(Error::invalid(format!(
                "autocorrelation needs fft_len >= {} to keep {ACC_LAGS} positive lags",
                2 * ACC_LAGS
            )));
        }
        let mut kernel = hann_window(ACC_SMOOTHING_LEN)?;
        let sum: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= sum);
        Ok(Self {
            stft: Stft::new(cfg)?,
            inverse: FftPlanner::new().plan_fft_inverse(cfg.fft_len),
            kernel,
        })
    }

    /// `ACC(tau) / max_tau |ACC(tau)|` of the frame starting at `start`,
    /// over all `fft_len` circular lags.
    pub fn normalized_acc(&self, samples: &[f64], start: usize) -> Vec<f64> {
        let n = self.stft.config().fft_len;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        self.stft.frame_spectrum(samples, start, &mut buf);
        for v in buf.iter_mut() {
            *v = Complex64::new(v.norm_sqr(), 0.0);
        }
        self.inverse.process(&mut buf);
        let acc: Vec<f64> = buf.iter().map(|v| v.re / n as f64).collect();
        let peak = acc.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(EPSILON);
        acc.into_iter().map(|v| v / peak).collect()
    }

    /// Squares and smooths a normalised autocorrelation, then pools lags
    /// `1..=512` in groups of four.
    pub fn frame_feature(&self, acc: &[f64]) -> Vec<f64> {
        let n = acc.len();
        let centre = ACC_SMOOTHING_LEN / 2;
        let squared: Vec<f64> = acc.iter().map(|v| v * v).collect();
        let smoothed = |tau: usize| -> f64 {
            self.kernel
                .iter()
                .enumerate()
                .map(|(k, h)| h * squared[(tau + n + k - centre) % n])
                .sum()
        };
        (0..ACC_LAGS / ACC_POOL)
            .map(|bin| {
                (1..=ACC_POOL)
                    .map(|j| smoothed(bin * ACC_POOL + j))
                    .sum::<f64>()
                    / ACC_POOL as f64
            })
            .collect()
    }

    /// `frames x 128` stpACC map.
    pub fn compute(&self, samples: &[f64]) -> Result<Array2<f64>> {
        if samples.is_empty() {
            return Err(Error::invalid("cannot compute stpACC of an empty signal"));
        }
        let cfg = self.stft.config();
        let frames = cfg.num_frames(samples.len());
        let mut out = Array2::zeros((frames, ACC_LAGS / ACC_POOL));
        for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let acc = self.normalized_acc(samples, t * cfg.hop);
            for (dst, v) in row.iter_mut().zip(self.frame_feature(&acc)) {
                *dst = v;
            }
        }
        Ok(out)
    }
}

/// Time-mean of a `1 x frames x bins` map over `frames`, per bin.
pub fn frame_average(map: ArrayView2<f64>, frames: std::ops::Range<usize>) -> Result<Vec<f64>> {
    if frames.is_empty() || frames.end > map.nrows() {
        return Err(Error::invalid(format!(
            "frame range {frames:?} is empty or exceeds {} frames",
            map.nrows()
        )));
    }
    Ok(map
        .slice(s![frames, ..])
        .mean_axis(Axis(0))
        .expect("non-empty range")
        .to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(len: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect()
    }

    fn plane_wave(src: &[f64], az: f64, el: f64) -> AudioClip {
        let (az, el) = (az.to_radians(), el.to_radians());
        let gains = [1.0, az.cos() * el.cos(), az.sin() * el.cos(), el.sin()];
        AudioClip::new(
            gains.iter().map(|g| src.iter().map(|s| s * g).collect()).collect(),
            SAMPLE_RATE,
        )
        .unwrap()
    }

    fn extractor() -> FeatureExtractor {
        FeatureExtractor::new(ExtractionParams::default()).unwrap()
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("dplusr".parse::<FeatureMode>().unwrap(), FeatureMode::DPlusR);
        assert_eq!("STPACC".parse::<FeatureMode>().unwrap(), FeatureMode::StpAcc);
        assert!("mfcc".parse::<FeatureMode>().is_err());
        for m in FeatureMode::ALL {
            assert_eq!(m.to_string().parse::<FeatureMode>().unwrap(), m);
            assert_eq!(FeatureMode::from_tag(m.tag()), Some(m));
        }
    }

    #[test]
    fn silence_logmel_is_floor() {
        let foa = AudioClip::new(vec![vec![0.0; 72_000]; 4], SAMPLE_RATE).unwrap();
        let lm = extractor().logmel_foa(&foa).unwrap();
        assert_eq!(lm.dim(), (4, 480, 128));
        assert!(lm.iter().all(|v| (*v + 100.0).abs() < 1e-9));
    }

    #[test]
    fn logmel_rejects_wrong_channel_count() {
        let clip = AudioClip::new(vec![vec![0.0; 4_800]; 2], SAMPLE_RATE).unwrap();
        assert!(extractor().logmel_foa(&clip).is_err());
    }

    #[test]
    fn sine_peaks_in_nearest_filter() {
        let ex = extractor();
        let sine: Vec<f64> = (0..24_000)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 24_000.0).sin())
            .collect();
        let lm = ex.logmel(&sine).unwrap();
        let mean = lm.mean_axis(Axis(0)).unwrap();
        let loudest = (0..128).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
        let nearest = (0..128)
            .min_by(|&a, &b| {
                let ca = (ex.filterbank().centers_hz[a] - 1000.0).abs();
                let cb = (ex.filterbank().centers_hz[b] - 1000.0).abs();
                ca.total_cmp(&cb)
            })
            .unwrap();
        assert_eq!(loudest, nearest);
    }

    #[test]
    fn frontal_plane_wave_iv() {
        let ex = extractor();
        let foa = plane_wave(&noise(24_000, 1, 0.1), 0.0, 0.0);
        let iv = ex.intensity_vectors(&ex.foa_spectrograms(&foa).unwrap()).unwrap();
        assert_eq!(iv.dim(), (3, 160, 128));
        for t in 5..150 {
            for k in 0..128 {
                assert_abs_diff_eq!(iv[(0, t, k)], 1.0, epsilon = 1e-6);
                assert_abs_diff_eq!(iv[(1, t, k)], 0.0, epsilon = 1e-6);
                assert_abs_diff_eq!(iv[(2, t, k)], 0.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn silent_iv_is_zero_and_bounded() {
        let ex = extractor();
        let zero = AudioClip::new(vec![vec![0.0; 4_800]; 4], SAMPLE_RATE).unwrap();
        let iv = ex.intensity_vectors(&ex.foa_spectrograms(&zero).unwrap()).unwrap();
        assert!(iv.iter().all(|v| *v == 0.0));

        let mut chans: Vec<Vec<f64>> = (0..4).map(|c| noise(4_800, 10 + c, 0.3)).collect();
        chans[0] = noise(4_800, 99, 0.3);
        let foa = AudioClip::new(chans, SAMPLE_RATE).unwrap();
        let iv = ex.intensity_vectors(&ex.foa_spectrograms(&foa).unwrap()).unwrap();
        assert!(iv.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn iv_decodes_oblique_direction() {
        let ex = extractor();
        let foa = plane_wave(&noise(12_000, 2, 0.1), -135.0, 30.0);
        let iv = ex.intensity_vectors(&ex.foa_spectrograms(&foa).unwrap()).unwrap();
        let (az, el) = iv_direction(&iv);
        assert_abs_diff_eq!(az, -135.0, epsilon = 1e-6);
        assert_abs_diff_eq!(el, 30.0, epsilon = 1e-6);
    }

    fn pair_from(d: Vec<f64>, r: Vec<f64>) -> DirectReverbPair {
        let n = d.len();
        DirectReverbPair {
            direct: AudioClip::mono(d, SAMPLE_RATE).unwrap(),
            reverberant: AudioClip::mono(r, SAMPLE_RATE).unwrap(),
            source_len: n,
        }
    }

    #[test]
    fn drr_of_equal_parts_is_row_sum() {
        let ex = extractor();
        let x = noise(12_000, 3, 0.2);
        let drr = ex.drr(&pair_from(x.clone(), x.clone())).unwrap();
        let sums = ex.filterbank().row_sums();
        for t in [0, 40, 79] {
            for k in 0..128 {
                assert_abs_diff_eq!(drr[(0, t, k)], 10.0 * sums[k].log10(), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn drr_of_tenfold_direct_power() {
        let ex = extractor();
        let r = noise(12_000, 4, 0.2);
        let d: Vec<f64> = r.iter().map(|v| v * 10f64.sqrt()).collect();
        let drr = ex.drr(&pair_from(d, r)).unwrap();
        let sums = ex.filterbank().row_sums();
        for k in 0..128 {
            assert_abs_diff_eq!(drr[(0, 20, k)], 10.0 + 10.0 * sums[k].log10(), epsilon = 1e-6);
        }
    }

    #[test]
    fn d_plus_r_edge_cases() {
        let ex = extractor();
        let x = noise(12_000, 5, 0.2);
        let dr = ex.d_plus_r(&pair_from(x.clone(), vec![0.0; x.len()])).unwrap();
        assert_eq!(dr.dim(), (2, 80, 128));
        assert!(dr.index_axis(Axis(0), 1).iter().all(|v| (*v + 100.0).abs() < 1e-9));

        let same = ex.d_plus_r(&pair_from(x.clone(), x.clone())).unwrap();
        assert_eq!(same.index_axis(Axis(0), 0), same.index_axis(Axis(0), 1));
        let free = d_plus_r_features(&pair_from(x.clone(), x), StftConfig::FEATURE, ex.filterbank()).unwrap();
        assert_eq!(free, same);
    }

    #[test]
    fn acc_is_one_at_zero_lag() {
        let acc = AutocorrelationFeature::new(StftConfig::AUTOCORRELATION).unwrap();
        let x = noise(6_000, 6, 0.5);
        for start in [0, 150, 3_000] {
            let a = acc.normalized_acc(&x, start);
            assert_abs_diff_eq!(a[0], 1.0, epsilon = 1e-12);
            assert!(a.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }
        let silent = acc.normalized_acc(&[0.0; 2_000], 0);
        assert!(silent.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn smoothing_kernel_is_centred() {
        let acc = AutocorrelationFeature::new(StftConfig::AUTOCORRELATION).unwrap();
        assert_abs_diff_eq!(acc.kernel.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        // a single unit spike at lag 41 must spread symmetrically around 41,
        // landing entirely in pooled bins 9 (lags 37..=40) and 10 (41..=44)
        let mut spike = vec![0.0; 1024];
        spike[41] = 1.0;
        let pooled = acc.frame_feature(&spike);
        let total: f64 = pooled.iter().sum::<f64>() * ACC_POOL as f64;
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        let k = &acc.kernel;
        assert_abs_diff_eq!(pooled[9] * 4.0, k[1] + k[2] + k[3], epsilon = 1e-12);
        assert_abs_diff_eq!(pooled[10] * 4.0, k[4] + k[5] + k[6] + k[7], epsilon = 1e-12);
    }

    #[test]
    fn white_noise_stpacc_is_small() {
        let x = noise(72_000, 7, 0.3);
        let map = stpacc_features(&AudioClip::mono(x, SAMPLE_RATE).unwrap()).unwrap();
        assert_eq!(map.dim(), (1, 480, 128));
        let max = map.iter().cloned().fold(0.0, f64::max);
        assert!(max <= 0.2, "max pooled value {max}");
        assert!(map.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn stpacc_gain_invariant() {
        let x = noise(24_000, 8, 0.3);
        let base = stpacc_features(&AudioClip::mono(x.clone(), SAMPLE_RATE).unwrap()).unwrap();
        let loud = stpacc_features(&AudioClip::mono(x.iter().map(|v| v * 7.5).collect(), SAMPLE_RATE).unwrap()).unwrap();
        for (a, b) in base.iter().zip(loud.iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn stacks_have_documented_layout() {
        let mut chans: Vec<Vec<f64>> = (0..4).map(|c| noise(72_000, 20 + c, 0.1)).collect();
        chans[1] = chans[0].iter().map(|v| v * 0.5).collect();
        let foa = AudioClip::new(chans, SAMPLE_RATE).unwrap();
        let ex = extractor();
        for mode in [FeatureMode::None, FeatureMode::StpAcc] {
            let stack = ex.stack(&foa, mode).unwrap();
            assert_eq!(stack.shape(), (mode.num_channels(), 480, 128));
            assert_eq!(stack.channel_names.len(), mode.num_channels());
            assert_eq!(stack.frame_rate, 160.0);
        }
        let st = ex.stack(&foa, FeatureMode::StpAcc).unwrap();
        assert_eq!(st.bin_semantics.last(), Some(&BinSemantics::TimeLag));
        assert!(st.channel("stpacc").is_some());
        assert_eq!(st.channel_names[..4], ["logmel_w", "logmel_x", "logmel_y", "logmel_z"]);
        assert_eq!(st.metadata()["mode"], "stpacc");
    }

    #[test]
    fn stack_rejects_bad_input() {
        let ex = extractor();
        let stereo = AudioClip::new(vec![vec![0.0; 72_000]; 2], SAMPLE_RATE).unwrap();
        assert!(ex.stack(&stereo, FeatureMode::None).is_err());
        let wrong_rate = AudioClip::new(vec![vec![0.0; 48_000]; 4], 48_000).unwrap();
        assert!(ex.stack(&wrong_rate, FeatureMode::None).is_err());
    }

    #[test]
    fn frame_average_bounds() {
        let map = Array2::from_shape_fn((10, 3), |(t, k)| (t * 3 + k) as f64);
        assert_eq!(frame_average(map.view(), 0..2).unwrap(), vec![1.5, 2.5, 3.5]);
        assert!(frame_average(map.view(), 4..4).is_err());
        assert!(frame_average(map.view(), 5..11).is_err());
    }
}
