//! Parametric room impulse responses (direct path, floor reflection,
//! optional exponential tail), convolution, and the measurements used to
//! check that the distance features respond to geometry the way the
//! floor-reflection model predicts.

use std::ops::Range;

use ndarray::{ArrayView2, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::Serialize;

use crate::dsp::AudioClip;
use crate::features::{FeatureExtractor, FeatureMode, FeatureStack, ACC_POOL};
use crate::geometry::{direct_delay, first_reflection_delay, itdg, SceneGeometry};
use crate::{Error, Result};

/// Default half-width of the direct-sound window in [`true_drr`].
pub const DIRECT_SPLIT_S: f64 = 0.0025;

/// A pooled stpACC bin counts as a reflection only if it stands this many
/// times above the median of its neighbouring lags.
pub const REFLECTION_PROMINENCE: f64 = 3.0;

/// Pooled bins on each side of a peak that form its local floor.
pub const PROMINENCE_HALF_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailParams {
    /// Onset in seconds after time zero.
    pub start_s: f64,
    pub t60_s: f64,
    /// Standard deviation of the tail noise at its onset.
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Arrival {
    pub delay_s: f64,
    pub amplitude: f64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticRir {
    pub sample_rate: u32,
    pub direct: Arrival,
    pub floor_reflection: Arrival,
    pub tail: Option<TailParams>,
    pub length: usize,
}

/// Image-source RIR of `g`: a direct impulse of amplitude `1/r_direct`, a
/// floor reflection of amplitude `beta/r_reflection`, and optionally a
/// seeded noise tail with energy decaying 60 dB per `t60_s`.
pub fn make_rir(
    g: &SceneGeometry,
    beta: f64,
    tail: Option<TailParams>,
    sample_rate: u32,
    length: usize,
) -> Result<(SyntheticRir, Vec<f64>)> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("reflection coefficient {beta} outside [0, 1]")));
    }
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let sr = sample_rate as f64;
    let arrival = |delay_s: f64, amplitude: f64| Arrival {
        delay_s,
        amplitude,
        index: (delay_s * sr).round() as usize,
    };
    let direct = arrival(direct_delay(g), 1.0 / g.direct_path());
    let floor_reflection = arrival(first_reflection_delay(g), beta / g.reflection_path());
    if floor_reflection.index >= length {
        return Err(Error::invalid(format!(
            "RIR of {length} samples cannot hold the floor reflection at sample {}",
            floor_reflection.index
        )));
    }

    let mut h = vec![0.0; length];
    h[direct.index] += direct.amplitude;
    h[floor_reflection.index] += floor_reflection.amplitude;

    if let Some(t) = tail {
        if !(t.t60_s > 0.0 && t.level >= 0.0) {
            return Err(Error::invalid("tail needs T60 > 0 and a non-negative level"));
        }
        if t.start_s < floor_reflection.delay_s {
            return Err(Error::invalid(format!(
                "tail onset {} s precedes the floor reflection at {} s",
                t.start_s, floor_reflection.delay_s
            )));
        }
        let start = (t.start_s * sr).round() as usize;
        if start >= length {
            return Err(Error::invalid(format!(
                "RIR of {length} samples ends before the tail onset at sample {start}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
        for (i, v) in h.iter_mut().enumerate().skip(start) {
            let elapsed = (i - start) as f64 / sr;
            // amplitude envelope: energy falls 60 dB over T60
            let env = t.level * 10f64.powf(-3.0 * elapsed / t.t60_s);
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += env * n;
        }
    }

    Ok((
        SyntheticRir {
            sample_rate,
            direct,
            floor_reflection,
            tail,
            length,
        },
        h,
    ))
}

/// Linear convolution via FFT, truncated to `out_len` samples.
pub fn fft_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![0.0; out_len];
    }
    let full = a.len() + b.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |x: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (d, s) in buf.iter_mut().zip(x) {
            d.re = *s;
        }
        fwd.process(&mut buf);
        buf
    };
    let mut fa = lift(a);
    let fb = lift(b);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let mut out: Vec<f64> = fa.iter().take(full.min(out_len)).map(|v| v.re / n as f64).collect();
    out.resize(out_len, 0.0);
    out
}

/// Convolves a mono clip with an impulse response; output keeps the dry length.
pub fn spatialize(dry: &AudioClip, rir: &[f64], rir_sample_rate: u32) -> Result<AudioClip> {
    dry.require_channels(1)?;
    if dry.sample_rate() != rir_sample_rate {
        return Err(Error::invalid(format!(
            "clip is {} Hz but the impulse response is {} Hz",
            dry.sample_rate(),
            rir_sample_rate
        )));
    }
    AudioClip::mono(fft_convolve(dry.channel(0), rir, dry.len()), dry.sample_rate())
}

fn peak_index(rir: &[f64]) -> Result<usize> {
    let (idx, peak) = rir
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
    if peak == 0.0 {
        return Err(Error::invalid("impulse response is all zeros"));
    }
    Ok(idx)
}

/// Splits an impulse response into the part within `±split_s` of its
/// largest-magnitude sample and everything else.
pub fn split_rir(rir: &[f64], sample_rate: u32, split_s: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let peak = peak_index(rir)?;
    let half = (split_s * sample_rate as f64).round() as usize;
    let window = peak.saturating_sub(half)..=(peak + half);
    let (mut early, mut late) = (vec![0.0; rir.len()], vec![0.0; rir.len()]);
    for (i, v) in rir.iter().enumerate() {
        if window.contains(&i) {
            early[i] = *v;
        } else {
            late[i] = *v;
        }
    }
    Ok((early, late))
}

/// Direct-to-reverberant ratio of an impulse response in dB, with the
/// reverberant energy floored at 1e-12.
pub fn true_drr(rir: &[f64], sample_rate: u32, split_s: f64) -> Result<f64> {
    let (early, late) = split_rir(rir, sample_rate, split_s)?;
    let energy = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    Ok(10.0 * (energy(&early) / energy(&late).max(1e-12)).log10())
}

/// Ratio in dB between the part of `estimate` explained by a known direct
/// signal (least-squares projection) and the remainder, over `range`.
pub fn drr_against_reference(estimate: &[f64], direct: &[f64], range: Range<usize>) -> Result<f64> {
    if range.is_empty() || range.end > estimate.len() || range.end > direct.len() {
        return Err(Error::invalid(format!("measurement range {range:?} out of bounds")));
    }
    let (e, d) = (&estimate[range.clone()], &direct[range]);
    let dd: f64 = d.iter().map(|v| v * v).sum();
    if dd == 0.0 {
        return Err(Error::invalid("reference direct signal is silent"));
    }
    let gain = e.iter().zip(d).map(|(a, b)| a * b).sum::<f64>() / dd;
    let residual: f64 = e.iter().zip(d).map(|(a, b)| (a - gain * b).powi(2)).sum();
    Ok(10.0 * (gain * gain * dd / residual.max(1e-300)).log10())
}

/// Broadband stand-in for dry speech: seeded, gently low-passed Gaussian
/// noise in 200 ms bursts separated by 200 ms of silence, RMS 0.1 while on.
pub fn excitation(duration_s: f64, sample_rate: u32, seed: u64) -> Result<AudioClip> {
    let len = (duration_s * sample_rate as f64).round() as usize;
    if len == 0 {
        return Err(Error::invalid("excitation must last at least one sample"));
    }
    let burst = (0.2 * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pole: f64 = 0.5;
    // unit-variance output of y[n] = x[n] + pole * y[n-1]
    let gain = 0.1 * (1.0 - pole * pole).sqrt();
    let mut state = 0.0;
    let samples = (0..len)
        .map(|i| {
            let n: f64 = StandardNormal.sample(&mut rng);
            state = n + pole * state;
            if (i / burst) % 2 == 0 {
                gain * state
            } else {
                0.0
            }
        })
        .collect();
    AudioClip::mono(samples, sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReflectionLag {
    pub pooled_index: usize,
    pub lag_s: f64,
    pub peak: f64,
    /// Peak over the median of the neighbouring pooled lags.
    pub prominence: f64,
}

/// Time-averages an stpACC map over `frames` and picks the strongest pooled
/// lag past the first bin. Returns `None` when that peak does not stand out
/// from the lags around it.
pub fn dominant_reflection_lag(
    stpacc: ArrayView2<f64>,
    frames: Range<usize>,
    sample_rate: u32,
) -> Result<Option<ReflectionLag>> {
    let profile = crate::features::frame_average(stpacc, frames)?;
    if profile.len() < 2 {
        return Err(Error::invalid("stpACC map needs at least two lag bins"));
    }
    let (pooled_index, peak) = profile
        .iter()
        .enumerate()
        .skip(1)
        .fold((1, f64::MIN), |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) });
    // the estimation floor falls with lag, so compare against nearby lags
    let lo = pooled_index.saturating_sub(PROMINENCE_HALF_WIDTH).max(1);
    let hi = (pooled_index + PROMINENCE_HALF_WIDTH + 1).min(profile.len());
    let mut neighbours: Vec<f64> = (lo..hi)
        .filter(|i| i.abs_diff(pooled_index) > 1)
        .map(|i| profile[i])
        .collect();
    neighbours.sort_by(f64::total_cmp);
    let median = neighbours.get(neighbours.len() / 2).copied().unwrap_or(0.0);
    if !(peak > 0.0) || peak < REFLECTION_PROMINENCE * median {
        return Ok(None);
    }
    Ok(Some(ReflectionLag {
        pooled_index,
        lag_s: (ACC_POOL as f64 * pooled_index as f64 + 2.5) / sample_rate as f64,
        peak,
        prominence: if median > 0.0 { peak / median } else { f64::INFINITY },
    }))
}

/// [`dominant_reflection_lag`] on the stpACC channel of a stacked input.
pub fn dominant_reflection_lag_in_stack(stack: &FeatureStack, frames: Range<usize>) -> Result<Option<ReflectionLag>> {
    if stack.mode != FeatureMode::StpAcc {
        return Err(Error::invalid(format!("expected an stpacc stack, got mode {}", stack.mode)));
    }
    let channel = stack
        .channel("stpacc")
        .ok_or_else(|| Error::invalid("stack has no stpacc channel"))?
        .mapv(f64::from);
    dominant_reflection_lag(channel.view(), frames, stack.params.sample_rate)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub distances: Vec<f64>,
    pub source_height: f64,
    pub mic_height: f64,
    pub speed_of_sound: f64,
    pub beta: f64,
    /// Tail T60 in seconds; `None` for a tail-free RIR.
    pub t60_s: Option<f64>,
    pub tail_level: f64,
    pub tail_start_s: f64,
    pub duration_s: f64,
    pub seed: u64,
    /// Frames averaged for the lag reading; all frames when `None`.
    pub frames: Option<Range<usize>>,
    /// Also run WPE and report the mean DRR feature.
    pub with_drr: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            distances: vec![1.0, 1.5, 2.0, 2.5, 3.0],
            source_height: 1.5,
            mic_height: 1.5,
            speed_of_sound: crate::geometry::SPEED_OF_SOUND,
            beta: 0.7,
            t60_s: None,
            tail_level: 0.017,
            tail_start_s: 0.02,
            duration_s: 3.0,
            seed: 7,
            frames: None,
            with_drr: true,
        }
    }
}

impl SweepConfig {
    pub fn tail(&self) -> Option<TailParams> {
        self.t60_s.map(|t60_s| TailParams {
            start_s: self.tail_start_s,
            t60_s,
            level: self.tail_level,
            seed: self.seed.wrapping_add(1),
        })
    }

    pub fn rir_length(&self, g: &SceneGeometry, sample_rate: u32) -> usize {
        let sr = sample_rate as f64;
        let reflection = (first_reflection_delay(g) * sr).round() as usize + 2;
        match self.tail() {
            Some(t) => reflection.max(((t.start_s + t.t60_s) * sr).ceil() as usize),
            None => reflection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub distance_m: f64,
    pub true_itdg_ms: f64,
    pub measured_lag_ms: Option<f64>,
    pub true_drr_db: f64,
    pub mean_drr_feature_db: Option<f64>,
}

/// Spatialises the same excitation at each distance and measures it.
pub fn distance_sweep(cfg: &SweepConfig, extractor: &FeatureExtractor) -> Result<Vec<SweepRow>> {
    let sr = extractor.params().sample_rate;
    let dry = excitation(cfg.duration_s, sr, cfg.seed)?;
    cfg.distances
        .iter()
        .map(|&d| {
            let g = SceneGeometry::with_speed(d, cfg.source_height, cfg.mic_height, cfg.speed_of_sound)?;
            let (_, rir) = make_rir(&g, cfg.beta, cfg.tail(), sr, cfg.rir_length(&g, sr))?;
            let wet = spatialize(&dry, &rir, sr)?;
            let acc = extractor.stpacc(&wet)?;
            let acc = acc.index_axis(Axis(0), 0);
            let frames = cfg.frames.clone().unwrap_or(0..acc.nrows());
            let lag = dominant_reflection_lag(acc, frames, sr)?;
            let mean_drr = if cfg.with_drr {
                let drr = extractor.drr(&extractor.split(&wet)?)?;
                Some(drr.mean().unwrap_or(f64::NAN))
            } else {
                None
            };
            Ok(SweepRow {
                distance_m: d,
                true_itdg_ms: itdg(&g) * 1e3,
                measured_lag_ms: lag.map(|l| l.lag_s * 1e3),
                true_drr_db: true_drr(&rir, sr, DIRECT_SPLIT_S)?,
                mean_drr_feature_db: mean_drr,
            })
        })
        .collect()
}
