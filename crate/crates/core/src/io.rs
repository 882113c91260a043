//! WAV audio, event metadata CSV and feature tensor files.
//!
//! Every writer goes through a temporary file in the destination directory
//! that is renamed into place once complete.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;
use tempfile::NamedTempFile;

use crate::augment::wrap_azimuth;
use crate::dsp::AudioClip;
use crate::features::{BinSemantics, ExtractionParams, FeatureMode, FeatureStack};
use crate::metrics::EventRecord;
use crate::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 8] = b"RVFT0001";

fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn hound_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        hound::Error::FormatError(detail) => Error::format(path, format!("RIFF/WAVE header: {detail}")),
        hound::Error::Unsupported => Error::format(path, "fmt chunk: unsupported encoding"),
        other => Error::format(path, other.to_string()),
    }
}

/// Reads PCM 16/24/32-bit integer or 32-bit float WAV, scaled to [-1, 1].
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| hound_error(path, e))?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    if n_ch == 0 {
        return Err(Error::format(path, "fmt chunk: zero channels"));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| hound_error(path, e))?
        }
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| hound_error(path, e))?,
        (fmt, bits) => {
            return Err(Error::format(
                path,
                format!("fmt chunk: unsupported encoding {fmt:?} {bits}-bit"),
            ))
        }
    };
    if interleaved.len() % n_ch != 0 {
        return Err(Error::format(path, "data chunk: sample count not a multiple of the channel count"));
    }
    let frames = interleaved.len() / n_ch;
    let mut channels = vec![Vec::with_capacity(frames); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (c, v) in channels.iter_mut().zip(frame) {
            c.push(*v);
        }
    }
    AudioClip::new(channels, spec.sample_rate)
}

/// Writes 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: clip.num_channels() as u16,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let file = tmp.reopen().map_err(|e| Error::io(tmp.path(), e))?;
        let mut w = hound::WavWriter::new(BufWriter::new(file), spec).map_err(|e| hound_error(path, e))?;
        for i in 0..clip.len() {
            for c in clip.channels() {
                w.write_sample(c[i] as f32).map_err(|e| hound_error(path, e))?;
            }
        }
        w.finalize().map_err(|e| hound_error(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn parse_number(field: &str) -> std::result::Result<f64, String> {
    let v: f64 = field.trim().parse().map_err(|_| format!("not a number: {field:?}"))?;
    if !v.is_finite() {
        return Err(format!("not finite: {field:?}"));
    }
    Ok(v)
}

fn parse_integer(field: &str, what: &str) -> std::result::Result<f64, String> {
    let v = parse_number(field)?;
    if v.fract() != 0.0 {
        return Err(format!("{what} must be an integer, got {field:?}"));
    }
    Ok(v)
}

fn parse_row(fields: &csv::StringRecord) -> std::result::Result<EventRecord, String> {
    if fields.len() != 6 {
        return Err(format!(
            "expected 6 fields (frame,class,source,azimuth,elevation,distance_cm), got {}",
            fields.len()
        ));
    }
    let frame = parse_integer(&fields[0], "frame")?;
    let class_id = parse_integer(&fields[1], "class")?;
    let track_id = parse_integer(&fields[2], "source")?;
    let azimuth = parse_number(&fields[3])?;
    let elevation = parse_number(&fields[4])?;
    let distance_cm = parse_number(&fields[5])?;
    if frame < 0.0 || frame > u32::MAX as f64 || class_id < 0.0 || class_id > u32::MAX as f64 {
        return Err("frame and class must be non-negative".into());
    }
    if !(-90.0..=90.0).contains(&elevation) {
        return Err(format!("elevation {elevation} outside [-90, 90]"));
    }
    if distance_cm < 0.0 {
        return Err(format!("distance {distance_cm} cm is negative"));
    }
    Ok(EventRecord {
        frame: frame as u32,
        class_id: class_id as u32,
        track_id: track_id as i64,
        azimuth: wrap_azimuth(azimuth),
        elevation,
        distance: distance_cm / 100.0,
    })
}

/// Reads headerless `frame,class,source,azimuth,elevation,distance_cm` rows.
/// Angles may be integer or real; azimuth is wrapped into (-180, 180].
pub fn read_metadata_csv(path: impl AsRef<Path>) -> Result<Vec<EventRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut events = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            match e.into_kind() {
                csv::ErrorKind::Io(source) => Error::io(path, source),
                kind => Error::Parse {
                    path: path.into(),
                    line,
                    detail: format!("{kind:?}"),
                },
            }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let event = parse_row(&record).map_err(|detail| Error::Parse {
            path: path.into(),
            line,
            detail,
        })?;
        events.push(event);
    }
    Ok(events)
}

fn fmt_number(v: f64) -> String {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        format!("{}", r as i64)
    } else {
        format!("{v}")
    }
}

pub fn write_metadata_csv(path: impl AsRef<Path>, events: &[EventRecord]) -> Result<()> {
    atomic_write(path.as_ref(), |w| {
        for e in events {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.frame,
                e.class_id,
                e.track_id,
                fmt_number(e.azimuth),
                fmt_number(e.elevation),
                fmt_number(e.distance * 100.0)
            )?;
        }
        Ok(())
    })
}

/// Header, channel names, `f32` LE payload in (channel, frame, bin) order,
/// then a length-prefixed JSON metadata block.
pub fn write_tensor(path: impl AsRef<Path>, stack: &FeatureStack) -> Result<()> {
    let (c, t, k) = stack.shape();
    if stack.channel_names.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "{} channel names for {c} channels",
            stack.channel_names.len()
        )));
    }
    let meta = serde_json::to_vec(&stack.metadata()).map_err(|e| Error::invalid(e.to_string()))?;
    atomic_write(path.as_ref(), |w| {
        w.write_all(TENSOR_MAGIC)?;
        for v in [stack.mode.tag(), c as u32, t as u32, k as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for name in &stack.channel_names {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
        }
        for v in stack.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)
    })
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!(
                    "size mismatch: {what} needs {n} bytes at offset {}, {} left",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FeatureStack> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(8, "magic")? != TENSOR_MAGIC {
        return Err(Error::format(path, "bad magic, not an RVFT0001 tensor"));
    }
    let tag = cur.u32("mode tag")?;
    let mode = FeatureMode::from_tag(tag).ok_or_else(|| Error::format(path, format!("unknown mode tag {tag}")))?;
    let (c, t, k) = (
        cur.u32("channels")? as usize,
        cur.u32("frames")? as usize,
        cur.u32("bins")? as usize,
    );
    let mut channel_names = Vec::with_capacity(c);
    for _ in 0..c {
        let n = cur.u32("channel name length")? as usize;
        let name = std::str::from_utf8(cur.take(n, "channel name")?)
            .map_err(|_| Error::format(path, "channel name is not UTF-8"))?;
        channel_names.push(name.to_string());
    }
    let count = c
        .checked_mul(t)
        .and_then(|v| v.checked_mul(k))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    let payload = cur.take(count * 4, "payload")?;
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let data = Array3::from_shape_vec((c, t, k), values).map_err(|e| Error::format(path, e.to_string()))?;
    let n = cur.u32("metadata length")? as usize;
    let meta: serde_json::Value =
        serde_json::from_slice(cur.take(n, "metadata")?).map_err(|e| Error::format(path, format!("metadata: {e}")))?;
    if cur.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("size mismatch: {} trailing bytes", bytes.len() - cur.pos),
        ));
    }
    let field = |name: &str| meta.get(name).cloned().ok_or_else(|| Error::format(path, format!("metadata lacks {name}")));
    let de = |e: serde_json::Error| Error::format(path, format!("metadata: {e}"));
    let meta_mode: FeatureMode = serde_json::from_value(field("mode")?).map_err(de)?;
    if meta_mode != mode {
        return Err(Error::format(path, format!("header mode {mode} but metadata mode {meta_mode}")));
    }
    let bin_semantics: Vec<BinSemantics> = serde_json::from_value(field("bin_semantics")?).map_err(de)?;
    let params: ExtractionParams = serde_json::from_value(field("params")?).map_err(de)?;
    let frame_rate = field("frame_rate")?
        .as_f64()
        .ok_or_else(|| Error::format(path, "metadata frame_rate is not a number"))?;
    Ok(FeatureStack {
        data,
        channel_names,
        mode,
        frame_rate,
        bin_semantics,
        params,
    })
}
