//! Command-line surface: feature extraction, ACS augmentation, evaluation,
//! the synthetic distance sweep and the ITDG table.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use revfeat::augment::acs_expand;
use revfeat::features::{ExtractionParams, FeatureExtractor, FeatureMode};
use revfeat::geometry::{itdg_table, render_table, SPEED_OF_SOUND};
use revfeat::io::{read_metadata_csv, read_wav, write_metadata_csv, write_tensor, write_wav};
use revfeat::metrics::{jackknife_from_tables, ErrorMode, EventRecord, Metric, ScoreConfig, Scorer};
use revfeat::simulate::{distance_sweep, SweepConfig};
use revfeat::SAMPLE_RATE;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "REVFEAT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "revfeat", version, about = "Reverberation-based distance features for 3D SELD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chunk 4-channel 24 kHz FOA recordings and write one feature tensor per chunk.
    Extract {
        /// Distance channels: none, drr, dplusr or stpacc
        #[arg(long, value_parser = parse_mode)]
        mode: FeatureMode,
        /// Chunk length in seconds.
        #[arg(long, default_value_t = 3.0)]
        chunk: f64,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Input WAV files
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// One JSON line per tensor
        #[arg(long)]
        json: bool,
    },
    /// Write the eight ACS variants of a recording and its metadata.
    Augment {
        /// 4-channel FOA recording
        #[arg(long)]
        wav: PathBuf,
        /// Metadata CSV: frame,class,source,azimuth,elevation,distance_cm
        #[arg(long)]
        meta: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Score per-sequence prediction CSVs against reference CSVs.
    Eval {
        /// Directory of prediction CSVs
        #[arg(long)]
        pred: PathBuf,
        /// Directory of reference CSVs, matched to predictions by file name
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Average DOA and distance errors over true positives only.
        #[arg(long)]
        tp_only: bool,
        #[arg(long)]
        json: bool,
    },
    /// Spatialise a synthetic excitation over a distance sweep and measure it.
    Simulate {
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.5, 2.0, 2.5, 3.0])]
        distances: Vec<f64>,
        #[arg(long, default_value_t = 1.5)]
        source_height: f64,
        #[arg(long, default_value_t = 1.5)]
        mic_height: f64,
        #[arg(long, default_value_t = SPEED_OF_SOUND)]
        c: f64,
        /// Floor reflection coefficient.
        #[arg(long, default_value_t = 0.7)]
        beta: f64,
        /// Add a decaying tail with this T60 in seconds.
        #[arg(long)]
        t60: Option<f64>,
        #[arg(long, default_value_t = 0.017)]
        tail_level: f64,
        #[arg(long, default_value_t = 0.02)]
        tail_start: f64,
        #[arg(long, default_value_t = 3.0)]
        duration: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Frames averaged for the lag reading, as START:END.
        #[arg(long, value_parser = parse_range)]
        frames: Option<Range<usize>>,
        /// Skip WPE and the DRR feature column.
        #[arg(long)]
        no_drr: bool,
        #[arg(long)]
        json: bool,
    },
    /// Print direct, first-reflection and ITDG delays.
    Itdg {
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.5, 2.0, 2.5, 3.0])]
        distances: Vec<f64>,
        /// Source:mic height pairs in metres.
        #[arg(long, value_delimiter = ',', value_parser = parse_heights, default_values = ["1.5:1.5", "0.9:1.5"])]
        heights: Vec<(f64, f64)>,
        #[arg(long, default_value_t = SPEED_OF_SOUND)]
        c: f64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    /// Chunks start every second.
    Train,
    /// Non-overlapping chunks; the last one is zero-padded.
    Test,
}

fn parse_mode(s: &str) -> Result<FeatureMode, String> {
    s.parse().map_err(|e: revfeat::Error| e.to_string())
}

fn parse_range(s: &str) -> Result<Range<usize>, String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad start {a:?}"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad end {b:?}"))?;
    if a >= b {
        return Err(format!("empty frame range {a}:{b}"));
    }
    Ok(a..b)
}

fn parse_heights(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected SOURCE:MIC")?;
    let hs = a.trim().parse().map_err(|_| format!("bad source height {a:?}"))?;
    let hm = b.trim().parse().map_err(|_| format!("bad mic height {b:?}"))?;
    Ok((hs, hm))
}

/// Start samples of the chunks cut from a `len`-sample signal.
///
/// Training chunks start every second while they fit entirely; test chunks
/// tile the signal without overlap, `max(1, round(len / chunk))` of them.
pub fn chunk_starts(len: usize, chunk: usize, sample_rate: u32, split: Split) -> Vec<usize> {
    match split {
        Split::Train => {
            let step = sample_rate as usize;
            if len < chunk {
                return vec![0];
            }
            (0..=(len - chunk) / step).map(|i| i * step).collect()
        }
        Split::Test => {
            let n = ((len as f64 / chunk as f64).round() as usize).max(1);
            (0..n).map(|i| i * chunk).collect()
        }
    }
}

/// Worker count: available parallelism, capped by `REVFEAT_THREADS`.
pub fn worker_count() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .map_or(available, |cap| cap.min(available))
}

fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .context("starting worker pool")
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit status. Reports go to `out`, diagnostics to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return e.exit_code();
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Extract {
            mode,
            chunk,
            split,
            inputs,
            out: dir,
            json,
        } => extract(mode, chunk, split, &inputs, &dir, json, out),
        Command::Augment {
            wav,
            meta,
            out: dir,
            json,
        } => augment(&wav, &meta, &dir, json, out),
        Command::Eval {
            pred,
            reference,
            tp_only,
            json,
        } => eval(&pred, &reference, tp_only, json, out),
        Command::Simulate {
            distances,
            source_height,
            mic_height,
            c,
            beta,
            t60,
            tail_level,
            tail_start,
            duration,
            seed,
            frames,
            no_drr,
            json,
        } => {
            let cfg = SweepConfig {
                distances,
                source_height,
                mic_height,
                speed_of_sound: c,
                beta,
                t60_s: t60,
                tail_level,
                tail_start_s: tail_start,
                duration_s: duration,
                seed,
                frames,
                with_drr: !no_drr,
            };
            simulate(&cfg, json, out)
        }
        Command::Itdg {
            distances,
            heights,
            c,
            json,
        } => {
            let rows = itdg_table(&distances, &heights, c)?;
            if json {
                for r in &rows {
                    writeln!(out, "{}", serde_json::to_string(r)?)?;
                }
            } else {
                write!(out, "{}", render_table(&rows))?;
            }
            Ok(())
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

fn extract(
    mode: FeatureMode,
    chunk_s: f64,
    split: Split,
    inputs: &[PathBuf],
    dir: &Path,
    json: bool,
    out: &mut dyn Write,
) -> Result<()> {
    if !(chunk_s > 0.0 && chunk_s.is_finite()) {
        bail!("--chunk must be a positive number of seconds, got {chunk_s}");
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let extractor = FeatureExtractor::new(ExtractionParams::default())?;
    let chunk = (chunk_s * SAMPLE_RATE as f64).round() as usize;

    let mut clips = Vec::with_capacity(inputs.len());
    for path in inputs {
        let clip = read_wav(path)?;
        if clip.num_channels() != 4 {
            bail!(
                "{}: expected 4-channel FOA audio, got {} channel(s)",
                path.display(),
                clip.num_channels()
            );
        }
        if clip.sample_rate() != SAMPLE_RATE {
            bail!(
                "{}: expected {SAMPLE_RATE} Hz audio, got {} Hz",
                path.display(),
                clip.sample_rate()
            );
        }
        clips.push((path, clip));
    }
    let jobs: Vec<(usize, usize, usize)> = clips
        .iter()
        .enumerate()
        .flat_map(|(f, (_, clip))| {
            chunk_starts(clip.len(), chunk, SAMPLE_RATE, split)
                .into_iter()
                .enumerate()
                .map(move |(i, start)| (f, i, start))
        })
        .collect();

    let written = pool()?.install(|| {
        jobs.par_iter()
            .map(|&(f, i, start)| -> Result<serde_json::Value> {
                let (path, clip) = &clips[f];
                let stack = extractor.stack(&clip.segment(start, chunk), mode)?;
                let target = dir.join(format!("{}_{mode}_{i:04}.rvft", stem(path)));
                write_tensor(&target, &stack)?;
                let (c, t, k) = stack.shape();
                Ok(json!({
                    "input": path.display().to_string(),
                    "chunk": i,
                    "start_s": start as f64 / SAMPLE_RATE as f64,
                    "output": target.display().to_string(),
                    "mode": mode,
                    "shape": [c, t, k],
                }))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for row in &written {
        if json {
            writeln!(out, "{row}")?;
        } else {
            writeln!(
                out,
                "{} chunk {} -> {} {}",
                row["input"].as_str().unwrap_or_default(),
                row["chunk"],
                row["output"].as_str().unwrap_or_default(),
                row["shape"]
            )?;
        }
    }
    if !json {
        writeln!(out, "wrote {} tensor(s), mode {mode}", written.len())?;
    }
    Ok(())
}

fn augment(wav: &Path, meta: &Path, dir: &Path, json: bool, out: &mut dyn Write) -> Result<()> {
    let clip = read_wav(wav)?;
    let events = read_metadata_csv(meta)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let variants = acs_expand(&clip, &events)?;
    let (wav_stem, meta_stem) = (stem(wav), stem(meta));
    let rows = pool()?.install(|| {
        variants
            .par_iter()
            .map(|(t, audio, labels)| -> Result<serde_json::Value> {
                let w = dir.join(format!("{wav_stem}_acs{}.wav", t.id));
                let m = dir.join(format!("{meta_stem}_acs{}.csv", t.id));
                write_wav(&w, audio)?;
                write_metadata_csv(&m, labels)?;
                Ok(json!({
                    "id": t.id,
                    "rotation_deg": t.rotation_deg,
                    "elevation_flip": t.elevation_flip,
                    "wav": w.display().to_string(),
                    "meta": m.display().to_string(),
                }))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for r in &rows {
        if json {
            writeln!(out, "{r}")?;
        } else {
            writeln!(
                out,
                "acs{} rotation {:>3} flip {:<5} {} {}",
                r["id"],
                r["rotation_deg"],
                r["elevation_flip"],
                r["wav"].as_str().unwrap_or_default(),
                r["meta"].as_str().unwrap_or_default()
            )?;
        }
    }
    Ok(())
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    Ok(files)
}

/// Reference sequences paired with the same-named prediction file; a missing
/// prediction file counts as no predictions.
fn load_sequences(pred: &Path, reference: &Path) -> Result<Vec<(String, Vec<EventRecord>, Vec<EventRecord>)>> {
    let refs = csv_files(reference)?;
    if refs.is_empty() {
        bail!("no reference CSV files in {}", reference.display());
    }
    let mut problems = Vec::new();
    let mut sequences = Vec::new();
    for r in refs {
        let name = r.file_name().expect("listed file").to_string_lossy().into_owned();
        let p = pred.join(&name);
        let preds = if p.exists() {
            read_metadata_csv(&p)
        } else {
            Ok(Vec::new())
        };
        match (preds, read_metadata_csv(&r)) {
            (Ok(p), Ok(r)) => sequences.push((name, p, r)),
            (p, r) => problems.extend(p.err().into_iter().chain(r.err()).map(|e| e.to_string())),
        }
    }
    if !problems.is_empty() {
        bail!(revfeat::Error::InvalidRecords(problems));
    }
    Ok(sequences)
}

fn eval(pred: &Path, reference: &Path, tp_only: bool, json: bool, out: &mut dyn Write) -> Result<()> {
    let sequences = load_sequences(pred, reference)?;
    let config = ScoreConfig {
        mode: if tp_only {
            ErrorMode::TruePositives
        } else {
            ErrorMode::AllMatched
        },
        ..ScoreConfig::default()
    };
    let scorer = Scorer::new(config);
    let tables = sequences
        .iter()
        .map(|(name, p, r)| scorer.count(p, r).with_context(|| format!("scoring {name}")))
        .collect::<Result<Vec<_>>>()?;
    let mut pooled = revfeat::metrics::CountTable::default();
    for t in &tables {
        pooled.merge(t);
    }
    let scores = scorer.summarize(&pooled);
    let intervals = if tables.len() >= 2 {
        Some(jackknife_from_tables(&scorer, &tables, &Metric::ALL)?)
    } else {
        None
    };
    let mode_name = match config.mode {
        ErrorMode::AllMatched => "all_matched",
        ErrorMode::TruePositives => "true_positives",
    };

    if json {
        let metrics: Vec<serde_json::Value> = Metric::ALL
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let ci = intervals.as_ref().map(|v| v[i]);
                json!({"metric": m, "value": m.of(&scores), "ci95": ci})
            })
            .collect();
        writeln!(
            out,
            "{}",
            json!({
                "error_mode": mode_name,
                "macro_average": "classes present in references or predictions",
                "sentinel": {"doae": revfeat::metrics::SENTINEL_DOAE, "rde": revfeat::metrics::SENTINEL_RDE},
                "sequences": sequences.len(),
                "metrics": metrics,
                "per_class": scores.per_class,
            })
        )?;
        return Ok(());
    }

    writeln!(
        out,
        "{} sequence(s); DOAE/RDE over {}; macro average over classes present",
        sequences.len(),
        mode_name.replace('_', " ")
    )?;
    for (i, m) in Metric::ALL.iter().enumerate() {
        let (label, scale) = match m {
            Metric::FScore => ("F(<=20deg/1)", 100.0),
            Metric::Doae => ("DOAE (deg)", 1.0),
            Metric::Rde => ("RDE", 1.0),
            Metric::Seld => ("SELD", 1.0),
        };
        let ci = match &intervals {
            Some(v) => format!("  95% CI [{:.3}, {:.3}]", v[i].low * scale, v[i].high * scale),
            None => "  95% CI n/a (one sequence)".into(),
        };
        writeln!(out, "{label:<14}{:>9.3}{ci}", m.of(&scores) * scale)?;
    }
    writeln!(out, "\nclass      F    DOAE     RDE   TP   FP   FN")?;
    for c in &scores.per_class {
        writeln!(
            out,
            "{:>5} {:>6.3} {:>7.2} {:>7.3} {:>4} {:>4} {:>4}{}",
            c.class_id,
            c.f_score,
            c.doae,
            c.rde,
            c.counts.tp,
            c.counts.fp,
            c.counts.fn_,
            if c.sentinel { "  (no pairs: sentinel)" } else { "" }
        )?;
    }
    Ok(())
}

fn simulate(cfg: &SweepConfig, json: bool, out: &mut dyn Write) -> Result<()> {
    let extractor = FeatureExtractor::new(ExtractionParams::default())?;
    let rows = distance_sweep(cfg, &extractor)?;
    let opt = |v: Option<f64>, digits: usize| v.map_or_else(|| "none".to_string(), |x| format!("{x:.digits$}"));
    if !json {
        writeln!(
            out,
            "{:>8} {:>14} {:>16} {:>12} {:>18}",
            "dist_m", "true_itdg_ms", "measured_lag_ms", "true_drr_db", "mean_drr_feat_db"
        )?;
    }
    for r in &rows {
        if json {
            writeln!(out, "{}", serde_json::to_string(r)?)?;
        } else {
            writeln!(
                out,
                "{:>8.2} {:>14.3} {:>16} {:>12.2} {:>18}",
                r.distance_m,
                r.true_itdg_ms,
                opt(r.measured_lag_ms, 3),
                r.true_drr_db,
                opt(r.mean_drr_feature_db, 2)
            )?;
        }
    }
    Ok(())
}
