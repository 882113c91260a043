use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use revfeat::dsp::AudioClip;
use revfeat::io::{read_metadata_csv, read_tensor, read_wav, write_wav};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("revfeat").chain(args.iter().copied());
    let code = revfeat_cli::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn foa_wav(dir: &Path, name: &str, seconds: f64, channels: usize) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = (seconds * 24_000.0) as usize;
    let chans = (0..channels)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    0.05 * v
                })
                .collect()
        })
        .collect();
    let path = dir.join(name);
    write_wav(&path, &AudioClip::new(chans, 24_000).unwrap()).unwrap();
    path
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    v.sort();
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn itdg_default_table() {
    let (code, out, _) = run(&["itdg"]);
    assert_eq!(code, 0);
    for cell in ["2.9", "9.2", "6.3", "3.4", "7.6", "4.2", "8.9", "11.2", "2.3"] {
        assert!(out.contains(cell), "missing {cell}\n{out}");
    }
    let (code, out, _) = run(&["itdg", "--json", "--distances", "2", "--heights", "1.5:1.5", "--c", "686"]);
    assert_eq!(code, 0);
    let row: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(row["itdg_ms"], 2.3);
}

#[test]
fn extract_writes_one_tensor_per_test_chunk() {
    let dir = tempfile::tempdir().unwrap();
    let wav = foa_wav(dir.path(), "clip.wav", 3.0, 4);
    let out_dir = dir.path().join("feat");
    let (code, out, err) = run(&["extract", "--mode", "stpacc", "--in", s(&wav), "--out", s(&out_dir), "--json"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 1);
    let tensors = files_with_ext(&out_dir, "rvft");
    assert_eq!(tensors.len(), 1);
    let stack = read_tensor(&tensors[0]).unwrap();
    assert_eq!(stack.shape(), (8, 480, 128));
    assert_eq!(stack.channel_names.last().unwrap(), "stpacc");
}

#[test]
fn ten_second_clip_chunk_counts() {
    let dir = tempfile::tempdir().unwrap();
    let wav = foa_wav(dir.path(), "long.wav", 10.0, 4);
    for (split, expected) in [("train", 8), ("test", 3)] {
        let out_dir = dir.path().join(split);
        let (code, _, err) = run(&[
            "extract", "--mode", "none", "--split", split, "--in", s(&wav), "--out", s(&out_dir),
        ]);
        assert_eq!(code, 0, "{err}");
        let tensors = files_with_ext(&out_dir, "rvft");
        assert_eq!(tensors.len(), expected, "{split}");
        for t in tensors {
            assert_eq!(read_tensor(&t).unwrap().shape(), (7, 480, 128));
        }
    }
}

#[test]
fn extract_rejects_mono_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let wav = foa_wav(dir.path(), "mono.wav", 1.0, 1);
    let (code, _, err) = run(&["extract", "--mode", "none", "--in", s(&wav), "--out", s(dir.path())]);
    assert_ne!(code, 0);
    assert!(err.contains("mono.wav") && err.contains("4-channel"), "{err}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["extract", "--mode", "mfcc", "--in", "a.wav", "--out", "x"]).0, 2);
    assert_eq!(run(&["itdg", "--bogus"]).0, 2);
    assert_eq!(run(&["transcode"]).0, 2);
    assert_eq!(run(&["simulate", "--frames", "9:3"]).0, 2);
}

#[test]
fn augment_writes_eight_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let wav = foa_wav(dir.path(), "scene.wav", 0.5, 4);
    let meta = dir.path().join("scene.csv");
    fs::write(&meta, "0,1,0,10,20,250\n3,4,1,170,-5,120\n").unwrap();
    let out_dir = dir.path().join("aug");
    let (code, out, err) = run(&["augment", "--wav", s(&wav), "--meta", s(&meta), "--out", s(&out_dir)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().count(), 8);
    assert_eq!(files_with_ext(&out_dir, "wav").len(), 8);
    assert_eq!(files_with_ext(&out_dir, "csv").len(), 8);

    let original = read_wav(&wav).unwrap();
    let identity = read_wav(out_dir.join("scene_acs0.wav")).unwrap();
    assert_eq!(identity, original);
    let rotated = read_metadata_csv(out_dir.join("scene_acs5.csv")).unwrap();
    assert_eq!((rotated[0].azimuth, rotated[0].elevation), (100.0, -20.0));
    assert_eq!((rotated[1].azimuth, rotated[1].elevation), (-100.0, 5.0));
    assert_eq!(rotated[1].distance, 1.2);
}

#[test]
fn eval_against_itself_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("ref");
    fs::create_dir(&refs).unwrap();
    fs::write(refs.join("a.csv"), "0,1,0,10,20,250\n1,1,0,12,20,250\n").unwrap();
    fs::write(refs.join("b.csv"), "5,3,0,-90,0,100\n").unwrap();
    let (code, out, err) = run(&["eval", "--pred", s(&refs), "--ref", s(&refs), "--json"]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["error_mode"], "all_matched");
    let seld = v["metrics"].as_array().unwrap().iter().find(|m| m["metric"] == "seld").unwrap();
    assert_eq!(seld["value"], 0.0);
    assert_eq!(seld["ci95"]["low"], 0.0);

    let (code, text, _) = run(&["eval", "--pred", s(&refs), "--ref", s(&refs), "--tp-only"]);
    assert_eq!(code, 0);
    assert!(text.contains("true positives"));
    assert!(text.contains("SELD"));
}

#[test]
fn eval_missing_predictions_are_misses() {
    let dir = tempfile::tempdir().unwrap();
    let (refs, preds) = (dir.path().join("ref"), dir.path().join("pred"));
    fs::create_dir(&refs).unwrap();
    fs::create_dir(&preds).unwrap();
    fs::write(refs.join("a.csv"), "0,1,0,10,20,250\n").unwrap();
    let (code, out, _) = run(&["eval", "--pred", s(&preds), "--ref", s(&refs), "--json"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    let seld = v["metrics"].as_array().unwrap().iter().find(|m| m["metric"] == "seld").unwrap();
    assert_eq!(seld["value"], 1.0);
    assert!(seld["ci95"].is_null());

    fs::write(preds.join("a.csv"), "0,1,0,10\n").unwrap();
    let (code, _, err) = run(&["eval", "--pred", s(&preds), "--ref", s(&refs)]);
    assert_eq!(code, 1);
    assert!(err.contains("a.csv:1"), "{err}");
}

#[test]
fn simulate_reports_one_row_per_distance() {
    let (code, out, err) = run(&["simulate", "--no-drr", "--json", "--distances", "1,2,3", "--duration", "1"]);
    assert_eq!(code, 0, "{err}");
    let rows: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let lags: Vec<f64> = rows.iter().map(|r| r["measured_lag_ms"].as_f64().unwrap()).collect();
    assert!(lags[0] > lags[1] && lags[1] > lags[2], "{lags:?}");
}
