//! Location- and distance-aware SELD evaluation.
//!
//! Within every (frame, class) cell predictions are paired with references
//! by a minimum-total-angular-error assignment. A pair is a true positive
//! when its angular error is at most 20 degrees and its relative distance
//! error is below 1; otherwise it costs one false positive and one false
//! negative. F-score, DOA error and relative distance error are computed per
//! class and macro-averaged over the classes that occur in the references or
//! predictions.
//!
//! Conventions worth knowing when comparing against other tools:
//! * DOA and distance errors average over all matched pairs by default
//!   ([`ErrorMode::AllMatched`]); [`ErrorMode::TruePositives`] restricts them
//!   to true positives.
//! * A class with no pair to average contributes 180 degrees and an RDE of 1.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

pub const NUM_CLASSES: u32 = 13;
pub const DOA_THRESHOLD_DEG: f64 = 20.0;
pub const RDE_THRESHOLD: f64 = 1.0;
pub const SENTINEL_DOAE: f64 = 180.0;
pub const SENTINEL_RDE: f64 = 1.0;

/// One active event at one 100 ms label frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventRecord {
    pub frame: u32,
    pub class_id: u32,
    pub track_id: i64,
    /// Degrees in (-180, 180].
    pub azimuth: f64,
    /// Degrees in [-90, 90].
    pub elevation: f64,
    /// Metres.
    pub distance: f64,
}

impl EventRecord {
    fn problems(&self, num_classes: u32, is_reference: bool) -> Option<String> {
        let mut issues = Vec::new();
        if self.class_id >= num_classes {
            issues.push(format!("class {} >= {num_classes}", self.class_id));
        }
        if !(self.azimuth > -180.0 && self.azimuth <= 180.0) {
            issues.push(format!("azimuth {} outside (-180, 180]", self.azimuth));
        }
        if !(-90.0..=90.0).contains(&self.elevation) {
            issues.push(format!("elevation {} outside [-90, 90]", self.elevation));
        }
        if !(self.distance.is_finite() && self.distance >= 0.0) {
            issues.push(format!("distance {} not finite and >= 0", self.distance));
        } else if is_reference && self.distance == 0.0 {
            issues.push("reference distance is 0".to_string());
        }
        (!issues.is_empty()).then(|| {
            format!(
                "{} frame {} class {} track {}: {}",
                if is_reference { "reference" } else { "prediction" },
                self.frame,
                self.class_id,
                self.track_id,
                issues.join(", ")
            )
        })
    }

    pub fn direction(&self) -> (f64, f64) {
        (self.azimuth, self.elevation)
    }
}

fn unit_vector((az, el): (f64, f64)) -> [f64; 3] {
    let (az, el) = (az.to_radians(), el.to_radians());
    [az.cos() * el.cos(), az.sin() * el.cos(), el.sin()]
}

/// Great-circle angle between two (azimuth, elevation) directions, degrees.
pub fn angular_error(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (u, v) = (unit_vector(a), unit_vector(b));
    let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    let sin = cross.iter().map(|c| c * c).sum::<f64>().sqrt();
    // atan2 stays accurate near 0 and 180 degrees, unlike acos of the dot product
    sin.atan2(dot).to_degrees().clamp(0.0, 180.0)
}

pub fn relative_distance_error(pred: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::invalid(format!(
            "reference distance must be positive, got {reference}"
        )));
    }
    Ok((pred - reference).abs() / reference)
}

/// Strategy for pairing rows with columns of a cost matrix.
pub trait Assigner {
    /// Returns `min(rows, cols)` disjoint (row, col) pairs.
    fn assign(&self, cost: &[Vec<f64>]) -> Vec<(usize, usize)>;
}

/// Minimum-cost assignment (Hungarian method with potentials).
#[derive(Debug, Clone, Copy, Default)]
pub struct Hungarian;

impl Assigner for Hungarian {
    fn assign(&self, cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
        let rows = cost.len();
        let cols = cost.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Vec::new();
        }
        if rows > cols {
            let transposed: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
            let mut pairs: Vec<_> = self.assign(&transposed).into_iter().map(|(c, r)| (r, c)).collect();
            pairs.sort_unstable();
            return pairs;
        }
        // rows <= cols; 1-based with a virtual column 0
        let (n, m) = (rows, cols);
        let mut u = vec![0.0; n + 1];
        let mut v = vec![0.0; m + 1];
        let mut owner = vec![0usize; m + 1];
        let mut way = vec![0usize; m + 1];
        for i in 1..=n {
            owner[0] = i;
            let mut j0 = 0;
            let mut min_v = vec![f64::INFINITY; m + 1];
            let mut used = vec![false; m + 1];
            loop {
                used[j0] = true;
                let i0 = owner[j0];
                let mut delta = f64::INFINITY;
                let mut j1 = 0;
                for j in 1..=m {
                    if used[j] {
                        continue;
                    }
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < min_v[j] {
                        min_v[j] = cur;
                        way[j] = j0;
                    }
                    if min_v[j] < delta {
                        delta = min_v[j];
                        j1 = j;
                    }
                }
                for j in 0..=m {
                    if used[j] {
                        u[owner[j]] += delta;
                        v[j] -= delta;
                    } else {
                        min_v[j] -= delta;
                    }
                }
                j0 = j1;
                if owner[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = way[j0];
                owner[j0] = owner[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
        let mut pairs: Vec<_> = (1..=m).filter(|&j| owner[j] != 0).map(|j| (owner[j] - 1, j - 1)).collect();
        pairs.sort_unstable();
        pairs
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    /// (prediction index, reference index)
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_refs: Vec<usize>,
}

/// Pairs the predictions and references of one (frame, class) cell.
pub fn match_frame_class(preds: &[EventRecord], refs: &[EventRecord]) -> FrameMatch {
    match_with(&Hungarian, preds, refs)
}

fn canonical_order(events: &[EventRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..events.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (&events[a], &events[b]);
        x.azimuth
            .total_cmp(&y.azimuth)
            .then(x.elevation.total_cmp(&y.elevation))
            .then(x.distance.total_cmp(&y.distance))
            .then(x.track_id.cmp(&y.track_id))
    });
    idx
}

/// Like [`match_frame_class`] with a caller-chosen assignment strategy.
/// Inputs are put in a canonical order first so ties resolve the same way
/// whatever order the records arrive in.
pub fn match_with(assigner: &dyn Assigner, preds: &[EventRecord], refs: &[EventRecord]) -> FrameMatch {
    let (po, ro) = (canonical_order(preds), canonical_order(refs));
    let cost: Vec<Vec<f64>> = po
        .iter()
        .map(|&p| ro.iter().map(|&r| angular_error(preds[p].direction(), refs[r].direction())).collect())
        .collect();
    let mut pairs: Vec<(usize, usize)> = assigner
        .assign(&cost)
        .into_iter()
        .map(|(p, r)| (po[p], ro[r]))
        .collect();
    pairs.sort_unstable();
    let unmatched_preds = (0..preds.len()).filter(|p| !pairs.iter().any(|(q, _)| q == p)).collect();
    let unmatched_refs = (0..refs.len()).filter(|r| !pairs.iter().any(|(_, s)| s == r)).collect();
    FrameMatch {
        pairs,
        unmatched_preds,
        unmatched_refs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    /// DOA and distance errors over every matched pair.
    #[default]
    AllMatched,
    /// DOA and distance errors over true positives only.
    TruePositives,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreConfig {
    pub doa_threshold_deg: f64,
    pub rde_threshold: f64,
    pub mode: ErrorMode,
    pub num_classes: u32,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            doa_threshold_deg: DOA_THRESHOLD_DEG,
            rde_threshold: RDE_THRESHOLD,
            mode: ErrorMode::AllMatched,
            num_classes: NUM_CLASSES,
        }
    }
}

/// Additive per-class sufficient statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub n_refs: u64,
    pub n_preds: u64,
    /// Pairs entering the DOA/RDE averages.
    pub n_errors: u64,
    pub doa_sum: f64,
    pub rde_sum: f64,
}

impl ClassCounts {
    fn add(&mut self, o: &ClassCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.n_refs += o.n_refs;
        self.n_preds += o.n_preds;
        self.n_errors += o.n_errors;
        self.doa_sum += o.doa_sum;
        self.rde_sum += o.rde_sum;
    }

    fn present(&self) -> bool {
        self.n_refs + self.n_preds > 0
    }
}

/// Per-class counts for a set of sequences; adding tables pools sequences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CountTable(pub BTreeMap<u32, ClassCounts>);

impl CountTable {
    pub fn merge(&mut self, other: &CountTable) {
        for (c, counts) in &other.0 {
            self.0.entry(*c).or_default().add(counts);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScore {
    pub class_id: u32,
    pub f_score: f64,
    pub doae: f64,
    pub rde: f64,
    /// True when DOAE/RDE are the no-pair sentinel values.
    pub sentinel: bool,
    pub counts: ClassCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeldScores {
    pub f_score: f64,
    /// Degrees.
    pub doae: f64,
    pub rde: f64,
    pub seld: f64,
    pub per_class: Vec<ClassScore>,
    pub mode: ErrorMode,
}

pub fn seld_score(f_score: f64, doae: f64, rde: f64) -> f64 {
    ((1.0 - f_score) + doae / 180.0 + rde) / 3.0
}

pub struct Scorer<'a> {
    pub config: ScoreConfig,
    assigner: &'a dyn Assigner,
}

impl Default for Scorer<'static> {
    fn default() -> Self {
        Self::new(ScoreConfig::default())
    }
}

impl Scorer<'static> {
    pub fn new(config: ScoreConfig) -> Self {
        Self {
            config,
            assigner: &Hungarian,
        }
    }
}

impl<'a> Scorer<'a> {
    pub fn with_assigner(config: ScoreConfig, assigner: &'a dyn Assigner) -> Self {
        Self { config, assigner }
    }

    fn validate(&self, preds: &[EventRecord], refs: &[EventRecord]) -> Result<()> {
        let n = self.config.num_classes;
        let problems: Vec<String> = preds
            .iter()
            .filter_map(|e| e.problems(n, false))
            .chain(refs.iter().filter_map(|e| e.problems(n, true)))
            .collect();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidRecords(problems))
        }
    }

    /// Per-class counts of one sequence.
    pub fn count(&self, preds: &[EventRecord], refs: &[EventRecord]) -> Result<CountTable> {
        self.validate(preds, refs)?;
        let mut cells: BTreeMap<(u32, u32), (Vec<EventRecord>, Vec<EventRecord>)> = BTreeMap::new();
        for p in preds {
            cells.entry((p.frame, p.class_id)).or_default().0.push(*p);
        }
        for r in refs {
            cells.entry((r.frame, r.class_id)).or_default().1.push(*r);
        }
        let cfg = &self.config;
        let mut table = CountTable::default();
        for ((_, class), (ps, rs)) in &cells {
            let c = table.0.entry(*class).or_default();
            c.n_preds += ps.len() as u64;
            c.n_refs += rs.len() as u64;
            let m = match_with(self.assigner, ps, rs);
            c.fp += m.unmatched_preds.len() as u64;
            c.fn_ += m.unmatched_refs.len() as u64;
            for &(pi, ri) in &m.pairs {
                let (p, r) = (&ps[pi], &rs[ri]);
                let doa = angular_error(p.direction(), r.direction());
                let rde = relative_distance_error(p.distance, r.distance)?;
                let hit = doa <= cfg.doa_threshold_deg && rde < cfg.rde_threshold;
                if hit {
                    c.tp += 1;
                } else {
                    c.fp += 1;
                    c.fn_ += 1;
                }
                if hit || cfg.mode == ErrorMode::AllMatched {
                    c.n_errors += 1;
                    c.doa_sum += doa;
                    c.rde_sum += rde;
                }
            }
        }
        Ok(table)
    }

    /// Macro-averaged scores from pooled counts. An empty table (nothing
    /// predicted, nothing to find) scores as perfect.
    pub fn summarize(&self, table: &CountTable) -> SeldScores {
        let per_class: Vec<ClassScore> = table
            .0
            .iter()
            .filter(|(_, c)| c.present())
            .map(|(&class_id, c)| {
                let denom = 2 * c.tp + c.fp + c.fn_;
                let f_score = if denom == 0 { 1.0 } else { 2.0 * c.tp as f64 / denom as f64 };
                let sentinel = c.n_errors == 0;
                let (doae, rde) = if sentinel {
                    (SENTINEL_DOAE, SENTINEL_RDE)
                } else {
                    (c.doa_sum / c.n_errors as f64, c.rde_sum / c.n_errors as f64)
                };
                ClassScore {
                    class_id,
                    f_score,
                    doae,
                    rde,
                    sentinel,
                    counts: *c,
                }
            })
            .collect();
        let n = per_class.len() as f64;
        let mean = |f: fn(&ClassScore) -> f64, empty: f64| {
            if per_class.is_empty() {
                empty
            } else {
                per_class.iter().map(f).sum::<f64>() / n
            }
        };
        let f_score = mean(|c| c.f_score, 1.0);
        let doae = mean(|c| c.doae, 0.0);
        let rde = mean(|c| c.rde, 0.0);
        SeldScores {
            f_score,
            doae,
            rde,
            seld: seld_score(f_score, doae, rde),
            per_class,
            mode: self.config.mode,
        }
    }

    pub fn score(&self, preds: &[EventRecord], refs: &[EventRecord]) -> Result<SeldScores> {
        Ok(self.summarize(&self.count(preds, refs)?))
    }

    /// Scores each sequence separately and pools the counts.
    pub fn score_sequences(&self, sequences: &[(Vec<EventRecord>, Vec<EventRecord>)]) -> Result<SeldScores> {
        let mut pooled = CountTable::default();
        for (p, r) in sequences {
            pooled.merge(&self.count(p, r)?);
        }
        Ok(self.summarize(&pooled))
    }
}

/// Scores with the default configuration.
pub fn score(preds: &[EventRecord], refs: &[EventRecord]) -> Result<SeldScores> {
    Scorer::default().score(preds, refs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    FScore,
    Doae,
    Rde,
    Seld,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::FScore, Metric::Doae, Metric::Rde, Metric::Seld];

    pub fn of(self, s: &SeldScores) -> f64 {
        match self {
            Metric::FScore => s.f_score,
            Metric::Doae => s.doae,
            Metric::Rde => s.rde,
            Metric::Seld => s.seld,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    /// Metric over all sequences pooled.
    pub estimate: f64,
    /// Mean of the jackknife pseudo-values; the interval is centred here.
    pub pseudo_mean: f64,
    pub low: f64,
    pub high: f64,
    pub sequences: usize,
}

/// Leave-one-sequence-out jackknife 95% interval (Student t, n-1 dof).
pub fn jackknife_ci(
    scorer: &Scorer<'_>,
    sequences: &[(Vec<EventRecord>, Vec<EventRecord>)],
    metric: Metric,
) -> Result<ConfidenceInterval> {
    let tables = sequences
        .iter()
        .map(|(p, r)| scorer.count(p, r))
        .collect::<Result<Vec<_>>>()?;
    jackknife_from_tables(scorer, &tables, &[metric]).map(|mut v| v.remove(0))
}

/// Jackknife intervals for several metrics from precomputed per-sequence counts.
pub fn jackknife_from_tables(
    scorer: &Scorer<'_>,
    tables: &[CountTable],
    metrics: &[Metric],
) -> Result<Vec<ConfidenceInterval>> {
    let n = tables.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "jackknife needs at least 2 sequences, got {n}"
        )));
    }
    let pooled = |skip: Option<usize>| {
        let mut t = CountTable::default();
        for (i, table) in tables.iter().enumerate() {
            if Some(i) != skip {
                t.merge(table);
            }
        }
        scorer.summarize(&t)
    };
    let all = pooled(None);
    let loo: Vec<SeldScores> = (0..n).map(|i| pooled(Some(i))).collect();
    let t_crit = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Numerical(format!("Student t distribution: {e}")))?
        .inverse_cdf(0.975);
    Ok(metrics
        .iter()
        .map(|&m| {
            let theta = m.of(&all);
            let nf = n as f64;
            let pseudo: Vec<f64> = loo.iter().map(|s| nf * theta - (nf - 1.0) * m.of(s)).collect();
            let mean = pseudo.iter().sum::<f64>() / nf;
            let var = pseudo.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            let half = t_crit * var.sqrt() / nf.sqrt();
            ConfidenceInterval {
                estimate: theta,
                pseudo_mean: mean,
                low: mean - half,
                high: mean + half,
                sequences: n,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ev(frame: u32, class_id: u32, az: f64, el: f64, dist: f64) -> EventRecord {
        EventRecord {
            frame,
            class_id,
            track_id: 0,
            azimuth: az,
            elevation: el,
            distance: dist,
        }
    }

    /// Exhaustive minimum over all injective pairings; test-only oracle.
    struct BruteForce;

    impl Assigner for BruteForce {
        fn assign(&self, cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
            fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, best: &mut (f64, Vec<(usize, usize)>), target: usize) {
                if cur.len() == target {
                    let total: f64 = cur.iter().map(|&(r, c)| cost[r][c]).sum();
                    if total < best.0 {
                        *best = (total, cur.clone());
                    }
                    return;
                }
                if row == cost.len() {
                    return;
                }
                rec(cost, row + 1, used, cur, best, target);
                for c in 0..used.len() {
                    if !used[c] {
                        used[c] = true;
                        cur.push((row, c));
                        rec(cost, row + 1, used, cur, best, target);
                        cur.pop();
                        used[c] = false;
                    }
                }
            }
            let cols = cost.first().map_or(0, Vec::len);
            let target = cost.len().min(cols);
            let mut best = (f64::INFINITY, Vec::new());
            rec(cost, 0, &mut vec![false; cols], &mut Vec::new(), &mut best, target);
            best.1
        }
    }

    fn total(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| cost[r][c]).sum()
    }

    #[test]
    fn angular_error_examples() {
        assert_eq!(angular_error((30.0, 10.0), (30.0, 10.0)), 0.0);
        assert_abs_diff_eq!(angular_error((0.0, 0.0), (180.0, 0.0)), 180.0, epsilon = 1e-9);
        assert_abs_diff_eq!(angular_error((0.0, 0.0), (20.0, 0.0)), 20.0, epsilon = 1e-9);
        assert_abs_diff_eq!(angular_error((10.0, 90.0), (-170.0, 90.0)), 0.0, epsilon = 1e-5);
    }

    #[test]
    fn rde_examples() {
        assert_eq!(relative_distance_error(2.0, 2.0).unwrap(), 0.0);
        assert_eq!(relative_distance_error(2.0, 1.0).unwrap(), 1.0);
        assert_eq!(relative_distance_error(0.0, 3.0).unwrap(), 1.0);
        assert!(relative_distance_error(1.0, 0.0).is_err());
    }

    #[test]
    fn single_pair_and_surplus_prediction() {
        let r = [ev(0, 0, 0.0, 0.0, 1.0)];
        let m = match_frame_class(&[ev(0, 0, 3.0, 0.0, 1.0)], &r);
        assert_eq!(m.pairs, vec![(0, 0)]);

        let preds = [ev(0, 0, 30.0, 0.0, 1.0), ev(0, 0, 5.0, 0.0, 1.0)];
        let m = match_frame_class(&preds, &r);
        assert_eq!(m.pairs, vec![(1, 0)]);
        assert_eq!(m.unmatched_preds, vec![0]);
        assert!(m.unmatched_refs.is_empty());
    }

    #[test]
    fn optimal_beats_greedy() {
        let cost = vec![vec![10.0, 11.0], vec![11.0, 100.0]];
        let pairs = Hungarian.assign(&cost);
        assert_eq!(total(&cost, &pairs), 22.0);
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(total(&cost, &BruteForce.assign(&cost)), 22.0);
    }

    #[test]
    fn rectangular_assignments() {
        let wide = vec![vec![5.0, 1.0, 3.0]];
        assert_eq!(Hungarian.assign(&wide), vec![(0, 1)]);
        let tall = vec![vec![5.0], vec![1.0], vec![3.0]];
        assert_eq!(Hungarian.assign(&tall), vec![(1, 0)]);
        assert!(Hungarian.assign(&[]).is_empty());
    }

    #[test]
    fn perfect_predictions() {
        let refs = vec![ev(0, 1, 10.0, 5.0, 2.0), ev(1, 1, 12.0, 5.0, 2.1), ev(1, 4, -90.0, 0.0, 4.0)];
        let s = score(&refs, &refs).unwrap();
        assert_eq!((s.f_score, s.doae, s.rde, s.seld), (1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_predictions() {
        let refs = vec![ev(0, 1, 10.0, 5.0, 2.0), ev(3, 7, 12.0, 5.0, 2.1)];
        let s = score(&[], &refs).unwrap();
        assert_eq!((s.f_score, s.doae, s.rde, s.seld), (0.0, 180.0, 1.0, 1.0));
        assert!(s.per_class.iter().all(|c| c.sentinel));
    }

    #[test]
    fn hand_example() {
        let refs = [ev(0, 0, 0.0, 0.0, 2.0)];
        let preds = [ev(0, 0, 15.0, 0.0, 3.0)];
        let s = score(&preds, &refs).unwrap();
        assert_eq!(s.f_score, 1.0);
        assert_abs_diff_eq!(s.doae, 15.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.rde, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.seld, (0.0 + 15.0 / 180.0 + 0.5) / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.seld, 0.1944, epsilon = 1e-4);
    }

    #[test]
    fn thresholded_pair_counts_twice_but_keeps_its_errors() {
        let refs = [ev(0, 0, 0.0, 0.0, 2.0)];
        let preds = [ev(0, 0, 40.0, 0.0, 2.0)];
        let s = score(&preds, &refs).unwrap();
        let c = s.per_class[0].counts;
        assert_eq!((c.tp, c.fp, c.fn_), (0, 1, 1));
        assert_eq!(s.f_score, 0.0);
        assert_abs_diff_eq!(s.doae, 40.0, epsilon = 1e-9);

        let tp_only = Scorer::new(ScoreConfig { mode: ErrorMode::TruePositives, ..Default::default() });
        let s = tp_only.score(&preds, &refs).unwrap();
        assert_eq!((s.doae, s.rde), (180.0, 1.0));
        assert_eq!(s.mode, ErrorMode::TruePositives);
    }

    #[test]
    fn distance_threshold_is_strict() {
        let refs = [ev(0, 0, 0.0, 0.0, 1.0)];
        let s = score(&[ev(0, 0, 0.0, 0.0, 2.0)], &refs).unwrap();
        assert_eq!(s.per_class[0].counts.tp, 0);
        let s = score(&[ev(0, 0, 20.0, 0.0, 1.9)], &refs).unwrap();
        assert_eq!(s.per_class[0].counts.tp, 1);
    }

    #[test]
    fn invalid_records_are_itemized() {
        let bad_ref = ev(0, 0, 0.0, 0.0, 0.0);
        let bad_pred = ev(0, 20, 0.0, 95.0, 1.0);
        match score(&[bad_pred], &[bad_ref]) {
            Err(Error::InvalidRecords(items)) => assert_eq!(items.len(), 2),
            other => panic!("expected itemized errors, got {other:?}"),
        }
    }

    #[test]
    fn nothing_to_score_is_perfect() {
        let s = score(&[], &[]).unwrap();
        assert_eq!(s.seld, 0.0);
        assert!(s.per_class.is_empty());
    }

    #[test]
    fn jackknife_of_identical_sequences_has_zero_width() {
        let seq = (vec![ev(0, 0, 15.0, 0.0, 3.0)], vec![ev(0, 0, 0.0, 0.0, 2.0)]);
        let ci = jackknife_ci(&Scorer::default(), &vec![seq; 5], Metric::Seld).unwrap();
        assert_abs_diff_eq!(ci.high - ci.low, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ci.estimate, ci.pseudo_mean, epsilon = 1e-12);
        assert!(jackknife_ci(&Scorer::default(), &[], Metric::Seld).is_err());
    }

    #[test]
    fn jackknife_two_sequences_by_hand() {
        // sequence A: one perfect hit; sequence B: one miss (no prediction).
        // class 0 only. pooled: TP=1, FN=1 -> F = 2/3.
        // leave out A -> F = 0; leave out B -> F = 1.
        // pseudo-values: 2*(2/3) - 0 = 4/3 and 2*(2/3) - 1 = 1/3;
        // mean 5/6, sd = |4/3 - 1/3| / sqrt(2) = 1/sqrt(2),
        // half-width = t(0.975, 1) * (1/sqrt 2) / sqrt 2 = 12.7062 / 2
        let a = (vec![ev(0, 0, 0.0, 0.0, 2.0)], vec![ev(0, 0, 0.0, 0.0, 2.0)]);
        let b = (vec![], vec![ev(0, 0, 0.0, 0.0, 2.0)]);
        let ci = jackknife_ci(&Scorer::default(), &[a, b], Metric::FScore).unwrap();
        assert_abs_diff_eq!(ci.estimate, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ci.pseudo_mean, 5.0 / 6.0, epsilon = 1e-12);
        let half = 12.706_204_736 / 2.0;
        assert_abs_diff_eq!(ci.low, 5.0 / 6.0 - half, epsilon = 1e-6);
        assert_abs_diff_eq!(ci.high, 5.0 / 6.0 + half, epsilon = 1e-6);
    }

    fn arb_event(frame_max: u32, class_max: u32) -> impl Strategy<Value = EventRecord> {
        (0..frame_max, 0..class_max, -179.0f64..180.0, -89.0f64..89.0, 0.2f64..6.0, 0i64..3).prop_map(
            |(frame, class_id, azimuth, elevation, distance, track_id)| EventRecord {
                frame,
                class_id,
                track_id,
                azimuth,
                elevation,
                distance,
            },
        )
    }

    proptest! {
        #[test]
        fn hungarian_matches_exhaustive_search(
            cost in proptest::collection::vec(proptest::collection::vec(0.0f64..180.0, 1..=3), 1..=3)
        ) {
            let cols = cost[0].len();
            let cost: Vec<Vec<f64>> = cost.into_iter().map(|mut r| { r.resize(cols, 90.0); r }).collect();
            let h = Hungarian.assign(&cost);
            let b = BruteForce.assign(&cost);
            prop_assert_eq!(h.len(), b.len());
            prop_assert!((total(&cost, &h) - total(&cost, &b)).abs() < 1e-9);
        }

        #[test]
        fn scores_ignore_record_order(
            preds in proptest::collection::vec(arb_event(4, 3), 0..12),
            refs in proptest::collection::vec(arb_event(4, 3), 0..12),
            seed in any::<u64>(),
        ) {
            let base = score(&preds, &refs).unwrap();
            let rot = |v: &Vec<EventRecord>| {
                let mut v = v.clone();
                if !v.is_empty() {
                    let k = (seed as usize) % v.len();
                    v.rotate_left(k);
                    v.reverse();
                }
                v
            };
            let shuffled = score(&rot(&preds), &rot(&refs)).unwrap();
            prop_assert_eq!(base.f_score, shuffled.f_score);
            prop_assert!((base.doae - shuffled.doae).abs() < 1e-9);
            prop_assert!((base.rde - shuffled.rde).abs() < 1e-9);
        }

        #[test]
        fn spurious_prediction_never_raises_f(
            preds in proptest::collection::vec(arb_event(3, 2), 0..8),
            refs in proptest::collection::vec(arb_event(3, 2), 1..8),
            extra in arb_event(3, 2),
        ) {
            let before = score(&preds, &refs).unwrap();
            let mut more = preds.clone();
            // a frame no reference occupies, so the prediction cannot match
            more.push(EventRecord { frame: 1000, ..extra });
            let after = score(&more, &refs).unwrap();
            // per-class F can only drop; the macro average can change only
            // through a newly present class, which scores F = 0
            prop_assert!(after.f_score <= before.f_score + 1e-12);
        }

        #[test]
        fn seld_recomputable(
            preds in proptest::collection::vec(arb_event(3, 3), 0..8),
            refs in proptest::collection::vec(arb_event(3, 3), 0..8),
        ) {
            let s = score(&preds, &refs).unwrap();
            prop_assert_eq!(s.seld, seld_score(s.f_score, s.doae, s.rde));
        }
    }
}
