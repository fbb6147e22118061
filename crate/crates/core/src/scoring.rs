//! DER scoring: false alarm / missed speech / speaker confusion against a
//! reference annotation, with collar handling and optimal speaker mapping.
//!
//! Scoring is exact interval arithmetic: the timeline is cut at every turn
//! and collar boundary, each atomic slice is scored from the sets of active
//! reference and hypothesis speakers, and overlapped reference speech
//! counts once per active speaker (dscore defaults).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rttm::Annotation;

pub type ReferenceAnnotation = Annotation;
pub type DiarisationHypothesis = Annotation;

/// DER and its decomposition, as percentages of scored reference speech.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DERReport {
    pub der: f64,
    pub fa: f64,
    pub ms: f64,
    pub sc: f64,
}

/// Raw error times in seconds, for aggregating across sessions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScoreTotals {
    pub fa_time: f64,
    pub ms_time: f64,
    pub sc_time: f64,
    /// Scored reference speech time (speaker-seconds).
    pub ref_time: f64,
}

impl ScoreTotals {
    pub fn add(&mut self, other: &ScoreTotals) {
        self.fa_time += other.fa_time;
        self.ms_time += other.ms_time;
        self.sc_time += other.sc_time;
        self.ref_time += other.ref_time;
    }

    pub fn report(&self) -> Result<DERReport> {
        if self.ref_time <= 0.0 {
            return Err(Error::invalid_input(
                "no scored reference speech: DER is undefined",
            ));
        }
        let fa = 100.0 * self.fa_time / self.ref_time;
        let ms = 100.0 * self.ms_time / self.ref_time;
        let sc = 100.0 * self.sc_time / self.ref_time;
        Ok(DERReport { der: fa + ms + sc, fa, ms, sc })
    }
}

fn merge_intervals(mut intervals: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    intervals.retain(|(a, b)| b > a);
    intervals.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in intervals {
        if let Some(last) = out.last_mut() {
            if a <= last.1 {
                last.1 = last.1.max(b);
                continue;
            }
        }
        out.push((a, b));
    }
    out
}

/// Atomic timeline slice with the sets of active speakers (dense ids).
struct Slice {
    duration: f64,
    ref_active: Vec<usize>,
    hyp_active: Vec<usize>,
}

/// Cuts the scored timeline into atomic slices. Collar no-score intervals
/// of `collar` seconds on each side of every reference turn boundary are
/// removed entirely.
fn atomic_slices(
    reference: &Annotation,
    hypothesis: &Annotation,
    collar: f64,
    ref_ids: &BTreeMap<&str, usize>,
    hyp_ids: &BTreeMap<&str, usize>,
) -> Vec<Slice> {
    let no_score = if collar > 0.0 {
        merge_intervals(
            reference
                .turns
                .iter()
                .flat_map(|t| {
                    [
                        (t.onset - collar, t.onset + collar),
                        (t.offset - collar, t.offset + collar),
                    ]
                })
                .collect(),
        )
    } else {
        Vec::new()
    };

    let mut points: Vec<f64> = Vec::new();
    for t in reference.turns.iter().chain(hypothesis.turns.iter()) {
        points.push(t.onset);
        points.push(t.offset);
    }
    for &(a, b) in &no_score {
        points.push(a);
        points.push(b);
    }
    points.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    points.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut slices = Vec::new();
    for w in points.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 - t0 <= 1e-12 {
            continue;
        }
        let mid = 0.5 * (t0 + t1);
        if no_score.iter().any(|&(a, b)| mid > a && mid < b) {
            continue;
        }
        let mut ref_active: Vec<usize> = Vec::new();
        for t in &reference.turns {
            if t.onset <= mid && mid < t.offset {
                let id = ref_ids[t.speaker.as_str()];
                if !ref_active.contains(&id) {
                    ref_active.push(id);
                }
            }
        }
        let mut hyp_active: Vec<usize> = Vec::new();
        for t in &hypothesis.turns {
            if t.onset <= mid && mid < t.offset {
                let id = hyp_ids[t.speaker.as_str()];
                if !hyp_active.contains(&id) {
                    hyp_active.push(id);
                }
            }
        }
        if ref_active.is_empty() && hyp_active.is_empty() {
            continue;
        }
        slices.push(Slice { duration: t1 - t0, ref_active, hyp_active });
    }
    slices
}

fn speaker_ids(annotation: &Annotation) -> BTreeMap<&str, usize> {
    annotation
        .speakers()
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s, i))
        .collect()
}

/// Maximum-weight assignment on a rectangular matrix; returns column per
/// row (or `None` for unassigned rows). Exact augmenting-path Hungarian.
fn max_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map(|r| r.len()).unwrap_or(0);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    let peak = weights
        .iter()
        .flat_map(|r| r.iter())
        .cloned()
        .fold(0.0f64, f64::max);
    // Pad to square and convert to a minimization problem.
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            peak - weights[i][j]
        } else {
            peak
        }
    };

    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned_row = vec![0usize; n + 1]; // column -> row, 1-based
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = assigned_row[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Optimal one-to-one speaker mapping (hypothesis id -> reference id)
/// maximizing total co-occurring speech time, collar 0.
pub fn optimal_mapping(
    reference: &Annotation,
    hypothesis: &Annotation,
) -> BTreeMap<String, String> {
    let ref_ids = speaker_ids(reference);
    let hyp_ids = speaker_ids(hypothesis);
    let slices = atomic_slices(reference, hypothesis, 0.0, &ref_ids, &hyp_ids);
    let overlap = overlap_matrix(&slices, ref_ids.len(), hyp_ids.len());
    let assignment = max_assignment(&overlap);

    let ref_names: Vec<&str> = reference.speakers();
    let hyp_names: Vec<&str> = hypothesis.speakers();
    let mut out = BTreeMap::new();
    for (r, h) in assignment.into_iter().enumerate() {
        if let Some(h) = h {
            if overlap[r][h] > 0.0 {
                out.insert(hyp_names[h].to_string(), ref_names[r].to_string());
            }
        }
    }
    out
}

fn overlap_matrix(slices: &[Slice], num_ref: usize, num_hyp: usize) -> Vec<Vec<f64>> {
    let mut overlap = vec![vec![0.0f64; num_hyp]; num_ref];
    for s in slices {
        for &r in &s.ref_active {
            for &h in &s.hyp_active {
                overlap[r][h] += s.duration;
            }
        }
    }
    overlap
}

/// Scores `hypothesis` against `reference` and returns raw error times.
pub fn score_totals(
    reference: &Annotation,
    hypothesis: &Annotation,
    collar: f64,
) -> Result<ScoreTotals> {
    if reference.is_empty() {
        return Err(Error::invalid_input("empty reference: DER is undefined"));
    }
    if collar < 0.0 {
        return Err(Error::invalid_input("collar must be >= 0"));
    }
    let ref_ids = speaker_ids(reference);
    let hyp_ids = speaker_ids(hypothesis);
    let slices = atomic_slices(reference, hypothesis, collar, &ref_ids, &hyp_ids);

    let overlap = overlap_matrix(&slices, ref_ids.len(), hyp_ids.len());
    let assignment = max_assignment(&overlap);
    // mapped[h] = r when hypothesis speaker h stands for reference speaker r.
    let mut mapped = vec![usize::MAX; hyp_ids.len()];
    for (r, h) in assignment.iter().enumerate() {
        if let Some(h) = *h {
            if overlap[r][h] > 0.0 {
                mapped[h] = r;
            }
        }
    }

    let mut totals = ScoreTotals::default();
    for s in &slices {
        let n_ref = s.ref_active.len() as f64;
        let n_hyp = s.hyp_active.len() as f64;
        let correct = s
            .hyp_active
            .iter()
            .filter(|&&h| mapped[h] != usize::MAX && s.ref_active.contains(&mapped[h]))
            .count() as f64;
        totals.ref_time += s.duration * n_ref;
        totals.fa_time += s.duration * (n_hyp - n_ref).max(0.0);
        totals.ms_time += s.duration * (n_ref - n_hyp).max(0.0);
        totals.sc_time += s.duration * (n_ref.min(n_hyp) - correct);
    }
    Ok(totals)
}

/// DER report for one session.
pub fn score(reference: &Annotation, hypothesis: &Annotation, collar: f64) -> Result<DERReport> {
    score_totals(reference, hypothesis, collar)?.report()
}

#[cfg(test)]
pub(crate) mod frame_oracle {
    //! Independent 10 ms frame-counting DER oracle used only by tests.

    use super::*;

    pub const FRAME: f64 = 0.01;

    fn active_at(annotation: &Annotation, t: f64) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for turn in &annotation.turns {
            if turn.onset <= t && t < turn.offset && !out.contains(&turn.speaker) {
                out.push(turn.speaker.clone());
            }
        }
        out
    }

    fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
        if items.is_empty() {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for (i, item) in items.iter().enumerate() {
            let mut rest = items.to_vec();
            rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, item.clone());
                out.push(p);
            }
        }
        out
    }

    /// Frame-quantized DER with brute-force speaker mapping.
    pub fn score(reference: &Annotation, hypothesis: &Annotation, collar: f64) -> DERReport {
        let end = reference
            .turns
            .iter()
            .chain(hypothesis.turns.iter())
            .map(|t| t.offset)
            .fold(0.0f64, f64::max)
            + collar
            + 1.0;
        let frames = (end / FRAME).ceil() as usize;

        let no_score: Vec<(f64, f64)> = reference
            .turns
            .iter()
            .flat_map(|t| {
                [
                    (t.onset - collar, t.onset + collar),
                    (t.offset - collar, t.offset + collar),
                ]
            })
            .collect();

        let mut scored: Vec<(Vec<String>, Vec<String>)> = Vec::new();
        for f in 0..frames {
            let t = (f as f64 + 0.5) * FRAME;
            if collar > 0.0 && no_score.iter().any(|&(a, b)| t > a && t < b) {
                continue;
            }
            let r = active_at(reference, t);
            let h = active_at(hypothesis, t);
            if !r.is_empty() || !h.is_empty() {
                scored.push((r, h));
            }
        }

        // Brute-force optimal mapping over hypothesis speaker permutations.
        let ref_speakers: Vec<String> = reference.speakers().iter().map(|s| s.to_string()).collect();
        let hyp_speakers: Vec<String> = hypothesis.speakers().iter().map(|s| s.to_string()).collect();
        let (short, long, hyp_is_short) = if hyp_speakers.len() <= ref_speakers.len() {
            (hyp_speakers.clone(), ref_speakers.clone(), true)
        } else {
            (ref_speakers.clone(), hyp_speakers.clone(), false)
        };
        let mut best: Option<BTreeMap<String, String>> = None; // hyp -> ref
        let mut best_correct = -1i64;
        for perm in permutations(&long) {
            let mapping: BTreeMap<String, String> = if hyp_is_short {
                short.iter().cloned().zip(perm.into_iter()).collect()
            } else {
                perm.into_iter().zip(short.iter().cloned()).collect()
            };
            let mut correct = 0i64;
            for (r, h) in &scored {
                for hs in h {
                    if let Some(rs) = mapping.get(hs) {
                        if r.contains(rs) {
                            correct += 1;
                        }
                    }
                }
            }
            if correct > best_correct {
                best_correct = correct;
                best = Some(mapping);
            }
        }
        let mapping = best.unwrap_or_default();

        let mut fa = 0.0f64;
        let mut ms = 0.0f64;
        let mut sc = 0.0f64;
        let mut ref_time = 0.0f64;
        for (r, h) in &scored {
            let n_ref = r.len() as f64;
            let n_hyp = h.len() as f64;
            let correct = h
                .iter()
                .filter(|hs| mapping.get(*hs).map(|rs| r.contains(rs)).unwrap_or(false))
                .count() as f64;
            ref_time += FRAME * n_ref;
            fa += FRAME * (n_hyp - n_ref).max(0.0);
            ms += FRAME * (n_ref - n_hyp).max(0.0);
            sc += FRAME * (n_ref.min(n_hyp) - correct);
        }
        let fa = 100.0 * fa / ref_time;
        let ms = 100.0 * ms / ref_time;
        let sc = 100.0 * sc / ref_time;
        DERReport { der: fa + ms + sc, fa, ms, sc }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rttm::Turn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ann(turns: &[(&str, f64, f64)]) -> Annotation {
        Annotation::new(
            turns
                .iter()
                .map(|&(s, a, b)| Turn::new(s, a, b).unwrap())
                .collect(),
        )
    }

    #[test]
    fn perfect_hypothesis_scores_zero() {
        let reference = ann(&[("a", 0.0, 4.0), ("b", 4.0, 9.0)]);
        for collar in [0.0, 0.25] {
            let r = score(&reference, &reference, collar).unwrap();
            assert_eq!(r.der, 0.0);
            assert_eq!(r.fa, 0.0);
            assert_eq!(r.ms, 0.0);
            assert_eq!(r.sc, 0.0);
        }
    }

    #[test]
    fn empty_hypothesis_is_all_miss() {
        let reference = ann(&[("a", 0.0, 4.0), ("b", 4.0, 10.0)]);
        let r = score(&reference, &Annotation::default(), 0.0).unwrap();
        assert!((r.ms - 100.0).abs() < 1e-9);
        assert_eq!(r.fa, 0.0);
        assert_eq!(r.sc, 0.0);
        assert!((r.der - 100.0).abs() < 1e-9);
    }

    #[test]
    fn empty_reference_is_an_error() {
        let hyp = ann(&[("a", 0.0, 1.0)]);
        assert!(score(&Annotation::default(), &hyp, 0.0).is_err());
    }

    #[test]
    fn one_second_confusion_in_ten_is_ten_percent() {
        let reference = ann(&[("a", 0.0, 5.0), ("b", 5.0, 10.0)]);
        let hypothesis = ann(&[("x", 0.0, 4.0), ("y", 4.0, 10.0)]);
        let r = score(&reference, &hypothesis, 0.0).unwrap();
        assert!((r.sc - 10.0).abs() < 1e-9, "sc {}", r.sc);
        assert_eq!(r.fa, 0.0);
        assert_eq!(r.ms, 0.0);
        // Frame oracle agrees (boundaries are on the 10 ms grid).
        let o = frame_oracle::score(&reference, &hypothesis, 0.0);
        assert!((o.sc - r.sc).abs() < 1e-9, "oracle {} vs {}", o.sc, r.sc);
    }

    #[test]
    fn identity_and_swap_mappings() {
        let reference = ann(&[("a", 0.0, 2.0), ("b", 2.0, 4.0)]);
        let mapping = optimal_mapping(&reference, &reference);
        assert_eq!(mapping["a"], "a");
        assert_eq!(mapping["b"], "b");

        let swapped = ann(&[("b", 0.0, 2.0), ("a", 2.0, 4.0)]);
        let mapping = optimal_mapping(&reference, &swapped);
        assert_eq!(mapping["b"], "a");
        assert_eq!(mapping["a"], "b");
    }

    #[test]
    fn assignment_matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let w: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..4).map(|_| rng.gen_range(0.0..10.0)).collect())
                .collect();
            let got = max_assignment(&w);
            let got_total: f64 = got
                .iter()
                .enumerate()
                .filter_map(|(i, j)| j.map(|j| w[i][j]))
                .sum();
            // Brute force over 4! permutations.
            let mut best = f64::NEG_INFINITY;
            let idx = [0usize, 1, 2, 3];
            fn perms(v: Vec<usize>) -> Vec<Vec<usize>> {
                if v.len() <= 1 {
                    return vec![v];
                }
                let mut out = Vec::new();
                for i in 0..v.len() {
                    let mut rest = v.clone();
                    let x = rest.remove(i);
                    for mut p in perms(rest) {
                        p.insert(0, x);
                        out.push(p);
                    }
                }
                out
            }
            for p in perms(idx.to_vec()) {
                let total: f64 = p.iter().enumerate().map(|(i, &j)| w[i][j]).sum();
                best = best.max(total);
            }
            assert!((got_total - best).abs() < 1e-9, "{got_total} vs {best}");
        }
    }

    #[test]
    fn relabeling_hypothesis_does_not_change_report() {
        let reference = ann(&[("a", 0.0, 3.0), ("b", 3.0, 7.0), ("c", 7.0, 9.0)]);
        let hyp1 = ann(&[("s0", 0.0, 3.5), ("s1", 3.5, 7.0), ("s2", 7.0, 8.5)]);
        let hyp2 = ann(&[("zz", 0.0, 3.5), ("qq", 3.5, 7.0), ("aa", 7.0, 8.5)]);
        let r1 = score(&reference, &hyp1, 0.0).unwrap();
        let r2 = score(&reference, &hyp2, 0.0).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn decomposition_identity_holds_exactly() {
        let reference = ann(&[("a", 0.0, 3.0), ("b", 2.5, 7.0)]);
        let hypothesis = ann(&[("x", 0.2, 3.1), ("y", 3.4, 6.5), ("z", 8.0, 9.0)]);
        let r = score(&reference, &hypothesis, 0.0).unwrap();
        assert_eq!(r.der, r.fa + r.ms + r.sc);
    }

    #[test]
    fn collar_forgives_boundary_errors() {
        let reference = ann(&[("a", 0.0, 5.0), ("b", 5.0, 10.0)]);
        // Boundary placed 0.2 s late: an error inside the 0.25 s collar.
        let hypothesis = ann(&[("a", 0.0, 5.2), ("b", 5.2, 10.0)]);
        let strict = score(&reference, &hypothesis, 0.0).unwrap();
        let forgiving = score(&reference, &hypothesis, 0.25).unwrap();
        assert!(strict.der > 0.0);
        assert_eq!(forgiving.der, 0.0);
    }

    #[test]
    fn overlapped_reference_counts_each_speaker() {
        // Two speakers overlap on [2, 4]: reference time is 2 + 2 + 2 s ... wait,
        // a: [0,4], b: [2,6] -> speaker-seconds = 4 + 4 = 8.
        let reference = ann(&[("a", 0.0, 4.0), ("b", 2.0, 6.0)]);
        // Hypothesis covers only speaker a's span with one speaker.
        let hypothesis = ann(&[("x", 0.0, 4.0)]);
        let totals = score_totals(&reference, &hypothesis, 0.0).unwrap();
        assert!((totals.ref_time - 8.0).abs() < 1e-9);
        // [2,4]: two ref speakers, one hyp -> 2 s missed; [4,6]: 2 s missed.
        assert!((totals.ms_time - 4.0).abs() < 1e-9);
        assert_eq!(totals.fa_time, 0.0);
    }

    fn random_grid_session(rng: &mut ChaCha8Rng) -> (Annotation, Annotation) {
        // All boundaries on the 10 ms grid so the frame oracle is exact.
        let speakers = rng.gen_range(2..=4usize);
        let mut t = 0.0f64;
        let mut ref_turns = Vec::new();
        for i in 0..rng.gen_range(6..=12usize) {
            let spk = format!("r{}", (i + rng.gen_range(0..speakers)) % speakers);
            let dur = rng.gen_range(40..250) as f64 * 0.01;
            let gap = rng.gen_range(0..60) as f64 * 0.01;
            ref_turns.push(Turn::new(spk, t + gap, t + gap + dur).unwrap());
            t += gap + dur;
        }
        let reference = Annotation::new(ref_turns);

        // Perturbed copy: jitter boundaries, drop or relabel some turns,
        // add a spurious one.
        let mut hyp_turns = Vec::new();
        for (i, turn) in reference.turns.iter().enumerate() {
            if rng.gen_bool(0.15) {
                continue; // dropped -> miss
            }
            let jitter = rng.gen_range(-15..=15i64) as f64 * 0.01;
            let onset = (turn.onset + jitter).max(0.0);
            let offset = (turn.offset + rng.gen_range(-15..=15i64) as f64 * 0.01).max(onset + 0.05);
            let spk = if rng.gen_bool(0.2) {
                format!("h{}", (i + 1) % speakers)
            } else {
                turn.speaker.replace('r', "h")
            };
            hyp_turns.push(Turn::new(spk, onset, offset).unwrap());
        }
        if rng.gen_bool(0.5) {
            hyp_turns.push(Turn::new("hx", t + 1.0, t + 1.0 + rng.gen_range(20..100) as f64 * 0.01).unwrap());
        }
        (reference, Annotation::new(hyp_turns))
    }

    #[test]
    fn interval_scorer_matches_frame_oracle_on_random_sessions() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..25 {
            let (reference, hypothesis) = random_grid_session(&mut rng);
            for collar in [0.0, 0.25] {
                let exact = score(&reference, &hypothesis, collar).unwrap();
                let oracle = frame_oracle::score(&reference, &hypothesis, collar);
                assert!(
                    (exact.der - oracle.der).abs() < 0.01
                        && (exact.fa - oracle.fa).abs() < 0.01
                        && (exact.ms - oracle.ms).abs() < 0.01
                        && (exact.sc - oracle.sc).abs() < 0.01,
                    "trial {trial} collar {collar}: {exact:?} vs {oracle:?}"
                );
            }
        }
    }
}
