//! Speech regions, per-scale uniform segmentation, and the cross-scale
//! closest-midpoint mapping.
//!
//! Times are seconds as `f64` throughout. The entry point is post-SAD:
//! either framewise speech probabilities (smoothed here) or speech regions
//! given directly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Comparisons between segment boundaries tolerate this much rounding.
const TIME_EPS: f64 = 1e-9;

/// A maximal interval of speech, speaker-agnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechRegion {
    pub onset: f64,
    pub offset: f64,
}

impl SpeechRegion {
    pub fn new(onset: f64, offset: f64) -> Result<Self> {
        if !(onset.is_finite() && offset.is_finite()) {
            return Err(Error::NonFinite(format!("region [{onset}, {offset}]")));
        }
        if onset < 0.0 || offset <= onset {
            return Err(Error::invalid_input(format!(
                "region [{onset}, {offset}] must satisfy 0 <= onset < offset"
            )));
        }
        Ok(Self { onset, offset })
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.onset - TIME_EPS && t <= self.offset + TIME_EPS
    }
}

/// One segmentation scale: window length, hop, and whether it is the
/// base scale (the unit of clustering and labeling).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub window: f64,
    pub shift: f64,
    pub is_base: bool,
}

impl ScaleConfig {
    pub fn new(window: f64, shift: f64, is_base: bool) -> Result<Self> {
        if !(shift > 0.0 && shift <= window + TIME_EPS) {
            return Err(Error::config(format!(
                "scale window {window} / shift {shift}: need 0 < shift <= window"
            )));
        }
        Ok(Self { window, shift, is_base })
    }
}

/// The three scales used throughout: 0.5 s (base), 1.0 s, 1.5 s windows
/// with 0.25 s / 0.25 s / 0.16 s shifts.
pub fn default_scale_set() -> Vec<ScaleConfig> {
    vec![
        ScaleConfig { window: 0.5, shift: 0.25, is_base: true },
        ScaleConfig { window: 1.0, shift: 0.25, is_base: false },
        ScaleConfig { window: 1.5, shift: 0.16, is_base: false },
    ]
}

/// Checks the scale-set invariants and returns the base scale's index.
pub fn validate_scale_set(scales: &[ScaleConfig]) -> Result<usize> {
    if scales.is_empty() {
        return Err(Error::config("scale set is empty"));
    }
    let mut base = None;
    for (i, s) in scales.iter().enumerate() {
        ScaleConfig::new(s.window, s.shift, s.is_base)?;
        if s.is_base {
            if base.is_some() {
                return Err(Error::config("scale set has more than one base scale"));
            }
            base = Some(i);
        }
    }
    let base = base.ok_or_else(|| Error::config("scale set has no base scale"))?;
    let min_window = scales.iter().map(|s| s.window).fold(f64::INFINITY, f64::min);
    if scales[base].window > min_window + TIME_EPS {
        return Err(Error::config("base scale must have the smallest window"));
    }
    Ok(base)
}

/// A uniform segment at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub scale_index: usize,
    pub onset: f64,
    pub offset: f64,
    pub midpoint: f64,
}

impl Segment {
    fn new(scale_index: usize, onset: f64, offset: f64) -> Self {
        Self { scale_index, onset, offset, midpoint: 0.5 * (onset + offset) }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

/// For every base-scale segment, the index of the closest-midpoint segment
/// at each scale (identity on the base scale itself).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleMapping {
    pub base_scale: usize,
    /// `map[b][s]` = segment index at scale `s` mapped to base segment `b`.
    pub map: Vec<Vec<usize>>,
}

impl ScaleMapping {
    pub fn mapped_index(&self, base_segment: usize, scale: usize) -> usize {
        self.map[base_segment][scale]
    }

    pub fn num_base_segments(&self) -> usize {
        self.map.len()
    }
}

fn validate_regions(regions: &[SpeechRegion]) -> Result<()> {
    for (i, r) in regions.iter().enumerate() {
        SpeechRegion::new(r.onset, r.offset)?;
        if i > 0 && r.onset < regions[i - 1].offset - TIME_EPS {
            return Err(Error::invalid_input(format!(
                "regions must be sorted and non-overlapping; region {i} starts at {} before previous offset {}",
                r.onset,
                regions[i - 1].offset
            )));
        }
    }
    Ok(())
}

/// Smooths framewise speech probabilities into speech regions.
///
/// A frame is speech when its probability is >= 0.5. Scanning trailing
/// windows of `window` seconds: while closed, a region opens at the window
/// start once the speech fraction exceeds `onset_ratio`; while open, it
/// closes at the window end once the non-speech fraction exceeds
/// `offset_ratio`. Both rules extend the region outward, so smoothing is
/// lenient on each side. A region still open at stream end closes there.
pub fn smooth_sad(
    frame_probs: &[f64],
    frame_rate: f64,
    window: f64,
    onset_ratio: f64,
    offset_ratio: f64,
) -> Result<Vec<SpeechRegion>> {
    if !(frame_rate > 0.0 && frame_rate.is_finite()) {
        return Err(Error::invalid_input(format!("frame rate {frame_rate} must be positive")));
    }
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::invalid_input(format!("window {window} must be positive")));
    }
    for ratio in [onset_ratio, offset_ratio] {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::invalid_input(format!("ratio {ratio} must be in (0, 1]")));
        }
    }
    for (i, &p) in frame_probs.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("probability at frame {i}")));
        }
    }
    let n = frame_probs.len();
    if n == 0 {
        return Ok(Vec::new());
    }

    let speech: Vec<bool> = frame_probs.iter().map(|&p| p >= 0.5).collect();
    let w = ((window * frame_rate).round() as usize).max(1);

    let mut regions: Vec<SpeechRegion> = Vec::new();
    let mut open_at: Option<f64> = None;
    let push_region = |onset: f64, offset: f64, regions: &mut Vec<SpeechRegion>| {
        if let Some(last) = regions.last_mut() {
            if onset <= last.offset + TIME_EPS {
                last.offset = last.offset.max(offset);
                return;
            }
        }
        regions.push(SpeechRegion { onset, offset });
    };

    // Trailing full windows only; a stream shorter than one window is
    // judged by a single clipped window at its end.
    let first = w.saturating_sub(1).min(n - 1);
    let mut in_window = speech[..=first].iter().filter(|&&s| s).count();
    let mut lo = 0usize; // first frame of the current window
    for i in first..n {
        if i > first {
            in_window += usize::from(speech[i]);
            in_window -= usize::from(speech[lo]);
            lo += 1;
        }
        let len = i - lo + 1;
        let speech_frac = in_window as f64 / len as f64;
        match open_at {
            None => {
                if speech_frac > onset_ratio {
                    open_at = Some(lo as f64 / frame_rate);
                }
            }
            Some(onset) => {
                let nonspeech_frac = 1.0 - speech_frac;
                if nonspeech_frac > offset_ratio {
                    push_region(onset, (i + 1) as f64 / frame_rate, &mut regions);
                    open_at = None;
                }
            }
        }
    }
    if let Some(onset) = open_at {
        push_region(onset, n as f64 / frame_rate, &mut regions);
    }
    Ok(regions)
}

/// Splits each speech region into uniform segments at one scale.
///
/// A region shorter than the window yields a single segment covering the
/// whole region. Otherwise full windows start every `shift` seconds; if
/// they stop short of the region end, a clipped tail segment ending at the
/// region offset is added provided it would be at least one shift long.
pub fn segment_uniform(regions: &[SpeechRegion], scale: &ScaleConfig, scale_index: usize) -> Result<Vec<Segment>> {
    validate_regions(regions)?;
    ScaleConfig::new(scale.window, scale.shift, scale.is_base)?;

    let mut out = Vec::new();
    for region in regions {
        let duration = region.duration();
        if duration < scale.window - TIME_EPS {
            out.push(Segment::new(scale_index, region.onset, region.offset));
            continue;
        }
        let full = ((duration - scale.window) / scale.shift + TIME_EPS).floor() as usize;
        for k in 0..=full {
            let onset = region.onset + k as f64 * scale.shift;
            out.push(Segment::new(scale_index, onset, onset + scale.window));
        }
        let covered = scale.window + full as f64 * scale.shift;
        let tail_onset = region.onset + (full + 1) as f64 * scale.shift;
        if duration > covered + TIME_EPS && region.offset - tail_onset >= scale.shift - TIME_EPS {
            out.push(Segment::new(scale_index, tail_onset, region.offset));
        }
    }
    Ok(out)
}

/// Runs `segment_uniform` for every scale in the set.
pub fn segment_all_scales(regions: &[SpeechRegion], scales: &[ScaleConfig]) -> Result<Vec<Vec<Segment>>> {
    validate_scale_set(scales)?;
    scales
        .iter()
        .enumerate()
        .map(|(i, s)| segment_uniform(regions, s, i))
        .collect()
}

/// Maps each base segment to the closest-midpoint segment per scale.
/// Midpoint ties break toward the earlier segment.
pub fn build_scale_mapping(per_scale: &[Vec<Segment>], base_scale: usize) -> Result<ScaleMapping> {
    let base = per_scale
        .get(base_scale)
        .ok_or_else(|| Error::invalid_input(format!("base scale index {base_scale} out of range")))?;
    for (s, segs) in per_scale.iter().enumerate() {
        if segs.is_empty() && !base.is_empty() {
            return Err(Error::invalid_input(format!(
                "scale {s} has no segments but the base scale has {}",
                base.len()
            )));
        }
    }

    let mut map = Vec::with_capacity(base.len());
    for b in base {
        let mut row = Vec::with_capacity(per_scale.len());
        for (s, segs) in per_scale.iter().enumerate() {
            if s == base_scale {
                row.push(map.len());
                continue;
            }
            row.push(closest_midpoint(segs, b.midpoint));
        }
        map.push(row);
    }
    // Identity column for the base scale.
    for (b, row) in map.iter_mut().enumerate() {
        row[base_scale] = b;
    }
    Ok(ScaleMapping { base_scale, map })
}

fn closest_midpoint(segments: &[Segment], midpoint: f64) -> usize {
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (i, s) in segments.iter().enumerate() {
        let d = (s.midpoint - midpoint).abs();
        if d < best_dist - TIME_EPS {
            best = i;
            best_dist = d;
        }
    }
    best
}

/// Reads a two-column `onset offset` text file (seconds).
pub fn read_regions(path: &Path) -> Result<Vec<SpeechRegion>> {
    let text = std::fs::read_to_string(path)?;
    let mut regions = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (onset, offset) = match (parts.next(), parts.next()) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::format(
                    path.display().to_string(),
                    format!("line {}: expected `onset offset`", lineno + 1),
                ))
            }
        };
        let onset: f64 = onset.parse().map_err(|_| {
            Error::format(path.display().to_string(), format!("line {}: bad onset", lineno + 1))
        })?;
        let offset: f64 = offset.parse().map_err(|_| {
            Error::format(path.display().to_string(), format!("line {}: bad offset", lineno + 1))
        })?;
        regions.push(SpeechRegion::new(onset, offset)?);
    }
    validate_regions(&regions)?;
    Ok(regions)
}

/// Writes regions as two columns with 3 decimal places.
pub fn write_regions(path: &Path, regions: &[SpeechRegion]) -> Result<()> {
    let mut text = String::new();
    for r in regions {
        writeln!(text, "{:.3} {:.3}", r.onset, r.offset).expect("string write");
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Merges arbitrary (possibly overlapping) intervals into sorted,
/// non-overlapping speech regions. Used for reference-SAD mode.
pub fn merge_into_regions(mut intervals: Vec<(f64, f64)>) -> Result<Vec<SpeechRegion>> {
    intervals.retain(|(a, b)| b > a);
    intervals.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    let mut out: Vec<SpeechRegion> = Vec::new();
    for (onset, offset) in intervals {
        if let Some(last) = out.last_mut() {
            if onset <= last.offset + TIME_EPS {
                last.offset = last.offset.max(offset);
                continue;
            }
        }
        out.push(SpeechRegion::new(onset, offset)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(onset: f64, offset: f64) -> SpeechRegion {
        SpeechRegion::new(onset, offset).unwrap()
    }

    #[test]
    fn saturated_probabilities_give_one_region() {
        let probs = vec![1.0; 1000]; // 10 s at 100 fps
        let regions = smooth_sad(&probs, 100.0, 0.5, 0.7, 0.7).unwrap();
        assert_eq!(regions.len(), 1);
        assert!((regions[0].onset - 0.0).abs() < 1e-12);
        assert!((regions[0].offset - 10.0).abs() < 1e-12);
    }

    #[test]
    fn silence_gives_empty_list() {
        let probs = vec![0.0; 500];
        assert!(smooth_sad(&probs, 100.0, 0.5, 0.7, 0.7).unwrap().is_empty());
        assert!(smooth_sad(&[], 100.0, 0.5, 0.7, 0.7).unwrap().is_empty());
    }

    #[test]
    fn alternating_frames_never_open_a_region() {
        // Oracle: enumerate every trailing full window and record the
        // maximum speech fraction; the smoother must agree.
        let probs: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let w = 50usize;
        let speech: Vec<bool> = probs.iter().map(|&p| p >= 0.5).collect();
        let mut max_frac: f64 = 0.0;
        for i in (w - 1)..speech.len() {
            let count = speech[i + 1 - w..=i].iter().filter(|&&s| s).count();
            max_frac = max_frac.max(count as f64 / w as f64);
        }
        assert!(max_frac <= 0.7, "oracle fraction {max_frac}");
        let regions = smooth_sad(&probs, 100.0, 0.5, 0.7, 0.7).unwrap();
        assert!(regions.is_empty());
    }

    #[test]
    fn smoothing_rejects_non_finite_probability() {
        let err = smooth_sad(&[0.3, f64::NAN], 100.0, 0.5, 0.7, 0.7).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn speech_burst_produces_outward_extended_region() {
        // 1 s speech then 1 s silence at 100 fps.
        let mut probs = vec![1.0; 100];
        probs.extend(vec![0.0; 100]);
        let regions = smooth_sad(&probs, 100.0, 0.5, 0.7, 0.7).unwrap();
        assert_eq!(regions.len(), 1);
        assert!((regions[0].onset - 0.0).abs() < 1e-12);
        // Region closes once 70% of the trailing window is silence.
        assert!(regions[0].offset >= 1.0 && regions[0].offset <= 1.4);
    }

    #[test]
    fn uniform_segmentation_matches_formula_oracle() {
        let scale = ScaleConfig::new(0.5, 0.25, true).unwrap();
        let segs = segment_uniform(&[region(0.0, 2.0)], &scale, 0).unwrap();
        // Oracle: onsets at k*shift for k = 0..=floor((D - window)/shift).
        let expected: Vec<f64> = (0..=6).map(|k| k as f64 * 0.25).collect();
        assert_eq!(segs.len(), expected.len());
        for (s, &want) in segs.iter().zip(&expected) {
            assert!((s.onset - want).abs() < 1e-12);
            assert!((s.offset - want - 0.5).abs() < 1e-12);
            assert!((s.midpoint - 0.5 * (s.onset + s.offset)).abs() < 1e-12);
        }
    }

    #[test]
    fn short_region_yields_single_clipped_segment() {
        let scale = ScaleConfig::new(0.5, 0.25, true).unwrap();
        let segs = segment_uniform(&[region(0.0, 0.3)], &scale, 0).unwrap();
        assert_eq!(segs.len(), 1);
        assert!((segs[0].onset - 0.0).abs() < 1e-12);
        assert!((segs[0].offset - 0.3).abs() < 1e-12);
    }

    #[test]
    fn exact_fit_yields_single_segment() {
        let scale = ScaleConfig::new(0.5, 0.25, true).unwrap();
        let segs = segment_uniform(&[region(0.0, 0.5)], &scale, 0).unwrap();
        assert_eq!(segs.len(), 1);
        assert!((segs[0].offset - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tail_segment_emitted_when_long_enough() {
        let scale = ScaleConfig::new(0.5, 0.25, true).unwrap();
        // D = 2.1: full windows end at 2.0, tail [1.75, 2.1] is 0.35 >= shift.
        let segs = segment_uniform(&[region(0.0, 2.1)], &scale, 0).unwrap();
        assert_eq!(segs.len(), 8);
        let tail = segs.last().unwrap();
        assert!((tail.onset - 1.75).abs() < 1e-9);
        assert!((tail.offset - 2.1).abs() < 1e-12);
    }

    #[test]
    fn micro_tail_dropped() {
        let scale = ScaleConfig::new(0.3, 0.25, true).unwrap();
        // D = 0.4: full window [0, 0.3]; tail would be [0.25, 0.4] = 0.15 < shift.
        let segs = segment_uniform(&[region(0.0, 0.4)], &scale, 0).unwrap();
        assert_eq!(segs.len(), 1);
    }

    #[test]
    fn segment_count_lower_bound_holds() {
        let scale = ScaleConfig::new(1.5, 0.16, false).unwrap();
        for dur in [1.5, 1.66, 2.0, 3.7, 10.0] {
            let segs = segment_uniform(&[region(0.0, dur)], &scale, 2).unwrap();
            let bound = ((dur - 1.5) / 0.16 + 1e-9).floor() as usize + 1;
            assert!(segs.len() >= bound, "dur {dur}: {} < {bound}", segs.len());
            // Sorted by onset.
            for w in segs.windows(2) {
                assert!(w[0].onset < w[1].onset);
            }
        }
    }

    #[test]
    fn closest_midpoint_picks_unique_minimum() {
        let others = vec![
            Segment::new(1, 0.0, 1.0),  // midpoint 0.5
            Segment::new(1, 0.25, 1.25), // midpoint 0.75
        ];
        assert_eq!(closest_midpoint(&others, 0.25), 0);
    }

    #[test]
    fn closest_midpoint_tie_breaks_earlier() {
        let others = vec![
            Segment::new(1, 0.0, 1.0), // midpoint 0.5
            Segment::new(1, 0.5, 1.5), // midpoint 1.0
        ];
        // Base midpoint 0.75 is equidistant; earlier segment wins.
        assert_eq!(closest_midpoint(&others, 0.75), 0);
    }

    #[test]
    fn mapping_matches_brute_force_on_random_midpoints() {
        let mut state = 0xc0ffee_u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            let candidates: Vec<Segment> = {
                let mut onsets: Vec<f64> = (0..20).map(|_| next() * 10.0).collect();
                onsets.sort_by(|a, b| a.partial_cmp(b).unwrap());
                onsets.iter().map(|&o| Segment::new(1, o, o + 1.0)).collect()
            };
            let target = next() * 12.0;
            let got = closest_midpoint(&candidates, target);
            let mut best = 0;
            for (i, s) in candidates.iter().enumerate() {
                if (s.midpoint - target).abs() < (candidates[best].midpoint - target).abs() - 1e-9 {
                    best = i;
                }
            }
            assert_eq!(got, best);
        }
    }

    #[test]
    fn mapping_is_total_and_stays_in_region() {
        let regions = vec![region(0.0, 3.0), region(10.0, 11.2)];
        let scales = default_scale_set();
        let per_scale = segment_all_scales(&regions, &scales).unwrap();
        let mapping = build_scale_mapping(&per_scale, 0).unwrap();
        assert_eq!(mapping.num_base_segments(), per_scale[0].len());
        for (b, row) in mapping.map.iter().enumerate() {
            assert_eq!(row.len(), scales.len());
            let base_mid = per_scale[0][b].midpoint;
            let owning = regions.iter().find(|r| r.contains(base_mid)).unwrap();
            for (s, &idx) in row.iter().enumerate() {
                let mapped = &per_scale[s][idx];
                // Mapped segment lives in the same speech region.
                assert!(owning.contains(mapped.midpoint), "base {b} scale {s}");
            }
        }
        // Idempotent.
        let again = build_scale_mapping(&per_scale, 0).unwrap();
        assert_eq!(mapping, again);
    }

    #[test]
    fn mapping_rejects_empty_scale() {
        let base = vec![Segment::new(0, 0.0, 0.5)];
        let err = build_scale_mapping(&[base, Vec::new()], 0).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn region_text_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("regions.txt");
        let regions = vec![region(0.0, 1.234), region(2.5, 3.75)];
        write_regions(&path, &regions).unwrap();
        let back = read_regions(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[1].offset - 3.75).abs() < 1e-9);
    }

    #[test]
    fn scale_set_validation() {
        assert!(validate_scale_set(&default_scale_set()).unwrap() == 0);
        let two_bases = vec![
            ScaleConfig { window: 0.5, shift: 0.25, is_base: true },
            ScaleConfig { window: 1.0, shift: 0.25, is_base: true },
        ];
        assert!(validate_scale_set(&two_bases).is_err());
        let base_not_smallest = vec![
            ScaleConfig { window: 0.5, shift: 0.25, is_base: false },
            ScaleConfig { window: 1.0, shift: 0.25, is_base: true },
        ];
        assert!(validate_scale_set(&base_not_smallest).is_err());
    }
}
