//! Temporal localisation of saliency: slide a fixed-duration window over
//! the time axis, score each position by its summed relevance and keep the
//! k best, plus duration-matched random windows as a baseline.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{fmt_f64, parse_f64};
use crate::saliency::SaliencyMap;
use crate::spectrogram::FrameGeometry;

/// Attempts made to place disjoint random windows before allowing overlap.
pub const RANDOM_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverlapPolicy {
    NonOverlapping,
    Free,
}

impl fmt::Display for OverlapPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverlapPolicy::NonOverlapping => "non_overlapping",
            OverlapPolicy::Free => "free",
        })
    }
}

impl FromStr for OverlapPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non_overlapping" => Ok(OverlapPolicy::NonOverlapping),
            "free" => Ok(OverlapPolicy::Free),
            other => Err(Error::InvalidArgument(format!(
                "unknown overlap policy {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub segment_duration_s: f64,
    pub k: usize,
    pub slide_stride_frames: usize,
    pub overlap: OverlapPolicy,
    /// Score windows by summed absolute relevance instead of signed relevance.
    pub use_abs: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            segment_duration_s: 0.15,
            k: 5,
            slide_stride_frames: 1,
            overlap: OverlapPolicy::NonOverlapping,
            use_abs: false,
        }
    }
}

impl SegmentationConfig {
    /// Window length in frames: `round(duration * sample_rate / hop)`.
    pub fn window_frames(&self, sample_rate: u32, hop_length: usize) -> Result<usize> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.slide_stride_frames == 0 {
            return Err(Error::InvalidArgument(
                "slide stride must be at least 1".into(),
            ));
        }
        let frames = (self.segment_duration_s * sample_rate as f64 / hop_length as f64).round();
        if !(frames >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "segment duration {} s is shorter than one frame",
                self.segment_duration_s
            )));
        }
        Ok(frames as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalientSegment {
    pub rank: usize,
    pub frame_start: usize,
    pub frame_end: usize,
    pub sample_start: usize,
    pub sample_end: usize,
    pub cumulative_relevance: f64,
}

impl SalientSegment {
    pub fn overlaps_frames(&self, start: usize, end: usize) -> bool {
        self.frame_start < end && start < self.frame_end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub segments: Vec<SalientSegment>,
    /// Fewer than k windows could be selected.
    pub short_selection: bool,
    /// Random placement gave up on disjointness.
    pub overlap_fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowScore {
    pub frame_start: usize,
    pub score: f64,
}

/// Summed relevance of every window position.
///
/// Summation order is fixed: each frame's column is summed top to bottom,
/// then the window's column sums are added left to right.
pub fn window_scores(
    m: &SaliencyMap,
    window: usize,
    stride: usize,
    use_abs: bool,
) -> Result<Vec<WindowScore>> {
    let (h, w) = m.data.dim();
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "window and stride must be >= 1".into(),
        ));
    }
    if window > w {
        return Err(Error::InvalidArgument(format!(
            "segment window of {window} frames exceeds map width {w}"
        )));
    }
    let columns: Vec<f64> = (0..w)
        .map(|t| {
            let mut acc = 0.0;
            for r in 0..h {
                let v = m.data[(r, t)];
                acc += if use_abs { v.abs() } else { v };
            }
            acc
        })
        .collect();
    Ok((0..=w - window)
        .step_by(stride)
        .map(|start| {
            let mut score = 0.0;
            for c in &columns[start..start + window] {
                score += c;
            }
            WindowScore {
                frame_start: start,
                score,
            }
        })
        .collect())
}

fn by_rank(a: &WindowScore, b: &WindowScore) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.frame_start.cmp(&b.frame_start))
}

/// Greedy top-k in descending score order, earliest start first on ties.
/// Under [`OverlapPolicy::NonOverlapping`] a candidate overlapping an
/// already selected window is skipped.
pub fn select_topk(
    scores: &[WindowScore],
    window: usize,
    k: usize,
    overlap: OverlapPolicy,
    geometry: &FrameGeometry,
) -> Result<Selection> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(
            "no window positions to select from".into(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut order: Vec<WindowScore> = scores.to_vec();
    order.sort_by(by_rank);

    let mut segments: Vec<SalientSegment> = Vec::with_capacity(k);
    for cand in order {
        if segments.len() == k {
            break;
        }
        let end = cand.frame_start + window;
        if overlap == OverlapPolicy::NonOverlapping
            && segments
                .iter()
                .any(|s| s.overlaps_frames(cand.frame_start, end))
        {
            continue;
        }
        let (sample_start, sample_end) = geometry.frame_to_samples(cand.frame_start, end)?;
        segments.push(SalientSegment {
            rank: segments.len() + 1,
            frame_start: cand.frame_start,
            frame_end: end,
            sample_start,
            sample_end,
            cumulative_relevance: cand.score,
        });
    }
    let short_selection = segments.len() < k;
    if short_selection {
        log::debug!("only {} of {k} disjoint windows available", segments.len());
    }
    Ok(Selection {
        segments,
        short_selection,
        overlap_fallback: false,
    })
}

/// Scores and selects the top-k windows of a map.
pub fn segment_map(
    m: &SaliencyMap,
    geometry: &FrameGeometry,
    sample_rate: u32,
    cfg: &SegmentationConfig,
) -> Result<Selection> {
    if m.data.ncols() != geometry.n_frames {
        return Err(Error::Shape {
            expected: (m.data.nrows(), geometry.n_frames),
            got: m.data.dim(),
        });
    }
    let window = cfg.window_frames(sample_rate, geometry.hop_length)?;
    let scores = window_scores(m, window, cfg.slide_stride_frames, cfg.use_abs)?;
    select_topk(&scores, window, cfg.k, cfg.overlap, geometry)
}

/// k duration-matched windows with uniformly drawn starts.
///
/// Windows are drawn one at a time; a draw overlapping an earlier window is
/// rejected and retried. After [`RANDOM_ATTEMPTS`] rejections the remaining
/// windows are drawn without the disjointness constraint and the selection is
/// flagged. Output order is draw order. Relevance is set to 0.
pub fn random_segments(
    window: usize,
    k: usize,
    seed: u64,
    geometry: &FrameGeometry,
) -> Result<Selection> {
    let n_frames = geometry.n_frames;
    if window == 0 || window > n_frames {
        return Err(Error::InvalidArgument(format!(
            "random window of {window} frames does not fit {n_frames} frames"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = n_frames - window + 1;
    let mut starts: Vec<usize> = Vec::with_capacity(k);
    let mut rejections = 0;
    let mut fallback = false;
    while starts.len() < k {
        let s = rng.random_range(0..positions);
        let clash = starts.iter().any(|&o| s < o + window && o < s + window);
        if clash && !fallback {
            rejections += 1;
            if rejections >= RANDOM_ATTEMPTS {
                fallback = true;
            }
            continue;
        }
        starts.push(s);
    }
    let segments = starts
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let (sample_start, sample_end) = geometry.frame_to_samples(s, s + window)?;
            Ok(SalientSegment {
                rank: i + 1,
                frame_start: s,
                frame_end: s + window,
                sample_start,
                sample_end,
                cumulative_relevance: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if fallback {
        log::debug!(
            "random windows overlap: {k} x {window} frames do not fit disjointly in {n_frames}"
        );
    }
    Ok(Selection {
        segments,
        short_selection: false,
        overlap_fallback: fallback,
    })
}

/// SEG1: one line per segment,
/// `rank frame_start frame_end sample_start sample_end relevance`.
pub fn render_seg1(segments: &[SalientSegment]) -> String {
    let mut out = String::new();
    for s in segments {
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            s.rank,
            s.frame_start,
            s.frame_end,
            s.sample_start,
            s.sample_end,
            fmt_f64(s.cumulative_relevance)
        ));
    }
    out
}

pub fn write_seg1(segments: &[SalientSegment], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_seg1(segments))?;
    Ok(())
}

pub fn parse_seg1(text: &str) -> Result<Vec<SalientSegment>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, line)| {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 6 {
                return Err(Error::Format(format!(
                    "SEG1 line {}: expected 6 fields",
                    i + 1
                )));
            }
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Format(format!("SEG1 line {}: bad integer {s:?}", i + 1)))
            };
            let seg = SalientSegment {
                rank: int(toks[0])?,
                frame_start: int(toks[1])?,
                frame_end: int(toks[2])?,
                sample_start: int(toks[3])?,
                sample_end: int(toks[4])?,
                cumulative_relevance: parse_f64(toks[5])?,
            };
            if seg.frame_start >= seg.frame_end || seg.sample_start >= seg.sample_end {
                return Err(Error::Format(format!("SEG1 line {}: empty span", i + 1)));
            }
            Ok(seg)
        })
        .collect()
}

pub fn read_seg1(path: impl AsRef<Path>) -> Result<Vec<SalientSegment>> {
    parse_seg1(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saliency::SaliencyMethod;
    use ndarray::Array2;

    fn map(data: Array2<f64>) -> SaliencyMap {
        SaliencyMap {
            data,
            method: SaliencyMethod::Occlusion,
            target_label: "sad".into(),
            source_id: "m".into(),
            spectro_digest: "d".into(),
        }
    }

    fn geom(n_frames: usize) -> FrameGeometry {
        FrameGeometry {
            hop_length: 240,
            win_length: 480,
            n_frames,
            n_samples: (n_frames - 1) * 240 + 480,
        }
    }

    #[test]
    fn default_window_is_ten_frames() {
        assert_eq!(
            SegmentationConfig::default()
                .window_frames(16000, 240)
                .unwrap(),
            10
        );
        let tiny = SegmentationConfig {
            segment_duration_s: 0.001,
            ..Default::default()
        };
        assert!(tiny.window_frames(16000, 240).is_err());
    }

    #[test]
    fn zero_map_scores() {
        let s = window_scores(&map(Array2::zeros((4, 20))), 5, 1, false).unwrap();
        assert_eq!(s.len(), 16);
        assert!(s.iter().all(|w| w.score == 0.0));
    }

    #[test]
    fn single_cell_support() {
        let mut d = Array2::zeros((4, 20));
        d[(2, 7)] = 1.0;
        let s = window_scores(&map(d), 5, 1, false).unwrap();
        for w in s {
            let contains = w.frame_start <= 7 && 7 < w.frame_start + 5;
            assert_eq!(w.score, if contains { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn window_too_wide() {
        assert!(window_scores(&map(Array2::zeros((4, 8))), 10, 1, false).is_err());
        assert!(select_topk(&[], 10, 5, OverlapPolicy::NonOverlapping, &geom(10)).is_err());
    }

    #[test]
    fn uniform_map_ties_step_by_window() {
        let m = map(Array2::from_elem((8, 132), 0.5));
        let sel = segment_map(&m, &geom(132), 16000, &SegmentationConfig::default()).unwrap();
        let starts: Vec<usize> = sel.segments.iter().map(|s| s.frame_start).collect();
        assert_eq!(starts, vec![0, 10, 20, 30, 40]);
        assert!(!sel.short_selection);
        assert_eq!(sel.segments[0].sample_start, 0);
        assert_eq!(sel.segments[0].sample_end, 2640);
        assert_eq!(
            sel.segments.iter().map(|s| s.rank).collect::<Vec<_>>(),
            vec![1, 2, 3, 4, 5]
        );
    }

    #[test]
    fn spike_then_earliest_disjoint() {
        let mut d = Array2::zeros((3, 30));
        d[(1, 7)] = 1.0;
        let scores = window_scores(&map(d), 10, 1, false).unwrap();
        let sel = select_topk(&scores, 10, 2, OverlapPolicy::NonOverlapping, &geom(30)).unwrap();
        assert_eq!(sel.segments[0].frame_start, 0);
        assert!(sel.segments[0].overlaps_frames(7, 8));
        // windows starting at 10.. are the earliest disjoint zero-score ones
        assert_eq!(sel.segments[1].frame_start, 10);
        assert_eq!(sel.segments[1].cumulative_relevance, 0.0);
    }

    #[test]
    fn short_selection_flag() {
        let m = map(Array2::from_elem((2, 25), 1.0));
        let sel = segment_map(&m, &geom(25), 16000, &SegmentationConfig::default()).unwrap();
        assert_eq!(sel.segments.len(), 2);
        assert!(sel.short_selection);
    }

    #[test]
    fn free_policy_allows_overlap() {
        let mut d = Array2::zeros((1, 30));
        d[(0, 12)] = 5.0;
        let scores = window_scores(&map(d), 10, 1, false).unwrap();
        let sel = select_topk(&scores, 10, 3, OverlapPolicy::Free, &geom(30)).unwrap();
        let starts: Vec<usize> = sel.segments.iter().map(|s| s.frame_start).collect();
        assert_eq!(starts, vec![3, 4, 5]);
    }

    #[test]
    fn abs_scoring() {
        let mut d = Array2::zeros((1, 20));
        d[(0, 15)] = -3.0;
        d[(0, 2)] = 1.0;
        let signed = window_scores(&map(d.clone()), 4, 1, false).unwrap();
        let abs = window_scores(&map(d), 4, 1, true).unwrap();
        let best = |s: &[WindowScore]| {
            let mut v = s.to_vec();
            v.sort_by(by_rank);
            v[0].frame_start
        };
        assert_eq!(best(&signed), 0);
        assert_eq!(best(&abs), 12);
    }

    #[test]
    fn random_forced_when_single_position() {
        for seed in 0..20 {
            let sel = random_segments(10, 5, seed, &geom(10)).unwrap();
            assert!(sel
                .segments
                .iter()
                .all(|s| s.frame_start == 0 && s.frame_end == 10));
            assert!(sel.overlap_fallback);
        }
        assert!(random_segments(11, 1, 0, &geom(10)).is_err());
    }

    #[test]
    fn random_is_seeded_and_disjoint() {
        let a = random_segments(10, 5, 42, &geom(132)).unwrap();
        let b = random_segments(10, 5, 42, &geom(132)).unwrap();
        assert_eq!(a, b);
        assert!(!a.overlap_fallback);
        for (i, x) in a.segments.iter().enumerate() {
            assert_eq!(x.frame_end - x.frame_start, 10);
            assert_eq!(x.cumulative_relevance, 0.0);
            for y in &a.segments[i + 1..] {
                assert!(!x.overlaps_frames(y.frame_start, y.frame_end));
            }
        }
        let c = random_segments(10, 5, 43, &geom(132)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn seg1_round_trip() {
        let sel = random_segments(10, 5, 7, &geom(132)).unwrap();
        let mut segs = sel.segments;
        segs[2].cumulative_relevance = -1.0 / 3.0;
        let back = parse_seg1(&render_seg1(&segs)).unwrap();
        assert_eq!(back, segs);
        assert!(parse_seg1("1 2 3\n").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn int_map() -> impl Strategy<Value = Array2<f64>> {
            (1usize..5, 12usize..40).prop_flat_map(|(h, w)| {
                proptest::collection::vec(-8i32..8, h * w).prop_map(move |v| {
                    Array2::from_shape_vec((h, w), v.into_iter().map(f64::from).collect()).unwrap()
                })
            })
        }

        fn starts(sel: &Selection) -> Vec<usize> {
            sel.segments.iter().map(|s| s.frame_start).collect()
        }

        proptest! {
            #[test]
            fn ranking_invariants(d in int_map(), window in 1usize..6, k in 1usize..5) {
                let g = geom(d.ncols());
                let scores = window_scores(&map(d.clone()), window, 1, false).unwrap();
                let sel = select_topk(&scores, window, k, OverlapPolicy::NonOverlapping, &g).unwrap();
                for pair in sel.segments.windows(2) {
                    prop_assert!(pair[0].cumulative_relevance >= pair[1].cumulative_relevance);
                    prop_assert!(!pair[0].overlaps_frames(pair[1].frame_start, pair[1].frame_end));
                }
                for (i, a) in sel.segments.iter().enumerate() {
                    for b in &sel.segments[i + 1..] {
                        prop_assert!(!a.overlaps_frames(b.frame_start, b.frame_end));
                    }
                }

                // power-of-two scaling and integer shifts are exact in f64
                let scaled = window_scores(&map(d.mapv(|v| v * 4.0)), window, 1, false).unwrap();
                let sel_scaled = select_topk(&scaled, window, k, OverlapPolicy::NonOverlapping, &g).unwrap();
                prop_assert_eq!(starts(&sel), starts(&sel_scaled));

                let h = d.nrows() as f64;
                let shifted = window_scores(&map(d.mapv(|v| v + 3.0)), window, 1, false).unwrap();
                for (a, b) in scores.iter().zip(&shifted) {
                    prop_assert_eq!(b.score, a.score + 3.0 * h * window as f64);
                }
                let sel_shifted = select_topk(&shifted, window, k, OverlapPolicy::NonOverlapping, &g).unwrap();
                prop_assert_eq!(starts(&sel), starts(&sel_shifted));
            }
        }
    }
}
