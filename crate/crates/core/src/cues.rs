//! Acoustic cue extraction from waveform slices.
//!
//! Six cues per slice: loudness (sones), shrillness (spectral slope over
//! 500–1500 Hz, dB/kHz), jitter (ratio), shimmer (dB), mean F0 (semitones
//! re 27.5 Hz) and HNR (dB). Jitter and shimmer are frame-level proxies
//! computed over consecutive voiced pitch frames, not glottal cycle marks.
//! Slices with no voiced frame report 0 for every voicing-dependent cue.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::formats::{check_token, fmt_f64, parse_f64};
use crate::segmentation::SalientSegment;
use crate::spectrogram::{stft_power, SpectroConfig};

pub const CUE_NAMES: [&str; 6] = ["loudness", "shrill", "jitter", "shimmer", "f0_st", "hnr"];
pub const F0_REFERENCE_HZ: f64 = 27.5;
pub const HNR_MIN_DB: f64 = -20.0;
pub const HNR_MAX_DB: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShrillnessMeasure {
    /// Least-squares slope of the dB spectrum against kHz over the band.
    Slope,
    /// Energy above the lower band edge relative to total energy, in dB.
    BandEnergyRatio,
}

impl fmt::Display for ShrillnessMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShrillnessMeasure::Slope => "slope",
            ShrillnessMeasure::BandEnergyRatio => "band_ratio",
        })
    }
}

impl FromStr for ShrillnessMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slope" => Ok(ShrillnessMeasure::Slope),
            "band_ratio" => Ok(ShrillnessMeasure::BandEnergyRatio),
            other => Err(Error::InvalidArgument(format!(
                "unknown shrillness measure {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    pub voicing_threshold: f64,
    /// The chosen lag is the first local maximum reaching this fraction of
    /// the global maximum, which suppresses octave-down errors.
    pub peak_fraction: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            frame_ms: 40.0,
            hop_ms: 10.0,
            f0_min: 55.0,
            f0_max: 550.0,
            voicing_threshold: 0.45,
            peak_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueConfig {
    pub pitch: PitchConfig,
    /// Frames with RMS at or below this are treated as silence.
    pub silence_rms: f64,
    /// Peak amplitudes below this are left out of shimmer.
    pub amplitude_floor: f64,
    pub loudness_frame_ms: f64,
    pub loudness_hop_ms: f64,
    /// dB added to the RMS level in dBFS to get an SPL-equivalent level.
    pub calibration_db: f64,
    pub slope_n_fft: usize,
    pub slope_win: usize,
    pub slope_hop: usize,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    /// Frames whose in-band energy is further than this below the frame
    /// total are left out of the slope average.
    pub inband_floor_db: f64,
    pub shrillness: ShrillnessMeasure,
}

impl Default for CueConfig {
    fn default() -> Self {
        Self {
            pitch: PitchConfig::default(),
            silence_rms: 1e-4,
            amplitude_floor: 1e-6,
            loudness_frame_ms: 25.0,
            loudness_hop_ms: 10.0,
            calibration_db: 90.0,
            slope_n_fft: 1024,
            slope_win: 480,
            slope_hop: 240,
            band_lo_hz: 500.0,
            band_hi_hz: 1500.0,
            inband_floor_db: -30.0,
            shrillness: ShrillnessMeasure::Slope,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchFrame {
    /// 0 when unvoiced.
    pub f0_hz: f64,
    pub voicing_confidence: f64,
    pub peak_amplitude: f64,
    pub autocorr_peak: f64,
}

impl PitchFrame {
    pub fn is_voiced(&self) -> bool {
        self.f0_hz > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    pub frames: Vec<PitchFrame>,
    pub hop_s: f64,
}

impl PitchTrack {
    pub fn voiced_count(&self) -> usize {
        self.frames.iter().filter(|f| f.is_voiced()).count()
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.frames.is_empty() {
            0.0
        } else {
            self.voiced_count() as f64 / self.frames.len() as f64
        }
    }

    /// Adjacent frame pairs that are both voiced.
    fn voiced_pairs(&self) -> impl Iterator<Item = (&PitchFrame, &PitchFrame)> {
        self.frames
            .windows(2)
            .filter(|p| p[0].is_voiced() && p[1].is_voiced())
            .map(|p| (&p[0], &p[1]))
    }
}

fn ms_to_samples(ms: f64, sr: u32) -> usize {
    (ms * sr as f64 / 1000.0).round() as usize
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Frame starts for `len` samples; empty when shorter than one frame.
fn frame_starts(len: usize, frame: usize, hop: usize) -> impl Iterator<Item = usize> {
    let n = if len < frame {
        0
    } else {
        1 + (len - frame) / hop
    };
    (0..n).map(move |i| i * hop)
}

/// Normalized autocorrelation pitch tracker with parabolic lag refinement.
pub fn track_pitch(slice: &Waveform, cfg: &PitchConfig, silence_rms: f64) -> Result<PitchTrack> {
    let sr = slice.sample_rate;
    if sr == 0 {
        return Err(Error::InvalidArgument(
            "sample rate must be positive".into(),
        ));
    }
    if !(cfg.f0_min > 0.0 && cfg.f0_min < cfg.f0_max) {
        return Err(Error::InvalidArgument(format!(
            "invalid pitch range [{}, {}] Hz",
            cfg.f0_min, cfg.f0_max
        )));
    }
    let frame = ms_to_samples(cfg.frame_ms, sr);
    let hop = ms_to_samples(cfg.hop_ms, sr).max(1);
    if slice.len() < frame || frame == 0 {
        return Err(Error::TooShort {
            needed: frame.max(1),
            got: slice.len(),
        });
    }
    let lag_min = ((sr as f64 / cfg.f0_max).ceil() as usize).max(1);
    let lag_max = ((sr as f64 / cfg.f0_min).floor() as usize).min(frame - 2);
    if lag_min + 2 > lag_max {
        return Err(Error::InvalidArgument(format!(
            "{frame}-sample frames cannot resolve pitch down to {} Hz",
            cfg.f0_min
        )));
    }

    let mut frames = Vec::new();
    let mut x = vec![0.0; frame];
    let mut prefix = vec![0.0; frame + 1];
    let mut r = vec![0.0; lag_max + 2];
    for start in frame_starts(slice.len(), frame, hop) {
        let raw = &slice.samples[start..start + frame];
        let peak_amplitude = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mean = raw.iter().sum::<f64>() / frame as f64;
        for (d, s) in x.iter_mut().zip(raw) {
            *d = s - mean;
        }
        let unvoiced = PitchFrame {
            f0_hz: 0.0,
            voicing_confidence: 0.0,
            peak_amplitude,
            autocorr_peak: 0.0,
        };
        if rms(&x) <= silence_rms {
            frames.push(unvoiced);
            continue;
        }
        for i in 0..frame {
            prefix[i + 1] = prefix[i] + x[i] * x[i];
        }
        let mut global = f64::NEG_INFINITY;
        for tau in lag_min - 1..=lag_max + 1 {
            let n = frame - tau;
            let mut num = 0.0;
            for i in 0..n {
                num += x[i] * x[i + tau];
            }
            let e0 = prefix[n];
            let e1 = prefix[frame] - prefix[tau];
            let den = (e0 * e1).sqrt();
            r[tau] = if den > 0.0 { num / den } else { 0.0 };
            if (lag_min..=lag_max).contains(&tau) {
                global = global.max(r[tau]);
            }
        }
        let pick = (lag_min..=lag_max).find(|&t| {
            r[t] >= cfg.peak_fraction * global && r[t] >= r[t - 1] && r[t] >= r[t + 1] && r[t] > 0.0
        });
        let Some(tau) = pick else {
            frames.push(unvoiced);
            continue;
        };
        let (a, b, c) = (r[tau - 1], r[tau], r[tau + 1]);
        let curv = a - 2.0 * b + c;
        let delta = if curv < 0.0 {
            (0.5 * (a - c) / curv).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        let peak = (b - 0.25 * (a - c) * delta).clamp(-1.0, 1.0);
        let f0 = sr as f64 / (tau as f64 + delta);
        let voiced = peak >= cfg.voicing_threshold && f0 >= cfg.f0_min && f0 <= cfg.f0_max;
        frames.push(PitchFrame {
            f0_hz: if voiced { f0 } else { 0.0 },
            voicing_confidence: peak.max(0.0),
            peak_amplitude,
            autocorr_peak: peak,
        });
    }
    Ok(PitchTrack {
        frames,
        hop_s: hop as f64 / sr as f64,
    })
}

pub fn f0_mean_semitones(pt: &PitchTrack) -> f64 {
    let voiced: Vec<f64> = pt
        .frames
        .iter()
        .filter(|f| f.is_voiced())
        .map(|f| f.f0_hz)
        .collect();
    if voiced.is_empty() {
        return 0.0;
    }
    voiced
        .iter()
        .map(|f| 12.0 * (f / F0_REFERENCE_HZ).log2())
        .sum::<f64>()
        / voiced.len() as f64
}

/// Mean absolute period difference between adjacent voiced frames over the
/// mean period of the frames in those pairs.
pub fn jitter(pt: &PitchTrack) -> f64 {
    let mut diff_sum = 0.0;
    let mut n_pairs = 0usize;
    let mut period_sum = 0.0;
    let mut n_periods = 0usize;
    let mut in_run = false;
    for (i, f) in pt.frames.iter().enumerate() {
        let next_voiced = pt.frames.get(i + 1).is_some_and(|n| n.is_voiced());
        if f.is_voiced() && (in_run || next_voiced) {
            period_sum += 1.0 / f.f0_hz;
            n_periods += 1;
        }
        in_run = f.is_voiced() && next_voiced;
    }
    for (a, b) in pt.voiced_pairs() {
        diff_sum += (1.0 / b.f0_hz - 1.0 / a.f0_hz).abs();
        n_pairs += 1;
    }
    if n_pairs == 0 {
        return 0.0;
    }
    (diff_sum / n_pairs as f64) / (period_sum / n_periods as f64)
}

/// Mean absolute dB ratio of peak amplitudes between adjacent voiced frames.
pub fn shimmer(pt: &PitchTrack, amplitude_floor: f64) -> f64 {
    let ratios: Vec<f64> = pt
        .voiced_pairs()
        .filter(|(a, b)| a.peak_amplitude >= amplitude_floor && b.peak_amplitude >= amplitude_floor)
        .map(|(a, b)| (20.0 * (b.peak_amplitude / a.peak_amplitude).log10()).abs())
        .collect();
    if ratios.is_empty() {
        return 0.0;
    }
    ratios.iter().sum::<f64>() / ratios.len() as f64
}

pub fn hnr_frame_db(r_max: f64) -> f64 {
    if r_max >= 1.0 {
        return HNR_MAX_DB;
    }
    if r_max <= 0.0 {
        return HNR_MIN_DB;
    }
    (10.0 * (r_max / (1.0 - r_max)).log10()).clamp(HNR_MIN_DB, HNR_MAX_DB)
}

pub fn hnr(pt: &PitchTrack) -> f64 {
    let v: Vec<f64> = pt
        .frames
        .iter()
        .filter(|f| f.is_voiced())
        .map(|f| hnr_frame_db(f.autocorr_peak))
        .collect();
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sones for an SPL-equivalent level: 2^((L-40)/10) above 40 dB, the
/// power-law branch (L/40)^2.642 below.
pub fn level_to_sones(level_db: f64) -> f64 {
    if level_db >= 40.0 {
        2f64.powf((level_db - 40.0) / 10.0)
    } else if level_db > 0.0 {
        (level_db / 40.0).powf(2.642)
    } else {
        0.0
    }
}

/// Mean frame loudness in sones over non-silent frames.
pub fn loudness_sones(slice: &Waveform, cfg: &CueConfig) -> Result<f64> {
    if slice.is_empty() {
        return Err(Error::InvalidArgument("loudness of an empty slice".into()));
    }
    let frame = ms_to_samples(cfg.loudness_frame_ms, slice.sample_rate).max(1);
    let hop = ms_to_samples(cfg.loudness_hop_ms, slice.sample_rate).max(1);
    let levels: Vec<f64> = if slice.len() < frame {
        vec![rms(&slice.samples)]
    } else {
        frame_starts(slice.len(), frame, hop)
            .map(|s| rms(&slice.samples[s..s + frame]))
            .collect()
    };
    let sones: Vec<f64> = levels
        .into_iter()
        .filter(|&r| r > cfg.silence_rms)
        .map(|r| level_to_sones(20.0 * r.log10() + cfg.calibration_db))
        .collect();
    if sones.is_empty() {
        return Ok(0.0);
    }
    Ok(sones.iter().sum::<f64>() / sones.len() as f64)
}

fn slope_spectro(slice: &Waveform, cfg: &CueConfig) -> SpectroConfig {
    SpectroConfig {
        n_fft: cfg.slope_n_fft,
        win_length: cfg.slope_win,
        hop_length: cfg.slope_hop,
        n_mels: 1,
        sample_rate: slice.sample_rate,
        ..SpectroConfig::default()
    }
}

fn band_bins(sr: u32, n_fft: usize, lo: f64, hi: f64) -> Result<(usize, usize)> {
    let df = sr as f64 / n_fft as f64;
    let first = (lo / df).ceil() as usize;
    let last = ((hi / df).floor() as usize).min(n_fft / 2);
    if first + 1 >= last + 1 || lo >= hi {
        return Err(Error::InvalidArgument(format!(
            "band [{lo}, {hi}] Hz covers fewer than two bins at {sr} Hz"
        )));
    }
    Ok((first, last))
}

/// Spectral slope of the dB power spectrum against frequency in kHz over
/// the configured band, averaged over frames with in-band energy.
pub fn spectral_slope_500_1500(slice: &Waveform, cfg: &CueConfig) -> Result<f64> {
    let sc = slope_spectro(slice, cfg);
    let power = stft_power(slice, &sc)?;
    let (first, last) = band_bins(
        slice.sample_rate,
        cfg.slope_n_fft,
        cfg.band_lo_hz,
        cfg.band_hi_hz,
    )?;
    let df_khz = slice.sample_rate as f64 / cfg.slope_n_fft as f64 / 1000.0;
    let xs: Vec<f64> = (first..=last).map(|k| k as f64 * df_khz).collect();
    let x_mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();

    let mut slopes = Vec::new();
    for (t, col) in power.columns().into_iter().enumerate() {
        let start = t * sc.hop_length;
        if rms(&slice.samples[start..start + sc.win_length]) <= cfg.silence_rms {
            continue;
        }
        let total: f64 = col.sum();
        let band: f64 = (first..=last).map(|k| col[k]).sum();
        if !(total > 0.0) || 10.0 * (band / total).log10() < cfg.inband_floor_db || band <= 0.0 {
            continue;
        }
        let ys: Vec<f64> = (first..=last)
            .map(|k| 10.0 * (col[k] + 1e-300).log10())
            .collect();
        let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - x_mean) * (y - y_mean))
            .sum();
        slopes.push(sxy / sxx);
    }
    if slopes.is_empty() {
        return Ok(0.0);
    }
    Ok(slopes.iter().sum::<f64>() / slopes.len() as f64)
}

/// Energy above the lower band edge over total frame energy, in dB.
pub fn band_energy_ratio(slice: &Waveform, cfg: &CueConfig) -> Result<f64> {
    let sc = slope_spectro(slice, cfg);
    let power = stft_power(slice, &sc)?;
    let (first, _) = band_bins(
        slice.sample_rate,
        cfg.slope_n_fft,
        cfg.band_lo_hz,
        cfg.band_hi_hz,
    )?;
    let mut ratios = Vec::new();
    for (t, col) in power.columns().into_iter().enumerate() {
        let start = t * sc.hop_length;
        if rms(&slice.samples[start..start + sc.win_length]) <= cfg.silence_rms {
            continue;
        }
        let total: f64 = col.sum();
        let high: f64 = col.iter().skip(first).sum();
        if total > 0.0 && high > 0.0 {
            ratios.push(10.0 * (high / total).log10());
        }
    }
    if ratios.is_empty() {
        return Ok(0.0);
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CueVector {
    pub loudness_sones: f64,
    pub shrillness_slope: f64,
    pub jitter_ratio: f64,
    pub shimmer_db: f64,
    pub f0_mean_st: f64,
    pub hnr_db: f64,
    pub voiced_fraction: f64,
    pub n_frames: usize,
}

impl CueVector {
    /// The six cues in [`CUE_NAMES`] order.
    pub fn values(&self) -> [f64; 6] {
        [
            self.loudness_sones,
            self.shrillness_slope,
            self.jitter_ratio,
            self.shimmer_db,
            self.f0_mean_st,
            self.hnr_db,
        ]
    }

    pub fn with_values(v: [f64; 6], voiced_fraction: f64, n_frames: usize) -> Self {
        Self {
            loudness_sones: v[0],
            shrillness_slope: v[1],
            jitter_ratio: v[2],
            shimmer_db: v[3],
            f0_mean_st: v[4],
            hnr_db: v[5],
            voiced_fraction,
            n_frames,
        }
    }
}

/// Analyses one slice.
pub fn slice_cues(slice: &Waveform, cfg: &CueConfig) -> Result<CueVector> {
    let pt = track_pitch(slice, &cfg.pitch, cfg.silence_rms)?;
    let shrill = match cfg.shrillness {
        ShrillnessMeasure::Slope => spectral_slope_500_1500(slice, cfg)?,
        ShrillnessMeasure::BandEnergyRatio => band_energy_ratio(slice, cfg)?,
    };
    Ok(CueVector {
        loudness_sones: loudness_sones(slice, cfg)?,
        shrillness_slope: shrill,
        jitter_ratio: jitter(&pt),
        shimmer_db: shimmer(&pt, cfg.amplitude_floor),
        f0_mean_st: f0_mean_semitones(&pt),
        hnr_db: hnr(&pt),
        voiced_fraction: pt.voiced_fraction(),
        n_frames: pt.frames.len(),
    })
}

/// Per-cue mean and population SD across slices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CueAggregate {
    /// `n_frames` holds the total across slices.
    pub mean: CueVector,
    /// `n_frames` is 0.
    pub sd: CueVector,
    pub n_segments: usize,
}

pub fn aggregate(vectors: &[CueVector]) -> Result<CueAggregate> {
    if vectors.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot aggregate zero cue vectors".into(),
        ));
    }
    let n = vectors.len() as f64;
    let cols = |v: &CueVector| {
        let c = v.values();
        [c[0], c[1], c[2], c[3], c[4], c[5], v.voiced_fraction]
    };
    let mut mean = [0.0; 7];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(cols(v)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 7];
    for v in vectors {
        for ((s, x), m) in var.iter_mut().zip(cols(v)).zip(mean) {
            *s += (x - m) * (x - m);
        }
    }
    let sd = var.map(|s| (s / n).sqrt());
    let six = |a: [f64; 7]| [a[0], a[1], a[2], a[3], a[4], a[5]];
    Ok(CueAggregate {
        mean: CueVector::with_values(six(mean), mean[6], vectors.iter().map(|v| v.n_frames).sum()),
        sd: CueVector::with_values(six(sd), sd[6], 0),
        n_segments: vectors.len(),
    })
}

#[derive(Debug, Clone, Copy)]
pub enum CueRegions<'a> {
    Segments(&'a [SalientSegment]),
    FullClip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CueRowKind {
    Segment(usize),
    FullClip,
    Aggregate,
    Spread,
}

impl fmt::Display for CueRowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CueRowKind::Segment(r) => write!(f, "{r}"),
            CueRowKind::FullClip => f.write_str("full"),
            CueRowKind::Aggregate => f.write_str("AGG"),
            CueRowKind::Spread => f.write_str("SD"),
        }
    }
}

impl FromStr for CueRowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CueRowKind::FullClip),
            "AGG" => Ok(CueRowKind::Aggregate),
            "SD" => Ok(CueRowKind::Spread),
            other => other
                .parse::<usize>()
                .map(CueRowKind::Segment)
                .map_err(|_| Error::Format(format!("bad CUE1 rank {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CueSet {
    pub source_id: String,
    pub rows: Vec<(CueRowKind, CueVector)>,
    pub aggregate: CueAggregate,
}

/// Analyses each region independently and aggregates across them.
pub fn extract_cues(w: &Waveform, regions: CueRegions<'_>, cfg: &CueConfig) -> Result<CueSet> {
    let rows = match regions {
        CueRegions::FullClip => vec![(CueRowKind::FullClip, slice_cues(w, cfg)?)],
        CueRegions::Segments(segs) => {
            if segs.is_empty() {
                return Err(Error::InvalidArgument("no segments to analyse".into()));
            }
            segs.iter()
                .map(|s| {
                    let slice = w.slice(s.sample_start, s.sample_end)?;
                    Ok((CueRowKind::Segment(s.rank), slice_cues(&slice, cfg)?))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let vectors: Vec<CueVector> = rows.iter().map(|(_, v)| *v).collect();
    Ok(CueSet {
        source_id: w.source_id.clone(),
        aggregate: aggregate(&vectors)?,
        rows,
    })
}

pub const CUE1_COLUMNS: &str =
    "source_id rank loudness shrill jitter shimmer f0_st hnr voiced_frac n_frames";

fn push_cue_row(out: &mut String, id: &str, kind: CueRowKind, v: &CueVector) {
    out.push_str(&format!("{id} {kind}"));
    for x in v.values() {
        out.push(' ');
        out.push_str(&fmt_f64(x));
    }
    out.push_str(&format!(" {} {}\n", fmt_f64(v.voiced_fraction), v.n_frames));
}

/// CUE1: a `#` column comment, one row per region, then `AGG` and `SD` rows.
pub fn render_cue1(set: &CueSet) -> Result<String> {
    check_token(&set.source_id, "source id")?;
    let mut out = format!("# {CUE1_COLUMNS}\n");
    for (kind, v) in &set.rows {
        push_cue_row(&mut out, &set.source_id, *kind, v);
    }
    push_cue_row(
        &mut out,
        &set.source_id,
        CueRowKind::Aggregate,
        &set.aggregate.mean,
    );
    push_cue_row(
        &mut out,
        &set.source_id,
        CueRowKind::Spread,
        &set.aggregate.sd,
    );
    Ok(out)
}

pub fn write_cue1(set: &CueSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_cue1(set)?)?;
    Ok(())
}

pub fn parse_cue1(text: &str) -> Result<CueSet> {
    let mut source_id: Option<String> = None;
    let mut rows = Vec::new();
    let mut mean = None;
    let mut sd = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 10 {
            return Err(Error::Format(format!(
                "CUE1 line {}: expected 10 fields, got {}",
                i + 1,
                toks.len()
            )));
        }
        match &source_id {
            None => source_id = Some(toks[0].to_string()),
            Some(id) if id != toks[0] => {
                return Err(Error::Format(format!(
                    "CUE1 line {}: mixed source ids",
                    i + 1
                )));
            }
            _ => {}
        }
        let kind: CueRowKind = toks[1].parse()?;
        let mut vals = [0.0; 6];
        for (v, t) in vals.iter_mut().zip(&toks[2..8]) {
            *v = parse_f64(t)?;
        }
        let n_frames = toks[9]
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("CUE1 line {}: bad frame count", i + 1)))?;
        let v = CueVector::with_values(vals, parse_f64(toks[8])?, n_frames);
        match kind {
            CueRowKind::Aggregate => mean = Some(v),
            CueRowKind::Spread => sd = Some(v),
            _ => rows.push((kind, v)),
        }
    }
    let (Some(source_id), Some(mean), Some(sd)) = (source_id, mean, sd) else {
        return Err(Error::Format("CUE1 file lacks AGG/SD rows".into()));
    };
    if rows.is_empty() {
        return Err(Error::Format("CUE1 file has no region rows".into()));
    }
    Ok(CueSet {
        source_id,
        aggregate: CueAggregate {
            mean,
            sd,
            n_segments: rows.len(),
        },
        rows,
    })
}

pub fn read_cue1(path: impl AsRef<Path>) -> Result<CueSet> {
    parse_cue1(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    const SR: u32 = 16000;

    fn sine(freq: f64, amp: f64, secs: f64) -> Waveform {
        let n = (secs * SR as f64) as usize;
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / SR as f64).sin())
                .collect(),
            SR,
            "s",
        )
    }

    fn noise(sd: f64, secs: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (secs * SR as f64) as usize;
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect()
    }

    fn frame(f0: f64, amp: f64) -> PitchFrame {
        PitchFrame {
            f0_hz: f0,
            voicing_confidence: 1.0,
            peak_amplitude: amp,
            autocorr_peak: 0.99,
        }
    }

    fn track(frames: Vec<PitchFrame>) -> PitchTrack {
        PitchTrack {
            frames,
            hop_s: 0.01,
        }
    }

    #[test]
    fn sine_pitch() {
        let pt = track_pitch(&sine(220.0, 0.5, 0.5), &PitchConfig::default(), 1e-4).unwrap();
        assert!(!pt.frames.is_empty());
        for f in &pt.frames {
            assert!((f.f0_hz - 220.0).abs() < 2.0, "{}", f.f0_hz);
        }
        assert!((f0_mean_semitones(&pt) - 36.0).abs() < 0.1);
        assert!(hnr(&pt) >= 20.0);
    }

    #[test]
    fn pitch_range_edges() {
        for f0 in [60.0, 110.0, 440.0, 520.0] {
            let pt = track_pitch(&sine(f0, 0.3, 0.3), &PitchConfig::default(), 1e-4).unwrap();
            assert!(pt.voiced_fraction() > 0.95, "{f0}");
            let est = pt.frames[3].f0_hz;
            assert!((est - f0).abs() / f0 < 0.01, "{f0} -> {est}");
        }
    }

    #[test]
    fn harmonic_tone_is_not_octave_shifted() {
        let n = SR as usize / 2;
        let s: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / SR as f64;
                (1..=6)
                    .map(|h| (2.0 * PI * 150.0 * h as f64 * t).sin() / h as f64)
                    .sum::<f64>()
                    * 0.1
            })
            .collect();
        let pt = track_pitch(&Waveform::new(s, SR, "h"), &PitchConfig::default(), 1e-4).unwrap();
        assert!(pt.frames.iter().all(|f| (f.f0_hz - 150.0).abs() < 2.0));
    }

    #[test]
    fn noise_and_silence_unvoiced() {
        let w = Waveform::new(noise(0.1, 1.0, 3), SR, "n");
        let pt = track_pitch(&w, &PitchConfig::default(), 1e-4).unwrap();
        assert!(pt.voiced_fraction() < 0.2, "{}", pt.voiced_fraction());

        let silent = Waveform::new(vec![0.0; 8000], SR, "z");
        let c = slice_cues(&silent, &CueConfig::default()).unwrap();
        assert_eq!(c.voiced_fraction, 0.0);
        assert_eq!(
            (c.f0_mean_st, c.jitter_ratio, c.shimmer_db, c.hnr_db),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(c.loudness_sones, 0.0);
    }

    #[test]
    fn too_short_for_pitch() {
        let w = Waveform::new(vec![0.1; 100], SR, "x");
        assert!(matches!(
            track_pitch(&w, &PitchConfig::default(), 1e-4),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn semitone_anchors() {
        for (f0, st) in [(27.5, 0.0), (55.0, 12.0), (220.0, 36.0)] {
            let pt = track(vec![frame(f0, 1.0); 4]);
            assert!((f0_mean_semitones(&pt) - st).abs() < 1e-12);
        }
        assert_eq!(f0_mean_semitones(&track(vec![frame(0.0, 1.0); 3])), 0.0);
    }

    #[test]
    fn jitter_formula() {
        assert_eq!(jitter(&track(vec![frame(100.0, 1.0); 5])), 0.0);
        let alt: Vec<PitchFrame> = (0..40)
            .map(|i| frame(if i % 2 == 0 { 100.0 } else { 110.0 }, 1.0))
            .collect();
        let expected = (1.0 / 100.0 - 1.0 / 110.0) / ((1.0 / 100.0 + 1.0 / 110.0) / 2.0);
        assert!((jitter(&track(alt)) - expected).abs() < 1e-3 * expected);
        assert!((expected - 0.0952).abs() < 1e-4);
        // isolated voiced frames form no pairs
        let sparse = track(vec![frame(100.0, 1.0), frame(0.0, 1.0), frame(110.0, 1.0)]);
        assert_eq!(jitter(&sparse), 0.0);
    }

    #[test]
    fn shimmer_formula() {
        assert_eq!(shimmer(&track(vec![frame(100.0, 0.3); 6]), 1e-6), 0.0);
        let alt: Vec<PitchFrame> = (0..21)
            .map(|i| frame(100.0, if i % 2 == 0 { 1.0 } else { 0.5 }))
            .collect();
        assert!((shimmer(&track(alt), 1e-6) - 20.0 * 2f64.log10()).abs() < 1e-12);
        let floor = track(vec![
            frame(100.0, 1.0),
            frame(100.0, 1e-9),
            frame(100.0, 1.0),
        ]);
        assert_eq!(shimmer(&floor, 1e-6), 0.0);
    }

    #[test]
    fn hnr_clamps() {
        assert_eq!(hnr_frame_db(1.0), HNR_MAX_DB);
        assert_eq!(hnr_frame_db(0.0), HNR_MIN_DB);
        assert!((hnr_frame_db(0.5)).abs() < 1e-12);
        assert!((hnr_frame_db(0.9) - 10.0 * 9f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn hnr_with_equal_power_noise() {
        let mut w = sine(200.0, 1.0, 1.0);
        let n = noise(1.0 / 2f64.sqrt(), 1.0, 11);
        w.samples.iter_mut().zip(n).for_each(|(s, e)| *s += e);
        let pt = track_pitch(&w, &PitchConfig::default(), 1e-4).unwrap();
        let h = hnr(&pt);
        assert!((-3.0..=6.0).contains(&h), "{h}");
    }

    #[test]
    fn sone_anchors() {
        assert!((level_to_sones(40.0) - 1.0).abs() < 1e-12);
        assert!((level_to_sones(50.0) - 2.0).abs() < 1e-12);
        assert!((level_to_sones(20.0) - 0.5f64.powf(2.642)).abs() < 1e-12);
        let cfg = CueConfig::default();
        let a = loudness_sones(&sine(300.0, 0.1, 0.5), &cfg).unwrap();
        let b = loudness_sones(&sine(300.0, 0.05, 0.5), &cfg).unwrap();
        assert!((b / a - 2f64.powf(-0.60206)).abs() < 1e-3, "{}", b / a);
        // full-scale sine sits near 87 dB: 2^(4.699)
        let full = loudness_sones(&sine(1000.0, 1.0, 0.5), &cfg).unwrap();
        assert!((full - 2f64.powf((90.0 - 3.0103 - 40.0) / 10.0)).abs() / full < 1e-3);
        assert!(loudness_sones(&Waveform::new(vec![], SR, "e"), &cfg).is_err());
    }

    fn tilted_noise(db_per_khz: f64, secs: f64, seed: u64) -> Waveform {
        use rustfft::{num_complex::Complex, FftPlanner};
        let x = noise(0.1, secs, seed);
        let n = x.len();
        let mut planner = FftPlanner::<f64>::new();
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        planner.plan_fft_forward(n).process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            let bin = k.min(n - k);
            let khz = bin as f64 * SR as f64 / n as f64 / 1000.0;
            *c *= 10f64.powf(db_per_khz * khz / 20.0);
        }
        planner.plan_fft_inverse(n).process(&mut buf);
        Waveform::new(buf.iter().map(|c| c.re / n as f64).collect(), SR, "tilt")
    }

    #[test]
    fn slope_of_flat_and_tilted_noise() {
        let cfg = CueConfig::default();
        let flat = spectral_slope_500_1500(&tilted_noise(0.0, 1.0, 5), &cfg).unwrap();
        assert!(flat.abs() < 1.5, "{flat}");
        let tilt = spectral_slope_500_1500(&tilted_noise(-6.0, 1.0, 6), &cfg).unwrap();
        assert!((tilt + 6.0).abs() < 1.0, "{tilt}");
    }

    #[test]
    fn out_of_band_sine_has_zero_slope() {
        let cfg = CueConfig::default();
        assert_eq!(
            spectral_slope_500_1500(&sine(400.0, 0.5, 0.5), &cfg).unwrap(),
            0.0
        );
        assert!(spectral_slope_500_1500(&Waveform::new(vec![0.0; 100], SR, "x"), &cfg).is_err());
    }

    #[test]
    fn band_ratio_orders_spectra() {
        let cfg = CueConfig::default();
        let low = band_energy_ratio(&sine(200.0, 0.5, 0.5), &cfg).unwrap();
        let high = band_energy_ratio(&tilted_noise(0.0, 0.5, 1), &cfg).unwrap();
        assert!(low < -30.0 && high > -1.0, "{low} {high}");
    }

    #[test]
    fn aggregation() {
        let a = CueVector::with_values([1.0; 6], 1.0, 10);
        let b = CueVector::with_values([3.0; 6], 0.0, 12);
        let agg = aggregate(&[a, b]).unwrap();
        assert_eq!(agg.mean.values(), [2.0; 6]);
        assert_eq!(agg.sd.values(), [1.0; 6]);
        assert_eq!(agg.mean.n_frames, 22);
        assert_eq!(agg.mean.voiced_fraction, 0.5);
        let same = aggregate(&[a, a]).unwrap();
        assert_eq!(same.sd.values(), [0.0; 6]);
        assert!(aggregate(&[]).is_err());
    }

    fn seg(rank: usize, start: usize, end: usize) -> SalientSegment {
        SalientSegment {
            rank,
            frame_start: 0,
            frame_end: 1,
            sample_start: start,
            sample_end: end,
            cumulative_relevance: 0.0,
        }
    }

    #[test]
    fn whole_clip_segment_matches_full_clip() {
        let w = sine(180.0, 0.2, 0.6);
        let cfg = CueConfig::default();
        let full = extract_cues(&w, CueRegions::FullClip, &cfg).unwrap();
        let segs = [seg(1, 0, w.len())];
        let one = extract_cues(&w, CueRegions::Segments(&segs), &cfg).unwrap();
        assert_eq!(full.rows[0].1, one.rows[0].1);
        assert!(extract_cues(&w, CueRegions::Segments(&[]), &cfg).is_err());
        let beyond = [seg(1, 0, w.len() + 1)];
        assert!(extract_cues(&w, CueRegions::Segments(&beyond), &cfg).is_err());
    }

    #[test]
    fn composed_signal_aggregates_per_block() {
        let cfg = CueConfig::default();
        let block = 3200;
        let blocks = [
            sine(120.0, 0.3, 0.2),
            Waveform::new(noise(0.05, 0.2, 9), SR, "n"),
            sine(240.0, 0.1, 0.2),
        ];
        let mut samples = Vec::new();
        for b in &blocks {
            samples.extend_from_slice(&b.samples[..block]);
        }
        let w = Waveform::new(samples, SR, "c");
        let segs: Vec<SalientSegment> = (0..5)
            .map(|i| seg(i + 1, (i % 3) * block, (i % 3 + 1) * block))
            .collect();
        let set = extract_cues(&w, CueRegions::Segments(&segs), &cfg).unwrap();
        let singles: Vec<CueVector> = (0..5)
            .map(|i| {
                slice_cues(
                    &w.slice((i % 3) * block, (i % 3 + 1) * block).unwrap(),
                    &cfg,
                )
                .unwrap()
            })
            .collect();
        for c in 0..6 {
            let m = singles.iter().map(|v| v.values()[c]).sum::<f64>() / 5.0;
            assert!((set.aggregate.mean.values()[c] - m).abs() <= 1e-12 * m.abs().max(1.0));
        }
    }

    #[test]
    fn cue1_round_trip() {
        let w = sine(200.0, 0.2, 0.5);
        let segs = [seg(1, 0, 4000), seg(2, 4000, 8000)];
        let set = extract_cues(&w, CueRegions::Segments(&segs), &CueConfig::default()).unwrap();
        let back = parse_cue1(&render_cue1(&set).unwrap()).unwrap();
        assert_eq!(back, set);
        assert!(parse_cue1("s 1 1 2 3\n").is_err());
    }

    #[test]
    fn deterministic() {
        let w = Waveform::new(noise(0.2, 0.3, 2), SR, "d");
        let cfg = CueConfig::default();
        let a = slice_cues(&w, &cfg).unwrap();
        let b = slice_cues(&w, &cfg).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vibrato(f0: f64, depth: f64, amp: f64, phase: f64) -> Waveform {
            modulated(f0, depth, 0.3, amp, phase)
        }

        fn modulated(f0: f64, depth: f64, am: f64, amp: f64, phase: f64) -> Waveform {
            let n = SR as usize / 2;
            let mut ph = phase;
            let mut s = Vec::with_capacity(n);
            for i in 0..n {
                let t = i as f64 / SR as f64;
                let f = f0 * (1.0 + depth * (2.0 * PI * 5.0 * t).sin());
                ph += 2.0 * PI * f / SR as f64;
                let env = 1.0 + am * (2.0 * PI * 3.0 * t).sin();
                s.push(amp * env * (ph.sin() + 0.3 * (2.0 * ph).sin()));
            }
            Waveform::new(s, SR, "v")
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn amplitude_scaling(f0 in 90.0f64..300.0, depth in 0.0f64..0.03, c in 0.05f64..1.0) {
                let cfg = CueConfig::default();
                let w = vibrato(f0, depth, 0.4, 0.0);
                let mut scaled = w.clone();
                scaled.samples.iter_mut().for_each(|s| *s *= c);
                let a = slice_cues(&w, &cfg).unwrap();
                let b = slice_cues(&scaled, &cfg).unwrap();
                prop_assert!((a.f0_mean_st - b.f0_mean_st).abs() < 1e-6);
                prop_assert!((a.jitter_ratio - b.jitter_ratio).abs() < 1e-6);
                prop_assert!((a.shimmer_db - b.shimmer_db).abs() < 1e-6);
                prop_assert!(b.loudness_sones <= a.loudness_sones);
            }

            #[test]
            fn small_time_shift(cycles in 45u32..150, shift in 1usize..160) {
                let cfg = CueConfig::default();
                // a whole number of periods in the buffer makes the rotation seamless;
                // partials up to 4 kHz keep the slope band free of empty stretches
                let f0 = cycles as f64 * 2.0;
                let partials = (4000.0 / f0) as usize;
                let s = (0..SR as usize / 2)
                    .map(|i| {
                        let ph = 2.0 * PI * f0 * i as f64 / SR as f64;
                        (1..=partials).map(|h| 0.3 / h as f64 * (h as f64 * ph).sin()).sum()
                    })
                    .collect();
                let w = Waveform::new(s, SR, "h");
                let mut shifted = w.clone();
                shifted.samples.rotate_left(shift);
                let a = slice_cues(&w, &cfg).unwrap();
                let b = slice_cues(&shifted, &cfg).unwrap();
                // window alignment moves the leakage between partials, so each cue
                // gets an absolute allowance on top of the relative one
                let slack = [0.5, 1.5, 1e-3, 0.05, 0.01, 2.5];
                for ((x, y), r) in a.values().iter().zip(b.values()).zip(slack) {
                    prop_assert!((x - y).abs() <= 0.05 * x.abs() + r, "{:?} vs {:?}", a, b);
                }
            }

            #[test]
            fn vector_invariants(f0 in 60.0f64..500.0, depth in 0.0f64..0.05, amp in 0.0f64..0.9) {
                let c = slice_cues(&vibrato(f0, depth, amp, 0.3), &CueConfig::default()).unwrap();
                prop_assert!(c.values().iter().all(|v| v.is_finite()));
                prop_assert!(c.jitter_ratio >= 0.0 && c.shimmer_db >= 0.0);
                prop_assert!((0.0..=1.0).contains(&c.voiced_fraction));
                if c.voiced_fraction == 0.0 {
                    prop_assert_eq!((c.f0_mean_st, c.jitter_ratio, c.shimmer_db, c.hnr_db), (0.0, 0.0, 0.0, 0.0));
                }
            }
        }
    }
}
