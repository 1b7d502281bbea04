//! Saliency maps over log-Mel spectrograms: native occlusion sensitivity
//! against any [`Oracle`], plus the SGM1-S interchange file for maps computed
//! elsewhere (e.g. concept relevance propagation).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{check_token, push_matrix, read_matrix};
use crate::oracle::Oracle;
use crate::spectrogram::LogMelSpectrogram;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SaliencyMethod {
    Occlusion,
    Crp,
    /// Any other producer; the tag is kept verbatim.
    Imported(String),
}

impl fmt::Display for SaliencyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SaliencyMethod::Occlusion => f.write_str("occlusion"),
            SaliencyMethod::Crp => f.write_str("crp"),
            SaliencyMethod::Imported(tag) => f.write_str(tag),
        }
    }
}

impl FromStr for SaliencyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        check_token(s, "method tag")?;
        Ok(match s {
            "occlusion" => SaliencyMethod::Occlusion,
            "crp" => SaliencyMethod::Crp,
            other => SaliencyMethod::Imported(other.to_string()),
        })
    }
}

/// Relevance per spectrogram cell. Entries may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub data: Array2<f64>,
    pub method: SaliencyMethod,
    pub target_label: String,
    pub source_id: String,
    pub spectro_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MaskMode {
    /// Mean of the whole spectrogram being explained.
    SpectrogramMean,
    /// `ln(log_floor)`, i.e. digital silence.
    FloorValue,
    Fixed(f64),
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskMode::SpectrogramMean => f.write_str("mean"),
            MaskMode::FloorValue => f.write_str("floor"),
            MaskMode::Fixed(v) => write!(f, "fixed:{v:?}"),
        }
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(MaskMode::SpectrogramMean),
            "floor" => Ok(MaskMode::FloorValue),
            _ => s
                .strip_prefix("fixed:")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .map(MaskMode::Fixed)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown mask mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisMode {
    /// Mask every mel bin across the time window.
    TimeOnly,
    /// Mask rectangular patches that also tile the mel axis.
    TimeFrequency {
        freq_window: usize,
        freq_stride: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub window_frames: usize,
    pub stride_frames: usize,
    pub mask: MaskMode,
    pub axis: AxisMode,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            window_frames: 10,
            stride_frames: 3,
            mask: MaskMode::SpectrogramMean,
            axis: AxisMode::TimeOnly,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.window_frames == 0 || self.stride_frames == 0 {
            return Err(Error::InvalidArgument(
                "occlusion window and stride must be >= 1".into(),
            ));
        }
        if self.window_frames > w {
            return Err(Error::InvalidArgument(format!(
                "occlusion window of {} frames exceeds spectrogram width {w}",
                self.window_frames
            )));
        }
        if let AxisMode::TimeFrequency {
            freq_window,
            freq_stride,
        } = self.axis
        {
            if freq_window == 0 || freq_stride == 0 || freq_window > h {
                return Err(Error::InvalidArgument(format!(
                    "frequency window {freq_window} / stride {freq_stride} invalid for {h} mel bins"
                )));
            }
        }
        Ok(())
    }
}

/// Start offsets of a `window`-long patch sliding by `stride` over `len`
/// cells. When the regular grid leaves a tail uncovered, one extra window
/// aligned to the end is appended so every cell is covered at least once.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if window == 0 || window > len || stride == 0 {
        return Vec::new();
    }
    let mut starts: Vec<usize> = (0..=len - window).step_by(stride).collect();
    if let Some(&last) = starts.last() {
        if last + window < len {
            starts.push(len - window);
        }
    }
    starts
}

/// One rectangle `[row0, row1) x [col0, col1)` masked at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

pub fn occlusion_patches(h: usize, w: usize, cfg: &OcclusionConfig) -> Vec<Patch> {
    let cols = window_starts(w, cfg.window_frames, cfg.stride_frames);
    let rows: Vec<(usize, usize)> = match cfg.axis {
        AxisMode::TimeOnly => vec![(0, h)],
        AxisMode::TimeFrequency {
            freq_window,
            freq_stride,
        } => window_starts(h, freq_window, freq_stride)
            .into_iter()
            .map(|r| (r, r + freq_window))
            .collect(),
    };
    let mut patches = Vec::with_capacity(rows.len() * cols.len());
    for &c in &cols {
        for &(r0, r1) in &rows {
            patches.push(Patch {
                row0: r0,
                row1: r1,
                col0: c,
                col1: c + cfg.window_frames,
            });
        }
    }
    patches
}

pub fn mask_value(spec: &LogMelSpectrogram, mode: MaskMode) -> f64 {
    match mode {
        MaskMode::SpectrogramMean => spec.data.mean().unwrap_or(0.0),
        MaskMode::FloorValue => spec.config.log_floor.ln(),
        MaskMode::Fixed(v) => v,
    }
}

/// Occlusion sensitivity map for `target_label`.
///
/// Each patch is replaced by the mask value and the drop
/// `p(target | spec) - p(target | masked)` is recorded. A cell's relevance is
/// the mean drop over all patches covering it. Drops are signed. Patches are
/// evaluated and accumulated in a fixed order, so the result is
/// deterministic.
pub fn occlusion_map(
    spec: &LogMelSpectrogram,
    oracle: &mut dyn Oracle,
    target_label: &str,
    cfg: &OcclusionConfig,
) -> Result<SaliencyMap> {
    let (h, w) = spec.data.dim();
    cfg.validate(h, w)?;
    let target = oracle.label_index(target_label)?;
    let fill = mask_value(spec, cfg.mask);

    let base = oracle.predict(&spec.data)?.get(target);
    let patches = occlusion_patches(h, w, cfg);

    let mut sum = Array2::<f64>::zeros((h, w));
    let mut count = Array2::<u32>::zeros((h, w));
    let mut masked = spec.data.clone();
    for p in &patches {
        masked
            .slice_mut(ndarray::s![p.row0..p.row1, p.col0..p.col1])
            .fill(fill);
        let drop = base - oracle.predict(&masked)?.get(target);
        masked
            .slice_mut(ndarray::s![p.row0..p.row1, p.col0..p.col1])
            .assign(&spec.data.slice(ndarray::s![p.row0..p.row1, p.col0..p.col1]));
        sum.slice_mut(ndarray::s![p.row0..p.row1, p.col0..p.col1])
            .mapv_inplace(|v| v + drop);
        count
            .slice_mut(ndarray::s![p.row0..p.row1, p.col0..p.col1])
            .mapv_inplace(|c| c + 1);
    }

    let mut data = sum;
    data.zip_mut_with(&count, |v, &c| {
        *v = if c == 0 { 0.0 } else { *v / c as f64 };
    });

    Ok(SaliencyMap {
        data,
        method: SaliencyMethod::Occlusion,
        target_label: target_label.to_string(),
        source_id: spec.source_id.clone(),
        spectro_digest: spec.config.digest(),
    })
}

/// Writes an SGM1-S file: `H W method target_label spectro_digest` then rows.
pub fn export_map(m: &SaliencyMap, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_map(m)?)?;
    Ok(())
}

pub fn render_map(m: &SaliencyMap) -> Result<String> {
    let (h, w) = m.data.dim();
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(
            "refusing to export an empty saliency map".into(),
        ));
    }
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("saliency map has non-finite entries".into()));
    }
    check_token(&m.target_label, "target label")?;
    check_token(&m.spectro_digest, "spectrogram digest")?;
    let mut out = format!(
        "{h} {w} {} {} {}\n",
        m.method, m.target_label, m.spectro_digest
    );
    push_matrix(&mut out, &m.data);
    Ok(out)
}

/// Options for [`import_map`].
#[derive(Debug, Clone, Default)]
pub struct ImportOptions<'a> {
    /// Required `(H, W)`; `None` accepts whatever the file declares.
    pub expected_dims: Option<(usize, usize)>,
    /// Digest of the current spectrogram configuration.
    pub expected_digest: Option<&'a str>,
    /// Accept a digest mismatch.
    pub force: bool,
}

pub fn import_map(path: impl AsRef<Path>, opts: &ImportOptions<'_>) -> Result<SaliencyMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty SGM1-S file".into()))?
        .split_whitespace()
        .collect();
    if header.len() != 5 {
        return Err(Error::Format(
            "SGM1-S header must be `H W method target_label spectro_digest`".into(),
        ));
    }
    let dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad dimension {s:?}")))
    };
    let dims = (dim(header[0])?, dim(header[1])?);
    if let Some(expected) = opts.expected_dims {
        if expected != dims {
            return Err(Error::Shape {
                expected,
                got: dims,
            });
        }
    }
    if dims.0 == 0 || dims.1 == 0 {
        return Err(Error::Format("saliency map has zero size".into()));
    }
    let method: SaliencyMethod = header[2].parse()?;
    let digest = header[4].to_string();
    if let Some(expected) = opts.expected_digest {
        if expected != digest {
            if opts.force {
                log::warn!(
                    "{}: spectrogram digest {digest} differs from {expected}; forced import",
                    path.display()
                );
            } else {
                return Err(Error::GeometryMismatch {
                    expected: expected.to_string(),
                    found: digest,
                });
            }
        }
    }
    let data = read_matrix(&mut lines, dims.0, dims.1)?;
    if let Some(v) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite relevance value {v}")));
    }
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(SaliencyMap {
        data,
        method,
        target_label: header[3].to_string(),
        source_id,
        spectro_digest: digest,
    })
}
