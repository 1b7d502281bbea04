//! Flat `key = value` configuration covering every tunable, environment
//! overrides, and the run manifest that pins a run for exact reproduction.
//!
//! Every key has the form `<section>.<field>`, e.g. `spectro.n_fft`. The
//! environment variable for a key is `CUELENS_` followed by the key in upper
//! case with dots replaced by underscores (`CUELENS_SPECTRO_N_FFT`).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::cues::CueConfig;
use crate::error::{Error, Result};
use crate::oracle::{Arousal, EmotionLabelSet, OracleSpec};
use crate::saliency::{AxisMode, OcclusionConfig};
use crate::segmentation::SegmentationConfig;
use crate::spectrogram::SpectroConfig;
use crate::validation::{GroupBy, DEFAULT_ORDER_MARGIN};

pub const ENV_PREFIX: &str = "CUELENS_";

#[derive(Debug, Clone, PartialEq)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub trim: bool,
    /// Trim threshold in dB below the loudest frame.
    pub trim_db: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            duration_s: 2.0,
            trim: true,
            trim_db: 30.0,
        }
    }
}

/// Which label the saliency map explains.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TargetPolicy {
    #[default]
    Predicted,
    True,
    Label(String),
}

impl std::fmt::Display for TargetPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetPolicy::Predicted => f.write_str("predicted"),
            TargetPolicy::True => f.write_str("true"),
            TargetPolicy::Label(l) => write!(f, "label:{l}"),
        }
    }
}

impl FromStr for TargetPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(TargetPolicy::Predicted),
            "true" => Ok(TargetPolicy::True),
            _ => s
                .strip_prefix("label:")
                .filter(|l| !l.is_empty())
                .map(|l| TargetPolicy::Label(l.to_string()))
                .ok_or_else(|| Error::InvalidArgument(format!("unknown target policy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub audio: AudioConfig,
    pub spectro: SpectroConfig,
    pub occlusion: OcclusionConfig,
    pub target: TargetPolicy,
    pub segmentation: SegmentationConfig,
    pub cues: CueConfig,
    pub oracle: OracleSpec,
    pub oracle_timeout_s: f64,
    pub labels: EmotionLabelSet,
    pub seed: u64,
    pub group_by: GroupBy,
    pub order_margin: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            audio: AudioConfig::default(),
            spectro: SpectroConfig::default(),
            occlusion: OcclusionConfig::default(),
            target: TargetPolicy::default(),
            segmentation: SegmentationConfig::default(),
            cues: CueConfig::default(),
            oracle: OracleSpec::default(),
            oracle_timeout_s: 30.0,
            labels: EmotionLabelSet::default(),
            seed: 0,
            group_by: GroupBy::True,
            order_margin: DEFAULT_ORDER_MARGIN,
        }
    }
}

fn fmt_labels(l: &EmotionLabelSet) -> String {
    l.iter()
        .map(|(n, a)| format!("{n}:{a}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_labels(s: &str) -> Result<EmotionLabelSet> {
    let mut names = Vec::new();
    let mut arousal = Vec::new();
    for item in s.split(',').map(str::trim) {
        let (name, a) = match item.split_once(':') {
            Some((n, "high")) => (n, Arousal::High),
            Some((n, "low")) => (n, Arousal::Low),
            Some(_) => return Err(Error::InvalidArgument(format!("bad label entry {item:?}"))),
            None => (
                item,
                Arousal::of_label(item).ok_or_else(|| {
                    Error::InvalidArgument(format!("no default arousal for {item:?}"))
                })?,
            ),
        };
        names.push(name.to_string());
        arousal.push(a);
    }
    EmotionLabelSet::new(names, arousal)
}

fn fmt_axis(a: &AxisMode) -> String {
    match a {
        AxisMode::TimeOnly => "time".into(),
        AxisMode::TimeFrequency {
            freq_window,
            freq_stride,
        } => format!("time_frequency:{freq_window}:{freq_stride}"),
    }
}

fn parse_axis(s: &str) -> Result<AxisMode> {
    if s == "time" {
        return Ok(AxisMode::TimeOnly);
    }
    let bad = || Error::InvalidArgument(format!("unknown axis mode {s:?}"));
    let rest = s.strip_prefix("time_frequency:").ok_or_else(bad)?;
    let (w, st) = rest.split_once(':').ok_or_else(bad)?;
    Ok(AxisMode::TimeFrequency {
        freq_window: w.parse().map_err(|_| bad())?,
        freq_stride: st.parse().map_err(|_| bad())?,
    })
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidArgument(format!(
            "expected true or false, got {s:?}"
        ))),
    }
}

fn num<T: FromStr>(s: &str) -> Result<T>
where
    T::Err: Display,
{
    s.parse::<T>()
        .map_err(|e| Error::InvalidArgument(format!("bad value {s:?}: {e}")))
}

type Getter = fn(&PipelineConfig) -> String;
type Setter = fn(&mut PipelineConfig, &str) -> Result<()>;

/// Every configuration key with its accessors, in canonical order.
const TABLE: &[(&str, Getter, Setter)] = &[
    (
        "audio.sample_rate",
        |c| c.audio.sample_rate.to_string(),
        |d, v| {
            d.audio.sample_rate = num(v)?;
            d.spectro.sample_rate = d.audio.sample_rate;
            Ok(())
        },
    ),
    (
        "audio.duration_s",
        |c| c.audio.duration_s.to_string(),
        |d, v| {
            d.audio.duration_s = num(v)?;
            Ok(())
        },
    ),
    (
        "audio.trim",
        |c| c.audio.trim.to_string(),
        |d, v| {
            d.audio.trim = parse_bool(v)?;
            Ok(())
        },
    ),
    (
        "audio.trim_db",
        |c| c.audio.trim_db.to_string(),
        |d, v| {
            d.audio.trim_db = num(v)?;
            Ok(())
        },
    ),
    (
        "spectro.n_fft",
        |c| c.spectro.n_fft.to_string(),
        |d, v| {
            d.spectro.n_fft = num(v)?;
            Ok(())
        },
    ),
    (
        "spectro.win_length",
        |c| c.spectro.win_length.to_string(),
        |d, v| {
            d.spectro.win_length = num(v)?;
            Ok(())
        },
    ),
    (
        "spectro.hop_length",
        |c| c.spectro.hop_length.to_string(),
        |d, v| {
            d.spectro.hop_length = num(v)?;
            Ok(())
        },
    ),
    (
        "spectro.n_mels",
        |c| c.spectro.n_mels.to_string(),
        |d, v| {
            d.spectro.n_mels = num(v)?;
            Ok(())
        },
    ),
    (
        "spectro.fmin",
        |c| c.spectro.fmin.to_string(),
        |d, v| {
            d.spectro.fmin = num(v)?;
            Ok(())
        },
    ),
    (
        "spectro.fmax",
        |c| c.spectro.fmax.map_or("none".into(), |f| f.to_string()),
        |d, v| {
            d.spectro.fmax = if v == "none" { None } else { Some(num(v)?) };
            Ok(())
        },
    ),
    (
        "spectro.log_floor",
        |c| c.spectro.log_floor.to_string(),
        |d, v| {
            d.spectro.log_floor = num(v)?;
            Ok(())
        },
    ),
    (
        "occlusion.window_frames",
        |c| c.occlusion.window_frames.to_string(),
        |d, v| {
            d.occlusion.window_frames = num(v)?;
            Ok(())
        },
    ),
    (
        "occlusion.stride_frames",
        |c| c.occlusion.stride_frames.to_string(),
        |d, v| {
            d.occlusion.stride_frames = num(v)?;
            Ok(())
        },
    ),
    (
        "occlusion.mask",
        |c| c.occlusion.mask.to_string(),
        |d, v| {
            d.occlusion.mask = v.parse()?;
            Ok(())
        },
    ),
    (
        "occlusion.axis",
        |c| fmt_axis(&c.occlusion.axis),
        |d, v| {
            d.occlusion.axis = parse_axis(v)?;
            Ok(())
        },
    ),
    (
        "occlusion.target",
        |c| c.target.to_string(),
        |d, v| {
            d.target = v.parse()?;
            Ok(())
        },
    ),
    (
        "segment.duration_s",
        |c| c.segmentation.segment_duration_s.to_string(),
        |d, v| {
            d.segmentation.segment_duration_s = num(v)?;
            Ok(())
        },
    ),
    (
        "segment.k",
        |c| c.segmentation.k.to_string(),
        |d, v| {
            d.segmentation.k = num(v)?;
            Ok(())
        },
    ),
    (
        "segment.stride_frames",
        |c| c.segmentation.slide_stride_frames.to_string(),
        |d, v| {
            d.segmentation.slide_stride_frames = num(v)?;
            Ok(())
        },
    ),
    (
        "segment.overlap",
        |c| c.segmentation.overlap.to_string(),
        |d, v| {
            d.segmentation.overlap = v.parse()?;
            Ok(())
        },
    ),
    (
        "segment.use_abs",
        |c| c.segmentation.use_abs.to_string(),
        |d, v| {
            d.segmentation.use_abs = parse_bool(v)?;
            Ok(())
        },
    ),
    (
        "pitch.frame_ms",
        |c| c.cues.pitch.frame_ms.to_string(),
        |d, v| {
            d.cues.pitch.frame_ms = num(v)?;
            Ok(())
        },
    ),
    (
        "pitch.hop_ms",
        |c| c.cues.pitch.hop_ms.to_string(),
        |d, v| {
            d.cues.pitch.hop_ms = num(v)?;
            Ok(())
        },
    ),
    (
        "pitch.f0_min",
        |c| c.cues.pitch.f0_min.to_string(),
        |d, v| {
            d.cues.pitch.f0_min = num(v)?;
            Ok(())
        },
    ),
    (
        "pitch.f0_max",
        |c| c.cues.pitch.f0_max.to_string(),
        |d, v| {
            d.cues.pitch.f0_max = num(v)?;
            Ok(())
        },
    ),
    (
        "pitch.voicing_threshold",
        |c| c.cues.pitch.voicing_threshold.to_string(),
        |d, v| {
            d.cues.pitch.voicing_threshold = num(v)?;
            Ok(())
        },
    ),
    (
        "pitch.peak_fraction",
        |c| c.cues.pitch.peak_fraction.to_string(),
        |d, v| {
            d.cues.pitch.peak_fraction = num(v)?;
            Ok(())
        },
    ),
    (
        "cues.silence_rms",
        |c| c.cues.silence_rms.to_string(),
        |d, v| {
            d.cues.silence_rms = num(v)?;
            Ok(())
        },
    ),
    (
        "cues.amplitude_floor",
        |c| c.cues.amplitude_floor.to_string(),
        |d, v| {
            d.cues.amplitude_floor = num(v)?;
            Ok(())
        },
    ),
    (
        "cues.loudness_frame_ms",
        |c| c.cues.loudness_frame_ms.to_string(),
        |d, v| {
            d.cues.loudness_frame_ms = num(v)?;
            Ok(())
        },
    ),
    (
        "cues.loudness_hop_ms",
        |c| c.cues.loudness_hop_ms.to_string(),
        |d, v| {
            d.cues.loudness_hop_ms = num(v)?;
            Ok(())
        },
    ),
    (
        "cues.calibration_db",
        |c| c.cues.calibration_db.to_string(),
        |d, v| {
            d.cues.calibration_db = num(v)?;
            Ok(())
        },
    ),
    (
        "cues.slope_n_fft",
        |c| c.cues.slope_n_fft.to_string(),
        |d, v| {
            d.cues.slope_n_fft = num(v)?;
            Ok(())
        },
    ),
    (
        "cues.slope_win",
        |c| c.cues.slope_win.to_string(),
        |d, v| {
            d.cues.slope_win = num(v)?;
            Ok(())
        },
    ),
    (
        "cues.slope_hop",
        |c| c.cues.slope_hop.to_string(),
        |d, v| {
            d.cues.slope_hop = num(v)?;
            Ok(())
        },
    ),
    (
        "cues.band_lo_hz",
        |c| c.cues.band_lo_hz.to_string(),
        |d, v| {
            d.cues.band_lo_hz = num(v)?;
            Ok(())
        },
    ),
    (
        "cues.band_hi_hz",
        |c| c.cues.band_hi_hz.to_string(),
        |d, v| {
            d.cues.band_hi_hz = num(v)?;
            Ok(())
        },
    ),
    (
        "cues.inband_floor_db",
        |c| c.cues.inband_floor_db.to_string(),
        |d, v| {
            d.cues.inband_floor_db = num(v)?;
            Ok(())
        },
    ),
    (
        "cues.shrillness",
        |c| c.cues.shrillness.to_string(),
        |d, v| {
            d.cues.shrillness = v.parse()?;
            Ok(())
        },
    ),
    (
        "oracle.spec",
        |c| c.oracle.to_string(),
        |d, v| {
            d.oracle = v.parse()?;
            Ok(())
        },
    ),
    (
        "oracle.timeout_s",
        |c| c.oracle_timeout_s.to_string(),
        |d, v| {
            d.oracle_timeout_s = num(v)?;
            Ok(())
        },
    ),
    (
        "oracle.labels",
        |c| fmt_labels(&c.labels),
        |d, v| {
            d.labels = parse_labels(v)?;
            Ok(())
        },
    ),
    (
        "run.seed",
        |c| c.seed.to_string(),
        |d, v| {
            d.seed = num(v)?;
            Ok(())
        },
    ),
    (
        "validate.group_by",
        |c| match c.group_by {
            GroupBy::True => "true".to_string(),
            GroupBy::Predicted => "predicted".to_string(),
        },
        |d, v| {
            d.group_by = v.parse()?;
            Ok(())
        },
    ),
    (
        "validate.order_margin",
        |c| c.order_margin.to_string(),
        |d, v| {
            d.order_margin = num(v)?;
            Ok(())
        },
    ),
];

/// Every configuration key in canonical order.
pub fn keys() -> impl Iterator<Item = &'static str> {
    TABLE.iter().map(|(k, _, _)| *k)
}

impl PipelineConfig {
    /// All `(key, value)` pairs in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        TABLE.iter().map(|(k, get, _)| (*k, get(self))).collect()
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (_, _, set) = TABLE
            .iter()
            .find(|(k, _, _)| *k == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown key {key:?}")))?;
        set(self, value.trim())
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments. Reports
/// the 1-based line of any malformed line.
fn parse_lines(text: &str, path: &Path) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            });
        };
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl PipelineConfig {
    pub fn oracle_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.oracle_timeout_s.max(0.001))
    }

    /// Applies the assignments in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (line, k, v) in parse_lines(text, path)? {
            let located = |msg: String| Error::Config {
                path: path.to_path_buf(),
                line,
                msg,
            };
            if let Some(first) = seen.insert(k.clone(), line) {
                return Err(located(format!("{k} already set on line {first}")));
            }
            self.set(&k, &v).map_err(|e| located(format!("{k}: {e}")))?;
        }
        Ok(())
    }

    /// Defaults overridden by a config file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?, path)?;
        Ok(cfg)
    }

    pub fn env_var_name(key: &str) -> String {
        format!("{ENV_PREFIX}{}", key.to_ascii_uppercase().replace('.', "_"))
    }

    /// Applies overrides from `vars`, typically `std::env::vars()`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        let by_name: BTreeMap<String, &str> = keys().map(|k| (Self::env_var_name(k), k)).collect();
        let mut vars: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(n, _)| n.starts_with(ENV_PREFIX))
            .collect();
        vars.sort();
        for (name, value) in vars {
            match by_name.get(&name) {
                Some(key) => self.set(key, &value).map_err(|e| Error::Config {
                    path: PathBuf::from(format!("${name}")),
                    line: 0,
                    msg: e.to_string(),
                })?,
                None => log::warn!("ignoring unknown variable {name}"),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.spectro.validate()?;
        if self.labels.index_of("").is_some() {
            return Err(Error::InvalidArgument("empty label".into()));
        }
        if let TargetPolicy::Label(l) = &self.target {
            if self.labels.index_of(l).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "target label {l:?} is not in the label set"
                )));
            }
        }
        if !(self.audio.duration_s > 0.0) {
            return Err(Error::InvalidArgument(
                "audio duration must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Text form listing every key.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Hex sha256 of the canonical rendering.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.render().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

/// Complete record of a run: every configuration key plus the digest of
/// every input file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub config: PipelineConfig,
    /// `(source_id, sha256 of the input wav)` in corpus order.
    pub inputs: Vec<(String, String)>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut out = String::from("# cuelens run manifest\n");
        out.push_str(&format!("version = {}\n", self.version));
        out.push_str(&self.config.render());
        for (id, digest) in &self.inputs {
            out.push_str(&format!("input.{id} = {digest}\n"));
        }
        out
    }

    /// Parses a manifest; every configuration key must be present.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let lines = parse_lines(text, path)?;
        let mut config = PipelineConfig::default();
        let mut version = None;
        let mut inputs = Vec::new();
        let mut present = Vec::new();
        for (line, k, v) in lines {
            let located = |msg: String| Error::Config {
                path: path.to_path_buf(),
                line,
                msg,
            };
            if k == "version" {
                version = Some(v);
            } else if let Some(id) = k.strip_prefix("input.") {
                inputs.push((id.to_string(), v));
            } else {
                config
                    .set(&k, &v)
                    .map_err(|e| located(format!("{k}: {e}")))?;
                present.push(k);
            }
        }
        let mut missing: Vec<String> = keys()
            .filter(|k| !present.iter().any(|p| p == k))
            .map(str::to_string)
            .collect();
        if version.is_none() {
            missing.insert(0, "version".into());
        }
        if !missing.is_empty() {
            return Err(Error::MissingKeys(missing));
        }
        Ok(Self {
            version: version.unwrap_or_default(),
            config,
            inputs,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saliency::MaskMode;

    #[test]
    fn render_parse_identity() {
        let mut cfg = PipelineConfig::default();
        cfg.occlusion.mask = MaskMode::Fixed(-3.25);
        cfg.occlusion.axis = AxisMode::TimeFrequency {
            freq_window: 16,
            freq_stride: 8,
        };
        cfg.spectro.fmax = Some(7600.0);
        cfg.seed = 99;
        cfg.oracle = "exec:python3 serve.py --stdio".parse().unwrap();
        let mut back = PipelineConfig::default();
        back.apply_text(&cfg.render(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.entries().len(), keys().count());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut cfg = PipelineConfig::default();
        let err = cfg
            .apply_text(
                "# c\nspectro.n_fft = 512\n\nsegment.k = five\n",
                Path::new("run.cfg"),
            )
            .unwrap_err();
        match err {
            Error::Config { line, path, .. } => {
                assert_eq!(line, 4);
                assert_eq!(path, PathBuf::from("run.cfg"));
            }
            e => panic!("{e:?}"),
        }
        let err = cfg
            .apply_text("no equals sign\n", Path::new("c"))
            .unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        let err = cfg
            .apply_text("bogus.key = 1\n", Path::new("c"))
            .unwrap_err();
        assert!(err.to_string().contains("bogus.key"));
        let err = cfg
            .apply_text("run.seed = 1\nrun.seed = 2\n", Path::new("c"))
            .unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
    }

    #[test]
    fn env_overrides() {
        assert_eq!(
            PipelineConfig::env_var_name("spectro.n_fft"),
            "CUELENS_SPECTRO_N_FFT"
        );
        let mut cfg = PipelineConfig::default();
        cfg.apply_env([
            ("CUELENS_RUN_SEED".to_string(), "7".to_string()),
            ("CUELENS_SEGMENT_OVERLAP".to_string(), "free".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(
            cfg.segmentation.overlap,
            crate::segmentation::OverlapPolicy::Free
        );
        assert!(cfg
            .apply_env([("CUELENS_SEGMENT_K".to_string(), "x".to_string())])
            .is_err());
    }

    #[test]
    fn labels_and_sample_rate_keys() {
        let mut cfg = PipelineConfig::default();
        cfg.set("oracle.labels", "calm:low,excited:high").unwrap();
        assert_eq!(cfg.labels.labels(), ["calm", "excited"]);
        assert_eq!(cfg.labels.arousal_of("excited"), Some(Arousal::High));
        cfg.set("oracle.labels", "angry,sad").unwrap();
        assert_eq!(cfg.labels.arousal_of("sad"), Some(Arousal::Low));
        cfg.set("audio.sample_rate", "8000").unwrap();
        assert_eq!(cfg.spectro.sample_rate, 8000);
    }

    #[test]
    fn manifest_requires_every_key() {
        let m = RunManifest {
            version: "0.1.0".into(),
            config: PipelineConfig::default(),
            inputs: vec![("a".into(), "00ff".into())],
        };
        let text = m.render();
        assert_eq!(RunManifest::parse(&text, Path::new("m")).unwrap(), m);
        let cut: String = text
            .lines()
            .filter(|l| !l.starts_with("segment.k") && !l.starts_with("run.seed"))
            .map(|l| format!("{l}\n"))
            .collect();
        match RunManifest::parse(&cut, Path::new("m")).unwrap_err() {
            Error::MissingKeys(keys) => {
                assert_eq!(keys, vec!["segment.k".to_string(), "run.seed".to_string()])
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn digest_tracks_changes() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }
}
