//! Waveform ingestion and the preprocessing chain applied before analysis:
//! load, resample, trim leading/trailing silence, then fix the duration.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono PCM samples at a known rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of the sample range `[start, end)` as its own waveform.
    pub fn slice(&self, start: usize, end: usize) -> Result<Waveform> {
        if start >= end || end > self.samples.len() {
            return Err(Error::InvalidArgument(format!(
                "slice [{start}, {end}) outside waveform of {} samples",
                self.samples.len()
            )));
        }
        Ok(Waveform::new(
            self.samples[start..end].to_vec(),
            self.sample_rate,
            self.source_id.clone(),
        ))
    }
}

/// Reads a RIFF/WAVE PCM file, averaging channels down to mono.
pub fn load_pcm(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format("header declares zero channels".into()));
    }

    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            if !(8..=32).contains(&spec.bits_per_sample) {
                return Err(Error::UnsupportedFormat(format!(
                    "{}-bit integer PCM",
                    spec.bits_per_sample
                )));
            }
            let full_scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::UnsupportedFormat(format!(
                    "{}-bit float PCM",
                    spec.bits_per_sample
                )));
            }
            reader
                .into_samples::<f32>()
                .map(|s| s.map(|v| v as f64))
                .collect::<std::result::Result<_, _>>()?
        }
    };

    if interleaved.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} has no audio frames",
            path.display()
        )));
    }

    let samples = interleaved
        .chunks(channels)
        .map(|frame| {
            let mean = frame.iter().sum::<f64>() / channels as f64;
            if mean.is_finite() {
                mean.clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();

    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Waveform::new(samples, spec.sample_rate, source_id))
}

/// Writes a mono 16-bit PCM file.
pub fn write_pcm16(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Windowed-sinc resampler settings.
///
/// The kernel is a Kaiser-windowed sinc with `zero_crossings` lobes on each
/// side, low-pass cutoff at `rolloff` times the lower Nyquist frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleQuality {
    pub zero_crossings: usize,
    pub kaiser_beta: f64,
    pub rolloff: f64,
}

impl Default for ResampleQuality {
    fn default() -> Self {
        Self {
            zero_crossings: 32,
            kaiser_beta: 8.6,
            rolloff: 0.95,
        }
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    resample_with(w, target_rate, ResampleQuality::default())
}

pub fn resample_with(w: &Waveform, target_rate: u32, q: ResampleQuality) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument(
            "target sample rate must be positive".into(),
        ));
    }
    if w.sample_rate == 0 {
        return Err(Error::InvalidArgument(
            "source sample rate must be positive".into(),
        ));
    }
    if w.sample_rate == target_rate || w.samples.is_empty() {
        let mut out = w.clone();
        out.sample_rate = target_rate;
        return Ok(out);
    }

    let src = w.sample_rate as u128;
    let dst = target_rate as u128;
    let n_in = w.samples.len();
    let n_out = ((n_in as u128 * dst + src / 2) / src) as usize;

    let step = w.sample_rate as f64 / target_rate as f64;
    let scale = (target_rate as f64 / w.sample_rate as f64).min(1.0) * q.rolloff;
    let support = q.zero_crossings as f64 / scale;
    let i0_beta = bessel_i0(q.kaiser_beta);

    let kernel = |x: f64| -> f64 {
        let r = x / support;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let arg = PI * scale * x;
        let sinc = if arg.abs() < 1e-12 {
            1.0
        } else {
            arg.sin() / arg
        };
        let win = bessel_i0(q.kaiser_beta * (1.0 - r * r).sqrt()) / i0_beta;
        scale * sinc * win
    };

    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        let t = n as f64 * step;
        let lo = ((t - support).ceil().max(0.0)) as usize;
        let hi = ((t + support).floor() as usize).min(n_in - 1);
        let mut acc = 0.0;
        for k in lo..=hi {
            acc += w.samples[k] * kernel(t - k as f64);
        }
        out.push(acc.clamp(-1.0, 1.0));
    }
    Ok(Waveform::new(out, target_rate, w.source_id.clone()))
}

/// Outcome of [`trim_silence`]; `all_silent` marks a clip with no energy at all.
#[derive(Debug, Clone, PartialEq)]
pub struct Trimmed {
    pub waveform: Waveform,
    pub all_silent: bool,
}

pub const TRIM_FRAME_S: f64 = 0.025;
pub const TRIM_HOP_S: f64 = 0.010;

/// Removes leading and trailing frames whose RMS lies more than
/// `threshold_db` below the loudest frame. Interior frames are kept.
pub fn trim_silence(w: &Waveform, threshold_db: f64) -> Result<Trimmed> {
    if !(threshold_db > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "trim threshold must be positive dB, got {threshold_db}"
        )));
    }
    let sr = w.sample_rate as f64;
    let frame = ((TRIM_FRAME_S * sr).round() as usize).max(1);
    let hop = ((TRIM_HOP_S * sr).round() as usize).max(1);
    let n = w.samples.len();

    let starts: Vec<usize> = if n <= frame {
        vec![0]
    } else {
        (0..=(n - frame) / hop).map(|i| i * hop).collect()
    };
    let rms: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let end = (s + frame).min(n);
            let chunk = &w.samples[s..end];
            if chunk.is_empty() {
                0.0
            } else {
                (chunk.iter().map(|x| x * x).sum::<f64>() / chunk.len() as f64).sqrt()
            }
        })
        .collect();

    let peak = rms.iter().cloned().fold(0.0_f64, f64::max);
    if peak <= 0.0 {
        return Ok(Trimmed {
            waveform: Waveform::new(Vec::new(), w.sample_rate, w.source_id.clone()),
            all_silent: true,
        });
    }

    let floor = peak * 10f64.powf(-threshold_db / 20.0);
    let keep = |r: &f64| *r >= floor;
    let first = rms.iter().position(keep).unwrap_or(0);
    let last = rms.iter().rposition(keep).unwrap_or(rms.len() - 1);

    let start = if first == 0 { 0 } else { starts[first] };
    let end = if last == rms.len() - 1 {
        n
    } else {
        (starts[last] + frame).min(n)
    };
    Ok(Trimmed {
        waveform: Waveform::new(
            w.samples[start..end].to_vec(),
            w.sample_rate,
            w.source_id.clone(),
        ),
        all_silent: false,
    })
}

/// Truncates (keeping the head) or zero-pads at the end to exactly
/// `round(duration_s * sample_rate)` samples.
pub fn fix_duration(w: &Waveform, duration_s: f64) -> Result<Waveform> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    let target = (duration_s * w.sample_rate as f64).round() as usize;
    let mut samples = w.samples.clone();
    samples.resize(target, 0.0);
    Ok(Waveform::new(samples, w.sample_rate, w.source_id.clone()))
}
