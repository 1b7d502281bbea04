//! Log-Mel front end with an exact frame/sample mapping.
//!
//! Frames are not centered: frame `t` covers samples `[t*hop, t*hop + win)`,
//! so a clip of `n` samples yields `1 + (n - win) / hop` frames. Each frame is
//! multiplied by a periodic Hann window, zero-padded to `n_fft` and
//! transformed. Mel filters are unit-peak triangles on the HTK mel scale and
//! energies go through a natural log with a linear-power floor.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectroConfig {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
    pub fmin: f64,
    /// `None` means half the sample rate.
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for SpectroConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            win_length: 480,
            hop_length: 240,
            n_mels: 128,
            sample_rate: 16000,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
        }
    }
}

impl SpectroConfig {
    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return bad(format!(
                "win_length {} must be in 1..=n_fft ({})",
                self.win_length, self.n_fft
            ));
        }
        if self.hop_length == 0 {
            return bad("hop_length must be at least 1".into());
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        let fmax = self.fmax_hz();
        if !(self.fmin >= 0.0 && self.fmin < fmax && fmax <= self.sample_rate as f64 / 2.0) {
            return bad(format!(
                "need 0 <= fmin < fmax <= sample_rate/2, got fmin {} fmax {}",
                self.fmin, fmax
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }

    /// Number of frames produced for a waveform of `n_samples`.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.win_length {
            0
        } else {
            1 + (n_samples - self.win_length) / self.hop_length
        }
    }

    /// Short hex checksum identifying the analysis geometry. Saliency files
    /// carry it so a map is never paired with a spectrogram of another shape.
    pub fn digest(&self) -> String {
        let canon = format!(
            "n_fft={};win={};hop={};n_mels={};sr={};fmin={:?};fmax={:?};floor={:?};window=hann;mel=htk;center=false",
            self.n_fft,
            self.win_length,
            self.hop_length,
            self.n_mels,
            self.sample_rate,
            self.fmin,
            self.fmax_hz(),
            self.log_floor
        );
        let hash = Sha256::digest(canon.as_bytes());
        hash[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Log-Mel energies, `n_mels` rows by `W` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub data: Array2<f64>,
    pub config: SpectroConfig,
    pub source_id: String,
    /// Length of the waveform the frames were cut from.
    pub n_samples: usize,
}

impl LogMelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn geometry(&self) -> FrameGeometry {
        FrameGeometry {
            hop_length: self.config.hop_length,
            win_length: self.config.win_length,
            n_frames: self.n_frames(),
            n_samples: self.n_samples,
        }
    }

    pub fn frame_to_samples(&self, frame_start: usize, frame_end: usize) -> Result<(usize, usize)> {
        frame_to_samples(
            frame_start,
            frame_end,
            self.n_frames(),
            self.n_samples,
            &self.config,
        )
    }
}

/// Frame layout of one analysed clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGeometry {
    pub hop_length: usize,
    pub win_length: usize,
    pub n_frames: usize,
    pub n_samples: usize,
}

impl FrameGeometry {
    pub fn for_samples(cfg: &SpectroConfig, n_samples: usize) -> Self {
        Self {
            hop_length: cfg.hop_length,
            win_length: cfg.win_length,
            n_frames: cfg.n_frames(n_samples),
            n_samples,
        }
    }

    pub fn frame_to_samples(&self, frame_start: usize, frame_end: usize) -> Result<(usize, usize)> {
        if frame_start >= frame_end || frame_end > self.n_frames {
            return Err(Error::InvalidArgument(format!(
                "frame span [{frame_start}, {frame_end}) invalid for {} frames",
                self.n_frames
            )));
        }
        let start = frame_start * self.hop_length;
        let end = ((frame_end - 1) * self.hop_length + self.win_length).min(self.n_samples);
        Ok((start, end))
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Squared-magnitude STFT, `n_fft/2 + 1` rows by `W` frames.
pub fn stft_power(w: &Waveform, cfg: &SpectroConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if w.len() < cfg.win_length {
        return Err(Error::TooShort {
            needed: cfg.win_length,
            got: w.len(),
        });
    }
    let n_frames = cfg.n_frames(w.len());
    let n_bins = cfg.n_bins();
    let window = hann(cfg.win_length);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);

    let mut out = Array2::zeros((n_bins, n_frames));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    for t in 0..n_frames {
        let start = t * cfg.hop_length;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, (&x, &wv)) in w.samples[start..start + cfg.win_length]
            .iter()
            .zip(&window)
            .enumerate()
        {
            buf[i] = Complex::new(x * wv, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            out[(k, t)] = buf[k].norm_sqr();
        }
    }
    Ok(out)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Unit-peak triangular filters, `n_mels` rows by `n_fft/2 + 1` bins.
pub fn mel_filterbank(cfg: &SpectroConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax_hz());
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;

    let mut fb = Array2::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            fb[(m, k)] = rising.min(falling).max(0.0);
        }
    }
    Ok(fb)
}

/// `ln(max(filterbank * power, log_floor))`.
pub fn log_mel(w: &Waveform, cfg: &SpectroConfig) -> Result<LogMelSpectrogram> {
    let fb = mel_filterbank(cfg)?;
    log_mel_with(w, cfg, &fb)
}

/// Same as [`log_mel`] with a precomputed filterbank.
pub fn log_mel_with(
    w: &Waveform,
    cfg: &SpectroConfig,
    fb: &Array2<f64>,
) -> Result<LogMelSpectrogram> {
    let power = stft_power(w, cfg)?;
    let mel = fb.dot(&power);
    let data = mel.mapv(|v| v.max(cfg.log_floor).ln());
    Ok(LogMelSpectrogram {
        data,
        config: cfg.clone(),
        source_id: w.source_id.clone(),
        n_samples: w.len(),
    })
}

/// Sample span `[start, end)` covered by frames `[frame_start, frame_end)`.
pub fn frame_to_samples(
    frame_start: usize,
    frame_end: usize,
    n_frames: usize,
    n_samples: usize,
    cfg: &SpectroConfig,
) -> Result<(usize, usize)> {
    FrameGeometry {
        hop_length: cfg.hop_length,
        win_length: cfg.win_length,
        n_frames,
        n_samples,
    }
    .frame_to_samples(frame_start, frame_end)
}
