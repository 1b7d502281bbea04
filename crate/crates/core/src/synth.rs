//! Deterministic synthetic corpus with known cue structure.
//!
//! High-arousal clips are a harmonic carrier with a few loud, higher-pitched,
//! amplitude-modulated bursts at seeded positions; the burst spans are
//! written out as ground truth. Low-arousal clips are a quiet, low, steady
//! harmonic tone whose level wobbles slowly by a fraction of a dB. Both sit
//! on a Gaussian noise floor.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::audio::{write_pcm16, Waveform};
use crate::error::{Error, Result};
use crate::segmentation::{write_seg1, SalientSegment};
use crate::spectrogram::FrameGeometry;
use crate::validation::{write_lab1, LabelEntry};

/// Seed for one item, derived from the run seed and the item's id.
pub fn derive_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDesign {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub high_labels: Vec<String>,
    pub low_labels: Vec<String>,
    pub n_high: usize,
    pub n_low: usize,
    pub n_harmonics: usize,
    pub carrier_f0: f64,
    pub carrier_dbfs: f64,
    pub burst_f0: f64,
    pub burst_gain_db: f64,
    pub burst_s: f64,
    pub n_bursts: usize,
    pub burst_am_hz: f64,
    pub burst_am_depth: f64,
    /// Bursts are kept this far from the clip edges and from each other.
    pub burst_margin_s: f64,
    pub low_f0: f64,
    pub low_dbfs: f64,
    /// Peak deviation of the slow level wobble on low-arousal clips.
    pub wobble_db: f64,
    pub wobble_hz: f64,
    pub noise_dbfs: f64,
}

impl Default for SynthDesign {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            duration_s: 2.0,
            high_labels: vec!["angry".into(), "happy".into(), "fear".into()],
            low_labels: vec!["sad".into(), "neutral".into()],
            n_high: 20,
            n_low: 20,
            n_harmonics: 6,
            carrier_f0: 180.0,
            carrier_dbfs: -28.0,
            burst_f0: 260.0,
            burst_gain_db: 20.0,
            burst_s: 0.15,
            n_bursts: 2,
            burst_am_hz: 30.0,
            burst_am_depth: 0.5,
            burst_margin_s: 0.1,
            low_f0: 110.0,
            low_dbfs: -42.0,
            wobble_db: 0.5,
            wobble_hz: 1.3,
            noise_dbfs: -60.0,
        }
    }
}

/// RMS of a unit-harmonic tone from [`harmonic`] with `n` partials.
fn harmonic_rms(n: usize) -> f64 {
    ((1..=n).map(|h| 1.0 / (h * h) as f64).sum::<f64>() / 2.0).sqrt()
}

/// Harmonic tone with 1/h partial amplitudes, scaled to unit RMS.
fn harmonic(phase: f64, n: usize) -> f64 {
    (1..=n)
        .map(|h| (h as f64 * phase).sin() / h as f64)
        .sum::<f64>()
        / harmonic_rms(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub waveform: Waveform,
    pub label: String,
    /// Planted burst spans in samples, in time order.
    pub bursts: Vec<(usize, usize)>,
}

impl SynthDesign {
    pub fn is_high(&self, label: &str) -> bool {
        self.high_labels.iter().any(|l| l == label)
    }

    fn validate(&self) -> Result<()> {
        if self.high_labels.is_empty() || self.low_labels.is_empty() {
            return Err(Error::InvalidArgument(
                "both arousal classes need labels".into(),
            ));
        }
        let span =
            self.n_bursts as f64 * (self.burst_s + self.burst_margin_s) + self.burst_margin_s;
        if span > self.duration_s {
            return Err(Error::InvalidArgument(format!(
                "{} bursts of {} s do not fit in {} s",
                self.n_bursts, self.burst_s, self.duration_s
            )));
        }
        Ok(())
    }

    /// Burst starts drawn uniformly in sample units, kept apart by the
    /// margin, returned sorted.
    fn burst_starts(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
        let sr = self.sample_rate as f64;
        let len = (self.burst_s * sr).round() as usize;
        let margin = (self.burst_margin_s * sr).round() as usize;
        // Place bursts in the room left after reserving their length and the
        // gaps, then spread them back out; this stays uniform over valid
        // layouts without rejection.
        let slack = n - (self.n_bursts * (len + margin) + margin);
        let mut offsets: Vec<usize> = (0..self.n_bursts)
            .map(|_| rng.random_range(0..=slack))
            .collect();
        offsets.sort_unstable();
        offsets
            .iter()
            .enumerate()
            .map(|(i, o)| margin + o + i * (len + margin))
            .collect()
    }

    pub fn clip(&self, id: &str, label: &str, seed: u64) -> Result<SynthClip> {
        self.validate()?;
        let sr = self.sample_rate as f64;
        let n = (self.duration_s * sr).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise_sd = db_to_amp(self.noise_dbfs);
        let high = self.is_high(label);
        if !high && !self.low_labels.iter().any(|l| l == label) {
            return Err(Error::InvalidArgument(format!(
                "label {label:?} is not in the design"
            )));
        }

        let mut samples = vec![0.0; n];
        let mut bursts = Vec::new();
        if high {
            let carrier = db_to_amp(self.carrier_dbfs);
            for (i, s) in samples.iter_mut().enumerate() {
                let t = i as f64 / sr;
                *s = carrier * harmonic(2.0 * PI * self.carrier_f0 * t, self.n_harmonics);
            }
            let len = (self.burst_s * sr).round() as usize;
            let burst_amp = db_to_amp(self.carrier_dbfs + self.burst_gain_db);
            let ramp = (0.005 * sr).round() as usize;
            for start in self.burst_starts(&mut rng, n) {
                for j in 0..len {
                    let t = j as f64 / sr;
                    let edge = if j < ramp {
                        0.5 - 0.5 * (PI * j as f64 / ramp as f64).cos()
                    } else if j + ramp >= len {
                        0.5 - 0.5 * (PI * (len - 1 - j) as f64 / ramp as f64).cos()
                    } else {
                        1.0
                    };
                    let am = 1.0 + self.burst_am_depth * (2.0 * PI * self.burst_am_hz * t).sin();
                    samples[start + j] += burst_amp
                        * edge
                        * am
                        * harmonic(2.0 * PI * self.burst_f0 * t, self.n_harmonics);
                }
                bursts.push((start, start + len));
            }
        } else {
            let phase0 = rng.random::<f64>() * 2.0 * PI;
            for (i, s) in samples.iter_mut().enumerate() {
                let t = i as f64 / sr;
                let level =
                    self.low_dbfs + self.wobble_db * (2.0 * PI * self.wobble_hz * t + phase0).sin();
                *s = db_to_amp(level) * harmonic(2.0 * PI * self.low_f0 * t, self.n_harmonics);
            }
        }
        for s in samples.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *s += noise_sd * z;
        }
        Ok(SynthClip {
            waveform: Waveform::new(samples, self.sample_rate, id),
            label: label.to_string(),
            bursts,
        })
    }

    /// `(source_id, label)` for every clip, high-arousal classes first,
    /// labels assigned round-robin within each class.
    pub fn roster(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for i in 0..self.n_high {
            let l = &self.high_labels[i % self.high_labels.len()];
            out.push((format!("hi{i:03}_{l}"), l.clone()));
        }
        for i in 0..self.n_low {
            let l = &self.low_labels[i % self.low_labels.len()];
            out.push((format!("lo{i:03}_{l}"), l.clone()));
        }
        out
    }
}

/// Frame span covering a sample span under `geometry`.
pub fn samples_to_frames(start: usize, end: usize, geometry: &FrameGeometry) -> (usize, usize) {
    let f0 = (start / geometry.hop_length).min(geometry.n_frames.saturating_sub(1));
    let f1 = end
        .div_ceil(geometry.hop_length)
        .clamp(f0 + 1, geometry.n_frames);
    (f0, f1)
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub wav_dir: PathBuf,
    pub labels_path: PathBuf,
    pub truth_dir: PathBuf,
    pub clips: Vec<SynthClip>,
}

/// Writes `wav/<id>.wav`, `labels.lab` and, for clips with bursts,
/// `truth/<id>.seg` under `out_dir`.
pub fn synth_corpus(
    design: &SynthDesign,
    seed: u64,
    out_dir: impl AsRef<Path>,
    geometry: &FrameGeometry,
) -> Result<SynthOutput> {
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join("wav");
    let truth_dir = out_dir.join("truth");
    std::fs::create_dir_all(&wav_dir)?;
    std::fs::create_dir_all(&truth_dir)?;
    let mut clips = Vec::new();
    let mut entries = Vec::new();
    for (id, label) in design.roster() {
        let clip = design.clip(&id, &label, derive_seed(seed, &id))?;
        write_pcm16(&clip.waveform, wav_dir.join(format!("{id}.wav")))?;
        if !clip.bursts.is_empty() {
            let segs: Vec<SalientSegment> = clip
                .bursts
                .iter()
                .enumerate()
                .map(|(i, &(s, e))| {
                    let (frame_start, frame_end) = samples_to_frames(s, e, geometry);
                    SalientSegment {
                        rank: i + 1,
                        frame_start,
                        frame_end,
                        sample_start: s,
                        sample_end: e,
                        cumulative_relevance: 0.0,
                    }
                })
                .collect();
            write_seg1(&segs, truth_dir.join(format!("{id}.seg")))?;
        }
        entries.push(LabelEntry {
            source_id: id,
            true_label: label,
            predicted: None,
        });
        clips.push(clip);
    }
    let labels_path = out_dir.join("labels.lab");
    write_lab1(&entries, &labels_path)?;
    Ok(SynthOutput {
        wav_dir,
        labels_path,
        truth_dir,
        clips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cues::{slice_cues, CueConfig};

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn clips_are_deterministic() {
        let d = SynthDesign::default();
        assert_eq!(
            d.clip("a", "angry", 5).unwrap(),
            d.clip("a", "angry", 5).unwrap()
        );
        assert_ne!(
            d.clip("a", "angry", 5).unwrap(),
            d.clip("a", "angry", 6).unwrap()
        );
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert!(d.clip("a", "calm", 1).is_err());
    }

    #[test]
    fn bursts_are_planted_where_reported() {
        let d = SynthDesign::default();
        for seed in 0..20 {
            let c = d.clip("x", "fear", seed).unwrap();
            assert_eq!(c.bursts.len(), 2);
            assert_eq!(c.waveform.len(), 32000);
            let (a, b) = (c.bursts[0], c.bursts[1]);
            assert!(a.1 + 1600 <= b.0 && a.0 >= 1600 && b.1 + 1600 <= 32000);
            for &(s, e) in &c.bursts {
                assert_eq!(e - s, 2400);
                let inside = rms(&c.waveform.samples[s..e]);
                let before = rms(&c.waveform.samples[s - 800..s]);
                assert!(20.0 * (inside / before).log10() > 15.0);
            }
        }
    }

    #[test]
    fn low_clip_recovers_planted_pitch() {
        let d = SynthDesign::default();
        let c = d.clip("s", "sad", 3).unwrap();
        assert!(c.bursts.is_empty());
        let cues = slice_cues(&c.waveform, &CueConfig::default()).unwrap();
        assert!((cues.f0_mean_st - 24.0).abs() < 0.5, "{}", cues.f0_mean_st);
        assert!(cues.voiced_fraction > 0.95);
    }

    #[test]
    fn corpus_files() {
        let dir = tempfile::tempdir().unwrap();
        let d = SynthDesign {
            n_high: 3,
            n_low: 2,
            ..SynthDesign::default()
        };
        let g = FrameGeometry::for_samples(&crate::spectrogram::SpectroConfig::default(), 32000);
        let out = synth_corpus(&d, 1, dir.path(), &g).unwrap();
        assert_eq!(out.clips.len(), 5);
        let labels = crate::validation::read_lab1(&out.labels_path).unwrap();
        assert_eq!(labels.len(), 5);
        assert!(labels.iter().all(|e| e.predicted.is_none()));
        let truth = crate::segmentation::read_seg1(out.truth_dir.join("hi000_angry.seg")).unwrap();
        assert_eq!(truth.len(), 2);
        assert_eq!(truth[0].sample_start, out.clips[0].bursts[0].0);
        assert!(!out.truth_dir.join("lo000_sad.seg").exists());

        let again = tempfile::tempdir().unwrap();
        synth_corpus(&d, 1, again.path(), &g).unwrap();
        let a = std::fs::read(dir.path().join("wav/hi001_happy.wav")).unwrap();
        let b = std::fs::read(again.path().join("wav/hi001_happy.wav")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn energy_oracle_separates_classes() {
        use crate::oracle::{EmotionLabelSet, OracleSpec};
        let d = SynthDesign::default();
        let labels = EmotionLabelSet::default();
        let mut oracle = OracleSpec::default()
            .open(&labels, std::time::Duration::from_secs(1))
            .unwrap();
        let cfg = crate::spectrogram::SpectroConfig::default();
        for (id, l) in d.roster().iter().step_by(3) {
            let c = d.clip(id, l, derive_seed(0, id)).unwrap();
            let s = crate::spectrogram::log_mel(&c.waveform, &cfg).unwrap();
            let p = oracle.predict(&s.data).unwrap();
            let want = if d.is_high(l) { "angry" } else { "sad" };
            assert_eq!(labels.labels()[p.argmax()], want, "{id}");
        }
    }

    #[test]
    fn frame_cover() {
        let g = FrameGeometry {
            hop_length: 240,
            win_length: 480,
            n_frames: 132,
            n_samples: 32000,
        };
        assert_eq!(samples_to_frames(9600, 12000, &g), (40, 50));
        assert_eq!(samples_to_frames(31900, 32000, &g), (131, 132));
    }
}
