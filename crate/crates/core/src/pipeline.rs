//! Corpus driver: runs every utterance through preprocessing, saliency,
//! segmentation and cue extraction, then reduces the per-utterance records
//! into the aggregate tables.
//!
//! Output layout under the run directory:
//!
//! ```text
//! <source_id>/spec.sgm            log-Mel spectrogram (SGM1)
//! <source_id>/sal.<method>.sgm    saliency map (SGM1-S)
//! <source_id>/segs.seg            top-k salient segments (SEG1)
//! <source_id>/random.seg          duration-matched random segments (SEG1)
//! <source_id>/cues.cue            cues over salient segments (CUE1)
//! <source_id>/cues.full.cue       cues over the whole clip (CUE1)
//! <source_id>/cues.random.cue     cues over random segments (CUE1)
//! <source_id>/utterance.txt       labels, seeds and the resume digest
//! aggregate/manifest.txt          run manifest
//! aggregate/errors.txt            failed utterances, one per line
//! aggregate/stats.tsv|md          per-emotion statistics
//! aggregate/delta_<baseline>.csv|md
//! aggregate/plausibility.md
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::audio::{fix_duration, load_pcm, resample, trim_silence, Waveform};
use crate::config::{hex, sha256_file, AudioConfig, PipelineConfig, RunManifest, TargetPolicy};
use crate::cues::{extract_cues, read_cue1, write_cue1, CueRegions, CueRowKind};
use crate::error::{Error, Result};
use crate::formats::{check_token, write_sgm1};
use crate::oracle::Oracle;
use crate::report::{
    render_delta_table, render_plausibility, render_stats_table, write_stats1, StatsRow,
    TableFormat,
};
use crate::saliency::{export_map, import_map, occlusion_map, ImportOptions, SaliencyMap};
use crate::segmentation::{random_segments, segment_map, write_seg1};
use crate::spectrogram::{log_mel_with, mel_filterbank};
use crate::synth::derive_seed;
use crate::validation::{
    aggregate_emotion_stats, delta_sign_test, plausibility_report, read_lab1, validation_records,
    Baseline, CueSource, Split, UtteranceRecord,
};

pub const AGGREGATE_DIR: &str = "aggregate";
pub const UTTERANCE_FILE: &str = "utterance.txt";

/// One utterance of the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub source_id: String,
    pub wav: PathBuf,
    pub true_label: String,
    /// Known prediction; `None` lets the oracle decide.
    pub predicted: Option<String>,
}

/// Reads a LAB1 file and resolves each id to `<audio_dir>/<id>.wav`.
pub fn load_corpus(
    labels: impl AsRef<Path>,
    audio_dir: impl AsRef<Path>,
) -> Result<Vec<CorpusEntry>> {
    let audio_dir = audio_dir.as_ref();
    read_lab1(labels)?
        .into_iter()
        .map(|e| {
            check_source_id(&e.source_id)?;
            Ok(CorpusEntry {
                wav: audio_dir.join(format!("{}.wav", e.source_id)),
                source_id: e.source_id,
                true_label: e.true_label,
                predicted: e.predicted,
            })
        })
        .collect()
}

fn check_source_id(id: &str) -> Result<()> {
    check_token(id, "source id")?;
    if id == AGGREGATE_DIR || id.starts_with('.') || id.contains(['/', '\\']) {
        return Err(Error::InvalidArgument(format!(
            "source id {id:?} cannot name an output directory"
        )));
    }
    Ok(())
}

/// Load, resample, trim edge silence, then fix the duration.
pub fn preprocess(path: impl AsRef<Path>, source_id: &str, cfg: &AudioConfig) -> Result<Waveform> {
    let mut w = load_pcm(path)?;
    w.source_id = source_id.to_string();
    let mut w = resample(&w, cfg.sample_rate)?;
    if cfg.trim {
        let t = trim_silence(&w, cfg.trim_db)?;
        if t.all_silent {
            log::warn!("{source_id}: clip is entirely silent, kept untrimmed");
        } else {
            w = t.waveform;
        }
    }
    fix_duration(&w, cfg.duration_s)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
    /// Import `<dir>/<source_id>.sgm` instead of computing occlusion maps.
    pub saliency_dir: Option<PathBuf>,
    /// Accept imported maps whose spectrogram digest differs.
    pub force_import: bool,
    /// Skip utterances whose outputs match the current digest.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    /// Successful utterances in corpus order.
    pub records: Vec<UtteranceRecord>,
    /// `(source_id, message)` for every failed utterance.
    pub failures: Vec<(String, String)>,
    /// How many records were reused from a previous run.
    pub resumed: usize,
    pub manifest: RunManifest,
}

struct Outcome {
    record: UtteranceRecord,
    method: String,
    resumed: bool,
}

/// Runs the whole corpus. Individual failures are collected rather than
/// aborting the run; zero successes is an error.
pub fn run_pipeline(
    corpus: &[CorpusEntry],
    cfg: &PipelineConfig,
    opts: &RunOptions,
) -> Result<RunSummary> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("corpus lists no utterances".into()));
    }
    for e in corpus {
        check_source_id(&e.source_id)?;
    }
    std::fs::create_dir_all(opts.out_dir.join(AGGREGATE_DIR))?;
    let fb = mel_filterbank(&cfg.spectro)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;

    let results: Vec<Result<Outcome>> = pool.install(|| {
        corpus
            .par_iter()
            .map_init(
                || None::<Box<dyn Oracle + Send>>,
                |oracle, entry| process_entry(entry, cfg, opts, &fb, oracle),
            )
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut inputs = Vec::new();
    let mut methods = Vec::new();
    let mut resumed = 0;
    for (entry, res) in corpus.iter().zip(results) {
        match res {
            Ok(o) => {
                resumed += o.resumed as usize;
                if !methods.contains(&o.method) {
                    methods.push(o.method);
                }
                inputs.push((entry.source_id.clone(), sha256_file(&entry.wav)?));
                records.push(o.record);
            }
            Err(e) => {
                log::warn!("{}: {e}", entry.source_id);
                failures.push((entry.source_id.clone(), e.to_string()));
            }
        }
    }

    let agg = opts.out_dir.join(AGGREGATE_DIR);
    let mut errors = String::new();
    for (id, msg) in &failures {
        errors.push_str(&format!("{id}\t{}\n", msg.replace(['\n', '\t'], " ")));
    }
    std::fs::write(agg.join("errors.txt"), errors)?;
    if records.is_empty() {
        return Err(Error::Data(format!(
            "no utterance succeeded ({} failures, see {})",
            failures.len(),
            agg.join("errors.txt").display()
        )));
    }

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        inputs,
    };
    std::fs::write(agg.join("manifest.txt"), manifest.render())?;
    write_aggregate(&records, cfg, &methods.join("+"), &agg)?;

    Ok(RunSummary {
        records,
        failures,
        resumed,
        manifest,
    })
}

fn utterance_digest(
    entry: &CorpusEntry,
    cfg: &PipelineConfig,
    wav_sha: &str,
    saliency_sha: Option<&str>,
) -> String {
    let mut h = Sha256::new();
    h.update(cfg.render().as_bytes());
    h.update(format!(
        "{}\n{}\n{}\n{}\n{}\n",
        entry.source_id,
        entry.true_label,
        entry.predicted.as_deref().unwrap_or("-"),
        wav_sha,
        saliency_sha.unwrap_or("-")
    ));
    hex(&h.finalize())
}

fn process_entry(
    entry: &CorpusEntry,
    cfg: &PipelineConfig,
    opts: &RunOptions,
    fb: &Array2<f64>,
    oracle: &mut Option<Box<dyn Oracle + Send>>,
) -> Result<Outcome> {
    let dir = opts.out_dir.join(&entry.source_id);
    let wav_sha = sha256_file(&entry.wav)?;
    let sal_path = opts
        .saliency_dir
        .as_ref()
        .map(|d| d.join(format!("{}.sgm", entry.source_id)));
    let sal_sha = sal_path.as_ref().map(sha256_file).transpose()?;
    let digest = utterance_digest(entry, cfg, &wav_sha, sal_sha.as_deref());

    if opts.resume {
        match read_utterance(&dir) {
            Ok(info) if info.digest == digest => {
                log::info!("{}: outputs up to date, skipped", entry.source_id);
                return Ok(Outcome {
                    method: info.method.clone(),
                    record: info.record,
                    resumed: true,
                });
            }
            Ok(_) => log::info!("{}: digest changed, recomputing", entry.source_id),
            Err(_) => {}
        }
    }

    let w = preprocess(&entry.wav, &entry.source_id, &cfg.audio)?;
    let spec = log_mel_with(&w, &cfg.spectro, fb)?;
    let (map, predicted) = match &sal_path {
        Some(path) => {
            let mut map = import_map(
                path,
                &ImportOptions {
                    expected_dims: Some(spec.data.dim()),
                    expected_digest: Some(&spec.config.digest()),
                    force: opts.force_import,
                },
            )?;
            map.source_id = entry.source_id.clone();
            let predicted = entry.predicted.clone().unwrap_or_else(|| {
                log::debug!(
                    "{}: no predicted label, using the map's target",
                    entry.source_id
                );
                map.target_label.clone()
            });
            (map, predicted)
        }
        None => compute_saliency(entry, cfg, &spec, oracle)?,
    };

    let geometry = spec.geometry();
    let salient = segment_map(&map, &geometry, w.sample_rate, &cfg.segmentation)?;
    if salient.short_selection {
        log::warn!(
            "{}: only {} of {} segments fit",
            entry.source_id,
            salient.segments.len(),
            cfg.segmentation.k
        );
    }
    let seed = derive_seed(cfg.seed, &entry.source_id);
    let window = cfg
        .segmentation
        .window_frames(w.sample_rate, cfg.spectro.hop_length)?;
    let random = random_segments(window, cfg.segmentation.k, seed, &geometry)?;
    if random.overlap_fallback {
        log::warn!("{}: random segments had to overlap", entry.source_id);
    }

    let salient_cues = extract_cues(&w, CueRegions::Segments(&salient.segments), &cfg.cues)?;
    let full_cues = extract_cues(&w, CueRegions::FullClip, &cfg.cues)?;
    let random_cues = extract_cues(&w, CueRegions::Segments(&random.segments), &cfg.cues)?;

    std::fs::create_dir_all(&dir)?;
    let method = map.method.to_string();
    write_sgm1(&spec, dir.join("spec.sgm"))?;
    export_map(&map, dir.join(format!("sal.{method}.sgm")))?;
    write_seg1(&salient.segments, dir.join("segs.seg"))?;
    write_seg1(&random.segments, dir.join("random.seg"))?;
    write_cue1(&salient_cues, dir.join("cues.cue"))?;
    write_cue1(&full_cues, dir.join("cues.full.cue"))?;
    write_cue1(&random_cues, dir.join("cues.random.cue"))?;

    let record = UtteranceRecord {
        source_id: entry.source_id.clone(),
        true_label: entry.true_label.clone(),
        predicted_label: predicted,
        salient: salient_cues.aggregate,
        full_clip: full_cues.aggregate.mean,
        random: random_cues.aggregate,
        seed,
    };
    let info = UtteranceInfo {
        record,
        target_label: map.target_label.clone(),
        method,
        run_seed: cfg.seed,
        wav_sha256: wav_sha,
        digest,
    };
    // Written last so an interrupted utterance never looks complete.
    std::fs::write(dir.join(UTTERANCE_FILE), info.render())?;
    Ok(Outcome {
        method: info.method,
        record: info.record,
        resumed: false,
    })
}

fn compute_saliency(
    entry: &CorpusEntry,
    cfg: &PipelineConfig,
    spec: &crate::spectrogram::LogMelSpectrogram,
    slot: &mut Option<Box<dyn Oracle + Send>>,
) -> Result<(SaliencyMap, String)> {
    if slot.is_none() {
        *slot = Some(cfg.oracle.open(&cfg.labels, cfg.oracle_timeout())?);
    }
    let oracle = slot.as_mut().expect("oracle opened above");
    if let Some(dims) = oracle.input_dims() {
        if dims != spec.data.dim() {
            return Err(Error::Shape {
                expected: dims,
                got: spec.data.dim(),
            });
        }
    }
    let predicted = match &entry.predicted {
        Some(p) => p.clone(),
        None => {
            let probs = oracle.predict(&spec.data)?;
            oracle.labels()[probs.argmax()].clone()
        }
    };
    let target = match &cfg.target {
        TargetPolicy::Predicted => predicted.clone(),
        TargetPolicy::True => entry.true_label.clone(),
        TargetPolicy::Label(l) => l.clone(),
    };
    let map = occlusion_map(spec, oracle.as_mut(), &target, &cfg.occlusion)?;
    Ok((map, predicted))
}

/// Contents of `utterance.txt` together with the cue files beside it.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceInfo {
    pub record: UtteranceRecord,
    pub target_label: String,
    pub method: String,
    pub run_seed: u64,
    pub wav_sha256: String,
    pub digest: String,
}

impl UtteranceInfo {
    fn render(&self) -> String {
        let r = &self.record;
        format!(
            "source_id = {}\ntrue_label = {}\npredicted_label = {}\ntarget_label = {}\nmethod = {}\n\
             seed = {}\nrun_seed = {}\nwav_sha256 = {}\ndigest = {}\n",
            r.source_id,
            r.true_label,
            r.predicted_label,
            self.target_label,
            self.method,
            r.seed,
            self.run_seed,
            self.wav_sha256,
            self.digest
        )
    }
}

/// Reads one utterance directory written by [`run_pipeline`].
pub fn read_utterance(dir: impl AsRef<Path>) -> Result<UtteranceInfo> {
    let dir = dir.as_ref();
    let path = dir.join(UTTERANCE_FILE);
    let text = std::fs::read_to_string(&path)?;
    let mut kv = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
            path: path.clone(),
            line: i + 1,
            msg: "expected key = value".into(),
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .cloned()
            .ok_or_else(|| Error::MissingKeys(vec![k.to_string()]))
    };
    let num = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("{}: {k} is not an integer", path.display())))
    };

    let salient = read_cue1(dir.join("cues.cue"))?;
    let full = read_cue1(dir.join("cues.full.cue"))?;
    let random = read_cue1(dir.join("cues.random.cue"))?;
    if !full.rows.iter().all(|(k, _)| *k == CueRowKind::FullClip) {
        return Err(Error::Format(format!(
            "{}: cues.full.cue has segment rows",
            dir.display()
        )));
    }
    let source_id = get("source_id")?;
    for set in [&salient, &full, &random] {
        if set.source_id != source_id {
            return Err(Error::Data(format!(
                "{}: cue file for {:?} in the directory of {source_id:?}",
                dir.display(),
                set.source_id
            )));
        }
    }
    Ok(UtteranceInfo {
        record: UtteranceRecord {
            source_id,
            true_label: get("true_label")?,
            predicted_label: get("predicted_label")?,
            salient: salient.aggregate,
            full_clip: full.aggregate.mean,
            random: random.aggregate,
            seed: num("seed")?,
        },
        target_label: get("target_label")?,
        method: get("method")?,
        run_seed: num("run_seed")?,
        wav_sha256: get("wav_sha256")?,
        digest: get("digest")?,
    })
}

/// Every utterance directory under a run directory, sorted by source id.
pub fn load_records(run_dir: impl AsRef<Path>) -> Result<Vec<UtteranceInfo>> {
    let run_dir = run_dir.as_ref();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(run_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join(UTTERANCE_FILE).is_file())
        .collect();
    dirs.sort();
    let infos = dirs
        .iter()
        .map(read_utterance)
        .collect::<Result<Vec<_>>>()?;
    if infos.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no utterance records under {}",
            run_dir.display()
        )));
    }
    Ok(infos)
}

/// Statistics rows for every split and cue source.
pub fn stats_rows(
    records: &[UtteranceRecord],
    cfg: &PipelineConfig,
    method: &str,
) -> Vec<StatsRow> {
    let mut rows = Vec::new();
    for split in [Split::Correct, Split::Incorrect, Split::All] {
        for (source, name) in [
            (CueSource::Salient, method),
            (CueSource::FullClip, "full"),
            (CueSource::Random, "random"),
        ] {
            for stats in aggregate_emotion_stats(records, split, cfg.group_by, source, &cfg.labels)
            {
                rows.push(StatsRow {
                    split,
                    method: name.to_string(),
                    stats,
                });
            }
        }
    }
    rows
}

/// Writes the statistics, delta and plausibility tables into `dir`.
pub fn write_aggregate(
    records: &[UtteranceRecord],
    cfg: &PipelineConfig,
    method: &str,
    dir: &Path,
) -> Result<()> {
    let rows = stats_rows(records, cfg, method);
    write_stats1(&rows, dir.join("stats.tsv"))?;
    std::fs::write(
        dir.join("stats.md"),
        render_stats_table(&rows, TableFormat::Markdown, &cfg.labels, false),
    )?;
    for baseline in [Baseline::FullClip, Baseline::RandomRegions] {
        let signs = delta_sign_test(
            &validation_records(records, baseline, &cfg.labels),
            &cfg.labels,
        );
        let name = baseline.to_string();
        for (fmt, ext) in [(TableFormat::Csv, "csv"), (TableFormat::Markdown, "md")] {
            std::fs::write(
                dir.join(format!("delta_{name}.{ext}")),
                render_delta_table(&signs, &name, fmt),
            )?;
        }
    }
    let plaus = plausibility_report(records, cfg.group_by, &cfg.labels, cfg.order_margin);
    std::fs::write(dir.join("plausibility.md"), render_plausibility(&plaus))?;
    Ok(())
}

/// Checks that every corpus file still has the digest recorded in a manifest.
pub fn verify_inputs(manifest: &RunManifest, corpus: &[CorpusEntry]) -> Result<()> {
    let recorded: BTreeMap<&str, &str> = manifest
        .inputs
        .iter()
        .map(|(id, d)| (id.as_str(), d.as_str()))
        .collect();
    for e in corpus {
        if let Some(expected) = recorded.get(e.source_id.as_str()) {
            let found = sha256_file(&e.wav)?;
            if found != *expected {
                return Err(Error::Data(format!(
                    "{}: input digest {found} differs from manifest {expected}",
                    e.source_id
                )));
            }
        }
    }
    Ok(())
}
