use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Subcommand};

use cuelens::config::RunManifest;
use cuelens::cues::{extract_cues, render_cue1, CueRegions};
use cuelens::formats::{read_sgm1, render_sgm1};
use cuelens::oracle::OracleSpec;
use cuelens::pipeline::{
    load_corpus, load_records, preprocess, run_pipeline, stats_rows, verify_inputs, RunOptions,
};
use cuelens::report::{
    read_stats1, render_delta_table, render_plausibility, render_stats1, render_stats_table,
    TableFormat,
};
use cuelens::saliency::{import_map, occlusion_map, render_map, ImportOptions};
use cuelens::segmentation::{random_segments, read_seg1, render_seg1, segment_map, OverlapPolicy};
use cuelens::spectrogram::{log_mel, FrameGeometry};
use cuelens::synth::{synth_corpus, SynthDesign};
use cuelens::validation::{
    delta_sign_test, plausibility_report, read_lab1, validation_records, Baseline, UtteranceRecord,
};
use cuelens::{LogMelSpectrogram, PipelineConfig, TargetPolicy};

use crate::{emit, Global};

#[derive(Args, Debug)]
pub struct SpectrogramArgs {
    wav: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn spectrogram(cfg: PipelineConfig, a: SpectrogramArgs) -> Result<()> {
    let spec = spec_from_wav(&cfg, &a.wav)?;
    emit(a.out.as_deref(), &render_sgm1(&spec)?)
}

fn source_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

fn spec_from_wav(cfg: &PipelineConfig, wav: &Path) -> Result<LogMelSpectrogram> {
    let w = preprocess(wav, &source_id(wav), &cfg.audio)
        .with_context(|| format!("loading {}", wav.display()))?;
    Ok(log_mel(&w, &cfg.spectro)?)
}

/// Reads an SGM1 file when the extension says so, otherwise treats the
/// input as audio.
fn load_spec(cfg: &PipelineConfig, input: &Path) -> Result<LogMelSpectrogram> {
    if input.extension().is_some_and(|e| e == "sgm") {
        read_sgm1(input, &cfg.spectro).with_context(|| format!("reading {}", input.display()))
    } else {
        spec_from_wav(cfg, input)
    }
}

#[derive(Args, Debug)]
#[command(args_conflicts_with_subcommands = true)]
pub struct SaliencyArgs {
    #[command(subcommand)]
    sub: Option<SaliencySub>,

    /// Wav file or SGM1 spectrogram.
    input: Option<PathBuf>,
    /// `builtin:energy[:thr[:loud:quiet]]`, `builtin:linear:<file>`,
    /// `builtin:uniform`, `exec:<cmd>` or `tcp:<host:port>`.
    #[arg(long)]
    oracle: Option<String>,
    /// Label to explain; defaults to the `occlusion.target` policy.
    #[arg(long)]
    target: Option<String>,
    #[arg(long = "occ-window")]
    occ_window: Option<usize>,
    #[arg(long = "occ-stride")]
    occ_stride: Option<usize>,
    /// `mean`, `floor` or `fixed:<value>`.
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum SaliencySub {
    /// Check an SGM1-S file against the current spectrogram geometry.
    Import {
        file: PathBuf,
        /// Spectrogram (SGM1) or wav the map must match in size.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Accept a spectrogram digest mismatch.
        #[arg(long)]
        force: bool,
        /// Re-export the validated map here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn saliency(mut cfg: PipelineConfig, a: SaliencyArgs) -> Result<()> {
    if let Some(SaliencySub::Import {
        file,
        spec,
        force,
        out,
    }) = a.sub
    {
        let dims = match &spec {
            Some(p) => Some(load_spec(&cfg, p)?.data.dim()),
            None => None,
        };
        let digest = cfg.spectro.digest();
        let map = import_map(
            &file,
            &ImportOptions {
                expected_dims: dims,
                expected_digest: Some(&digest),
                force,
            },
        )
        .with_context(|| format!("importing {}", file.display()))?;
        let (h, w) = map.data.dim();
        eprintln!(
            "{}: {h}x{w} {} map for {:?}, digest {}",
            file.display(),
            map.method,
            map.target_label,
            map.spectro_digest
        );
        if let Some(out) = out {
            emit(Some(&out), &render_map(&map)?)?;
        }
        return Ok(());
    }
    let input = a.input.context("saliency needs an input file")?;
    if let Some(o) = &a.oracle {
        cfg.oracle = o.parse()?;
    }
    if let Some(v) = a.occ_window {
        cfg.occlusion.window_frames = v;
    }
    if let Some(v) = a.occ_stride {
        cfg.occlusion.stride_frames = v;
    }
    if let Some(m) = &a.mask {
        cfg.occlusion.mask = m.parse()?;
    }
    let spec = load_spec(&cfg, &input)?;
    let mut oracle = cfg
        .oracle
        .open(&cfg.labels, cfg.oracle_timeout())
        .with_context(|| format!("opening oracle {}", cfg.oracle))?;
    let target = match (a.target, &cfg.target) {
        (Some(t), _) => t,
        (None, TargetPolicy::Label(l)) => l.clone(),
        (None, TargetPolicy::Predicted) => {
            let probs = oracle.predict(&spec.data)?;
            oracle.labels()[probs.argmax()].clone()
        }
        (None, TargetPolicy::True) => {
            bail!("the `true` target policy needs --target for a single file")
        }
    };
    let map = occlusion_map(&spec, oracle.as_mut(), &target, &cfg.occlusion)?;
    emit(a.out.as_deref(), &render_map(&map)?)
}

#[derive(Args, Debug)]
#[command(args_conflicts_with_subcommands = true)]
pub struct SegmentArgs {
    #[command(subcommand)]
    sub: Option<SegmentSub>,

    /// SGM1-S saliency map.
    map: Option<PathBuf>,
    #[command(flatten)]
    shape: SegmentShape,
    /// Slide stride in frames.
    #[arg(long)]
    stride: Option<usize>,
    /// `non_overlapping` or `free`.
    #[arg(long)]
    overlap: Option<OverlapPolicy>,
    /// Rank windows by absolute relevance.
    #[arg(long)]
    abs: bool,
    /// Accept a map computed under a different spectrogram configuration.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SegmentShape {
    /// Segment duration in seconds.
    #[arg(long, global = true)]
    dur: Option<f64>,
    #[arg(long, global = true)]
    k: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum SegmentSub {
    /// Draw duration-matched random segments.
    Random {
        /// Spectrogram width in frames; defaults to the configured clip length.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn frames_geometry(cfg: &PipelineConfig, n_frames: usize) -> Result<FrameGeometry> {
    if n_frames == 0 {
        bail!("spectrogram width must be positive");
    }
    Ok(FrameGeometry {
        hop_length: cfg.spectro.hop_length,
        win_length: cfg.spectro.win_length,
        n_frames,
        n_samples: (n_frames - 1) * cfg.spectro.hop_length + cfg.spectro.win_length,
    })
}

pub fn segment(mut cfg: PipelineConfig, a: SegmentArgs) -> Result<()> {
    if let Some(d) = a.shape.dur {
        cfg.segmentation.segment_duration_s = d;
    }
    if let Some(k) = a.shape.k {
        cfg.segmentation.k = k;
    }
    let sr = cfg.audio.sample_rate;
    if let Some(SegmentSub::Random { frames, seed, out }) = a.sub {
        let n_frames = match frames {
            Some(f) => f,
            None => {
                let n = (cfg.audio.duration_s * sr as f64).round() as usize;
                cfg.spectro.n_frames(n)
            }
        };
        let geometry = frames_geometry(&cfg, n_frames)?;
        let window = cfg.segmentation.window_frames(sr, cfg.spectro.hop_length)?;
        let sel = random_segments(
            window,
            cfg.segmentation.k,
            seed.unwrap_or(cfg.seed),
            &geometry,
        )?;
        if sel.overlap_fallback {
            log::warn!("random segments had to overlap");
        }
        return emit(out.as_deref(), &render_seg1(&sel.segments));
    }
    let path = a.map.context("segment needs an SGM1-S map")?;
    if let Some(s) = a.stride {
        cfg.segmentation.slide_stride_frames = s;
    }
    if let Some(o) = a.overlap {
        cfg.segmentation.overlap = o;
    }
    if a.abs {
        cfg.segmentation.use_abs = true;
    }
    let digest = cfg.spectro.digest();
    let map = import_map(
        &path,
        &ImportOptions {
            expected_dims: None,
            expected_digest: Some(&digest),
            force: a.force,
        },
    )
    .with_context(|| format!("importing {}", path.display()))?;
    let geometry = frames_geometry(&cfg, map.data.ncols())?;
    let sel = segment_map(&map, &geometry, sr, &cfg.segmentation)?;
    if sel.short_selection {
        log::warn!(
            "only {} of {} segments fit",
            sel.segments.len(),
            cfg.segmentation.k
        );
    }
    emit(a.out.as_deref(), &render_seg1(&sel.segments))
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("region").required(true).args(["segments", "full_clip"])))]
pub struct CuesArgs {
    wav: PathBuf,
    /// SEG1 file listing the regions to measure.
    #[arg(long)]
    segments: Option<PathBuf>,
    /// Measure the whole clip.
    #[arg(long)]
    full_clip: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn cues(cfg: PipelineConfig, a: CuesArgs) -> Result<()> {
    let w = preprocess(&a.wav, &source_id(&a.wav), &cfg.audio)
        .with_context(|| format!("loading {}", a.wav.display()))?;
    let set = match &a.segments {
        Some(p) => {
            let segs = read_seg1(p).with_context(|| format!("reading {}", p.display()))?;
            extract_cues(&w, CueRegions::Segments(&segs), &cfg.cues)?
        }
        None => extract_cues(&w, CueRegions::FullClip, &cfg.cues)?,
    };
    emit(a.out.as_deref(), &render_cue1(&set)?)
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Output directory of a `run`.
    #[arg(long)]
    records: PathBuf,
    /// LAB1 file overriding the recorded labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value = "random")]
    baseline: Baseline,
    /// Refuse records produced under a different top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "md")]
    format: TableFormat,
    /// Also write per-emotion statistics (STATS1) here.
    #[arg(long)]
    stats_out: Option<PathBuf>,
    /// Also write the plausibility report here.
    #[arg(long)]
    plausibility: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn validate(cfg: PipelineConfig, a: ValidateArgs) -> Result<()> {
    let infos = load_records(&a.records)?;
    if let Some(seed) = a.seed {
        if let Some(bad) = infos.iter().find(|i| i.run_seed != seed) {
            bail!(
                "{} was produced with seed {}, not {seed}; re-run the pipeline to change the random baseline",
                bad.record.source_id,
                bad.run_seed
            );
        }
    }
    let mut records: Vec<UtteranceRecord> = infos.iter().map(|i| i.record.clone()).collect();
    if let Some(lab) = &a.labels {
        let entries: BTreeMap<String, _> = read_lab1(lab)?
            .into_iter()
            .map(|e| (e.source_id.clone(), e))
            .collect();
        for r in &mut records {
            match entries.get(&r.source_id) {
                Some(e) => {
                    r.true_label = e.true_label.clone();
                    if let Some(p) = &e.predicted {
                        r.predicted_label = p.clone();
                    }
                }
                None => log::warn!("{} is not listed in {}", r.source_id, lab.display()),
            }
        }
    }
    let signs = delta_sign_test(
        &validation_records(&records, a.baseline, &cfg.labels),
        &cfg.labels,
    );
    if signs.is_empty() {
        bail!("no record has a label with an arousal class");
    }
    if let Some(p) = &a.stats_out {
        let method = infos
            .first()
            .map(|i| i.method.as_str())
            .unwrap_or("salient");
        emit(Some(p), &render_stats1(&stats_rows(&records, &cfg, method)))?;
    }
    if let Some(p) = &a.plausibility {
        let rep = plausibility_report(&records, cfg.group_by, &cfg.labels, cfg.order_margin);
        emit(Some(p), &render_plausibility(&rep))?;
    }
    emit(
        a.out.as_deref(),
        &render_delta_table(&signs, &a.baseline.to_string(), a.format),
    )
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// STATS1 file, e.g. `aggregate/stats.tsv` of a run.
    #[arg(long)]
    stats: PathBuf,
    #[arg(long, default_value = "md")]
    format: TableFormat,
    /// Show shrillness in units of 1e-2 and jitter in units of 1e-4.
    #[arg(long = "paper-scaling")]
    scaled: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn report(cfg: PipelineConfig, a: ReportArgs) -> Result<()> {
    let rows = read_stats1(&a.stats).with_context(|| format!("reading {}", a.stats.display()))?;
    if rows.is_empty() {
        bail!("{} holds no statistics", a.stats.display());
    }
    emit(
        a.out.as_deref(),
        &render_stats_table(&rows, a.format, &cfg.labels, a.scaled),
    )
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// LAB1 corpus listing.
    #[arg(long)]
    labels: PathBuf,
    /// Directory holding `<source_id>.wav`; defaults to `wav/` beside the
    /// label file, or the label file's directory.
    #[arg(long)]
    audio_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Import `<dir>/<source_id>.sgm` maps instead of running the oracle.
    #[arg(long)]
    saliency_dir: Option<PathBuf>,
    #[arg(long)]
    force_import: bool,
    /// Skip utterances whose outputs are already up to date.
    #[arg(long)]
    resume: bool,
    /// Reproduce a previous run from its manifest.
    #[arg(long, conflicts_with = "oracle")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    oracle: Option<String>,
}

pub fn run(g: &Global, a: RunArgs) -> Result<()> {
    let audio_dir = a.audio_dir.clone().unwrap_or_else(|| {
        let base = a.labels.parent().map(Path::to_path_buf).unwrap_or_default();
        let wav = base.join("wav");
        if wav.is_dir() {
            wav
        } else {
            base
        }
    });
    let corpus = load_corpus(&a.labels, &audio_dir)
        .with_context(|| format!("reading {}", a.labels.display()))?;
    let cfg = match &a.manifest {
        Some(path) => {
            if g.overrides_config() {
                bail!("--manifest fixes the whole configuration; drop the other configuration options");
            }
            let m =
                RunManifest::read(path).with_context(|| format!("reading {}", path.display()))?;
            verify_inputs(&m, &corpus)?;
            m.config
        }
        None => {
            let mut cfg = g.resolve()?;
            if let Some(o) = &a.oracle {
                cfg.oracle = o.parse::<OracleSpec>()?;
            }
            cfg
        }
    };
    let opts = RunOptions {
        out_dir: a.out.clone(),
        jobs: a.jobs,
        saliency_dir: a.saliency_dir,
        force_import: a.force_import,
        resume: a.resume,
    };
    let summary = run_pipeline(&corpus, &cfg, &opts)?;
    if !summary.failures.is_empty() {
        log::warn!(
            "{} utterances failed, listed in {}",
            summary.failures.len(),
            a.out.join("aggregate/errors.txt").display()
        );
    }
    eprintln!(
        "{} utterances processed ({} up to date), {} failed; tables in {}",
        summary.records.len(),
        summary.resumed,
        summary.failures.len(),
        a.out.join("aggregate").display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Clips per arousal class.
    #[arg(long = "n-high", default_value_t = 20)]
    n_high: usize,
    #[arg(long = "n-low", default_value_t = 20)]
    n_low: usize,
}

pub fn synth(cfg: PipelineConfig, a: SynthArgs) -> Result<()> {
    let design = SynthDesign {
        sample_rate: cfg.audio.sample_rate,
        duration_s: cfg.audio.duration_s,
        n_high: a.n_high,
        n_low: a.n_low,
        ..SynthDesign::default()
    };
    let n = (design.duration_s * design.sample_rate as f64).round() as usize;
    let geometry = FrameGeometry::for_samples(&cfg.spectro, n);
    let out = synth_corpus(&design, a.seed.unwrap_or(cfg.seed), &a.out, &geometry)?;
    eprintln!(
        "{} clips in {}, labels in {}, planted bursts in {}",
        out.clips.len(),
        out.wav_dir.display(),
        out.labels_path.display(),
        out.truth_dir.display()
    );
    Ok(())
}
