//! Human- and machine-readable tables of per-emotion cue statistics,
//! validation deltas and plausibility flags.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::cues::CUE_NAMES;
use crate::error::{Error, Result};
use crate::formats::{fmt_f64, parse_f64};
use crate::oracle::{Arousal, EmotionLabelSet};
use crate::validation::{
    expected_sign, EmotionStats, PlausibilityReport, SignTestRow, Split, SHRILL_INDEX,
};

const CUE_HEADERS: [&str; 6] = [
    "Loudness [sones]",
    "Shrill. [dB/kHz]",
    "Jitter [ratio]",
    "Shimmer [dB]",
    "F0 [st]",
    "HNR [dB]",
];

/// Display scaling for jitter and shrillness: the shown numbers are in units
/// of 1e-4 and 1e-2 respectively.
const DISPLAY_SCALE: [f64; 6] = [1.0, 1e2, 1e4, 1.0, 1.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" | "markdown" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            other => Err(Error::InvalidArgument(format!(
                "unknown table format {other:?}"
            ))),
        }
    }
}

/// Per-emotion statistics of one method (or baseline) on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub split: Split,
    pub method: String,
    pub stats: EmotionStats,
}

/// Formats to `sig` significant digits, in fixed notation for moderate
/// magnitudes and scientific otherwise.
pub fn fmt_sig(v: f64, sig: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-3..6).contains(&exp) {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{:.*e}", sig.saturating_sub(1), v)
    }
}

fn scale(scaled: bool, cue: usize) -> f64 {
    if scaled {
        DISPLAY_SCALE[cue]
    } else {
        1.0
    }
}

fn header(cue: usize, scaled: bool) -> String {
    match (scaled, cue) {
        (true, 1) => "Shrill. [dB/kHz, x1e-2]".to_string(),
        (true, 2) => "Jitter [ratio, x1e-4]".to_string(),
        _ => CUE_HEADERS[cue].to_string(),
    }
}

/// Index of the row holding the strongest value of `cue`, if unique.
fn best_row(means: &[f64], arousal: Arousal, cue: usize) -> Option<usize> {
    if means.len() < 2 {
        return None;
    }
    let prefer_larger = expected_sign(arousal, cue) > 0.0;
    let mut best = 0;
    for (i, &m) in means.iter().enumerate().skip(1) {
        if (prefer_larger && m > means[best]) || (!prefer_larger && m < means[best]) {
            best = i;
        }
    }
    let ties = means.iter().filter(|&&m| m == means[best]).count();
    (ties == 1).then_some(best)
}

fn splits_in(rows: &[StatsRow]) -> Vec<Split> {
    let mut out = Vec::new();
    for r in rows {
        if !out.contains(&r.split) {
            out.push(r.split);
        }
    }
    out
}

fn emotions_in<'a>(rows: &[&'a StatsRow]) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for r in rows {
        if !out.contains(&r.stats.emotion.as_str()) {
            out.push(&r.stats.emotion);
        }
    }
    out
}

/// One row per emotion and method, cue columns as `mean ± SD`. In markdown
/// the strongest method per emotion and cue is bolded: the larger value for
/// high-arousal emotions and the smaller for low-arousal ones, reversed for
/// shrillness. Ties and single-method emotions are not marked.
pub fn render_stats_table(
    rows: &[StatsRow],
    format: TableFormat,
    labels: &EmotionLabelSet,
    scaled: bool,
) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("split,emotion,method,count");
            for name in CUE_NAMES {
                let _ = write!(out, ",{name}_mean,{name}_sd");
            }
            out.push('\n');
            for r in rows {
                let _ = write!(
                    out,
                    "{},{},{},{}",
                    r.split, r.stats.emotion, r.method, r.stats.count
                );
                for c in 0..6 {
                    let k = scale(scaled, c);
                    let _ = write!(out, ",{},{}", r.stats.mean[c] * k, r.stats.sd[c] * k);
                }
                out.push('\n');
            }
        }
        TableFormat::Markdown => {
            let splits = splits_in(rows);
            for (si, split) in splits.iter().enumerate() {
                if splits.len() > 1 {
                    if si > 0 {
                        out.push('\n');
                    }
                    let _ = writeln!(out, "### {split} predictions\n");
                }
                out.push_str("| Emotion | Method | n |");
                for c in 0..6 {
                    let _ = write!(out, " {} |", header(c, scaled));
                }
                out.push_str("\n|---|---|---|");
                out.push_str(&"---|".repeat(6));
                out.push('\n');
                let in_split: Vec<&StatsRow> = rows.iter().filter(|r| r.split == *split).collect();
                for emotion in emotions_in(&in_split) {
                    let group: Vec<&StatsRow> = in_split
                        .iter()
                        .copied()
                        .filter(|r| r.stats.emotion == emotion)
                        .collect();
                    let arousal = labels.arousal_of(emotion);
                    let best: Vec<Option<usize>> = (0..6)
                        .map(|c| {
                            let means: Vec<f64> = group.iter().map(|r| r.stats.mean[c]).collect();
                            arousal.and_then(|a| best_row(&means, a, c))
                        })
                        .collect();
                    for (i, r) in group.iter().enumerate() {
                        let _ = write!(out, "| {} | {} | {} |", emotion, r.method, r.stats.count);
                        for c in 0..6 {
                            let k = scale(scaled, c);
                            let cell = format!(
                                "{} ± {}",
                                fmt_sig(r.stats.mean[c] * k, 4),
                                fmt_sig(r.stats.sd[c] * k, 4)
                            );
                            if best[c] == Some(i) {
                                let _ = write!(out, " **{cell}** |");
                            } else {
                                let _ = write!(out, " {cell} |");
                            }
                        }
                        out.push('\n');
                    }
                }
            }
        }
    }
    out
}

/// Mean delta per emotion and cue. Markdown marks a delta with `*` when its
/// sign is the one expected for the emotion's arousal class and shows the
/// fraction of utterances with the expected sign in parentheses.
pub fn render_delta_table(
    rows: &[SignTestRow],
    baseline_name: &str,
    format: TableFormat,
) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("emotion,arousal,count");
            for name in CUE_NAMES {
                let _ = write!(out, ",delta_{name}");
            }
            for name in CUE_NAMES {
                let _ = write!(out, ",match_{name}");
            }
            out.push('\n');
            for r in rows {
                let _ = write!(out, "{},{},{}", r.emotion, r.arousal, r.count);
                for d in r.mean_delta {
                    let _ = write!(out, ",{d}");
                }
                for m in r.matching {
                    let _ = write!(out, ",{m}");
                }
                out.push('\n');
            }
        }
        TableFormat::Markdown => {
            let _ = writeln!(out, "Salient regions vs {baseline_name} baseline\n");
            out.push_str("| Emotion | Arousal | n |");
            for c in 0..6 {
                let _ = write!(out, " Δ{} |", CUE_HEADERS[c]);
            }
            out.push_str("\n|---|---|---|");
            out.push_str(&"---|".repeat(6));
            out.push('\n');
            for r in rows {
                let _ = write!(out, "| {} | {} | {} |", r.emotion, r.arousal, r.count);
                for c in 0..6 {
                    let d = r.mean_delta[c];
                    let mark = if d * expected_sign(r.arousal, c) > 0.0 {
                        "*"
                    } else {
                        ""
                    };
                    let _ = write!(out, " {}{mark} ({:.2}) |", fmt_sig(d, 4), r.matching[c]);
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn render_plausibility(rep: &PlausibilityReport) -> String {
    let mut out = String::from("# Plausibility\n\n");
    for note in &rep.notes {
        let _ = writeln!(out, "Note: {note}");
    }
    if rep.contradictions.is_empty() {
        out.push_str("No contradictions between correct and incorrect predictions.\n");
        return out;
    }
    out.push_str("| Cue | High | Low | Correct (high / low) | Incorrect (high / low) |\n|---|---|---|---|---|\n");
    for c in &rep.contradictions {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} / {} | {} / {} CONTRADICTION |",
            c.cue,
            c.high_emotion,
            c.low_emotion,
            fmt_sig(c.correct.0, 4),
            fmt_sig(c.correct.1, 4),
            fmt_sig(c.incorrect.0, 4),
            fmt_sig(c.incorrect.1, 4)
        );
    }
    if rep
        .contradictions
        .iter()
        .any(|c| CUE_NAMES.iter().position(|n| *n == c.cue) == Some(SHRILL_INDEX))
    {
        out.push_str("\nShrillness is a spectral slope: more negative means stronger.\n");
    }
    out
}

/// STATS1: tab-separated `split method emotion count` followed by mean and
/// SD for each cue, after a `#` column comment.
pub fn render_stats1(rows: &[StatsRow]) -> String {
    let mut out = String::from("#split\tmethod\temotion\tcount");
    for name in CUE_NAMES {
        let _ = write!(out, "\t{name}_mean\t{name}_sd");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}",
            r.split, r.method, r.stats.emotion, r.stats.count
        );
        for c in 0..6 {
            let _ = write!(
                out,
                "\t{}\t{}",
                fmt_f64(r.stats.mean[c]),
                fmt_f64(r.stats.sd[c])
            );
        }
        out.push('\n');
    }
    out
}

pub fn write_stats1(rows: &[StatsRow], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_stats1(rows))?;
    Ok(())
}

pub fn parse_stats1(text: &str) -> Result<Vec<StatsRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split('\t').collect();
        if toks.len() != 16 {
            return Err(Error::Format(format!(
                "STATS1 line {}: expected 16 fields, got {}",
                i + 1,
                toks.len()
            )));
        }
        let count = toks[3]
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("STATS1 line {}: bad count", i + 1)))?;
        let mut mean = [0.0; 6];
        let mut sd = [0.0; 6];
        for c in 0..6 {
            mean[c] = parse_f64(toks[4 + 2 * c])?;
            sd[c] = parse_f64(toks[5 + 2 * c])?;
        }
        rows.push(StatsRow {
            split: toks[0].parse()?,
            method: toks[1].to_string(),
            stats: EmotionStats {
                emotion: toks[2].to_string(),
                count,
                mean,
                sd,
            },
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("stats file has no rows".into()));
    }
    Ok(rows)
}

pub fn read_stats1(path: impl AsRef<Path>) -> Result<Vec<StatsRow>> {
    parse_stats1(&std::fs::read_to_string(path)?)
}
