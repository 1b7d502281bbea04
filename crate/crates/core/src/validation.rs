//! Cue-level validation of salient regions against baselines, plus the
//! correct/incorrect plausibility comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cues::{CueAggregate, CueVector, CUE_NAMES};
use crate::error::{Error, Result};
use crate::formats::check_token;
use crate::oracle::{Arousal, EmotionLabelSet};

/// Index of the shrillness slope within the six cues. Its expected sign is
/// inverted: a more negative slope is the stronger cue.
pub const SHRILL_INDEX: usize = 1;

/// Relative margin below which two means count as equal when checking an
/// expected ordering.
pub const DEFAULT_ORDER_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub source_id: String,
    pub true_label: String,
    pub predicted_label: String,
    pub salient: CueAggregate,
    pub full_clip: CueVector,
    pub random: CueAggregate,
    pub seed: u64,
}

impl UtteranceRecord {
    pub fn correct(&self) -> bool {
        self.true_label == self.predicted_label
    }

    pub fn cues(&self, source: CueSource) -> &CueVector {
        match source {
            CueSource::Salient => &self.salient.mean,
            CueSource::FullClip => &self.full_clip,
            CueSource::Random => &self.random.mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Baseline {
    FullClip,
    RandomRegions,
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::FullClip => "full",
            Baseline::RandomRegions => "random",
        })
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full_clip" => Ok(Baseline::FullClip),
            "random" | "random_regions" => Ok(Baseline::RandomRegions),
            other => Err(Error::InvalidArgument(format!(
                "unknown baseline {other:?}"
            ))),
        }
    }
}

/// Which cue block of a record to aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CueSource {
    Salient,
    FullClip,
    Random,
}

impl From<Baseline> for CueSource {
    fn from(b: Baseline) -> Self {
        match b {
            Baseline::FullClip => CueSource::FullClip,
            Baseline::RandomRegions => CueSource::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRecord {
    pub source_id: String,
    pub baseline: Baseline,
    pub delta: [f64; 6],
    pub emotion: String,
    pub arousal: Arousal,
}

/// Salient mean minus baseline mean, cue by cue.
pub fn delta_f(salient: &CueVector, baseline: &CueVector) -> [f64; 6] {
    let (s, b) = (salient.values(), baseline.values());
    std::array::from_fn(|i| s[i] - b[i])
}

/// One record per utterance whose true label has an arousal class.
pub fn validation_records(
    records: &[UtteranceRecord],
    baseline: Baseline,
    labels: &EmotionLabelSet,
) -> Vec<ValidationRecord> {
    records
        .iter()
        .filter_map(|r| {
            let Some(arousal) = labels.arousal_of(&r.true_label) else {
                log::warn!(
                    "{}: label {:?} has no arousal class, skipped",
                    r.source_id,
                    r.true_label
                );
                return None;
            };
            Some(ValidationRecord {
                source_id: r.source_id.clone(),
                baseline,
                delta: delta_f(&r.salient.mean, r.cues(baseline.into())),
                emotion: r.true_label.clone(),
                arousal,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Correct,
    Incorrect,
    All,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Correct => "correct",
            Split::Incorrect => "incorrect",
            Split::All => "all",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correct" => Ok(Split::Correct),
            "incorrect" => Ok(Split::Incorrect),
            "all" => Ok(Split::All),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GroupBy {
    #[default]
    True,
    Predicted,
}

impl FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(GroupBy::True),
            "predicted" => Ok(GroupBy::Predicted),
            other => Err(Error::InvalidArgument(format!(
                "unknown grouping {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmotionStats {
    pub emotion: String,
    pub count: usize,
    pub mean: [f64; 6],
    /// Population SD.
    pub sd: [f64; 6],
}

/// Orders emotions by label-set position, unknown labels last by name.
fn emotion_order(labels: &EmotionLabelSet, name: &str) -> (usize, String) {
    (
        labels.index_of(name).unwrap_or(usize::MAX),
        name.to_string(),
    )
}

/// Mean and population SD of each cue per emotion.
///
/// Records within a group are summed in source-id order, so the result does
/// not depend on input order.
pub fn aggregate_emotion_stats(
    records: &[UtteranceRecord],
    split: Split,
    group_by: GroupBy,
    source: CueSource,
    labels: &EmotionLabelSet,
) -> Vec<EmotionStats> {
    let mut groups: BTreeMap<(usize, String), Vec<&UtteranceRecord>> = BTreeMap::new();
    for r in records {
        let keep = match split {
            Split::Correct => r.correct(),
            Split::Incorrect => !r.correct(),
            Split::All => true,
        };
        if keep {
            let key = match group_by {
                GroupBy::True => &r.true_label,
                GroupBy::Predicted => &r.predicted_label,
            };
            groups
                .entry(emotion_order(labels, key))
                .or_default()
                .push(r);
        }
    }
    for (name, _) in labels.iter() {
        if !groups.keys().any(|(_, n)| n == name) {
            log::debug!("no {split} records for {name}; group omitted");
        }
    }
    groups
        .into_iter()
        .map(|((_, emotion), mut rs)| {
            rs.sort_by(|a, b| a.source_id.cmp(&b.source_id));
            let vals: Vec<[f64; 6]> = rs.iter().map(|r| r.cues(source).values()).collect();
            let (mean, sd) = mean_sd(&vals);
            EmotionStats {
                emotion,
                count: vals.len(),
                mean,
                sd,
            }
        })
        .collect()
}

pub fn mean_sd(vals: &[[f64; 6]]) -> ([f64; 6], [f64; 6]) {
    let n = vals.len() as f64;
    let mut mean = [0.0; 6];
    for v in vals {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 6];
    for v in vals {
        for ((s, x), m) in var.iter_mut().zip(v).zip(mean) {
            *s += (x - m) * (x - m);
        }
    }
    (mean, var.map(|s| (s / n).sqrt()))
}

/// Expected sign of a cue's delta for an arousal class: +1 or -1.
pub fn expected_sign(arousal: Arousal, cue: usize) -> f64 {
    let base = match arousal {
        Arousal::High => 1.0,
        Arousal::Low => -1.0,
    };
    if cue == SHRILL_INDEX {
        -base
    } else {
        base
    }
}

/// Strict check: a zero delta never matches.
pub fn sign_matches(delta: f64, arousal: Arousal, cue: usize) -> bool {
    delta * expected_sign(arousal, cue) > 0.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignTestRow {
    pub emotion: String,
    pub arousal: Arousal,
    pub count: usize,
    /// Fraction of utterances whose delta has the expected sign, per cue.
    pub matching: [f64; 6],
    /// Mean delta per cue.
    pub mean_delta: [f64; 6],
}

/// Per emotion, the fraction of utterances with the expected delta sign.
/// Arousal classes are taken from `labels`, so a flipped label set inverts
/// every outcome.
pub fn delta_sign_test(records: &[ValidationRecord], labels: &EmotionLabelSet) -> Vec<SignTestRow> {
    let mut groups: BTreeMap<(usize, String), Vec<&ValidationRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry(emotion_order(labels, &r.emotion))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .filter_map(|((_, emotion), mut rs)| {
            let arousal = labels.arousal_of(&emotion)?;
            rs.sort_by(|a, b| a.source_id.cmp(&b.source_id));
            let n = rs.len() as f64;
            let matching = std::array::from_fn(|c| {
                rs.iter()
                    .filter(|r| sign_matches(r.delta[c], arousal, c))
                    .count() as f64
                    / n
            });
            let deltas: Vec<[f64; 6]> = rs.iter().map(|r| r.delta).collect();
            Some(SignTestRow {
                emotion,
                arousal,
                count: rs.len(),
                matching,
                mean_delta: mean_sd(&deltas).0,
            })
        })
        .collect()
}

/// Whether `high` and `low` means have the expected order for `cue`: the
/// high-arousal mean must exceed the low-arousal mean (shrillness: fall
/// below it) by more than `margin` times the larger magnitude.
pub fn ordering_holds(high: f64, low: f64, cue: usize, margin: f64) -> bool {
    let gap = if cue == SHRILL_INDEX {
        low - high
    } else {
        high - low
    };
    gap > margin * high.abs().max(low.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contradiction {
    pub cue: &'static str,
    pub high_emotion: String,
    pub low_emotion: String,
    /// (high, low) means in the correct split.
    pub correct: (f64, f64),
    /// (high, low) means in the incorrect split.
    pub incorrect: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlausibilityReport {
    pub correct: Vec<EmotionStats>,
    pub incorrect: Vec<EmotionStats>,
    pub contradictions: Vec<Contradiction>,
    pub notes: Vec<String>,
}

/// Flags every (high, low) emotion pair and cue where the correct split
/// shows the expected ordering and the incorrect split does not.
pub fn plausibility_from_stats(
    correct: Vec<EmotionStats>,
    incorrect: Vec<EmotionStats>,
    labels: &EmotionLabelSet,
    margin: f64,
) -> PlausibilityReport {
    let mut notes = Vec::new();
    if incorrect.is_empty() {
        notes.push("no misclassifications".to_string());
    }
    if correct.is_empty() {
        notes.push("no correct predictions".to_string());
    }
    let find = |set: &[EmotionStats], e: &str| set.iter().find(|s| s.emotion == e).map(|s| s.mean);
    let mut contradictions = Vec::new();
    for (hi, ha) in labels.iter() {
        if ha != Arousal::High {
            continue;
        }
        for (lo, la) in labels.iter() {
            if la != Arousal::Low {
                continue;
            }
            let (Some(ch), Some(cl), Some(ih), Some(il)) = (
                find(&correct, hi),
                find(&correct, lo),
                find(&incorrect, hi),
                find(&incorrect, lo),
            ) else {
                continue;
            };
            for (c, name) in CUE_NAMES.iter().enumerate() {
                if ordering_holds(ch[c], cl[c], c, margin)
                    && !ordering_holds(ih[c], il[c], c, margin)
                {
                    contradictions.push(Contradiction {
                        cue: name,
                        high_emotion: hi.to_string(),
                        low_emotion: lo.to_string(),
                        correct: (ch[c], cl[c]),
                        incorrect: (ih[c], il[c]),
                    });
                }
            }
        }
    }
    PlausibilityReport {
        correct,
        incorrect,
        contradictions,
        notes,
    }
}

pub fn plausibility_report(
    records: &[UtteranceRecord],
    group_by: GroupBy,
    labels: &EmotionLabelSet,
    margin: f64,
) -> PlausibilityReport {
    let correct = aggregate_emotion_stats(
        records,
        Split::Correct,
        group_by,
        CueSource::Salient,
        labels,
    );
    let incorrect = aggregate_emotion_stats(
        records,
        Split::Incorrect,
        group_by,
        CueSource::Salient,
        labels,
    );
    plausibility_from_stats(correct, incorrect, labels, margin)
}

/// One LAB1 line: `source_id true_label predicted_label`, with `-` as the
/// predicted label when the oracle should decide.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelEntry {
    pub source_id: String,
    pub true_label: String,
    pub predicted: Option<String>,
}

pub fn parse_lab1(text: &str) -> Result<Vec<LabelEntry>> {
    let mut out: Vec<LabelEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::Format(format!(
                "LAB1 line {}: expected 3 fields",
                i + 1
            )));
        }
        if out.iter().any(|e| e.source_id == toks[0]) {
            return Err(Error::Format(format!(
                "LAB1 line {}: duplicate id {:?}",
                i + 1,
                toks[0]
            )));
        }
        out.push(LabelEntry {
            source_id: toks[0].into(),
            true_label: toks[1].into(),
            predicted: (toks[2] != "-").then(|| toks[2].to_string()),
        });
    }
    Ok(out)
}

pub fn read_lab1(path: impl AsRef<Path>) -> Result<Vec<LabelEntry>> {
    parse_lab1(&std::fs::read_to_string(path)?)
}

pub fn render_lab1(entries: &[LabelEntry]) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        check_token(&e.source_id, "source id")?;
        check_token(&e.true_label, "label")?;
        out.push_str(&format!(
            "{} {} {}\n",
            e.source_id,
            e.true_label,
            e.predicted.as_deref().unwrap_or("-")
        ));
    }
    Ok(out)
}

pub fn write_lab1(entries: &[LabelEntry], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_lab1(entries)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv(v: [f64; 6]) -> CueVector {
        CueVector::with_values(v, 1.0, 10)
    }

    fn agg(v: [f64; 6]) -> CueAggregate {
        CueAggregate {
            mean: cv(v),
            sd: cv([0.0; 6]),
            n_segments: 1,
        }
    }

    fn rec(
        id: &str,
        t: &str,
        p: &str,
        salient: [f64; 6],
        full: [f64; 6],
        random: [f64; 6],
    ) -> UtteranceRecord {
        UtteranceRecord {
            source_id: id.into(),
            true_label: t.into(),
            predicted_label: p.into(),
            salient: agg(salient),
            full_clip: cv(full),
            random: agg(random),
            seed: 0,
        }
    }

    fn stats(emotion: &str, mean: [f64; 6]) -> EmotionStats {
        EmotionStats {
            emotion: emotion.into(),
            count: 1,
            mean,
            sd: [0.0; 6],
        }
    }

    #[test]
    fn delta_basics() {
        let a = cv([0.62, -3.0, 0.01, 1.0, 30.0, 10.0]);
        let b = cv([0.19, -1.0, 0.02, 1.0, 28.0, 12.0]);
        assert_eq!(delta_f(&a, &a), [0.0; 6]);
        let d = delta_f(&a, &b);
        assert!((d[0] - 0.43).abs() < 1e-12);
        let back = delta_f(&b, &a);
        for i in 0..6 {
            assert_eq!(d[i], -back[i]);
        }
    }

    #[test]
    fn emotion_stats_hand_values() {
        let labels = EmotionLabelSet::default();
        let rs = vec![
            rec("a", "sad", "sad", [1.0; 6], [0.0; 6], [0.0; 6]),
            rec("b", "sad", "sad", [3.0; 6], [0.0; 6], [0.0; 6]),
            rec("c", "angry", "angry", [5.0; 6], [0.0; 6], [0.0; 6]),
            rec("d", "angry", "sad", [7.0; 6], [0.0; 6], [0.0; 6]),
        ];
        let s = aggregate_emotion_stats(
            &rs,
            Split::Correct,
            GroupBy::True,
            CueSource::Salient,
            &labels,
        );
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].emotion, "angry");
        assert_eq!((s[0].mean, s[0].sd, s[0].count), ([5.0; 6], [0.0; 6], 1));
        assert_eq!((s[1].mean, s[1].sd, s[1].count), ([2.0; 6], [1.0; 6], 2));

        let wrong = aggregate_emotion_stats(
            &rs,
            Split::Incorrect,
            GroupBy::True,
            CueSource::Salient,
            &labels,
        );
        assert_eq!(wrong.len(), 1);
        assert_eq!(wrong[0].emotion, "angry");
        let by_pred = aggregate_emotion_stats(
            &rs,
            Split::Incorrect,
            GroupBy::Predicted,
            CueSource::Salient,
            &labels,
        );
        assert_eq!(by_pred[0].emotion, "sad");

        let all =
            aggregate_emotion_stats(&rs, Split::All, GroupBy::True, CueSource::Salient, &labels);
        assert_eq!(all[0].mean, [6.0; 6]);
    }

    #[test]
    fn stats_ignore_record_order() {
        let labels = EmotionLabelSet::default();
        let mut rs: Vec<UtteranceRecord> = (0..9)
            .map(|i| {
                let x = 0.1 * i as f64 + 1.0 / 3.0;
                rec(
                    &format!("u{i}"),
                    "happy",
                    "happy",
                    [x, x * x, 1.0 / x, x, -x, 2.0 * x],
                    [0.0; 6],
                    [0.0; 6],
                )
            })
            .collect();
        let a =
            aggregate_emotion_stats(&rs, Split::All, GroupBy::True, CueSource::Salient, &labels);
        rs.reverse();
        rs.swap(2, 5);
        let b =
            aggregate_emotion_stats(&rs, Split::All, GroupBy::True, CueSource::Salient, &labels);
        assert_eq!(a, b);
    }

    #[test]
    fn sign_test_conventions() {
        let labels = EmotionLabelSet::default();
        let rs = vec![
            rec(
                "a",
                "angry",
                "angry",
                [2.0, -2.0, 1.0, 1.0, 1.0, 1.0],
                [1.0, -1.0, 0.5, 0.5, 0.5, 1.0],
                [0.0; 6],
            ),
            rec("b", "sad", "sad", [0.5; 6], [0.5; 6], [0.0; 6]),
        ];
        let v = validation_records(&rs, Baseline::FullClip, &labels);
        let t = delta_sign_test(&v, &labels);
        assert_eq!(t[0].emotion, "angry");
        // shrillness falls, which is the expected direction for high arousal
        assert_eq!(t[0].matching, [1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
        // zero deltas never match
        assert_eq!(t[1].matching, [0.0; 6]);

        let flipped = labels.flipped();
        let vf = validation_records(&rs, Baseline::FullClip, &flipped);
        let tf = delta_sign_test(&vf, &flipped);
        for c in 0..5 {
            assert_eq!(tf[0].matching[c], 1.0 - t[0].matching[c]);
        }
        assert_eq!(tf[0].matching[5], 0.0);
    }

    #[test]
    fn loudness_contradiction_flagged() {
        let labels = EmotionLabelSet::default();
        let mut ca = [0.0; 6];
        let mut cs = [0.0; 6];
        let mut ia = [0.0; 6];
        let mut is = [0.0; 6];
        (ca[0], cs[0], ia[0], is[0]) = (2.03, 0.19, 0.45, 0.43);
        let rep = plausibility_from_stats(
            vec![stats("angry", ca), stats("sad", cs)],
            vec![stats("angry", ia), stats("sad", is)],
            &labels,
            DEFAULT_ORDER_MARGIN,
        );
        assert_eq!(rep.contradictions.len(), 1);
        let c = &rep.contradictions[0];
        assert_eq!(
            (c.cue, c.high_emotion.as_str(), c.low_emotion.as_str()),
            ("loudness", "angry", "sad")
        );
    }

    #[test]
    fn plausibility_edge_cases() {
        let labels = EmotionLabelSet::default();
        let correct = vec![
            stats("angry", [2.0, -5.0, 1.0, 1.0, 40.0, 5.0]),
            stats("sad", [0.2, 1.0, 0.5, 0.2, 20.0, 1.0]),
        ];
        let rep = plausibility_from_stats(correct.clone(), vec![], &labels, DEFAULT_ORDER_MARGIN);
        assert!(rep.contradictions.is_empty());
        assert_eq!(rep.notes, vec!["no misclassifications".to_string()]);
        let same = plausibility_from_stats(correct.clone(), correct, &labels, DEFAULT_ORDER_MARGIN);
        assert!(same.contradictions.is_empty());
    }

    #[test]
    fn ordering_margin() {
        assert!(ordering_holds(2.03, 0.19, 0, 0.1));
        assert!(!ordering_holds(0.45, 0.43, 0, 0.1));
        assert!(ordering_holds(-5.0, -1.0, SHRILL_INDEX, 0.1));
        assert!(!ordering_holds(-1.0, -5.0, SHRILL_INDEX, 0.1));
        assert!(!ordering_holds(0.0, 0.0, 0, 0.1));
    }

    #[test]
    fn lab1_round_trip() {
        let text = "a angry -\nb sad happy\n";
        let e = parse_lab1(text).unwrap();
        assert_eq!(e[0].predicted, None);
        assert_eq!(e[1].predicted.as_deref(), Some("happy"));
        assert_eq!(render_lab1(&e).unwrap(), text);
        assert!(parse_lab1("a angry\n").is_err());
        assert!(parse_lab1("a angry -\na sad -\n").is_err());
    }
}
