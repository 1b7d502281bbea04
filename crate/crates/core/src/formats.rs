//! Plain-text matrix helpers and the SGM1 spectrogram file.
//!
//! All reals are written in scientific notation with 17 significant digits,
//! which round-trips every finite `f64` exactly.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::spectrogram::{LogMelSpectrogram, SpectroConfig};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn push_matrix(out: &mut String, m: &Array2<f64>) {
    for row in m.rows() {
        let mut first = true;
        for &v in row {
            if !first {
                out.push(' ');
            }
            out.push_str(&fmt_f64(v));
            first = false;
        }
        out.push('\n');
    }
}

pub fn parse_f64(tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::Format(format!("not a number: {tok:?}")))
}

/// Parses exactly `expected` whitespace-separated reals.
pub fn parse_row(line: &str, expected: usize) -> Result<Vec<f64>> {
    let vals = line
        .split_whitespace()
        .map(parse_f64)
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != expected {
        return Err(Error::Format(format!(
            "row has {} values, expected {expected}",
            vals.len()
        )));
    }
    Ok(vals)
}

/// Reads `h` rows of `w` values from a line iterator.
pub fn read_matrix<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    h: usize,
    w: usize,
) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((h, w));
    for r in 0..h {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("expected {h} rows, found {r}")))?;
        for (c, v) in parse_row(line, w)?.into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    if let Some(extra) = lines.find(|l| !l.trim().is_empty()) {
        return Err(Error::Format(format!(
            "trailing data after matrix: {extra:?}"
        )));
    }
    Ok(m)
}

pub fn check_token(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.contains(char::is_whitespace) {
        return Err(Error::InvalidArgument(format!(
            "{what} {s:?} must be a non-empty token without whitespace"
        )));
    }
    Ok(())
}

/// Writes `H W source_id` followed by the matrix.
pub fn write_sgm1(spec: &LogMelSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_sgm1(spec)?)?;
    Ok(())
}

pub fn render_sgm1(spec: &LogMelSpectrogram) -> Result<String> {
    check_token(&spec.source_id, "source id")?;
    let (h, w) = spec.data.dim();
    let mut out = format!("{h} {w} {}\n", spec.source_id);
    push_matrix(&mut out, &spec.data);
    Ok(out)
}

/// Reads an SGM1 spectrogram, interpreting it under `config`.
pub fn read_sgm1(path: impl AsRef<Path>, config: &SpectroConfig) -> Result<LogMelSpectrogram> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty SGM1 file".into()))?
        .split_whitespace()
        .collect();
    if header.len() != 3 {
        return Err(Error::Format("SGM1 header must be `H W source_id`".into()));
    }
    let dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad dimension {s:?}")))
    };
    let (h, w) = (dim(header[0])?, dim(header[1])?);
    if h != config.n_mels {
        return Err(Error::Shape {
            expected: (config.n_mels, w),
            got: (h, w),
        });
    }
    let data = read_matrix(&mut lines, h, w)?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in spectrogram".into()));
    }
    let n_samples = if w == 0 {
        0
    } else {
        (w - 1) * config.hop_length + config.win_length
    };
    Ok(LogMelSpectrogram {
        data,
        config: config.clone(),
        source_id: header[2].to_string(),
        n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn finite_reals_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let back = parse_f64(&fmt_f64(v)).unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn sgm1_round_trip() {
        let cfg = SpectroConfig {
            n_mels: 3,
            ..SpectroConfig::default()
        };
        let data =
            Array2::from_shape_fn((3, 4), |(r, c)| (r as f64 - 1.3) * (c as f64 + 0.77) / 3.0);
        let spec = LogMelSpectrogram {
            data,
            config: cfg.clone(),
            source_id: "utt_01".into(),
            n_samples: 3 * 240 + 480,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.sgm");
        write_sgm1(&spec, &p).unwrap();
        let back = read_sgm1(&p, &cfg).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn sgm1_rejects_bad_rows() {
        let cfg = SpectroConfig {
            n_mels: 2,
            ..SpectroConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.sgm");
        std::fs::write(&p, "2 3 x\n1 2 3\n1 2\n").unwrap();
        assert!(matches!(read_sgm1(&p, &cfg), Err(Error::Format(_))));
        std::fs::write(&p, "3 3 x\n1 2 3\n1 2 3\n1 2 3\n").unwrap();
        assert!(matches!(read_sgm1(&p, &cfg), Err(Error::Shape { .. })));
    }
}
