//! CSV datasets.
//!
//! A file starts with `# key=value` metadata lines followed by a header row and
//! data rows. Floats are written in the shortest form that parses back to the
//! same bits, so [`read_spectrum_csv`] reproduces the emitted values exactly.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::lab::FringeTrace;
use crate::langevin::PsdEstimate;
use crate::metrics::Reference;
use crate::params::db;
use crate::spectra::NoiseSpectrum;

pub const SPECTRUM_COLUMNS: [&str; 7] = ["delta", "f_hz", "v_plus", "v_minus", "v_plus_db", "v_minus_db", "reference"];
pub const STDERR_COLUMNS: [&str; 2] = ["stderr_plus", "stderr_minus"];

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn db_or_nan(x: f64) -> f64 {
    db(x).unwrap_or(f64::NAN)
}

fn write_meta<W: Write>(w: &mut W, meta: &[(String, String)]) -> Result<()> {
    for (k, v) in meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Config(format!("metadata entry `{k}` cannot be written as a comment line")));
        }
        writeln!(w, "# {k}={v}")?;
    }
    Ok(())
}

fn write_rows<W: Write>(
    w: W,
    s: &NoiseSpectrum,
    stderr: Option<(&[f64], &[f64])>,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = SPECTRUM_COLUMNS.to_vec();
    if stderr.is_some() {
        header.extend(STDERR_COLUMNS);
    }
    out.write_record(&header)?;
    for i in 0..s.len() {
        let mut row = vec![
            num(s.delta[i]),
            num(s.f_hz[i]),
            num(s.v_plus[i]),
            num(s.v_minus[i]),
            num(db_or_nan(s.v_plus[i])),
            num(db_or_nan(s.v_minus[i])),
            s.reference.as_str().to_string(),
        ];
        if let Some((a, b)) = stderr {
            row.push(num(a[i]));
            row.push(num(b[i]));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_spectrum_csv<W: Write>(mut w: W, s: &NoiseSpectrum, meta: &[(String, String)]) -> Result<()> {
    write_meta(&mut w, meta)?;
    write_rows(w, s, None)
}

/// Same schema as [`write_spectrum_csv`] plus the two standard-error columns.
pub fn write_psd_csv<W: Write>(mut w: W, psd: &PsdEstimate, meta: &[(String, String)]) -> Result<()> {
    let mut meta = meta.to_vec();
    meta.push(("segments".into(), psd.segments.to_string()));
    meta.push(("window".into(), psd.window.name().into()));
    meta.push(("calibration".into(), num(psd.calibration)));
    write_meta(&mut w, &meta)?;
    write_rows(w, &psd.to_spectrum(), Some((&psd.stderr_plus, &psd.stderr_minus)))
}

/// Contents of a spectrum or PSD file.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumFile {
    pub meta: Vec<(String, String)>,
    pub spectrum: NoiseSpectrum,
    /// Present for PSD files.
    pub stderr: Option<(Vec<f64>, Vec<f64>)>,
}

impl SpectrumFile {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn read_spectrum_csv<R: Read>(r: R) -> Result<SpectrumFile> {
    let mut reader = BufReader::new(r);
    let mut meta = Vec::new();
    let mut body = String::new();
    let mut line = String::new();
    while reader.read_line(&mut line)? > 0 {
        match line.strip_prefix("# ") {
            Some(rest) if body.is_empty() => {
                let (k, v) = rest
                    .trim_end_matches(['\n', '\r'])
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("malformed metadata line `{}`", line.trim_end())))?;
                meta.push((k.to_string(), v.to_string()));
            }
            _ => body.push_str(&line),
        }
        line.clear();
    }

    let mut rows = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = rows.headers()?.iter().map(str::to_string).collect();
    let has_stderr = header.len() == SPECTRUM_COLUMNS.len() + STDERR_COLUMNS.len();
    let expected: Vec<&str> = SPECTRUM_COLUMNS
        .iter()
        .chain(if has_stderr { &STDERR_COLUMNS[..] } else { &[] })
        .copied()
        .collect();
    if header != expected {
        return Err(Error::Config(format!("unexpected CSV columns {header:?}")));
    }

    let mut s = NoiseSpectrum {
        delta: vec![],
        f_hz: vec![],
        v_plus: vec![],
        v_minus: vec![],
        reference: Reference::SingleSql,
        psi: 0.0,
    };
    let (mut e_plus, mut e_minus) = (vec![], vec![]);
    for (i, rec) in rows.records().enumerate() {
        let rec = rec?;
        let f = |j: usize| -> Result<f64> {
            rec[j]
                .parse()
                .map_err(|_| Error::Config(format!("row {}: bad number `{}` in column {}", i + 1, &rec[j], header[j])))
        };
        s.delta.push(f(0)?);
        s.f_hz.push(f(1)?);
        s.v_plus.push(f(2)?);
        s.v_minus.push(f(3)?);
        s.reference = Reference::parse(&rec[6])
            .ok_or_else(|| Error::Config(format!("row {}: unknown reference `{}`", i + 1, &rec[6])))?;
        if has_stderr {
            e_plus.push(f(7)?);
            e_minus.push(f(8)?);
        }
    }
    let meta_psi = meta.iter().find(|(k, _)| k == "psi").and_then(|(_, v)| v.parse().ok());
    if let Some(psi) = meta_psi {
        s.psi = psi;
    }
    Ok(SpectrumFile {
        meta,
        spectrum: s,
        stderr: has_stderr.then_some((e_plus, e_minus)),
    })
}

/// Both fringe traces on their common scan.
pub fn write_fringe_csv<W: Write>(mut w: W, plus: &FringeTrace, minus: &FringeTrace, meta: &[(String, String)]) -> Result<()> {
    if plus.scan != minus.scan {
        return Err(Error::GridMismatch {
            index: plus.scan.iter().zip(&minus.scan).take_while(|(a, b)| a == b).count(),
        });
    }
    write_meta(&mut w, meta)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scan", "level_plus", "level_minus"])?;
    for i in 0..plus.len() {
        out.write_record([num(plus.scan[i]), num(plus.level[i]), num(minus.level[i])])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::DerivedParams;
    use crate::spectra::{linear_grid, sweep};
    use proptest::prelude::*;

    fn meta() -> Vec<(String, String)> {
        vec![("psi".into(), num(std::f64::consts::FRAC_PI_4)), ("note".into(), "a, b".into())]
    }

    #[test]
    fn spectrum_round_trip_is_exact() {
        let d = DerivedParams::from_eta_sigma(0.62, 1.3, 0.74, 0.98).unwrap();
        let s = sweep(&d, std::f64::consts::FRAC_PI_4, &linear_grid(0.0, 3.0, 97).unwrap(), 2.66e7).unwrap();
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, &s, &meta()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# psi=7.853981633974483e-1\n# note=a, b\ndelta,f_hz,v_plus"));
        let back = read_spectrum_csv(buf.as_slice()).unwrap();
        assert_eq!(back.spectrum, s);
        assert_eq!(back.meta, meta());
        assert_eq!(back.stderr, None);
        assert_eq!(back.meta_value("note"), Some("a, b"));
    }

    #[test]
    fn bad_files() {
        assert!(read_spectrum_csv("a,b\n1,2\n".as_bytes()).is_err());
        let bad = "delta,f_hz,v_plus,v_minus,v_plus_db,v_minus_db,reference\n0,0,1,1,0,0,three_SQL\n";
        assert!(read_spectrum_csv(bad.as_bytes()).is_err());
        let bad = "delta,f_hz,v_plus,v_minus,v_plus_db,v_minus_db,reference\n0,x,1,1,0,0,two_SQL\n";
        assert!(read_spectrum_csv(bad.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn any_finite_values_round_trip(vals in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite() && *v > 0.0), 1..40)) {
            let n = vals.len();
            let s = NoiseSpectrum {
                delta: (0..n).map(|i| i as f64 * 0.1).collect(),
                f_hz: vals.clone(),
                v_plus: vals.clone(),
                v_minus: vals.iter().map(|v| 1.0 / v).collect(),
                reference: Reference::TwoSql,
                psi: 0.0,
            };
            let mut buf = Vec::new();
            write_spectrum_csv(&mut buf, &s, &[]).unwrap();
            let back = read_spectrum_csv(buf.as_slice()).unwrap().spectrum;
            prop_assert_eq!(back.v_plus.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), s.v_plus.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, s);
        }
    }
}
