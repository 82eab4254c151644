//! Raw time-series dump.
//!
//! Layout: a 128-byte ASCII header, space padded and terminated by `'\n'` at
//! byte 127, e.g.
//!
//! ```text
//! NDOPO1 gp=1.00000e0 gm=1.00000e0 kp=7.40000e-1 km=7.40000e-1 eps=6.20000e-1 dt=2.00000e-3 n=4096
//! ```
//!
//! followed by `n` records of two little-endian `f64` values, the output
//! quadratures `q_+` and `q_-` of one step each.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::OpoParams;

pub const DUMP_HEADER_LEN: usize = 128;
const MAGIC: &str = "NDOPO1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DumpHeader {
    pub params: OpoParams,
    pub dt: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub header: DumpHeader,
    pub samples: Vec<[f64; 2]>,
}

fn header_text(h: &DumpHeader) -> String {
    let p = &h.params;
    format!(
        "{MAGIC} gp={:.5e} gm={:.5e} kp={:.5e} km={:.5e} eps={:.5e} dt={:.5e} n={}",
        p.gamma_plus, p.gamma_minus, p.kappa_plus, p.kappa_minus, p.epsilon, h.dt, h.n
    )
}

pub fn write_dump(path: &Path, p: &OpoParams, dt: f64, samples: &[[f64; 2]]) -> Result<()> {
    let h = DumpHeader {
        params: *p,
        dt,
        n: samples.len(),
    };
    let mut text = header_text(&h).into_bytes();
    if text.len() > DUMP_HEADER_LEN - 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "header does not fit in 128 bytes".into(),
        });
    }
    text.resize(DUMP_HEADER_LEN - 1, b' ');
    text.push(b'\n');
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&text)?;
    for s in samples {
        w.write_all(&s[0].to_le_bytes())?;
        w.write_all(&s[1].to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<Dump> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; DUMP_HEADER_LEN];
    r.read_exact(&mut head).map_err(|_| bad("file shorter than header".into()))?;
    if head[DUMP_HEADER_LEN - 1] != b'\n' {
        return Err(bad("header not terminated by newline".into()));
    }
    let text = std::str::from_utf8(&head).map_err(|_| bad("header is not ASCII".into()))?;
    let mut fields = text.split_whitespace();
    if fields.next() != Some(MAGIC) {
        return Err(bad("bad magic".into()));
    }
    let mut get = std::collections::HashMap::new();
    for f in fields {
        let (k, v) = f.split_once('=').ok_or_else(|| bad(format!("malformed field {f:?}")))?;
        get.insert(k, v);
    }
    let num = |k: &str| -> Result<f64> {
        get.get(k)
            .ok_or_else(|| bad(format!("missing {k}")))?
            .parse()
            .map_err(|_| bad(format!("bad value for {k}")))
    };
    let n: usize = get
        .get("n")
        .ok_or_else(|| bad("missing n".into()))?
        .parse()
        .map_err(|_| bad("bad value for n".into()))?;
    let header = DumpHeader {
        params: OpoParams {
            gamma_plus: num("gp")?,
            gamma_minus: num("gm")?,
            kappa_plus: num("kp")?,
            kappa_minus: num("km")?,
            epsilon: num("eps")?,
            chi: 0.0,
        },
        dt: num("dt")?,
        n,
    };
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != 16 * n {
        return Err(bad(format!("expected {} data bytes, found {}", 16 * n, body.len())));
    }
    let samples = body
        .chunks_exact(16)
        .map(|c| {
            [
                f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
            ]
        })
        .collect();
    Ok(Dump { header, samples })
}
