use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::ops::Range;

use crate::error::{Error, Result};

/// Uniformly sampled record of one run. Time is derived from the sample
/// index so it never accumulates rounding drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

impl Trajectory {
    pub fn with_capacity(dt: f64, n: usize) -> Self {
        Trajectory {
            dt,
            u: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            a: Vec::with_capacity(n),
        }
    }

    pub fn from_columns(dt: f64, u: Vec<f64>, x: Vec<f64>, v: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        let n = u.len();
        if n == 0 || x.len() != n || v.len() != n || a.len() != n {
            return Err(Error::invalid(
                "columns",
                format!(
                    "need equal non-zero lengths, got u={} x={} v={} a={}",
                    n,
                    x.len(),
                    v.len(),
                    a.len()
                ),
            ));
        }
        Ok(Trajectory { dt, u, x, v, a })
    }

    pub fn push(&mut self, u: f64, x: f64, v: f64, a: f64) {
        self.u.push(u);
        self.x.push(x);
        self.v.push(v);
        self.a.push(a);
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    /// Samples in `range`, re-based so the first one sits at t = 0.
    pub fn slice(&self, range: Range<usize>) -> Trajectory {
        Trajectory {
            dt: self.dt,
            u: self.u[range.clone()].to_vec(),
            x: self.x[range.clone()].to_vec(),
            v: self.v[range.clone()].to_vec(),
            a: self.a[range].to_vec(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "u", "x", "v", "a"])?;
        for i in 0..self.len() {
            out.write_record([
                fmt_f64(self.time(i)),
                fmt_f64(self.u[i]),
                fmt_f64(self.x[i]),
                fmt_f64(self.v[i]),
                fmt_f64(self.a[i]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "u", "x", "v", "a"] {
            return Err(Error::invalid("header", "expected `t,u,x,v,a`"));
        }
        let mut t = Vec::new();
        let mut cols: [Vec<f64>; 4] = Default::default();
        for rec in rdr.records() {
            let rec = rec?;
            t.push(parse_field(&rec, 0)?);
            for (k, col) in cols.iter_mut().enumerate() {
                col.push(parse_field(&rec, k + 1)?);
            }
        }
        if t.len() < 2 {
            return Err(Error::TooShort("trajectory CSV needs at least two rows".into()));
        }
        let dt = t[1] - t[0];
        let [u, x, v, a] = cols;
        Trajectory::from_columns(dt, u, x, v, a)
    }
}

pub(crate) fn parse_field(rec: &csv::StringRecord, i: usize) -> Result<f64> {
    rec.get(i)
        .ok_or_else(|| Error::invalid("csv", format!("missing column {i}")))?
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::invalid("csv", e.to_string()))
}

/// Shortest representation that round-trips exactly; always uses a decimal
/// point and never a locale separator.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
