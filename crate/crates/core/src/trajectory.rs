//! Closed-loop trajectories and their CSV form.
//!
//! CSV columns: `t,x1..xn,u1..um,stage_cost,value,discounted_running_cost`,
//! one header line, numbers written with 17 significant digits.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Regime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// `Q(x) + u' R(x) u`
    pub stage_cost: f64,
    /// `x' P x`
    pub value: f64,
    /// Discounted cost accrued before this sample.
    pub discounted_running_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub regime: Regime,
    /// Integration step (continuous) or 1 (discrete).
    pub step: f64,
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> Option<&TrajectorySample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&TrajectorySample> {
        self.samples.last()
    }

    fn dims(&self) -> (usize, usize) {
        self.samples
            .first()
            .map_or((0, 0), |s| (s.x.len(), s.u.len()))
    }

    pub fn csv_header(n: usize, m: usize) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=n).map(|i| format!("x{i}")));
        cols.extend((1..=m).map(|i| format!("u{i}")));
        cols.extend(["stage_cost", "value", "discounted_running_cost"].map(String::from));
        cols
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let (n, m) = self.dims();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::csv_header(n, m))?;
        for s in &self.samples {
            let row = std::iter::once(s.t)
                .chain(s.x.iter().copied())
                .chain(s.u.iter().copied())
                .chain([s.stage_cost, s.value, s.discounted_running_cost])
                .map(fmt17);
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trajectory written by [`Trajectory::write_csv`]; state and
    /// input dimensions come from the header.
    pub fn read_csv<R: Read>(reader: R, regime: Regime) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let n = header.iter().filter(|h| is_indexed(h, 'x')).count();
        let m = header.iter().filter(|h| is_indexed(h, 'u')).count();
        let expected = Self::csv_header(n, m);
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::InvalidInput(format!(
                "unexpected trajectory header `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut samples = Vec::new();
        for record in r.records() {
            let record = record?;
            let vals = record
                .iter()
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidInput(format!("bad number `{v}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            samples.push(TrajectorySample {
                t: vals[0],
                x: vals[1..1 + n].to_vec(),
                u: vals[1 + n..1 + n + m].to_vec(),
                stage_cost: vals[1 + n + m],
                value: vals[2 + n + m],
                discounted_running_cost: vals[3 + n + m],
            });
        }
        let step = match regime {
            Regime::Discrete => 1.0,
            Regime::Continuous => match samples.as_slice() {
                [a, b, ..] => b.t - a.t,
                _ => 0.0,
            },
        };
        Ok(Self {
            regime,
            step,
            samples,
        })
    }
}

fn is_indexed(h: &str, prefix: char) -> bool {
    h.strip_prefix(prefix)
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

/// 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rounds to 6 significant digits for human-facing output.
pub fn fmt6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().unwrap_or(v);
    if rounded == 0.0 || (1e-4..1e15).contains(&rounded.abs()) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn human_formatting() {
        assert_eq!(fmt6(-2.0), "-2");
        assert_eq!(fmt6(std::f64::consts::FRAC_PI_4), "0.785398");
        assert_eq!(fmt6(0.0), "0");
        assert_eq!(fmt6(1.234567e-20), "1.23457e-20");
    }

    #[test]
    fn rejects_foreign_header() {
        let text = "a,b\n1,2\n";
        assert!(Trajectory::read_csv(text.as_bytes(), Regime::Discrete).is_err());
    }
}
