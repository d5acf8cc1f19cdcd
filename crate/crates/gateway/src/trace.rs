//! CSV episode traces and force scripts.

use std::io::{Read, Write};

use bpguard_core::executive::ExecState;
use nalgebra::Vector2;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("force script row {row}: {message}")]
    Script { row: usize, message: String },
    #[error("trace rows must have strictly increasing t ({prev} then {next})")]
    NonMonotonic { prev: f64, next: f64 },
}

/// One constant force over `[t_start, t_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct ForceInterval {
    pub t_start: f64,
    pub t_end: f64,
    pub fx: f64,
    pub fy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForceScript {
    pub intervals: Vec<ForceInterval>,
}

impl ForceScript {
    pub fn new(mut intervals: Vec<ForceInterval>) -> Result<Self, TraceError> {
        intervals.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
        for (i, iv) in intervals.iter().enumerate() {
            let finite = [iv.t_start, iv.t_end, iv.fx, iv.fy]
                .iter()
                .all(|v| v.is_finite());
            if !finite || iv.t_end <= iv.t_start || iv.t_start < 0.0 {
                return Err(TraceError::Script {
                    row: i + 1,
                    message: "need finite values and 0 <= t_start < t_end".into(),
                });
            }
            if i > 0 && intervals[i - 1].t_end > iv.t_start {
                return Err(TraceError::Script {
                    row: i + 1,
                    message: "intervals overlap".into(),
                });
            }
        }
        Ok(Self { intervals })
    }

    /// Reads `t_start,t_end,fx,fy` rows with a header line.
    pub fn from_reader(r: impl Read) -> Result<Self, TraceError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(r);
        let rows = rdr
            .deserialize()
            .collect::<Result<Vec<ForceInterval>, _>>()?;
        Self::new(rows)
    }

    pub fn force_at(&self, t: f64) -> Vector2<f64> {
        self.intervals
            .iter()
            .find(|iv| iv.t_start <= t && t < iv.t_end)
            .map(|iv| Vector2::new(iv.fx, iv.fy))
            .unwrap_or_else(Vector2::zeros)
    }

    /// End of the last interval, or zero for an empty script.
    pub fn end(&self) -> f64 {
        self.intervals.last().map_or(0.0, |iv| iv.t_end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub x: [f64; 2],
    pub u: Vec<f64>,
    pub w: [f64; 2],
    pub pair: usize,
    pub barrier: f64,
    pub belief: Vec<f64>,
    pub target: String,
}

impl TraceRow {
    pub fn capture(es: &ExecState, x: &Vector2<f64>, barrier: f64) -> Self {
        Self {
            t: es.t,
            q: es.joint.q.as_slice().to_vec(),
            qd: es.joint.qd.as_slice().to_vec(),
            x: [x.x, x.y],
            u: es.u.as_slice().to_vec(),
            w: [es.w.x, es.w.y],
            pair: es.active_pair(),
            barrier,
            belief: es.belief.probs.clone(),
            target: es.target.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub joints: usize,
    pub candidates: Vec<String>,
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    pub fn new(joints: usize, candidates: Vec<String>) -> Self {
        Self {
            joints,
            candidates,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: TraceRow) -> Result<(), TraceError> {
        if let Some(prev) = self.rows.last() {
            if row.t <= prev.t {
                return Err(TraceError::NonMonotonic {
                    prev: prev.t,
                    next: row.t,
                });
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn header(&self) -> Vec<String> {
        let n = self.joints;
        let mut h = vec!["t".to_string()];
        h.extend((1..=n).map(|i| format!("q{i}")));
        h.extend((1..=n).map(|i| format!("qd{i}")));
        h.extend(["x".into(), "y".into()]);
        h.extend((1..=n).map(|i| format!("u{i}")));
        h.extend(["wx".into(), "wy".into(), "bp".into(), "barrier".into()]);
        h.extend(self.candidates.iter().map(|c| format!("p_{c}")));
        h.push("target".into());
        h
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), TraceError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(self.header())?;
        for r in &self.rows {
            let mut rec: Vec<String> = vec![r.t.to_string()];
            rec.extend(r.q.iter().chain(&r.qd).map(f64::to_string));
            rec.extend(r.x.iter().map(f64::to_string));
            rec.extend(r.u.iter().map(f64::to_string));
            rec.extend(r.w.iter().map(f64::to_string));
            rec.push(r.pair.to_string());
            rec.push(r.barrier.to_string());
            rec.extend(r.belief.iter().map(f64::to_string));
            rec.push(r.target.clone());
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}
