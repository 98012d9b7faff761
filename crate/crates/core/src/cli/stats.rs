//! Histograms and progress series over toy trace files.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::cosine;
use crate::metrics::progress_from_losses;
use crate::toybench::{toy_gradient_pair, ToyPoint};

use super::output::{fmt_g9, TraceRow};

/// Equal-width bins over `[lo, hi]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        assert!(hi > lo && bins > 0);
        Self { lo, hi, counts: vec![0; bins] }
    }

    pub fn add(&mut self, x: f64) {
        if !(self.lo..=self.hi).contains(&x) {
            return;
        }
        let n = self.counts.len();
        let i = (((x - self.lo) / (self.hi - self.lo)) * n as f64) as usize;
        self.counts[i.min(n - 1)] += 1;
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + i as f64 * w, self.lo + (i + 1) as f64 * w)
    }
}

pub struct TraceStats {
    pub name: String,
    /// Over `log10 r`.
    pub imbalance: Histogram,
    pub mu: Histogram,
    /// One histogram per task over `[-1, 1]`.
    pub similarity: Vec<Histogram>,
    pub progress: Vec<Option<Vec<f64>>>,
}

pub fn trace_stats(name: &str, rows: &[TraceRow], bins: usize) -> Result<TraceStats> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig(format!("{name}: trace has no rows")));
    }
    let log_r: Vec<f64> = rows.iter().filter_map(|r| r.r).filter(|r| *r >= 1.0).map(f64::log10).collect();
    let top = log_r.iter().cloned().fold(0.0, f64::max).ceil().max(1.0);
    let mut imbalance = Histogram::new(0.0, top, bins);
    let mut mu = Histogram::new(0.0, 1.0, bins);
    let mut similarity = vec![Histogram::new(-1.0, 1.0, bins), Histogram::new(-1.0, 1.0, bins)];
    for v in &log_r {
        imbalance.add(*v);
    }
    for r in rows {
        if let Some(c) = r.cos_theta {
            mu.add(c.clamp(0.0, 1.0));
        }
        // Cosines are invariant to the positive task weights, so unweighted gradients suffice.
        let (g1, g2) = toy_gradient_pair(&ToyPoint(r.theta));
        for (h, g) in similarity.iter_mut().zip([g1, g2]) {
            if let Ok(c) = cosine(&g, &r.d) {
                h.add(c);
            }
        }
    }
    let losses: Vec<Vec<f64>> = rows.iter().map(|r| r.losses.to_vec()).collect();
    Ok(TraceStats { name: name.into(), imbalance, mu, similarity, progress: progress_from_losses(&losses) })
}

fn err(e: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(e.to_string())
}

pub fn write_histograms<W: Write>(stats: &[TraceStats], which: &str, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let with_task = which == "similarity";
    if with_task {
        w.write_record(["trace", "task", "bin_lo", "bin_hi", "count"]).map_err(err)?;
    } else {
        w.write_record(["trace", "bin_lo", "bin_hi", "count"]).map_err(err)?;
    }
    for s in stats {
        let hists: Vec<&Histogram> = match which {
            "imbalance" => vec![&s.imbalance],
            "mu" => vec![&s.mu],
            _ => s.similarity.iter().collect(),
        };
        for (task, h) in hists.iter().enumerate() {
            for (i, count) in h.counts.iter().enumerate() {
                let (lo, hi) = h.edges(i);
                let (lo, hi) = if which == "imbalance" { (10f64.powf(lo), 10f64.powf(hi)) } else { (lo, hi) };
                let mut row = vec![s.name.clone()];
                if with_task {
                    row.push((task + 1).to_string());
                }
                row.extend([fmt_g9(lo), fmt_g9(hi), count.to_string()]);
                w.write_record(&row).map_err(err)?;
            }
        }
    }
    w.flush().map_err(err)
}

pub fn write_progress<W: Write>(stats: &[TraceStats], steps: &[Vec<usize>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trace", "step", "r1", "r2"]).map_err(err)?;
    for (s, steps) in stats.iter().zip(steps) {
        for (t, step) in steps.iter().enumerate() {
            let cell = |task: usize| s.progress[task].as_ref().map(|p| fmt_g9(p[t])).unwrap_or_default();
            w.write_record([s.name.clone(), step.to_string(), cell(0), cell(1)]).map_err(err)?;
        }
    }
    w.flush().map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_binning() {
        let mut h = Histogram::new(0.0, 1.0, 4);
        for x in [0.0, 0.1, 0.25, 0.99, 1.0, 1.5, -0.1] {
            h.add(x);
        }
        assert_eq!(h.counts, vec![2, 1, 0, 2]);
        assert_eq!(h.edges(1), (0.25, 0.5));
    }
}
