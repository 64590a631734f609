//! Log-scale magnitude histograms, nearest-rank percentiles over positive
//! values, and the fraction-above-threshold diagnostic.
//!
//! These operate on per-variable magnitude snapshots taken from an optimizer
//! state: non-negative arrays where exact zeros (dead units) are tracked
//! separately — excluded from percentiles, included in fraction denominators.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One variable's adaptive-denominator magnitudes at a given step.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MagnitudeSnapshot {
    pub variable_id: String,
    /// Flat non-negative magnitudes, one per parameter coordinate.
    pub values: Vec<f64>,
    /// Optimizer step t at capture time.
    pub iteration: u64,
    /// Epoch the capture happened in.
    pub epoch: u64,
}

/// Number of log bins in a default histogram.
pub const HISTOGRAM_BINS: usize = 256;
/// Smallest representable magnitude; below this is the underflow bucket.
pub const HISTOGRAM_LO: f64 = 1e-30;
/// Upper limit; at or above this is the overflow bucket.
pub const HISTOGRAM_HI: f64 = 1e10;
// log10 span per bin: (10 - (-30)) / 256 = 0.15625, an exact dyadic.
const LOG_LO: f64 = -30.0;
const LOG_HI: f64 = 10.0;
const LOG_STEP: f64 = (LOG_HI - LOG_LO) / HISTOGRAM_BINS as f64;

/// Histogram of positive magnitudes on a log10 axis, with out-of-range and
/// zero counts kept separately so no sample is ever dropped.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LogMagnitudeHistogram {
    /// 257 strictly increasing edges; bin i covers [edges[i], edges[i+1]).
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    pub zeros: u64,
}

fn default_edges() -> Vec<f64> {
    (0..=HISTOGRAM_BINS)
        .map(|i| 10f64.powf(LOG_LO + i as f64 * LOG_STEP))
        .collect()
}

impl LogMagnitudeHistogram {
    /// Histogram a raw value array. Zeros go to the zero bucket, positives
    /// below 1e-30 to underflow, values at or above 1e10 to overflow.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        let (mut underflow, mut overflow, mut zeros) = (0u64, 0u64, 0u64);
        for &x in values {
            if x < 0.0 || x.is_nan() {
                return Err(Error::contract(format!(
                    "magnitudes must be non-negative, got {x}"
                )));
            }
            if x == 0.0 {
                zeros += 1;
            } else if x < HISTOGRAM_LO {
                underflow += 1;
            } else if x >= HISTOGRAM_HI {
                overflow += 1;
            } else {
                let idx = ((x.log10() - LOG_LO) / LOG_STEP) as usize;
                counts[idx.min(HISTOGRAM_BINS - 1)] += 1;
            }
        }
        Ok(LogMagnitudeHistogram {
            bin_edges: default_edges(),
            counts,
            underflow,
            overflow,
            zeros,
        })
    }

    /// Every sample lands somewhere: bins + underflow + overflow + zeros.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow + self.zeros
    }

    /// Serialize as CSV: a `#` comment carrying the out-of-band counts, a
    /// column header, then one `bin_lo,bin_hi,count` row per bin.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# zeros={} underflow={} overflow={}\nbin_lo,bin_hi,count\n",
            self.zeros, self.underflow, self.overflow
        );
        for (i, &c) in self.counts.iter().enumerate() {
            out.push_str(&format!(
                "{:e},{:e},{c}\n",
                self.bin_edges[i],
                self.bin_edges[i + 1]
            ));
        }
        out
    }

    /// Parse the `to_csv` format back. Validates edge continuity and ordering.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty histogram CSV".into()))?;
        let mut zeros = None;
        let mut underflow = None;
        let mut overflow = None;
        if let Some(rest) = header.strip_prefix('#') {
            for tok in rest.split_whitespace() {
                let Some((key, val)) = tok.split_once('=') else { continue };
                let parsed: u64 = val
                    .parse()
                    .map_err(|_| Error::Format(format!("bad count in '{tok}'")))?;
                match key {
                    "zeros" => zeros = Some(parsed),
                    "underflow" => underflow = Some(parsed),
                    "overflow" => overflow = Some(parsed),
                    _ => {}
                }
            }
        }
        let (Some(zeros), Some(underflow), Some(overflow)) = (zeros, underflow, overflow) else {
            return Err(Error::Format(
                "histogram CSV must start with '# zeros=.. underflow=.. overflow=..'".into(),
            ));
        };
        match lines.next() {
            Some("bin_lo,bin_hi,count") => {}
            other => {
                return Err(Error::Format(format!(
                    "expected column header 'bin_lo,bin_hi,count', got {other:?}"
                )))
            }
        }
        let mut edges: Vec<f64> = Vec::new();
        let mut counts = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let (Some(lo), Some(hi), Some(c), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Format(format!("bad histogram row '{line}'")));
            };
            let lo: f64 = lo.parse().map_err(|_| Error::Format(format!("bad bin_lo '{lo}'")))?;
            let hi: f64 = hi.parse().map_err(|_| Error::Format(format!("bad bin_hi '{hi}'")))?;
            let c: u64 = c.parse().map_err(|_| Error::Format(format!("bad count '{c}'")))?;
            if let Some(&last) = edges.last() {
                if lo != last {
                    return Err(Error::Format(format!(
                        "bin edges not contiguous: {last} then {lo}"
                    )));
                }
            } else {
                edges.push(lo);
            }
            if hi <= lo {
                return Err(Error::Format(format!("bin edges not increasing at {lo}")));
            }
            edges.push(hi);
            counts.push(c);
        }
        if counts.is_empty() {
            return Err(Error::Format("histogram CSV has no bins".into()));
        }
        Ok(LogMagnitudeHistogram { bin_edges: edges, counts, underflow, overflow, zeros })
    }
}

/// Shorthand for histogramming a snapshot's values.
pub fn build_histogram(snapshot: &MagnitudeSnapshot) -> Result<LogMagnitudeHistogram> {
    LogMagnitudeHistogram::from_values(&snapshot.values)
}

/// Nearest-rank percentile over the *positive* values only: sort ascending,
/// return element ceil(p/100 * n) - 1. Exact zeros are excluded by design;
/// p must lie strictly inside (0, 100).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::contract(format!(
            "percentile p must lie in (0, 100), got {p}"
        )));
    }
    let mut pos: Vec<f64> = values.iter().copied().filter(|&x| x > 0.0).collect();
    if pos.is_empty() {
        return Err(Error::contract(
            "percentile undefined: no positive values in snapshot".into(),
        ));
    }
    if pos.iter().any(|x| x.is_nan()) {
        return Err(Error::numeric("NaN in percentile input".into()));
    }
    pos.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    // p*n first, then /100: keeps exact-integer ranks exact (e.g. p=2, n=100).
    let rank = ((p * pos.len() as f64) / 100.0).ceil() as usize;
    Ok(pos[rank.clamp(1, pos.len()) - 1])
}

/// Fraction of values strictly greater than eps. Zeros count in the
/// denominator; the comparison is strict.
pub fn fraction_above(values: &[f64], eps: f64) -> Result<f64> {
    if !(eps >= 0.0) {
        return Err(Error::contract(format!("eps must be >= 0, got {eps}")));
    }
    if values.is_empty() {
        return Err(Error::contract("fraction_above needs a non-empty snapshot".into()));
    }
    let above = values.iter().filter(|&&x| x > eps).count();
    Ok(above as f64 / values.len() as f64)
}
