//! Post-hoc age metrics over a finished run: peak AoI, worst-case age,
//! throughput and a per-run summary table.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::trainer::{DeliveryEvent, MetricsLog};

/// Per-source age trajectories plus the delivery events that reset them.
///
/// Row `t` of `ages` holds every source's age after epoch `t + 1`; the world
/// clock equals the epoch number.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeSeries {
    pub ages: Vec<Vec<u64>>,
    pub deliveries: Vec<DeliveryEvent>,
    pub num_sources: usize,
}

impl AgeSeries {
    pub fn from_log(log: &MetricsLog) -> Self {
        Self {
            ages: log.source_ages.clone(),
            deliveries: log.deliveries.clone(),
            num_sources: log.num_sources,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakStats {
    /// Mean peak of each source.
    pub per_source: Vec<f64>,
    /// Mean of `per_source`.
    pub mean: f64,
    /// Population variance of `per_source`.
    pub variance: f64,
    /// Number of delivery events.
    pub peak_count: usize,
}

/// Peak age of information.
///
/// Each delivery contributes the age its source had just before the delivery
/// was applied. A source that was never delivered contributes its final age
/// as a single peak.
pub fn peak_aoi(series: &AgeSeries) -> Result<PeakStats> {
    let last = series.ages.last().ok_or(Error::EmptySeries)?;
    let n = series.num_sources;
    if n == 0 || last.len() != n {
        return Err(Error::EmptySeries);
    }
    let mut last_gen = vec![0u64; n];
    let mut peaks: Vec<Vec<u64>> = vec![Vec::new(); n];
    for d in &series.deliveries {
        if d.source >= n {
            return Err(Error::LengthMismatch { expected: n, got: d.source + 1 });
        }
        peaks[d.source].push(d.epoch.saturating_sub(last_gen[d.source]));
        last_gen[d.source] = last_gen[d.source].max(d.latest_gen);
    }
    let per_source: Vec<f64> = peaks
        .iter()
        .zip(last)
        .map(|(p, &final_age)| {
            if p.is_empty() {
                final_age as f64
            } else {
                p.iter().sum::<u64>() as f64 / p.len() as f64
            }
        })
        .collect();
    let (mean, variance) = mean_var(&per_source);
    Ok(PeakStats { per_source, mean, variance, peak_count: series.deliveries.len() })
}

/// Largest source age at each slot.
pub fn worst_aoi(ages: &[Vec<u64>]) -> Vec<u64> {
    ages.iter().map(|row| row.iter().copied().max().unwrap_or(0)).collect()
}

/// Cumulative delivered bits and pieces after each of `epochs` epochs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Throughput {
    pub bits: Vec<u64>,
    pub pieces: Vec<u64>,
}

pub fn throughput(deliveries: &[DeliveryEvent], epochs: usize) -> Throughput {
    let mut bits = vec![0u64; epochs];
    let mut pieces = vec![0u64; epochs];
    for d in deliveries {
        if let Some(i) = (d.epoch as usize).checked_sub(1).filter(|&i| i < epochs) {
            bits[i] += d.bits;
            pieces[i] += 1;
        }
    }
    for i in 1..epochs {
        bits[i] += bits[i - 1];
        pieces[i] += pieces[i - 1];
    }
    Throughput { bits, pieces }
}

/// Replays the age law over a delivery log: every age grows by one per epoch
/// and drops to `epoch - latest_gen` when fresher data arrives.
pub fn reconstruct_ages(deliveries: &[DeliveryEvent], num_sources: usize, epochs: usize) -> Vec<Vec<u64>> {
    let mut last_gen = vec![0u64; num_sources];
    let mut next = deliveries.iter().peekable();
    (1..=epochs as u64)
        .map(|t| {
            while let Some(d) = next.next_if(|d| d.epoch <= t) {
                if let Some(g) = last_gen.get_mut(d.source) {
                    *g = (*g).max(d.latest_gen);
                }
            }
            last_gen.iter().map(|&g| t.saturating_sub(g)).collect()
        })
        .collect()
}

/// One line of the run summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub mean_age: f64,
    pub std_age: f64,
    pub peak_count: usize,
    pub mean_peak: f64,
    pub var_peak: f64,
    pub worst_age: u64,
    pub delivered_bits: u64,
}

/// Summarises a run; age statistics cover the last `window` epochs (all if 0).
pub fn summarize(label: &str, log: &MetricsLog, window: usize) -> Result<SummaryRow> {
    let n = log.records.len();
    if n == 0 {
        return Err(Error::EmptySeries);
    }
    let from = if window == 0 { 0 } else { n - window.min(n) };
    let tail: Vec<f64> = log.records[from..].iter().map(|r| r.avg_age).collect();
    let (mean_age, var_age) = mean_var(&tail);
    let peaks = peak_aoi(&AgeSeries::from_log(log))?;
    let last = &log.records[n - 1];
    Ok(SummaryRow {
        label: label.to_string(),
        mean_age,
        std_age: var_age.sqrt(),
        peak_count: peaks.peak_count,
        mean_peak: peaks.mean,
        var_peak: peaks.variance,
        worst_age: log.records[from..].iter().map(|r| r.worst_age).max().unwrap_or(last.worst_age),
        delivered_bits: last.delivered_bits,
    })
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("label,mean_age,std_age,peak_count,mean_peak_age,var_peak_age,worst_age,delivered_bits\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.label, r.mean_age, r.std_age, r.peak_count, r.mean_peak, r.var_peak, r.worst_age, r.delivered_bits
        )
        .unwrap();
    }
    out
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(epoch: u64, source: usize, bits: u64, latest_gen: u64) -> DeliveryEvent {
        DeliveryEvent { epoch, edge: 0, source, bits, latest_gen }
    }

    /// One source delivered every `period` slots with data generated that slot.
    fn sawtooth(period: u64, epochs: u64) -> AgeSeries {
        let deliveries: Vec<_> = (1..=epochs / period).map(|k| event(k * period, 0, 10, k * period)).collect();
        let ages = reconstruct_ages(&deliveries, 1, epochs as usize);
        AgeSeries { ages, deliveries, num_sources: 1 }
    }

    #[test]
    fn regular_sawtooth_has_equal_peaks() {
        let s = sawtooth(10, 100);
        let p = peak_aoi(&s).unwrap();
        assert_eq!(p.peak_count, 10);
        assert_eq!(p.per_source, vec![10.0]);
        assert_eq!(p.mean, 10.0);
        assert_eq!(p.variance, 0.0);
        // Hand trace: ages run 1..9 then drop to 0 at each delivery.
        assert_eq!(&s.ages[..11].iter().map(|r| r[0]).collect::<Vec<_>>(), &[1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1]);
    }

    #[test]
    fn no_deliveries_fall_back_to_final_age() {
        let ages = reconstruct_ages(&[], 3, 25);
        let p = peak_aoi(&AgeSeries { ages, deliveries: vec![], num_sources: 3 }).unwrap();
        assert_eq!(p.mean, 25.0);
        assert_eq!(p.peak_count, 0);
    }

    #[test]
    fn peak_count_matches_delivery_events() {
        let d = vec![event(3, 0, 5, 2), event(3, 1, 5, 1), event(7, 0, 5, 6), event(9, 0, 5, 3)];
        let ages = reconstruct_ages(&d, 2, 12);
        let p = peak_aoi(&AgeSeries { ages, deliveries: d.clone(), num_sources: 2 }).unwrap();
        assert_eq!(p.peak_count, d.len());
        // Source 0 peaks: 3-0, 7-2, 9-6 (the stale piece does not lower the age).
        assert_eq!(p.per_source[0], (3.0 + 5.0 + 3.0) / 3.0);
        assert_eq!(p.per_source[1], 3.0);
    }

    #[test]
    fn peak_mean_dominates_sawtooth_mean() {
        let s = sawtooth(7, 700);
        let p = peak_aoi(&s).unwrap();
        let mean = s.ages.iter().map(|r| r[0] as f64).sum::<f64>() / s.ages.len() as f64;
        assert!(p.mean >= mean);
    }

    #[test]
    fn empty_series_is_an_error() {
        let s = AgeSeries { ages: vec![], deliveries: vec![], num_sources: 1 };
        assert!(matches!(peak_aoi(&s), Err(Error::EmptySeries)));
    }

    #[test]
    fn worst_is_pointwise_max() {
        assert_eq!(worst_aoi(&[vec![2, 4, 9]]), vec![9]);
        assert_eq!(worst_aoi(&[vec![5], vec![6]]), vec![5, 6]);
        let rows = vec![vec![1, 7, 3], vec![0, 0, 2]];
        for (w, r) in worst_aoi(&rows).iter().zip(&rows) {
            assert!(*w as f64 >= r.iter().sum::<u64>() as f64 / r.len() as f64);
        }
    }

    #[test]
    fn throughput_sums_events() {
        let t = throughput(&[], 4);
        assert_eq!(t.bits, vec![0; 4]);
        assert_eq!(t.pieces, vec![0; 4]);
        let t = throughput(&[event(2, 0, 8_000, 1), event(4, 1, 12_000, 3)], 5);
        assert_eq!(t.bits, vec![0, 8_000, 8_000, 20_000, 20_000]);
        assert_eq!(t.pieces, vec![0, 1, 1, 2, 2]);
        assert!(t.bits.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn summary_csv_has_one_line_per_row() {
        let mut log = MetricsLog::new(vec!["edge0".into()], 1);
        let s = sawtooth(5, 20);
        log.source_ages = s.ages.clone();
        log.deliveries = s.deliveries.clone();
        log.records = s
            .ages
            .iter()
            .enumerate()
            .map(|(i, a)| crate::trainer::EpochRecord {
                epoch: i as u64 + 1,
                avg_age: a[0] as f64,
                worst_age: a[0],
                delivered_bits: 0,
                delivered_pieces: 0,
                agents: vec![None],
            })
            .collect();
        let row = summarize("run", &log, 0).unwrap();
        assert_eq!(row.peak_count, 4);
        assert_eq!(row.mean_peak, 5.0);
        assert_eq!(row.mean_age, 2.0);
        assert_eq!(summary_csv(&[row]).lines().count(), 2);
    }
}
