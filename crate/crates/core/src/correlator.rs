//! Coincidence counting between two sorted tag streams.
//!
//! Delays are `t_b − t_a` in integer picoseconds. Histogram bin `k` holds
//! delays in `[−range + k·bin, −range + (k+1)·bin)`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::analytic::{AxisSpec, DelayHistogram};
use crate::error::{Error, Result};
use crate::eventgen::Car;
use crate::timetag::PulseClock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Every a/b pair within range.
    #[default]
    AllPairs,
    /// Each tag joins at most one pair, earliest partner first.
    FirstMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoincidenceConfig {
    /// Half-width of the counting window around zero delay.
    pub window_ps: u64,
    pub bin_ps: u64,
    /// Histogram covers delays in `[−range, range]`.
    pub range_ps: u64,
    pub pump_period_ps: Option<f64>,
    /// Shift for the accidental window, in pump periods.
    pub accidental_offset: i64,
    /// Folded JTI axes start here, relative to the pulse's early bin.
    pub fold_start_ps: i64,
    pub fold_span_ps: u64,
    #[serde(default)]
    pub pairing: Pairing,
}

impl Default for CoincidenceConfig {
    fn default() -> Self {
        Self {
            window_ps: 100,
            bin_ps: 1,
            range_ps: 400,
            pump_period_ps: None,
            accidental_offset: 5,
            fold_start_ps: -300,
            fold_span_ps: 800,
            pairing: Pairing::AllPairs,
        }
    }
}

impl CoincidenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bin_ps == 0 || self.bin_ps > self.window_ps {
            return Err(Error::Config(
                "histogram bin must satisfy 0 < bin <= window".into(),
            ));
        }
        if self.range_ps < self.window_ps {
            return Err(Error::Config(
                "histogram range must cover the counting window".into(),
            ));
        }
        if let Some(p) = self.pump_period_ps {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config("pump period must be positive".into()));
            }
        }
        if self.accidental_offset == 0 {
            return Err(Error::Config("accidental offset must be non-zero".into()));
        }
        if self.fold_span_ps == 0 {
            return Err(Error::Config("fold span must be positive".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        (2 * self.range_ps / self.bin_ps) as usize + 1
    }
}

/// Integer-count delay histogram.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub range_ps: u64,
    pub bin_ps: u64,
    pub counts: Vec<u64>,
}

impl CoincidenceHistogram {
    pub fn new(range_ps: u64, bin_ps: u64) -> Self {
        Self {
            range_ps,
            bin_ps,
            counts: vec![0; (2 * range_ps / bin_ps) as usize + 1],
        }
    }

    #[inline]
    fn record(&mut self, delay: i64) {
        let k = ((delay + self.range_ps as i64) as u64 / self.bin_ps) as usize;
        if let Some(c) = self.counts.get_mut(k) {
            *c += 1;
        }
    }

    /// Lower edge of bin `k` in integer picoseconds.
    pub fn bin_start(&self, k: usize) -> i64 {
        -(self.range_ps as i64) + (k as u64 * self.bin_ps) as i64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Continuous axis matching the integer bins, for overlay with
    /// analytic distributions.
    pub fn axis(&self) -> AxisSpec {
        AxisSpec {
            start_ps: -(self.range_ps as f64) - 0.5,
            step_ps: self.bin_ps as f64,
            n: self.counts.len(),
        }
    }

    pub fn sum_delays(&self, lo: i64, hi: i64) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let s = self.bin_start(*k);
                s >= lo && s + self.bin_ps as i64 - 1 <= hi
            })
            .map(|(_, c)| c)
            .sum()
    }

    pub fn rebin(&self, factor: u64) -> Self {
        let factor = factor.max(1);
        let counts = self
            .counts
            .chunks(factor as usize)
            .map(|c| c.iter().sum())
            .collect();
        Self {
            range_ps: self.range_ps,
            bin_ps: self.bin_ps * factor,
            counts,
        }
    }

    pub fn to_float(&self) -> DelayHistogram {
        DelayHistogram {
            axis: self.axis(),
            values: self.counts.iter().map(|&c| c as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coincidences {
    pub histogram: CoincidenceHistogram,
    /// Pairs with `|delay| <= window`.
    pub in_window: u64,
    pub tags_a: u64,
    pub tags_b: u64,
}

pub fn check_sorted(times: &[u64]) -> Result<()> {
    match times.windows(2).position(|w| w[1] < w[0]) {
        Some(i) => Err(Error::Unsorted { index: i + 1 }),
        None => Ok(()),
    }
}

/// Visit every pair with `|b − a| <= range` in order of `a`, then `b`.
fn for_each_pair(
    a: &[u64],
    b: &[u64],
    range: u64,
    pairing: Pairing,
    mut f: impl FnMut(usize, usize, i64),
) {
    let mut lo = 0usize;
    for (i, &ta) in a.iter().enumerate() {
        let floor = ta.saturating_sub(range);
        while lo < b.len() && b[lo] < floor {
            lo += 1;
        }
        match pairing {
            Pairing::AllPairs => {
                let mut j = lo;
                while j < b.len() && b[j] <= ta + range {
                    f(i, j, b[j] as i64 - ta as i64);
                    j += 1;
                }
            }
            Pairing::FirstMatch => {
                if lo < b.len() && b[lo] <= ta + range {
                    f(i, lo, b[lo] as i64 - ta as i64);
                    lo += 1;
                }
            }
        }
    }
}

/// Histogram all pairs within the configured range.
pub fn coincide(a: &[u64], b: &[u64], cfg: &CoincidenceConfig) -> Result<Coincidences> {
    cfg.validate()?;
    check_sorted(a)?;
    check_sorted(b)?;
    let mut histogram = CoincidenceHistogram::new(cfg.range_ps, cfg.bin_ps);
    let mut in_window = 0;
    let w = cfg.window_ps as i64;
    for_each_pair(a, b, cfg.range_ps, cfg.pairing, |_, _, d| {
        histogram.record(d);
        if d.abs() <= w {
            in_window += 1;
        }
    });
    Ok(Coincidences {
        histogram,
        in_window,
        tags_a: a.len() as u64,
        tags_b: b.len() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coincidence {
    pub index_a: usize,
    pub index_b: usize,
    pub delay_ps: i64,
}

pub fn coincidence_list(
    a: &[u64],
    b: &[u64],
    range_ps: u64,
    pairing: Pairing,
) -> Result<Vec<Coincidence>> {
    check_sorted(a)?;
    check_sorted(b)?;
    let mut out = Vec::new();
    for_each_pair(a, b, range_ps, pairing, |index_a, index_b, delay_ps| {
        out.push(Coincidence {
            index_a,
            index_b,
            delay_ps,
        })
    });
    Ok(out)
}

/// Incremental version of [`coincide`] for streams that arrive in chunks.
/// Results do not depend on where the chunks are split.
#[derive(Debug, Clone)]
pub struct StreamingCorrelator {
    cfg: CoincidenceConfig,
    pending_a: VecDeque<u64>,
    buffer_b: VecDeque<u64>,
    /// First `buffer_b` entry still available to first-match pairing.
    free_b: usize,
    last_a: Option<u64>,
    last_b: Option<u64>,
    seen_a: u64,
    seen_b: u64,
    histogram: CoincidenceHistogram,
    in_window: u64,
}

impl StreamingCorrelator {
    pub fn new(cfg: CoincidenceConfig) -> Result<Self> {
        cfg.validate()?;
        let histogram = CoincidenceHistogram::new(cfg.range_ps, cfg.bin_ps);
        Ok(Self {
            cfg,
            pending_a: VecDeque::new(),
            buffer_b: VecDeque::new(),
            free_b: 0,
            last_a: None,
            last_b: None,
            seen_a: 0,
            seen_b: 0,
            histogram,
            in_window: 0,
        })
    }

    pub fn feed_a(&mut self, chunk: &[u64]) -> Result<()> {
        for &t in chunk {
            if self.last_a.is_some_and(|p| t < p) {
                return Err(Error::Unsorted {
                    index: self.seen_a as usize,
                });
            }
            self.last_a = Some(t);
            self.seen_a += 1;
            self.pending_a.push_back(t);
        }
        self.drain(false);
        Ok(())
    }

    pub fn feed_b(&mut self, chunk: &[u64]) -> Result<()> {
        for &t in chunk {
            if self.last_b.is_some_and(|p| t < p) {
                return Err(Error::Unsorted {
                    index: self.seen_b as usize,
                });
            }
            self.last_b = Some(t);
            self.seen_b += 1;
            self.buffer_b.push_back(t);
        }
        self.drain(false);
        Ok(())
    }

    /// Tags currently held in memory.
    pub fn buffered(&self) -> usize {
        self.pending_a.len() + self.buffer_b.len()
    }

    pub fn finish(mut self) -> Coincidences {
        self.drain(true);
        Coincidences {
            histogram: self.histogram,
            in_window: self.in_window,
            tags_a: self.seen_a,
            tags_b: self.seen_b,
        }
    }

    fn drain(&mut self, at_end: bool) {
        let range = self.cfg.range_ps;
        let w = self.cfg.window_ps as i64;
        while let Some(&ta) = self.pending_a.front() {
            // every b that can pair with ta has arrived once a later b is seen
            let complete = at_end || self.last_b.is_some_and(|lb| lb > ta + range);
            if !complete {
                break;
            }
            self.pending_a.pop_front();
            let floor = ta.saturating_sub(range);
            while self.buffer_b.front().is_some_and(|&tb| tb < floor) {
                self.buffer_b.pop_front();
                self.free_b = self.free_b.saturating_sub(1);
            }
            let mut emit = |d: i64, h: &mut CoincidenceHistogram| {
                h.record(d);
                if d.abs() <= w {
                    self.in_window += 1;
                }
            };
            match self.cfg.pairing {
                Pairing::AllPairs => {
                    for &tb in self.buffer_b.iter().take_while(|&&tb| tb <= ta + range) {
                        emit(tb as i64 - ta as i64, &mut self.histogram);
                    }
                }
                Pairing::FirstMatch => {
                    if let Some(&tb) = self.buffer_b.get(self.free_b) {
                        if tb >= floor && tb <= ta + range {
                            emit(tb as i64 - ta as i64, &mut self.histogram);
                            self.free_b += 1;
                        }
                    }
                }
            }
        }
        // b tags older than any future a's window are no longer needed
        let horizon = self.pending_a.front().copied().or(self.last_a);
        if let Some(h) = horizon {
            let floor = h.saturating_sub(range);
            while self.buffer_b.front().is_some_and(|&tb| tb < floor) {
                self.buffer_b.pop_front();
                self.free_b = self.free_b.saturating_sub(1);
            }
        }
    }
}

/// Two-dimensional coincidence counts folded onto one pump frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Jti2dCounts {
    pub start_ps: i64,
    pub bin_ps: u64,
    /// Bins per axis.
    pub n: usize,
    /// Row-major, signal axis first.
    pub counts: Vec<u64>,
    pub tags_signal: u64,
    pub tags_idler: u64,
}

impl Jti2dCounts {
    pub fn get(&self, signal_bin: usize, idler_bin: usize) -> u64 {
        self.counts[signal_bin * self.n + idler_bin]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn axis(&self) -> AxisSpec {
        AxisSpec {
            start_ps: self.start_ps as f64 - 0.5,
            step_ps: self.bin_ps as f64,
            n: self.n,
        }
    }

    /// Number of 8-connected clusters of cells holding at least
    /// `threshold` counts.
    pub fn clusters(&self, threshold: u64) -> usize {
        let n = self.n;
        let mut seen = vec![false; self.counts.len()];
        let mut clusters = 0;
        for start in 0..self.counts.len() {
            if seen[start] || self.counts[start] < threshold {
                continue;
            }
            clusters += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(c) = stack.pop() {
                let (r, q) = ((c / n) as i64, (c % n) as i64);
                for dr in -1..=1 {
                    for dq in -1..=1 {
                        let (nr, nq) = (r + dr, q + dq);
                        if nr < 0 || nq < 0 || nr >= n as i64 || nq >= n as i64 {
                            continue;
                        }
                        let k = nr as usize * n + nq as usize;
                        if !seen[k] && self.counts[k] >= threshold {
                            seen[k] = true;
                            stack.push(k);
                        }
                    }
                }
            }
        }
        clusters
    }
}

/// Fold signal/idler coincidences onto the pump frame of the signal photon.
pub fn fold_jti(
    signal: &[u64],
    idler: &[u64],
    clock: Option<PulseClock>,
    cfg: &CoincidenceConfig,
) -> Result<Jti2dCounts> {
    cfg.validate()?;
    let clock = clock
        .or_else(|| cfg.pump_period_ps.map(|p| PulseClock::new(p, 0)))
        .ok_or_else(|| Error::Config("folding needs a pump period".into()))?;
    check_sorted(signal)?;
    check_sorted(idler)?;
    let n = (cfg.fold_span_ps / cfg.bin_ps) as usize;
    let mut counts = vec![0u64; n * n];
    let span = (n as u64 * cfg.bin_ps) as i64;
    let start = cfg.fold_start_ps;
    let bin = cfg.bin_ps as i64;
    for_each_pair(signal, idler, cfg.fold_span_ps, cfg.pairing, |i, _, d| {
        let (_, ts) = clock.fold(signal[i], start);
        let ti = ts + d;
        let (rs, ri) = (ts - start, ti - start);
        if (0..span).contains(&rs) && (0..span).contains(&ri) {
            counts[(rs / bin) as usize * n + (ri / bin) as usize] += 1;
        }
    });
    Ok(Jti2dCounts {
        start_ps: start,
        bin_ps: cfg.bin_ps,
        n,
        counts,
        tags_signal: signal.len() as u64,
        tags_idler: idler.len() as u64,
    })
}

/// Counts in the true window and in a window shifted by whole pump periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccidentalEstimate {
    pub true_window: u64,
    pub shifted_window: u64,
    pub shift_ps: i64,
    /// `true / shifted`.
    pub car_ratio: Car,
    /// `(true − shifted) / shifted`.
    pub car_excess: Car,
}

/// Pairs with `lo <= t_b − t_a <= hi`; inputs must be sorted.
pub fn count_delay_range(a: &[u64], b: &[u64], lo: i64, hi: i64) -> u64 {
    let mut count = 0;
    let mut start = 0usize;
    for &ta in a {
        let floor = ta as i64 + lo;
        while start < b.len() && (b[start] as i64) < floor {
            start += 1;
        }
        let mut j = start;
        while j < b.len() && (b[j] as i64) <= ta as i64 + hi {
            count += 1;
            j += 1;
        }
    }
    count
}

pub fn estimate_accidentals(
    a: &[u64],
    b: &[u64],
    clock_period_ps: Option<f64>,
    duration_ps: u64,
    cfg: &CoincidenceConfig,
) -> Result<AccidentalEstimate> {
    cfg.validate()?;
    check_sorted(a)?;
    check_sorted(b)?;
    let period = clock_period_ps
        .or(cfg.pump_period_ps)
        .ok_or_else(|| Error::Config("accidental estimate needs a pump period".into()))?;
    let shift = (cfg.accidental_offset as f64 * period).round() as i64;
    if shift.unsigned_abs() > duration_ps {
        return Err(Error::Config(format!(
            "accidental shift of {shift} ps exceeds the run duration of {duration_ps} ps"
        )));
    }
    let w = cfg.window_ps as i64;
    let t = count_delay_range(a, b, -w, w);
    let s = count_delay_range(a, b, shift - w, shift + w);
    let (car_ratio, car_excess) = if s == 0 {
        (Car::Infinite, Car::Infinite)
    } else {
        (
            Car::Finite(t as f64 / s as f64),
            Car::Finite((t as f64 - s as f64) / s as f64),
        )
    };
    Ok(AccidentalEstimate {
        true_window: t,
        shifted_window: s,
        shift_ps: shift,
        car_ratio,
        car_excess,
    })
}
