//! CSV tables for histograms, JTIs and sweeps. Column names carry units.

use std::io::Write;

use crate::analysis::BellCurve;
use crate::analytic::{DelayHistogram, Jti};
use crate::correlator::{CoincidenceHistogram, Jti2dCounts};
use crate::error::Result;

pub fn write_jti_csv<W: Write>(jti: &Jti, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t_signal_ps", "t_idler_ps", "probability_per_bin"])?;
    for (s, ts) in jti.signal_axis.centers().enumerate() {
        for (i, ti) in jti.idler_axis.centers().enumerate() {
            out.serialize((ts, ti, jti.get(s, i)))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Counts on the same bin centers as the analytic JTI.
pub fn write_jti_counts_csv<W: Write>(jti: &Jti2dCounts, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t_signal_ps", "t_idler_ps", "counts"])?;
    let axis = jti.axis();
    for (s, ts) in axis.centers().enumerate() {
        for (i, ti) in axis.centers().enumerate() {
            out.serialize((ts, ti, jti.get(s, i)))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_delay_csv<W: Write>(hist: &DelayHistogram, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["delay_ps", "probability_per_bin"])?;
    for (d, v) in hist.axis.centers().zip(&hist.values) {
        out.serialize((d, v))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_delay_counts_csv<W: Write>(hist: &CoincidenceHistogram, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["delay_start_ps", "delay_end_ps", "counts"])?;
    for (k, c) in hist.counts.iter().enumerate() {
        let s = hist.bin_start(k);
        out.serialize((s, s + hist.bin_ps as i64 - 1, c))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_bell_csv<W: Write>(curve: &BellCurve, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "fringe_argument_rad",
        "actuator_phase_rad",
        "tps_power_mw",
        "coincidences",
        "accidentals",
        "central_coincidences",
        "central_accidentals",
        "integration_s",
    ])?;
    for p in &curve.points {
        out.serialize((
            p.fringe_argument_rad,
            p.actuator_phase_rad,
            p.tps_power_mw,
            p.coincidences,
            p.accidentals,
            p.central_coincidences,
            p.central_accidentals,
            p.integration_s,
        ))?;
    }
    out.flush()?;
    Ok(())
}
