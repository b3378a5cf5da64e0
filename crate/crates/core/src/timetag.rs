//! Detection events and their on-disk formats.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "TTAG" | version: u8 | header_len: u32 | header: JSON (header_len bytes)
//! then records of 9 bytes: channel: u8 | time_ps: u64
//! ```
//!
//! Records are ordered by time across all channels. The CSV form is a
//! `channel,time_ps` table with a header row.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TTAG";
pub const FORMAT_VERSION: u8 = 1;
pub const RECORD_BYTES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    pub channel: u8,
    pub time_ps: u64,
}

impl TimeTag {
    fn sort_key(&self) -> (u64, u8) {
        (self.time_ps, self.channel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunHeader {
    pub duration_ps: u64,
    pub rep_rate_mhz: f64,
    pub n_pulses: u64,
    /// Time of the first pulse's early bin.
    pub emission_offset_ps: u64,
    pub seed: u64,
    /// SHA-256 of the canonical configuration JSON.
    pub params_digest: String,
}

impl RunHeader {
    pub fn clock(&self) -> PulseClock {
        PulseClock::new(1e6 / self.rep_rate_mhz, self.emission_offset_ps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeTagStream {
    pub header: RunHeader,
    pub tags: Vec<TimeTag>,
}

impl TimeTagStream {
    /// Build from tags in any order; sorts by `(time, channel)`.
    pub fn from_unsorted(header: RunHeader, mut tags: Vec<TimeTag>) -> Self {
        tags.sort_unstable_by_key(TimeTag::sort_key);
        Self { header, tags }
    }

    /// Timestamps of one channel, in order.
    pub fn channel(&self, channel: u8) -> Vec<u64> {
        self.tags
            .iter()
            .filter(|t| t.channel == channel)
            .map(|t| t.time_ps)
            .collect()
    }

    pub fn count(&self, channel: u8) -> usize {
        self.tags.iter().filter(|t| t.channel == channel).count()
    }

    /// Checks that timestamps never decrease within a channel.
    pub fn validate(&self) -> Result<()> {
        check_channel_order(&self.tags)
    }

    pub fn write_ttag<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&[FORMAT_VERSION])?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(RECORD_BYTES * self.tags.len().min(1 << 16));
        for chunk in self.tags.chunks(1 << 16) {
            buf.clear();
            for t in chunk {
                buf.push(t.channel);
                buf.extend_from_slice(&t.time_ps.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_ttag<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)
            .map_err(|_| corrupt(0, "truncated preamble"))?;
        if &magic[..4] != MAGIC {
            return Err(corrupt(0, "bad magic"));
        }
        if magic[4] != FORMAT_VERSION {
            return Err(corrupt(0, format!("unsupported version {}", magic[4])));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)
            .map_err(|_| corrupt(0, "truncated header length"))?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)
            .map_err(|_| corrupt(0, "truncated header"))?;
        let header: RunHeader =
            serde_json::from_slice(&header).map_err(|e| corrupt(0, format!("header: {e}")))?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() % RECORD_BYTES != 0 {
            return Err(corrupt(
                body.len() / RECORD_BYTES,
                "trailing partial record",
            ));
        }
        let tags: Vec<TimeTag> = body
            .chunks_exact(RECORD_BYTES)
            .map(|rec| TimeTag {
                channel: rec[0],
                time_ps: u64::from_le_bytes(rec[1..].try_into().unwrap()),
            })
            .collect();
        check_channel_order(&tags)?;
        Ok(Self { header, tags })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_tags_csv(&self.tags, w)
    }
}

/// Size in bytes of a binary file holding `n_tags` records.
pub fn ttag_file_size(header: &RunHeader, n_tags: usize) -> Result<usize> {
    Ok(4 + 1 + 4 + serde_json::to_vec(header)?.len() + RECORD_BYTES * n_tags)
}

pub fn write_tags_csv<W: Write>(tags: &[TimeTag], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["channel", "time_ps"])?;
    for t in tags {
        out.serialize((t.channel, t.time_ps))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_tags_csv<R: Read>(r: R) -> Result<Vec<TimeTag>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut tags = Vec::new();
    for (index, rec) in rdr.deserialize::<(u8, u64)>().enumerate() {
        let (channel, time_ps) = rec.map_err(|e| corrupt(index, e.to_string()))?;
        tags.push(TimeTag { channel, time_ps });
    }
    check_channel_order(&tags)?;
    Ok(tags)
}

fn corrupt(index: usize, reason: impl Into<String>) -> Error {
    Error::Corrupt {
        index,
        reason: reason.into(),
    }
}

fn check_channel_order(tags: &[TimeTag]) -> Result<()> {
    let mut last = [None::<u64>; 256];
    for (index, t) in tags.iter().enumerate() {
        let slot = &mut last[t.channel as usize];
        if slot.is_some_and(|prev| t.time_ps < prev) {
            return Err(Error::Unsorted { index });
        }
        *slot = Some(t.time_ps);
    }
    Ok(())
}

/// Pump pulse times `offset + round(k * period)` in integer picoseconds,
/// exact for long runs with non-integer periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseClock {
    pub period_ps: f64,
    pub offset_ps: u64,
}

impl PulseClock {
    pub fn new(period_ps: f64, offset_ps: u64) -> Self {
        Self {
            period_ps,
            offset_ps,
        }
    }

    pub fn origin(&self, k: u64) -> u64 {
        let whole = self.period_ps.trunc() as u64;
        let frac = self.period_ps.fract();
        self.offset_ps + k * whole + (k as f64 * frac).round() as u64
    }

    /// Pulse index `k` and time relative to its origin, chosen so the
    /// relative time lies in `[start_ps, start_ps + period)`.
    pub fn fold(&self, t_ps: u64, start_ps: i64) -> (i64, i64) {
        let guess = ((t_ps as f64 - self.offset_ps as f64 - start_ps as f64) / self.period_ps)
            .floor() as i64;
        let origin = |k: i64| -> i64 {
            if k >= 0 {
                self.origin(k as u64) as i64
            } else {
                self.offset_ps as i64 - (self.origin((-k) as u64) as i64 - self.offset_ps as i64)
            }
        };
        let mut k = guess;
        let t = t_ps as i64;
        while t - origin(k) < start_ps {
            k -= 1;
        }
        while t - origin(k + 1) >= start_ps {
            k += 1;
        }
        (k, t - origin(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> RunHeader {
        RunHeader {
            duration_ps: 1_000_000,
            rep_rate_mhz: 500.0,
            n_pulses: 500,
            emission_offset_ps: 500,
            seed: 7,
            params_digest: "abc".into(),
        }
    }

    #[test]
    fn binary_round_trip_and_size() {
        let tags = vec![
            TimeTag {
                channel: 1,
                time_ps: 10,
            },
            TimeTag {
                channel: 0,
                time_ps: 12,
            },
            TimeTag {
                channel: 1,
                time_ps: u64::MAX / 2,
            },
        ];
        let stream = TimeTagStream::from_unsorted(header(), tags);
        let mut buf = Vec::new();
        stream.write_ttag(&mut buf).unwrap();
        assert_eq!(buf.len(), ttag_file_size(&stream.header, 3).unwrap());
        assert_eq!(&buf[..4], b"TTAG");
        let back = TimeTagStream::read_ttag(&buf[..]).unwrap();
        assert_eq!(back, stream);
    }

    #[test]
    fn header_only_file() {
        let stream = TimeTagStream {
            header: header(),
            tags: vec![],
        };
        let mut buf = Vec::new();
        stream.write_ttag(&mut buf).unwrap();
        assert_eq!(buf.len(), ttag_file_size(&stream.header, 0).unwrap());
        assert!(TimeTagStream::read_ttag(&buf[..]).unwrap().tags.is_empty());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let stream = TimeTagStream {
            header: header(),
            tags: vec![TimeTag {
                channel: 0,
                time_ps: 5,
            }],
        };
        let mut buf = Vec::new();
        stream.write_ttag(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            TimeTagStream::read_ttag(&bad[..]),
            Err(Error::Corrupt { .. })
        ));
        let mut partial = buf.clone();
        partial.push(3);
        assert!(matches!(
            TimeTagStream::read_ttag(&partial[..]),
            Err(Error::Corrupt { index: 1, .. })
        ));
        let mut unsorted = buf;
        unsorted.extend_from_slice(&[0u8]);
        unsorted.extend_from_slice(&1u64.to_le_bytes());
        assert!(matches!(
            TimeTagStream::read_ttag(&unsorted[..]),
            Err(Error::Unsorted { index: 1 })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let tags = vec![
            TimeTag {
                channel: 0,
                time_ps: 3,
            },
            TimeTag {
                channel: 2,
                time_ps: 9,
            },
        ];
        let mut buf = Vec::new();
        write_tags_csv(&tags, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("channel,time_ps\n"));
        assert_eq!(read_tags_csv(&buf[..]).unwrap(), tags);
        assert!(read_tags_csv("channel,time_ps\n0,9\n0,3\n".as_bytes()).is_err());
    }

    #[test]
    fn clock_folding() {
        let clock = PulseClock::new(2000.0, 500);
        assert_eq!(clock.origin(3), 6500);
        assert_eq!(clock.fold(6500 + 100, -200), (3, 100));
        assert_eq!(clock.fold(6500 - 150, -200), (3, -150));
        assert_eq!(clock.fold(6500 - 250, -200), (2, 1750));
        let odd = PulseClock::new(13157.894736842105, 0);
        assert_eq!(odd.origin(1_000_000_000), 13_157_894_736_842);
        let t = odd.origin(123_456_789) + 42;
        assert_eq!(odd.fold(t, -100), (123_456_789, 42));
    }
}
