//! Amdahl-style cost model for concurrent cacheline flushes.
//!
//! A batch of `n` flushes retired by one fence behaves like a workload with a
//! serial fraction `s`: the average per-flush latency is
//! `base * (s + (1 - s) / n)`, and the whole batch costs
//! `base * ((1 - s) + s * n)`. The serial fraction can be recovered from
//! measured averages with the Karp-Flatt metric.
//!
//! Everything here is generic over the float type so the model can be
//! evaluated in `f32` or `f64`.

use std::io::{Read, Write};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serial fraction measured for concurrent `clwb` flushes.
pub const DEFAULT_SERIAL_FRACTION: f64 = 0.18;
/// Latency of one flush followed by one fence, in nanoseconds.
pub const DEFAULT_BASE_LATENCY_NS: f64 = 353.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlushModelParams<T> {
    pub serial_fraction: T,
    pub base_latency_ns: T,
}

impl<T: Float> FlushModelParams<T> {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn new(serial_fraction: T, base_latency_ns: T) -> Result<Self> {
        if !(serial_fraction >= T::zero() && serial_fraction <= T::one()) {
            return Err(Error::Domain(format!(
                "serial fraction {} outside [0, 1]",
                serial_fraction.to_f64().unwrap_or(f64::NAN)
            )));
        }
        if !(base_latency_ns > T::zero()) {
            return Err(Error::Domain("base latency must be positive".into()));
        }
        Ok(Self {
            serial_fraction,
            base_latency_ns,
        })
    }
}

impl<T: Float> Default for FlushModelParams<T> {
    fn default() -> Self {
        Self {
            serial_fraction: cast(DEFAULT_SERIAL_FRACTION),
            base_latency_ns: cast(DEFAULT_BASE_LATENCY_NS),
        }
    }
}

/// One measured point: average per-flush latency when `concurrency` flushes
/// share a fence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub concurrency: u64,
    pub avg_latency_ns: f64,
}

fn cast<T: Float, U: num_traits::ToPrimitive>(v: U) -> T {
    T::from(v).expect("value representable in target float")
}

/// Average latency of one flush when `n` flushes overlap before a fence.
pub fn avg_flush_latency<T: Float>(n: u64, params: &FlushModelParams<T>) -> Result<T> {
    if n == 0 {
        return Err(Error::Domain("flush concurrency must be at least 1".into()));
    }
    let s = params.serial_fraction;
    let n: T = cast(n);
    Ok(params.base_latency_ns * (s + (T::one() - s) / n))
}

/// Time to retire `n` flushes with a single fence. An empty fence is free.
pub fn group_latency<T: Float>(n: u64, params: &FlushModelParams<T>) -> T {
    if n == 0 {
        return T::zero();
    }
    let s = params.serial_fraction;
    let n: T = cast(n);
    params.base_latency_ns * ((T::one() - s) + s * n)
}

/// Fractional reduction of the average flush latency at concurrency `n`
/// relative to a lone flush.
pub fn latency_reduction<T: Float>(n: u64, params: &FlushModelParams<T>) -> Result<T> {
    let one = avg_flush_latency(1, params)?;
    Ok(T::one() - avg_flush_latency(n, params)? / one)
}

/// Fits a model to measured points with the Karp-Flatt metric.
///
/// The base latency is the `n = 1` measurement; the serial fraction is the
/// unweighted mean of the per-point estimates `(L(n)/L(1) - 1/n) / (1 - 1/n)`,
/// clamped to `[0, 1]`.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn fit_karp_flatt<T: Float>(points: &[Measurement]) -> Result<FlushModelParams<T>> {
    let mut seen = std::collections::BTreeSet::new();
    for p in points {
        if p.concurrency == 0 || !(p.avg_latency_ns > 0.0) {
            return Err(Error::Fit(format!(
                "invalid measurement ({}, {})",
                p.concurrency, p.avg_latency_ns
            )));
        }
        if !seen.insert(p.concurrency) {
            return Err(Error::Fit(format!(
                "duplicate concurrency {}",
                p.concurrency
            )));
        }
    }
    if seen.len() < 2 {
        return Err(Error::Fit(
            "need at least two distinct concurrencies".into(),
        ));
    }
    let base = points
        .iter()
        .find(|p| p.concurrency == 1)
        .ok_or_else(|| Error::Fit("missing n = 1 measurement".into()))?;
    let base_latency: T = cast(base.avg_latency_ns);

    let mut sum = T::zero();
    let mut count = T::zero();
    for p in points.iter().filter(|p| p.concurrency > 1) {
        let inv_n = T::one() / cast::<T, _>(p.concurrency);
        let speedup_inv = cast::<T, _>(p.avg_latency_ns) / base_latency;
        sum = sum + (speedup_inv - inv_n) / (T::one() - inv_n);
        count = count + T::one();
    }
    let serial = (sum / count).max(T::zero()).min(T::one());
    Ok(FlushModelParams {
        serial_fraction: serial,
        base_latency_ns: base_latency,
    })
}

/// Noise-free measurements generated from the model.
pub fn sample<T: Float>(
    params: &FlushModelParams<T>,
    concurrencies: &[u64],
) -> Result<Vec<Measurement>> {
    concurrencies
        .iter()
        .map(|&n| {
            Ok(Measurement {
                concurrency: n,
                avg_latency_ns: avg_flush_latency(n, params)?
                    .to_f64()
                    .ok_or_else(|| Error::Domain("latency not representable".into()))?,
            })
        })
        .collect()
}

/// Reads `concurrency,avg_latency_ns` rows (with a header row).
pub fn read_measurements<R: Read>(reader: R) -> Result<Vec<Measurement>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let m: Measurement = row.map_err(|e| Error::Parse(e.to_string()))?;
        out.push(m);
    }
    Ok(out)
}

pub fn write_measurements<W: Write>(writer: W, points: &[Measurement]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for p in points {
        wtr.serialize(p).map_err(|e| Error::Parse(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> FlushModelParams<f64> {
        FlushModelParams::default()
    }

    #[test]
    fn single_flush_costs_base() {
        assert_eq!(avg_flush_latency(1, &defaults()).unwrap(), 353.0);
        assert_eq!(group_latency(1, &defaults()), 353.0);
    }

    #[test]
    fn sixteen_way_overlap() {
        let l16 = avg_flush_latency(16, &defaults()).unwrap();
        // 353 * (0.18 + 0.82 / 16)
        assert!((l16 - 81.631_25).abs() < 1e-9);
        let r = latency_reduction(16, &defaults()).unwrap();
        assert!((r - 0.768_75).abs() < 1e-9);
    }

    #[test]
    fn asymptote() {
        let l = avg_flush_latency(1 << 40, &defaults()).unwrap();
        assert!((l - 63.54).abs() < 1e-6);
    }

    #[test]
    fn group_of_eight() {
        let g = group_latency(8, &defaults());
        assert!((g - 797.78).abs() < 1e-9);
        let speedup = 1.0 - g / (8.0 * group_latency(1, &defaults()));
        assert!((speedup - 0.717_5).abs() < 1e-4);
    }

    #[test]
    fn empty_fence_free() {
        assert_eq!(group_latency(0, &defaults()), 0.0);
        assert!(avg_flush_latency(0, &defaults()).is_err());
    }

    #[test]
    fn fit_extremes() {
        let serial: Vec<_> = [1u64, 2, 4, 8]
            .iter()
            .map(|&n| Measurement {
                concurrency: n,
                avg_latency_ns: 100.0,
            })
            .collect();
        assert_eq!(fit_karp_flatt::<f64>(&serial).unwrap().serial_fraction, 1.0);
        let parallel: Vec<_> = [1u64, 2, 4, 8]
            .iter()
            .map(|&n| Measurement {
                concurrency: n,
                avg_latency_ns: 100.0 / n as f64,
            })
            .collect();
        assert_eq!(
            fit_karp_flatt::<f64>(&parallel).unwrap().serial_fraction,
            0.0
        );
    }

    #[test]
    fn fit_rejects_bad_input() {
        let only_one = [Measurement {
            concurrency: 1,
            avg_latency_ns: 353.0,
        }];
        assert!(fit_karp_flatt::<f64>(&only_one).is_err());
        let no_base = [
            Measurement {
                concurrency: 2,
                avg_latency_ns: 200.0,
            },
            Measurement {
                concurrency: 4,
                avg_latency_ns: 120.0,
            },
        ];
        assert!(fit_karp_flatt::<f64>(&no_base).is_err());
    }

    #[test]
    fn f32_model_agrees() {
        let p32: FlushModelParams<f32> = FlushModelParams::default();
        let l = avg_flush_latency(16, &p32).unwrap();
        assert!((l - 81.631_25).abs() < 1e-3);
    }

    #[test]
    fn csv_round_trip() {
        let pts = sample(&defaults(), &[1, 2, 4]).unwrap();
        let mut buf = Vec::new();
        write_measurements(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("concurrency,avg_latency_ns\n"));
        assert_eq!(read_measurements(&buf[..]).unwrap(), pts);
    }
}
