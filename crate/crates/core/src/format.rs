//! Text output shared by the CSV writers.

use std::io::{self, Write};

use crate::detectors::StatUpdate;

/// Float with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// One sample per row, no header.
pub fn write_stream_csv<W, X>(samples: &[X], mut out: W) -> io::Result<()>
where
    W: Write,
    X: AsRef<[f64]>,
{
    for x in samples {
        let line: Vec<String> = x.as_ref().iter().map(|v| fmt_f64(*v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub const TRACE_HEADER: &str = "t,effective_time,statistic,stopped";

/// Statistic trajectory; `stopped` is 1 on the crossing row.
pub fn write_trace_csv<W: Write>(updates: &[StatUpdate], threshold: f64, mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for up in updates {
        writeln!(
            out,
            "{},{},{},{}",
            up.raw_index,
            up.effective_time,
            fmt_f64(up.statistic),
            u8::from(up.statistic >= threshold)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn non_finite_values() {
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn stream_rows() {
        let mut out = Vec::new();
        write_stream_csv(&[vec![1.0, -2.0], vec![0.0, 3.5]], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 2);
    }

    proptest! {
        #[test]
        fn seventeen_digits_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
