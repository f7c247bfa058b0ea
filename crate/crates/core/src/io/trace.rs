use std::fmt::Write as _;
use std::path::Path;

use super::{read_file, write_file, IoError};
use crate::num::Real;
use crate::signal::SpectrumTrace;

pub const TRACE_HEADER: &str = "frequency_mhz,signal";

/// CSV text of a trace. Values use the shortest representation that parses
/// back to the same scalar, so a write/read cycle is lossless.
pub fn format_trace<T: Real>(trace: &SpectrumTrace<T>) -> String {
    let mut out = String::with_capacity(32 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for (f, s) in trace.frequencies.iter().zip(&trace.signal) {
        writeln!(out, "{f},{s}").expect("writing to a String");
    }
    out
}

pub fn parse_trace<T: Real>(text: &str) -> Result<SpectrumTrace<T>, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == TRACE_HEADER => {}
        Some((_, h)) => {
            return Err(IoError::Format {
                line: 1,
                msg: format!("expected header '{TRACE_HEADER}', found '{h}'"),
            })
        }
        None => {
            return Err(IoError::Format {
                line: 1,
                msg: format!("missing header '{TRACE_HEADER}'"),
            })
        }
    }
    let mut frequencies = Vec::new();
    let mut signal = Vec::new();
    let mut line_of = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() {
            continue;
        }
        let mut cells = row.split(',');
        let (Some(a), Some(b), None) = (cells.next(), cells.next(), cells.next()) else {
            return Err(IoError::Format {
                line,
                msg: format!("expected 2 columns, found '{row}'"),
            });
        };
        let cell = |c: &str, name: &str| {
            let v: T = c.trim().parse().map_err(|_| IoError::Parse {
                line,
                msg: format!("{name} '{}' is not a number", c.trim()),
            })?;
            if !v.is_finite() {
                return Err(IoError::Parse {
                    line,
                    msg: format!("{name} '{}' is not finite", c.trim()),
                });
            }
            Ok(v)
        };
        frequencies.push(cell(a, "frequency")?);
        signal.push(cell(b, "signal")?);
        line_of.push(line);
    }
    if frequencies.is_empty() {
        return Err(IoError::Validation("trace has no data rows".into()));
    }
    if let Some(i) = frequencies.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(IoError::Validation(format!(
            "line {}: frequency {} does not increase (previous {})",
            line_of[i + 1],
            frequencies[i + 1],
            frequencies[i]
        )));
    }
    Ok(SpectrumTrace {
        frequencies,
        signal,
        seed: None,
    })
}

pub fn read_trace<T: Real>(path: impl AsRef<Path>) -> Result<SpectrumTrace<T>, IoError> {
    parse_trace(&read_file(path.as_ref())?)
}

pub fn write_trace<T: Real>(path: impl AsRef<Path>, trace: &SpectrumTrace<T>) -> Result<(), IoError> {
    trace.validate()?;
    write_file(path.as_ref(), &format_trace(trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_rows() {
        let t = SpectrumTrace::new(vec![2870.0, 2870.5], vec![1.0, 0.25]).unwrap();
        assert_eq!(format_trace(&t), "frequency_mhz,signal\n2870,1\n2870.5,0.25\n");
    }

    #[test]
    fn wrong_column_count() {
        let e = parse_trace::<f64>("frequency_mhz,signal\n1,2,3\n").unwrap_err();
        assert!(matches!(e, IoError::Format { line: 2, .. }), "{e}");
    }

    #[test]
    fn crlf_is_accepted() {
        let t = parse_trace::<f64>("frequency_mhz,signal\r\n1,2\r\n3,4\r\n").unwrap();
        assert_eq!(t.signal, vec![2.0, 4.0]);
    }
}
