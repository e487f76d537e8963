//! Coefficient text files: a `F D kind` header, then `F` rows of `D` values.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::motiongen::{CoeffKind, CoeffSequence};
use crate::tensor;

pub fn format_coeffs(seq: &CoeffSequence) -> Result<String> {
    let mut s = format!("{} {} {}\n", seq.frames(), seq.dim(), seq.kind.as_str());
    for row in seq.rows()? {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    Ok(s)
}

pub fn parse_coeffs(text: &str) -> Result<CoeffSequence> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty coefficient file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::Parse(format!("bad coefficient header {header:?}")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad count {s:?}")));
    let (f, d) = (num(parts[0])?, num(parts[1])?);
    let kind = CoeffKind::parse(parts[2]).ok_or_else(|| Error::Parse(format!("unknown kind {:?}", parts[2])))?;
    let mut values = Vec::with_capacity(f * d);
    for i in 0..f {
        let line = lines.next().ok_or_else(|| Error::Parse(format!("expected {f} rows, found {i}")))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| Error::Parse(format!("bad value {v:?} in row {i}"))))
            .collect::<Result<_>>()?;
        if row.len() != d {
            return Err(Error::Parse(format!("row {i} has {} values, expected {d}", row.len())));
        }
        values.extend(row);
    }
    if lines.next().is_some() {
        return Err(Error::Parse(format!("more than {f} rows")));
    }
    CoeffSequence::new(tensor::from_vec(values, (f, d))?, kind)
}

pub fn write_coeffs(path: &Path, seq: &CoeffSequence) -> Result<()> {
    std::fs::write(path, format_coeffs(seq)?)?;
    Ok(())
}

pub fn read_coeffs(path: &Path) -> Result<CoeffSequence> {
    parse_coeffs(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{randn, rng, to_vec};

    #[test]
    fn lossless_round_trip() {
        let seq = CoeffSequence::new(randn((4, 3), &mut rng(0)).unwrap(), CoeffKind::Pose).unwrap();
        let text = format_coeffs(&seq).unwrap();
        assert!(text.starts_with("4 3 pose\n"));
        let back = parse_coeffs(&text).unwrap();
        assert_eq!(back.kind, CoeffKind::Pose);
        assert_eq!(to_vec(&back.values).unwrap(), to_vec(&seq.values).unwrap());
    }

    #[test]
    fn malformed_files() {
        assert!(parse_coeffs("").is_err());
        assert!(parse_coeffs("2 2 pose\n1 2\n").is_err());
        assert!(parse_coeffs("1 2 pose\n1\n").is_err());
        assert!(parse_coeffs("1 1 nonsense\n1\n").is_err());
        assert!(parse_coeffs("1 1 pose\n1\n2\n").is_err());
        assert!(parse_coeffs("1 1 pose\nx\n").is_err());
    }
}
