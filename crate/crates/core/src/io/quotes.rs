use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{write_with_header, FORMAT_HEADER};
use crate::dupire::{OptionKind, OptionQuote};
use crate::error::{Error, Result};

const REQUIRED: [&str; 3] = ["price", "strike", "maturity"];
const OPTIONAL: [&str; 2] = ["bid", "ask"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number in the file.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuoteFile {
    pub path: PathBuf,
    pub quotes: Vec<OptionQuote>,
    pub rejections: Vec<Rejection>,
}

/// Reads and validates a quote CSV.
///
/// The file may start with the format line. The header must name `price`,
/// `strike` and `maturity`; `bid` and `ask` columns are accepted and
/// ignored. Rows that fail to parse or break the static price bounds for
/// `spot` and `kind` are recorded in [`QuoteFile::rejections`].
pub fn read_quotes(path: &Path, spot: f64, kind: OptionKind) -> Result<QuoteFile> {
    let bytes = std::fs::read(path)?;
    parse_quotes(&bytes, path, spot, kind)
}

pub fn parse_quotes(bytes: &[u8], path: &Path, spot: f64, kind: OptionKind) -> Result<QuoteFile> {
    let malformed = |detail: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        detail,
    };
    let mut body = bytes;
    let mut line_offset = 0;
    if body.starts_with(b"#") {
        let end = body.iter().position(|&b| b == b'\n').unwrap_or(body.len());
        let first = String::from_utf8_lossy(&body[..end]);
        if first.trim_end() != FORMAT_HEADER {
            return Err(Error::VersionMismatch(format!("{}: unsupported format line {:?}", path.display(), first.trim_end())));
        }
        body = &body[(end + 1).min(body.len())..];
        line_offset = 1;
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body);
    let header = reader.byte_headers().map_err(|e| malformed(e.to_string()))?.clone();
    let names: Vec<String> = header
        .iter()
        .map(|h| String::from_utf8_lossy(h).trim().to_ascii_lowercase())
        .collect();
    if names.iter().all(|n| n.is_empty()) {
        return Err(malformed("missing header row".into()));
    }
    for n in &names {
        if !REQUIRED.contains(&n.as_str()) && !OPTIONAL.contains(&n.as_str()) {
            return Err(malformed(format!("unexpected column {n:?}")));
        }
    }
    let mut columns = [0usize; 3];
    for (slot, want) in columns.iter_mut().zip(REQUIRED) {
        let found: Vec<usize> = names.iter().enumerate().filter(|(_, n)| *n == want).map(|(i, _)| i).collect();
        match found.as_slice() {
            [i] => *slot = *i,
            [] => return Err(malformed(format!("missing column {want:?}"))),
            _ => return Err(malformed(format!("duplicate column {want:?}"))),
        }
    }

    let mut quotes = Vec::new();
    let mut rejections = Vec::new();
    let mut record = csv::ByteRecord::new();
    loop {
        let line = line_offset + reader.position().line() as usize;
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                rejections.push(Rejection {
                    line,
                    reason: format!("InvalidField: {e}"),
                });
                // a broken record can leave the reader stuck; stop if it does not advance
                if line_offset + reader.position().line() as usize == line {
                    break;
                }
                continue;
            }
        }
        let line = line_offset + record.position().map_or(line as u64, |p| p.line()) as usize;
        if record.iter().all(|f| f.iter().all(u8::is_ascii_whitespace)) {
            continue;
        }
        let mut values = [0.0; 3];
        let mut problem = None;
        for (v, (&col, name)) in values.iter_mut().zip(columns.iter().zip(REQUIRED)) {
            let parsed = record
                .get(col)
                .ok_or_else(|| format!("missing {name}"))
                .and_then(|raw| std::str::from_utf8(raw).map_err(|_| format!("{name} is not UTF-8")))
                .and_then(|s| s.trim().parse::<f64>().map_err(|_| format!("{name} {s:?} is not a number")));
            match parsed {
                Ok(x) => *v = x,
                Err(msg) => {
                    problem = Some(format!("InvalidField: {msg}"));
                    break;
                }
            }
        }
        if let Some(reason) = problem {
            rejections.push(Rejection { line, reason });
            continue;
        }
        let quote = OptionQuote::new(values[0], values[1], values[2]);
        match quote.check(spot, kind) {
            Ok(()) => quotes.push(quote),
            Err(defect) => rejections.push(Rejection {
                line,
                reason: defect.to_string(),
            }),
        }
    }
    for r in &rejections {
        log::warn!("{}:{}: rejected ({})", path.display(), r.line, r.reason);
    }
    if quotes.is_empty() {
        return Err(Error::EmptyAfterValidation(path.to_path_buf()));
    }
    Ok(QuoteFile {
        path: path.to_path_buf(),
        quotes,
        rejections,
    })
}

/// Writes `price,strike,maturity` rows with round-trip precision.
pub fn write_quotes(path: &Path, quotes: &[OptionQuote]) -> Result<()> {
    let mut body = String::from("price,strike,maturity\n");
    for q in quotes {
        writeln!(body, "{:?},{:?},{:?}", q.price, q.strike, q.maturity).expect("string write");
    }
    write_with_header(path, &body)
}

/// Writes one standard error per line, aligned with a quote file.
pub fn write_std_errors(path: &Path, quotes: &[OptionQuote], std_errors: &[f64]) -> Result<()> {
    let mut body = String::from("strike,maturity,std_error\n");
    for (q, se) in quotes.iter().zip(std_errors) {
        writeln!(body, "{:?},{:?},{:?}", q.strike, q.maturity, se).expect("string write");
    }
    write_with_header(path, &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<QuoteFile> {
        parse_quotes(text.as_bytes(), Path::new("q.csv"), 1000.0, OptionKind::Call)
    }

    #[test]
    fn rejects_are_logged_not_fatal() {
        let f = parse("price,strike,maturity\n100,1000,0.5\n1100,500,0.5\n10,1000,-0.5\nabc,1,1\n5,2000\n").unwrap();
        assert_eq!(f.quotes.len(), 1);
        let reasons: Vec<&str> = f.rejections.iter().map(|r| r.reason.as_str()).collect();
        assert_eq!(f.rejections.len(), 4, "{reasons:?}");
        assert!(reasons[0].starts_with("BoundViolation"));
        assert!(reasons[1].starts_with("InvalidField"));
        assert!(reasons[2].starts_with("InvalidField"));
        assert!(reasons[3].starts_with("InvalidField"));
        assert_eq!(f.rejections[0].line, 3);
    }

    #[test]
    fn header_problems() {
        assert!(matches!(parse("strike,maturity\n1,1\n"), Err(Error::MalformedHeader { .. })));
        assert!(matches!(parse("price,strike,maturity,volume\n1,1,1,1\n"), Err(Error::MalformedHeader { .. })));
        assert!(matches!(parse(""), Err(Error::MalformedHeader { .. })));
        assert!(matches!(parse("# volcal-format v9\nprice,strike,maturity\n"), Err(Error::VersionMismatch(_))));
        assert!(matches!(parse("price,strike,maturity\n-1,1,1\n"), Err(Error::EmptyAfterValidation(_))));
    }

    #[test]
    fn optional_columns_and_header_line() {
        let f = parse("# volcal-format v1\nmaturity,bid,ask,strike,price\n0.5,9,11,1000,10\n").unwrap();
        assert_eq!(f.quotes, vec![OptionQuote::new(10.0, 1000.0, 0.5)]);
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        let quotes = vec![
            OptionQuote::new(512.345_678_901_234_5, 500.0, 0.3),
            OptionQuote::new(1.0 / 3.0, 2_868.421_052_631_579, 1.366_666_666_666_666_7),
        ];
        write_quotes(&path, &quotes).unwrap();
        let back = read_quotes(&path, 1000.0, OptionKind::Call).unwrap();
        assert_eq!(back.quotes, quotes);
        assert!(back.rejections.is_empty());
    }
}
