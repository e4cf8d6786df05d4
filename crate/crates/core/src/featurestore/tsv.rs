use std::io::BufRead;

use super::RawRecord;
use crate::error::{Error, Result};

/// Parses `label \t v1 \t … \t vm`. When `allow_unlabelled` is set, a line
/// with exactly `m` columns is accepted and gets label 0.
pub fn parse_tsv_line(line: &str, m: usize, allow_unlabelled: bool) -> Result<RawRecord> {
    let cols: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
    if allow_unlabelled && cols.len() == m {
        return Ok(RawRecord::new(0, cols));
    }
    if cols.len() != m + 1 {
        return Err(Error::input(format!(
            "expected {} tab-separated columns, found {}",
            m + 1,
            cols.len()
        )));
    }
    let label = match cols[0].trim() {
        "0" => 0,
        "1" => 1,
        other => return Err(Error::input(format!("label {other:?} is not 0 or 1"))),
    };
    Ok(RawRecord::new(label, cols[1..].to_vec()))
}

/// Reads a header-less labelled TSV; the first bad line aborts with its
/// line number. Blank lines are skipped.
pub fn read_tsv<R: BufRead>(reader: R, m: usize) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_tsv_line(&line, m, false)
            .map_err(|e| Error::input(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Like [`read_tsv`] but keeps going past bad lines, returning
/// `(line_number, parse result)` for every non-blank line.
pub fn read_tsv_lenient<R: BufRead>(reader: R, m: usize) -> Result<Vec<(usize, Result<RawRecord>)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, parse_tsv_line(&line, m, true)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_labelled_lines() {
        let r = parse_tsv_line("1\t5\t\tabc\n", 3, false).unwrap();
        assert_eq!(r.label, 1);
        assert_eq!(r.values, vec!["5", "", "abc"]);
    }

    #[test]
    fn reports_line_numbers() {
        let data = "0\ta\tb\n1\ta\n";
        let err = read_tsv(data.as_bytes(), 2).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = read_tsv("2\ta\tb\n".as_bytes(), 2).unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("label"), "{err}");
    }

    #[test]
    fn lenient_reader_keeps_going() {
        let data = "0\ta\tb\nbroken\n\na\tb\n";
        let rows = read_tsv_lenient(data.as_bytes(), 2).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].1.is_ok());
        assert_eq!(rows[1].0, 2);
        assert!(rows[1].1.is_err());
        assert_eq!(rows[2].0, 4);
        assert!(rows[2].1.is_ok());
    }
}
