//! CSV output shared by every module: a comment line carrying the config
//! hash, one header row, then numeric rows.

use std::io::Write;

use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Starts a CSV stream. `comment`, when nonempty, is written first as
/// `# comment`.
pub fn csv_writer<W: Write>(mut w: W, comment: &str, headers: &[&str]) -> Result<csv::Writer<W>> {
    if !comment.is_empty() {
        writeln!(w, "# {comment}")?;
    }
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(headers).map_err(csv_err)?;
    Ok(out)
}

/// Writes one row of numbers in shortest round-trip form.
pub fn row<W: Write>(w: &mut csv::Writer<W>, values: &[f64]) -> Result<()> {
    w.write_record(values.iter().map(|v| v.to_string()))
        .map_err(csv_err)
}

/// Writes one row of preformatted fields.
pub fn text_row<W: Write, S: AsRef<[u8]>>(w: &mut csv::Writer<W>, fields: &[S]) -> Result<()> {
    w.write_record(fields).map_err(csv_err)
}

pub fn finish<W: Write>(w: csv::Writer<W>) -> Result<()> {
    let mut inner = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    inner.flush()?;
    Ok(())
}

/// Reads a CSV written by [`csv_writer`], skipping `#` comments. Returns the
/// header and the rows as strings.
pub fn read_csv<R: std::io::Read>(r: R) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(r);
    let header = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec.map_err(csv_err)?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}
