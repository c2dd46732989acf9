use std::io::Write;

use crate::error::{Error, Result};

/// Shortest round-trip decimal representation.
pub(crate) fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

/// Writes an optional `# comment` line, a header row and the data rows.
pub(crate) fn write_records<W: Write>(
    mut out: W,
    comment: Option<&str>,
    header: Vec<String>,
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let io = |e: std::io::Error| Error::Io(e.to_string());
    if let Some(c) = comment {
        writeln!(out, "# {c}").map_err(io)?;
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Rows of `t` followed by numeric columns.
pub(crate) fn write_series<'a, W: Write>(
    out: W,
    comment: Option<&str>,
    header: Vec<String>,
    rows: impl Iterator<Item = (f64, &'a [f64])>,
) -> Result<()> {
    let rows = rows.map(|(t, vals)| {
        std::iter::once(fmt_num(t)).chain(vals.iter().map(|v| fmt_num(*v))).collect()
    });
    write_records(out, comment, header, rows)
}
