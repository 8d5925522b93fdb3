//! Headerless CSV: integer features followed by an integer label per row.

use super::{resolve_num_classes, Dataset, LabeledSample};
use crate::error::{Error, Result};

pub fn parse_csv(text: &[u8], has_header: bool, num_classes: Option<u32>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(text);
    let first_row = if has_header { 2 } else { 1 };
    let mut rows: Vec<(Vec<u8>, u32)> = Vec::new();
    let mut dim = None;
    for (i, record) in reader.records().enumerate() {
        let row = first_row + i;
        let record =
            record.map_err(|e| Error::parse("csv", format!("row {row}"), e.to_string()))?;
        if record.len() < 2 {
            return Err(Error::parse(
                "csv",
                format!("row {row}"),
                "need at least one feature and a label",
            ));
        }
        let n = record.len() - 1;
        match dim {
            None => dim = Some(n),
            Some(d) if d != n => {
                return Err(Error::parse(
                    "csv",
                    format!("row {row}"),
                    format!("{n} features, earlier rows have {d}"),
                ))
            }
            _ => {}
        }
        let mut features = Vec::with_capacity(n);
        for (col, field) in record.iter().take(n).enumerate() {
            let v: u8 = field.parse().map_err(|_| {
                Error::parse(
                    "csv",
                    format!("row {row}, column {}", col + 1),
                    format!("{field:?} is not an integer in [0, 255]"),
                )
            })?;
            features.push(v);
        }
        let field = &record[n];
        let label: u32 = field.parse().map_err(|_| {
            Error::parse(
                "csv",
                format!("row {row}, column {}", n + 1),
                format!("{field:?} is not a class id"),
            )
        })?;
        rows.push((features, label));
    }
    let dim = dim.ok_or_else(|| Error::parse("csv", "row 1", "no data rows"))?;
    let classes = resolve_num_classes(rows.iter().map(|r| r.1), num_classes);
    if let Some(pos) = rows.iter().position(|r| r.1 >= classes) {
        return Err(Error::parse(
            "csv",
            format!("row {}", first_row + pos),
            format!("label {} outside [0, {classes})", rows[pos].1),
        ));
    }
    let items = rows
        .into_iter()
        .map(|(f, l)| LabeledSample::new(f, l))
        .collect();
    Dataset::new(dim, classes, items)
}
