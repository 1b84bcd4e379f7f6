//! Published reference values for side-by-side table comparison.
//!
//! The values live in `data/reference_tables.csv` and are kept separate from
//! anything this crate computes.

use std::sync::OnceLock;

const RAW: &str = include_str!("../data/reference_tables.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCell {
    pub table: u8,
    pub row: String,
    /// Column key, normally the link success probability.
    pub column: String,
    pub value: f64,
    /// `p/r`, `p/t` or `fraction`.
    pub unit: String,
}

fn parse(raw: &str) -> Vec<ReferenceCell> {
    raw.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let [table, row, column, value, unit] = f.as_slice() else {
                return None;
            };
            Some(ReferenceCell {
                table: table.parse().ok()?,
                row: row.to_string(),
                column: column.to_string(),
                value: value.parse().ok()?,
                unit: unit.to_string(),
            })
        })
        .collect()
}

pub fn all() -> &'static [ReferenceCell] {
    static CELLS: OnceLock<Vec<ReferenceCell>> = OnceLock::new();
    CELLS.get_or_init(|| parse(RAW))
}

/// Tables with reference data.
pub const TABLES: [u8; 9] = [1, 2, 3, 4, 6, 7, 8, 9, 10];

pub fn value(table: u8, row: &str, column: &str) -> Option<f64> {
    all()
        .iter()
        .find(|c| c.table == table && c.row == row && c.column == column)
        .map(|c| c.value)
}

/// Values of one row in file order, as `(column, value)`.
pub fn row(table: u8, row: &str) -> Vec<(String, f64)> {
    all()
        .iter()
        .filter(|c| c.table == table && c.row == row)
        .map(|c| (c.column.clone(), c.value))
        .collect()
}

/// Distinct row names of a table in file order.
pub fn rows(table: u8) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in all().iter().filter(|c| c.table == table) {
        if !out.contains(&c.row) {
            out.push(c.row.clone());
        }
    }
    out
}
