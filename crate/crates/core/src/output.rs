//! CSV output. Floats use 17 significant digits so files round-trip exactly
//! and reruns are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::coincidence::CoincidenceMaskSet;
use crate::error::{Error, Result};
use crate::grid::MultiField;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Snapshot table: coordinates, components, and adjacent coincidence masks.
pub fn snapshot_csv(u: &MultiField, masks: &CoincidenceMaskSet) -> Result<String> {
    let grid = *u.grid();
    if masks.grid() != &grid || masks.n_components() != u.n_components() {
        return Err(Error::GridMismatch("masks do not belong to this field".into()));
    }
    let n = u.n_components();
    let mut out = String::from("x");
    if grid.dimension() == 2 {
        out.push_str(",y");
    }
    for i in 1..=n {
        write!(out, ",u_{i}").unwrap();
    }
    for i in 1..n {
        write!(out, ",chi_{i}_{}", i + 1).unwrap();
    }
    out.push('\n');
    for node in 0..grid.len() {
        let (x, y) = grid.coords(node);
        out.push_str(&fmt_f64(x));
        if grid.dimension() == 2 {
            write!(out, ",{}", fmt_f64(y)).unwrap();
        }
        for c in u.components() {
            write!(out, ",{}", fmt_f64(c.values()[node])).unwrap();
        }
        for i in 1..n {
            let on = masks.mask(i, i + 1).expect("adjacent mask")[node];
            write!(out, ",{}", u8::from(on)).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// One line of the time series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeseriesRow {
    pub t: f64,
    pub l2: Vec<f64>,
    /// `int |grad u_i|^p` per component.
    pub grad_p: Vec<f64>,
    pub ordering_defect: f64,
    pub ls_violation: f64,
    /// Areas of the adjacent masks `chi_{i,i+1}`.
    pub mask_areas: Vec<f64>,
    pub distance_to_stationary: Option<f64>,
}

pub fn timeseries_header(n: usize, with_distance: bool) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("l2_u_{i}")));
    cols.extend((1..=n).map(|i| format!("grad_p_u_{i}")));
    cols.push("ordering_defect".into());
    cols.push("ls_violation".into());
    cols.extend((1..n).map(|i| format!("area_chi_{i}_{}", i + 1)));
    if with_distance {
        cols.push("distance_to_stationary".into());
    }
    cols.join(",")
}

/// The whole series; the distance column is present when the first row has one.
pub fn timeseries_csv(rows: &[TimeseriesRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let n = first.l2.len();
    let with_distance = first.distance_to_stationary.is_some();
    let mut out = timeseries_header(n, with_distance);
    out.push('\n');
    for r in rows {
        let mut cells = vec![r.t];
        cells.extend(&r.l2);
        cells.extend(&r.grad_p);
        cells.push(r.ordering_defect);
        cells.push(r.ls_violation);
        cells.extend(&r.mask_areas);
        if with_distance {
            cells.push(r.distance_to_stationary.unwrap_or(f64::NAN));
        }
        out.push_str(&cells.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// A numeric table with named columns, used for sweeps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}
