//! CSV readers and writers for curves, replicates, responses, eigenbases,
//! fit reports and Monte Carlo results.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! written file reads back to bit-identical values.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, Trim};
use nalgebra::{DMatrix, DVector};

use crate::condscore::Family;
use crate::covariance::{EigenBasis, ReplicateSet};
use crate::error::{Error, Result};
use crate::fda::{Curve, CurveSet, Grid};
use crate::sim::{MCResultRow, Setting};

const CURVE_PREFIX: &str = "curve_";
const REP_MARKER: &str = "_rep_";
const RESULT_COLUMNS: [&str; 11] = [
    "scenario_id",
    "family",
    "setting",
    "n",
    "noise",
    "length_scale",
    "reps",
    "mean_pn",
    "mean_E_n",
    "mean_E_co",
    "failures",
];

/// Writes `contents` to a temporary file next to `path`, then renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "output path has no file name"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(contents.as_bytes())?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn push_row<'a>(out: &mut String, label: &str, values: impl IntoIterator<Item = &'a f64>) {
    out.push_str(label);
    for v in values {
        out.push(',');
        out.push_str(&v.to_string());
    }
    out.push('\n');
}

fn grid_row(out: &mut String, grid: &Grid) {
    push_row(out, "t", grid.points());
}

/// Rows of a CSV file with their 1-based line numbers.
struct Table {
    path: PathBuf,
    rows: Vec<(u64, StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reader = ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            rows.push((line, rec));
        }
        Ok(Table {
            path: path.to_path_buf(),
            rows,
        })
    }

    fn err(&self, line: u64, msg: impl std::fmt::Display) -> Error {
        Error::format(&self.path, format!("row {line}: {msg}"))
    }

    fn number(&self, line: u64, col: usize, field: &str) -> Result<f64> {
        field.parse::<f64>().map_err(|_| {
            Error::format(
                &self.path,
                format!("row {line}, column {}: cannot parse '{field}' as a number", col + 1),
            )
        })
    }

    fn numbers(&self, line: u64, rec: &StringRecord, skip: usize) -> Result<Vec<f64>> {
        rec.iter()
            .enumerate()
            .skip(skip)
            .map(|(c, f)| self.number(line, c, f))
            .collect()
    }

    /// Grid from a `t,<t_1>,...` row.
    fn grid(&self, line: u64, rec: &StringRecord) -> Result<Grid> {
        if rec.get(0) != Some("t") {
            return Err(self.err(line, "expected a header row starting with 't'"));
        }
        let points = self.numbers(line, rec, 1)?;
        Grid::new(points).map_err(|e| self.err(line, e))
    }

    fn first(&self) -> Result<&(u64, StringRecord)> {
        self.rows
            .first()
            .ok_or_else(|| Error::format(&self.path, "file is empty"))
    }

    /// Data row of a curve-format file: label plus exactly `m` values.
    fn curve_row(&self, line: u64, rec: &StringRecord, m: usize) -> Result<(String, Vec<f64>)> {
        if rec.len() != m + 1 {
            return Err(self.err(
                line,
                format!("expected {} columns (label + {m} values), found {}", m + 1, rec.len()),
            ));
        }
        let label = rec[0].to_string();
        Ok((label, self.numbers(line, rec, 1)?))
    }
}

fn curve_id<'a>(table: &Table, line: u64, label: &'a str) -> Result<&'a str> {
    match label.strip_prefix(CURVE_PREFIX) {
        Some(id) if !id.is_empty() => Ok(id),
        _ => Err(table.err(line, format!("column 1: label '{label}' does not look like curve_<id>"))),
    }
}

/// Curves with the ids from their `curve_<id>` labels.
#[derive(Debug, Clone)]
pub struct LabeledCurves {
    pub curves: CurveSet,
    pub ids: Vec<String>,
}

pub fn curves_to_csv(curves: &CurveSet, ids: &[String]) -> String {
    let mut out = String::new();
    grid_row(&mut out, curves.grid());
    for (i, row) in curves.values().row_iter().enumerate() {
        let label = format!("{CURVE_PREFIX}{}", ids.get(i).cloned().unwrap_or_else(|| i.to_string()));
        push_row(&mut out, &label, row.iter());
    }
    out
}

pub fn write_curves(path: &Path, curves: &CurveSet, ids: &[String]) -> Result<()> {
    write_atomic(path, &curves_to_csv(curves, ids))
}

pub fn read_curves(path: &Path) -> Result<LabeledCurves> {
    let table = Table::read(path)?;
    let (line0, header) = table.first()?;
    let grid = table.grid(*line0, header)?;
    let m = grid.len();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (line, rec) in &table.rows[1..] {
        let (label, values) = table.curve_row(*line, rec, m)?;
        ids.push(curve_id(&table, *line, &label)?.to_string());
        data.extend(values);
    }
    if ids.is_empty() {
        return Err(Error::format(path, "no curve rows after the grid row"));
    }
    if let Some(dup) = first_duplicate(&ids) {
        return Err(Error::format(path, format!("curve id '{dup}' appears more than once")));
    }
    let values = DMatrix::from_row_slice(ids.len(), m, &data);
    let curves = CurveSet::new(grid, values).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(LabeledCurves { curves, ids })
}

fn first_duplicate(ids: &[String]) -> Option<&str> {
    let mut seen = std::collections::HashSet::new();
    ids.iter().find(|id| !seen.insert(id.as_str())).map(|s| s.as_str())
}

pub fn replicates_to_csv(reps: &ReplicateSet) -> String {
    let mut out = String::new();
    grid_row(&mut out, reps.grid());
    for (id, subject) in reps.ids().iter().zip(reps.subjects()) {
        for (l, row) in subject.row_iter().enumerate() {
            push_row(&mut out, &format!("{CURVE_PREFIX}{id}{REP_MARKER}{l}"), row.iter());
        }
    }
    out
}

pub fn write_replicates(path: &Path, reps: &ReplicateSet) -> Result<()> {
    write_atomic(path, &replicates_to_csv(reps))
}

/// Groups `curve_<subject>_rep_<l>` rows by subject, in order of first
/// appearance.
pub fn read_replicates(path: &Path) -> Result<ReplicateSet> {
    let table = Table::read(path)?;
    let (line0, header) = table.first()?;
    let grid = table.grid(*line0, header)?;
    let m = grid.len();
    let mut ids: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut index = std::collections::HashMap::new();
    for (line, rec) in &table.rows[1..] {
        let (label, values) = table.curve_row(*line, rec, m)?;
        let body = curve_id(&table, *line, &label)?;
        let (subject, rep) = body
            .rsplit_once(REP_MARKER)
            .filter(|(s, r)| !s.is_empty() && r.parse::<usize>().is_ok())
            .ok_or_else(|| {
                table.err(*line, format!("column 1: label '{label}' does not look like curve_<subject>_rep_<l>"))
            })?;
        if !seen.insert((subject.to_string(), rep.to_string())) {
            return Err(table.err(*line, format!("replicate {rep} of subject {subject} appears twice")));
        }
        let slot = *index.entry(subject.to_string()).or_insert_with(|| {
            ids.push(subject.to_string());
            rows.push(Vec::new());
            ids.len() - 1
        });
        rows[slot].extend(values);
    }
    if ids.is_empty() {
        return Err(Error::format(path, "no replicate rows after the grid row"));
    }
    let subjects = rows
        .into_iter()
        .map(|v| DMatrix::from_row_slice(v.len() / m, m, &v))
        .collect();
    ReplicateSet::with_ids(grid, ids, subjects)
}

pub fn response_to_csv(ids: &[String], y: &DVector<f64>) -> String {
    let mut out = String::from("id,y\n");
    for (i, v) in y.iter().enumerate() {
        let id = ids.get(i).cloned().unwrap_or_else(|| i.to_string());
        out.push_str(&format!("{CURVE_PREFIX}{id},{v}\n"));
    }
    out
}

pub fn write_response(path: &Path, ids: &[String], y: &DVector<f64>) -> Result<()> {
    write_atomic(path, &response_to_csv(ids, y))
}

/// Response file: header `id,y`, rows `curve_<id>,<value>`.
pub fn read_response(path: &Path) -> Result<(Vec<String>, DVector<f64>)> {
    let table = Table::read(path)?;
    let (line0, header) = table.first()?;
    if header.len() != 2 || &header[0] != "id" || &header[1] != "y" {
        return Err(table.err(*line0, "expected the header 'id,y'"));
    }
    let mut ids = Vec::new();
    let mut y = Vec::new();
    for (line, rec) in &table.rows[1..] {
        if rec.len() != 2 {
            return Err(table.err(*line, format!("expected 2 columns, found {}", rec.len())));
        }
        ids.push(curve_id(&table, *line, &rec[0])?.to_string());
        y.push(table.number(*line, 1, &rec[1])?);
    }
    if ids.is_empty() {
        return Err(Error::format(path, "no response rows"));
    }
    if let Some(dup) = first_duplicate(&ids) {
        return Err(Error::format(path, format!("response id '{dup}' appears more than once")));
    }
    Ok((ids, DVector::from_vec(y)))
}

/// Reorders `y` (labelled by `y_ids`) to follow `curve_ids`.
pub fn align_response(curve_ids: &[String], y_ids: &[String], y: &DVector<f64>) -> Result<DVector<f64>> {
    if curve_ids.len() != y_ids.len() {
        return Err(Error::Dimension(format!(
            "{} responses for {} curves",
            y_ids.len(),
            curve_ids.len()
        )));
    }
    let pos: std::collections::HashMap<&str, usize> =
        y_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut out = DVector::zeros(curve_ids.len());
    for (i, id) in curve_ids.iter().enumerate() {
        let j = pos
            .get(id.as_str())
            .ok_or_else(|| Error::Dimension(format!("no response for curve {id}")))?;
        out[i] = y[*j];
    }
    Ok(out)
}

/// Eigenbasis export: header `eigenvalue,cumulative_fraction,<grid>`, then
/// one row per component.
pub fn eigenbasis_to_csv(basis: &EigenBasis, cumulative: &[f64]) -> String {
    let mut out = String::new();
    push_row(&mut out, "eigenvalue,cumulative_fraction", basis.grid().points());
    for (k, lambda) in basis.eigenvalues().iter().enumerate() {
        let c = cumulative.get(k).copied().unwrap_or(f64::NAN);
        push_row(&mut out, &format!("{lambda},{c}"), basis.basis().functions().row(k).iter());
    }
    out
}

pub fn write_eigenbasis(path: &Path, basis: &EigenBasis, cumulative: &[f64]) -> Result<()> {
    write_atomic(path, &eigenbasis_to_csv(basis, cumulative))
}

/// Eigenvalues, cumulative fractions and eigenfunctions of an exported basis.
#[derive(Debug, Clone)]
pub struct ExportedBasis {
    pub eigenvalues: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub functions: CurveSet,
}

pub fn read_eigenbasis(path: &Path) -> Result<ExportedBasis> {
    let table = Table::read(path)?;
    let (line0, header) = table.first()?;
    if header.len() < 3 || &header[0] != "eigenvalue" || &header[1] != "cumulative_fraction" {
        return Err(table.err(*line0, "expected the header 'eigenvalue,cumulative_fraction,<grid>'"));
    }
    let grid = Grid::new(table.numbers(*line0, header, 2)?).map_err(|e| table.err(*line0, e))?;
    let m = grid.len();
    let (mut eigenvalues, mut cumulative, mut data) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in &table.rows[1..] {
        if rec.len() != m + 2 {
            return Err(table.err(*line, format!("expected {} columns, found {}", m + 2, rec.len())));
        }
        let values = table.numbers(*line, rec, 0)?;
        eigenvalues.push(values[0]);
        cumulative.push(values[1]);
        data.extend_from_slice(&values[2..]);
    }
    let functions = CurveSet::new(grid, DMatrix::from_row_slice(eigenvalues.len(), m, &data))
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(ExportedBasis {
        eigenvalues,
        cumulative,
        functions,
    })
}

/// A key/value block followed by named curves on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub fields: Vec<(String, String)>,
    pub curves: Vec<(String, Curve)>,
}

impl Report {
    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn curve(&self, name: &str) -> Option<&Curve> {
        self.curves.iter().find(|(k, _)| k == name).map(|(_, c)| c)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,value\n");
        for (k, v) in &self.fields {
            out.push_str(&format!("{k},{v}\n"));
        }
        if let Some((_, first)) = self.curves.first() {
            grid_row(&mut out, first.grid());
            for (name, c) in &self.curves {
                push_row(&mut out, &format!("{CURVE_PREFIX}{name}"), c.values().iter());
            }
        }
        out
    }
}

pub fn write_report(path: &Path, report: &Report) -> Result<()> {
    write_atomic(path, &report.to_csv())
}

pub fn read_report(path: &Path) -> Result<Report> {
    let table = Table::read(path)?;
    let (line0, header) = table.first()?;
    if header.len() != 2 || &header[0] != "key" || &header[1] != "value" {
        return Err(table.err(*line0, "expected the header 'key,value'"));
    }
    let mut fields = Vec::new();
    let mut rest = table.rows[1..].iter();
    let mut grid = None;
    for (line, rec) in rest.by_ref() {
        if rec.get(0) == Some("t") {
            grid = Some(table.grid(*line, rec)?);
            break;
        }
        if rec.len() != 2 {
            return Err(table.err(*line, format!("expected a key,value pair, found {} columns", rec.len())));
        }
        fields.push((rec[0].to_string(), rec[1].to_string()));
    }
    let mut curves = Vec::new();
    if let Some(grid) = grid {
        for (line, rec) in rest {
            let (label, values) = table.curve_row(*line, rec, grid.len())?;
            let name = curve_id(&table, *line, &label)?.to_string();
            let curve = Curve::new(grid.clone(), DVector::from_vec(values)).map_err(|e| table.err(*line, e))?;
            curves.push((name, curve));
        }
    }
    Ok(Report { fields, curves })
}

pub fn results_to_csv(rows: &[MCResultRow]) -> String {
    let mut out = RESULT_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let l = r.length_scale.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.scenario_id,
            r.family.as_str(),
            r.setting.as_str(),
            r.n,
            r.noise,
            l,
            r.reps,
            r.mean_pn,
            r.mean_e_n,
            r.mean_e_co,
            r.failures
        ));
    }
    out
}

pub fn write_results(path: &Path, rows: &[MCResultRow]) -> Result<()> {
    write_atomic(path, &results_to_csv(rows))
}

pub fn read_results(path: &Path) -> Result<Vec<MCResultRow>> {
    let table = Table::read(path)?;
    let (line0, header) = table.first()?;
    if header.iter().ne(RESULT_COLUMNS.iter().copied()) {
        return Err(table.err(*line0, format!("expected the header '{}'", RESULT_COLUMNS.join(","))));
    }
    let mut rows = Vec::new();
    for (line, rec) in &table.rows[1..] {
        if rec.len() != RESULT_COLUMNS.len() {
            return Err(table.err(*line, format!("expected {} columns, found {}", RESULT_COLUMNS.len(), rec.len())));
        }
        let count = |c: usize| {
            rec[c].parse::<usize>().map_err(|_| {
                Error::format(path, format!("row {line}, column {}: cannot parse '{}' as a count", c + 1, &rec[c]))
            })
        };
        let family: Family = rec[1].parse().map_err(|e: String| table.err(*line, format!("column 2: {e}")))?;
        let setting: Setting = rec[2].parse().map_err(|e: String| table.err(*line, format!("column 3: {e}")))?;
        rows.push(MCResultRow {
            scenario_id: rec[0].to_string(),
            family,
            setting,
            n: count(3)?,
            noise: table.number(*line, 4, &rec[4])?,
            length_scale: if rec[5].is_empty() { None } else { Some(table.number(*line, 5, &rec[5])?) },
            reps: count(6)?,
            mean_pn: table.number(*line, 7, &rec[7])?,
            mean_e_n: table.number(*line, 8, &rec[8])?,
            mean_e_co: table.number(*line, 9, &rec[9])?,
            failures: count(10)?,
        });
    }
    Ok(rows)
}
