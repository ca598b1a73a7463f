use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use pxfb::freeboundary::FreeBoundary;
use pxfb::optimizer::StageTrace;
use pxfb::{Grid, Location, ScalarField};
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Writes through a temporary sibling and renames it into place, so a
/// reader never sees a partial file.
pub fn atomic_write(path: &Path, contents: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path.display(), e)
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes to JSON");
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// 17 significant digits: parsing the text gives back the same `f64`.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn coord_header(dim: usize) -> &'static str {
    if dim == 1 {
        "x"
    } else {
        "x,y"
    }
}

/// One row per node or cell in storage order: coordinates then the value.
pub fn field_csv(field: &ScalarField, column: &str) -> String {
    let dim = field.grid().dim();
    let mut s = format!("{},{column}\n", coord_header(dim));
    for (k, &v) in field.values().iter().enumerate() {
        let x = field.coord(k);
        for c in &x[..dim] {
            let _ = write!(s, "{},", num(*c));
        }
        let _ = writeln!(s, "{}", num(v));
    }
    s
}

pub fn free_boundary_csv(fb: &FreeBoundary, dim: usize) -> String {
    let mut s =
        String::from(if dim == 1 { "x,nu,grad_trace,lambda_star\n" } else { "x,y,nu_x,nu_y,grad_trace,lambda_star\n" });
    for i in 0..fb.len() {
        let (x, nu) = (fb.points[i], fb.normals[i]);
        let cols: Vec<f64> = if dim == 1 {
            vec![x[0], nu[0], fb.grad_trace[i], fb.lambda_star_local[i]]
        } else {
            vec![x[0], x[1], nu[0], nu[1], fb.grad_trace[i], fb.lambda_star_local[i]]
        };
        let row: Vec<String> = cols.into_iter().map(num).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

pub fn energy_trace_csv(trace: &[StageTrace]) -> String {
    let mut s = String::from("stage,eps,delta,iterations,converged,dirichlet,volume,total,grad_norm\n");
    for (i, t) in trace.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{},{},{},{}",
            num(t.eps),
            num(t.delta),
            t.iterations,
            t.converged,
            num(t.energy.dirichlet),
            num(t.energy.volume),
            num(t.energy.total),
            num(t.grad_norm)
        );
    }
    s
}

/// Quotes a CSV cell when it holds a separator or quote.
pub fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Reads a field CSV in the [`field_csv`] layout, checking row count and
/// coordinates against `grid`.
pub fn read_field_csv(path: &Path, grid: &Grid, location: Location) -> Result<Vec<f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let dim = grid.dim();
    let expected = match location {
        Location::Node => grid.node_count(),
        Location::Cell => grid.cell_count(),
    };
    let probe = ScalarField::constant(*grid, location, 0.0).map_err(|e| e.to_string())?;
    let tol = 1e-9 * (1.0 + grid.diameter());
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    lines.next().ok_or_else(|| format!("{}: empty file", path.display()))?;
    let mut values = Vec::with_capacity(expected);
    for (lineno, line) in lines {
        let k = values.len();
        let at = || format!("{} line {}", path.display(), lineno + 1);
        if k == expected {
            return Err(format!("{}: more than {expected} rows", at()));
        }
        let cols: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("{}: {e}", at()))?;
        if cols.len() != dim + 1 {
            return Err(format!("{}: expected {} columns, got {}", at(), dim + 1, cols.len()));
        }
        let x = probe.coord(k);
        if (0..dim).any(|a| (cols[a] - x[a]).abs() > tol) {
            return Err(format!("{}: coordinates {:?} do not match grid point {:?}", at(), &cols[..dim], &x[..dim]));
        }
        values.push(cols[dim]);
    }
    if values.len() != expected {
        return Err(format!("{}: expected {expected} rows, got {}", path.display(), values.len()));
    }
    Ok(values)
}
