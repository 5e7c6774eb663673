//! CSV and JSON persistence.
//!
//! Rasters are stored with a one-line grid header (`nx,ny,x_min,x_max,y_min,y_max`)
//! followed by `ny` rows of `nx` values, lowest `y` first. Writes go to a
//! temporary sibling and are renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spatial::{Location, ModeratorKind, ModeratorPanel, PointPattern, Raster, Window};
use crate::weights::{PseudoOutcomePanel, WeightSeries};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("'{}' is not a file path", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message: message.into(),
    }
}

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(headers)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(f))
}

fn records(path: &Path, headers: bool) -> Result<(Vec<String>, Vec<(u64, csv::StringRecord)>)> {
    let mut rdr = reader(path, headers)?;
    let head = if headers {
        rdr.headers()
            .map_err(|e| parse_err(path, 1, e.to_string()))?
            .iter()
            .map(|h| h.to_ascii_lowercase())
            .collect()
    } else {
        Vec::new()
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push((line, rec));
    }
    Ok((head, out))
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, what: &str) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| parse_err(path, line, format!("missing column '{what}'")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {what} from '{raw}'")))
}

fn finite(path: &Path, line: u64, v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(path, line, format!("{what} is not finite")))
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn read_raster_csv(path: &Path) -> Result<Raster> {
    let (_, recs) = records(path, false)?;
    let Some(((line, head), rows)) = recs.split_first() else {
        return Err(parse_err(path, 1, "empty raster file"));
    };
    if head.len() != 6 {
        return Err(parse_err(path, *line, "header must be nx,ny,x_min,x_max,y_min,y_max"));
    }
    let nx: usize = field(path, *line, head, 0, "nx")?;
    let ny: usize = field(path, *line, head, 1, "ny")?;
    let b: Vec<f64> = (2..6)
        .map(|i| field(path, *line, head, i, "window bound"))
        .collect::<Result<_>>()?;
    let window = Window::new(b[0], b[1], b[2], b[3]).map_err(|e| parse_err(path, *line, e.to_string()))?;
    if rows.len() != ny {
        return Err(parse_err(path, *line, format!("expected {ny} rows, found {}", rows.len())));
    }
    let mut values = Vec::with_capacity(nx * ny);
    for (line, rec) in rows {
        if rec.len() != nx {
            return Err(parse_err(path, *line, format!("expected {nx} values, found {}", rec.len())));
        }
        for i in 0..nx {
            let v: f64 = field(path, *line, rec, i, "value")?;
            values.push(finite(path, *line, v, "value")?);
        }
    }
    Raster::new(window, nx, ny, values).map_err(|e| parse_err(path, *line, e.to_string()))
}

pub fn write_raster_csv(path: &Path, raster: &Raster) -> Result<()> {
    let w = raster.window();
    let mut s = format!(
        "{},{},{},{},{},{}\n",
        raster.nx(),
        raster.ny(),
        fmt(w.x_min()),
        fmt(w.x_max()),
        fmt(w.y_min()),
        fmt(w.y_max())
    );
    for row in raster.values().chunks(raster.nx()) {
        let line: Vec<String> = row.iter().map(|v| fmt(*v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

/// Reads a stack of rasters: header `nx,ny,x_min,x_max,y_min,y_max,periods`,
/// then `ny` rows per period, period 1 first.
pub fn read_raster_stack_csv(path: &Path) -> Result<Vec<Raster>> {
    let (_, recs) = records(path, false)?;
    let Some(((line, head), rows)) = recs.split_first() else {
        return Err(parse_err(path, 1, "empty raster stack file"));
    };
    if head.len() != 7 {
        return Err(parse_err(path, *line, "header must be nx,ny,x_min,x_max,y_min,y_max,periods"));
    }
    let nx: usize = field(path, *line, head, 0, "nx")?;
    let ny: usize = field(path, *line, head, 1, "ny")?;
    let periods: usize = field(path, *line, head, 6, "periods")?;
    let b: Vec<f64> = (2..6)
        .map(|i| field(path, *line, head, i, "window bound"))
        .collect::<Result<_>>()?;
    let window = Window::new(b[0], b[1], b[2], b[3]).map_err(|e| parse_err(path, *line, e.to_string()))?;
    if ny == 0 || rows.len() != ny * periods {
        return Err(parse_err(
            path,
            *line,
            format!("expected {} rows, found {}", ny * periods, rows.len()),
        ));
    }
    rows.chunks(ny)
        .map(|chunk| {
            let mut values = Vec::with_capacity(nx * ny);
            for (line, rec) in chunk {
                if rec.len() != nx {
                    return Err(parse_err(path, *line, format!("expected {nx} values, found {}", rec.len())));
                }
                for i in 0..nx {
                    let v: f64 = field(path, *line, rec, i, "value")?;
                    values.push(finite(path, *line, v, "value")?);
                }
            }
            Raster::new(window, nx, ny, values).map_err(|e| parse_err(path, chunk[0].0, e.to_string()))
        })
        .collect()
}

pub fn write_raster_stack_csv(path: &Path, rasters: &[Raster]) -> Result<()> {
    let first = rasters
        .first()
        .ok_or_else(|| Error::invalid("cannot write an empty raster stack"))?;
    if rasters.iter().any(|r| !r.same_grid(first)) {
        return Err(Error::invalid("rasters in a stack must share one grid"));
    }
    let w = first.window();
    let mut s = format!(
        "{},{},{},{},{},{},{}\n",
        first.nx(),
        first.ny(),
        fmt(w.x_min()),
        fmt(w.x_max()),
        fmt(w.y_min()),
        fmt(w.y_max()),
        rasters.len()
    );
    for r in rasters {
        for row in r.values().chunks(r.nx()) {
            let line: Vec<String> = row.iter().map(|v| fmt(*v)).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
    }
    write_atomic(path, s.as_bytes())
}

fn column(path: &Path, head: &[String], name: &str) -> Result<usize> {
    head.iter()
        .position(|h| h == name)
        .ok_or_else(|| parse_err(path, 1, format!("missing column '{name}'")))
}

/// Reads `t,x,y` rows into patterns for `t = 1..=periods`. Without
/// `periods`, the largest `t` in the file is used.
pub fn read_points_csv(path: &Path, window: &Window, periods: Option<usize>) -> Result<Vec<PointPattern>> {
    let (head, recs) = records(path, true)?;
    let (it, ix, iy) = (column(path, &head, "t")?, column(path, &head, "x")?, column(path, &head, "y")?);
    let mut rows = Vec::with_capacity(recs.len());
    for (line, rec) in &recs {
        let t: usize = field(path, *line, rec, it, "t")?;
        if t == 0 {
            return Err(parse_err(path, *line, "periods are numbered from 1"));
        }
        let x = finite(path, *line, field(path, *line, rec, ix, "x")?, "x")?;
        let y = finite(path, *line, field(path, *line, rec, iy, "y")?, "y")?;
        let loc = Location::new(x, y);
        if !window.contains(loc) {
            return Err(parse_err(path, *line, format!("point ({x}, {y}) lies outside the window")));
        }
        if let Some(n) = periods {
            if t > n {
                return Err(parse_err(path, *line, format!("period {t} exceeds {n}")));
            }
        }
        rows.push((t, loc));
    }
    let n = periods.unwrap_or_else(|| rows.iter().map(|r| r.0).max().unwrap_or(0));
    let mut out: Vec<PointPattern> = (1..=n).map(PointPattern::empty).collect();
    for (t, loc) in rows {
        out[t - 1].points.push(loc);
    }
    Ok(out)
}

pub fn write_points_csv(path: &Path, patterns: &[PointPattern]) -> Result<()> {
    let mut s = String::from("t,x,y\n");
    for p in patterns {
        for l in &p.points {
            s.push_str(&format!("{},{},{}\n", p.t, fmt(l.x), fmt(l.y)));
        }
    }
    write_atomic(path, s.as_bytes())
}

/// Reads `pixel,value` (time-invariant) or `pixel,t,value` rows. Every pixel
/// (and period) must appear exactly once.
pub fn read_moderator_csv(path: &Path, pixels: usize, kind: ModeratorKind) -> Result<ModeratorPanel> {
    let (head, recs) = records(path, true)?;
    let ip = column(path, &head, "pixel")?;
    let iv = column(path, &head, "value")?;
    let it = head.iter().position(|h| h == "t");
    let mut entries = Vec::with_capacity(recs.len());
    for (line, rec) in &recs {
        let p: usize = field(path, *line, rec, ip, "pixel")?;
        if p >= pixels {
            return Err(parse_err(path, *line, format!("pixel {p} outside 0..{pixels}")));
        }
        let t: usize = match it {
            Some(i) => field(path, *line, rec, i, "t")?,
            None => 1,
        };
        if t == 0 {
            return Err(parse_err(path, *line, "periods are numbered from 1"));
        }
        let v = finite(path, *line, field(path, *line, rec, iv, "value")?, "value")?;
        entries.push((*line, t, p, v));
    }
    let periods = entries.iter().map(|e| e.1).max().unwrap_or(0);
    if periods == 0 {
        return Err(parse_err(path, 1, "moderator file has no rows"));
    }
    let mut values = vec![vec![f64::NAN; pixels]; periods];
    for (line, t, p, v) in entries {
        if !values[t - 1][p].is_nan() {
            return Err(parse_err(path, line, format!("duplicate entry for pixel {p}, period {t}")));
        }
        values[t - 1][p] = v;
    }
    if let Some((t, p)) = values
        .iter()
        .enumerate()
        .find_map(|(t, c)| c.iter().position(|v| v.is_nan()).map(|p| (t + 1, p)))
    {
        return Err(parse_err(path, 1, format!("no value for pixel {p}, period {t}")));
    }
    let wrap = |e: Error| parse_err(path, 1, e.to_string());
    if it.is_none() {
        ModeratorPanel::spatial(kind, values.pop().expect("one period")).map_err(wrap)
    } else {
        ModeratorPanel::spatio_temporal(kind, values).map_err(wrap)
    }
}

pub fn write_weights_csv(path: &Path, series: &WeightSeries) -> Result<()> {
    let flags = series.flags();
    let tag = match (flags.truncated, flags.stabilized) {
        (None, false) => String::from("raw"),
        (None, true) => String::from("stabilized"),
        (Some(q), false) => format!("truncated_{q}"),
        (Some(q), true) => format!("truncated_{q}+stabilized"),
    };
    let mut s = String::from("t,log_rho,rho,flags\n");
    for (t, lr) in series.periods().zip(series.log_rho()) {
        s.push_str(&format!("{t},{},{},{tag}\n", fmt(*lr), fmt(lr.exp())));
    }
    write_atomic(path, s.as_bytes())
}

pub fn write_pseudo_outcomes_csv(path: &Path, panel: &PseudoOutcomePanel) -> Result<()> {
    let mut s = String::from("t,pixel,value\n");
    for (t, p, v) in panel.rows() {
        s.push_str(&format!("{t},{p},{}\n", fmt(v)));
    }
    write_atomic(path, s.as_bytes())
}

/// Writes `t,beta_0,...` rows.
pub fn write_beta_csv(path: &Path, names: &[String], rows: &[(usize, Vec<f64>)]) -> Result<()> {
    let mut s = String::from("t");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (t, b) in rows {
        s.push_str(&t.to_string());
        for v in b {
            s.push(',');
            s.push_str(&fmt(*v));
        }
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::RasterShape;

    #[test]
    fn raster_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let w = Window::new(0.0, 6.0, -1.0, 2.0).unwrap();
        let r = Raster::from_fn(w, RasterShape::new(4, 3).unwrap(), |l| l.x * 0.1 + l.y);
        write_raster_csv(&path, &r).unwrap();
        let back = read_raster_csv(&path).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn raster_stack_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let w = Window::new(0.0, 2.0, 0.0, 1.0).unwrap();
        let shape = RasterShape::new(3, 2).unwrap();
        let stack: Vec<Raster> = (0..4)
            .map(|t| Raster::from_fn(w, shape, |l| (l.x + t as f64).sin() / 3.0))
            .collect();
        write_raster_stack_csv(&path, &stack).unwrap();
        assert_eq!(read_raster_stack_csv(&path).unwrap(), stack);
        fs::write(&path, "3,2,0,2,0,1,2\n1,2,3\n4,5,6\n").unwrap();
        assert!(matches!(read_raster_stack_csv(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn points_round_trip_and_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let pats = vec![
            PointPattern::new(1, vec![Location::new(0.5, 0.25)]),
            PointPattern::empty(2),
            PointPattern::new(3, vec![Location::new(0.1, 0.9), Location::new(1.0, 1.0)]),
        ];
        write_points_csv(&path, &pats).unwrap();
        assert_eq!(read_points_csv(&path, &Window::unit(), Some(3)).unwrap(), pats);
        fs::write(&path, "t,x,y\n1,0.5,0.5\n2,1.5,0.5\n").unwrap();
        match read_points_csv(&path, &Window::unit(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&path, "t,x,y\n1,abc,0.5\n").unwrap();
        assert!(matches!(
            read_points_csv(&path, &Window::unit(), None),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn moderator_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "pixel,value\n0,1\n1,0\n2,1\n").unwrap();
        let m = read_moderator_csv(&path, 3, ModeratorKind::Binary).unwrap();
        assert_eq!(m.periods(), None);
        assert_eq!(m.column(7).unwrap(), &[1.0, 0.0, 1.0]);
        fs::write(&path, "pixel,t,value\n0,1,0.5\n1,1,0.1\n0,2,0.3\n1,2,0.2\n").unwrap();
        let m = read_moderator_csv(&path, 2, ModeratorKind::Continuous).unwrap();
        assert_eq!(m.column(2).unwrap(), &[0.3, 0.2]);
        fs::write(&path, "pixel,value\n0,1\n").unwrap();
        assert!(read_moderator_csv(&path, 2, ModeratorKind::Binary).is_err());
        fs::write(&path, "pixel,value\n0,1\n0,1\n").unwrap();
        assert!(matches!(
            read_moderator_csv(&path, 1, ModeratorKind::Binary),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn json_round_trip_and_atomic_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("v.json");
        write_json(&path, &vec![1.5, 2.0]).unwrap();
        write_json(&path, &vec![3.0]).unwrap();
        let v: Vec<f64> = read_json(&path).unwrap();
        assert_eq!(v, vec![3.0]);
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
