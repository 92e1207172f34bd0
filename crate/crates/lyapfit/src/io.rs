//! CSV and sidecar formats.
//!
//! Tables may start with `#` comment lines; writers use them to embed the
//! resolved configuration, readers skip them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lyapfit_core::metrics::GridErrors;
use lyapfit_core::{BasisLibrary, Dataset, LyapunovFunction, SparseModel, VectorField};
use serde::{Deserialize, Serialize};

use crate::Error;

/// Noise level and seed of a dataset file, stored next to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_states: usize,
    pub records: usize,
    pub sigma: f64,
    pub seed: u64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.toml");
    PathBuf::from(s)
}

fn create(path: &Path, comment: Option<&str>) -> Result<csv::Writer<BufWriter<File>>, Error> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    if let Some(text) = comment {
        for line in text.lines() {
            writeln!(out, "# {line}").map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(csv::Writer::from_writer(out))
}

fn open(path: &Path) -> Result<csv::Reader<File>, Error> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file))
}

fn num(path: &Path, s: &str) -> Result<f64, Error> {
    s.parse().map_err(|_| Error::format(path, format!("not a number: `{s}`")))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `t,x1..xN,dx1..dxN,is_equilibrium` plus a `.meta.toml` sidecar.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), Error> {
    let n = data.n_states();
    let mut w = create(path, None)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("dx{i}")));
    header.push("is_equilibrium".into());
    w.write_record(&header)?;
    for j in 0..data.len() {
        let mut row = vec![data.times()[j].to_string()];
        row.extend(data.state(j).iter().map(|v| v.to_string()));
        row.extend(data.derivative(j).iter().map(|v| v.to_string()));
        row.push(u8::from(data.is_equilibrium(j)).to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = DatasetMeta { n_states: n, records: data.len(), sigma: data.noise_sigma(), seed: data.seed() };
    let side = sidecar_path(path);
    write_text(&side, &toml::to_string(&meta).expect("plain struct"))
}

/// Reads a dataset; without a sidecar, noise and seed default to zero.
pub fn read_dataset(path: &Path) -> Result<Dataset, Error> {
    let mut r = open(path)?;
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 4 || (cols - 2) % 2 != 0 || &header[0] != "t" || &header[cols - 1] != "is_equilibrium" {
        return Err(Error::format(path, "expected header t,x1..xN,dx1..dxN,is_equilibrium"));
    }
    let n = (cols - 2) / 2;
    let (mut times, mut states, mut ders, mut eq) = (vec![], vec![], vec![], vec![]);
    for (j, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(Error::format(path, format!("record {} has {} fields", j + 1, rec.len())));
        }
        times.push(num(path, &rec[0])?);
        states.push((1..=n).map(|c| num(path, &rec[c])).collect::<Result<Vec<_>, _>>()?);
        ders.push((n + 1..=2 * n).map(|c| num(path, &rec[c])).collect::<Result<Vec<_>, _>>()?);
        match &rec[cols - 1] {
            "1" | "true" => eq.push(j),
            "0" | "false" => {}
            other => return Err(Error::format(path, format!("bad is_equilibrium `{other}`"))),
        }
    }
    let side = sidecar_path(path);
    let (sigma, seed) = if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: DatasetMeta = toml::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
        if meta.n_states != n || meta.records != times.len() {
            return Err(Error::format(&side, "sidecar does not match the table"));
        }
        (meta.sigma, meta.seed)
    } else {
        (0.0, 0)
    };
    Ok(Dataset::from_records(times, states, ders, eq, sigma, seed)?)
}

/// Row names of a coefficient table: the dynamics library, then Lyapunov
/// terms it lacks.
pub fn coefficient_rows(lib_f: &BasisLibrary, lib_v: Option<&BasisLibrary>) -> Vec<String> {
    let mut rows: Vec<String> = lib_f.display_names().iter().map(|s| s.to_string()).collect();
    if let Some(lv) = lib_v {
        for name in lv.display_names() {
            if lib_f.position_by_name(name).is_none() {
                rows.push(name.to_string());
            }
        }
    }
    rows
}

/// `term,dx1..dxN[,V]`; cells are empty where a term is outside a library.
pub fn write_coefficients(
    path: &Path,
    model: &SparseModel,
    lyap: Option<&LyapunovFunction>,
    comment: Option<&str>,
) -> Result<(), Error> {
    let lib_f = model.library();
    let n = lib_f.n_states();
    let mut w = create(path, comment)?;
    let mut header = vec!["term".to_string()];
    header.extend((1..=n).map(|i| format!("dx{i}")));
    if lyap.is_some() {
        header.push("V".into());
    }
    w.write_record(&header)?;
    for name in coefficient_rows(lib_f, lyap.map(|v| v.library())) {
        let mut row = vec![name.clone()];
        let kf = lib_f.position_by_name(&name);
        for i in 0..n {
            row.push(kf.map_or(String::new(), |k| model.coefficient(i, k).to_string()));
        }
        if let Some(v) = lyap {
            row.push(v.library().position_by_name(&name).map_or(String::new(), |k| v.coefficients()[k].to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a coefficient table into the given libraries. Every nonzero entry
/// must name a term of the matching library; missing rows are zero.
pub fn read_coefficients(
    path: &Path,
    lib_f: &BasisLibrary,
    lib_v: Option<&BasisLibrary>,
) -> Result<(SparseModel, Option<LyapunovFunction>), Error> {
    let n = lib_f.n_states();
    let mut r = open(path)?;
    let header = r.headers()?.clone();
    let has_v = header.len() == n + 2 && &header[n + 1] == "V";
    if header.len() != n + 1 + usize::from(has_v) || &header[0] != "term" {
        return Err(Error::format(path, format!("expected header term,dx1..dx{n}[,V]")));
    }
    let k = lib_f.len();
    let mut c = vec![0.0; n * k];
    let mut v = lib_v.map(|l| vec![0.0; l.len()]);
    for rec in r.records() {
        let rec = rec?;
        let name = &rec[0];
        for i in 0..n {
            let cell = &rec[i + 1];
            if cell.is_empty() {
                continue;
            }
            let value = num(path, cell)?;
            match lib_f.position_by_name(name) {
                Some(col) => c[i * k + col] = value,
                None if value == 0.0 => {}
                None => return Err(Error::format(path, format!("`{name}` is not in the dynamics library"))),
            }
        }
        if has_v && !rec[n + 1].is_empty() {
            let value = num(path, &rec[n + 1])?;
            if let (Some(lv), Some(vv)) = (lib_v, v.as_mut()) {
                match lv.position_by_name(name) {
                    Some(col) => vv[col] = value,
                    None if value == 0.0 => {}
                    None => return Err(Error::format(path, format!("`{name}` is not in the Lyapunov library"))),
                }
            }
        }
    }
    let model = SparseModel::new(lib_f.clone(), c)?;
    let lyap = match (lib_v, v) {
        (Some(lv), Some(vv)) if has_v => Some(LyapunovFunction::new(lv.clone(), vv)?),
        _ => None,
    };
    Ok((model, lyap))
}

/// `x1..xN,l2err`.
pub fn write_error_grid(path: &Path, grid: &GridErrors, comment: Option<&str>) -> Result<(), Error> {
    let n = grid.points.first().map_or(0, |p| p.len());
    let mut w = create(path, comment)?;
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.push("l2err".into());
    w.write_record(&header)?;
    for (p, e) in grid.points.iter().zip(&grid.errors) {
        let mut row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        row.push(e.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Phase portrait samples: state, learned and true vector fields, and the
/// learned `V` with its derivative along the learned field when present.
pub fn write_phase(
    path: &Path,
    points: &[Vec<f64>],
    learned: &dyn VectorField,
    truth: &dyn VectorField,
    lyap: Option<&LyapunovFunction>,
    comment: Option<&str>,
) -> Result<(), Error> {
    let n = learned.n_states();
    let mut w = create(path, comment)?;
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend((1..=n).map(|i| format!("dx{i}")));
    header.extend((1..=n).map(|i| format!("true_dx{i}")));
    if lyap.is_some() {
        header.extend(["V".to_string(), "dV".to_string()]);
    }
    w.write_record(&header)?;
    for x in points {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.extend(learned.eval(x).iter().map(|v| v.to_string()));
        row.extend(truth.eval(x).iter().map(|v| v.to_string()));
        if let Some(v) = lyap {
            row.push(v.value(x).to_string());
            row.push(v.derivative(learned, x).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lyapfit_core::dynamics::make_dataset;
    use lyapfit_core::{build_library, BuiltinSystem};

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = make_dataset(&BuiltinSystem::Oscillator, &[2.0, 1.5], 0.01, 50, 0.05, 3, true).unwrap();
        write_dataset(&path, &d).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.states(), d.states());
        assert_eq!(back.derivatives(), d.derivatives());
        assert_eq!(back.equilibrium_indices(), d.equilibrium_indices());
        assert_eq!((back.noise_sigma(), back.seed()), (0.05, 3));
        assert!(back.times()[50].is_nan());
    }

    #[test]
    fn coefficient_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let lf = build_library(2, 3, false);
        let lv = build_library(2, 4, false);
        let m = BuiltinSystem::Oscillator.true_model(&lf).unwrap();
        let v = LyapunovFunction::sum_of_squares(&lv).unwrap();
        write_coefficients(&path, &m, Some(&v), Some("seed = 1\nname = \"x\"")).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# seed = 1\n# name"));
        assert!(text.contains("\nx1^4,,,0\n"));
        let (m2, v2) = read_coefficients(&path, &lf, Some(&lv)).unwrap();
        assert_eq!(m2, m);
        assert_eq!(v2.unwrap(), v);
        let small = build_library(2, 1, false);
        assert!(matches!(read_coefficients(&path, &small, None), Err(Error::Format { .. })));
    }

    #[test]
    fn malformed_tables_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,x1,dx1,flag\n0,1,2,0\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })));
        std::fs::write(&path, "t,x1,dx1,is_equilibrium\n0,1,oops,0\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })));
    }
}
