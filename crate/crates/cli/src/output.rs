use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use mortcast::data::{AgeGrid, PopulationLabel, Sex};
use mortcast::error::{Error, Result};
use mortcast::fpca::{EigenSystem, MultilevelDecomposition};
use mortcast::lifetable::E0Summary;
use mortcast::methods::{ForecastSurface, MethodInput};
use mortcast::uncertainty::{quantile, PosteriorDraws};
use nalgebra::DMatrix;
use serde::Deserialize;
use tempfile::NamedTempFile;

/// Writes through a temporary file in the target directory, then renames it
/// into place so readers never see a partial file.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Writes a CSV with the given header and string rows.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    write_atomic(path, |out| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    })
}

/// Shortest text that parses back to the same value; `.` for missing.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        ".".into()
    } else {
        v.to_string()
    }
}

pub fn write_smoothed(path: &Path, input: &MethodInput) -> Result<()> {
    let grid = input.grid();
    let mut rows = Vec::new();
    for s in input.surfaces() {
        for t in 0..s.n_years() {
            for i in 0..grid.len() {
                rows.push(vec![
                    s.label.to_string(),
                    (s.first_year + t as i32).to_string(),
                    grid.label(i),
                    num(s.f[(t, i)]),
                    num(s.delta2[(t, i)]),
                ]);
            }
        }
    }
    write_table(path, &["population", "year", "age", "f", "delta2"], rows)
}

pub fn write_forecasts(path: &Path, surfaces: &[ForecastSurface], grid: &AgeGrid) -> Result<()> {
    let mut rows = Vec::new();
    for s in surfaces {
        for h in 0..s.horizon() {
            for i in 0..grid.len() {
                rows.push(vec![s.method.clone(), s.population.to_string(), (h + 1).to_string(), grid.label(i), num(s.mean[(h, i)])]);
            }
        }
    }
    write_table(path, &["method", "population", "horizon", "age", "log_rate_forecast"], rows)
}

/// Male minus female log rates for every population pair that differs only
/// by sex, in plot-ready long format.
pub fn write_sex_gap(path: &Path, surfaces: &[ForecastSurface], grid: &AgeGrid) -> Result<()> {
    let mut rows = Vec::new();
    for f in surfaces.iter().filter(|s| s.population.sex == Sex::Female) {
        let male = PopulationLabel { sex: Sex::Male, ..f.population.clone() };
        let Some(m) = surfaces.iter().find(|s| s.method == f.method && s.population == male) else { continue };
        let pair = PopulationLabel { sex: Sex::Total, ..f.population.clone() };
        for h in 0..f.horizon() {
            for i in 0..grid.len() {
                rows.push(vec![
                    f.method.clone(),
                    pair.to_string(),
                    (f.origin_year + h as i32 + 1).to_string(),
                    grid.label(i),
                    num(m.mean[(h, i)] - f.mean[(h, i)]),
                ]);
            }
        }
    }
    write_table(path, &["method", "population", "year", "age", "log_gap"], rows)
}

#[derive(Debug, Deserialize)]
pub struct ForecastRow {
    pub method: String,
    pub population: String,
    pub horizon: usize,
    pub age: String,
    pub log_rate_forecast: f64,
}

/// Parses an age label such as `"40"` or `"95+"`.
pub fn parse_age(label: &str) -> Result<(f64, bool)> {
    let (text, open) = match label.strip_suffix('+') {
        Some(t) => (t, true),
        None => (label, false),
    };
    let age: f64 = text.trim().parse().map_err(|_| Error::Structure(format!("bad age label '{label}'")))?;
    Ok((age, open))
}

/// Log-rate surfaces (horizon x age) keyed by population, in file order.
pub struct SurfaceTable {
    pub grid: AgeGrid,
    pub surfaces: Vec<(PopulationLabel, DMatrix<f64>)>,
}

/// Groups per-cell rows into one surface per population. Every population
/// must cover the same ages and horizons `1..=H`.
pub fn collect_surfaces(cells: Vec<(PopulationLabel, usize, String, f64)>) -> Result<SurfaceTable> {
    let mut ages: BTreeMap<u64, (f64, bool)> = BTreeMap::new();
    let mut order: Vec<PopulationLabel> = Vec::new();
    let mut by_pop: BTreeMap<PopulationLabel, BTreeMap<(usize, u64), f64>> = BTreeMap::new();
    for (pop, h, age, v) in cells {
        let (a, open) = parse_age(&age)?;
        ages.insert(a.to_bits(), (a, open));
        if !by_pop.contains_key(&pop) {
            order.push(pop.clone());
        }
        if by_pop.entry(pop.clone()).or_default().insert((h, a.to_bits()), v).is_some() {
            return Err(Error::Structure(format!("{pop}: horizon {h} age {age} appears twice")));
        }
    }
    if order.is_empty() {
        return Err(Error::Structure("no forecast rows".into()));
    }
    let mut sorted: Vec<(f64, bool)> = ages.into_values().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let open = sorted.last().is_some_and(|a| a.1);
    if sorted.iter().rev().skip(1).any(|a| a.1) {
        return Err(Error::Structure("only the last age group can be open".into()));
    }
    let grid = AgeGrid::new(sorted.iter().map(|a| a.0).collect(), open)?;
    let mut surfaces = Vec::new();
    for pop in order {
        let cells = &by_pop[&pop];
        let horizon = cells.keys().map(|k| k.0).max().unwrap_or(0);
        if horizon == 0 || cells.len() != horizon * grid.len() {
            return Err(Error::Structure(format!("{pop}: rows do not cover every horizon 1..={horizon} and age")));
        }
        let mut m = DMatrix::zeros(horizon, grid.len());
        for (i, a) in grid.ages().iter().enumerate() {
            for h in 1..=horizon {
                m[(h - 1, i)] = *cells
                    .get(&(h, a.to_bits()))
                    .ok_or_else(|| Error::Structure(format!("{pop}: missing horizon {h} age {a}")))?;
            }
        }
        surfaces.push((pop, m));
    }
    Ok(SurfaceTable { grid, surfaces })
}

/// Reads a forecast CSV, keeping one method (required when several appear).
pub fn read_forecasts(text: &str, method: Option<&str>) -> Result<SurfaceTable> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let rows: Vec<ForecastRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    let keep = match (method, methods.as_slice()) {
        (Some(m), _) if methods.contains(&m) => m.to_string(),
        (Some(m), _) => return Err(Error::Config(format!("method '{m}' not in the forecast file (found {})", methods.join(", ")))),
        (None, [one]) => one.to_string(),
        (None, []) => return Err(Error::Structure("no forecast rows".into())),
        (None, _) => return Err(Error::Config(format!("several methods in the forecast file; pick one of {}", methods.join(", ")))),
    };
    let cells = rows
        .into_iter()
        .filter(|r| r.method == keep)
        .map(|r| Ok((r.population.parse()?, r.horizon, r.age, r.log_rate_forecast)))
        .collect::<Result<Vec<_>>>()?;
    collect_surfaces(cells)
}

#[derive(Debug, Deserialize)]
pub struct IntervalRow {
    pub population: String,
    pub horizon: usize,
    pub age: String,
    pub lo80: f64,
    pub hi80: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// Four bound surfaces per population: `[lo80, hi80, lo95, hi95]`.
pub fn read_intervals(text: &str) -> Result<Vec<(PopulationLabel, [DMatrix<f64>; 4], AgeGrid)>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let rows: Vec<IntervalRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    let column = |pick: fn(&IntervalRow) -> f64| -> Result<SurfaceTable> {
        let cells = rows.iter().map(|r| Ok((r.population.parse()?, r.horizon, r.age.clone(), pick(r)))).collect::<Result<Vec<_>>>()?;
        collect_surfaces(cells)
    };
    let tables = [column(|r| r.lo80)?, column(|r| r.hi80)?, column(|r| r.lo95)?, column(|r| r.hi95)?];
    let mut out = Vec::new();
    for (k, (pop, _)) in tables[0].surfaces.iter().enumerate() {
        let pick = |t: &SurfaceTable| t.surfaces[k].1.clone();
        out.push((pop.clone(), [pick(&tables[0]), pick(&tables[1]), pick(&tables[2]), pick(&tables[3])], tables[0].grid.clone()));
    }
    Ok(out)
}

pub fn write_intervals(path: &Path, labels: &[PopulationLabel], paths: &[Vec<DMatrix<f64>>], grid: &AgeGrid) -> Result<()> {
    let mut rows = Vec::new();
    for (label, draws) in labels.iter().zip(paths) {
        let (h, p) = draws[0].shape();
        for k in 0..h {
            for i in 0..p {
                let mut v: Vec<f64> = draws.iter().map(|d| d[(k, i)]).collect();
                v.sort_by(f64::total_cmp);
                let q = |prob: f64| num(quantile(&v, prob));
                rows.push(vec![label.to_string(), (k + 1).to_string(), grid.label(i), q(0.5), q(0.1), q(0.9), q(0.025), q(0.975)]);
            }
        }
    }
    write_table(path, &["population", "horizon", "age", "median", "lo80", "hi80", "lo95", "hi95"], rows)
}

pub fn e0_row(label: &PopulationLabel, s: &E0Summary, point: f64) -> Vec<String> {
    vec![label.to_string(), s.horizon.to_string(), num(point), num(s.lo80), num(s.hi80), num(s.lo95), num(s.hi95)]
}

pub const E0_HEADER: [&str; 7] = ["population", "horizon", "e0", "lo80", "hi80", "lo95", "hi95"];

fn summary(values: &mut [f64]) -> [String; 5] {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    [num(mean), num(var.sqrt()), num(quantile(values, 0.025)), num(quantile(values, 0.5)), num(quantile(values, 0.975))]
}

/// Posterior mean, sd and quantiles of the variance parameters of each
/// population, plus the mean acceptance rate of the hyperparameter step.
pub fn posterior_rows(post: &PosteriorDraws) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (j, label) in post.labels.iter().enumerate() {
        let params: [(&str, Vec<f64>); 3] = [
            ("sigma2", post.draws.iter().map(|d| d.sigma2[j]).collect()),
            ("v_omega", post.draws.iter().map(|d| d.v_omega[j]).collect()),
            ("mean_delta2", post.draws.iter().map(|d| d.delta2[j].mean()).collect()),
        ];
        for (name, mut v) in params {
            let mut row = vec![label.to_string(), name.to_string()];
            row.extend(summary(&mut v));
            rows.push(row);
        }
        let acc: Vec<f64> = post.acceptance.iter().filter_map(|c| c.get(j).copied()).collect();
        let mean_acc = acc.iter().sum::<f64>() / acc.len().max(1) as f64;
        rows.push(vec![label.to_string(), "acceptance".into(), num(mean_acc), ".".into(), ".".into(), ".".into(), ".".into()]);
    }
    rows
}

pub const POSTERIOR_HEADER: [&str; 7] = ["population", "parameter", "mean", "sd", "q025", "q50", "q975"];

fn eigen_rows(
    group: &str,
    level: &str,
    pop: &str,
    sys: &EigenSystem,
    grid: &AgeGrid,
    first_year: i32,
) -> (Vec<Vec<String>>, Vec<Vec<String>>, Vec<Vec<String>>) {
    let total = sys.total_variance();
    let mut functions = Vec::new();
    let mut scores = Vec::new();
    let mut values = Vec::new();
    for k in 0..sys.len() {
        let id = (k + 1).to_string();
        for i in 0..grid.len() {
            functions.push(vec![group.into(), level.into(), pop.into(), id.clone(), grid.label(i), num(sys.eigenfunctions[(k, i)])]);
        }
        for t in 0..sys.scores.nrows() {
            scores.push(vec![group.into(), level.into(), pop.into(), id.clone(), (first_year + t as i32).to_string(), num(sys.scores[(t, k)])]);
        }
        let share = if total > 0.0 { sys.eigenvalues[k] / total } else { f64::NAN };
        values.push(vec![group.into(), level.into(), pop.into(), id, num(sys.eigenvalues[k]), num(share)]);
    }
    (functions, scores, values)
}

/// One CSV per piece of the decomposition: mean, eta, eigenfunctions,
/// scores, eigenvalues and sigma2.
pub fn write_decomposition(dir: &Path, groups: &[(String, MultilevelDecomposition)], first_year: i32) -> Result<()> {
    let mut mean = Vec::new();
    let mut eta = Vec::new();
    let mut functions = Vec::new();
    let mut scores = Vec::new();
    let mut values = Vec::new();
    let mut sigma2 = Vec::new();
    for (name, dec) in groups {
        let grid = &dec.grid;
        for i in 0..grid.len() {
            mean.push(vec![name.clone(), grid.label(i), num(dec.mu[i])]);
        }
        let mut add = |level: &str, pop: &str, sys: &EigenSystem| {
            let (f, s, v) = eigen_rows(name, level, pop, sys, grid, first_year);
            functions.extend(f);
            scores.extend(s);
            values.extend(v);
        };
        add("common", "", &dec.common);
        for (j, c) in dec.populations.iter().enumerate() {
            let pop = c.label.to_string();
            for i in 0..grid.len() {
                eta.push(vec![name.clone(), pop.clone(), grid.label(i), num(c.eta[i])]);
            }
            add("specific", &pop, &c.specific);
            sigma2.push(vec![name.clone(), pop, num(c.sigma2), num(dec.within_cluster_variability(j).unwrap_or(f64::NAN))]);
        }
    }
    write_table(&dir.join("mean.csv"), &["group", "age", "value"], mean)?;
    write_table(&dir.join("eta.csv"), &["group", "population", "age", "value"], eta)?;
    write_table(&dir.join("eigenfunctions.csv"), &["group", "level", "population", "component", "age", "value"], functions)?;
    write_table(&dir.join("scores.csv"), &["group", "level", "population", "component", "year", "value"], scores)?;
    write_table(&dir.join("eigenvalues.csv"), &["group", "level", "population", "component", "eigenvalue", "share"], values)?;
    write_table(&dir.join("sigma2.csv"), &["group", "population", "sigma2", "within_cluster_variability"], sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.csv");
        write_table(&path, &["a", "b"], vec![vec!["1".into(), "2".into()]]).unwrap();
        write_table(&path, &["a", "b"], vec![vec!["3".into(), "4".into()]]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "a,b\n3,4\n");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn failed_write_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let r = write_atomic(&path, |_| Err(Error::Numerical("boom".into())));
        assert!(r.is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn age_labels() {
        assert_eq!(parse_age("40").unwrap(), (40.0, false));
        assert_eq!(parse_age("95+").unwrap(), (95.0, true));
        assert!(parse_age("x").is_err());
    }

    #[test]
    fn forecast_round_trip() {
        let text = "method,population,horizon,age,log_rate_forecast\n\
                    M,A:female,1,0,-4\nM,A:female,1,1+,-3\nM,A:female,2,0,-4.5\nM,A:female,2,1+,-3.5\n\
                    N,A:female,1,0,-1\nN,A:female,1,1+,-1\n";
        assert!(matches!(read_forecasts(text, None), Err(Error::Config(_))));
        let t = read_forecasts(text, Some("M")).unwrap();
        assert_eq!(t.grid.ages(), &[0.0, 1.0]);
        assert!(t.grid.open_ended_last());
        assert_eq!(t.surfaces[0].1, DMatrix::from_row_slice(2, 2, &[-4.0, -3.0, -4.5, -3.5]));
        let gappy = "method,population,horizon,age,log_rate_forecast\nM,A:female,1,0,-4\nM,A:female,2,1+,-3\n";
        assert!(matches!(read_forecasts(gappy, None), Err(Error::Structure(_))));
    }
}
