use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use nalgebra::DMatrix;

use super::{AgeGrid, Hierarchy, MortalityDataset, PopulationLabel};
use crate::error::{Error, Result};

const HEADER: [&str; 7] = ["population", "sex", "region", "year", "age", "rate", "exposure"];

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        ".".into()
    } else {
        // `Display` for f64 is the shortest string that parses back to the same bits.
        format!("{v}")
    }
}

fn parse_value(s: &str, line: usize, what: &str) -> Result<f64> {
    let s = s.trim();
    if s == "." {
        return Ok(f64::NAN);
    }
    let v: f64 = s.parse().map_err(|_| Error::Parse { line, message: format!("bad {what} '{s}'") })?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Parse { line, message: format!("{what} must be finite and non-negative, got {s}") });
    }
    Ok(v)
}

/// Writes one row per (population, year, age) in dataset order.
pub fn write_canonical_csv<W: Write>(dataset: &MortalityDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    let grid = dataset.grid();
    for pop in dataset.populations() {
        let l = &pop.label;
        for (t, year) in dataset.years().into_iter().enumerate() {
            for i in 0..grid.len() {
                w.write_record([
                    l.name.clone(),
                    l.sex.to_string(),
                    l.region.clone().unwrap_or_default(),
                    year.to_string(),
                    grid.label(i),
                    fmt_value(pop.rates[(t, i)]),
                    fmt_value(pop.exposures[(t, i)]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the long-format CSV back into a dataset. Rows may come in any order,
/// but every population must cover the full year x age rectangle.
pub fn read_canonical_csv<R: Read>(reader: R, hierarchy: Option<Hierarchy>) -> Result<MortalityDataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(Error::Parse { line: 1, message: format!("expected header {}", HEADER.join(",")) });
    }

    type Cells = BTreeMap<(i32, u64), (f64, f64)>;
    let mut order: Vec<PopulationLabel> = Vec::new();
    let mut cells: BTreeMap<PopulationLabel, Cells> = BTreeMap::new();
    let mut ages: BTreeMap<u64, (f64, bool)> = BTreeMap::new();
    let mut years = BTreeSet::new();

    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        if rec.len() != HEADER.len() {
            return Err(Error::Parse { line, message: format!("expected 7 fields, got {}", rec.len()) });
        }
        let region = if rec[2].is_empty() { None } else { Some(rec[2].to_string()) };
        let sex = rec[1].parse().map_err(|e: Error| Error::Parse { line, message: e.to_string() })?;
        let label = PopulationLabel::new(&rec[0], sex, region);
        let year: i32 = rec[3].parse().map_err(|_| Error::Parse { line, message: format!("bad year '{}'", &rec[3]) })?;
        let (age_txt, open) = match rec[4].strip_suffix('+') {
            Some(a) => (a, true),
            None => (&rec[4], false),
        };
        let age: f64 = age_txt.parse().map_err(|_| Error::Parse { line, message: format!("bad age '{}'", &rec[4]) })?;
        let key = age.to_bits();
        let prev = ages.entry(key).or_insert((age, open));
        prev.1 |= open;
        let rate = parse_value(&rec[5], line, "rate")?;
        let exposure = parse_value(&rec[6], line, "exposure")?;
        years.insert(year);
        if !cells.contains_key(&label) {
            order.push(label.clone());
        }
        if cells.entry(label.clone()).or_default().insert((year, key), (rate, exposure)).is_some() {
            return Err(Error::Parse { line, message: format!("duplicate cell for {label} year {year} age {}", &rec[4]) });
        }
    }
    if order.is_empty() {
        return Err(Error::Structure("canonical CSV has no data rows".into()));
    }

    let mut sorted: Vec<(f64, bool)> = ages.into_values().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let p = sorted.len();
    if sorted[..p - 1].iter().any(|a| a.1) {
        return Err(Error::Structure("open age group must be the last age".into()));
    }
    let grid = AgeGrid::new(sorted.iter().map(|a| a.0).collect(), sorted[p - 1].1)?;

    let first_year = *years.first().expect("non-empty");
    let last_year = *years.last().expect("non-empty");
    let n = (last_year - first_year + 1) as usize;
    if years.len() != n {
        return Err(Error::Structure(format!("years {first_year}-{last_year} are not contiguous")));
    }

    let mut series = Vec::with_capacity(order.len());
    for label in order {
        let map = &cells[&label];
        if map.len() != n * p {
            return Err(Error::Structure(format!("{label}: {} cells, expected {}", map.len(), n * p)));
        }
        let mut rates = DMatrix::zeros(n, p);
        let mut exposures = DMatrix::zeros(n, p);
        for t in 0..n {
            for (i, &age) in grid.ages().iter().enumerate() {
                let (rate, exposure) = map[&(first_year + t as i32, age.to_bits())];
                rates[(t, i)] = rate;
                exposures[(t, i)] = exposure;
            }
        }
        series.push((label, rates, exposures));
    }
    MortalityDataset::new(grid, first_year, series, hierarchy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sex;

    fn sample() -> MortalityDataset {
        let grid = AgeGrid::single_years(0, 3, true).unwrap();
        let rates = DMatrix::from_fn(4, 4, |t, i| 0.1f64.powi(4 - i as i32) * (1.0 + t as f64 / 3.0));
        let expo = DMatrix::from_fn(4, 4, |t, i| 1000.0 / 7.0 * (1 + t + i) as f64);
        let label = PopulationLabel::new("X", Sex::Female, Some("north".into()));
        MortalityDataset::new(grid, 1990, vec![(label, rates, expo)], None).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let d = sample();
        let mut buf = Vec::new();
        write_canonical_csv(&d, &mut buf).unwrap();
        let back = read_canonical_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back.grid(), d.grid());
        assert_eq!(back.years(), d.years());
        let (a, b) = (&d.populations()[0], &back.populations()[0]);
        assert_eq!(a.label, b.label);
        for (x, y) in a.rates.iter().zip(b.rates.iter()).chain(a.exposures.iter().zip(b.exposures.iter())) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn open_age_is_written_with_plus() {
        let mut buf = Vec::new();
        write_canonical_csv(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(4).unwrap().contains(",3+,"));
    }

    #[test]
    fn incomplete_rectangle_is_rejected() {
        let text = "population,sex,region,year,age,rate,exposure\nX,female,,2000,0,0.1,10\nX,female,,2000,1,0.1,10\nX,female,,2001,0,0.1,10\n";
        assert!(matches!(read_canonical_csv(text.as_bytes(), None), Err(Error::Structure(_))));
    }
}
