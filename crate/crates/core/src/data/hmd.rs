use std::io::BufRead;

use nalgebra::DMatrix;

use super::{AgeGrid, CellFlag, FlagReason, Sex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Rates,
    Exposures,
}

/// One HMD period table (`Mx_1x1` or `Exposures_1x1` layout). Missing cells are
/// stored as NaN and listed in `missing`.
#[derive(Debug, Clone)]
pub struct HmdTable {
    pub kind: TableKind,
    pub first_year: i32,
    pub grid: AgeGrid,
    pub female: DMatrix<f64>,
    pub male: DMatrix<f64>,
    pub total: DMatrix<f64>,
    pub missing: Vec<(Sex, CellFlag)>,
}

impl HmdTable {
    pub fn n_years(&self) -> usize {
        self.female.nrows()
    }

    pub fn column(&self, sex: Sex) -> &DMatrix<f64> {
        match sex {
            Sex::Female => &self.female,
            Sex::Male => &self.male,
            Sex::Total => &self.total,
        }
    }

    fn column_mut(&mut self, sex: Sex) -> &mut DMatrix<f64> {
        match sex {
            Sex::Female => &mut self.female,
            Sex::Male => &mut self.male,
            Sex::Total => &mut self.total,
        }
    }
}

fn parse_age(token: &str) -> Option<(u32, bool)> {
    match token.strip_suffix('+') {
        Some(base) => base.parse().ok().map(|a| (a, true)),
        None => token.parse().ok().map(|a| (a, false)),
    }
}

fn parse_value(token: &str, line: usize) -> Result<Option<f64>> {
    if token == "." {
        return Ok(None);
    }
    let v: f64 = token
        .parse()
        .map_err(|_| Error::Parse { line, message: format!("invalid numeric value '{token}'") })?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Parse { line, message: format!("value '{token}' must be finite and non-negative") });
    }
    Ok(Some(v))
}

/// Parses a whitespace-delimited HMD table with header `Year Age Female Male Total`.
/// Lines before the header (HMD title lines) are skipped.
pub fn parse_hmd_table<R: BufRead>(reader: R, kind: TableKind) -> Result<HmdTable> {
    let mut header_seen = false;
    // (year, age, open, [f, m, t], line)
    let mut rows: Vec<(i32, u32, bool, [Option<f64>; 3], usize)> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if !header_seen {
            let lower: Vec<String> = tokens.iter().map(|t| t.to_ascii_lowercase()).collect();
            if lower == ["year", "age", "female", "male", "total"] {
                header_seen = true;
            }
            continue;
        }
        if tokens.len() != 5 {
            return Err(Error::Parse { line: line_no, message: format!("expected 5 fields, found {}", tokens.len()) });
        }
        let year: i32 = tokens[0]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, message: format!("invalid year '{}'", tokens[0]) })?;
        let (age, open) = parse_age(tokens[1])
            .ok_or_else(|| Error::Parse { line: line_no, message: format!("invalid age '{}'", tokens[1]) })?;
        let vals = [
            parse_value(tokens[2], line_no)?,
            parse_value(tokens[3], line_no)?,
            parse_value(tokens[4], line_no)?,
        ];
        rows.push((year, age, open, vals, line_no));
    }
    if !header_seen {
        return Err(Error::Parse { line: 0, message: "header row 'Year Age Female Male Total' not found".into() });
    }
    if rows.is_empty() {
        return Err(Error::Structure("table has no data rows".into()));
    }

    // Age layout of the first year defines the grid.
    let first_year = rows[0].0;
    let ages: Vec<(u32, bool)> = rows.iter().take_while(|r| r.0 == first_year).map(|r| (r.1, r.2)).collect();
    let p = ages.len();
    if rows.len() % p != 0 {
        return Err(Error::Structure(format!("row count {} is not a multiple of the {p} ages", rows.len())));
    }
    let n = rows.len() / p;
    if ages[..p - 1].iter().any(|a| a.1) {
        return Err(Error::Structure("only the last age group may be open-ended".into()));
    }
    let grid = AgeGrid::new(ages.iter().map(|a| f64::from(a.0)).collect(), ages[p - 1].1)?;

    let mut female = DMatrix::from_element(n, p, f64::NAN);
    let mut male = DMatrix::from_element(n, p, f64::NAN);
    let mut total = DMatrix::from_element(n, p, f64::NAN);
    let mut missing = Vec::new();
    for (k, (year, age, open, vals, line)) in rows.iter().enumerate() {
        let t = k / p;
        let i = k % p;
        if *year != first_year + t as i32 {
            return Err(Error::Structure(format!(
                "line {line}: non-contiguous years (expected {}, found {year})",
                first_year + t as i32
            )));
        }
        if (*age, *open) != ages[i] {
            return Err(Error::Parse { line: *line, message: format!("age {age} out of order for year {year}") });
        }
        for (s, sex) in [Sex::Female, Sex::Male, Sex::Total].into_iter().enumerate() {
            let m = match sex {
                Sex::Female => &mut female,
                Sex::Male => &mut male,
                Sex::Total => &mut total,
            };
            match vals[s] {
                Some(v) => m[(t, i)] = v,
                None => missing.push((sex, CellFlag { year: *year, age_index: i, reason: FlagReason::Missing })),
            }
        }
    }

    Ok(HmdTable { kind, first_year, grid, female, male, total, missing })
}

/// Collapses every age at or above `cap` into one open-ended group. Rates are
/// averaged with exposure weights; exposures are summed. Missing cells are left
/// out of both sums.
pub fn aggregate_open_age(rates: &HmdTable, exposures: &HmdTable, cap: u32) -> Result<(HmdTable, HmdTable)> {
    if rates.grid != exposures.grid {
        return Err(Error::Structure("rate and exposure tables have different age grids".into()));
    }
    if rates.first_year != exposures.first_year || rates.n_years() != exposures.n_years() {
        return Err(Error::Structure(format!(
            "rate years {}..{} differ from exposure years {}..{}",
            rates.first_year,
            rates.first_year + rates.n_years() as i32 - 1,
            exposures.first_year,
            exposures.first_year + exposures.n_years() as i32 - 1
        )));
    }
    let cap = f64::from(cap);
    let Some(i0) = rates.grid.index_at_or_above(cap) else {
        return Ok((rates.clone(), exposures.clone()));
    };
    if i0 + 1 == rates.grid.len() && rates.grid.ages()[i0] == cap {
        // Already ends at the cap; just mark it open.
        let grid = AgeGrid::new(rates.grid.ages().to_vec(), true)?;
        let mut r = rates.clone();
        let mut e = exposures.clone();
        r.grid = grid.clone();
        e.grid = grid;
        return Ok((r, e));
    }
    let mut ages: Vec<f64> = rates.grid.ages()[..i0].to_vec();
    ages.push(cap);
    let grid = AgeGrid::new(ages, true)?;
    let n = rates.n_years();
    let p = grid.len();

    let mut out_r = HmdTable {
        kind: TableKind::Rates,
        first_year: rates.first_year,
        grid: grid.clone(),
        female: DMatrix::zeros(n, p),
        male: DMatrix::zeros(n, p),
        total: DMatrix::zeros(n, p),
        missing: Vec::new(),
    };
    let mut out_e = HmdTable { kind: TableKind::Exposures, ..out_r.clone() };

    for sex in [Sex::Female, Sex::Male, Sex::Total] {
        let rm = rates.column(sex);
        let em = exposures.column(sex);
        for t in 0..n {
            for i in 0..i0 {
                out_r.column_mut(sex)[(t, i)] = rm[(t, i)];
                out_e.column_mut(sex)[(t, i)] = em[(t, i)];
            }
            let (mut num, mut den, mut plain, mut count, mut exp_sum, mut exp_count) = (0.0, 0.0, 0.0, 0, 0.0, 0);
            for i in i0..rates.grid.len() {
                let m = rm[(t, i)];
                let e = em[(t, i)];
                if e.is_finite() {
                    exp_sum += e;
                    exp_count += 1;
                }
                if m.is_finite() {
                    plain += m;
                    count += 1;
                    if e.is_finite() {
                        num += m * e;
                        den += e;
                    }
                }
            }
            let rate = if den > 0.0 {
                num / den
            } else if count > 0 {
                plain / count as f64
            } else {
                f64::NAN
            };
            out_r.column_mut(sex)[(t, i0)] = rate;
            out_e.column_mut(sex)[(t, i0)] = if exp_count > 0 { exp_sum } else { f64::NAN };
        }
        for out in [&mut out_r, &mut out_e] {
            let flags: Vec<_> = (0..n)
                .flat_map(|t| (0..p).map(move |i| (t, i)))
                .filter(|&(t, i)| out.column(sex)[(t, i)].is_nan())
                .map(|(t, i)| {
                    (sex, CellFlag { year: rates.first_year + t as i32, age_index: i, reason: FlagReason::Missing })
                })
                .collect();
            out.missing.extend(flags);
        }
    }
    Ok((out_r, out_e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const RATES: &str = "United Kingdom, Death rates (period 1x1)\n\n  Year  Age  Female  Male  Total\n\
        1950  0  0.02  0.03  0.025\n1950  1  0.004  0.005  0.0045\n1950  2+  0.5  0.6  0.55\n\
        1951  0  0.019  .  0.024\n1951  1  0.003  0.004  0.0035\n1951  2+  0.45  0.55  0.5\n";

    #[test]
    fn maps_fields_directly() {
        let t = parse_hmd_table(RATES.as_bytes(), TableKind::Rates).unwrap();
        assert_eq!(t.first_year, 1950);
        assert_eq!(t.n_years(), 2);
        assert_eq!(t.female[(0, 0)], 0.02);
        assert_eq!(t.male[(0, 0)], 0.03);
        assert!(t.grid.open_ended_last());
        assert_eq!(t.grid.label(2), "2+");
    }

    #[test]
    fn dot_is_missing_not_zero() {
        let t = parse_hmd_table(RATES.as_bytes(), TableKind::Rates).unwrap();
        assert!(t.male[(1, 0)].is_nan());
        assert_eq!(t.missing.len(), 1);
        assert_eq!(t.missing[0].0, Sex::Male);
        assert_eq!(t.missing[0].1, CellFlag { year: 1951, age_index: 0, reason: FlagReason::Missing });
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "Year Age Female Male Total\n1950 0 0.1 0.2\n";
        match parse_hmd_table(text.as_bytes(), TableKind::Rates) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let text = "Year Age Female Male Total\n1950 0 abc 0.2 0.1\n";
        assert!(matches!(parse_hmd_table(text.as_bytes(), TableKind::Rates), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn year_gap_is_structural() {
        let text = "Year Age Female Male Total\n1950 0 0.1 0.2 0.1\n1950 1 0.1 0.2 0.1\n\
                    1952 0 0.1 0.2 0.1\n1952 1 0.1 0.2 0.1\n";
        assert!(matches!(parse_hmd_table(text.as_bytes(), TableKind::Rates), Err(Error::Structure(_))));
    }

    #[test]
    fn open_group_is_exposure_weighted_mean() {
        // Three rows at and above the cap: 95, 96..109 collapsed as 96, and 110+.
        let rates = "Year Age Female Male Total\n\
            2000 94 0.20 0.25 0.22\n2000 95 0.30 0.35 0.32\n2000 96 0.40 0.45 0.42\n2000 110+ 0.90 1.00 0.95\n";
        let expos = "Year Age Female Male Total\n\
            2000 94 500 400 900\n2000 95 300 200 500\n2000 96 100 50 150\n2000 110+ 10 5 15\n";
        let r = parse_hmd_table(rates.as_bytes(), TableKind::Rates).unwrap();
        let e = parse_hmd_table(expos.as_bytes(), TableKind::Exposures).unwrap();
        let (r2, e2) = aggregate_open_age(&r, &e, 95).unwrap();
        assert_eq!(r2.grid.len(), 2);
        assert_eq!(r2.grid.label(1), "95+");
        // Hand computation: (0.30*300 + 0.40*100 + 0.90*10) / 410 = 139/410.
        let expected_f = (0.30 * 300.0 + 0.40 * 100.0 + 0.90 * 10.0) / 410.0;
        assert!((r2.female[(0, 1)] - expected_f).abs() < 1e-15);
        assert!((r2.female[(0, 1)] - 139.0 / 410.0).abs() < 1e-15);
        // Male: (0.35*200 + 0.45*50 + 1.0*5) / 255 = 97.5/255.
        assert!((r2.male[(0, 1)] - 97.5 / 255.0).abs() < 1e-15);
        assert_eq!(e2.female[(0, 1)], 410.0);
        assert_eq!(r2.female[(0, 0)], 0.20);
    }
}
