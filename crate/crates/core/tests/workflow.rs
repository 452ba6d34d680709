use mortcast::data::{read_canonical_csv, write_canonical_csv, MortalityDataset};
use mortcast::evaluate::{rolling_origin, BacktestPlan, EvaluationReport};
use mortcast::lifetable::{e0_by_horizon, InfantRule};
use mortcast::methods::{benchmark_suite, method, method_names, MethodInput, MethodSettings};
use mortcast::synthetic::{two_sex, SyntheticSpec};
use mortcast::ErrorClass;

fn dataset(n_years: usize) -> MortalityDataset {
    two_sex(&SyntheticSpec { n_years, last_age: 40, seed: 21, ..SyntheticSpec::default() }).unwrap()
}

fn regional(n_years: usize) -> MortalityDataset {
    let regions = vec!["North".into(), "South".into()];
    two_sex(&SyntheticSpec { n_years, last_age: 40, seed: 22, regions, ..SyntheticSpec::default() }).unwrap()
}

#[test]
fn canonical_csv_round_trips() {
    let d = dataset(12);
    let mut buf = Vec::new();
    write_canonical_csv(&d, &mut buf).unwrap();
    let back = read_canonical_csv(buf.as_slice(), Some(d.hierarchy().clone())).unwrap();
    assert_eq!(back.labels(), d.labels());
    assert_eq!(back.years(), d.years());
    for (a, b) in d.populations().iter().zip(back.populations()) {
        assert_eq!(a.log_rates(), b.log_rates());
    }
}

#[test]
fn every_registered_method_forecasts_each_target() {
    let input = MethodInput::unsmoothed(&regional(40)).unwrap();
    for name in method_names() {
        let m = method(name, &MethodSettings::default()).unwrap();
        let out = m.forecast(&input, 6).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(out.len(), input.targets().len(), "{name}");
        for f in &out {
            assert_eq!((f.mean.nrows(), f.mean.ncols()), (6, input.grid().len()), "{name}");
            assert!(f.mean.iter().chain(f.sd.iter()).all(|v| v.is_finite()), "{name}");
            assert!(f.sd.iter().all(|v| *v >= 0.0), "{name}");
            assert_eq!(f.origin_year, input.last_year());
            let e0 = e0_by_horizon(&f.mean, input.grid(), InfantRule::CoaleDemeny).unwrap();
            assert!(e0.iter().all(|v| v.is_finite() && *v > 0.0), "{name}");
        }
    }
    let err = method("no_such_method", &MethodSettings::default()).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Config);
}

#[test]
fn forecasts_ignore_years_after_the_origin() {
    let full = dataset(40);
    let head = MethodInput::unsmoothed(&full).unwrap().head(32).unwrap();
    let cut = MethodInput::unsmoothed(&full.years_between(full.first_year(), full.first_year() + 31).unwrap()).unwrap();
    for m in benchmark_suite().unwrap() {
        assert_eq!(m.forecast(&head, 4).unwrap(), m.forecast(&cut, 4).unwrap(), "{}", m.name());
    }
}

#[test]
fn backtest_report_is_reproducible() {
    let input = MethodInput::unsmoothed(&dataset(36)).unwrap();
    let methods = vec![method("lee_carter", &MethodSettings::default()).unwrap(), method("multilevel_fdm", &MethodSettings::with_score_model("rwf")).unwrap()];
    let plan = BacktestPlan { holdout: 4, ..BacktestPlan::default() };
    let a = EvaluationReport::from_backtest(&rolling_origin(&input, &plan, &methods).unwrap()).unwrap();
    let b = EvaluationReport::from_backtest(&rolling_origin(&input, &plan, &methods).unwrap()).unwrap();
    assert_eq!(a, b);
    let h1 = a.rows.iter().find(|r| r.method == "Lee-Carter" && r.horizon == "1" && r.metric == "mafe" && r.population == "all").unwrap();
    assert_eq!(h1.n_forecasts, 2 * 4);
    assert!(h1.value.is_finite() && h1.value > 0.0);
    assert!(rolling_origin(&input, &BacktestPlan { holdout: 36, ..plan }, &methods).is_err());
}
