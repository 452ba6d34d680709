use std::fs;
use std::path::Path;
use std::sync::Arc;

use mortcast::data::{load_dataset, write_canonical_csv, HmdSource, MortalityDataset};
use mortcast::error::{Error, Result};
use mortcast::evaluate::{rolling_origin, write_summary_csv, EvaluationReport, E0_METRICS, METRICS};
use mortcast::lifetable::{e0_by_horizon, e0_distribution, InfantRule};
use mortcast::methods::{benchmark_suite, method, ForecastMethod, ForecastSurface, MethodInput, MethodSettings, MultilevelFdm};
use mortcast::synthetic::{two_sex, SyntheticSpec};
use mortcast::uncertainty::{run_gibbs, simulate_paths, GibbsConfig, GibbsData};

use crate::config::{read_dataset, read_text, RunConfig, SmoothingSection};
use crate::output::{
    e0_row, num, posterior_rows, read_forecasts, read_intervals, write_atomic, write_decomposition, write_forecasts,
    write_intervals, write_sex_gap, write_smoothed, write_table, E0_HEADER, POSTERIOR_HEADER,
};
use crate::{
    Command, DataArgs, DemoArgs, E0Args, EvaluateArgs, FitArgs, ForecastArgs, IngestArgs, ModelArgs, SimulateArgs, SmoothArgs,
    SmoothingArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(&a),
        Command::Smooth(a) => smooth(&a),
        Command::Fit(a) => fit(&a),
        Command::Forecast(a) => forecast(&a),
        Command::Simulate(a) => simulate(&a),
        Command::E0(a) => e0(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Demo(a) => demo(&a),
    }
}

fn parse_source(spec: &str) -> Result<(String, Option<String>, String, String)> {
    let bad = || Error::Config(format!("source '{spec}' is not NAME[:REGION]=RATES,EXPOSURES"));
    let (who, files) = spec.split_once('=').ok_or_else(bad)?;
    let (rates, exposures) = files.split_once(',').ok_or_else(bad)?;
    let (name, region) = match who.split_once(':') {
        Some((n, r)) => (n, Some(r.to_string())),
        None => (who, None),
    };
    if name.is_empty() || rates.is_empty() || exposures.is_empty() {
        return Err(bad());
    }
    Ok((name.to_string(), region, rates.to_string(), exposures.to_string()))
}

fn write_dataset(path: &Path, data: &MortalityDataset) -> Result<()> {
    write_atomic(path, |w| write_canonical_csv(data, w))
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let sources = a
        .sources
        .iter()
        .map(|s| {
            let (name, region, rates, exposures) = parse_source(s)?;
            Ok(HmdSource { name, region, rates: read_text(Path::new(&rates))?, exposures: read_text(Path::new(&exposures))? })
        })
        .collect::<Result<Vec<_>>>()?;
    let data = load_dataset(&sources, None, a.age_cap)?;
    let years = data.years();
    let data = match (a.from, a.to) {
        (None, None) => data,
        (from, to) => data.years_between(from.unwrap_or(years[0]), to.unwrap_or(years[years.len() - 1]))?,
    };
    write_dataset(&a.out, &data)
}

impl SmoothingArgs {
    fn section(&self) -> Result<SmoothingSection> {
        let (monotone, monotone_from) = if self.monotone_from.eq_ignore_ascii_case("none") {
            (false, SmoothingSection::default().monotone_from)
        } else {
            let v = self
                .monotone_from
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("--monotone-from must be an age or 'none', got '{}'", self.monotone_from)))?;
            (true, v)
        };
        let s = SmoothingSection { enabled: !self.raw, alpha: self.alpha.clone(), monotone, monotone_from };
        s.config()?;
        Ok(s)
    }
}

impl ModelArgs {
    fn settings(&self) -> MethodSettings {
        MethodSettings { score_model: self.score_model.clone(), p1: self.p1, p2: self.p2 }
    }
}

fn load_input(data: &DataArgs, smoothing: &SmoothingArgs) -> Result<MethodInput> {
    let section = smoothing.section()?;
    let dataset = read_dataset(&data.input, data.hierarchy.as_deref())?;
    section.apply(&dataset)
}

fn smooth(a: &SmoothArgs) -> Result<()> {
    let input = load_input(&a.data, &a.smoothing)?;
    write_smoothed(&a.out, &input)
}

fn multilevel(name: &str, settings: &MethodSettings) -> Result<MultilevelFdm> {
    match name {
        "multilevel" | "multilevel_fdm" => {
            settings.validate()?;
            MultilevelFdm::new(settings)
        }
        other => Err(Error::Config(format!("'{other}' has no multilevel decomposition; use --method multilevel"))),
    }
}

fn fit(a: &FitArgs) -> Result<()> {
    let settings = a.model.settings();
    let model = multilevel(&a.method, &settings)?;
    let input = load_input(&a.data, &a.smoothing)?;
    let names: Vec<String> = input.groups().iter().map(|g| g.name.to_string()).collect();
    let groups: Vec<_> = names.into_iter().zip(model.decompose(&input)?).collect();
    write_decomposition(&a.out_dir, &groups, input.first_year())
}

fn build_methods(names: &[String], settings: &MethodSettings) -> Result<Vec<Arc<dyn ForecastMethod>>> {
    let mut out = Vec::new();
    for name in names {
        match name.as_str() {
            "benchmark" => out.extend(benchmark_suite()?),
            "multilevel" => out.push(method("multilevel_fdm", settings)?),
            other => out.push(method(other, settings)?),
        }
    }
    Ok(out)
}

fn run_forecasts(methods: &[Arc<dyn ForecastMethod>], input: &MethodInput, horizon: usize) -> Result<Vec<ForecastSurface>> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let mut out = Vec::new();
    for m in methods {
        out.extend(m.forecast(input, horizon)?);
    }
    Ok(out)
}

fn forecast(a: &ForecastArgs) -> Result<()> {
    let methods = build_methods(&a.methods, &a.model.settings())?;
    let input = load_input(&a.data, &a.smoothing)?;
    let surfaces = run_forecasts(&methods, &input, a.horizon)?;
    write_forecasts(&a.out, &surfaces, input.grid())?;
    if let Some(path) = &a.sex_gap {
        write_sex_gap(path, &surfaces, input.grid())?;
    }
    Ok(())
}

/// Samples each group, then writes log-rate intervals, posterior summaries
/// and life-expectancy intervals.
fn simulate_into(input: &MethodInput, model: &MultilevelFdm, cfg: &GibbsConfig, horizon: usize, infant: InfantRule, dir: &Path) -> Result<()> {
    cfg.validate()?;
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let mut labels = Vec::new();
    let mut paths = Vec::new();
    let mut posterior = Vec::new();
    for (g, dec) in model.decompose(input)?.iter().enumerate() {
        let observed = dec.populations.iter().map(|c| Ok(input.surface(&c.label)?.observed.clone())).collect::<Result<Vec<_>>>()?;
        let data = GibbsData::new(dec, observed)?;
        let cfg = GibbsConfig { seed: cfg.seed.wrapping_add(g as u64), ..cfg.clone() };
        let post = run_gibbs(&data, &cfg)?;
        posterior.extend(posterior_rows(&post));
        let sp = simulate_paths(&data, &post, model.score_model(), horizon, &cfg)?;
        labels.extend(sp.labels);
        paths.extend(sp.paths);
    }
    write_intervals(&dir.join("intervals.csv"), &labels, &paths, input.grid())?;
    write_table(&dir.join("posterior.csv"), &POSTERIOR_HEADER, posterior)?;
    let mut rows = Vec::new();
    for (label, draws) in labels.iter().zip(&paths) {
        let (_, summary) = e0_distribution(draws, input.grid(), infant)?;
        rows.extend(summary.iter().map(|s| e0_row(label, s, s.median)));
    }
    write_table(&dir.join("e0.csv"), &E0_HEADER, rows)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let model = multilevel("multilevel_fdm", &a.model.settings())?;
    let cfg = GibbsConfig {
        total_draws: a.draws,
        burn_in: a.burn,
        thin: a.thin,
        chains: a.chains,
        seed: a.seed,
        refit_per_draw: !a.no_refit,
        ..GibbsConfig::default()
    };
    cfg.validate()?;
    let input = load_input(&a.data, &a.smoothing)?;
    simulate_into(&input, &model, &cfg, a.horizon, a.infant.into(), &a.out_dir)
}

/// Point life expectancy per population and horizon. With an interval file
/// the bounds come from the life tables of the bounding rate curves: life
/// expectancy falls as rates rise, so each pair swaps.
fn e0_table(forecast_text: &str, method: Option<&str>, intervals_text: Option<&str>, infant: InfantRule) -> Result<Vec<Vec<String>>> {
    let table = read_forecasts(forecast_text, method)?;
    let bounds = intervals_text.map(read_intervals).transpose()?;
    let mut rows = Vec::new();
    for (label, mean) in &table.surfaces {
        let point = e0_by_horizon(mean, &table.grid, infant)?;
        let limits: Option<[Vec<f64>; 4]> = match &bounds {
            None => None,
            Some(all) => {
                let (_, b, grid) = all
                    .iter()
                    .find(|(l, _, _)| l == label)
                    .ok_or_else(|| Error::Structure(format!("{label}: no intervals for this population")))?;
                if grid != &table.grid || b[0].shape() != mean.shape() {
                    return Err(Error::Structure(format!("{label}: intervals do not match the forecast grid or horizon")));
                }
                let e = |m| e0_by_horizon(m, grid, infant);
                Some([e(&b[1])?, e(&b[0])?, e(&b[3])?, e(&b[2])?])
            }
        };
        for (h, v) in point.iter().enumerate() {
            let bound = |k: usize| limits.as_ref().map_or(f64::NAN, |l| l[k][h]);
            rows.push(vec![label.to_string(), (h + 1).to_string(), num(*v), num(bound(0)), num(bound(1)), num(bound(2)), num(bound(3))]);
        }
    }
    Ok(rows)
}

fn e0(a: &E0Args) -> Result<()> {
    let forecast_text = read_text(&a.input)?;
    let intervals_text = a.intervals.as_deref().map(read_text).transpose()?;
    let rows = e0_table(&forecast_text, a.method.as_deref(), intervals_text.as_deref(), a.infant.into())?;
    write_table(&a.out, &E0_HEADER, rows)
}

fn evaluate_config(cfg: &RunConfig, out: &Path, summary: &Path) -> Result<()> {
    let dataset = cfg.dataset()?;
    let input = cfg.smoothing.apply(&dataset)?;
    let plan = cfg.plan();
    plan.validate(input.n_years())?;
    let methods = cfg.methods()?;
    let bt = rolling_origin(&input, &plan, &methods)?;
    let report = EvaluationReport::from_backtest(&bt)?;
    write_atomic(out, |w| report.write_csv(w))?;
    let metrics: Vec<&str> =
        METRICS.iter().copied().chain(if plan.life_expectancy { E0_METRICS.to_vec() } else { Vec::new() }).collect();
    let rows = report.summary_table(&bt.populations, &metrics)?;
    write_atomic(summary, |w| write_summary_csv(&rows, w))
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let cfg = RunConfig::from_path(&a.plan)?;
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.join("report.csv"));
    let summary = a.summary.clone().unwrap_or_else(|| out.with_file_name("summary.csv"));
    evaluate_config(&cfg, &out, &summary)
}

fn demo_config(holdout: usize, seed: u64) -> String {
    format!(
        "# Backtest of the six standard methods on the demo data.\n\
         seed = {seed}\n\
         output_dir = \".\"\n\n\
         [data]\n\
         csv = \"data.csv\"\n\n\
         [smoothing]\n\
         alpha = \"auto\"\n\
         monotone_from = 65.0\n\n\
         [backtest]\n\
         holdout = {holdout}\n\
         alpha = 0.2\n\
         life_expectancy = true\n"
    )
}

fn demo(a: &DemoArgs) -> Result<()> {
    if a.paths == 0 {
        return Err(Error::Config("--paths must be at least 1".into()));
    }
    let dir = &a.out_dir;
    let data = two_sex(&SyntheticSpec { seed: a.seed, ..SyntheticSpec::default() })?;
    fs::create_dir_all(dir)?;
    write_dataset(&dir.join("data.csv"), &data)?;
    write_atomic(&dir.join("hierarchy.toml"), |w| Ok(w.write_all(data.hierarchy().to_toml().as_bytes())?))?;
    let config_text = demo_config(a.holdout, a.seed);
    let config_path = dir.join("run.toml");
    write_atomic(&config_path, |w| Ok(w.write_all(config_text.as_bytes())?))?;
    let cfg = RunConfig::from_path(&config_path)?;

    log::info!("smoothing");
    let input = cfg.smoothing.apply(&data)?;
    write_smoothed(&dir.join("smoothed.csv"), &input)?;

    log::info!("decomposing");
    let model = multilevel("multilevel_fdm", &MethodSettings::default())?;
    let names: Vec<String> = input.groups().iter().map(|g| g.name.to_string()).collect();
    let groups: Vec<_> = names.into_iter().zip(model.decompose(&input)?).collect();
    write_decomposition(&dir.join("fit"), &groups, input.first_year())?;

    log::info!("forecasting");
    let horizon = 30;
    let surfaces = run_forecasts(&benchmark_suite()?, &input, horizon)?;
    let forecast_path = dir.join("forecast.csv");
    write_forecasts(&forecast_path, &surfaces, input.grid())?;
    write_sex_gap(&dir.join("sex_gap.csv"), &surfaces, input.grid())?;

    log::info!("simulating");
    let thin = 10;
    let burn_in = 1000;
    let gibbs = GibbsConfig { total_draws: burn_in + a.paths * thin, burn_in, thin, seed: a.seed, ..GibbsConfig::default() };
    let sim_dir = dir.join("simulate");
    simulate_into(&input, &model, &gibbs, horizon, InfantRule::default(), &sim_dir)?;
    let rows = e0_table(
        &read_text(&forecast_path)?,
        Some(&model.label()),
        Some(&read_text(&sim_dir.join("intervals.csv"))?),
        InfantRule::default(),
    )?;
    write_table(&dir.join("e0.csv"), &E0_HEADER, rows)?;

    log::info!("evaluating");
    evaluate_config(&cfg, &cfg.output_dir.join("report.csv"), &cfg.output_dir.join("summary.csv"))
}
