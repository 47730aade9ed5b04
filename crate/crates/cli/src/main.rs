use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use timeframe::analysis::{
    analyze, batch_screen, fit_choice, AnalysisReport, AnalysisRequest, BatchResult, LambdaSpec, ModelChoice, Window, WindowMode,
};
use timeframe::ci::{compare_onsets, CiConfig, Group, OnsetComparison};
use timeframe::error::ErrorClass;
use timeframe::io::{band_csv, parse_dataset, parse_file, report_svg, to_json, write_output, Input};
use timeframe::rng::StreamSeed;
use timeframe::simulate::{builtin_scenario, run_simulation, SigmaLevel};
use timeframe::{lower_band, BootstrapConfig, Dataset, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "timeframe", version, about = "Detect periods of relevant change in time-course data")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the candidate models and report the AIC choice.
    Fit {
        input: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Lower simultaneous confidence band for |f'|.
    Band {
        input: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        boot: BootArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Periods of relevant change at one or more thresholds.
    Detect {
        input: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        boot: BootArgs,
        #[command(flatten)]
        lambda: LambdaArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Detection plus percentile intervals for start, end and peak.
    Ci {
        input: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        boot: BootArgs,
        #[command(flatten)]
        lambda: LambdaArgs,
        #[arg(long, default_value_t = 500)]
        b3: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Difference of first onsets between two groups.
    Compare {
        group_a: PathBuf,
        group_b: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        boot: BootArgs,
        #[command(flatten)]
        lambda: LambdaArgs,
        #[arg(long, default_value_t = 500)]
        b3: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Repeated analysis of a built-in scenario.
    Simulate {
        #[arg(long)]
        scenario: u8,
        #[arg(long, default_value = "medium")]
        sigma_level: String,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Include every run's detected periods in the output.
        #[arg(long)]
        keep_runs: bool,
        #[command(flatten)]
        boot: BootArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Screen every series of an `id,time,value` file.
    Batch {
        input: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        boot: BootArgs,
        #[command(flatten)]
        lambda: LambdaArgs,
        /// Window as `LO,HI`.
        #[arg(long, default_value = "10,25")]
        window: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Contain)]
        window_mode: ModeArg,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// 4pll, beta or auto.
    #[arg(long, default_value = "auto")]
    model: String,
    /// Beta scaling constant (default 1.2 times the last time).
    #[arg(long)]
    scal: Option<f64>,
}

#[derive(Args, Debug)]
struct BootArgs {
    /// Master seed, or `auto`.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, default_value_t = 500)]
    b1: usize,
    #[arg(long, default_value_t = 25)]
    b2: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    grid_step: f64,
}

#[derive(Args, Debug)]
struct LambdaArgs {
    /// Absolute thresholds; overrides --fold and --fraction.
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 1.5)]
    fold: f64,
    /// Fractions of the study duration over which the fold change is spread.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    fraction: Vec<f64>,
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Contain,
    Overlap,
}

impl BootArgs {
    fn config(&self) -> Result<BootstrapConfig> {
        let seed = match self.seed.as_deref() {
            None => return Err(Error::InvalidConfig("--seed is required (an integer or 'auto')".into())),
            Some("auto") => {
                let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
                let seed = StreamSeed::new(nanos).key();
                eprintln!("seed: {seed}");
                seed
            }
            Some(s) => s
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("invalid seed '{s}'")))?,
        };
        let cfg = BootstrapConfig {
            b1: self.b1,
            b2: self.b2,
            alpha: self.alpha,
            seed,
            grid_step: self.grid_step,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl LambdaArgs {
    fn spec(&self) -> LambdaSpec {
        if self.lambda.is_empty() {
            LambdaSpec::Relative {
                fold: self.fold,
                fractions: self.fraction.clone(),
            }
        } else {
            LambdaSpec::Absolute(self.lambda.clone())
        }
    }
}

fn request(model: &ModelArgs, band: BootstrapConfig, lambda: LambdaSpec, b3: Option<usize>) -> Result<AnalysisRequest> {
    Ok(AnalysisRequest {
        model: model.model.parse()?,
        scal: model.scal,
        lambda,
        band,
        b3,
    })
}

fn only_json(format: Format) -> Result<()> {
    match format {
        Format::Json => Ok(()),
        other => Err(Error::InvalidConfig(format!("this command only supports --format json, not {other:?}"))),
    }
}

fn render_report(report: &AnalysisReport, data: &Dataset, format: Format) -> Result<String> {
    match format {
        Format::Json => to_json(report),
        Format::Csv => Ok(band_csv(&report.band)),
        Format::Svg => Ok(report_svg(Some(data), report)),
    }
}

fn emit(out: &Option<PathBuf>, contents: &str) -> Result<()> {
    write_output(out.as_deref(), contents)
}

fn analyze_file(input: &Path, req: &AnalysisRequest) -> Result<(Dataset, AnalysisReport)> {
    let data = parse_dataset(input)?;
    let report = analyze(&data, req)?;
    Ok((data, report))
}

fn batch_csv(results: &[BatchResult]) -> String {
    let mut out = String::from("id,family,pass,subsets,periods,error\n");
    for r in results {
        let family = r.family.map(|f| f.to_string()).unwrap_or_default();
        let (count, periods) = match &r.report {
            Some(rep) => (
                rep.count().to_string(),
                rep.subsets
                    .iter()
                    .map(|s| format!("{}-{}", s.start, s.end))
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
            None => (String::new(), String::new()),
        };
        let error = r.error.as_deref().unwrap_or_default().replace('"', "'");
        out.push_str(&format!("{},{family},{},{count},{periods},\"{error}\"\n", r.id, r.pass));
    }
    out
}

#[derive(serde::Serialize)]
struct CompareOutput<'a> {
    group_a: &'a AnalysisReport,
    group_b: &'a AnalysisReport,
    difference: OnsetComparison,
}

fn parse_window(text: &str, mode: ModeArg) -> Result<Window> {
    let parts: Vec<&str> = text.split(',').collect();
    let bad = || Error::InvalidConfig(format!("--window expects LO,HI, got '{text}'"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let mode = match mode {
        ModeArg::Contain => WindowMode::Contain,
        ModeArg::Overlap => WindowMode::Overlap,
    };
    Window::new(lo, hi, mode)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    match cli.command {
        Command::Fit { input, model, output } => {
            only_json(output.format)?;
            let data = parse_dataset(&input)?;
            let choice: ModelChoice = model.model.parse()?;
            let selection = fit_choice(&data, choice, model.scal)?;
            emit(&output.out, &to_json(&selection)?)
        }
        Command::Band { input, model, boot, output } => {
            let cfg = boot.config()?;
            let data = parse_dataset(&input)?;
            let selection = fit_choice(&data, model.model.parse()?, model.scal)?;
            let band = lower_band(&data, &selection.best, &cfg)?;
            let report = AnalysisReport {
                fit: selection.best,
                candidates: selection.candidates,
                band,
                thresholds: Vec::new(),
            };
            emit(&output.out, &render_report(&report, &data, output.format)?)
        }
        Command::Detect { input, model, boot, lambda, output } => {
            let req = request(&model, boot.config()?, lambda.spec(), None)?;
            let (data, report) = analyze_file(&input, &req)?;
            emit(&output.out, &render_report(&report, &data, output.format)?)
        }
        Command::Ci { input, model, boot, lambda, b3, output } => {
            let req = request(&model, boot.config()?, lambda.spec(), Some(b3))?;
            let (data, report) = analyze_file(&input, &req)?;
            emit(&output.out, &render_report(&report, &data, output.format)?)
        }
        Command::Compare { group_a, group_b, model, boot, lambda, b3, output } => {
            only_json(output.format)?;
            let cfg = boot.config()?;
            let root = StreamSeed::new(cfg.seed);
            let req = request(&model, cfg.clone(), lambda.spec(), None)?;
            let (data_a, report_a) = analyze_file(&group_a, &req)?;
            let (data_b, report_b) = analyze_file(&group_b, &req)?;
            let ci_cfg = CiConfig {
                band: BootstrapConfig {
                    seed: root.child(1).key(),
                    ..cfg.clone()
                },
                b3,
            };
            let difference = compare_onsets(
                Group {
                    data: &data_a,
                    fit: &report_a.fit,
                    report: &report_a.thresholds[0].report,
                },
                Group {
                    data: &data_b,
                    fit: &report_b.fit,
                    report: &report_b.thresholds[0].report,
                },
                &ci_cfg,
            )?;
            let out = CompareOutput {
                group_a: &report_a,
                group_b: &report_b,
                difference,
            };
            emit(&output.out, &to_json(&out)?)
        }
        Command::Simulate { scenario, sigma_level, runs, keep_runs, boot, output } => {
            only_json(output.format)?;
            let level: SigmaLevel = sigma_level.parse()?;
            let spec = builtin_scenario(scenario, level)?;
            if runs == 0 {
                return Err(Error::InvalidConfig("--runs must be positive".into()));
            }
            let summary = run_simulation(&spec, runs, &boot.config()?, keep_runs)?;
            emit(&output.out, &to_json(&summary)?)
        }
        Command::Batch { input, model, boot, lambda, window, window_mode, output } => {
            let window = parse_window(&window, window_mode)?;
            let req = request(&model, boot.config()?, lambda.spec(), None)?;
            let series = match parse_file(&input)? {
                Input::Batch(series) => series,
                Input::Single(data) => vec![("1".to_string(), data)],
            };
            let results = batch_screen(&series, &req, &window)?;
            let text = match output.format {
                Format::Json => to_json(&results)?,
                Format::Csv => batch_csv(&results),
                Format::Svg => return Err(Error::InvalidConfig("batch does not support --format svg".into())),
            };
            emit(&output.out, &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}
