mod args;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use barnet::filter::{filter_predict, FilterConfig};
use barnet::harness::{gnuplot_script, run_experiment, write_trajectories, ExperimentName, ExperimentSpec};
use barnet::ingest::{bin_events, default_origin, parse_timestamp, read_incidents, split_and_mask, top_k_nodes, ColumnMap, SplitSpec};
use barnet::io::{load_event_matrix, load_model, parse_probabilities, save_event_matrix, save_json, save_predictive};
use barnet::loss::LossSpec;
use barnet::model::{apply_missingness, simulate_bar_with_burn_in};
use barnet::optimizer::{fit_network, FitConfig, Init, Lambda};
use barnet::EventMatrix;
use clap::Parser;
use serde_json::json;

use args::{Cli, Command, CorruptArgs, ExperimentArgs, ExperimentCommand, FilterArgs, FitArgs, IngestArgs, InitKind, LossKind, SimulateArgs};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("BARNET_BUILD_HASH"), ")");

/// Exit 2 for bad invocations or unreadable inputs, 1 for everything else.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

trait UsageExt<T> {
    fn usage(self, what: &str) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> UsageExt<T> for std::result::Result<T, E> {
    fn usage(self, what: &str) -> CmdResult<T> {
        self.map_err(|e| Failure::Usage(e.into().context(what.to_owned())))
    }
}

fn usage_error(msg: String) -> Failure {
    Failure::Usage(anyhow!(msg))
}

struct Ctx {
    seed: Option<u64>,
    out: PathBuf,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes the resolved configuration; the output path is left out so
    /// identical runs into different directories match byte for byte.
    fn echo(&self, command: &str, config: serde_json::Value) -> CmdResult {
        let echo = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed(),
            "config": config,
        });
        save_json(&echo, &self.path("config-echo.json"))?;
        Ok(())
    }
}

fn load_events(path: &Path) -> CmdResult<EventMatrix> {
    load_event_matrix(path).usage(&format!("reading event matrix {}", path.display()))
}

/// A number, or the path of a per-node CSV.
fn probabilities(arg: &str, node_ids: &[String]) -> CmdResult<Vec<f64>> {
    if arg.trim().parse::<f64>().is_ok() {
        return parse_probabilities(arg, node_ids).usage("probability argument");
    }
    let text = fs::read_to_string(arg).usage(&format!("reading probabilities from {arg}"))?;
    parse_probabilities(&text, node_ids).usage(&format!("probabilities in {arg}"))
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> CmdResult {
    let model = load_model(&a.model).usage(&format!("reading model {}", a.model.display()))?;
    if a.steps == 0 {
        return Err(usage_error("--T must be at least 1".into()));
    }
    let x = simulate_bar_with_burn_in(&model, a.steps, None, a.burn_in, ctx.seed())?;
    save_event_matrix(&x, &ctx.path("events.csv"))?;
    ctx.echo(
        "simulate",
        json!({"model": model, "T": a.steps, "burn_in": a.burn_in, "x0": "zeros"}),
    )
}

fn corrupt(ctx: &Ctx, a: &CorruptArgs) -> CmdResult {
    let x = load_events(&a.input)?;
    let p = probabilities(&a.p, x.node_ids())?;
    let (z, w) = apply_missingness(&x, &p, ctx.seed())?;
    save_event_matrix(&z, &ctx.path("observed.csv"))?;
    save_event_matrix(&w, &ctx.path("mask.csv"))?;
    ctx.echo("corrupt", json!({"p": p, "n_nodes": x.n_nodes(), "T": x.n_steps()}))
}

fn ingest(ctx: &Ctx, a: &IngestArgs) -> CmdResult {
    let file = fs::File::open(&a.input).usage(&format!("opening {}", a.input.display()))?;
    let columns = ColumnMap {
        date: a.date_column.clone(),
        primary_type: a.type_column.clone(),
        node: a.node_column.clone(),
    };
    let (records, rejects) = read_incidents(std::io::BufReader::new(file), &columns, a.type_filter.as_deref())
        .usage(&format!("reading incidents from {}", a.input.display()))?;
    if !(a.bin_width > 0.0) {
        return Err(usage_error(format!("--bin-width must be positive, got {}", a.bin_width)));
    }
    let width = chrono::Duration::nanoseconds((a.bin_width * 86_400e9).round() as i64);
    let origin = match &a.origin {
        Some(s) => Some(parse_timestamp(s).ok_or_else(|| usage_error(format!("cannot parse --origin {s:?}")))?),
        None => default_origin(&records),
    };
    let nodes = match a.top_k {
        Some(k) => top_k_nodes(&records, k)?,
        None => {
            let mut keys: Vec<String> = records.iter().map(|r| r.node_key.clone()).collect();
            keys.sort();
            keys.dedup();
            keys
        }
    };
    let origin = origin.ok_or_else(|| anyhow!("no records left after filtering; cannot place bins"))?;
    let (x, summary) = bin_events(&records, width, origin, &nodes, a.n_bins)?;
    save_event_matrix(&x, &ctx.path("events.csv"))?;
    save_json(&json!({"rejects": rejects, "binning": summary}), &ctx.path("rejects.json"))?;
    let mut split = serde_json::Value::Null;
    if let (Some(train), Some(test)) = (a.train_bins, a.test_bins) {
        let spec = SplitSpec {
            train_bins: train,
            test_bins: test,
            mask_p: a.mask_p,
            seed: ctx.seed(),
        };
        let (xt, zt, xs) = split_and_mask(&x, &spec)?;
        save_event_matrix(&xt, &ctx.path("train.csv"))?;
        save_event_matrix(&zt, &ctx.path("train_observed.csv"))?;
        save_event_matrix(&xs, &ctx.path("test.csv"))?;
        split = serde_json::to_value(&spec)?;
    }
    ctx.echo(
        "ingest",
        json!({
            "input": a.input.file_name().map(|f| f.to_string_lossy().into_owned()),
            "columns": columns,
            "type_filter": a.type_filter,
            "bin_width_days": a.bin_width,
            "origin": origin.to_string(),
            "nodes": nodes,
            "n_bins": x.n_steps(),
            "split": split,
        }),
    )
}

fn fit(ctx: &Ctx, a: &FitArgs) -> CmdResult {
    let x = load_events(&a.input)?;
    let spec = match a.loss {
        LossKind::Complete => LossSpec::complete(),
        LossKind::Truncated => LossSpec::truncated(a.q).usage("--q")?,
        LossKind::Unbiased => LossSpec::unbiased(a.q, probabilities(&a.p_hat, x.node_ids())?).usage("--q / --p-hat")?,
    }
    .with_intercept(a.intercept);
    let lambda = match (a.lambda_theory, a.lambda.as_str()) {
        (Some(c), _) => Lambda::Theory(c),
        (None, "auto") => Lambda::Auto,
        (None, v) => Lambda::Value(v.parse().usage("--lambda must be \"auto\" or a number")?),
    };
    let init = match a.init {
        InitKind::Zero => Init::Zero,
        InitKind::Random => Init::Random,
        InitKind::Warm => {
            let path = a.warm.as_ref().expect("clap requires --warm");
            Init::Warm(load_model(path).usage(&format!("reading warm start {}", path.display()))?)
        }
    };
    let cfg = FitConfig {
        lambda,
        radius: a.radius,
        max_iters: a.max_iters,
        tol: a.tol,
        step_init: a.step_init,
        backtrack_factor: a.backtrack,
        seed: ctx.seed(),
        init,
    };
    cfg.validate().usage("fit settings")?;
    let report = fit_network(&spec, &x, &cfg)?;
    let unconverged = report.rows.iter().filter(|r| !r.converged).count();
    if unconverged > 0 {
        log::warn!("{unconverged} rows stopped at max_iters");
    }
    save_json(&report.model, &ctx.path("model.json"))?;
    save_json(&report, &ctx.path("fit_report.json"))?;
    ctx.echo("fit", json!({"loss": spec, "fit": cfg, "lambda_resolved": report.lambda}))
}

fn filter(ctx: &Ctx, a: &FilterArgs) -> CmdResult {
    let model = load_model(&a.model).usage(&format!("reading model {}", a.model.display()))?;
    let z = load_events(&a.input)?;
    let cfg = FilterConfig {
        n_particles: a.particles,
        p: probabilities(&a.p, z.node_ids())?,
        resample_threshold: a.resample_threshold,
        seed: ctx.seed(),
    };
    if !(a.scale > 0.0) {
        return Err(usage_error(format!("--scale must be positive, got {}", a.scale)));
    }
    let out = filter_predict(&model, &z, &cfg).usage("filter settings")?;
    save_predictive(&out, &ctx.path("predictive.csv"))?;
    let summary = json!({
        "expected_event_total": out.expected_event_total,
        "scaled_expected_total": barnet::filter::expected_events(&out, a.scale),
        "scale": a.scale,
        "observed_total": z.total(),
        "min_ess": out.ess_trace.iter().cloned().fold(f64::INFINITY, f64::min),
        "reinjections": out.reinjections,
    });
    save_json(&summary, &ctx.path("filter_summary.json"))?;
    ctx.echo("filter", json!({"filter": cfg, "scale": a.scale}))
}

fn experiment(ctx: &Ctx, a: &ExperimentArgs) -> CmdResult {
    let name: ExperimentName = a.name.parse().usage("experiment name")?;
    let mut spec = if a.paper_scale {
        ExperimentSpec::paper_scale(name)
    } else {
        ExperimentSpec::preset(name)
    };
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).usage(&format!("reading {}", path.display()))?;
        let over: serde_json::Value = serde_json::from_str(&text).usage(&format!("parsing {}", path.display()))?;
        spec = spec.merged(&over).usage(&format!("applying {}", path.display()))?;
    }
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    spec.validate().usage("experiment config")?;
    let data = a.data.as_deref().map(load_events).transpose()?;
    let out = run_experiment(&spec, data.as_ref())?;

    let raw = fs::File::create(ctx.path("raw.csv")).context("creating raw.csv")?;
    out.table.write_raw(std::io::BufWriter::new(raw))?;
    let summary = fs::File::create(ctx.path("summary.csv")).context("creating summary.csv")?;
    out.table.write_summary(std::io::BufWriter::new(summary))?;
    if !out.trajectories.is_empty() {
        let f = fs::File::create(ctx.path("trajectories.csv")).context("creating trajectories.csv")?;
        write_trajectories(&out.trajectories, std::io::BufWriter::new(f))?;
    }
    let x_axis = match name {
        ExperimentName::Robustness | ExperimentName::Holdout => "p_hat",
        _ => "T",
    };
    fs::write(ctx.path("plot.gp"), gnuplot_script(name.as_str(), x_axis)).context("writing plot.gp")?;
    let mut log = out.notes.join("\n");
    log.push('\n');
    fs::write(ctx.path("log.txt"), log).context("writing log.txt")?;
    for note in &out.notes {
        log::info!("{note}");
    }
    let data_name = a.data.as_ref().and_then(|p| p.file_name()).map(|f| f.to_string_lossy().into_owned());
    ctx.echo("experiment", json!({"spec": spec, "data": data_name}))
}

fn run(cli: &Cli) -> CmdResult {
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out.clone(),
    };
    fs::create_dir_all(&ctx.out).usage(&format!("creating output directory {}", ctx.out.display()))?;
    match &cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Corrupt(a) => corrupt(&ctx, a),
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Filter(a) => filter(&ctx, a),
        Command::Experiment(ExperimentCommand::Run(a)) => experiment(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (code, kind, err) = match failure {
                Failure::Usage(e) => (2, "usage", e),
                Failure::Runtime(e) => (1, "runtime", e),
            };
            let report = json!({
                "error": err.to_string(),
                "kind": kind,
                "causes": err.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
            });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}
