//! Command-line front end: data preparation, training, reconstruction,
//! evaluation and benchmarking.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shearlf::io::{load_light_field, save_light_field};
use shearlf::lightfield::{evaluate, DisparityConfig};
use shearlf::nn::{load_checkpoint, ChannelPlan, NetParams};
use shearlf::pipeline::{bench, prep_eval_data, reconstruct_dslf, subsample_for_eval, CropBox, CropSpec, Method, RunConfig};
use shearlf::shearlet::ShearletSystem;
use shearlf::solver::Schedule;
use shearlf::trainer::{prepare_training_set, train, write_train_log, EpiStore, TrainConfig, TrainingSource, CROP_WIDTH};
use shearlf::Error;

#[derive(Parser, Debug)]
#[command(name = "shearlf", version, about = "Dense light field reconstruction with shearlet-domain regularization")]
struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Write canvases and solver traces of selected EPIs here.
    #[arg(long, global = true)]
    dump_intermediates: Option<PathBuf>,
    /// Key-value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Crop and resize a directory of views into an evaluation light field.
    PrepData(PrepDataArgs),
    /// Build a training store from sparsely sampled light fields.
    PrepTrain(PrepTrainArgs),
    /// Train the coefficient-domain network.
    Train(TrainArgs),
    /// Reconstruct a dense light field from a sparse one.
    Reconstruct(ReconstructArgs),
    /// Subsample ground truth, reconstruct it and report per-view PSNR.
    Evaluate(EvaluateArgs),
    /// Time ST against single-pass DRST on one colour EPI.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct PrepDataArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Centred crop aspect, e.g. `16:9`.
    #[arg(long, default_value = "16:9", conflicts_with = "crop_box")]
    aspect: String,
    /// Explicit crop `left,top,width,height`.
    #[arg(long)]
    crop_box: Option<String>,
    #[arg(long, default_value_t = 1280)]
    width: usize,
    #[arg(long, default_value_t = 720)]
    height: usize,
}

#[derive(Args, Debug)]
struct PrepTrainArgs {
    /// Sparse light field as `DIR:D_MIN:D_MAX`; repeat for several.
    #[arg(long = "source", required = true)]
    sources: Vec<String>,
    #[arg(long, default_value_t = 16)]
    tau: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    checkpoint_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Iterations per epoch (default: one pass over the store).
    #[arg(long)]
    epoch_len: Option<usize>,
    /// `standard`, `tiny`, or `E1,E2,E3,E4:D1,D2,D3,D4`.
    #[arg(long, default_value = "standard")]
    plan: String,
    #[arg(long, default_value_t = 1e-3)]
    lr_high: f64,
    #[arg(long, default_value_t = 1e-4)]
    lr_low: f64,
    /// Continue from a checkpoint (weights and optimizer state).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// CSV log path (default: `train_log.csv` in the checkpoint dir).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct RunFlags {
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    gamma: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    d_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    d_max: Option<f64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    st_iterations: Option<usize>,
    #[arg(long)]
    st_alpha: Option<f64>,
    #[arg(long)]
    st_schedule: Option<String>,
    #[arg(long)]
    st_lambda_min: Option<f64>,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Ground-truth dense light field.
    #[arg(long)]
    gt: PathBuf,
    /// Interpolation rate used to extract the sparse input.
    #[arg(long)]
    delta: usize,
    /// Use an existing reconstruction instead of computing one.
    #[arg(long)]
    recon: Option<PathBuf>,
    /// Write the reconstruction here.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-view CSV (default: stdout).
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 1280)]
    width: usize,
    #[arg(long, default_value_t = 13)]
    views: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[command(flatten)]
    run: RunFlags,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Index { .. } | Error::DisparityBudget { .. } => 2,
        Error::Data { .. } | Error::Io { .. } | Error::Image { .. } | Error::Consistency(_) => 3,
        Error::Numerical(_) => 4,
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn parse_pair(s: &str, sep: char) -> Result<(usize, usize), Error> {
    let (a, b) = s.split_once(sep).ok_or_else(|| invalid(format!("expected A{sep}B, got `{s}`")))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|_| invalid(format!("not a count: `{v}`")));
    Ok((num(a)?, num(b)?))
}

fn parse_plan(s: &str, io: usize) -> Result<ChannelPlan, Error> {
    match s {
        "standard" => return Ok(ChannelPlan::standard(io)),
        "tiny" => return Ok(ChannelPlan::tiny(io)),
        _ => {}
    }
    let (e, d) = s.split_once(':').ok_or_else(|| invalid(format!("bad channel plan `{s}`")))?;
    let four = |v: &str| -> Result<[usize; 4], Error> {
        let parts = v
            .split(',')
            .map(|x| x.trim().parse::<usize>().map_err(|_| invalid(format!("bad channel width `{x}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        parts.try_into().map_err(|_| invalid(format!("channel plan needs four widths per side: `{s}`")))
    };
    let plan = ChannelPlan { io, encoder: four(e)?, decoder: four(d)? };
    plan.validate()?;
    Ok(plan)
}

fn base_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.dump_intermediates {
        cfg.dump_intermediates = Some(d.clone());
    }
    Ok(cfg)
}

fn apply_flags(cfg: &mut RunConfig, f: &RunFlags) -> Result<(), Error> {
    if let Some(m) = &f.method {
        cfg.method = m.parse::<Method>()?;
    }
    if let Some(t) = f.tau {
        cfg.tau = t;
    }
    if let Some(g) = f.gamma {
        cfg.gamma = g;
    }
    if f.d_min.is_some() || f.d_max.is_some() {
        let (lo, hi) = match cfg.disparity {
            Some(d) => (f.d_min.unwrap_or(d.d_min), f.d_max.unwrap_or(d.d_max)),
            None => match (f.d_min, f.d_max) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(invalid("give both --d-min and --d-max")),
            },
        };
        cfg.disparity = Some(DisparityConfig::new(lo, hi)?);
    }
    if let Some(c) = &f.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if let Some(k) = f.st_iterations {
        cfg.solver.iterations = k;
    }
    if let Some(a) = f.st_alpha {
        cfg.solver.alpha = a;
    }
    if let Some(s) = &f.st_schedule {
        cfg.solver.schedule = s.parse::<Schedule>()?;
    }
    if let Some(l) = f.st_lambda_min {
        cfg.solver.lambda_min = l;
    }
    cfg.validate()
}

fn load_params(cfg: &RunConfig) -> Result<Option<NetParams<f32>>, Error> {
    match (cfg.method, &cfg.checkpoint) {
        (Method::St, _) => Ok(None),
        (Method::Drst, Some(path)) => Ok(Some(load_checkpoint(path)?.0)),
        (Method::Drst, None) => Err(invalid("--method drst needs --checkpoint")),
    }
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf, Error> {
    path.clone().ok_or_else(|| invalid(format!("missing {what} path")))
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| invalid(format!("cannot start {j} workers: {e}")))?;
    }
    match &cli.command {
        Command::PrepData(a) => {
            let crop = match &a.crop_box {
                Some(b) => {
                    let v = b
                        .split(',')
                        .map(|x| x.trim().parse::<usize>().map_err(|_| invalid(format!("bad crop box `{b}`"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    let [left, top, width, height] = v[..] else {
                        return Err(invalid("crop box needs left,top,width,height"));
                    };
                    CropSpec::Box(CropBox { left, top, width, height })
                }
                None => {
                    let (aw, ah) = parse_pair(&a.aspect, ':')?;
                    CropSpec::Aspect(aw, ah)
                }
            };
            let lf = prep_eval_data(&a.input, crop, (a.width, a.height))?;
            save_light_field(&a.output, &lf)?;
            eprintln!("wrote {} views of {}x{} to {}", lf.view_count(), lf.width(), lf.height(), a.output.display());
        }
        Command::PrepTrain(a) => {
            let sources = a
                .sources
                .iter()
                .map(|s| {
                    let mut parts = s.rsplitn(3, ':');
                    let (hi, lo, dir) = match (parts.next(), parts.next(), parts.next()) {
                        (Some(h), Some(l), Some(d)) => (h, l, d),
                        _ => return Err(invalid(format!("source `{s}` is not DIR:D_MIN:D_MAX"))),
                    };
                    let num = |v: &str| v.parse::<f64>().map_err(|_| invalid(format!("source `{s}`: bad disparity `{v}`")));
                    Ok(TrainingSource {
                        name: dir.to_string(),
                        light_field: load_light_field(Path::new(dir))?,
                        disparity: DisparityConfig::new(num(lo)?, num(hi)?)?,
                    })
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let store = prepare_training_set(&sources, a.tau, &a.output)?;
            eprintln!("stored {} training EPIs in {}", store.len(), a.output.display());
        }
        Command::Train(a) => {
            let cfg = base_config(&cli)?;
            let store = EpiStore::open(&a.store)?;
            let sys = ShearletSystem::new(shearlf::geometry::CANVAS_HEIGHT, CROP_WIDTH, cfg.scales(), cfg.gamma)?;
            let init = match &a.resume {
                Some(p) => {
                    let (params, state) = load_checkpoint(p)?;
                    let state = state.unwrap_or_else(|| shearlf::nn::AdaMaxState::new(&params));
                    Some((params, state))
                }
                None => None,
            };
            let plan = match &init {
                Some((p, _)) => p.plan.clone(),
                None => parse_plan(&a.plan, sys.count())?,
            };
            let tc = TrainConfig {
                epochs: a.epochs,
                epoch_len: a.epoch_len,
                lr_high: a.lr_high,
                lr_low: a.lr_low,
                seed: cfg.seed,
                ..TrainConfig::new(plan, a.checkpoint_dir.clone())
            };
            let log_path = a.log.clone().unwrap_or_else(|| a.checkpoint_dir.join("train_log.csv"));
            let outcome = train(&store, &sys, &tc, init, |s| {
                if s.step % 100 == 0 {
                    eprintln!("step {} epoch {} lr {:e} loss {:.4}", s.step, s.epoch, s.lr, s.loss);
                }
            })?;
            write_train_log(&log_path, &outcome.log)?;
            if let Some(last) = outcome.checkpoints.last() {
                eprintln!("final checkpoint {}", last.display());
            }
        }
        Command::Reconstruct(a) => {
            let mut cfg = base_config(&cli)?;
            apply_flags(&mut cfg, &a.run)?;
            if a.input.is_some() {
                cfg.input = a.input.clone();
            }
            if a.output.is_some() {
                cfg.output = a.output.clone();
            }
            let input = require(&cfg.input, "input")?;
            let output = require(&cfg.output, "output")?;
            let params = load_params(&cfg)?;
            let sslf = load_light_field(&input)?;
            let dslf = reconstruct_dslf(&sslf, &cfg, params.as_ref())?;
            save_light_field(&output, &dslf)?;
            eprintln!("wrote {} views to {}", dslf.view_count(), output.display());
        }
        Command::Evaluate(a) => {
            let mut cfg = base_config(&cli)?;
            cfg.tau = a.delta;
            apply_flags(&mut cfg, &a.run)?;
            let gt = load_light_field(&a.gt)?;
            let dslf = match &a.recon {
                Some(dir) => load_light_field(dir)?,
                None => {
                    let params = load_params(&cfg)?;
                    let sslf = subsample_for_eval(&gt, a.delta)?;
                    let d = reconstruct_dslf(&sslf, &cfg, params.as_ref())?;
                    if let Some(out) = &a.output {
                        save_light_field(out, &d)?;
                    }
                    d
                }
            };
            let inputs: Vec<usize> = (0..gt.view_count()).step_by(a.delta).collect();
            let report = evaluate(&dslf, &gt, &inputs)?;
            let mut csv = String::from("view_index,psnr\n");
            for (i, p) in &report.per_view {
                csv.push_str(&format!("{i},{p:.4}\n"));
            }
            match &a.csv {
                Some(path) => std::fs::write(path, &csv).map_err(|e| Error::Io { path: path.clone(), source: e })?,
                None => print!("{csv}"),
            }
            println!("min {:.4} avg {:.4}", report.min_psnr, report.avg_psnr);
        }
        Command::Bench(a) => {
            let mut cfg = base_config(&cli)?;
            apply_flags(&mut cfg, &a.run)?;
            let params = match &cfg.checkpoint {
                Some(p) => Some(load_checkpoint(p)?.0),
                None => None,
            };
            let report = bench(a.width, a.views, a.repeats, &cfg, params.as_ref())?;
            for line in report.lines() {
                println!("{line}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
