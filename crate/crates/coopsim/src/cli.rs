//! Command-line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use coopsim_core::netsim::{MessageKind, Mode, Scheme};
use coopsim_core::scenegen::occlusion_demo;

use crate::app::{self, SimOptions};
use crate::config::Config;
use crate::error::{AppError, Result};
use crate::io;
use crate::scenario::ScenarioFile;
use crate::selftest;
use crate::tables::{self, Format, TableKind};

#[derive(Debug, Parser)]
#[command(name = "coopsim", version, about = "Cooperative LiDAR perception simulator")]
pub struct Cli {
    /// Run configuration (TOML). Defaults to the reference model.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every random draw. Overrides the scenario and config seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for per-node encoding. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Vinet,
    Early,
    Dense,
    Late,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::Vinet => Scheme::Vinet,
            SchemeArg::Early => Scheme::Early,
            SchemeArg::Dense => Scheme::Dense,
            SchemeArg::Late => Scheme::Late,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Egocentric,
    Holistic,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Egocentric => Mode::Egocentric,
            ModeArg::Holistic => Mode::Holistic,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample frames from a scenario and write them as a dataset.
    Gen {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        frames: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario through the network simulator and the pipeline.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        scheme: SchemeArg,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Directory for detections, the message log and the evaluation.
        #[arg(long, default_value = "coopsim-out")]
        out: PathBuf,
        /// Use the ground-truth oracle head instead of the learned head.
        #[arg(long)]
        oracle_head: bool,
    },
    /// Run one frame through the model and dump shapes and checksums.
    RunPipeline {
        /// Scenario to sample from. Defaults to the built-in occlusion scene.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        frame: u32,
    },
    /// Print a cost table.
    Cost {
        #[arg(long, value_enum)]
        table: TableKind,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Count N shallow transmissions per frame instead of N - 1.
        #[arg(long)]
        count_self: bool,
    },
    /// Evaluate detection files against a dataset's labels.
    Eval {
        /// Dataset root written by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Detection files, one per frame. Defaults to `<data>/detections`.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Run the randomized invariant suite.
    Selftest {
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// Write the configured model weights as a bundle.
    Weights {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(AppError::Usage("--threads must be at least 1".into()));
        }
        cfg.threads = t;
    }
    Ok(cfg)
}

fn werr(e: std::io::Error) -> AppError {
    AppError::io("<stdout>", e)
}

/// Parses `args` (program name first) and runs the command, writing
/// results to `out`. Diagnostics go to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    use clap::error::ErrorKind;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            return write!(out, "{e}").map_err(werr);
        }
        Err(e) => return Err(AppError::Usage(e.to_string())),
    };
    execute(&cli, out)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Gen {
            scenario,
            frames,
            out: dir,
        } => {
            let scen = ScenarioFile::load(scenario)?;
            let seed = cli.seed.unwrap_or(scen.seed);
            app::generate(&scen, *frames, seed, dir)?;
            writeln!(
                out,
                "wrote {frames} frames for {} nodes to {}",
                scen.scenario.nodes.len(),
                dir.display()
            )
            .map_err(werr)?;
        }
        Command::Simulate {
            scenario,
            scheme,
            mode,
            out: dir,
            oracle_head,
        } => {
            let scen = ScenarioFile::load(scenario)?;
            let opts = SimOptions {
                scheme: (*scheme).into(),
                mode: (*mode).into(),
                seed: cli.seed.unwrap_or(scen.seed),
                threads: cfg.threads,
                oracle_head: *oracle_head,
            };
            let report = app::end_to_end(&cfg, &scen, &opts)?;
            simulate_outputs(&report, dir, out)?;
        }
        Command::RunPipeline { scenario, frame } => {
            let scen = match scenario {
                Some(p) => ScenarioFile::load(p)?,
                None => ScenarioFile {
                    scenario: occlusion_demo().0,
                    seed: 0,
                    recorded: Vec::new(),
                },
            };
            let seed = cli.seed.unwrap_or(scen.seed);
            let data = scen.frame(*frame, seed)?;
            let model = app::build_model(&cfg)?;
            let (stages, plan, dets) = app::run_pipeline(&model, &scen.nodes(), &data, cfg.threads)?;
            writeln!(out, "stage,c,h,w").map_err(werr)?;
            for (name, (c, h, w)) in &plan {
                writeln!(out, "plan:{name},{c},{h},{w}").map_err(werr)?;
            }
            writeln!(out, "stage,c,h,w,sum,checksum").map_err(werr)?;
            for s in &stages {
                let (c, h, w) = s.shape;
                writeln!(out, "{},{c},{h},{w},{:.6e},{:016x}", s.name, s.sum, s.checksum).map_err(werr)?;
            }
            let (c, h, w) = model.config.backbone.output_shape()?;
            writeln!(out, "detections: {}", dets.len()).map_err(werr)?;
            writeln!(out, "final feature map: {c}x{h}x{w}").map_err(werr)?;
        }
        Command::Cost {
            table,
            n,
            format,
            count_self,
        } => {
            if *n == 0 {
                return Err(AppError::Usage("--n must be at least 1".into()));
            }
            let t = tables::build(*table, *n, *count_self || cfg.count_self)?;
            write!(out, "{}", t.render(*format)?).map_err(werr)?;
            if *format == Format::Csv {
                for note in &t.notes {
                    eprintln!("note: {note}");
                }
            }
        }
        Command::Eval { data, detections } => {
            let det = detections.clone().unwrap_or_else(|| data.join("detections"));
            let report = app::eval_dataset(data, &det, &cfg.eval)?;
            app::write_eval_csv(&report, out)?;
        }
        Command::Selftest { samples } => {
            let seed = cli.seed.unwrap_or(cfg.seed);
            let results = selftest::run(seed, *samples);
            let mut failed = Vec::new();
            for r in &results {
                let status = if r.passed() { "ok" } else { "FAILED" };
                writeln!(out, "{:<38} {:>5} samples  {status}", r.name, r.samples).map_err(werr)?;
                if let Some(f) = &r.failure {
                    writeln!(out, "    {f}").map_err(werr)?;
                    failed.push(r.name);
                }
            }
            if !failed.is_empty() {
                return Err(AppError::Invariant(failed.join(", ")));
            }
        }
        Command::Weights { out: path } => {
            let w = app::load_weights(&cfg)?;
            io::write_bundle(path, &w)?;
            writeln!(out, "wrote {}", path.display()).map_err(werr)?;
        }
    }
    Ok(())
}

fn simulate_outputs(report: &app::SimReport, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let layout = io::DatasetLayout::new(dir);
    let mut n_dets = 0;
    for f in &report.frames {
        io::write_detections(&layout.detections(f.index), &f.detections)?;
        n_dets += f.detections.len();
    }
    app::write_log_csv(&report.log, io::create(&dir.join("messages.csv"))?)?;
    app::write_eval_csv(&report.eval, io::create(&dir.join("eval.csv"))?)?;
    let feat = report.log.totals(Some(MessageKind::Feature));
    let meta = report.log.totals(Some(MessageKind::GlobalMeta));
    let res = report.log.totals(Some(MessageKind::Result));
    let c = &report.cost;
    let lines = [
        format!("frames: {}", report.frames.len()),
        format!("detections: {n_dets}"),
        format!("feature messages: {} ({} bytes)", feat.messages, feat.bytes),
        format!("meta messages: {} ({} bytes)", meta.messages, meta.bytes),
        format!("result messages: {} ({} bytes)", res.messages, res.bytes),
        format!(
            "gflops ({}, {}): encoder {:.2}, backbone {:.2}, head {:.2}, overall {:.2}",
            c.model.name(),
            c.condition.label(),
            c.encoder,
            c.backbone,
            c.head,
            c.overall()
        ),
        format!(
            "overall AP ({}): cells {:.4}, classes {:.4}",
            report.eval.benchmark.as_str(),
            report.eval.overall_cells(),
            report.eval.overall_classes()
        ),
        format!("outputs: {}", dir.display()),
    ];
    for l in lines {
        writeln!(out, "{l}").map_err(werr)?;
    }
    Ok(())
}
