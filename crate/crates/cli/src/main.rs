use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Parser, Subcommand};

use hoi_core::config::ExperimentConfig;
use hoi_core::contact::extract_cg;
use hoi_core::demo::{calibrate, generate, DemoScript, TaskKind};
use hoi_core::metrics::{evaluate, evaluate_sequence, export_rectified, kinematic_replay, EvalReport};
use hoi_core::model::{load_sequence, save_sequence, RefHoiSequence};
use hoi_core::physics::Simulator;
use hoi_core::rl::{train, Checkpoint};

/// Contact-aware imitation of human-object interaction on a planar toy model.
#[derive(Parser)]
#[command(name = "hoi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic reference clip.
    GenDemo {
        /// hold, carry, toss_catch or biased_hold.
        #[arg(long)]
        task: TaskKind,
        /// Output sequence file (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Experiment config supplying the model and disc (defaults to the toy arm and ball).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Re-label contacts and resolve overlaps through the simulator before writing.
        #[arg(long)]
        calibrate: bool,
    },
    /// Train a policy from an experiment config.
    Train {
        /// Experiment config (JSON).
        #[arg(long, value_parser = existing_file)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config reference sequence.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a policy (or a recorded sequence) against a reference.
    #[command(group(ArgGroup::new("source").required(true).args(["checkpoint", "sim_data"])))]
    Eval {
        /// Trained checkpoint to roll out.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Recorded sequence to score instead of a policy.
        #[arg(long)]
        sim_data: Option<PathBuf>,
        /// Reference sequence.
        #[arg(long)]
        data: PathBuf,
        /// Deterministic rollouts to average.
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Directory for report.json and frames.csv; the report is printed when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-frame contact-graph edges of a sequence.
    ExtractCg {
        /// Sequence file.
        #[arg(long)]
        data: PathBuf,
        /// Recompute labels from simulator contacts instead of reading the stored ones.
        #[arg(long)]
        from_sim: bool,
        /// Experiment config supplying the model and disc.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Play a sequence kinematically through the simulator and report overlaps.
    Replay {
        /// Sequence file.
        #[arg(long)]
        data: PathBuf,
        /// Per-frame CSV (frame, penetration, edges).
        #[arg(long)]
        out: PathBuf,
        /// Also write the replayed poses and contacts as a sequence file.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Experiment config supplying the model, disc and physics settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Export the simulated motion of a trained policy as a new sequence.
    Rectify {
        /// Trained checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reference sequence to imitate.
        #[arg(long)]
        data: PathBuf,
        /// Output sequence file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn existing_file(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_file() {
        Ok(p)
    } else {
        Err(format!("no such file: {s}"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load(path: &Path) -> Result<RefHoiSequence> {
    load_sequence(path).with_context(|| format!("loading sequence {}", path.display()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenDemo { task, out, config, calibrate: cal } => {
            let cfg = load_config(config.as_deref())?;
            let mut seq = generate(&DemoScript::preset(task), &cfg.sim.model, &cfg.sim.disc)?;
            if cal {
                let c = calibrate(&seq, &cfg.sim.model, &cfg.sim.disc, &cfg.sim.physics)?;
                log::info!("calibration: {} label flips, max shift {:.4} m", c.flips.len(), c.max_shift);
                seq = c.sequence;
            }
            save_sequence(&seq, &out)?;
            log::info!("wrote {} frames of {} to {}", seq.len(), task.name(), out.display());
        }
        Command::Train { config, seed, out, data } => {
            let mut cfg = load_config(Some(&config))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if out.is_some() {
                cfg.output_dir = out;
            }
            if data.is_some() {
                cfg.sequence = data;
            }
            let Some(path) = cfg.sequence.clone() else {
                bail!("no reference sequence: set `sequence` in the config or pass --data");
            };
            let seq = load(&path)?;
            log::info!("training on {} ({} frames), config hash {}", path.display(), seq.len(), cfg.hash());
            let outcome = train(&seq, &cfg)?;
            if let Some(last) = outcome.log.last() {
                log::info!("finished {} iterations, final mean r_total {:.4}", last.iteration, last.reward.r_total);
            }
            if cfg.output_dir.is_none() {
                log::warn!("no output directory configured; the checkpoint was not written");
            }
        }
        Command::Eval { checkpoint, sim_data, data, repeats, out } => {
            let reference = load(&data)?;
            let report: EvalReport = match (checkpoint, sim_data) {
                (Some(ck), _) => {
                    let ck = Checkpoint::load(&ck).with_context(|| format!("loading checkpoint {}", ck.display()))?;
                    evaluate(&ck.policy, &ck.config, &reference, repeats)?
                }
                (None, Some(sim)) => evaluate_sequence(&load(&sim)?, &reference)?,
                (None, None) => unreachable!("clap requires a source"),
            };
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    report.write_json(&dir.join("report.json"))?;
                    report.write_frame_csv(&dir.join("frames.csv"))?;
                    println!(
                        "succ {:.4}  body MPJPE {:.1} mm  object MPJPE {:.1} mm  E_cg {:.4}",
                        report.succ, report.e_b_mpjpe, report.e_o_mpjpe, report.e_cg
                    );
                }
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::ExtractCg { data, from_sim, config } => {
            let seq = load(&data)?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            if from_sim {
                let cfg = load_config(config.as_deref())?;
                let mut sim = Simulator::new(cfg.sim.model, cfg.sim.disc, cfg.sim.physics)?;
                for f in 0..seq.len() {
                    sim.reset_to_frame(&seq, f)?;
                    writeln!(w, "{}", extract_cg(&sim.read_contacts(), &seq.cg_map)?.to_line())?;
                }
            } else {
                for frame in &seq.frames {
                    writeln!(w, "{}", frame.cg.to_line())?;
                }
            }
        }
        Command::Replay { data, out, record, config } => {
            let cfg = load_config(config.as_deref())?;
            let seq = load(&data)?;
            let rec = kinematic_replay(&seq, &cfg.sim.model, &cfg.sim.disc, &cfg.sim.physics)?;
            let mut f = fs::File::create(&out)?;
            let edges: Vec<String> = (0..seq.edge_count()).map(|e| format!("edge_{e}")).collect();
            writeln!(f, "frame,penetration,{}", edges.join(","))?;
            for (i, (p, cg)) in rec.penetration.iter().zip(&rec.cg).enumerate() {
                let e: Vec<String> = cg.edges.iter().map(|v| v.to_string()).collect();
                writeln!(f, "{i},{p},{}", e.join(","))?;
            }
            let slop = cfg.sim.physics.contact_slop;
            let worst = rec.penetration.iter().copied().fold(0.0, f64::max);
            let events = rec.penetration.iter().filter(|&&p| p > slop).count();
            println!("frames {}  max penetration {:.5} m  frames beyond slop {}", rec.len(), worst, events);
            if let Some(path) = record {
                save_sequence(&rec.to_sequence(&seq)?, &path)?;
            }
        }
        Command::Rectify { checkpoint, data, out } => {
            let ck =
                Checkpoint::load(&checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let seq = load(&data)?;
            let (rectified, rec) = export_rectified(&ck.policy, &ck.config, &seq)?;
            save_sequence(&rectified, &out)?;
            let slop = ck.config.sim.physics.contact_slop;
            let events = rec.penetration.iter().filter(|&&p| p > slop).count();
            println!("wrote {} frames to {}  frames beyond slop {}", rectified.len(), out.display(), events);
        }
    }
    Ok(())
}
