use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lpre_core::config::{ControllerKind, RunConfig};
use lpre_core::report;
use lpre_core::simloop::Indicators;

#[derive(Parser)]
#[command(name = "lpre", version, about = "Start-up transient MPC workbench for a gas-generator engine surrogate")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// ol, pid, lqr or mpc.
    #[arg(long, global = true)]
    controller: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pcc: Option<f64>,
    #[arg(long = "mr-cc", global = true, allow_negative_numbers = true)]
    mr_cc: Option<f64>,
    #[arg(long = "mr-gg", global = true, allow_negative_numbers = true)]
    mr_gg: Option<f64>,
    #[arg(long = "mr-pi", global = true, allow_negative_numbers = true)]
    mr_pi: Option<f64>,
    /// Plant parameter mismatch on or off.
    #[arg(long, global = true)]
    mismatch: Option<bool>,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the surrogate and write params.json.
    Calibrate,
    /// Solve the trim for the reference command and write equilibrium.csv.
    Refgen,
    /// One closed-loop or open-loop run with all artifacts.
    Run,
    /// OL vs MPC indicators at p_CC = 0.7, 1.0, 1.2.
    Table1,
    /// MPC indicators over the configured weight grid.
    Sweep,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = &self.controller {
            cfg.controller = c.parse::<ControllerKind>()?;
        }
        if let Some(v) = self.pcc {
            cfg.command.p_cc = v;
        }
        if let Some(v) = self.mr_cc {
            cfg.command.mr_cc = v;
        }
        if let Some(v) = self.mr_gg {
            cfg.command.mr_gg = v;
        }
        if let Some(v) = self.mr_pi {
            cfg.command.mr_pi = v;
        }
        if let Some(m) = self.mismatch {
            cfg.mismatch.enabled = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_indicators(label: &str, ind: &Indicators) {
    let fields: Vec<String> = Indicators::NAMES.iter().zip(ind.values()).map(|(n, v)| format!("{n}={v:.6}")).collect();
    println!("{label}: {}", fields.join(" "));
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = cli.common.resolve()?;
    let out = cfg.out_dir.clone();
    match cli.cmd {
        Command::Calibrate => {
            let r = report::calibrate(&cfg, &out)?;
            println!("equilibrium residual {:e}", r.residual);
            println!("wrote {}", r.path.display());
        }
        Command::Refgen => {
            let eq = report::refgen(&cfg, &out)?;
            println!("trim residual {:e}", eq.residual_norm);
            println!("x_r {:?}", eq.x.as_slice());
            println!("u_r {:?}", eq.u.as_slice());
        }
        Command::Run => {
            let o = report::run(&cfg, &out)?;
            print_indicators(&o.log.controller, &o.indicators);
            println!("max shaft speed after t_c {:.6}", o.max_omega);
            if let Some(msg) = &o.log.aborted {
                anyhow::bail!("plant aborted: {msg}");
            }
        }
        Command::Table1 => {
            let t = report::table1(&cfg, &out)?;
            for ((p, ol), cl) in t.points.iter().zip(&t.ol).zip(&t.cl) {
                print_indicators(&format!("ol {p:.1}"), &ol.indicators);
                print_indicators(&format!("cl {p:.1}"), &cl.indicators);
            }
        }
        Command::Sweep => {
            let rows = report::sweep(&cfg, &out)?;
            match report::best_row(&rows) {
                Some(i) => println!("best q_p_cc={} r={} k_i={} score={:.6}", rows[i].point.q_p_cc, rows[i].point.r, rows[i].point.k_i, rows[i].score),
                None => println!("no grid point settled"),
            }
        }
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}");
            eprintln!("{}", serde_json::json!({ "error": msg }));
            ExitCode::FAILURE
        }
    }
}
