//! Command-line front end: pretrain source models, run single adaptation
//! streams, sweep the quality/quantity grid, and render reports.

use adaptsim_cli::{config, grid, report, runner};
use adaptsim_core::harness::primary_metric;
use adaptsim_core::scenario::ScenarioKind;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use config::FileConfig;
use grid::GridSpec;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "adaptsim",
    about = "Online adaptation simulator with controlled pseudo-labeling",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML configuration file; defaults apply for every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints, records, and reports.
    #[arg(long, default_value = "out", global = true)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain source models and write checkpoints per (scenario, seed).
    Pretrain {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated scenario list; defaults to the config grid list.
        #[arg(long)]
        scenario: Option<String>,
        /// Base seed; defaults to the config grid base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Seeds base..base+repeats get their own checkpoint.
        #[arg(long)]
        repeats: Option<u32>,
    },
    /// Run one adaptation stream and print its metrics.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "OPDA")]
        scenario: String,
        #[arg(long, default_value = "contrastive")]
        loss: String,
        /// Pseudo-label quality a in percent.
        #[arg(long, default_value_t = 100.0)]
        quality: f64,
        /// Pseudo-label quantity q in percent.
        #[arg(long, default_value_t = 100.0)]
        quantity: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the per-sample simulator dump to this CSV path.
        #[arg(long)]
        debug_dump: Option<PathBuf>,
    },
    /// Sweep the full quality x quantity grid with repeats.
    Grid {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated scenario list; defaults to the config grid list.
        #[arg(long)]
        scenario: Option<String>,
        /// Comma-separated loss list; defaults to the config grid list.
        #[arg(long)]
        loss: Option<String>,
        /// Base seed override.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repeats: Option<u32>,
        /// Worker threads; 0 uses one per CPU.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Regenerate CSVs, heatmaps, and the trend summary from stored records.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Pretrain {
            common,
            scenario,
            seed,
            repeats,
        } => cmd_pretrain(common, scenario, seed, repeats),
        Command::Run {
            common,
            scenario,
            loss,
            quality,
            quantity,
            seed,
            debug_dump,
        } => cmd_run(common, scenario, loss, quality, quantity, seed, debug_dump),
        Command::Grid {
            common,
            scenario,
            loss,
            seed,
            repeats,
            threads,
        } => cmd_grid(common, scenario, loss, seed, repeats, threads),
        Command::Report { common } => cmd_report(common),
    }
}

fn scenarios_from(cfg: &FileConfig, flag: Option<String>) -> Result<Vec<ScenarioKind>> {
    match flag {
        Some(list) => config::parse_scenarios(&list),
        None => cfg.scenario_kinds(),
    }
}

fn cmd_pretrain(
    common: CommonArgs,
    scenario: Option<String>,
    seed: Option<u64>,
    repeats: Option<u32>,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let scenarios = scenarios_from(&cfg, scenario)?;
    let base_seed = seed.unwrap_or(cfg.grid.base_seed);
    let repeats = repeats.unwrap_or(cfg.grid.repeats).max(1);
    for kind in scenarios {
        for r in 0..repeats as u64 {
            let run_seed = base_seed + r;
            let (path, loss) = runner::pretrain_scenario(&cfg, kind, run_seed, &common.out_dir)?;
            println!(
                "pretrained {} seed {run_seed}: final epoch loss {loss:.4} -> {}",
                kind.name(),
                path.display()
            );
        }
    }
    Ok(())
}

fn cmd_run(
    common: CommonArgs,
    scenario: String,
    loss: String,
    quality: f64,
    quantity: f64,
    seed: Option<u64>,
    debug_dump: Option<PathBuf>,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let kind = ScenarioKind::parse(&scenario)?;
    let loss_kind = adaptsim_core::losses::LossKind::parse(&loss)?;
    let run_seed = seed.unwrap_or(cfg.grid.base_seed);
    let state = runner::load_pretrained(&common.out_dir, kind, run_seed)?;
    let data = runner::prepare_data(&cfg, kind, run_seed)?;
    let mut run_cfg = cfg.run_config(loss_kind, quality, quantity, run_seed)?;
    run_cfg.debug_dump = debug_dump;
    let record = runner::execute_run(
        kind,
        &run_cfg,
        state,
        &data.target,
        quality,
        quantity,
        loss_kind,
    )?;
    let path = runner::adhoc_record_path(
        &common.out_dir,
        kind,
        loss_kind,
        quality.round() as u32,
        quantity.round() as u32,
        run_seed,
    );
    runner::write_record(&path, &record)?;
    let m = &record.metrics;
    println!(
        "{} {} quality {quality} quantity {quantity} seed {run_seed}",
        kind.name(),
        loss_kind.name()
    );
    println!(
        "  accuracy {:.4}  acc_known {:.4}  acc_unknown {:.4}  h_score {:.4}",
        m.accuracy, m.acc_known, m.acc_unknown, m.h_score
    );
    println!(
        "  primary metric ({}) = {:.2}%",
        match kind {
            ScenarioKind::Pda => "accuracy",
            _ => "h_score",
        },
        primary_metric(kind, m) * 100.0
    );
    println!("  record: {}", path.display());
    Ok(())
}

fn cmd_grid(
    common: CommonArgs,
    scenario: Option<String>,
    loss: Option<String>,
    seed: Option<u64>,
    repeats: Option<u32>,
    threads: usize,
) -> Result<()> {
    let cfg = FileConfig::load(common.config.as_deref())?;
    let mut spec = GridSpec::from_config(&cfg)?;
    if let Some(list) = scenario {
        spec.scenarios = config::parse_scenarios(&list)?;
    }
    if let Some(list) = loss {
        spec.losses = config::parse_losses(&list)?;
    }
    if let Some(s) = seed {
        spec.base_seed = s;
    }
    if let Some(r) = repeats {
        spec.repeats = r;
    }
    spec.validate()?;
    let runs = spec.qualities.len()
        * spec.quantities.len()
        * spec.scenarios.len()
        * spec.losses.len()
        * spec.repeats as usize;
    println!(
        "grid: {} qualities x {} quantities x {} scenarios x {} losses x {} repeats = {runs} runs",
        spec.qualities.len(),
        spec.quantities.len(),
        spec.scenarios.len(),
        spec.losses.len(),
        spec.repeats
    );
    let outcome = grid::run_grid(&cfg, &spec, &common.out_dir, threads)?;
    let reports = report::emit_reports(&outcome, &common.out_dir)?;
    for rendering in &reports.ansi {
        println!("{rendering}");
    }
    match &reports.trends {
        Some(trends) => println!(
            "trend summary: {} (all_pass = {})",
            common.out_dir.join("trend_summary.json").display(),
            trends.all_pass
        ),
        None => println!("trend summary skipped: grid lacks the cells the checks need"),
    }
    println!("reports written under {}", common.out_dir.display());
    Ok(())
}

fn cmd_report(common: CommonArgs) -> Result<()> {
    let outcome = grid::load_outcome_from_records(&common.out_dir)
        .context("rebuilding grid from stored records")?;
    let reports = report::emit_reports(&outcome, &common.out_dir)?;
    for rendering in &reports.ansi {
        println!("{rendering}");
    }
    if let Some(trends) = &reports.trends {
        println!("all trend checks pass: {}", trends.all_pass);
    }
    println!("reports written under {}", common.out_dir.display());
    Ok(())
}
