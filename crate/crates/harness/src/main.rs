use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nbv_core::planners::episode::run_episode;
use nbv_core::planners::PlannerKind;
use nbv_core::utility::{evaluate_gain, write_gain_png};
use nbv_harness::checks::{gradcheck, node_checks, occlusion_checks, Check, GRADIENT_STEP, GRADIENT_TOLERANCE};
use nbv_harness::config::{ExperimentConfig, Scale};
use nbv_harness::experiments::{run_node_experiment, run_occlusion_experiment, summarize, tune_alpha, ExperimentResults, OCCLUSION_VIEWS};
use nbv_harness::export::{export_results, load_results};
use nbv_harness::scenarios::occlusion_scenarios;

#[derive(Parser)]
#[command(name = "nbv", version, about = "Next-best-view planning experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; missing fields take the preset of --scale.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict to these planners (repeatable).
    #[arg(long, global = true)]
    planner: Vec<PlannerKind>,
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
    /// Exit nonzero if any check fails.
    #[arg(long, global = true)]
    check: bool,
    /// Also write the full episode logs as JSON.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Occluded-target coverage sweep (sides x initial poses x planners).
    Occlusion,
    /// Node perception sweep over procedural plants.
    Nodes,
    /// Grid search for the gradient step size.
    TuneAlpha,
    /// Analytic against finite-difference gain gradients on random grids.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        pairs: usize,
    },
    /// Gain heatmaps along one occlusion episode, one PNG per view.
    RenderGain {
        #[arg(long, default_value_t = 0)]
        scenario: usize,
        #[arg(long, default_value_t = 8)]
        scale_px: u32,
    },
    /// Re-export CSV and SVG tables from a JSON results file.
    Export {
        input: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            // Overlay the file on the chosen preset so partial configs work at either scale.
            let scale = c.scale.or_else(|| value.get("scale").and_then(|s| serde_json::from_value(s.clone()).ok())).unwrap_or(Scale::Desk);
            let mut base = serde_json::to_value(ExperimentConfig::for_scale(scale))?;
            merge(&mut base, value.take());
            serde_json::from_value(base)?
        }
        None => ExperimentConfig::for_scale(c.scale.unwrap_or(Scale::Desk)),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if !c.planner.is_empty() {
        cfg.planners = PlannerKind::ALL.into_iter().filter(|p| c.planner.contains(p)).collect();
    }
    cfg.planner.validate()?;
    Ok(cfg)
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn report(results: &ExperimentResults, views: &[usize], checks: Vec<Check>, common: &Common) -> Result<bool> {
    let files = export_results(results, views, &common.out_dir, common.json)?;
    println!("{} episodes, config {}", results.episodes.len(), &results.config_hash[..12]);
    println!("{:<12} {:>4} {:>9} {:>9} {:>9} {:>8} {:>8} {:>9}", "planner", "view", "coverage", "calls", "dist_m", "f1", "recall", "std_m");
    let na = |v: Option<f64>, p: usize| v.map_or("NA".to_string(), |x| format!("{x:.p$}"));
    for r in summarize(results, views) {
        println!(
            "{:<12} {:>4} {:>9.2} {:>9.1} {:>9.3} {:>8} {:>8} {:>9}",
            r.planner.to_string(),
            r.view,
            r.coverage,
            r.ray_calls,
            r.distance,
            na(r.f1, 2),
            na(r.occluded_recall, 3),
            na(r.position_std, 5)
        );
    }
    let mut ok = true;
    for c in checks {
        println!("{c}");
        ok &= c.pass;
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    let common = &cli.common;
    let cfg = load_config(common)?;
    match cli.command {
        Command::Occlusion => {
            let results = run_occlusion_experiment(&cfg)?;
            let views: Vec<usize> = OCCLUSION_VIEWS.into_iter().filter(|&v| v <= cfg.occlusion.viewpoints).collect();
            let checks = if common.check { occlusion_checks(&results) } else { Vec::new() };
            report(&results, &views, checks, common)
        }
        Command::Nodes => {
            let results = run_node_experiment(&cfg)?;
            let views: Vec<usize> = (0..=cfg.nodes.viewpoints).collect();
            let checks = if common.check { node_checks(&results) } else { Vec::new() };
            report(&results, &views, checks, common)
        }
        Command::TuneAlpha => {
            let tuning = tune_alpha(&cfg)?;
            println!("{:>10} {:>10} {:>8} {:>10}", "alpha", "coverage", "stall", "step_m");
            for t in &tuning.trials {
                println!("{:>10} {:>10.2} {:>8.3} {:>10.4}", t.alpha, t.mean_coverage, t.stall_rate, t.first_step);
            }
            println!("recommended alpha {}", tuning.alpha);
            std::fs::create_dir_all(&common.out_dir)?;
            let path = common.out_dir.join("tune_alpha.json");
            std::fs::write(&path, serde_json::to_string_pretty(&tuning)?)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Gradcheck { pairs } => {
            let intr = cfg.camera.intrinsics()?;
            let r = gradcheck(pairs, cfg.seed, &cfg.rays.spec(&intr))?;
            let pass = r.max_relative_error < GRADIENT_TOLERANCE;
            println!(
                "{} gradient check: {} pairs, h = {GRADIENT_STEP}, max relative error {:.3e} (need < {GRADIENT_TOLERANCE}), {} samples excluded",
                if pass { "PASS" } else { "FAIL" },
                r.pairs,
                r.max_relative_error,
                r.excluded_samples
            );
            Ok(pass || !common.check)
        }
        Command::RenderGain { scenario, scale_px } => {
            let scenarios = occlusion_scenarios(&cfg)?;
            let sc = scenarios.get(scenario).with_context(|| format!("scenario {scenario} out of range ({} available)", scenarios.len()))?;
            let planner = cfg.planners.first().copied().unwrap_or(PlannerKind::Gradient);
            std::fs::create_dir_all(&common.out_dir)?;
            // Episodes are deterministic, so truncated replays give the grid after each view.
            for view in 0..=sc.max_viewpoints {
                let mut setup = sc.setup(&cfg, planner)?;
                setup.planner_config.max_viewpoints = view;
                let out = run_episode(&setup);
                if let Some(e) = out.log.error {
                    bail!("episode failed at view {view}: {e}");
                }
                let grid = out.grid.context("episode produced no grid")?;
                let vp = out.log.views[view].viewpoint;
                let eval = evaluate_gain(&grid, &vp, &setup.ray_spec)?;
                let path = common.out_dir.join(format!("gain_{}_{planner}_view{view:02}.png", sc.id));
                write_gain_png(&eval, &setup.ray_spec, scale_px, &path)?;
                println!("view {view:>2} gain {:.4} -> {}", eval.gain, path.display());
            }
            Ok(true)
        }
        Command::Export { input } => {
            let results = load_results(&input)?;
            let views: Vec<usize> = match results.experiment.as_str() {
                "occlusion" => OCCLUSION_VIEWS.to_vec(),
                _ => (0..=results.episodes.iter().map(|e| e.log.views.len()).max().unwrap_or(1) - 1).collect(),
            };
            for f in export_results(&results, &views, &common.out_dir, false)? {
                println!("wrote {}", f.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
