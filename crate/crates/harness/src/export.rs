//! CSV, JSON and SVG artifacts. Floats are written with Rust's shortest
//! round-trip formatting so identical runs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nbv_core::planners::PlannerKind;

use crate::experiments::{mean_track_std, summarize, ExperimentResults, SummaryRow};

const NA: &str = "NA";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

pub const EPISODE_HEADER: &str = "experiment,config_hash,scenario,scenario_index,planner,seed,view,coverage,ray_calls,distance,\
f1,precision,recall,occluded_recall,roi_node_std,mean_track_std,tracks,detections,gain,perturbed,\
camera_x,camera_y,camera_z,target_x,target_y,target_z,error";

/// One row per (episode, view).
pub fn episode_csv(results: &ExperimentResults) -> String {
    let mut out = String::from(EPISODE_HEADER);
    out.push('\n');
    for e in &results.episodes {
        for v in &e.log.views {
            let c = v.viewpoint.camera;
            let t = v.viewpoint.target;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.experiment,
                e.config_hash,
                e.scenario,
                e.scenario_index,
                e.planner,
                e.seed,
                v.view,
                v.coverage,
                v.ray_calls,
                v.distance,
                opt(v.f1.map(|f| f.f1)),
                opt(v.f1.map(|f| f.precision)),
                opt(v.f1.map(|f| f.recall)),
                opt(v.occluded_recall),
                opt(v.roi_node_std),
                opt(mean_track_std(v)),
                v.tracks.len(),
                v.detections,
                opt(v.step.as_ref().and_then(|s| s.gain)),
                v.step.as_ref().is_some_and(|s| s.perturbed),
                c.x,
                c.y,
                c.z,
                t.x,
                t.y,
                t.z,
                e.log.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            );
        }
    }
    out
}

pub const SUMMARY_HEADER: &str = "experiment,config_hash,planner,view,episodes,coverage,ray_calls,distance,f1,occluded_recall,position_std";

pub fn summary_csv(results: &ExperimentResults, rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            results.experiment,
            results.config_hash,
            r.planner,
            r.view,
            r.episodes,
            r.coverage,
            r.ray_calls,
            r.distance,
            opt(r.f1),
            opt(r.occluded_recall),
            opt(r.position_std),
        );
    }
    out
}

/// Mean coverage against view index, one polyline per planner.
pub fn coverage_svg(rows: &[SummaryRow]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 40.0;
    let max_view = rows.iter().map(|r| r.view).max().unwrap_or(1).max(1) as f64;
    let x = |v: usize| M + (W - 2.0 * M) * v as f64 / max_view;
    let y = |c: f64| H - M - (H - 2.0 * M) * c / 100.0;
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n");
    let _ = writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(svg, "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", H - M, W - M, H - M);
    let _ = writeln!(svg, "<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>", H - M);
    for pct in [0, 50, 100] {
        let _ = writeln!(svg, "<text x=\"4\" y=\"{}\">{pct}%</text>", y(pct as f64) + 4.0);
    }
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\">view</text>", W / 2.0, H - 8.0);
    let colours = ["#1b7837", "#2166ac", "#b2182b"];
    for (i, planner) in PlannerKind::ALL.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.planner == *planner)
            .map(|r| format!("{:.1},{:.1}", x(r.view), y(r.coverage)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let colour = colours[i % colours.len()];
        let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>", pts.join(" "));
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" fill=\"{colour}\">{planner}</text>", W - M - 90.0, M + 14.0 * i as f64);
    }
    svg.push_str("</svg>\n");
    svg
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(())
}

/// Writes `<name>_episodes.csv`, `<name>_summary.csv`, `<name>_coverage.svg`
/// and, when `json` is set, `<name>_episodes.json` into `dir`.
pub fn export_results(results: &ExperimentResults, views: &[usize], dir: &Path, json: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = &results.experiment;
    let rows = summarize(results, views);
    let mut written = Vec::new();
    write(dir.join(format!("{name}_episodes.csv")), &episode_csv(results), &mut written)?;
    write(dir.join(format!("{name}_summary.csv")), &summary_csv(results, &rows), &mut written)?;
    write(dir.join(format!("{name}_coverage.svg")), &coverage_svg(&rows), &mut written)?;
    if json {
        let text = serde_json::to_string_pretty(results)?;
        write(dir.join(format!("{name}_episodes.json")), &text, &mut written)?;
    }
    Ok(written)
}

pub fn load_results(path: &Path) -> Result<ExperimentResults> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
