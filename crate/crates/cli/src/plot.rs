//! SVG figure rendering: the per-frame error curve from an `eval`
//! metrics file, and a bird's-eye view combining scene, observed and
//! reference trajectories, prediction, and contact points.

use std::fs;
use std::path::Path;

use plotters::prelude::*;

use scenecast::io::config_file::parse_kv_file;
use scenecast::io::formats::Sequence;

use crate::CliError;

const GRAY: RGBColor = RGBColor(158, 158, 158);
const ORANGE: RGBColor = RGBColor(240, 140, 0);

fn render_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Render(e.to_string())
}

/// Draws the mean per-frame pose MAE curve from an `eval` metrics file.
pub fn frame_mae_curve(metrics: &Path, out: &Path) -> Result<(), CliError> {
    let mut kv = parse_kv_file(metrics)?;
    let fps: f64 = kv.take_or("fps", 30.0)?;
    let raw = kv.take("frame_mae").ok_or_else(|| {
        CliError::Render(format!("{} has no frame_mae entry", metrics.display()))
    })?;
    let curve: Vec<f64> = raw
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Render(format!("bad frame_mae value '{t}'")))
        })
        .collect::<Result<_, _>>()?;
    if curve.is_empty() {
        return Err(CliError::Render("frame_mae curve is empty".into()));
    }

    let max_y = curve.iter().cloned().fold(0.0, f64::max).max(1e-9) * 1.1;
    let max_x = curve.len() as f64 / fps;
    let root = SVGBackend::new(out, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(render_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Mean per-frame pose MAE", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(44)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..max_x, 0.0..max_y)
        .map_err(render_err)?;
    chart
        .configure_mesh()
        .x_desc("forecast horizon (s)")
        .y_desc("MAE (m)")
        .draw()
        .map_err(render_err)?;
    chart
        .draw_series(LineSeries::new(
            curve
                .iter()
                .enumerate()
                .map(|(i, v)| ((i + 1) as f64 / fps, *v)),
            BLUE.stroke_width(2),
        ))
        .map_err(render_err)?;
    root.present().map_err(render_err)?;
    Ok(())
}

/// Top-down view of one predicted window: scene points, observed root,
/// reference future root, predicted root, and flagged contact points.
pub fn birdseye(
    seq: &Sequence,
    start: usize,
    prediction: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let pred_root = read_matrix(&prediction.join("root.txt"))?;
    let contact_rows = read_matrix(&prediction.join("contacts.txt"))?;
    let f_fut = pred_root.len();
    let t_total = contact_rows.len();
    if f_fut == 0 || t_total <= f_fut {
        return Err(CliError::Render(format!(
            "prediction in {} has {} contact frames for {} future frames",
            prediction.display(),
            t_total,
            f_fut
        )));
    }
    let t_obs = t_total - f_fut;
    if pred_root.iter().any(|r| r.len() != 3) {
        return Err(CliError::Render("root.txt rows must hold x y z".into()));
    }
    if contact_rows.iter().any(|r| r.len() % 4 != 0) {
        return Err(CliError::Render(
            "contacts.txt rows must hold flag x y z per joint".into(),
        ));
    }

    let observed = seq.motion.window(start, t_obs)?;
    let reference = seq.motion.window(start + t_obs, f_fut)?;
    let obs_xy: Vec<(f64, f64)> = root_xy(&observed);
    let ref_xy: Vec<(f64, f64)> = root_xy(&reference);
    let pred_xy: Vec<(f64, f64)> = pred_root.iter().map(|r| (r[0], r[1])).collect();
    let contact_xy: Vec<(f64, f64)> = contact_rows
        .iter()
        .flat_map(|row| {
            row.chunks_exact(4)
                .filter(|c| c[0] > 0.5)
                .map(|c| (c[1], c[2]))
                .collect::<Vec<_>>()
        })
        .collect();

    let pts = seq.scene.points();
    let stride = (pts.nrows() / 4000).max(1);
    let scene_xy: Vec<(f64, f64)> = (0..pts.nrows())
        .step_by(stride)
        .map(|i| (pts[[i, 0]], pts[[i, 1]]))
        .collect();

    let everything = scene_xy
        .iter()
        .chain(&obs_xy)
        .chain(&ref_xy)
        .chain(&pred_xy)
        .chain(&contact_xy);
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in everything {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    // Same span on both axes keeps the view isometric.
    let span = (max_x - min_x).max(max_y - min_y).max(1e-6) * 1.06;
    let cx = (min_x + max_x) / 2.0;
    let cy = (min_y + max_y) / 2.0;

    let root = SVGBackend::new(out, (820, 820)).into_drawing_area();
    root.fill(&WHITE).map_err(render_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Bird's-eye forecast", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(44)
        .y_label_area_size(56)
        .build_cartesian_2d(
            cx - span / 2.0..cx + span / 2.0,
            cy - span / 2.0..cy + span / 2.0,
        )
        .map_err(render_err)?;
    chart
        .configure_mesh()
        .x_desc("x (m)")
        .y_desc("y (m)")
        .draw()
        .map_err(render_err)?;

    chart
        .draw_series(
            scene_xy
                .iter()
                .map(|&(x, y)| Circle::new((x, y), 1, GRAY.filled())),
        )
        .map_err(render_err)?;
    chart
        .draw_series(
            contact_xy
                .iter()
                .map(|&(x, y)| Circle::new((x, y), 3, ORANGE.filled())),
        )
        .map_err(render_err)?
        .label("predicted contacts")
        .legend(|(x, y)| Circle::new((x + 8, y), 3, ORANGE.filled()));
    chart
        .draw_series(LineSeries::new(obs_xy, BLUE.stroke_width(2)))
        .map_err(render_err)?
        .label("observed root")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], BLUE.stroke_width(2)));
    chart
        .draw_series(LineSeries::new(ref_xy, GREEN.stroke_width(2)))
        .map_err(render_err)?
        .label("reference future")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], GREEN.stroke_width(2)));
    chart
        .draw_series(LineSeries::new(pred_xy, RED.stroke_width(2)))
        .map_err(render_err)?
        .label("predicted future")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], RED.stroke_width(2)));

    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(render_err)?;
    root.present().map_err(render_err)?;
    Ok(())
}

fn root_xy(motion: &scenecast::types::MotionSequence) -> Vec<(f64, f64)> {
    motion
        .root_trajectory()
        .positions()
        .rows()
        .into_iter()
        .map(|r| (r[0], r[1]))
        .collect()
}

/// Whitespace-separated numeric rows; empty lines skipped.
fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    CliError::Render(format!(
                        "{}:{}: bad number '{t}'",
                        path.display(),
                        i + 1
                    ))
                })
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        rows.push(row);
    }
    Ok(rows)
}
