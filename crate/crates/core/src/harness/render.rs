//! Static SVG pictures of grid trajectories.

use std::fmt::Write as _;

use crate::envs::{Cell, GridGeometry};
use crate::policy::EpisodeTrace;

/// Colours for discrete option indices (cycled beyond nine).
pub const OPTION_PALETTE: [&str; 9] = [
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#9a6324",
    "#808000",
];

const CELL: f64 = 20.0;
const TRAJECTORY_COLOUR: &str = "#1f77b4";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("trajectory rendering needs a grid environment with positions")]
    Unsupported,
}

fn centre((r, c): Cell) -> (f64, f64) {
    ((c as f64 + 0.5) * CELL, (r as f64 + 0.5) * CELL)
}

/// Draws one episode: grid walls as line segments, the path as a polyline
/// (coloured per option when option indices are present), and a filled
/// circle wherever the high-level observation was acquired.
pub fn render_trajectory_svg(
    trace: &EpisodeTrace,
    geometry: &GridGeometry,
    goal: Option<Cell>,
) -> Result<String, RenderError> {
    let mut path: Vec<Cell> = Vec::with_capacity(trace.steps.len() + 1);
    for step in &trace.steps {
        path.push(step.position.ok_or(RenderError::Unsupported)?);
    }
    if let Some(last) = trace.final_position {
        path.push(last);
    }
    if path.is_empty() {
        return Err(RenderError::Unsupported);
    }

    let (w, h) = (geometry.cols as f64 * CELL, geometry.rows as f64 * CELL);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#
    );

    // a wall cell contributes the edges it shares with open cells or the border
    svg.push_str("<g stroke=\"black\" stroke-width=\"2\">\n");
    for r in 0..geometry.rows {
        for c in 0..geometry.cols {
            if !geometry.is_wall((r, c)) {
                continue;
            }
            let (x0, y0) = (c as f64 * CELL, r as f64 * CELL);
            let (x1, y1) = (x0 + CELL, y0 + CELL);
            let open = |rr: Option<usize>, cc: Option<usize>| match (rr, cc) {
                (Some(rr), Some(cc)) if rr < geometry.rows && cc < geometry.cols => {
                    !geometry.is_wall((rr, cc))
                }
                _ => false,
            };
            let edges = [
                (open(r.checked_sub(1), Some(c)), (x0, y0, x1, y0)),
                (open(Some(r + 1), Some(c)), (x0, y1, x1, y1)),
                (open(Some(r), c.checked_sub(1)), (x0, y0, x0, y1)),
                (open(Some(r), Some(c + 1)), (x1, y0, x1, y1)),
            ];
            for (is_open, (ax, ay, bx, by)) in edges {
                if is_open {
                    let _ = writeln!(svg, r#"<line x1="{ax}" y1="{ay}" x2="{bx}" y2="{by}"/>"#);
                }
            }
        }
    }
    svg.push_str("</g>\n");

    if let Some(g) = goal {
        let (x, y) = (g.1 as f64 * CELL + 4.0, g.0 as f64 * CELL + 4.0);
        let side = CELL - 8.0;
        let _ = writeln!(
            svg,
            r##"<rect x="{x}" y="{y}" width="{side}" height="{side}" fill="#2ca02c"/>"##
        );
    }

    let discrete = trace.steps.iter().any(|s| s.option_index.is_some());
    if discrete {
        // one polyline per run of steps under the same option
        let mut active: Option<usize> = None;
        let mut run: Vec<Cell> = Vec::new();
        let flush = |svg: &mut String, run: &[Cell], option: Option<usize>| {
            if run.len() < 2 {
                return;
            }
            let colour = option.map_or("#999999", |i| OPTION_PALETTE[i % OPTION_PALETTE.len()]);
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="3"/>"#,
                points(run)
            );
        };
        for (t, step) in trace.steps.iter().enumerate() {
            if step.option_index.is_some() && step.option_index != active {
                flush(&mut svg, &run, active);
                run = vec![path[t]];
                active = step.option_index;
            } else if run.is_empty() {
                run.push(path[t]);
            }
            if let Some(&next) = path.get(t + 1) {
                run.push(next);
            }
        }
        flush(&mut svg, &run, active);
    } else {
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{TRAJECTORY_COLOUR}" stroke-width="3"/>"#,
            points(&path)
        );
    }

    for (t, step) in trace.steps.iter().enumerate() {
        if !step.sigma {
            continue;
        }
        let (cx, cy) = centre(path[t]);
        let fill = match step.option_index {
            Some(i) => OPTION_PALETTE[i % OPTION_PALETTE.len()],
            None => "#d62728",
        };
        let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="5" fill="{fill}"/>"#);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn points(cells: &[Cell]) -> String {
    cells
        .iter()
        .map(|&cell| {
            let (x, y) = centre(cell);
            format!("{x},{y}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}
