#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use scanmatch_core::sim::Environment;
use scanmatch_core::ProbabilityGrid;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

/// Cells crossed by the environment's walls, found by sampling every segment
/// at a tenth of the cell size. Indices are computed from the grid origin
/// directly rather than through the grid's own lookup.
pub fn wall_cells(env: &Environment, grid: &ProbabilityGrid) -> BTreeSet<(i64, i64)> {
    let res = grid.resolution();
    let [ox, oy] = grid.origin();
    let mut cells = BTreeSet::new();
    for s in &env.segments {
        let len = (s.b - s.a).norm();
        let n = (len / (res / 10.0)).ceil().max(1.0) as usize;
        for k in 0..=n {
            let p = s.a + (s.b - s.a) * (k as f64 / n as f64);
            cells.insert((
                ((p.x - ox) / res).floor() as i64,
                ((p.y - oy) / res).floor() as i64,
            ));
        }
    }
    cells
}

/// Fraction of wall cells that have a cell with `p > 0.6` within one cell.
pub fn wall_coverage(env: &Environment, grid: &ProbabilityGrid) -> f64 {
    let walls = wall_cells(env, grid);
    let covered = walls
        .iter()
        .filter(|&&(ix, iy)| {
            (-1..=1).any(|dx| {
                (-1..=1).any(|dy| {
                    let (x, y) = (ix + dx, iy + dy);
                    grid.contains_index(x, y) && grid.get(x as usize, y as usize) > 0.6
                })
            })
        })
        .count();
    covered as f64 / walls.len() as f64
}

/// CSV text with the last column of every row removed.
pub fn without_last_column(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}
