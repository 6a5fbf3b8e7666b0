//! ASCII rendering of a grid and an agent trajectory.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::env::{GridWorld, Position};

pub const LEGEND: &str = "S=start G=goal #=obstacle .=empty *=path A=agent";

/// `n` rows of `n` glyphs followed by [`LEGEND`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedFrame {
    pub rows: Vec<String>,
    pub legend: &'static str,
}

impl fmt::Display for RenderedFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            writeln!(f, "{row}")?;
        }
        writeln!(f, "{}", self.legend)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trajectory position {0} lies outside the grid")]
pub struct RenderError(pub Position);

/// Glyph precedence: `A` > `S`/`G` > `*` > `#` > `.`. The final trajectory
/// position is the agent.
pub fn render_frame(grid: &GridWorld, trajectory: &[Position]) -> Result<RenderedFrame, RenderError> {
    let n = grid.n();
    if let Some(&p) = trajectory.iter().find(|p| !p.in_bounds(n)) {
        return Err(RenderError(p));
    }
    let mut cells = vec![b'.'; n * n];
    for p in grid.obstacles() {
        cells[p.y * n + p.x] = b'#';
    }
    for p in trajectory {
        cells[p.y * n + p.x] = b'*';
    }
    cells[grid.start().y * n + grid.start().x] = b'S';
    cells[grid.goal().y * n + grid.goal().x] = b'G';
    if let Some(a) = trajectory.last() {
        cells[a.y * n + a.x] = b'A';
    }
    let rows = cells.chunks(n).map(|row| row.iter().map(|&b| b as char).collect()).collect();
    Ok(RenderedFrame { rows, legend: LEGEND })
}
