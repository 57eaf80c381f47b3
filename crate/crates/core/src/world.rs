//! Occupancy grids, inflation, scenario generation and collision queries.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kinematics::Pose2;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: u32, reason: String },
    #[error("map parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cell index `(col, row)`; column grows along the grid x axis.
pub type CellIndex = (usize, usize);

/// Placement and resolution of a grid in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    pub width: usize,
    pub height: usize,
    /// Cell edge length [m].
    pub resolution: f64,
    /// Pose of the grid's lower-left corner.
    pub origin: Pose2,
    cos: f64,
    sin: f64,
}

impl GridFrame {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Pose2) -> Result<Self, WorldError> {
        if width == 0 || height == 0 {
            return Err(WorldError::InvalidGrid(format!("dimensions {width}x{height} must be positive")));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(WorldError::InvalidGrid(format!("resolution {resolution} must be positive")));
        }
        let (sin, cos) = origin.theta.sin_cos();
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cos,
            sin,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, (i, j): CellIndex) -> usize {
        j * self.width + i
    }

    #[inline]
    pub fn cell_of_index(&self, idx: usize) -> CellIndex {
        (idx % self.width, idx / self.width)
    }

    /// Cell containing a world point, or `None` when outside the grid.
    #[inline]
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<CellIndex> {
        let dx = x - self.origin.x;
        let dy = y - self.origin.y;
        let lx = self.cos * dx + self.sin * dy;
        let ly = -self.sin * dx + self.cos * dy;
        let fi = (lx / self.resolution).floor();
        let fj = (ly / self.resolution).floor();
        if fi < 0.0 || fj < 0.0 || !fi.is_finite() || !fj.is_finite() {
            return None;
        }
        let (i, j) = (fi as usize, fj as usize);
        if i >= self.width || j >= self.height {
            None
        } else {
            Some((i, j))
        }
    }

    /// World coordinates of a cell center.
    pub fn cell_center(&self, (i, j): CellIndex) -> (f64, f64) {
        let lx = (i as f64 + 0.5) * self.resolution;
        let ly = (j as f64 + 0.5) * self.resolution;
        (
            self.origin.x + self.cos * lx - self.sin * ly,
            self.origin.y + self.sin * lx + self.cos * ly,
        )
    }

    /// Extent along the grid axes [m].
    pub fn size_m(&self) -> (f64, f64) {
        (self.width as f64 * self.resolution, self.height as f64 * self.resolution)
    }
}

/// Binary occupancy map.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    frame: GridFrame,
    cells: Vec<bool>,
}

impl OccupancyGrid {
    /// An all-free grid.
    pub fn empty(width: usize, height: usize, resolution: f64, origin: Pose2) -> Result<Self, WorldError> {
        let frame = GridFrame::new(width, height, resolution, origin)?;
        Ok(Self {
            cells: vec![false; frame.len()],
            frame,
        })
    }

    /// `cells` is row-major from the bottom row, `true` meaning occupied.
    pub fn from_cells(frame: GridFrame, cells: Vec<bool>) -> Result<Self, WorldError> {
        if cells.len() != frame.len() {
            return Err(WorldError::InvalidGrid(format!(
                "{} cells for a {}x{} grid",
                cells.len(),
                frame.width,
                frame.height
            )));
        }
        Ok(Self { frame, cells })
    }

    pub fn frame(&self) -> &GridFrame {
        &self.frame
    }

    pub fn width(&self) -> usize {
        self.frame.width
    }

    pub fn height(&self) -> usize {
        self.frame.height
    }

    pub fn resolution(&self) -> f64 {
        self.frame.resolution
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn is_occupied(&self, cell: CellIndex) -> bool {
        self.cells[self.frame.index(cell)]
    }

    pub fn set_occupied(&mut self, cell: CellIndex, occupied: bool) {
        let idx = self.frame.index(cell);
        self.cells[idx] = occupied;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    /// Marks every cell whose center lies inside the disc.
    pub fn fill_disc(&mut self, cx: f64, cy: f64, radius: f64) {
        let res = self.frame.resolution;
        // Work in grid-local coordinates of the (possibly rotated) frame.
        let dx = cx - self.frame.origin.x;
        let dy = cy - self.frame.origin.y;
        let lx = self.frame.cos * dx + self.frame.sin * dy;
        let ly = -self.frame.sin * dx + self.frame.cos * dy;
        let i0 = ((lx - radius) / res - 0.5).floor().max(0.0) as usize;
        let j0 = ((ly - radius) / res - 0.5).floor().max(0.0) as usize;
        let i1 = ((lx + radius) / res).ceil().max(0.0) as usize;
        let j1 = ((ly + radius) / res).ceil().max(0.0) as usize;
        for j in j0..=j1.min(self.frame.height.saturating_sub(1)) {
            for i in i0..=i1.min(self.frame.width.saturating_sub(1)) {
                let px = (i as f64 + 0.5) * res - lx;
                let py = (j as f64 + 0.5) * res - ly;
                if px * px + py * py <= radius * radius {
                    self.set_occupied((i, j), true);
                }
            }
        }
    }

    /// Marks every cell whose center lies in the axis-aligned local-frame box.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) {
        let res = self.frame.resolution;
        for j in 0..self.frame.height {
            let cy = (j as f64 + 0.5) * res;
            if cy < y0 || cy > y1 {
                continue;
            }
            for i in 0..self.frame.width {
                let cx = (i as f64 + 0.5) * res;
                if cx >= x0 && cx <= x1 {
                    self.set_occupied((i, j), true);
                }
            }
        }
    }

    /// Text map: six header lines (width, height, resolution, origin x, y,
    /// theta) followed by `height` rows of `.`/`#`, top row first.
    pub fn to_map_string(&self) -> String {
        let f = &self.frame;
        let mut out = String::with_capacity(f.len() + f.height + 64);
        let _ = writeln!(out, "{}", f.width);
        let _ = writeln!(out, "{}", f.height);
        let _ = writeln!(out, "{}", f.resolution);
        let _ = writeln!(out, "{}", f.origin.x);
        let _ = writeln!(out, "{}", f.origin.y);
        let _ = writeln!(out, "{}", f.origin.theta);
        for j in (0..f.height).rev() {
            for i in 0..f.width {
                out.push(if self.is_occupied((i, j)) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_map_str(text: &str) -> Result<Self, WorldError> {
        let mut lines = text.lines().enumerate();
        let mut header = |name: &str| -> Result<(usize, String), WorldError> {
            let (n, line) = lines.next().ok_or(WorldError::Parse {
                line: 0,
                msg: format!("missing {name}"),
            })?;
            Ok((n + 1, line.trim().to_string()))
        };
        fn num<T: std::str::FromStr>((line, s): (usize, String), name: &str) -> Result<T, WorldError> {
            s.parse().map_err(|_| WorldError::Parse {
                line,
                msg: format!("bad {name} {s:?}"),
            })
        }
        let width: usize = num(header("width")?, "width")?;
        let height: usize = num(header("height")?, "height")?;
        let resolution: f64 = num(header("resolution")?, "resolution")?;
        let ox: f64 = num(header("origin x")?, "origin x")?;
        let oy: f64 = num(header("origin y")?, "origin y")?;
        let oth: f64 = num(header("origin theta")?, "origin theta")?;
        let origin = Pose2 { x: ox, y: oy, theta: oth };
        let frame = GridFrame::new(width, height, resolution, origin)?;
        let mut cells = vec![false; frame.len()];
        let mut rows = 0;
        for (n, line) in lines {
            if rows == height {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(WorldError::Parse {
                    line: n + 1,
                    msg: "more rows than height".into(),
                });
            }
            let row: Vec<char> = line.chars().collect();
            if row.len() != width {
                return Err(WorldError::Parse {
                    line: n + 1,
                    msg: format!("row has {} cells, expected {width}", row.len()),
                });
            }
            let j = height - 1 - rows;
            for (i, c) in row.into_iter().enumerate() {
                cells[frame.index((i, j))] = match c {
                    '.' => false,
                    '#' => true,
                    other => {
                        return Err(WorldError::Parse {
                            line: n + 1,
                            msg: format!("unexpected cell character {other:?}"),
                        })
                    }
                };
            }
            rows += 1;
        }
        if rows != height {
            return Err(WorldError::Parse {
                line: 7 + rows,
                msg: format!("found {rows} rows, expected {height}"),
            });
        }
        Self::from_cells(frame, cells)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WorldError> {
        std::fs::write(path, self.to_map_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        Self::from_map_str(&std::fs::read_to_string(path)?)
    }
}

/// Occupancy grid dilated by a radius; `lethal` cells are forbidden for the
/// vehicle center.
#[derive(Debug, Clone, PartialEq)]
pub struct InflatedGrid {
    frame: GridFrame,
    lethal: Vec<bool>,
    radius: f64,
}

impl InflatedGrid {
    pub fn frame(&self) -> &GridFrame {
        &self.frame
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn lethal_cells(&self) -> &[bool] {
        &self.lethal
    }

    #[inline]
    pub fn is_lethal(&self, cell: CellIndex) -> bool {
        self.lethal[self.frame.index(cell)]
    }

    pub fn lethal_count(&self) -> usize {
        self.lethal.iter().filter(|c| **c).count()
    }

    /// Whether a point is in a free, in-bounds cell.
    #[inline]
    pub fn is_free_point(&self, x: f64, y: f64) -> bool {
        match self.frame.world_to_cell(x, y) {
            Some(c) => !self.is_lethal(c),
            None => false,
        }
    }
}

/// Stand-in for "no obstacle" in the distance transform; far above any
/// squared in-grid distance.
const FAR: f64 = 1e30;

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..f.len() {
        let fq = f[q] + (q * q) as f64;
        let mut s;
        loop {
            let p = v[k];
            s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance, in cells, from every cell center to the
/// nearest occupied cell center. Infinite when the grid has no obstacles.
pub fn squared_distance_field(grid: &OccupancyGrid) -> Vec<f64> {
    let (w, h) = (grid.width(), grid.height());
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut field: Vec<f64> = grid
        .cells()
        .iter()
        .map(|&occ| if occ { 0.0 } else { FAR })
        .collect();
    // columns
    for i in 0..w {
        for j in 0..h {
            f[j] = field[j * w + i];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v[..h], &mut z[..h + 1]);
        for j in 0..h {
            field[j * w + i] = out[j];
        }
    }
    // rows
    for j in 0..h {
        f[..w].copy_from_slice(&field[j * w..(j + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v[..w], &mut z[..w + 1]);
        field[j * w..(j + 1) * w].copy_from_slice(&out[..w]);
    }
    for d in field.iter_mut() {
        if *d >= 0.5 * FAR {
            *d = f64::INFINITY;
        }
    }
    field
}

/// Marks every cell whose center is within `radius` meters of an occupied
/// cell center.
pub fn inflate(grid: &OccupancyGrid, radius: f64) -> Result<InflatedGrid, WorldError> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(WorldError::InvalidGrid(format!("inflation radius {radius} must be non-negative")));
    }
    let r_cells = radius / grid.resolution();
    let limit = r_cells * r_cells + 1e-9;
    let field = squared_distance_field(grid);
    Ok(InflatedGrid {
        frame: *grid.frame(),
        lethal: field.iter().map(|&d2| d2 <= limit).collect(),
        radius,
    })
}

/// `1` when the vehicle center is on a lethal or out-of-bounds cell.
#[inline]
pub fn in_collision(grid: &InflatedGrid, p: &Pose2) -> u8 {
    u8::from(!grid.is_free_point(p.x, p.y))
}

const NEIGHBORS8: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// 8-connected moves out of `cell` into free cells. Diagonal moves squeezing
/// between two blocked orthogonal neighbors are excluded.
pub(crate) fn free_moves<'a>(
    frame: &'a GridFrame,
    blocked: &'a [bool],
    (i, j): CellIndex,
) -> impl Iterator<Item = (CellIndex, bool)> + 'a {
    let (w, h) = (frame.width as isize, frame.height as isize);
    NEIGHBORS8.iter().filter_map(move |&(di, dj)| {
        let (ni, nj) = (i as isize + di, j as isize + dj);
        if ni < 0 || nj < 0 || ni >= w || nj >= h {
            return None;
        }
        let next = (ni as usize, nj as usize);
        if blocked[frame.index(next)] {
            return None;
        }
        let diagonal = di != 0 && dj != 0;
        if diagonal {
            let side_a = blocked[frame.index((ni as usize, j))];
            let side_b = blocked[frame.index((i, nj as usize))];
            if side_a && side_b {
                return None;
            }
        }
        Some((next, diagonal))
    })
}

/// Cells reachable from `start` through free cells, as a mask.
pub fn connected_component(grid: &InflatedGrid, start: CellIndex) -> Vec<bool> {
    let frame = grid.frame();
    let mut seen = vec![false; frame.len()];
    if grid.is_lethal(start) {
        return seen;
    }
    let mut queue = VecDeque::new();
    seen[frame.index(start)] = true;
    queue.push_back(start);
    while let Some(c) = queue.pop_front() {
        for (n, _) in free_moves(frame, grid.lethal_cells(), c) {
            let idx = frame.index(n);
            if !seen[idx] {
                seen[idx] = true;
                queue.push_back(n);
            }
        }
    }
    seen
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    CylinderGarden,
    Maze,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::CylinderGarden => "cylinder_garden",
            ScenarioKind::Maze => "maze",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = WorldError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cylinder_garden" => Ok(ScenarioKind::CylinderGarden),
            "maze" => Ok(ScenarioKind::Maze),
            other => Err(WorldError::InvalidScenario(format!("unknown scenario kind {other:?}"))),
        }
    }
}

/// Parameters of a procedurally generated field.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Field extent [m].
    pub width_m: f64,
    pub height_m: f64,
    /// Cell size [m].
    pub resolution: f64,
    /// Cylinder garden: obstacle radius [m] and count.
    pub cylinder_radius: f64,
    pub cylinder_count: usize,
    /// Maze: corridor pitch [m] and wall thickness [m].
    pub maze_corridor: f64,
    pub maze_wall_thickness: f64,
    /// Maze: fraction of spanning-maze walls kept, in `[0, 1]`.
    pub wall_density: f64,
    /// Inflation used for connectivity checks, normally the vehicle's
    /// collision radius [m].
    pub clearance: f64,
    /// Extra free margin around goals and start [m].
    pub goal_margin: f64,
    pub goal_count: usize,
    /// Minimum pairwise goal distance, also applied between consecutive
    /// targets starting from the start pose [m].
    pub goal_min_separation: f64,
    /// Maximum distance between consecutive targets [m].
    pub goal_max_separation: f64,
    pub seed: u64,
    /// Layout regeneration budget.
    pub max_attempts: u32,
}

impl Scenario {
    pub fn cylinder_garden(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::CylinderGarden,
            width_m: 20.0,
            height_m: 20.0,
            resolution: 0.1,
            cylinder_radius: 0.25,
            cylinder_count: 40,
            maze_corridor: 2.5,
            maze_wall_thickness: 0.2,
            wall_density: 0.7,
            clearance: 0.5f64.hypot(0.5) + 0.05,
            goal_margin: 0.3,
            goal_count: 10,
            goal_min_separation: 3.0,
            goal_max_separation: 6.0,
            seed,
            max_attempts: 64,
        }
    }

    pub fn maze(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Maze,
            ..Self::cylinder_garden(seed)
        }
    }

    pub fn builtin(name: &str, seed: u64) -> Option<Self> {
        match name {
            "cylinder_garden" => Some(Self::cylinder_garden(seed)),
            "maze" => Some(Self::maze(seed)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::InvalidScenario(m));
        if !(self.width_m > 0.0 && self.height_m > 0.0 && self.width_m.is_finite() && self.height_m.is_finite()) {
            return bad(format!("field size {}x{} must be positive", self.width_m, self.height_m));
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return bad(format!("resolution {} must be positive", self.resolution));
        }
        if !(self.cylinder_radius >= 0.0 && self.cylinder_radius.is_finite()) {
            return bad(format!("cylinder_radius {} must be non-negative", self.cylinder_radius));
        }
        if self.kind == ScenarioKind::Maze {
            if !(self.maze_corridor > self.maze_wall_thickness && self.maze_wall_thickness >= 0.0) {
                return bad(format!(
                    "maze corridor {} must exceed wall thickness {}",
                    self.maze_corridor, self.maze_wall_thickness
                ));
            }
            if self.maze_corridor > self.width_m.min(self.height_m) {
                return bad("maze corridor larger than the field".into());
            }
        }
        if !(0.0..=1.0).contains(&self.wall_density) {
            return bad(format!("wall_density {} must lie in [0, 1]", self.wall_density));
        }
        if !(self.clearance >= 0.0 && self.goal_margin >= 0.0 && self.goal_min_separation >= 0.0) {
            return bad("clearance, goal_margin and goal_min_separation must be non-negative".into());
        }
        if !(self.goal_max_separation >= self.goal_min_separation) {
            return bad(format!(
                "goal_max_separation {} must be at least goal_min_separation {}",
                self.goal_max_separation, self.goal_min_separation
            ));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive".into());
        }
        Ok(())
    }

    fn grid_dims(&self) -> (usize, usize) {
        (
            (self.width_m / self.resolution).round().max(1.0) as usize,
            (self.height_m / self.resolution).round().max(1.0) as usize,
        )
    }
}

/// A generated field: map, start pose and the goal sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub grid: OccupancyGrid,
    pub start: Pose2,
    pub goals: Vec<Pose2>,
    /// Sub-seed of the accepted layout.
    pub attempt: u32,
}

fn layout_rng(seed: u64, attempt: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(attempt));
    rng
}

fn cylinder_layout(s: &Scenario, grid: &mut OccupancyGrid, rng: &mut ChaCha8Rng) {
    for _ in 0..s.cylinder_count {
        let cx = rng.random::<f64>() * s.width_m;
        let cy = rng.random::<f64>() * s.height_m;
        grid.fill_disc(cx, cy, s.cylinder_radius);
    }
}

fn maze_layout(s: &Scenario, grid: &mut OccupancyGrid, rng: &mut ChaCha8Rng) {
    let pitch = s.maze_corridor;
    let nx = ((s.width_m / pitch).floor() as usize).max(1);
    let ny = ((s.height_m / pitch).floor() as usize).max(1);
    let half = 0.5 * s.maze_wall_thickness;
    let (w, h) = (nx as f64 * pitch, ny as f64 * pitch);

    // Walls east of (i, j) and north of (i, j); the outer boundary is solid.
    let mut east = vec![true; nx * ny];
    let mut north = vec![true; nx * ny];
    let mut visited = vec![false; nx * ny];
    let mut stack = vec![(0usize, 0usize)];
    visited[0] = true;
    while let Some(&(i, j)) = stack.last() {
        let mut options: Vec<(usize, usize)> = Vec::with_capacity(4);
        if i + 1 < nx && !visited[j * nx + i + 1] {
            options.push((i + 1, j));
        }
        if i > 0 && !visited[j * nx + i - 1] {
            options.push((i - 1, j));
        }
        if j + 1 < ny && !visited[(j + 1) * nx + i] {
            options.push((i, j + 1));
        }
        if j > 0 && !visited[(j - 1) * nx + i] {
            options.push((i, j - 1));
        }
        if options.is_empty() {
            stack.pop();
            continue;
        }
        let (ni, nj) = options[rng.random_range(0..options.len())];
        if ni > i {
            east[j * nx + i] = false;
        } else if ni < i {
            east[j * nx + ni] = false;
        } else if nj > j {
            north[j * nx + i] = false;
        } else {
            north[nj * nx + i] = false;
        }
        visited[nj * nx + ni] = true;
        stack.push((ni, nj));
    }

    // thin the spanning maze; removing walls never disconnects it
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            if i + 1 < nx && east[k] && rng.random::<f64>() >= s.wall_density {
                east[k] = false;
            }
            if j + 1 < ny && north[k] && rng.random::<f64>() >= s.wall_density {
                north[k] = false;
            }
        }
    }

    grid.fill_rect(-half, -half, w + half, half);
    grid.fill_rect(-half, h - half, w + half, h + half);
    grid.fill_rect(-half, -half, half, h + half);
    grid.fill_rect(w - half, -half, w + half, h + half);
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let (x0, y0) = (i as f64 * pitch, j as f64 * pitch);
            if i + 1 < nx && east[k] {
                grid.fill_rect(x0 + pitch - half, y0 - half, x0 + pitch + half, y0 + pitch + half);
            }
            if j + 1 < ny && north[k] {
                grid.fill_rect(x0 - half, y0 + pitch - half, x0 + pitch + half, y0 + pitch + half);
            }
        }
    }
}

/// Builds the field described by `scenario`. Identical scenarios yield
/// identical worlds.
pub fn generate(scenario: &Scenario) -> Result<World, WorldError> {
    scenario.validate()?;
    let (w, h) = scenario.grid_dims();
    let mut last_reason = String::new();
    for attempt in 0..scenario.max_attempts {
        let mut rng = layout_rng(scenario.seed, attempt);
        let mut grid = OccupancyGrid::empty(w, h, scenario.resolution, Pose2::default())?;
        match scenario.kind {
            ScenarioKind::CylinderGarden => cylinder_layout(scenario, &mut grid, &mut rng),
            ScenarioKind::Maze => maze_layout(scenario, &mut grid, &mut rng),
        }
        match place_targets(scenario, &grid, &mut rng) {
            Ok((start, goals)) => {
                return Ok(World {
                    grid,
                    start,
                    goals,
                    attempt,
                })
            }
            Err(reason) => last_reason = reason,
        }
    }
    Err(WorldError::GenerationFailed {
        attempts: scenario.max_attempts,
        reason: last_reason,
    })
}

fn place_targets(s: &Scenario, grid: &OccupancyGrid, rng: &mut ChaCha8Rng) -> Result<(Pose2, Vec<Pose2>), String> {
    let passable = inflate(grid, s.clearance).map_err(|e| e.to_string())?;
    let roomy = inflate(grid, s.clearance + s.goal_margin).map_err(|e| e.to_string())?;
    let frame = *grid.frame();
    let candidates: Vec<usize> = (0..frame.len()).filter(|&k| !roomy.lethal_cells()[k]).collect();
    if candidates.is_empty() {
        return Err("no free cell with the requested clearance".into());
    }
    let point = |k: usize| frame.cell_center(frame.cell_of_index(k));

    let start_idx = candidates[rng.random_range(0..candidates.len())];
    let (sx, sy) = point(start_idx);

    let mut positions: Vec<(f64, f64)> = Vec::with_capacity(s.goal_count);
    let mut prev = (sx, sy);
    const TRIES_PER_GOAL: usize = 2000;
    for g in 0..s.goal_count {
        let mut placed = false;
        for _ in 0..TRIES_PER_GOAL {
            let (x, y) = point(candidates[rng.random_range(0..candidates.len())]);
            let leg = (x - prev.0).hypot(y - prev.1);
            let far_from_prev = leg >= s.goal_min_separation && leg <= s.goal_max_separation;
            let far_from_goals = positions
                .iter()
                .all(|&(gx, gy)| (x - gx).hypot(y - gy) >= s.goal_min_separation);
            if far_from_prev && far_from_goals {
                positions.push((x, y));
                prev = (x, y);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(format!("could not place goal {g} with separation {}", s.goal_min_separation));
        }
    }

    let component = connected_component(&passable, frame.cell_of_index(start_idx));
    for (g, &(x, y)) in positions.iter().enumerate() {
        let cell = frame.world_to_cell(x, y).expect("goal inside grid");
        if !component[frame.index(cell)] {
            return Err(format!("goal {g} is not connected to the start"));
        }
    }

    // Each target faces along the straight line from the previous one.
    let mut prev = (sx, sy);
    let goals = positions
        .iter()
        .map(|&(x, y)| {
            let heading = (y - prev.1).atan2(x - prev.0);
            prev = (x, y);
            Pose2::new(x, y, heading)
        })
        .collect::<Vec<_>>();
    let start_heading = goals.first().map_or(0.0, |g| (g.y - sy).atan2(g.x - sx));
    Ok((Pose2::new(sx, sy, start_heading), goals))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_with(width: usize, height: usize, occupied: &[CellIndex]) -> OccupancyGrid {
        let mut g = OccupancyGrid::empty(width, height, 0.1, Pose2::default()).unwrap();
        for &c in occupied {
            g.set_occupied(c, true);
        }
        g
    }

    fn brute_force_lethal(grid: &OccupancyGrid, radius: f64) -> Vec<bool> {
        let f = grid.frame();
        let occ: Vec<(f64, f64)> = (0..f.len())
            .filter(|&k| grid.cells()[k])
            .map(|k| f.cell_center(f.cell_of_index(k)))
            .collect();
        (0..f.len())
            .map(|k| {
                let (x, y) = f.cell_center(f.cell_of_index(k));
                occ.iter().any(|&(ox, oy)| (x - ox).hypot(y - oy) <= radius + 1e-9)
            })
            .collect()
    }

    #[test]
    fn frame_validation() {
        assert!(GridFrame::new(0, 5, 0.1, Pose2::default()).is_err());
        assert!(GridFrame::new(5, 5, 0.0, Pose2::default()).is_err());
        let g = OccupancyGrid::from_cells(GridFrame::new(2, 2, 0.1, Pose2::default()).unwrap(), vec![false; 3]);
        assert!(g.is_err());
    }

    #[test]
    fn world_to_cell_roundtrip_with_rotated_origin() {
        let f = GridFrame::new(10, 7, 0.25, Pose2::new(1.0, -2.0, 0.7)).unwrap();
        for j in 0..7 {
            for i in 0..10 {
                let (x, y) = f.cell_center((i, j));
                assert_eq!(f.world_to_cell(x, y), Some((i, j)));
            }
        }
        assert_eq!(f.world_to_cell(-100.0, 0.0), None);
    }

    #[test]
    fn inflate_zero_radius_is_occupancy() {
        let g = grid_with(9, 9, &[(4, 4), (0, 8)]);
        let inf = inflate(&g, 0.0).unwrap();
        assert_eq!(inf.lethal_cells(), g.cells());
    }

    #[test]
    fn inflate_single_cell_disc() {
        let g = grid_with(9, 9, &[(4, 4)]);
        let inf = inflate(&g, 0.2).unwrap();
        let oracle = brute_force_lethal(&g, 0.2);
        assert_eq!(inf.lethal_cells(), &oracle[..]);
        // (4,4) +/- 2 along axes, and the (1,1) family, but not (2,1)
        assert!(inf.is_lethal((6, 4)));
        assert!(inf.is_lethal((5, 5)));
        assert!(!inf.is_lethal((6, 5)));
        assert_eq!(inf.lethal_count(), 13);
    }

    #[test]
    fn inflate_matches_brute_force_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (w, h) = (rng.random_range(1..25), rng.random_range(1..25));
            let mut g = grid_with(w, h, &[]);
            for k in 0..w * h {
                if rng.random::<f64>() < 0.05 {
                    g.set_occupied(g.frame().cell_of_index(k), true);
                }
            }
            let r = rng.random::<f64>() * 0.8;
            assert_eq!(inflate(&g, r).unwrap().lethal_cells(), &brute_force_lethal(&g, r)[..]);
        }
    }

    #[test]
    fn inflate_huge_radius_covers_everything() {
        let g = grid_with(9, 9, &[(0, 0)]);
        let inf = inflate(&g, 100.0).unwrap();
        assert_eq!(inf.lethal_count(), 81);
        let empty = grid_with(9, 9, &[]);
        assert_eq!(inflate(&empty, 100.0).unwrap().lethal_count(), 0);
        assert!(inflate(&g, -1.0).is_err());
    }

    #[test]
    fn inflation_is_monotone() {
        let g = grid_with(20, 20, &[(3, 3), (10, 15), (19, 0)]);
        let mut prev = inflate(&g, 0.0).unwrap();
        for k in 1..20 {
            let next = inflate(&g, k as f64 * 0.05).unwrap();
            for (a, b) in prev.lethal_cells().iter().zip(next.lethal_cells()) {
                assert!(!a || *b);
            }
            prev = next;
        }
    }

    #[test]
    fn collision_queries() {
        let g = grid_with(10, 10, &[(5, 5)]);
        let inf = inflate(&g, 0.0).unwrap();
        assert_eq!(in_collision(&inf, &Pose2::new(0.05, 0.05, 0.0)), 0);
        assert_eq!(in_collision(&inf, &Pose2::new(0.55, 0.55, 1.0)), 1);
        assert_eq!(in_collision(&inf, &Pose2::new(-0.01, 0.5, 0.0)), 1);
        assert_eq!(in_collision(&inf, &Pose2::new(0.5, 1.01, 0.0)), 1);
        let empty = inflate(&grid_with(10, 10, &[]), 0.3).unwrap();
        for k in 0..100 {
            let (x, y) = empty.frame().cell_center(empty.frame().cell_of_index(k));
            assert_eq!(in_collision(&empty, &Pose2::new(x, y, 0.0)), 0);
        }
    }

    #[test]
    fn map_text_roundtrip() {
        let mut g = OccupancyGrid::empty(7, 4, 0.05, Pose2::new(-1.25, 3.1, 0.3)).unwrap();
        g.set_occupied((0, 0), true);
        g.set_occupied((6, 3), true);
        g.set_occupied((2, 1), true);
        let text = g.to_map_string();
        let back = OccupancyGrid::from_map_str(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_map_string(), text);
        // top row printed first
        assert_eq!(text.lines().nth(6).unwrap(), "......#");
        assert_eq!(text.lines().nth(9).unwrap(), "#......");
    }

    #[test]
    fn map_parse_errors() {
        assert!(OccupancyGrid::from_map_str("2\n2\n0.1\n0\n0\n0\n..\n").is_err());
        assert!(OccupancyGrid::from_map_str("2\n2\n0.1\n0\n0\n0\n..\n.x\n").is_err());
        assert!(OccupancyGrid::from_map_str("2\n2\n0.1\n0\n0\n0\n..\n...\n").is_err());
        assert!(OccupancyGrid::from_map_str("2\nz\n").is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let s = Scenario::cylinder_garden(7);
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.goals.len(), 10);
        let other = generate(&Scenario::cylinder_garden(8)).unwrap();
        assert_ne!(a.grid, other.grid);
    }

    #[test]
    fn zero_density_is_all_free() {
        let mut s = Scenario::cylinder_garden(1);
        s.cylinder_count = 0;
        let w = generate(&s).unwrap();
        assert_eq!(w.grid.occupied_count(), 0);
        assert_eq!(w.attempt, 0);
    }

    fn bfs_reachable(inf: &InflatedGrid, from: CellIndex, to: CellIndex) -> bool {
        // plain 4/8-neighbour BFS written independently of connected_component
        let f = inf.frame();
        let mut dist = vec![usize::MAX; f.len()];
        let mut q = VecDeque::from([from]);
        dist[f.index(from)] = 0;
        while let Some((i, j)) = q.pop_front() {
            if (i, j) == to {
                return true;
            }
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0) || ni < 0 || nj < 0 || ni >= f.width as i64 || nj >= f.height as i64 {
                        continue;
                    }
                    let (ni, nj) = (ni as usize, nj as usize);
                    if inf.is_lethal((ni, nj)) || dist[f.index((ni, nj))] != usize::MAX {
                        continue;
                    }
                    if di != 0 && dj != 0 && inf.is_lethal((ni, j)) && inf.is_lethal((i, nj)) {
                        continue;
                    }
                    dist[f.index((ni, nj))] = 0;
                    q.push_back((ni, nj));
                }
            }
        }
        false
    }

    #[test]
    fn maze_goals_are_mutually_reachable() {
        let s = Scenario::maze(3);
        let w = generate(&s).unwrap();
        assert!(w.grid.occupied_count() > 0);
        let inf = inflate(&w.grid, s.clearance).unwrap();
        let f = *w.grid.frame();
        let mut cells: Vec<CellIndex> = w.goals.iter().map(|g| f.world_to_cell(g.x, g.y).unwrap()).collect();
        cells.push(f.world_to_cell(w.start.x, w.start.y).unwrap());
        for a in &cells {
            assert!(!inf.is_lethal(*a));
            for b in &cells {
                assert!(bfs_reachable(&inf, *a, *b));
            }
        }
        for a in 0..w.goals.len() {
            for b in a + 1..w.goals.len() {
                assert!(w.goals[a].distance(&w.goals[b]) >= s.goal_min_separation);
            }
        }
        let mut prev = w.start;
        for g in &w.goals {
            assert!(prev.distance(g) <= s.goal_max_separation + 1e-9);
            prev = *g;
        }
    }

    #[test]
    fn maze_without_walls_keeps_only_the_boundary() {
        let mut s = Scenario::maze(5);
        s.wall_density = 0.0;
        let w = generate(&s).unwrap();
        let f = w.grid.frame();
        // interior cell far from the boundary
        let c = f.world_to_cell(s.maze_corridor * 2.0, s.maze_corridor * 2.0).unwrap();
        assert!(!w.grid.is_occupied(c));
        assert!(w.grid.is_occupied((0, 0)));
    }

    #[test]
    fn impossible_density_reports_failure() {
        let mut s = Scenario::cylinder_garden(2);
        s.cylinder_count = 4000;
        s.cylinder_radius = 0.5;
        s.max_attempts = 3;
        match generate(&s) {
            Err(WorldError::GenerationFailed { attempts: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scenario_validation() {
        let mut s = Scenario::maze(1);
        s.maze_wall_thickness = 3.0;
        assert!(generate(&s).is_err());
        let mut s = Scenario::cylinder_garden(1);
        s.wall_density = 1.5;
        assert!(s.validate().is_err());
        assert!("maze".parse::<ScenarioKind>().is_ok());
        assert!("forest".parse::<ScenarioKind>().is_err());
    }
}
