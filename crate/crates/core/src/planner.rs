//! Global planning on the inflated grid and reference-path queries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::io::Write;

use thiserror::Error;

use crate::kinematics::{wrap_angle, Pose2};
use crate::world::{free_moves, CellIndex, InflatedGrid};

/// Default spacing of resampled waypoints [m].
pub const DEFAULT_SPACING: f64 = 0.1;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("start ({x:.3}, {y:.3}) is outside the map or in a lethal cell")]
    StartBlocked { x: f64, y: f64 },
    #[error("goal ({x:.3}, {y:.3}) is outside the map or in a lethal cell")]
    GoalBlocked { x: f64, y: f64 },
    #[error("no path from start to goal")]
    NoPath,
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Length of an 8-connected grid path as a count of straight and diagonal
/// moves. Two shortest paths always have identical counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct GridDistance {
    pub straight: u32,
    pub diagonal: u32,
}

impl GridDistance {
    /// Length in cells.
    pub fn cells(&self) -> f64 {
        f64::from(self.straight) + f64::from(self.diagonal) * SQRT_2
    }

    pub fn step(self, diagonal: bool) -> Self {
        if diagonal {
            Self {
                diagonal: self.diagonal + 1,
                ..self
            }
        } else {
            Self {
                straight: self.straight + 1,
                ..self
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    idx: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, then index for a fixed expansion order
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over free cells with unit straight and sqrt(2) diagonal costs.
pub fn shortest_cell_path(
    grid: &InflatedGrid,
    start: CellIndex,
    goal: CellIndex,
) -> Result<(Vec<CellIndex>, GridDistance), PlanError> {
    let frame = grid.frame();
    let n = frame.len();
    let blocked = grid.lethal_cells();
    let (s, g) = (frame.index(start), frame.index(goal));
    let mut dist = vec![f64::INFINITY; n];
    let mut moves = vec![GridDistance::default(); n];
    let mut parent = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[s] = 0.0;
    heap.push(Frontier { cost: 0.0, idx: s });
    while let Some(Frontier { cost, idx }) = heap.pop() {
        if done[idx] {
            continue;
        }
        done[idx] = true;
        if idx == g {
            break;
        }
        let cell = frame.cell_of_index(idx);
        for (next, diagonal) in free_moves(frame, blocked, cell) {
            let ni = frame.index(next);
            if done[ni] {
                continue;
            }
            let nd = cost + if diagonal { SQRT_2 } else { 1.0 };
            if nd < dist[ni] {
                dist[ni] = nd;
                moves[ni] = moves[idx].step(diagonal);
                parent[ni] = idx;
                heap.push(Frontier { cost: nd, idx: ni });
            }
        }
    }
    if !done[g] {
        return Err(PlanError::NoPath);
    }
    let mut cells = vec![goal];
    let mut cur = g;
    while cur != s {
        cur = parent[cur];
        cells.push(frame.cell_of_index(cur));
    }
    cells.reverse();
    Ok((cells, moves[g]))
}

/// Buckets waypoints on a coarse square lattice for nearest-point lookups.
#[derive(Debug, Clone, PartialEq)]
struct WaypointIndex {
    bucket: f64,
    min_x: f64,
    min_y: f64,
    nx: i64,
    ny: i64,
    /// Waypoint ids per bucket, ascending.
    cells: Vec<Vec<u32>>,
}

impl WaypointIndex {
    fn build(points: &[Pose2], bucket: f64) -> Self {
        let min_x = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let min_y = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let max_x = points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let max_y = points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let nx = ((max_x - min_x) / bucket).floor() as i64 + 1;
        let ny = ((max_y - min_y) / bucket).floor() as i64 + 1;
        let mut cells = vec![Vec::new(); (nx * ny) as usize];
        for (k, p) in points.iter().enumerate() {
            let bx = (((p.x - min_x) / bucket).floor() as i64).clamp(0, nx - 1);
            let by = (((p.y - min_y) / bucket).floor() as i64).clamp(0, ny - 1);
            cells[(by * nx + bx) as usize].push(k as u32);
        }
        Self {
            bucket,
            min_x,
            min_y,
            nx,
            ny,
            cells,
        }
    }

    /// Nearest waypoint to `(x, y)`; ties go to the larger index.
    fn nearest(&self, points: &[Pose2], x: f64, y: f64) -> (usize, f64) {
        let fx = ((x - self.min_x) / self.bucket).floor();
        let fy = ((y - self.min_y) / self.bucket).floor();
        // keep lattice arithmetic in range for far-away or non-finite queries
        let lim = 1e12;
        let bx = fx.clamp(-lim, lim) as i64;
        let by = fy.clamp(-lim, lim) as i64;
        let max_ring = [bx, self.nx - 1 - bx, by, self.ny - 1 - by]
            .iter()
            .map(|v| v.abs())
            .max()
            .unwrap_or(0);

        let mut best_idx = usize::MAX;
        let mut best_d2 = f64::INFINITY;
        let visit = |cx: i64, cy: i64, best_idx: &mut usize, best_d2: &mut f64| {
            for &k in &self.cells[(cy * self.nx + cx) as usize] {
                let p = &points[k as usize];
                let (dx, dy) = (p.x - x, p.y - y);
                let d2 = dx * dx + dy * dy;
                let k = k as usize;
                if d2 < *best_d2 || (d2 == *best_d2 && k > *best_idx) {
                    *best_d2 = d2;
                    *best_idx = k;
                }
            }
        };

        // Brute force when the query is far outside the indexed area.
        if max_ring > self.nx + self.ny + 8 {
            for cy in 0..self.ny {
                for cx in 0..self.nx {
                    visit(cx, cy, &mut best_idx, &mut best_d2);
                }
            }
            return (best_idx, best_d2.sqrt());
        }

        for r in 0..=max_ring {
            let x_lo = (bx - r).max(0);
            let x_hi = (bx + r).min(self.nx - 1);
            for cy in [by - r, by + r] {
                if cy < 0 || cy >= self.ny || x_lo > x_hi {
                    continue;
                }
                for cx in x_lo..=x_hi {
                    visit(cx, cy, &mut best_idx, &mut best_d2);
                }
                if r == 0 {
                    break;
                }
            }
            if r > 0 {
                let y_lo = (by - r + 1).max(0);
                let y_hi = (by + r - 1).min(self.ny - 1);
                for cx in [bx - r, bx + r] {
                    if cx < 0 || cx >= self.nx || y_lo > y_hi {
                        continue;
                    }
                    for cy in y_lo..=y_hi {
                        visit(cx, cy, &mut best_idx, &mut best_d2);
                    }
                }
            }
            // everything beyond ring r is at least r buckets away
            if best_d2.sqrt() < r as f64 * self.bucket {
                break;
            }
        }
        (best_idx, best_d2.sqrt())
    }
}

/// Raw tracking errors of a pose against a reference path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathErrors {
    /// Distance to the nearest waypoint [m].
    pub dist: f64,
    /// Absolute wrapped heading difference to that waypoint [rad].
    pub angle: f64,
    /// Arc length of that waypoint [m].
    pub progress: f64,
    pub index: usize,
}

/// Ordered waypoints with orientations and cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    waypoints: Vec<Pose2>,
    arc: Vec<f64>,
    index: WaypointIndex,
}

impl ReferencePath {
    pub fn new(waypoints: Vec<Pose2>) -> Result<Self, PlanError> {
        if waypoints.is_empty() {
            return Err(PlanError::InvalidPath("no waypoints".into()));
        }
        if waypoints.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.theta.is_finite())) {
            return Err(PlanError::InvalidPath("non-finite waypoint".into()));
        }
        let mut arc = Vec::with_capacity(waypoints.len());
        arc.push(0.0);
        for w in waypoints.windows(2) {
            let s = arc.last().unwrap() + w[0].distance(&w[1]);
            if s <= *arc.last().unwrap() {
                return Err(PlanError::InvalidPath("arc length must strictly increase".into()));
            }
            arc.push(s);
        }
        let waypoints: Vec<Pose2> = waypoints
            .into_iter()
            .map(|p| Pose2 {
                theta: wrap_angle(p.theta),
                ..p
            })
            .collect();
        let index = WaypointIndex::build(&waypoints, 0.5);
        Ok(Self { waypoints, arc, index })
    }

    pub fn waypoints(&self) -> &[Pose2] {
        &self.waypoints
    }

    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    pub fn last(&self) -> &Pose2 {
        self.waypoints.last().unwrap()
    }

    pub fn query_errors(&self, p: &Pose2) -> PathErrors {
        let (index, dist) = self.index.nearest(&self.waypoints, p.x, p.y);
        let wp = &self.waypoints[index];
        PathErrors {
            dist,
            angle: wrap_angle(p.theta - wp.theta).abs(),
            progress: self.arc[index],
            index,
        }
    }

    /// First waypoint at least `ahead` metres of arc past the waypoint
    /// nearest to `p`; the final waypoint when the path ends sooner.
    pub fn lookahead_point(&self, p: &Pose2, ahead: f64) -> Pose2 {
        let s = self.query_errors(p).progress + ahead;
        let i = self.arc.partition_point(|&a| a < s).min(self.waypoints.len() - 1);
        self.waypoints[i]
    }

    /// CSV with header `x,y,theta,s`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PlanError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "theta", "s"])?;
        for (p, s) in self.waypoints.iter().zip(&self.arc) {
            w.write_record([p.x.to_string(), p.y.to_string(), p.theta.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Query by linear scan; kept for cross-checking the bucketed lookup.
pub fn query_errors_linear(path: &ReferencePath, p: &Pose2) -> PathErrors {
    let mut best = 0;
    let mut best_d2 = f64::INFINITY;
    for (k, w) in path.waypoints.iter().enumerate() {
        let d2 = (w.x - p.x).powi(2) + (w.y - p.y).powi(2);
        if d2 <= best_d2 {
            best_d2 = d2;
            best = k;
        }
    }
    let wp = &path.waypoints[best];
    PathErrors {
        dist: best_d2.sqrt(),
        angle: wrap_angle(p.theta - wp.theta).abs(),
        progress: path.arc[best],
        index: best,
    }
}

/// Places points every `spacing` meters along a polyline, always keeping the
/// final vertex.
fn resample(points: &[(f64, f64)], spacing: f64) -> Vec<(f64, f64)> {
    let total: f64 = points.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum();
    let mut out = vec![points[0]];
    if total <= 1e-12 {
        return out;
    }
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut k = 1;
    loop {
        let s = k as f64 * spacing;
        if s >= total - 1e-9 {
            break;
        }
        loop {
            let (a, b) = (points[seg], points[seg + 1]);
            let len = (b.0 - a.0).hypot(b.1 - a.1);
            if s <= seg_start + len || seg + 2 == points.len() {
                let t = if len > 0.0 { (s - seg_start) / len } else { 0.0 };
                out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
                break;
            }
            seg_start += len;
            seg += 1;
        }
        k += 1;
    }
    out.push(*points.last().unwrap());
    out
}

/// Shortest grid path from `start` to `goal`, resampled to `spacing` with
/// tangent headings and the goal heading at the end.
pub fn plan(grid: &InflatedGrid, start: &Pose2, goal: &Pose2, spacing: f64) -> Result<ReferencePath, PlanError> {
    let frame = grid.frame();
    let s_cell = frame
        .world_to_cell(start.x, start.y)
        .filter(|c| !grid.is_lethal(*c))
        .ok_or(PlanError::StartBlocked { x: start.x, y: start.y })?;
    let g_cell = frame
        .world_to_cell(goal.x, goal.y)
        .filter(|c| !grid.is_lethal(*c))
        .ok_or(PlanError::GoalBlocked { x: goal.x, y: goal.y })?;
    if start.x == goal.x && start.y == goal.y {
        return ReferencePath::new(vec![*goal]);
    }
    let (cells, _) = shortest_cell_path(grid, s_cell, g_cell)?;

    let mut poly: Vec<(f64, f64)> = Vec::with_capacity(cells.len() + 2);
    poly.push((start.x, start.y));
    if cells.len() > 2 {
        poly.extend(cells[1..cells.len() - 1].iter().map(|&c| frame.cell_center(c)));
    }
    poly.push((goal.x, goal.y));
    poly.dedup();

    let pts = resample(&poly, spacing);
    let n = pts.len();
    let waypoints: Vec<Pose2> = (0..n)
        .map(|i| {
            let theta = if i + 1 == n {
                goal.theta
            } else {
                let (a, b) = (pts[i.saturating_sub(1)], pts[i + 1]);
                (b.1 - a.1).atan2(b.0 - a.0)
            };
            Pose2::new(pts[i].0, pts[i].1, theta)
        })
        .collect();
    ReferencePath::new(waypoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{inflate, OccupancyGrid};

    fn centered_grid(w: usize, h: usize) -> OccupancyGrid {
        // cell (0, 0) centered on the world origin
        OccupancyGrid::empty(w, h, 0.1, Pose2::new(-0.05, -0.05, 0.0)).unwrap()
    }

    /// Label-correcting relaxation until nothing changes, tracking move
    /// counts; independent of the heap-based search.
    fn relaxation_oracle(grid: &InflatedGrid, start: CellIndex, goal: CellIndex) -> Option<GridDistance> {
        let f = grid.frame();
        let mut best: Vec<Option<GridDistance>> = vec![None; f.len()];
        best[f.index(start)] = Some(GridDistance::default());
        let better = |a: GridDistance, b: Option<GridDistance>| match b {
            None => true,
            Some(b) => a.cells() < b.cells() - 1e-9,
        };
        loop {
            let mut changed = false;
            for j in 0..f.height {
                for i in 0..f.width {
                    let Some(d) = best[f.index((i, j))] else { continue };
                    for di in -1i64..=1 {
                        for dj in -1i64..=1 {
                            if di == 0 && dj == 0 {
                                continue;
                            }
                            let (ni, nj) = (i as i64 + di, j as i64 + dj);
                            if ni < 0 || nj < 0 || ni >= f.width as i64 || nj >= f.height as i64 {
                                continue;
                            }
                            let (ni, nj) = (ni as usize, nj as usize);
                            if grid.is_lethal((ni, nj)) {
                                continue;
                            }
                            let diag = di != 0 && dj != 0;
                            if diag && grid.is_lethal((ni, j)) && grid.is_lethal((i, nj)) {
                                continue;
                            }
                            let cand = d.step(diag);
                            if better(cand, best[f.index((ni, nj))]) {
                                best[f.index((ni, nj))] = Some(cand);
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        best[f.index(goal)]
    }

    #[test]
    fn straight_path_on_empty_grid() {
        let inf = inflate(&centered_grid(80, 20), 0.0).unwrap();
        let path = plan(&inf, &Pose2::new(0.0, 0.0, 0.0), &Pose2::new(5.0, 0.0, 0.0), DEFAULT_SPACING).unwrap();
        assert!((path.length() - 5.0).abs() < 1e-9);
        assert!(path.waypoints().iter().all(|p| p.theta == 0.0 && p.y.abs() < 1e-12));
        assert_eq!(path.len(), 51);
    }

    #[test]
    fn start_equals_goal() {
        let inf = inflate(&centered_grid(10, 10), 0.0).unwrap();
        let g = Pose2::new(0.3, 0.4, 1.0);
        let path = plan(&inf, &g, &g, DEFAULT_SPACING).unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(path.length(), 0.0);
        assert_eq!(path.waypoints()[0], g);
    }

    #[test]
    fn wall_with_gap() {
        let mut g = centered_grid(11, 11);
        for j in 0..11 {
            if j != 8 {
                g.set_occupied((5, j), true);
            }
        }
        let inf = inflate(&g, 0.0).unwrap();
        let (cells, d) = shortest_cell_path(&inf, (1, 2), (9, 2)).unwrap();
        assert!(cells.contains(&(5, 8)));
        assert_eq!(Some(d), relaxation_oracle(&inf, (1, 2), (9, 2)));
        for c in &cells {
            assert!(!inf.is_lethal(*c));
        }
        let path = plan(&inf, &Pose2::new(0.1, 0.2, 0.0), &Pose2::new(0.9, 0.2, 0.0), DEFAULT_SPACING).unwrap();
        for w in path.waypoints() {
            assert!(inf.is_free_point(w.x, w.y));
        }
    }

    #[test]
    fn blocked_and_unreachable() {
        let mut g = centered_grid(10, 10);
        for j in 0..10 {
            g.set_occupied((5, j), true);
        }
        let inf = inflate(&g, 0.0).unwrap();
        assert!(matches!(
            plan(&inf, &Pose2::new(0.0, 0.0, 0.0), &Pose2::new(0.8, 0.0, 0.0), 0.1),
            Err(PlanError::NoPath)
        ));
        assert!(matches!(
            plan(&inf, &Pose2::new(0.5, 0.0, 0.0), &Pose2::new(0.8, 0.0, 0.0), 0.1),
            Err(PlanError::StartBlocked { .. })
        ));
        assert!(matches!(
            plan(&inf, &Pose2::new(0.0, 0.0, 0.0), &Pose2::new(9.0, 0.0, 0.0), 0.1),
            Err(PlanError::GoalBlocked { .. })
        ));
    }

    #[test]
    fn no_corner_cutting_between_diagonal_obstacles() {
        let mut g = centered_grid(3, 3);
        g.set_occupied((1, 0), true);
        g.set_occupied((0, 1), true);
        g.set_occupied((2, 1), true);
        g.set_occupied((1, 2), true);
        let inf = inflate(&g, 0.0).unwrap();
        assert!(matches!(shortest_cell_path(&inf, (0, 0), (1, 1)), Err(PlanError::NoPath)));
    }

    #[test]
    fn resampled_path_invariants() {
        let mut g = centered_grid(40, 40);
        for j in 5..35 {
            g.set_occupied((20, j), true);
        }
        let inf = inflate(&g, 0.2).unwrap();
        let goal = Pose2::new(3.5, 2.0, -1.0);
        let path = plan(&inf, &Pose2::new(0.5, 2.0, 0.0), &goal, DEFAULT_SPACING).unwrap();
        let diag = 0.1 * SQRT_2;
        for w in path.waypoints().windows(2) {
            assert!(w[0].distance(&w[1]) <= diag + 1e-9);
        }
        for s in path.arc_lengths().windows(2) {
            assert!(s[1] > s[0]);
        }
        assert_eq!(*path.last(), goal);
        let (_, d) = shortest_cell_path(
            &inf,
            inf.frame().world_to_cell(0.5, 2.0).unwrap(),
            inf.frame().world_to_cell(3.5, 2.0).unwrap(),
        )
        .unwrap();
        assert!((path.length() - d.cells() * 0.1).abs() <= 0.1 + 1e-9);
    }

    fn straight_path() -> ReferencePath {
        ReferencePath::new((0..=50).map(|k| Pose2::new(k as f64 * 0.1, 0.0, 0.0)).collect()).unwrap()
    }

    #[test]
    fn query_examples() {
        let path = straight_path();
        let e = path.query_errors(&Pose2::new(2.0, 0.0, 0.0));
        assert_eq!((e.dist, e.angle), (0.0, 0.0));
        assert!((e.progress - 2.0).abs() < 1e-12);

        let e = path.query_errors(&Pose2::new(3.0, 1.0, 0.0));
        assert!((e.dist - 1.0).abs() < 1e-12);
        assert_eq!(e.angle, 0.0);

        let e = path.query_errors(&Pose2::new(0.05, 0.0, 0.0));
        assert_eq!(e.index, 1);

        let e = path.query_errors(&Pose2::new(1.0, 0.0, -3.0));
        assert!((e.angle - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lookahead_walks_down_the_arc() {
        let path = straight_path();
        let p = path.lookahead_point(&Pose2::new(1.02, 0.4, 0.0), 2.0);
        assert!((p.x - 3.0).abs() < 1e-9);
        assert_eq!(path.lookahead_point(&Pose2::new(4.0, 0.0, 0.0), 2.0), *path.last());
        assert_eq!(path.lookahead_point(&Pose2::new(2.0, 0.0, 0.0), 0.0).x, 2.0);
    }

    #[test]
    fn bucketed_query_matches_linear_scan() {
        let inf = inflate(&centered_grid(120, 120), 0.0).unwrap();
        let path = plan(&inf, &Pose2::new(0.3, 0.2, 0.0), &Pose2::new(9.7, 6.1, 0.5), DEFAULT_SPACING).unwrap();
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..2000 {
            let p = Pose2::new(next() * 30.0 - 10.0, next() * 30.0 - 10.0, next() * 6.0 - 3.0);
            let a = path.query_errors(&p);
            let b = query_errors_linear(&path, &p);
            assert_eq!(a, b);
        }
        let far = Pose2::new(1e6, -1e6, 0.0);
        assert_eq!(path.query_errors(&far), query_errors_linear(&path, &far));
    }

    #[test]
    fn csv_dump() {
        let mut buf = Vec::new();
        straight_path().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y,theta,s"));
        assert_eq!(lines.next(), Some("0,0,0,0"));
        assert_eq!(text.lines().count(), 52);
    }

    #[test]
    fn invalid_paths() {
        assert!(ReferencePath::new(vec![]).is_err());
        assert!(ReferencePath::new(vec![Pose2::default(), Pose2::default()]).is_err());
    }
}
