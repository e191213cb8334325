//! Segment/rectangle visibility predicates, the visibility graph over
//! margin-inflated obstacles, shortest paths and waypoint following.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{Rect, Vec2};

/// Shrink applied to blocking rectangles so that segments running along an
/// obstacle boundary, or ending on its corners, stay visible.
const BOUNDARY_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSeg {
    pub p: Vec2,
    pub q: Vec2,
}

impl LineSeg {
    pub fn new(p: Vec2, q: Vec2) -> Self {
        LineSeg { p, q }
    }

    pub fn length(&self) -> f64 {
        self.p.distance(self.q)
    }
}

/// Coefficients `(a, b)` of the line `⟨a, x⟩ = b` through the segment.
pub fn line_coefficients(s: &LineSeg) -> Result<(Vec2, f64)> {
    let (p, q) = (s.p, s.q);
    if p == q {
        return Err(Error::InvalidArgument(format!("degenerate segment at ({}, {})", p.x, p.y)));
    }
    let a = Vec2::new(-(p.y - q.y), p.x - q.x);
    let b = p.y * (p.x - q.x) - p.x * (p.y - q.y);
    Ok((a, b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Negative,
    On,
    Positive,
}

/// Which side of `⟨a, x⟩ = b` the point lies on. Points within 1e-12 (in
/// distance) of the line count as on it.
pub fn side_of_line(a: Vec2, b: f64, x: Vec2) -> Side {
    let v = a.dot(x) - b;
    if v.abs() <= 1e-12 * a.norm() {
        Side::On
    } else if v < 0.0 {
        Side::Negative
    } else {
        Side::Positive
    }
}

pub fn circumscribed_rect(s: &LineSeg) -> Rect {
    Rect::from_corners(s.p, s.q)
}

/// Closed axis-aligned rectangles share at least one point.
pub fn rects_overlap(a: &Rect, b: &Rect) -> bool {
    !(a.max.x < b.min.x || b.max.x < a.min.x || a.max.y < b.min.y || b.max.y < a.min.y)
}

/// The segment meets the closed rectangle.
pub fn segment_intersects_rect(s: &LineSeg, m: &Rect) -> bool {
    if !rects_overlap(&circumscribed_rect(s), m) {
        return false;
    }
    let Ok((a, b)) = line_coefficients(s) else {
        return m.contains(s.p);
    };
    let sides = m.corners().map(|c| side_of_line(a, b, c));
    let all = |side| sides.iter().all(|&x| x == side);
    !(all(Side::Positive) || all(Side::Negative))
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct QueueEntry {
    dist: f64,
    v: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.v.cmp(&self.v))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Undirected visibility graph with a precomputed shortest-path tree rooted
/// at the goal anchors. The first `n_anchors` vertices are goal anchors.
#[derive(Clone, Debug)]
pub struct VisibilityGraph {
    pub vertices: Vec<Vec2>,
    pub n_anchors: usize,
    pub adjacency: Vec<Vec<(usize, f64)>>,
    pub obstacles: Vec<Rect>,
    pub inflated: Vec<Rect>,
    pub goals: Vec<Rect>,
    pub domain: Rect,
    /// Distance to the nearest goal anchor along the graph.
    pub dist: Vec<f64>,
    /// Next vertex towards the goal (`None` at anchors, at vertices that head
    /// straight into a goal, and at unreachable vertices).
    pub next: Vec<Option<usize>>,
    /// Final point for vertices whose route is a straight leg into a goal core.
    pub exit_point: Vec<Option<Vec2>>,
    /// Goal cores, see [`goal_core`].
    pub cores: Vec<Rect>,
}

/// An exit inset by `min(margin, size/4)` on every side; routes end inside it.
pub fn goal_core(goal: &Rect, margin: f64) -> Rect {
    let ix = margin.min(goal.width() / 4.0);
    let iy = margin.min(goal.height() / 4.0);
    Rect::new(goal.min.x + ix, goal.min.y + iy, goal.max.x - ix, goal.max.y - iy)
}

/// Goal anchors of an exit: the corners of its core and its centre.
pub fn goal_anchors(goal: &Rect, margin: f64) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = goal_core(goal, margin).corners().to_vec();
    out.push(goal.center());
    out
}

impl VisibilityGraph {
    /// True when the open segment `a → b` avoids every inflated obstacle. An
    /// endpoint inside an inflated obstacle is checked against the original
    /// obstacle instead.
    pub fn visible(&self, a: Vec2, b: Vec2) -> bool {
        let seg = LineSeg::new(a, b);
        for (orig, infl) in self.obstacles.iter().zip(&self.inflated) {
            let rect = if infl.contains_strict(a) || infl.contains_strict(b) { orig } else { infl };
            let shrunk = rect.inflate(-BOUNDARY_SLACK);
            if shrunk.min.x > shrunk.max.x || shrunk.min.y > shrunk.max.y {
                continue;
            }
            if segment_intersects_rect(&seg, &shrunk) {
                return false;
            }
        }
        true
    }

    /// True when the segment avoids every original obstacle interior.
    pub fn clear_of_obstacles(&self, a: Vec2, b: Vec2) -> bool {
        let seg = LineSeg::new(a, b);
        self.obstacles
            .iter()
            .all(|o| !segment_intersects_rect(&seg, &o.inflate(-BOUNDARY_SLACK)))
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn in_goal(&self, p: Vec2) -> bool {
        self.goals.iter().any(|g| g.contains(p))
    }

    /// Nearest visible point of any goal core.
    fn direct_leg(&self, from: Vec2) -> Option<(Vec2, f64)> {
        let mut best: Option<(Vec2, f64)> = None;
        for core in &self.cores {
            let p = core.clamp_point(from);
            let d = from.distance(p);
            if best.is_some_and(|(_, b)| d >= b) {
                continue;
            }
            if self.visible(from, p) {
                best = Some((p, d));
            }
        }
        best
    }

    /// Best first vertex from `start` and the total route length through it.
    fn best_entry(&self, start: Vec2) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (v, &pos) in self.vertices.iter().enumerate() {
            if !self.dist[v].is_finite() {
                continue;
            }
            let total = start.distance(pos) + self.dist[v];
            if best.is_some_and(|(_, d)| total >= d) {
                continue;
            }
            if self.visible(start, pos) {
                best = Some((v, total));
            }
        }
        best
    }

    /// Shortest obstacle-avoiding polyline from `start` into a goal core.
    pub fn shortest_polyline(&self, start: Vec2) -> Result<Vec<Vec2>> {
        if self.in_goal(start) {
            return Ok(vec![start]);
        }
        let entry = self.best_entry(start);
        let direct = self.direct_leg(start);
        match (entry, direct) {
            (_, Some((p, d))) if entry.is_none_or(|(_, e)| d <= e) => return Ok(vec![start, p]),
            (None, _) => return Err(Error::Unreachable { x: start.x, y: start.y }),
            _ => {}
        }
        let (mut v, _) = entry.expect("checked above");
        let mut line = vec![start, self.vertices[v]];
        while let Some(n) = self.next[v] {
            v = n;
            line.push(self.vertices[v]);
        }
        if let Some(p) = self.exit_point[v] {
            line.push(p);
        }
        Ok(line)
    }

    /// `{"vertices": [[x, y], …], "edges": [[u, v, w], …]}` with `u < v`.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump {
            vertices: Vec<[f64; 2]>,
            edges: Vec<(usize, usize, f64)>,
        }
        let dump = Dump {
            vertices: self.vertices.iter().map(|v| [v.x, v.y]).collect(),
            edges: self
                .adjacency
                .iter()
                .enumerate()
                .flat_map(|(u, adj)| adj.iter().filter(move |(v, _)| *v > u).map(move |&(v, w)| (u, v, w)))
                .collect(),
        };
        serde_json::to_string(&dump).expect("graph serialises")
    }
}

/// Builds the graph over obstacles inflated by `margin` (corners clipped to
/// the domain) with anchors in every goal rectangle, and runs Dijkstra once
/// from all anchors. Vertices that see a goal core directly are seeded with
/// the length of that straight leg.
pub fn build_graph(domain: Rect, obstacles: &[Rect], margin: f64, goals: &[Rect]) -> Result<VisibilityGraph> {
    if !(margin >= 0.0) {
        return Err(Error::InvalidArgument(format!("margin must be >= 0, got {margin}")));
    }
    if goals.is_empty() {
        return Err(Error::EmptyGoal);
    }
    // Blockers stay unclipped so an obstacle touching the domain edge leaves
    // no sliver to pass through; only the vertices are clipped.
    let inflated: Vec<Rect> = obstacles.iter().map(|o| o.inflate(margin)).collect();
    let mut vertices: Vec<Vec2> = goals.iter().flat_map(|g| goal_anchors(g, margin)).collect();
    let n_anchors = vertices.len();
    for r in &inflated {
        for c in r.corners().map(|c| domain.clamp_point(c)) {
            let blocked = obstacles.iter().any(|o| o.contains_strict(c));
            if !blocked && !vertices.contains(&c) {
                vertices.push(c);
            }
        }
    }
    let mut graph = VisibilityGraph {
        adjacency: vec![Vec::new(); vertices.len()],
        dist: vec![f64::INFINITY; vertices.len()],
        next: vec![None; vertices.len()],
        exit_point: vec![None; vertices.len()],
        cores: goals.iter().map(|g| goal_core(g, margin)).collect(),
        vertices,
        n_anchors,
        obstacles: obstacles.to_vec(),
        inflated,
        goals: goals.to_vec(),
        domain,
    };
    let n = graph.vertices.len();
    for u in 0..n {
        for v in u + 1..n {
            let (a, b) = (graph.vertices[u], graph.vertices[v]);
            if graph.visible(a, b) {
                let w = a.distance(b);
                graph.adjacency[u].push((v, w));
                graph.adjacency[v].push((u, w));
            }
        }
    }
    let mut heap = BinaryHeap::new();
    for a in 0..n_anchors {
        graph.dist[a] = 0.0;
        heap.push(QueueEntry { dist: 0.0, v: a });
    }
    for v in n_anchors..n {
        if let Some((p, d)) = graph.direct_leg(graph.vertices[v]) {
            graph.dist[v] = d;
            graph.exit_point[v] = Some(p);
            heap.push(QueueEntry { dist: d, v });
        }
    }
    let mut done = vec![false; n];
    while let Some(QueueEntry { dist, v }) = heap.pop() {
        if done[v] {
            continue;
        }
        done[v] = true;
        for &(w, len) in &graph.adjacency[v] {
            let nd = dist + len;
            if nd < graph.dist[w] {
                graph.dist[w] = nd;
                graph.next[w] = Some(v);
                graph.exit_point[w] = None;
                heap.push(QueueEntry { dist: nd, v: w });
            }
        }
    }
    Ok(graph)
}

pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Waypoints at arc-length spacing `dr` along a polyline, ending at its last
/// vertex. A polyline vertex is kept wherever the chord between neighbouring
/// samples would cut through an obstacle.
pub fn resample(polyline: &[Vec2], dr: f64, graph: &VisibilityGraph) -> Vec<Vec2> {
    assert!(dr > 0.0);
    let Some(&first) = polyline.first() else {
        return Vec::new();
    };
    let mut out = vec![first];
    let mut since_last = 0.0;
    for w in polyline.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = a.distance(b);
        if len == 0.0 {
            continue;
        }
        let dir = (b - a) / len;
        let mut s = dr - since_last;
        while s < len - 1e-12 {
            let p = a + dir * s;
            let prev = *out.last().expect("non-empty");
            if !graph.clear_of_obstacles(prev, p) {
                out.push(a);
            }
            out.push(p);
            s += dr;
        }
        since_last = len - (s - dr);
        let prev = *out.last().expect("non-empty");
        if !graph.clear_of_obstacles(prev, b) {
            out.push(a);
        }
    }
    let last = *polyline.last().expect("non-empty");
    if *out.last().expect("non-empty") != last {
        out.push(last);
    }
    out
}

/// Sampled route with its unsampled length.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub waypoints: Vec<Vec2>,
    pub length: f64,
}

/// Shortest path from `start`, resampled at spacing `dr`.
pub fn shortest_path(graph: &VisibilityGraph, start: Vec2, dr: f64) -> Result<Path> {
    let line = graph.shortest_polyline(start)?;
    Ok(Path {
        length: polyline_length(&line),
        waypoints: resample(&line, dr, graph),
    })
}

/// Normalised geometric weights `w_k ∝ 2^{-k}`, `k = 1..n`.
pub fn geometric_weights(n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|k| 0.5f64.powi(k as i32)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / s).collect()
}

/// Per-particle tracker along a path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathFollower {
    pub path: Path,
    pub index: usize,
    pub weights: Vec<f64>,
    pub last_direction: Vec2,
}

impl PathFollower {
    pub fn new(path: Path, lookahead: usize) -> Self {
        PathFollower {
            path,
            index: 0,
            weights: geometric_weights(lookahead.max(1)),
            last_direction: Vec2::ZERO,
        }
    }

    fn point(&self, k: usize) -> Vec2 {
        let last = self.path.waypoints.len() - 1;
        self.path.waypoints[k.min(last)]
    }

    /// Unit heading from `x` towards the weighted average of the next waypoints.
    pub fn waypoint_direction(&mut self, x: Vec2) -> Vec2 {
        if self.path.waypoints.is_empty() {
            return self.last_direction;
        }
        let n = self.weights.len();
        let last = self.path.waypoints.len() - 1;
        while self.index < last && (x - self.point(self.index)).dot(x - self.point(self.index + n)) < 0.0 {
            self.index += 1;
        }
        let target = self
            .weights
            .iter()
            .enumerate()
            .fold(Vec2::ZERO, |acc, (k, &w)| acc + self.point(self.index + k + 1) * w);
        if let Some(d) = (target - x).normalized() {
            self.last_direction = d;
        }
        self.last_direction
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: (f64, f64), b: (f64, f64)) -> LineSeg {
        LineSeg::new(Vec2::new(a.0, a.1), Vec2::new(b.0, b.1))
    }

    #[test]
    fn line_examples() {
        let (a, b) = line_coefficients(&seg((0.0, 0.0), (1.0, 0.0))).unwrap();
        assert_eq!(a, Vec2::new(0.0, -1.0));
        assert_eq!(b, 0.0);
        assert!(line_coefficients(&seg((1.0, 1.0), (1.0, 1.0))).is_err());
        let (a2, b2) = line_coefficients(&seg((1.0, 0.0), (0.0, 0.0))).unwrap();
        assert_eq!((a2, b2), (-a, -b));
    }

    #[test]
    fn side_examples() {
        let (a, b) = line_coefficients(&seg((0.0, 0.0), (1.0, 0.0))).unwrap();
        assert_eq!(side_of_line(a, b, Vec2::new(0.5, 0.0)), Side::On);
        let up = side_of_line(a, b, Vec2::new(0.0, 1.0));
        let down = side_of_line(a, b, Vec2::new(0.0, -1.0));
        assert_ne!(up, Side::On);
        assert_ne!(up, down);
        assert_eq!(side_of_line(a * 7.0, b * 7.0, Vec2::new(0.0, 1.0)), up);
    }

    #[test]
    fn rect_examples() {
        assert_eq!(circumscribed_rect(&seg((1.0, 4.0), (3.0, 1.0))), Rect::new(1.0, 1.0, 3.0, 4.0));
        assert_eq!(circumscribed_rect(&seg((0.0, 2.0), (3.0, 2.0))).height(), 0.0);
        let a = Rect::new(0.0, 0.0, 1.0, 1.0);
        assert!(!rects_overlap(&a, &Rect::new(2.0, 2.0, 3.0, 3.0)));
        assert!(rects_overlap(&a, &a));
        assert!(rects_overlap(&a, &Rect::new(1.0, 0.0, 2.0, 1.0)));
    }

    #[test]
    fn intersection_examples() {
        assert!(segment_intersects_rect(&seg((0.0, 0.0), (10.0, 10.0)), &Rect::new(4.0, 4.0, 6.0, 6.0)));
        assert!(!segment_intersects_rect(&seg((0.0, 0.0), (10.0, 0.0)), &Rect::new(2.0, 1.0, 4.0, 3.0)));
        // boxes overlap, rectangle entirely below the line
        assert!(!segment_intersects_rect(&seg((1.0, 4.0), (3.0, 1.0)), &Rect::new(0.1, 0.5, 2.0, 2.0)));
    }

    fn one_box() -> (Rect, Vec<Rect>, Vec<Rect>) {
        (
            Rect::new(0.0, 0.0, 20.0, 10.0),
            vec![Rect::new(8.0, 2.0, 12.0, 8.0)],
            vec![Rect::new(19.0, 4.0, 20.0, 6.0)],
        )
    }

    #[test]
    fn empty_scene_graph_is_anchors() {
        let g = build_graph(Rect::new(0.0, 0.0, 10.0, 10.0), &[], 0.5, &[Rect::new(9.0, 0.0, 10.0, 10.0)]).unwrap();
        assert_eq!(g.vertices.len(), g.n_anchors);
        let p = shortest_path(&g, Vec2::new(1.0, 5.0), 2.0).unwrap();
        assert_eq!(p.waypoints[0], Vec2::new(1.0, 5.0));
        // straight into the exit core, never longer than the leg to any anchor
        assert!((p.length - 8.25).abs() < 1e-12);
        assert!(g.vertices.iter().all(|a| a.distance(Vec2::new(1.0, 5.0)) >= p.length));
    }

    #[test]
    fn path_around_box_and_sampling() {
        let (domain, obs, goals) = one_box();
        let g = build_graph(domain, &obs, 0.0, &goals).unwrap();
        assert!(g.vertices.len() <= 4 + g.n_anchors);
        let start = Vec2::new(2.0, 5.0);
        let p = shortest_path(&g, start, 2.0).unwrap();
        assert!(p.length >= start.distance(Vec2::new(19.5, 5.0)));
        for w in p.waypoints.windows(2) {
            assert!(g.clear_of_obstacles(w[0], w[1]));
        }
        let n = p.waypoints.len();
        for w in p.waypoints[..n - 1].windows(2) {
            assert!(w[0].distance(w[1]) <= 2.0 + 1e-9);
        }
    }

    #[test]
    fn sealed_corridor_is_unreachable() {
        let domain = Rect::new(0.0, 0.0, 20.0, 10.0);
        let obs = vec![Rect::new(9.0, 0.0, 11.0, 4.5), Rect::new(9.0, 5.5, 11.0, 10.0)];
        let goals = vec![Rect::new(19.0, 4.0, 20.0, 6.0)];
        let open = build_graph(domain, &obs, 0.2, &goals).unwrap();
        assert!(shortest_path(&open, Vec2::new(2.0, 5.0), 2.0).is_ok());
        let sealed = build_graph(domain, &obs, 1.0, &goals).unwrap();
        assert!(matches!(
            shortest_path(&sealed, Vec2::new(2.0, 5.0), 2.0),
            Err(Error::Unreachable { .. })
        ));
    }

    #[test]
    fn follower_examples() {
        let pts: Vec<Vec2> = (0..6).map(|i| Vec2::new(2.0 * i as f64, 0.0)).collect();
        let mut f = PathFollower::new(Path { waypoints: pts.clone(), length: 10.0 }, 4);
        let d = f.waypoint_direction(Vec2::new(1.0, 0.0));
        assert!((d - Vec2::new(1.0, 0.0)).norm() < 1e-12);

        let mut single = PathFollower::new(Path { waypoints: vec![Vec2::new(3.0, 4.0)], length: 0.0 }, 4);
        assert!((single.waypoint_direction(Vec2::ZERO) - Vec2::new(0.6, 0.8)).norm() < 1e-12);

        // three waypoints, lookahead 1: x between p0 and p1 advances once
        let three = vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(2.0, 2.0)];
        let mut f = PathFollower::new(Path { waypoints: three, length: 4.0 }, 1);
        let x = Vec2::new(1.5, 0.1);
        // ⟨x - p0, x - p1⟩ = 1.5·(-0.5) + 0.01 < 0
        f.waypoint_direction(x);
        assert_eq!(f.index, 1);
    }

    #[test]
    fn weights_sum_to_one() {
        let w = geometric_weights(4);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(w.windows(2).all(|p| p[0] > p[1]));
    }
}
