//! Rectangular domains, their inhomogeneities, and the cell grid laid over them.
//!
//! Cells are addressed 0-based as `(i, j)` with `i` along x and `j` along y,
//! counted from the bottom-left corner. The flat index is `i + j * nx`, the
//! 0-based form of the usual `i + (j - 1) N_x`. Membership is half-open,
//! `[x_lo, x_hi) × [y_lo, y_hi)`, except on the top and right domain
//! boundary where the last cell is closed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{union_area, Rect, Vec2};

/// Particle source with Poisson arrivals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entrance {
    pub region: Rect,
    /// Mean arrivals per second.
    pub rate: f64,
    /// Total number of particles this entrance may ever emit; `None` is unbounded.
    pub capacity: Option<u64>,
}

/// Particle sink, optionally throttled to `cap` removals per second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exit {
    pub region: Rect,
    pub cap: Option<f64>,
}

/// Validated description of the simulation domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: f64,
    pub height: f64,
    pub obstacles: Vec<Rect>,
    pub entrances: Vec<Entrance>,
    pub exits: Vec<Exit>,
}

// On-disk representation; rectangles are `[x0, y0, x1, y1]`.
#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    width: f64,
    height: f64,
    #[serde(default)]
    obstacles: Vec<[f64; 4]>,
    #[serde(default)]
    entrances: Vec<EntranceFile>,
    #[serde(default)]
    exits: Vec<ExitFile>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct EntranceFile {
    rect: [f64; 4],
    rate: f64,
    #[serde(default)]
    capacity: Option<f64>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ExitFile {
    rect: [f64; 4],
    #[serde(default)]
    cap: Option<f64>,
}

fn rect_from_array(a: [f64; 4]) -> Result<Rect> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite rectangle {a:?}")));
    }
    Ok(Rect::new(a[0], a[1], a[2], a[3]))
}

fn rect_to_array(r: &Rect) -> [f64; 4] {
    [r.min.x, r.min.y, r.max.x, r.max.y]
}

/// Reads and validates a JSON scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<SceneSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SceneSpec::from_json(&text)
}

impl SceneSpec {
    /// Empty `width × height` domain.
    pub fn empty(width: f64, height: f64) -> Self {
        SceneSpec {
            width,
            height,
            obstacles: Vec::new(),
            entrances: Vec::new(),
            exits: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<SceneSpec> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut entrances = Vec::with_capacity(file.entrances.len());
        for e in file.entrances {
            let capacity = match e.capacity {
                None => None,
                Some(c) if c >= 0.0 && c.fract() == 0.0 => Some(c as u64),
                Some(c) => {
                    return Err(Error::Validation(format!(
                        "entrance capacity must be a non-negative integer, got {c}"
                    )))
                }
            };
            entrances.push(Entrance {
                region: rect_from_array(e.rect)?,
                rate: e.rate,
                capacity,
            });
        }
        let scene = SceneSpec {
            width: file.width,
            height: file.height,
            obstacles: file
                .obstacles
                .into_iter()
                .map(rect_from_array)
                .collect::<Result<_>>()?,
            entrances,
            exits: file
                .exits
                .into_iter()
                .map(|x| {
                    Ok(Exit {
                        region: rect_from_array(x.rect)?,
                        cap: x.cap,
                    })
                })
                .collect::<Result<_>>()?,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Serialises back to the scenario file format.
    pub fn to_json(&self) -> String {
        let file = ScenarioFile {
            width: self.width,
            height: self.height,
            obstacles: self.obstacles.iter().map(rect_to_array).collect(),
            entrances: self
                .entrances
                .iter()
                .map(|e| EntranceFile {
                    rect: rect_to_array(&e.region),
                    rate: e.rate,
                    capacity: e.capacity.map(|c| c as f64),
                })
                .collect(),
            exits: self
                .exits
                .iter()
                .map(|x| ExitFile {
                    rect: rect_to_array(&x.region),
                    cap: x.cap,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("scenario serialises")
    }

    pub fn domain(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width, self.height)
    }

    /// Checks every geometric invariant of a scene.
    pub fn validate(&self) -> Result<()> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::Validation(format!("width must be > 0, got {}", self.width)));
        }
        if !(self.height.is_finite() && self.height > 0.0) {
            return Err(Error::Validation(format!("height must be > 0, got {}", self.height)));
        }
        let domain = self.domain();
        let inside = |kind: &str, k: usize, r: &Rect| {
            if domain.contains_rect(r) {
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "{kind} {k} [({}, {}), ({}, {})] extends outside the {}x{} domain",
                    r.min.x, r.min.y, r.max.x, r.max.y, self.width, self.height
                )))
            }
        };
        for (k, r) in self.obstacles.iter().enumerate() {
            inside("obstacle", k, r)?;
        }
        for (k, e) in self.entrances.iter().enumerate() {
            inside("entrance", k, &e.region)?;
            if !(e.rate.is_finite() && e.rate >= 0.0) {
                return Err(Error::Validation(format!("entrance {k} has rate {}", e.rate)));
            }
            if let Some(o) = self.obstacles.iter().position(|o| o.overlaps_interior(&e.region)) {
                return Err(Error::Validation(format!("entrance {k} overlaps obstacle {o}")));
            }
        }
        for (k, x) in self.exits.iter().enumerate() {
            inside("exit", k, &x.region)?;
            if let Some(c) = x.cap {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::Validation(format!("exit {k} has outflow cap {c}")));
                }
            }
            if let Some(o) = self.obstacles.iter().position(|o| o.overlaps_interior(&x.region)) {
                return Err(Error::Validation(format!("exit {k} overlaps obstacle {o}")));
            }
        }
        Ok(())
    }

    /// Fraction of the domain covered by obstacles.
    pub fn obstacle_fraction(&self) -> f64 {
        union_area(&self.obstacles) / (self.width * self.height)
    }

    /// Area available for initial placement: domain minus obstacles, entrances and exits.
    pub fn free_area(&self) -> f64 {
        let blocked: Vec<Rect> = self.blocked_regions().collect();
        self.width * self.height - union_area(&blocked)
    }

    fn blocked_regions(&self) -> impl Iterator<Item = Rect> + '_ {
        self.obstacles
            .iter()
            .copied()
            .chain(self.entrances.iter().map(|e| e.region))
            .chain(self.exits.iter().map(|x| x.region))
    }

    /// True when `p` lies in the interior of some obstacle.
    pub fn in_obstacle(&self, p: Vec2) -> bool {
        self.obstacles.iter().any(|o| o.contains_strict(p))
    }

    /// True when `p` is inside the domain and not covered by an obstacle, entrance or exit.
    pub fn is_free_for_spawn(&self, p: Vec2) -> bool {
        self.domain().contains(p) && !self.blocked_regions().any(|r| r.contains(p))
    }

    /// Index of the exit containing `p` (closed containment), if any.
    pub fn exit_containing(&self, p: Vec2) -> Option<usize> {
        self.exits.iter().position(|x| x.region.contains(p))
    }
}

/// Uniform cell grid tiling the domain exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Self {
        assert!(nx > 0 && ny > 0, "grid needs at least one cell");
        assert!(dx > 0.0 && dy > 0.0, "cell sizes must be positive");
        Grid { nx, ny, dx, dy }
    }

    /// Grid over the scene with cells as close to `cell_size` as the domain allows.
    pub fn for_scene(scene: &SceneSpec, cell_size: f64) -> Self {
        let nx = ((scene.width / cell_size).round() as usize).max(1);
        let ny = ((scene.height / cell_size).round() as usize).max(1);
        Grid::new(nx, ny, scene.width / nx as f64, scene.height / ny as f64)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.dy
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    #[inline]
    pub fn flat(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        i + j * self.nx
    }

    #[inline]
    pub fn unflatten(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy)
    }

    pub fn center_flat(&self, k: usize) -> Vec2 {
        let (i, j) = self.unflatten(k);
        self.center(i, j)
    }

    pub fn cell_rect(&self, i: usize, j: usize) -> Rect {
        Rect::new(
            i as f64 * self.dx,
            j as f64 * self.dy,
            (i + 1) as f64 * self.dx,
            (j + 1) as f64 * self.dy,
        )
    }

    /// Neighbour of `(i, j)` shifted by `(di, dj)`, if it lies on the grid.
    #[inline]
    pub fn offset(&self, i: usize, j: usize, di: isize, dj: isize) -> Option<(usize, usize)> {
        let ni = i as isize + di;
        let nj = j as isize + dj;
        (ni >= 0 && nj >= 0 && (ni as usize) < self.nx && (nj as usize) < self.ny)
            .then_some((ni as usize, nj as usize))
    }

    /// Cell containing `p`.
    pub fn cell_of_point(&self, p: Vec2) -> Result<(usize, usize)> {
        let inside = p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width() && p.y <= self.height();
        if !inside {
            return Err(Error::OutOfDomain { x: p.x, y: p.y });
        }
        let i = ((p.x / self.dx).floor() as usize).min(self.nx - 1);
        let j = ((p.y / self.dy).floor() as usize).min(self.ny - 1);
        Ok((i, j))
    }
}

/// Marks every cell whose centre lies inside one of `regions` (closed containment).
pub fn region_cell_mask(regions: &[Rect], grid: &Grid) -> Vec<bool> {
    (0..grid.len())
        .map(|k| {
            let c = grid.center_flat(k);
            regions.iter().any(|r| r.contains(c))
        })
        .collect()
}

/// Obstacles snapped to the grid: a cell is covered iff its centre lies in an obstacle.
pub fn obstacle_cell_mask(scene: &SceneSpec, grid: &Grid) -> Vec<bool> {
    region_cell_mask(&scene.obstacles, grid)
}
