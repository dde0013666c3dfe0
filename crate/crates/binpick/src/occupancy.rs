//! Voxel occupancy grid over the bin interior.
//!
//! Each trial starts from a fresh all-unknown grid: cells holding captured
//! points become occupied, then every remaining cell is classified free or
//! occluded by casting a ray from its center to the sensor (occupied cells
//! and bin walls block). View selection scores candidate sensor poses by
//! predicted visibility, treating the current occupied cells as the only
//! blockers: for the first view, minimize hidden bottom-surface cells; for
//! later views, maximize re-observed occluded cells. Occluded cells inside
//! a grasp's swept volume are "blue" and feed the score penalty; the rest
//! are "green".

use crate::cloud::PointCloud;
use crate::features::SweptVolume;
use crate::geometry::{BinBox, Point3, RigidTransform, Shape, Vec3};
use crate::sensing::{SensorModel, SensorPose};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OccupancyError {
    #[error("cell size must be positive, got {0}")]
    BadCellSize(f64),
    #[error("no sensor pose candidate available")]
    NoCandidate,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellState {
    Unknown,
    Occupied,
    Occluded,
    Free,
}

impl CellState {
    pub fn as_str(self) -> &'static str {
        match self {
            CellState::Unknown => "unknown",
            CellState::Occupied => "occupied",
            CellState::Occluded => "occluded",
            CellState::Free => "free",
        }
    }
}

/// Count of occluded cells inside / outside a swept volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OccludedSplit {
    pub blue: usize,
    pub green: usize,
}

#[derive(Clone, Debug)]
pub struct OccupancyGrid {
    /// Grid axes = bin axes; this is the bin pose.
    frame: RigidTransform,
    /// Bin-frame coordinates of the grid corner (cell [0,0,0] min corner).
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    cells: Vec<CellState>,
}

impl OccupancyGrid {
    /// Grid covering the bin interior; inner extents should be multiples
    /// of `cell` for an exact cover (dims are rounded).
    pub fn for_bin(bin: &BinBox, cell: f64) -> Result<Self, OccupancyError> {
        if !(cell > 0.0) {
            return Err(OccupancyError::BadCellSize(cell));
        }
        let [w, d, h] = bin.inner_extents();
        let dims = [
            ((w / cell).round() as usize).max(1),
            ((d / cell).round() as usize).max(1),
            ((h / cell).round() as usize).max(1),
        ];
        Ok(Self {
            frame: *bin.pose(),
            origin: Vec3::new(-w / 2.0, -d / 2.0, 0.0),
            cell,
            dims,
            cells: vec![CellState::Unknown; dims[0] * dims[1] * dims[2]],
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn linear(&self, i: [usize; 3]) -> usize {
        (i[2] * self.dims[1] + i[1]) * self.dims[0] + i[0]
    }

    pub fn state(&self, i: [usize; 3]) -> CellState {
        self.cells[self.linear(i)]
    }

    pub fn set_state(&mut self, i: [usize; 3], s: CellState) {
        let l = self.linear(i);
        self.cells[l] = s;
    }

    pub fn count(&self, s: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == s).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [nx, ny, nz] = self.dims;
        (0..nz).flat_map(move |iz| {
            (0..ny).flat_map(move |iy| (0..nx).map(move |ix| [ix, iy, iz]))
        })
    }

    pub fn cell_center_world(&self, i: [usize; 3]) -> Point3 {
        let local = self.origin
            + Vec3::new(
                (i[0] as f64 + 0.5) * self.cell,
                (i[1] as f64 + 0.5) * self.cell,
                (i[2] as f64 + 0.5) * self.cell,
            );
        self.frame.apply(Point3::from(local))
    }

    pub fn index_of_world(&self, p: Point3) -> Option<[usize; 3]> {
        let local = self.frame.inverse().apply(p).coords - self.origin;
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let v = (local[k] / self.cell).floor();
            if v < 0.0 || v >= self.dims[k] as f64 {
                return None;
            }
            idx[k] = v as usize;
        }
        Some(idx)
    }

    /// Marks cells containing at least `min_points` cloud points occupied.
    pub fn mark_occupied(&mut self, cloud: &PointCloud, min_points: usize) {
        let mut counts = vec![0usize; self.cells.len()];
        for &p in &cloud.points {
            if let Some(i) = self.index_of_world(p) {
                counts[self.linear(i)] += 1;
            }
        }
        for (cell, &n) in self.cells.iter_mut().zip(&counts) {
            if n >= min_points.max(1) {
                *cell = CellState::Occupied;
            }
        }
    }

    /// Classifies every non-occupied cell as free (line of sight to at
    /// least one of `views`) or occluded. Occupied cells and bin walls
    /// block; the sensor frustum and range band also limit visibility.
    pub fn mark_occluded_multi(
        &mut self,
        bin: &BinBox,
        sensor: &SensorModel,
        views: &[SensorPose],
    ) {
        let walls = bin.wall_shapes();
        let mut new_states = self.cells.clone();
        for i in self.indices() {
            if self.state(i) == CellState::Occupied {
                continue;
            }
            let visible = views
                .iter()
                .any(|v| self.cell_visible(&walls, sensor, v, i, true));
            new_states[self.linear(i)] = if visible {
                CellState::Free
            } else {
                CellState::Occluded
            };
        }
        self.cells = new_states;
    }

    /// Single-view convenience for [`Self::mark_occluded_multi`].
    pub fn mark_occluded(&mut self, bin: &BinBox, sensor: &SensorModel, view: &SensorPose) {
        self.mark_occluded_multi(bin, sensor, &[*view]);
    }

    /// Line-of-sight test from a cell center to a sensor pose.
    pub fn cell_visible(
        &self,
        walls: &[(Shape, RigidTransform)],
        sensor: &SensorModel,
        view: &SensorPose,
        cell: [usize; 3],
        occupied_blocks: bool,
    ) -> bool {
        let center = self.cell_center_world(cell);
        if sensor.frustum_distance(&view.pose, center).is_none() {
            return false;
        }
        let target = view.position();
        if segment_blocked_by_shapes(walls, center, target) {
            return false;
        }
        !(occupied_blocks && self.segment_blocked_by_occupied(cell, target))
    }

    /// Amanatides-Woo traversal from the center of `from` toward `to`;
    /// true if an occupied cell is entered before leaving the grid.
    fn segment_blocked_by_occupied(&self, from: [usize; 3], to: Point3) -> bool {
        let inv = self.frame.inverse();
        let start = inv.apply(self.cell_center_world(from)).coords - self.origin;
        let end = inv.apply(to).coords - self.origin;
        let delta = end - start;
        let dist = delta.norm();
        if dist < 1e-12 {
            return false;
        }
        let u = delta / dist;

        let mut idx = [from[0] as i64, from[1] as i64, from[2] as i64];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        let mut step = [0i64; 3];
        for k in 0..3 {
            if u[k] > 1e-12 {
                step[k] = 1;
                t_max[k] = ((idx[k] + 1) as f64 * self.cell - start[k]) / u[k];
                t_delta[k] = self.cell / u[k];
            } else if u[k] < -1e-12 {
                step[k] = -1;
                t_max[k] = (idx[k] as f64 * self.cell - start[k]) / u[k];
                t_delta[k] = -self.cell / u[k];
            }
        }
        loop {
            let axis = (0..3).min_by(|&a, &b| t_max[a].total_cmp(&t_max[b])).unwrap();
            if t_max[axis] >= dist {
                return false; // reached the sensor
            }
            idx[axis] += step[axis];
            if idx[axis] < 0 || idx[axis] >= self.dims[axis] as i64 {
                return false; // left the grid
            }
            t_max[axis] += t_delta[axis];
            let i = [idx[0] as usize, idx[1] as usize, idx[2] as usize];
            if self.state(i) == CellState::Occupied {
                return true;
            }
        }
    }

    /// Predicted number of this grid's occluded cells that would gain line
    /// of sight from `view` (occupied cells block).
    pub fn predicted_reveal_count(
        &self,
        bin: &BinBox,
        sensor: &SensorModel,
        view: &SensorPose,
    ) -> usize {
        let walls = bin.wall_shapes();
        self.indices()
            .filter(|&i| self.state(i) == CellState::Occluded)
            .filter(|&i| self.cell_visible(&walls, sensor, view, i, true))
            .count()
    }

    /// Bottom-surface cells with no line of sight from `view` in an empty
    /// bin (walls are the only blockers).
    pub fn hidden_bottom_count(
        &self,
        bin: &BinBox,
        sensor: &SensorModel,
        view: &SensorPose,
    ) -> usize {
        let walls = bin.wall_shapes();
        let [nx, ny, _] = self.dims;
        let mut hidden = 0;
        for iy in 0..ny {
            for ix in 0..nx {
                if !self.cell_visible(&walls, sensor, view, [ix, iy, 0], false) {
                    hidden += 1;
                }
            }
        }
        hidden
    }

    /// First-trial view selection: minimize hidden bottom cells.
    /// Ties break on lowest face index, then smallest standoff.
    pub fn select_view_first(
        &self,
        bin: &BinBox,
        sensor: &SensorModel,
        candidates: &[SensorPose],
    ) -> Result<SensorPose, OccupancyError> {
        candidates
            .iter()
            .min_by_key(|c| {
                (
                    self.hidden_bottom_count(bin, sensor, c),
                    c.face_index,
                    c.standoff.to_bits(),
                )
            })
            .copied()
            .ok_or(OccupancyError::NoCandidate)
    }

    /// Later-trial view selection: maximize re-observed occluded cells.
    /// Same tie-break as [`Self::select_view_first`].
    pub fn select_view_next(
        &self,
        bin: &BinBox,
        sensor: &SensorModel,
        candidates: &[SensorPose],
    ) -> Result<SensorPose, OccupancyError> {
        candidates
            .iter()
            .min_by_key(|c| {
                (
                    usize::MAX - self.predicted_reveal_count(bin, sensor, c),
                    c.face_index,
                    c.standoff.to_bits(),
                )
            })
            .copied()
            .ok_or(OccupancyError::NoCandidate)
    }

    /// Splits occluded cells into blue (center inside the finger swept
    /// volume, where the gripper may hit hidden geometry) and green
    /// (everything else).
    pub fn classify_occluded(&self, sv: &SweptVolume) -> OccludedSplit {
        let mut split = OccludedSplit { blue: 0, green: 0 };
        for i in self.indices() {
            if self.state(i) != CellState::Occluded {
                continue;
            }
            if sv.contains_world(self.cell_center_world(i)) {
                split.blue += 1;
            } else {
                split.green += 1;
            }
        }
        split
    }

    /// Dumps `ix,iy,iz,state` rows for plotting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), OccupancyError> {
        writeln!(w, "ix,iy,iz,state")?;
        for i in self.indices() {
            writeln!(w, "{},{},{},{}", i[0], i[1], i[2], self.state(i).as_str())?;
        }
        Ok(())
    }

    /// Reads a [`Self::write_csv`] dump back into a grid over `bin`.
    pub fn read_csv<R: std::io::BufRead>(
        bin: &BinBox,
        cell: f64,
        r: R,
    ) -> Result<Self, OccupancyError> {
        let mut grid = Self::for_bin(bin, cell)?;
        let bad = |msg: String| {
            OccupancyError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg))
        };
        for (line_no, line) in r.lines().enumerate() {
            let line = line?;
            if line_no == 0 {
                if line.trim() != "ix,iy,iz,state" {
                    return Err(bad(format!("unexpected header '{line}'")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.trim().split(',').collect();
            if parts.len() != 4 {
                return Err(bad(format!("line {line_no}: expected 4 fields")));
            }
            let mut idx = [0usize; 3];
            for k in 0..3 {
                idx[k] = parts[k]
                    .parse()
                    .map_err(|e| bad(format!("line {line_no}: {e}")))?;
                if idx[k] >= grid.dims[k] {
                    return Err(bad(format!("line {line_no}: index out of range")));
                }
            }
            let state = match parts[3] {
                "unknown" => CellState::Unknown,
                "occupied" => CellState::Occupied,
                "occluded" => CellState::Occluded,
                "free" => CellState::Free,
                other => return Err(bad(format!("line {line_no}: bad state '{other}'"))),
            };
            grid.set_state(idx, state);
        }
        Ok(grid)
    }
}

/// True if the open segment between `from` and `to` intersects any shape.
pub fn segment_blocked_by_shapes(
    shapes: &[(Shape, RigidTransform)],
    from: Point3,
    to: Point3,
) -> bool {
    let delta = to - from;
    let dist = delta.norm();
    if dist < 1e-12 {
        return false;
    }
    let u = delta / dist;
    shapes
        .iter()
        .any(|(s, pose)| s.ray_cast(pose, from, u).is_some_and(|t| t < dist - 1e-9))
}
