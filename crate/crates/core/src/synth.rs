//! Synthetic advection-diffusion trajectories on a triangulated grid, and
//! RMSE metrics.
//!
//! Node `r * cols + c` sits at `(c, r)`. Column 0 is inflow, the last column
//! outflow, the top and bottom rows and an optional disk are walls. Both
//! velocity components are advected along `+x` with a first-order upwind
//! scheme and diffused with the 4-neighbor stencil. Diffusion exchanges mass
//! only between fluid and outflow nodes, so it never leaks into walls or the
//! driven inflow column.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FrameState, MeshGraph, NodeType, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Time dependence of the inflow `vx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InflowPattern {
    /// Constant from `t = 0`.
    Step,
    /// On for the first `width` frames.
    Pulse { width: usize },
    /// `sin(2πt / period)`.
    Sine { period: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflowProfile {
    pub amplitude: f64,
    pub pattern: InflowPattern,
}

impl InflowProfile {
    pub fn value(&self, t: usize) -> f64 {
        let shape = match self.pattern {
            InflowPattern::Step => 1.0,
            InflowPattern::Pulse { width } => {
                if t < width {
                    1.0
                } else {
                    0.0
                }
            }
            InflowPattern::Sine { period } => (std::f64::consts::TAU * t as f64 / period).sin(),
        };
        self.amplitude * shape
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub obstacle: Option<Obstacle>,
    pub inflow: InflowProfile,
    pub diffusion: f64,
    /// Cells travelled per step along `+x` (negative: along `−x`).
    pub advection: f64,
    pub steps: usize,
    pub seed: u64,
    /// Half-width of the uniform noise added to the initial fluid velocity.
    pub perturbation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 12,
            cols: 12,
            obstacle: None,
            inflow: InflowProfile {
                amplitude: 1.0,
                pattern: InflowPattern::Pulse { width: 4 },
            },
            diffusion: 0.05,
            advection: 0.5,
            steps: 40,
            seed: 0,
            perturbation: 0.01,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::Config(format!("grid {}x{} must be at least 2x2", self.rows, self.cols)));
        }
        if self.steps < 2 {
            return Err(Error::Config("steps must be at least 2".into()));
        }
        for (name, v) in [
            ("diffusion", self.diffusion),
            ("advection", self.advection),
            ("perturbation", self.perturbation),
            ("amplitude", self.inflow.amplitude),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if self.diffusion < 0.0 {
            return Err(Error::Config("diffusion must be non-negative".into()));
        }
        if self.perturbation < 0.0 {
            return Err(Error::Config("perturbation must be non-negative".into()));
        }
        let cfl = self.advection.abs() + 4.0 * self.diffusion;
        if cfl >= 1.0 {
            return Err(Error::Config(format!(
                "CFL violation: |advection| + 4 * diffusion = {cfl} >= 1"
            )));
        }
        match self.inflow.pattern {
            InflowPattern::Pulse { width: 0 } => return Err(Error::Config("pulse width must be positive".into())),
            InflowPattern::Sine { period } if !(period > 0.0 && period.is_finite()) => {
                return Err(Error::Config("sine period must be positive".into()))
            }
            _ => {}
        }
        if let Some(o) = self.obstacle {
            let (w, h) = ((self.cols - 1) as f64, (self.rows - 1) as f64);
            let [cx, cy] = o.center;
            let inside = o.radius > 0.0 && cx - o.radius > 0.0 && cx + o.radius < w && cy - o.radius > 0.0 && cy + o.radius < h;
            if !inside {
                return Err(Error::Config("obstacle must lie strictly inside the domain".into()));
            }
        }
        Ok(())
    }
}

/// Triangulated `rows × cols` grid with node types assigned.
pub fn grid_mesh(rows: usize, cols: usize, obstacle: Option<Obstacle>) -> Result<MeshGraph> {
    let id = |r: usize, c: usize| r * cols + c;
    let mut types = Vec::with_capacity(rows * cols);
    let mut pos = Vec::with_capacity(rows * cols);
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (c as f64, r as f64);
            let in_obstacle = obstacle.is_some_and(|o| (x - o.center[0]).hypot(y - o.center[1]) <= o.radius);
            let t = if r == 0 || r + 1 == rows || in_obstacle {
                NodeType::Wall
            } else if c == 0 {
                NodeType::Inflow
            } else if c + 1 == cols {
                NodeType::Outflow
            } else {
                NodeType::Fluid
            };
            types.push(t);
            pos.push([x, y]);
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c)));
                if c + 1 < cols {
                    edges.push((id(r, c), id(r + 1, c + 1)));
                }
            }
        }
    }
    MeshGraph::new(types, pos, &edges)
}

pub fn gen_synthetic(config: &SynthConfig) -> Result<Trajectory> {
    config.validate()?;
    let graph = grid_mesh(config.rows, config.cols, config.obstacle)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut vel = vec![[0.0; 2]; graph.node_count()];
    for (i, v) in vel.iter_mut().enumerate() {
        match graph.node_type(i) {
            NodeType::Fluid | NodeType::Outflow if config.perturbation > 0.0 => {
                let p = config.perturbation;
                *v = [rng.gen_range(-p..=p), rng.gen_range(-p..=p)];
            }
            NodeType::Inflow => *v = [config.inflow.value(0), 0.0],
            _ => {}
        }
    }
    let mut frames = vec![FrameState::new(0, vel)];
    for _ in 0..config.steps {
        let next = advance(config, &graph, frames.last().expect("non-empty"))?;
        frames.push(next);
    }
    Trajectory::new(graph, frames)
}

/// One explicit step of the synthetic dynamics on the grid built from
/// `config`.
pub fn advance(config: &SynthConfig, graph: &MeshGraph, frame: &FrameState) -> Result<FrameState> {
    let (rows, cols) = (config.rows, config.cols);
    if graph.node_count() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "graph has {} nodes, grid is {rows}x{cols}",
            graph.node_count()
        )));
    }
    frame.validate(graph.node_count(), "frame")?;
    let t = frame.time_index + 1;
    let vel = &frame.velocity;
    let ty = |r: usize, c: usize| graph.node_type(r * cols + c);
    let exchanges = |t: NodeType| matches!(t, NodeType::Fluid | NodeType::Outflow);
    let (a, d) = (config.advection, config.diffusion);
    let mut next = vel.clone();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            match ty(r, c) {
                NodeType::Wall => {
                    next[i] = [0.0, 0.0];
                    continue;
                }
                NodeType::Inflow => {
                    next[i] = [config.inflow.value(t), 0.0];
                    continue;
                }
                _ => {}
            }
            // Upwind neighbor; a wall upstream contributes zero velocity.
            let upstream = if a >= 0.0 { c.checked_sub(1) } else { Some(c + 1).filter(|&x| x < cols) };
            let up = match upstream {
                Some(cu) if ty(r, cu) != NodeType::Wall => vel[r * cols + cu],
                Some(_) => [0.0, 0.0],
                None => vel[i],
            };
            let mut lap = [0.0; 2];
            let neighbors = [
                (r.checked_sub(1), Some(c)),
                (Some(r + 1).filter(|&x| x < rows), Some(c)),
                (Some(r), c.checked_sub(1)),
                (Some(r), Some(c + 1).filter(|&x| x < cols)),
            ];
            for (nr, nc) in neighbors {
                let (Some(nr), Some(nc)) = (nr, nc) else { continue };
                if !exchanges(ty(nr, nc)) {
                    continue;
                }
                let j = nr * cols + nc;
                lap[0] += vel[j][0] - vel[i][0];
                lap[1] += vel[j][1] - vel[i][1];
            }
            for k in 0..2 {
                next[i][k] = vel[i][k] - a.abs() * (vel[i][k] - up[k]) + d * lap[k];
            }
        }
    }
    Ok(FrameState::new(t, next))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Velocity,
    Pressure,
    Density,
}

impl Field {
    pub fn as_str(self) -> &'static str {
        match self {
            Field::Velocity => "velocity",
            Field::Pressure => "pressure",
            Field::Density => "density",
        }
    }

    fn values(self, frame: &FrameState, i: usize) -> Option<Vec<f64>> {
        match self {
            Field::Velocity => Some(frame.velocity[i].to_vec()),
            Field::Pressure => frame.pressure.as_ref().map(|p| vec![p[i]]),
            Field::Density => frame.density.as_ref().map(|p| vec![p[i]]),
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "velocity" => Ok(Field::Velocity),
            "pressure" => Ok(Field::Pressure),
            "density" => Ok(Field::Density),
            _ => Err(Error::Config(format!("unknown field '{s}'"))),
        }
    }
}

/// Root-mean-square error over fluid nodes, field components and frames
/// `1..=horizon` (`None`: every frame after the first).
pub fn rmse(predicted: &Trajectory, truth: &Trajectory, horizon: Option<usize>, field: Field) -> Result<f64> {
    if predicted.graph != truth.graph {
        return Err(Error::DimensionMismatch("predicted and true trajectories use different graphs".into()));
    }
    let available = truth.frames.len().saturating_sub(1);
    let h = horizon.unwrap_or(available);
    if h == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if h > available {
        return Err(Error::Config(format!("horizon {h} exceeds the {available} true steps")));
    }
    if predicted.frames.len() <= h {
        return Err(Error::Config(format!(
            "prediction has {} steps, horizon is {h}",
            predicted.frames.len().saturating_sub(1)
        )));
    }
    let graph = &truth.graph;
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 1..=h {
        for i in (0..graph.node_count()).filter(|&i| graph.node_type(i) == NodeType::Fluid) {
            let missing = || Error::DimensionMismatch(format!("frame {t} has no {field}"));
            let p = field.values(&predicted.frames[t], i).ok_or_else(missing)?;
            let q = field.values(&truth.frames[t], i).ok_or_else(missing)?;
            for (a, b) in p.iter().zip(&q) {
                sum += (a - b) * (a - b);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Config("no fluid nodes to evaluate".into()));
    }
    Ok((sum / count as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseBreakdown {
    pub field: Field,
    /// Teacher-forced single-step error.
    pub one_step: f64,
    /// Autoregressive error over the first `k` steps.
    pub rollout: BTreeMap<usize, f64>,
    pub rollout_all: f64,
    /// Number of steps covered by `rollout_all`.
    pub full_horizon: usize,
}

impl RmseBreakdown {
    pub const CSV_HEADER: &'static str = "field,metric,horizon,rmse";

    pub fn csv_rows(&self) -> Vec<String> {
        let f = self.field;
        let mut rows = vec![format!("{f},one_step,1,{}", self.one_step)];
        for (k, v) in &self.rollout {
            rows.push(format!("{f},rollout,{k},{v}"));
        }
        rows.push(format!("{f},rollout_all,{},{}", self.full_horizon, self.rollout_all));
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in self.csv_rows() {
            out.push_str(&row);
            out.push('\n');
        }
        out
    }
}
