//! Forward-Euler integration, autoregressive rollout and RMSE evaluation.

use std::collections::BTreeMap;

use super::model::{forward, NodeOutput, ProcessorParams};
use crate::error::{Error, Result};
use crate::graph::{FrameState, MeshGraph, NodeType, Trajectory};
use crate::rewiring::{RewireParams, Rewirer};
use crate::synth::{rmse, Field, RmseBreakdown};

/// `state + derivative` for every modelled field; `time_index` advances by one.
pub fn euler_update(frame: &FrameState, out: &NodeOutput) -> Result<FrameState> {
    let n = frame.node_count();
    if out.node_count() != n {
        return Err(Error::DimensionMismatch(format!(
            "output has {} nodes, frame has {n}",
            out.node_count()
        )));
    }
    let layout = out.layout;
    if layout.output_dim() != out.values.ncols() {
        return Err(Error::DimensionMismatch("output width does not match its layout".into()));
    }
    let mut next = frame.clone();
    next.time_index += 1;
    for (i, v) in next.velocity.iter_mut().enumerate() {
        v[0] += out.values[[i, 0]];
        v[1] += out.values[[i, 1]];
    }
    let mut col = 2;
    for (enabled, field, name) in [
        (layout.pressure, &mut next.pressure, "pressure"),
        (layout.density, &mut next.density, "density"),
    ] {
        if !enabled {
            continue;
        }
        let values = field
            .as_mut()
            .ok_or_else(|| Error::DimensionMismatch(format!("frame has no {name}")))?;
        for (i, x) in values.iter_mut().enumerate() {
            *x += out.values[[i, col]];
        }
        col += 1;
    }
    Ok(next)
}

/// Copies prescribed values onto every non-fluid node.
pub fn apply_boundary(graph: &MeshGraph, frame: &mut FrameState, boundary: &FrameState) -> Result<()> {
    boundary.validate(graph.node_count(), "boundary frame")?;
    for i in (0..graph.node_count()).filter(|&i| graph.node_type(i) != NodeType::Fluid) {
        frame.velocity[i] = boundary.velocity[i];
        if let (Some(p), Some(b)) = (frame.pressure.as_mut(), boundary.pressure.as_ref()) {
            p[i] = b[i];
        }
        if let (Some(p), Some(b)) = (frame.density.as_mut(), boundary.density.as_ref()) {
            p[i] = b[i];
        }
    }
    Ok(())
}

fn check_finite(frame: &FrameState, step: usize) -> Result<()> {
    let finite = frame.velocity.iter().flatten().all(|x| x.is_finite())
        && frame.pressure.iter().flatten().all(|x| x.is_finite())
        && frame.density.iter().flatten().all(|x| x.is_finite());
    if finite {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("rollout state at step {step}")))
    }
}

/// Autoregressive prediction of `steps` frames from `frame0`. The schedule
/// is rebuilt from each predicted frame.
pub fn rollout(
    params: &ProcessorParams,
    graph: &MeshGraph,
    frame0: &FrameState,
    steps: usize,
    rewire: &RewireParams,
) -> Result<Trajectory> {
    rollout_with_boundary(params, graph, frame0, steps, rewire, None)
}

/// As [`rollout`], with non-fluid nodes reset from `boundary[t]` after every
/// step when given.
pub fn rollout_with_boundary(
    params: &ProcessorParams,
    graph: &MeshGraph,
    frame0: &FrameState,
    steps: usize,
    rewire: &RewireParams,
    boundary: Option<&[FrameState]>,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Config("rollout needs at least one step".into()));
    }
    if let Some(b) = boundary {
        if b.len() <= steps {
            return Err(Error::Config(format!(
                "{} boundary frames cannot drive {steps} steps",
                b.len()
            )));
        }
    }
    frame0.validate(graph.node_count(), "initial frame")?;
    let rewirer = Rewirer::new(graph, *rewire)?;
    let mut frames = vec![frame0.clone()];
    for t in 1..=steps {
        let current = frames.last().expect("non-empty");
        let schedule = rewirer.schedule(graph, current)?;
        let out = forward(params, graph, current, &schedule)?;
        let mut next = euler_update(current, &out)?;
        if let Some(b) = boundary {
            apply_boundary(graph, &mut next, &b[t])?;
        }
        check_finite(&next, t)?;
        frames.push(next);
    }
    Trajectory::new(graph.clone(), frames)
}

/// One-step predictions from every true frame, with boundary values taken
/// from the truth. Frame 0 is copied from `truth`.
pub fn teacher_forced(params: &ProcessorParams, truth: &Trajectory, rewire: &RewireParams) -> Result<Trajectory> {
    if truth.frames.len() < 2 {
        return Err(Error::Config("trajectory needs at least two frames".into()));
    }
    let graph = &truth.graph;
    let rewirer = Rewirer::new(graph, *rewire)?;
    let mut frames = vec![truth.frames[0].clone()];
    for (t, w) in truth.frames.windows(2).enumerate() {
        let schedule = rewirer.schedule(graph, &w[0])?;
        let out = forward(params, graph, &w[0], &schedule)?;
        let mut next = euler_update(&w[0], &out)?;
        apply_boundary(graph, &mut next, &w[1])?;
        check_finite(&next, t + 1)?;
        frames.push(next);
    }
    Trajectory::new(graph.clone(), frames)
}

/// One-step, fixed-horizon and full-horizon RMSE of `params` on `truth`.
/// Horizons longer than the trajectory are rejected.
pub fn evaluate(
    params: &ProcessorParams,
    truth: &Trajectory,
    rewire: &RewireParams,
    horizons: &[usize],
    field: Field,
) -> Result<RmseBreakdown> {
    let full = truth.frames.len().saturating_sub(1);
    if full == 0 {
        return Err(Error::Config("trajectory needs at least two frames".into()));
    }
    if let Some(&k) = horizons.iter().find(|&&k| k == 0 || k > full) {
        return Err(Error::Config(format!("horizon {k} outside 1..={full}")));
    }
    let forced = teacher_forced(params, truth, rewire)?;
    let one_step = rmse(&forced, truth, None, field)?;
    let predicted = rollout_with_boundary(params, &truth.graph, &truth.frames[0], full, rewire, Some(&truth.frames))?;
    let mut rollout = BTreeMap::new();
    for &k in horizons {
        rollout.insert(k, rmse(&predicted, truth, Some(k), field)?);
    }
    Ok(RmseBreakdown {
        field,
        one_step,
        rollout,
        rollout_all: rmse(&predicted, truth, None, field)?,
        full_horizon: full,
    })
}
