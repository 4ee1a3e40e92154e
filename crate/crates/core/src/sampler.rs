//! Explicit Euler integration of the guided velocity field.

use std::ops::Range;

use crate::backend::VelocityField;
use crate::error::{Error, Result};
use crate::grid::TimestepGrid;
use crate::guidance::{guided_velocity, GuidanceForm, GuidanceSpec, PhaseSchedule};
use crate::latent::{init_latent, Latent, Seed};

/// One integration step as seen by a trace observer.
#[derive(Debug, Clone)]
pub struct StepTrace<'a> {
    pub step: usize,
    pub t: f64,
    pub spec: &'a GuidanceSpec,
    pub velocity_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `Z_{t_0} … Z_{t_N}`, or only the first and last state in endpoint-only mode.
    pub states: Vec<Latent>,
    pub grid: TimestepGrid,
    pub forms: Vec<GuidanceForm>,
}

impl Trajectory {
    pub fn initial(&self) -> &Latent {
        &self.states[0]
    }

    pub fn endpoint(&self) -> &Latent {
        self.states.last().expect("trajectory has states")
    }
}

#[derive(Default)]
pub struct SampleOptions<'a> {
    /// Keep only `Z_{t_0}` and `Z_{t_N}`.
    pub endpoint_only: bool,
    pub trace: Option<&'a mut dyn FnMut(&StepTrace<'_>)>,
}

/// Integrates the steps in `steps` starting from `state`, returning every
/// visited state after the start (or just the last when `endpoint_only`).
pub fn integrate<B: VelocityField + ?Sized>(
    backend: &B,
    schedule: &PhaseSchedule,
    grid: &TimestepGrid,
    steps: Range<usize>,
    state: Latent,
    opts: &mut SampleOptions<'_>,
    forms: &mut Vec<GuidanceForm>,
) -> Result<Vec<Latent>> {
    let n = grid.n_steps();
    schedule.validate(n)?;
    if steps.end > n || steps.start > steps.end {
        return Err(Error::Parameter(format!("step range {steps:?} outside grid of {n} steps")));
    }
    let mut visited = Vec::with_capacity(if opts.endpoint_only { 1 } else { steps.len() });
    let mut z = state;
    for i in steps {
        let spec = schedule.select(i, n)?;
        let t = grid.t(i);
        let v = guided_velocity(backend, &z, t, spec).map_err(|e| e.at_step(i))?;
        if let Some(trace) = opts.trace.as_mut() {
            trace(&StepTrace { step: i, t, spec, velocity_norm: v.norm() });
        }
        z.add_scaled(grid.dt(i), &v)?;
        if !z.is_finite() {
            return Err(Error::NonFinite { step: i, t });
        }
        forms.push(spec.form);
        if !opts.endpoint_only {
            visited.push(z.clone());
        }
    }
    if opts.endpoint_only {
        visited.push(z);
    }
    Ok(visited)
}

/// Samples `Z_0 ~ N(0, I)` from `seed` and integrates it over `grid`.
pub fn euler_sample<B: VelocityField + ?Sized>(
    backend: &B,
    schedule: &PhaseSchedule,
    grid: &TimestepGrid,
    shape: (usize, usize),
    seed: Seed,
    mut opts: SampleOptions<'_>,
) -> Result<Trajectory> {
    let z0 = init_latent(shape, seed)?;
    euler_from(backend, schedule, grid, z0, &mut opts)
}

/// Like [`euler_sample`] but from a caller-supplied initial latent.
pub fn euler_from<B: VelocityField + ?Sized>(
    backend: &B,
    schedule: &PhaseSchedule,
    grid: &TimestepGrid,
    z0: Latent,
    opts: &mut SampleOptions<'_>,
) -> Result<Trajectory> {
    if !z0.is_finite() {
        return Err(Error::NonFinite { step: 0, t: grid.t(0) });
    }
    let mut forms = Vec::with_capacity(grid.n_steps());
    let rest = integrate(backend, schedule, grid, 0..grid.n_steps(), z0.clone(), opts, &mut forms)?;
    let mut states = Vec::with_capacity(rest.len() + 1);
    states.push(z0);
    states.extend(rest);
    Ok(Trajectory { states, grid: grid.clone(), forms })
}
