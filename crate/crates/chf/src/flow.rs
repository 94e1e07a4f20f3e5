//! Time stepping for the coupled flow
//!
//!   f_t = e^{-2u} (Delta f + |df|^2 f),    u_t = b e^{-2u} |df|^2 - a.
//!
//! The map is advanced by explicit Euler, RK4, or a semi-implicit step that
//! treats the Laplacian implicitly (CG) with u and the curvature term frozen
//! at the step start. The log conformal factor is either reconstructed each
//! step from the closed form
//!
//!   e^{2u(t)} = e^{-2at} (1 + 2b J(t)),    J(t) = int_0^t e^{2as} |df|^2 ds,
//!
//! with J kept by trapezoidal quadrature, or advanced pointwise by RK4 on the
//! ODE with |df|^2 frozen over the step. Everything that touches u works on
//! the exponent itself so large conformal factors never leave log space.

use crate::cg;
use crate::error::ChfError;
use crate::geometry::{
    energy_density, tension_field, GridGeometry, MapField, ScalarField, TargetManifold,
};
use crate::geometry::project_to_target;
use rayon::prelude::*;

/// Safety factor in the explicit stability guard.
pub const STABILITY_SAFETY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UScheme {
    /// Rebuild u from the accumulated history integral every step.
    ClosedForm,
    /// March the pointwise ODE with classical RK4.
    DirectOde,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FScheme {
    Euler,
    Rk4,
    SemiImplicit,
}

#[derive(Clone, Debug)]
pub struct FlowParams {
    pub a: f64,
    pub b: f64,
    pub dt: f64,
    pub t_end: f64,
    pub u_scheme: UScheme,
    pub f_scheme: FScheme,
    /// Freeze u at 0: the classic harmonic map heat flow, used as a baseline.
    pub baseline_classic: bool,
    /// Renormalize the map after each (sub)step; on by default.
    pub project: bool,
    pub on_manifold_tol: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            a: 1.0,
            b: 1.0,
            dt: 1e-3,
            t_end: 1.0,
            u_scheme: UScheme::ClosedForm,
            f_scheme: FScheme::Euler,
            baseline_classic: false,
            project: true,
            on_manifold_tol: 1e-9,
        }
    }
}

impl FlowParams {
    /// Check parameter sanity; returns human-readable warnings for choices
    /// that are legal but undermine the attenuation mechanism.
    pub fn validate(&self, target: &TargetManifold) -> Result<Vec<String>, ChfError> {
        if !(self.a > 0.0 && self.a.is_finite()) || !(self.b > 0.0 && self.b.is_finite()) {
            return Err(ChfError::Config(format!(
                "coefficients must be positive, got a = {}, b = {}",
                self.a, self.b
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ChfError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(ChfError::Config(format!(
                "t_end must be nonnegative, got {}",
                self.t_end
            )));
        }
        if !(self.on_manifold_tol > 0.0) {
            return Err(ChfError::Config(
                "on_manifold_tol must be positive".into(),
            ));
        }
        let mut warnings = Vec::new();
        let cn = target.curvature_bound();
        if self.b < cn * cn {
            warnings.push(format!(
                "b = {} is below the squared curvature bound {}; the metric response may be \
                 too weak to attenuate concentrating energy",
                self.b,
                cn * cn
            ));
        }
        Ok(warnings)
    }

    /// Number of steps needed to reach t_end.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Running trapezoidal quadrature of e^{2as} |df|^2, kept per grid point.
#[derive(Clone, Debug)]
pub struct HistoryAccumulator {
    /// J(t) = int_0^t e^{2as} |df|^2 ds; nonnegative and nondecreasing.
    pub j: ScalarField,
    /// Integrand at the current time, carried so each step adds one trapezoid.
    pub last_integrand: ScalarField,
}

impl HistoryAccumulator {
    /// Start at t = 0, where the weight e^{2as} is 1.
    pub fn new(density0: &ScalarField) -> Self {
        let mut j = density0.clone();
        for v in j.data.iter_mut() {
            *v = 0.0;
        }
        HistoryAccumulator {
            j,
            last_integrand: density0.clone(),
        }
    }

    pub fn advance(&mut self, dt: f64, new_integrand: &ScalarField) {
        let half = 0.5 * dt;
        for ((j, last), new) in self
            .j
            .data
            .iter_mut()
            .zip(&self.last_integrand.data)
            .zip(&new_integrand.data)
        {
            *j += half * (*last + *new);
        }
        self.last_integrand = new_integrand.clone();
    }
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub f: MapField,
    /// Log conformal factor; the metric is e^{2u} g0.
    pub u: ScalarField,
    pub hist: HistoryAccumulator,
    pub t: f64,
    pub step: usize,
}

impl FlowState {
    pub fn new(f0: MapField, geom: &GridGeometry) -> Result<Self, ChfError> {
        if f0.nx != geom.nx || f0.ny != geom.ny {
            return Err(ChfError::Config(format!(
                "initial map is {}x{}, grid is {}x{}",
                f0.nx, f0.ny, geom.nx, geom.ny
            )));
        }
        let rho = energy_density(&f0, geom)?;
        Ok(FlowState {
            f: f0,
            u: ScalarField::zeros(geom),
            hist: HistoryAccumulator::new(&rho),
            t: 0.0,
            step: 0,
        })
    }

    /// Rebuild a state from snapshot data (f, u, J at time t). The trapezoid
    /// carry-over is reconstructed from the current density, which is exactly
    /// what the writing run held at that time.
    pub fn from_parts(
        f: MapField,
        u: ScalarField,
        j: ScalarField,
        t: f64,
        step: usize,
        a: f64,
        geom: &GridGeometry,
    ) -> Result<Self, ChfError> {
        let rho = energy_density(&f, geom)?;
        let w = (2.0 * a * t).exp();
        let mut last = rho;
        for v in last.data.iter_mut() {
            *v *= w;
        }
        Ok(FlowState {
            f,
            u,
            hist: HistoryAccumulator { j, last_integrand: last },
            t,
            step,
        })
    }

    pub fn e2u(&self) -> ScalarField {
        let mut w = self.u.clone();
        w.data.par_iter_mut().for_each(|v| *v = (2.0 * *v).exp());
        w
    }

    pub fn e_minus_2u(&self) -> ScalarField {
        let mut w = self.u.clone();
        w.data.par_iter_mut().for_each(|v| *v = (-2.0 * *v).exp());
        w
    }
}

/// u from the closed form, evaluated in log space:
/// u = -a t + ln(1 + 2 b J) / 2.
pub fn u_closed_form(j: &ScalarField, t: f64, a: f64, b: f64) -> ScalarField {
    let mut u = j.clone();
    u.data
        .par_iter_mut()
        .for_each(|v| *v = -a * t + 0.5 * (2.0 * b * *v).ln_1p());
    u
}

/// One classical RK4 step of the pointwise ODE u' = b e^{-2u} d - a with the
/// density d frozen over the step.
pub fn step_u_ode(u: &ScalarField, density: &ScalarField, dt: f64, a: f64, b: f64) -> ScalarField {
    let mut out = u.clone();
    out.data
        .par_iter_mut()
        .zip(&density.data)
        .for_each(|(uv, &d)| {
            let g = |w: f64| b * (-2.0 * w).exp() * d - a;
            let k1 = g(*uv);
            let k2 = g(*uv + 0.5 * dt * k1);
            let k3 = g(*uv + 0.5 * dt * k2);
            let k4 = g(*uv + dt * k3);
            *uv += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        });
    out
}

/// Largest explicit time step the 5-point stencil tolerates for the current u.
pub fn stable_dt_bound(u: &ScalarField, geom: &GridGeometry) -> f64 {
    let mut max_w: f64 = 0.0;
    for &uv in &u.data {
        max_w = max_w.max((-2.0 * uv).exp());
    }
    let h = geom.hx.min(geom.hy);
    STABILITY_SAFETY * h * h / (4.0 * max_w)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StepInfo {
    /// dt exceeded the explicit stability bound this step.
    pub guard_exceeded: bool,
    pub cg_iters: usize,
}

fn axpy_map(f: &MapField, coeff: &ScalarField, dt: f64, v: &MapField, g: &GridGeometry) -> MapField {
    // f + dt * coeff .* v, componentwise in v with the scalar coeff per point
    let l = f.l;
    let ny = g.ny;
    let mut out = f.clone();
    let cd = &coeff.data;
    let vd = &v.data;
    out.data
        .par_chunks_mut(ny * l)
        .enumerate()
        .for_each(|(i, row)| {
            for j in 0..ny {
                let id = i * ny + j;
                for c in 0..l {
                    row[j * l + c] += dt * cd[id] * vd[id * l + c];
                }
            }
        });
    out
}

fn check_finite(state: &FlowState, step: usize, t: f64) -> Result<(), ChfError> {
    if !state.f.is_finite() {
        return Err(ChfError::Divergence {
            step,
            t,
            what: "non-finite value in the map".into(),
        });
    }
    if !state.u.is_finite() {
        return Err(ChfError::Divergence {
            step,
            t,
            what: "non-finite value in the conformal factor".into(),
        });
    }
    if !state.hist.j.is_finite() {
        return Err(ChfError::Divergence {
            step,
            t,
            what: "non-finite value in the history integral".into(),
        });
    }
    Ok(())
}

/// Advance the state by one step of params.dt. Returns per-step bookkeeping.
pub fn step(
    state: &mut FlowState,
    params: &FlowParams,
    geom: &GridGeometry,
    target: &TargetManifold,
) -> Result<StepInfo, ChfError> {
    let dt = params.dt;
    let mut info = StepInfo::default();
    if matches!(params.f_scheme, FScheme::Euler | FScheme::Rk4)
        && dt > stable_dt_bound(&state.u, geom)
    {
        info.guard_exceeded = true;
    }

    let w = state.e_minus_2u();
    let next_step = state.step + 1;
    let t_new = state.t + dt;

    // velocity field of the map equation at the frozen u
    let velocity = |f: &MapField| -> Result<MapField, ChfError> {
        let tau = tension_field(f, target, geom, params.on_manifold_tol)?;
        let mut v = tau;
        let ny = geom.ny;
        let l = v.l;
        let wd = &w.data;
        v.data
            .par_chunks_mut(ny * l)
            .enumerate()
            .for_each(|(i, row)| {
                for j in 0..ny {
                    let scale = wd[i * ny + j];
                    for c in 0..l {
                        row[j * l + c] *= scale;
                    }
                }
            });
        Ok(v)
    };

    let maybe_project = |f: &mut MapField| -> Result<(), ChfError> {
        if params.project {
            project_to_target(f, target)?;
        }
        Ok(())
    };

    let ones = ScalarField::constant(geom, 1.0);
    let mut f_new = match params.f_scheme {
        FScheme::Euler => {
            let v = velocity(&state.f)?;
            let mut f = axpy_map(&state.f, &ones, dt, &v, geom);
            maybe_project(&mut f)?;
            f
        }
        FScheme::Rk4 => {
            let k1 = velocity(&state.f)?;
            let mut y2 = axpy_map(&state.f, &ones, 0.5 * dt, &k1, geom);
            maybe_project(&mut y2)?;
            let k2 = velocity(&y2)?;
            let mut y3 = axpy_map(&state.f, &ones, 0.5 * dt, &k2, geom);
            maybe_project(&mut y3)?;
            let k3 = velocity(&y3)?;
            let mut y4 = axpy_map(&state.f, &ones, dt, &k3, geom);
            maybe_project(&mut y4)?;
            let k4 = velocity(&y4)?;
            let mut f = state.f.clone();
            let ny = geom.ny;
            let l = f.l;
            let sixth = dt / 6.0;
            f.data
                .par_chunks_mut(ny * l)
                .enumerate()
                .for_each(|(i, row)| {
                    for j in 0..ny {
                        let id = i * ny + j;
                        for c in 0..l {
                            let k = id * l + c;
                            row[j * l + c] +=
                                sixth * (k1.data[k] + 2.0 * k2.data[k] + 2.0 * k3.data[k] + k4.data[k]);
                        }
                    }
                });
            maybe_project(&mut f)?;
            f
        }
        FScheme::SemiImplicit => {
            // (e^{2u} - dt Delta) f_new = e^{2u} f + dt |df|^2 f  (curvature term explicit)
            let e2u = state.e2u();
            let rho = energy_density(&state.f, geom)?;
            let ny = geom.ny;
            let l = state.f.l;
            let mut rhs = state.f.clone();
            let sphere = target.is_sphere();
            rhs.data
                .par_chunks_mut(ny * l)
                .enumerate()
                .for_each(|(i, row)| {
                    for j in 0..ny {
                        let id = i * ny + j;
                        let scale = if sphere {
                            e2u.data[id] + dt * rho.data[id]
                        } else {
                            e2u.data[id]
                        };
                        for c in 0..l {
                            row[j * l + c] *= scale;
                        }
                    }
                });
            let (mut f, iters) = cg::solve_screened(
                &e2u,
                dt,
                &rhs,
                Some(&state.f),
                geom,
                cg::CG_REL_TOL,
                cg::default_max_iter(geom),
            )?;
            info.cg_iters = iters;
            maybe_project(&mut f)?;
            f
        }
    };

    if !f_new.is_finite() {
        return Err(ChfError::Divergence {
            step: next_step,
            t: t_new,
            what: "non-finite value in the map".into(),
        });
    }

    // history quadrature uses the updated density at the new time
    let rho_old = state.hist.last_integrand.clone(); // e^{2at} |df|^2 at the old time
    let rho_new = energy_density(&f_new, geom)?;
    let weight = (2.0 * params.a * t_new).exp();
    let mut integrand_new = rho_new.clone();
    for v in integrand_new.data.iter_mut() {
        *v *= weight;
    }
    state.hist.advance(dt, &integrand_new);

    if !params.baseline_classic {
        state.u = match params.u_scheme {
            UScheme::ClosedForm => u_closed_form(&state.hist.j, t_new, params.a, params.b),
            UScheme::DirectOde => {
                // density frozen at the step start: recover |df|^2(t) from the
                // carried integrand e^{2at} |df|^2
                let mut d = rho_old;
                let unweight = (-2.0 * params.a * state.t).exp();
                for v in d.data.iter_mut() {
                    *v *= unweight;
                }
                step_u_ode(&state.u, &d, dt, params.a, params.b)
            }
        };
    }

    std::mem::swap(&mut state.f, &mut f_new);
    state.t = t_new;
    state.step = next_step;
    check_finite(state, next_step, t_new)?;
    Ok(info)
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunOutcome {
    Completed,
    /// The run blew up; the observer has everything recorded before this step.
    Diverged { step: usize, t: f64, what: String },
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub steps_done: usize,
    pub guard_violations: usize,
    pub max_cg_iters: usize,
}

/// March the state to t_end, invoking the observer on the initial state, every
/// `cadence` steps, and on the final state. Numerical blow-ups (divergence,
/// degenerate projection, off-manifold corruption) end the run with a
/// `Diverged` outcome so partial results survive; configuration and solver
/// failures propagate as errors.
pub fn run(
    state: &mut FlowState,
    params: &FlowParams,
    geom: &GridGeometry,
    target: &TargetManifold,
    cadence: usize,
    mut observe: impl FnMut(&FlowState),
) -> Result<RunReport, ChfError> {
    let warnings = params.validate(target)?;
    for wmsg in &warnings {
        eprintln!("warning: {wmsg}");
    }
    let cadence = cadence.max(1);
    let n_steps = params.n_steps();
    let mut report = RunReport {
        outcome: RunOutcome::Completed,
        steps_done: 0,
        guard_violations: 0,
        max_cg_iters: 0,
    };
    observe(state);
    let explicit = matches!(params.f_scheme, FScheme::Euler | FScheme::Rk4);
    for k in 1..=n_steps {
        // guard bookkeeping happens before the step so the violation that
        // kills a run is still counted
        if explicit {
            let bound = stable_dt_bound(&state.u, geom);
            if params.dt > bound {
                if report.guard_violations == 0 {
                    eprintln!(
                        "warning: dt = {} exceeds the explicit stability bound {bound:.3e} at step {k}",
                        params.dt
                    );
                }
                report.guard_violations += 1;
            }
        }
        match step(state, params, geom, target) {
            Ok(info) => {
                report.max_cg_iters = report.max_cg_iters.max(info.cg_iters);
                report.steps_done = k;
                if k % cadence == 0 || k == n_steps {
                    observe(state);
                }
            }
            Err(
                e @ (ChfError::Divergence { .. }
                | ChfError::ProjectionDegenerate { .. }
                | ChfError::StateCorruption(_)),
            ) => {
                let (step_idx, t) = match &e {
                    ChfError::Divergence { step, t, .. } => (*step, *t),
                    _ => (k, state.t + params.dt),
                };
                report.outcome = RunOutcome::Diverged {
                    step: step_idx,
                    t,
                    what: e.to_string(),
                };
                return Ok(report);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}
