//! Short-time solutions by contraction mapping.
//!
//! On a fixed horizon [0, T] the coupled system is the fixed point of the map
//! S(f, u) = (S1(f, u), S2(f, u)):
//!
//!   S1: solve the linear parabolic problem
//!       (d/dt - e^{-2u} Delta) h = e^{-2u} |df|^2 f,   h(0) = f0,
//!       discretized by implicit Euler with the coefficient and source frozen
//!       per step, each step a matrix-free CG solve;
//!   S2: integrate v_t = b |df|^2 e^{-2u} - a, v(0) = 0, by trapezoid.
//!
//! Iterating from (plain heat flow of f0, u = 0) contracts in the space-time
//! L^2 product norm; the iteration history (distances, ratios) is reported so
//! the contraction rate can be inspected rather than assumed. No projection is
//! applied inside the iteration; callers may project the converged map frames
//! before handing them to anything that expects sphere values.

use crate::cg;
use crate::error::ChfError;
use crate::geometry::{
    energy_density, project_to_target, GridGeometry, MapField, ScalarField, TargetManifold,
};
use rayon::prelude::*;

/// Map-valued trajectory on the uniform time grid t_k = k dt, k = 0..=nt.
#[derive(Clone, Debug)]
pub struct SpaceTimeMap {
    pub frames: Vec<MapField>,
    pub dt: f64,
}

/// Scalar trajectory on the same time grid.
#[derive(Clone, Debug)]
pub struct SpaceTimeScalar {
    pub frames: Vec<ScalarField>,
    pub dt: f64,
}

impl SpaceTimeScalar {
    pub fn zeros(g: &GridGeometry, nt: usize, dt: f64) -> Self {
        SpaceTimeScalar {
            frames: vec![ScalarField::zeros(g); nt + 1],
            dt,
        }
    }
}

/// Discrete space-time L^2 norm: cell-area weights in space, trapezoid weights
/// in time (so a field that is 1 on a unit-area domain over T = 1 has norm 1).
pub fn spacetime_l2_norm_map(f: &SpaceTimeMap, g: &GridGeometry) -> f64 {
    let nt = f.frames.len() - 1;
    let mut total = 0.0;
    for (k, frame) in f.frames.iter().enumerate() {
        let w = if k == 0 || k == nt { 0.5 } else { 1.0 };
        let mut s = 0.0;
        for v in &frame.data {
            s += v * v;
        }
        total += w * f.dt * s;
    }
    (total * g.cell_area()).sqrt()
}

pub fn spacetime_l2_norm_scalar(u: &SpaceTimeScalar, g: &GridGeometry) -> f64 {
    let nt = u.frames.len() - 1;
    let mut total = 0.0;
    for (k, frame) in u.frames.iter().enumerate() {
        let w = if k == 0 || k == nt { 0.5 } else { 1.0 };
        let mut s = 0.0;
        for v in &frame.data {
            s += v * v;
        }
        total += w * u.dt * s;
    }
    (total * g.cell_area()).sqrt()
}

/// Distance between iterate pairs in the product norm.
fn pair_distance(
    fa: &SpaceTimeMap,
    fb: &SpaceTimeMap,
    ua: &SpaceTimeScalar,
    ub: &SpaceTimeScalar,
    g: &GridGeometry,
) -> f64 {
    let nt = fa.frames.len() - 1;
    let mut total = 0.0;
    for k in 0..=nt {
        let w = if k == 0 || k == nt { 0.5 } else { 1.0 };
        let mut s = 0.0;
        for (x, y) in fa.frames[k].data.iter().zip(&fb.frames[k].data) {
            let d = x - y;
            s += d * d;
        }
        for (x, y) in ua.frames[k].data.iter().zip(&ub.frames[k].data) {
            let d = x - y;
            s += d * d;
        }
        total += w * fa.dt * s;
    }
    (total * g.cell_area()).sqrt()
}

fn e2u_of(u: &ScalarField) -> ScalarField {
    let mut w = u.clone();
    w.data.par_iter_mut().for_each(|v| *v = (2.0 * *v).exp());
    w
}

/// Plain heat flow of f0 by implicit Euler: the iteration's starting map.
pub fn heat_solve(
    f0: &MapField,
    nt: usize,
    dt: f64,
    g: &GridGeometry,
) -> Result<SpaceTimeMap, ChfError> {
    let ones = ScalarField::constant(g, 1.0);
    let mut frames = Vec::with_capacity(nt + 1);
    frames.push(f0.clone());
    for k in 0..nt {
        let prev = &frames[k];
        let (h, _) = cg::solve_screened(
            &ones,
            dt,
            prev,
            Some(prev),
            g,
            cg::CG_REL_TOL,
            cg::default_max_iter(g),
        )?;
        frames.push(h);
    }
    Ok(SpaceTimeMap { frames, dt })
}

/// S1: linear parabolic solve against the frozen trajectory (f, u).
pub fn s1_solve(
    f: &SpaceTimeMap,
    u: &SpaceTimeScalar,
    f0: &MapField,
    g: &GridGeometry,
    target: &TargetManifold,
) -> Result<SpaceTimeMap, ChfError> {
    let nt = f.frames.len() - 1;
    if u.frames.len() != nt + 1 {
        return Err(ChfError::Config(format!(
            "trajectory lengths differ: {} map frames, {} factor frames",
            f.frames.len(),
            u.frames.len()
        )));
    }
    let dt = f.dt;
    let sphere = target.is_sphere();
    let mut frames = Vec::with_capacity(nt + 1);
    frames.push(f0.clone());
    for k in 0..nt {
        // coefficients and source at the step start t_k
        let e2u = e2u_of(&u.frames[k]);
        let l = f0.l;
        let ny = g.ny;
        let mut rhs = frames[k].clone();
        if sphere {
            let rho = energy_density(&f.frames[k], g)?;
            let fk = &f.frames[k].data;
            rhs.data
                .par_chunks_mut(ny * l)
                .enumerate()
                .for_each(|(i, row)| {
                    for j in 0..ny {
                        let id = i * ny + j;
                        for c in 0..l {
                            row[j * l + c] =
                                e2u.data[id] * row[j * l + c] + dt * rho.data[id] * fk[id * l + c];
                        }
                    }
                });
        } else {
            rhs.data
                .par_chunks_mut(ny * l)
                .enumerate()
                .for_each(|(i, row)| {
                    for j in 0..ny {
                        let id = i * ny + j;
                        for c in 0..l {
                            row[j * l + c] *= e2u.data[id];
                        }
                    }
                });
        }
        let (h, _) = cg::solve_screened(
            &e2u,
            dt,
            &rhs,
            Some(&frames[k]),
            g,
            cg::CG_REL_TOL,
            cg::default_max_iter(g),
        )?;
        frames.push(h);
    }
    Ok(SpaceTimeMap { frames, dt })
}

/// S2: cumulative trapezoid of b |df|^2 e^{-2u} - a, starting from v(0) = 0.
pub fn s2_solve(
    f: &SpaceTimeMap,
    u: &SpaceTimeScalar,
    a: f64,
    b: f64,
    g: &GridGeometry,
) -> Result<SpaceTimeScalar, ChfError> {
    let nt = f.frames.len() - 1;
    if u.frames.len() != nt + 1 {
        return Err(ChfError::Config(
            "trajectory lengths differ between map and factor".into(),
        ));
    }
    let dt = f.dt;
    let mut integrand = Vec::with_capacity(nt + 1);
    for k in 0..=nt {
        let rho = energy_density(&f.frames[k], g)?;
        let mut w = rho;
        for (v, uv) in w.data.iter_mut().zip(&u.frames[k].data) {
            *v = b * *v * (-2.0 * uv).exp() - a;
        }
        integrand.push(w);
    }
    let mut frames = Vec::with_capacity(nt + 1);
    frames.push(ScalarField::zeros(g));
    for k in 0..nt {
        let mut next = frames[k].clone();
        for ((nv, p), q) in next
            .data
            .iter_mut()
            .zip(&integrand[k].data)
            .zip(&integrand[k + 1].data)
        {
            *nv += 0.5 * dt * (p + q);
        }
        frames.push(next);
    }
    Ok(SpaceTimeScalar { frames, dt })
}

#[derive(Clone, Debug)]
pub struct PicardReport {
    /// d_m = distance between consecutive iterate pairs, in iteration order.
    pub distances: Vec<f64>,
    /// r_m = d_m / d_{m-1}.
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub tol: f64,
}

impl PicardReport {
    pub fn iterations(&self) -> usize {
        self.distances.len()
    }

    pub fn max_ratio(&self) -> Option<f64> {
        self.ratios.iter().copied().fold(None, |m, r| {
            Some(match m {
                None => r,
                Some(x) => x.max(r),
            })
        })
    }
}

pub struct PicardSolution {
    pub f: SpaceTimeMap,
    pub u: SpaceTimeScalar,
    pub report: PicardReport,
}

/// Iterate S from (heat flow of f0, u = 0) until consecutive iterates are
/// within tol in the product norm, or max_iter iterations have run.
pub fn picard_iterate(
    f0: &MapField,
    nt: usize,
    dt: f64,
    a: f64,
    b: f64,
    g: &GridGeometry,
    target: &TargetManifold,
    tol: f64,
    max_iter: usize,
) -> Result<PicardSolution, ChfError> {
    if nt == 0 {
        return Err(ChfError::Config("horizon must cover at least one step".into()));
    }
    if !(tol > 0.0) {
        return Err(ChfError::Config("tolerance must be positive".into()));
    }
    let mut f = heat_solve(f0, nt, dt, g)?;
    let mut u = SpaceTimeScalar::zeros(g, nt, dt);
    let mut report = PicardReport {
        distances: Vec::new(),
        ratios: Vec::new(),
        converged: false,
        tol,
    };
    for _ in 0..max_iter {
        let f_next = s1_solve(&f, &u, f0, g, target)?;
        let u_next = s2_solve(&f, &u, a, b, g)?;
        let d = pair_distance(&f_next, &f, &u_next, &u, g);
        if let Some(prev) = report.distances.last() {
            report.ratios.push(d / prev);
        }
        report.distances.push(d);
        f = f_next;
        u = u_next;
        if d <= tol {
            report.converged = true;
            break;
        }
    }
    Ok(PicardSolution { f, u, report })
}

/// Project every frame of a converged map onto the target, for downstream
/// consumers that expect sphere values.
pub fn project_frames(f: &mut SpaceTimeMap, target: &TargetManifold) -> Result<(), ChfError> {
    for frame in f.frames.iter_mut() {
        project_to_target(frame, target)?;
    }
    Ok(())
}
