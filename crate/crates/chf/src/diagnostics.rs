//! Energy, volume, and concentration diagnostics.
//!
//! Everything here is computed with respect to the flat background metric; the
//! evolving metric enters only through explicit e^{2u} weights. Local
//! quantities use a C^1 piecewise-cubic radial cutoff phi that is 1 on the
//! ball B_r, vanishes outside B_2r, and has |phi'| <= 3/(2r), comfortably
//! inside the 4/r budget the energy estimates spend.

use crate::error::ChfError;
use crate::flow::FlowState;
use crate::geometry::{
    energy_density, integral, tension_field, GridGeometry, MapField, ScalarField, TargetManifold,
};

/// Ball on the torus: a center grid node plus a physical radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallRegion {
    pub ci: usize,
    pub cj: usize,
    pub r: f64,
}

impl BallRegion {
    /// Snap a physical center to the nearest grid node.
    pub fn at_point(g: &GridGeometry, x: f64, y: f64, r: f64) -> Result<Self, ChfError> {
        let ci = (x.rem_euclid(g.lx) / g.hx).round() as usize % g.nx;
        let cj = (y.rem_euclid(g.ly) / g.hy).round() as usize % g.ny;
        let ball = BallRegion { ci, cj, r };
        ball.validate(g)?;
        Ok(ball)
    }

    pub fn center(&self, g: &GridGeometry) -> (f64, f64) {
        g.point(self.ci, self.cj)
    }

    /// The support B_2r must embed in the torus: 2r below half the injectivity
    /// span min(lx, ly)/2.
    pub fn validate(&self, g: &GridGeometry) -> Result<(), ChfError> {
        if !(self.r > 0.0) {
            return Err(ChfError::Config(format!("ball radius must be positive, got {}", self.r)));
        }
        if 2.0 * self.r >= 0.5 * g.lx.min(g.ly) {
            return Err(ChfError::Config(format!(
                "ball radius {} too large: the support of the cutoff (radius {}) must fit in \
                 half the torus span {}",
                self.r,
                2.0 * self.r,
                0.5 * g.lx.min(g.ly)
            )));
        }
        if self.ci >= g.nx || self.cj >= g.ny {
            return Err(ChfError::Config("ball center outside the grid".into()));
        }
        Ok(())
    }
}

/// Radial cutoff profile: 1 for d <= r, 0 for d >= 2r, cubic blend between.
pub fn cutoff_profile(d: f64, r: f64) -> f64 {
    if d <= r {
        1.0
    } else if d >= 2.0 * r {
        0.0
    } else {
        let s = (d - r) / r;
        1.0 - s * s * (3.0 - 2.0 * s)
    }
}

/// phi evaluated over the grid for a ball, using torus distance to the center.
pub fn cutoff_field(ball: &BallRegion, g: &GridGeometry) -> ScalarField {
    let c = ball.center(g);
    ScalarField::from_fn(g, |x, y| cutoff_profile(g.torus_distance((x, y), c), ball.r))
}

/// Total Dirichlet energy (conformally invariant, so no metric weight).
pub fn energy(f: &MapField, g: &GridGeometry) -> Result<f64, ChfError> {
    Ok(0.5 * integral(&energy_density(f, g)?, g))
}

/// Volume of the evolving metric: integral of e^{2u}.
pub fn volume(u: &ScalarField, g: &GridGeometry) -> f64 {
    let mut s = 0.0;
    for &v in &u.data {
        s += (2.0 * v).exp();
    }
    s * g.cell_area()
}

/// Energy weighted by the squared cutoff of a ball.
pub fn local_energy(f: &MapField, ball: &BallRegion, g: &GridGeometry) -> Result<f64, ChfError> {
    ball.validate(g)?;
    let rho = energy_density(f, g)?;
    let phi = cutoff_field(ball, g);
    let mut s = 0.0;
    for (d, p) in rho.data.iter().zip(&phi.data) {
        s += d * p * p;
    }
    Ok(0.5 * s * g.cell_area())
}

/// Instantaneous dissipation integral e^{-2u} |tau|^2 summed over the grid.
pub fn dissipation_integral(
    f: &MapField,
    u: &ScalarField,
    target: &TargetManifold,
    g: &GridGeometry,
    on_manifold_tol: f64,
) -> Result<f64, ChfError> {
    let tau = tension_field(f, target, g, on_manifold_tol)?;
    let l = tau.l;
    let mut s = 0.0;
    for id in 0..g.ncells() {
        let mut n2 = 0.0;
        for c in 0..l {
            let v = tau.data[id * l + c];
            n2 += v * v;
        }
        s += (-2.0 * u.data[id]).exp() * n2;
    }
    Ok(s * g.cell_area())
}

/// Metric-weighted moment of the map velocity: sum of e^{2u} |f_t|^p phi^2
/// with f_t = e^{-2u} tau(f), over the whole torus when no ball is given.
/// For p = 2 and no ball this reproduces the dissipation integral exactly.
pub fn weighted_ft_moment(
    f: &MapField,
    u: &ScalarField,
    p: u32,
    ball: Option<&BallRegion>,
    target: &TargetManifold,
    g: &GridGeometry,
    on_manifold_tol: f64,
) -> Result<f64, ChfError> {
    if p == 0 {
        return Err(ChfError::Config("moment order must be at least 1".into()));
    }
    let tau = tension_field(f, target, g, on_manifold_tol)?;
    let phi = ball.map(|b| cutoff_field(b, g));
    let l = tau.l;
    let mut s = 0.0;
    for id in 0..g.ncells() {
        let w = (-2.0 * u.data[id]).exp();
        let mut n2 = 0.0;
        for c in 0..l {
            let v = w * tau.data[id * l + c];
            n2 += v * v;
        }
        let pow = if p % 2 == 0 {
            n2.powi((p / 2) as i32)
        } else {
            n2.sqrt().powi(p as i32)
        };
        let cut = match &phi {
            Some(field) => {
                let c = field.data[id];
                c * c
            }
            None => 1.0,
        };
        s += (2.0 * u.data[id]).exp() * pow * cut;
    }
    Ok(s * g.cell_area())
}

/// One row of the time series all checks run on.
#[derive(Clone, Debug)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub energy: f64,
    pub volume: f64,
    /// e^{-2u} |tau|^2 integral at this time.
    pub dissipation: f64,
    /// |dE/dt + dissipation| across the previous record interval; 0 on the first row.
    pub dissipation_residual: f64,
    pub sup_density: f64,
    /// sup of the metric density e^{-2u} |df|^2.
    pub sup_density_g: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub ft2_weighted: f64,
    pub ft4_weighted: f64,
    /// Running volume-law deviation |V - e^{-2at}(V0 + 4b quad)|/V0 up to here.
    pub volume_law_dev: f64,
    /// e^{-2at} V0 + (2b/a) E0 - V; nonnegative when the volume bound holds.
    pub volume_bound_margin: f64,
    /// Local energies of the configured balls, in configuration order.
    pub local_energies: Vec<f64>,
}

/// Build the instantaneous part of a record (series fields are filled by the
/// checker below).
pub fn observe_state(
    state: &FlowState,
    balls: &[BallRegion],
    target: &TargetManifold,
    g: &GridGeometry,
    on_manifold_tol: f64,
) -> Result<DiagnosticsRecord, ChfError> {
    let rho = energy_density(&state.f, g)?;
    let e = 0.5 * integral(&rho, g);
    let v = volume(&state.u, g);
    let diss = dissipation_integral(&state.f, &state.u, target, g, on_manifold_tol)?;
    let mut sup_density: f64 = 0.0;
    let mut sup_density_g: f64 = 0.0;
    for (d, uv) in rho.data.iter().zip(&state.u.data) {
        sup_density = sup_density.max(*d);
        sup_density_g = sup_density_g.max(*d * (-2.0 * uv).exp());
    }
    let ft2 = weighted_ft_moment(&state.f, &state.u, 2, None, target, g, on_manifold_tol)?;
    let ft4 = weighted_ft_moment(&state.f, &state.u, 4, None, target, g, on_manifold_tol)?;
    let mut local = Vec::with_capacity(balls.len());
    for ball in balls {
        let phi = cutoff_field(ball, g);
        let mut s = 0.0;
        for (d, p) in rho.data.iter().zip(&phi.data) {
            s += d * p * p;
        }
        local.push(0.5 * s * g.cell_area());
    }
    Ok(DiagnosticsRecord {
        t: state.t,
        energy: e,
        volume: v,
        dissipation: diss,
        dissipation_residual: 0.0,
        sup_density,
        sup_density_g,
        min_u: state.u.min(),
        max_u: state.u.max(),
        ft2_weighted: ft2,
        ft4_weighted: ft4,
        volume_law_dev: 0.0,
        volume_bound_margin: 0.0,
        local_energies: local,
    })
}

/// Residual of the energy identity dE/dt = -dissipation between two records:
/// centered difference across the interval against the trapezoid of the
/// endpoint dissipation integrals.
pub fn dissipation_residual(prev: &DiagnosticsRecord, next: &DiagnosticsRecord) -> f64 {
    let dt = next.t - prev.t;
    ((next.energy - prev.energy) / dt + 0.5 * (prev.dissipation + next.dissipation)).abs()
}

/// Streaming checker for the series identities: volume law, volume bound, and
/// the dissipation residual. Push records in time order; each push fills the
/// series fields of the record.
#[derive(Clone, Debug)]
pub struct SeriesChecker {
    pub a: f64,
    pub b: f64,
    v0: Option<f64>,
    e0: Option<f64>,
    /// trapezoid of e^{2as} E(s) over the pushed records
    quad: f64,
    prev: Option<DiagnosticsRecord>,
    pub max_law_dev: f64,
    pub min_bound_margin: f64,
    pub max_dissipation_residual: f64,
}

impl SeriesChecker {
    pub fn new(a: f64, b: f64) -> Self {
        SeriesChecker {
            a,
            b,
            v0: None,
            e0: None,
            quad: 0.0,
            prev: None,
            max_law_dev: 0.0,
            min_bound_margin: f64::INFINITY,
            max_dissipation_residual: 0.0,
        }
    }

    pub fn push(&mut self, rec: &mut DiagnosticsRecord) {
        let v0 = *self.v0.get_or_insert(rec.volume);
        let e0 = *self.e0.get_or_insert(rec.energy);
        if let Some(prev) = &self.prev {
            let g_prev = (2.0 * self.a * prev.t).exp() * prev.energy;
            let g_next = (2.0 * self.a * rec.t).exp() * rec.energy;
            self.quad += 0.5 * (rec.t - prev.t) * (g_prev + g_next);
            rec.dissipation_residual = dissipation_residual(prev, rec);
            self.max_dissipation_residual =
                self.max_dissipation_residual.max(rec.dissipation_residual);
        }
        let decay = (-2.0 * self.a * rec.t).exp();
        let law_rhs = decay * (v0 + 4.0 * self.b * self.quad);
        rec.volume_law_dev = (rec.volume - law_rhs).abs() / v0;
        self.max_law_dev = self.max_law_dev.max(rec.volume_law_dev);
        rec.volume_bound_margin = decay * v0 + 2.0 * self.b / self.a * e0 - rec.volume;
        self.min_bound_margin = self.min_bound_margin.min(rec.volume_bound_margin);
        self.prev = Some(rec.clone());
    }

    pub fn initial_volume(&self) -> Option<f64> {
        self.v0
    }

    pub fn initial_energy(&self) -> Option<f64> {
        self.e0
    }
}

/// Max deviation of the recorded volumes from the integrated volume law,
/// relative to V(0).
pub fn check_volume_law(records: &[DiagnosticsRecord], a: f64, b: f64) -> f64 {
    let mut checker = SeriesChecker::new(a, b);
    let mut worst = 0.0f64;
    for rec in records {
        let mut r = rec.clone();
        checker.push(&mut r);
        worst = worst.max(r.volume_law_dev);
    }
    worst
}

/// Margin of the localized energy inequality between two times of one ball:
/// (4^2 / 2 a r^2)(e^{2 a t2} - e^{2 a t1}) E0 - (LE(t2) - LE(t1)).
/// Nonnegative margins mean the estimate holds.
pub fn local_estimate_margin(
    le_t1: f64,
    le_t2: f64,
    t1: f64,
    t2: f64,
    a: f64,
    r: f64,
    e0: f64,
) -> Result<f64, ChfError> {
    if t2 <= t1 {
        return Err(ChfError::Config(format!(
            "time window must be increasing, got t1 = {t1}, t2 = {t2}"
        )));
    }
    let rhs = 16.0 / (2.0 * a * r * r) * ((2.0 * a * t2).exp() - (2.0 * a * t1).exp()) * e0;
    Ok(rhs - (le_t2 - le_t1))
}

/// A point where local energy at scale r stays above the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationEvent {
    pub t: f64,
    pub ci: usize,
    pub cj: usize,
    pub r: f64,
    pub local_energy: f64,
}

/// Scan a single map for concentration: local energy at the smallest radius on
/// a coarse center lattice, thresholded at eps1, with triggers within 2r of
/// each other merged transitively so each blob yields one event.
pub fn scan_concentration(
    f: &MapField,
    t: f64,
    eps1: f64,
    radii: &[f64],
    g: &GridGeometry,
) -> Result<Vec<ConcentrationEvent>, ChfError> {
    if radii.is_empty() {
        return Err(ChfError::Config("need at least one scan radius".into()));
    }
    let hmax = g.hx.max(g.hy);
    let mut r_min = f64::INFINITY;
    for &r in radii {
        if r < 4.0 * hmax {
            return Err(ChfError::Config(format!(
                "scan radius {r} under-resolved: need at least 4 h = {}",
                4.0 * hmax
            )));
        }
        r_min = r_min.min(r);
    }
    BallRegion { ci: 0, cj: 0, r: r_min }.validate(g)?;
    let rho = energy_density(f, g)?;
    // lattice spacing about r/2 so nothing slips between centers
    let si = ((0.5 * r_min / g.hx).floor() as usize).max(1);
    let sj = ((0.5 * r_min / g.hy).floor() as usize).max(1);
    // the cutoff vanishes outside 2r, so each candidate only sums its box
    // (whole axis if the box would wrap onto itself)
    let box_i = ((2.0 * r_min / g.hx).ceil() as usize) + 1;
    let box_j = ((2.0 * r_min / g.hy).ceil() as usize) + 1;
    let axis = |c: usize, half: usize, n: usize| -> Vec<usize> {
        if 2 * half + 1 >= n {
            (0..n).collect()
        } else {
            (0..=2 * half).map(|d| (c + n + d - half) % n).collect()
        }
    };
    let mut triggers: Vec<ConcentrationEvent> = Vec::new();
    for ci in (0..g.nx).step_by(si) {
        let is = axis(ci, box_i, g.nx);
        for cj in (0..g.ny).step_by(sj) {
            let js = axis(cj, box_j, g.ny);
            let c = g.point(ci, cj);
            let mut s = 0.0;
            for &i in &is {
                for &j in &js {
                    let p = cutoff_profile(g.torus_distance(g.point(i, j), c), r_min);
                    s += rho.data[g.idx(i, j)] * p * p;
                }
            }
            let le = 0.5 * s * g.cell_area();
            if le > eps1 {
                triggers.push(ConcentrationEvent {
                    t,
                    ci,
                    cj,
                    r: r_min,
                    local_energy: le,
                });
            }
        }
    }
    // transitively merge triggers within 2r of each other; one blob spread
    // over several lattice centers collapses to its strongest trigger
    let n = triggers.len();
    let mut root: Vec<usize> = (0..n).collect();
    fn find(root: &mut [usize], mut i: usize) -> usize {
        while root[i] != i {
            root[i] = root[root[i]];
            i = root[i];
        }
        i
    }
    for i in 0..n {
        let pi = g.point(triggers[i].ci, triggers[i].cj);
        for j in i + 1..n {
            let pj = g.point(triggers[j].ci, triggers[j].cj);
            if g.torus_distance(pi, pj) <= 2.0 * r_min {
                let (ri, rj) = (find(&mut root, i), find(&mut root, j));
                if ri != rj {
                    root[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut best: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = find(&mut root, i);
        let better = match best[r] {
            None => true,
            Some(k) => {
                let (a, b) = (&triggers[i], &triggers[k]);
                a.local_energy > b.local_energy
                    || (a.local_energy == b.local_energy && (a.ci, a.cj) < (b.ci, b.cj))
            }
        };
        if better {
            best[r] = Some(i);
        }
    }
    let mut events: Vec<ConcentrationEvent> =
        best.into_iter().flatten().map(|i| triggers[i].clone()).collect();
    events.sort_by(|x, y| (x.ci, x.cj).cmp(&(y.ci, y.cj)));
    Ok(events)
}

/// Deviation of the final state from the constant-density steady regime:
/// max |e^{2u} - (b/a)|df|^2| and, when the map is not essentially constant,
/// max |e^{-2u}|df|^2 - a/b| (None otherwise).
pub fn steady_state_check(
    f: &MapField,
    u: &ScalarField,
    a: f64,
    b: f64,
    g: &GridGeometry,
) -> Result<(f64, Option<f64>), ChfError> {
    let rho = energy_density(f, g)?;
    let mut dev_factor: f64 = 0.0;
    let mut dev_density: f64 = 0.0;
    let mut sup_rho: f64 = 0.0;
    for (d, uv) in rho.data.iter().zip(&u.data) {
        dev_factor = dev_factor.max(((2.0 * uv).exp() - b / a * d).abs());
        dev_density = dev_density.max((d * (-2.0 * uv).exp() - a / b).abs());
        sup_rho = sup_rho.max(*d);
    }
    let density_part = if sup_rho > 1e-8 { Some(dev_density) } else { None };
    Ok((dev_factor, density_part))
}
