//! Experiment drivers: full runs with on-disk artifacts, baseline comparison,
//! and the fixed-point iteration driver.
//!
//! All CSV numbers are written with 17 significant digits so files round-trip
//! doubles exactly; identical configs produce byte-identical artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::diagnostics::{
    energy, observe_state, scan_concentration, BallRegion, DiagnosticsRecord, SeriesChecker,
};
use crate::error::ChfError;
use crate::fixed_point::{picard_iterate, PicardSolution};
use crate::flow::{run, FlowParams, FlowState, RunOutcome, RunReport};
use crate::geometry::{energy_density, GridGeometry};
use crate::snapshot::{read_snapshot, write_snapshot};

pub const TIMESERIES_HEADER: &str = "t,E,V,dissipation_residual,sup_df2,sup_df2_g,min_u,max_u,\
                                     ft2_weighted,ft4_weighted,volume_law_dev,volume_bound_margin";
pub const EVENTS_HEADER: &str = "t,x,y,r,local_energy";

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

#[derive(Debug)]
pub struct ExperimentSummary {
    pub report: RunReport,
    pub records: usize,
    pub events: usize,
    pub final_t: f64,
    pub final_energy: f64,
    pub final_volume: f64,
}

impl ExperimentSummary {
    pub fn diverged(&self) -> bool {
        matches!(self.report.outcome, RunOutcome::Diverged { .. })
    }
}

pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentSummary, ChfError> {
    let f0 = cfg.scenario.build_initial_data(&cfg.geometry, &cfg.target)?;
    let mut state = FlowState::new(f0, &cfg.geometry)?;
    drive(cfg, &mut state, &cfg.params)
}

/// Continue a snapshotted run to the configured t_end with fresh artifacts.
pub fn resume_run(snapshot: &Path, cfg: &RunConfig) -> Result<ExperimentSummary, ChfError> {
    let snap = read_snapshot(snapshot)?;
    snap.expect_grid(&cfg.geometry)?;
    if snap.l != cfg.target.embedding_dim() {
        return Err(ChfError::Config(format!(
            "snapshot maps into {} components, target embeds in {}",
            snap.l,
            cfg.target.embedding_dim()
        )));
    }
    let step = (snap.t / cfg.params.dt).round() as usize;
    let mut state = FlowState::from_parts(
        snap.f,
        snap.u,
        snap.j,
        snap.t,
        step,
        cfg.params.a,
        &cfg.geometry,
    )?;
    let mut params = cfg.params.clone();
    params.t_end = (cfg.params.t_end - snap.t).max(0.0);
    drive(cfg, &mut state, &params)
}

/// Shared run core: march `state` for `params.t_end` more time, writing
/// timeseries.csv, events.csv and snapshots under the configured directory.
fn drive(
    cfg: &RunConfig,
    state: &mut FlowState,
    params: &FlowParams,
) -> Result<ExperimentSummary, ChfError> {
    let g = &cfg.geometry;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut balls = Vec::with_capacity(cfg.balls.len());
    for &(cx, cy, r) in &cfg.balls {
        balls.push(BallRegion::at_point(g, cx, cy, r)?);
    }
    let e_start = energy(&state.f, g)?;
    let eps1 = cfg.eps1.unwrap_or(e_start / 10.0);

    let mut ts = BufWriter::new(fs::File::create(cfg.output_dir.join("timeseries.csv"))?);
    let mut ev = BufWriter::new(fs::File::create(cfg.output_dir.join("events.csv"))?);
    writeln!(ts, "{TIMESERIES_HEADER}")?;
    writeln!(ev, "{EVENTS_HEADER}")?;

    let start_step = state.step;
    let final_step = start_step + params.n_steps();
    let obs_cadence = if cfg.snapshot_cadence > 0 {
        gcd(cfg.cadence, cfg.snapshot_cadence)
    } else {
        cfg.cadence
    };

    let mut checker = SeriesChecker::new(params.a, params.b);
    let mut records = 0usize;
    let mut events = 0usize;
    let mut last: Option<DiagnosticsRecord> = None;
    let mut observer_error: Option<ChfError> = None;

    let report = run(state, params, g, &cfg.target, obs_cadence, |s| {
        if observer_error.is_some() {
            return;
        }
        let mut work = || -> Result<(), ChfError> {
            if s.step % cfg.cadence == 0 || s.step == final_step {
                let mut rec = observe_state(s, &balls, &cfg.target, g, params.on_manifold_tol)?;
                checker.push(&mut rec);
                writeln!(
                    ts,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    num(rec.t),
                    num(rec.energy),
                    num(rec.volume),
                    num(rec.dissipation_residual),
                    num(rec.sup_density),
                    num(rec.sup_density_g),
                    num(rec.min_u),
                    num(rec.max_u),
                    num(rec.ft2_weighted),
                    num(rec.ft4_weighted),
                    num(rec.volume_law_dev),
                    num(rec.volume_bound_margin),
                )?;
                records += 1;
                let found = if cfg.radii.is_empty() {
                    Vec::new()
                } else {
                    scan_concentration(&s.f, s.t, eps1, &cfg.radii, g)?
                };
                for e in found {
                    let (x, y) = g.point(e.ci, e.cj);
                    writeln!(
                        ev,
                        "{},{},{},{},{}",
                        num(e.t),
                        num(x),
                        num(y),
                        num(e.r),
                        num(e.local_energy)
                    )?;
                    events += 1;
                }
                last = Some(rec);
            }
            if cfg.snapshot_cadence > 0 && s.step % cfg.snapshot_cadence == 0 && s.step > start_step
            {
                write_snapshot(&cfg.output_dir.join(format!("snap_{:08}.chf", s.step)), s)?;
            }
            Ok(())
        };
        if let Err(e) = work() {
            observer_error = Some(e);
        }
    })?;
    if let Some(e) = observer_error {
        return Err(e);
    }

    match &report.outcome {
        RunOutcome::Completed => {
            write_snapshot(&cfg.output_dir.join("final.chf"), state)?;
        }
        RunOutcome::Diverged { step, t, what } => {
            writeln!(ts, "# diverged at step {step}, t = {}: {what}", num(*t))?;
        }
    }
    ts.flush()?;
    ev.flush()?;

    let last = last.ok_or_else(|| ChfError::StateCorruption("run produced no records".into()))?;
    let summary = ExperimentSummary {
        report,
        records,
        events,
        final_t: last.t,
        final_energy: last.energy,
        final_volume: last.volume,
    };
    println!(
        "final: t = {:.6} E = {:.9} V = {:.9} events = {}{}",
        summary.final_t,
        summary.final_energy,
        summary.final_volume,
        summary.events,
        if summary.diverged() { " [diverged]" } else { "" }
    );
    Ok(summary)
}

#[derive(Debug)]
pub struct ComparisonReport {
    pub rows: usize,
    /// First recorded time the conformal run's metric density sup crossed the
    /// ceiling.
    pub conformal_crossing: Option<f64>,
    /// Same for the frozen-metric baseline's flat density sup.
    pub classic_crossing: Option<f64>,
    pub conformal_outcome: RunOutcome,
    pub classic_outcome: RunOutcome,
}

fn sup_metric_density(state: &FlowState, g: &GridGeometry) -> Result<f64, ChfError> {
    let rho = energy_density(&state.f, g)?;
    let mut sup: f64 = 0.0;
    for (d, uv) in rho.data.iter().zip(&state.u.data) {
        sup = sup.max(d * (-2.0 * uv).exp());
    }
    Ok(sup)
}

/// Run the conformal flow and the frozen-metric baseline from the same initial
/// map and compare their density histories against the configured ceiling.
pub fn compare_baseline(cfg: &RunConfig) -> Result<ComparisonReport, ChfError> {
    let g = &cfg.geometry;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut cmp = BufWriter::new(fs::File::create(cfg.output_dir.join("comparison.csv"))?);
    writeln!(cmp, "t,sup_df2_g_conformal,sup_df2_classic")?;

    if cfg.params.t_end == 0.0 {
        cmp.flush()?;
        println!("comparison: empty horizon, nothing to run");
        return Ok(ComparisonReport {
            rows: 0,
            conformal_crossing: None,
            classic_crossing: None,
            conformal_outcome: RunOutcome::Completed,
            classic_outcome: RunOutcome::Completed,
        });
    }

    let f0 = cfg.scenario.build_initial_data(g, &cfg.target)?;
    let mut series: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut outcomes = Vec::new();
    for classic in [false, true] {
        let mut params = cfg.params.clone();
        params.baseline_classic = classic;
        let mut state = FlowState::new(f0.clone(), g)?;
        let mut rows: Vec<(f64, f64)> = Vec::new();
        let mut observer_error: Option<ChfError> = None;
        let report = run(&mut state, &params, g, &cfg.target, cfg.cadence, |s| {
            if observer_error.is_some() {
                return;
            }
            match sup_metric_density(s, g) {
                Ok(sup) => rows.push((s.t, sup)),
                Err(e) => observer_error = Some(e),
            }
        })?;
        if let Some(e) = observer_error {
            return Err(e);
        }
        series.push(rows);
        outcomes.push(report.outcome);
    }

    let (conformal, classic) = (&series[0], &series[1]);
    let rows = conformal.len().max(classic.len());
    for k in 0..rows {
        let t = conformal.get(k).or_else(|| classic.get(k)).unwrap().0;
        let left = conformal.get(k).map(|&(_, s)| num(s)).unwrap_or_default();
        let right = classic.get(k).map(|&(_, s)| num(s)).unwrap_or_default();
        writeln!(cmp, "{},{},{}", num(t), left, right)?;
    }
    cmp.flush()?;

    let crossing = |rows: &[(f64, f64)]| {
        rows.iter()
            .find(|&&(_, sup)| sup > cfg.ceiling)
            .map(|&(t, _)| t)
    };
    let report = ComparisonReport {
        rows,
        conformal_crossing: crossing(conformal),
        classic_crossing: crossing(classic),
        conformal_outcome: outcomes[0].clone(),
        classic_outcome: outcomes[1].clone(),
    };
    let show = |c: Option<f64>| c.map_or("never".to_string(), |t| format!("{t:.6}"));
    println!(
        "comparison: ceiling {} first crossed at t = {} (conformal metric) vs t = {} (classic)",
        cfg.ceiling,
        show(report.conformal_crossing),
        show(report.classic_crossing)
    );
    Ok(report)
}

/// Drive the fixed-point iteration on the configured horizon and write
/// picard.csv (iter, d_k, r_k).
pub fn run_picard(cfg: &RunConfig) -> Result<PicardSolution, ChfError> {
    let g = &cfg.geometry;
    fs::create_dir_all(&cfg.output_dir)?;
    let f0 = cfg.scenario.build_initial_data(g, &cfg.target)?;
    let nt = cfg.params.n_steps();
    let solution = picard_iterate(
        &f0,
        nt,
        cfg.params.dt,
        cfg.params.a,
        cfg.params.b,
        g,
        &cfg.target,
        cfg.picard_tol,
        cfg.picard_max_iter,
    )?;
    let mut out = BufWriter::new(fs::File::create(cfg.output_dir.join("picard.csv"))?);
    writeln!(out, "iter,d_k,r_k")?;
    for (k, d) in solution.report.distances.iter().enumerate() {
        let ratio = if k == 0 {
            String::new()
        } else {
            num(solution.report.ratios[k - 1])
        };
        writeln!(out, "{},{},{}", k + 1, num(*d), ratio)?;
    }
    out.flush()?;
    let max_ratio = solution
        .report
        .max_ratio()
        .map_or("n/a".to_string(), |r| format!("{r:.6}"));
    println!(
        "picard: {} iterations, converged = {}, max contraction ratio = {} \
         (continuum benchmark 5/6 ~ 0.833)",
        solution.report.iterations(),
        solution.report.converged,
        max_ratio
    );
    Ok(solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::flow::FScheme;
    use crate::geometry::TWO_PI;
    use crate::scenario::Scenario;

    fn cfg_text(dir: &Path, extra: &str) -> String {
        format!(
            "[geometry]\nnx = 16\nny = 16\n[output]\ndir = {}\ncadence = 10\n{extra}",
            dir.display()
        )
    }

    fn read_rows(path: &Path) -> Vec<Vec<f64>> {
        let text = std::fs::read_to_string(path).unwrap();
        text.lines()
            .skip(1)
            .filter(|l| !l.starts_with('#'))
            .map(|l| {
                l.split(',')
                    .filter(|f| !f.is_empty())
                    .map(|f| f.parse().unwrap())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn constant_scenario_matches_pure_decay() {
        let dir = tempfile::tempdir().unwrap();
        let text = cfg_text(dir.path(), "[scenario]\nname = constant\n[params]\nt_end = 1.0\n");
        let cfg = RunConfig::from_text(&text, &[]).unwrap();
        let summary = run_experiment(&cfg).unwrap();
        assert!(!summary.diverged());
        let rows = read_rows(&dir.path().join("timeseries.csv"));
        assert_eq!(rows.len(), summary.records);
        let v0 = TWO_PI * TWO_PI;
        for row in &rows {
            let (t, e, v) = (row[0], row[1], row[2]);
            assert_eq!(e, 0.0);
            assert!((v - (-2.0 * t).exp() * v0).abs() <= 1e-12 * v0);
        }
        assert_eq!(summary.events, 0);
        assert!(dir.path().join("final.chf").exists());
    }

    #[test]
    fn classic_baseline_freezes_the_metric() {
        let dir = tempfile::tempdir().unwrap();
        let text = cfg_text(
            dir.path(),
            "[params]\nt_end = 0.1\nbaseline_classic = true\n",
        );
        let cfg = RunConfig::from_text(&text, &[]).unwrap();
        run_experiment(&cfg).unwrap();
        let rows = read_rows(&dir.path().join("timeseries.csv"));
        let v0 = TWO_PI * TWO_PI;
        for row in &rows {
            assert_eq!(row[2], v0); // V
            assert_eq!(row[6], 0.0); // min_u
            assert_eq!(row[7], 0.0); // max_u
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let bytes = |dir: &Path| {
            let text = format!(
                "[geometry]\nnx = 16\nny = 16\n[output]\ndir = {}\ncadence = 5\n\
                 snapshot_cadence = 25\n[params]\nt_end = 0.05\n[scenario]\nname = random_smooth\n",
                dir.display()
            );
            let cfg = RunConfig::from_text(&text, &[]).unwrap();
            run_experiment(&cfg).unwrap();
            (
                std::fs::read(dir.join("timeseries.csv")).unwrap(),
                std::fs::read(dir.join("events.csv")).unwrap(),
                std::fs::read(dir.join("snap_00000025.chf")).unwrap(),
                std::fs::read(dir.join("final.chf")).unwrap(),
            )
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        assert_eq!(bytes(d1.path()), bytes(d2.path()));
    }

    #[test]
    fn resume_continues_bit_exactly() {
        let base = tempfile::tempdir().unwrap();
        let full_dir = base.path().join("full");
        let text = format!(
            "[geometry]\nnx = 16\nny = 16\n[output]\ndir = {}\ncadence = 10\n\
             snapshot_cadence = 50\n[params]\nt_end = 0.1\n",
            full_dir.display()
        );
        let cfg = RunConfig::from_text(&text, &[]).unwrap();
        run_experiment(&cfg).unwrap();

        let resume_dir = base.path().join("resumed");
        let cfg2 = RunConfig::from_text(
            &text,
            &[("output.dir".to_string(), resume_dir.display().to_string())],
        )
        .unwrap();
        resume_run(&full_dir.join("snap_00000050.chf"), &cfg2).unwrap();
        let full = std::fs::read(full_dir.join("final.chf")).unwrap();
        let resumed = std::fs::read(resume_dir.join("final.chf")).unwrap();
        assert_eq!(full, resumed);
    }

    #[test]
    fn divergence_leaves_partial_artifacts_and_a_flag() {
        let dir = tempfile::tempdir().unwrap();
        let text = cfg_text(dir.path(), "[params]\ndt = 1000.0\nt_end = 10000.0\n");
        let cfg = RunConfig::from_text(&text, &[]).unwrap();
        let summary = run_experiment(&cfg).unwrap();
        assert!(summary.diverged());
        assert!(summary.report.guard_violations >= 1);
        let text = std::fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
        assert!(text.lines().last().unwrap().starts_with("# diverged"));
        assert!(read_rows(&dir.path().join("timeseries.csv")).len() >= 1);
        assert!(!dir.path().join("final.chf").exists());
    }

    #[test]
    fn wrap_comparison_never_crosses_a_ceiling_above_k_squared() {
        let dir = tempfile::tempdir().unwrap();
        let text = cfg_text(
            dir.path(),
            "[params]\nt_end = 0.1\n[diagnostics]\nceiling = 1.01\n",
        );
        let cfg = RunConfig::from_text(&text, &[]).unwrap();
        let report = compare_baseline(&cfg).unwrap();
        assert_eq!(report.conformal_crossing, None);
        assert_eq!(report.classic_crossing, None);
        assert_eq!(report.conformal_outcome, RunOutcome::Completed);
        assert!(report.rows > 5);
        let rows = read_rows(&dir.path().join("comparison.csv"));
        assert_eq!(rows.len(), report.rows);
        assert_eq!(rows[0].len(), 3);
    }

    #[test]
    fn empty_horizon_comparison_is_trivial() {
        let dir = tempfile::tempdir().unwrap();
        let text = cfg_text(dir.path(), "[params]\nt_end = 0.0\n");
        let cfg = RunConfig::from_text(&text, &[]).unwrap();
        let report = compare_baseline(&cfg).unwrap();
        assert_eq!(report.rows, 0);
        let body = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
        assert_eq!(body.lines().count(), 1);
    }

    #[test]
    fn picard_driver_writes_the_iteration_history() {
        let dir = tempfile::tempdir().unwrap();
        let text = cfg_text(dir.path(), "[params]\nt_end = 0.01\npicard_tol = 1e-9\n");
        let cfg = RunConfig::from_text(&text, &[]).unwrap();
        assert_eq!(cfg.scenario, Scenario::HarmonicWrap { k: 1 });
        let solution = run_picard(&cfg).unwrap();
        assert!(solution.report.converged);
        let rows = read_rows(&dir.path().join("picard.csv"));
        assert_eq!(rows.len(), solution.report.iterations());
        assert!(solution.report.max_ratio().unwrap() < 1.0);
    }

    #[test]
    fn bubble_run_emits_concentration_events() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "[geometry]\nnx = 48\nny = 48\n[output]\ndir = {}\ncadence = 10\n\
             [params]\nt_end = 0.01\nf_scheme = semi_implicit\n\
             [scenario]\nname = bubble_candidate\nlambda = 0.3\n",
            dir.path().display()
        );
        let cfg = RunConfig::from_text(&text, &[]).unwrap();
        assert_eq!(cfg.params.f_scheme, FScheme::SemiImplicit);
        let summary = run_experiment(&cfg).unwrap();
        assert!(!summary.diverged());
        assert!(summary.events >= summary.records); // one bump seen at every record
        let rows = read_rows(&dir.path().join("events.csv"));
        assert_eq!(rows.len(), summary.events);
        // all events sit on the bump
        let third = TWO_PI / 3.0;
        for row in &rows {
            let (x, y) = (row[1], row[2]);
            assert!((x - std::f64::consts::PI).abs() < third);
            assert!((y - std::f64::consts::PI).abs() < third);
        }
    }
}
