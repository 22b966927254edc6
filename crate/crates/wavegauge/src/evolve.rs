//! Method-of-lines time integration: classical RK4 with CFL-controlled steps
//! and continuation-principle breakdown monitors.

use crate::background::{background_at, BackgroundParams};
use crate::diagnostics::{DiagnosticsRecord, EnergyConfig};
use crate::error::{BreakdownCase, Error, Result};
use crate::geometry::invert_metric;
use crate::grid::Grid;
use crate::reduced::full_rhs;
use crate::state::FieldState;
use serde::{Deserialize, Serialize};

/// Breakdown thresholds realizing the four continuation-criterion monitors.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Thresholds {
    /// case 1: trip when sup g00 > -min_abs_g00 (g00 approaching 0)
    pub min_abs_g00: f64,
    /// case 2: trip when the smallest eigenvalue of h falls below this
    pub min_eig_h: f64,
    /// case 3: trip when min P falls below this
    pub min_p: f64,
    /// case 4: sup-norm proxy for the C_b blowup criterion
    pub max_field_sup: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { min_abs_g00: 0.5, min_eig_h: 0.25, min_p: 1e-8, max_field_sup: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotPolicy {
    All,
    LastThree,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub t_end: f64,
    /// CFL factor in (0, 1]
    pub cfl: f64,
    /// diagnostics cadence (time units)
    pub output_every: f64,
    pub snapshots: SnapshotPolicy,
    pub energy: EnergyConfig,
    pub thresholds: Thresholds,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidParameter("t_end must be > 0".into()));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidParameter("CFL factor must lie in (0, 1]".into()));
        }
        if !(self.output_every > 0.0) {
            return Err(Error::InvalidParameter("output_every must be > 0".into()));
        }
        Ok(())
    }
}

/// Why a run ended.
#[derive(Debug, Clone)]
pub enum RunOutcome {
    Completed,
    Breakdown { case: BreakdownCase, t: f64, detail: String },
}

pub struct RunResult {
    pub records: Vec<DiagnosticsRecord>,
    /// snapshots retained per the policy (always includes the final state)
    pub snapshots: Vec<FieldState>,
    pub outcome: RunOutcome,
    pub steps: usize,
}

/// One classical RK4 step; background coefficients are evaluated
/// analytically at the stage times.
pub fn step(
    grid: &Grid,
    state: &FieldState,
    params: &BackgroundParams,
    dt: f64,
) -> Result<FieldState> {
    let t = state.t;
    let bg1 = background_at(params, t);
    let k1 = full_rhs(grid, state, params, &bg1)?;

    let mut s2 = state.clone();
    s2.axpy(0.5 * dt, &k1);
    s2.t = t + 0.5 * dt;
    let bg2 = background_at(params, s2.t);
    let k2 = full_rhs(grid, &s2, params, &bg2)?;

    let mut s3 = state.clone();
    s3.axpy(0.5 * dt, &k2);
    s3.t = t + 0.5 * dt;
    let k3 = full_rhs(grid, &s3, params, &bg2)?;

    let mut s4 = state.clone();
    s4.axpy(dt, &k3);
    s4.t = t + dt;
    let bg4 = background_at(params, s4.t);
    let k4 = full_rhs(grid, &s4, params, &bg4)?;

    let mut out = state.clone();
    out.axpy(dt / 6.0, &k1);
    out.axpy(dt / 3.0, &k2);
    out.axpy(dt / 3.0, &k3);
    out.axpy(dt / 6.0, &k4);
    out.t = t + dt;
    Ok(out)
}

/// Maximum coordinate light speed over the grid (gravitational cone), with a
/// floor of 1 in the rescaled coordinates.
pub fn max_light_speed(state: &FieldState, params: &BackgroundParams) -> Result<f64> {
    let bg = background_at(params, state.t);
    let e2o = (2.0 * bg.omega_fold).exp();
    let n = state.n();
    let mut cmax = 1.0f64;
    for idx in 0..n * n * n {
        let g = state.metric_at(idx, e2o);
        let point = (idx / (n * n), (idx / n) % n, idx % n);
        let (gi, _, _) = invert_metric(&g, state.t, point)?;
        for j in 1..4 {
            let shift = gi[0][j] / gi[0][0];
            let disc = shift * shift - gi[j][j] / gi[0][0];
            let s = shift.abs() + disc.max(0.0).sqrt();
            cmax = cmax.max(s);
        }
    }
    Ok(cmax)
}

/// Checks the breakdown monitors on a freshly accepted state.
fn check_monitors(state: &FieldState, thresholds: &Thresholds) -> Result<()> {
    let n = state.n();
    // NaN / blowup scan across all fields (case 4: C_b proxy)
    for (name, f) in FieldState::field_names().iter().zip(state.fields()) {
        for (idx, v) in f.values().iter().enumerate() {
            if !v.is_finite() || v.abs() > thresholds.max_field_sup {
                return Err(Error::Breakdown {
                    case: BreakdownCase::SupNormBlowup,
                    t: state.t,
                    i: idx / (n * n),
                    j: (idx / n) % n,
                    k: idx % n,
                    detail: format!("{name} = {v}"),
                });
            }
        }
    }
    for (idx, v) in state.g00.values().iter().enumerate() {
        if *v > -thresholds.min_abs_g00 {
            return Err(Error::Breakdown {
                case: BreakdownCase::MetricTimeDegenerate,
                t: state.t,
                i: idx / (n * n),
                j: (idx / n) % n,
                k: idx % n,
                detail: format!("g00 = {v} above -{}", thresholds.min_abs_g00),
            });
        }
    }
    for idx in 0..n * n * n {
        let eig = crate::tensor::mat3_min_eigenvalue(&state.h_at(idx));
        if eig < thresholds.min_eig_h {
            return Err(Error::Breakdown {
                case: BreakdownCase::MetricSpaceDegenerate,
                t: state.t,
                i: idx / (n * n),
                j: (idx / n) % n,
                k: idx % n,
                detail: format!("min eig h = {eig}"),
            });
        }
    }
    for (idx, v) in state.p.values().iter().enumerate() {
        if *v < thresholds.min_p {
            return Err(Error::Breakdown {
                case: BreakdownCase::VacuumPressure,
                t: state.t,
                i: idx / (n * n),
                j: (idx / n) % n,
                k: idx % n,
                detail: format!("P = {v} below {}", thresholds.min_p),
            });
        }
    }
    Ok(())
}

/// Advances the state to t_end (or breakdown), emitting diagnostics at the
/// configured cadence. `on_record` sees every record as it is produced, so
/// callers can stream CSV rows.
pub fn run_with(
    grid: &Grid,
    initial: FieldState,
    params: &BackgroundParams,
    config: &RunConfig,
    mut on_record: impl FnMut(&DiagnosticsRecord),
) -> Result<RunResult> {
    config.validate()?;
    let mut state = initial;
    let mut records = Vec::new();
    let mut snapshots: Vec<FieldState> = Vec::new();
    let mut steps = 0usize;
    let h = grid.spacing();
    let mut next_output = state.t;
    let keep = |snaps: &mut Vec<FieldState>, s: &FieldState, policy: SnapshotPolicy| {
        snaps.push(s.clone());
        if policy == SnapshotPolicy::LastThree && snaps.len() > 3 {
            snaps.remove(0);
        }
    };

    let outcome = loop {
        // diagnostics at cadence
        if state.t >= next_output - 1e-12 {
            let bg = background_at(params, state.t);
            let rec = DiagnosticsRecord::compute(grid, &state, params, &bg, &config.energy)?;
            on_record(&rec);
            records.push(rec);
            keep(&mut snapshots, &state, config.snapshots);
            next_output += config.output_every;
        }
        if state.t >= config.t_end - 1e-12 {
            break RunOutcome::Completed;
        }
        let cmax = match max_light_speed(&state, params) {
            Ok(c) => c,
            Err(Error::Breakdown { case, t, detail, .. }) => {
                break RunOutcome::Breakdown { case, t, detail };
            }
            Err(e) => return Err(e),
        };
        let mut dt = config.cfl * h / cmax;
        // land exactly on the next output time / the end time
        dt = dt.min(next_output - state.t).min(config.t_end - state.t);
        match step(grid, &state, params, dt) {
            Ok(next) => match check_monitors(&next, &config.thresholds) {
                Ok(()) => {
                    state = next;
                    steps += 1;
                }
                Err(Error::Breakdown { case, t, detail, .. }) => {
                    break RunOutcome::Breakdown { case, t, detail };
                }
                Err(e) => return Err(e),
            },
            Err(Error::Breakdown { case, t, detail, .. }) => {
                break RunOutcome::Breakdown { case, t, detail };
            }
            Err(e) => return Err(e),
        }
    };

    if snapshots.last().map(|s| s.t) != Some(state.t) {
        keep(&mut snapshots, &state, config.snapshots);
    }
    Ok(RunResult { records, snapshots, outcome, steps })
}

/// `run_with` without the streaming callback.
pub fn run(
    grid: &Grid,
    initial: FieldState,
    params: &BackgroundParams,
    config: &RunConfig,
) -> Result<RunResult> {
    run_with(grid, initial, params, config, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::BackgroundParams;
    use crate::grid::Backend;
    use crate::initial::flrw_state;

    fn params() -> BackgroundParams {
        BackgroundParams::new(3.0, 3.0, 1.0 / 9.0).unwrap()
    }

    fn config(t_end: f64) -> RunConfig {
        RunConfig {
            t_end,
            cfl: 0.4,
            output_every: 0.5,
            snapshots: SnapshotPolicy::All,
            energy: EnergyConfig::default(),
            thresholds: Thresholds::default(),
        }
    }

    #[test]
    fn flrw_is_fixed_point_of_step() {
        let grid = Grid::new(8, Backend::Spectral, true).unwrap();
        let p = params();
        let bg = crate::background::background_at(&p, 0.0);
        let st = flrw_state(&grid, &p, &bg);
        let next = step(&grid, &st, &p, 0.2).unwrap();
        let flrw_later = flrw_state(&grid, &p, &crate::background::background_at(&p, 0.2));
        for ((name, a), b) in FieldState::field_names()
            .iter()
            .zip(next.fields())
            .zip(flrw_later.fields())
        {
            let err = a
                .values()
                .iter()
                .zip(b.values())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(err < 1e-12, "{name}: {err:e}");
        }
    }

    #[test]
    fn rk4_fourth_order_on_single_mode() {
        // Richardson: halving dt shrinks the error ~16x on a linear mode
        let grid = Grid::new(8, Backend::Spectral, true).unwrap();
        let p = params();
        let bg = crate::background::background_at(&p, 0.0);
        let mut st = flrw_state(&grid, &p, &bg);
        st.g00 = crate::grid::ScalarField::from_fn(8, |x1, _, _| -1.0 + 1e-6 * x1.sin());
        let advance = |mut s: FieldState, dt: f64, steps: usize| -> FieldState {
            for _ in 0..steps {
                s = step(&grid, &s, &p, dt).unwrap();
            }
            s
        };
        let t_final = 0.4;
        let fine = advance(st.clone(), t_final / 64.0, 64);
        let coarse = advance(st.clone(), t_final / 8.0, 8);
        let mid = advance(st.clone(), t_final / 16.0, 16);
        let err = |a: &FieldState, b: &FieldState| {
            a.fields()
                .iter()
                .zip(b.fields())
                .map(|(x, y)| {
                    x.values()
                        .iter()
                        .zip(y.values())
                        .fold(0.0f64, |m, (u, v)| m.max((u - v).abs()))
                })
                .fold(0.0f64, f64::max)
        };
        let e_coarse = err(&coarse, &fine);
        let e_mid = err(&mid, &fine);
        let ratio = e_coarse / e_mid;
        assert!(ratio > 13.0, "expected ~16x per halving, got {ratio}");
    }

    #[test]
    fn time_reversal_smoke() {
        let grid = Grid::new(8, Backend::Spectral, true).unwrap();
        let p = params();
        let bg = crate::background::background_at(&p, 0.0);
        let mut st = flrw_state(&grid, &p, &bg);
        st.g00 = crate::grid::ScalarField::from_fn(8, |x1, x2, _| {
            -1.0 + 1e-4 * (x1.sin() + (x2).cos())
        });
        let dt = 0.02;
        let fwd = step(&grid, &st, &p, dt).unwrap();
        let back = step(&grid, &fwd, &p, -dt).unwrap();
        for (a, b) in back.fields().iter().zip(st.fields()) {
            let err = a
                .values()
                .iter()
                .zip(b.values())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            // O(dt^5) per step pair
            assert!(err < 50.0 * dt.powi(5), "err = {err:e}");
        }
    }

    #[test]
    fn flrw_run_completes_with_tiny_norms() {
        let grid = Grid::new(8, Backend::Spectral, true).unwrap();
        let p = params();
        let bg = crate::background::background_at(&p, 0.0);
        let st = flrw_state(&grid, &p, &bg);
        let res = run(&grid, st, &p, &config(1.0)).unwrap();
        assert!(matches!(res.outcome, RunOutcome::Completed));
        for rec in &res.records {
            assert!(rec.q_n < 1e-10, "Q_N = {:e}", rec.q_n);
            assert!(rec.gauge_sup < 1e-10);
        }
        assert!(res.steps > 0);
    }

    #[test]
    fn pressure_floor_trips_breakdown_case_3() {
        let grid = Grid::new(8, Backend::Spectral, true).unwrap();
        let p = params();
        let bg = crate::background::background_at(&p, 0.0);
        let mut st = flrw_state(&grid, &p, &bg);
        // pressure deviation large enough to cross the floor during the run
        st.p = crate::grid::ScalarField::from_fn(8, |x1, _, _| {
            p.p_bar * (1.0 + 0.9 * x1.sin())
        });
        let mut cfg = config(2.0);
        cfg.thresholds.min_p = p.p_bar * 0.2;
        let res = run(&grid, st, &p, &cfg).unwrap();
        match res.outcome {
            RunOutcome::Breakdown { case, .. } => {
                assert_eq!(case, BreakdownCase::VacuumPressure);
            }
            RunOutcome::Completed => panic!("expected a pressure breakdown"),
        }
    }

    #[test]
    fn oversized_timestep_flags_blowup_not_nan() {
        let grid = Grid::new(16, Backend::Spectral, true).unwrap();
        let p = params();
        let bg = crate::background::background_at(&p, 0.0);
        let mut st = flrw_state(&grid, &p, &bg);
        st.g00 = crate::grid::ScalarField::from_fn(16, |x1, x2, x3| {
            -1.0 + 0.01 * ((7.0 * x1).sin() + (7.0 * x2).sin() + (7.0 * x3).sin())
        });
        // far above the stability limit
        let dt = 10.0 * grid.spacing();
        let mut s = st;
        let mut tripped = false;
        for _ in 0..40 {
            match step(&grid, &s, &p, dt) {
                Ok(next) => match check_monitors(&next, &Thresholds::default()) {
                    Ok(()) => s = next,
                    Err(Error::Breakdown { .. }) => {
                        tripped = true;
                        break;
                    }
                    Err(e) => panic!("unexpected error {e}"),
                },
                Err(Error::Breakdown { .. }) => {
                    tripped = true;
                    break;
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(tripped, "instability went undetected");
    }

    #[test]
    fn determinism_bitwise() {
        let grid = Grid::new(8, Backend::Spectral, true).unwrap();
        let p = params();
        let bg = crate::background::background_at(&p, 0.0);
        let spec = crate::initial::PerturbationSpec {
            amplitude: 1e-4,
            k_max: 2,
            seed: 11,
            targets: vec![
                crate::initial::PerturbTarget::Metric,
                crate::initial::PerturbTarget::Velocity,
            ],
        };
        let data = crate::initial::perturbed_data(&grid, &spec, &p, &bg).unwrap();
        let st = crate::initial::from_geometric_data(&grid, &data, &p, &bg).unwrap();
        let r1 = run(&grid, st.clone(), &p, &config(0.6)).unwrap();
        let r2 = run(&grid, st, &p, &config(0.6)).unwrap();
        assert_eq!(r1.records.len(), r2.records.len());
        for (a, b) in r1.records.iter().zip(r2.records.iter()) {
            assert_eq!(a.csv_row(), b.csv_row());
        }
    }
}
