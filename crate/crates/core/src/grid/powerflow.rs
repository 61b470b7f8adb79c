//! Newton–Raphson AC power flow in polar coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::case::GridCase;
use crate::error::{Error, Result};

pub const TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BusType {
    Slack,
    Pv,
    Pq,
}

/// Power-flow result. Powers are in MW / MVAr, voltages and currents per-unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub p_from: Vec<f64>,
    pub q_from: Vec<f64>,
    pub p_to: Vec<f64>,
    pub q_to: Vec<f64>,
    /// Larger of the two end currents of each branch.
    pub current: Vec<f64>,
    /// Active output of every generator, with the slack's balancing output filled in.
    pub gen_p: Vec<f64>,
    pub gen_q: Vec<f64>,
    pub loss_mw: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest nodal mismatch of the returned iterate, per-unit.
    pub max_mismatch: f64,
}

struct Admittance {
    g: DMatrix<f64>,
    b: DMatrix<f64>,
}

fn admittance(case: &GridCase) -> Admittance {
    let n = case.n_bus();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for br in &case.branches {
        let den = br.r * br.r + br.x * br.x;
        let (gs, bs) = (br.r / den, -br.x / den);
        let (f, t) = (br.from, br.to);
        g[(f, f)] += gs;
        g[(t, t)] += gs;
        b[(f, f)] += bs + br.b / 2.0;
        b[(t, t)] += bs + br.b / 2.0;
        g[(f, t)] -= gs;
        g[(t, f)] -= gs;
        b[(f, t)] -= bs;
        b[(t, f)] -= bs;
    }
    Admittance { g, b }
}

/// Injected active and reactive power at every bus.
fn injections(y: &Admittance, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for k in 0..n {
            let (gik, bik) = (y.g[(i, k)], y.b[(i, k)]);
            if gik == 0.0 && bik == 0.0 {
                continue;
            }
            let (s, c) = (theta[i] - theta[k]).sin_cos();
            p[i] += v[i] * v[k] * (gik * c + bik * s);
            q[i] += v[i] * v[k] * (gik * s - bik * c);
        }
    }
    (p, q)
}

/// Solves the AC network for the given online units, active set-points (MW)
/// and loads (MW / MVAr). The slack generator's set-point is ignored.
///
/// Non-convergence is reported through `converged = false`, not as an error.
pub fn solve_power_flow(
    case: &GridCase,
    online: &[bool],
    p_set: &[f64],
    load_p: &[f64],
    load_q: &[f64],
) -> Result<PowerFlowSolution> {
    let (n, n_gen) = (case.n_bus(), case.n_gen());
    if online.len() != n_gen || p_set.len() != n_gen {
        return Err(Error::Shape {
            op: "power flow",
            detail: format!(
                "{n_gen} generators but {} statuses and {} set-points",
                online.len(),
                p_set.len()
            ),
        });
    }
    if load_p.len() != case.n_load() || load_q.len() != case.n_load() {
        return Err(Error::Shape {
            op: "power flow",
            detail: format!(
                "{} loads but {} / {} demands",
                case.n_load(),
                load_p.len(),
                load_q.len()
            ),
        });
    }
    if !online[case.slack_gen] {
        return Err(Error::invalid("the slack generator must be online"));
    }
    if p_set
        .iter()
        .chain(load_p)
        .chain(load_q)
        .any(|v| !v.is_finite())
    {
        return Err(Error::invalid("power flow inputs must be finite"));
    }

    let base = case.base_mva;
    let slack_bus = case.slack_bus();
    let mut kind = vec![BusType::Pq; n];
    let mut v = vec![1.0; n];
    let mut theta = vec![0.0; n];
    for (i, gen) in case.generators.iter().enumerate() {
        if online[i] && kind[gen.bus] == BusType::Pq {
            kind[gen.bus] = BusType::Pv;
            v[gen.bus] = gen.v_set;
        }
    }
    kind[slack_bus] = BusType::Slack;
    v[slack_bus] = case.generators[case.slack_gen].v_set;

    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    for (i, gen) in case.generators.iter().enumerate() {
        if online[i] && i != case.slack_gen {
            p_spec[gen.bus] += p_set[i] / base;
        }
    }
    for (l, load) in case.loads.iter().enumerate() {
        p_spec[load.bus] -= load_p[l] / base;
        q_spec[load.bus] -= load_q[l] / base;
    }

    let angle_vars: Vec<usize> = (0..n).filter(|&k| kind[k] != BusType::Slack).collect();
    let mag_vars: Vec<usize> = (0..n).filter(|&k| kind[k] == BusType::Pq).collect();
    let mut angle_pos = vec![usize::MAX; n];
    for (pos, &k) in angle_vars.iter().enumerate() {
        angle_pos[k] = pos;
    }
    let mut mag_pos = vec![usize::MAX; n];
    for (pos, &k) in mag_vars.iter().enumerate() {
        mag_pos[k] = angle_vars.len() + pos;
    }
    let dim = angle_vars.len() + mag_vars.len();

    let y = admittance(case);
    let mismatch = |v: &[f64], theta: &[f64]| -> (DVector<f64>, f64, Vec<f64>, Vec<f64>) {
        let (p, q) = injections(&y, v, theta);
        let mut f = DVector::zeros(dim);
        for &k in &angle_vars {
            f[angle_pos[k]] = p_spec[k] - p[k];
        }
        for &k in &mag_vars {
            f[mag_pos[k]] = q_spec[k] - q[k];
        }
        let worst = f.iter().fold(
            0.0_f64,
            |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) },
        );
        (f, worst, p, q)
    };

    let mut converged = false;
    let mut iterations = 0;
    let (mut f, mut worst, mut p_calc, mut q_calc) = mismatch(&v, &theta);
    loop {
        if worst.is_finite() && worst < TOLERANCE {
            converged = true;
            break;
        }
        if iterations == MAX_ITERATIONS || !worst.is_finite() {
            break;
        }
        let jac = jacobian(
            &y,
            &v,
            &theta,
            &p_calc,
            &q_calc,
            &angle_vars,
            &mag_vars,
            &angle_pos,
            &mag_pos,
        );
        let Some(dx) = jac.lu().solve(&f) else {
            break;
        };
        let (prev_v, prev_theta) = (v.clone(), theta.clone());
        for &k in &angle_vars {
            theta[k] += dx[angle_pos[k]];
        }
        for &k in &mag_vars {
            v[k] += dx[mag_pos[k]];
        }
        iterations += 1;
        let next = mismatch(&v, &theta);
        if !next.1.is_finite() || v.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            v = prev_v;
            theta = prev_theta;
            break;
        }
        (f, worst, p_calc, q_calc) = next;
    }

    Ok(finish(
        case, &y, online, p_set, load_p, load_q, v, theta, converged, iterations, worst,
    ))
}

#[allow(clippy::too_many_arguments)]
fn jacobian(
    y: &Admittance,
    v: &[f64],
    theta: &[f64],
    p: &[f64],
    q: &[f64],
    angle_vars: &[usize],
    mag_vars: &[usize],
    angle_pos: &[usize],
    mag_pos: &[usize],
) -> DMatrix<f64> {
    let dim = angle_vars.len() + mag_vars.len();
    let mut jac = DMatrix::zeros(dim, dim);
    let rows_p = angle_vars.iter().map(|&i| (i, angle_pos[i], true));
    let rows_q = mag_vars.iter().map(|&i| (i, mag_pos[i], false));
    for (i, row, is_p) in rows_p.chain(rows_q) {
        let (gii, bii) = (y.g[(i, i)], y.b[(i, i)]);
        let n = v.len();
        for k in 0..n {
            let (gik, bik) = (y.g[(i, k)], y.b[(i, k)]);
            if k != i && gik == 0.0 && bik == 0.0 {
                continue;
            }
            let col_a = angle_pos[k];
            let col_v = mag_pos[k];
            if k == i {
                let (d_theta, d_v) = if is_p {
                    (-q[i] - bii * v[i] * v[i], p[i] / v[i] + gii * v[i])
                } else {
                    (p[i] - gii * v[i] * v[i], q[i] / v[i] - bii * v[i])
                };
                if col_a != usize::MAX {
                    jac[(row, col_a)] = d_theta;
                }
                if col_v != usize::MAX {
                    jac[(row, col_v)] = d_v;
                }
            } else {
                let (s, c) = (theta[i] - theta[k]).sin_cos();
                let (d_theta, d_v) = if is_p {
                    (
                        v[i] * v[k] * (gik * s - bik * c),
                        v[i] * (gik * c + bik * s),
                    )
                } else {
                    (
                        -v[i] * v[k] * (gik * c + bik * s),
                        v[i] * (gik * s - bik * c),
                    )
                };
                if col_a != usize::MAX {
                    jac[(row, col_a)] = d_theta;
                }
                if col_v != usize::MAX {
                    jac[(row, col_v)] = d_v;
                }
            }
        }
    }
    jac
}

#[allow(clippy::too_many_arguments)]
fn finish(
    case: &GridCase,
    y: &Admittance,
    online: &[bool],
    p_set: &[f64],
    load_p: &[f64],
    load_q: &[f64],
    v: Vec<f64>,
    theta: Vec<f64>,
    converged: bool,
    iterations: usize,
    max_mismatch: f64,
) -> PowerFlowSolution {
    let base = case.base_mva;
    let n = case.n_bus();
    let (p_inj, q_inj) = injections(y, &v, &theta);

    let mut bus_load_p = vec![0.0; n];
    let mut bus_load_q = vec![0.0; n];
    for (l, load) in case.loads.iter().enumerate() {
        bus_load_p[load.bus] += load_p[l];
        bus_load_q[load.bus] += load_q[l];
    }
    let mut online_at = vec![0usize; n];
    let mut fixed_p_at = vec![0.0; n];
    for (i, g) in case.generators.iter().enumerate() {
        if online[i] {
            online_at[g.bus] += 1;
            if i != case.slack_gen {
                fixed_p_at[g.bus] += p_set[i];
            }
        }
    }
    let mut gen_p = vec![0.0; case.n_gen()];
    let mut gen_q = vec![0.0; case.n_gen()];
    for (i, g) in case.generators.iter().enumerate() {
        if !online[i] {
            continue;
        }
        let k = g.bus;
        gen_q[i] = (q_inj[k] * base + bus_load_q[k]) / online_at[k] as f64;
        gen_p[i] = if i == case.slack_gen {
            p_inj[k] * base + bus_load_p[k] - fixed_p_at[k]
        } else {
            p_set[i]
        };
    }

    let m = case.n_branch();
    let mut sol = PowerFlowSolution {
        v,
        theta,
        p_from: vec![0.0; m],
        q_from: vec![0.0; m],
        p_to: vec![0.0; m],
        q_to: vec![0.0; m],
        current: vec![0.0; m],
        gen_p,
        gen_q,
        loss_mw: p_inj.iter().sum::<f64>() * base,
        converged,
        iterations,
        max_mismatch,
    };
    for (j, br) in case.branches.iter().enumerate() {
        let den = br.r * br.r + br.x * br.x;
        let (gs, bs) = (br.r / den, -br.x / den);
        let end = |a: usize, b: usize| {
            let (va, vb) = (sol.v[a], sol.v[b]);
            let (ea, fa) = (va * sol.theta[a].cos(), va * sol.theta[a].sin());
            let (eb, fb) = (vb * sol.theta[b].cos(), vb * sol.theta[b].sin());
            let (dr, di) = (ea - eb, fa - fb);
            let ir = gs * dr - bs * di - br.b / 2.0 * fa;
            let ii = gs * di + bs * dr + br.b / 2.0 * ea;
            let p = ea * ir + fa * ii;
            let q = fa * ir - ea * ii;
            (p * base, q * base, ir.hypot(ii))
        };
        let (pf, qf, i_f) = end(br.from, br.to);
        let (pt, qt, i_t) = end(br.to, br.from);
        sol.p_from[j] = pf;
        sol.q_from[j] = qf;
        sol.p_to[j] = pt;
        sol.q_to[j] = qt;
        sol.current[j] = i_f.max(i_t);
    }
    if sol
        .v
        .iter()
        .chain(&sol.current)
        .chain(&sol.gen_q)
        .any(|x| !x.is_finite())
    {
        sol.converged = false;
    }
    sol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::case::{Branch, Bus, GenKind, Generator, Load, LoadProfile};

    pub(crate) fn thermal(bus: usize, v_set: f64) -> Generator {
        Generator {
            kind: GenKind::Thermal,
            bus,
            p_max: 200.0,
            p_min: 0.0,
            q_max: 100.0,
            q_min: -100.0,
            v_set,
            cost_a: 0.01,
            cost_b: 10.0,
            cost_c: 5.0,
            startup_cost: 100.0,
            ramp_rate: 0.05,
        }
    }

    fn two_bus(load_p: f64, load_q: f64) -> GridCase {
        GridCase {
            base_mva: 100.0,
            slack_gen: 0,
            load_profile: LoadProfile::flat(),
            buses: vec![
                Bus {
                    v_min: 0.95,
                    v_max: 1.05
                };
                2
            ],
            branches: vec![Branch {
                from: 0,
                to: 1,
                r: 0.0,
                x: 0.1,
                b: 0.0,
                limit: 1.0,
            }],
            generators: vec![thermal(0, 1.0)],
            loads: vec![Load {
                bus: 1,
                p: load_p,
                q: load_q,
            }],
        }
    }

    #[test]
    fn zero_injection_is_flat() {
        let case = two_bus(0.0, 0.0);
        let sol = solve_power_flow(&case, &[true], &[0.0], &[0.0], &[0.0]).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 0);
        assert!(sol.v.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(sol.current.iter().all(|i| i.abs() < 1e-12));
    }

    #[test]
    fn lossless_line_balances() {
        let case = two_bus(50.0, 10.0);
        let sol = solve_power_flow(&case, &[true], &[0.0], &[50.0], &[10.0]).unwrap();
        assert!(sol.converged);
        assert!((sol.gen_p[0] - 50.0).abs() < 1e-6);
        assert!(sol.loss_mw.abs() < 1e-6);
        assert!(sol.v[1] < 1.0);
    }

    #[test]
    fn rejects_offline_slack_and_bad_lengths() {
        let case = two_bus(50.0, 10.0);
        assert!(solve_power_flow(&case, &[false], &[0.0], &[50.0], &[10.0]).is_err());
        assert!(solve_power_flow(&case, &[true, true], &[0.0], &[50.0], &[10.0]).is_err());
    }

    #[test]
    fn impossible_load_does_not_converge() {
        let case = two_bus(2000.0, 500.0);
        let sol = solve_power_flow(&case, &[true], &[0.0], &[2000.0], &[500.0]).unwrap();
        assert!(!sol.converged);
        assert!(sol.v.iter().all(|v| v.is_finite()));
    }
}
