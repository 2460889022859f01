//! Brute-force ground truth for the transient engine.
//!
//! Everything here is written as plain nested loops over cells and
//! neighbors, with no shared stencil code, no precomputation, and no
//! parallelism. It exists so the optimized engine has something independent
//! to be checked against; keep it slow and obvious.

use crate::engine::{
    Boundary, CellField, EngineError, GridSpec, IntegrationConfig, Method, TemplateSet,
    TransientResult,
};

const MAX_ORACLE_DIM: usize = 32;

fn saturate(x: f64) -> f64 {
    // Same piecewise-linear output, spelled out by branch instead of the
    // absolute-value identity.
    if x > 1.0 {
        1.0
    } else if x < -1.0 {
        -1.0
    } else {
        x
    }
}

fn phi(tpl: &TemplateSet, z: f64) -> f64 {
    match tpl.d_nl {
        crate::engine::DiffNonlinearity::Identity => z,
        crate::engine::DiffNonlinearity::PwlDiff => saturate(z),
        crate::engine::DiffNonlinearity::CubicDiff => z.powi(3),
    }
}

/// Neighbor state/input/output lookup with explicit boundary handling.
fn fetch(spec: &GridSpec, field: &[Vec<f64>], ni: isize, nj: isize) -> f64 {
    let rows = spec.rows as isize;
    let cols = spec.cols as isize;
    if ni >= 0 && ni < rows && nj >= 0 && nj < cols {
        return field[ni as usize][nj as usize];
    }
    match spec.boundary {
        Boundary::Zero => 0.0,
        Boundary::Replicate => {
            let mut ci = ni;
            let mut cj = nj;
            if ci < 0 {
                ci = 0;
            }
            if ci > rows - 1 {
                ci = rows - 1;
            }
            if cj < 0 {
                cj = 0;
            }
            if cj > cols - 1 {
                cj = cols - 1;
            }
            field[ci as usize][cj as usize]
        }
    }
}

/// One full derivative evaluation, cell by cell, term by term.
fn derivative(
    spec: &GridSpec,
    x: &[Vec<f64>],
    u: &[Vec<f64>],
    tpl: &TemplateSet,
    cfg: &IntegrationConfig,
) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; spec.cols]; spec.rows];
    let mut y = vec![vec![0.0; spec.cols]; spec.rows];
    for i in 0..spec.rows {
        for j in 0..spec.cols {
            y[i][j] = saturate(x[i][j]);
        }
    }
    for i in 0..spec.rows {
        for j in 0..spec.cols {
            let y_center = y[i][j];
            let mut feedback_sum = 0.0;
            let mut input_sum = 0.0;
            let mut state_sum = 0.0;
            let mut nonlinear_sum = 0.0;
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let w_idx = ((dr + 1) * 3 + (dc + 1)) as usize;
                    let ni = i as isize + dr;
                    let nj = j as isize + dc;
                    let yn = fetch(spec, &y, ni, nj);
                    let un = fetch(spec, u, ni, nj);
                    let xn = fetch(spec, x, ni, nj);
                    feedback_sum += tpl.feedback[w_idx] * yn;
                    input_sum += tpl.input[w_idx] * un;
                    state_sum += tpl.state[w_idx] * xn;
                    nonlinear_sum += tpl.nonlinear[w_idx] * phi(tpl, yn - y_center);
                }
            }
            let total = -x[i][j] / cfg.r_x
                + feedback_sum
                + input_sum
                + state_sum
                + nonlinear_sum
                + tpl.bias;
            out[i][j] = total / cfg.capacitance;
        }
    }
    out
}

fn euler_step(
    spec: &GridSpec,
    x: &mut Vec<Vec<f64>>,
    u: &[Vec<f64>],
    tpl: &TemplateSet,
    cfg: &IntegrationConfig,
    h: f64,
) {
    let k = derivative(spec, x, u, tpl, cfg);
    for i in 0..spec.rows {
        for j in 0..spec.cols {
            x[i][j] += h * k[i][j];
        }
    }
}

fn rk4_step(
    spec: &GridSpec,
    x: &mut Vec<Vec<f64>>,
    u: &[Vec<f64>],
    tpl: &TemplateSet,
    cfg: &IntegrationConfig,
    h: f64,
) {
    let add = |a: &[Vec<f64>], b: &[Vec<f64>], scale: f64| -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; spec.cols]; spec.rows];
        for i in 0..spec.rows {
            for j in 0..spec.cols {
                out[i][j] = a[i][j] + scale * b[i][j];
            }
        }
        out
    };
    let k1 = derivative(spec, x, u, tpl, cfg);
    let mid1 = add(x, &k1, 0.5 * h);
    let k2 = derivative(spec, &mid1, u, tpl, cfg);
    let mid2 = add(x, &k2, 0.5 * h);
    let k3 = derivative(spec, &mid2, u, tpl, cfg);
    let end = add(x, &k3, h);
    let k4 = derivative(spec, &end, u, tpl, cfg);
    for i in 0..spec.rows {
        for j in 0..spec.cols {
            x[i][j] += h / 6.0 * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
        }
    }
}

fn to_nested(f: &CellField) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; f.cols()]; f.rows()];
    for i in 0..f.rows() {
        for j in 0..f.cols() {
            out[i][j] = f.values()[i * f.cols() + j];
        }
    }
    out
}

fn to_field(rows: usize, cols: usize, v: &[Vec<f64>]) -> Result<CellField, EngineError> {
    let mut flat = Vec::with_capacity(rows * cols);
    for row in v {
        flat.extend_from_slice(row);
    }
    CellField::from_values(rows, cols, flat)
}

/// Same contract as [`crate::engine::run_transient`], implemented naively.
/// Limited to grids of at most 32x32.
pub fn simulate_reference(
    spec: &GridSpec,
    u: &CellField,
    x0: Option<&CellField>,
    tpl: &TemplateSet,
    cfg: &IntegrationConfig,
) -> Result<TransientResult, EngineError> {
    if spec.rows > MAX_ORACLE_DIM || spec.cols > MAX_ORACLE_DIM {
        return Err(EngineError::InvalidGrid(format!(
            "reference oracle is limited to {MAX_ORACLE_DIM}x{MAX_ORACLE_DIM} grids, got {}x{}",
            spec.rows, spec.cols
        )));
    }
    if spec.radius != 1 {
        return Err(EngineError::RadiusUnsupported(spec.radius));
    }
    let x_init = x0.unwrap_or(u);
    if x_init.rows() != spec.rows || x_init.cols() != spec.cols {
        return Err(EngineError::DimensionMismatch {
            expected_rows: spec.rows,
            expected_cols: spec.cols,
            rows: x_init.rows(),
            cols: x_init.cols(),
        });
    }
    if u.rows() != spec.rows || u.cols() != spec.cols {
        return Err(EngineError::DimensionMismatch {
            expected_rows: spec.rows,
            expected_cols: spec.cols,
            rows: u.rows(),
            cols: u.cols(),
        });
    }
    tpl.validate()?;
    // Reuse the config validation through a throwaway derivative call? No:
    // duplicate the few checks inline to stay independent.
    if !(cfg.dt > 0.0) || cfg.dt > tpl.t_final {
        return Err(EngineError::InvalidConfig(format!(
            "dt {} invalid for horizon {}",
            cfg.dt, tpl.t_final
        )));
    }
    let mut prev = 0.0;
    for &c in &cfg.checkpoint_times {
        if !(c.is_finite() && c > prev) {
            return Err(EngineError::InvalidConfig(
                "checkpoint times must be strictly increasing and positive".into(),
            ));
        }
        prev = c;
    }
    if prev > tpl.t_final + 1e-12 {
        return Err(EngineError::InvalidConfig(format!(
            "checkpoint {prev} exceeds horizon {}",
            tpl.t_final
        )));
    }

    let checkpoints = if cfg.checkpoint_times.is_empty() {
        vec![tpl.t_final]
    } else {
        cfg.checkpoint_times.clone()
    };
    let u_nested = to_nested(u);
    let mut x = to_nested(x_init);

    let guard = |x: &[Vec<f64>], t: f64| -> Result<(), EngineError> {
        for row in x {
            for &v in row {
                if !v.is_finite() || v.abs() > cfg.blowup_guard {
                    return Err(EngineError::DivergentDynamics { time: t });
                }
            }
        }
        Ok(())
    };
    guard(&x, 0.0)?;

    let mut marks = checkpoints.clone();
    if *marks.last().unwrap() < tpl.t_final - 1e-12 {
        marks.push(tpl.t_final);
    }

    let mut outputs = Vec::new();
    let mut t_prev = 0.0;
    for &mark in &marks {
        // Same stepping contract as the engine: whole steps of dt, then one
        // shortened step onto the mark; remainders below 1e-9*dt are
        // roundoff and dropped.
        let span = mark - t_prev;
        let n_full = if span <= 0.0 {
            0u64
        } else {
            (span / cfg.dt).floor() as u64
        };
        let mut rem = span - n_full as f64 * cfg.dt;
        if rem < 1e-9 * cfg.dt {
            rem = 0.0;
        }
        for s in 0..n_full {
            match cfg.method {
                Method::Euler => euler_step(spec, &mut x, &u_nested, tpl, cfg, cfg.dt),
                Method::Rk4 => rk4_step(spec, &mut x, &u_nested, tpl, cfg, cfg.dt),
            }
            guard(&x, t_prev + (s + 1) as f64 * cfg.dt)?;
        }
        if rem > 0.0 {
            match cfg.method {
                Method::Euler => euler_step(spec, &mut x, &u_nested, tpl, cfg, rem),
                Method::Rk4 => rk4_step(spec, &mut x, &u_nested, tpl, cfg, rem),
            }
            guard(&x, mark)?;
        }
        t_prev = mark;
        if checkpoints.contains(&mark) {
            let mut y = vec![vec![0.0; spec.cols]; spec.rows];
            for i in 0..spec.rows {
                for j in 0..spec.cols {
                    y[i][j] = saturate(x[i][j]);
                }
            }
            outputs.push((mark, to_field(spec.rows, spec.cols, &y)?));
        }
    }

    Ok(TransientResult {
        outputs,
        final_state: to_field(spec.rows, spec.cols, &x)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_transient, DiffNonlinearity};
    use rand::{Rng, SeedableRng};

    #[test]
    fn one_euler_step_of_unit_bias() {
        let spec = GridSpec::new(1, 1).unwrap();
        let mut tpl = TemplateSet::zeroed("bias");
        tpl.bias = 1.0;
        tpl.t_final = 0.1;
        let cfg = IntegrationConfig {
            dt: 0.1,
            method: Method::Euler,
            ..IntegrationConfig::default()
        };
        let u = CellField::zeros(1, 1);
        let x0 = CellField::zeros(1, 1);
        let res = simulate_reference(&spec, &u, Some(&x0), &tpl, &cfg).unwrap();
        assert!((res.final_state.get(0, 0).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn decay_matches_closed_form() {
        let spec = GridSpec::new(3, 3).unwrap();
        let mut tpl = TemplateSet::zeroed("zero");
        tpl.t_final = 2.0;
        let cfg = IntegrationConfig {
            dt: 0.01,
            ..IntegrationConfig::default()
        };
        let x0 =
            CellField::from_values(3, 3, (0..9).map(|i| (i as f64) * 0.2 - 0.8).collect()).unwrap();
        let u = CellField::zeros(3, 3);
        let res = simulate_reference(&spec, &u, Some(&x0), &tpl, &cfg).unwrap();
        for (i, v) in res.final_state.values().iter().enumerate() {
            let expected = x0.values()[i] * (-2.0f64).exp();
            assert!((v - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_large_grids() {
        let spec = GridSpec::new(33, 8).unwrap();
        let tpl = TemplateSet::zeroed("zero");
        let u = CellField::zeros(33, 8);
        assert!(matches!(
            simulate_reference(&spec, &u, None, &tpl, &IntegrationConfig::default()),
            Err(EngineError::InvalidGrid(_))
        ));
    }

    fn random_template(rng: &mut impl Rng, scale: f64) -> TemplateSet {
        let mut tpl = TemplateSet::zeroed("rand");
        for k in 0..9 {
            tpl.feedback[k] = rng.random_range(-scale..=scale);
            tpl.input[k] = rng.random_range(-scale..=scale);
            tpl.state[k] = rng.random_range(-scale * 0.5..=scale * 0.5);
            tpl.nonlinear[k] = rng.random_range(-scale * 0.5..=scale * 0.5);
        }
        tpl.d_nl = match rng.random_range(0..3) {
            0 => DiffNonlinearity::Identity,
            1 => DiffNonlinearity::PwlDiff,
            _ => DiffNonlinearity::CubicDiff,
        };
        tpl.bias = rng.random_range(-scale..=scale);
        tpl.t_final = rng.random_range(0.5..=2.0);
        tpl
    }

    #[test]
    fn agrees_with_engine_on_random_cases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let spec_zero = GridSpec::new(8, 8).unwrap();
        let spec_rep = GridSpec::with_boundary(8, 8, Boundary::Replicate).unwrap();
        for case in 0..40 {
            let spec = if case % 2 == 0 { &spec_zero } else { &spec_rep };
            let tpl = random_template(&mut rng, 0.6);
            let u = CellField::from_values(
                8,
                8,
                (0..64).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            )
            .unwrap();
            let cfg = IntegrationConfig {
                dt: 0.05,
                method: if case % 3 == 0 { Method::Euler } else { Method::Rk4 },
                checkpoint_times: vec![0.25, 0.5, tpl.t_final],
                ..IntegrationConfig::default()
            };
            let a = run_transient(spec, &u, None, &tpl, &cfg);
            let b = simulate_reference(spec, &u, None, &tpl, &cfg);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    let d = a.final_state.max_abs_diff(&b.final_state).unwrap();
                    assert!(d <= 1e-9, "case {case}: final state differs by {d}");
                    for ((ta, ya), (tb, yb)) in a.outputs.iter().zip(&b.outputs) {
                        assert_eq!(ta, tb);
                        assert!(ya.max_abs_diff(yb).unwrap() <= 1e-9);
                    }
                }
                (Err(ea), Err(eb)) => {
                    assert_eq!(ea.to_string(), eb.to_string(), "case {case}");
                }
                (a, b) => panic!("case {case}: engine {a:?} vs oracle {b:?}"),
            }
        }
    }
}
