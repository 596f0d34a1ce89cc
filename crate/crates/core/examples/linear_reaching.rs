//! iLQR on known linear dynamics: a damped single joint driven to 0.5 rad.
//! Shows the solver trace and the closed-loop rollout.

use curious_ilqr::ilqr::{self, LinearDynamics, SolverConfig};
use curious_ilqr::ReachingCost;
use nalgebra::{DMatrix, DVector};

fn main() -> curious_ilqr::Result<()> {
    let dt = 0.05;
    // θ̈ = −2θ − 0.5θ̇ + 4τ with the model's Euler chain
    let dynamics = LinearDynamics {
        a: DMatrix::from_row_slice(2, 2, &[1.0 - 2.0 * dt * dt, dt - 0.5 * dt * dt, -2.0 * dt, 1.0 - 0.5 * dt]),
        b: DMatrix::from_row_slice(2, 1, &[4.0 * dt * dt, 4.0 * dt]),
        noise: DMatrix::zeros(2, 2),
    };
    let cost = ReachingCost {
        target_theta: DVector::from_element(1, 0.5),
        q_pos: 1000.0,
        q_vel: 10.0,
        r_ctrl: 100.0,
        terminal_scale: 10.0,
    };
    let cfg = SolverConfig { sigma: 0.0, horizon: 40, dt, ..Default::default() };
    let x0 = DVector::zeros(2);
    let init = ilqr::random_controls(1, cfg.horizon, 0.01, 0)?;
    let policy = ilqr::solve(&dynamics, &cost, &x0, init, &cfg)?;

    println!("{:>4} {:>10} {:>6} {:>14} {:>9}", "iter", "lambda", "alpha", "cost", "accepted");
    for t in &policy.trace {
        let alpha = t.alpha.map_or("-".to_string(), |a| format!("{a}"));
        println!("{:>4} {:>10.3e} {:>6} {:>14.6} {:>9}", t.iteration, t.lambda, alpha, t.cost, t.accepted);
    }
    println!("stop: {:?}, converged {}", policy.stop_reason, policy.converged);

    for t in (0..=cfg.horizon).step_by(8) {
        let x = &policy.nominal_states[t];
        println!("t={:>5.2}s  theta {:>8.4}  omega {:>8.4}", t as f64 * dt, x[0], x[1]);
    }
    Ok(())
}
