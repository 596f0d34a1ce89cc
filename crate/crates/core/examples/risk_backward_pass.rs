//! One backward pass on a scalar linear-Gaussian system for several values
//! of sigma. Negative sigma lowers the control Hessian and changes the gain:
//! the planner starts to favour uncertain states.

use curious_ilqr::ilqr::backward_pass;
use curious_ilqr::{CostExpansion, LinearizedStep};
use nalgebra::{DMatrix, DVector};

fn main() -> curious_ilqr::Result<()> {
    let one = DMatrix::from_element(1, 1, 1.0);
    let horizon = 10;
    let step = LinearizedStep { a: one.clone(), b: one.clone(), c: one.clone(), sigma_next: one.clone() * 0.5 };
    let stage = CostExpansion {
        q0: 0.0,
        q_x: DVector::zeros(1),
        q_xx: one.clone(),
        r_u: DVector::zeros(1),
        r_uu: one.clone(),
        p_xu: DMatrix::zeros(1, 1),
    };
    let terminal = CostExpansion { r_uu: DMatrix::zeros(1, 1), ..stage.clone() };
    let mut costs = vec![stage; horizon];
    costs.push(terminal);
    let steps = vec![step; horizon];

    println!("{:>7} {:>10} {:>10} {:>10} {:>10}", "sigma", "H_0", "K_0", "S_0", "s0_0");
    for sigma in [0.1, 0.05, 0.0, -0.05, -0.1, -0.3] {
        let bp = backward_pass(&steps, &costs, sigma, 0.0)?;
        println!(
            "{:>7.2} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            sigma,
            bp.hessians[0][(0, 0)],
            bp.gains[0][(0, 0)],
            bp.values[0].s_mat[(0, 0)],
            bp.values[0].s0
        );
    }
    Ok(())
}
