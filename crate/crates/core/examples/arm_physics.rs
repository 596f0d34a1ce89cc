//! Swing the default two-link arm with a constant shoulder torque and print
//! joint angles, end-effector position and kinetic energy.

use curious_ilqr::arm::{self, Action, ArmParams, State};

fn main() -> curious_ilqr::Result<()> {
    let params = ArmParams::default();
    let mut s = State::at_rest(&[0.0, 0.0]);
    let push = Action::from_slice(&[0.02, 0.0]);

    println!("{:>6} {:>9} {:>9} {:>9} {:>9} {:>10}", "t", "theta1", "theta2", "ee_x", "ee_y", "kinetic");
    for i in 0..=240 {
        if i % 24 == 0 {
            let ee = arm::forward_kinematics(&params, &s.theta)?;
            let ke = arm::kinetic_energy(&params, &s)?;
            println!(
                "{:>6.3} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>10.3e}",
                i as f64 * params.dt,
                s.theta[0],
                s.theta[1],
                ee[0],
                ee[1],
                ke
            );
        }
        s = arm::step(&params, &s, &push)?;
    }

    // inertia seen by the torques at the final pose
    let m = arm::mass_matrix(&params, &s.theta)?;
    println!("mass matrix at the final pose:{m}");
    Ok(())
}
