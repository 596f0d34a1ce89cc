//! Fit the GP dynamics model to motor babbling and check it on a second,
//! independent babbling run.

use curious_ilqr::arm::{self, ArmParams, State};
use curious_ilqr::gp::{GpModel, HyperparamSpec, OptimizeOptions};

fn main() -> curious_ilqr::Result<()> {
    let params = ArmParams::default();
    let start = State::at_rest(&[0.0, 0.0]);
    let train = arm::motor_babble(&params, &start, 1.0, 0.02, 1)?;
    let test = arm::motor_babble(&params, &start, 0.5, 0.02, 2)?;

    let model = GpModel::fit(&train, &HyperparamSpec::Optimize(OptimizeOptions::default()), 0)?;
    for (j, k) in model.hyperparams().outputs.iter().enumerate() {
        println!(
            "joint {j}: sf2 {:.3e}  noise {:.3e}  length scales {:?}",
            k.signal_variance,
            k.noise_variance,
            k.length_scales.iter().map(|l| format!("{l:.3}")).collect::<Vec<_>>()
        );
    }
    println!("{} training points", model.n_points());
    println!("train rmse {:.4} rad/s^2", model.prediction_error(&train)?);
    println!("test rmse  {:.4} rad/s^2", model.prediction_error(&test)?);

    // one prediction with its uncertainty
    let t = test.iter().next().unwrap();
    let p = model.predict(&t.state, &t.action)?;
    println!("first test point: true {:?}", t.accel.as_slice());
    println!("  predicted mean {:?} variance {:?}", p.mean_accel.as_slice(), p.accel_covariance.diagonal().as_slice());
    Ok(())
}
