//! Train a model on one target, then reuse it without further learning to
//! reach targets it never trained for.

use curious_ilqr::arm::ArmParams;
use curious_ilqr::ilqr::SolverConfig;
use curious_ilqr::mbrl::{self, ExplorationMode, MbrlSettings};
use curious_ilqr::ReachingCost;
use nalgebra::DVector;

fn main() -> curious_ilqr::Result<()> {
    let sim = ArmParams::default();
    let cost = ReachingCost::new(DVector::from_vec(vec![1.0, 0.8]));
    let cfg = SolverConfig::default();
    let settings = MbrlSettings::default();
    let trained = mbrl::run_experiment(&sim, &cost, &cfg, &ExplorationMode::curious(), &settings, 3, 11)?;
    println!("trained on {} transitions", trained.dataset.len());

    let targets: Vec<DVector<f64>> =
        [[0.6, -0.5], [-0.4, 0.9], [1.2, 0.3]].iter().map(|t| DVector::from_row_slice(t)).collect();
    let outcomes =
        mbrl::evaluate_transfer(&trained.final_model, &sim, &cost, &targets, &cfg, &settings.start_theta, 0)?;
    for o in outcomes {
        println!(
            "target {:?}: ee distance {:.4} m, solver converged {}",
            o.target.as_slice(),
            o.ee_distance,
            o.solver_converged
        );
    }
    Ok(())
}
