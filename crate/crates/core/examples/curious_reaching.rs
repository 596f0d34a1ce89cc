//! Learn to reach a target with the two-link arm, once with the curious
//! (risk-seeking) planner and once with plain iLQR, from the same seed.

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
    let iterations = 3;

    for mode in [ExplorationMode::curious(), ExplorationMode::Normal] {
        let result = mbrl::run_experiment(&sim, &cost, &cfg, &mode, &settings, iterations, 7)?;
        println!("{} (babble model rmse {:.3})", mode.name(), result.initial_model_rmse);
        for r in &result.records {
            println!(
                "  iter {}  ee distance {:.4} m  model rmse {:.3}  data {}  solver iters {}",
                r.iteration, r.final_ee_distance, r.model_rmse, r.dataset_size, r.solver_iterations
            );
        }
    }
    Ok(())
}
