// Least squares restricted to curves exactly at the equivalence margin.
use curve_equivalence::simulation::CellTruth;
use curve_equivalence::{
    fit_constrained, fit_joint_ols, generate_dataset, max_abs_deviation, select_constrained_estimate,
    ConstraintOptions, DoseRegion, ModelFamily, ModelSpec, SolverOptions,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let doses = vec![0.0, 1.0, 2.0, 3.0, 4.0];
    let truth = CellTruth {
        families: [ModelFamily::SigmoidEmax4, ModelFamily::SigmoidEmax4],
        params: [vec![1.0, 5.0, 4.0, 1.3], vec![1.0, 5.0, 4.0, 1.43]],
        doses: [doses.clone(), doses],
        per_dose: [30, 30],
        variances: [1.0, 1.0],
        region: (0.0, 4.0),
    };
    let data = generate_dataset(&truth, 7)?;
    let spec = ModelSpec::new(ModelFamily::SigmoidEmax4, ModelFamily::SigmoidEmax4, 3, 4.0)?;
    let region = DoseRegion::new(0.0, 4.0)?;

    let fit = fit_joint_ols(&data, &spec, &SolverOptions::default())?;
    let d_hat = max_abs_deviation(&spec, &fit.params, &region)?.d_inf;
    println!("unconstrained {:.4?} rss {:.3} d_inf {d_hat:.4}", fit.params, fit.rss);

    let epsilon = 1.0;
    let c = fit_constrained(&data, &spec, &region, &fit, &ConstraintOptions::with_epsilon(epsilon))?;
    println!(
        "constrained   {:.4?} rss {:.3} d_inf {:.6} (converged {}, {} outer steps)",
        c.params(),
        c.rss(),
        c.d_inf,
        c.converged,
        c.outer_iterations
    );
    println!("bootstrap model {:.4?}", select_constrained_estimate(&fit, &c, d_hat, epsilon));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
