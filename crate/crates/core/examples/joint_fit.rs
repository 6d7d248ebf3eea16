// Least squares fit of two sigmoid Emax curves with and without common
// parameters.
use curve_equivalence::simulation::CellTruth;
use curve_equivalence::{fit_joint_ols, fit_separate, generate_dataset, ModelFamily, ModelSpec, SolverOptions};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let doses = vec![0.0, 1.0, 2.0, 3.0, 4.0];
    let truth = CellTruth {
        families: [ModelFamily::SigmoidEmax4, ModelFamily::SigmoidEmax4],
        params: [vec![1.0, 5.0, 4.0, 1.3], vec![1.0, 5.0, 4.0, 1.59]],
        doses: [doses.clone(), doses],
        per_dose: [18, 18],
        variances: [1.0, 1.0],
        region: (0.0, 4.0),
    };
    let data = generate_dataset(&truth, 2024)?;
    let opts = SolverOptions::default();

    for shared in [3, 0] {
        let spec = ModelSpec::new(ModelFamily::SigmoidEmax4, ModelFamily::SigmoidEmax4, shared, 4.0)?;
        let fit = fit_joint_ols(&data, &spec, &opts)?;
        println!("shared = {shared}: rss {:.3}, variances {:.3?}", fit.rss, fit.variances);
        let se = fit.standard_errors.clone().unwrap_or_default();
        for (i, name) in fit.names.iter().enumerate() {
            println!("  {name:>8} {:8.4}  se {:.4}", fit.params[i], se.get(i).copied().unwrap_or(f64::NAN));
        }
    }

    let spec = ModelSpec::new(ModelFamily::SigmoidEmax4, ModelFamily::SigmoidEmax4, 0, 4.0)?;
    for g in fit_separate(&data, &spec, &opts)? {
        println!("separate {:?}: {:.4?} (n = {})", g.group, g.params, g.n);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
