// Two active-dose arms compared against one common placebo arm.
use curve_equivalence::{fit_pooled_placebo, GroupData, ModelFamily, ModelSpec, SolverOptions, TrialDataset};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let first = ModelFamily::SigmoidEmax4;
    let second = ModelFamily::Emax3;
    let arm = |f: &ModelFamily, beta: &[f64], doses: &[f64]| -> curve_equivalence::Result<GroupData> {
        let ys = doses
            .iter()
            .map(|&d| {
                let m = f.evaluate(d, beta)?;
                Ok((0..10).map(|j| m + 0.1 * ((j % 5) as f64 - 2.0)).collect())
            })
            .collect::<curve_equivalence::Result<Vec<Vec<f64>>>>()?;
        Ok(GroupData::from_design(doses, ys))
    };
    let a = arm(&first, &[1.0, 5.0, 2.0, 1.3], &[0.5, 1.0, 2.0, 4.0])?;
    let b = arm(&second, &[1.0, 4.0, 0.8], &[0.5, 1.0, 2.0, 4.0])?;
    let placebo = vec![0.9, 1.1, 1.0, 0.8, 1.2, 1.0, 1.05, 0.95];
    let data = TrialDataset::new(a, b, Some(placebo), (0.0, 4.0))?;

    // only the intercept is common
    let spec = ModelSpec::new(first, second, 1, 4.0)?;
    let fit = fit_pooled_placebo(&data, &spec, &SolverOptions::default())?;
    for (name, v) in fit.names.iter().zip(&fit.params) {
        println!("{name:>8} {v:.4}");
    }
    println!("placebo n {} variance {:.4?}", fit.n_placebo, fit.placebo_variance);
    println!("arm variances {:.4?}", fit.variances);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
