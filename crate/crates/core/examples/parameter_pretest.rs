// Pretest that the parameters assumed common differ by less than `delta`.
use curve_equivalence::simulation::CellTruth;
use curve_equivalence::{
    generate_dataset, parameter_equivalence_pretest, Group, pretest_thresholds, ModelFamily, ModelSpec, SolverOptions,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let doses = vec![0.0, 1.0, 2.0, 3.0, 4.0];
    let truth = CellTruth {
        families: [ModelFamily::SigmoidEmax4, ModelFamily::SigmoidEmax4],
        params: [vec![1.0, 5.0, 4.0, 1.3], vec![1.0, 5.0, 4.0, 1.59]],
        doses: [doses.clone(), doses],
        per_dose: [30, 30],
        variances: [1.0, 1.0],
        region: (0.0, 4.0),
    };
    let data = generate_dataset(&truth, 3)?;
    let spec = ModelSpec::new(ModelFamily::SigmoidEmax4, ModelFamily::SigmoidEmax4, 0, 4.0)?;

    for delta in [0.4, 1.0, 1.5] {
        let r = parameter_equivalence_pretest(&data, &spec, delta, 0.05, 3, &SolverOptions::default())?;
        println!("delta {delta}: {:?}", r.decision);
        for ((name, d), t) in spec.family(Group::First).param_names().iter().zip(&r.differences).zip(&r.thresholds) {
            println!("  {name:>5} |diff| {d:.4} threshold {t:.4}");
        }
    }

    println!("thresholds from a fixed omega: {:.3?}", pretest_thresholds(&[3127.91, 10748.27], 300, 1.5, 0.05)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
