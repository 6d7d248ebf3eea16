// Built-in dose-response families, their gradients, and a user family
// registered by tag.
use curve_equivalence::{LocationScale, ModelFamily, ModelRegistry};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let sig = ModelFamily::SigmoidEmax4;
    let beta = [1.0, 5.0, 4.0, 1.3];
    println!("{} params {:?}", sig.tag(), sig.param_names());
    for d in [0.0, 1.0, 1.3, 2.0, 4.0] {
        let g = sig.gradient_vec(d, &beta)?;
        println!("  m({d}) = {:.4}  grad = {:.4?}", sig.evaluate(d, &beta)?, g);
    }

    let emax = ModelFamily::Emax3;
    println!("{} at d = 2: {:.4}", emax.tag(), emax.evaluate(2.0, &[0.2, 3.0, 1.1])?);

    let mut registry = ModelRegistry::new();
    registry.register(LocationScale::new(
        "exp_rate",
        vec!["rate".into()],
        vec![(0.01, 5.0)],
        |d, b| 1.0 - (-b[0] * d).exp(),
        |d, b, g| g[0] = d * (-b[0] * d).exp(),
    )?)?;
    let custom = registry.lookup("exp_rate")?;
    println!("{} params {:?}", custom.tag(), custom.param_names());
    println!("  m(1) = {:.4}", custom.evaluate(1.0, &[2.0, 3.0, 0.7])?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
