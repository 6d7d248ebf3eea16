// A reduced Monte-Carlo run of the first simulation scenario.
use curve_equivalence::scenario1;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = scenario1();
    config.per_dose = vec![6];
    config.variances = vec![1.0];
    config.runs = 10;
    config.bootstrap = 100;
    config.seed = 5;

    let result = curve_equivalence::run_scenario(&config)?;
    let mut out = std::io::stdout().lock();
    result.write_rejections_csv(&mut out)?;
    result.write_rrmse_csv(&mut out)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
