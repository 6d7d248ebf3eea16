// Power against the true deviation for different numbers of shared
// parameters, all on the same simulated trials.
use curve_equivalence::simulation::write_power_csv;
use curve_equivalence::{scenario3_kappa_for_distance, scenario3_power_curve};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let kappas = [scenario3_kappa_for_distance(0.5)?, 2.0, 3.0];
    let points = scenario3_power_curve(&kappas, &[3, 0], 8, 100, 11)?;
    write_power_csv(&points, std::io::stdout().lock())?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
