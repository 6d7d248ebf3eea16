// Maximum absolute deviation between two curves over the dose range.
use curve_equivalence::{
    deviation_with_trace, extremal_sets, integrated_abs_deviation, DoseRegion, ModelFamily, ModelSpec,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ModelSpec::new(ModelFamily::SigmoidEmax4, ModelFamily::SigmoidEmax4, 3, 4.0)?;
    let region = DoseRegion::new(0.0, 4.0)?;
    for ed50 in [1.99, 1.59, 1.37, 1.3] {
        let beta = [1.0, 5.0, 4.0, 1.3, ed50];
        let dev = deviation_with_trace(&spec, &beta, &region)?;
        let sets = extremal_sets(&spec, &beta, &region, 1e-9)?;
        println!(
            "ED50 {ed50}: d_inf {:.4} at {:?}, area {:.4}, maximizers {}",
            dev.d_inf,
            sets.positive.first().or(sets.negative.first()),
            integrated_abs_deviation(&spec, &beta, &region)?,
            dev.maximizers.len()
        );
    }

    let mut csv = Vec::new();
    deviation_with_trace(&spec, &[1.0, 5.0, 4.0, 1.3, 1.59], &region.with_grid(5)?)?.write_trace_csv(&mut csv)?;
    print!("{}", String::from_utf8(csv)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
