#![allow(dead_code)]

use curve_equivalence::simulation::CellTruth;
use curve_equivalence::*;

pub const DOSES: [f64; 5] = [0.0, 1.0, 2.0, 3.0, 4.0];

pub fn sigmoid_spec(shared: usize) -> ModelSpec {
    ModelSpec::new(ModelFamily::SigmoidEmax4, ModelFamily::SigmoidEmax4, shared, 4.0).unwrap()
}

/// Scenario-1 design with reference `(1, 5, 4, 1.3)` and comparator ED50 `ed50`.
pub fn scenario1_truth(ed50: f64, per_dose: usize, variance: f64) -> CellTruth {
    CellTruth {
        families: [ModelFamily::SigmoidEmax4, ModelFamily::SigmoidEmax4],
        params: [vec![1.0, 5.0, 4.0, 1.3], vec![1.0, 5.0, 4.0, ed50]],
        doses: [DOSES.to_vec(), DOSES.to_vec()],
        per_dose: [per_dose; 2],
        variances: [variance; 2],
        region: (0.0, 4.0),
    }
}

pub fn scenario1_data(ed50: f64, per_dose: usize, variance: f64, seed: u64) -> TrialDataset {
    generate_dataset(&scenario1_truth(ed50, per_dose, variance), seed).unwrap()
}

pub fn region() -> DoseRegion {
    DoseRegion::new(0.0, 4.0).unwrap()
}

/// Groups whose every response equals the curve value.
pub fn noise_free(spec: &ModelSpec, beta: &[f64], doses: &[f64], per_dose: usize) -> TrialDataset {
    let groups = Group::BOTH.map(|g| {
        let ys = doses
            .iter()
            .map(|&d| vec![spec.evaluate(g, d, beta).unwrap(); per_dose])
            .collect();
        GroupData::from_design(doses, ys)
    });
    let [a, b] = groups;
    TrialDataset::with_default_region(a, b, None).unwrap()
}
