//! Two-group dose-response trial data with an optional pooled placebo arm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Group;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseLevel {
    pub dose: f64,
    pub responses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupData {
    pub levels: Vec<DoseLevel>,
}

/// Sufficient statistics of one dose level for least squares: the sum of
/// squares around any curve value `m` is `n (mean - m)^2 + ssw`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSummary {
    pub dose: f64,
    pub n: usize,
    pub mean: f64,
    pub ssw: f64,
}

impl LevelSummary {
    pub fn from_responses(dose: f64, responses: &[f64]) -> Self {
        let n = responses.len();
        let mean = responses.iter().sum::<f64>() / n as f64;
        let ssw = responses.iter().map(|y| (y - mean) * (y - mean)).sum();
        Self { dose, n, mean, ssw }
    }
}

impl GroupData {
    pub fn new(levels: Vec<DoseLevel>) -> Self {
        Self { levels }
    }

    /// Builds a group from design doses and per-dose replicate responses.
    pub fn from_design(doses: &[f64], responses: Vec<Vec<f64>>) -> Self {
        Self {
            levels: doses
                .iter()
                .zip(responses)
                .map(|(&dose, responses)| DoseLevel { dose, responses })
                .collect(),
        }
    }

    /// Total observations `n_l`.
    pub fn n(&self) -> usize {
        self.levels.iter().map(|l| l.responses.len()).sum()
    }

    pub fn doses(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.dose).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.responses.len()).collect()
    }

    pub fn summaries(&self) -> Vec<LevelSummary> {
        self.levels
            .iter()
            .map(|l| LevelSummary::from_responses(l.dose, &l.responses))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    groups: [GroupData; 2],
    placebo: Option<Vec<f64>>,
    region: (f64, f64),
}

impl TrialDataset {
    pub fn new(
        first: GroupData,
        second: GroupData,
        placebo: Option<Vec<f64>>,
        region: (f64, f64),
    ) -> Result<Self> {
        let data = Self {
            groups: [first, second],
            placebo,
            region,
        };
        data.validate()?;
        Ok(data)
    }

    /// Region defaults to `[min(0 if placebo, smallest dose), largest dose]`.
    pub fn with_default_region(
        first: GroupData,
        second: GroupData,
        placebo: Option<Vec<f64>>,
    ) -> Result<Self> {
        let all = first.levels.iter().chain(&second.levels).map(|l| l.dose);
        let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
            (lo.min(d), hi.max(d))
        });
        if placebo.is_some() {
            lo = lo.min(0.0);
            hi = hi.max(0.0);
        }
        if !lo.is_finite() {
            return Err(Error::Dataset("dataset has no dose levels".into()));
        }
        Self::new(first, second, placebo, (lo, hi))
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.region;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Dataset(format!("dose region [{lo}, {hi}] needs lo < hi")));
        }
        for group in Group::BOTH {
            let g = self.group(group);
            if g.levels.is_empty() {
                return Err(Error::Dataset(format!("group {} has no observations", group.label())));
            }
            for (i, level) in g.levels.iter().enumerate() {
                let d = level.dose;
                if !(d >= 0.0) || !d.is_finite() {
                    return Err(Error::Dataset(format!(
                        "group {}: dose {d} must be finite and >= 0",
                        group.label()
                    )));
                }
                if d < lo || d > hi {
                    return Err(Error::Dataset(format!(
                        "group {}: dose {d} outside region [{lo}, {hi}]",
                        group.label()
                    )));
                }
                if i > 0 && !(g.levels[i - 1].dose < d) {
                    return Err(Error::Dataset(format!(
                        "group {}: doses must be strictly increasing",
                        group.label()
                    )));
                }
                if level.responses.is_empty() {
                    return Err(Error::Dataset(format!(
                        "group {}: dose {d} has no responses",
                        group.label()
                    )));
                }
                if level.responses.iter().any(|y| !y.is_finite()) {
                    return Err(Error::Dataset(format!(
                        "group {}: non-finite response at dose {d}",
                        group.label()
                    )));
                }
            }
        }
        if let Some(placebo) = &self.placebo {
            if placebo.is_empty() {
                return Err(Error::Dataset("pooled placebo arm is empty".into()));
            }
            if placebo.iter().any(|y| !y.is_finite()) {
                return Err(Error::Dataset("non-finite placebo response".into()));
            }
            if lo > 0.0 {
                return Err(Error::Dataset("dose region must contain the placebo dose 0".into()));
            }
            for group in Group::BOTH {
                if self.group(group).levels.iter().any(|l| l.dose == 0.0) {
                    return Err(Error::Dataset(format!(
                        "group {} has its own dose-0 level while a pooled placebo arm is present",
                        group.label()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn group(&self, group: Group) -> &GroupData {
        &self.groups[group.index()]
    }

    pub fn placebo(&self) -> Option<&[f64]> {
        self.placebo.as_deref()
    }

    pub fn region(&self) -> (f64, f64) {
        self.region
    }

    pub fn max_dose(&self) -> f64 {
        self.region.1
    }

    /// Observations of group `group`, excluding the pooled placebo arm.
    pub fn n(&self, group: Group) -> usize {
        self.group(group).n()
    }

    pub fn n_placebo(&self) -> usize {
        self.placebo.as_ref().map_or(0, Vec::len)
    }

    pub fn n_total(&self) -> usize {
        self.n(Group::First) + self.n(Group::Second) + self.n_placebo()
    }

    /// Group data with the placebo arm split as `(to first, to second)`; the
    /// result has no pooled arm and both groups gain a dose-0 level.
    pub fn split_placebo(&self, to_first: usize) -> Result<TrialDataset> {
        let placebo = self
            .placebo
            .as_ref()
            .ok_or_else(|| Error::Dataset("dataset has no pooled placebo arm".into()))?;
        if to_first == 0 || to_first >= placebo.len() {
            return Err(Error::InvalidInput(
                "both groups need at least one placebo observation".into(),
            ));
        }
        let (a, b) = placebo.split_at(to_first);
        let with_zero = |g: &GroupData, ys: &[f64]| {
            let mut levels = vec![DoseLevel {
                dose: 0.0,
                responses: ys.to_vec(),
            }];
            levels.extend(g.levels.iter().cloned());
            GroupData { levels }
        };
        TrialDataset::new(
            with_zero(&self.groups[0], a),
            with_zero(&self.groups[1], b),
            None,
            self.region,
        )
    }

    /// CSV with header `group,dose,response`; placebo rows use group 0.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("group,dose,response\n");
        if let Some(placebo) = &self.placebo {
            for y in placebo {
                out.push_str(&format!("0,0,{y}\n"));
            }
        }
        for group in Group::BOTH {
            for level in &self.group(group).levels {
                for y in &level.responses {
                    out.push_str(&format!("{},{},{y}\n", group.label(), level.dose));
                }
            }
        }
        out
    }
}
