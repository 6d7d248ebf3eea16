//! Dose-response families, the shared/group parameter layout, and the
//! parameter box used by every solver.
//!
//! Built-in families:
//!
//! - `emax3`: `E0 + Emax * d / (ED50 + d)`, parameters `(E0, Emax, ED50)`.
//! - `sigemax4`: `E0 + Emax * d^h / (ED50^h + d^h)`, parameters
//!   `(E0, Emax, h, ED50)`.
//!
//! Custom families are location-scale models `b0 + b1 * base(d, rest)` with
//! `base(0, .) = 0`, registered by name in a [`ModelRegistry`].
//!
//! The joint parameter vector of a two-group model with `p'` shared leading
//! parameters is laid out as `(shared, group-1 rest, group-2 rest)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower/upper box for E0 and Emax of the built-in families.
const LEVEL_BOUND: f64 = 100.0;
const HILL_BOUNDS: (f64, f64) = (0.1, 20.0);
const ED50_LOWER: f64 = 1e-4;
const ED50_UPPER_FACTOR: f64 = 10.0;

pub type BaseFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
pub type BaseGradFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// One of the two groups being compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    First,
    Second,
}

impl Group {
    pub const BOTH: [Group; 2] = [Group::First, Group::Second];

    pub fn index(self) -> usize {
        match self {
            Group::First => 0,
            Group::Second => 1,
        }
    }

    pub fn other(self) -> Group {
        match self {
            Group::First => Group::Second,
            Group::Second => Group::First,
        }
    }

    /// Group label as used in data files (1 or 2).
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }
}

/// Location-scale family `b0 + b1 * base(d, rest)` with `base(0, .) = 0`.
pub struct LocationScale {
    name: String,
    base_names: Vec<String>,
    base_bounds: Vec<(f64, f64)>,
    base: Arc<BaseFn>,
    base_grad: Arc<BaseGradFn>,
}

impl LocationScale {
    /// Registers a base function and its gradient with respect to the base
    /// parameters. `base_bounds` gives one `(lower, upper)` pair per base
    /// parameter; the base must vanish at dose 0 (checked at the box centre).
    pub fn new<F, G>(
        name: impl Into<String>,
        base_names: Vec<String>,
        base_bounds: Vec<(f64, f64)>,
        base: F,
        base_grad: G,
    ) -> Result<Self>
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        let name = name.into();
        if base_names.len() != base_bounds.len() {
            return Err(Error::Dimension {
                expected: base_names.len(),
                got: base_bounds.len(),
            });
        }
        if base_bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidInput(format!(
                "family `{name}`: every base bound needs lower < upper"
            )));
        }
        let centre: Vec<f64> = base_bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
        let at_zero = base(0.0, &centre);
        if at_zero != 0.0 {
            return Err(Error::InvalidInput(format!(
                "family `{name}`: base function must vanish at dose 0, got {at_zero}"
            )));
        }
        Ok(Self {
            name,
            base_names,
            base_bounds,
            base: Arc::new(base),
            base_grad: Arc::new(base_grad),
        })
    }

    /// Straight line `b0 + b1 * d`.
    pub fn linear() -> Self {
        Self::new("linear", Vec::new(), Vec::new(), |d, _| d, |_, _, _| {})
            .expect("linear base vanishes at zero")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        2 + self.base_names.len()
    }
}

impl fmt::Debug for LocationScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocationScale")
            .field("name", &self.name)
            .field("base_names", &self.base_names)
            .field("base_bounds", &self.base_bounds)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum ModelFamily {
    Emax3,
    SigmoidEmax4,
    LocationScale(Arc<LocationScale>),
}

impl ModelFamily {
    /// Built-in family for a config tag.
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "emax3" => Ok(ModelFamily::Emax3),
            "sigemax4" => Ok(ModelFamily::SigmoidEmax4),
            "linear" => Ok(ModelFamily::LocationScale(Arc::new(LocationScale::linear()))),
            other => Err(Error::UnknownFamily(other.to_owned())),
        }
    }

    pub fn tag(&self) -> &str {
        match self {
            ModelFamily::Emax3 => "emax3",
            ModelFamily::SigmoidEmax4 => "sigemax4",
            ModelFamily::LocationScale(ls) => ls.name(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelFamily::Emax3 => 3,
            ModelFamily::SigmoidEmax4 => 4,
            ModelFamily::LocationScale(ls) => ls.dim(),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            ModelFamily::Emax3 => ["e0", "emax", "ed50"].map(String::from).to_vec(),
            ModelFamily::SigmoidEmax4 => ["e0", "emax", "hill", "ed50"].map(String::from).to_vec(),
            ModelFamily::LocationScale(ls) => {
                let mut names = vec!["intercept".to_owned(), "scale".to_owned()];
                names.extend(ls.base_names.iter().cloned());
                names
            }
        }
    }

    /// All built-in families satisfy `m(0, b) = b[0]`.
    pub fn is_location_scale(&self) -> bool {
        true
    }

    /// Default parameter box for a design whose largest dose is `max_dose`.
    pub fn default_bounds(&self, max_dose: f64) -> Vec<(f64, f64)> {
        let level = (-LEVEL_BOUND, LEVEL_BOUND);
        let ed50 = (ED50_LOWER, ED50_UPPER_FACTOR * max_dose.max(ED50_LOWER * 10.0));
        match self {
            ModelFamily::Emax3 => vec![level, level, ed50],
            ModelFamily::SigmoidEmax4 => vec![level, level, HILL_BOUNDS, ed50],
            ModelFamily::LocationScale(ls) => {
                let mut b = vec![level, level];
                b.extend(ls.base_bounds.iter().copied());
                b
            }
        }
    }

    fn check(&self, d: f64, params: &[f64]) -> Result<()> {
        if params.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: params.len(),
            });
        }
        if !(d >= 0.0) || !d.is_finite() {
            return Err(Error::Domain(format!("dose must be finite and >= 0, got {d}")));
        }
        match self {
            ModelFamily::Emax3 if !(params[2] > 0.0) => {
                Err(Error::Domain(format!("ED50 must be > 0, got {}", params[2])))
            }
            ModelFamily::SigmoidEmax4 if !(params[3] > 0.0) => {
                Err(Error::Domain(format!("ED50 must be > 0, got {}", params[3])))
            }
            ModelFamily::SigmoidEmax4 if d == 0.0 && !(params[2] > 0.0) => Err(Error::Domain(
                format!("d^h is undefined at d = 0 for h = {}", params[2]),
            )),
            _ => Ok(()),
        }
    }

    /// `m(d, params)` with domain checks.
    pub fn evaluate(&self, d: f64, params: &[f64]) -> Result<f64> {
        self.check(d, params)?;
        Ok(self.value(d, params))
    }

    /// `dm/dparams` with domain checks, written into `out`.
    pub fn gradient(&self, d: f64, params: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(d, params)?;
        if out.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: out.len(),
            });
        }
        self.grad_into(d, params, out);
        Ok(())
    }

    pub fn gradient_vec(&self, d: f64, params: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.gradient(d, params, &mut out)?;
        Ok(out)
    }

    /// Unchecked evaluation; callers keep `params` inside the family box.
    pub(crate) fn value(&self, d: f64, p: &[f64]) -> f64 {
        match self {
            ModelFamily::Emax3 => p[0] + p[1] * d / (p[2] + d),
            ModelFamily::SigmoidEmax4 => p[0] + p[1] * sigmoid_fraction(d, p[2], p[3]).0,
            ModelFamily::LocationScale(ls) => p[0] + p[1] * (ls.base)(d, &p[2..]),
        }
    }

    pub(crate) fn grad_into(&self, d: f64, p: &[f64], out: &mut [f64]) {
        match self {
            ModelFamily::Emax3 => {
                let denom = p[2] + d;
                out[0] = 1.0;
                out[1] = d / denom;
                out[2] = -p[1] * d / (denom * denom);
            }
            ModelFamily::SigmoidEmax4 => {
                let (frac, slope) = sigmoid_fraction(d, p[2], p[3]);
                out[0] = 1.0;
                out[1] = frac;
                if d > 0.0 {
                    out[2] = p[1] * slope * (d / p[3]).ln();
                    out[3] = -p[1] * slope * p[2] / p[3];
                } else {
                    out[2] = 0.0;
                    out[3] = 0.0;
                }
            }
            ModelFamily::LocationScale(ls) => {
                out[0] = 1.0;
                out[1] = (ls.base)(d, &p[2..]);
                let rest = &mut out[2..];
                (ls.base_grad)(d, &p[2..], rest);
                for g in rest.iter_mut() {
                    *g *= p[1];
                }
            }
        }
    }
}

/// Returns `f = d^h / (ed50^h + d^h)` and `f (1 - f)`, evaluated through the
/// logistic form `f = 1 / (1 + exp(-h ln(d / ed50)))`. At `d = 0` both are 0.
fn sigmoid_fraction(d: f64, hill: f64, ed50: f64) -> (f64, f64) {
    if d <= 0.0 {
        return (0.0, 0.0);
    }
    let z = hill * (d / ed50).ln();
    let e = (-z.abs()).exp();
    let big = 1.0 / (1.0 + e);
    let small = e / (1.0 + e);
    let frac = if z >= 0.0 { big } else { small };
    (frac, big * small)
}

/// Name -> family lookup for config files. Built-in tags always resolve.
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    custom: BTreeMap<String, ModelFamily>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, family: LocationScale) -> Result<()> {
        let name = family.name().to_owned();
        if ModelFamily::from_tag(&name).is_ok() || self.custom.contains_key(&name) {
            return Err(Error::InvalidInput(format!("family `{name}` is already registered")));
        }
        self.custom
            .insert(name, ModelFamily::LocationScale(Arc::new(family)));
        Ok(())
    }

    pub fn lookup(&self, tag: &str) -> Result<ModelFamily> {
        match self.custom.get(tag) {
            Some(f) => Ok(f.clone()),
            None => ModelFamily::from_tag(tag),
        }
    }
}

/// Who owns a joint coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    Shared,
    Group(Group),
}

/// The first `shared` local parameters of both groups are one joint block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterPartition {
    shared: usize,
    dims: [usize; 2],
}

impl ParameterPartition {
    pub fn new(shared: usize, p1: usize, p2: usize) -> Result<Self> {
        if shared > p1.min(p2) {
            return Err(Error::InvalidInput(format!(
                "shared parameter count {shared} exceeds min(p1, p2) = {}",
                p1.min(p2)
            )));
        }
        Ok(Self {
            shared,
            dims: [p1, p2],
        })
    }

    pub fn shared(&self) -> usize {
        self.shared
    }

    pub fn local_dim(&self, group: Group) -> usize {
        self.dims[group.index()]
    }

    /// `p1 + p2 - p'`.
    pub fn total(&self) -> usize {
        self.dims[0] + self.dims[1] - self.shared
    }

    pub fn joint_index(&self, group: Group, local: usize) -> usize {
        debug_assert!(local < self.local_dim(group));
        if local < self.shared {
            return local;
        }
        match group {
            Group::First => local,
            Group::Second => self.dims[0] + (local - self.shared),
        }
    }

    pub fn index_map(&self, group: Group) -> Vec<usize> {
        (0..self.local_dim(group))
            .map(|i| self.joint_index(group, i))
            .collect()
    }

    pub fn owner(&self, joint: usize) -> Owner {
        if joint < self.shared {
            Owner::Shared
        } else if joint < self.dims[0] {
            Owner::Group(Group::First)
        } else {
            Owner::Group(Group::Second)
        }
    }

    /// Local index of a joint coordinate within `group`, if the group uses it.
    pub fn local_index(&self, group: Group, joint: usize) -> Option<usize> {
        match (self.owner(joint), group) {
            (Owner::Shared, _) => Some(joint),
            (Owner::Group(Group::First), Group::First) => Some(joint),
            (Owner::Group(Group::Second), Group::Second) => {
                Some(joint - self.dims[0] + self.shared)
            }
            _ => None,
        }
    }

    /// `beta_l = (beta_0, beta~_l)` extracted from the joint vector.
    pub fn local_params(&self, group: Group, joint: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.local_dim(group)];
        self.local_params_into(group, joint, &mut out);
        out
    }

    pub(crate) fn local_params_into(&self, group: Group, joint: &[f64], out: &mut [f64]) {
        let s = self.shared;
        out[..s].copy_from_slice(&joint[..s]);
        let start = match group {
            Group::First => s,
            Group::Second => self.dims[0],
        };
        let rest = self.local_dim(group) - s;
        out[s..].copy_from_slice(&joint[start..start + rest]);
    }

    /// Places a group-local gradient into joint coordinates, the other
    /// group's block left at zero: `(h1, h~1, 0)` or `(h2, 0, h~2)`.
    pub fn embed_gradient(&self, group: Group, local_grad: &[f64]) -> Result<Vec<f64>> {
        if local_grad.len() != self.local_dim(group) {
            return Err(Error::Dimension {
                expected: self.local_dim(group),
                got: local_grad.len(),
            });
        }
        let mut out = vec![0.0; self.total()];
        for (i, g) in local_grad.iter().enumerate() {
            out[self.joint_index(group, i)] = *g;
        }
        Ok(out)
    }
}

/// Compact parameter set `B` as a coordinate box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidInput("parameter box needs lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((v, lo), hi)| *lo <= *v && *v <= *hi)
    }
}

/// Two families, their parameter partition and the joint box.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub families: [ModelFamily; 2],
    pub partition: ParameterPartition,
    pub bounds: ParamBox,
}

impl ModelSpec {
    /// Uses the default box of each family; shared coordinates take the
    /// intersection of both groups' bounds.
    pub fn new(first: ModelFamily, second: ModelFamily, shared: usize, max_dose: f64) -> Result<Self> {
        let partition = ParameterPartition::new(shared, first.dim(), second.dim())?;
        let total = partition.total();
        let mut lower = vec![f64::NEG_INFINITY; total];
        let mut upper = vec![f64::INFINITY; total];
        for (group, family) in Group::BOTH.iter().zip([&first, &second]) {
            for (i, (lo, hi)) in family.default_bounds(max_dose).into_iter().enumerate() {
                let j = partition.joint_index(*group, i);
                lower[j] = lower[j].max(lo);
                upper[j] = upper[j].min(hi);
            }
        }
        let bounds = ParamBox::new(lower, upper)?;
        Ok(Self {
            families: [first, second],
            partition,
            bounds,
        })
    }

    pub fn with_bounds(mut self, bounds: ParamBox) -> Result<Self> {
        if bounds.dim() != self.partition.total() {
            return Err(Error::Dimension {
                expected: self.partition.total(),
                got: bounds.dim(),
            });
        }
        self.bounds = bounds;
        Ok(self)
    }

    pub fn family(&self, group: Group) -> &ModelFamily {
        &self.families[group.index()]
    }

    pub fn dim(&self) -> usize {
        self.partition.total()
    }

    /// Joint coordinate names: shared names unsuffixed, group names with
    /// `_1` / `_2`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.dim()];
        for group in Group::BOTH {
            for (i, name) in self.family(group).param_names().into_iter().enumerate() {
                let j = self.partition.joint_index(group, i);
                names[j] = if i < self.partition.shared() {
                    name
                } else {
                    format!("{name}_{}", group.label())
                };
            }
        }
        names
    }

    pub fn local_params(&self, group: Group, joint: &[f64]) -> Vec<f64> {
        self.partition.local_params(group, joint)
    }

    /// Evaluates group `group`'s curve at `d` from a joint vector.
    pub fn evaluate(&self, group: Group, d: f64, joint: &[f64]) -> Result<f64> {
        if joint.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: joint.len(),
            });
        }
        self.family(group)
            .evaluate(d, &self.partition.local_params(group, joint))
    }

    /// Both curves share the placebo level `b_{0,1}`.
    pub fn supports_pooled_placebo(&self) -> bool {
        self.partition.shared() >= 1 && self.families.iter().all(|f| f.is_location_scale())
    }

    /// Joint vector assembled from the two local vectors; the shared block
    /// is taken from `first`.
    pub fn joint_from_locals(&self, first: &[f64], second: &[f64]) -> Result<Vec<f64>> {
        for (group, local) in Group::BOTH.iter().zip([first, second]) {
            if local.len() != self.partition.local_dim(*group) {
                return Err(Error::Dimension {
                    expected: self.partition.local_dim(*group),
                    got: local.len(),
                });
            }
        }
        let mut joint = vec![0.0; self.dim()];
        for (group, local) in [(Group::Second, second), (Group::First, first)] {
            for (i, v) in local.iter().enumerate() {
                joint[self.partition.joint_index(group, i)] = *v;
            }
        }
        Ok(joint)
    }
}
