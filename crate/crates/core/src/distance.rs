//! Maximum absolute deviation between the two fitted curves over the dose
//! region, its maximizers, and the integrated deviation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Group, ModelSpec};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseRegion {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Golden-section refinement stops below this bracket width.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_grid() -> usize {
    1001
}

fn default_tolerance() -> f64 {
    1e-8
}

impl DoseRegion {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let r = Self {
            lo,
            hi,
            grid: default_grid(),
            tolerance: default_tolerance(),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn with_grid(mut self, grid: usize) -> Result<Self> {
        self.grid = grid;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidInput(format!(
                "dose region [{}, {}] needs lo < hi",
                self.lo, self.hi
            )));
        }
        if self.lo < 0.0 {
            return Err(Error::InvalidInput(format!("dose region starts below 0 at {}", self.lo)));
        }
        if self.grid < 2 {
            return Err(Error::InvalidInput("dose grid needs at least 2 points".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput("refinement tolerance must be > 0".into()));
        }
        Ok(())
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.grid {
            return self.hi;
        }
        self.lo + (self.hi - self.lo) * i as f64 / (self.grid - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.grid).map(|i| self.point(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    /// `m1 - m2 = +d_inf`
    Positive,
    Negative,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Maximizer {
    pub dose: f64,
    pub sign: Sign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationResult {
    pub d_inf: f64,
    pub maximizers: Vec<Maximizer>,
    /// `(dose, m1 - m2)` on the grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<(f64, f64)>>,
}

impl DeviationResult {
    pub fn first_maximizer(&self) -> f64 {
        self.maximizers[0].dose
    }

    /// Two-column `dose,delta` CSV of the trace.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "dose,delta")?;
        for (d, v) in self.trace.iter().flatten() {
            writeln!(out, "{d},{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalSets {
    pub d_inf: f64,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// `d -> m1(d) - m2(d)` for a fixed joint vector.
pub(crate) struct Difference<'a> {
    spec: &'a ModelSpec,
    local: [Vec<f64>; 2],
}

impl<'a> Difference<'a> {
    pub fn new(spec: &'a ModelSpec, beta: &[f64]) -> Result<Self> {
        if beta.len() != spec.dim() {
            return Err(Error::Dimension {
                expected: spec.dim(),
                got: beta.len(),
            });
        }
        let local = Group::BOTH.map(|g| spec.local_params(g, beta));
        for g in Group::BOTH {
            spec.family(g).evaluate(0.5, &local[g.index()])?;
        }
        Ok(Self { spec, local })
    }

    pub(crate) fn unchecked(spec: &'a ModelSpec, beta: &[f64]) -> Self {
        Self {
            spec,
            local: Group::BOTH.map(|g| spec.local_params(g, beta)),
        }
    }

    #[inline]
    pub fn at(&self, d: f64) -> f64 {
        self.spec.families[0].value(d, &self.local[0]) - self.spec.families[1].value(d, &self.local[1])
    }

    /// Joint gradient of `m1(d) - m2(d)` with respect to the joint vector.
    pub fn gradient(&self, d: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut buf = [0.0; 16];
        for g in Group::BOTH {
            let local = &self.local[g.index()];
            let grad = &mut buf[..local.len()];
            self.spec.family(g).grad_into(d, local, grad);
            let sign = if g == Group::First { 1.0 } else { -1.0 };
            for (i, v) in grad.iter().enumerate() {
                out[self.spec.partition.joint_index(g, i)] += sign * v;
            }
        }
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Grid scan plus golden-section refinement of every local maximum of
/// `|m1 - m2|`. Ties within `1e-9 (1 + d_inf)` are all reported; a flat
/// profile reports every grid point.
pub(crate) fn deviation(diff: &Difference, region: &DoseRegion, keep_trace: bool) -> DeviationResult {
    let g = region.grid;
    let doses = region.points();
    let delta: Vec<f64> = doses.iter().map(|&d| diff.at(d)).collect();
    let abs: Vec<f64> = delta.iter().map(|v| v.abs()).collect();

    let mut candidates: Vec<(f64, f64, f64)> = Vec::new();
    for i in 0..g {
        let left = if i > 0 { abs[i - 1] } else { f64::NEG_INFINITY };
        let right = if i + 1 < g { abs[i + 1] } else { f64::NEG_INFINITY };
        if abs[i] < left || abs[i] < right {
            continue;
        }
        let flat = (i == 0 || abs[i] == left) && (i + 1 == g || abs[i] == right);
        if flat {
            candidates.push((doses[i], abs[i], delta[i]));
            continue;
        }
        let a = doses[i.saturating_sub(1)];
        let b = doses[(i + 1).min(g - 1)];
        let (d, v) = golden_max(|x| diff.at(x).abs(), a, b, region.tolerance);
        if v > abs[i] {
            candidates.push((d, v, diff.at(d)));
        } else {
            candidates.push((doses[i], abs[i], delta[i]));
        }
    }

    let d_inf = candidates.iter().map(|c| c.1).fold(0.0, f64::max);
    let tie = 1e-9 * (1.0 + d_inf);
    let mut maximizers: Vec<Maximizer> = Vec::new();
    for (d, v, signed) in candidates {
        if v < d_inf - tie {
            continue;
        }
        if maximizers.last().is_some_and(|m| (m.dose - d).abs() <= 10.0 * region.tolerance) {
            continue;
        }
        maximizers.push(Maximizer {
            dose: d,
            sign: if signed >= 0.0 { Sign::Positive } else { Sign::Negative },
        });
    }

    DeviationResult {
        d_inf,
        maximizers,
        trace: keep_trace.then(|| doses.into_iter().zip(delta).collect()),
    }
}

/// `d_inf = max_{d in region} |m1(d, beta_1) - m2(d, beta_2)|`.
pub fn max_abs_deviation(spec: &ModelSpec, beta: &[f64], region: &DoseRegion) -> Result<DeviationResult> {
    region.validate()?;
    let diff = Difference::new(spec, beta)?;
    Ok(deviation(&diff, region, false))
}

/// As [`max_abs_deviation`], keeping the `(dose, m1 - m2)` grid trace.
pub fn deviation_with_trace(spec: &ModelSpec, beta: &[f64], region: &DoseRegion) -> Result<DeviationResult> {
    region.validate()?;
    let diff = Difference::new(spec, beta)?;
    Ok(deviation(&diff, region, true))
}

/// Grid doses and refined maximizers with `m1 - m2 >= d_inf - band` (positive
/// set) or `<= -d_inf + band` (negative set).
pub fn extremal_sets(spec: &ModelSpec, beta: &[f64], region: &DoseRegion, band: f64) -> Result<ExtremalSets> {
    if !(band >= 0.0) {
        return Err(Error::InvalidInput(format!("band must be >= 0, got {band}")));
    }
    region.validate()?;
    let diff = Difference::new(spec, beta)?;
    let dev = deviation(&diff, region, true);
    let trace = dev.trace.unwrap_or_default();
    let points = trace
        .into_iter()
        .chain(dev.maximizers.iter().map(|m| (m.dose, diff.at(m.dose))));
    let mut positive = Vec::new();
    let mut negative = Vec::new();
    for (d, v) in points {
        if v >= dev.d_inf - band {
            positive.push(d);
        }
        if v <= -dev.d_inf + band {
            negative.push(d);
        }
    }
    for set in [&mut positive, &mut negative] {
        set.sort_by(f64::total_cmp);
        set.dedup();
    }
    Ok(ExtremalSets {
        d_inf: dev.d_inf,
        positive,
        negative,
    })
}

/// Composite trapezoid of `|m1 - m2|` on the region grid.
pub fn integrated_abs_deviation(spec: &ModelSpec, beta: &[f64], region: &DoseRegion) -> Result<f64> {
    region.validate()?;
    let diff = Difference::new(spec, beta)?;
    let doses = region.points();
    let vals: Vec<f64> = doses.iter().map(|&d| diff.at(d).abs()).collect();
    Ok(doses
        .windows(2)
        .zip(vals.windows(2))
        .map(|(d, v)| 0.5 * (d[1] - d[0]) * (v[0] + v[1]))
        .sum())
}

/// Active-dose gradient of `d_inf`: `sign * grad(m1 - m2)` averaged over the
/// maximizers, falling back to the first maximizer when the average cancels.
pub(crate) fn deviation_gradient(diff: &Difference, maximizers: &[Maximizer], dim: usize) -> Vec<f64> {
    let mut total = vec![0.0; dim];
    let mut first = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    for (k, m) in maximizers.iter().enumerate() {
        diff.gradient(m.dose, &mut g);
        let s = m.sign.value();
        for j in 0..dim {
            total[j] += s * g[j];
            if k == 0 {
                first[j] = g[j];
            }
        }
    }
    let scale = maximizers.len().max(1) as f64;
    total.iter_mut().for_each(|v| *v /= scale);
    let norm = total.iter().map(|v| v * v).sum::<f64>().sqrt();
    let first_norm = first.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 * first_norm.max(1.0) {
        first
    } else {
        total
    }
}
