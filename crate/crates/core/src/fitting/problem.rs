//! Stacked residuals of the combined two-group sample.
//!
//! Replicates at one dose share the curve value, so the sum of squares is
//! carried per dose level as `n (mean - m)^2` plus the within-level sum of
//! squares, which is constant in the parameters.

use nalgebra::DMatrix;

use crate::data::{LevelSummary, TrialDataset};
use crate::fitting::lm::LeastSquares;
use crate::model::{Group, ModelFamily, ModelSpec};

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub group: Group,
    pub family: ModelFamily,
    pub index_map: Vec<usize>,
    pub rows: Vec<LevelSummary>,
}

impl Block {
    fn local(&self, x: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend(self.index_map.iter().map(|&j| x[j]));
    }

    pub fn ssw(&self) -> f64 {
        self.rows.iter().map(|r| r.ssw).sum()
    }

    pub fn n(&self) -> usize {
        self.rows.iter().map(|r| r.n).sum()
    }

    /// `sum_i n_i (mean_i - m(d_i))^2 + ssw`.
    pub fn rss(&self, x: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.index_map.len());
        self.local(x, &mut buf);
        self.rows
            .iter()
            .map(|row| {
                let e = row.mean - self.family.value(row.dose, &buf);
                row.n as f64 * e * e + row.ssw
            })
            .sum()
    }
}

/// Pooled placebo observations fitted by the shared intercept alone.
#[derive(Debug, Clone)]
pub(crate) struct PlaceboRow {
    pub index: usize,
    pub summary: LevelSummary,
}

impl PlaceboRow {
    pub fn rss(&self, x: &[f64]) -> f64 {
        let e = self.summary.mean - x[self.index];
        self.summary.n as f64 * e * e + self.summary.ssw
    }
}

#[derive(Debug, Clone)]
pub(crate) struct JointProblem {
    pub blocks: Vec<Block>,
    pub placebo: Option<PlaceboRow>,
    dim: usize,
    rows: usize,
    ssw: f64,
}

impl JointProblem {
    pub fn new(blocks: Vec<Block>, placebo: Option<PlaceboRow>, dim: usize) -> Self {
        let rows = blocks.iter().map(|b| b.rows.len()).sum::<usize>() + placebo.is_some() as usize;
        let ssw = blocks.iter().map(Block::ssw).sum::<f64>()
            + placebo.as_ref().map_or(0.0, |p| p.summary.ssw);
        Self {
            blocks,
            placebo,
            dim,
            rows,
            ssw,
        }
    }

    /// Both groups in joint coordinates; a pooled placebo arm, if present,
    /// is tied to joint coordinate 0.
    pub fn joint(data: &TrialDataset, spec: &ModelSpec) -> Self {
        let blocks = Group::BOTH
            .iter()
            .map(|&group| Block {
                group,
                family: spec.family(group).clone(),
                index_map: spec.partition.index_map(group),
                rows: data.group(group).summaries(),
            })
            .collect();
        let placebo = data.placebo().map(|ys| PlaceboRow {
            index: 0,
            summary: LevelSummary::from_responses(0.0, ys),
        });
        Self::new(blocks, placebo, spec.dim())
    }

    /// One group alone in its local coordinates; a pooled placebo arm is
    /// fitted by the group's own intercept.
    pub fn single(data: &TrialDataset, spec: &ModelSpec, group: Group) -> Self {
        let family = spec.family(group).clone();
        let dim = family.dim();
        let block = Block {
            group,
            family,
            index_map: (0..dim).collect(),
            rows: data.group(group).summaries(),
        };
        let placebo = data.placebo().map(|ys| PlaceboRow {
            index: 0,
            summary: LevelSummary::from_responses(0.0, ys),
        });
        Self::new(vec![block], placebo, dim)
    }

    /// Recomputes the cached totals after rows were replaced.
    pub fn rebuilt(self) -> Self {
        Self::new(self.blocks, self.placebo, self.dim)
    }

    /// Full sum of squares at `x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.blocks.iter().map(|b| b.rss(x)).sum::<f64>() + self.placebo.as_ref().map_or(0.0, |p| p.rss(x))
    }
}

impl LeastSquares for JointProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.rows
    }

    fn residuals(&self, x: &[f64], r: &mut [f64]) {
        let mut buf = Vec::with_capacity(8);
        let mut k = 0;
        for block in &self.blocks {
            block.local(x, &mut buf);
            for row in &block.rows {
                r[k] = (row.n as f64).sqrt() * (row.mean - block.family.value(row.dose, &buf));
                k += 1;
            }
        }
        if let Some(p) = &self.placebo {
            r[k] = (p.summary.n as f64).sqrt() * (p.summary.mean - x[p.index]);
        }
    }

    fn jacobian(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        jac.fill(0.0);
        let mut buf = Vec::with_capacity(8);
        let mut grad = Vec::with_capacity(8);
        let mut k = 0;
        for block in &self.blocks {
            block.local(x, &mut buf);
            grad.resize(buf.len(), 0.0);
            for row in &block.rows {
                block.family.grad_into(row.dose, &buf, &mut grad);
                let w = -(row.n as f64).sqrt();
                for (g, &j) in grad.iter().zip(&block.index_map) {
                    jac[(k, j)] = w * g;
                }
                k += 1;
            }
        }
        if let Some(p) = &self.placebo {
            jac[(k, p.index)] = -(p.summary.n as f64).sqrt();
        }
    }

    fn offset(&self) -> f64 {
        self.ssw
    }
}
