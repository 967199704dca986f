//! Tensor-product trapezoidal quadrature on periodic coordinate boxes.

use rayon::prelude::*;

use crate::geometry::DomainChart;

/// Neumaier's compensated sum; the result does not depend on how the terms
/// were produced, only on their order, which callers keep fixed.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: usize,
    bounds: Vec<(f64, f64)>,
}

impl QuadratureGrid {
    pub fn new(bounds: Vec<(f64, f64)>, nodes: usize) -> Self {
        assert!(nodes > 0, "quadrature needs at least one node");
        QuadratureGrid { nodes, bounds }
    }

    pub fn for_chart(chart: &DomainChart, nodes: usize) -> Self {
        QuadratureGrid::new(chart.bounds().to_vec(), nodes)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// Coordinate-space weight of each node.
    pub fn weight(&self) -> f64 {
        self.bounds.iter().map(|(a, b)| (b - a) / self.nodes as f64).product()
    }

    /// Nodes in row-major order, last coordinate fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let m = self.dim();
        let total = self.nodes.pow(m as u32);
        (0..total)
            .map(|mut idx| {
                let mut p = vec![0.0; m];
                for d in (0..m).rev() {
                    let (a, b) = self.bounds[d];
                    p[d] = a + (b - a) * (idx % self.nodes) as f64 / self.nodes as f64;
                    idx /= self.nodes;
                }
                p
            })
            .collect()
    }

    /// `Σ w f(x)` over the nodes; `f` must already include any density.
    /// Nodes are evaluated in parallel and summed in a fixed order.
    pub fn integrate<F, E>(&self, f: F) -> Result<f64, E>
    where
        F: Fn(&[f64]) -> Result<f64, E> + Sync,
        E: Send,
    {
        let vals = self.evaluate(f)?;
        Ok(self.weight() * compensated_sum(vals))
    }

    /// Integrand values at every node, in node order.
    pub fn evaluate<T, F, E>(&self, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        F: Fn(&[f64]) -> Result<T, E> + Sync,
        E: Send,
    {
        self.points().par_iter().map(|p| f(p)).collect()
    }
}
