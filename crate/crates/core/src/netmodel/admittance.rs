use num_complex::Complex64;

use super::Branch;
use crate::cases::{LoadModel, SystemCase};
use crate::error::{Error, Result};

/// Bus admittance matrix in per unit on the system base.
///
/// Stored densely: the systems this crate targets have tens of nodes, where a
/// dense LU beats any sparse bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl AdmittanceMatrix {
    pub fn zeros(dim: usize) -> Self {
        AdmittanceMatrix {
            dim,
            entries: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[i * self.dim + j]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, y: Complex64) {
        self.entries[i * self.dim + j] += y;
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    /// Number of structurally non-zero entries.
    pub fn nnz(&self) -> usize {
        self.entries.iter().filter(|y| y.norm_sqr() > 0.0).count()
    }

    pub fn add_shunt(&mut self, i: usize, y: Complex64) {
        self.add(i, i, y);
    }

    /// Stamp a pi-model branch between node indices `f` and `t`, tap on `f`.
    pub fn add_branch(&mut self, f: usize, t: usize, r: f64, x: f64, b_shunt: f64, tap: f64) {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
        let half_b = Complex64::new(0.0, b_shunt / 2.0);
        self.add(f, f, (ys + half_b) / (tap * tap));
        self.add(t, t, ys + half_b);
        self.add(f, t, -ys / tap);
        self.add(t, f, -ys / tap);
    }

    /// Current injections `I = Y V`.
    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(Complex64::new(0.0, 0.0), |acc, (y, v)| acc + y * v)
            })
            .collect()
    }
}

/// Assemble the bus admittance matrix of the case network: in-service
/// branches (with taps and line charging) plus bus shunts.
pub fn build_admittance(case: &SystemCase) -> Result<AdmittanceMatrix> {
    assemble(case, case.buses.len())
}

fn assemble(case: &SystemCase, dim: usize) -> Result<AdmittanceMatrix> {
    let index = case.bus_index();
    let mut y = AdmittanceMatrix::zeros(dim);
    for (i, bus) in case.buses.iter().enumerate() {
        if bus.g_shunt != 0.0 || bus.b_shunt != 0.0 {
            y.add_shunt(i, Complex64::new(bus.g_shunt, bus.b_shunt));
        }
    }
    for br in case.branches.iter().filter(|b| b.in_service) {
        let (f, t) = branch_nodes(br, &index)?;
        y.add_branch(f, t, br.r, br.x, br.b_shunt, br.tap);
    }
    Ok(y)
}

/// Admittance matrix extended with one internal node per composite load
/// that has a feeder. Nodes `0..buses.len()` are the case buses; the
/// returned vector gives the node each load is connected to.
pub(crate) fn build_network(case: &SystemCase) -> Result<(AdmittanceMatrix, Vec<usize>)> {
    let index = case.bus_index();
    let feeders: Vec<Option<Complex64>> = case
        .loads
        .iter()
        .map(|l| match &l.model {
            LoadModel::Composite(c) if c.has_feeder() => Some(c.feeder_impedance(case.base_mva)),
            _ => None,
        })
        .collect();
    let n_bus = case.buses.len();
    let dim = n_bus + feeders.iter().flatten().count();
    let mut y = assemble(case, dim)?;
    let mut next = n_bus;
    let mut nodes = Vec::with_capacity(case.loads.len());
    for (load, feeder) in case.loads.iter().zip(&feeders) {
        let b = *index
            .get(&load.bus)
            .ok_or_else(|| Error::Structural(format!("load {} references missing bus {}", load.id, load.bus)))?;
        match feeder {
            Some(z) => {
                y.add_branch(b, next, z.re, z.im, 0.0, 1.0);
                nodes.push(next);
                next += 1;
            }
            None => nodes.push(b),
        }
    }
    Ok((y, nodes))
}

pub(crate) fn branch_nodes(br: &Branch, index: &std::collections::HashMap<u32, usize>) -> Result<(usize, usize)> {
    let f = index
        .get(&br.from)
        .ok_or_else(|| Error::Structural(format!("branch {} references missing bus {}", br.id, br.from)))?;
    let t = index
        .get(&br.to)
        .ok_or_else(|| Error::Structural(format!("branch {} references missing bus {}", br.id, br.to)))?;
    Ok((*f, *t))
}
