// Shared between test targets; not every target uses every helper.
#![allow(dead_code)]

//! Independent brute-force oracle for cross-checking state evolution.
//!
//! States are kept as sums of first-quantized creation monomials (lists of
//! per-photon (external, internal) labels). Evolution substitutes the whole
//! single-particle matrix into every label and expands the product, and
//! occupation amplitudes are recovered at the end with the bosonic
//! factorials. No code is shared with the sparse gate-by-gate engine.

use std::collections::HashMap;

use num_complex::Complex64;

#[derive(Debug, Clone)]
pub struct Monomials {
    pub n_external: usize,
    pub n_internal: usize,
    /// (coefficient, one (external, internal) label per photon)
    pub terms: Vec<(Complex64, Vec<(usize, usize)>)>,
}

impl Monomials {
    pub fn vacuum(n_external: usize, n_internal: usize) -> Self {
        Self {
            n_external,
            n_internal,
            terms: vec![(Complex64::ONE, Vec::new())],
        }
    }

    /// Appends one photon in an internal superposition.
    pub fn create(&self, ext: usize, internal: &[Complex64]) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len() * internal.len());
        for (coeff, labels) in &self.terms {
            for (alpha, c) in internal.iter().enumerate() {
                if c.norm() == 0.0 {
                    continue;
                }
                let mut extended = labels.clone();
                extended.push((ext, alpha));
                terms.push((coeff * c, extended));
            }
        }
        Self {
            n_external: self.n_external,
            n_internal: self.n_internal,
            terms,
        }
    }

    pub fn scaled(&self, z: Complex64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(c, l)| (c * z, l.clone()))
            .collect();
        Self {
            n_external: self.n_external,
            n_internal: self.n_internal,
            terms,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self {
            n_external: self.n_external,
            n_internal: self.n_internal,
            terms,
        }
    }

    /// Substitutes `a^dag_m -> sum_p u[p][m] a^dag_p` into every photon label.
    pub fn evolve(&self, u: &[Vec<f64>]) -> Self {
        let n_out = u.len();
        let mut terms: Vec<(Complex64, Vec<(usize, usize)>)> = Vec::new();
        for (coeff, labels) in &self.terms {
            let mut partial = vec![(*coeff, Vec::with_capacity(labels.len()))];
            for &(m, alpha) in labels {
                let mut next = Vec::with_capacity(partial.len() * 2);
                for (c, built) in &partial {
                    for (p, row) in u.iter().enumerate().take(n_out) {
                        let w = row[m];
                        if w == 0.0 {
                            continue;
                        }
                        let mut extended = built.clone();
                        extended.push((p, alpha));
                        next.push((c * w, extended));
                    }
                }
                partial = next;
            }
            terms.extend(partial);
        }
        Self {
            n_external: n_out,
            n_internal: self.n_internal,
            terms,
        }
    }

    /// Occupation-basis amplitudes including the sqrt(n!) bosonic factors.
    pub fn amplitudes(&self) -> HashMap<Vec<u8>, Complex64> {
        let modes = self.n_external * self.n_internal;
        let mut out: HashMap<Vec<u8>, Complex64> = HashMap::new();
        for (coeff, labels) in &self.terms {
            let mut occ = vec![0u8; modes];
            for &(m, alpha) in labels {
                occ[m * self.n_internal + alpha] += 1;
            }
            let factor: f64 = occ
                .iter()
                .map(|&n| (1..=n as u64).map(|k| k as f64).product::<f64>())
                .product::<f64>()
                .sqrt();
            *out.entry(occ).or_insert(Complex64::ZERO) += coeff * factor;
        }
        out.retain(|_, amp| amp.norm() > 1e-15);
        out
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes()
            .values()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn normalized(&self) -> Self {
        self.scaled(Complex64::new(1.0 / self.norm(), 0.0))
    }

    fn external_count(&self, occ: &[u8], mode: usize) -> u32 {
        occ[mode * self.n_internal..(mode + 1) * self.n_internal]
            .iter()
            .map(|&n| n as u32)
            .sum()
    }

    /// `<N_{p1} ... N_{pk}>` over the occupation amplitudes.
    pub fn correlator(&self, modes: &[usize]) -> f64 {
        self.amplitudes()
            .iter()
            .map(|(occ, amp)| {
                let product: f64 = modes
                    .iter()
                    .map(|&p| self.external_count(occ, p) as f64)
                    .product();
                amp.norm_sqr() * product
            })
            .sum()
    }

    /// Probability that every listed external mode holds at least one photon.
    pub fn threshold_probability(&self, modes: &[usize]) -> f64 {
        self.amplitudes()
            .iter()
            .filter(|(occ, _)| modes.iter().all(|&p| self.external_count(occ, p) > 0))
            .map(|(_, amp)| amp.norm_sqr())
            .sum()
    }
}

/// Balanced superposition internal vector (|H> + e^{i phase}|V>)/sqrt(2).
pub fn superposition(phase: f64) -> Vec<Complex64> {
    let inv = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        Complex64::new(inv, 0.0),
        Complex64::from_polar(inv, phase),
    ]
}

pub fn horizontal() -> Vec<Complex64> {
    vec![Complex64::ONE, Complex64::ZERO]
}

pub fn vertical() -> Vec<Complex64> {
    vec![Complex64::ZERO, Complex64::ONE]
}

/// The ideal four-photon input of the disjoint scheme as monomials.
pub fn ideal_input(chi: f64, varphi: f64, theta: f64) -> Monomials {
    let vac = Monomials::vacuum(4, 2);
    let one = vac.create(0, &superposition(varphi));
    let hv = one.create(1, &horizontal()).create(2, &vertical());
    let vh = one
        .create(1, &vertical())
        .create(2, &horizontal())
        .scaled(Complex64::from_polar(1.0, -chi));
    hv.add(&vh)
        .scaled(Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0))
        .create(3, &superposition(theta))
}
