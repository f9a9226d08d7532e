//! Exact second-quantized state representation and evolution for bosons over a
//! combined external x internal mode space.
//!
//! External modes are the spatial channels of an interferometer; internal modes
//! label degrees of freedom the optics never acts on (polarisation H/V here).
//! States are sparse maps from occupation-number basis states to complex
//! amplitudes, so evolution cost scales with the support of the state rather
//! than the full Fock-space dimension.

use std::collections::HashMap;
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::InterferometerSpec;

/// Amplitudes with magnitude below this are dropped from sparse maps.
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 1e-14;

/// Tolerance for rejecting non-normalized internal states at mutation sites.
pub const INTERNAL_NORM_TOLERANCE: f64 = 1e-9;

const FACTORIALS: [f64; 21] = {
    let mut f = [1.0; 21];
    let mut n = 1;
    while n < 21 {
        f[n] = f[n - 1] * n as f64;
        n += 1;
    }
    f
};

fn binomial(n: usize, k: usize) -> f64 {
    FACTORIALS[n] / (FACTORIALS[k] * FACTORIALS[n - k])
}

/// Combined external x internal mode bookkeeping.
///
/// The flat index of (external p, internal alpha) is `p * n_internal + alpha`,
/// a bijection onto `0..combined_modes()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeSpace {
    n_external: usize,
    n_internal: usize,
}

impl ModeSpace {
    pub fn new(n_external: usize, n_internal: usize) -> Self {
        assert!(n_external >= 1 && n_internal >= 1);
        Self {
            n_external,
            n_internal,
        }
    }

    pub fn n_external(&self) -> usize {
        self.n_external
    }

    pub fn n_internal(&self) -> usize {
        self.n_internal
    }

    pub fn combined_modes(&self) -> usize {
        self.n_external * self.n_internal
    }

    pub fn flat_index(&self, external: usize, internal: usize) -> usize {
        debug_assert!(external < self.n_external && internal < self.n_internal);
        external * self.n_internal + internal
    }

    fn check_external(&self, index: usize) -> Result<()> {
        if index < self.n_external {
            Ok(())
        } else {
            Err(Error::ModeIndex {
                index,
                n_external: self.n_external,
            })
        }
    }
}

impl fmt::Display for ModeSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_external, self.n_internal)
    }
}

/// Single-particle internal state: a unit-norm complex vector over the
/// internal basis (length 2 for {H, V}).
#[derive(Debug, Clone, PartialEq)]
pub struct InternalState {
    amplitudes: Vec<Complex64>,
}

impl InternalState {
    /// Builds an internal state, rejecting vectors that are not unit norm.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm_sq: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        let deviation = (norm_sq.sqrt() - 1.0).abs();
        if deviation > INTERNAL_NORM_TOLERANCE {
            return Err(Error::NotNormalized { deviation });
        }
        Ok(Self { amplitudes })
    }

    /// Basis vector `e_label` of an `n_internal`-dimensional internal space.
    pub fn basis(n_internal: usize, label: usize) -> Self {
        assert!(label < n_internal);
        let mut amplitudes = vec![Complex64::ZERO; n_internal];
        amplitudes[label] = Complex64::ONE;
        Self { amplitudes }
    }

    /// Horizontal polarisation |H> in a two-dimensional internal space.
    pub fn horizontal() -> Self {
        Self::basis(2, 0)
    }

    /// Vertical polarisation |V>.
    pub fn vertical() -> Self {
        Self::basis(2, 1)
    }

    /// Balanced superposition (|H> + e^{i phase} |V>) / sqrt(2).
    pub fn superposition(phase: f64) -> Self {
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            amplitudes: vec![
                Complex64::new(inv, 0.0),
                Complex64::from_polar(inv, phase),
            ],
        }
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// Inner product <self|other>, conjugate-linear in `self`.
    pub fn overlap(&self, other: &InternalState) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// One occupation-number basis state over the combined modes of a [`ModeSpace`].
///
/// Immutable after construction; equality and hashing use the occupation list
/// itself, which is the canonical representation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OccupationBasisState {
    occupations: Vec<u8>,
}

impl OccupationBasisState {
    pub fn new(occupations: Vec<u8>) -> Self {
        Self { occupations }
    }

    pub fn vacuum(space: &ModeSpace) -> Self {
        Self {
            occupations: vec![0; space.combined_modes()],
        }
    }

    pub fn occupations(&self) -> &[u8] {
        &self.occupations
    }

    pub fn occupation(&self, flat: usize) -> u8 {
        self.occupations[flat]
    }

    pub fn total_photons(&self) -> u32 {
        self.occupations.iter().map(|&n| n as u32).sum()
    }

    /// Photon count in one external mode, summed over internal labels.
    pub fn external_count(&self, external: usize, space: &ModeSpace) -> u32 {
        let base = external * space.n_internal();
        self.occupations[base..base + space.n_internal()]
            .iter()
            .map(|&n| n as u32)
            .sum()
    }

    fn with_replaced(&self, flat_a: usize, n_a: u8, flat_b: usize, n_b: u8) -> Self {
        let mut occupations = self.occupations.clone();
        occupations[flat_a] = n_a;
        occupations[flat_b] = n_b;
        Self { occupations }
    }

    fn with_incremented(&self, flat: usize) -> Self {
        let mut occupations = self.occupations.clone();
        occupations[flat] += 1;
        Self { occupations }
    }
}

/// Sparse second-quantized state: a map from occupation basis states to
/// complex amplitudes over a fixed mode space.
#[derive(Debug, Clone)]
pub struct SparseStateVector {
    space: ModeSpace,
    terms: HashMap<OccupationBasisState, Complex64>,
    prune_threshold: f64,
}

impl SparseStateVector {
    /// The vacuum state |0>.
    pub fn vacuum(space: ModeSpace) -> Self {
        let mut terms = HashMap::new();
        terms.insert(OccupationBasisState::vacuum(&space), Complex64::ONE);
        Self {
            space,
            terms,
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
        }
    }

    /// An empty (zero) vector; useful as an accumulator for superpositions.
    pub fn zero(space: ModeSpace) -> Self {
        Self {
            space,
            terms: HashMap::new(),
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
        }
    }

    pub fn from_terms(
        space: ModeSpace,
        terms: impl IntoIterator<Item = (OccupationBasisState, Complex64)>,
    ) -> Self {
        let mut state = Self::zero(space);
        for (basis, amp) in terms {
            debug_assert_eq!(basis.occupations().len(), space.combined_modes());
            *state.terms.entry(basis).or_insert(Complex64::ZERO) += amp;
        }
        state.prune();
        state
    }

    pub fn mode_space(&self) -> &ModeSpace {
        &self.space
    }

    pub fn with_prune_threshold(mut self, threshold: f64) -> Self {
        self.prune_threshold = threshold;
        self.prune();
        self
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&OccupationBasisState, &Complex64)> {
        self.terms.iter()
    }

    pub fn amplitude(&self, basis: &OccupationBasisState) -> Complex64 {
        self.terms.get(basis).copied().unwrap_or(Complex64::ZERO)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Total photon number if every term shares it, else `None`.
    pub fn definite_photon_number(&self) -> Option<u32> {
        let mut iter = self.terms.keys();
        let first = iter.next()?.total_photons();
        iter.all(|b| b.total_photons() == first).then_some(first)
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        let mut out = self.clone();
        for amp in out.terms.values_mut() {
            *amp *= factor;
        }
        out.prune();
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_space(other)?;
        let mut out = self.clone();
        for (basis, amp) in &other.terms {
            *out.terms.entry(basis.clone()).or_insert(Complex64::ZERO) += amp;
        }
        out.prune();
        Ok(out)
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        assert!(n > 0.0, "cannot normalize the zero vector");
        self.scaled(Complex64::new(1.0 / n, 0.0))
    }

    /// Embeds the state into a larger mode space with the same internal
    /// dimension; existing external modes keep their indices.
    pub fn embed(&self, target: ModeSpace) -> Result<Self> {
        if target.n_internal() != self.space.n_internal()
            || target.n_external() < self.space.n_external()
        {
            return Err(Error::ModeSpaceMismatch(
                self.space.to_string(),
                target.to_string(),
            ));
        }
        let mut out = Self::zero(target);
        out.prune_threshold = self.prune_threshold;
        for (basis, amp) in &self.terms {
            let mut occ = vec![0u8; target.combined_modes()];
            occ[..basis.occupations().len()].copy_from_slice(basis.occupations());
            out.terms.insert(OccupationBasisState::new(occ), *amp);
        }
        Ok(out)
    }

    fn check_same_space(&self, other: &Self) -> Result<()> {
        if self.space != other.space {
            return Err(Error::ModeSpaceMismatch(
                self.space.to_string(),
                other.space.to_string(),
            ));
        }
        Ok(())
    }

    fn prune(&mut self) {
        let threshold = self.prune_threshold;
        self.terms.retain(|_, amp| amp.norm() >= threshold);
    }
}

/// Applies `sum_alpha c_alpha a^dag_{ext,alpha}` to the state, raising the
/// photon number of every term by one with the bosonic sqrt(n+1) factors.
pub fn create(
    state: &SparseStateVector,
    ext_mode: usize,
    internal: &InternalState,
) -> Result<SparseStateVector> {
    state.space.check_external(ext_mode)?;
    if internal.dim() != state.space.n_internal() {
        return Err(Error::DimensionMismatch(format!(
            "internal state dim {} vs n_internal {}",
            internal.dim(),
            state.space.n_internal()
        )));
    }
    let norm_dev = (internal
        .amplitudes()
        .iter()
        .map(|a| a.norm_sqr())
        .sum::<f64>()
        .sqrt()
        - 1.0)
        .abs();
    if norm_dev > INTERNAL_NORM_TOLERANCE {
        return Err(Error::NotNormalized {
            deviation: norm_dev,
        });
    }

    let mut out = SparseStateVector::zero(state.space);
    out.prune_threshold = state.prune_threshold;
    for (basis, amp) in &state.terms {
        for (alpha, c) in internal.amplitudes().iter().enumerate() {
            if c.norm() == 0.0 {
                continue;
            }
            let flat = state.space.flat_index(ext_mode, alpha);
            let n = basis.occupation(flat) as f64;
            let new_basis = basis.with_incremented(flat);
            let contribution = amp * c * (n + 1.0).sqrt();
            *out.terms.entry(new_basis).or_insert(Complex64::ZERO) += contribution;
        }
    }
    out.prune();
    Ok(out)
}

/// Applies the annihilation operator a_{ext,alpha} for a single combined mode.
pub(crate) fn annihilate_flat(state: &SparseStateVector, flat: usize) -> SparseStateVector {
    let mut out = SparseStateVector::zero(state.space);
    out.prune_threshold = state.prune_threshold;
    for (basis, amp) in &state.terms {
        let n = basis.occupation(flat);
        if n == 0 {
            continue;
        }
        let mut occ = basis.occupations().to_vec();
        occ[flat] = n - 1;
        let contribution = amp * (n as f64).sqrt();
        *out.terms
            .entry(OccupationBasisState::new(occ))
            .or_insert(Complex64::ZERO) += contribution;
    }
    out.prune();
    out
}

/// Creation operator a^dag_{ext,alpha} on a single combined mode.
pub(crate) fn create_flat(state: &SparseStateVector, flat: usize) -> SparseStateVector {
    let mut out = SparseStateVector::zero(state.space);
    out.prune_threshold = state.prune_threshold;
    for (basis, amp) in &state.terms {
        let n = basis.occupation(flat) as f64;
        let contribution = amp * (n + 1.0).sqrt();
        *out.terms
            .entry(basis.with_incremented(flat))
            .or_insert(Complex64::ZERO) += contribution;
    }
    out.prune();
    out
}

/// Inner product <a|b>, conjugate-linear in the first argument.
pub fn inner_product(a: &SparseStateVector, b: &SparseStateVector) -> Result<Complex64> {
    a.check_same_space(b)?;
    let (small, large, conj_small) = if a.terms.len() <= b.terms.len() {
        (a, b, true)
    } else {
        (b, a, false)
    };
    let mut acc = Complex64::ZERO;
    for (basis, amp) in &small.terms {
        if let Some(other) = large.terms.get(basis) {
            acc += if conj_small {
                amp.conj() * other
            } else {
                other.conj() * amp
            };
        }
    }
    Ok(acc)
}

/// Applies a general 2x2 unitary to two combined modes. The substitution rule
/// is a^dag_a -> u[0][0] a^dag_a + u[1][0] a^dag_b (columns transform inputs).
pub(crate) fn apply_two_mode_unitary(
    state: &SparseStateVector,
    flat_a: usize,
    flat_b: usize,
    u: [[Complex64; 2]; 2],
) -> SparseStateVector {
    let mut out = SparseStateVector::zero(state.space);
    out.prune_threshold = state.prune_threshold;
    // Powers of the four matrix entries, indexed by exponent.
    let pow = |base: Complex64, max: usize| -> Vec<Complex64> {
        let mut v = Vec::with_capacity(max + 1);
        let mut acc = Complex64::ONE;
        for _ in 0..=max {
            v.push(acc);
            acc *= base;
        }
        v
    };
    let max_n = state
        .terms
        .keys()
        .map(|b| b.occupation(flat_a).max(b.occupation(flat_b)) as usize)
        .max()
        .unwrap_or(0);
    let u00 = pow(u[0][0], max_n);
    let u10 = pow(u[1][0], max_n);
    let u01 = pow(u[0][1], max_n);
    let u11 = pow(u[1][1], max_n);

    for (basis, amp) in &state.terms {
        let n = basis.occupation(flat_a) as usize;
        let m = basis.occupation(flat_b) as usize;
        if n == 0 && m == 0 {
            *out.terms.entry(basis.clone()).or_insert(Complex64::ZERO) += amp;
            continue;
        }
        let base_norm = amp / (FACTORIALS[n] * FACTORIALS[m]).sqrt();
        for j in 0..=n {
            for k in 0..=m {
                let p = j + k;
                let q = (n - j) + (m - k);
                let coeff = binomial(n, j)
                    * binomial(m, k)
                    * (FACTORIALS[p] * FACTORIALS[q]).sqrt();
                let weight = u00[j] * u10[n - j] * u01[k] * u11[m - k];
                let contribution = base_norm * coeff * weight;
                if contribution.norm() == 0.0 {
                    continue;
                }
                let new_basis = basis.with_replaced(flat_a, p as u8, flat_b, q as u8);
                *out.terms.entry(new_basis).or_insert(Complex64::ZERO) += contribution;
            }
        }
    }
    out.prune();
    out
}

/// Real beam-splitter block in the Hadamard-like convention: the reflected
/// amplitude on the second output carries the minus sign,
/// `[[sqrt(T), sqrt(1-T)], [sqrt(1-T), -sqrt(T)]]`.
/// Transmissivity exactly 1 is the identity coupling.
pub(crate) fn beam_splitter_block(transmissivity: f64) -> [[Complex64; 2]; 2] {
    let t = transmissivity.sqrt();
    let r = (1.0 - transmissivity).sqrt();
    [
        [Complex64::new(t, 0.0), Complex64::new(r, 0.0)],
        [Complex64::new(r, 0.0), Complex64::new(-t, 0.0)],
    ]
}

/// Applies one polarisation-independent beam splitter between two external
/// modes: the 2x2 block acts identically on every internal label (U x 1).
pub fn apply_beam_splitter(
    state: &SparseStateVector,
    mode_a: usize,
    mode_b: usize,
    transmissivity: f64,
) -> Result<SparseStateVector> {
    state.space.check_external(mode_a)?;
    state.space.check_external(mode_b)?;
    if mode_a == mode_b {
        return Err(Error::DegenerateGate(mode_a));
    }
    if !(0.0..=1.0).contains(&transmissivity) || !transmissivity.is_finite() {
        return Err(Error::InvalidTransmissivity(transmissivity));
    }
    if transmissivity == 1.0 {
        return Ok(state.clone());
    }
    let block = beam_splitter_block(transmissivity);
    let mut current = state.clone();
    for alpha in 0..state.space.n_internal() {
        let fa = state.space.flat_index(mode_a, alpha);
        let fb = state.space.flat_index(mode_b, alpha);
        current = apply_two_mode_unitary(&current, fa, fb, block);
    }
    Ok(current)
}

/// Applies a full interferometer specification by sequential gate application.
///
/// Gate-local sparse updates keep the cost proportional to the support of the
/// state, so the disjoint blocks of the scheme never pay for each other.
pub fn apply_network(
    state: &SparseStateVector,
    spec: &InterferometerSpec,
) -> Result<SparseStateVector> {
    if spec.total_modes() != state.space.n_external() {
        return Err(Error::DimensionMismatch(format!(
            "network acts on {} external modes, state has {}",
            spec.total_modes(),
            state.space.n_external()
        )));
    }
    let mut current = state.clone();
    for gate in spec.gates() {
        current = apply_beam_splitter(&current, gate.mode_a, gate.mode_b, gate.transmissivity)?;
    }
    Ok(current)
}

/// Applies one global internal-basis rotation (the same unitary on the
/// internal space of every external mode).
pub fn apply_internal_rotation(
    state: &SparseStateVector,
    u: [[Complex64; 2]; 2],
) -> Result<SparseStateVector> {
    if state.space.n_internal() != 2 {
        return Err(Error::DimensionMismatch(
            "internal rotation requires a two-dimensional internal space".into(),
        ));
    }
    let mut current = state.clone();
    for ext in 0..state.space.n_external() {
        let fa = state.space.flat_index(ext, 0);
        let fb = state.space.flat_index(ext, 1);
        current = apply_two_mode_unitary(&current, fa, fb, u);
    }
    Ok(current)
}
