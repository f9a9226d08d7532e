//! Measurement layer: k-point correlators, reduced-state coherences,
//! A-operator expectations, threshold-detector click statistics with
//! multiplexing and event rejection, and the closed-form fringe oracle.
//!
//! Click statistics for full interferometer specs run through a
//! component-factorized evaluator: the gate graph of the disjoint scheme
//! splits into independent blocks, each block is evolved on its own small
//! mode space, and the joint detector-pattern distribution is contracted from
//! per-block Gram matrices. This is exact and avoids ever materialising the
//! joint post-network state, whose support grows multiplicatively in the
//! block sizes.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{
    annihilate_flat, apply_beam_splitter, apply_network, create_flat, inner_product, ModeSpace,
    OccupationBasisState, SparseStateVector,
};
use crate::network::{DetectorLayout, InterferometerSpec};
use crate::sources::{PhaseSetting, SpdcEnsemble};

/// Output modes of a k-point correlator; distinct by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrelatorSpec {
    output_modes: Vec<usize>,
}

impl CorrelatorSpec {
    pub fn new(output_modes: Vec<usize>) -> Result<Self> {
        let mut seen = output_modes.clone();
        seen.sort_unstable();
        for w in seen.windows(2) {
            if w[0] == w[1] {
                return Err(Error::RepeatedMode(w[0]));
            }
        }
        if output_modes.is_empty() {
            return Err(Error::DimensionMismatch(
                "correlator needs at least one mode".into(),
            ));
        }
        Ok(Self { output_modes })
    }

    pub fn output_modes(&self) -> &[usize] {
        &self.output_modes
    }
}

/// Expectation of the product of external number operators on distinct
/// output modes, `<N_{p1} ... N_{pk}>`, each counting photons irrespective of
/// their internal state.
pub fn k_point_correlator(state: &SparseStateVector, spec: &CorrelatorSpec) -> Result<f64> {
    let space = *state.mode_space();
    for &p in spec.output_modes() {
        if p >= space.n_external() {
            return Err(Error::ModeIndex {
                index: p,
                n_external: space.n_external(),
            });
        }
    }
    let mut acc = 0.0;
    for (basis, amp) in state.terms() {
        let mut product = 1.0;
        for &p in spec.output_modes() {
            product *= basis.external_count(p, &space) as f64;
            if product == 0.0 {
                break;
            }
        }
        if product != 0.0 {
            acc += amp.norm_sqr() * product;
        }
    }
    Ok(acc)
}

/// Closed-form four-point correlator of the ideal lossless scheme,
/// `(1/8) cos^2((chi + varphi - theta) / 2)`. Pure oracle, no simulation.
pub fn four_point_closed_form(setting: &PhaseSetting) -> f64 {
    let half = 0.5 * setting.collective_phase();
    0.125 * half.cos().powi(2)
}

/// Expectation `<state| A_{bra,ket} |state>` of the 2P or 4P exchange
/// operators `A = sum_{alpha...} a^dag_{bra_1 alpha_1} ... a_{ket_1 alpha_1} ...`,
/// with internal sums over the full internal basis.
pub fn a_operator_expectation(
    state: &SparseStateVector,
    bra_modes: &[usize],
    ket_modes: &[usize],
) -> Result<Complex64> {
    let k = bra_modes.len();
    if k != ket_modes.len() || (k != 2 && k != 4) {
        return Err(Error::BadOperatorArity(k.max(ket_modes.len())));
    }
    let space = *state.mode_space();
    for &m in bra_modes.iter().chain(ket_modes) {
        if m >= space.n_external() {
            return Err(Error::ModeIndex {
                index: m,
                n_external: space.n_external(),
            });
        }
    }
    let n_int = space.n_internal();
    let mut total = Complex64::ZERO;
    let assignments = n_int.pow(k as u32);
    for code in 0..assignments {
        let mut labels = Vec::with_capacity(k);
        let mut c = code;
        for _ in 0..k {
            labels.push(c % n_int);
            c /= n_int;
        }
        let mut current = state.clone();
        for (i, &alpha) in labels.iter().enumerate() {
            current = annihilate_flat(&current, space.flat_index(ket_modes[i], alpha));
            if current.num_terms() == 0 {
                break;
            }
        }
        if current.num_terms() == 0 {
            continue;
        }
        for (i, &alpha) in labels.iter().enumerate() {
            current = create_flat(&current, space.flat_index(bra_modes[i], alpha));
        }
        total += inner_product(state, &current)?;
    }
    Ok(total)
}

/// Off-diagonal element of the reduced k-particle external state for a
/// product input: zero unless the ket mode tuple is a permutation of the bra
/// tuple, else the product of the corresponding internal-state overlaps.
#[derive(Debug, Clone)]
pub struct ReducedCoherence {
    pub bra_modes: Vec<usize>,
    pub ket_modes: Vec<usize>,
    pub value: Complex64,
}

impl ReducedCoherence {
    pub fn from_product_state(
        internal_states: &[crate::fock::InternalState],
        bra_modes: &[usize],
        ket_modes: &[usize],
    ) -> Result<Self> {
        if bra_modes.len() != ket_modes.len() {
            return Err(Error::DimensionMismatch(
                "bra and ket tuples must have equal length".into(),
            ));
        }
        for &m in bra_modes.iter().chain(ket_modes) {
            if m >= internal_states.len() {
                return Err(Error::ModeIndex {
                    index: m,
                    n_external: internal_states.len(),
                });
            }
        }
        let mut sorted_bra = bra_modes.to_vec();
        let mut sorted_ket = ket_modes.to_vec();
        sorted_bra.sort_unstable();
        sorted_ket.sort_unstable();
        let value = if sorted_bra == sorted_ket {
            bra_modes
                .iter()
                .zip(ket_modes)
                .map(|(&m, &n)| internal_states[m].overlap(&internal_states[n]))
                .product()
        } else {
            Complex64::ZERO
        };
        Ok(Self {
            bra_modes: bra_modes.to_vec(),
            ket_modes: ket_modes.to_vec(),
            value,
        })
    }
}

/// Overlap product `prod_i <xi_{m_i} | xi_{m_{perm^-1(i)}}>` for a product
/// state of internal states on modes `bra_modes`, exchanged by `permutation`
/// (given as the image list `pi(i) = permutation[i]`).
pub fn product_state_coherence(
    internal_states: &[crate::fock::InternalState],
    bra_modes: &[usize],
    permutation: &[usize],
) -> Result<Complex64> {
    let k = bra_modes.len();
    if permutation.len() != k {
        return Err(Error::InvalidPermutation(permutation.to_vec()));
    }
    let mut inverse = vec![usize::MAX; k];
    for (i, &image) in permutation.iter().enumerate() {
        if image >= k || inverse[image] != usize::MAX {
            return Err(Error::InvalidPermutation(permutation.to_vec()));
        }
        inverse[image] = i;
    }
    for &m in bra_modes {
        if m >= internal_states.len() {
            return Err(Error::ModeIndex {
                index: m,
                n_external: internal_states.len(),
            });
        }
    }
    let mut product = Complex64::ONE;
    for i in 0..k {
        let xi_i = &internal_states[bra_modes[i]];
        let xi_j = &internal_states[bra_modes[inverse[i]]];
        product *= xi_i.overlap(xi_j);
    }
    Ok(product)
}

/// A set of clicked threshold detectors, stored as a bitmask over detector
/// ids `channel * detectors_per_channel + sub`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ClickEvent(pub u32);

impl ClickEvent {
    pub fn clicked_count(&self) -> u32 {
        self.0.count_ones()
    }

    pub fn contains(&self, detector: usize) -> bool {
        self.0 >> detector & 1 == 1
    }

    pub fn detectors(&self) -> Vec<usize> {
        (0..32).filter(|&d| self.contains(d)).collect()
    }
}

/// Probabilities over detector click patterns.
#[derive(Debug, Clone)]
pub struct ClickDistribution {
    probs: Vec<f64>,
    n_detectors: usize,
    detectors_per_channel: usize,
    rejection_threshold: usize,
}

impl ClickDistribution {
    fn new(layout: &DetectorLayout) -> Self {
        let n_detectors = layout.n_detectors();
        assert!(n_detectors <= 20, "pattern table too large");
        Self {
            probs: vec![0.0; 1 << n_detectors],
            n_detectors,
            detectors_per_channel: layout.detectors_per_channel(),
            rejection_threshold: layout.rejection_threshold(),
        }
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn probability(&self, event: ClickEvent) -> f64 {
        self.probs[event.0 as usize]
    }

    /// All patterns with non-zero probability, rejected ones included.
    pub fn iter(&self) -> impl Iterator<Item = (ClickEvent, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != 0.0)
            .map(|(mask, &p)| (ClickEvent(mask as u32), p))
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Whether the event exceeds the layout's click-count rejection threshold.
    pub fn is_rejected(&self, event: ClickEvent) -> bool {
        event.clicked_count() as usize > self.rejection_threshold
    }

    pub fn rejected_mass(&self) -> f64 {
        self.iter()
            .filter(|(e, _)| self.is_rejected(*e))
            .map(|(_, p)| p)
            .sum()
    }

    fn channel_mask(&self, channel: usize) -> u32 {
        let dpc = self.detectors_per_channel;
        ((1u32 << dpc) - 1) << (channel * dpc)
    }

    /// Expected coincidence counter for the listed channels, rejected events
    /// excluded. Coincidences are summed over every combination of one
    /// detector per listed channel, so with multiplexing the counter is the
    /// pseudo-number-resolving product E[K_{p1} ... K_{pk}] of clicked
    /// detectors per channel; with one detector per channel it reduces to the
    /// plain threshold coincidence probability.
    pub fn coincidence_probability(&self, channels: &[usize]) -> f64 {
        let masks: Vec<u32> = channels.iter().map(|&c| self.channel_mask(c)).collect();
        self.iter()
            .filter(|(event, _)| !self.is_rejected(*event))
            .map(|(event, p)| {
                let weight: f64 = masks
                    .iter()
                    .map(|&m| (event.0 & m).count_ones() as f64)
                    .product();
                weight * p
            })
            .sum()
    }

    /// Probability that every listed channel registers at least one click,
    /// other channels unconstrained, no rejection: the expectation of the
    /// threshold-operator product at channel level.
    pub fn threshold_probability(&self, channels: &[usize]) -> f64 {
        let masks: Vec<u32> = channels.iter().map(|&c| self.channel_mask(c)).collect();
        self.iter()
            .filter(|(event, _)| masks.iter().all(|&m| event.0 & m != 0))
            .map(|(_, p)| p)
            .sum()
    }
}

fn pattern_of(basis: &OccupationBasisState, space: &ModeSpace, layout: &DetectorLayout) -> u32 {
    let mut mask = 0u32;
    for channel in 0..layout.n_channels() {
        for (sub, &mode) in layout.detector_modes()[channel].iter().enumerate() {
            if basis.external_count(mode, space) > 0 {
                mask |= 1 << (channel * layout.detectors_per_channel() + sub);
            }
        }
    }
    mask
}

/// Click-pattern distribution of an already-evolved state: marginalises
/// |amplitude|^2 over internal labels and unobserved (ancilla) modes, mapping
/// occupation > 0 to a click.
pub fn click_distribution(
    state: &SparseStateVector,
    layout: &DetectorLayout,
) -> Result<ClickDistribution> {
    let space = *state.mode_space();
    for modes in layout.detector_modes() {
        for &m in modes {
            if m >= space.n_external() {
                return Err(Error::ModeIndex {
                    index: m,
                    n_external: space.n_external(),
                });
            }
        }
    }
    let mut dist = ClickDistribution::new(layout);
    for (basis, amp) in state.terms() {
        dist.probs[pattern_of(basis, &space, layout) as usize] += amp.norm_sqr();
    }
    Ok(dist)
}

/// Click-pattern distribution of an input state pushed through a full
/// interferometer spec, exploiting the disjoint block structure.
///
/// The input may live on the signal mode space or already on the spec's total
/// mode space; ancilla modes start in vacuum either way.
pub fn network_click_distribution(
    input: &SparseStateVector,
    spec: &InterferometerSpec,
    layout: &DetectorLayout,
) -> Result<ClickDistribution> {
    let total_space = ModeSpace::new(spec.total_modes(), input.mode_space().n_internal());
    let state = if input.mode_space().n_external() == spec.total_modes() {
        input.clone()
    } else if input.mode_space().n_external() == spec.n_signal_modes() {
        input.embed(total_space)?
    } else {
        return Err(Error::DimensionMismatch(format!(
            "input has {} external modes; spec expects {} signal or {} total",
            input.mode_space().n_external(),
            spec.n_signal_modes(),
            spec.total_modes()
        )));
    };

    let components = spec.components();
    if components.len() <= 1 {
        let evolved = apply_network(&state, spec)?;
        return click_distribution(&evolved, layout);
    }
    factorized_click_distribution(&state, spec, layout, &components)
}

/// Exact block-factorized pattern distribution. The input is decomposed as a
/// sum of products over the gate-graph components, each distinct component
/// basis state is evolved once on the component's own mode space, and the
/// joint distribution is contracted from per-component Gram matrices
/// `G_c[a,b][pattern] = sum_{R -> pattern} <R|W_c|a><R|W_c|b>*`.
fn factorized_click_distribution(
    state: &SparseStateVector,
    spec: &InterferometerSpec,
    layout: &DetectorLayout,
    components: &[Vec<usize>],
) -> Result<ClickDistribution> {
    let space = *state.mode_space();
    let n_int = space.n_internal();
    let n_comp = components.len();

    // Map global external mode -> (component, local external index).
    let mut locate = vec![(0usize, 0usize); spec.total_modes()];
    for (ci, comp) in components.iter().enumerate() {
        for (li, &m) in comp.iter().enumerate() {
            locate[m] = (ci, li);
        }
    }

    // Split every input term into per-component occupation keys.
    let mut local_bases: Vec<Vec<Vec<u8>>> = vec![Vec::new(); n_comp];
    let mut local_index: Vec<HashMap<Vec<u8>, u32>> = vec![HashMap::new(); n_comp];
    let mut weights: HashMap<Vec<u32>, Complex64> = HashMap::new();
    for (basis, amp) in state.terms() {
        let mut ids = Vec::with_capacity(n_comp);
        for (ci, comp) in components.iter().enumerate() {
            let mut occ = vec![0u8; comp.len() * n_int];
            for (li, &m) in comp.iter().enumerate() {
                for alpha in 0..n_int {
                    occ[li * n_int + alpha] = basis.occupation(space.flat_index(m, alpha));
                }
            }
            let next = local_bases[ci].len() as u32;
            let id = *local_index[ci].entry(occ.clone()).or_insert_with(|| {
                local_bases[ci].push(occ);
                next
            });
            ids.push(id);
        }
        *weights.entry(ids).or_insert(Complex64::ZERO) += *amp;
    }

    // Evolve each distinct component basis state once.
    let mut evolved: Vec<Vec<SparseStateVector>> = Vec::with_capacity(n_comp);
    for (ci, comp) in components.iter().enumerate() {
        let local_space = ModeSpace::new(comp.len(), n_int);
        let mut states = Vec::with_capacity(local_bases[ci].len());
        for occ in &local_bases[ci] {
            let mut s = SparseStateVector::from_terms(
                local_space,
                [(OccupationBasisState::new(occ.clone()), Complex64::ONE)],
            );
            for gate in spec.gates() {
                let (gc, la) = locate[gate.mode_a];
                if gc != ci {
                    continue;
                }
                let (_, lb) = locate[gate.mode_b];
                s = apply_beam_splitter(&s, la, lb, gate.transmissivity)?;
            }
            states.push(s);
        }
        evolved.push(states);
    }

    // Detector bits present in each component, as (detector id, local mode).
    let mut comp_detectors: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_comp];
    for channel in 0..layout.n_channels() {
        for (sub, &mode) in layout.detector_modes()[channel].iter().enumerate() {
            let (ci, li) = locate[mode];
            let det = channel * layout.detectors_per_channel() + sub;
            comp_detectors[ci].push((det, li));
        }
    }

    // Gram matrices over local patterns, computed lazily per (a, b) pair.
    let pattern_of_local = |ci: usize, basis: &OccupationBasisState| -> u32 {
        let local_space = ModeSpace::new(components[ci].len(), n_int);
        let mut mask = 0u32;
        for &(det, li) in &comp_detectors[ci] {
            if basis.external_count(li, &local_space) > 0 {
                mask |= 1 << det;
            }
        }
        mask
    };
    let mut gram: Vec<HashMap<(u32, u32), HashMap<u32, Complex64>>> =
        vec![HashMap::new(); n_comp];
    let mut gram_entry = |ci: usize, a: u32, b: u32| -> HashMap<u32, Complex64> {
        if let Some(g) = gram[ci].get(&(a, b)) {
            return g.clone();
        }
        let sa = &evolved[ci][a as usize];
        let sb = &evolved[ci][b as usize];
        let mut g: HashMap<u32, Complex64> = HashMap::new();
        for (basis, amp_a) in sa.terms() {
            let amp_b = sb.amplitude(basis);
            if amp_b == Complex64::ZERO {
                continue;
            }
            *g.entry(pattern_of_local(ci, basis)).or_insert(Complex64::ZERO) +=
                amp_a * amp_b.conj();
        }
        gram[ci].insert((a, b), g.clone());
        g
    };

    // Contract: P(s) = sum_{t,t'} w_t conj(w_{t'}) prod_c G_c[id, id'][s_c].
    let mut dist = ClickDistribution::new(layout);
    let entries: Vec<(&Vec<u32>, &Complex64)> = weights.iter().collect();
    for (ids_t, w_t) in &entries {
        for (ids_u, w_u) in &entries {
            let coeff = *w_t * w_u.conj();
            let mut acc: HashMap<u32, Complex64> = HashMap::new();
            acc.insert(0, coeff);
            for ci in 0..n_comp {
                let g = gram_entry(ci, ids_t[ci], ids_u[ci]);
                if g.is_empty() {
                    acc.clear();
                    break;
                }
                let mut next: HashMap<u32, Complex64> =
                    HashMap::with_capacity(acc.len() * g.len());
                for (&s, &v) in &acc {
                    for (&sc, &gv) in &g {
                        *next.entry(s | sc).or_insert(Complex64::ZERO) += v * gv;
                    }
                }
                acc = next;
            }
            for (s, v) in acc {
                dist.probs[s as usize] += v.re;
            }
        }
    }
    Ok(dist)
}

/// Rate of coincident clicks on the listed channels, inclusive counting,
/// rejected events excluded: the ensemble-weighted sum over emission terms of
/// the channel coincidence probability.
pub fn coincidence_rate(
    ensemble: &SpdcEnsemble,
    spec: &InterferometerSpec,
    channels: &[&str],
    layout: &DetectorLayout,
) -> Result<f64> {
    if channels.is_empty() {
        return Err(Error::DimensionMismatch(
            "coincidence needs at least one channel".into(),
        ));
    }
    let indices: Vec<usize> = channels
        .iter()
        .map(|name| layout.channel_index(name))
        .collect::<Result<_>>()?;
    let mut rate = 0.0;
    for term in ensemble.terms() {
        if term.rate == 0.0 {
            continue;
        }
        let dist = network_click_distribution(&term.state, spec, layout)?;
        rate += term.rate * dist.coincidence_probability(&indices);
    }
    Ok(rate)
}

fn falling_factorial(m: u32, n: u32) -> f64 {
    let mut acc = 1.0;
    for i in 0..n {
        if i >= m {
            return 0.0;
        }
        acc *= (m - i) as f64;
    }
    acc
}

fn threshold_series_value(counts: &[u32], budget: u32) -> f64 {
    if counts.is_empty() {
        return 1.0;
    }
    let remaining = counts.len() as u32 - 1;
    if budget < remaining + 1 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut factorial = 1.0;
    for n in 1..=(budget - remaining) {
        factorial *= n as f64;
        let ff = falling_factorial(counts[0], n);
        if ff == 0.0 {
            break;
        }
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        acc += sign / factorial * ff * threshold_series_value(&counts[1..], budget - n);
    }
    acc
}

/// Factorial-moment expansion of the threshold-operator product
/// `M_{p1} ... M_{pk}` truncated at total order `max_order`; exact for states
/// with at most `max_order` photons per basis term.
pub fn threshold_series_expectation(
    state: &SparseStateVector,
    channels: &[usize],
    max_order: u32,
) -> Result<f64> {
    if (max_order as usize) < channels.len() {
        return Err(Error::DimensionMismatch(format!(
            "max_order {} below channel count {}",
            max_order,
            channels.len()
        )));
    }
    let space = *state.mode_space();
    for &p in channels {
        if p >= space.n_external() {
            return Err(Error::ModeIndex {
                index: p,
                n_external: space.n_external(),
            });
        }
    }
    let mut acc = 0.0;
    for (basis, amp) in state.terms() {
        let counts: Vec<u32> = channels
            .iter()
            .map(|&p| basis.external_count(p, &space))
            .collect();
        acc += amp.norm_sqr() * threshold_series_value(&counts, max_order);
    }
    Ok(acc)
}
