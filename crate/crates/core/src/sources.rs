//! SPDC source model: two-mode squeezed-vacuum pair statistics, emission-term
//! enumeration up to a pair-number truncation, and construction of the
//! entangled/separable input states with their emission rates.
//!
//! Source 1 is the entangled source feeding external modes 1 and 2, source 2
//! the separable source feeding modes 0 and 3 (zero-based). Each emission term
//! `(r1, r2)` carries the normalized input state built from the pair-creation
//! strings and the rate `f * P1(r1) * P2(r2)` with `P(n) = (1-g^2) g^(2n)`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{create, InternalState, ModeSpace, SparseStateVector};

/// External mode taken by the first photon of the entangled pair.
pub const ENTANGLED_MODE_A: usize = 1;
/// External mode taken by the second photon of the entangled pair.
pub const ENTANGLED_MODE_B: usize = 2;
/// External mode of the separable photon with superposition phase `varphi`.
pub const SEPARABLE_MODE_A: usize = 0;
/// External mode of the separable photon with superposition phase `theta`.
pub const SEPARABLE_MODE_B: usize = 3;

/// Phases of the input state; the collective phase is their signed sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSetting {
    pub chi: f64,
    pub varphi: f64,
    pub theta: f64,
}

impl PhaseSetting {
    pub fn new(chi: f64, varphi: f64, theta: f64) -> Self {
        Self { chi, varphi, theta }
    }

    /// Collective phase chi + varphi - theta, kept unreduced.
    pub fn collective_phase(&self) -> f64 {
        self.chi + self.varphi - self.theta
    }
}

/// Which of the two sources a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceId {
    Source1,
    Source2,
}

/// Role of a source in the input state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceKind {
    /// Emits polarisation-entangled pairs with pair phase `chi`.
    Entangled { chi: f64 },
    /// Emits separable pairs in balanced superpositions with phases
    /// `varphi` and `theta`.
    Separable { varphi: f64, theta: f64 },
}

/// One SPDC source with two-mode squeezed-vacuum statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdcSource {
    gamma: f64,
    tau: Option<f64>,
    pump_power: Option<f64>,
    rep_rate: f64,
    kind: SourceKind,
}

impl SpdcSource {
    /// Source specified directly by its squeezing parameter.
    pub fn from_gamma(gamma: f64, rep_rate: f64, kind: SourceKind) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidSqueezing(gamma));
        }
        Ok(Self {
            gamma,
            tau: None,
            pump_power: None,
            rep_rate,
            kind,
        })
    }

    /// Source specified by the nonlinear constant `tau` (per watt) and the
    /// pump power (watts); the squeezing parameter is sqrt(tau * power).
    pub fn from_pump(tau: f64, pump_power: f64, rep_rate: f64, kind: SourceKind) -> Result<Self> {
        if tau < 0.0 || pump_power < 0.0 {
            return Err(Error::config("tau and pump power must be non-negative"));
        }
        let gamma = (tau * pump_power).sqrt();
        if gamma >= 1.0 {
            return Err(Error::InvalidSqueezing(gamma));
        }
        Ok(Self {
            gamma,
            tau: Some(tau),
            pump_power: Some(pump_power),
            rep_rate,
            kind,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rep_rate(&self) -> f64 {
        self.rep_rate
    }

    pub fn kind(&self) -> SourceKind {
        self.kind
    }

    /// The same source with pump power scaled by `factor`; the squeezing
    /// parameter scales as sqrt(factor) with either parametrization.
    pub fn with_power_factor(&self, factor: f64) -> Result<Self> {
        let gamma = self.gamma * factor.sqrt();
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidSqueezing(gamma));
        }
        Ok(Self {
            gamma,
            tau: self.tau,
            pump_power: self.pump_power.map(|p| p * factor),
            rep_rate: self.rep_rate,
            kind: self.kind,
        })
    }
}

/// Emission probability of exactly `n` pairs per pulse,
/// `P(n) = (1 - gamma^2) gamma^(2n)`.
pub fn pair_probability(gamma: f64, n: u32) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidSqueezing(gamma));
    }
    let g2 = gamma * gamma;
    Ok((1.0 - g2) * g2.powi(n as i32))
}

/// One emission term: pair counts from each source, its rate, and the
/// normalized input state.
#[derive(Debug, Clone)]
pub struct EmissionTerm {
    pub pairs_source1: u32,
    pub pairs_source2: u32,
    pub rate: f64,
    pub state: SparseStateVector,
}

impl EmissionTerm {
    pub fn total_photons(&self) -> u32 {
        2 * (self.pairs_source1 + self.pairs_source2)
    }
}

/// Weighted list of emission terms up to a total pair-number truncation.
#[derive(Debug, Clone)]
pub struct SpdcEnsemble {
    terms: Vec<EmissionTerm>,
    truncation: u32,
}

impl SpdcEnsemble {
    pub fn terms(&self) -> &[EmissionTerm] {
        &self.terms
    }

    pub fn truncation(&self) -> u32 {
        self.truncation
    }

    pub fn total_rate(&self) -> f64 {
        self.terms.iter().map(|t| t.rate).sum()
    }

    /// Drops terms whose rate falls below the floor.
    pub fn with_rate_floor(mut self, floor: f64) -> Self {
        self.terms.retain(|t| t.rate >= floor);
        self
    }
}

/// Builds the normalized input state for `r1` entangled and `r2` separable
/// pair emissions:
/// `[2^(-1/2) (a2H a3V + e^{-i chi} a2V a3H)]^{r1} (a1S(varphi) a4S(theta))^{r2} |0>`
/// (mode numbering one-based, creation operators implied).
pub fn build_input_state(
    setting: &PhaseSetting,
    r1: u32,
    r2: u32,
    mode_space: ModeSpace,
) -> Result<SparseStateVector> {
    if r1 == 0 && r2 == 0 {
        return Err(Error::EmptyEmission);
    }
    if mode_space.n_external() < 4 || mode_space.n_internal() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "input states need >= 4 external modes and 2 internal labels, got {mode_space}"
        )));
    }
    let h = InternalState::horizontal();
    let v = InternalState::vertical();
    let inv_sqrt2 = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let pair_phase = Complex64::from_polar(1.0, -setting.chi);

    let mut state = SparseStateVector::vacuum(mode_space);
    for _ in 0..r1 {
        let hv = create(&create(&state, ENTANGLED_MODE_A, &h)?, ENTANGLED_MODE_B, &v)?;
        let vh = create(&create(&state, ENTANGLED_MODE_A, &v)?, ENTANGLED_MODE_B, &h)?;
        state = hv.add(&vh.scaled(pair_phase))?.scaled(inv_sqrt2);
    }
    let sup_varphi = InternalState::superposition(setting.varphi);
    let sup_theta = InternalState::superposition(setting.theta);
    for _ in 0..r2 {
        state = create(&state, SEPARABLE_MODE_A, &sup_varphi)?;
        state = create(&state, SEPARABLE_MODE_B, &sup_theta)?;
    }
    Ok(state.normalized())
}

/// Enumerates every emission term with `1 <= r1 + r2 <= truncation`, ordered
/// by total pair number and then by descending `r1`.
pub fn enumerate_ensemble(
    source1: &SpdcSource,
    source2: &SpdcSource,
    setting: &PhaseSetting,
    truncation: u32,
) -> Result<SpdcEnsemble> {
    if truncation < 1 {
        return Err(Error::config("truncation must be >= 1"));
    }
    if !matches!(source1.kind(), SourceKind::Entangled { .. }) {
        return Err(Error::config("source 1 must be the entangled source"));
    }
    if !matches!(source2.kind(), SourceKind::Separable { .. }) {
        return Err(Error::config("source 2 must be the separable source"));
    }
    if source1.rep_rate() != source2.rep_rate() {
        return Err(Error::config(
            "both sources are pumped by the same laser and share the repetition rate",
        ));
    }
    let f = source1.rep_rate();
    let space = ModeSpace::new(4, 2);
    let mut terms = Vec::new();
    for total in 1..=truncation {
        for r1 in (0..=total).rev() {
            let r2 = total - r1;
            let rate = f
                * pair_probability(source1.gamma(), r1)?
                * pair_probability(source2.gamma(), r2)?;
            let state = build_input_state(setting, r1, r2, space)?;
            terms.push(EmissionTerm {
                pairs_source1: r1,
                pairs_source2: r2,
                rate,
                state,
            });
        }
    }
    Ok(SpdcEnsemble { terms, truncation })
}

/// Retains only emission terms with zero pairs from the blocked source.
pub fn blocked_ensemble(ensemble: &SpdcEnsemble, blocked: SourceId) -> SpdcEnsemble {
    let terms = ensemble
        .terms
        .iter()
        .filter(|t| match blocked {
            SourceId::Source1 => t.pairs_source1 == 0,
            SourceId::Source2 => t.pairs_source2 == 0,
        })
        .cloned()
        .collect();
    SpdcEnsemble {
        terms,
        truncation: ensemble.truncation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sources() -> (SpdcSource, SpdcSource) {
        let s1 = SpdcSource::from_gamma(0.102, 8e7, SourceKind::Entangled { chi: 0.0 }).unwrap();
        let s2 = SpdcSource::from_gamma(
            0.094,
            8e7,
            SourceKind::Separable {
                varphi: 0.0,
                theta: 0.0,
            },
        )
        .unwrap();
        (s1, s2)
    }

    #[test]
    fn pair_probability_vacuum_limit() {
        assert_eq!(pair_probability(0.0, 0).unwrap(), 1.0);
        assert_eq!(pair_probability(0.0, 1).unwrap(), 0.0);
        assert_eq!(pair_probability(0.0, 5).unwrap(), 0.0);
        assert!(pair_probability(1.0, 0).is_err());
    }

    #[test]
    fn pair_probability_reference_value() {
        // (1 - 0.102^2) * 0.102^2
        let p = pair_probability(0.102, 1).unwrap();
        assert!((p - 1.0295756784e-2).abs() < 1e-15);
    }

    #[test]
    fn pair_probabilities_sum_to_one() {
        let gamma: f64 = 0.3;
        let sum: f64 = (0..200).map(|n| pair_probability(gamma, n).unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn four_photon_state_has_eight_balanced_terms() {
        let setting = PhaseSetting::new(0.0, 0.0, 0.0);
        let state = build_input_state(&setting, 1, 1, ModeSpace::new(4, 2)).unwrap();
        assert_eq!(state.num_terms(), 8);
        let expected = 1.0 / (2.0 * 2.0_f64.sqrt());
        for (_, amp) in state.terms() {
            assert!((amp.norm() - expected).abs() < 1e-12);
        }
        assert!((state.norm() - 1.0).abs() < 1e-12);
        assert_eq!(state.definite_photon_number(), Some(4));
    }

    #[test]
    fn single_entangled_pair_is_bell_like() {
        let setting = PhaseSetting::new(0.0, 0.0, 0.0);
        let state = build_input_state(&setting, 1, 0, ModeSpace::new(4, 2)).unwrap();
        assert_eq!(state.num_terms(), 2);
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        for (_, amp) in state.terms() {
            assert!((amp - Complex64::new(inv, 0.0)).norm() < 1e-12);
        }
        assert_eq!(state.definite_photon_number(), Some(2));
    }

    #[test]
    fn double_separable_emission_is_normalized() {
        let setting = PhaseSetting::new(0.0, 0.4, -0.9);
        let state = build_input_state(&setting, 0, 2, ModeSpace::new(4, 2)).unwrap();
        assert!((state.norm() - 1.0).abs() < 1e-12);
        assert_eq!(state.definite_photon_number(), Some(4));
        assert!(build_input_state(&setting, 0, 0, ModeSpace::new(4, 2)).is_err());
    }

    #[test]
    fn ensemble_enumeration_counts_and_order() {
        let (s1, s2) = sources();
        let setting = PhaseSetting::new(0.0, 0.0, 0.0);
        let small = enumerate_ensemble(&s1, &s2, &setting, 1).unwrap();
        assert_eq!(small.terms().len(), 2);
        let full = enumerate_ensemble(&s1, &s2, &setting, 3).unwrap();
        let order: Vec<(u32, u32)> = full
            .terms()
            .iter()
            .map(|t| (t.pairs_source1, t.pairs_source2))
            .collect();
        assert_eq!(
            order,
            vec![
                (1, 0),
                (0, 1),
                (2, 0),
                (1, 1),
                (0, 2),
                (3, 0),
                (2, 1),
                (1, 2),
                (0, 3)
            ]
        );
        for term in full.terms() {
            assert_eq!(
                term.state.definite_photon_number(),
                Some(term.total_photons())
            );
        }
    }

    #[test]
    fn emission_rate_matches_product_formula() {
        let (s1, s2) = sources();
        let setting = PhaseSetting::new(0.0, 0.0, 0.0);
        let ensemble = enumerate_ensemble(&s1, &s2, &setting, 3).unwrap();
        let term_11 = ensemble
            .terms()
            .iter()
            .find(|t| t.pairs_source1 == 1 && t.pairs_source2 == 1)
            .unwrap();
        assert!((term_11.rate - 7213.557344261752).abs() < 1e-9);
    }

    #[test]
    fn per_pulse_probabilities_approach_one() {
        let (s1, s2) = sources();
        let mut sum = pair_probability(s1.gamma(), 0).unwrap()
            * pair_probability(s2.gamma(), 0).unwrap();
        for total in 1..=12u32 {
            for r1 in 0..=total {
                sum += pair_probability(s1.gamma(), r1).unwrap()
                    * pair_probability(s2.gamma(), total - r1).unwrap();
            }
        }
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blocking_filters_terms_exactly() {
        let (s1, s2) = sources();
        let setting = PhaseSetting::new(0.3, -0.2, 0.1);
        let ensemble = enumerate_ensemble(&s1, &s2, &setting, 3).unwrap();
        let only_s1 = blocked_ensemble(&ensemble, SourceId::Source2);
        let combos: Vec<(u32, u32)> = only_s1
            .terms()
            .iter()
            .map(|t| (t.pairs_source1, t.pairs_source2))
            .collect();
        assert_eq!(combos, vec![(1, 0), (2, 0), (3, 0)]);
        for term in only_s1.terms() {
            let original = ensemble
                .terms()
                .iter()
                .find(|t| {
                    t.pairs_source1 == term.pairs_source1
                        && t.pairs_source2 == term.pairs_source2
                })
                .unwrap();
            assert_eq!(term.rate, original.rate);
        }
        let none = blocked_ensemble(&only_s1, SourceId::Source1);
        assert!(none.terms().is_empty());
    }

    #[test]
    fn rate_floor_drops_weak_terms() {
        let (s1, s2) = sources();
        let setting = PhaseSetting::new(0.0, 0.0, 0.0);
        let ensemble = enumerate_ensemble(&s1, &s2, &setting, 3).unwrap();
        let kept = ensemble.clone().with_rate_floor(1e3);
        assert!(kept.terms().len() < ensemble.terms().len());
        assert!(kept.terms().iter().all(|t| t.rate >= 1e3));
    }

    #[test]
    fn power_factor_scales_squeezing() {
        let (s1, _) = sources();
        let scaled = s1.with_power_factor(1.023).unwrap();
        assert!((scaled.gamma() - 0.102 * 1.023_f64.sqrt()).abs() < 1e-15);
        let via_pump =
            SpdcSource::from_pump(0.06, 0.174, 8e7, SourceKind::Entangled { chi: 0.0 }).unwrap();
        assert!((via_pump.gamma() * via_pump.gamma() - 0.06 * 0.174).abs() < 1e-12);
    }
}
