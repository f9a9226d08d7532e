//! Interferometer specifications: disjoint beam splitters, loss dilation with
//! vacuum ancilla modes, and the multiplexed detection layer.
//!
//! A spec is an ordered list of two-mode gates over external modes. Loss is
//! modelled by coupling each lossy port to a fresh ancilla through an
//! unbalanced beam splitter: input losses act before the signal gates, output
//! losses after, and the multiplex layer last. Mode layout for `n` signal
//! modes: `0..n` signal, `n..2n` input ancillas, `2n..3n` output ancillas,
//! multiplex partner modes appended at the end.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One two-mode beam-splitter gate acting on external modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub mode_a: usize,
    pub mode_b: usize,
    pub transmissivity: f64,
}

/// Independent transmission factors, one per input port followed by one per
/// output port (8 values for the four-mode setup).
#[derive(Debug, Clone, PartialEq)]
pub struct LossModel {
    transmissions: Vec<f64>,
}

impl LossModel {
    pub fn new(transmissions: Vec<f64>) -> Result<Self> {
        for &eta in &transmissions {
            if !(0.0..=1.0).contains(&eta) || !eta.is_finite() {
                return Err(Error::InvalidTransmissivity(eta));
            }
        }
        Ok(Self { transmissions })
    }

    /// Equal transmission `eta` on all `n_signal` inputs and outputs.
    pub fn uniform(n_signal: usize, eta: f64) -> Result<Self> {
        Self::new(vec![eta; 2 * n_signal])
    }

    pub fn transmissions(&self) -> &[f64] {
        &self.transmissions
    }

    pub fn len(&self) -> usize {
        self.transmissions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transmissions.is_empty()
    }
}

/// Threshold-detector arrangement: named channels, each observed by one
/// detector or by two after one multiplex layer. Events with more clicked
/// detectors than `rejection_threshold` are flagged as rejected.
#[derive(Debug, Clone)]
pub struct DetectorLayout {
    channels: Vec<String>,
    detectors_per_channel: usize,
    rejection_threshold: usize,
    /// External modes observed by each channel, `detectors_per_channel` each.
    detector_modes: Vec<Vec<usize>>,
}

impl DetectorLayout {
    pub fn new(
        channels: Vec<String>,
        detector_modes: Vec<Vec<usize>>,
        rejection_threshold: usize,
    ) -> Result<Self> {
        if channels.is_empty() || channels.len() != detector_modes.len() {
            return Err(Error::DimensionMismatch(
                "channel names and detector mode lists must match".into(),
            ));
        }
        let dpc = detector_modes[0].len();
        if !(1..=2).contains(&dpc) || detector_modes.iter().any(|m| m.len() != dpc) {
            return Err(Error::DimensionMismatch(
                "detectors per channel must be 1 or 2, uniformly".into(),
            ));
        }
        let mut seen: Vec<usize> = detector_modes.iter().flatten().copied().collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != channels.len() * dpc {
            return Err(Error::DimensionMismatch(
                "channel-to-mode mapping must be injective".into(),
            ));
        }
        Ok(Self {
            channels,
            detectors_per_channel: dpc,
            rejection_threshold,
            detector_modes,
        })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn detectors_per_channel(&self) -> usize {
        self.detectors_per_channel
    }

    pub fn n_detectors(&self) -> usize {
        self.channels.len() * self.detectors_per_channel
    }

    pub fn rejection_threshold(&self) -> usize {
        self.rejection_threshold
    }

    pub fn detector_modes(&self) -> &[Vec<usize>] {
        &self.detector_modes
    }

    /// External mode observed by detector `id = channel * dpc + sub`.
    pub fn detector_mode(&self, detector: usize) -> usize {
        let ch = detector / self.detectors_per_channel;
        let sub = detector % self.detectors_per_channel;
        self.detector_modes[ch][sub]
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }
}

/// Single-particle unitary over external modes, stored as an ordered list of
/// two-mode gates, plus the loss dilation and multiplex bookkeeping.
#[derive(Debug, Clone)]
pub struct InterferometerSpec {
    n_signal_modes: usize,
    gates: Vec<Gate>,
    loss: Option<LossModel>,
    multiplex_depth: usize,
    /// Detector channel name -> signal output mode.
    labels: BTreeMap<String, usize>,
    total_modes: usize,
    /// Channel output mode -> multiplex partner mode, when multiplexed.
    mux_partners: BTreeMap<usize, usize>,
}

impl InterferometerSpec {
    pub fn n_signal_modes(&self) -> usize {
        self.n_signal_modes
    }

    pub fn total_modes(&self) -> usize {
        self.total_modes
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn loss(&self) -> Option<&LossModel> {
        self.loss.as_ref()
    }

    pub fn multiplex_depth(&self) -> usize {
        self.multiplex_depth
    }

    pub fn labels(&self) -> &BTreeMap<String, usize> {
        &self.labels
    }

    /// Detector layout over this spec's output modes.
    pub fn detector_layout(&self, rejection_threshold: usize) -> DetectorLayout {
        let mut channels = Vec::new();
        let mut detector_modes = Vec::new();
        for (name, &mode) in &self.labels {
            channels.push(name.clone());
            let mut modes = vec![mode];
            if let Some(&partner) = self.mux_partners.get(&mode) {
                modes.push(partner);
            }
            detector_modes.push(modes);
        }
        DetectorLayout::new(channels, detector_modes, rejection_threshold)
            .expect("spec labels are injective by construction")
    }

    /// Dense single-particle matrix of the composed gate list.
    #[allow(clippy::needless_range_loop)]
    pub fn single_particle_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.total_modes;
        let mut u: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for gate in &self.gates {
            if gate.transmissivity == 1.0 {
                continue;
            }
            let t = gate.transmissivity.sqrt();
            let r = (1.0 - gate.transmissivity).sqrt();
            for j in 0..n {
                let ra = u[gate.mode_a][j];
                let rb = u[gate.mode_b][j];
                u[gate.mode_a][j] = t * ra + r * rb;
                u[gate.mode_b][j] = r * ra - t * rb;
            }
        }
        u
    }

    /// Maximum deviation of `U^T U` from the identity.
    #[allow(clippy::needless_range_loop)]
    pub fn unitarity_deviation(&self) -> f64 {
        let u = self.single_particle_matrix();
        let n = u.len();
        let mut max_dev: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| u[k][i] * u[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((dot - target).abs());
            }
        }
        max_dev
    }

    /// Partition of the external modes into connected components of the gate
    /// graph; modes touched by no gate form singleton components.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.total_modes;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for gate in &self.gates {
            let (ra, rb) = (find(&mut parent, gate.mode_a), find(&mut parent, gate.mode_b));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for m in 0..n {
            let root = find(&mut parent, m);
            groups.entry(root).or_default().push(m);
        }
        groups.into_values().collect()
    }
}

fn channel_name(index: usize) -> String {
    // A, B, ..., Z, then AA-style for larger schemes.
    let mut name = String::new();
    let mut i = index;
    loop {
        name.insert(0, (b'A' + (i % 26) as u8) as char);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    name
}

/// Builds the disjoint scheme for `n_particles` modes: one beam splitter per
/// mode pair (1,2), (3,4), ..., with the given power transmissivities.
/// All ratios at 1/2 reproduce the Hadamard-like four-mode unitary exactly.
pub fn build_disjoint_scheme(
    n_particles: usize,
    splitting_ratios: &[f64],
) -> Result<InterferometerSpec> {
    if n_particles < 4 || !n_particles.is_multiple_of(2) {
        return Err(Error::OddParticleCount(n_particles));
    }
    if splitting_ratios.len() != n_particles / 2 {
        return Err(Error::DimensionMismatch(format!(
            "expected {} splitting ratios, got {}",
            n_particles / 2,
            splitting_ratios.len()
        )));
    }
    let mut gates = Vec::with_capacity(n_particles / 2);
    for (i, &ratio) in splitting_ratios.iter().enumerate() {
        if !(0.0..=1.0).contains(&ratio) || !ratio.is_finite() {
            return Err(Error::InvalidTransmissivity(ratio));
        }
        gates.push(Gate {
            mode_a: 2 * i,
            mode_b: 2 * i + 1,
            transmissivity: ratio,
        });
    }
    let labels = (0..n_particles).map(|m| (channel_name(m), m)).collect();
    Ok(InterferometerSpec {
        n_signal_modes: n_particles,
        gates,
        loss: None,
        multiplex_depth: 0,
        labels,
        total_modes: n_particles,
        mux_partners: BTreeMap::new(),
    })
}

/// Extends a spec with loss ancillas: each input port couples to a fresh
/// vacuum ancilla before the signal gates and each output port after them,
/// with beam splitters of transmissivity `eta_j`. Tracing over the ancillas
/// reproduces independent per-port transmission.
pub fn dilate_with_loss(spec: &InterferometerSpec, loss: &LossModel) -> Result<InterferometerSpec> {
    if spec.multiplex_depth != 0 {
        return Err(Error::LossAfterMultiplex);
    }
    if spec.loss.is_some() {
        return Err(Error::LossAlreadyPresent);
    }
    let n = spec.n_signal_modes;
    if loss.len() != 2 * n {
        return Err(Error::LossLength {
            got: loss.len(),
            expected: 2 * n,
        });
    }
    let etas = loss.transmissions();
    let mut gates = Vec::with_capacity(spec.gates.len() + 2 * n);
    for (j, &eta) in etas[..n].iter().enumerate() {
        gates.push(Gate {
            mode_a: j,
            mode_b: n + j,
            transmissivity: eta,
        });
    }
    gates.extend_from_slice(&spec.gates);
    for (m, &eta) in etas[n..].iter().enumerate() {
        gates.push(Gate {
            mode_a: m,
            mode_b: 2 * n + m,
            transmissivity: eta,
        });
    }
    Ok(InterferometerSpec {
        n_signal_modes: n,
        gates,
        loss: Some(loss.clone()),
        multiplex_depth: 0,
        labels: spec.labels.clone(),
        total_modes: 3 * n,
        mux_partners: BTreeMap::new(),
    })
}

/// Feeds each detector channel into a balanced beam splitter onto two
/// detector modes, giving pseudo-number resolution. Only one layer is
/// modelled, as in the experiment.
pub fn add_multiplex_layer(spec: &InterferometerSpec) -> Result<InterferometerSpec> {
    if spec.multiplex_depth != 0 {
        return Err(Error::MultiplexAlreadyPresent);
    }
    let mut out = spec.clone();
    let mut next = spec.total_modes;
    for &mode in spec.labels.values() {
        out.gates.push(Gate {
            mode_a: mode,
            mode_b: next,
            transmissivity: 0.5,
        });
        out.mux_partners.insert(mode, next);
        next += 1;
    }
    out.total_modes = next;
    out.multiplex_depth = 1;
    Ok(out)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    #[test]
    fn balanced_four_mode_scheme_matches_hadamard_blocks() {
        let spec = build_disjoint_scheme(4, &[0.5, 0.5]).unwrap();
        let u = spec.single_particle_matrix();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expected = [
            [s, s, 0.0, 0.0],
            [s, -s, 0.0, 0.0],
            [0.0, 0.0, s, s],
            [0.0, 0.0, s, -s],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (u[i][j] - expected[i][j]).abs() < 1e-15,
                    "U[{i}][{j}] = {}",
                    u[i][j]
                );
            }
        }
    }

    #[test]
    fn unit_ratios_give_identity() {
        let spec = build_disjoint_scheme(4, &[1.0, 1.0]).unwrap();
        let u = spec.single_particle_matrix();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((u[i][j] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn six_mode_scheme_is_block_diagonal() {
        let spec = build_disjoint_scheme(6, &[0.5, 0.5, 0.5]).unwrap();
        let u = spec.single_particle_matrix();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for block in 0..3 {
            let b = 2 * block;
            assert!((u[b][b] - s).abs() < 1e-15);
            assert!((u[b][b + 1] - s).abs() < 1e-15);
            assert!((u[b + 1][b] - s).abs() < 1e-15);
            assert!((u[b + 1][b + 1] + s).abs() < 1e-15);
        }
        for i in 0..6 {
            for j in 0..6 {
                if i / 2 != j / 2 {
                    assert_eq!(u[i][j], 0.0);
                }
            }
        }
        assert!(spec.unitarity_deviation() < 1e-12);
    }

    #[test]
    fn odd_particle_count_rejected() {
        assert!(matches!(
            build_disjoint_scheme(5, &[0.5, 0.5]),
            Err(Error::OddParticleCount(5))
        ));
    }

    #[test]
    fn dilation_keeps_unitarity_and_mode_count() {
        let spec = build_disjoint_scheme(4, &[0.5, 0.5]).unwrap();
        let loss = LossModel::new(vec![0.9, 0.8, 0.7, 0.6, 0.95, 0.85, 0.75, 0.65]).unwrap();
        let dilated = dilate_with_loss(&spec, &loss).unwrap();
        assert_eq!(dilated.total_modes(), 12);
        assert!(dilated.unitarity_deviation() < 1e-12);
        assert!(dilate_with_loss(&dilated, &loss).is_err());
    }

    #[test]
    fn multiplex_layer_adds_balanced_splitters_once() {
        let spec = build_disjoint_scheme(4, &[0.5, 0.5]).unwrap();
        let muxed = add_multiplex_layer(&spec).unwrap();
        assert_eq!(muxed.total_modes(), 8);
        assert_eq!(muxed.multiplex_depth(), 1);
        let layout = muxed.detector_layout(4);
        assert_eq!(layout.detectors_per_channel(), 2);
        assert_eq!(layout.n_detectors(), 8);
        assert!(add_multiplex_layer(&muxed).is_err());
        assert!(matches!(
            dilate_with_loss(&muxed, &LossModel::uniform(4, 0.9).unwrap()),
            Err(Error::LossAfterMultiplex)
        ));
    }

    #[test]
    fn components_respect_disjoint_blocks() {
        let spec = build_disjoint_scheme(4, &[0.5, 0.5]).unwrap();
        let loss = LossModel::uniform(4, 0.8).unwrap();
        let full = add_multiplex_layer(&dilate_with_loss(&spec, &loss).unwrap()).unwrap();
        let comps = full.components();
        assert_eq!(comps.len(), 2);
        // Block of modes {0,1} with its ancillas and multiplex partners.
        assert!(comps[0].contains(&0) && comps[0].contains(&1));
        assert!(comps[0].contains(&4) && comps[0].contains(&5));
        assert!(comps[0].contains(&8) && comps[0].contains(&9));
        assert!(!comps[0].contains(&2));
        assert!(comps[1].contains(&2) && comps[1].contains(&3));
    }

    #[test]
    fn channel_names_follow_output_modes() {
        let spec = build_disjoint_scheme(4, &[0.5, 0.5]).unwrap();
        let labels = spec.labels();
        assert_eq!(labels["A"], 0);
        assert_eq!(labels["D"], 3);
        let layout = spec.detector_layout(4);
        assert_eq!(layout.channel_index("C").unwrap(), 2);
        assert!(layout.channel_index("Z").is_err());
    }
}
