//! Feed-forward policies stored as flat genomes.
//!
//! Canonical parameter order: the shared layers come first (the hidden
//! stack of a single-agent network, or the feature extractor of a
//! multi-agent one), followed by every output branch in agent order. Each
//! layer contributes its weight matrix row-major as `[out][in]`, then its
//! bias vector. Hidden layers use `tanh`; the last layer of a branch is
//! linear and feeds a softmax.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::belief::Belief;
use crate::error::{Error, Result};
use crate::model::{sample_categorical, ActionId};
use crate::seed::SimRng;

/// Network shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchSpec {
    SingleAgent {
        input: usize,
        hidden: Vec<usize>,
        output: usize,
    },
    /// One shared feature extractor, one branch per agent. Each branch
    /// output covers the agent's sensing actions plus a final no-sensing
    /// action.
    MultiAgent {
        input: usize,
        extractor_hidden: Vec<usize>,
        branch_hidden: Vec<usize>,
        branch_outputs: Vec<usize>,
    },
}

/// Position of one dense layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlot {
    pub input: usize,
    pub output: usize,
    pub offset: usize,
}

impl LayerSlot {
    pub fn len(&self) -> usize {
        self.output * (self.input + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    shared: Vec<LayerSlot>,
    branches: Vec<Vec<LayerSlot>>,
    total: usize,
}

fn stack(sizes: &[usize], offset: &mut usize) -> Vec<LayerSlot> {
    sizes
        .windows(2)
        .map(|w| {
            let slot = LayerSlot { input: w[0], output: w[1], offset: *offset };
            *offset += slot.len();
            slot
        })
        .collect()
}

impl ArchSpec {
    pub fn single(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        ArchSpec::SingleAgent { input, hidden, output }
    }

    pub fn multi(
        input: usize,
        extractor_hidden: Vec<usize>,
        branch_hidden: Vec<usize>,
        branch_outputs: Vec<usize>,
    ) -> Self {
        ArchSpec::MultiAgent { input, extractor_hidden, branch_hidden, branch_outputs }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[usize]| v.iter().all(|&n| n > 0);
        let ok = match self {
            ArchSpec::SingleAgent { input, hidden, output } => {
                *input > 0 && *output > 0 && positive(hidden)
            }
            ArchSpec::MultiAgent { input, extractor_hidden, branch_hidden, branch_outputs } => {
                *input > 0
                    && !branch_outputs.is_empty()
                    && positive(branch_outputs)
                    && positive(extractor_hidden)
                    && positive(branch_hidden)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("invalid architecture {}", self.describe())))
        }
    }

    pub fn input(&self) -> usize {
        match self {
            ArchSpec::SingleAgent { input, .. } | ArchSpec::MultiAgent { input, .. } => *input,
        }
    }

    /// Number of output branches (1 for a single-agent network).
    pub fn agents(&self) -> usize {
        match self {
            ArchSpec::SingleAgent { .. } => 1,
            ArchSpec::MultiAgent { branch_outputs, .. } => branch_outputs.len(),
        }
    }

    pub fn is_multi(&self) -> bool {
        matches!(self, ArchSpec::MultiAgent { .. })
    }

    pub fn branch_output(&self, branch: usize) -> usize {
        match self {
            ArchSpec::SingleAgent { output, .. } => *output,
            ArchSpec::MultiAgent { branch_outputs, .. } => branch_outputs[branch],
        }
    }

    fn layout(&self) -> Layout {
        let mut offset = 0;
        match self {
            ArchSpec::SingleAgent { input, hidden, output } => {
                let mut sizes = vec![*input];
                sizes.extend(hidden);
                let shared = stack(&sizes, &mut offset);
                let last = *sizes.last().unwrap_or(input);
                let branch = stack(&[last, *output], &mut offset);
                Layout { shared, branches: vec![branch], total: offset }
            }
            ArchSpec::MultiAgent { input, extractor_hidden, branch_hidden, branch_outputs } => {
                let mut sizes = vec![*input];
                sizes.extend(extractor_hidden);
                let shared = stack(&sizes, &mut offset);
                let feat = *sizes.last().unwrap_or(input);
                let branches = branch_outputs
                    .iter()
                    .map(|&out| {
                        let mut b = vec![feat];
                        b.extend(branch_hidden);
                        b.push(out);
                        stack(&b, &mut offset)
                    })
                    .collect();
                Layout { shared, branches, total: offset }
            }
        }
    }

    /// Total parameter count `N_w`.
    pub fn num_weights(&self) -> usize {
        self.layout().total
    }

    /// All dense layers in canonical order.
    pub fn layers(&self) -> Vec<LayerSlot> {
        let layout = self.layout();
        let mut all = layout.shared;
        for b in layout.branches {
            all.extend(b);
        }
        all
    }

    pub fn describe(&self) -> String {
        match self {
            ArchSpec::SingleAgent { input, hidden, output } => {
                format!("single-agent {input} -> {hidden:?} -> {output}")
            }
            ArchSpec::MultiAgent { input, extractor_hidden, branch_hidden, branch_outputs } => format!(
                "multi-agent {input} -> {extractor_hidden:?} -> {} x {branch_hidden:?} -> {branch_outputs:?}",
                branch_outputs.len()
            ),
        }
    }
}

/// Flat weights and prune mask of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GenomeFile", into = "GenomeFile")]
pub struct Genome {
    arch: ArchSpec,
    weights: Vec<f64>,
    mask: Vec<bool>,
}

impl Genome {
    /// Masked positions are forced to zero.
    pub fn new(arch: ArchSpec, mut weights: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        arch.validate()?;
        let n = arch.num_weights();
        if weights.len() != n || mask.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} needs {n} weights, got {} weights and {} mask bits",
                arch.describe(),
                weights.len(),
                mask.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::ShapeMismatch(format!("weight {i} is not finite")));
        }
        for (w, &m) in weights.iter_mut().zip(&mask) {
            if !m {
                *w = 0.0;
            }
        }
        Ok(Self { arch, weights, mask })
    }

    pub fn dense(arch: ArchSpec, weights: Vec<f64>) -> Result<Self> {
        let mask = vec![true; weights.len()];
        Self::new(arch, weights, mask)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sparsity(&self) -> f64 {
        sparsity(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Run-length encoded mask: `first` is the value of the first run and runs
/// alternate from there.
#[derive(Clone, Serialize, Deserialize)]
struct MaskRuns {
    first: bool,
    runs: Vec<usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct GenomeFile {
    arch: ArchSpec,
    weights: Vec<f64>,
    mask: MaskRuns,
}

impl From<Genome> for GenomeFile {
    fn from(g: Genome) -> Self {
        GenomeFile::from(&g)
    }
}

impl TryFrom<GenomeFile> for Genome {
    type Error = Error;

    fn try_from(file: GenomeFile) -> Result<Self> {
        file.into_genome()
    }
}

impl From<&Genome> for GenomeFile {
    fn from(g: &Genome) -> Self {
        let mut runs = Vec::new();
        let mut iter = g.mask.iter().peekable();
        while let Some(&bit) = iter.next() {
            let mut len = 1;
            while iter.next_if(|&&b| b == bit).is_some() {
                len += 1;
            }
            runs.push(len);
        }
        GenomeFile {
            arch: g.arch.clone(),
            weights: g.weights.clone(),
            mask: MaskRuns { first: g.mask.first().copied().unwrap_or(true), runs },
        }
    }
}

impl GenomeFile {
    fn into_genome(self) -> Result<Genome> {
        let mut mask = Vec::with_capacity(self.weights.len());
        let mut bit = self.mask.first;
        for run in self.mask.runs {
            mask.extend(std::iter::repeat_n(bit, run));
            bit = !bit;
        }
        Genome::new(self.arch, self.weights, mask)
    }
}

/// Fresh genome with weights uniform on `[-1, 1]` and an all-ones mask.
pub fn init_genome(arch: &ArchSpec, rng: &mut SimRng) -> Result<Genome> {
    arch.validate()?;
    let weights = (0..arch.num_weights()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    Genome::dense(arch.clone(), weights)
}

/// `1 − (fraction of unmasked parameters)`.
pub fn sparsity(genome: &Genome) -> f64 {
    if genome.mask.is_empty() {
        return 0.0;
    }
    let kept = genome.mask.iter().filter(|&&m| m).count();
    1.0 - kept as f64 / genome.mask.len() as f64
}

/// Zero the smallest-magnitude `floor(p · nonzeros)` live parameters of
/// every layer (weights and biases together). Layers with at least
/// `ceil(1/p)` live parameters always lose at least one.
pub fn apply_prune(genome: &Genome, p: f64) -> Result<Genome> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ParamOutOfRange(format!("prune fraction {p} outside (0, 1)")));
    }
    let mut out = genome.clone();
    let min_live = (1.0 / p).ceil() as usize;
    for slot in genome.arch.layers() {
        let mut live: Vec<usize> = slot.range().filter(|&i| genome.mask[i]).collect();
        let mut k = (p * live.len() as f64).floor() as usize;
        if k == 0 && live.len() >= min_live {
            k = 1;
        }
        if k == 0 {
            continue;
        }
        live.sort_by(|&a, &b| {
            genome.weights[a].abs().total_cmp(&genome.weights[b].abs()).then(a.cmp(&b))
        });
        for &i in &live[..k] {
            out.mask[i] = false;
            out.weights[i] = 0.0;
        }
    }
    Ok(out)
}

/// Add `N(0, σ²)` noise to every unmasked parameter.
pub fn perturb_nonzero(genome: &Genome, sigma: f64, rng: &mut SimRng) -> Result<Genome> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::ParamOutOfRange(format!("noise scale {sigma} must be ≥ 0")));
    }
    let mut out = genome.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    for (w, &m) in out.weights.iter_mut().zip(&genome.mask) {
        if m {
            let z: f64 = rng.sample(StandardNormal);
            *w += sigma * z;
        }
    }
    Ok(out)
}

/// How a policy turns its output distribution into an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Stochastic,
    Greedy,
}

/// A genome ready for forward passes.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    arch: ArchSpec,
    weights: Vec<f64>,
    layout: Layout,
}

fn dense_layer(slot: &LayerSlot, params: &[f64], x: &[f64], out: &mut Vec<f64>, activate: bool) {
    let w = &params[slot.offset..slot.offset + slot.output * slot.input];
    let b = &params[slot.offset + slot.output * slot.input..slot.offset + slot.len()];
    out.clear();
    out.extend(w.chunks_exact(slot.input).zip(b).map(|(row, bias)| {
        let s = row.iter().zip(x).fold(*bias, |acc, (a, v)| acc + a * v);
        if activate {
            s.tanh()
        } else {
            s
        }
    }));
}

impl PolicyNet {
    pub fn new(genome: &Genome) -> Self {
        Self {
            arch: genome.arch.clone(),
            weights: genome.weights.clone(),
            layout: genome.arch.layout(),
        }
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    fn check_input(&self, belief: &Belief) -> Result<()> {
        if belief.len() != self.arch.input() {
            return Err(Error::ShapeMismatch(format!(
                "belief has {} entries, network expects {}",
                belief.len(),
                self.arch.input()
            )));
        }
        Ok(())
    }

    /// Shared-layer activations for `input`.
    pub fn features(&self, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for slot in &self.layout.shared {
            dense_layer(slot, &self.weights, &cur, &mut next, true);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Output logits of branch `branch` given shared features.
    pub fn branch_logits(&self, branch: usize, features: &[f64]) -> Vec<f64> {
        let layers = &self.layout.branches[branch];
        let mut cur = features.to_vec();
        let mut next = Vec::new();
        for (i, slot) in layers.iter().enumerate() {
            dense_layer(slot, &self.weights, &cur, &mut next, i + 1 < layers.len());
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Softmax action distribution of one branch.
    pub fn action_probs(&self, branch: usize, belief: &Belief) -> Result<Vec<f64>> {
        self.check_input(belief)?;
        if branch >= self.arch.agents() {
            return Err(Error::BadAgentIndex { agent: branch, agents: self.arch.agents() });
        }
        Ok(softmax(&self.branch_logits(branch, &self.features(belief.probs()))))
    }

    fn choose(&self, branch: usize, belief: &Belief, rng: &mut SimRng, mode: ActionMode) -> Result<ActionId> {
        self.check_input(belief)?;
        if branch >= self.arch.agents() {
            return Err(Error::BadAgentIndex { agent: branch, agents: self.arch.agents() });
        }
        let logits = self.branch_logits(branch, &self.features(belief.probs()));
        Ok(match mode {
            ActionMode::Greedy => argmax(&logits),
            ActionMode::Stochastic => sample_categorical(&softmax(&logits), rng),
        })
    }

    /// Action of a single-agent network.
    pub fn act_single(&self, belief: &Belief, rng: &mut SimRng, mode: ActionMode) -> Result<ActionId> {
        if self.arch.is_multi() {
            return Err(Error::ShapeMismatch("act_single called on a multi-agent network".into()));
        }
        self.choose(0, belief, rng, mode)
    }

    /// Local action of agent `agent`; the last index is the no-sensing action.
    pub fn act_multi(
        &self,
        agent: usize,
        belief: &Belief,
        rng: &mut SimRng,
        mode: ActionMode,
    ) -> Result<ActionId> {
        if !self.arch.is_multi() {
            return Err(Error::ShapeMismatch("act_multi called on a single-agent network".into()));
        }
        self.choose(agent, belief, rng, mode)
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> SimRng {
        SimRng::seed_from_u64(seed)
    }

    /// Independent count: every dense layer has `in·out` weights and `out` biases.
    fn count_params(sizes: &[usize]) -> usize {
        let mut total = 0;
        for i in 1..sizes.len() {
            total += sizes[i - 1] * sizes[i];
            total += sizes[i];
        }
        total
    }

    #[test]
    fn single_agent_parameter_count() {
        let arch = ArchSpec::single(4, vec![200, 200], 6);
        assert_eq!(arch.num_weights(), 42_406);
        assert_eq!(arch.num_weights(), count_params(&[4, 200, 200, 6]));
    }

    #[test]
    fn multi_agent_parameter_count() {
        let arch = ArchSpec::multi(16, vec![30, 20], vec![10, 10], vec![7, 7, 4]);
        let expected = count_params(&[16, 30, 20])
            + count_params(&[20, 10, 10, 7]) * 2
            + count_params(&[20, 10, 10, 4]);
        assert_eq!(arch.num_weights(), expected);
    }

    #[test]
    fn init_is_seeded_and_dense() {
        let arch = ArchSpec::single(4, vec![8, 8], 6);
        let a = init_genome(&arch, &mut rng(1)).unwrap();
        let b = init_genome(&arch, &mut rng(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sparsity(), 0.0);
        assert!(a.weights().iter().all(|w| (-1.0..=1.0).contains(w)));
    }

    #[test]
    fn zero_weights_give_uniform_and_action_zero() {
        let arch = ArchSpec::single(4, vec![5, 5], 6);
        let g = Genome::dense(arch.clone(), vec![0.0; arch.num_weights()]).unwrap();
        let net = PolicyNet::new(&g);
        let b = Belief::uniform(4);
        let probs = net.action_probs(0, &b).unwrap();
        assert!(probs.iter().all(|p| (p - 1.0 / 6.0).abs() < 1e-15));
        assert_eq!(net.act_single(&b, &mut rng(0), ActionMode::Greedy).unwrap(), 0);
    }

    #[test]
    fn dominant_bias_wins() {
        let arch = ArchSpec::single(4, vec![5, 5], 6);
        let mut w = vec![0.0; arch.num_weights()];
        let out = arch.layers()[2];
        w[out.offset + out.output * out.input + 3] = 10.0;
        let net = PolicyNet::new(&Genome::dense(arch, w).unwrap());
        assert_eq!(net.act_single(&Belief::uniform(4), &mut rng(0), ActionMode::Greedy).unwrap(), 3);
    }

    #[test]
    fn stochastic_frequencies_match_softmax() {
        let arch = ArchSpec::single(4, vec![6], 3);
        let g = init_genome(&arch, &mut rng(11)).unwrap();
        let net = PolicyNet::new(&g);
        let b = Belief::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let probs = net.action_probs(0, &b).unwrap();
        let n = 10_000;
        let mut counts = [0usize; 3];
        let mut r = rng(12);
        for _ in 0..n {
            counts[net.act_single(&b, &mut r, ActionMode::Stochastic).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 3.0 * se + 1e-12);
        }
    }

    #[test]
    fn branch_separation() {
        let arch = ArchSpec::multi(4, vec![6, 6], vec![5, 5], vec![4, 4]);
        let g = init_genome(&arch, &mut rng(3)).unwrap();
        let layers = arch.layers();
        // Layers: 2 extractor, then 3 per branch.
        let mut w = g.weights().to_vec();
        for slot in &layers[2..5] {
            for v in &mut w[slot.range()] {
                *v += 0.7;
            }
        }
        let g2 = Genome::dense(arch, w).unwrap();
        let (n1, n2) = (PolicyNet::new(&g), PolicyNet::new(&g2));
        let mut r = rng(0);
        for i in 0..50 {
            let mut p = vec![1.0 + i as f64, 1.0, 2.0, 3.0];
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            let b = Belief::new(p).unwrap();
            assert_eq!(
                n1.act_multi(1, &b, &mut r, ActionMode::Greedy).unwrap(),
                n2.act_multi(1, &b, &mut r, ActionMode::Greedy).unwrap()
            );
        }
    }

    #[test]
    fn identical_branches_agree() {
        let arch = ArchSpec::multi(4, vec![6], vec![5], vec![3, 3]);
        let g = init_genome(&arch, &mut rng(4)).unwrap();
        let layers = arch.layers();
        let mut w = g.weights().to_vec();
        // Copy branch 0 (layers 1..3) onto branch 1 (layers 3..5).
        for (src, dst) in layers[1..3].iter().zip(&layers[3..5]) {
            let chunk: Vec<f64> = w[src.range()].to_vec();
            w[dst.range()].copy_from_slice(&chunk);
        }
        let net = PolicyNet::new(&Genome::dense(arch, w).unwrap());
        let b = Belief::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let mut r = rng(0);
        assert_eq!(
            net.act_multi(0, &b, &mut r, ActionMode::Greedy).unwrap(),
            net.act_multi(1, &b, &mut r, ActionMode::Greedy).unwrap()
        );
        assert!(matches!(
            net.act_multi(2, &b, &mut r, ActionMode::Greedy),
            Err(Error::BadAgentIndex { agent: 2, agents: 2 })
        ));
        assert!(net.act_single(&b, &mut r, ActionMode::Greedy).is_err());
        assert!(net.act_multi(0, &Belief::uniform(3), &mut r, ActionMode::Greedy).is_err());
    }

    #[test]
    fn zero_multi_network_is_uniform_over_idle_too() {
        let arch = ArchSpec::multi(4, vec![3], vec![3], vec![5]);
        let g = Genome::dense(arch.clone(), vec![0.0; arch.num_weights()]).unwrap();
        let probs = PolicyNet::new(&g).action_probs(0, &Belief::uniform(4)).unwrap();
        assert_eq!(probs.len(), 5);
        assert!(probs.iter().all(|p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn prune_examples() {
        // Single layer 4 -> 2: 8 weights + 2 biases = 10 parameters.
        let arch = ArchSpec::single(4, vec![], 2);
        let w: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let g = Genome::dense(arch, w).unwrap();
        let once = apply_prune(&g, 0.2).unwrap();
        assert_eq!(once.mask().iter().filter(|m| !**m).count(), 2);
        assert_eq!(&once.weights()[..2], &[0.0, 0.0]);
        let twice = apply_prune(&once, 0.2).unwrap();
        // 8 live, floor(1.6) = 1 more pruned.
        assert_eq!(twice.mask().iter().filter(|m| !**m).count(), 3);
        assert!(apply_prune(&g, 0.0).is_err());
    }

    #[test]
    fn compounding_prune_on_large_layer() {
        let arch = ArchSpec::single(99, vec![], 1);
        let g = init_genome(&arch, &mut rng(2)).unwrap();
        let twice = apply_prune(&apply_prune(&g, 0.2).unwrap(), 0.2).unwrap();
        assert!((twice.sparsity() - 0.36).abs() < 1e-12);
    }

    #[test]
    fn fully_pruned_layer_unchanged() {
        let arch = ArchSpec::single(2, vec![], 1);
        let g = Genome::new(arch, vec![0.0; 3], vec![false; 3]).unwrap();
        assert_eq!(apply_prune(&g, 0.5).unwrap(), g);
    }

    #[test]
    fn perturbation_respects_mask() {
        let arch = ArchSpec::single(100, vec![100], 10);
        let g = apply_prune(&init_genome(&arch, &mut rng(5)).unwrap(), 0.05).unwrap();
        assert_eq!(perturb_nonzero(&g, 0.0, &mut rng(6)).unwrap(), g);
        let p = perturb_nonzero(&g, 0.3, &mut rng(6)).unwrap();
        assert_eq!(p.mask(), g.mask());
        let diffs: Vec<f64> = p
            .weights()
            .iter()
            .zip(g.weights())
            .zip(g.mask())
            .filter_map(|((a, b), m)| if *m { Some(a - b) } else { assert_eq!(*a, 0.0); None })
            .collect();
        assert!(diffs.len() >= 10_000);
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        assert!((var / 0.09 - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn logit_shift_keeps_greedy_choice() {
        let arch = ArchSpec::single(3, vec![4], 5);
        let g = init_genome(&arch, &mut rng(8)).unwrap();
        let out = arch.layers()[1];
        let mut w = g.weights().to_vec();
        for v in &mut w[out.offset + out.output * out.input..out.offset + out.len()] {
            *v += 3.25;
        }
        let shifted = PolicyNet::new(&Genome::dense(arch, w).unwrap());
        let net = PolicyNet::new(&g);
        let b = Belief::new(vec![0.2, 0.5, 0.3]).unwrap();
        let mut r = rng(0);
        assert_eq!(
            net.act_single(&b, &mut r, ActionMode::Greedy).unwrap(),
            shifted.act_single(&b, &mut r, ActionMode::Greedy).unwrap()
        );
    }

    proptest! {
        #[test]
        fn masked_weights_never_matter(seed in any::<u64>(), junk in any::<u64>()) {
            let arch = ArchSpec::multi(4, vec![6], vec![5], vec![3, 4]);
            let g = apply_prune(&init_genome(&arch, &mut rng(seed)).unwrap(), 0.4).unwrap();
            let mut r = rng(junk);
            let noisy: Vec<f64> = g
                .weights()
                .iter()
                .zip(g.mask())
                .map(|(w, m)| if *m { *w } else { r.random_range(-5.0..5.0) })
                .collect();
            let g2 = Genome::new(arch, noisy, g.mask().to_vec()).unwrap();
            let b = Belief::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
            for k in 0..2 {
                prop_assert_eq!(
                    PolicyNet::new(&g).action_probs(k, &b).unwrap(),
                    PolicyNet::new(&g2).action_probs(k, &b).unwrap()
                );
            }
        }

        #[test]
        fn json_round_trip_is_bit_exact(seed in any::<u64>(), p in 0.05f64..0.9) {
            let arch = ArchSpec::multi(4, vec![7], vec![3], vec![2, 5]);
            let g = apply_prune(&init_genome(&arch, &mut rng(seed)).unwrap(), p).unwrap();
            let back = Genome::from_json(&g.to_json().unwrap()).unwrap();
            prop_assert_eq!(back.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>(),
                            g.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.mask(), g.mask());
        }

        #[test]
        fn pruning_is_monotone(seed in any::<u64>(), p in 0.05f64..0.9) {
            let arch = ArchSpec::single(5, vec![9], 4);
            let g = init_genome(&arch, &mut rng(seed)).unwrap();
            let once = apply_prune(&g, p).unwrap();
            let twice = apply_prune(&once, p).unwrap();
            prop_assert!(twice.sparsity() >= once.sparsity());
            for (a, b) in once.mask().iter().zip(twice.mask()) {
                prop_assert!(*a || !*b);
            }
        }
    }
}
