//! Random grammar ensemble: partition of child pairs, Gaussian logits,
//! softmax transition tensor and its traced single-child matrices.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{self, tag};
use crate::{Error, Result};

/// Row-sum tolerance enforced on freshly built grammars.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Equal-sized partition of the `q^2` ordered child pairs into `q` blocks.
///
/// `blocks[a]` is the set `O_a` of pairs `(b, c)` parent `a` may emit, in
/// sampling order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    q: usize,
    blocks: Vec<Vec<(usize, usize)>>,
    owner: Vec<usize>,
}

impl Partition {
    /// Validates that `blocks` is an equal-sized partition of `[0,q)^2`.
    pub fn new(q: usize, blocks: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        if q == 0 {
            return Err(Error::invalid("q must be at least 1"));
        }
        if blocks.len() != q {
            return Err(Error::Validation(format!(
                "partition has {} blocks, expected {q}",
                blocks.len()
            )));
        }
        let mut owner = vec![usize::MAX; q * q];
        for (a, block) in blocks.iter().enumerate() {
            if block.len() != q {
                return Err(Error::Validation(format!(
                    "block {a} has {} pairs, expected {q}",
                    block.len()
                )));
            }
            for &(b, c) in block {
                if b >= q || c >= q {
                    return Err(Error::Validation(format!("pair ({b},{c}) out of range")));
                }
                let slot = &mut owner[b * q + c];
                if *slot != usize::MAX {
                    return Err(Error::Validation(format!(
                        "pair ({b},{c}) assigned to blocks {} and {a}",
                        *slot
                    )));
                }
                *slot = a;
            }
        }
        Ok(Self { q, blocks, owner })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn block(&self, a: usize) -> &[(usize, usize)] {
        &self.blocks[a]
    }

    pub fn blocks(&self) -> &[Vec<(usize, usize)>] {
        &self.blocks
    }

    /// The unique parent whose block contains `(b, c)`.
    pub fn owner(&self, b: usize, c: usize) -> usize {
        self.owner[b * self.q + c]
    }
}

/// Draws a uniform equal-sized partition: shuffle all `q^2` pairs and cut
/// the permutation into `q` consecutive blocks.
pub fn sample_partition(q: usize, seed: u64) -> Result<Partition> {
    if q == 0 {
        return Err(Error::invalid("q must be at least 1"));
    }
    let mut pairs: Vec<(usize, usize)> = (0..q)
        .flat_map(|b| (0..q).map(move |c| (b, c)))
        .collect();
    pairs.shuffle(&mut rng::stream(seed));
    let blocks = pairs.chunks(q).map(<[_]>::to_vec).collect();
    Partition::new(q, blocks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logit {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub xi: f64,
}

/// One member of the random grammar ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    q: usize,
    sigma: f64,
    seed: u64,
    partition: Partition,
    logits: Vec<Logit>,
    tensor: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    p0: Vec<f64>,
}

/// Samples a grammar: Gaussian logits `sigma * xi` on the support of the
/// partition, softmax over each parent's block, uniform root prior.
///
/// The partition and the logits use independent child streams of `seed`;
/// `xi` is drawn in block order with `rand_distr::StandardNormal`.
pub fn build_grammar(q: usize, sigma: f64, seed: u64) -> Result<Grammar> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let partition = sample_partition(q, rng::derive_seed(seed, tag::PARTITION))?;
    let mut stream = rng::child_stream(seed, tag::LOGITS);
    let mut logits = Vec::with_capacity(q * q);
    for a in 0..q {
        for &(b, c) in partition.block(a) {
            let xi: f64 = stream.sample(StandardNormal);
            logits.push(Logit { a, b, c, xi });
        }
    }
    let tensor = softmax_tensor(q, sigma, &logits);
    let p0 = vec![1.0 / q as f64; q];
    Grammar::from_parts(q, sigma, seed, partition, logits, tensor, p0, STOCHASTIC_TOL)
}

fn softmax_tensor(q: usize, sigma: f64, logits: &[Logit]) -> Vec<f64> {
    let mut tensor = vec![0.0; q * q * q];
    for a in 0..q {
        let row: Vec<&Logit> = logits.iter().filter(|l| l.a == a).collect();
        let max = row
            .iter()
            .map(|l| sigma * l.xi)
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = row.iter().map(|l| (sigma * l.xi - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        for (l, w) in row.iter().zip(&weights) {
            tensor[(a * q + l.b) * q + l.c] = w / z;
        }
    }
    tensor
}

impl Grammar {
    /// Assembles a grammar from stored fields and checks every invariant.
    /// The traced matrices are recomputed from `tensor`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        q: usize,
        sigma: f64,
        seed: u64,
        partition: Partition,
        logits: Vec<Logit>,
        tensor: Vec<f64>,
        p0: Vec<f64>,
        tol: f64,
    ) -> Result<Self> {
        if partition.q() != q {
            return Err(Error::Validation("partition size does not match q".into()));
        }
        if tensor.len() != q * q * q {
            return Err(Error::Validation(format!(
                "tensor has {} entries, expected {}",
                tensor.len(),
                q * q * q
            )));
        }
        if p0.len() != q {
            return Err(Error::Validation(format!("p0 has {} entries, expected {q}", p0.len())));
        }
        for a in 0..q {
            let mut row = 0.0;
            for b in 0..q {
                for c in 0..q {
                    let v = tensor[(a * q + b) * q + c];
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Validation(format!("M[{a}][{b}][{c}] = {v} not in [0,1]")));
                    }
                    let supported = partition.owner(b, c) == a;
                    if supported != (v > 0.0) {
                        return Err(Error::Validation(format!(
                            "support of M[{a}] does not match the partition at ({b},{c})"
                        )));
                    }
                    row += v;
                }
            }
            if (row - 1.0).abs() > tol {
                return Err(Error::Validation(format!("row {a} of M sums to {row}")));
            }
        }
        let p_sum: f64 = p0.iter().sum();
        if p0.iter().any(|&p| p.is_nan() || p < 0.0) || (p_sum - 1.0).abs() > tol {
            return Err(Error::Validation(format!("p0 is not a distribution (sum {p_sum})")));
        }
        let mut left = vec![0.0; q * q];
        let mut right = vec![0.0; q * q];
        for a in 0..q {
            for b in 0..q {
                for c in 0..q {
                    let v = tensor[(a * q + b) * q + c];
                    left[a * q + b] += v;
                    right[a * q + c] += v;
                }
            }
        }
        Ok(Self { q, sigma, seed, partition, logits, tensor, left, right, p0 })
    }

    /// Replaces the root prior.
    pub fn with_prior(mut self, p0: Vec<f64>) -> Result<Self> {
        let sum: f64 = p0.iter().sum();
        if p0.len() != self.q || p0.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("root prior must be a length-q distribution"));
        }
        self.p0 = p0;
        Ok(self)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn logits(&self) -> &[Logit] {
        &self.logits
    }

    /// Flat `q^3` tensor, index `(a*q + b)*q + c`.
    pub fn tensor(&self) -> &[f64] {
        &self.tensor
    }

    #[inline]
    pub fn m(&self, a: usize, b: usize, c: usize) -> f64 {
        self.tensor[(a * self.q + b) * self.q + c]
    }

    /// `M^L[a][b] = sum_c M[a][b][c]`, row-major.
    pub fn left(&self) -> &[f64] {
        &self.left
    }

    /// `M^R[a][c] = sum_b M[a][b][c]`, row-major.
    pub fn right(&self) -> &[f64] {
        &self.right
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    /// Renames every symbol `s` to `perm[s]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let q = self.q;
        let mut seen = vec![false; q];
        if perm.len() != q || perm.iter().any(|&p| p >= q || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("relabeling must be a permutation of 0..q"));
        }
        let mut blocks = vec![Vec::new(); q];
        for (a, block) in self.partition.blocks().iter().enumerate() {
            blocks[perm[a]] = block.iter().map(|&(b, c)| (perm[b], perm[c])).collect();
        }
        let logits = self
            .logits
            .iter()
            .map(|l| Logit { a: perm[l.a], b: perm[l.b], c: perm[l.c], xi: l.xi })
            .collect();
        let mut tensor = vec![0.0; q * q * q];
        for a in 0..q {
            for b in 0..q {
                for c in 0..q {
                    tensor[(perm[a] * q + perm[b]) * q + perm[c]] = self.m(a, b, c);
                }
            }
        }
        let mut p0 = vec![0.0; q];
        for a in 0..q {
            p0[perm[a]] = self.p0[a];
        }
        Self::from_parts(
            q,
            self.sigma,
            self.seed,
            Partition::new(q, blocks)?,
            logits,
            tensor,
            p0,
            STOCHASTIC_TOL,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Turn {
    Left,
    Right,
}

/// Root-to-node sequence of branch choices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PathSpec {
    pub turns: Vec<Turn>,
}

impl PathSpec {
    pub fn new(turns: Vec<Turn>) -> Self {
        Self { turns }
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// Row-major `q x q` matrix `P(x_j = b | x_0 = a)` for the node reached by
/// `path`: the product of `M^L`/`M^R` along the turns. The root prior is not
/// included.
pub fn path_transition(g: &Grammar, path: &PathSpec) -> Vec<f64> {
    let q = g.q();
    let mut acc = vec![0.0; q * q];
    for a in 0..q {
        acc[a * q + a] = 1.0;
    }
    for turn in &path.turns {
        let step = match turn {
            Turn::Left => g.left(),
            Turn::Right => g.right(),
        };
        acc = matmul(&acc, step, q);
    }
    acc
}

pub(crate) fn matmul(x: &[f64], y: &[f64], q: usize) -> Vec<f64> {
    let mut out = vec![0.0; q * q];
    for i in 0..q {
        for m in 0..q {
            let xim = x[i * q + m];
            if xim == 0.0 {
                continue;
            }
            for j in 0..q {
                out[i * q + j] += xim * y[m * q + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_row_stochastic(mat: &[f64], q: usize) {
        for a in 0..q {
            let s: f64 = mat[a * q..(a + 1) * q].iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row {a} sums to {s}");
        }
    }

    #[test]
    fn partition_q1() {
        let p = sample_partition(1, 99).unwrap();
        assert_eq!(p.blocks(), &[vec![(0, 0)]]);
    }

    #[test]
    fn partition_zero_rejected() {
        assert!(matches!(sample_partition(0, 1), Err(Error::InvalidParameter(_))));
        assert!(build_grammar(0, 1.0, 1).is_err());
    }

    #[test]
    fn partition_covers_all_pairs() {
        for &q in &[2usize, 4] {
            for seed in 0..20 {
                let p = sample_partition(q, seed).unwrap();
                let mut all: Vec<_> = p.blocks().iter().flatten().copied().collect();
                assert!(p.blocks().iter().all(|b| b.len() == q));
                all.sort();
                all.dedup();
                assert_eq!(all.len(), q * q);
            }
        }
    }

    #[test]
    fn partition_is_not_constant_across_seeds() {
        let first = sample_partition(4, 0).unwrap();
        assert!((1..20).any(|s| sample_partition(4, s).unwrap() != first));
    }

    #[test]
    fn sigma_zero_gives_uniform_support() {
        let g = build_grammar(4, 0.0, 3).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    let want = if g.partition().owner(b, c) == a { 0.25 } else { 0.0 };
                    assert_eq!(g.m(a, b, c), want);
                }
            }
        }
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(build_grammar(4, -0.5, 3).is_err());
        assert!(build_grammar(4, f64::NAN, 3).is_err());
    }

    #[test]
    fn default_member_is_stochastic() {
        let g = build_grammar(4, 1.0, 7).unwrap();
        for a in 0..4 {
            let s: f64 = (0..16).map(|bc| g.tensor()[a * 16 + bc]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_row_stochastic(g.left(), 4);
        assert_row_stochastic(g.right(), 4);
        assert_eq!(g.p0(), &[0.25; 4]);
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_grammar(4, 1.0, 42).unwrap();
        let b = build_grammar(4, 1.0, 42).unwrap();
        assert_eq!(a, b);
        let bits = |g: &Grammar| g.tensor().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a.tensor(), build_grammar(4, 1.0, 43).unwrap().tensor());
    }

    #[test]
    fn empty_path_is_identity() {
        let g = build_grammar(3, 1.0, 5).unwrap();
        let t = path_transition(&g, &PathSpec::default());
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(t[a * 3 + b], if a == b { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn single_turn_is_traced_matrix() {
        let g = build_grammar(4, 1.0, 5).unwrap();
        assert_eq!(path_transition(&g, &PathSpec::new(vec![Turn::Left])), g.left());
        assert_eq!(path_transition(&g, &PathSpec::new(vec![Turn::Right])), g.right());
    }

    #[test]
    fn two_turns_match_brute_force_sum() {
        let g = build_grammar(4, 1.0, 5).unwrap();
        let t = path_transition(&g, &PathSpec::new(vec![Turn::Left, Turn::Right]));
        // Sum over the intermediate symbol and its unused sibling directly on M.
        for a in 0..4 {
            for x in 0..4 {
                let mut want = 0.0;
                for mid in 0..4 {
                    for sib in 0..4 {
                        for other in 0..4 {
                            want += g.m(a, mid, sib) * g.m(mid, other, x);
                        }
                    }
                }
                assert!((t[a * 4 + x] - want).abs() < 1e-15);
            }
        }
    }

    proptest! {
        #[test]
        fn support_matches_partition(q in 1usize..6, sigma in 0.0f64..3.0, seed in any::<u64>()) {
            let g = build_grammar(q, sigma, seed).unwrap();
            for a in 0..q {
                for b in 0..q {
                    for c in 0..q {
                        prop_assert_eq!(g.m(a, b, c) > 0.0, g.partition().owner(b, c) == a);
                    }
                }
            }
        }

        #[test]
        fn path_products_are_stochastic(
            seed in any::<u64>(),
            turns in proptest::collection::vec(any::<bool>(), 0..6),
        ) {
            let g = build_grammar(4, 1.5, seed).unwrap();
            let path = PathSpec::new(turns.iter().map(|&r| if r { Turn::Right } else { Turn::Left }).collect());
            let t = path_transition(&g, &path);
            for a in 0..4 {
                let s: f64 = t[a * 4..a * 4 + 4].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn relabeling_commutes_with_path_transition(
            seed in any::<u64>(),
            perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle(),
            turns in proptest::collection::vec(any::<bool>(), 0..5),
        ) {
            let g = build_grammar(4, 1.0, seed).unwrap();
            let h = g.relabeled(&perm).unwrap();
            let path = PathSpec::new(turns.iter().map(|&r| if r { Turn::Right } else { Turn::Left }).collect());
            let tg = path_transition(&g, &path);
            let th = path_transition(&h, &path);
            for a in 0..4 {
                for b in 0..4 {
                    prop_assert!((th[perm[a] * 4 + perm[b]] - tg[a * 4 + b]).abs() < 1e-14);
                }
            }
        }
    }
}
