//! Analytic oracles: Welch and Hoeffding bounds on embedding coherence, the
//! piece count of piecewise-linear approximations to `1/x`, and the attention
//! temperature needed for CountAttend.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingKind, EmbeddingSet};
use crate::math::{self, dot};
use crate::model::Mlp;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    AtLeast,
    AtMost,
}

/// A quantity compared against a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub quantity: f64,
    pub bound: f64,
    pub direction: Direction,
    pub satisfied: bool,
}

impl BoundCheck {
    pub fn at_least(quantity: f64, bound: f64) -> Self {
        BoundCheck {
            quantity,
            bound,
            direction: Direction::AtLeast,
            satisfied: quantity >= bound,
        }
    }

    pub fn at_most(quantity: f64, bound: f64) -> Self {
        BoundCheck {
            quantity,
            bound,
            direction: Direction::AtMost,
            satisfied: quantity <= bound,
        }
    }
}

/// Welch lower bound on `max_{i≠j} |v_i·v_j|` for `m` unit vectors in `R^d`:
/// `sqrt((m − d) / (d (m − 1)))`.
pub fn welch_lower_bound(m: usize, d: usize) -> Result<f64> {
    if d == 0 || m <= d {
        return Err(Error::InvalidArgument(format!(
            "Welch bound needs m > d >= 1 (m = {}, d = {})",
            m, d
        )));
    }
    let (m, d) = (m as f64, d as f64);
    Ok(math::sqrt((m - d) / (d * (m - 1.0))))
}

/// Exhaustive search for the pair with the largest absolute inner product.
/// Returns `A` and the two 1-based tokens.
pub fn max_pairwise_inner(emb: &EmbeddingSet) -> Result<(f64, (usize, usize))> {
    let m = emb.len();
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two embeddings".into()));
    }
    let mut best = (-1.0, (1, 2));
    for i in 0..m {
        for j in i + 1..m {
            let a = math::abs(emb.inner(i, j));
            if a > best.0 {
                best = (a, (i + 1, j + 1));
            }
        }
    }
    Ok(best)
}

/// `m` vectors in `R^d` with i.i.d. coordinates `±1/√d`.
pub fn random_rademacher_embeddings(m: usize, d: usize, seed: u64) -> Result<EmbeddingSet> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidArgument("m and d must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / math::sqrt(d as f64);
    let vectors = (0..m)
        .map(|_| {
            (0..d)
                .map(|_| if rng.random::<bool>() { scale } else { -scale })
                .collect()
        })
        .collect();
    EmbeddingSet::new(EmbeddingKind::Rademacher, vectors)
}

/// Hoeffding tail bound for the inner product of two independent Rademacher
/// unit vectors: `Pr(|v·w| ≥ t) ≤ 2 exp(−d t² / 2)`.
pub fn hoeffding_bound(d: usize, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("t must be >= 0, got {}", t)));
    }
    Ok(2.0 * math::exp(-(d as f64) * t * t / 2.0))
}

/// Monte-Carlo estimate of `Pr(|v·w| ≥ t)` over `draws` independent pairs.
pub fn empirical_inner_tail(d: usize, t: f64, draws: usize, seed: u64) -> Result<f64> {
    if d == 0 || draws == 0 {
        return Err(Error::InvalidArgument("d and draws must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..draws {
        // v·w = (1/d) Σ s_k with s_k = ±1 i.i.d.
        let mut s: i64 = 0;
        for _ in 0..d {
            s += if rng.random::<bool>() { 1 } else { -1 };
        }
        if math::abs(s as f64 / d as f64) >= t {
            hits += 1;
        }
    }
    Ok(hits as f64 / draws as f64)
}

/// A continuous piecewise-linear function given by its breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                context: "piecewise linear",
                expected: xs.len(),
                actual: ys.len(),
            });
        }
        if xs.len() < 2 {
            return Err(Error::InvalidArgument("need at least two breakpoints".into()));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("breakpoints must be strictly increasing".into()));
        }
        Ok(PiecewiseLinear { xs, ys })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    pub fn pieces(&self) -> usize {
        self.xs.len() - 1
    }

    /// Linear interpolation, extended linearly outside the domain.
    pub fn eval(&self, x: f64) -> f64 {
        let k = match self.xs.iter().position(|&b| b >= x) {
            Some(0) => 1,
            Some(k) => k,
            None => self.xs.len() - 1,
        };
        let (x0, x1, y0, y1) = (self.xs[k - 1], self.xs[k], self.ys[k - 1], self.ys[k]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Drops interior breakpoints where the slope does not change.
    pub fn simplified(&self, tol: f64) -> PiecewiseLinear {
        let last = self.xs.len() - 1;
        let mut xs = vec![self.xs[0]];
        let mut ys = vec![self.ys[0]];
        for k in 1..last {
            let (px, py) = (*xs.last().unwrap(), *ys.last().unwrap());
            let left = (self.ys[k] - py) / (self.xs[k] - px);
            let right = (self.ys[k + 1] - self.ys[k]) / (self.xs[k + 1] - self.xs[k]);
            if math::abs(left - right) > tol * (1.0 + math::abs(left) + math::abs(right)) {
                xs.push(self.xs[k]);
                ys.push(self.ys[k]);
            }
        }
        xs.push(self.xs[last]);
        ys.push(self.ys[last]);
        PiecewiseLinear { xs, ys }
    }

    /// The function computed by a scalar-in, scalar-out two-layer ReLU MLP on `[lo, hi]`.
    pub fn from_scalar_mlp(mlp: &Mlp, lo: f64, hi: f64) -> Result<Self> {
        if mlp.layers.len() != 2 || mlp.layers[0].input_dim() != 1 || mlp.layers[1].output_dim() != 1 {
            return Err(Error::InvalidArgument("expected a 1 → h → 1 two-layer MLP".into()));
        }
        if !(lo < hi) {
            return Err(Error::InvalidArgument("empty interval".into()));
        }
        let first = &mlp.layers[0];
        let mut xs = vec![lo, hi];
        for h in 0..first.output_dim() {
            let w = first.weight.get(h, 0);
            if w != 0.0 {
                let kink = -first.bias[h] / w;
                if kink > lo && kink < hi {
                    xs.push(kink);
                }
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup();
        let ys = xs
            .iter()
            .map(|&x| mlp.forward_trace(&[x]).pop().unwrap()[0])
            .collect();
        Ok(PiecewiseLinear { xs, ys }.simplified(1e-9))
    }
}

/// Largest deviation of the chord of `1/x` over `[a, b]` from `1/x` itself.
/// For a convex function the chord lies above it; the gap peaks at `x = √(ab)`.
pub fn inverse_chord_error(a: f64, b: f64) -> f64 {
    let x = math::sqrt(a * b);
    let chord = 1.0 / a + (1.0 / b - 1.0 / a) * (x - a) / (b - a);
    chord - 1.0 / x
}

const BISECT_TOL: f64 = 1e-12;

/// Greedy farthest-reach chord approximation of `1/x` on `[1/n, 1]`: each piece
/// starts where the previous ended and extends as far right as its chord stays
/// within `eps` of `1/x`.
pub fn greedy_inverse_approximation(n: usize, eps: f64) -> Result<PiecewiseLinear> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {}", eps)));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if n == 1 {
        // the interval degenerates to the point x = 1
        return PiecewiseLinear::new(vec![1.0, 1.0 + f64::EPSILON], vec![1.0, 1.0]);
    }
    let mut xs = vec![1.0 / n as f64];
    let mut a = xs[0];
    // a sliver of slack so the bisection tolerance never forces an extra piece
    let accept = eps * (1.0 + 1e-9);
    loop {
        if inverse_chord_error(a, 1.0) <= accept {
            xs.push(1.0);
            break;
        }
        let (mut lo, mut hi) = (a, 1.0);
        while hi - lo > BISECT_TOL {
            let mid = 0.5 * (lo + hi);
            if inverse_chord_error(a, mid) <= eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        xs.push(lo);
        a = lo;
    }
    let ys = xs.iter().map(|x| 1.0 / x).collect();
    PiecewiseLinear::new(xs, ys)
}

/// Minimal number of chord pieces approximating `1/x` on `[1/n, 1]` within `eps`.
pub fn min_pieces_inverse(n: usize, eps: f64) -> Result<usize> {
    Ok(greedy_inverse_approximation(n, eps)?.pieces())
}

/// `floor((n − 1) / 3)` disjoint intervals `(1/k, 1/(k−3))`, each claimed to
/// force one breakpoint; `1` below `n = 4`.
pub fn lemma1_lower_bound(n: usize) -> usize {
    if n < 4 {
        1
    } else {
        (n - 1) / 3
    }
}

/// Smallest integer temperature `T ≥ ln(2n) / (1 − J)`. With it, `c'·e^{T(J−1)} < 1/2`
/// for any `c' ≤ n − 1`.
pub fn required_temperature(n: usize, max_inner: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&max_inner) {
        return Err(Error::InvalidArgument(format!(
            "J must lie in [0, 1), got {}",
            max_inner
        )));
    }
    Ok(math::ceil(math::ln(2.0 * n as f64) / (1.0 - max_inner)))
}

/// Mean and maximum absolute inner product between distinct vectors.
pub fn coherence_summary(emb: &EmbeddingSet) -> (f64, f64) {
    let m = emb.len();
    let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
    for i in 0..m {
        for j in i + 1..m {
            let a = math::abs(dot(&emb.vectors[i], &emb.vectors[j]));
            sum += a;
            max = max.max(a);
            count += 1;
        }
    }
    (if count == 0 { 0.0 } else { sum / count as f64 }, max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welch_values() {
        let b = welch_lower_bound(8, 4).unwrap();
        assert!((b - 1.0 / 7f64.sqrt()).abs() < 1e-15);
        assert!((b - 0.377_964_473).abs() < 1e-8);
        assert!((welch_lower_bound(4, 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(welch_lower_bound(3, 3).is_err());
        assert!(welch_lower_bound(2, 3).is_err());
        for d in 1..40 {
            let b = welch_lower_bound(2 * d, d).unwrap();
            assert!((b - 1.0 / ((2 * d - 1) as f64).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn pairwise_inner_simple_sets() {
        let e = EmbeddingSet::one_hot(3, 4).unwrap();
        assert_eq!(max_pairwise_inner(&e).unwrap().0, 0.0);
        let anti = EmbeddingSet::new(EmbeddingKind::Orthonormal, vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(max_pairwise_inner(&anti).unwrap(), (1.0, (1, 2)));
        let single = EmbeddingSet::one_hot(1, 1).unwrap();
        assert!(max_pairwise_inner(&single).is_err());
    }

    #[test]
    fn pairwise_inner_matches_double_loop() {
        let e = random_rademacher_embeddings(32, 16, 7).unwrap();
        let (a, (i, j)) = max_pairwise_inner(&e).unwrap();
        let mut best = 0.0f64;
        for p in &e.vectors {
            for q in &e.vectors {
                if !core::ptr::eq(p, q) {
                    let s: f64 = p.iter().zip(q).map(|(x, y)| x * y).sum();
                    best = best.max(s.abs());
                }
            }
        }
        assert_eq!(a, best);
        assert!((e.inner(i - 1, j - 1).abs() - a).abs() < 1e-15);
        assert!(a >= welch_lower_bound(32, 16).unwrap() - 1e-12);
    }

    #[test]
    fn rademacher_properties() {
        for d in [4usize, 16, 64] {
            let e = random_rademacher_embeddings(10, d, 3).unwrap();
            let s = 1.0 / (d as f64).sqrt();
            for v in &e.vectors {
                assert!(v.iter().all(|&x| x == s || x == -s));
                assert_eq!(v.iter().map(|x| x * x).sum::<f64>(), 1.0);
            }
        }
        let e = random_rademacher_embeddings(10, 7, 3).unwrap();
        for v in &e.vectors {
            assert!((crate::math::norm(v) - 1.0).abs() < 1e-14);
        }
        assert_eq!(
            random_rademacher_embeddings(5, 8, 11).unwrap(),
            random_rademacher_embeddings(5, 8, 11).unwrap()
        );
        assert_ne!(
            random_rademacher_embeddings(5, 8, 11).unwrap(),
            random_rademacher_embeddings(5, 8, 12).unwrap()
        );
    }

    #[test]
    fn hoeffding_values() {
        assert_eq!(hoeffding_bound(10, 0.0).unwrap(), 2.0);
        let b = hoeffding_bound(100, 0.3).unwrap();
        assert!((b - 2.0 * (-4.5f64).exp()).abs() < 1e-15);
        assert!((b - 0.022_218_4).abs() < 1e-6);
        assert!(hoeffding_bound(10, -0.1).is_err());
    }

    #[test]
    fn greedy_chord_examples() {
        // single chord from (0.5, 2) to (1, 1): max gap (√2 − 1)² ≈ 0.1716
        assert!((inverse_chord_error(0.5, 1.0) - (2f64.sqrt() - 1.0).powi(2)).abs() < 1e-14);
        assert_eq!(min_pieces_inverse(2, 0.5).unwrap(), 1);
        assert_eq!(min_pieces_inverse(1, 0.5).unwrap(), 1);
        assert!(min_pieces_inverse(4, 0.0).is_err());
        assert!(min_pieces_inverse(4, -1.0).is_err());
    }

    /// The chord error of `1/x` over `[a, b]` is `(a^{-1/2} − b^{-1/2})²`, so `k`
    /// chords suffice iff `((√n − 1)/k)² ≤ eps`. Binary search on `k` with that
    /// feasibility test is independent of the bisection sweep.
    fn pieces_by_count_search(n: usize, eps: f64) -> usize {
        let span = (n as f64).sqrt() - 1.0;
        let feasible = |k: usize| (span / k as f64).powi(2) <= eps;
        let (mut lo, mut hi) = (1usize, 4 * n + 4);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    #[test]
    fn greedy_matches_count_search() {
        for n in 1..=64 {
            for eps in [0.05, 0.1, 0.3, 0.5, 0.77, 1.3] {
                assert_eq!(
                    min_pieces_inverse(n, eps).unwrap(),
                    pieces_by_count_search(n, eps),
                    "n = {n}, eps = {eps}"
                );
            }
        }
    }

    #[test]
    fn greedy_pieces_stay_within_tolerance() {
        let g = greedy_inverse_approximation(100, 0.5).unwrap();
        let (lo, hi) = g.domain();
        for i in 0..=20_000 {
            let x = lo + (hi - lo) * i as f64 / 20_000.0;
            assert!((g.eval(x) - 1.0 / x).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn lemma1_values() {
        assert_eq!(lemma1_lower_bound(10), 3);
        assert_eq!(lemma1_lower_bound(4), 1);
        assert_eq!(lemma1_lower_bound(3), 1);
        assert_eq!(lemma1_lower_bound(64), 21);
    }

    #[test]
    fn temperature_values() {
        assert_eq!(required_temperature(1, 0.0).unwrap(), 1.0);
        assert_eq!(required_temperature(100, 0.5).unwrap(), 11.0);
        assert!(required_temperature(5, 1.0).is_err());
        assert!(required_temperature(5, -0.1).is_err());
        assert!(required_temperature(0, 0.1).is_err());
        let mut prev = 0.0;
        for n in 1..200 {
            let t = required_temperature(n, 0.3).unwrap();
            assert!(t >= prev);
            prev = t;
        }
        let mut prev = 0.0;
        for j in 0..99 {
            let t = required_temperature(50, j as f64 / 100.0).unwrap();
            assert!(t >= prev);
            prev = t;
            // guarantee: (n − 1) e^{T(J−1)} < 1/2
            assert!(49.0 * (t * (j as f64 / 100.0 - 1.0)).exp() < 0.5);
        }
    }

    #[test]
    fn bound_check_direction() {
        assert!(BoundCheck::at_least(2.0, 1.0).satisfied);
        assert!(!BoundCheck::at_most(2.0, 1.0).satisfied);
    }
}
