use alloc::vec;

use crate::model::{Dense, Mlp};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Exact maximum of `m` nonnegative inputs as a tournament of pairwise maxima,
/// `max(a, b) = ReLU(a) + ReLU(b − a)`. Depth `max(1, ceil(log2 m))` hidden
/// layers of at most `m` units each, one output.
pub fn build_max_mlp(m: usize) -> Result<Mlp> {
    if m == 0 {
        return Err(Error::InvalidArgument("max network needs m >= 1".into()));
    }
    let mut layers = vec![];
    // Current tournament values as linear forms of the previous activations.
    let mut combo = Matrix::identity(m);
    let mut count = m;
    loop {
        let pairs = count / 2;
        let odd = count % 2;
        let hidden = 2 * pairs + odd;
        let mut pick = Matrix::zeros(hidden, count);
        let mut next = Matrix::zeros(pairs + odd, hidden);
        for i in 0..pairs {
            pick.set(2 * i, 2 * i, 1.0);
            pick.set(2 * i + 1, 2 * i, -1.0);
            pick.set(2 * i + 1, 2 * i + 1, 1.0);
            next.set(i, 2 * i, 1.0);
            next.set(i, 2 * i + 1, 1.0);
        }
        if odd == 1 {
            pick.set(hidden - 1, count - 1, 1.0);
            next.set(pairs, hidden - 1, 1.0);
        }
        layers.push(Dense {
            weight: pick.matmul(&combo)?,
            bias: vec![0.0; hidden],
        });
        combo = next;
        count = pairs + odd;
        if count == 1 {
            break;
        }
    }
    layers.push(Dense {
        weight: combo,
        bias: vec![0.0],
    });
    Ok(Mlp { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mlp_forward;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_cases() {
        let mlp = build_max_mlp(1).unwrap();
        assert_eq!(mlp_forward(&mlp, &[5.0]).unwrap(), vec![5.0]);
        let mlp = build_max_mlp(2).unwrap();
        assert_eq!(mlp_forward(&mlp, &[3.0, 7.0]).unwrap(), vec![7.0]);
        assert_eq!(mlp_forward(&mlp, &[7.0, 3.0]).unwrap(), vec![7.0]);
        assert!(build_max_mlp(0).is_err());
    }

    #[test]
    fn depth_and_width() {
        for m in 1..=40usize {
            let mlp = build_max_mlp(m).unwrap();
            let mut depth = 0;
            while (1usize << depth) < m {
                depth += 1;
            }
            assert_eq!(mlp.layers.len() - 1, depth.max(1), "m = {}", m);
            for layer in &mlp.layers[..mlp.layers.len() - 1] {
                assert!(layer.output_dim() <= m);
            }
            mlp.validate(m, 1).unwrap();
        }
    }

    #[test]
    fn matches_direct_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in 2..=17 {
            let mlp = build_max_mlp(m).unwrap();
            for _ in 0..1000 {
                let x: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 10.0).collect();
                let want = x.iter().cloned().fold(0.0, f64::max);
                let got = mlp_forward(&mlp, &x).unwrap()[0];
                assert!((got - want).abs() <= 1e-12 * want.max(1.0));
            }
        }
    }

    #[test]
    fn exact_on_integers() {
        let mlp = build_max_mlp(5).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let x = [a as f64, b as f64, 1.0, 0.0, 2.0];
                let want = x.iter().cloned().fold(0.0, f64::max);
                assert_eq!(mlp_forward(&mlp, &x).unwrap()[0], want);
            }
        }
    }
}
