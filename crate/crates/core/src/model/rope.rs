/// Rotary positional encoding over interleaved `(2j, 2j+1)` pairs of each head.
///
/// Rotations by `a` then `b` equal a rotation by `a + b`, which is what lets
/// keys encoded at local positions be moved to any global offset later.
#[derive(Debug, Clone)]
pub struct Rope {
    head_dim: usize,
    inv_freq: Vec<f64>,
}

impl Rope {
    pub fn new(head_dim: usize, base: f64) -> Self {
        let inv_freq = (0..head_dim / 2)
            .map(|j| base.powf(-(2.0 * j as f64) / head_dim as f64))
            .collect();
        Self { head_dim, inv_freq }
    }

    /// Rotate every head in `row` (length `num_heads * head_dim`) as if the
    /// token sat at position `pos`. Negative `pos` undoes a rotation.
    pub fn rotate(&self, row: &mut [f64], pos: f64) {
        if pos == 0.0 {
            return;
        }
        for (j, f) in self.inv_freq.iter().enumerate() {
            let (sin, cos) = (pos * f).sin_cos();
            rotate_pair(row, self.head_dim, j, sin, cos);
        }
    }

    /// Rotate every row of a row-major `rows x width` buffer by the same
    /// `pos`, computing each angle once.
    pub fn rotate_all(&self, buf: &mut [f64], width: usize, pos: f64) {
        if pos == 0.0 {
            return;
        }
        for (j, f) in self.inv_freq.iter().enumerate() {
            let (sin, cos) = (pos * f).sin_cos();
            for row in buf.chunks_exact_mut(width) {
                rotate_pair(row, self.head_dim, j, sin, cos);
            }
        }
    }
}

fn rotate_pair(row: &mut [f64], head_dim: usize, j: usize, sin: f64, cos: f64) {
    for head in row.chunks_exact_mut(head_dim) {
        let (x0, x1) = (head[2 * j], head[2 * j + 1]);
        head[2 * j] = x0 * cos - x1 * sin;
        head[2 * j + 1] = x0 * sin + x1 * cos;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_preserves_norm_and_inverts() {
        let rope = Rope::new(4, 10_000.0);
        let orig = vec![0.3, -1.2, 2.0, 0.7, 1.0, 1.0, -0.5, 0.25];
        let mut row = orig.clone();
        rope.rotate(&mut row, 17.0);
        let n0: f64 = orig.iter().map(|x| x * x).sum();
        let n1: f64 = row.iter().map(|x| x * x).sum();
        assert!((n0 - n1).abs() < 1e-12);
        rope.rotate(&mut row, -17.0);
        for (a, b) in row.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dot_product_depends_only_on_relative_position() {
        let rope = Rope::new(6, 10_000.0);
        let q = vec![0.1, 0.9, -0.3, 0.4, 1.5, -0.2];
        let k = vec![-0.7, 0.2, 0.8, 0.1, -0.4, 0.6];
        let dot = |pq: f64, pk: f64| {
            let (mut a, mut b) = (q.clone(), k.clone());
            rope.rotate(&mut a, pq);
            rope.rotate(&mut b, pk);
            a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>()
        };
        assert!((dot(9.0, 4.0) - dot(105.0, 100.0)).abs() < 1e-12);
    }
}
