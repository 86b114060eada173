use std::collections::VecDeque;

/// Limited-memory BFGS estimate of an inverse Jacobian, applied with the
/// two-loop recursion. Pairs failing the cautious curvature test are dropped.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    alpha: Vec<f64>,
}

const CBFGS_EPSILON: f64 = 1e-8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Lbfgs {
    pub fn new(memory: usize) -> Self {
        Self {
            memory: memory.max(1),
            pairs: VecDeque::with_capacity(memory),
            alpha: vec![0.0; memory.max(1)],
        }
    }

    pub fn reset(&mut self) {
        self.pairs.clear();
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Offers the pair `(s, y)`; returns whether it was stored.
    pub fn update(&mut self, s: &[f64], y: &[f64], residual_norm: f64) -> bool {
        let sy = dot(s, y);
        let ss = dot(s, s);
        if !(ss > 0.0) || !(sy / ss >= CBFGS_EPSILON * residual_norm) || !sy.is_finite() {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_back();
        }
        self.pairs.push_front((s.to_vec(), y.to_vec(), 1.0 / sy));
        true
    }

    /// Overwrites `q` with `H q`.
    pub fn apply(&mut self, q: &mut [f64]) {
        if self.pairs.is_empty() {
            return;
        }
        for (i, (s, y, rho)) in self.pairs.iter().enumerate() {
            let a = rho * dot(s, q);
            self.alpha[i] = a;
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        }
        let (s0, y0, _) = &self.pairs[0];
        let h0 = dot(s0, y0) / dot(y0, y0);
        q.iter_mut().for_each(|qi| *qi *= h0);
        for (i, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            let b = rho * dot(y, q);
            let a = self.alpha[i];
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_inverse_of_diagonal_quadratic() {
        // gradient of 0.5 xᵀ D x is D x; after n independent pairs H ≈ D⁻¹
        let d = [1.0, 4.0, 10.0];
        let mut lb = Lbfgs::new(5);
        for i in 0..3 {
            let mut s = vec![0.0; 3];
            s[i] = 1.0;
            let y: Vec<f64> = s.iter().zip(&d).map(|(a, b)| a * b).collect();
            assert!(lb.update(&s, &y, 1.0));
        }
        let mut q = vec![1.0, 4.0, 10.0];
        lb.apply(&mut q);
        for qi in q {
            assert!((qi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_negative_curvature() {
        let mut lb = Lbfgs::new(3);
        assert!(!lb.update(&[1.0, 0.0], &[-1.0, 0.0], 1.0));
        assert!(lb.is_empty());
    }

    #[test]
    fn memory_is_bounded() {
        let mut lb = Lbfgs::new(2);
        for k in 1..6 {
            lb.update(&[k as f64, 1.0], &[k as f64, 2.0], 1.0);
        }
        assert_eq!(lb.len(), 2);
    }
}
