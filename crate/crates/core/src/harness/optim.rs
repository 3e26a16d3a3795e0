use ndarray::{Array2, Zip};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[Array2<f64>]) -> Self {
        let zeros: Vec<Array2<f64>> = shapes.iter().map(|t| Array2::zeros(t.dim())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![array![[1.0, -2.0]]];
        let mut opt = Adam::new(0.1, &p);
        opt.step(&mut p, &[array![[3.0, -0.5]]]);
        assert!((p[0][[0, 0]] - 0.9).abs() < 1e-7);
        assert!((p[0][[0, 1]] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![array![[5.0]]];
        let mut opt = Adam::new(0.1, &p);
        for _ in 0..500 {
            let g = vec![&p[0] * 2.0 - 2.0];
            opt.step(&mut p, &g);
        }
        assert!((p[0][[0, 0]] - 1.0).abs() < 1e-2);
    }
}
