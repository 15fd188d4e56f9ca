//! Classic explicit four-stage Runge-Kutta on a flat state slice.

/// Scratch buffers for fixed-step RK4 so the inner loop never allocates.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Rk4 {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advances `y` from `t` to `t + h`. `f(t, y, dy)` writes the derivative.
    pub fn step<F>(&mut self, y: &mut [f64], t: f64, h: f64, mut f: F)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let half = 0.5 * h;
        f(t, y, &mut self.k1);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + half * self.k1[i];
        }
        f(t + half, &self.tmp, &mut self.k2);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + half * self.k2[i];
        }
        f(t + half, &self.tmp, &mut self.k3);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        f(t + h, &self.tmp, &mut self.k4);
        for i in 0..y.len() {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(h: f64) -> f64 {
        // y' = -y + sin t, y(0) = 1; exact: 1.5 e^-t + (sin t - cos t) / 2
        let mut y = [1.0];
        let mut rk = Rk4::new(1);
        let steps = (2.0 / h).round() as usize;
        for k in 0..steps {
            rk.step(&mut y, k as f64 * h, h, |t, y, dy| dy[0] = -y[0] + t.sin());
        }
        let exact = 1.5 * (-2.0f64).exp() + (2.0f64.sin() - 2.0f64.cos()) / 2.0;
        (y[0] - exact).abs()
    }

    #[test]
    fn fourth_order_convergence() {
        let e1 = integrate(0.025);
        let e2 = integrate(0.0125);
        let order = (e1 / e2).log2();
        assert!(order > 3.8 && order < 4.2, "observed order {order}");
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let mut y = [1.0, 0.0];
        let mut rk = Rk4::new(2);
        let h = 0.01;
        for k in 0..628 {
            rk.step(&mut y, k as f64 * h, h, |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            });
        }
        let energy = y[0] * y[0] + y[1] * y[1];
        assert!((energy - 1.0).abs() < 1e-8);
    }
}
