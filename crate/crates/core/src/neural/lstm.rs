//! LSTM cell and layer passes. Gate order within stacked rows: i, f, g, o.

use crate::error::{Error, Result};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dot product with four partial sums so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let chunks = n / 4;
    for k in 0..chunks {
        let j = 4 * k;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..n {
        s += a[j] * b[j];
    }
    s
}

/// `y += alpha * x`
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Borrowed weights of one LSTM layer.
#[derive(Debug, Clone, Copy)]
pub struct CellParams<'a> {
    pub input: usize,
    pub hidden: usize,
    /// `4·hidden × input`, row-major.
    pub w: &'a [f64],
    /// `4·hidden × hidden`, row-major.
    pub u: &'a [f64],
    /// `4·hidden`
    pub b: &'a [f64],
}

pub(crate) struct CellGrads<'a> {
    pub w: &'a mut [f64],
    pub u: &'a mut [f64],
    pub b: &'a mut [f64],
}

impl CellParams<'_> {
    fn check(&self) -> Result<()> {
        let (d, h) = (self.input, self.hidden);
        for (name, got, want) in [
            ("w", self.w.len(), 4 * h * d),
            ("u", self.u.len(), 4 * h * h),
            ("b", self.b.len(), 4 * h),
        ] {
            if got != want {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name} of length {want}"),
                    actual: got.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Pre-activations `W x + U h + b` followed by the gate nonlinearities.
    fn gates(&self, x: &[f64], h: &[f64], out: &mut [f64]) {
        let (d, n) = (self.input, self.hidden);
        for r in 0..4 * n {
            let z = self.b[r]
                + dot(&self.w[r * d..(r + 1) * d], x)
                + dot(&self.u[r * n..(r + 1) * n], h);
            out[r] = if (2 * n..3 * n).contains(&r) {
                z.tanh()
            } else {
                sigmoid(z)
            };
        }
    }
}

/// One time step. Returns `(h', c')`.
pub fn lstm_cell_forward(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    p: &CellParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    p.check()?;
    if x.len() != p.input || h.len() != p.hidden || c.len() != p.hidden {
        return Err(Error::ShapeMismatch {
            expected: format!("x[{}], h[{}], c[{}]", p.input, p.hidden, p.hidden),
            actual: format!("x[{}], h[{}], c[{}]", x.len(), h.len(), c.len()),
        });
    }
    let n = p.hidden;
    let mut g = vec![0.0; 4 * n];
    p.gates(x, h, &mut g);
    let c_new: Vec<f64> = (0..n)
        .map(|j| g[n + j] * c[j] + g[j] * g[2 * n + j])
        .collect();
    let h_new = (0..n).map(|j| g[3 * n + j] * c_new[j].tanh()).collect();
    Ok((h_new, c_new))
}

/// Activations of one layer over a whole sequence, kept for BPTT.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub steps: usize,
    pub hidden: usize,
    /// Post-activation gates, `steps × 4·hidden`.
    pub gates: Vec<f64>,
    /// Cell states, `(steps + 1) × hidden`; row 0 is the zero initial state.
    pub c: Vec<f64>,
    /// Hidden states, same layout as `c`.
    pub h: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

impl LayerCache {
    /// Hidden output at step `t` (0-based).
    pub fn h_at(&self, t: usize) -> &[f64] {
        &self.h[(t + 1) * self.hidden..(t + 2) * self.hidden]
    }

    pub fn last_h(&self) -> &[f64] {
        self.h_at(self.steps - 1)
    }

    /// All hidden outputs, `steps × hidden`.
    pub fn outputs(&self) -> &[f64] {
        &self.h[self.hidden..]
    }
}

/// Runs the layer over `xs` (`steps × input`) from zero state.
pub(crate) fn layer_forward(p: &CellParams, xs: &[f64], steps: usize) -> LayerCache {
    let (d, n) = (p.input, p.hidden);
    let mut cache = LayerCache {
        steps,
        hidden: n,
        gates: vec![0.0; steps * 4 * n],
        c: vec![0.0; (steps + 1) * n],
        h: vec![0.0; (steps + 1) * n],
        tanh_c: vec![0.0; steps * n],
    };
    for t in 0..steps {
        let (h_prev, h_rest) = cache.h.split_at_mut((t + 1) * n);
        let g = &mut cache.gates[t * 4 * n..(t + 1) * 4 * n];
        p.gates(&xs[t * d..(t + 1) * d], &h_prev[t * n..], g);
        for j in 0..n {
            let c = g[n + j] * cache.c[t * n + j] + g[j] * g[2 * n + j];
            let tc = c.tanh();
            cache.c[(t + 1) * n + j] = c;
            cache.tanh_c[t * n + j] = tc;
            h_rest[j] = g[3 * n + j] * tc;
        }
    }
    cache
}

/// BPTT through one layer. `dh_ext` is the loss gradient arriving at each
/// step's output (`steps × hidden`). Accumulates parameter gradients and
/// returns the gradient with respect to the inputs.
pub(crate) fn layer_backward(
    p: &CellParams,
    cache: &LayerCache,
    xs: &[f64],
    dh_ext: &[f64],
    grads: &mut CellGrads,
) -> Vec<f64> {
    let (d, n) = (p.input, p.hidden);
    let mut dxs = vec![0.0; cache.steps * d];
    let mut dh_next = vec![0.0; n];
    let mut dc_next = vec![0.0; n];
    let mut dz = vec![0.0; 4 * n];
    for t in (0..cache.steps).rev() {
        let g = &cache.gates[t * 4 * n..(t + 1) * 4 * n];
        let c_prev = &cache.c[t * n..(t + 1) * n];
        let tc = &cache.tanh_c[t * n..(t + 1) * n];
        for j in 0..n {
            let (i, f, gg, o) = (g[j], g[n + j], g[2 * n + j], g[3 * n + j]);
            let dh = dh_ext[t * n + j] + dh_next[j];
            let dc = dc_next[j] + dh * o * (1.0 - tc[j] * tc[j]);
            dz[j] = dc * gg * i * (1.0 - i);
            dz[n + j] = dc * c_prev[j] * f * (1.0 - f);
            dz[2 * n + j] = dc * i * (1.0 - gg * gg);
            dz[3 * n + j] = dh * tc[j] * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let x = &xs[t * d..(t + 1) * d];
        let h_prev = &cache.h[t * n..(t + 1) * n];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let dx = &mut dxs[t * d..(t + 1) * d];
        for (r, &z) in dz.iter().enumerate() {
            if z == 0.0 {
                continue;
            }
            grads.b[r] += z;
            axpy(&mut grads.w[r * d..(r + 1) * d], z, x);
            axpy(&mut grads.u[r * n..(r + 1) * n], z, h_prev);
            axpy(dx, z, &p.w[r * d..(r + 1) * d]);
            axpy(&mut dh_next, z, &p.u[r * n..(r + 1) * n]);
        }
    }
    dxs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Textbook per-unit evaluation, written independently of the vectorized path.
    fn scalar_reference(x: &[f64], h: &[f64], c: &[f64], p: &CellParams) -> (Vec<f64>, Vec<f64>) {
        let (d, n) = (p.input, p.hidden);
        let pre = |gate: usize, j: usize| {
            let r = gate * n + j;
            let mut z = p.b[r];
            for k in 0..d {
                z += p.w[r * d + k] * x[k];
            }
            for k in 0..n {
                z += p.u[r * n + k] * h[k];
            }
            z
        };
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut h2 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        for j in 0..n {
            let i = sig(pre(0, j));
            let f = sig(pre(1, j));
            let g = pre(2, j).tanh();
            let o = sig(pre(3, j));
            c2[j] = f * c[j] + i * g;
            h2[j] = o * c2[j].tanh();
        }
        (h2, c2)
    }

    #[test]
    fn zero_params_give_zero_hidden() {
        let (w, u, b) = (vec![0.0; 12 * 2], vec![0.0; 12 * 3], vec![0.0; 12]);
        let p = CellParams {
            input: 2,
            hidden: 3,
            w: &w,
            u: &u,
            b: &b,
        };
        let (h, c) = lstm_cell_forward(&[0.7, -2.0], &[0.1, 0.2, 0.3], &[0.0; 3], &p).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, u) = (random(12, &mut rng), random(36, &mut rng));
        let mut b = random(12, &mut rng);
        b[3..6].iter_mut().for_each(|v| *v = 20.0);
        let p = CellParams {
            input: 1,
            hidden: 3,
            w: &w,
            u: &u,
            b: &b,
        };
        let (x, h, c) = ([0.3], [0.1, -0.4, 0.2], [0.5, -1.0, 2.0]);
        let (_, c2) = lstm_cell_forward(&x, &h, &c, &p).unwrap();
        let (_, c_none) = lstm_cell_forward(&x, &h, &[0.0; 3], &p).unwrap();
        for j in 0..3 {
            assert!((c2[j] - (c[j] + c_none[j])).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [1, 2, 5] {
            let (w, u, b) = (
                random(12 * d, &mut rng),
                random(36, &mut rng),
                random(12, &mut rng),
            );
            let p = CellParams {
                input: d,
                hidden: 3,
                w: &w,
                u: &u,
                b: &b,
            };
            let (x, h, c) = (
                random(d, &mut rng),
                random(3, &mut rng),
                random(3, &mut rng),
            );
            let got = lstm_cell_forward(&x, &h, &c, &p).unwrap();
            let want = scalar_reference(&x, &h, &c, &p);
            for j in 0..3 {
                assert!((got.0[j] - want.0[j]).abs() <= 1e-12);
                assert!((got.1[j] - want.1[j]).abs() <= 1e-12);
                assert!(got.0[j].abs() <= 1.0);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let (w, u, b) = (vec![0.0; 12], vec![0.0; 36], vec![0.0; 12]);
        let p = CellParams {
            input: 1,
            hidden: 3,
            w: &w,
            u: &u,
            b: &b,
        };
        assert!(lstm_cell_forward(&[0.0, 1.0], &[0.0; 3], &[0.0; 3], &p).is_err());
        let bad = CellParams { b: &b[..5], ..p };
        assert!(lstm_cell_forward(&[0.0], &[0.0; 3], &[0.0; 3], &bad).is_err());
    }

    #[test]
    fn layer_matches_repeated_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (w, u, b) = (
            random(16 * 2, &mut rng),
            random(64, &mut rng),
            random(16, &mut rng),
        );
        let p = CellParams {
            input: 2,
            hidden: 4,
            w: &w,
            u: &u,
            b: &b,
        };
        let xs = random(2 * 6, &mut rng);
        let cache = layer_forward(&p, &xs, 6);
        let (mut h, mut c) = (vec![0.0; 4], vec![0.0; 4]);
        for t in 0..6 {
            (h, c) = lstm_cell_forward(&xs[2 * t..2 * t + 2], &h, &c, &p).unwrap();
            assert_eq!(cache.h_at(t), &h[..]);
        }
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 3.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
