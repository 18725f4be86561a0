//! Scalar-output perceptron with a forward-mode tangent pass.
//!
//! `param_grad` returns ∂(c_y·y + c_t·ẏ)/∂θ where ẏ is the directional
//! derivative of the output along the input tangent. That is all a pair
//! potential needs to backpropagate a force loss.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
}

impl Activation {
    /// (σ, σ′, σ″) at `a`.
    #[inline]
    fn eval(self, a: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = a.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Activation::Softplus => {
                let s = 1.0 / (1.0 + (-a).exp());
                let v = if a > 30.0 { a } else { a.exp().ln_1p() };
                (v, s, s * (1.0 - s))
            }
        }
    }
}

/// Layout of a dense network. Parameters live outside so the owning model
/// can keep one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

// Per-layer cache for the reverse sweep.
#[derive(Default, Clone)]
pub struct MlpTape {
    // per hidden layer: pre-activation tangent, σ′, σ″; then post-activation values/tangents
    ta: Vec<Vec<f64>>,
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    t: Vec<Vec<f64>>,
}

impl MlpShape {
    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub fn n_params(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Fan-in of each parameter, in storage order (weights row-major by output, then biases).
    pub fn fan_in(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_params());
        for p in self.widths().windows(2) {
            out.extend(std::iter::repeat_n(p[0], p[0] * p[1] + p[1]));
        }
        out
    }

    /// Output and its directional derivative along `dx`; fills `tape`.
    pub fn forward(&self, params: &[f64], x: &[f64], dx: &[f64], tape: &mut MlpTape) -> (f64, f64) {
        debug_assert_eq!(x.len(), self.input);
        let widths = self.widths();
        let layers = widths.len() - 1;
        tape.ta.resize(layers - 1, Vec::new());
        tape.d1.resize(layers - 1, Vec::new());
        tape.d2.resize(layers - 1, Vec::new());
        tape.h.resize(layers, Vec::new());
        tape.t.resize(layers, Vec::new());
        tape.h[0].clear();
        tape.h[0].extend_from_slice(x);
        tape.t[0].clear();
        tape.t[0].extend_from_slice(dx);
        let mut off = 0;
        for l in 0..layers {
            let (nin, nout) = (widths[l], widths[l + 1]);
            let w = &params[off..off + nin * nout];
            let b = &params[off + nin * nout..off + nin * nout + nout];
            off += nin * nout + nout;
            if l + 1 == layers {
                let (h, t) = (&tape.h[l], &tape.t[l]);
                let mut y = b[0];
                let mut ty = 0.0;
                for i in 0..nin {
                    y += w[i] * h[i];
                    ty += w[i] * t[i];
                }
                return (y, ty);
            }
            let mut hn = std::mem::take(&mut tape.h[l + 1]);
            let mut tn = std::mem::take(&mut tape.t[l + 1]);
            let ta = &mut tape.ta[l];
            let d1 = &mut tape.d1[l];
            let d2 = &mut tape.d2[l];
            hn.clear();
            tn.clear();
            ta.clear();
            d1.clear();
            d2.clear();
            let (h, t) = (&tape.h[l], &tape.t[l]);
            for o in 0..nout {
                let row = &w[o * nin..(o + 1) * nin];
                let mut a = b[o];
                let mut at = 0.0;
                for i in 0..nin {
                    a += row[i] * h[i];
                    at += row[i] * t[i];
                }
                let (s, s1, s2) = self.activation.eval(a);
                hn.push(s);
                tn.push(s1 * at);
                ta.push(at);
                d1.push(s1);
                d2.push(s2);
            }
            tape.h[l + 1] = hn;
            tape.t[l + 1] = tn;
        }
        unreachable!("network has an output layer")
    }

    /// Accumulates ∂(c_y·y + c_t·ẏ)/∂θ into `grad`, using the tape from `forward`.
    pub fn param_grad(&self, params: &[f64], tape: &MlpTape, c_y: f64, c_t: f64, grad: &mut [f64]) {
        let widths = self.widths();
        let layers = widths.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += widths[l] * widths[l + 1] + widths[l + 1];
        }
        // adjoints of h and t at the current layer's output
        let mut hbar = vec![c_y];
        let mut tbar = vec![c_t];
        for l in (0..layers).rev() {
            let (nin, nout) = (widths[l], widths[l + 1]);
            let off = offsets[l];
            let w = &params[off..off + nin * nout];
            // adjoints of the pre-activation value and tangent
            let (abar, atbar): (Vec<f64>, Vec<f64>) = if l + 1 == layers {
                (hbar.clone(), tbar.clone())
            } else {
                (0..nout)
                    .map(|o| {
                        let d1 = tape.d1[l][o];
                        (hbar[o] * d1 + tbar[o] * tape.d2[l][o] * tape.ta[l][o], tbar[o] * d1)
                    })
                    .unzip()
            };
            let (h, t) = (&tape.h[l], &tape.t[l]);
            let g = &mut grad[off..off + nin * nout + nout];
            for o in 0..nout {
                let (ab, tb) = (abar[o], atbar[o]);
                let row = &mut g[o * nin..(o + 1) * nin];
                for i in 0..nin {
                    row[i] += ab * h[i] + tb * t[i];
                }
                g[nin * nout + o] += ab;
            }
            if l > 0 {
                let mut hb = vec![0.0; nin];
                let mut tb = vec![0.0; nin];
                for o in 0..nout {
                    let row = &w[o * nin..(o + 1) * nin];
                    for i in 0..nin {
                        hb[i] += row[i] * abar[o];
                        tb[i] += row[i] * atbar[o];
                    }
                }
                hbar = hb;
                tbar = tb;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random_params(shape: &MlpShape, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::SeedTree::new(seed).stream("t");
        (0..shape.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn tangent_matches_finite_difference() {
        for act in [Activation::Tanh, Activation::Softplus] {
            let shape = MlpShape { input: 2, hidden: vec![5, 4], activation: act };
            let p = random_params(&shape, 3);
            let mut tape = MlpTape::default();
            let x = [0.3, -0.7];
            let dx = [0.6, 0.8];
            let (_, ty) = shape.forward(&p, &x, &dx, &mut tape);
            let h = 1e-6;
            let (yp, _) = shape.forward(&p, &[x[0] + h * dx[0], x[1] + h * dx[1]], &dx, &mut tape);
            let (ym, _) = shape.forward(&p, &[x[0] - h * dx[0], x[1] - h * dx[1]], &dx, &mut tape);
            assert!(((yp - ym) / (2.0 * h) - ty).abs() < 1e-8);
        }
    }

    #[test]
    fn param_grad_matches_finite_difference() {
        for act in [Activation::Tanh, Activation::Softplus] {
            let shape = MlpShape { input: 1, hidden: vec![6, 3], activation: act };
            let p = random_params(&shape, 9);
            let (cy, ct) = (0.7, -1.3);
            let mut tape = MlpTape::default();
            let j = |p: &[f64], tape: &mut MlpTape| {
                let (y, t) = shape.forward(p, &[0.4], &[1.0], tape);
                cy * y + ct * t
            };
            j(&p, &mut tape);
            let mut g = vec![0.0; p.len()];
            shape.param_grad(&p, &tape, cy, ct, &mut g);
            let h = 1e-6;
            for k in 0..p.len() {
                let mut up = p.clone();
                up[k] += h;
                let mut dn = p.clone();
                dn[k] -= h;
                let fd = (j(&up, &mut tape) - j(&dn, &mut tape)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7, "param {k}: fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn parameter_count() {
        let shape = MlpShape { input: 1, hidden: vec![16, 16], activation: Activation::Tanh };
        assert_eq!(shape.n_params(), 16 + 16 + 16 * 16 + 16 + 16 + 1);
        assert_eq!(shape.fan_in().len(), shape.n_params());
    }
}
