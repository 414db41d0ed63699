//! LSTM building blocks shared by the sentence model and the context
//! encoders, plus the softmax output layer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{softmax_row, DenseMatrix, ParamId, ParamStore, Real, Tape, Var};

/// Gate order used throughout: input, output, forget, cell candidate.
const GATES: [&str; 4] = ["i", "o", "f", "c"];

/// Parameter handles of one LSTM layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lstm {
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
    pub input_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros<T: Real>(tape: &mut Tape<'_, T>, hidden_dim: usize) -> Self {
        Self {
            h: tape.zeros(hidden_dim),
            c: tape.zeros(hidden_dim),
        }
    }
}

impl Lstm {
    pub fn param_names(prefix: &str) -> Vec<String> {
        let mut names = Vec::new();
        for kind in ["w", "u", "b"] {
            for g in GATES {
                names.push(format!("{prefix}.{kind}_{g}"));
            }
        }
        names
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let w = GATES.map(|g| {
            store.add(
                format!("{prefix}.w_{g}"),
                DenseMatrix::uniform(hidden_dim, input_dim, scale, rng),
            )
        });
        let u = GATES.map(|g| {
            store.add(
                format!("{prefix}.u_{g}"),
                DenseMatrix::uniform(hidden_dim, hidden_dim, scale, rng),
            )
        });
        let b = GATES.map(|g| {
            store.add(
                format!("{prefix}.b_{g}"),
                DenseMatrix::uniform(hidden_dim, 1, scale, rng),
            )
        });
        Self {
            w,
            u,
            b,
            input_dim,
            hidden_dim,
        }
    }

    /// Looks the layer up by name and checks every shape.
    pub fn lookup<T: Real>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let find = |kind: &str, g: &str| -> Result<ParamId> {
            let name = format!("{prefix}.{kind}_{g}");
            store
                .id(&name)
                .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))
        };
        let mut w = [ParamId(0); 4];
        let mut u = [ParamId(0); 4];
        let mut b = [ParamId(0); 4];
        for (k, g) in GATES.iter().enumerate() {
            w[k] = find("w", g)?;
            u[k] = find("u", g)?;
            b[k] = find("b", g)?;
        }
        let (hidden_dim, input_dim) = store.get(w[0]).shape();
        for k in 0..4 {
            let ok = store.get(w[k]).shape() == (hidden_dim, input_dim)
                && store.get(u[k]).shape() == (hidden_dim, hidden_dim)
                && store.get(b[k]).len() == hidden_dim;
            if !ok {
                return Err(Error::Shape(format!(
                    "inconsistent shapes in `{prefix}` gate {}",
                    GATES[k]
                )));
            }
        }
        Ok(Self {
            w,
            u,
            b,
            input_dim,
            hidden_dim,
        })
    }

    /// Gates and new memory cell. Returns `(c_t, o_t)`.
    pub fn cell<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, state: LstmState) -> (Var, Var) {
        let pre = |tape: &mut Tape<'_, T>, k: usize| tape.affine2(self.w[k], x, self.u[k], state.h, self.b[k]);
        let i = pre(tape, 0);
        let i = tape.sigmoid(i);
        let o = pre(tape, 1);
        let o = tape.sigmoid(o);
        let f = pre(tape, 2);
        let f = tape.sigmoid(f);
        let g = pre(tape, 3);
        let g = tape.tanh(g);
        let keep = tape.mul(f, state.c);
        let write = tape.mul(i, g);
        let c = tape.add(keep, write);
        (c, o)
    }

    /// One recurrent step: `h' = o * tanh(c')`.
    pub fn step<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, state: LstmState) -> LstmState {
        let (c, o) = self.cell(tape, x, state);
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        LstmState { h, c }
    }

    /// Value-level step with shape checking. Returns `(h', c')`.
    pub fn step_values<T: Real>(&self, store: &ParamStore<T>, x: &[T], h: &[T], c: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        if x.len() != self.input_dim || h.len() != self.hidden_dim || c.len() != self.hidden_dim {
            return Err(Error::Shape(format!(
                "lstm step expects input {} and state {}, got {}, {}, {}",
                self.input_dim,
                self.hidden_dim,
                x.len(),
                h.len(),
                c.len()
            )));
        }
        let mut tape = Tape::new(store);
        let xv = tape.constant(x.to_vec());
        let state = LstmState {
            h: tape.constant(h.to_vec()),
            c: tape.constant(c.to_vec()),
        };
        let next = self.step(&mut tape, xv, state);
        Ok((tape.value(next.h).to_vec(), tape.value(next.c).to_vec()))
    }
}

/// Softmax output layer handles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputLayer {
    pub w: ParamId,
    pub b: ParamId,
}

impl OutputLayer {
    pub fn logits<T: Real>(&self, tape: &mut Tape<'_, T>, h: Var) -> Var {
        tape.affine(self.w, h, Some(self.b))
    }

    /// `softmax(W h + b)`.
    pub fn distribution<T: Real>(&self, store: &ParamStore<T>, h: &[T]) -> Result<Vec<T>> {
        let w = store.get(self.w);
        let mut z = w.matvec(h)?;
        for (zi, &bi) in z.iter_mut().zip(store.get(self.b).as_slice()) {
            *zi = *zi + bi;
        }
        softmax_row(&z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(input: usize, hidden: usize, scale: f64, seed: u64) -> (ParamStore<f64>, Lstm) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let l = Lstm::init(&mut s, "lstm", input, hidden, scale, &mut rng);
        (s, l)
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let (s, l) = layer(3, 4, 0.0, 0);
        let (h, c) = l.step_values(&s, &[1.0, -2.0, 0.5], &[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn scalar_unit_matches_direct_formula() {
        let (mut s, l) = layer(1, 1, 0.0, 0);
        let vals = [
            (0.3, -0.2, 0.1),  // i
            (0.7, 0.4, -0.3),  // o
            (-0.5, 0.9, 0.2),  // f
            (1.1, -0.6, 0.05), // c
        ];
        for (k, &(w, u, b)) in vals.iter().enumerate() {
            s.get_mut(l.w[k]).set(0, 0, w);
            s.get_mut(l.u[k]).set(0, 0, u);
            s.get_mut(l.b[k]).set(0, 0, b);
        }
        let (x, h0, c0) = (0.8, -0.4, 0.6);
        let gate = |k: usize| vals[k].0 * x + vals[k].1 * h0 + vals[k].2;
        let i = sigmoid(gate(0));
        let o = sigmoid(gate(1));
        let f = sigmoid(gate(2));
        let g = gate(3).tanh();
        let c1 = f * c0 + i * g;
        let h1 = o * c1.tanh();
        let (h, c) = l.step_values(&s, &[x], &[h0], &[c0]).unwrap();
        assert!((h[0] - h1).abs() < 1e-12);
        assert!((c[0] - c1).abs() < 1e-12);
    }

    #[test]
    fn saturated_gates_retain_memory() {
        let (mut s, l) = layer(2, 3, 0.5, 4);
        s.get_mut(l.b[2]).fill(20.0);
        s.get_mut(l.b[0]).fill(-20.0);
        let c0 = [0.5, -1.2, 2.0];
        let (_, c) = l.step_values(&s, &[0.1, 0.2], &[0.1, 0.0, -0.1], &c0).unwrap();
        for (a, b) in c.iter().zip(&c0) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (s, l) = layer(2, 3, 0.1, 1);
        assert!(matches!(
            l.step_values(&s, &[0.0; 3], &[0.0; 3], &[0.0; 3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn lookup_finds_and_validates() {
        let (mut s, l) = layer(2, 3, 0.1, 1);
        assert_eq!(Lstm::lookup(&s, "lstm").unwrap(), l);
        assert!(Lstm::lookup(&s, "other").is_err());
        *s.get_mut(l.u[1]) = DenseMatrix::zeros(2, 2);
        assert!(Lstm::lookup(&s, "lstm").is_err());
    }

    #[test]
    fn output_layer_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = ParamStore::<f64>::new();
        let out = OutputLayer {
            w: s.add("out.w", DenseMatrix::zeros(5, 3)),
            b: s.add("out.b", DenseMatrix::zeros(5, 1)),
        };
        let p = out.distribution(&s, &[0.2, -0.1, 0.4]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));

        s.get_mut(out.b).set(3, 0, 60.0);
        let p = out.distribution(&s, &[0.2, -0.1, 0.4]).unwrap();
        assert!(p[3] > 1.0 - 1e-15);
        assert!(p.iter().enumerate().all(|(i, &x)| i == 3 || (x > 0.0 && x < 1e-25)));

        *s.get_mut(out.w) = DenseMatrix::uniform(5, 3, 1.0, &mut rng);
        *s.get_mut(out.b) = DenseMatrix::uniform(5, 1, 1.0, &mut rng);
        let h = [0.3, 0.9, -0.5];
        let p = out.distribution(&s, &h).unwrap();
        // independent recomputation
        let w = s.get(out.w);
        let z: Vec<f64> = (0..5)
            .map(|r| (0..3).map(|c| w.get(r, c) * h[c]).sum::<f64>() + s.get(out.b).get(r, 0))
            .collect();
        let norm: f64 = z.iter().map(|v| v.exp()).sum();
        for (a, zi) in p.iter().zip(&z) {
            assert!((a - zi.exp() / norm).abs() < 1e-12);
        }
        assert!(out.distribution(&s, &[0.0; 2]).is_err());
    }
}
