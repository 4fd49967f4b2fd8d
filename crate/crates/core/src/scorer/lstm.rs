//! A single-layer LSTM with an explicit tape for reverse-mode gradients.
//!
//! Gate rows are stacked as input, forget, candidate, output. The weight
//! matrix acts on `[x; h_prev]`.

use ndarray::{s, Array1, Array2, ArrayView1, Zip};

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Everything one cell update needs for its backward pass.
#[derive(Debug, Clone)]
pub struct CellRecord {
    z: Array1<f64>,
    c_prev: Array1<f64>,
    input: Array1<f64>,
    forget: Array1<f64>,
    candidate: Array1<f64>,
    output: Array1<f64>,
    tanh_c: Array1<f64>,
    pub c: Array1<f64>,
    pub h: Array1<f64>,
}

/// Forward record of a whole sequence.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    pub cells: Vec<CellRecord>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Hidden state after `t` inputs (zero for `t == 0`).
    pub fn hidden_after(&self, t: usize, hidden: usize) -> Array1<f64> {
        if t == 0 {
            Array1::zeros(hidden)
        } else {
            self.cells[t - 1].h.clone()
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Lstm {
    pub fn zeros(input: usize, hidden: usize) -> Lstm {
        Lstm {
            weights: Array2::zeros((4 * hidden, input + hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn input_size(&self) -> usize {
        self.weights.ncols() - self.hidden_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.bias.len() / 4
    }

    fn cell(&self, x: ArrayView1<f64>, h_prev: &Array1<f64>, c_prev: &Array1<f64>) -> CellRecord {
        let hs = self.hidden_size();
        let mut z = Array1::zeros(x.len() + hs);
        z.slice_mut(s![..x.len()]).assign(&x);
        z.slice_mut(s![x.len()..]).assign(h_prev);
        let pre = self.weights.dot(&z) + &self.bias;
        let input = pre.slice(s![..hs]).mapv(sigmoid);
        let forget = pre.slice(s![hs..2 * hs]).mapv(sigmoid);
        let candidate = pre.slice(s![2 * hs..3 * hs]).mapv(f64::tanh);
        let output = pre.slice(s![3 * hs..]).mapv(sigmoid);
        let c = &forget * c_prev + &input * &candidate;
        let tanh_c = c.mapv(f64::tanh);
        let h = &output * &tanh_c;
        CellRecord {
            z,
            c_prev: c_prev.clone(),
            input,
            forget,
            candidate,
            output,
            tanh_c,
            c,
            h,
        }
    }

    /// Runs the sequence from zero state, keeping the tape.
    pub fn run<'a, I>(&self, inputs: I) -> Tape
    where
        I: IntoIterator<Item = ArrayView1<'a, f64>>,
    {
        let hs = self.hidden_size();
        let mut h = Array1::zeros(hs);
        let mut c = Array1::zeros(hs);
        let mut cells = Vec::new();
        for x in inputs {
            let rec = self.cell(x, &h, &c);
            h = rec.h.clone();
            c = rec.c.clone();
            cells.push(rec);
        }
        Tape { cells }
    }

    /// Final hidden state only; zero for an empty sequence.
    pub fn final_hidden<'a, I>(&self, inputs: I) -> Array1<f64>
    where
        I: IntoIterator<Item = ArrayView1<'a, f64>>,
    {
        let mut state = LstmState::new(self.hidden_size());
        for x in inputs {
            state.advance(self, x);
        }
        state.h
    }

    /// Back-propagates through `tape`. `dh[t]` is the loss gradient w.r.t.
    /// the hidden state after input `t` (empty rows may be omitted with
    /// `None`). Parameter gradients are added into `grads`; the returned
    /// vector holds the gradient for each input.
    pub fn backward(&self, tape: &Tape, dh: &[Option<Array1<f64>>], grads: &mut Lstm) -> Vec<Array1<f64>> {
        let hs = self.hidden_size();
        let input = self.input_size();
        let steps = tape.len();
        debug_assert_eq!(dh.len(), steps);
        let mut dx = vec![Array1::zeros(input); steps];
        let mut dh_next: Array1<f64> = Array1::zeros(hs);
        let mut dc_next: Array1<f64> = Array1::zeros(hs);
        let mut dpre = Array1::zeros(4 * hs);
        for t in (0..steps).rev() {
            let rec = &tape.cells[t];
            let mut dh_t = dh_next.clone();
            if let Some(g) = &dh[t] {
                dh_t += g;
            }
            // c = f*c_prev + i*g ; h = o*tanh(c)
            let mut dc = dc_next.clone();
            Zip::from(&mut dc)
                .and(&dh_t)
                .and(&rec.output)
                .and(&rec.tanh_c)
                .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (1.0 - tc * tc));
            for j in 0..hs {
                let (i, f, g, o) = (rec.input[j], rec.forget[j], rec.candidate[j], rec.output[j]);
                dpre[j] = dc[j] * g * i * (1.0 - i);
                dpre[hs + j] = dc[j] * rec.c_prev[j] * f * (1.0 - f);
                dpre[2 * hs + j] = dc[j] * i * (1.0 - g * g);
                dpre[3 * hs + j] = dh_t[j] * rec.tanh_c[j] * o * (1.0 - o);
            }
            for (r, &d) in dpre.iter().enumerate() {
                if d != 0.0 {
                    grads.weights.row_mut(r).scaled_add(d, &rec.z);
                }
            }
            grads.bias += &dpre;
            let dz = self.weights.t().dot(&dpre);
            dx[t].assign(&dz.slice(s![..input]));
            dh_next = dz.slice(s![input..]).to_owned();
            dc_next = &dc * &rec.forget;
        }
        dx
    }
}

/// Running hidden/cell state for incremental use during decoding.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LstmState {
    pub fn new(hidden: usize) -> LstmState {
        LstmState {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }

    pub fn advance(&mut self, lstm: &Lstm, x: ArrayView1<f64>) {
        let rec = lstm.cell(x, &self.h, &self.c);
        self.h = rec.h;
        self.c = rec.c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_lstm(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Lstm {
        let mut l = Lstm::zeros(input, hidden);
        l.weights.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        l.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        l
    }

    #[test]
    fn empty_sequence_is_zero() {
        let l = Lstm::zeros(3, 4);
        let h = l.final_hidden(std::iter::empty());
        assert_eq!(h, Array1::zeros(4));
    }

    #[test]
    fn incremental_matches_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = random_lstm(&mut rng, 3, 4);
        let xs: Vec<Array1<f64>> = (0..5).map(|_| Array1::from_shape_fn(3, |_| rng.gen_range(-1.0..1.0))).collect();
        let tape = l.run(xs.iter().map(|x| x.view()));
        assert_eq!(tape.cells[4].h, l.final_hidden(xs.iter().map(|x| x.view())));
    }

    /// Loss = sum over steps of <w_t, h_t>, checked by central differences.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = random_lstm(&mut rng, 3, 4);
        let xs: Vec<Array1<f64>> = (0..4).map(|_| Array1::from_shape_fn(3, |_| rng.gen_range(-1.0..1.0))).collect();
        let probes: Vec<Array1<f64>> = (0..4).map(|_| Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0))).collect();
        let loss = |l: &Lstm, xs: &[Array1<f64>]| {
            let tape = l.run(xs.iter().map(|x| x.view()));
            tape.cells.iter().zip(&probes).map(|(c, p)| c.h.dot(p)).sum::<f64>()
        };
        let tape = l.run(xs.iter().map(|x| x.view()));
        let dh: Vec<_> = probes.iter().cloned().map(Some).collect();
        let mut grads = Lstm::zeros(3, 4);
        let dx = l.backward(&tape, &dh, &mut grads);

        let h = 1e-5;
        for r in 0..l.weights.nrows() {
            for c in 0..l.weights.ncols() {
                let mut plus = l.clone();
                plus.weights[[r, c]] += h;
                let mut minus = l.clone();
                minus.weights[[r, c]] -= h;
                let numeric = (loss(&plus, &xs) - loss(&minus, &xs)) / (2.0 * h);
                assert!((numeric - grads.weights[[r, c]]).abs() < 1e-7);
            }
        }
        for t in 0..xs.len() {
            for k in 0..3 {
                let mut plus = xs.clone();
                plus[t][k] += h;
                let mut minus = xs.clone();
                minus[t][k] -= h;
                let numeric = (loss(&l, &plus) - loss(&l, &minus)) / (2.0 * h);
                assert!((numeric - dx[t][k]).abs() < 1e-7);
            }
        }
    }
}
