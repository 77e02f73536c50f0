use rand::Rng;

use super::INIT_SCALE;
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// LSTM cell with gates packed as `[input, forget, candidate, output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w_input = store.add_uniform(format!("{name}.w_input"), &[input_dim, 4 * hidden], scale, rng)?;
        let w_hidden = store.add_uniform(format!("{name}.w_hidden"), &[hidden, 4 * hidden], scale, rng)?;
        let bias = store.add_uniform(format!("{name}.bias"), &[4 * hidden], scale, rng)?;
        Ok(LstmCell {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden,
        })
    }

    /// One step on a `B x input_dim` batch. A missing state means zeros.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        state: Option<(Var, Var)>,
    ) -> Result<(Var, Var)> {
        let h = self.hidden;
        let wx = tape.param(store, self.w_input);
        let b = tape.param(store, self.bias);
        let mut z = tape.matmul(x, wx)?;
        if let Some((h_prev, _)) = state {
            let wh = tape.param(store, self.w_hidden);
            let zh = tape.matmul(h_prev, wh)?;
            z = tape.add(z, zh)?;
        }
        let z = tape.add_row(z, b)?;
        let i = tape.slice_cols(z, 0, h)?;
        let f = tape.slice_cols(z, h, 2 * h)?;
        let g = tape.slice_cols(z, 2 * h, 3 * h)?;
        let o = tape.slice_cols(z, 3 * h, 4 * h)?;
        let i = tape.sigmoid(i);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let mut c = tape.mul(i, g)?;
        if let Some((_, c_prev)) = state {
            let f = tape.sigmoid(f);
            let kept = tape.mul(f, c_prev)?;
            c = tape.add(c, kept)?;
        }
        let tc = tape.tanh(c);
        let h_new = tape.mul(o, tc)?;
        Ok((h_new, c))
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w_input, self.w_hidden, self.bias]
    }
}

/// Bidirectional LSTM whose input and output widths are both `width`, so
/// modules compose in any order and multiplicity. Each direction has
/// `width / 2` hidden units.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmModule {
    pub id: usize,
    pub width: usize,
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstmModule {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        id: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::with_scale(store, name, id, width, INIT_SCALE, rng)
    }

    pub fn with_scale(
        store: &mut ParamStore,
        name: &str,
        id: usize,
        width: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if width == 0 || width % 2 != 0 {
            return Err(Error::Config(format!("module width {width} must be positive and even")));
        }
        let forward = LstmCell::new(store, &format!("{name}.fwd"), width, width / 2, scale, rng)?;
        let backward = LstmCell::new(store, &format!("{name}.bwd"), width, width / 2, scale, rng)?;
        Ok(BiLstmModule {
            id,
            width,
            forward,
            backward,
        })
    }

    /// Runs over time-major steps, each `B x width`. `masks[t]` is a `B`-vector
    /// of 0/1 validity flags (`None` when every row is valid); state and
    /// output are zeroed at invalid positions so padding never leaks into
    /// valid steps of the reverse direction.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        steps: &[Var],
        masks: &[Option<Var>],
    ) -> Result<Vec<Var>> {
        if steps.is_empty() {
            return Err(Error::Contract(format!("module {}: empty sequence", self.id)));
        }
        if masks.len() != steps.len() {
            return Err(Error::dim("bilstm", format!("module {}: mask count", self.id)));
        }
        for &s in steps {
            let w = tape.value(s).cols();
            if w != self.width {
                return Err(Error::dim(
                    "bilstm",
                    format!("module {}: input width {w}, expected {}", self.id, self.width),
                ));
            }
        }
        let run = |tape: &mut Tape, cell: &LstmCell, order: &mut dyn Iterator<Item = usize>| {
            let mut out = vec![None; steps.len()];
            let mut state = None;
            for t in order {
                let (mut h, mut c) = cell.step(tape, store, steps[t], state)?;
                if let Some(m) = masks[t] {
                    h = tape.mul_col(h, m)?;
                    c = tape.mul_col(c, m)?;
                }
                out[t] = Some(h);
                state = Some((h, c));
            }
            Ok::<_, Error>(out.into_iter().map(|v| v.expect("every step visited")).collect::<Vec<_>>())
        };
        let fwd = run(tape, &self.forward, &mut (0..steps.len()))?;
        let bwd = run(tape, &self.backward, &mut (0..steps.len()).rev())?;
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| tape.concat_cols(&[f, b]))
            .collect()
    }

    /// Unbatched form: `T x width` in, `T x width` out.
    pub fn forward_sequence(&self, tape: &mut Tape, store: &ParamStore, seq: Var) -> Result<Var> {
        let (t_len, w) = tape.value(seq).dims2();
        if w != self.width {
            return Err(Error::dim(
                "bilstm",
                format!("module {}: input width {w}, expected {}", self.id, self.width),
            ));
        }
        let steps = (0..t_len)
            .map(|t| tape.slice_rows(seq, t, t + 1))
            .collect::<Result<Vec<_>>>()?;
        let out = self.forward(tape, store, &steps, &vec![None; t_len])?;
        tape.concat_rows(&out)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.forward.params();
        p.extend(self.backward.params());
        p
    }
}
