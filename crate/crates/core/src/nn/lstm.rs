//! Peephole LSTM and the two-layer bidirectional stack.
//!
//! Sequences are batched as *lanes*: independent streams stored lane-major
//! in one `[rows, features]` matrix (lane 0's epochs first, then lane 1's,
//! ...). Lanes may differ in length; a lane that has run out of input keeps
//! its state frozen while the others advance.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

use super::{dropout, Binder, ParamId, ParamStore, Session};

/// Hidden and cell state for every lane, each `[lanes, hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(lanes: usize, hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros([lanes, hidden]),
            c: Tensor::zeros([lanes, hidden]),
        }
    }

    pub fn lanes(&self) -> usize {
        self.h.shape()[0]
    }

    pub fn is_zero(&self) -> bool {
        self.h.data().iter().chain(self.c.data()).all(|&v| v == 0.0)
    }
}

/// Row bookkeeping for lane-major sequence batches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LaneLayout {
    lens: Vec<usize>,
    offsets: Vec<usize>,
}

impl LaneLayout {
    pub fn new(lens: Vec<usize>) -> Result<Self> {
        if lens.is_empty() || lens.iter().all(|&l| l == 0) {
            return Err(Error::invalid("lane layout", "empty sequence"));
        }
        let mut offsets = Vec::with_capacity(lens.len());
        let mut acc = 0;
        for &l in &lens {
            offsets.push(acc);
            acc += l;
        }
        Ok(LaneLayout { lens, offsets })
    }

    pub fn single(len: usize) -> Result<Self> {
        Self::new(vec![len])
    }

    pub fn lanes(&self) -> usize {
        self.lens.len()
    }

    pub fn lens(&self) -> &[usize] {
        &self.lens
    }

    pub fn total(&self) -> usize {
        self.lens.iter().sum()
    }

    pub fn max_len(&self) -> usize {
        self.lens.iter().copied().max().unwrap_or(0)
    }

    /// Matrix row holding position `pos` of `lane`.
    pub fn row(&self, lane: usize, pos: usize) -> usize {
        debug_assert!(pos < self.lens[lane]);
        self.offsets[lane] + pos
    }
}

/// Sak-style LSTM with diagonal peephole connections.
///
/// Gate pre-activations are fused into one `[.., 4 * hidden]` block ordered
/// input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct PeepholeLstm {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub peep_i: ParamId,
    pub peep_f: ParamId,
    pub peep_o: ParamId,
    pub input: usize,
    pub hidden: usize,
}

pub struct LayerOutput {
    /// `[rows, hidden]`, aligned with the input rows.
    pub output: Var,
    pub state: LstmState,
    /// Cell state after every step, `[lanes, hidden]` each, in processing order.
    pub cells: Vec<Var>,
}

impl PeepholeLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        let w = store.uniform(format!("{name}.w"), &[input, 4 * hidden], input, rng);
        let u = store.uniform(format!("{name}.u"), &[hidden, 4 * hidden], hidden, rng);
        let mut bias = Tensor::zeros([4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        let b = store.weight(format!("{name}.b"), bias);
        let peep_i = store.uniform(format!("{name}.peep_i"), &[hidden], hidden, rng);
        let peep_f = store.uniform(format!("{name}.peep_f"), &[hidden], hidden, rng);
        let peep_o = store.uniform(format!("{name}.peep_o"), &[hidden], hidden, rng);
        PeepholeLstm {
            w,
            u,
            b,
            peep_i,
            peep_f,
            peep_o,
            input,
            hidden,
        }
    }

    /// One step from raw input `x_t` (`[lanes, input]`).
    pub fn step_input(
        &self,
        s: &mut Session,
        p: &mut Binder,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let zx = self.project(s, p, x)?;
        self.step(s, p, zx, h, c)
    }

    /// `x W + b` for all rows at once.
    fn project(&self, s: &mut Session, p: &mut Binder, x: Var) -> Result<Var> {
        match s.graph.shape(x) {
            [_, n] if *n == self.input => {}
            shape => {
                return Err(Error::invalid(
                    "lstm",
                    format!("expected [rows, {}] input, got {shape:?}", self.input),
                ))
            }
        }
        let w = p.var(&mut s.graph, self.w);
        let b = p.var(&mut s.graph, self.b);
        let zx = s.graph.matmul(x, w)?;
        s.graph.add_row(zx, b)
    }

    /// One step given the projected input `zx = x W + b`.
    pub fn step(
        &self,
        s: &mut Session,
        p: &mut Binder,
        zx: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let hs = self.hidden;
        if s.graph.shape(h).last() != Some(&hs) || s.graph.shape(c).last() != Some(&hs) {
            return Err(Error::invalid(
                "lstm_step",
                format!(
                    "state shapes {:?}/{:?} do not match hidden size {hs}",
                    s.graph.shape(h),
                    s.graph.shape(c)
                ),
            ));
        }
        let u = p.var(&mut s.graph, self.u);
        let pi = p.var(&mut s.graph, self.peep_i);
        let pf = p.var(&mut s.graph, self.peep_f);
        let po = p.var(&mut s.graph, self.peep_o);
        let g = &mut s.graph;

        let zh = g.matmul(h, u)?;
        let z = g.add(zx, zh)?;
        let zi = g.narrow_cols(z, 0, hs)?;
        let zf = g.narrow_cols(z, hs, hs)?;
        let zg = g.narrow_cols(z, 2 * hs, hs)?;
        let zo = g.narrow_cols(z, 3 * hs, hs)?;

        let ci = g.mul_row(c, pi)?;
        let zi = g.add(zi, ci)?;
        let i = g.sigmoid(zi);
        let cf = g.mul_row(c, pf)?;
        let zf = g.add(zf, cf)?;
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);

        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;

        let co = g.mul_row(c_new, po)?;
        let zo = g.add(zo, co)?;
        let o = g.sigmoid(zo);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    /// Runs every lane of `input` (`[rows, input]`) through the cell, left to
    /// right or, with `reverse`, right to left within each lane.
    pub fn run(
        &self,
        s: &mut Session,
        p: &mut Binder,
        input: Var,
        layout: &LaneLayout,
        reverse: bool,
        init: &LstmState,
    ) -> Result<LayerOutput> {
        let lanes = layout.lanes();
        let hs = self.hidden;
        if s.graph.shape(input)[0] != layout.total() {
            return Err(Error::invalid(
                "lstm",
                format!(
                    "input has {} rows but layout covers {}",
                    s.graph.shape(input)[0],
                    layout.total()
                ),
            ));
        }
        if init.h.shape() != [lanes, hs] || init.c.shape() != [lanes, hs] {
            return Err(Error::invalid(
                "lstm",
                format!(
                    "initial state {:?} does not match {lanes} lanes x {hs} hidden",
                    init.h.shape()
                ),
            ));
        }
        let zx_all = self.project(s, p, input)?;
        let mut h = s.graph.constant(init.h.clone());
        let mut c = s.graph.constant(init.c.clone());
        let steps = layout.max_len();
        let mut outputs = Vec::with_capacity(steps);
        let mut cells = Vec::with_capacity(steps);

        for t in 0..steps {
            let active: Vec<bool> = layout.lens().iter().map(|&l| t < l).collect();
            let rows: Vec<usize> = (0..lanes)
                .map(|b| {
                    let len = layout.lens()[b];
                    if t < len {
                        layout.row(b, if reverse { len - 1 - t } else { t })
                    } else {
                        0
                    }
                })
                .collect();
            let zx = s.graph.gather_rows(zx_all, &rows)?;
            let (h_new, c_new) = self.step(s, p, zx, h, c)?;
            outputs.push(h_new);
            if active.iter().all(|&a| a) {
                h = h_new;
                c = c_new;
            } else {
                let mask: Rc<Vec<f64>> = Rc::new(
                    active
                        .iter()
                        .flat_map(|&a| std::iter::repeat_n(if a { 1.0 } else { 0.0 }, hs))
                        .collect(),
                );
                h = blend(s, h, h_new, &mask)?;
                c = blend(s, c, c_new, &mask)?;
            }
            cells.push(c);
        }

        let stacked = s.graph.concat(&outputs, 0)?;
        let mut order = Vec::with_capacity(layout.total());
        for b in 0..lanes {
            let len = layout.lens()[b];
            for pos in 0..len {
                let t = if reverse { len - 1 - pos } else { pos };
                order.push(t * lanes + b);
            }
        }
        let output = s.graph.gather_rows(stacked, &order)?;
        let state = LstmState {
            h: s.graph.value(h).clone(),
            c: s.graph.value(c).clone(),
        };
        Ok(LayerOutput {
            output,
            state,
            cells,
        })
    }
}

/// `old + mask * (new - old)`
fn blend(s: &mut Session, old: Var, new: Var, mask: &Rc<Vec<f64>>) -> Result<Var> {
    let d = s.graph.sub(new, old)?;
    let d = s.graph.mask(d, mask.clone())?;
    s.graph.add(old, d)
}

/// States of every layer of both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct BiState {
    pub forward: Vec<LstmState>,
    pub backward: Vec<LstmState>,
}

impl BiState {
    pub fn zeros(layers: usize, lanes: usize, hidden: usize) -> Self {
        BiState {
            forward: (0..layers).map(|_| LstmState::zeros(lanes, hidden)).collect(),
            backward: (0..layers).map(|_| LstmState::zeros(lanes, hidden)).collect(),
        }
    }

    pub fn lanes(&self) -> usize {
        self.forward.first().map_or(0, LstmState::lanes)
    }

    pub fn is_zero(&self) -> bool {
        self.forward.iter().chain(&self.backward).all(LstmState::is_zero)
    }
}

/// Stacked forward and backward LSTMs that never exchange information; the
/// per-position output concatenates the top forward and backward hidden
/// states.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: Vec<PeepholeLstm>,
    pub backward: Vec<PeepholeLstm>,
    pub hidden: usize,
    /// Dropout on the inputs between stacked layers.
    pub dropout: f64,
}

pub struct BiLstmOutput {
    /// `[rows, 2 * hidden]`
    pub output: Var,
    pub state: BiState,
    /// Per-step cell states of the first forward layer.
    pub forward_cells: Vec<Var>,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
    ) -> Self {
        assert!(layers >= 1, "need at least one layer");
        let mut stack = |dir: &str, rng: &mut ChaCha8Rng| -> Vec<PeepholeLstm> {
            (0..layers)
                .map(|l| {
                    let inp = if l == 0 { input } else { hidden };
                    PeepholeLstm::new(store, rng, &format!("{name}.{dir}{l}"), inp, hidden)
                })
                .collect()
        };
        let forward = stack("fwd", rng);
        let backward = stack("bwd", rng);
        BiLstm {
            forward,
            backward,
            hidden,
            dropout,
        }
    }

    pub fn layers(&self) -> usize {
        self.forward.len()
    }

    pub fn zero_state(&self, lanes: usize) -> BiState {
        BiState::zeros(self.layers(), lanes, self.hidden)
    }

    pub fn forward(
        &self,
        s: &mut Session,
        p: &mut Binder,
        input: Var,
        layout: &LaneLayout,
        init: &BiState,
    ) -> Result<BiLstmOutput> {
        if init.forward.len() != self.layers() || init.backward.len() != self.layers() {
            return Err(Error::invalid(
                "bilstm",
                format!("state has wrong layer count, expected {}", self.layers()),
            ));
        }
        let (fwd, fwd_states, forward_cells) =
            self.run_stack(s, p, &self.forward, input, layout, false, &init.forward)?;
        let (bwd, bwd_states, _) =
            self.run_stack(s, p, &self.backward, input, layout, true, &init.backward)?;
        let output = s.graph.concat(&[fwd, bwd], 1)?;
        Ok(BiLstmOutput {
            output,
            state: BiState {
                forward: fwd_states,
                backward: bwd_states,
            },
            forward_cells,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn run_stack(
        &self,
        s: &mut Session,
        p: &mut Binder,
        stack: &[PeepholeLstm],
        input: Var,
        layout: &LaneLayout,
        reverse: bool,
        init: &[LstmState],
    ) -> Result<(Var, Vec<LstmState>, Vec<Var>)> {
        let mut x = input;
        let mut states = Vec::with_capacity(stack.len());
        let mut first_cells = Vec::new();
        for (l, (cell, st)) in stack.iter().zip(init).enumerate() {
            if l > 0 {
                x = dropout(s, x, self.dropout)?;
            }
            let out = cell.run(s, p, x, layout, reverse, st)?;
            if l == 0 {
                first_cells = out.cells;
            }
            states.push(out.state);
            x = out.output;
        }
        Ok((x, states, first_cells))
    }
}
