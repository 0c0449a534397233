//! Bias-free GRU cell and bi-directional sequence encoder.
//!
//! For a row input `x` and previous state `h`:
//!
//! ```text
//! r  = σ(x W_r + h U_r)
//! u  = σ(x W_u + h U_u)
//! h̄  = tanh(x W + (r ⊙ h) U)
//! h' = (1 - u) ⊙ h + u ⊙ h̄
//! ```

use crate::error::{DcrError, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{BoundParams, ParamId, ParamSet};

pub const GRU_MATRICES: [&str; 6] = ["W_r", "W_u", "W", "U_r", "U_u", "U"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruCell {
    pub w_r: ParamId,
    pub w_u: ParamId,
    pub w: ParamId,
    pub u_r: ParamId,
    pub u_u: ParamId,
    pub u: ParamId,
    input_width: usize,
    hidden: usize,
}

/// Output of one recurrence step, with its gates.
#[derive(Clone, Copy, Debug)]
pub struct GruStep {
    pub h: Var,
    pub reset: Var,
    pub update: Var,
}

impl GruCell {
    /// Registers six zero matrices under `prefix` (e.g. `shared.fwd.W_r`).
    pub fn new(params: &mut ParamSet, prefix: &str, input_width: usize, hidden: usize) -> Self {
        let mut add = |name: &str, rows: usize| params.add(format!("{prefix}.{name}"), Tensor::zeros(vec![rows, hidden]));
        GruCell {
            w_r: add("W_r", input_width),
            w_u: add("W_u", input_width),
            w: add("W", input_width),
            u_r: add("U_r", hidden),
            u_u: add("U_u", hidden),
            u: add("U", hidden),
            input_width,
            hidden,
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_ids(&self) -> [ParamId; 6] {
        [self.w_r, self.w_u, self.w, self.u_r, self.u_u, self.u]
    }

    /// One step from a `1 × input_width` row `x` and `1 × hidden` state.
    pub fn step(&self, tape: &mut Tape, p: &BoundParams, x: Var, h_prev: Var) -> Result<GruStep> {
        let xr = tape.matmul(x, p.var(self.w_r))?;
        let xu = tape.matmul(x, p.var(self.w_u))?;
        let xh = tape.matmul(x, p.var(self.w))?;
        self.step_projected(tape, p, [xr, xu, xh], h_prev)
    }

    /// Step with the three input projections `x W_r`, `x W_u`, `x W` already computed.
    fn step_projected(&self, tape: &mut Tape, p: &BoundParams, [xr, xu, xh]: [Var; 3], h_prev: Var) -> Result<GruStep> {
        if tape.shape(h_prev) != [1, self.hidden] {
            return Err(DcrError::shape("gru_step", tape.shape(h_prev), &[1, self.hidden]));
        }
        let hr = tape.matmul(h_prev, p.var(self.u_r))?;
        let pre_r = tape.add(xr, hr)?;
        let reset = tape.sigmoid(pre_r);

        let hu = tape.matmul(h_prev, p.var(self.u_u))?;
        let pre_u = tape.add(xu, hu)?;
        let update = tape.sigmoid(pre_u);

        let gated = tape.mul(reset, h_prev)?;
        let gh = tape.matmul(gated, p.var(self.u))?;
        let pre_h = tape.add(xh, gh)?;
        let candidate = tape.tanh(pre_h);

        let keep = tape.one_minus(update);
        let kept = tape.mul(keep, h_prev)?;
        let fresh = tape.mul(update, candidate)?;
        let h = tape.add(kept, fresh)?;
        Ok(GruStep { h, reset, update })
    }

    /// Runs the cell over the rows of `inputs` (`T × input_width`) in the
    /// given order of row indices, starting from a zero state. Rows whose
    /// mask bit is false carry the previous state forward unchanged.
    /// Returns the state after each listed row, in the listed order.
    fn run(&self, tape: &mut Tape, p: &BoundParams, inputs: Var, order: &[usize], mask: Option<&[bool]>) -> Result<Vec<Var>> {
        let xr = tape.matmul(inputs, p.var(self.w_r))?;
        let xu = tape.matmul(inputs, p.var(self.w_u))?;
        let xh = tape.matmul(inputs, p.var(self.w))?;
        let mut h = tape.constant(Tensor::zeros(vec![1, self.hidden]));
        let mut states = Vec::with_capacity(order.len());
        for &t in order {
            if mask.is_none_or(|m| m[t]) {
                let proj = [tape.row(xr, t)?, tape.row(xu, t)?, tape.row(xh, t)?];
                h = self.step_projected(tape, p, proj, h)?.h;
            }
            states.push(h);
        }
        Ok(states)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BiGruEncoder {
    pub forward: GruCell,
    pub backward: GruCell,
}

/// Per-position states of a bi-directional pass, each row aligned with the input row.
#[derive(Clone, Copy, Debug)]
pub struct EncodedSequence {
    /// `T × d`
    pub forward: Var,
    /// `T × d`
    pub backward: Var,
    /// `T × 2d`, `[forward ; backward]` per row
    pub states: Var,
}

impl BiGruEncoder {
    pub fn new(params: &mut ParamSet, prefix: &str, input_width: usize, hidden: usize) -> Self {
        BiGruEncoder {
            forward: GruCell::new(params, &format!("{prefix}.fwd"), input_width, hidden),
            backward: GruCell::new(params, &format!("{prefix}.bwd"), input_width, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn input_width(&self) -> usize {
        self.forward.input_width
    }

    /// Encodes the rows of `inputs` (`T × input_width`) left-to-right and
    /// right-to-left from zero states. `mask[t] == false` marks padding.
    pub fn encode(&self, tape: &mut Tape, p: &BoundParams, inputs: Var, mask: Option<&[bool]>) -> Result<EncodedSequence> {
        let shape = tape.shape(inputs).to_vec();
        if shape.len() != 2 || shape[1] != self.input_width() {
            return Err(DcrError::shape("encode_sequence", &shape, &[0, self.input_width()]));
        }
        let len = shape[0];
        if len == 0 {
            return Err(DcrError::InvalidArgument("cannot encode an empty sequence".into()));
        }
        if let Some(m) = mask {
            if m.len() != len {
                return Err(DcrError::shape("encode_sequence mask", &shape, &[m.len()]));
            }
        }
        let ltr: Vec<usize> = (0..len).collect();
        let rtl: Vec<usize> = (0..len).rev().collect();
        let fwd_states = self.forward.run(tape, p, inputs, &ltr, mask)?;
        let mut bwd_states = self.backward.run(tape, p, inputs, &rtl, mask)?;
        bwd_states.reverse();
        let forward = tape.stack_rows(&fwd_states)?;
        let backward = tape.stack_rows(&bwd_states)?;
        let states = tape.concat(forward, backward)?;
        Ok(EncodedSequence {
            forward,
            backward,
            states,
        })
    }
}
