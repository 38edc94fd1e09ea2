//! The AV acceleration policy: a single-layer LSTM over recent
//! (spacing, relative speed, own speed) observations, combined with the
//! social-preference angle after the recurrence to produce a bounded
//! acceleration.
//!
//! The forward pass is a pure function. Sequence state lives only inside one
//! invocation: the hidden and cell states start at zero for every window.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::SvoAngle;

/// Number of observation features per timestep: spacing to the lead vehicle,
/// relative speed, and own speed.
pub const INPUT_DIM: usize = 3;

/// Number of gates in the LSTM cell: input, forget, candidate, output.
const N_GATES: usize = 4;

const CHECKPOINT_MAGIC: &[u8; 4] = b"SACC";
const CHECKPOINT_VERSION: u32 = 1;

/// Gate indices within the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Gate {
    Input = 0,
    Forget = 1,
    Candidate = 2,
    Output = 3,
}

const GATES: [Gate; N_GATES] = [Gate::Input, Gate::Forget, Gate::Candidate, Gate::Output];

/// All learnable weights of the controller plus architecture metadata and the
/// frozen input-normalization constants.
///
/// Weights are stored in one flat vector, block order: for each gate
/// (input, forget, candidate, output) the input-to-hidden matrix (row-major,
/// `hidden_dim x 3`), the hidden-to-hidden matrix (`hidden_dim x hidden_dim`),
/// and the bias; then the output head (`hidden_dim + 2` weights and one bias).
/// The checkpoint file serializes exactly this order.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    hidden_dim: usize,
    seq_len: usize,
    /// Output bound in m/s^2; predictions lie in (-a_lim, a_lim).
    a_lim: f64,
    /// Per-feature offset subtracted from raw observations.
    norm_offset: [f64; 3],
    /// Per-feature scale dividing the centered observations.
    norm_scale: [f64; 3],
    theta: Vec<f64>,
}

impl ControllerParams {
    pub const DEFAULT_HIDDEN_DIM: usize = 32;
    pub const DEFAULT_SEQ_LEN: usize = 10;
    /// Default output bound. Deliberately below the calibrated followers'
    /// maximum accelerations: catch-up maneuvers then live in the
    /// acceleration-limited regime where preference differences integrate
    /// into visible speed differences.
    pub const DEFAULT_A_LIM: f64 = 1.0;

    /// All-zero weights; useful as a deterministic baseline.
    pub fn zeroed(
        hidden_dim: usize,
        seq_len: usize,
        a_lim: f64,
        norm_offset: [f64; 3],
        norm_scale: [f64; 3],
    ) -> Result<Self> {
        Self::validate_meta(hidden_dim, seq_len, a_lim, &norm_offset, &norm_scale)?;
        let n = Self::param_count(hidden_dim);
        Ok(Self { hidden_dim, seq_len, a_lim, norm_offset, norm_scale, theta: vec![0.0; n] })
    }

    /// Seeded initialization: every entry uniform in +-1/sqrt(hidden_dim),
    /// then the forget-gate bias is set to +1.
    pub fn init(
        hidden_dim: usize,
        seq_len: usize,
        a_lim: f64,
        norm_offset: [f64; 3],
        norm_scale: [f64; 3],
        seed: u64,
    ) -> Result<Self> {
        let mut params = Self::zeroed(hidden_dim, seq_len, a_lim, norm_offset, norm_scale)?;
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in params.theta.iter_mut() {
            *w = rng.gen_range(-bound..bound);
        }
        let (start, len) = params.bias_block(Gate::Forget);
        for w in &mut params.theta[start..start + len] {
            *w = 1.0;
        }
        Ok(params)
    }

    fn validate_meta(
        hidden_dim: usize,
        seq_len: usize,
        a_lim: f64,
        norm_offset: &[f64; 3],
        norm_scale: &[f64; 3],
    ) -> Result<()> {
        if hidden_dim == 0 {
            return Err(Error::InvalidParameter("hidden_dim must be >= 1".into()));
        }
        if seq_len == 0 {
            return Err(Error::InvalidParameter("seq_len must be >= 1".into()));
        }
        if !a_lim.is_finite() || a_lim <= 0.0 {
            return Err(Error::InvalidParameter(format!("a_lim must be > 0, got {a_lim}")));
        }
        for v in norm_offset {
            if !v.is_finite() {
                return Err(Error::InvalidParameter("normalization offset must be finite".into()));
            }
        }
        for v in norm_scale {
            if !v.is_finite() || *v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "normalization scale must be > 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Total number of learnable parameters for a given hidden size.
    pub fn param_count(hidden_dim: usize) -> usize {
        let h = hidden_dim;
        N_GATES * (h * INPUT_DIM + h * h + h) + (h + 2) + 1
    }

    fn gate_block_len(&self) -> usize {
        let h = self.hidden_dim;
        h * INPUT_DIM + h * h + h
    }

    /// `(offset, len)` of the input-to-hidden matrix of a gate.
    fn wx_block(&self, gate: Gate) -> (usize, usize) {
        let h = self.hidden_dim;
        (gate as usize * self.gate_block_len(), h * INPUT_DIM)
    }

    /// `(offset, len)` of the hidden-to-hidden matrix of a gate.
    fn wh_block(&self, gate: Gate) -> (usize, usize) {
        let h = self.hidden_dim;
        let (wx, wx_len) = self.wx_block(gate);
        (wx + wx_len, h * h)
    }

    /// `(offset, len)` of the bias vector of a gate.
    fn bias_block(&self, gate: Gate) -> (usize, usize) {
        let (wh, wh_len) = self.wh_block(gate);
        (wh + wh_len, self.hidden_dim)
    }

    /// `(offset, len)` of the head weight vector over `[hidden ; cos phi ; sin phi]`.
    fn head_w_block(&self) -> (usize, usize) {
        (N_GATES * self.gate_block_len(), self.hidden_dim + 2)
    }

    fn head_b_index(&self) -> usize {
        let (off, len) = self.head_w_block();
        off + len
    }

    fn wx(&self, gate: Gate) -> &[f64] {
        let (off, len) = self.wx_block(gate);
        &self.theta[off..off + len]
    }

    fn wh(&self, gate: Gate) -> &[f64] {
        let (off, len) = self.wh_block(gate);
        &self.theta[off..off + len]
    }

    fn bias(&self, gate: Gate) -> &[f64] {
        let (off, len) = self.bias_block(gate);
        &self.theta[off..off + len]
    }

    fn head_w(&self) -> &[f64] {
        let (off, len) = self.head_w_block();
        &self.theta[off..off + len]
    }

    fn head_b(&self) -> f64 {
        self.theta[self.head_b_index()]
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    pub fn a_lim(&self) -> f64 {
        self.a_lim
    }

    pub fn norm_offset(&self) -> [f64; 3] {
        self.norm_offset
    }

    pub fn norm_scale(&self) -> [f64; 3] {
        self.norm_scale
    }

    /// Flat view of all learnable weights, in serialization order.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Mutates a single weight by index; used by finite-difference checks.
    pub fn nudge(&mut self, index: usize, delta: f64) {
        self.theta[index] += delta;
    }

    fn normalize(&self, raw: &[f64; 3]) -> [f64; 3] {
        [
            (raw[0] - self.norm_offset[0]) / self.norm_scale[0],
            (raw[1] - self.norm_offset[1]) / self.norm_scale[1],
            (raw[2] - self.norm_offset[2]) / self.norm_scale[2],
        ]
    }

    /// Writes the versioned binary checkpoint. Round-trips bit-exactly.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(INPUT_DIM as u32).to_le_bytes())?;
        out.write_all(&(self.hidden_dim as u32).to_le_bytes())?;
        out.write_all(&(self.seq_len as u32).to_le_bytes())?;
        out.write_all(&self.a_lim.to_le_bytes())?;
        for v in self.norm_offset.iter().chain(self.norm_scale.iter()) {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in &self.theta {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_to_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|_| short("magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::CheckpointFormat("bad magic bytes".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointFormat(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let input_dim = read_u32(&mut input)? as usize;
        if input_dim != INPUT_DIM {
            return Err(Error::CheckpointFormat(format!(
                "unsupported input_dim {input_dim}, expected {INPUT_DIM}"
            )));
        }
        let hidden_dim = read_u32(&mut input)? as usize;
        let seq_len = read_u32(&mut input)? as usize;
        if hidden_dim == 0 || hidden_dim > 1 << 16 || seq_len == 0 || seq_len > 1 << 16 {
            return Err(Error::CheckpointFormat(format!(
                "implausible dimensions: hidden_dim {hidden_dim}, seq_len {seq_len}"
            )));
        }
        let a_lim = read_f64(&mut input)?;
        let mut norm_offset = [0.0; 3];
        let mut norm_scale = [0.0; 3];
        for v in norm_offset.iter_mut().chain(norm_scale.iter_mut()) {
            *v = read_f64(&mut input)?;
        }
        let n = Self::param_count(hidden_dim);
        let mut theta = Vec::with_capacity(n);
        for _ in 0..n {
            theta.push(read_f64(&mut input)?);
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::CheckpointFormat("trailing bytes after weights".into()));
        }
        Self::validate_meta(hidden_dim, seq_len, a_lim, &norm_offset, &norm_scale)
            .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
        Ok(Self { hidden_dim, seq_len, a_lim, norm_offset, norm_scale, theta })
    }

    pub fn load_from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::load(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn short(what: &str) -> Error {
    Error::CheckpointFormat(format!("truncated checkpoint while reading {what}"))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf).map_err(|_| short("u32 field"))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf).map_err(|_| short("f64 field"))?;
    Ok(f64::from_le_bytes(buf))
}

/// A fixed-length window of raw observations `(s, dv, v)`, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    rows: Vec<[f64; 3]>,
}

impl ObservationWindow {
    pub fn new(rows: Vec<[f64; 3]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("observation window"));
        }
        for row in &rows {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(
                    "observation window entries must be finite".into(),
                ));
            }
        }
        Ok(Self { rows })
    }

    /// The last `seq_len` rows of `history`, left-padded by repeating the
    /// first observation when the episode is younger than the window.
    pub fn from_history(history: &[[f64; 3]], seq_len: usize) -> Result<Self> {
        if history.is_empty() {
            return Err(Error::EmptyInput("observation history"));
        }
        let mut rows = Vec::with_capacity(seq_len);
        fill_window(history, seq_len, &mut rows);
        Self::new(rows)
    }

    pub fn rows(&self) -> &[[f64; 3]] {
        &self.rows
    }
}

/// Fills `out` with the trailing `seq_len` rows of `history`, left-padded by
/// repeating the first row.
pub(crate) fn fill_window(history: &[[f64; 3]], seq_len: usize, out: &mut Vec<[f64; 3]>) {
    out.clear();
    let n = history.len();
    for t in 0..seq_len {
        // Window row t corresponds to history index n - seq_len + t.
        let idx = (n + t).saturating_sub(seq_len);
        out.push(history[idx.min(n - 1)]);
    }
}

/// Social-preference features fed to the output head: `(cos phi, sin phi)`.
pub fn encode_phi(phi: SvoAngle) -> (f64, f64) {
    phi.weights()
}

/// Per-window activation record. Reused across forward calls to avoid
/// re-allocating inside rollouts; the backward pass reads it in place.
#[derive(Debug, Clone)]
pub(crate) struct LstmTrace {
    hidden_dim: usize,
    seq_len: usize,
    /// Normalized inputs, `seq_len * 3`.
    x: Vec<f64>,
    gate_i: Vec<f64>,
    gate_f: Vec<f64>,
    gate_g: Vec<f64>,
    gate_o: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    hidden: Vec<f64>,
    z_pre: f64,
}

impl LstmTrace {
    pub(crate) fn new(hidden_dim: usize, seq_len: usize) -> Self {
        let lh = hidden_dim * seq_len;
        Self {
            hidden_dim,
            seq_len,
            x: vec![0.0; seq_len * INPUT_DIM],
            gate_i: vec![0.0; lh],
            gate_f: vec![0.0; lh],
            gate_g: vec![0.0; lh],
            gate_o: vec![0.0; lh],
            cell: vec![0.0; lh],
            tanh_cell: vec![0.0; lh],
            hidden: vec![0.0; lh],
            z_pre: 0.0,
        }
    }

    pub(crate) fn for_params(params: &ControllerParams) -> Self {
        Self::new(params.hidden_dim, params.seq_len)
    }

    fn final_hidden(&self) -> &[f64] {
        let h = self.hidden_dim;
        &self.hidden[(self.seq_len - 1) * h..]
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One gate pre-activation for every hidden unit:
/// `out[r] = b[r] + wx[r] . x + wh[r] . h_prev`.
#[inline]
fn gate_preact(wx: &[f64], wh: &[f64], bias: &[f64], x: &[f64; 3], h_prev: &[f64], out: &mut [f64]) {
    let h = bias.len();
    for r in 0..h {
        let wx_row = &wx[r * INPUT_DIM..(r + 1) * INPUT_DIM];
        let mut acc = bias[r] + wx_row[0] * x[0] + wx_row[1] * x[1] + wx_row[2] * x[2];
        let wh_row = &wh[r * h..(r + 1) * h];
        acc += wh_row.iter().zip(h_prev).map(|(w, hp)| w * hp).sum::<f64>();
        out[r] = acc;
    }
}

/// Runs the LSTM over a window (zero initial state) and the output head,
/// recording activations into `trace`. Returns the bounded acceleration.
pub(crate) fn forward_traced(
    params: &ControllerParams,
    rows: &[[f64; 3]],
    phi: SvoAngle,
    trace: &mut LstmTrace,
) -> f64 {
    debug_assert_eq!(rows.len(), params.seq_len);
    debug_assert_eq!(trace.hidden_dim, params.hidden_dim);
    debug_assert_eq!(trace.seq_len, params.seq_len);
    let h = params.hidden_dim;
    let zeros = vec![0.0; h];

    for (t, raw) in rows.iter().enumerate() {
        let x = params.normalize(raw);
        trace.x[t * INPUT_DIM..(t + 1) * INPUT_DIM].copy_from_slice(&x);
        let h_prev: &[f64] =
            if t == 0 { &zeros } else { &trace.hidden[(t - 1) * h..t * h] };
        // Pre-activations are written into the gate buffers, then squashed in
        // place. Borrow rules force the split_at_mut dance below.
        let span = t * h..(t + 1) * h;
        gate_preact(
            params.wx(Gate::Input),
            params.wh(Gate::Input),
            params.bias(Gate::Input),
            &x,
            h_prev,
            &mut trace.gate_i[span.clone()],
        );
        gate_preact(
            params.wx(Gate::Forget),
            params.wh(Gate::Forget),
            params.bias(Gate::Forget),
            &x,
            h_prev,
            &mut trace.gate_f[span.clone()],
        );
        gate_preact(
            params.wx(Gate::Candidate),
            params.wh(Gate::Candidate),
            params.bias(Gate::Candidate),
            &x,
            h_prev,
            &mut trace.gate_g[span.clone()],
        );
        gate_preact(
            params.wx(Gate::Output),
            params.wh(Gate::Output),
            params.bias(Gate::Output),
            &x,
            h_prev,
            &mut trace.gate_o[span.clone()],
        );
        let (cell_prev, cell_cur) = trace.cell.split_at_mut(t * h);
        let c_prev: &[f64] = if t == 0 { &zeros } else { &cell_prev[(t - 1) * h..] };
        for r in 0..h {
            let idx = t * h + r;
            let gi = sigmoid(trace.gate_i[idx]);
            let gf = sigmoid(trace.gate_f[idx]);
            let gg = trace.gate_g[idx].tanh();
            let go = sigmoid(trace.gate_o[idx]);
            trace.gate_i[idx] = gi;
            trace.gate_f[idx] = gf;
            trace.gate_g[idx] = gg;
            trace.gate_o[idx] = go;
            let c = gf * c_prev[r] + gi * gg;
            cell_cur[r] = c;
            let tc = c.tanh();
            trace.tanh_cell[idx] = tc;
            trace.hidden[idx] = go * tc;
        }
    }

    let (cos_phi, sin_phi) = encode_phi(phi);
    let head_w = params.head_w();
    let mut z = params.head_b() + head_w[h] * cos_phi + head_w[h + 1] * sin_phi;
    z += head_w[..h]
        .iter()
        .zip(trace.final_hidden())
        .map(|(w, hv)| w * hv)
        .sum::<f64>();
    trace.z_pre = z;
    params.a_lim * z.tanh()
}

/// Scratch buffers for one backward pass through a window.
#[derive(Debug, Clone)]
pub(crate) struct BackwardScratch {
    dh: Vec<f64>,
    dc: Vec<f64>,
    dh_prev: Vec<f64>,
    dhat: Vec<f64>,
}

impl BackwardScratch {
    pub(crate) fn new(hidden_dim: usize) -> Self {
        Self {
            dh: vec![0.0; hidden_dim],
            dc: vec![0.0; hidden_dim],
            dh_prev: vec![0.0; hidden_dim],
            dhat: vec![0.0; N_GATES * hidden_dim],
        }
    }
}

/// Reverse-mode pass through one controller invocation.
///
/// `upstream` is dLoss/d(a_pred). Parameter gradients are accumulated into
/// `grad` (same layout as `ControllerParams::theta`); gradients with respect
/// to the raw (unnormalized) window rows are accumulated into `obs_grad`,
/// `seq_len * 3` long.
pub(crate) fn backward_traced(
    params: &ControllerParams,
    phi: SvoAngle,
    trace: &LstmTrace,
    upstream: f64,
    grad: &mut [f64],
    obs_grad: &mut [f64],
    scratch: &mut BackwardScratch,
) {
    debug_assert_eq!(grad.len(), params.theta.len());
    debug_assert_eq!(obs_grad.len(), params.seq_len * INPUT_DIM);
    let h = params.hidden_dim;
    let (cos_phi, sin_phi) = encode_phi(phi);

    // Head: a = a_lim * tanh(z).
    let tanh_z = trace.z_pre.tanh();
    let dz = upstream * params.a_lim * (1.0 - tanh_z * tanh_z);
    let (head_off, head_len) = params.head_w_block();
    let final_hidden = trace.final_hidden();
    for r in 0..h {
        grad[head_off + r] += dz * final_hidden[r];
    }
    grad[head_off + h] += dz * cos_phi;
    grad[head_off + h + 1] += dz * sin_phi;
    grad[params.head_b_index()] += dz;
    debug_assert_eq!(head_len, h + 2);

    let head_w = params.head_w();
    for r in 0..h {
        scratch.dh[r] = dz * head_w[r];
        scratch.dc[r] = 0.0;
    }

    for t in (0..params.seq_len).rev() {
        let idx0 = t * h;
        let x = &trace.x[t * INPUT_DIM..(t + 1) * INPUT_DIM];
        let (h_prev, c_prev): (&[f64], &[f64]) = if t == 0 {
            (&[], &[])
        } else {
            (
                &trace.hidden[(t - 1) * h..t * h],
                &trace.cell[(t - 1) * h..t * h],
            )
        };
        let (dhat_i, rest) = scratch.dhat.split_at_mut(h);
        let (dhat_f, rest) = rest.split_at_mut(h);
        let (dhat_g, dhat_o) = rest.split_at_mut(h);

        for r in 0..h {
            let gi = trace.gate_i[idx0 + r];
            let gf = trace.gate_f[idx0 + r];
            let gg = trace.gate_g[idx0 + r];
            let go = trace.gate_o[idx0 + r];
            let tc = trace.tanh_cell[idx0 + r];
            let cp = if t == 0 { 0.0 } else { c_prev[r] };

            let d_out = scratch.dh[r] * tc;
            let dc_total = scratch.dc[r] + scratch.dh[r] * go * (1.0 - tc * tc);
            let d_in = dc_total * gg;
            let d_cand = dc_total * gi;
            let d_forget = dc_total * cp;
            scratch.dc[r] = dc_total * gf; // becomes dc for step t-1

            dhat_i[r] = d_in * gi * (1.0 - gi);
            dhat_f[r] = d_forget * gf * (1.0 - gf);
            dhat_g[r] = d_cand * (1.0 - gg * gg);
            dhat_o[r] = d_out * go * (1.0 - go);
        }

        scratch.dh_prev.iter_mut().for_each(|v| *v = 0.0);
        let dx = &mut obs_grad[t * INPUT_DIM..(t + 1) * INPUT_DIM];
        for (gate, dhat) in GATES.iter().zip([&*dhat_i, &*dhat_f, &*dhat_g, &*dhat_o]) {
            let (wx_off, _) = params.wx_block(*gate);
            let (wh_off, _) = params.wh_block(*gate);
            let (b_off, _) = params.bias_block(*gate);
            let wx = params.wx(*gate);
            let wh = params.wh(*gate);
            for r in 0..h {
                let d = dhat[r];
                if d == 0.0 {
                    continue;
                }
                let row = r * INPUT_DIM;
                grad[wx_off + row] += d * x[0];
                grad[wx_off + row + 1] += d * x[1];
                grad[wx_off + row + 2] += d * x[2];
                dx[0] += d * wx[row];
                dx[1] += d * wx[row + 1];
                dx[2] += d * wx[row + 2];
                grad[b_off + r] += d;
                if t > 0 {
                    let wrow = r * h;
                    for j in 0..h {
                        grad[wh_off + wrow + j] += d * h_prev[j];
                        scratch.dh_prev[j] += d * wh[wrow + j];
                    }
                }
            }
        }
        // Chain through normalization: x_norm = (raw - offset) / scale.
        for c in 0..INPUT_DIM {
            dx[c] /= params.norm_scale[c];
        }
        std::mem::swap(&mut scratch.dh, &mut scratch.dh_prev);
    }
}

/// Standard LSTM recurrence over the normalized window with zero initial
/// hidden and cell states; returns the final hidden state.
pub fn lstm_forward(params: &ControllerParams, window: &ObservationWindow) -> Result<Vec<f64>> {
    check_window(params, window)?;
    let mut trace = LstmTrace::for_params(params);
    forward_traced(params, window.rows(), SvoAngle::EGOISTIC, &mut trace);
    Ok(trace.final_hidden().to_vec())
}

/// Full policy: LSTM encoding of the window, social features appended, affine
/// head, and `a_lim * tanh` squashing. The result lies in `(-a_lim, a_lim)`.
pub fn predict_accel(
    params: &ControllerParams,
    window: &ObservationWindow,
    phi: SvoAngle,
) -> Result<f64> {
    check_window(params, window)?;
    let mut trace = LstmTrace::for_params(params);
    Ok(forward_traced(params, window.rows(), phi, &mut trace))
}

fn check_window(params: &ControllerParams, window: &ObservationWindow) -> Result<()> {
    if window.rows().len() != params.seq_len {
        return Err(Error::Shape {
            what: "observation window rows",
            expected: params.seq_len,
            actual: window.rows().len(),
        });
    }
    Ok(())
}
