//! Define-by-run tape for reverse-mode differentiation.
//!
//! Operations are recorded in execution order and evaluated immediately;
//! `backward` replays the tape in reverse. Node buffers hold f64 so the
//! finite-difference oracles stay tight; public tensors remain f32.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Mirror without repeating the edge sample (reflect-101).
    Reflect,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Conv2d { stride: usize, pad: usize, mode: PadMode },
    BiasAdd,
    ChanScale,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddConst(f64),
    Silu,
    Abs,
    Mean,
    Upsample2,
    ConcatC,
    Linear,
    InstanceNorm { eps: f64 },
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    shape: Vec<usize>,
    value: Vec<f64>,
}

/// Recorded forward pass.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::with_capacity(64) }
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>, value: Vec<f64>) -> NodeId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(Node { op, inputs, shape, value });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.node(id).shape
    }

    /// Snapshot a node's value as an f32 tensor.
    pub fn tensor(&self, id: NodeId) -> Tensor {
        let n = self.node(id);
        Tensor::from_f64(&n.shape, &n.value)
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.node(id).value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ── leaf ─────────────────────────────────────────────────────────

    pub fn input(&mut self, t: &Tensor) -> NodeId {
        self.push(Op::Input, vec![], t.shape().to_vec(), t.to_f64())
    }

    // ── elementwise ──────────────────────────────────────────────────

    fn binary_same_shape(&mut self, op: Op, a: NodeId, b: NodeId, name: &str) -> Result<NodeId> {
        let (sa, sb) = (self.node(a).shape.clone(), self.node(b).shape.clone());
        if sa != sb {
            return Err(Error::shape(name, &sa, &sb));
        }
        let value: Vec<f64> = {
            let (va, vb) = (&self.node(a).value, &self.node(b).value);
            match op {
                Op::Add => va.iter().zip(vb.iter()).map(|(x, y)| x + y).collect(),
                Op::Sub => va.iter().zip(vb.iter()).map(|(x, y)| x - y).collect(),
                Op::Mul => va.iter().zip(vb.iter()).map(|(x, y)| x * y).collect(),
                _ => unreachable!(),
            }
        };
        Ok(self.push(op, vec![a, b], sa, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(Op::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(Op::Sub, a, b, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(Op::Mul, a, b, "mul")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.node(a).shape.clone();
        let value = self.node(a).value.iter().map(|v| v * c).collect();
        self.push(Op::Scale(c), vec![a], shape, value)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.node(a).shape.clone();
        let value = self.node(a).value.iter().map(|v| v + c).collect();
        self.push(Op::AddConst(c), vec![a], shape, value)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let shape = self.node(a).shape.clone();
        let value = self
            .node(a)
            .value
            .iter()
            .map(|&x| x * sigmoid(x))
            .collect();
        self.push(Op::Silu, vec![a], shape, value)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let shape = self.node(a).shape.clone();
        let value = self.node(a).value.iter().map(|v| v.abs()).collect();
        self.push(Op::Abs, vec![a], shape, value)
    }

    // ── image ops ────────────────────────────────────────────────────

    /// Per-channel bias: x is C×H×W, b is a length-C vector.
    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.node(x).shape.clone();
        let bs = self.node(b).shape.clone();
        if xs.len() != 3 || bs.len() != 1 || bs[0] != xs[0] {
            return Err(Error::shape("bias_add", &[xs[0]], &bs));
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        let mut value = self.node(x).value.clone();
        for ch in 0..c {
            let bv = self.node(b).value[ch];
            for v in &mut value[ch * hw..(ch + 1) * hw] {
                *v += bv;
            }
        }
        Ok(self.push(Op::BiasAdd, vec![x, b], xs, value))
    }

    /// Per-channel scale: x is C×H×W, s is a length-C vector.
    pub fn chan_scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let xs = self.node(x).shape.clone();
        let ss = self.node(s).shape.clone();
        if xs.len() != 3 || ss.len() != 1 || ss[0] != xs[0] {
            return Err(Error::shape("chan_scale", &[xs[0]], &ss));
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        let mut value = self.node(x).value.clone();
        for ch in 0..c {
            let sv = self.node(s).value[ch];
            for v in &mut value[ch * hw..(ch + 1) * hw] {
                *v *= sv;
            }
        }
        Ok(self.push(Op::ChanScale, vec![x, s], xs, value))
    }

    /// Nearest-neighbor 2x upsampling of a C×H×W tensor.
    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.node(x).shape.clone();
        if xs.len() != 3 {
            return Err(Error::shape("upsample2", &[3], &[xs.len()]));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (2 * h, 2 * w);
        let src = &self.node(x).value;
        let mut value = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = src[(ch * h + i) * w + j];
                    let base = (ch * oh + 2 * i) * ow + 2 * j;
                    value[base] = v;
                    value[base + 1] = v;
                    value[base + ow] = v;
                    value[base + ow + 1] = v;
                }
            }
        }
        Ok(self.push(Op::Upsample2, vec![x], vec![c, oh, ow], value))
    }

    /// Channel concatenation of two C×H×W tensors with equal H, W.
    pub fn concat_c(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.node(a).shape.clone();
        let sb = self.node(b).shape.clone();
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(Error::shape("concat_c", &sa, &sb));
        }
        let mut value = self.node(a).value.clone();
        value.extend_from_slice(&self.node(b).value);
        let shape = vec![sa[0] + sb[0], sa[1], sa[2]];
        Ok(self.push(Op::ConcatC, vec![a, b], shape, value))
    }

    /// Cross-correlation of a C_in×H×W input with a C_out×C_in×k×k kernel.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Result<NodeId> {
        let xs = self.node(x).shape.clone();
        let ws = self.node(w).shape.clone();
        if xs.len() != 3 {
            return Err(Error::shape("conv2d input rank", &[3], &[xs.len()]));
        }
        if ws.len() != 4 {
            return Err(Error::shape("conv2d kernel rank", &[4], &[ws.len()]));
        }
        let (ci, h, wid) = (xs[0], xs[1], xs[2]);
        let (co, kci, k, k2) = (ws[0], ws[1], ws[2], ws[3]);
        if kci != ci {
            return Err(Error::shape("conv2d channels", &[ci], &[kci]));
        }
        if k != k2 || k % 2 == 0 {
            return Err(Error::InvalidArg(format!("conv2d kernel must be square with odd size, got {k}x{k2}")));
        }
        if stride == 0 {
            return Err(Error::InvalidArg("conv2d stride must be positive".into()));
        }
        if mode == PadMode::Reflect && pad > 0 && (pad >= h || pad >= wid) {
            return Err(Error::InvalidArg(format!(
                "reflect pad {pad} too large for {h}x{wid} input"
            )));
        }
        let (ph, pw) = (h + 2 * pad, wid + 2 * pad);
        if ph < k || pw < k {
            return Err(Error::shape("conv2d padded extent vs kernel", &[k, k], &[ph, pw]));
        }
        let oh = (ph - k) / stride + 1;
        let ow = (pw - k) / stride + 1;

        let padded = pad_channels(&self.node(x).value, ci, h, wid, pad, mode);
        let wv = &self.node(w).value;
        let mut out = vec![0.0; co * oh * ow];
        for oc in 0..co {
            let oplane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            for ic in 0..ci {
                let plane = &padded[ic * ph * pw..(ic + 1) * ph * pw];
                for kh in 0..k {
                    for kw in 0..k {
                        let wgt = wv[((oc * ci + ic) * k + kh) * k + kw];
                        for oi in 0..oh {
                            let prow = &plane[(oi * stride + kh) * pw + kw..];
                            let orow = &mut oplane[oi * ow..(oi + 1) * ow];
                            if stride == 1 {
                                for (o, p) in orow.iter_mut().zip(prow.iter()) {
                                    *o += wgt * p;
                                }
                            } else {
                                for (oj, o) in orow.iter_mut().enumerate() {
                                    *o += wgt * prow[oj * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Op::Conv2d { stride, pad, mode },
            vec![x, w],
            vec![co, oh, ow],
            out,
        ))
    }

    /// Dense layer on a vector: y = W·x + b with W of shape [m, n].
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.node(x).shape.clone();
        let ws = self.node(w).shape.clone();
        let bs = self.node(b).shape.clone();
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] || bs != [ws[0]] {
            return Err(Error::shape("linear", &[ws[0], xs[0]], &ws));
        }
        let (m, n) = (ws[0], ws[1]);
        let xv = &self.node(x).value;
        let wv = &self.node(w).value;
        let bv = &self.node(b).value;
        let mut value = vec![0.0; m];
        for i in 0..m {
            let row = &wv[i * n..(i + 1) * n];
            let mut acc = bv[i];
            for (rw, xx) in row.iter().zip(xv.iter()) {
                acc += rw * xx;
            }
            value[i] = acc;
        }
        Ok(self.push(Op::Linear, vec![x, w, b], vec![m], value))
    }

    /// Per-channel normalization over the spatial extent of a C×H×W tensor.
    pub fn instance_norm(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let xs = self.node(x).shape.clone();
        if xs.len() != 3 {
            return Err(Error::shape("instance_norm", &[3], &[xs.len()]));
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        let src = &self.node(x).value;
        let mut value = vec![0.0; c * hw];
        for ch in 0..c {
            let plane = &src[ch * hw..(ch + 1) * hw];
            let mu: f64 = plane.iter().sum::<f64>() / hw as f64;
            let var: f64 = plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / hw as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in value[ch * hw..(ch + 1) * hw].iter_mut().zip(plane.iter()) {
                *o = (v - mu) * inv;
            }
        }
        Ok(self.push(Op::InstanceNorm { eps }, vec![x], xs, value))
    }

    /// Mean over all elements, as a scalar node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v: f64 = self.node(a).value.iter().sum::<f64>() / self.node(a).value.len() as f64;
        self.push(Op::Mean, vec![a], vec![1], vec![v])
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::InvalidArg(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.accumulate(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { graph: self, grads })
    }

    fn accumulate(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn gin<'a>(
            grads: &'a mut [Option<Vec<f64>>],
            id: NodeId,
            len: usize,
        ) -> &'a mut Vec<f64> {
            grads[id.0].get_or_insert_with(|| vec![0.0; len])
        }
        let len_of = |id: NodeId| self.node(id).value.len();

        match node.op {
            Op::Input => {}
            Op::Add => {
                let a = node.inputs[0];
                for (g, &v) in gin(grads, a, len_of(a)).iter_mut().zip(gy) {
                    *g += v;
                }
                let b = node.inputs[1];
                for (g, &v) in gin(grads, b, len_of(b)).iter_mut().zip(gy) {
                    *g += v;
                }
            }
            Op::Sub => {
                let a = node.inputs[0];
                for (g, &v) in gin(grads, a, len_of(a)).iter_mut().zip(gy) {
                    *g += v;
                }
                let b = node.inputs[1];
                for (g, &v) in gin(grads, b, len_of(b)).iter_mut().zip(gy) {
                    *g -= v;
                }
            }
            Op::Mul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let bv = &self.node(b).value;
                let ga = gin(grads, a, bv.len());
                for ((g, &v), &other) in ga.iter_mut().zip(gy).zip(bv.iter()) {
                    *g += v * other;
                }
                let av = &self.node(a).value;
                let gb = gin(grads, b, av.len());
                for ((g, &v), &other) in gb.iter_mut().zip(gy).zip(av.iter()) {
                    *g += v * other;
                }
            }
            Op::Scale(c) => {
                let a = node.inputs[0];
                for (g, &v) in gin(grads, a, len_of(a)).iter_mut().zip(gy) {
                    *g += c * v;
                }
            }
            Op::AddConst(_) => {
                let a = node.inputs[0];
                for (g, &v) in gin(grads, a, len_of(a)).iter_mut().zip(gy) {
                    *g += v;
                }
            }
            Op::Silu => {
                let a = node.inputs[0];
                let xv = &self.node(a).value;
                let ga = gin(grads, a, xv.len());
                for ((g, &v), &x) in ga.iter_mut().zip(gy).zip(xv.iter()) {
                    let s = sigmoid(x);
                    *g += v * s * (1.0 + x * (1.0 - s));
                }
            }
            Op::Abs => {
                let a = node.inputs[0];
                let xv = &self.node(a).value;
                let ga = gin(grads, a, xv.len());
                for ((g, &v), &x) in ga.iter_mut().zip(gy).zip(xv.iter()) {
                    *g += v * if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
                }
            }
            Op::Mean => {
                let a = node.inputs[0];
                let n = len_of(a);
                let gv = gy[0] / n as f64;
                for g in gin(grads, a, n).iter_mut() {
                    *g += gv;
                }
            }
            Op::BiasAdd => {
                let (c, hw) = (node.shape[0], node.shape[1] * node.shape[2]);
                let x = node.inputs[0];
                for (g, &v) in gin(grads, x, len_of(x)).iter_mut().zip(gy) {
                    *g += v;
                }
                let b = node.inputs[1];
                let gb = gin(grads, b, c);
                for ch in 0..c {
                    let s: f64 = gy[ch * hw..(ch + 1) * hw].iter().sum();
                    gb[ch] += s;
                }
            }
            Op::ChanScale => {
                let (c, hw) = (node.shape[0], node.shape[1] * node.shape[2]);
                let (x, s) = (node.inputs[0], node.inputs[1]);
                let sv = &self.node(s).value;
                let gx = gin(grads, x, c * hw);
                for ch in 0..c {
                    let svv = sv[ch];
                    for (g, &v) in gx[ch * hw..(ch + 1) * hw]
                        .iter_mut()
                        .zip(&gy[ch * hw..(ch + 1) * hw])
                    {
                        *g += v * svv;
                    }
                }
                let xv = &self.node(x).value;
                let gs = gin(grads, s, c);
                for ch in 0..c {
                    let acc: f64 = gy[ch * hw..(ch + 1) * hw]
                        .iter()
                        .zip(&xv[ch * hw..(ch + 1) * hw])
                        .map(|(&g, &x)| g * x)
                        .sum();
                    gs[ch] += acc;
                }
            }
            Op::Upsample2 => {
                let (c, oh, ow) = (node.shape[0], node.shape[1], node.shape[2]);
                let (h, w) = (oh / 2, ow / 2);
                let x = node.inputs[0];
                let gx = gin(grads, x, c * h * w);
                for ch in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            let base = (ch * oh + 2 * i) * ow + 2 * j;
                            gx[(ch * h + i) * w + j] +=
                                gy[base] + gy[base + 1] + gy[base + ow] + gy[base + ow + 1];
                        }
                    }
                }
            }
            Op::ConcatC => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let na = len_of(a);
                for (g, &v) in gin(grads, a, na).iter_mut().zip(&gy[..na]) {
                    *g += v;
                }
                let nb = len_of(b);
                for (g, &v) in gin(grads, b, nb).iter_mut().zip(&gy[na..]) {
                    *g += v;
                }
            }
            Op::Linear => {
                let (x, w, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let n = len_of(x);
                let m = node.value.len();
                {
                    let wv = &self.node(w).value;
                    let gx = gin(grads, x, n);
                    for i in 0..m {
                        let row = &wv[i * n..(i + 1) * n];
                        for (g, rw) in gx.iter_mut().zip(row) {
                            *g += gy[i] * rw;
                        }
                    }
                }
                {
                    let xv = &self.node(x).value;
                    let gw = gin(grads, w, m * n);
                    for i in 0..m {
                        for (g, xx) in gw[i * n..(i + 1) * n].iter_mut().zip(xv.iter()) {
                            *g += gy[i] * xx;
                        }
                    }
                }
                for (g, &v) in gin(grads, b, m).iter_mut().zip(gy) {
                    *g += v;
                }
            }
            Op::InstanceNorm { eps } => {
                let (c, hw) = (node.shape[0], node.shape[1] * node.shape[2]);
                let x = node.inputs[0];
                let xv = &self.node(x).value;
                let yv = &node.value;
                let gx = gin(grads, x, c * hw);
                for ch in 0..c {
                    let plane = &xv[ch * hw..(ch + 1) * hw];
                    let yplane = &yv[ch * hw..(ch + 1) * hw];
                    let gplane = &gy[ch * hw..(ch + 1) * hw];
                    let mu: f64 = plane.iter().sum::<f64>() / hw as f64;
                    let var: f64 =
                        plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / hw as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let gmean: f64 = gplane.iter().sum::<f64>() / hw as f64;
                    let gydot: f64 =
                        gplane.iter().zip(yplane).map(|(&g, &y)| g * y).sum::<f64>() / hw as f64;
                    for ((g, &gyv), &y) in gx[ch * hw..(ch + 1) * hw]
                        .iter_mut()
                        .zip(gplane)
                        .zip(yplane)
                    {
                        *g += inv * (gyv - gmean - y * gydot);
                    }
                }
            }
            Op::Conv2d { stride, pad, mode } => {
                let (x, w) = (node.inputs[0], node.inputs[1]);
                let xs = &self.node(x).shape;
                let ws = &self.node(w).shape;
                let (ci, h, wid) = (xs[0], xs[1], xs[2]);
                let (co, k) = (ws[0], ws[2]);
                let (oh, ow) = (node.shape[1], node.shape[2]);
                let (ph, pw) = (h + 2 * pad, wid + 2 * pad);
                let padded = pad_channels(&self.node(x).value, ci, h, wid, pad, mode);
                let wv = &self.node(w).value;

                // kernel gradient
                {
                    let gw = gin(grads, w, co * ci * k * k);
                    for oc in 0..co {
                        let gplane = &gy[oc * oh * ow..(oc + 1) * oh * ow];
                        for ic in 0..ci {
                            let plane = &padded[ic * ph * pw..(ic + 1) * ph * pw];
                            for kh in 0..k {
                                for kw in 0..k {
                                    let mut acc = 0.0;
                                    for oi in 0..oh {
                                        let prow = &plane[(oi * stride + kh) * pw + kw..];
                                        let grow = &gplane[oi * ow..(oi + 1) * ow];
                                        if stride == 1 {
                                            for (g, p) in grow.iter().zip(prow.iter()) {
                                                acc += g * p;
                                            }
                                        } else {
                                            for (oj, g) in grow.iter().enumerate() {
                                                acc += g * prow[oj * stride];
                                            }
                                        }
                                    }
                                    gw[((oc * ci + ic) * k + kh) * k + kw] += acc;
                                }
                            }
                        }
                    }
                }

                // input gradient via the padded buffer, folded back through the border map
                let mut gpad = vec![0.0; ci * ph * pw];
                for oc in 0..co {
                    let gplane = &gy[oc * oh * ow..(oc + 1) * oh * ow];
                    for ic in 0..ci {
                        let pplane = &mut gpad[ic * ph * pw..(ic + 1) * ph * pw];
                        for kh in 0..k {
                            for kw in 0..k {
                                let wgt = wv[((oc * ci + ic) * k + kh) * k + kw];
                                for oi in 0..oh {
                                    let prow = &mut pplane[(oi * stride + kh) * pw + kw..];
                                    let grow = &gplane[oi * ow..(oi + 1) * ow];
                                    if stride == 1 {
                                        for (p, g) in prow.iter_mut().zip(grow.iter()) {
                                            *p += wgt * g;
                                        }
                                    } else {
                                        for (oj, g) in grow.iter().enumerate() {
                                            prow[oj * stride] += wgt * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                let gx = gin(grads, x, ci * h * wid);
                fold_padded(&gpad, ci, h, wid, pad, mode, gx);
            }
        }
    }
}

/// Gradients produced by a backward sweep.
pub struct Gradients<'g> {
    graph: &'g Graph,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients<'_> {
    /// Gradient for a node; zero tensor when the node does not reach the loss.
    pub fn grad(&self, id: NodeId) -> Tensor {
        let shape = &self.graph.node(id).shape;
        match &self.grads[id.0] {
            Some(g) => Tensor::from_f64(shape, g),
            None => Tensor::zeros(shape),
        }
    }

    pub fn grad_f64(&self, id: NodeId) -> Vec<f64> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.graph.node(id).value.len()],
        }
    }
}

/// ∂loss/∂p for each listed parameter node.
pub fn reverse_gradients(graph: &Graph, loss: NodeId, params: &[NodeId]) -> Result<Vec<Tensor>> {
    let grads = graph.backward(loss)?;
    Ok(params.iter().map(|&p| grads.grad(p)).collect())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Border index map. Reflect mirrors without repeating the edge sample.
#[inline]
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
    m as usize
}

fn pad_channels(src: &[f64], c: usize, h: usize, w: usize, pad: usize, mode: PadMode) -> Vec<f64> {
    if pad == 0 {
        return src.to_vec();
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; c * ph * pw];
    let p = pad as isize;
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let oplane = &mut out[ch * ph * pw..(ch + 1) * ph * pw];
        for pi in 0..ph {
            let si = pi as isize - p;
            match mode {
                PadMode::Zero => {
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let srow = &plane[si as usize * w..(si as usize + 1) * w];
                    for pj in 0..pw {
                        let sj = pj as isize - p;
                        if sj >= 0 && sj < w as isize {
                            oplane[pi * pw + pj] = srow[sj as usize];
                        }
                    }
                }
                PadMode::Reflect => {
                    let srow = &plane[reflect_index(si, h) * w..];
                    for pj in 0..pw {
                        let sj = reflect_index(pj as isize - p, w);
                        oplane[pi * pw + pj] = srow[sj];
                    }
                }
            }
        }
    }
    out
}

/// Accumulate a padded-buffer gradient back onto the source extent.
fn fold_padded(gpad: &[f64], c: usize, h: usize, w: usize, pad: usize, mode: PadMode, gx: &mut [f64]) {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let p = pad as isize;
    for ch in 0..c {
        let pplane = &gpad[ch * ph * pw..(ch + 1) * ph * pw];
        let xplane = &mut gx[ch * h * w..(ch + 1) * h * w];
        for pi in 0..ph {
            let si = pi as isize - p;
            for pj in 0..pw {
                let sj = pj as isize - p;
                let g = pplane[pi * pw + pj];
                if g == 0.0 {
                    continue;
                }
                match mode {
                    PadMode::Zero => {
                        if si >= 0 && si < h as isize && sj >= 0 && sj < w as isize {
                            xplane[si as usize * w + sj as usize] += g;
                        }
                    }
                    PadMode::Reflect => {
                        xplane[reflect_index(si, h) * w + reflect_index(sj, w)] += g;
                    }
                }
            }
        }
    }
}
