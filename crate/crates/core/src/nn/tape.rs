//! Layer-granular reverse-mode differentiation.
//!
//! Model code is written once against [`Graph`]. [`Eval`] runs it directly;
//! [`GradTape`] additionally records every op together with the activations
//! its backward pass needs, and [`backward`] replays the record in reverse.

use std::collections::HashMap;

use indexmap::IndexMap;

use super::act::{prelu, prelu_backward};
use super::conv::{self, conv2d, conv2d_adjoint, conv2d_weight_grad, ConvGeom};
use super::fc::{fully_connected, fully_connected_backward};
use super::lstm::{
    bilstm_frames, bilstm_frames_backward, lstm_per_bin, lstm_per_bin_backward, BinStates, IntraCache, LstmCache,
    LstmGrads, LstmParams,
};
use super::norm::{batch_norm, batch_norm_backward, batch_norm_cached, iln, iln_backward, iln_cached, BnCache, BnMode, BnParams, IlnCache};
use super::tensor::{Real, Tensor};
use super::ILN_EPS;
use crate::error::{Error, Result};

/// Named parameter store shared by the model, the tape and the optimizer.
pub type ParamMap<T> = IndexMap<String, Tensor<T>>;

pub fn param<'a, T: Real>(params: &'a ParamMap<T>, name: &str) -> Result<&'a Tensor<T>> {
    params.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
}

pub fn lstm_params<'a, T: Real>(params: &'a ParamMap<T>, prefix: &str) -> Result<LstmParams<'a, T>> {
    Ok(LstmParams {
        w_ih: param(params, &format!("{prefix}.w_ih"))?,
        w_hh: param(params, &format!("{prefix}.w_hh"))?,
        bias: param(params, &format!("{prefix}.bias"))?,
    })
}

pub fn bn_params<'a, T: Real>(params: &'a ParamMap<T>, prefix: &str) -> Result<BnParams<'a, T>> {
    Ok(BnParams {
        gamma: param(params, &format!("{prefix}.gamma"))?,
        beta: param(params, &format!("{prefix}.beta"))?,
        running_mean: param(params, &format!("{prefix}.running_mean"))?,
        running_var: param(params, &format!("{prefix}.running_var"))?,
    })
}

/// The op vocabulary of the network.
pub trait Graph<T: Real> {
    type V: Clone;

    fn params(&self) -> &ParamMap<T>;
    fn value<'s>(&'s self, v: &'s Self::V) -> &'s Tensor<T>;
    fn input(&mut self, x: Tensor<T>) -> Self::V;
    fn conv(&mut self, x: &Self::V, prefix: &str, geom: ConvGeom) -> Result<Self::V>;
    /// Causal transposed convolution; `geom` is the anticausal forward geometry.
    fn conv_t(&mut self, y: &Self::V, prefix: &str, geom: ConvGeom) -> Result<Self::V>;
    fn batch_norm(&mut self, x: &Self::V, prefix: &str) -> Result<Self::V>;
    fn prelu(&mut self, x: &Self::V, name: &str) -> Result<Self::V>;
    fn iln(&mut self, x: &Self::V, prefix: &str) -> Result<Self::V>;
    fn fc(&mut self, x: &Self::V, prefix: &str) -> Result<Self::V>;
    fn intra_bilstm(&mut self, x: &Self::V, prefix: &str) -> Result<Self::V>;
    fn inter_lstm(&mut self, x: &Self::V, prefix: &str) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn concat(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
}

fn transposed_target<T: Real>(y: &Tensor<T>, geom: &ConvGeom) -> Result<(usize, usize)> {
    let (t, f, _) = y.dims3();
    geom.transposed_dims(t, f)
        .ok_or_else(|| Error::ShapeMismatch(format!("transposed conv crop {:?} too large", geom.freq_pad)))
}

fn conv_t_eval<T: Real>(params: &ParamMap<T>, y: &Tensor<T>, prefix: &str, geom: ConvGeom) -> Result<Tensor<T>> {
    let w = param(params, &format!("{prefix}.weight"))?;
    let b = param(params, &format!("{prefix}.bias"))?;
    if b.len() != w.dim(1) {
        return Err(Error::ShapeMismatch(format!("{prefix}: bias {:?}", b.shape())));
    }
    let target = transposed_target(y, &geom)?;
    let mut x = conv2d_adjoint(y, w, &geom, target)?;
    conv::add_bias(&mut x, b);
    Ok(x)
}

fn add_tensors<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("add {:?} + {:?}", a.shape(), b.shape())));
    }
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

/// Direct evaluation without recording. Batch norm uses running statistics
/// unless constructed with [`Eval::with_mode`].
pub struct Eval<'p, T: Real> {
    params: &'p ParamMap<T>,
    mode: BnMode,
    prelu_inputs: Option<Vec<T>>,
}

impl<'p, T: Real> Eval<'p, T> {
    pub fn new(params: &'p ParamMap<T>) -> Self {
        Self::with_mode(params, BnMode::Infer)
    }

    /// Evaluation with training-mode batch norm (statistics of the input).
    pub fn with_mode(params: &'p ParamMap<T>, mode: BnMode) -> Self {
        Self { params, mode, prelu_inputs: None }
    }

    /// Also records every PReLU input element in evaluation order.
    pub fn recording_prelu(params: &'p ParamMap<T>, mode: BnMode) -> Self {
        Self { params, mode, prelu_inputs: Some(Vec::new()) }
    }

    pub fn prelu_inputs(&self) -> Option<&[T]> {
        self.prelu_inputs.as_deref()
    }
}

impl<'p, T: Real> Graph<T> for Eval<'p, T> {
    type V = Tensor<T>;

    fn params(&self) -> &ParamMap<T> {
        self.params
    }
    fn value<'s>(&'s self, v: &'s Tensor<T>) -> &'s Tensor<T> {
        v
    }
    fn input(&mut self, x: Tensor<T>) -> Tensor<T> {
        x
    }
    fn conv(&mut self, x: &Tensor<T>, prefix: &str, geom: ConvGeom) -> Result<Tensor<T>> {
        let w = param(self.params, &format!("{prefix}.weight"))?;
        let b = param(self.params, &format!("{prefix}.bias"))?;
        conv2d(x, w, Some(b), &geom)
    }
    fn conv_t(&mut self, y: &Tensor<T>, prefix: &str, geom: ConvGeom) -> Result<Tensor<T>> {
        conv_t_eval(self.params, y, prefix, geom)
    }
    fn batch_norm(&mut self, x: &Tensor<T>, prefix: &str) -> Result<Tensor<T>> {
        batch_norm(x, bn_params(self.params, prefix)?, self.mode)
    }
    fn prelu(&mut self, x: &Tensor<T>, name: &str) -> Result<Tensor<T>> {
        if let Some(rec) = self.prelu_inputs.as_mut() {
            rec.extend_from_slice(x.data());
        }
        prelu(x, param(self.params, name)?)
    }
    fn iln(&mut self, x: &Tensor<T>, prefix: &str) -> Result<Tensor<T>> {
        let g = param(self.params, &format!("{prefix}.gamma"))?;
        let b = param(self.params, &format!("{prefix}.beta"))?;
        iln(x, g, b, T::of(ILN_EPS))
    }
    fn fc(&mut self, x: &Tensor<T>, prefix: &str) -> Result<Tensor<T>> {
        let w = param(self.params, &format!("{prefix}.weight"))?;
        let b = param(self.params, &format!("{prefix}.bias"))?;
        fully_connected(x, w, b)
    }
    fn intra_bilstm(&mut self, x: &Tensor<T>, prefix: &str) -> Result<Tensor<T>> {
        let pf = lstm_params(self.params, &format!("{prefix}.fwd"))?;
        let pb = lstm_params(self.params, &format!("{prefix}.bwd"))?;
        bilstm_frames(x, &pf, &pb, false).map(|(y, _)| y)
    }
    fn inter_lstm(&mut self, x: &Tensor<T>, prefix: &str) -> Result<Tensor<T>> {
        let p = lstm_params(self.params, prefix)?;
        let mut state = BinStates::zeros(x.dim(1), p.hidden());
        lstm_per_bin(x, &p, &mut state, false).map(|(y, _)| y)
    }
    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        add_tensors(a, b)
    }
    fn concat(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        Tensor::concat_channels(a, b)
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op<T: Real> {
    Leaf,
    Conv { x: NodeId, prefix: String, geom: ConvGeom },
    ConvT { y: NodeId, prefix: String, geom: ConvGeom },
    BatchNorm { x: NodeId, prefix: String, cache: BnCache<T> },
    Prelu { x: NodeId, name: String },
    Iln { x: NodeId, prefix: String, cache: IlnCache<T> },
    Fc { x: NodeId, prefix: String },
    IntraBiLstm { x: NodeId, prefix: String, cache: IntraCache<T> },
    InterLstm { x: NodeId, prefix: String, caches: Vec<LstmCache<T>> },
    Add { a: NodeId, b: NodeId },
    Concat { a: NodeId, b: NodeId, split: usize },
}

#[derive(Debug, Clone)]
struct Node<T: Real> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Recorded forward pass over a borrowed parameter store.
pub struct GradTape<'p, T: Real> {
    params: &'p ParamMap<T>,
    mode: BnMode,
    nodes: Vec<Node<T>>,
    output: Option<NodeId>,
    bn_stats: Vec<(String, (Vec<T>, Vec<T>))>,
}

impl<'p, T: Real> GradTape<'p, T> {
    pub fn new(params: &'p ParamMap<T>, mode: BnMode) -> Self {
        Self {
            params,
            mode,
            nodes: Vec::new(),
            output: None,
            bn_stats: Vec::new(),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn val(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    /// Marks `id` as the scalar-producing end of the recorded pass.
    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    pub fn output(&self) -> Option<&Tensor<T>> {
        self.output.map(|id| self.val(id))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Batch statistics observed by training-mode batch norms, keyed by the
    /// layer prefix, in recording order.
    pub fn bn_batch_stats(&self) -> &[(String, (Vec<T>, Vec<T>))] {
        &self.bn_stats
    }
}

impl<'p, T: Real> Graph<T> for GradTape<'p, T> {
    type V = NodeId;

    fn params(&self) -> &ParamMap<T> {
        self.params
    }
    fn value<'s>(&'s self, v: &'s NodeId) -> &'s Tensor<T> {
        self.val(*v)
    }
    fn input(&mut self, x: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, x)
    }
    fn conv(&mut self, x: &NodeId, prefix: &str, geom: ConvGeom) -> Result<NodeId> {
        let y = Eval::new(self.params).conv(self.val(*x), prefix, geom)?;
        Ok(self.push(Op::Conv { x: *x, prefix: prefix.into(), geom }, y))
    }
    fn conv_t(&mut self, y: &NodeId, prefix: &str, geom: ConvGeom) -> Result<NodeId> {
        let x = conv_t_eval(self.params, self.val(*y), prefix, geom)?;
        Ok(self.push(Op::ConvT { y: *y, prefix: prefix.into(), geom }, x))
    }
    fn batch_norm(&mut self, x: &NodeId, prefix: &str) -> Result<NodeId> {
        let (y, cache) = batch_norm_cached(self.val(*x), bn_params(self.params, prefix)?, self.mode)?;
        if let Some(stats) = &cache.batch_stats {
            self.bn_stats.push((prefix.to_string(), stats.clone()));
        }
        Ok(self.push(Op::BatchNorm { x: *x, prefix: prefix.into(), cache }, y))
    }
    fn prelu(&mut self, x: &NodeId, name: &str) -> Result<NodeId> {
        let y = prelu(self.val(*x), param(self.params, name)?)?;
        Ok(self.push(Op::Prelu { x: *x, name: name.into() }, y))
    }
    fn iln(&mut self, x: &NodeId, prefix: &str) -> Result<NodeId> {
        let g = param(self.params, &format!("{prefix}.gamma"))?;
        let b = param(self.params, &format!("{prefix}.beta"))?;
        let (y, cache) = iln_cached(self.val(*x), g, b)?;
        Ok(self.push(Op::Iln { x: *x, prefix: prefix.into(), cache }, y))
    }
    fn fc(&mut self, x: &NodeId, prefix: &str) -> Result<NodeId> {
        let y = Eval::new(self.params).fc(self.val(*x), prefix)?;
        Ok(self.push(Op::Fc { x: *x, prefix: prefix.into() }, y))
    }
    fn intra_bilstm(&mut self, x: &NodeId, prefix: &str) -> Result<NodeId> {
        let pf = lstm_params(self.params, &format!("{prefix}.fwd"))?;
        let pb = lstm_params(self.params, &format!("{prefix}.bwd"))?;
        let (y, cache) = bilstm_frames(self.val(*x), &pf, &pb, true)?;
        Ok(self.push(
            Op::IntraBiLstm {
                x: *x,
                prefix: prefix.into(),
                cache: cache.unwrap(),
            },
            y,
        ))
    }
    fn inter_lstm(&mut self, x: &NodeId, prefix: &str) -> Result<NodeId> {
        let p = lstm_params(self.params, prefix)?;
        let mut state = BinStates::zeros(self.val(*x).dim(1), p.hidden());
        let (y, caches) = lstm_per_bin(self.val(*x), &p, &mut state, true)?;
        Ok(self.push(
            Op::InterLstm {
                x: *x,
                prefix: prefix.into(),
                caches: caches.unwrap(),
            },
            y,
        ))
    }
    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let y = add_tensors(self.val(*a), self.val(*b))?;
        Ok(self.push(Op::Add { a: *a, b: *b }, y))
    }
    fn concat(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let split = self.val(*a).dims3().2;
        let y = Tensor::concat_channels(self.val(*a), self.val(*b))?;
        Ok(self.push(Op::Concat { a: *a, b: *b, split }, y))
    }
}

/// Parameter and leaf gradients of a recorded pass.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real> {
    /// One entry per parameter touched by the pass, in first-use order.
    pub params: ParamMap<T>,
    /// Gradients reaching each [`Graph::input`] leaf.
    pub leaves: HashMap<NodeId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }
}

fn acc_param<T: Real>(grads: &mut ParamMap<T>, name: String, g: Tensor<T>) {
    match grads.get_mut(&name) {
        Some(t) => t.add_assign(&g),
        None => {
            grads.insert(name, g);
        }
    }
}

fn acc_node<T: Real>(slots: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut slots[id] {
        Some(t) => t.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn store_lstm<T: Real>(grads: &mut ParamMap<T>, prefix: &str, g: LstmGrads<T>) {
    acc_param(grads, format!("{prefix}.w_ih"), g.w_ih);
    acc_param(grads, format!("{prefix}.w_hh"), g.w_hh);
    acc_param(grads, format!("{prefix}.bias"), g.bias);
}

/// Propagates `loss_grad` (the gradient of the loss with respect to the
/// tape's output) back to every parameter and input leaf.
pub fn backward<T: Real>(tape: &GradTape<'_, T>, loss_grad: &Tensor<T>) -> Result<Gradients<T>> {
    let out = tape.output.ok_or(Error::IncompleteTape("no output node recorded"))?;
    if tape.val(out).shape() != loss_grad.shape() {
        return Err(Error::ShapeMismatch(format!(
            "loss gradient {:?} for output {:?}",
            loss_grad.shape(),
            tape.val(out).shape()
        )));
    }
    let params = tape.params;
    let mut slots: Vec<Option<Tensor<T>>> = vec![None; tape.nodes.len()];
    slots[out] = Some(loss_grad.clone());
    let mut grads = ParamMap::new();
    let mut leaves = HashMap::new();

    for id in (0..=out).rev() {
        let Some(dy) = slots[id].take() else { continue };
        let node = &tape.nodes[id];
        match &node.op {
            Op::Leaf => {
                leaves.insert(id, dy);
            }
            Op::Conv { x, prefix, geom } => {
                let xv = tape.val(*x);
                let w = param(params, &format!("{prefix}.weight"))?;
                let dx = conv2d_adjoint(&dy, w, geom, (xv.dim(0), xv.dim(1)))?;
                acc_param(&mut grads, format!("{prefix}.weight"), conv2d_weight_grad(xv, &dy, geom));
                acc_param(&mut grads, format!("{prefix}.bias"), conv::channel_sum(&dy));
                acc_node(&mut slots, *x, dx);
            }
            Op::ConvT { y, prefix, geom } => {
                let yv = tape.val(*y);
                let w = param(params, &format!("{prefix}.weight"))?;
                let dyin = conv2d(&dy, w, None, geom)?;
                acc_param(&mut grads, format!("{prefix}.weight"), conv2d_weight_grad(&dy, yv, geom));
                acc_param(&mut grads, format!("{prefix}.bias"), conv::channel_sum(&dy));
                acc_node(&mut slots, *y, dyin);
            }
            Op::BatchNorm { x, prefix, cache } => {
                let gamma = param(params, &format!("{prefix}.gamma"))?;
                let (dx, dg, db) = batch_norm_backward(&dy, gamma, cache);
                acc_param(&mut grads, format!("{prefix}.gamma"), dg);
                acc_param(&mut grads, format!("{prefix}.beta"), db);
                acc_node(&mut slots, *x, dx);
            }
            Op::Prelu { x, name } => {
                let (dx, da) = prelu_backward(tape.val(*x), param(params, name)?, &dy);
                acc_param(&mut grads, name.clone(), da);
                acc_node(&mut slots, *x, dx);
            }
            Op::Iln { x, prefix, cache } => {
                let gamma = param(params, &format!("{prefix}.gamma"))?;
                let (dx, dg, db) = iln_backward(&dy, gamma, cache);
                acc_param(&mut grads, format!("{prefix}.gamma"), dg);
                acc_param(&mut grads, format!("{prefix}.beta"), db);
                acc_node(&mut slots, *x, dx);
            }
            Op::Fc { x, prefix } => {
                let w = param(params, &format!("{prefix}.weight"))?;
                let (dx, dw, db) = fully_connected_backward(tape.val(*x), w, &dy);
                acc_param(&mut grads, format!("{prefix}.weight"), dw);
                acc_param(&mut grads, format!("{prefix}.bias"), db);
                acc_node(&mut slots, *x, dx);
            }
            Op::IntraBiLstm { x, prefix, cache } => {
                let (fp, bp) = (format!("{prefix}.fwd"), format!("{prefix}.bwd"));
                let pf = lstm_params(params, &fp)?;
                let pb = lstm_params(params, &bp)?;
                let mut gf = LstmGrads::zeros_like(&pf);
                let mut gb = LstmGrads::zeros_like(&pb);
                let dx = bilstm_frames_backward(&pf, &pb, cache, &dy, &mut gf, &mut gb);
                store_lstm(&mut grads, &fp, gf);
                store_lstm(&mut grads, &bp, gb);
                acc_node(&mut slots, *x, dx);
            }
            Op::InterLstm { x, prefix, caches } => {
                let p = lstm_params(params, prefix)?;
                let mut g = LstmGrads::zeros_like(&p);
                let dx = lstm_per_bin_backward(&p, caches, &dy, &mut g);
                store_lstm(&mut grads, prefix, g);
                acc_node(&mut slots, *x, dx);
            }
            Op::Add { a, b } => {
                acc_node(&mut slots, *b, dy.clone());
                acc_node(&mut slots, *a, dy);
            }
            Op::Concat { a, b, split } => {
                let (da, db) = dy.split_channels(*split);
                acc_node(&mut slots, *b, db);
                acc_node(&mut slots, *a, da);
            }
        }
    }
    Ok(Gradients { params: grads, leaves })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fc_sum_bias_gradient_is_ones() {
        let mut params = ParamMap::new();
        let mut eye = Tensor::<f64>::param_zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        params.insert("fc.weight".into(), eye);
        params.insert("fc.bias".into(), Tensor::param_zeros(&[3]));
        let mut tape = GradTape::new(&params, BnMode::Infer);
        let x = tape.input(Tensor::param(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = tape.fc(&x, "fc").unwrap();
        tape.set_output(y);
        let ones = Tensor::filled(&[2, 3], tape.value(&y).axes(), 1.0);
        let g = backward(&tape, &ones).unwrap();
        assert_eq!(g.get("fc.bias").unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.leaves[&x].data(), &[1.0; 6]);
    }

    #[test]
    fn unfinished_tape_is_rejected() {
        let params = ParamMap::<f64>::new();
        let tape = GradTape::new(&params, BnMode::Infer);
        let g = Tensor::param_zeros(&[1]);
        assert!(matches!(backward(&tape, &g), Err(Error::IncompleteTape(_))));
    }

    #[test]
    fn missing_parameter_is_named() {
        let params = ParamMap::<f32>::new();
        let mut ev = Eval::new(&params);
        let x = Tensor::param_zeros(&[1, 2]);
        match ev.fc(&x, "head") {
            Err(Error::MissingTensor(name)) => assert_eq!(name, "head.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
