use super::arch::{self, Backend, LayerKind};
use super::ModelParams;
use crate::error::Result;
use crate::tensor::{Gradients, Scalar, Tape, Tensor, Var};

/// A model's parameters bound as leaves of a fresh [`Tape`]. Forward ops
/// record onto `tape`; [`Graph::backward`] returns per-layer gradients.
pub struct Graph<'m, T: Scalar> {
    pub tape: Tape<T>,
    model: &'m ModelParams<T>,
    vars: Vec<(Var, Var)>,
}

/// Branch outputs and fused map of one Siamese group.
#[derive(Debug, Clone, Copy)]
pub struct SiamGroupOutput {
    pub img: Var,
    pub lidar: Var,
    pub fused: Var,
}

/// Gradients for every layer, `(weight, bias)`, in layer order. `None` marks
/// a tensor the loss does not reach.
#[derive(Debug)]
pub struct ParamGrads<T: Scalar> {
    pub layers: Vec<(Option<Vec<T>>, Option<Vec<T>>)>,
}

impl<'m, T: Scalar> Graph<'m, T> {
    pub fn new(model: &'m ModelParams<T>) -> Self {
        let mut tape = Tape::new();
        let vars = model
            .layers()
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect();
        Self { tape, model, vars }
    }

    pub fn model(&self) -> &ModelParams<T> {
        self.model
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.tape.leaf(value)
    }

    /// `(weight, bias)` leaves of the named layer.
    pub fn param_vars(&self, name: &str) -> Result<(Var, Var)> {
        Ok(self.vars[self.model.position(name)?])
    }

    /// Full network: logits `[N, classes, H, W]` at the input resolution.
    pub fn forward(&mut self, rgb: Var, lidar: Var) -> Result<Var> {
        let strategy = self.model.config().strategy;
        arch::forward(self, strategy, rgb, lidar)
    }

    /// Siamese group `group` (1-based) on branch inputs of equal shape.
    pub fn siam_group(&mut self, group: usize, img: Var, lidar: Var) -> Result<SiamGroupOutput> {
        let (pooled, fused) = arch::siam_group(self, group, img, lidar, true)?;
        let (img, lidar) = pooled.expect("pooling requested");
        Ok(SiamGroupOutput { img, lidar, fused })
    }

    /// Decoder from the deepest tap plus the two skip maps, cropped to `target`.
    pub fn fcn8s_head(&mut self, head_in: Var, skip16: Var, skip8: Var, target: (usize, usize)) -> Result<Var> {
        arch::fcn8s_head(self, head_in, skip16, skip8, target)
    }

    pub fn backward(self, loss: Var) -> Result<ParamGrads<T>> {
        let mut grads: Gradients<T> = self.tape.backward(loss)?;
        let layers = self
            .vars
            .iter()
            .map(|&(w, b)| (grads.take(w), grads.take(b)))
            .collect();
        Ok(ParamGrads { layers })
    }
}

impl<T: Scalar> Backend for Graph<'_, T> {
    type V = Var;

    fn dims(&self, v: Var) -> [usize; 4] {
        let s = self.tape.shape(v);
        [s[0], s[1], s[2], s[3]]
    }

    fn layer(&mut self, name: &str, x: Var) -> Result<Var> {
        let i = self.model.position(name)?;
        let (w, b) = self.vars[i];
        let spec = &self.model.layers()[i].spec;
        let (stride, pad) = (spec.conv.stride, spec.conv.padding);
        match spec.kind {
            LayerKind::Conv => self.tape.conv2d(x, w, b, stride, pad),
            LayerKind::TransposedConv => self.tape.conv_transpose2d(x, w, b, stride, pad),
        }
    }

    fn upsample(&mut self, name: &str, x: Var, size: (usize, usize)) -> Result<Var> {
        let y = self.layer(name, x)?;
        self.tape.center_crop(y, size.0, size.1)
    }

    fn relu(&mut self, x: Var) -> Var {
        self.tape.relu(x)
    }

    fn pool(&mut self, x: Var) -> Result<Var> {
        self.tape.max_pool2d_ceil(x)
    }

    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.tape.add(a, b)
    }

    fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.tape.concat_channels(a, b)
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Adds `grads` into each tensor's gradient buffer.
    pub fn accumulate(&mut self, grads: &ParamGrads<T>) -> Result<()> {
        for (layer, (gw, gb)) in self.layers_mut().iter_mut().zip(&grads.layers) {
            if let Some(g) = gw {
                layer.weight.accumulate_grad(g)?;
            }
            if let Some(g) = gb {
                layer.bias.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

/// Inference: logits for one `[N, 3, H, W]` RGB / LiDAR pair.
pub fn model_forward<T: Scalar>(model: &ModelParams<T>, rgb: &Tensor<T>, lidar: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new(model);
    let r = g.input(rgb.clone().with_requires_grad(false));
    let l = g.input(lidar.clone().with_requires_grad(false));
    let logits = g.forward(r, l)?;
    Ok(g.tape.value(logits).clone().with_requires_grad(false))
}
