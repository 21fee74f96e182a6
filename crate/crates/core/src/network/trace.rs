use std::collections::HashMap;
use std::fmt::Write as _;

use super::arch::{self, architecture, Backend, LayerKind, LayerSpec};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::tensor::pool_output_len_ceil;

/// One parameterized layer as executed: kernel `(kh, kw, c_in, c_out)`,
/// stride, and spatial sizes. For transposed convolutions `output` is the
/// size after the alignment crop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub layer: String,
    pub kernel: (usize, usize, usize, usize),
    pub stride: usize,
    pub input: (usize, usize),
    pub output: (usize, usize),
}

struct ShapeTracer {
    specs: HashMap<String, LayerSpec>,
    values: Vec<[usize; 4]>,
    rows: Vec<TraceRow>,
}

impl ShapeTracer {
    fn push(&mut self, dims: [usize; 4]) -> usize {
        self.values.push(dims);
        self.values.len() - 1
    }

    fn apply(&mut self, name: &str, x: usize) -> Result<(usize, [usize; 4])> {
        let spec = self
            .specs
            .get(name)
            .ok_or_else(|| Error::Config(format!("no layer {name}")))?;
        let [n, c, h, w] = self.values[x];
        let conv = spec.conv;
        if c != conv.c_in {
            return Err(Error::shape(format!("{name} expects {} channels, got {c}", conv.c_in)));
        }
        let (oh, ow) = match spec.kind {
            LayerKind::Conv => conv.conv_output_size(h, w)?,
            LayerKind::TransposedConv => conv.transpose_output_size(h, w)?,
        };
        self.rows.push(TraceRow {
            layer: name.to_owned(),
            kernel: (conv.kh, conv.kw, conv.c_in, conv.c_out),
            stride: conv.stride.0,
            input: (h, w),
            output: (oh, ow),
        });
        let dims = [n, conv.c_out, oh, ow];
        Ok((self.push(dims), dims))
    }
}

impl Backend for ShapeTracer {
    type V = usize;

    fn dims(&self, v: usize) -> [usize; 4] {
        self.values[v]
    }

    fn layer(&mut self, name: &str, x: usize) -> Result<usize> {
        Ok(self.apply(name, x)?.0)
    }

    fn upsample(&mut self, name: &str, x: usize, size: (usize, usize)) -> Result<usize> {
        let (_, [n, c, h, w]) = self.apply(name, x)?;
        if size.0 > h || size.1 > w {
            return Err(Error::shape(format!("{name} output {h}x{w} cannot be cropped to {size:?}")));
        }
        self.rows.last_mut().expect("row just pushed").output = size;
        Ok(self.push([n, c, size.0, size.1]))
    }

    fn relu(&mut self, x: usize) -> usize {
        x
    }

    fn pool(&mut self, x: usize) -> Result<usize> {
        let [n, c, h, w] = self.values[x];
        let dims = [n, c, pool_output_len_ceil(h, 2, 2)?, pool_output_len_ceil(w, 2, 2)?];
        Ok(self.push(dims))
    }

    fn add(&mut self, a: usize, b: usize) -> Result<usize> {
        if self.values[a] != self.values[b] {
            return Err(Error::shape(format!("add {:?} + {:?}", self.values[a], self.values[b])));
        }
        Ok(a)
    }

    fn concat(&mut self, a: usize, b: usize) -> Result<usize> {
        let ([n, ca, h, w], [nb, cb, hb, wb]) = (self.values[a], self.values[b]);
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(format!("concat {:?} with {:?}", self.values[a], self.values[b])));
        }
        Ok(self.push([n, ca + cb, h, w]))
    }
}

/// Runs the forward pass on shapes only (no weights are allocated), in the
/// order layers execute.
pub fn trace_architecture(config: &NetConfig) -> Result<Vec<TraceRow>> {
    let specs = architecture(config)?
        .into_iter()
        .map(|s| (s.name.clone(), s))
        .collect();
    let mut tracer = ShapeTracer { specs, values: Vec::new(), rows: Vec::new() };
    let (h, w) = config.input_size;
    let rgb = tracer.push([1, 3, h, w]);
    let lidar = tracer.push([1, 3, h, w]);
    let out = arch::forward(&mut tracer, config.strategy, rgb, lidar)?;
    let [_, c, oh, ow] = tracer.values[out];
    if (c, oh, ow) != (config.num_classes, h, w) {
        return Err(Error::shape(format!("network output {c}x{oh}x{ow} for input {h}x{w}")));
    }
    Ok(tracer.rows)
}

/// Plain-text manifest, one aligned row per layer.
pub fn render_manifest(rows: &[TraceRow]) -> String {
    let mut out = format!("{:<12} {:<20} {:>6} {:>12} {:>12}\n", "layer", "kernel", "stride", "input", "output");
    for r in rows {
        let (kh, kw, ci, co) = r.kernel;
        let _ = writeln!(
            out,
            "{:<12} {:<20} {:>6} {:>12} {:>12}",
            r.layer,
            format!("({kh},{kw},{ci},{co})"),
            r.stride,
            format!("({},{})", r.input.0, r.input.1),
            format!("({},{})", r.output.0, r.output.1),
        );
    }
    out
}
