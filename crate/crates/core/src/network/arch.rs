use super::{FusionStrategy, NetConfig, MIN_INPUT_SIDE};
use crate::error::{Error, Result};
use crate::tensor::ConvSpec;

pub const GROUPS: usize = 5;

/// Convolutions per branch in encoder group `group` (1-based), as in VGG-16.
pub fn convs_in_group(group: usize) -> usize {
    if group <= 2 {
        2
    } else {
        3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    TransposedConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamInit {
    HeNormal,
    Zero,
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub conv: ConvSpec,
    pub init: ParamInit,
}

impl LayerSpec {
    fn conv(name: impl Into<String>, k: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv,
            conv: ConvSpec::same(k, c_in, c_out),
            init: ParamInit::HeNormal,
        }
    }

    fn score(name: impl Into<String>, c_in: usize, classes: usize) -> Self {
        Self {
            init: ParamInit::Zero,
            ..Self::conv(name, 1, c_in, classes)
        }
    }

    fn upsample(name: &str, classes: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::TransposedConv,
            conv: ConvSpec {
                kh: k,
                kw: k,
                c_in: classes,
                c_out: classes,
                stride: (stride, stride),
                padding: (pad, pad),
            },
            init: ParamInit::Bilinear,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::Conv => self.conv.conv_weight_shape(),
            LayerKind::TransposedConv => self.conv.transpose_weight_shape(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count()
    }
}

fn branch(layers: &mut Vec<LayerSpec>, cfg: &NetConfig, prefix: &str, group: usize, c_in: usize) {
    let c = cfg.channels(group);
    for i in 1..=convs_in_group(group) {
        let cin = if i == 1 { c_in } else { c };
        layers.push(LayerSpec::conv(format!("{prefix}{group}_{i}"), 3, cin, c));
    }
}

fn input_channels(cfg: &NetConfig, group: usize, first: usize) -> usize {
    if group == 1 {
        first
    } else {
        cfg.channels(group - 1)
    }
}

/// Every parameterized layer of the configured network, in forward order.
pub fn architecture(cfg: &NetConfig) -> Result<Vec<LayerSpec>> {
    cfg.validate()?;
    let mut layers = Vec::new();
    match cfg.strategy {
        FusionStrategy::Siamese => {
            for g in 1..=GROUPS {
                let c_in = input_channels(cfg, g, 3);
                branch(&mut layers, cfg, "ImgConv", g, c_in);
                branch(&mut layers, cfg, "LdaConv", g, c_in);
                let c = cfg.channels(g);
                layers.push(LayerSpec::conv(format!("FuseConv{g}"), 3, 2 * c, c));
            }
        }
        FusionStrategy::Early => {
            for g in 1..=GROUPS {
                branch(&mut layers, cfg, "Conv", g, input_channels(cfg, g, 6));
            }
        }
        FusionStrategy::Late => {
            for prefix in ["ImgConv", "LdaConv"] {
                for g in 1..=GROUPS {
                    branch(&mut layers, cfg, prefix, g, input_channels(cfg, g, 3));
                }
            }
            for g in [5, 4, 3] {
                let c = cfg.channels(g);
                layers.push(LayerSpec::conv(format!("LateFuse{g}"), 1, 2 * c, c));
            }
        }
    }
    let k = cfg.num_classes;
    layers.push(LayerSpec::conv("Fc6", 7, cfg.channels(5), cfg.head_width));
    layers.push(LayerSpec::conv("Fc7", 1, cfg.head_width, cfg.head_width));
    layers.push(LayerSpec::score("Score", cfg.head_width, k));
    layers.push(LayerSpec::upsample("TransConv1", k, 4, 2, 1));
    layers.push(LayerSpec::score("ScoreSkip1", cfg.channels(4), k));
    layers.push(LayerSpec::upsample("TransConv2", k, 4, 2, 1));
    layers.push(LayerSpec::score("ScoreSkip2", cfg.channels(3), k));
    layers.push(LayerSpec::upsample("TransConv3", k, 16, 4, 6));
    Ok(layers)
}

/// Operations the forward pass needs; implemented by the autodiff graph and
/// by the shape tracer.
pub(crate) trait Backend {
    type V: Copy;

    fn dims(&self, v: Self::V) -> [usize; 4];
    /// Applies the named layer (convolution or transposed convolution).
    fn layer(&mut self, name: &str, x: Self::V) -> Result<Self::V>;
    /// Transposed convolution followed by a centre crop to `size`.
    fn upsample(&mut self, name: &str, x: Self::V, size: (usize, usize)) -> Result<Self::V>;
    fn relu(&mut self, x: Self::V) -> Self::V;
    fn pool(&mut self, x: Self::V) -> Result<Self::V>;
    fn add(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn concat(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
}

fn conv_relu<B: Backend>(b: &mut B, name: &str, x: B::V) -> Result<B::V> {
    let y = b.layer(name, x)?;
    Ok(b.relu(y))
}

fn conv_stack<B: Backend>(b: &mut B, prefix: &str, group: usize, mut x: B::V) -> Result<B::V> {
    for i in 1..=convs_in_group(group) {
        x = conv_relu(b, &format!("{prefix}{group}_{i}"), x)?;
    }
    Ok(x)
}

/// One Siamese group. The fused map stays at the group's resolution; the
/// branch outputs are `pool(branch) + pool(fused)` when `pool` is set.
pub(crate) fn siam_group<B: Backend>(
    b: &mut B,
    group: usize,
    img: B::V,
    lidar: B::V,
    pool: bool,
) -> Result<(Option<(B::V, B::V)>, B::V)> {
    if b.dims(img) != b.dims(lidar) {
        return Err(Error::shape(format!(
            "Siamese group {group}: image branch {:?} vs LiDAR branch {:?}",
            b.dims(img),
            b.dims(lidar)
        )));
    }
    let img_feat = conv_stack(b, "ImgConv", group, img)?;
    let lidar_feat = conv_stack(b, "LdaConv", group, lidar)?;
    let cat = b.concat(img_feat, lidar_feat)?;
    let fused = conv_relu(b, &format!("FuseConv{group}"), cat)?;
    if !pool {
        return Ok((None, fused));
    }
    let pooled_fused = b.pool(fused)?;
    let pi = b.pool(img_feat)?;
    let pl = b.pool(lidar_feat)?;
    let img_out = b.add(pi, pooled_fused)?;
    let lidar_out = b.add(pl, pooled_fused)?;
    Ok((Some((img_out, lidar_out)), fused))
}

/// FCN-8s decoder: three head convolutions, then x2, x2 and x4 transposed
/// convolutions with 1x1-scored skips added after the first two.
pub(crate) fn fcn8s_head<B: Backend>(
    b: &mut B,
    head_in: B::V,
    skip16: B::V,
    skip8: B::V,
    target: (usize, usize),
) -> Result<B::V> {
    let fc6 = conv_relu(b, "Fc6", head_in)?;
    let fc7 = conv_relu(b, "Fc7", fc6)?;
    let score = b.layer("Score", fc7)?;
    let mut x = score;
    for (up, skip_score, skip) in [("TransConv1", "ScoreSkip1", skip16), ("TransConv2", "ScoreSkip2", skip8)] {
        let [_, _, h, w] = b.dims(skip);
        let upsampled = b.upsample(up, x, (h, w))?;
        let scored = b.layer(skip_score, skip)?;
        x = b.add(upsampled, scored)?;
    }
    b.upsample("TransConv3", x, target)
}

/// Encoder taps at the resolution of groups 5, 4 and 3.
struct Taps<V> {
    g5: V,
    g4: V,
    g3: V,
}

impl<V: Copy> Taps<V> {
    fn from(maps: &[V]) -> Self {
        Self { g5: maps[4], g4: maps[3], g3: maps[2] }
    }
}

fn single_stack<B: Backend>(b: &mut B, prefix: &str, mut x: B::V) -> Result<Vec<B::V>> {
    let mut maps = Vec::with_capacity(GROUPS);
    for g in 1..=GROUPS {
        let feat = conv_stack(b, prefix, g, x)?;
        maps.push(feat);
        if g < GROUPS {
            x = b.pool(feat)?;
        }
    }
    Ok(maps)
}

pub(crate) fn forward<B: Backend>(
    b: &mut B,
    strategy: FusionStrategy,
    rgb: B::V,
    lidar: B::V,
) -> Result<B::V> {
    let [_, _, h, w] = b.dims(rgb);
    if h < MIN_INPUT_SIDE || w < MIN_INPUT_SIDE {
        return Err(Error::Config(format!(
            "input {h}x{w} is smaller than {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}"
        )));
    }
    if b.dims(lidar) != b.dims(rgb) {
        return Err(Error::shape(format!(
            "RGB {:?} and LiDAR {:?} inputs differ",
            b.dims(rgb),
            b.dims(lidar)
        )));
    }
    let taps = match strategy {
        FusionStrategy::Siamese => {
            let (mut img, mut lda) = (rgb, lidar);
            let mut fused = Vec::with_capacity(GROUPS);
            for g in 1..=GROUPS {
                let (next, f) = siam_group(b, g, img, lda, g < GROUPS)?;
                fused.push(f);
                if let Some((i, l)) = next {
                    (img, lda) = (i, l);
                }
            }
            Taps::from(&fused)
        }
        FusionStrategy::Early => {
            let x = b.concat(rgb, lidar)?;
            Taps::from(&single_stack(b, "Conv", x)?)
        }
        FusionStrategy::Late => {
            let img = single_stack(b, "ImgConv", rgb)?;
            let lda = single_stack(b, "LdaConv", lidar)?;
            let mut fuse = |g: usize| -> Result<B::V> {
                let cat = b.concat(img[g - 1], lda[g - 1])?;
                conv_relu(b, &format!("LateFuse{g}"), cat)
            };
            Taps { g5: fuse(5)?, g4: fuse(4)?, g3: fuse(3)? }
        }
    };
    fcn8s_head(b, taps.g5, taps.g4, taps.g3, (h, w))
}
