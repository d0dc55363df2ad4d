use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PanoGeometry;
use crate::grid::{ClassMap, DepthMap, Mask, RgbImage};
use crate::tinynn::{
    concat_channels, leaky_relu, leaky_relu_backward, nearest_upsample, nearest_upsample_backward,
    relu, relu_backward, resize_nearest, sigmoid, sigmoid_backward, split_channels, Conv, Grads, ParamStore,
    PartialConv, Spade, SpadeCache, Tensor4,
};

/// Slope of the leaky activations inside the generator and discriminator.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageConfig {
    pub class_count: usize,
    pub width: usize,
    pub height: usize,
    pub d_max: f64,
    /// Output channels of the stem conv that precedes the blocks.
    pub base_width: usize,
    /// Output channels of each residual block; the first block runs at
    /// 1/8 resolution and every later block doubles it.
    pub block_widths: Vec<usize>,
    /// Hidden channels of every SPADE conditioning net.
    pub spade_hidden: usize,
    /// Channels produced by the partial conv over the RGB guidance.
    pub guide_channels: usize,
    pub init_seed: u64,
}

impl Default for ImageConfig {
    fn default() -> Self {
        ImageConfig {
            class_count: crate::palette::CLASS_COUNT,
            width: 128,
            height: 64,
            d_max: crate::geom::D_MAX,
            base_width: 32,
            block_widths: vec![32, 32, 16, 8],
            spade_hidden: 16,
            guide_channels: 8,
            init_seed: 0,
        }
    }
}

impl ImageConfig {
    pub fn validate(&self) -> Result<()> {
        let blocks = self.block_widths.len();
        if blocks == 0 {
            return Err(Error::Domain("image generator needs at least one block".into()));
        }
        let f = 1usize << (blocks - 1);
        if !self.width.is_multiple_of(f) || !self.height.is_multiple_of(f) {
            return Err(Error::Domain(format!(
                "geometry {}x{} must be divisible by {f} for {blocks} blocks",
                self.width, self.height
            )));
        }
        if self.class_count < 2 || self.base_width == 0 || self.spade_hidden == 0 || self.guide_channels == 0 {
            return Err(Error::Domain("image generator widths must be positive".into()));
        }
        if self.block_widths.contains(&0) {
            return Err(Error::Domain("block widths must be positive".into()));
        }
        self.geometry()?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<PanoGeometry> {
        PanoGeometry::new(self.width, self.height)
    }

    /// Channels of the semantic/depth condition: one-hot classes and depth.
    pub fn cond_channels(&self) -> usize {
        self.class_count + 1
    }

    fn stem_dims(&self) -> (usize, usize) {
        let f = 1usize << (self.block_widths.len() - 1);
        (self.height / f, self.width / f)
    }
}

/// One-hot classes followed by depth / `d_max`, for a batch of maps.
pub fn encode_condition(class_count: usize, d_max: f64, maps: &[(&ClassMap, &DepthMap)]) -> Result<Tensor4> {
    let Some((s0, _)) = maps.first() else {
        return Err(Error::Shape("empty condition batch".into()));
    };
    let (w, h) = (s0.width(), s0.height());
    let mut t = Tensor4::zeros([maps.len(), class_count + 1, h, w]);
    for (n, (sem, depth)) in maps.iter().enumerate() {
        sem.check_dims(depth, "condition depth")?;
        if sem.width() != w || sem.height() != h {
            return Err(Error::Shape("condition maps differ in size".into()));
        }
        for y in 0..h {
            for x in 0..w {
                let c = *sem.get(x, y) as usize;
                if c >= class_count {
                    return Err(Error::Data(format!("class id {c} out of range for {class_count} classes")));
                }
                *t.at_mut(n, c, y, x) = 1.0;
                *t.at_mut(n, class_count, y, x) = (*depth.get(x, y) / d_max).clamp(0.0, 1.0);
            }
        }
    }
    Ok(t)
}

/// RGB in [0, 1] as a `[n, 3, h, w]` tensor.
pub fn rgb_to_tensor(images: &[&RgbImage]) -> Result<Tensor4> {
    let Some(first) = images.first() else {
        return Err(Error::Shape("empty image batch".into()));
    };
    let (w, h) = (first.width(), first.height());
    let mut t = Tensor4::zeros([images.len(), 3, h, w]);
    for (n, img) in images.iter().enumerate() {
        if img.width() != w || img.height() != h {
            return Err(Error::Shape("images differ in size".into()));
        }
        for y in 0..h {
            for x in 0..w {
                for (c, &v) in img.get(x, y).iter().enumerate() {
                    *t.at_mut(n, c, y, x) = v as f64 / 255.0;
                }
            }
        }
    }
    Ok(t)
}

/// Sample `n` of a `[_, 3, h, w]` tensor as an 8-bit image.
pub fn tensor_to_rgb(t: &Tensor4, n: usize) -> Result<RgbImage> {
    if t.c() != 3 || n >= t.n() {
        return Err(Error::Shape(format!("cannot read image {n} from tensor {:?}", t.shape())));
    }
    Ok(RgbImage::from_fn(t.w(), t.h(), |x, y| {
        [0, 1, 2].map(|c| (t.at(n, c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8)
    }))
}

/// Guidance RGB (zero where invalid) and its `[n, 1, h, w]` validity mask.
pub fn encode_guide(images: &[(&RgbImage, &Mask)]) -> Result<(Tensor4, Tensor4)> {
    let rgbs: Vec<_> = images.iter().map(|(r, _)| *r).collect();
    let mut rgb = rgb_to_tensor(&rgbs)?;
    let (w, h) = (rgb.w(), rgb.h());
    let mut mask = Tensor4::zeros([images.len(), 1, h, w]);
    for (n, (_, m)) in images.iter().enumerate() {
        if m.width() != w || m.height() != h {
            return Err(Error::Shape("guidance mask does not match its image".into()));
        }
        for y in 0..h {
            for x in 0..w {
                if *m.get(x, y) {
                    *mask.at_mut(n, 0, y, x) = 1.0;
                } else {
                    for c in 0..3 {
                        *rgb.at_mut(n, c, y, x) = 0.0;
                    }
                }
            }
        }
    }
    Ok((rgb, mask))
}

/// Residual block with two modulation sites: the first conditioned on
/// semantics and depth, the second on the mask-aware RGB guidance features.
#[derive(Clone, Debug)]
pub struct MultiSpadeBlock {
    pub spade_sd: Spade,
    pub conv1: Conv,
    pub spade_rgb: Spade,
    pub conv2: Conv,
    pub shortcut: Option<Conv>,
}

struct BlockCache {
    x: Tensor4,
    s1: SpadeCache,
    n1: Tensor4,
    s2: SpadeCache,
    n2: Tensor4,
}

impl MultiSpadeBlock {
    fn new(
        s: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        cfg: &ImageConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let guide_cond = cfg.guide_channels + 1;
        Ok(MultiSpadeBlock {
            spade_sd: Spade::new(s, &format!("{name}.spade_sd"), cfg.cond_channels(), cin, cfg.spade_hidden, rng)?,
            conv1: Conv::new(s, &format!("{name}.conv1"), cin, cout, 3, 1, rng)?,
            spade_rgb: Spade::new(s, &format!("{name}.spade_rgb"), guide_cond, cout, cfg.spade_hidden, rng)?,
            conv2: Conv::new(s, &format!("{name}.conv2"), cout, cout, 3, 1, rng)?,
            shortcut: if cin == cout {
                None
            } else {
                Some(Conv::new(s, &format!("{name}.shortcut"), cin, cout, 1, 1, rng)?)
            },
        })
    }

    fn forward(&self, s: &ParamStore, x: &Tensor4, sd: &Tensor4, rgb: &Tensor4) -> Result<(Tensor4, BlockCache)> {
        let (n1, s1) = self.spade_sd.forward(s, x, sd)?;
        let h1 = self.conv1.forward(s, &leaky_relu(&n1, LEAKY_SLOPE))?;
        let (n2, s2) = self.spade_rgb.forward(s, &h1, rgb)?;
        let mut out = self.conv2.forward(s, &leaky_relu(&n2, LEAKY_SLOPE))?;
        match &self.shortcut {
            Some(c) => out.add_assign(&c.forward(s, x)?)?,
            None => out.add_assign(x)?,
        }
        Ok((
            out,
            BlockCache {
                x: x.clone(),
                s1,
                n1,
                s2,
                n2,
            },
        ))
    }

    /// Returns gradients for the block input and the RGB-guidance condition;
    /// the semantic condition is an input and needs none.
    fn backward(&self, s: &ParamStore, g: &mut Grads, c: &BlockCache, dout: &Tensor4) -> Result<(Tensor4, Tensor4)> {
        let a2 = leaky_relu(&c.n2, LEAKY_SLOPE);
        let da2 = self.conv2.backward(s, g, &a2, dout)?;
        let dn2 = leaky_relu_backward(&c.n2, &da2, LEAKY_SLOPE)?;
        let (dh1, drgb) = self.spade_rgb.backward(s, g, &c.s2, &dn2)?;
        let a1 = leaky_relu(&c.n1, LEAKY_SLOPE);
        let da1 = self.conv1.backward(s, g, &a1, &dh1)?;
        let dn1 = leaky_relu_backward(&c.n1, &da1, LEAKY_SLOPE)?;
        let (mut dx, _) = self.spade_sd.backward(s, g, &c.s1, &dn1)?;
        match &self.shortcut {
            Some(conv) => dx.add_assign(&conv.backward(s, g, &c.x, dout)?)?,
            None => dx.add_assign(dout)?,
        }
        Ok((dx, drgb))
    }
}

/// Batch inputs of the image generator, already in tensor form.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageInputs {
    /// `[n, C + 1, h, w]` from [`encode_condition`].
    pub cond: Tensor4,
    /// `[n, 3, h, w]` guidance RGB, zero where invalid.
    pub guide_rgb: Tensor4,
    /// `[n, 1, h, w]` guidance validity.
    pub guide_mask: Tensor4,
}

/// Intermediate values of a generator forward pass.
pub struct GenCache {
    guide_pre: Tensor4,
    guide_cond: Tensor4,
    stem_in: Tensor4,
    blocks: Vec<BlockCache>,
    /// Block outputs before upsampling.
    block_out: Vec<Tensor4>,
    last: Tensor4,
    rgb: Tensor4,
}

/// Multi-SPADE RGB generator.
#[derive(Clone, Debug)]
pub struct ImageGenerator {
    config: ImageConfig,
    store: ParamStore,
    guide_conv: PartialConv,
    stem: Conv,
    blocks: Vec<MultiSpadeBlock>,
    head: Conv,
}

impl ImageGenerator {
    pub fn new(config: ImageConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut s = ParamStore::new();
        let guide_conv = PartialConv::new(&mut s, "guide", 3, config.guide_channels, 3, &mut rng)?;
        let stem = Conv::new(&mut s, "stem", config.cond_channels(), config.base_width, 3, 1, &mut rng)?;
        let mut blocks = Vec::new();
        let mut cin = config.base_width;
        for (i, &w) in config.block_widths.iter().enumerate() {
            blocks.push(MultiSpadeBlock::new(&mut s, &format!("block{i}"), cin, w, &config, &mut rng)?);
            cin = w;
        }
        let head = Conv::new(&mut s, "head", cin, 3, 3, 1, &mut rng)?;
        Ok(ImageGenerator {
            config,
            store: s,
            guide_conv,
            stem,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ImageConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn blocks(&self) -> &[MultiSpadeBlock] {
        &self.blocks
    }

    /// Zeroes the scale and shift maps of every RGB-guidance modulation site,
    /// cutting the guidance out of the generator.
    pub fn ablate_rgb_guidance(&mut self) {
        for b in &self.blocks {
            for conv in [&b.spade_rgb.gamma, &b.spade_rgb.beta] {
                for id in [conv.weight, conv.bias] {
                    self.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
    }

    fn check_inputs(&self, inp: &ImageInputs) -> Result<()> {
        let n = inp.cond.n();
        let (h, w) = (self.config.height, self.config.width);
        inp.cond.check_shape([n, self.config.cond_channels(), h, w], "generator condition")?;
        inp.guide_rgb.check_shape([n, 3, h, w], "generator guidance")?;
        inp.guide_mask.check_shape([n, 1, h, w], "generator guidance mask")?;
        Ok(())
    }

    /// RGB in [0, 1], `[n, 3, h, w]`.
    pub fn forward(&self, inp: &ImageInputs) -> Result<Tensor4> {
        Ok(self.forward_with(&self.store, inp)?.0)
    }

    pub fn forward_with(&self, s: &ParamStore, inp: &ImageInputs) -> Result<(Tensor4, GenCache)> {
        self.check_inputs(inp)?;
        let (guide_pre, new_mask) = self.guide_conv.forward(s, &inp.guide_rgb, &inp.guide_mask)?;
        let guide_cond = concat_channels(&[&relu(&guide_pre), &new_mask])?;
        let (sh, sw) = self.config.stem_dims();
        let stem_in = resize_nearest(&inp.cond, sh, sw);
        let mut x = self.stem.forward(s, &stem_in)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut block_out = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                x = nearest_upsample(&x, 2);
            }
            let (y, c) = b.forward(s, &x, &inp.cond, &guide_cond)?;
            blocks.push(c);
            block_out.push(y.clone());
            x = y;
        }
        let last = leaky_relu(&x, LEAKY_SLOPE);
        let rgb = sigmoid(&self.head.forward(s, &last)?);
        Ok((
            rgb.clone(),
            GenCache {
                guide_pre,
                guide_cond,
                stem_in,
                blocks,
                block_out,
                last,
                rgb,
            },
        ))
    }

    /// Accumulates parameter gradients for an upstream gradient on the
    /// output image.
    pub fn backward(&self, s: &ParamStore, grads: &mut Grads, inp: &ImageInputs, c: &GenCache, drgb: &Tensor4) -> Result<()> {
        let dpre = sigmoid_backward(&c.rgb, drgb)?;
        let dlast = self.head.backward(s, grads, &c.last, &dpre)?;
        let x_last = c.block_out.last().expect("at least one block");
        let mut dx = leaky_relu_backward(x_last, &dlast, LEAKY_SLOPE)?;
        let mut dguide = Tensor4::zeros(c.guide_cond.shape());
        for i in (0..self.blocks.len()).rev() {
            let (dxi, dg) = self.blocks[i].backward(s, grads, &c.blocks[i], &dx)?;
            dguide.add_assign(&dg)?;
            dx = if i > 0 { nearest_upsample_backward(&dxi, 2) } else { dxi };
        }
        self.stem.backward(s, grads, &c.stem_in, &dx)?;
        // The updated mask channel carries no gradient.
        let parts = split_channels(&dguide, &[self.config.guide_channels, 1])?;
        let dpre_g = relu_backward(&c.guide_pre, &parts[0])?;
        self.guide_conv.backward(s, grads, &inp.guide_rgb, &inp.guide_mask, &dpre_g)?;
        Ok(())
    }

    /// Generates one RGB panorama from semantics, depth (meters) and sparse
    /// RGB guidance.
    pub fn generate_rgb(&self, sem: &ClassMap, depth: &DepthMap, guide_rgb: &RgbImage, guide_mask: &Mask) -> Result<RgbImage> {
        let cond = encode_condition(self.config.class_count, self.config.d_max, &[(sem, depth)])?;
        let (guide_rgb, guide_mask) = encode_guide(&[(guide_rgb, guide_mask)])?;
        let out = self.forward(&ImageInputs {
            cond,
            guide_rgb,
            guide_mask,
        })?;
        tensor_to_rgb(&out, 0)
    }
}

/// Fixed, randomly initialized conv stack standing in for a pretrained
/// perceptual network. Exposes the activations after every stage.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    store: ParamStore,
    convs: Vec<Conv>,
}

/// Activations of every [`FeatureExtractor`] stage and their inputs.
pub struct FeatureTrace {
    pub features: Vec<Tensor4>,
    pre: Vec<Tensor4>,
    inputs: Vec<Tensor4>,
}

impl FeatureExtractor {
    /// Stages 3→8 (stride 1), 8→16 (stride 2), 16→32 (stride 2).
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let convs = [(3, 8, 1), (8, 16, 2), (16, 32, 2)]
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, stride))| Conv::new(&mut store, &format!("fx{i}"), cin, cout, 3, stride, &mut rng))
            .collect::<Result<_>>()?;
        Ok(FeatureExtractor { store, convs })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn trace(&self, x: &Tensor4) -> Result<FeatureTrace> {
        let mut t = FeatureTrace {
            features: Vec::new(),
            pre: Vec::new(),
            inputs: Vec::new(),
        };
        let mut cur = x.clone();
        for c in &self.convs {
            let pre = c.forward(&self.store, &cur)?;
            let f = relu(&pre);
            t.inputs.push(cur);
            t.pre.push(pre);
            t.features.push(f.clone());
            cur = f;
        }
        Ok(t)
    }

    pub fn features(&self, x: &Tensor4) -> Result<Vec<Tensor4>> {
        Ok(self.trace(x)?.features)
    }

    /// Gradient with respect to the input for upstream gradients on every
    /// stage's features. Weights stay frozen.
    pub fn backward(&self, t: &FeatureTrace, dfeatures: &[Tensor4]) -> Result<Tensor4> {
        if dfeatures.len() != self.convs.len() {
            return Err(Error::Shape(format!("{} feature gradients for {} stages", dfeatures.len(), self.convs.len())));
        }
        let mut scratch = Grads::zeros_like(&self.store);
        let mut carry: Option<Tensor4> = None;
        for i in (0..self.convs.len()).rev() {
            let mut d = dfeatures[i].clone();
            if let Some(c) = carry.take() {
                d.add_assign(&c)?;
            }
            let dpre = relu_backward(&t.pre[i], &d)?;
            carry = Some(self.convs[i].backward(&self.store, &mut scratch, &t.inputs[i], &dpre)?);
        }
        Ok(carry.expect("at least one stage"))
    }
}
