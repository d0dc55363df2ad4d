use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::StructureConfig;
use super::gaussian::{kl_divergence, sample_z, sample_z_backward, GaussianParams, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::cloud::GuidanceImage;
use crate::error::{Error, Result};
use crate::grid::{ClassMap, DepthMap};
use crate::tinynn::{
    concat_channels, cross_entropy, l1_mean, relu, relu_backward, sigmoid, sigmoid_backward,
    split_channels, Conv, ConvT, Grads, ParamStore, Tensor4,
};

/// Encoder input for a batch of guidance images: one-hot classes (all zero
/// where invalid), depth divided by `d_max` (0 where invalid), validity.
pub fn encode_guidance(cfg: &StructureConfig, guides: &[&GuidanceImage]) -> Result<Tensor4> {
    let c = cfg.class_count;
    let (w, h) = (cfg.width, cfg.height);
    let mut t = Tensor4::zeros([guides.len().max(1), c + 2, h, w]);
    if guides.is_empty() {
        return Err(Error::Shape("empty guidance batch".into()));
    }
    for (n, g) in guides.iter().enumerate() {
        if g.valid.width() != w || g.valid.height() != h {
            return Err(Error::Shape(format!(
                "guidance is {}x{}, model expects {w}x{h}",
                g.valid.width(),
                g.valid.height()
            )));
        }
        for y in 0..h {
            for x in 0..w {
                if !*g.valid.get(x, y) {
                    continue;
                }
                let cls = *g.sem.get(x, y) as usize;
                if cls < c {
                    *t.at_mut(n, cls, y, x) = 1.0;
                }
                *t.at_mut(n, c, y, x) = (*g.depth.get(x, y) / cfg.d_max).clamp(0.0, 1.0);
                *t.at_mut(n, c + 1, y, x) = 1.0;
            }
        }
    }
    Ok(t)
}

/// Encoder input for fully observed frames (validity 1 everywhere).
pub fn encode_frames(cfg: &StructureConfig, frames: &[(&ClassMap, &DepthMap)]) -> Result<Tensor4> {
    let guides: Vec<GuidanceImage> = frames
        .iter()
        .map(|(s, d)| GuidanceImage {
            sem: (*s).clone(),
            depth: (*d).clone(),
            rgb: crate::grid::Grid::filled(s.width(), s.height(), [0; 3]),
            valid: crate::grid::Grid::filled(s.width(), s.height(), true),
        })
        .collect();
    for (s, _) in frames {
        if let Some(&bad) = s.as_slice().iter().find(|&&v| v as usize >= cfg.class_count) {
            return Err(Error::Data(format!(
                "ground-truth class {bad} is not below class count {}",
                cfg.class_count
            )));
        }
    }
    encode_guidance(cfg, &guides.iter().collect::<Vec<_>>())
}

/// Encoder activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub input: Tensor4,
    /// Post-ReLU outputs of the four stride-2 levels, finest first.
    pub levels: Vec<Tensor4>,
}

impl Encoded {
    pub fn bottleneck(&self) -> &Tensor4 {
        &self.levels[3]
    }

    pub fn skips(&self) -> &[Tensor4] {
        &self.levels[..3]
    }
}

#[derive(Clone, Debug)]
struct LatentCache {
    input: Tensor4,
    h1: Tensor4,
    h2: Tensor4,
    raw: Tensor4,
}

#[derive(Clone, Debug)]
struct DecodeCache {
    d4: Tensor4,
    cat3: Tensor4,
    d3: Tensor4,
    cat2: Tensor4,
    d2: Tensor4,
    cat1: Tensor4,
    d1: Tensor4,
    cat0: Tensor4,
    fused: Tensor4,
    /// Post-ReLU outputs of the refinement convs.
    refined: Vec<Tensor4>,
}

/// Semantic logits and normalized depth for a batch.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub logits: Tensor4,
    /// Depth in `(0, 1)`, multiply by `d_max` for meters.
    pub depth: Tensor4,
}

/// Loss components of one batch. `ce`, `depth` and `kl` are unweighted;
/// `total` applies the configured weights.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StructureLoss {
    pub total: f64,
    pub ce: f64,
    pub depth: f64,
    pub kl: f64,
}

/// A training batch: guidance, ground truth and reparameterization noise.
#[derive(Clone, Debug)]
pub struct StructureBatch {
    pub guide_input: Tensor4,
    pub gt_input: Tensor4,
    /// Ground-truth classes per `(n, y, x)`.
    pub gt_sem: Vec<u8>,
    /// Ground-truth depth divided by `d_max`.
    pub gt_depth: Tensor4,
    pub eps: Tensor4,
}

/// Encoder-decoder with skip connections, a learned conditional prior over a
/// spatial latent, and a posterior used for training.
#[derive(Clone, Debug)]
pub struct StructureGenerator {
    config: StructureConfig,
    store: ParamStore,
    enc: Vec<Conv>,
    prior_net: Vec<Conv>,
    post_net: Vec<Conv>,
    up4: ConvT,
    up3: ConvT,
    up2: ConvT,
    up1: ConvT,
    fuse: Conv,
    refine: Vec<Conv>,
    head: Conv,
    /// 1x1 path from the guidance encoding straight to the outputs.
    skip: Conv,
}

impl StructureGenerator {
    pub fn new(config: StructureConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut s = ParamStore::new();
        let [w1, w2, w3, w4] = config.widths;
        let z = config.latent_channels;
        let cin = config.input_channels();
        let r = &mut rng;
        let enc = vec![
            Conv::new(&mut s, "enc1", cin, w1, 3, 2, r)?,
            Conv::new(&mut s, "enc2", w1, w2, 3, 2, r)?,
            Conv::new(&mut s, "enc3", w2, w3, 3, 2, r)?,
            Conv::new(&mut s, "enc4", w3, w4, 3, 2, r)?,
        ];
        let latent_net = |s: &mut ParamStore, name: &str, r: &mut ChaCha8Rng| -> Result<Vec<Conv>> {
            let hidden = (w3 / 2).max(1);
            Ok(vec![
                Conv::new(s, &format!("{name}1"), w3, hidden, 3, 1, r)?,
                Conv::new(s, &format!("{name}2"), hidden, hidden, 3, 1, r)?,
                // small output scale keeps the initial distributions near N(0, 1)
                Conv::with_std(s, &format!("{name}3"), hidden, 2 * z, 3, 1, 0.01, r)?,
            ])
        };
        let prior_net = latent_net(&mut s, "prior", r)?;
        let post_net = latent_net(&mut s, "posterior", r)?;
        let up4 = ConvT::new(&mut s, "up4", w4, w3, 3, 2, r)?;
        let up3 = ConvT::new(&mut s, "up3", 2 * w3 + z, w2, 3, 2, r)?;
        let up2 = ConvT::new(&mut s, "up2", 2 * w2, w1, 3, 2, r)?;
        let up1 = ConvT::new(&mut s, "up1", 2 * w1, w1, 3, 2, r)?;
        let fuse = Conv::new(&mut s, "fuse", w1 + cin, w1, 3, 1, r)?;
        let refine = (0..config.refine_layers)
            .map(|i| Conv::new(&mut s, &format!("refine{}", i + 1), w1, w1, 3, 1, r))
            .collect::<Result<Vec<_>>>()?;
        let head = Conv::new(&mut s, "head", w1, config.class_count + 1, 3, 1, r)?;
        let skip = Conv::new(&mut s, "skip", cin, config.class_count + 1, 1, 1, r)?;
        Ok(StructureGenerator {
            config,
            store: s,
            enc,
            prior_net,
            post_net,
            up4,
            up3,
            up2,
            up1,
            fuse,
            refine,
            head,
            skip,
        })
    }

    pub fn config(&self) -> &StructureConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encode(&self, input: &Tensor4) -> Result<Encoded> {
        self.encode_with(&self.store, input)
    }

    fn encode_with(&self, s: &ParamStore, input: &Tensor4) -> Result<Encoded> {
        let cfg = &self.config;
        input.check_shape(
            [input.n(), cfg.input_channels(), cfg.height, cfg.width],
            "structure generator input",
        )?;
        let mut levels = Vec::with_capacity(4);
        let mut cur = input;
        for conv in &self.enc {
            levels.push(relu(&conv.forward(s, cur)?));
            cur = levels.last().unwrap();
        }
        Ok(Encoded {
            input: input.clone(),
            levels,
        })
    }

    fn latent_with(&self, s: &ParamStore, net: &[Conv], feat: &Tensor4) -> Result<(GaussianParams, LatentCache)> {
        let h1 = relu(&net[0].forward(s, feat)?);
        let h2 = relu(&net[1].forward(s, &h1)?);
        let out = net[2].forward(s, &h2)?;
        let z = self.config.latent_channels;
        let mut parts = split_channels(&out, &[z, z])?;
        let raw = parts.pop().unwrap();
        let mu = parts.pop().unwrap();
        let gp = GaussianParams::from_raw(mu, &raw)?;
        Ok((
            gp,
            LatentCache {
                input: feat.clone(),
                h1,
                h2,
                raw,
            },
        ))
    }

    fn latent_backward(
        &self,
        s: &ParamStore,
        grads: &mut Grads,
        net: &[Conv],
        cache: &LatentCache,
        dmu: &Tensor4,
        dlv: &Tensor4,
    ) -> Result<Tensor4> {
        let draw = cache.raw.zip_map(dlv, |r, d| {
            if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&r) {
                d
            } else {
                0.0
            }
        })?;
        let dout = concat_channels(&[dmu, &draw])?;
        let dh2 = net[2].backward(s, grads, &cache.h2, &dout)?;
        let dh2 = relu_backward(&cache.h2, &dh2)?;
        let dh1 = net[1].backward(s, grads, &cache.h1, &dh2)?;
        let dh1 = relu_backward(&cache.h1, &dh1)?;
        net[0].backward(s, grads, &cache.input, &dh1)
    }

    /// Conditional prior from encoded guidance.
    pub fn prior(&self, enc: &Encoded) -> Result<GaussianParams> {
        Ok(self.latent_with(&self.store, &self.prior_net, &enc.levels[2])?.0)
    }

    /// Posterior from encoded ground truth.
    pub fn posterior(&self, enc_gt: &Encoded) -> Result<GaussianParams> {
        Ok(self.latent_with(&self.store, &self.post_net, &enc_gt.levels[2])?.0)
    }

    pub fn decode(&self, enc: &Encoded, z: &Tensor4) -> Result<Decoded> {
        Ok(self.decode_with(&self.store, enc, z)?.0)
    }

    fn decode_with(&self, s: &ParamStore, enc: &Encoded, z: &Tensor4) -> Result<(Decoded, DecodeCache)> {
        let e = &enc.levels;
        z.check_shape(self.config.latent_shape(enc.input.n()), "latent")?;
        let d4 = relu(&self.up4.forward(s, &e[3])?);
        let cat3 = concat_channels(&[&d4, &e[2], z])?;
        let d3 = relu(&self.up3.forward(s, &cat3)?);
        let cat2 = concat_channels(&[&d3, &e[1]])?;
        let d2 = relu(&self.up2.forward(s, &cat2)?);
        let cat1 = concat_channels(&[&d2, &e[0]])?;
        let d1 = relu(&self.up1.forward(s, &cat1)?);
        let cat0 = concat_channels(&[&d1, &enc.input])?;
        let fused = relu(&self.fuse.forward(s, &cat0)?);
        let mut refined: Vec<Tensor4> = Vec::with_capacity(self.refine.len());
        for conv in &self.refine {
            let x = refined.last().unwrap_or(&fused);
            let h = relu(&conv.forward(s, x)?);
            refined.push(h);
        }
        let mut out = self.head.forward(s, refined.last().unwrap_or(&fused))?;
        out.add_assign(&self.skip.forward(s, &enc.input)?)?;
        let mut parts = split_channels(&out, &[self.config.class_count, 1])?;
        let depth = sigmoid(&parts.pop().unwrap());
        let logits = parts.pop().unwrap();
        Ok((
            Decoded { logits, depth },
            DecodeCache {
                d4,
                cat3,
                d3,
                cat2,
                d2,
                cat1,
                d1,
                cat0,
                fused,
                refined,
            },
        ))
    }

    /// Backward through the decoder. Returns gradients for the four encoder
    /// levels and the latent.
    #[allow(clippy::too_many_arguments)]
    fn decode_backward(
        &self,
        s: &ParamStore,
        grads: &mut Grads,
        enc: &Encoded,
        dec: &Decoded,
        cache: &DecodeCache,
        dlogits: &Tensor4,
        ddepth: &Tensor4,
    ) -> Result<(Vec<Tensor4>, Tensor4)> {
        let [w1, w2, w3, _] = self.config.widths;
        let z = self.config.latent_channels;
        let dpre = sigmoid_backward(&dec.depth, ddepth)?;
        let dout = concat_channels(&[dlogits, &dpre])?;
        self.skip.backward(s, grads, &enc.input, &dout)?;
        let mut dh = self.head.backward(s, grads, cache.refined.last().unwrap_or(&cache.fused), &dout)?;
        for (i, conv) in self.refine.iter().enumerate().rev() {
            let dpre = relu_backward(&cache.refined[i], &dh)?;
            let x = if i == 0 { &cache.fused } else { &cache.refined[i - 1] };
            dh = conv.backward(s, grads, x, &dpre)?;
        }
        let dfused = relu_backward(&cache.fused, &dh)?;
        let dcat0 = self.fuse.backward(s, grads, &cache.cat0, &dfused)?;
        let dd1 = split_channels(&dcat0, &[w1, self.config.input_channels()])?.swap_remove(0);
        let dd1 = relu_backward(&cache.d1, &dd1)?;
        let dcat1 = self.up1.backward(s, grads, &cache.cat1, &dd1)?;
        let mut p1 = split_channels(&dcat1, &[w1, w1])?;
        let de1 = p1.pop().unwrap();
        let dd2 = relu_backward(&cache.d2, &p1.pop().unwrap())?;
        let dcat2 = self.up2.backward(s, grads, &cache.cat2, &dd2)?;
        let mut p2 = split_channels(&dcat2, &[w2, w2])?;
        let de2 = p2.pop().unwrap();
        let dd3 = relu_backward(&cache.d3, &p2.pop().unwrap())?;
        let dcat3 = self.up3.backward(s, grads, &cache.cat3, &dd3)?;
        let mut p3 = split_channels(&dcat3, &[w3, w3, z])?;
        let dz = p3.pop().unwrap();
        let de3 = p3.pop().unwrap();
        let dd4 = relu_backward(&cache.d4, &p3.pop().unwrap())?;
        let de4 = self.up4.backward(s, grads, &enc.levels[3], &dd4)?;
        Ok((vec![de1, de2, de3, de4], dz))
    }

    /// Backward through the encoder given gradients at each level's output.
    fn encode_backward(
        &self,
        s: &ParamStore,
        grads: &mut Grads,
        enc: &Encoded,
        mut dlevels: Vec<Option<Tensor4>>,
    ) -> Result<()> {
        let mut carry: Option<Tensor4> = None;
        for i in (0..4).rev() {
            let mut d = dlevels[i].take();
            if let Some(c) = carry.take() {
                match &mut d {
                    Some(t) => t.add_assign(&c)?,
                    None => d = Some(c),
                }
            }
            let Some(d) = d else { continue };
            let dpre = relu_backward(&enc.levels[i], &d)?;
            let x = if i == 0 { &enc.input } else { &enc.levels[i - 1] };
            let dx = self.enc[i].backward(s, grads, x, &dpre)?;
            if i > 0 {
                carry = Some(dx);
            }
        }
        Ok(())
    }

    /// Loss on a batch with posterior-sampled latents, evaluated with the
    /// given parameters.
    pub fn loss_with(&self, s: &ParamStore, batch: &StructureBatch) -> Result<StructureLoss> {
        Ok(self.forward_train(s, batch)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn forward_train(
        &self,
        s: &ParamStore,
        batch: &StructureBatch,
    ) -> Result<(StructureLoss, TrainCache)> {
        let enc = self.encode_with(s, &batch.guide_input)?;
        let enc_gt = self.encode_with(s, &batch.gt_input)?;
        let (p, pc) = self.latent_with(s, &self.prior_net, &enc.levels[2])?;
        let (q, qc) = self.latent_with(s, &self.post_net, &enc_gt.levels[2])?;
        let z = sample_z(&q, &batch.eps)?;
        let (dec, dc) = self.decode_with(s, &enc, &z)?;
        let (loss, parts) = structure_loss(&self.config, &dec, &batch.gt_sem, &batch.gt_depth, &q, &p)?;
        Ok((
            loss,
            TrainCache {
                enc,
                enc_gt,
                pc,
                q,
                qc,
                dec,
                dc,
                parts,
            },
        ))
    }

    /// Loss and parameter gradients on one batch.
    pub fn loss_and_grads(&self, batch: &StructureBatch) -> Result<(StructureLoss, Grads)> {
        let (l, g, _) = self.loss_grads_decoded(batch)?;
        Ok((l, g))
    }

    /// Like [`Self::loss_and_grads`], also returning the decoder outputs.
    pub fn loss_grads_decoded(&self, batch: &StructureBatch) -> Result<(StructureLoss, Grads, Decoded)> {
        let s = &self.store;
        let (loss, c) = self.forward_train(s, batch)?;
        let mut grads = Grads::zeros_like(s);
        let (dlevels, dz) =
            self.decode_backward(s, &mut grads, &c.enc, &c.dec, &c.dc, &c.parts.dlogits, &c.parts.ddepth)?;
        let (dmu_z, dlv_z) = sample_z_backward(&c.q, &batch.eps, &dz)?;
        let mut dmu_q = c.parts.kl.mu_q.clone();
        dmu_q.add_assign(&dmu_z)?;
        let mut dlv_q = c.parts.kl.log_var_q.clone();
        dlv_q.add_assign(&dlv_z)?;
        let de3_q = self.latent_backward(s, &mut grads, &self.post_net, &c.qc, &dmu_q, &dlv_q)?;
        let de3_p = self.latent_backward(s, &mut grads, &self.prior_net, &c.pc, &c.parts.kl.mu_p, &c.parts.kl.log_var_p)?;
        let mut dl: Vec<Option<Tensor4>> = dlevels.into_iter().map(Some).collect();
        dl[2].as_mut().unwrap().add_assign(&de3_p)?;
        self.encode_backward(s, &mut grads, &c.enc, dl)?;
        self.encode_backward(s, &mut grads, &c.enc_gt, vec![None, None, Some(de3_q), None])?;
        Ok((loss, grads, c.dec))
    }

    /// Prior mean and log-variance for a batch of guidance inputs.
    pub fn prior_for(&self, input: &Tensor4) -> Result<(Encoded, GaussianParams)> {
        let enc = self.encode(input)?;
        let p = self.prior(&enc)?;
        Ok((enc, p))
    }

    /// Argmax classes and depth in meters from decoded outputs.
    pub fn to_maps(&self, dec: &Decoded) -> Result<Vec<(ClassMap, DepthMap)>> {
        let (w, h, c) = (self.config.width, self.config.height, self.config.class_count);
        let hw = w * h;
        (0..dec.logits.n())
            .map(|n| {
                let l = dec.logits.sample(n);
                let sem = (0..hw)
                    .map(|p| {
                        let mut best = 0;
                        for k in 1..c {
                            if l[k * hw + p] > l[best * hw + p] {
                                best = k;
                            }
                        }
                        best as u8
                    })
                    .collect();
                let depth = dec.depth.sample(n).iter().map(|d| d * self.config.d_max).collect();
                Ok((ClassMap::from_vec(w, h, sem)?, DepthMap::from_vec(w, h, depth)?))
            })
            .collect()
    }
}

struct TrainCache {
    enc: Encoded,
    enc_gt: Encoded,
    pc: LatentCache,
    q: GaussianParams,
    qc: LatentCache,
    dec: Decoded,
    dc: DecodeCache,
    parts: LossGrads,
}

/// Gradients of the weighted total loss.
pub(crate) struct LossGrads {
    pub dlogits: Tensor4,
    pub ddepth: Tensor4,
    pub kl: crate::tinynn::KlGrads,
}

/// `lambda_ce * CE + lambda_depth * MAE + lambda_kl * KL(q || p)` and the
/// gradient of the total with respect to logits, depth and both latents.
pub(crate) fn structure_loss(
    cfg: &StructureConfig,
    pred: &Decoded,
    gt_sem: &[u8],
    gt_depth: &Tensor4,
    q: &GaussianParams,
    p: &GaussianParams,
) -> Result<(StructureLoss, LossGrads)> {
    let (ce, mut dlogits) = cross_entropy(&pred.logits, gt_sem)?;
    let (mae, mut ddepth) = l1_mean(&pred.depth, gt_depth)?;
    let (kl, mut klg) = kl_divergence(q, p)?;
    let total = cfg.lambda_ce * ce + cfg.lambda_depth * mae + cfg.lambda_kl * kl;
    for v in dlogits.data_mut() {
        *v *= cfg.lambda_ce;
    }
    for v in ddepth.data_mut() {
        *v *= cfg.lambda_depth;
    }
    for t in [&mut klg.mu_q, &mut klg.log_var_q, &mut klg.mu_p, &mut klg.log_var_p] {
        for v in t.data_mut() {
            *v *= cfg.lambda_kl;
        }
    }
    Ok((
        StructureLoss {
            total,
            ce,
            depth: mae,
            kl,
        },
        LossGrads {
            dlogits,
            ddepth,
            kl: klg,
        },
    ))
}

/// Public form of the joint loss: total and unweighted components.
pub fn structure_loss_components(
    cfg: &StructureConfig,
    pred: &Decoded,
    gt_sem: &[u8],
    gt_depth: &Tensor4,
    q: &GaussianParams,
    p: &GaussianParams,
) -> Result<StructureLoss> {
    Ok(structure_loss(cfg, pred, gt_sem, gt_depth, q, p)?.0)
}
