use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::LEAKY_SLOPE;
use crate::error::{Error, Result};
use crate::tinynn::{concat_channels, leaky_relu, leaky_relu_backward, split_channels, Conv, Grads, ParamStore, Tensor4};

/// Scores and intermediate feature maps of a critic on one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticOutput {
    /// Intermediate activations used by the feature-matching loss.
    pub features: Vec<Tensor4>,
    /// Patch score map.
    pub score: Tensor4,
}

/// Anything that scores conditioned RGB images and can differentiate its
/// outputs with respect to the image.
pub trait Critic {
    fn evaluate(&self, rgb: &Tensor4, cond: &Tensor4) -> Result<CriticOutput>;

    /// Gradient with respect to `rgb` for upstream gradients on every
    /// feature map and on the score.
    fn input_grad(&self, rgb: &Tensor4, cond: &Tensor4, dfeatures: &[Tensor4], dscore: &Tensor4) -> Result<Tensor4>;
}

/// Critic that scores every patch with the same constant and exposes no
/// features.
#[derive(Clone, Copy, Debug)]
pub struct ConstantCritic(pub f64);

impl Critic for ConstantCritic {
    fn evaluate(&self, rgb: &Tensor4, _cond: &Tensor4) -> Result<CriticOutput> {
        Ok(CriticOutput {
            features: Vec::new(),
            score: Tensor4::filled([rgb.n(), 1, rgb.h(), rgb.w()], self.0),
        })
    }

    fn input_grad(&self, rgb: &Tensor4, _cond: &Tensor4, _df: &[Tensor4], _ds: &Tensor4) -> Result<Tensor4> {
        Ok(Tensor4::zeros(rgb.shape()))
    }
}

/// Patch discriminator over RGB concatenated with one-hot semantics and
/// depth: two stride-2 conv + leaky stages (the matched features) and a
/// stride-1 score conv.
#[derive(Clone, Debug)]
pub struct Discriminator {
    store: ParamStore,
    convs: [Conv; 3],
    cond_channels: usize,
}

/// Values kept from a discriminator forward pass.
pub struct DiscTrace {
    input: Tensor4,
    pre: [Tensor4; 2],
    out: CriticOutput,
}

impl DiscTrace {
    pub fn output(&self) -> &CriticOutput {
        &self.out
    }
}

impl Discriminator {
    pub fn new(cond_channels: usize, widths: [usize; 2], seed: u64) -> Result<Self> {
        if widths.contains(&0) {
            return Err(Error::Domain("discriminator widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let cin = 3 + cond_channels;
        let convs = [
            Conv::new(&mut s, "d1", cin, widths[0], 3, 2, &mut rng)?,
            Conv::new(&mut s, "d2", widths[0], widths[1], 3, 2, &mut rng)?,
            Conv::new(&mut s, "score", widths[1], 1, 3, 1, &mut rng)?,
        ];
        Ok(Discriminator {
            store: s,
            convs,
            cond_channels,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn forward_with(&self, s: &ParamStore, rgb: &Tensor4, cond: &Tensor4) -> Result<DiscTrace> {
        if cond.c() != self.cond_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} condition channels, got {}",
                self.cond_channels,
                cond.c()
            )));
        }
        let input = concat_channels(&[rgb, cond])?;
        let p1 = self.convs[0].forward(s, &input)?;
        let f1 = leaky_relu(&p1, LEAKY_SLOPE);
        let p2 = self.convs[1].forward(s, &f1)?;
        let f2 = leaky_relu(&p2, LEAKY_SLOPE);
        let score = self.convs[2].forward(s, &f2)?;
        Ok(DiscTrace {
            input,
            pre: [p1, p2],
            out: CriticOutput {
                features: vec![f1, f2],
                score,
            },
        })
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the RGB channels of the input.
    pub fn backward_with(
        &self,
        s: &ParamStore,
        grads: &mut Grads,
        t: &DiscTrace,
        dfeatures: &[Tensor4],
        dscore: &Tensor4,
    ) -> Result<Tensor4> {
        if !(dfeatures.is_empty() || dfeatures.len() == 2) {
            return Err(Error::Shape(format!("{} feature gradients for 2 features", dfeatures.len())));
        }
        let mut d2 = self.convs[2].backward(s, grads, &t.out.features[1], dscore)?;
        if let Some(df) = dfeatures.get(1) {
            d2.add_assign(df)?;
        }
        let dp2 = leaky_relu_backward(&t.pre[1], &d2, LEAKY_SLOPE)?;
        let mut d1 = self.convs[1].backward(s, grads, &t.out.features[0], &dp2)?;
        if let Some(df) = dfeatures.first() {
            d1.add_assign(df)?;
        }
        let dp1 = leaky_relu_backward(&t.pre[0], &d1, LEAKY_SLOPE)?;
        let din = self.convs[0].backward(s, grads, &t.input, &dp1)?;
        Ok(split_channels(&din, &[3, self.cond_channels])?.swap_remove(0))
    }

    /// Hinge loss on a real and a fake batch, evaluated with `s`.
    pub fn loss_with(&self, s: &ParamStore, real: &Tensor4, fake: &Tensor4, cond: &Tensor4) -> Result<f64> {
        let r = self.forward_with(s, real, cond)?;
        let f = self.forward_with(s, fake, cond)?;
        Ok(crate::tinynn::hinge_discriminator(&r.out.score, &f.out.score).0)
    }

    /// Hinge loss and parameter gradients.
    pub fn loss_and_grads(&self, real: &Tensor4, fake: &Tensor4, cond: &Tensor4) -> Result<(f64, Grads)> {
        let s = &self.store;
        let r = self.forward_with(s, real, cond)?;
        let f = self.forward_with(s, fake, cond)?;
        let (loss, gr, gf) = crate::tinynn::hinge_discriminator(&r.out.score, &f.out.score);
        let mut grads = Grads::zeros_like(s);
        self.backward_with(s, &mut grads, &r, &[], &gr)?;
        self.backward_with(s, &mut grads, &f, &[], &gf)?;
        Ok((loss, grads))
    }
}

impl Critic for Discriminator {
    fn evaluate(&self, rgb: &Tensor4, cond: &Tensor4) -> Result<CriticOutput> {
        Ok(self.forward_with(&self.store, rgb, cond)?.out)
    }

    fn input_grad(&self, rgb: &Tensor4, cond: &Tensor4, dfeatures: &[Tensor4], dscore: &Tensor4) -> Result<Tensor4> {
        let t = self.forward_with(&self.store, rgb, cond)?;
        let mut scratch = Grads::zeros_like(&self.store);
        self.backward_with(&self.store, &mut scratch, &t, dfeatures, dscore)
    }
}
