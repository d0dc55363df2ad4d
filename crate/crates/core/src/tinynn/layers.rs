//! Parameterized layers. Each layer owns handles into a [`ParamStore`];
//! `forward` is pure and `backward` accumulates parameter gradients into a
//! [`Grads`] and returns the gradient with respect to its input.

use rand::Rng;

use super::act::{relu, relu_backward, resize_nearest, resize_nearest_backward};
use super::conv::{
    conv2d_circx, conv2d_circx_backward, conv_transpose2d_circx, conv_transpose2d_circx_backward,
    partial_conv2d, partial_conv2d_backward,
};
use super::norm::{instance_norm, instance_norm_backward};
use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Tensor4;
use crate::error::Result;

fn bias_of(store: &ParamStore, id: ParamId) -> &[f64] {
    store.get(id).data()
}

/// Convolution with circular x padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Conv {
    /// He-normal weights, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        Self::with_std(store, name, cin, cout, k, stride, std, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_std(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Conv {
            weight: store.add_normal(format!("{name}.weight"), [cout, cin, k, k], std, rng)?,
            bias: store.add_zeros(format!("{name}.bias"), [cout, 1, 1, 1])?,
            stride,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        conv2d_circx(x, store.get(self.weight), bias_of(store, self.bias), self.stride)
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        grads: &mut Grads,
        x: &Tensor4,
        dout: &Tensor4,
    ) -> Result<Tensor4> {
        let g = conv2d_circx_backward(x, store.get(self.weight), dout, self.stride)?;
        grads.accumulate(self.weight, &g.dkernel);
        grads.accumulate(self.bias, &g.dbias);
        Ok(g.dx)
    }
}

/// Transposed convolution (upsampling by `stride`).
#[derive(Clone, Debug)]
pub struct ConvT {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl ConvT {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        // each output pixel sees about cin*k*k/stride^2 taps
        let fan_in = (cin * k * k) as f64 / (stride * stride) as f64;
        let std = (2.0 / fan_in).sqrt();
        Ok(ConvT {
            weight: store.add_normal(format!("{name}.weight"), [cin, cout, k, k], std, rng)?,
            bias: store.add_zeros(format!("{name}.bias"), [cout, 1, 1, 1])?,
            stride,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        conv_transpose2d_circx(x, store.get(self.weight), bias_of(store, self.bias), self.stride)
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        grads: &mut Grads,
        x: &Tensor4,
        dout: &Tensor4,
    ) -> Result<Tensor4> {
        let g = conv_transpose2d_circx_backward(x, store.get(self.weight), dout, self.stride)?;
        grads.accumulate(self.weight, &g.dkernel);
        grads.accumulate(self.bias, &g.dbias);
        Ok(g.dx)
    }
}

/// Mask-aware convolution (stride 1).
#[derive(Clone, Debug)]
pub struct PartialConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl PartialConv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        Ok(PartialConv {
            weight: store.add_normal(format!("{name}.weight"), [cout, cin, k, k], std, rng)?,
            bias: store.add_zeros(format!("{name}.bias"), [cout, 1, 1, 1])?,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor4, mask: &Tensor4) -> Result<(Tensor4, Tensor4)> {
        partial_conv2d(x, mask, store.get(self.weight), bias_of(store, self.bias))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        grads: &mut Grads,
        x: &Tensor4,
        mask: &Tensor4,
        dout: &Tensor4,
    ) -> Result<Tensor4> {
        let g = partial_conv2d_backward(x, mask, store.get(self.weight), dout)?;
        grads.accumulate(self.weight, &g.dkernel);
        grads.accumulate(self.bias, &g.dbias);
        Ok(g.dx)
    }
}

/// Spatially-adaptive modulation: instance-normalize the features, then scale
/// and shift per pixel by maps predicted from a conditioning tensor.
#[derive(Clone, Debug)]
pub struct Spade {
    pub shared: Conv,
    pub gamma: Conv,
    pub beta: Conv,
}

/// Intermediate values of a [`Spade`] forward pass.
#[derive(Clone, Debug)]
pub struct SpadeCache {
    cond_shape: [usize; 4],
    cond: Tensor4,
    hidden_pre: Tensor4,
    hidden: Tensor4,
    xhat: Tensor4,
    inv_std: Vec<f64>,
    gamma: Tensor4,
}

impl Spade {
    /// Hidden conv is He-initialized; the gamma and beta maps start at zero so
    /// a fresh layer is plain instance normalization.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cond_channels: usize,
        feature_channels: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Spade {
            shared: Conv::new(store, &format!("{name}.shared"), cond_channels, hidden, 3, 1, rng)?,
            gamma: Conv::with_std(store, &format!("{name}.gamma"), hidden, feature_channels, 3, 1, 0.0, rng)?,
            beta: Conv::with_std(store, &format!("{name}.beta"), hidden, feature_channels, 3, 1, 0.0, rng)?,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor4, cond: &Tensor4) -> Result<(Tensor4, SpadeCache)> {
        let cond_r = resize_nearest(cond, x.h(), x.w());
        let hidden_pre = self.shared.forward(store, &cond_r)?;
        let hidden = relu(&hidden_pre);
        let gamma = self.gamma.forward(store, &hidden)?;
        let beta = self.beta.forward(store, &hidden)?;
        gamma.check_same(x, "spade gamma")?;
        let (xhat, inv_std) = instance_norm(x);
        let mut out = xhat.clone();
        for ((o, g), b) in out.data_mut().iter_mut().zip(gamma.data()).zip(beta.data()) {
            *o = *o * (1.0 + g) + b;
        }
        Ok((
            out,
            SpadeCache {
                cond_shape: cond.shape(),
                cond: cond_r,
                hidden_pre,
                hidden,
                xhat,
                inv_std,
                gamma,
            },
        ))
    }

    /// Returns gradients with respect to the features and the conditioning.
    pub fn backward(
        &self,
        store: &ParamStore,
        grads: &mut Grads,
        cache: &SpadeCache,
        dout: &Tensor4,
    ) -> Result<(Tensor4, Tensor4)> {
        let dxhat = dout.zip_map(&cache.gamma, |d, g| d * (1.0 + g))?;
        let dgamma = dout.zip_map(&cache.xhat, |d, x| d * x)?;
        let dx = instance_norm_backward(&cache.xhat, &cache.inv_std, &dxhat)?;
        let mut dh = self.gamma.backward(store, grads, &cache.hidden, &dgamma)?;
        dh.add_assign(&self.beta.backward(store, grads, &cache.hidden, dout)?)?;
        let dh_pre = relu_backward(&cache.hidden_pre, &dh)?;
        let dcond_r = self.shared.backward(store, grads, &cache.cond, &dh_pre)?;
        let dcond = resize_nearest_backward(&dcond_r, cache.cond_shape[2], cache.cond_shape[3]);
        Ok((dx, dcond))
    }
}

/// Functional form of [`Spade::forward`].
pub fn spade_modulate(
    features: &Tensor4,
    cond: &Tensor4,
    store: &ParamStore,
    spade: &Spade,
) -> Result<Tensor4> {
    Ok(spade.forward(store, features, cond)?.0)
}
