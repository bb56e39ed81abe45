use super::ops::*;
use super::params::ModelParams;
use super::spec::{DiscriminatorSpec, LEAKY_SLOPE};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub struct DiscriminatorTrace<T> {
    image_channels: usize,
    conv_in: Vec<Tensor<T>>,
    pre_act: Vec<Tensor<T>>,
    norm: Vec<Option<NormCache<T>>>,
    output: Tensor<T>,
}

impl<T> DiscriminatorTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

/// PatchGAN: scores every receptive-field patch of an (image, mask) pair
/// in `[0,1]`, 1 meaning "ground-truth mask".
#[derive(Clone, Debug)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn forward<T: Scalar>(&self, params: &ModelParams<T>, image: &Tensor<T>, mask: &Tensor<T>) -> Result<DiscriminatorTrace<T>> {
        let (n, ci, h, w) = match *image.shape() {
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::BadShape(format!("image batch {:?} is not 4-D", image.shape()))),
        };
        if mask.shape() != [n, 1, h, w] {
            return Err(Error::BadShape(format!(
                "mask batch {:?} does not pair with image batch {:?}",
                mask.shape(),
                image.shape()
            )));
        }
        if ci + 1 != self.spec.in_channels {
            return Err(Error::BadShape(format!(
                "discriminator takes {} channels, got {} + 1",
                self.spec.in_channels, ci
            )));
        }
        if h.min(w) < self.spec.stages.len() * 2 + 2 || self.spec.grid_size(h.min(w)) == 0 {
            return Err(Error::BadShape(format!("input {h}x{w} too small for the patch grid")));
        }
        params.check_layout(&self.spec)?;

        let layouts = self.spec.layouts();
        let last = layouts.len() - 1;
        let mut conv_in = Vec::with_capacity(layouts.len());
        let mut pre_act: Vec<Tensor<T>> = Vec::with_capacity(layouts.len());
        let mut norm = Vec::with_capacity(layouts.len());
        for (i, (st, ds)) in layouts.iter().zip(&self.spec.stages).enumerate() {
            let a = if i == 0 {
                center_unit(&concat_channels(image, mask))
            } else {
                leaky_relu(&pre_act[i - 1], LEAKY_SLOPE)
            };
            let wt = params.tensor(&format!("{}.weight", st.name));
            let bias = (!st.norm).then(|| params.tensor(&format!("{}.bias", st.name)));
            let c = conv2d(&a, wt, bias, ds.stride, ds.padding);
            let hcur = if st.norm {
                let (y, cache) = instance_norm(
                    &c,
                    params.tensor(&format!("{}.gamma", st.name)),
                    params.tensor(&format!("{}.beta", st.name)),
                );
                norm.push(Some(cache));
                y
            } else {
                norm.push(None);
                c
            };
            conv_in.push(a);
            pre_act.push(hcur);
        }
        let output = sigmoid(&pre_act[last]);
        Ok(DiscriminatorTrace {
            image_channels: ci,
            conv_in,
            pre_act,
            norm,
            output,
        })
    }

    pub fn scores<T: Scalar>(&self, params: &ModelParams<T>, image: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(params, image, mask)?.output)
    }

    /// Parameter gradients and, if requested, the gradient with respect to
    /// the mask input.
    pub fn backward<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        trace: &DiscriminatorTrace<T>,
        d_scores: &Tensor<T>,
        need_mask_grad: bool,
    ) -> (ModelParams<T>, Option<Tensor<T>>) {
        let layouts = self.spec.layouts();
        let mut grads = ModelParams::new();
        let last = layouts.len() - 1;
        let mut d = sigmoid_backward(&trace.output, d_scores);
        let mut d_mask = None;
        for i in (0..layouts.len()).rev() {
            let st = &layouts[i];
            if i != last {
                d = leaky_relu_backward(&trace.pre_act[i], LEAKY_SLOPE, &d);
            }
            let dc = match &trace.norm[i] {
                Some(cache) => {
                    let g = instance_norm_backward(cache, params.tensor(&format!("{}.gamma", st.name)), &d);
                    grads.insert(format!("{}.gamma", st.name), g.dgamma);
                    grads.insert(format!("{}.beta", st.name), g.dbeta);
                    g.dx
                }
                None => std::mem::replace(&mut d, Tensor::zeros(&[0])),
            };
            let wt = params.tensor(&format!("{}.weight", st.name));
            let need_dx = i > 0 || need_mask_grad;
            let cg = conv2d_backward(&trace.conv_in[i], wt, self.spec.stages[i].stride, self.spec.stages[i].padding, &dc, need_dx);
            grads.insert(format!("{}.weight", st.name), cg.dweight);
            if !st.norm {
                grads.insert(format!("{}.bias", st.name), cg.dbias);
            }
            match cg.dx {
                Some(dx) if i == 0 => d_mask = Some(split_channels(&dx, trace.image_channels).1.map(|g| g * T::of(2.0))),
                Some(dx) => d = dx,
                None => d = Tensor::zeros(&[0]),
            }
        }
        (grads, d_mask)
    }
}

/// Image-level decision value: the mean of the patch grid.
pub fn decision_value<T: Scalar>(scores: &Tensor<T>) -> T {
    scores.mean()
}
