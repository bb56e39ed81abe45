use super::ops::*;
use super::params::ModelParams;
use super::spec::{GeneratorSpec, LEAKY_SLOPE};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Forward-pass mode. Training draws decoder dropout from the supplied
/// stream; inference is deterministic.
pub enum Mode<'a> {
    Train(&'a mut Rng),
    Infer,
}

/// Activations retained for the backward pass.
pub struct GeneratorTrace<T> {
    conv_in: Vec<Tensor<T>>,
    enc_out: Vec<Tensor<T>>,
    enc_norm: Vec<Option<NormCache<T>>>,
    dec_in: Vec<Tensor<T>>,
    dec_relu: Vec<Tensor<T>>,
    dec_norm: Vec<Option<NormCache<T>>>,
    dec_dropout: Vec<Option<Tensor<T>>>,
    output: Tensor<T>,
}

impl<T> GeneratorTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }

    pub fn into_output(self) -> Tensor<T> {
        self.output
    }
}

/// U-Net mapping a `[B, 3, R, R]` image batch in `[0,1]` to a
/// `[B, 1, R, R]` mask estimate in `[0,1]`. Inputs are remapped to
/// `[-1, 1]` before the first stage.
#[derive(Clone, Debug)]
pub struct Generator {
    spec: GeneratorSpec,
}

impl Generator {
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        if spec.stages() == 0 {
            return Err(Error::InvalidInput("generator needs at least one stage".into()));
        }
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    fn check_input<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        let r = self.spec.resolution;
        match *x.shape() {
            [_, c, h, w] if c == self.spec.in_channels && h == r && w == r => Ok(()),
            _ => Err(Error::BadShape(format!(
                "generator expects [B, {}, {r}, {r}], got {:?}",
                self.spec.in_channels,
                x.shape()
            ))),
        }
    }

    pub fn forward<T: Scalar>(&self, params: &ModelParams<T>, x: &Tensor<T>, mut mode: Mode<'_>) -> Result<GeneratorTrace<T>> {
        self.check_input(x)?;
        params.check_layout(&self.spec)?;
        let enc = self.spec.encoder();
        let dec = self.spec.decoder();
        let n = enc.len();

        let mut conv_in = Vec::with_capacity(n);
        let mut enc_out: Vec<Tensor<T>> = Vec::with_capacity(n);
        let mut enc_norm = Vec::with_capacity(n);
        for (i, st) in enc.iter().enumerate() {
            let a = if i == 0 { center_unit(x) } else { leaky_relu(&enc_out[i - 1], LEAKY_SLOPE) };
            let w = params.tensor(&format!("{}.weight", st.name));
            let bias = (!st.norm).then(|| params.tensor(&format!("{}.bias", st.name)));
            let c = conv2d(&a, w, bias, st.stride, 1);
            let e = if st.norm {
                let (y, cache) = instance_norm(
                    &c,
                    params.tensor(&format!("{}.gamma", st.name)),
                    params.tensor(&format!("{}.beta", st.name)),
                );
                enc_norm.push(Some(cache));
                y
            } else {
                enc_norm.push(None);
                c
            };
            conv_in.push(a);
            enc_out.push(e);
        }

        let mut dec_in = Vec::with_capacity(n);
        let mut dec_relu = Vec::with_capacity(n);
        let mut dec_norm = Vec::with_capacity(n);
        let mut dec_dropout = Vec::with_capacity(n);
        let mut prev: Option<Tensor<T>> = None;
        let mut output = None;
        for (j, st) in dec.iter().enumerate() {
            let u = match prev.take() {
                None => enc_out[n - 1].clone(),
                Some(d) => concat_channels(&d, &enc_out[n - 1 - j]),
            };
            let r = leaky_relu(&u, 0.0);
            let w = params.tensor(&format!("{}.weight", st.name));
            let bias = (!st.norm).then(|| params.tensor(&format!("{}.bias", st.name)));
            let t = conv_transpose2d(&r, w, bias, st.stride, 1);
            if st.norm {
                let (mut y, cache) = instance_norm(
                    &t,
                    params.tensor(&format!("{}.gamma", st.name)),
                    params.tensor(&format!("{}.beta", st.name)),
                );
                dec_norm.push(Some(cache));
                let drop = match &mut mode {
                    Mode::Train(rng) if j < self.spec.dropout_stages && self.spec.dropout > 0.0 => {
                        Some(dropout_mask(y.shape(), self.spec.dropout, rng))
                    }
                    _ => None,
                };
                if let Some(m) = &drop {
                    y = mul(&y, m);
                }
                dec_dropout.push(drop);
                prev = Some(y);
            } else {
                dec_norm.push(None);
                dec_dropout.push(None);
                output = Some(sigmoid(&t));
            }
            dec_in.push(u);
            dec_relu.push(r);
        }

        Ok(GeneratorTrace {
            conv_in,
            enc_out,
            enc_norm,
            dec_in,
            dec_relu,
            dec_norm,
            dec_dropout,
            output: output.expect("last decoder stage is unnormalised"),
        })
    }

    pub fn infer<T: Scalar>(&self, params: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(params, x, Mode::Infer)?.into_output())
    }

    /// Parameter gradients given `d_output = dL/d(mask estimate)`.
    pub fn backward<T: Scalar>(&self, params: &ModelParams<T>, trace: &GeneratorTrace<T>, d_output: &Tensor<T>) -> ModelParams<T> {
        let enc = self.spec.encoder();
        let dec = self.spec.decoder();
        let n = enc.len();
        let mut grads = ModelParams::new();
        let mut d_enc: Vec<Tensor<T>> = trace.enc_out.iter().map(|e| Tensor::zeros(e.shape())).collect();

        let mut d_stage = d_output.clone();
        for j in (0..n).rev() {
            let st = &dec[j];
            let dt = match &trace.dec_norm[j] {
                Some(cache) => {
                    let dy = match &trace.dec_dropout[j] {
                        Some(m) => mul(&d_stage, m),
                        None => d_stage.clone(),
                    };
                    let g = instance_norm_backward(cache, params.tensor(&format!("{}.gamma", st.name)), &dy);
                    grads.insert(format!("{}.gamma", st.name), g.dgamma);
                    grads.insert(format!("{}.beta", st.name), g.dbeta);
                    g.dx
                }
                None => sigmoid_backward(&trace.output, &d_stage),
            };
            let w = params.tensor(&format!("{}.weight", st.name));
            let cg = conv_transpose2d_backward(&trace.dec_relu[j], w, st.stride, 1, &dt, true);
            grads.insert(format!("{}.weight", st.name), cg.dweight);
            if !st.norm {
                grads.insert(format!("{}.bias", st.name), cg.dbias);
            }
            let du = leaky_relu_backward(&trace.dec_in[j], 0.0, &cg.dx.expect("requested"));
            if j == 0 {
                d_enc[n - 1].add_assign(&du);
            } else {
                let (d_prev, d_skip) = split_channels(&du, dec[j - 1].out_channels);
                d_enc[n - 1 - j].add_assign(&d_skip);
                d_stage = d_prev;
            }
        }

        for i in (0..n).rev() {
            let st = &enc[i];
            let de = std::mem::replace(&mut d_enc[i], Tensor::zeros(&[0]));
            let dc = match &trace.enc_norm[i] {
                Some(cache) => {
                    let g = instance_norm_backward(cache, params.tensor(&format!("{}.gamma", st.name)), &de);
                    grads.insert(format!("{}.gamma", st.name), g.dgamma);
                    grads.insert(format!("{}.beta", st.name), g.dbeta);
                    g.dx
                }
                None => de,
            };
            let w = params.tensor(&format!("{}.weight", st.name));
            let cg = conv2d_backward(&trace.conv_in[i], w, st.stride, 1, &dc, i > 0);
            grads.insert(format!("{}.weight", st.name), cg.dweight);
            if !st.norm {
                grads.insert(format!("{}.bias", st.name), cg.dbias);
            }
            if let Some(dx) = cg.dx {
                let da = leaky_relu_backward(&trace.enc_out[i - 1], LEAKY_SLOPE, &dx);
                d_enc[i - 1].add_assign(&da);
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::gradcheck::*;
    use crate::nn::params::init_params;
    use crate::rng::stream;

    fn small_spec(dropout: f64) -> GeneratorSpec {
        GeneratorSpec {
            in_channels: 3,
            out_channels: 1,
            encoder_widths: vec![3, 4, 4],
            dropout,
            dropout_stages: 1,
            resolution: 8,
        }
    }

    /// Parameters scaled up so activations are O(1) and kinks are rare.
    fn lively_params(spec: &GeneratorSpec, seed: u64) -> ModelParams<f64> {
        let mut p: ModelParams<f64> = init_params(spec, seed);
        for (name, t) in p.iter_mut() {
            if name.ends_with(".weight") {
                *t = t.map(|v| v * 15.0);
            }
        }
        p
    }

    #[test]
    fn output_shape_and_range() {
        let g = Generator::new(GeneratorSpec::tiny()).unwrap();
        let p: ModelParams<f32> = init_params(g.spec(), 0);
        let x = Tensor::full(&[2, 3, 256, 256], 0.5f32);
        let y = g.infer(&p, &x).unwrap();
        assert_eq!(y.shape(), &[2, 1, 256, 256]);
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(g.infer(&p, &x).unwrap(), y);
    }

    #[test]
    fn rejects_other_resolutions() {
        let g = Generator::new(GeneratorSpec::tiny()).unwrap();
        let p: ModelParams<f32> = init_params(g.spec(), 0);
        let x = Tensor::zeros(&[1, 3, 128, 256]);
        assert!(matches!(g.infer(&p, &x), Err(Error::BadShape(_))));
        let x = Tensor::zeros(&[1, 4, 256, 256]);
        assert!(matches!(g.infer(&p, &x), Err(Error::BadShape(_))));
    }

    #[test]
    fn zero_dropout_training_equals_inference() {
        let g = Generator::new(small_spec(0.0)).unwrap();
        let p = lively_params(g.spec(), 1);
        let x = random(&[2, 3, 8, 8], 2);
        let mut rng = stream(0, "drop");
        let train = g.forward(&p, &x, Mode::Train(&mut rng)).unwrap().into_output();
        assert_eq!(train, g.infer(&p, &x).unwrap());
    }

    #[test]
    fn dropout_makes_training_stochastic() {
        let g = Generator::new(small_spec(0.5)).unwrap();
        let p = lively_params(g.spec(), 1);
        let x = random(&[1, 3, 8, 8], 2);
        let a = g.forward(&p, &x, Mode::Train(&mut stream(0, "a"))).unwrap().into_output();
        let b = g.forward(&p, &x, Mode::Train(&mut stream(0, "b"))).unwrap().into_output();
        assert_ne!(a, b);
        let a2 = g.forward(&p, &x, Mode::Train(&mut stream(0, "a"))).unwrap().into_output();
        assert_eq!(a, a2);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let g = Generator::new(small_spec(0.5)).unwrap();
        let p = lively_params(g.spec(), 3);
        let x = random(&[2, 3, 8, 8], 4);
        let probe = random(&[2, 1, 8, 8], 5);
        // fixed dropout draw shared by every evaluation
        let objective = |params: &ModelParams<f64>| {
            let out = g.forward(params, &x, Mode::Train(&mut stream(9, "mask"))).unwrap();
            dot(out.output(), &probe)
        };
        let trace = g.forward(&p, &x, Mode::Train(&mut stream(9, "mask"))).unwrap();
        let grads = g.backward(&p, &trace, &probe);
        assert_eq!(grads.len(), p.len());
        for (name, t) in p.iter() {
            let numeric = numeric_grad(t, |probe_t| {
                let mut q = p.clone();
                q.insert(name.clone(), probe_t.clone());
                objective(&q)
            }, 1e-6);
            assert_close(grads.tensor(name).data(), &numeric, 1e-4, name);
        }
    }
}
