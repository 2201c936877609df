//! Small fully-connected networks with exact reverse-mode derivatives.
//!
//! Parameters live in one flat vector. Layer by layer, the weight matrix
//! (`out × in`, row-major) comes first, then the bias vector.

use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::numerics::{axpy, dot};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutputActivation {
    Identity,
    /// `bound · tanh(z)`
    ScaledTanh { bound: f64 },
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::invalid(format!("unknown activation {s:?}"))),
        }
    }
}

impl fmt::Display for OutputActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputActivation::Identity => write!(f, "identity"),
            OutputActivation::ScaledTanh { bound } => write!(f, "scaled_tanh:{bound:?}"),
        }
    }
}

impl OutputActivation {
    fn parse(s: &str) -> Result<Self> {
        if s == "identity" {
            return Ok(OutputActivation::Identity);
        }
        if let Some(b) = s.strip_prefix("scaled_tanh:") {
            let bound = b
                .parse()
                .map_err(|_| Error::invalid(format!("bad scaled_tanh bound {b:?}")))?;
            return Ok(OutputActivation::ScaledTanh { bound });
        }
        Err(Error::invalid(format!("unknown output activation {s:?}")))
    }
}

/// Layer widths and activations of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    hidden: Vec<Activation>,
    output: OutputActivation,
}

/// Flat parameter vector of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams(pub Vec<f64>);

impl MlpParams {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
struct Trace {
    /// `acts[l]` is the input of layer `l`; the last entry is the output.
    acts: Vec<Vec<f64>>,
    /// Derivative of each layer's activation at its pre-activation.
    slopes: Vec<Vec<f64>>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Vec<Activation>, output: OutputActivation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("network needs at least input and output widths"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid(format!("zero width in {widths:?}")));
        }
        if hidden.len() != widths.len() - 2 {
            return Err(Error::invalid(format!(
                "{} hidden layers but {} activations",
                widths.len() - 2,
                hidden.len()
            )));
        }
        if let OutputActivation::ScaledTanh { bound } = output {
            if !(bound > 0.0 && bound.is_finite()) {
                return Err(Error::invalid(format!("scaled_tanh bound {bound} must be > 0")));
            }
        }
        Ok(MlpSpec {
            widths,
            hidden,
            output,
        })
    }

    /// All hidden layers use tanh.
    pub fn tanh(widths: Vec<usize>, output: OutputActivation) -> Result<Self> {
        let hidden = vec![Activation::Tanh; widths.len().saturating_sub(2)];
        MlpSpec::new(widths, hidden, output)
    }

    /// `input → hidden… → output` with tanh hidden layers.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize, head: OutputActivation) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        MlpSpec::tanh(widths, head)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform `[-1/√fan_in, 1/√fan_in]` weights, zero biases.
    pub fn init_params(&self, seed: u64) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = Vec::with_capacity(self.param_count());
        for w in self.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = 1.0 / (fan_in as f64).sqrt();
            flat.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)));
            flat.extend(std::iter::repeat(0.0).take(fan_out));
        }
        MlpParams(flat)
    }

    /// Index range of the output layer's weight matrix inside the flat
    /// parameter vector.
    pub fn output_weights(&self) -> std::ops::Range<usize> {
        let n = self.widths.len();
        let (fan_in, fan_out) = (self.widths[n - 2], self.widths[n - 1]);
        let end = self.param_count() - fan_out;
        end - fan_in * fan_out..end
    }

    pub fn zero_params(&self) -> MlpParams {
        MlpParams(vec![0.0; self.param_count()])
    }

    fn check_params(&self, params: &MlpParams) -> Result<()> {
        check_len("parameter vector", params.len(), self.param_count())
    }

    fn layer_activation(&self, layer: usize) -> Option<Activation> {
        self.hidden.get(layer).copied()
    }

    fn trace(&self, params: &MlpParams, x: &[f64]) -> Trace {
        let p = params.as_slice();
        let mut acts = Vec::with_capacity(self.widths.len());
        let mut slopes = Vec::with_capacity(self.num_layers());
        acts.push(x.to_vec());
        let mut offset = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &p[offset..offset + fan_in * fan_out];
            let biases = &p[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;

            let input = &acts[l];
            let mut out = Vec::with_capacity(fan_out);
            let mut slope = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let z = biases[o] + dot(row, input);
                let (a, d) = match self.layer_activation(l) {
                    Some(Activation::Tanh) => {
                        let t = z.tanh();
                        (t, 1.0 - t * t)
                    }
                    Some(Activation::Identity) => (z, 1.0),
                    None => match self.output {
                        OutputActivation::Identity => (z, 1.0),
                        OutputActivation::ScaledTanh { bound } => {
                            let t = z.tanh();
                            (bound * t, bound * (1.0 - t * t))
                        }
                    },
                };
                out.push(a);
                slope.push(d);
            }
            acts.push(out);
            slopes.push(slope);
        }
        Trace { acts, slopes }
    }

    pub fn forward(&self, params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        check_len("network input", x.len(), self.input_width())?;
        let mut t = self.trace(params, x);
        Ok(t.acts.pop().unwrap())
    }

    /// Returns `(cotᵀ ∂y/∂θ, cotᵀ ∂y/∂x)` for `y = forward(x)`.
    pub fn vjp(&self, params: &MlpParams, x: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grad = vec![0.0; self.param_count()];
        let gx = self.vjp_accumulate(params, x, cotangent, 1.0, &mut grad)?;
        Ok((grad, gx))
    }

    /// Adds `scale · cotᵀ ∂y/∂θ` into `grad_params` and returns `cotᵀ ∂y/∂x`.
    pub fn vjp_accumulate(
        &self,
        params: &MlpParams,
        x: &[f64],
        cotangent: &[f64],
        scale: f64,
        grad_params: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check_params(params)?;
        check_len("network input", x.len(), self.input_width())?;
        check_len("cotangent", cotangent.len(), self.output_width())?;
        check_len("gradient buffer", grad_params.len(), self.param_count())?;
        let trace = self.trace(params, x);
        Ok(self.backward(params, &trace, cotangent, scale, grad_params))
    }

    /// Forward pass followed by a vjp whose cotangent may depend on the output.
    pub fn forward_vjp_with(
        &self,
        params: &MlpParams,
        x: &[f64],
        scale: f64,
        grad_params: &mut [f64],
        cotangent_of: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_params(params)?;
        check_len("network input", x.len(), self.input_width())?;
        check_len("gradient buffer", grad_params.len(), self.param_count())?;
        let trace = self.trace(params, x);
        let y = trace.acts.last().unwrap().clone();
        let cot = cotangent_of(&y);
        check_len("cotangent", cot.len(), self.output_width())?;
        let gx = self.backward(params, &trace, &cot, scale, grad_params);
        Ok((y, gx))
    }

    fn backward(&self, params: &MlpParams, trace: &Trace, cotangent: &[f64], scale: f64, grad: &mut [f64]) -> Vec<f64> {
        let p = params.as_slice();
        // offsets of each layer's block in the flat vector
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut off = 0;
        for w in self.widths.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }

        let mut delta = cotangent.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            for (d, s) in delta.iter_mut().zip(&trace.slopes[l]) {
                *d *= s;
            }
            let base = offsets[l];
            let input = &trace.acts[l];
            for o in 0..fan_out {
                let d = scale * delta[o];
                if d != 0.0 {
                    axpy(d, input, &mut grad[base + o * fan_in..base + (o + 1) * fan_in]);
                }
                grad[base + fan_in * fan_out + o] += d;
            }
            let weights = &p[base..base + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                axpy(delta[o], &weights[o * fan_in..(o + 1) * fan_in], &mut prev);
            }
            delta = prev;
        }
        delta
    }

    fn header(&self, count: usize) -> String {
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        let hidden: Vec<&str> = self.hidden.iter().map(|a| a.name()).collect();
        format!(
            "mlp widths={} hidden={} output={} params={}",
            widths.join(","),
            if hidden.is_empty() { "-".to_string() } else { hidden.join(",") },
            self.output,
            count
        )
    }
}

/// Writes a network checkpoint: one text header line, then the parameters
/// as little-endian `f64`.
pub fn write_checkpoint(w: &mut impl Write, spec: &MlpSpec, params: &MlpParams) -> Result<()> {
    spec.check_params(params)?;
    writeln!(w, "{}", spec.header(params.len()))?;
    for v in params.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl BufRead) -> Result<(MlpSpec, MlpParams)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let line = line.trim_end();
    let mut fields = line.split(' ');
    if fields.next() != Some("mlp") {
        return Err(Error::invalid(format!("not a network checkpoint header: {line:?}")));
    }
    let (mut widths, mut hidden, mut output, mut count) = (None, None, None, None);
    for f in fields {
        let (k, v) = f
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("bad header field {f:?}")))?;
        match k {
            "widths" => {
                widths = Some(
                    v.split(',')
                        .map(|s| s.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::invalid(format!("bad widths {v:?}")))?,
                )
            }
            "hidden" if v == "-" => hidden = Some(Vec::new()),
            "hidden" => hidden = Some(v.split(',').map(Activation::parse).collect::<Result<Vec<_>>>()?),
            "output" => output = Some(OutputActivation::parse(v)?),
            "params" => count = Some(v.parse::<usize>().map_err(|_| Error::invalid(format!("bad count {v:?}")))?),
            _ => return Err(Error::invalid(format!("unknown header field {k:?}"))),
        }
    }
    let missing = || Error::invalid("incomplete network checkpoint header");
    let spec = MlpSpec::new(widths.ok_or_else(missing)?, hidden.ok_or_else(missing)?, output.ok_or_else(missing)?)?;
    let count = count.ok_or_else(missing)?;
    check_len("checkpoint parameters", count, spec.param_count())?;
    let mut flat = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        flat.push(f64::from_le_bytes(buf));
    }
    Ok((spec, MlpParams(flat)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        let s = MlpSpec::tanh(vec![1, 1], OutputActivation::Identity).unwrap();
        let p = s.init_params(42);
        assert_eq!(p.len(), 2);
        assert_eq!(p.0[1], 0.0);
        let s = MlpSpec::tanh(vec![3, 8, 2], OutputActivation::Identity).unwrap();
        assert_eq!(s.param_count(), 50);
        assert_eq!(s.init_params(1), s.init_params(1));
        assert_ne!(s.init_params(1), s.init_params(2));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let s = MlpSpec::tanh(vec![4, 16, 3], OutputActivation::Identity).unwrap();
        let p = s.init_params(9);
        let first = &p.0[..64];
        assert!(first.iter().all(|w| w.abs() <= 0.5));
        assert!(p.0[64..80].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn invalid_specs() {
        assert!(MlpSpec::tanh(vec![3], OutputActivation::Identity).is_err());
        assert!(MlpSpec::tanh(vec![3, 0, 1], OutputActivation::Identity).is_err());
        assert!(MlpSpec::tanh(vec![3, 1], OutputActivation::ScaledTanh { bound: 0.0 }).is_err());
        assert!(MlpSpec::new(vec![2, 3, 1], vec![], OutputActivation::Identity).is_err());
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let s = MlpSpec::tanh(vec![2, 2], OutputActivation::Identity).unwrap();
        let p = MlpParams(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.forward(&p, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weights_give_bias_through_head() {
        let s = MlpSpec::tanh(vec![3, 4, 2], OutputActivation::ScaledTanh { bound: 2.0 }).unwrap();
        let mut p = s.zero_params();
        let n = p.len();
        p.0[n - 2] = 0.3;
        p.0[n - 1] = -0.7;
        let y = s.forward(&p, &[5.0, -1.0, 2.0]).unwrap();
        assert_eq!(y, vec![2.0 * 0.3f64.tanh(), 2.0 * (-0.7f64).tanh()]);
    }

    #[test]
    fn linear_vjp_is_weight_row() {
        let s = MlpSpec::tanh(vec![3, 2], OutputActivation::Identity).unwrap();
        let p = MlpParams(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, -0.5]);
        let (gp, gx) = s.vjp(&p, &[0.1, 0.2, 0.3], &[1.0, 0.0]).unwrap();
        assert_eq!(gx, vec![1.0, 2.0, 3.0]);
        assert_eq!(gp, vec![0.1, 0.2, 0.3, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let (gp, gx) = s.vjp(&p, &[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(gp.iter().chain(&gx).all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatches_are_errors() {
        let s = MlpSpec::tanh(vec![3, 4, 2], OutputActivation::Identity).unwrap();
        let p = s.init_params(0);
        assert!(s.forward(&p, &[1.0]).is_err());
        assert!(s.vjp(&p, &[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(s.forward(&MlpParams(vec![0.0; 3]), &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn accumulate_with_scale_keeps_input_gradient_unscaled() {
        let s = MlpSpec::tanh(vec![2, 5, 3], OutputActivation::Identity).unwrap();
        let p = s.init_params(4);
        let (gp, gx) = s.vjp(&p, &[0.3, -0.4], &[1.0, 2.0, -1.0]).unwrap();
        let mut acc = vec![0.0; s.param_count()];
        let gx2 = s.vjp_accumulate(&p, &[0.3, -0.4], &[1.0, 2.0, -1.0], 0.5, &mut acc).unwrap();
        for (a, b) in gx.iter().zip(&gx2) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in gp.iter().zip(&acc) {
            assert!((0.5 * a - b).abs() < 1e-15);
        }
        let mut acc0 = vec![0.0; s.param_count()];
        let gx0 = s.vjp_accumulate(&p, &[0.3, -0.4], &[1.0, 2.0, -1.0], 0.0, &mut acc0).unwrap();
        assert!(acc0.iter().all(|&v| v == 0.0));
        assert_eq!(gx0, gx);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let s = MlpSpec::tanh(vec![2, 7, 3], OutputActivation::ScaledTanh { bound: 0.1 + 0.2 }).unwrap();
        let mut p = s.init_params(3);
        p.0[0] = f64::MIN_POSITIVE;
        p.0[1] = -0.0;
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s, &p).unwrap();
        let (s2, p2) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(s, s2);
        let bits = |v: &MlpParams| v.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&p2));

        let linear = MlpSpec::tanh(vec![2, 1], OutputActivation::Identity).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &linear, &linear.init_params(0)).unwrap();
        assert_eq!(read_checkpoint(&mut buf.as_slice()).unwrap().0, linear);
    }
}
