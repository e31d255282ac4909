use serde::{Deserialize, Serialize};

/// Causal 1-D convolution with dilation. Weights are laid out
/// `[out][in][k]`; tap `k` reads `input[t - dilation * (kernel - 1 - k)]`,
/// so the last tap is the current step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            dilation,
            weight: vec![0.0; out_channels * in_channels * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    #[inline]
    pub fn w(&self, out: usize, inp: usize, k: usize) -> f64 {
        self.weight[(out * self.in_channels + inp) * self.kernel + k]
    }

    /// Backwards offset of tap `k`.
    #[inline]
    pub fn lag(&self, k: usize) -> usize {
        self.dilation * (self.kernel - 1 - k)
    }

    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilation
    }
}

/// Full-length causal convolution over a `channels × time` input with left
/// zero padding; output has the same time length.
pub fn causal_conv_forward(input: &[Vec<f64>], layer: &ConvLayer) -> Vec<Vec<f64>> {
    assert_eq!(input.len(), layer.in_channels, "input channel count");
    let len = input.first().map_or(0, Vec::len);
    (0..layer.out_channels)
        .map(|c| {
            (0..len)
                .map(|t| {
                    let mut acc = layer.bias[c];
                    for (ci, row) in input.iter().enumerate() {
                        for k in 0..layer.kernel {
                            if let Some(s) = t.checked_sub(layer.lag(k)) {
                                acc += layer.w(c, ci, k) * row[s];
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}
