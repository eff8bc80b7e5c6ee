use mxt_tensor::{Real, Result, Tensor, TensorError};

/// Sinusoidal table of shape (L, C): `PE[p, 2i] = sin(p / 10000^{2i/C})`,
/// `PE[p, 2i+1] = cos(p / 10000^{2i/C})`.
pub fn positional_embedding(len: usize, channels: usize) -> Result<Tensor> {
    if channels % 2 != 0 {
        return Err(TensorError::Contract(format!(
            "positional embedding needs an even channel count, got {channels}"
        )));
    }
    let mut data = vec![0.0; len * channels];
    for pos in 0..len {
        for i in 0..channels / 2 {
            let freq = (10000.0 as Real).powf(2.0 * i as Real / channels as Real);
            let angle = pos as Real / freq;
            data[pos * channels + 2 * i] = angle.sin();
            data[pos * channels + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(data, &[len, channels])
}
