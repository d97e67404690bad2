use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Winning input positions of a 2x2 max-pool, one flat input index per
/// output cell and channel. Ties go to the first candidate in row-major scan.
#[derive(Debug, Clone)]
pub struct PoolRecord {
    pub in_shape: (usize, usize, usize),
    pub out_shape: (usize, usize, usize),
    pub argmax: Vec<u32>,
}

/// 2x2 max-pool with stride 2, per channel.
pub fn maxpool2_forward(input: &Tensor3) -> Result<(Tensor3, PoolRecord)> {
    if input.height() % 2 != 0 || input.width() % 2 != 0 {
        return Err(Error::config(format!(
            "maxpool2 requires even spatial dims, got {}x{}",
            input.height(),
            input.width()
        )));
    }
    let (out_h, out_w, ch) = (input.height() / 2, input.width() / 2, input.channels());
    let mut out = Tensor3::zeros(out_h, out_w, ch);
    let mut argmax = vec![0u32; out_h * out_w * ch];
    for oy in 0..out_h {
        for ox in 0..out_w {
            for c in 0..ch {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = input.idx(oy * 2 + dy, ox * 2 + dx, c);
                        let v = input.values()[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                out.set(oy, ox, c, best);
                argmax[out.idx(oy, ox, c)] = best_idx as u32;
            }
        }
    }
    let record = PoolRecord {
        in_shape: input.shape(),
        out_shape: out.shape(),
        argmax,
    };
    Ok((out, record))
}

/// Scatters each cotangent value back to its recorded argmax position.
pub fn maxpool2_backward(record: &PoolRecord, grad_output: &Tensor3) -> Result<Tensor3> {
    if grad_output.shape() != record.out_shape {
        return Err(Error::internal(format!(
            "pool record output shape {:?} does not match cotangent {:?}",
            record.out_shape,
            grad_output.shape()
        )));
    }
    let (h, w, c) = record.in_shape;
    let mut grad_input = Tensor3::zeros(h, w, c);
    for (g, &idx) in grad_output.values().iter().zip(&record.argmax) {
        grad_input.values_mut()[idx as usize] += g;
    }
    Ok(grad_input)
}
