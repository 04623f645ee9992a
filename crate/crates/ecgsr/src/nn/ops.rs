//! Differentiable operations over [`Tensor`]s.

use super::kernels;
use super::tensor::Tensor;
use super::NnError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn chan_len(t: &Tensor, what: &str) -> Result<(usize, usize), NnError> {
    match t.shape() {
        [c, l] => Ok((*c, *l)),
        other => Err(NnError::ShapeMismatch {
            context: format!("{what} must be [channels, length], got {other:?}"),
        }),
    }
}

fn weight_dims(w: &Tensor) -> Result<(usize, usize, usize), NnError> {
    match w.shape() {
        [a, b, k] => Ok((*a, *b, *k)),
        other => Err(NnError::ShapeMismatch {
            context: format!("conv weight must be 3-d, got {other:?}"),
        }),
    }
}

/// 1D convolution: x `[cin, l]`, weight `[cout, cin, k]`, bias `[cout]`.
pub fn conv1d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor, NnError> {
    let (cin, l) = chan_len(x, "conv1d input")?;
    let (cout, w_cin, k) = weight_dims(weight)?;
    if w_cin != cin {
        return Err(NnError::ShapeMismatch {
            context: format!("conv1d: input has {cin} channels, weight expects {w_cin}"),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(NnError::ShapeMismatch {
                context: format!("conv1d bias must be [{cout}], got {:?}", b.shape()),
            });
        }
    }
    if stride == 0 {
        return Err(NnError::BadGeometry { reason: "stride must be >= 1".into() });
    }
    let lout = kernels::conv_out_len(l, k, stride, padding).ok_or(NnError::BadGeometry {
        reason: format!("conv1d: no window fits (l={l}, k={k}, s={stride}, p={padding})"),
    })?;
    let y = kernels::conv1d_forward(
        &x.data(),
        cin,
        l,
        &weight.data(),
        bias.map(|b| b.to_vec()).as_deref(),
        cout,
        k,
        stride,
        padding,
    );
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![cout, lout],
        y,
        parents,
        Box::new(move |parents, gy| {
            let x = &parents[0];
            let w = &parents[1];
            let mut grads = vec![None, None];
            if x.tracked() {
                grads[0] =
                    Some(kernels::conv1d_grad_x(gy, &w.data(), cin, l, cout, k, stride, padding));
            }
            if w.tracked() {
                grads[1] =
                    Some(kernels::conv1d_grad_w(gy, &x.data(), cin, l, cout, k, stride, padding));
            }
            if parents.len() == 3 {
                grads.push(parents[2].tracked().then(|| kernels::grad_bias(gy, cout, lout)));
            }
            grads
        }),
    ))
}

/// Transposed 1D convolution: x `[cin, l]`, weight `[cin, cout, k]`,
/// bias `[cout]`. The same weight buffer makes this the exact adjoint of
/// [`conv1d`].
pub fn conv_transpose1d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor, NnError> {
    let (cin, l) = chan_len(x, "conv_transpose1d input")?;
    let (w_cin, cout, k) = weight_dims(weight)?;
    if w_cin != cin {
        return Err(NnError::ShapeMismatch {
            context: format!("conv_transpose1d: input has {cin} channels, weight expects {w_cin}"),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(NnError::ShapeMismatch {
                context: format!("conv_transpose1d bias must be [{cout}], got {:?}", b.shape()),
            });
        }
    }
    if stride == 0 {
        return Err(NnError::BadGeometry { reason: "stride must be >= 1".into() });
    }
    let lout =
        kernels::conv_transpose_out_len(l, k, stride, padding).ok_or(NnError::BadGeometry {
            reason: format!(
                "conv_transpose1d output length <= 0 (l={l}, k={k}, s={stride}, p={padding})"
            ),
        })?;
    let y = kernels::conv_transpose1d_forward(
        &x.data(),
        cin,
        l,
        &weight.data(),
        bias.map(|b| b.to_vec()).as_deref(),
        cout,
        k,
        stride,
        padding,
    );
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![cout, lout],
        y,
        parents,
        Box::new(move |parents, gy| {
            let x = &parents[0];
            let w = &parents[1];
            let mut grads = vec![None, None];
            if x.tracked() {
                grads[0] = Some(kernels::conv_transpose1d_grad_x(
                    gy,
                    &w.data(),
                    cin,
                    l,
                    cout,
                    k,
                    stride,
                    padding,
                ));
            }
            if w.tracked() {
                grads[1] = Some(kernels::conv_transpose1d_grad_w(
                    gy,
                    &x.data(),
                    cin,
                    l,
                    cout,
                    k,
                    stride,
                    padding,
                ));
            }
            if parents.len() == 3 {
                grads.push(parents[2].tracked().then(|| kernels::grad_bias(gy, cout, lout)));
            }
            grads
        }),
    ))
}

/// Elementwise max(0, x).
pub fn relu(x: &Tensor) -> Tensor {
    let y: Vec<f64> = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        y,
        vec![x.clone()],
        Box::new(|parents, gy| {
            let x = &parents[0];
            let g = x
                .data()
                .iter()
                .zip(gy)
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect();
            vec![Some(g)]
        }),
    )
}

/// Elementwise hyperbolic tangent.
pub fn tanh(x: &Tensor) -> Tensor {
    let y: Vec<f64> = x.data().iter().map(|v| v.tanh()).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        y,
        vec![x.clone()],
        Box::new(|parents, gy| {
            let x = &parents[0];
            let g = x
                .data()
                .iter()
                .zip(gy)
                .map(|(&v, &g)| {
                    let t = v.tanh();
                    g * (1.0 - t * t)
                })
                .collect();
            vec![Some(g)]
        }),
    )
}

/// Inverted dropout: in training each element is zeroed with probability
/// `rate` and survivors scale by 1/(1-rate); in inference it is the
/// identity. The mask is a pure function of `seed`.
pub fn dropout(x: &Tensor, rate: f64, training: bool, seed: u64) -> Result<Tensor, NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::BadGeometry { reason: format!("dropout rate {rate} outside [0, 1)") });
    }
    if !training || rate == 0.0 {
        // identity pass-through, still differentiable
        let y = x.to_vec();
        return Ok(Tensor::from_op(
            x.shape().to_vec(),
            y,
            vec![x.clone()],
            Box::new(|_, gy| vec![Some(gy.to_vec())]),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> =
        (0..x.len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep_scale }).collect();
    let y: Vec<f64> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        y,
        vec![x.clone()],
        Box::new(move |_, gy| vec![Some(gy.iter().zip(&mask).map(|(g, m)| g * m).collect())]),
    ))
}

/// Mean over all elements of (pred - target)^2; scalar output.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor, NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::ShapeMismatch {
            context: format!("mse shapes differ: {:?} vs {:?}", pred.shape(), target.shape()),
        });
    }
    let n = pred.len() as f64;
    let value = pred
        .data()
        .iter()
        .zip(target.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(Tensor::from_op(
        vec![1],
        vec![value],
        vec![pred.clone(), target.clone()],
        Box::new(move |parents, gy| {
            let g = gy[0];
            let p = parents[0].data();
            let t = parents[1].data();
            let gp = parents[0]
                .tracked()
                .then(|| p.iter().zip(t.iter()).map(|(a, b)| g * 2.0 * (a - b) / n).collect());
            let gt = parents[1]
                .tracked()
                .then(|| p.iter().zip(t.iter()).map(|(a, b)| -g * 2.0 * (a - b) / n).collect());
            vec![gp, gt]
        }),
    ))
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::ShapeMismatch {
            context: format!("add shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let y: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, z)| x + z).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        y,
        vec![a.clone(), b.clone()],
        Box::new(|parents, gy| {
            let ga = parents[0].tracked().then(|| gy.to_vec());
            let gb = parents[1].tracked().then(|| gy.to_vec());
            vec![ga, gb]
        }),
    ))
}

/// Multiplication by a constant.
pub fn scale(x: &Tensor, c: f64) -> Tensor {
    let y: Vec<f64> = x.data().iter().map(|v| v * c).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        y,
        vec![x.clone()],
        Box::new(move |_, gy| vec![Some(gy.iter().map(|g| g * c).collect())]),
    )
}

/// Keeps `out_len` time steps starting at `start` from a `[c, l]` tensor.
/// The gradient scatters back into the uncropped positions.
pub fn crop_time(x: &Tensor, start: usize, out_len: usize) -> Result<Tensor, NnError> {
    let (c, l) = chan_len(x, "crop_time input")?;
    if start + out_len > l {
        return Err(NnError::BadGeometry {
            reason: format!("crop [{start}, {start}+{out_len}) exceeds length {l}"),
        });
    }
    let data = x.data();
    let mut y = Vec::with_capacity(c * out_len);
    for ch in 0..c {
        y.extend_from_slice(&data[ch * l + start..ch * l + start + out_len]);
    }
    drop(data);
    Ok(Tensor::from_op(
        vec![c, out_len],
        y,
        vec![x.clone()],
        Box::new(move |_, gy| {
            let mut gx = vec![0.0; c * l];
            for ch in 0..c {
                gx[ch * l + start..ch * l + start + out_len]
                    .copy_from_slice(&gy[ch * out_len..(ch + 1) * out_len]);
            }
            vec![Some(gx)]
        }),
    ))
}
