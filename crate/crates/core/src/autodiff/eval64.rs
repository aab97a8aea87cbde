//! Forward re-evaluation of a recorded tape in `f64`.
//!
//! Used as the high-precision side of the finite-difference gradient check:
//! leaf values are upcast from the recorded `f32` tensors (one leaf may be
//! overridden), every op is recomputed in double precision.

use super::{broadcast_kind, Broadcast, Op, Tape, Var, PROB_EPS};

/// Recomputes node values `0..=target` in f64, optionally replacing the
/// value of one leaf, and returns the (scalar) value of `target`.
pub(crate) fn eval_scalar_f64(tape: &Tape, target: Var, override_leaf: Option<(Var, &[f64])>) -> f64 {
    let n = target.index() + 1;
    let mut vals: Vec<Vec<f64>> = Vec::with_capacity(n);
    for idx in 0..n {
        let v = match tape.node_op(idx) {
            Op::Leaf => {
                if let Some((ov, data)) = override_leaf {
                    if ov.index() == idx {
                        vals.push(data.to_vec());
                        continue;
                    }
                }
                tape.node_value(idx).data().iter().map(|&x| x as f64).collect()
            }
            Op::Affine { x, w, b } => {
                let (rows, in_dim) = rank12(tape, *x);
                let out_dim = tape.node_value(w.index()).shape()[1];
                let xs = &vals[x.index()];
                let ws = &vals[w.index()];
                let bs = &vals[b.index()];
                let mut out = vec![0.0f64; rows * out_dim];
                for r in 0..rows {
                    let orow = &mut out[r * out_dim..(r + 1) * out_dim];
                    orow.copy_from_slice(bs);
                    for i in 0..in_dim {
                        let xv = xs[r * in_dim + i];
                        for o in 0..out_dim {
                            orow[o] += xv * ws[i * out_dim + o];
                        }
                    }
                }
                out
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let sx = tape.node_value(x.index()).shape().to_vec();
                let sw = tape.node_value(w.index()).shape().to_vec();
                let (bs_, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
                let (oc, kh, kw) = (sw[0], sw[2], sw[3]);
                let oh = (h + 2 * pad - kh) / stride + 1;
                let ow = (wd + 2 * pad - kw) / stride + 1;
                let xs = &vals[x.index()];
                let ws = &vals[w.index()];
                let bias = &vals[b.index()];
                let mut out = vec![0.0f64; bs_ * oc * oh * ow];
                for bb in 0..bs_ {
                    for o in 0..oc {
                        let obase = ((bb * oc) + o) * oh * ow;
                        out[obase..obase + oh * ow].fill(bias[o]);
                        for cc in 0..c {
                            let xbase = ((bb * c) + cc) * h * wd;
                            let wbase = ((o * c) + cc) * kh * kw;
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let mut acc = 0.0f64;
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - *pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - *pad as isize;
                                            if ix < 0 || ix >= wd as isize {
                                                continue;
                                            }
                                            acc += xs[xbase + iy as usize * wd + ix as usize]
                                                * ws[wbase + ky * kw + kx];
                                        }
                                    }
                                    out[obase + oy * ow + ox] += acc;
                                }
                            }
                        }
                    }
                }
                out
            }
            Op::Relu(x) => vals[x.index()].iter().map(|&a| a.max(0.0)).collect(),
            Op::Sigmoid(x) => vals[x.index()]
                .iter()
                .map(|&a| 1.0 / (1.0 + (-a).exp()))
                .collect(),
            Op::Tanh(x) => vals[x.index()].iter().map(|&a| a.tanh()).collect(),
            Op::Softmax(x) => {
                let (rows, cols) = rank12(tape, *x);
                let xs = &vals[x.index()];
                let mut out = vec![0.0f64; rows * cols];
                for r in 0..rows {
                    let row = &xs[r * cols..(r + 1) * cols];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for (i, &z) in row.iter().enumerate() {
                        let e = (z - max).exp();
                        out[r * cols + i] = e;
                        sum += e;
                    }
                    for o in &mut out[r * cols..(r + 1) * cols] {
                        *o /= sum;
                    }
                }
                out
            }
            Op::GlobalAvgPool(x) => {
                let s = tape.node_value(x.index()).shape().to_vec();
                let plane = s[2] * s[3];
                let xs = &vals[x.index()];
                (0..s[0] * s[1])
                    .map(|i| xs[i * plane..(i + 1) * plane].iter().sum::<f64>() / plane as f64)
                    .collect()
            }
            Op::MaxMany(xs) => {
                let n = vals[xs[0].index()].len();
                let mut out = vals[xs[0].index()].clone();
                for v in xs.iter().skip(1) {
                    let d = &vals[v.index()];
                    for i in 0..n {
                        if d[i] > out[i] {
                            out[i] = d[i];
                        }
                    }
                }
                out
            }
            Op::Concat { xs, axis } => {
                let first = tape.node_value(xs[0].index()).shape().to_vec();
                let outer: usize = first[..*axis].iter().product();
                let inner: usize = first[*axis + 1..].iter().product();
                let total_axis: usize = xs
                    .iter()
                    .map(|v| tape.node_value(v.index()).shape()[*axis])
                    .sum();
                let out_stride = total_axis * inner;
                let mut out = vec![0.0f64; outer * out_stride];
                let mut offset = 0usize;
                for v in xs {
                    let block = tape.node_value(v.index()).shape()[*axis] * inner;
                    let data = &vals[v.index()];
                    for o in 0..outer {
                        let dst = o * out_stride + offset;
                        out[dst..dst + block].copy_from_slice(&data[o * block..(o + 1) * block]);
                    }
                    offset += block;
                }
                out
            }
            Op::MeanAll(x) => {
                let xs = &vals[x.index()];
                vec![xs.iter().sum::<f64>() / xs.len() as f64]
            }
            Op::Mse { a, b } => {
                let (av, bv) = (&vals[a.index()], &vals[b.index()]);
                let acc: f64 = av.iter().zip(bv).map(|(&x, &y)| (x - y) * (x - y)).sum();
                vec![acc / av.len() as f64]
            }
            Op::SumSqDiff { a, b } => {
                let (av, bv) = (&vals[a.index()], &vals[b.index()]);
                vec![av.iter().zip(bv).map(|(&x, &y)| (x - y) * (x - y)).sum()]
            }
            Op::L2Norm(x) => {
                vec![vals[x.index()].iter().map(|&a| a * a).sum::<f64>().sqrt()]
            }
            Op::PairDistMean { a, b } => {
                let (rows, cols) = rank12(tape, *a);
                let (av, bv) = (&vals[a.index()], &vals[b.index()]);
                let mut acc = 0.0;
                for r in 0..rows {
                    let mut sq = 0.0;
                    for i in r * cols..(r + 1) * cols {
                        let d = av[i] - bv[i];
                        sq += d * d;
                    }
                    acc += sq.sqrt();
                }
                vec![acc / rows as f64]
            }
            Op::Bce { p, y } => {
                let (pv, yv) = (&vals[p.index()], &vals[y.index()]);
                let mut acc = 0.0;
                for (&pi, &yi) in pv.iter().zip(yv) {
                    let pc = pi.clamp(PROB_EPS as f64, 1.0 - PROB_EPS as f64);
                    acc += -(yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln());
                }
                vec![acc / pv.len() as f64]
            }
            Op::Cce { logits, labels } => {
                let (rows, cols) = rank12(tape, *logits);
                let lv = &vals[logits.index()];
                let mut acc = 0.0;
                for (r, &label) in labels.iter().enumerate() {
                    let row = &lv[r * cols..(r + 1) * cols];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
                    acc += max + sum.ln() - row[label];
                }
                vec![acc / rows as f64]
            }
            Op::Add { a, b } => broadcast_apply(tape, &vals, *a, *b, |x, y| x + y),
            Op::Sub { a, b } => broadcast_apply(tape, &vals, *a, *b, |x, y| x - y),
            Op::Mul { a, b } => broadcast_apply(tape, &vals, *a, *b, |x, y| x * y),
            Op::Scale { x, c } => vals[x.index()].iter().map(|&a| a * *c as f64).collect(),
        };
        vals.push(v);
    }
    vals[target.index()][0]
}

fn rank12(tape: &Tape, v: Var) -> (usize, usize) {
    match tape.node_value(v.index()).shape() {
        [c] => (1, *c),
        [r, c] => (*r, *c),
        s => panic!("expected rank 1 or 2, got {s:?}"),
    }
}

fn broadcast_apply(
    tape: &Tape,
    vals: &[Vec<f64>],
    a: Var,
    b: Var,
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let sa = tape.node_value(a.index()).shape();
    let sb = tape.node_value(b.index()).shape();
    let (av, bv) = (&vals[a.index()], &vals[b.index()]);
    match broadcast_kind(sa, sb).expect("checked at forward") {
        Broadcast::Same => av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::RowWise => {
            let cols = bv.len();
            av.iter().enumerate().map(|(i, &x)| f(x, bv[i % cols])).collect()
        }
    }
}
