//! Training passes over many sequences at once.
//!
//! Sequences of equal length are grouped into chunks and every activation is
//! stored batch-innermost, so the hot loops run over contiguous lanes and
//! compile to SIMD. The arithmetic order per sequence matches the scalar cell
//! in the parent module, so predictions agree bit for bit.

use std::collections::BTreeMap;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub};

use super::{Direction, Layout};

/// Sequences per chunk; sized so one chunk's activations stay in L2.
const CHUNK: usize = 64;

/// Floating-point lane type of the batched passes.
pub(super) trait Real:
    Copy
    + Default
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + MulAssign
    + Sum
{
    const ZERO: Self;
    const ONE: Self;
    const TWO: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    /// `e^x` to within a few ulp, branch-free so that loops over it vectorize.
    fn fast_exp(self) -> Self;
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const TWO: Self = 2.0;

    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(self) -> f64 {
        self
    }

    #[inline(always)]
    fn fast_exp(self) -> f64 {
        const LN2_HI: f64 = 6.931_471_803_691_238e-1;
        const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
        // adding and subtracting this rounds to the nearest integer
        const ROUND: f64 = 6_755_399_441_055_744.0;
        let x = self.clamp(-708.0, 708.0);
        let shifted = x * std::f64::consts::LOG2_E + ROUND;
        let k = shifted - ROUND;
        let r = (x - k * LN2_HI) - k * LN2_LO;
        // Taylor series of e^r on |r| <= ln2 / 2
        let mut p = 1.0 / 6_227_020_800.0;
        for c in [
            1.0 / 479_001_600.0,
            1.0 / 39_916_800.0,
            1.0 / 3_628_800.0,
            1.0 / 362_880.0,
            1.0 / 40_320.0,
            1.0 / 5_040.0,
            1.0 / 720.0,
            1.0 / 120.0,
            1.0 / 24.0,
            1.0 / 6.0,
            0.5,
            1.0,
            1.0,
        ] {
            p = p * r + c;
        }
        let n = shifted.to_bits().wrapping_sub(ROUND.to_bits());
        p * f64::from_bits(n.wrapping_add(1023) << 52)
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const TWO: Self = 2.0;

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn fast_exp(self) -> f32 {
        const LN2_HI: f32 = 0.693_359_4;
        const LN2_LO: f32 = -2.121_944_4e-4;
        const ROUND: f32 = 12_582_912.0;
        let x = self.clamp(-87.0, 87.0);
        let shifted = x * std::f32::consts::LOG2_E + ROUND;
        let k = shifted - ROUND;
        let r = (x - k * LN2_HI) - k * LN2_LO;
        let mut p = 1.0 / 5_040.0;
        for c in [1.0 / 720.0, 1.0 / 120.0, 1.0 / 24.0, 1.0 / 6.0, 0.5, 1.0, 1.0] {
            p = p * r + c;
        }
        let n = shifted.to_bits().wrapping_sub(ROUND.to_bits());
        p * f32::from_bits(n.wrapping_add(127) << 23)
    }
}

#[inline(always)]
pub(super) fn sigmoid<T: Real>(x: T) -> T {
    T::ONE / (T::ONE + (-x).fast_exp())
}

#[inline(always)]
pub(super) fn tanh<T: Real>(x: T) -> T {
    T::TWO / (T::ONE + (-(T::TWO * x)).fast_exp()) - T::ONE
}

#[inline(always)]
fn sum<T: Real>(a: &[T]) -> T {
    let mut acc = [T::ZERO; 8];
    let chunks = a.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for l in 0..8 {
            acc[l] += c[l];
        }
    }
    fold(acc) + rest.iter().copied().sum::<T>()
}

#[inline(always)]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::ZERO; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let rest: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    fold(acc) + rest
}

#[inline(always)]
fn fold<T: Real>(a: [T; 8]) -> T {
    ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]))
}

/// Up to [`CHUNK`] encoded sequences of one length, time-major.
#[derive(Debug, Clone)]
pub(super) struct Chunk {
    steps: usize,
    size: usize,
    /// `steps x size`, left to right
    forward: Vec<usize>,
    /// `steps x size`, right to left
    backward: Vec<usize>,
    targets: Vec<f64>,
}

impl Chunk {
    fn tokens(&self, dir: Direction) -> &[usize] {
        match dir {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }
}

/// Groups sequences by length, keeping input order within a group.
pub(super) fn chunk(data: &[(Vec<usize>, f64)]) -> Vec<Chunk> {
    let mut by_len: BTreeMap<usize, Vec<&(Vec<usize>, f64)>> = BTreeMap::new();
    for item in data {
        by_len.entry(item.0.len()).or_default().push(item);
    }
    let mut chunks = Vec::new();
    for (steps, items) in by_len {
        for part in items.chunks(CHUNK) {
            let size = part.len();
            let mut forward = vec![0; steps * size];
            let mut backward = vec![0; steps * size];
            for (b, (seq, _)) in part.iter().enumerate() {
                for (t, &k) in seq.iter().enumerate() {
                    forward[t * size + b] = k;
                    backward[(steps - 1 - t) * size + b] = k;
                }
            }
            let targets = part.iter().map(|(_, y)| *y).collect();
            chunks.push(Chunk {
                steps,
                size,
                forward,
                backward,
                targets,
            });
        }
    }
    chunks
}

/// Activations of one direction over one chunk, each `steps x rows x size`.
#[derive(Debug, Default)]
struct Trace<T> {
    gates: Vec<T>,
    cells: Vec<T>,
    tanh_cells: Vec<T>,
    hidden: Vec<T>,
}

#[derive(Debug, Default)]
pub(super) struct Workspace<T> {
    fw: Trace<T>,
    bw: Trace<T>,
    dh_f: Vec<T>,
    dh_b: Vec<T>,
    dc: Vec<T>,
    dz: Vec<T>,
    params: Vec<T>,
    grad: Vec<T>,
}

#[derive(Clone, Copy)]
struct CellView<'a, T> {
    weights: &'a [T],
    biases: &'a [T],
    vocab: usize,
    hidden: usize,
}

impl<'a, T: Real> CellView<'a, T> {
    fn new(params: &'a [T], layout: Layout, dir: Direction) -> Self {
        let (weights, biases) = params[layout.cell(dir)].split_at(layout.cell_weights());
        CellView {
            weights,
            biases,
            vocab: layout.vocab,
            hidden: layout.hidden,
        }
    }

    #[inline(always)]
    fn forward(&self, tokens: &[usize], steps: usize, size: usize, tr: &mut Trace<T>) {
        let hs = self.hidden;
        let stride = self.vocab + hs;
        let g1 = hs * size;
        let g4 = 4 * g1;
        tr.gates.resize(steps * g4, T::ZERO);
        tr.cells.resize(steps * g1, T::ZERO);
        tr.tanh_cells.resize(steps * g1, T::ZERO);
        tr.hidden.resize(steps * g1, T::ZERO);
        for t in 0..steps {
            let tok = &tokens[t * size..(t + 1) * size];
            let z = &mut tr.gates[t * g4..(t + 1) * g4];
            let h_prev = (t > 0).then(|| &tr.hidden[(t - 1) * g1..t * g1]);
            for r in 0..4 * hs {
                let row = &self.weights[r * stride..(r + 1) * stride];
                let zr = &mut z[r * size..(r + 1) * size];
                for (zb, &k) in zr.iter_mut().zip(tok) {
                    *zb = self.biases[r] + row[k];
                }
                if let Some(hp) = h_prev {
                    for j in 0..hs {
                        let w = row[self.vocab + j];
                        for (zb, &h) in zr.iter_mut().zip(&hp[j * size..(j + 1) * size]) {
                            *zb += w * h;
                        }
                    }
                }
            }
            let (sig, cand) = z.split_at_mut(3 * g1);
            sig.iter_mut().for_each(|v| *v = sigmoid(*v));
            cand.iter_mut().for_each(|v| *v = tanh(*v));

            // equal-length reslices let the loops below drop bounds checks
            let (done, rest) = tr.cells.split_at_mut(t * g1);
            let c = &mut rest[..g1];
            let (i, rest) = z.split_at(g1);
            let (f, rest) = rest.split_at(g1);
            let (o, g) = rest.split_at(g1);
            let (f, o, g) = (&f[..g1], &o[..g1], &g[..g1]);
            if t == 0 {
                for idx in 0..g1 {
                    c[idx] = i[idx] * g[idx];
                }
            } else {
                let cp = &done[(t - 1) * g1..t * g1];
                for idx in 0..g1 {
                    c[idx] = f[idx] * cp[idx] + i[idx] * g[idx];
                }
            }
            let tc = &mut tr.tanh_cells[t * g1..(t + 1) * g1];
            let h = &mut tr.hidden[t * g1..(t + 1) * g1];
            for idx in 0..g1 {
                tc[idx] = tanh(c[idx]);
                h[idx] = o[idx] * tc[idx];
            }
        }
    }

    /// BPTT from `dh` (gradient on the final hidden states, `hidden x size`,
    /// clobbered). Accumulates into this cell's gradient slice.
    #[inline(always)]
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        tokens: &[usize],
        steps: usize,
        size: usize,
        tr: &Trace<T>,
        dh: &mut [T],
        dc: &mut Vec<T>,
        dz: &mut Vec<T>,
        grad: &mut [T],
    ) {
        let hs = self.hidden;
        let stride = self.vocab + hs;
        let g1 = hs * size;
        let g4 = 4 * g1;
        let (gw, gb) = grad.split_at_mut(4 * hs * stride);
        dc.clear();
        dc.resize(g1, T::ZERO);
        dz.resize(g4, T::ZERO);
        for t in (0..steps).rev() {
            let gates = &tr.gates[t * g4..(t + 1) * g4];
            let (i, rest) = gates.split_at(g1);
            let (f, rest) = rest.split_at(g1);
            let (o, g) = rest.split_at(g1);
            let (f, o, g) = (&f[..g1], &o[..g1], &g[..g1]);
            let tc = &tr.tanh_cells[t * g1..(t + 1) * g1];
            let (dh, dc) = (&mut dh[..g1], &mut dc[..g1]);
            {
                let (dzi, rest) = dz.split_at_mut(g1);
                let (dzf, rest) = rest.split_at_mut(g1);
                let (dzo, dzg) = rest.split_at_mut(g1);
                let (dzo, dzg) = (&mut dzo[..g1], &mut dzg[..g1]);
                for idx in 0..g1 {
                    let d_o = dh[idx] * tc[idx];
                    let dcj = dc[idx] + dh[idx] * o[idx] * (T::ONE - tc[idx] * tc[idx]);
                    dzi[idx] = dcj * g[idx] * i[idx] * (T::ONE - i[idx]);
                    dzo[idx] = d_o * o[idx] * (T::ONE - o[idx]);
                    dzg[idx] = dcj * i[idx] * (T::ONE - g[idx] * g[idx]);
                    dzf[idx] = dcj;
                    dc[idx] = dcj * f[idx];
                }
                if t == 0 {
                    dzf.fill(T::ZERO);
                } else {
                    let cp = &tr.cells[(t - 1) * g1..t * g1];
                    for idx in 0..g1 {
                        dzf[idx] *= cp[idx] * f[idx] * (T::ONE - f[idx]);
                    }
                }
            }

            let tok = &tokens[t * size..(t + 1) * size];
            let h_prev = (t > 0).then(|| &tr.hidden[(t - 1) * g1..t * g1]);
            for r in 0..4 * hs {
                let dzr = &dz[r * size..(r + 1) * size];
                gb[r] += sum(dzr);
                let grow = &mut gw[r * stride..(r + 1) * stride];
                for (&d, &k) in dzr.iter().zip(tok) {
                    grow[k] += d;
                }
                if let Some(hp) = h_prev {
                    for j in 0..hs {
                        grow[self.vocab + j] += dot(dzr, &hp[j * size..(j + 1) * size]);
                    }
                }
            }
            if t > 0 {
                dh.fill(T::ZERO);
                for r in 0..4 * hs {
                    let dzr = &dz[r * size..(r + 1) * size];
                    let row = &self.weights[r * stride + self.vocab..(r + 1) * stride];
                    for (j, &w) in row.iter().enumerate() {
                        for (d, &z) in dh[j * size..(j + 1) * size].iter_mut().zip(dzr) {
                            *d += w * z;
                        }
                    }
                }
            }
        }
    }
}

/// Adds one chunk's share of the gradient of the mean squared error over `n`
/// sequences (targets in `[0, 1]`) and returns its share of the loss.
#[inline(always)]
fn chunk_body<T: Real>(params: &[T], layout: Layout, chunk: &Chunk, n: T, ws: &mut Workspace<T>, grad: &mut [T]) -> T {
    let hs = layout.hidden;
    let (steps, size) = (chunk.steps, chunk.size);
    let fw = CellView::new(params, layout, Direction::Forward);
    let bw = CellView::new(params, layout, Direction::Backward);
    fw.forward(chunk.tokens(Direction::Forward), steps, size, &mut ws.fw);
    bw.forward(chunk.tokens(Direction::Backward), steps, size, &mut ws.bw);

    let last = (steps - 1) * hs * size;
    let hf = &ws.fw.hidden[last..last + hs * size];
    let hb = &ws.bw.hidden[last..last + hs * size];
    let out = layout.output_weights();
    let (wf, wb) = params[out.clone()].split_at(hs);
    let bias = params[layout.output_bias()];
    ws.dh_f.clear();
    ws.dh_f.resize(hs * size, T::ZERO);
    ws.dh_b.clear();
    ws.dh_b.resize(hs * size, T::ZERO);
    let mut loss = T::ZERO;
    for b in 0..size {
        let mut yf = T::ZERO;
        let mut yb = T::ZERO;
        for j in 0..hs {
            yf += wf[j] * hf[j * size + b];
        }
        for j in 0..hs {
            yb += wb[j] * hb[j * size + b];
        }
        let p = sigmoid(yf + yb + bias);
        let e = p - T::from_f64(chunk.targets[b]);
        loss += e * e / n;
        let dy = T::TWO * e / n * p * (T::ONE - p);
        for j in 0..hs {
            grad[out.start + j] += dy * hf[j * size + b];
            grad[out.start + hs + j] += dy * hb[j * size + b];
            ws.dh_f[j * size + b] = wf[j] * dy;
            ws.dh_b[j * size + b] = wb[j] * dy;
        }
        grad[layout.output_bias()] += dy;
    }

    let Workspace {
        fw: tf,
        bw: tb,
        dh_f,
        dh_b,
        dc,
        dz,
        ..
    } = ws;
    fw.backward(
        chunk.tokens(Direction::Forward),
        steps,
        size,
        tf,
        dh_f,
        dc,
        dz,
        &mut grad[layout.cell(Direction::Forward)],
    );
    bw.backward(
        chunk.tokens(Direction::Backward),
        steps,
        size,
        tb,
        dh_b,
        dc,
        dz,
        &mut grad[layout.cell(Direction::Backward)],
    );
    loss
}

#[inline(always)]
fn all_chunks<T: Real>(
    params: &[T],
    layout: Layout,
    chunks: &[Chunk],
    n: T,
    ws: &mut Workspace<T>,
    grad: &mut [T],
) -> f64 {
    // a plain loop: closures would not inherit the caller's target features
    let mut loss = 0.0;
    for c in chunks {
        loss += chunk_body(params, layout, c, n, ws, grad).to_f64();
    }
    loss
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn all_chunks_avx2<T: Real>(
    params: &[T],
    layout: Layout,
    chunks: &[Chunk],
    n: T,
    ws: &mut Workspace<T>,
    grad: &mut [T],
) -> f64 {
    all_chunks(params, layout, chunks, n, ws, grad)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512vl,avx2")]
unsafe fn all_chunks_avx512<T: Real>(
    params: &[T],
    layout: Layout,
    chunks: &[Chunk],
    n: T,
    ws: &mut Workspace<T>,
    grad: &mut [T],
) -> f64 {
    all_chunks(params, layout, chunks, n, ws, grad)
}

/// Mean squared error over all chunks and its gradient, in the flat layout,
/// computed with lanes of type `T`.
pub(super) fn loss_and_gradients<T: Real>(
    params: &[f64],
    layout: Layout,
    chunks: &[Chunk],
    ws: &mut Workspace<T>,
) -> (f64, Vec<f64>) {
    let n: usize = chunks.iter().map(|c| c.size).sum();
    let n = T::from_f64(n as f64);
    let mut p = std::mem::take(&mut ws.params);
    p.clear();
    p.extend(params.iter().map(|&x| T::from_f64(x)));
    let mut grad = std::mem::take(&mut ws.grad);
    grad.clear();
    grad.resize(layout.len(), T::ZERO);

    #[cfg(target_arch = "x86_64")]
    let loss = if std::is_x86_feature_detected!("avx512f") && std::is_x86_feature_detected!("avx512vl") {
        // SAFETY: the CPU supports AVX-512F and VL, checked above.
        unsafe { all_chunks_avx512(&p, layout, chunks, n, ws, &mut grad) }
    } else if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked above.
        unsafe { all_chunks_avx2(&p, layout, chunks, n, ws, &mut grad) }
    } else {
        all_chunks(&p, layout, chunks, n, ws, &mut grad)
    };
    #[cfg(not(target_arch = "x86_64"))]
    let loss = all_chunks(&p, layout, chunks, n, ws, &mut grad);

    let out = grad.iter().map(|g| g.to_f64()).collect();
    ws.params = p;
    ws.grad = grad;
    (loss, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_precision_exp_matches_std() {
        let mut worst = 0.0f64;
        let mut x = -700.0f64;
        while x < 700.0 {
            let rel = ((x.fast_exp() - x.exp()) / x.exp()).abs();
            worst = worst.max(rel);
            x += 0.0137;
        }
        assert!(worst < 1e-15, "worst relative error {worst}");
        assert_eq!(0.0f64.fast_exp(), 1.0);
        assert!((-1e6f64).fast_exp() > 0.0 && (-1e6f64).fast_exp() < 1e-300);
        assert!(1e6f64.fast_exp().is_finite());
    }

    #[test]
    fn single_precision_exp_matches_std() {
        let mut worst = 0.0f32;
        let mut x = -87.0f32;
        while x < 87.0 {
            let rel = ((x.fast_exp() - x.exp()) / x.exp()).abs();
            worst = worst.max(rel);
            x += 0.0137;
        }
        assert!(worst < 5e-7, "worst relative error {worst}");
        assert_eq!(0.0f32.fast_exp(), 1.0);
    }

    #[test]
    fn tanh_and_sigmoid_match_std() {
        for i in -2000..2000 {
            let x = i as f64 * 0.01;
            assert!((tanh(x) - x.tanh()).abs() < 1e-15, "{x}");
            assert!((sigmoid(x) - 1.0 / (1.0 + (-x).exp())).abs() < 1e-15, "{x}");
        }
        assert_eq!(tanh(1e9f64), 1.0);
        assert_eq!(tanh(-1e9f64), -1.0);
        assert_eq!(tanh(1e9f32), 1.0);
    }

    #[test]
    fn single_precision_gradients_track_double() {
        let layout = Layout { vocab: 5, hidden: 4 };
        let params: Vec<f64> = (0..layout.len())
            .map(|i| ((i * 37 % 101) as f64 / 101.0 - 0.5) * 0.6)
            .collect();
        let data: Vec<(Vec<usize>, f64)> = (0..70)
            .map(|i| {
                (
                    (0..6 + i % 3).map(|t| (i * 7 + t * 3) % 5).collect(),
                    (i % 10) as f64 / 10.0,
                )
            })
            .collect();
        let chunks = chunk(&data);
        let (l64, g64) = loss_and_gradients::<f64>(&params, layout, &chunks, &mut Workspace::default());
        let (l32, g32) = loss_and_gradients::<f32>(&params, layout, &chunks, &mut Workspace::default());
        assert!((l64 - l32).abs() < 1e-6 * l64.max(1.0));
        let norm = g64.iter().map(|g| g * g).sum::<f64>().sqrt();
        let diff = g64.iter().zip(&g32).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff < 1e-5 * norm, "{diff} vs {norm}");
    }

    #[test]
    fn chunks_group_by_length_and_reverse() {
        let data = vec![(vec![0, 1, 2], 0.1), (vec![3, 4], 0.2), (vec![5, 6, 7], 0.3)];
        let chunks = chunk(&data);
        assert_eq!(chunks.len(), 2);
        assert_eq!((chunks[0].steps, chunks[0].size), (2, 1));
        let c = &chunks[1];
        assert_eq!((c.steps, c.size), (3, 2));
        assert_eq!(c.forward, vec![0, 5, 1, 6, 2, 7]);
        assert_eq!(c.backward, vec![2, 7, 1, 6, 0, 5]);
        assert_eq!(c.targets, vec![0.1, 0.3]);
    }
}
