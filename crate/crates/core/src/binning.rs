//! Tent-kernel binning of event streams into signed (`D`) and unsigned (`C`)
//! tensors, per-column fusion of per-threshold stacks, and the rate term.
//!
//! Bin `t` (0-based) is centred at `t · bin_width` seconds. An event at bin
//! coordinate `u` splits its unit weight between bins `floor(u)` and
//! `floor(u) + 1`. Weights are accumulated as exact integers at 2^-32
//! resolution, so sums over disjoint streams are bitwise additive.

use evslab_autograd::{Graph, Var};

use crate::sensor::Event;
use crate::{error::config, Error, Result, Tensor, CADENCE};

const ONE: i64 = 1 << 32;
const INV_ONE: f64 = 1.0 / ONE as f64;

/// Triangular kernel `max(1 - |t - u|, 0)`.
pub fn tent(t: f64, u: f64) -> f64 {
    (1.0 - (t - u).abs()).max(0.0)
}

/// Commanded threshold Δ for every (bin, column).
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnDeltas {
    bins: usize,
    width: usize,
    values: Vec<f64>,
}

impl ColumnDeltas {
    pub fn new(bins: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != bins * width {
            return Err(config(format!("need {} deltas, got {}", bins * width, values.len())));
        }
        if values.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(config("deltas must be finite and positive"));
        }
        Ok(Self { bins, width, values })
    }

    pub fn constant(bins: usize, width: usize, delta: f64) -> Self {
        Self {
            bins,
            width,
            values: vec![delta; bins * width],
        }
    }

    /// Deltas implied by a per-window column schedule; window `w` covers bins
    /// `w·CADENCE .. (w+1)·CADENCE`.
    pub fn from_schedule(schedule: &[Vec<usize>], thresholds: &[f64], bins: usize) -> Result<Self> {
        let width = schedule.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(bins * width);
        for t in 0..bins {
            let row = schedule
                .get(t / CADENCE)
                .ok_or_else(|| config(format!("schedule has no window for bin {t}")))?;
            if row.len() != width {
                return Err(config("schedule rows differ in width"));
            }
            for &j in row {
                values.push(*thresholds.get(j).ok_or_else(|| config(format!("threshold index {j} out of range")))?);
            }
        }
        Self::new(bins, width, values)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, t: usize, x: usize) -> f64 {
        self.values[t * self.width + x]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.width..(t + 1) * self.width]
    }
}

/// Incremental accumulator; thresholds are attached when finishing.
#[derive(Clone, Debug)]
pub struct Binner {
    bins: usize,
    height: usize,
    width: usize,
    bin_width: f64,
    signed: Vec<i64>,
    unsigned: Vec<i64>,
}

impl Binner {
    pub fn new(bins: usize, height: usize, width: usize, bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0) {
            return Err(config("bin width must be positive"));
        }
        let n = bins * height * width;
        Ok(Self {
            bins,
            height,
            width,
            bin_width,
            signed: vec![0; n],
            unsigned: vec![0; n],
        })
    }

    pub fn push(&mut self, e: &Event) -> Result<()> {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= self.width || y >= self.height {
            return Err(Error::Data(format!("event at ({x}, {y}) outside {}x{}", self.width, self.height)));
        }
        if !e.tau.is_finite() {
            return Err(Error::Data(format!("non-finite timestamp {}", e.tau)));
        }
        let u = e.tau / self.bin_width;
        let lo = u.floor();
        let w_hi = ((u - lo) * ONE as f64).round() as i64;
        let s = i64::from(e.polarity.signum());
        let plane = self.height * self.width;
        let pix = y * self.width + x;
        for (bin, w) in [(lo, ONE - w_hi), (lo + 1.0, w_hi)] {
            if w == 0 || bin < 0.0 || bin >= self.bins as f64 {
                continue;
            }
            let i = bin as usize * plane + pix;
            self.signed[i] += s * w;
            self.unsigned[i] += w;
        }
        Ok(())
    }

    pub fn extend<'a>(&mut self, events: impl IntoIterator<Item = &'a Event>) -> Result<()> {
        events.into_iter().try_for_each(|e| self.push(e))
    }

    /// `D` and `C` of bin `t` under per-column deltas `row`.
    pub fn frame(&self, t: usize, row: &[f64]) -> (Tensor, Tensor) {
        frame_of(&self.signed, &self.unsigned, self.height, self.width, t, row)
    }

    pub fn finish(self, deltas: ColumnDeltas) -> Result<BinnedTensors> {
        if deltas.bins != self.bins || deltas.width != self.width {
            return Err(config(format!(
                "deltas {}x{} do not match binner {}x{}",
                deltas.bins, deltas.width, self.bins, self.width
            )));
        }
        Ok(BinnedTensors {
            bins: self.bins,
            height: self.height,
            width: self.width,
            bin_width: self.bin_width,
            signed: self.signed,
            unsigned: self.unsigned,
            deltas,
        })
    }
}

fn frame_of(signed: &[i64], unsigned: &[i64], h: usize, w: usize, t: usize, row: &[f64]) -> (Tensor, Tensor) {
    let plane = h * w;
    let s = &signed[t * plane..(t + 1) * plane];
    let u = &unsigned[t * plane..(t + 1) * plane];
    let d: Vec<f64> = s.iter().enumerate().map(|(i, &v)| row[i % w] * (v as f64 * INV_ONE)).collect();
    let c: Vec<f64> = u.iter().map(|&v| v as f64 * INV_ONE).collect();
    (
        Tensor::new(&[h, w], d).expect("frame shape"),
        Tensor::new(&[h, w], c).expect("frame shape"),
    )
}

/// Binned event tensors of one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedTensors {
    bins: usize,
    height: usize,
    width: usize,
    bin_width: f64,
    signed: Vec<i64>,
    unsigned: Vec<i64>,
    deltas: ColumnDeltas,
}

impl BinnedTensors {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn deltas(&self) -> &ColumnDeltas {
        &self.deltas
    }

    /// `D_t` as `[H, W]`.
    pub fn d_frame(&self, t: usize) -> Tensor {
        self.frame(t).0
    }

    /// `C_t` as `[H, W]`.
    pub fn c_frame(&self, t: usize) -> Tensor {
        self.frame(t).1
    }

    pub fn frame(&self, t: usize) -> (Tensor, Tensor) {
        frame_of(&self.signed, &self.unsigned, self.height, self.width, t, self.deltas.row(t))
    }

    /// Full `D` as `[T, H, W]`.
    pub fn d(&self) -> Tensor {
        self.stacked(|t| self.d_frame(t))
    }

    pub fn c(&self) -> Tensor {
        self.stacked(|t| self.c_frame(t))
    }

    fn stacked(&self, f: impl Fn(usize) -> Tensor) -> Tensor {
        let data: Vec<f64> = (0..self.bins).flat_map(|t| f(t).into_data()).collect();
        Tensor::new(&[self.bins, self.height, self.width], data).expect("stack shape")
    }

    /// Total tent mass, i.e. the event count of interior events.
    pub fn total_count(&self) -> f64 {
        self.unsigned.iter().map(|&v| v as f64 * INV_ONE).sum()
    }

    /// Bin-wise sum of two streams binned on the same grid.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if (self.bins, self.height, self.width) != (other.bins, other.height, other.width)
            || self.bin_width != other.bin_width
            || self.deltas != other.deltas
        {
            return Err(config("cannot add binned tensors on different grids"));
        }
        let zip = |a: &[i64], b: &[i64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Ok(Self {
            signed: zip(&self.signed, &other.signed),
            unsigned: zip(&self.unsigned, &other.unsigned),
            ..self.clone()
        })
    }
}

/// Bin a whole stream of `height × deltas.width()` pixels into `deltas.bins()` bins.
pub fn bin_events(events: &[Event], height: usize, bin_width: f64, deltas: ColumnDeltas) -> Result<BinnedTensors> {
    let mut b = Binner::new(deltas.bins, height, deltas.width, bin_width)?;
    b.extend(events)?;
    b.finish(deltas)
}

/// Fused tensors and the per-bin column selection that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedTensors {
    /// `[T, H, W]`.
    pub d: Tensor,
    pub c: Tensor,
    /// Selected threshold index per bin and column.
    pub selection: Vec<Vec<usize>>,
}

fn check_stack(stack: &[BinnedTensors]) -> Result<(usize, usize, usize)> {
    let first = stack.first().ok_or_else(|| config("empty threshold stack"))?;
    let dims = (first.bins, first.height, first.width);
    if stack.iter().any(|b| (b.bins, b.height, b.width) != dims) {
        return Err(config("threshold stack shapes disagree"));
    }
    Ok(dims)
}

/// Hard fusion: column `x` of bin `t` is copied from stack entry `selection[t][x]`.
pub fn fuse(stack: &[BinnedTensors], selection: &[Vec<usize>]) -> Result<FusedTensors> {
    let (bins, h, w) = check_stack(stack)?;
    if selection.len() != bins || selection.iter().any(|r| r.len() != w) {
        return Err(Error::Contract(format!("selection must be {bins} bins x {w} columns")));
    }
    if let Some(j) = selection.iter().flatten().find(|&&j| j >= stack.len()) {
        return Err(Error::Contract(format!("selected index {j} outside stack of {}", stack.len())));
    }
    let mut d = Vec::with_capacity(bins * h * w);
    let mut c = Vec::with_capacity(bins * h * w);
    for (t, row) in selection.iter().enumerate() {
        let frames: Vec<(Tensor, Tensor)> = stack.iter().map(|b| b.frame(t)).collect();
        for i in 0..h * w {
            let j = row[i % w];
            d.push(frames[j].0.data()[i]);
            c.push(frames[j].1.data()[i]);
        }
    }
    Ok(FusedTensors {
        d: Tensor::new(&[bins, h, w], d)?,
        c: Tensor::new(&[bins, h, w], c)?,
        selection: selection.to_vec(),
    })
}

/// Index of the hot entry of every column of a `[N_c, W]` one-hot mask.
pub fn mask_indices(mask: &Tensor) -> Result<Vec<usize>> {
    let [nc, w] = mask.shape() else {
        return Err(Error::Contract(format!("mask must be [N_c, W], got {:?}", mask.shape())));
    };
    (0..*w)
        .map(|x| {
            let col: Vec<f64> = (0..*nc).map(|j| mask.data()[j * w + x]).collect();
            let ones = col.iter().filter(|&&v| v == 1.0).count();
            let zeros = col.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != *nc {
                return Err(Error::Contract(format!("mask column {x} is not one-hot: {col:?}")));
            }
            Ok(col.iter().position(|&v| v == 1.0).expect("one hot"))
        })
        .collect()
}

/// Hard fusion from one-hot `[N_c, W]` masks, one per bin.
pub fn fuse_masks(stack: &[BinnedTensors], masks: &[Tensor]) -> Result<FusedTensors> {
    let selection = masks.iter().map(mask_indices).collect::<Result<Vec<_>>>()?;
    fuse(stack, &selection)
}

/// Relaxed fusion on the graph: `Σ_j frames[j] ⊙ mask[j]` with the simplex
/// mask `[N_c, W]` broadcast over rows.
pub fn fuse_relaxed(g: &mut Graph, frames: &[Var], mask: Var) -> Result<Var> {
    let nc = frames.len();
    if nc == 0 || g.shape(mask).first() != Some(&nc) {
        return Err(Error::Contract(format!("mask {:?} does not match {nc} frames", g.shape(mask))));
    }
    let mut acc: Option<Var> = None;
    for (j, &f) in frames.iter().enumerate() {
        let m = g.select0(mask, j)?;
        let term = g.col_scale(f, m)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(acc.expect("non-empty"))
}

/// Per-bin rate term `ΣC̃_t / Σ_all C_ref`.
pub fn rate_loss(c_fused: &Tensor, c_ref: &Tensor) -> Result<Vec<f64>> {
    let total = c_ref.sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateScene("reference stream has no events".into()));
    }
    let bins = *c_fused.shape().first().ok_or_else(|| Error::Contract("rate_loss needs [T, H, W]".into()))?;
    Ok((0..bins).map(|t| c_fused.index0(t).sum() / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(tau: f64, x: u16, y: u16, s: i8) -> Event {
        Event { tau, x, y, polarity: s }
    }

    #[test]
    fn half_bin_event_splits_evenly() {
        let b = bin_events(&[ev(1.5, 0, 0, 1)], 1, 1.0, ColumnDeltas::constant(4, 1, 1.4)).unwrap();
        assert_eq!(b.d().data(), &[0.0, 0.7, 0.7, 0.0]);
        assert_eq!(b.c().data(), &[0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn event_on_bin_centre_has_full_weight() {
        let b = bin_events(&[ev(2.0, 0, 0, -1)], 1, 1.0, ColumnDeltas::constant(4, 1, 1.0)).unwrap();
        assert_eq!(b.d().data(), &[0.0, 0.0, -1.0, 0.0]);
        assert_eq!(b.c().data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_stream_is_zero() {
        let b = bin_events(&[], 2, 0.1, ColumnDeltas::constant(3, 2, 1.2)).unwrap();
        assert!(b.d().data().iter().chain(b.c().data()).all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_events_keep_partial_weight() {
        let b = bin_events(&[ev(-0.25, 0, 0, 1), ev(3.5, 0, 0, 1)], 1, 1.0, ColumnDeltas::constant(4, 1, 1.0)).unwrap();
        assert_eq!(b.c().data(), &[0.75, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn timestamps_scale_by_bin_width() {
        let b = bin_events(&[ev(0.05, 0, 0, 1)], 1, 0.1, ColumnDeltas::constant(2, 1, 1.0)).unwrap();
        assert_eq!(b.c().data(), &[0.5, 0.5]);
    }

    #[test]
    fn out_of_range_coordinates_are_rejected() {
        let r = bin_events(&[ev(0.0, 3, 0, 1)], 1, 1.0, ColumnDeltas::constant(2, 2, 1.0));
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn column_deltas_follow_window_schedule() {
        let d = ColumnDeltas::from_schedule(&[vec![0, 1], vec![1, 0]], &[1.15, 2.2], 6).unwrap();
        assert_eq!(d.row(3), &[1.15, 2.2]);
        assert_eq!(d.row(4), &[2.2, 1.15]);
        assert!(ColumnDeltas::from_schedule(&[vec![0, 1]], &[1.15, 2.2], 5).is_err());
    }

    fn two_stacks() -> Vec<BinnedTensors> {
        let a = vec![ev(0.0, 0, 0, 1), ev(1.0, 1, 1, -1)];
        let b = vec![ev(0.0, 0, 1, 1), ev(1.0, 1, 0, 1), ev(1.0, 1, 0, 1)];
        vec![
            bin_events(&a, 2, 1.0, ColumnDeltas::constant(2, 2, 1.15)).unwrap(),
            bin_events(&b, 2, 1.0, ColumnDeltas::constant(2, 2, 1.4)).unwrap(),
        ]
    }

    #[test]
    fn uniform_selection_is_identity() {
        let s = two_stacks();
        let f = fuse(&s, &[vec![0, 0], vec![0, 0]]).unwrap();
        assert_eq!(f.d, s[0].d());
        assert_eq!(f.c, s[0].c());
    }

    #[test]
    fn single_column_switch_copies_that_column() {
        let s = two_stacks();
        let f = fuse(&s, &[vec![1, 0], vec![1, 0]]).unwrap();
        for t in 0..2 {
            for y in 0..2 {
                let i = (t * 2 + y) * 2;
                assert_eq!(f.d.data()[i], s[1].d().data()[i]);
                assert_eq!(f.d.data()[i + 1], s[0].d().data()[i + 1]);
            }
        }
    }

    #[test]
    fn non_one_hot_mask_is_a_contract_error() {
        let s = two_stacks();
        let soft = Tensor::new(&[2, 2], vec![0.5, 1.0, 0.5, 0.0]).unwrap();
        let hard = Tensor::new(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(matches!(fuse_masks(&s, &[soft, hard.clone()]), Err(Error::Contract(_))));
        let f = fuse_masks(&s, &[hard.clone(), hard]).unwrap();
        assert_eq!(f.selection, vec![vec![1, 0], vec![1, 0]]);
    }

    #[test]
    fn relaxed_half_mask_averages_columns() {
        let s = two_stacks();
        let mut g = Graph::new();
        let frames: Vec<Var> = s.iter().map(|b| g.constant(b.d_frame(1))).collect();
        let mask = g.constant(Tensor::new(&[2, 2], vec![0.5, 1.0, 0.5, 0.0]).unwrap());
        let out = fuse_relaxed(&mut g, &frames, mask).unwrap();
        let (a, b) = (s[0].d_frame(1), s[1].d_frame(1));
        for i in 0..4 {
            let expect = if i % 2 == 0 { 0.5 * a.data()[i] + 0.5 * b.data()[i] } else { a.data()[i] };
            assert!((g.value(out).data()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn rate_loss_examples() {
        let c_ref = Tensor::full(&[4, 2, 2], 1.0);
        let b = rate_loss(&c_ref, &c_ref).unwrap();
        assert_eq!(b, vec![0.25; 4]);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(rate_loss(&Tensor::zeros(&[4, 2, 2]), &c_ref).unwrap(), vec![0.0; 4]);
        assert!(matches!(rate_loss(&c_ref, &Tensor::zeros(&[4, 2, 2])), Err(Error::DegenerateScene(_))));
    }
}
