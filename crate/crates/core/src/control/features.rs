use evslab_autograd::{Graph, Var};

use crate::{Error, Result, Tensor};

/// Column statistics channels plus the λ channel.
pub const BASE_FEATURES: usize = 10;

/// Controller input `[10 (+N_c), W]` on the graph: mean, max and population
/// std over rows of `D̃`, `|D̃|` and `C̃`, a constant λ channel, and
/// optionally the previous `[N_c, W]` mask.
pub fn featurize_graph(g: &mut Graph, d: Var, c: Var, prev_mask: Option<Var>, lambda: f64) -> Result<Var> {
    if g.shape(d) != g.shape(c) || g.shape(d).len() != 2 {
        return Err(Error::Contract(format!("D̃ {:?} and C̃ {:?} must be equal [H, W]", g.shape(d), g.shape(c))));
    }
    let w = g.shape(d)[1];
    let ad = g.abs(d);
    let mut rows = Vec::with_capacity(BASE_FEATURES);
    for src in [d, ad, c] {
        rows.push(g.col_mean(src)?);
        rows.push(g.col_max(src)?);
        rows.push(g.col_std(src)?);
    }
    rows.push(g.constant(Tensor::full(&[w], lambda)));
    let stats = g.stack0(&rows)?;
    match prev_mask {
        None => Ok(stats),
        Some(m) => {
            if g.shape(m).len() != 2 || g.shape(m)[1] != w {
                return Err(Error::Contract(format!("previous mask {:?} does not match width {w}", g.shape(m))));
            }
            Ok(g.concat0(&[stats, m])?)
        }
    }
}

/// Value-only [`featurize_graph`].
pub fn featurize(d: &Tensor, c: &Tensor, prev_mask: Option<&Tensor>, lambda: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let (vd, vc) = (g.constant(d.clone()), g.constant(c.clone()));
    let vm = prev_mask.map(|m| g.constant(m.clone()));
    let f = featurize_graph(&mut g, vd, vc, vm, lambda)?;
    Ok(g.value(f).clone())
}
