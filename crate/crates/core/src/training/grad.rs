use std::borrow::Borrow;

use super::loss::align_terms;
use super::{cosine_sim, norm, project, ProjectionHead, TrainState, TrainingError};
use crate::config::Hyperparams;
use crate::mining::Triplet;
use crate::records::PredictionRecord;

/// Partial derivatives of the total loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Row-major, same layout as [`ProjectionHead::weights`].
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
    pub d_log_t: f64,
}

impl Gradients {
    fn zeros(head: &ProjectionHead) -> Self {
        Self {
            d_weights: vec![0.0; head.weights.len()],
            d_bias: vec![0.0; head.bias.len()],
            d_log_t: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_log_t.is_finite() && self.d_weights.iter().chain(&self.d_bias).all(|x| x.is_finite())
    }
}

/// Analytic gradient of [`super::total_loss`]. The wrong-answer indicator is
/// a constant coefficient and the hinge subgradient is zero at the kink.
pub fn gradients<R: Borrow<PredictionRecord>>(
    batch: &[R],
    triplets: &[Triplet],
    params: &Hyperparams,
    state: &TrainState,
) -> Result<Gradients, TrainingError> {
    if batch.is_empty() {
        return Err(TrainingError::Empty);
    }
    let head = &state.head;
    head.check_shape()?;
    let mut g = Gradients::zeros(head);

    // With s = log_t the scaled logits are u = z·e^(−s), so du/ds = −u and
    //   d ln q_j / ds = ū − u_j,  ū = Σ q_i u_i.
    let mut d_s = 0.0;
    let mut n_gold = 0usize;
    for r in batch.iter().map(Borrow::borrow).filter(|r| r.gold_id.is_some()) {
        let a = align_terms(r, state.scaler.log_t)?;
        let t = &a.tempered;
        let ubar = t.mean_logit();
        if a.wrong {
            d_s += params.alpha * t.q[a.pred] * (ubar - t.u[a.pred]);
        }
        d_s += params.beta * (t.u[a.gold] - ubar);
        n_gold += 1;
    }
    if n_gold == 0 {
        return Err(TrainingError::NoGold);
    }
    g.d_log_t = params.lambda1 * d_s / n_gold as f64;

    if triplets.is_empty() {
        return Ok(g);
    }
    let scale = params.lambda2 / triplets.len() as f64;
    for t in triplets {
        let pa = project(head, &t.anchor)?;
        let pp = project(head, &t.positive)?;
        let pn = project(head, &t.negative)?;
        let s_ap = cosine_sim(&pa, &pp)?;
        let s_an = cosine_sim(&pa, &pn)?;
        if params.margin_m - (s_ap - s_an) <= 0.0 {
            continue;
        }
        let (da_p, dp) = cosine_grads(&pa, &pp, s_ap);
        let (da_n, dn) = cosine_grads(&pa, &pn, s_an);
        // L = m − cos(a,p) + cos(a,n)
        let ga: Vec<f64> = da_n.iter().zip(&da_p).map(|(n, p)| n - p).collect();
        let gp: Vec<f64> = dp.iter().map(|x| -x).collect();
        for (gy, x) in [(&ga, &t.anchor), (&gp, &t.positive), (&dn, &t.negative)] {
            accumulate(&mut g, head, gy, x, scale);
        }
    }
    Ok(g)
}

/// `(∂cos/∂u, ∂cos/∂v)` with `∂cos/∂u = v/(|u||v|) − cos·u/|u|²`.
fn cosine_grads(u: &[f64], v: &[f64], cos: f64) -> (Vec<f64>, Vec<f64>) {
    let (nu, nv) = (norm(u), norm(v));
    let inv = 1.0 / (nu * nv);
    let du = u.iter().zip(v).map(|(a, b)| b * inv - cos * a / (nu * nu)).collect();
    let dv = u.iter().zip(v).map(|(a, b)| a * inv - cos * b / (nv * nv)).collect();
    (du, dv)
}

/// Back-propagates `∂L/∂y` through `y = W x + b`.
fn accumulate(g: &mut Gradients, head: &ProjectionHead, gy: &[f64], x: &[f64], scale: f64) {
    for (r, &gyr) in gy.iter().enumerate() {
        let row = &mut g.d_weights[r * head.d_in..(r + 1) * head.d_in];
        for (w, xi) in row.iter_mut().zip(x) {
            *w += scale * gyr * xi;
        }
        g.d_bias[r] += scale * gyr;
    }
}
