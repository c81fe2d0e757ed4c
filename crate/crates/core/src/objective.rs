//! Composite forward and reverse passes through F, AL, G and C.
//!
//! One routine evaluates any weighted combination of the loss terms on a
//! clean batch and (optionally) its intervened twin, returning every term and
//! the parameter gradients of all four networks. The trainer's two phases and
//! the finite-difference suite are both expressed through it.

use ndarray::{concatenate, s, Array2, Array4, Axis};

use crate::error::{Error, Result};
use crate::losses::{
    correlation_backward, correlation_matrix_with_cache, l1_with_grad, loss_cls_with_grad,
    loss_con_with_grad, loss_fac_with_grad, loss_gaze_with_grad,
};
use crate::nets::{CaugeModel, NetId};

/// Gradient buffers aligned with each network's parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub f: Vec<f64>,
    pub al: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros(model: &CaugeModel) -> Self {
        ModelGrads {
            f: vec![0.0; model.f.store.len()],
            al: vec![0.0; model.al.store.len()],
            g: vec![0.0; model.g.store.len()],
            c: vec![0.0; model.c.store.len()],
        }
    }

    pub fn get(&self, id: NetId) -> &[f64] {
        match id {
            NetId::F => &self.f,
            NetId::AL => &self.al,
            NetId::G => &self.g,
            NetId::C => &self.c,
        }
    }
}

/// Weights of the terms to include; `None` leaves a term out entirely.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermWeights {
    pub cls: Option<f64>,
    pub con: Option<f64>,
    pub fac: Option<f64>,
    pub gaze: Option<f64>,
}

/// A normalized clean batch, its optional intervened counterpart and labels.
pub struct Batch<'a> {
    pub xs: &'a Array4<f64>,
    pub xa: Option<&'a Array4<f64>>,
    pub y: &'a Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveOutput {
    pub total: f64,
    pub l_cls: Option<f64>,
    pub l_con: Option<f64>,
    pub l_fac: Option<f64>,
    pub l_gaze: Option<f64>,
    /// Fraction of clean and intervened samples the classifier labels
    /// correctly; present whenever the classifier term is.
    pub classifier_accuracy: Option<f64>,
    pub grads: ModelGrads,
    /// `dL/dx` for the clean batch when requested.
    pub input_grad: Option<Array4<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveOptions {
    /// Backpropagate into F. Off for the classifier phase, where features
    /// are treated as constants.
    pub feature_grads: bool,
    pub input_grad: bool,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        ObjectiveOptions { feature_grads: true, input_grad: false }
    }
}

fn check_finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{name} is not finite ({v})")))
    }
}

/// Fraction of originals with a positive logit plus intervened samples
/// with a non-positive one.
pub fn classifier_accuracy(logits_s: &[f64], logits_a: &[f64]) -> f64 {
    let correct = logits_s.iter().filter(|&&l| l > 0.0).count() + logits_a.iter().filter(|&&l| l <= 0.0).count();
    correct as f64 / (logits_s.len() + logits_a.len()) as f64
}

pub fn evaluate(
    model: &CaugeModel,
    batch: &Batch<'_>,
    weights: TermWeights,
    opts: ObjectiveOptions,
) -> Result<ObjectiveOutput> {
    let b = batch.xs.dim().0;
    if batch.y.dim() != (b, 2) {
        return Err(Error::Dimension(format!("labels {:?} do not match batch of {b}", batch.y.dim())));
    }
    let needs_pair = weights.cls.is_some() || weights.con.is_some() || weights.fac.is_some();
    if needs_pair && batch.xa.is_none() {
        return Err(Error::Argument("intervened batch required for cls/con/fac terms".into()));
    }
    if let Some(xa) = batch.xa {
        if xa.dim() != batch.xs.dim() {
            return Err(Error::Dimension(format!(
                "intervened batch {:?} differs from clean batch {:?}",
                xa.dim(),
                batch.xs.dim()
            )));
        }
    }
    let paired = batch.xa.is_some();
    let x_all = match batch.xa {
        Some(xa) => concatenate![Axis(0), *batch.xs, *xa],
        None => batch.xs.clone(),
    };
    let (z_all, trunk_cache) = model.f.forward(&x_all)?;
    let mut dz_all = Array2::<f64>::zeros(z_all.dim());
    let mut grads = ModelGrads::zeros(model);
    let mut out = ObjectiveOutput {
        total: 0.0,
        l_cls: None,
        l_con: None,
        l_fac: None,
        l_gaze: None,
        classifier_accuracy: None,
        grads: ModelGrads::zeros(model),
        input_grad: None,
    };
    let zs = z_all.slice(s![..b, ..]);

    if weights.cls.is_some() || weights.con.is_some() {
        let cache = model.c.forward(&z_all.view())?;
        let logits: Vec<f64> = cache.output().iter().copied().collect();
        let (ls, la) = logits.split_at(b);
        let mut dlogits = vec![0.0; 2 * b];
        if let Some(w) = weights.cls {
            let (l, ds, da) = loss_cls_with_grad(ls, la)?;
            out.classifier_accuracy = Some(classifier_accuracy(ls, la));
            out.l_cls = Some(check_finite("l_cls", l)?);
            out.total += w * l;
            dlogits.iter_mut().zip(ds.iter().chain(&da)).for_each(|(d, g)| *d += w * g);
        }
        if let Some(w) = weights.con {
            let (l, da) = loss_con_with_grad(la)?;
            out.l_con = Some(check_finite("l_con", l)?);
            out.total += w * l;
            dlogits[b..].iter_mut().zip(&da).for_each(|(d, g)| *d += w * g);
        }
        let dl = Array2::from_shape_vec((2 * b, 1), dlogits).expect("logit grad shape");
        dz_all += &model.c.backward(&cache, &dl, &mut grads.c);
    }

    if let Some(w) = weights.fac {
        let za = z_all.slice(s![b.., ..]);
        let (m, cache) = correlation_matrix_with_cache(&zs, &za)?;
        let (l, dm) = loss_fac_with_grad(&m)?;
        out.l_fac = Some(check_finite("l_fac", l)?);
        out.total += w * l;
        let (dzs, dza) = correlation_backward(&cache, &(dm * w));
        dz_all.slice_mut(s![..b, ..]).scaled_add(1.0, &dzs);
        dz_all.slice_mut(s![b.., ..]).scaled_add(1.0, &dza);
    }

    if let Some(w) = weights.gaze {
        // the clean-only (unpaired) case is plain L1 on the clean stream
        let z_in = if paired { z_all.view() } else { zs };
        let att = if model.use_attention { Some(model.al.forward(&z_in)?) } else { None };
        let zw = match &att {
            Some(c) => &z_in * c.output(),
            None => z_in.to_owned(),
        };
        let gcache = model.g.forward(&zw.view())?;
        let yhat = gcache.output();
        let (l, dyhat) = if paired {
            let (l, gs, ga) = loss_gaze_with_grad(
                &batch.y.view(),
                &yhat.slice(s![..b, ..]),
                &yhat.slice(s![b.., ..]),
            )?;
            (l, concatenate![Axis(0), gs, ga])
        } else {
            l1_with_grad(&batch.y.view(), &yhat.view())?
        };
        out.l_gaze = Some(check_finite("l_gaze", l)?);
        out.total += w * l;
        let dzw = model.g.backward(&gcache, &(dyhat * w), &mut grads.g);
        let dz = match &att {
            Some(c) => {
                let dw = &dzw * &z_in;
                let mut dz = &dzw * c.output();
                dz += &model.al.backward(c, &dw, &mut grads.al);
                dz
            }
            None => dzw,
        };
        if paired {
            dz_all += &dz;
        } else {
            dz_all.slice_mut(s![..b, ..]).scaled_add(1.0, &dz);
        }
    }

    check_finite("objective", out.total)?;
    if opts.feature_grads {
        let dx = model.f.backward(&trunk_cache, &dz_all, &mut grads.f, opts.input_grad);
        out.input_grad = dx.map(|d| d.slice(s![..b, .., .., ..]).to_owned());
    }
    out.grads = grads;
    Ok(out)
}
