use super::LossNorm;
use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Source-contrastive loss.
///
/// `D[b,t,f,m] = V_i[b,t,f,:] · V_o[b,m,:]`; every bin contributes
/// `−(1/M) Σ_m log σ(Y·D)`. Bins are summed (or averaged with
/// [`LossNorm::Mean`]) and the batch is averaged.
pub fn sce_loss(tape: &mut Tape, v_i: Var, v_o: Var, y: &Tensor, norm: LossNorm) -> Result<Var> {
    let si = tape.shape(v_i).to_vec();
    let so = tape.shape(v_o).to_vec();
    let sy = y.shape();
    if si.len() != 4 || so.len() != 3 || sy.len() != 4 {
        return Err(Error::invalid(format!(
            "sce_loss expects V_i [B,T,F,E], V_o [B,M,E], Y [B,T,F,M]; got {si:?}, {so:?}, {sy:?}"
        )));
    }
    let (b, t, f, e) = (si[0], si[1], si[2], si[3]);
    let m = so[1];
    if so[0] != b || so[2] != e || sy != [b, t, f, m] {
        return Err(Error::shape("sce_loss", &si, sy));
    }
    if let Some(bad) = y.data().iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::Domain {
            op: "sce_loss",
            detail: format!("labels must be +1 or -1, found {bad}"),
        });
    }
    if b == 0 || m == 0 {
        return Err(Error::invalid("sce_loss needs at least one mix and one speaker"));
    }
    let flat = tape.reshape(v_i, [b, t * f, e])?;
    let vo_t = tape.transpose(v_o)?;
    let d = tape.matmul(flat, vo_t)?;
    let labels = tape.constant(y.reshape([b, t * f, m])?);
    let signed = tape.mul(d, labels)?;
    let ls = tape.log_sigmoid(signed)?;
    let total = tape.sum(ls)?;
    let denom = match norm {
        LossNorm::Sum => (m * b) as f64,
        LossNorm::Mean => (m * b * t * f) as f64,
    };
    tape.scale(total, (-1.0 / denom) as f32)
}

/// Loss value for plain tensors.
pub fn sce_loss_value(v_i: &Tensor, v_o: &Tensor, y: &Tensor, norm: LossNorm) -> Result<f32> {
    let mut tape = Tape::new();
    let a = tape.constant(v_i.clone());
    let b = tape.constant(v_o.clone());
    let l = sce_loss(&mut tape, a, b, y, norm)?;
    tape.value(l).item()
}
