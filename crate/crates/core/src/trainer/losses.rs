use crate::error::{Error, Result};
use crate::reliability::ScoreVector;
use crate::tensor::{softmax_rows_value, Tensor, Var};

/// Score-weighted summed cross-entropy.
pub fn weighted_cross_entropy<'t>(logits: Var<'t>, labels: &[usize], scores: &ScoreVector) -> Result<Var<'t>> {
    if labels.len() != logits.rows() || scores.pool() != logits.rows() {
        return Err(Error::Contract(format!(
            "cross-entropy over {} rows got {} labels and {} scores",
            logits.rows(),
            labels.len(),
            scores.pool()
        )));
    }
    let nll = logits.log_softmax_rows().pick(labels)?.neg();
    let w = logits.tape().constant(scores.as_tensor());
    Ok(nll.mul(w)?.sum())
}

/// New-task term: clipped scores times cross-entropy on observed labels.
pub fn loss_new<'t>(logits: Var<'t>, observed: &[usize], scores: &ScoreVector) -> Result<Var<'t>> {
    weighted_cross_entropy(logits, observed, scores)
}

/// Replay term for one earlier task's generated batch.
pub fn loss_replay<'t>(logits: Var<'t>, labels: &[usize], scores: &ScoreVector) -> Result<Var<'t>> {
    weighted_cross_entropy(logits, labels, scores)
}

/// Squared L2 distance between current and frozen features, summed over rows.
pub fn loss_embed_anchor<'t>(x: Var<'t>, x_frozen: Var<'t>) -> Result<Var<'t>> {
    Ok(x.sub(x_frozen)?.square().sum())
}

/// `tau^2 * sum_i KL(softmax(teacher_i / tau) || softmax(student_i / tau))`.
/// The teacher is a constant.
pub fn loss_distill<'t>(student: Var<'t>, teacher: &Tensor, tau: f64) -> Result<Var<'t>> {
    if student.shape() != teacher.shape() {
        return Err(Error::Dimension {
            op: "distill",
            lhs: student.shape(),
            rhs: teacher.shape(),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature {tau} must be positive")));
    }
    let p = softmax_rows_value(&teacher.map(|v| v / tau));
    let entropy_term: f64 = p.data().iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum();
    let log_q = student.scale(1.0 / tau).log_softmax_rows();
    let cross = log_q.mul(student.tape().constant(p))?.sum();
    Ok(cross.neg().add_scalar(entropy_term).scale(tau * tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Rng, Tape};

    fn ce_oracle(logits: &[f64], y: usize) -> f64 {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        lse - logits[y]
    }

    #[test]
    fn weighted_ce_matches_hand_sum() {
        let tape = Tape::new();
        let rows = vec![vec![1.0, 2.0, 0.5], vec![-1.0, 0.0, 3.0]];
        let logits = tape.param(Tensor::from_rows(&rows));
        let s = ScoreVector::uniform(2);
        let mut s2 = s.clone();
        s2.scores = vec![0.5, 2.0];
        let got = loss_new(logits, &[2, 0], &s2).unwrap().item();
        let want = 0.5 * ce_oracle(&rows[0], 2) + 2.0 * ce_oracle(&rows[1], 0);
        assert!((got - want).abs() < 1e-12);
        let plain = loss_new(logits, &[2, 0], &s).unwrap().item();
        assert!((plain - ce_oracle(&rows[0], 2) - ce_oracle(&rows[1], 0)).abs() < 1e-12);
    }

    #[test]
    fn zero_score_zeroes_gradient_of_that_row() {
        let tape = Tape::new();
        let logits = tape.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![0.3, -0.3]]));
        let mut s = ScoreVector::uniform(2);
        s.scores[1] = 0.0;
        let loss = loss_new(logits, &[0, 1], &s).unwrap();
        tape.backward(loss).unwrap();
        let g = logits.grad().unwrap();
        assert_eq!(g.row(1), &[0.0, 0.0]);
        assert!(g.row(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn identical_heads_have_zero_distillation() {
        let mut rng = Rng::new(4);
        let t = rng.normal_tensor(5, 3);
        let tape = Tape::new();
        let v = loss_distill(tape.param(t.clone()), &t, 2.71).unwrap().item();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn distillation_matches_kl_oracle() {
        let student = vec![0.2, -1.0, 0.7];
        let teacher = vec![1.5, 0.0, -0.5];
        let tau = 2.0;
        let sm = |z: &[f64]| {
            let e: Vec<f64> = z.iter().map(|v| (v / tau).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let (p, q) = (sm(&teacher), sm(&student));
        let kl: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
        let tape = Tape::new();
        let got = loss_distill(
            tape.param(Tensor::from_rows(&[student])),
            &Tensor::from_rows(&[teacher]),
            tau,
        )
        .unwrap()
        .item();
        assert!((got - tau * tau * kl).abs() < 1e-12);
    }

    #[test]
    fn distillation_rejects_head_mismatch() {
        let tape = Tape::new();
        let s = tape.param(Tensor::zeros(2, 3));
        assert!(loss_distill(s, &Tensor::zeros(2, 4), 1.0).is_err());
    }

    #[test]
    fn anchor_is_squared_distance() {
        let tape = Tape::new();
        let a = tape.param(Tensor::from_rows(&[vec![1.0, 2.0]]));
        let b = tape.constant(Tensor::from_rows(&[vec![0.0, 4.0]]));
        assert_eq!(loss_embed_anchor(a, b).unwrap().item(), 5.0);
        assert_eq!(loss_embed_anchor(a, a).unwrap().item(), 0.0);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = Rng::new(11);
        let point = rng.normal_tensor(4, 3);
        let teacher = rng.normal_tensor(4, 3);
        let frozen = rng.normal_tensor(4, 3);
        let s = ScoreVector {
            scores: vec![0.3, 1.2, 2.0, 0.5],
            stage: crate::reliability::ScoreStage::Clipped,
        };
        let err = grad_check(
            |tape, x| {
                let ce = loss_new(x, &[0, 2, 1, 1], &s)?;
                let kl = loss_distill(x, &teacher, 2.71)?;
                let anchor = loss_embed_anchor(x, tape.constant(frozen.clone()))?;
                ce.add(kl.scale(0.06))?.add(anchor.scale(0.09))
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
