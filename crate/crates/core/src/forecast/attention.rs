//! ProbSparse attention: full attention for the most dominant queries, the
//! mean of the values for the rest.

use gridpatch_autodiff::{Graph, NodeId, Tensor};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dominant-query budget `⌈factor · ln L⌉`, at least 1 and at most `L`.
pub fn query_budget(factor: f64, len: usize) -> usize {
    let u = (factor * (len as f64).ln()).ceil();
    (u.max(1.0) as usize).min(len)
}

/// Sorted distinct key indices drawn with a fixed seed. Asking for every key
/// returns `0..num_keys`.
pub fn sample_keys(num_keys: usize, sample_size: usize, seed: u64) -> Result<Vec<usize>> {
    if num_keys == 0 || sample_size == 0 {
        return Err(Error::invalid("key sample needs at least one key"));
    }
    if sample_size > num_keys {
        return Err(Error::invalid(format!(
            "sample of {sample_size} keys from {num_keys}"
        )));
    }
    if sample_size == num_keys {
        return Ok((0..num_keys).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, num_keys, sample_size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// `max_j s_ij − mean_j s_ij` with `s_ij = q_i·k_j/√d` over the sampled keys.
pub fn scores_on_sample(q: &Tensor, k: &Tensor, sample: &[usize]) -> Result<Vec<f64>> {
    if q.rank() != 2 || k.rank() != 2 || q.cols() != k.cols() {
        return Err(Error::Shape {
            op: "sparsity scores",
            detail: format!("queries {:?}, keys {:?}", q.shape(), k.shape()),
        });
    }
    if sample.is_empty() || sample.iter().any(|&j| j >= k.rows()) {
        return Err(Error::invalid("key sample out of range"));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    Ok((0..q.rows())
        .map(|i| {
            let qi = q.row(i);
            let mut max = f64::NEG_INFINITY;
            let mut sum = 0.0;
            for &j in sample {
                let s = scale * qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>();
                max = max.max(s);
                sum += s;
            }
            max - sum / sample.len() as f64
        })
        .collect())
}

/// Query dominance scores over a seeded subsample of `sample_size` keys.
pub fn sparsity_scores(q: &Tensor, k: &Tensor, sample_size: usize, seed: u64) -> Result<Vec<f64>> {
    let sample = sample_keys(k.rows(), sample_size, seed)?;
    scores_on_sample(q, k, &sample)
}

/// Indices of the `u` highest scores, best first, ties by lower index.
pub fn top_u(scores: &[f64], u: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(u);
    order
}

/// Scaled dot-product attention `softmax(Q Kᵀ/√d [+ mask]) V` on graph nodes.
pub fn full_attention(
    g: &mut Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    mask: Option<NodeId>,
) -> Result<NodeId> {
    let d = g.value(q).cols();
    let kt = g.transpose(k)?;
    let s = g.matmul(q, kt)?;
    let mut s = g.scale(s, 1.0 / (d as f64).sqrt())?;
    if let Some(m) = mask {
        s = g.add(s, m)?;
    }
    let a = g.softmax(s)?;
    Ok(g.matmul(a, v)?)
}

/// ProbSparse attention on graph nodes. Selection uses the current values and
/// is not differentiated; gradients flow through the selected rows and the
/// mean fill.
pub fn probsparse(
    g: &mut Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    u: usize,
    sample: &[usize],
) -> Result<NodeId> {
    let lq = g.value(q).rows();
    if u == 0 || u > lq {
        return Err(Error::invalid(format!("budget u = {u} for {lq} queries")));
    }
    let scores = scores_on_sample(g.value(q), g.value(k), sample)?;
    let mut top = top_u(&scores, u);
    top.sort_unstable();
    let q_top = g.gather_rows(q, top.clone())?;
    let out_top = full_attention(g, q_top, k, v, None)?;
    let fill = g.mean_rows(v, lq)?;
    Ok(g.scatter_rows(fill, out_top, top)?)
}

/// Tensor-level ProbSparse attention.
pub fn probsparse_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    u: usize,
    sample: &[usize],
) -> Result<Tensor> {
    if k.rows() != v.rows() {
        return Err(Error::Shape {
            op: "probsparse attention",
            detail: format!("keys {:?}, values {:?}", k.shape(), v.shape()),
        });
    }
    let mut g = Graph::new();
    let (qn, kn, vn) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
    let out = probsparse(&mut g, qn, kn, vn, u, sample)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_queries_tie_in_index_order() {
        let q = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let k = Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.0]]).unwrap();
        let s = sparsity_scores(&q, &k, 2, 0).unwrap();
        assert!(s.iter().all(|&x| x == s[0]));
        assert_eq!(top_u(&s, 2), vec![0, 1]);
    }

    #[test]
    fn aligned_query_dominates() {
        let q = Tensor::from_rows(&[vec![0.0, 0.0, 1.0], vec![3.0, 0.0, 0.0]]).unwrap();
        let k = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let s = sparsity_scores(&q, &k, 2, 0).unwrap();
        assert_eq!(s[0], 0.0);
        assert!(s[1] > s[0]);
    }

    #[test]
    fn budget_and_sample_bounds() {
        assert_eq!(query_budget(5.0, 56), 21);
        assert_eq!(query_budget(5.0, 3), 3);
        assert_eq!(query_budget(5.0, 1), 1);
        assert!(sample_keys(4, 5, 0).is_err());
        let s = sample_keys(40, 10, 3).unwrap();
        assert_eq!(s, sample_keys(40, 10, 3).unwrap());
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn budget_above_query_count_rejected() {
        let t = Tensor::zeros(&[3, 2]);
        assert!(probsparse_attention(&t, &t, &t, 4, &[0, 1, 2]).is_err());
    }
}
