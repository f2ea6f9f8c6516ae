use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureGenerator;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Linear, Matrix, Param, Parameters, Var};

/// Learnable primitive vectors, one per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveBank {
    pub primitives: Param,
}

impl PrimitiveBank {
    pub fn len(&self) -> usize {
        self.primitives.value.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.primitives.value.cols()
    }
}

/// Single-head self-attention over the primitive bank, with a residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SelfAttention {
    query: Param,
    key: Param,
    value: Param,
}

/// One cross-attention block: semantic queries attend over refined primitives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CrossBlock {
    /// `None` for the first block, which reuses the semantic projection as query.
    query: Option<Param>,
    key: Param,
    value: Param,
    out: Linear,
}

/// Primitive cross-modal generator.
///
/// ```text
/// P̃   = P + softmax((P Wq)(P Wk)ᵀ/√d_k) (P Wv)
/// e   = A ω_Q                               (projected semantic embedding)
/// h_0 = e
/// h_ℓ = ω_1^ℓ( softmax(Q_ℓ K_ℓᵀ/√d_k) V_ℓ + e + Z ),   Q_1 = e, Q_ℓ = h_{ℓ−1} W_Q^ℓ
/// X'  = h_L                                  (ω_1^L maps to d_x)
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub bank: PrimitiveBank,
    self_attention: SelfAttention,
    semantic_proj: Param,
    blocks: Vec<CrossBlock>,
    d_a: usize,
    d_x: usize,
}

impl GeneratorModel {
    pub fn new(d_a: usize, d_k: usize, d_x: usize, n_primitives: usize, layer_count: usize, seed: u64) -> Result<Self> {
        if d_a == 0 || d_k == 0 || d_x == 0 || n_primitives == 0 {
            return Err(Error::param(format!(
                "generator dimensions must be >= 1 (d_a={d_a}, d_k={d_k}, d_x={d_x}, primitives={n_primitives})"
            )));
        }
        if layer_count == 0 {
            return Err(Error::param("generator needs at least one cross-attention layer"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let primitives = Param::new(
            "gen.primitives",
            Matrix::randn(n_primitives, d_k, 1.0 / (d_k as f64).sqrt(), &mut rng),
        );
        let self_attention = SelfAttention {
            query: Param::init_linear("gen.sa.q", d_k, d_k, &mut rng),
            key: Param::init_linear("gen.sa.k", d_k, d_k, &mut rng),
            value: Param::init_linear("gen.sa.v", d_k, d_k, &mut rng),
        };
        let semantic_proj = Param::init_linear("gen.wq", d_a, d_k, &mut rng);
        let blocks = (0..layer_count)
            .map(|l| {
                let out_dim = if l + 1 == layer_count { d_x } else { d_k };
                CrossBlock {
                    query: (l > 0).then(|| Param::init_linear(format!("gen.l{l}.wq"), d_k, d_k, &mut rng)),
                    key: Param::init_linear(format!("gen.l{l}.wk"), d_k, d_k, &mut rng),
                    value: Param::init_linear(format!("gen.l{l}.wv"), d_k, d_k, &mut rng),
                    out: Linear::new(&format!("gen.l{l}.w1"), d_k, out_dim, &mut rng),
                }
            })
            .collect();
        Ok(Self {
            bank: PrimitiveBank { primitives },
            self_attention,
            semantic_proj,
            blocks,
            d_a,
            d_x,
        })
    }

    pub fn d_k(&self) -> usize {
        self.bank.dim()
    }

    pub fn layer_count(&self) -> usize {
        self.blocks.len()
    }

    fn refine(&self, g: &mut Graph) -> Result<(Var, Var)> {
        let p = g.param(&self.bank.primitives);
        let sa = &self.self_attention;
        let (wq, wk, wv) = (g.param(&sa.query), g.param(&sa.key), g.param(&sa.value));
        let q = g.matmul(p, wq)?;
        let k = g.matmul(p, wk)?;
        let v = g.matmul(p, wv)?;
        let scores = g.matmul_t(q, k)?;
        let weights = g.softmax_rows(scores, (self.d_k() as f64).sqrt())?;
        let mixed = g.matmul(weights, v)?;
        Ok((g.add(p, mixed)?, weights))
    }

    /// Self-attention-refined primitives and the attention weights used.
    pub fn primitive_self_attention(&self) -> Result<(Matrix, Matrix)> {
        let mut g = Graph::new();
        let (refined, weights) = self.refine(&mut g)?;
        Ok((g.value(refined).clone(), g.value(weights).clone()))
    }
}

impl Parameters for GeneratorModel {
    fn params(&self) -> Vec<&Param> {
        let sa = &self.self_attention;
        let mut out = vec![&self.bank.primitives, &sa.query, &sa.key, &sa.value, &self.semantic_proj];
        for b in &self.blocks {
            out.extend(b.query.as_ref());
            out.extend([&b.key, &b.value]);
            out.extend(b.out.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let sa = &mut self.self_attention;
        let mut out = vec![
            &mut self.bank.primitives,
            &mut sa.query,
            &mut sa.key,
            &mut sa.value,
            &mut self.semantic_proj,
        ];
        for b in &mut self.blocks {
            out.extend(b.query.as_mut());
            out.extend([&mut b.key, &mut b.value]);
            out.extend(b.out.params_mut());
        }
        out
    }
}

impl FeatureGenerator for GeneratorModel {
    fn kind(&self) -> &'static str {
        "primitive"
    }

    fn semantic_dim(&self) -> usize {
        self.d_a
    }

    fn noise_dim(&self) -> usize {
        self.d_k()
    }

    fn output_dim(&self) -> usize {
        self.d_x
    }

    fn forward(&self, g: &mut Graph, semantic: Var, noise: Var) -> Result<Var> {
        let (m, da) = g.shape(semantic);
        let (mz, dz) = g.shape(noise);
        if da != self.d_a || dz != self.d_k() || m != mz {
            return Err(Error::Dimension {
                op: "generate",
                left: (m, da),
                right: (mz, dz),
            });
        }
        let (refined, _) = self.refine(g)?;
        let wq = g.param(&self.semantic_proj);
        let projected = g.matmul(semantic, wq)?;
        let residual = g.add(projected, noise)?;
        let scale = (self.d_k() as f64).sqrt();
        let mut hidden = projected;
        for block in &self.blocks {
            let query = match &block.query {
                Some(w) => {
                    let w = g.param(w);
                    g.matmul(hidden, w)?
                }
                None => projected,
            };
            let wk = g.param(&block.key);
            let wv = g.param(&block.value);
            let k = g.matmul(refined, wk)?;
            let v = g.matmul(refined, wv)?;
            let scores = g.matmul_t(query, k)?;
            let attn = g.softmax_rows(scores, scale)?;
            let assembled = g.matmul(attn, v)?;
            let pre = g.add(assembled, residual)?;
            hidden = block.out.forward(g, pre)?;
        }
        Ok(hidden)
    }

    fn box_clone(&self) -> Box<dyn FeatureGenerator> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n_primitives: usize, seed: u64) -> GeneratorModel {
        GeneratorModel::new(4, 6, 5, n_primitives, 3, seed).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        assert_eq!(small(7, 1), small(7, 1));
        assert_ne!(small(7, 1), small(7, 2));
        let m = GeneratorModel::new(16, 256, 32, 400, 3, 0).unwrap();
        assert_eq!(m.bank.primitives.shape(), (400, 256));
        assert_eq!(m.layer_count(), 3);
    }

    #[test]
    fn invalid_dimensions() {
        assert!(GeneratorModel::new(4, 6, 5, 7, 0, 0).is_err());
        assert!(GeneratorModel::new(0, 6, 5, 7, 1, 0).is_err());
        assert!(GeneratorModel::new(4, 6, 5, 0, 1, 0).is_err());
    }

    #[test]
    fn self_attention_rows_are_distributions() {
        let (refined, weights) = small(9, 3).primitive_self_attention().unwrap();
        assert_eq!(refined.shape(), (9, 6));
        for r in weights.row_iter() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn singleton_bank_is_value_plus_residual() {
        let m = small(1, 4);
        let (refined, weights) = m.primitive_self_attention().unwrap();
        assert_eq!(weights.as_slice(), &[1.0]);
        let p = &m.bank.primitives.value;
        let expected = p.add(&p.matmul(&m.self_attention.value.value).unwrap()).unwrap();
        assert!(refined.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn permuting_primitives_permutes_refinement() {
        let m = small(5, 5);
        let mut permuted = m.clone();
        let order = [3, 0, 4, 1, 2];
        permuted.bank.primitives.value = m.bank.primitives.value.select_rows(&order).unwrap();
        let (a, _) = m.primitive_self_attention().unwrap();
        let (b, _) = permuted.primitive_self_attention().unwrap();
        assert!(a.select_rows(&order).unwrap().max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn generation_is_row_wise_and_handles_empty_batches() {
        let m = small(8, 6);
        let a = Matrix::from_rows(&[[0.5, 0.5, 0.5, 0.5], [1.0, 0.0, 0.0, 0.0], [0.5, 0.5, 0.5, 0.5]]).unwrap();
        let mut z = Matrix::filled(3, 6, 0.3);
        z.set(1, 2, -1.0);
        let out = m.generate(&a, &z).unwrap();
        assert_eq!(out.shape(), (3, 5));
        assert_eq!(out.row(0), out.row(2));
        assert_ne!(out.row(0), out.row(1));
        assert_eq!(out, m.generate(&a, &z).unwrap());

        let empty = m.generate(&Matrix::zeros(0, 4), &Matrix::zeros(0, 6)).unwrap();
        assert_eq!(empty.shape(), (0, 5));
        assert!(m.generate(&a, &Matrix::zeros(2, 6)).is_err());
    }
}
