//! Splits features into a semantic-related part (scored against every class
//! embedding) and a semantic-unrelated part (a diagonal Gaussian pulled toward
//! `N(0, I)`), and reconstructs the feature from both.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SemanticSpace;
use crate::error::{Error, Result};
use crate::numerics::nn::dropout;
use crate::numerics::{Graph, Linear, Matrix, Param, Parameters, Var};

const SLOPE: f64 = 0.2;
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentangleConfig {
    pub temperature: f64,
    /// Hidden width of both encoders and the decoder; `None` means `2·d_x`.
    pub hidden: Option<usize>,
    /// Width of the unrelated code; `None` means `d_a`.
    pub unrelated_dim: Option<usize>,
    pub dropout: f64,
}

impl Default for DisentangleConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            hidden: None,
            unrelated_dim: None,
            dropout: 0.1,
        }
    }
}

impl DisentangleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::param(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.hidden == Some(0) || self.unrelated_dim == Some(0) {
            return Err(Error::param("hidden and unrelated widths must be positive"));
        }
        Ok(())
    }
}

/// One-hidden-layer MLP `d_x → hidden → d_a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelatedEncoder {
    l0: Linear,
    l1: Linear,
    dropout: f64,
}

/// One-hidden-layer MLP `d_x → hidden → 2·d_u` emitting mean and log-variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnrelatedEncoder {
    l0: Linear,
    l1: Linear,
    d_u: usize,
    dropout: f64,
}

/// Two stacked linear layers `d_a + d_u → hidden → d_x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    l0: Linear,
    l1: Linear,
    dropout: f64,
}

fn mlp(
    g: &mut Graph,
    l0: &Linear,
    l1: &Linear,
    x: Var,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let h = l0.forward(g, x)?;
    let h = g.leaky_relu(h, SLOPE);
    let h = dropout(g, h, rate, rng)?;
    l1.forward(g, h)
}

impl RelatedEncoder {
    pub fn forward(&self, g: &mut Graph, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        check_input(g, x, self.l0.in_dim(), "encode_related")?;
        mlp(g, &self.l0, &self.l1, x, self.dropout, rng)
    }

    pub fn output_dim(&self) -> usize {
        self.l1.out_dim()
    }
}

/// Mean, clamped log-variance and the code passed on to the decoder.
#[derive(Clone, Copy, Debug)]
pub struct UnrelatedCode {
    pub mu: Var,
    pub logvar: Var,
    pub sample: Var,
}

impl UnrelatedEncoder {
    /// In train mode (`rng` given) the code is `μ + exp(logvar/2) ⊙ ε`; in eval
    /// mode it is `μ`.
    pub fn forward(&self, g: &mut Graph, x: Var, mut rng: Option<&mut ChaCha8Rng>) -> Result<UnrelatedCode> {
        check_input(g, x, self.l0.in_dim(), "encode_unrelated")?;
        let out = mlp(g, &self.l0, &self.l1, x, self.dropout, rng.as_deref_mut())?;
        let mu = g.slice_cols(out, 0, self.d_u)?;
        let raw = g.slice_cols(out, self.d_u, 2 * self.d_u)?;
        let logvar = g.clamp(raw, LOGVAR_MIN, LOGVAR_MAX);
        let sample = match rng {
            Some(rng) => {
                let n = g.shape(x).0;
                let eps = g.constant(Matrix::randn(n, self.d_u, 1.0, rng));
                let half = g.scale(logvar, 0.5);
                let std = g.exp(half);
                let spread = g.hadamard(std, eps)?;
                g.add(mu, spread)?
            }
            None => mu,
        };
        Ok(UnrelatedCode { mu, logvar, sample })
    }

    pub fn code_dim(&self) -> usize {
        self.d_u
    }
}

impl Decoder {
    pub fn forward(&self, g: &mut Graph, related: Var, unrelated: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let joint = g.concat_cols(related, unrelated)?;
        check_input(g, joint, self.l0.in_dim(), "decode")?;
        mlp(g, &self.l0, &self.l1, joint, self.dropout, rng)
    }
}

fn check_input(g: &Graph, x: Var, dim: usize, op: &'static str) -> Result<()> {
    let shape = g.shape(x);
    if shape.1 != dim {
        return Err(Error::Dimension {
            op,
            left: shape,
            right: (shape.0, dim),
        });
    }
    Ok(())
}

/// Cross-entropy of `softmax(x̂ · a_k / τ)` over all classes of `space`
/// against the ground-truth labels, averaged over the batch.
pub fn related_loss(g: &mut Graph, xhat: Var, labels: &[usize], space: &SemanticSpace, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::param(format!("temperature must be positive, got {temperature}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= space.num_classes()) {
        return Err(Error::Index {
            index: bad,
            len: space.num_classes(),
        });
    }
    let a = g.constant(space.embeddings().clone());
    let logits = g.matmul_t(xhat, a)?;
    let logits = g.scale(logits, 1.0 / temperature);
    g.cross_entropy(logits, labels)
}

/// Closed-form `KL(N(μ, e^logvar) ‖ N(0, 1))`, summed over dims, averaged over rows.
pub fn unrelated_kl(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    g.kl_std_normal(mu, logvar)
}

/// Mean absolute reconstruction error.
pub fn reconstruct_loss(g: &mut Graph, x: Var, reconstruction: Var) -> Result<Var> {
    g.l1_loss(reconstruction, x)
}

/// Loss terms from one disentanglement pass.
#[derive(Clone, Copy, Debug)]
pub struct DisentangleTerms {
    pub related: Var,
    pub unrelated: Var,
    pub recon: Var,
    /// Unweighted sum of the three terms.
    pub total: Var,
    pub xhat: Var,
    pub code: UnrelatedCode,
}

/// Both encoders and the decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disentangler {
    pub related: RelatedEncoder,
    pub unrelated: UnrelatedEncoder,
    pub decoder: Decoder,
    pub config: DisentangleConfig,
}

impl Disentangler {
    pub fn new(d_x: usize, d_a: usize, config: DisentangleConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if d_x == 0 || d_a == 0 {
            return Err(Error::param("disentangler dimensions must be positive"));
        }
        let hidden = config.hidden.unwrap_or(2 * d_x);
        let d_u = config.unrelated_dim.unwrap_or(d_a);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = config.dropout;
        Ok(Self {
            related: RelatedEncoder {
                l0: Linear::new("dis.er.l0", d_x, hidden, &mut rng),
                l1: Linear::new("dis.er.l1", hidden, d_a, &mut rng),
                dropout: p,
            },
            unrelated: UnrelatedEncoder {
                l0: Linear::new("dis.eu.l0", d_x, hidden, &mut rng),
                l1: Linear::new("dis.eu.l1", hidden, 2 * d_u, &mut rng),
                d_u,
                dropout: p,
            },
            decoder: Decoder {
                l0: Linear::new("dis.dec.l0", d_a + d_u, hidden, &mut rng),
                l1: Linear::new("dis.dec.l1", hidden, d_x, &mut rng),
                dropout: p,
            },
            config,
        })
    }

    /// Runs both encoders and the decoder on `x` and records `L_R + L_U + L_recon`.
    pub fn losses(
        &self,
        g: &mut Graph,
        x: Var,
        labels: &[usize],
        space: &SemanticSpace,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<DisentangleTerms> {
        let xhat = self.related.forward(g, x, rng.as_deref_mut())?;
        let code = self.unrelated.forward(g, x, rng.as_deref_mut())?;
        let recon_x = self.decoder.forward(g, xhat, code.sample, rng)?;
        let related = related_loss(g, xhat, labels, space, self.config.temperature)?;
        let unrelated = unrelated_kl(g, code.mu, code.logvar)?;
        let recon = reconstruct_loss(g, x, recon_x)?;
        let partial = g.add(related, unrelated)?;
        let total = g.add(partial, recon)?;
        Ok(DisentangleTerms {
            related,
            unrelated,
            recon,
            total,
            xhat,
            code,
        })
    }

    /// Eval-mode semantic-related features.
    pub fn encode_related(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.related.forward(&mut g, xv, None)?;
        Ok(g.value(out).clone())
    }

    /// `(μ, logvar, code)`; the code is sampled with `seed` in train mode and
    /// equals `μ` otherwise.
    pub fn encode_unrelated(&self, x: &Matrix, seed: u64, train_mode: bool) -> Result<(Matrix, Matrix, Matrix)> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let code = self.unrelated.forward(&mut g, xv, train_mode.then_some(&mut rng))?;
        Ok((
            g.value(code.mu).clone(),
            g.value(code.logvar).clone(),
            g.value(code.sample).clone(),
        ))
    }
}

impl Parameters for Disentangler {
    fn params(&self) -> Vec<&Param> {
        [&self.related.l0, &self.related.l1, &self.unrelated.l0, &self.unrelated.l1, &self.decoder.l0, &self.decoder.l1]
            .into_iter()
            .flat_map(|l| l.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        [
            &mut self.related.l0,
            &mut self.related.l1,
            &mut self.unrelated.l0,
            &mut self.unrelated.l1,
            &mut self.decoder.l0,
            &mut self.decoder.l1,
        ]
        .into_iter()
        .flat_map(|l| l.params_mut())
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ToySpaceSpec;
    use crate::numerics::grad_check;

    fn space() -> SemanticSpace {
        SemanticSpace::synthetic(&ToySpaceSpec::default()).unwrap()
    }

    fn scalar_of(build: impl FnOnce(&mut Graph) -> Result<Var>) -> f64 {
        let mut g = Graph::new();
        let v = build(&mut g).unwrap();
        g.scalar(v)
    }

    #[test]
    fn related_loss_separable_limit() {
        // Orthonormal class embeddings; x̂ equal to its own class row.
        let s = SemanticSpace::new(
            vec!["a".into(), "b".into(), "c".into()],
            Matrix::identity(3),
            2,
        )
        .unwrap();
        let loss = scalar_of(|g| {
            let x = g.constant(Matrix::identity(3));
            related_loss(g, x, &[0, 1, 2], &s, 0.01)
        });
        assert!(loss < 1e-30, "{loss}");
    }

    #[test]
    fn related_loss_uniform_and_binary_cases() {
        let s = space();
        let uniform = scalar_of(|g| {
            let x = g.constant(Matrix::zeros(3, s.dim()));
            related_loss(g, x, &[0, 5, 15], &s, 0.1)
        });
        assert!((uniform - (16f64).ln()).abs() < 1e-12);

        // Two classes along orthogonal axes; x̂ = (gap·τ, 0) gives logit gap `gap`.
        let two = SemanticSpace::new(vec!["p".into(), "q".into()], Matrix::identity(2), 1).unwrap();
        let (tau, gap) = (0.1, 1.7);
        let loss = scalar_of(|g| {
            let x = g.constant(Matrix::from_rows(&[[gap * tau, 0.0]]).unwrap());
            related_loss(g, x, &[0], &two, tau)
        });
        assert!((loss - (1.0 + (-gap as f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn related_loss_rejects_bad_labels() {
        let s = space();
        let mut g = Graph::new();
        let x = g.constant(Matrix::zeros(1, s.dim()));
        assert!(matches!(related_loss(&mut g, x, &[16], &s, 0.1), Err(Error::Index { .. })));
    }

    #[test]
    fn kl_closed_form_values() {
        let kl = |mu: Matrix, lv: Matrix| {
            scalar_of(|g| {
                let m = g.constant(mu);
                let l = g.constant(lv);
                unrelated_kl(g, m, l)
            })
        };
        assert_eq!(kl(Matrix::zeros(4, 3), Matrix::zeros(4, 3)), 0.0);
        assert!((kl(Matrix::filled(1, 1, 1.0), Matrix::zeros(1, 1)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn l1_examples() {
        let l1 = |x: Matrix, r: Matrix| {
            scalar_of(|g| {
                let x = g.constant(x);
                let r = g.constant(r);
                reconstruct_loss(g, x, r)
            })
        };
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(l1(x.clone(), x.clone()), 0.0);
        assert!((l1(Matrix::zeros(3, 2), Matrix::filled(3, 2, -0.7)) - 0.7).abs() < 1e-15);
        assert!((l1(x, Matrix::from_rows(&[[0.0, 2.0]]).unwrap()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn encoders_shapes_and_modes() {
        let s = space();
        let d = Disentangler::new(32, 16, DisentangleConfig::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::randn(5, 32, 1.0, &mut rng);
        let xhat = d.encode_related(&x).unwrap();
        assert_eq!(xhat.shape(), (5, s.dim()));
        assert_eq!(xhat, d.encode_related(&x).unwrap());
        assert_eq!(d.encode_related(&Matrix::zeros(0, 32)).unwrap().shape(), (0, 16));
        assert!(d.encode_related(&Matrix::zeros(2, 31)).is_err());

        let (mu, _, code) = d.encode_unrelated(&x, 9, false).unwrap();
        assert_eq!(mu, code);
        let (_, _, a) = d.encode_unrelated(&x, 9, true).unwrap();
        let (_, _, b) = d.encode_unrelated(&x, 9, true).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, mu);
    }

    #[test]
    fn logvar_is_clamped() {
        let mut d = Disentangler::new(2, 2, DisentangleConfig { hidden: Some(2), ..Default::default() }, 0).unwrap();
        // Route a constant 50 into every log-variance output through the bias.
        d.unrelated.l1.weight.value.fill(0.0);
        d.unrelated.l1.bias.value = Matrix::from_rows(&[[0.0, 0.0, 50.0, -50.0]]).unwrap();
        let (_, logvar, _) = d.encode_unrelated(&Matrix::filled(1, 2, 1.0), 0, false).unwrap();
        assert_eq!(logvar.as_slice(), &[10.0, -10.0]);
    }

    #[test]
    fn total_is_the_sum_and_terms_are_nonnegative() {
        let s = space();
        let d = Disentangler::new(32, 16, DisentangleConfig::default(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Matrix::randn(6, 32, 1.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let t = d.losses(&mut g, xv, &[0, 1, 2, 12, 13, 4], &s, Some(&mut rng)).unwrap();
        let (r, u, c, total) = (g.scalar(t.related), g.scalar(t.unrelated), g.scalar(t.recon), g.scalar(t.total));
        assert!(r >= 0.0 && u >= 0.0 && c >= 0.0);
        assert!((total - (r + u + c)).abs() < 1e-12);
    }

    #[test]
    fn disentangle_loss_passes_grad_check() {
        let s = space();
        let mut d = Disentangler::new(12, 16, DisentangleConfig { hidden: Some(10), unrelated_dim: Some(5), ..Default::default() }, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::randn(8, 12, 1.0, &mut rng);
        let labels = [0, 1, 2, 3, 0, 1, 2, 3];
        let report = grad_check(
            &mut d,
            |d, g| {
                let mut r = ChaCha8Rng::seed_from_u64(11);
                let xv = g.constant(x.clone());
                Ok(d.losses(g, xv, &labels, &s, Some(&mut r))?.total)
            },
            60,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(report.passes(1e-3), "{:?}", report.worst());
    }
}
