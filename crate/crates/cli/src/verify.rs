//! Built-in verification battery: analytic gradients of every loss against
//! central differences, MMD identities, the alignment fixed point, and the
//! reference harmonic means.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pading_core::align::{alignment_loss, alignment_loss_graph, AlignBatch, AlignConfig, Origin};
use pading_core::data::{SemanticSpace, ToySpaceSpec};
use pading_core::disentangle::{reconstruct_loss, related_loss, unrelated_kl, DisentangleConfig, Disentangler};
use pading_core::generator::{mmd_loss, FeatureGenerator, GeneratorRegistry, GeneratorSpec, MmdConfig};
use pading_core::numerics::{grad_check, Graph, Matrix, Param, Parameters, Var};
use pading_core::pipeline::harmonic_mean;

pub const GRAD_RTOL: f64 = 1e-3;
pub const GRAD_EPS: f64 = 1e-5;
const PROBES: usize = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:<28} {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Grad-checks `loss` over the parameters of `model`.
pub fn check_gradients<M, F>(name: &str, model: &mut M, loss: F, seed: u64) -> Check
where
    M: Parameters,
    F: FnMut(&M, &mut Graph) -> pading_core::Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match grad_check(model, loss, PROBES, GRAD_EPS, &mut rng) {
        Ok(r) => {
            let worst = r
                .worst()
                .map(|p| format!(" (worst {}[{}]: {:.3e} vs {:.3e})", p.param, p.index, p.analytic, p.numeric))
                .unwrap_or_default();
            Check::new(
                format!("grad {name}"),
                r.passes(GRAD_RTOL) && !r.probes.is_empty(),
                format!("max rel err {:.2e} over {} probes{worst}", r.max_relative_error, r.probes.len()),
            )
        }
        Err(e) => Check::new(format!("grad {name}"), false, e.to_string()),
    }
}

/// Generator plus disentangler as one parameter set.
struct Joint {
    generator: Box<dyn FeatureGenerator>,
    disentangler: Disentangler,
}

impl Parameters for Joint {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.generator.params();
        p.extend(self.disentangler.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.generator.params_mut();
        p.extend(self.disentangler.params_mut());
        p
    }
}

/// A random micro-batch over four classes (three seen, one unseen): real
/// seen rows, synthetic seen rows, synthetic unseen rows.
struct MicroBatch {
    space: SemanticSpace,
    seen_labels: Vec<usize>,
    unseen_labels: Vec<usize>,
    real: Matrix,
    noise: Matrix,
    x: Matrix,
    labels: Vec<usize>,
    origins: Vec<Origin>,
}

const D_X: usize = 12;
const PER_CLASS: usize = 2;

fn micro_batch(seed: u64, noise_dim: usize) -> MicroBatch {
    let space = SemanticSpace::synthetic(&ToySpaceSpec {
        seed,
        ..ToySpaceSpec::default()
    })
    .expect("default toy space is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBA7C);
    let seen_labels: Vec<usize> = [0, 1, 2].iter().flat_map(|&c| [c; PER_CLASS]).collect();
    let unseen_labels = vec![space.num_seen(); PER_CLASS];
    let n = seen_labels.len();
    let real = Matrix::randn(n, D_X, 1.0, &mut rng);
    let noise = Matrix::randn(n + unseen_labels.len(), noise_dim, 1.0, &mut rng);
    let x = Matrix::randn(2 * n + unseen_labels.len(), D_X, 1.0, &mut rng);
    let labels: Vec<usize> = seen_labels.iter().chain(&seen_labels).chain(&unseen_labels).copied().collect();
    let origins = std::iter::repeat_n(Origin::RealSeen, n)
        .chain(std::iter::repeat_n(Origin::SyntheticSeen, n))
        .chain(std::iter::repeat_n(Origin::SyntheticUnseen, unseen_labels.len()))
        .collect();
    MicroBatch {
        space,
        seen_labels,
        unseen_labels,
        real,
        noise,
        x,
        labels,
        origins,
    }
}

fn small_generator(kind: &str, d_a: usize, seed: u64) -> Box<dyn FeatureGenerator> {
    let spec = GeneratorSpec {
        d_a,
        d_x: D_X,
        d_k: 6,
        n_primitives: 10,
        layer_count: 3,
        gmmn_hidden: 10,
    };
    GeneratorRegistry::default().build(kind, &spec, seed).expect("small generator spec is valid")
}

fn small_disentangler(d_a: usize, seed: u64) -> Disentangler {
    let cfg = DisentangleConfig {
        hidden: Some(10),
        unrelated_dim: Some(5),
        ..DisentangleConfig::default()
    };
    Disentangler::new(D_X, d_a, cfg, seed).expect("small disentangler is valid")
}

/// Class-averaged MMD between the real rows and the generated seen rows.
fn generator_loss(g: &mut Graph, b: &MicroBatch, out: Var, bandwidths: &[f64]) -> pading_core::Result<Var> {
    let real = g.constant(b.real.clone());
    let mut acc: Option<Var> = None;
    let classes = b.seen_labels.len() / PER_CLASS;
    for k in 0..classes {
        let r = g.slice_rows(real, k * PER_CLASS, (k + 1) * PER_CLASS)?;
        let s = g.slice_rows(out, k * PER_CLASS, (k + 1) * PER_CLASS)?;
        let term = g.mmd(r, s, bandwidths)?;
        acc = Some(match acc {
            Some(prev) => g.add(prev, term)?,
            None => term,
        });
    }
    Ok(g.scale(acc.expect("at least one class"), 1.0 / classes as f64))
}

/// `L_G`, `L_R`, `L_U`, `L_recon`, `L_A` and `L_total` on a random
/// four-class micro-batch.
pub fn gradient_checks(seed: u64) -> Vec<Check> {
    let bandwidths = [0.5, 1.0, 2.0];
    let align = AlignConfig::default();
    let lambda = 0.002;
    let temperature = 0.1;
    let mut checks = Vec::new();

    for kind in ["primitive", "gmmn"] {
        let mut generator = small_generator(kind, 16, seed);
        let b = micro_batch(seed, generator.noise_dim());
        let a = b.space.rows_for(&b.seen_labels).expect("labels in range");
        let z = b
            .noise
            .select_rows(&(0..b.seen_labels.len()).collect::<Vec<_>>())
            .expect("rows in range");
        checks.push(check_gradients(
            &format!("L_G ({kind})"),
            &mut generator,
            |m, g| {
                let av = g.constant(a.clone());
                let zv = g.constant(z.clone());
                let out = m.forward(g, av, zv)?;
                generator_loss(g, &b, out, &bandwidths)
            },
            seed,
        ));
    }

    let b = micro_batch(seed, 1);
    let mut dis = small_disentangler(b.space.dim(), seed);
    type Term = fn(&Disentangler, &mut Graph, Var, &MicroBatch, &mut ChaCha8Rng) -> pading_core::Result<Var>;
    let terms: [(&str, Term); 3] = [
        ("L_R", |d, g, x, b, _| {
            let xhat = d.related.forward(g, x, None)?;
            related_loss(g, xhat, &b.labels, &b.space, 0.1)
        }),
        ("L_U", |d, g, x, _, _| {
            let code = d.unrelated.forward(g, x, None)?;
            unrelated_kl(g, code.mu, code.logvar)
        }),
        ("L_recon", |d, g, x, _, rng| {
            let xhat = d.related.forward(g, x, Some(&mut *rng))?;
            let code = d.unrelated.forward(g, x, Some(&mut *rng))?;
            let recon = d.decoder.forward(g, xhat, code.sample, Some(rng))?;
            reconstruct_loss(g, x, recon)
        }),
    ];
    for (name, term) in terms {
        checks.push(check_gradients(
            name,
            &mut dis,
            |d, g| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD0);
                let x = g.constant(b.x.clone());
                term(d, g, x, &b, &mut rng)
            },
            seed,
        ));
    }

    let mut xhat = vec![Param::new("xhat", Matrix::randn(b.labels.len(), b.space.dim(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)))];
    for (label, intra, inter) in [("intra", true, false), ("inter", false, true), ("both", true, true)] {
        let cfg = AlignConfig {
            include_intra: intra,
            include_inter: inter,
            ..align.clone()
        };
        checks.push(check_gradients(
            &format!("L_A ({label})"),
            &mut xhat,
            |m, g| {
                let x = g.param(&m[0]);
                alignment_loss_graph(g, x, &b.labels, &b.origins, &b.space, &cfg)
            },
            seed,
        ));
    }
    let mut encoder = small_disentangler(b.space.dim(), seed);
    checks.push(check_gradients(
        "L_A (through encoder)",
        &mut encoder,
        |d, g| {
            let x = g.constant(b.x.clone());
            let xh = d.related.forward(g, x, None)?;
            alignment_loss_graph(g, xh, &b.labels, &b.origins, &b.space, &align)
        },
        seed,
    ));

    let generator = small_generator("primitive", 16, seed);
    let b = micro_batch(seed, generator.noise_dim());
    let mut joint = Joint {
        generator,
        disentangler: small_disentangler(b.space.dim(), seed),
    };
    let semantic = b
        .space
        .rows_for(&b.seen_labels.iter().chain(&b.unseen_labels).copied().collect::<Vec<_>>())
        .expect("labels in range");
    let n = b.seen_labels.len();
    checks.push(check_gradients(
        "L_total",
        &mut joint,
        |m, g| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD0);
            let a = g.constant(semantic.clone());
            let z = g.constant(b.noise.clone());
            let out = m.generator.forward(g, a, z)?;
            let synth_seen = g.slice_rows(out, 0, n)?;
            let synth_unseen = g.slice_rows(out, n, n + b.unseen_labels.len())?;
            let lg = generator_loss(g, &b, synth_seen, &bandwidths)?;
            let real = g.constant(b.real.clone());
            let both = g.concat_rows(real, synth_seen)?;
            let x_all = g.concat_rows(both, synth_unseen)?;
            let terms = m.disentangler.losses(g, x_all, &b.labels, &b.space, Some(&mut rng))?;
            let la = alignment_loss_graph(
                g,
                terms.xhat,
                &b.labels,
                &b.origins,
                &b.space,
                &AlignConfig {
                    temperature,
                    ..align.clone()
                },
            )?;
            let aux = g.add(terms.total, la)?;
            let weighted = g.scale(aux, lambda);
            g.add(lg, weighted)
        },
        seed,
    ));
    checks
}

/// Zero self-distance, symmetry, and the single-pair closed form.
pub fn mmd_checks(seed: u64) -> Vec<Check> {
    let cfg = MmdConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_self = 0.0f64;
    let mut worst_sym = 0.0f64;
    for i in 0..100 {
        let rows = 1 + i % 9;
        let x = Matrix::randn(rows, 8, 1.0 + i as f64 / 10.0, &mut rng);
        let y = Matrix::randn(rows + 2, 8, 1.0, &mut rng);
        worst_self = worst_self.max(mmd_loss(&x, &x, &cfg).unwrap_or(f64::INFINITY).abs());
        let xy = mmd_loss(&x, &y, &cfg).unwrap_or(f64::NAN);
        let yx = mmd_loss(&y, &x, &cfg).unwrap_or(f64::NAN);
        worst_sym = worst_sym.max((xy - yx).abs());
    }
    let x = Matrix::new(1, 2, vec![0.0, 0.0]).expect("1x2");
    let y = Matrix::new(1, 2, vec![0.6, 0.8]).expect("1x2");
    let pair = mmd_loss(&x, &y, &MmdConfig { bandwidths: vec![1.0] }).unwrap_or(f64::NAN);
    let expected = 2.0 - 2.0 * (-0.5f64).exp();
    vec![
        Check::new("mmd(X, X) = 0", worst_self <= 1e-12, format!("max {worst_self:.2e} over 100 sets")),
        Check::new("mmd symmetry", worst_sym <= 1e-12, format!("max |mmd(X,Y) - mmd(Y,X)| {worst_sym:.2e}")),
        Check::new(
            "mmd single pair",
            (pair - expected).abs() <= 1e-9,
            format!("{pair:.15} vs 1+1-2e^-0.5 = {expected:.15}"),
        ),
    ]
}

/// Alignment loss with every feature set to its own semantic row.
pub fn alignment_checks(seed: u64) -> Vec<Check> {
    let b = micro_batch(seed, 1);
    let features = b.space.rows_for(&b.labels).expect("labels in range");
    [("intra", true, false), ("inter", false, true), ("both", true, true)]
        .into_iter()
        .map(|(label, intra, inter)| {
            let cfg = AlignConfig {
                include_intra: intra,
                include_inter: inter,
                ..AlignConfig::default()
            };
            let loss = AlignBatch::new(features.clone(), b.labels.clone(), b.origins.clone())
                .and_then(|batch| alignment_loss(&batch, &b.space, &cfg));
            match loss {
                Ok(v) => Check::new(format!("alignment zero ({label})"), v.abs() <= 1e-9, format!("loss {v:.2e}")),
                Err(e) => Check::new(format!("alignment zero ({label})"), false, e.to_string()),
            }
        })
        .collect()
}

/// Reference `(seen, unseen, HM)` triples.
pub const REFERENCE_HM: [(f64, f64, f64); 3] = [(41.5, 15.3, 22.3), (53.0, 8.0, 13.9), (43.0, 3.6, 6.7)];

/// Harmonic-mean range over a box of inputs; HM is increasing in both.
fn hm_range(s: f64, u: f64, half: f64) -> (f64, f64) {
    let hm = |a: f64, b: f64| harmonic_mean(a, b).unwrap_or(f64::NAN);
    (hm(s - half, u - half), hm(s + half, u + half))
}

/// Each reference HM is consistent with its reference inputs once all three
/// are read as values rounded to one decimal.
pub fn hm_checks() -> Vec<Check> {
    REFERENCE_HM
        .iter()
        .map(|&(s, u, reported)| {
            let exact = harmonic_mean(s, u).unwrap_or(f64::NAN);
            let (lo, hi) = hm_range(s, u, 0.05);
            let consistent = reported + 0.05 >= lo && reported - 0.05 <= hi;
            Check::new(
                format!("HM({s}, {u}) ~ {reported}"),
                consistent,
                format!("exact {exact:.4} (|diff| {:.4}); range over rounded inputs [{lo:.4}, {hi:.4}]", (exact - reported).abs()),
            )
        })
        .collect()
}

pub fn battery(seed: u64) -> Vec<Check> {
    let mut all = hm_checks();
    all.extend(mmd_checks(seed));
    all.extend(alignment_checks(seed));
    all.extend(gradient_checks(seed));
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_build_passes_everything() {
        let failed: Vec<String> = battery(0).into_iter().filter(|c| !c.passed).map(|c| c.to_string()).collect();
        assert!(failed.is_empty(), "{failed:#?}");
    }

    #[test]
    fn flipped_backward_sign_is_caught() {
        // value of sum(w∘w) with the gradient of −sum(w∘w)
        let mut model = vec![Param::new("w", Matrix::randn(3, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(1)))];
        let check = check_gradients(
            "sign fixture",
            &mut model,
            |m, g| {
                let w = g.param(&m[0]);
                let sq = g.hadamard(w, w)?;
                let s = g.sum(sq);
                let value = g.scalar(s);
                let flipped = g.scale(s, -1.0);
                let offset = g.constant(Matrix::scalar(2.0 * value));
                g.add(flipped, offset)
            },
            2,
        );
        assert!(!check.passed, "{check}");
    }

    #[test]
    fn hm_literal_differences_are_reported() {
        let checks = hm_checks();
        assert!(checks.iter().all(|c| c.passed));
        assert!(checks[0].detail.contains("exact 22.3574"));
    }
}
