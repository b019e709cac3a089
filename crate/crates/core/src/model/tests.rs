use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::tests::grad_check;
use crate::chemio::{Atom, Molecule};

fn random_molecule(n: usize, seed: u64) -> Molecule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let elements = [1, 6, 7, 8, 16];
    let atoms = (0..n)
        .map(|_| Atom {
            atomic_number: elements[rng.random_range(0..elements.len())],
            position: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
        })
        .collect();
    let bonds = (1..n).map(|i| (i - 1, i)).collect();
    Molecule { id: format!("m{seed}"), atoms, bonds: Some(bonds), labels: Default::default() }
}

fn small_config(variant: Variant) -> ModelConfig {
    ModelConfig { variant, d: 8, p: 4, gcn_layers: 2, transformer_layers: 2, o: 3, ..ModelConfig::default() }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn variants_round_trip_names() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
    }
    assert!("gcn".parse::<Variant>().is_err());
}

#[test]
fn output_shapes_and_range() {
    for v in Variant::ALL {
        let cfg = small_config(v);
        let model = MolPecoModel::new(cfg.clone(), 1).unwrap();
        let feat = featurize(&random_molecule(6, 2), &cfg).unwrap();
        let (probs, emb) = model.predict(&feat).unwrap();
        assert_eq!(probs.len(), 3);
        assert_eq!(emb.len(), 8);
        assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn permutation_invariance() {
    for v in Variant::ALL {
        let cfg = small_config(v);
        let model = MolPecoModel::new(cfg.clone(), 3).unwrap();
        for seed in 0..5 {
            let mol = random_molecule(7, seed);
            let (p0, e0) = model.predict(&featurize(&mol, &cfg).unwrap()).unwrap();
            let mut perm: Vec<usize> = (0..7).collect();
            perm.reverse();
            perm.swap(0, 3);
            let (p1, e1) = model.predict(&featurize(&mol.permuted(&perm), &cfg).unwrap()).unwrap();
            assert!(max_diff(&p0, &p1) < 1e-9, "{v}: {p0:?} vs {p1:?}");
            assert!(max_diff(&e0, &e1) < 1e-9);
        }
    }
}

#[test]
fn rigid_motion_invariance() {
    let (a, b) = (0.7f64, -1.1f64);
    let rot = |p: [f64; 3]| {
        let (x, y, z) = (p[0], p[1], p[2]);
        let (x, y) = (a.cos() * x - a.sin() * y, a.sin() * x + a.cos() * y);
        let (y, z) = (b.cos() * y - b.sin() * z, b.sin() * y + b.cos() * z);
        [x + 4.0, y - 2.5, z + 0.3]
    };
    for v in Variant::ALL {
        let cfg = small_config(v);
        let model = MolPecoModel::new(cfg.clone(), 5).unwrap();
        let mol = random_molecule(6, 11);
        let mut moved = mol.clone();
        for atom in &mut moved.atoms {
            atom.position = rot(atom.position);
        }
        let (p0, _) = model.predict(&featurize(&mol, &cfg).unwrap()).unwrap();
        let (p1, _) = model.predict(&featurize(&moved, &cfg).unwrap()).unwrap();
        assert!(max_diff(&p0, &p1) < 1e-9, "{v}");
    }
}

#[test]
fn zeroed_encoder_matches_coulomb_variant() {
    let base = MolPecoModel::new(small_config(Variant::CoulombGcn), 9).unwrap();
    let mut peco = MolPecoModel::new(small_config(Variant::MolPecoSym), 9).unwrap();
    peco.zero_lpe();
    let mol = random_molecule(5, 4);
    let (p0, e0) = base.predict(&featurize(&mol, base.config()).unwrap()).unwrap();
    let (p1, e1) = peco.predict(&featurize(&mol, peco.config()).unwrap()).unwrap();
    assert_eq!(p0, p1);
    assert_eq!(e0, e1);
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for v in [Variant::MolPecoAsym, Variant::MolPecoSym, Variant::AdjacencyGcn] {
        let cfg = ModelConfig {
            variant: v,
            d: 8,
            p: 4,
            gcn_layers: 1,
            transformer_layers: 1,
            o: 2,
            ..ModelConfig::default()
        };
        let model = MolPecoModel::new(cfg.clone(), 21).unwrap();
        let mut mol = random_molecule(3, 8);
        mol.atoms[0].atomic_number = 8;
        let feat = featurize(&mol, &cfg).unwrap();
        let inputs: Vec<Matrix> = model.params().iter().map(|p| p.value.clone()).collect();
        let targets = [1.0, 0.0];
        let weights = [0.7, 0.4];
        let err = grad_check(&inputs, |tape, vars| {
            let out = model.forward(tape, vars, &feat).unwrap();
            multilabel_loss(out.logits, &targets, &weights, 1e-9).unwrap()
        });
        assert!(err <= 1e-4, "{v}: relative error {err}");
        let (loss, grads) = model.loss_and_grads(&feat, &targets, &weights, 1e-9).unwrap();
        assert!(loss.is_finite());
        assert_eq!(grads.len(), model.params().len());
    }
}

#[test]
fn rejects_out_of_table_elements_and_missing_features() {
    let cfg = small_config(Variant::MolPecoAsym);
    let model = MolPecoModel::new(cfg.clone(), 0).unwrap();
    let mut feat = featurize(&random_molecule(4, 0), &cfg).unwrap();
    feat.spectrum = None;
    assert!(model.predict(&feat).is_err());
    let mut feat = featurize(&random_molecule(4, 0), &cfg).unwrap();
    feat.atomic_numbers[0] = 87;
    assert!(matches!(model.predict(&feat), Err(Error::Data(_))));
}

#[test]
fn rebuilds_from_stored_parameters() {
    let cfg = small_config(Variant::MolPecoSym);
    let model = MolPecoModel::new(cfg.clone(), 17).unwrap();
    let copy = MolPecoModel::from_params(cfg.clone(), model.params()).unwrap();
    let feat = featurize(&random_molecule(5, 1), &cfg).unwrap();
    assert_eq!(model.predict(&feat).unwrap(), copy.predict(&feat).unwrap());
    let other = ModelConfig { d: 16, ..cfg };
    assert!(MolPecoModel::from_params(other, model.params()).is_err());
}

#[test]
fn config_validation() {
    assert!(ModelConfig { d: 0, ..ModelConfig::default() }.validate().is_err());
    let cfg: ModelConfig = serde_json::from_str(r#"{"variant":"coulomb-gcn","o":5}"#).unwrap();
    assert_eq!(cfg.d, 32);
    assert_eq!(cfg.p, 20);
    assert_eq!(cfg.z_max, 87);
}

fn one_layer(variant: Variant) -> MolPecoModel {
    let cfg = ModelConfig { variant, d: 4, p: 3, gcn_layers: 1, transformer_layers: 1, o: 2, ..ModelConfig::default() };
    MolPecoModel::new(cfg, 0).unwrap()
}

#[test]
fn gcn_residual_identity_and_zero_graph() {
    let mut model = one_layer(Variant::CoulombGcn);
    let g = model.params().slot("gcn.0.w_graph").unwrap();
    let l = model.params().slot("gcn.0.w_linear").unwrap();
    model.params_mut().get_mut(g).value = Matrix::zeros(4, 4);
    model.params_mut().get_mut(l).value = Matrix::identity(4);
    let h0 = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.3 - 1.0);
    let x = Matrix::from_fn(3, 3, |i, j| 1.0 + (i + j) as f64);
    let tape = Tape::new();
    let vars = model.params().bind(&tape);
    let out = model.gcn_forward(&tape, &vars, &x, tape.constant(h0.clone())).unwrap();
    assert_eq!(out.value(), h0);

    let model = one_layer(Variant::CoulombGcn);
    let tape = Tape::new();
    let vars = model.params().bind(&tape);
    let out = model.gcn_forward(&tape, &vars, &Matrix::zeros(3, 3), tape.constant(h0.clone())).unwrap();
    let expected = h0.matmul(&model.params().by_name("gcn.0.w_linear").unwrap().value).unwrap();
    assert_eq!(out.value(), expected);
    assert!(model.gcn_forward(&tape, &vars, &Matrix::zeros(2, 2), tape.constant(h0)).is_err());
}

#[test]
fn gcn_is_permutation_equivariant() {
    let cfg = ModelConfig { variant: Variant::CoulombGcn, d: 6, gcn_layers: 3, ..ModelConfig::default() };
    let model = MolPecoModel::new(cfg, 2).unwrap();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6;
        let mut x = Matrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
        x = x.zip_map(&x.transpose(), |a, b| 0.5 * (a + b)).unwrap();
        let h0 = Matrix::from_fn(n, 6, |_, _| rng.random_range(-1.0..1.0));
        let perm = [3, 0, 5, 1, 4, 2];
        let xp = x.permute_symmetric(&perm);
        let hp = Matrix::from_fn(n, 6, |i, j| h0[(perm[i], j)]);
        let tape = Tape::new();
        let vars = model.params().bind(&tape);
        let a = model.gcn_forward(&tape, &vars, &x, tape.constant(h0)).unwrap().value();
        let b = model.gcn_forward(&tape, &vars, &xp, tape.constant(hp)).unwrap().value();
        for (i, &pi) in perm.iter().enumerate() {
            assert!(max_diff(a.row(pi), b.row(i)) < 1e-9);
        }
    }
}

#[test]
fn embedding_lookup_is_shared_per_element() {
    let model = one_layer(Variant::AdjacencyGcn);
    let tape = Tape::new();
    let vars = model.params().bind(&tape);
    let h = model.atom_init_embedding(&tape, &vars, &[1, 1, 8]).unwrap().value();
    assert_eq!(h.shape(), (3, 4));
    assert_eq!(h.row(0), h.row(1));
    assert_eq!(h.row(2), model.params().by_name("embedding.table").unwrap().value.row(8));
    assert!(model.atom_init_embedding(&tape, &vars, &[87]).is_err());
}

#[test]
fn zero_classifier_gives_one_half() {
    let mut model = one_layer(Variant::CoulombGcn);
    let slot = model.params().slot("head.w_clf").unwrap();
    model.params_mut().get_mut(slot).value = Matrix::zeros(4, 2);
    let feat = featurize(&random_molecule(4, 3), model.config()).unwrap();
    assert_eq!(model.predict(&feat).unwrap().0, vec![0.5, 0.5]);
}

#[test]
fn sum_pool_examples() {
    let tape = Tape::new();
    let h = tape.constant(Matrix::filled(4, 2, 1.0));
    assert_eq!(sum_pool(h).value().into_vec(), vec![4.0, 4.0]);
    let row = tape.constant(Matrix::from_rows(&[[1.5, -2.0, 3.0]]));
    assert_eq!(sum_pool(row).value().into_vec(), vec![1.5, -2.0, 3.0]);
}

#[test]
fn lpe_single_atom_and_sign_sensitivity() {
    let model = one_layer(Variant::MolPecoSym);
    let cfg = model.config().clone();
    let single = Molecule {
        id: "c".into(),
        atoms: vec![Atom { atomic_number: 6, position: [0.0; 3] }],
        bonds: None,
        labels: Default::default(),
    };
    let feat = featurize(&single, &cfg).unwrap();
    let tape = Tape::new();
    let vars = model.params().bind(&tape);
    let e = model.lpe_forward(&tape, &vars, feat.spectrum.as_ref().unwrap()).unwrap().value();
    assert_eq!(e.shape(), (1, 4));
    assert!(e.is_finite());

    let feat = featurize(&random_molecule(5, 6), &cfg).unwrap();
    let spec = feat.spectrum.clone().unwrap();
    let mut flipped = spec.clone();
    for i in 0..5 {
        flipped.eigenvectors[(i, 1)] *= -1.0;
    }
    let a = model.lpe_forward(&tape, &vars, &spec).unwrap().value();
    let b = model.lpe_forward(&tape, &vars, &flipped).unwrap().value();
    assert!(max_diff(a.as_slice(), b.as_slice()) > 1e-6);
}

#[test]
fn zeroed_encoder_outputs_zero() {
    let mut model = one_layer(Variant::MolPecoAsym);
    model.zero_lpe();
    let feat = featurize(&random_molecule(4, 9), model.config()).unwrap();
    let tape = Tape::new();
    let vars = model.params().bind(&tape);
    let e = model.lpe_forward(&tape, &vars, feat.spectrum.as_ref().unwrap()).unwrap().value();
    assert_eq!(e, Matrix::zeros(4, 4));
}

#[test]
fn forward_is_deterministic() {
    let model = one_layer(Variant::MolPecoAsym);
    let feat = featurize(&random_molecule(6, 10), model.config()).unwrap();
    assert_eq!(model.predict(&feat).unwrap(), model.predict(&feat).unwrap());
}
