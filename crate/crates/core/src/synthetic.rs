//! Seeded generators for small labeled molecule sets with known structure-label rules.
//!
//! Used by the test suites and handy for smoke-testing the command line
//! without external data.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chemio::{Atom, Dataset, Molecule};

const BOND: f64 = 1.45;

fn labels(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn jitter(rng: &mut ChaCha8Rng, p: [f64; 3], amount: f64) -> [f64; 3] {
    p.map(|x| x + rng.random_range(-amount..amount))
}

/// Backbone of `k` heavy atoms laid out as a zigzag chain or a regular ring.
fn backbone(k: usize, ring: bool, rng: &mut ChaCha8Rng) -> (Vec<[f64; 3]>, Vec<(usize, usize)>) {
    let mut bonds: Vec<(usize, usize)> = (1..k).map(|i| (i - 1, i)).collect();
    let positions: Vec<[f64; 3]> = if ring {
        bonds.push((0, k - 1));
        let r = BOND / (2.0 * (PI / k as f64).sin());
        (0..k)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / k as f64;
                [r * a.cos(), r * a.sin(), 0.0]
            })
            .collect()
    } else {
        (0..k).map(|i| [i as f64 * BOND * 0.83, if i % 2 == 0 { 0.0 } else { 0.8 }, 0.0]).collect()
    };
    (positions.into_iter().map(|p| jitter(rng, p, 0.05)).collect(), bonds)
}

/// Twenty molecules carrying four labels fixed by composition and topology:
/// `sulfurous` (contains S), `nitrogenous` (contains N), `oxygenated`
/// (contains O) and `cyclic` (ring backbone).
pub fn overfit_set(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut molecules = Vec::with_capacity(20);
    for i in 0..20 {
        let ring = i % 2 == 1;
        let sulfur = (i / 2) % 2 == 1;
        let nitrogen = (i / 4) % 2 == 1;
        let oxygen = i % 3 == 0;
        let k = rng.random_range(5..=8);
        let (positions, bonds) = backbone(k, ring, &mut rng);
        let mut z = vec![6u32; k];
        let mut free: Vec<usize> = (0..k).collect();
        for (present, element) in [(sulfur, 16), (nitrogen, 7), (oxygen, 8)] {
            if present {
                let slot = free.remove(rng.random_range(0..free.len()));
                z[slot] = element;
            }
        }
        let atoms =
            z.iter().zip(positions).map(|(&atomic_number, position)| Atom { atomic_number, position }).collect();
        let mut names = Vec::new();
        for (on, name) in [(sulfur, "sulfurous"), (nitrogen, "nitrogenous"), (oxygen, "oxygenated"), (ring, "cyclic")] {
            if on {
                names.push(name);
            }
        }
        molecules.push(Molecule { id: format!("ovf{i:02}"), atoms, bonds: Some(bonds), labels: labels(&names) });
    }
    Dataset::new(molecules)
}

/// Rotates `v` about unit axis `k` by angle `a`.
fn rotate(v: [f64; 3], k: [f64; 3], a: f64) -> [f64; 3] {
    let (s, c) = a.sin_cos();
    let dot = v[0] * k[0] + v[1] * k[1] + v[2] * k[2];
    let cross = [k[1] * v[2] - k[2] * v[1], k[2] * v[0] - k[0] * v[2], k[0] * v[1] - k[1] * v[0]];
    [0, 1, 2].map(|i| v[i] * c + cross[i] * s + k[i] * dot * (1.0 - c))
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    a.map(|x| x / n)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Chain conformation from torsion angles, with fixed bond length and angle.
fn conformer(torsions: &[f64]) -> Vec<[f64; 3]> {
    let angle = 111f64.to_radians();
    let mut pts = vec![[0.0, 0.0, 0.0], [BOND, 0.0, 0.0]];
    let third = [BOND - BOND * angle.cos(), BOND * angle.sin(), 0.0];
    pts.push(third);
    for &t in torsions {
        let n = pts.len();
        let (a, b, c) = (pts[n - 3], pts[n - 2], pts[n - 1]);
        // Place d so that b-c-d has the bond angle and a-b-c-d the torsion.
        let bc = unit(sub(c, b));
        let ab = unit(sub(b, a));
        let normal =
            unit([ab[1] * bc[2] - ab[2] * bc[1], ab[2] * bc[0] - ab[0] * bc[2], ab[0] * bc[1] - ab[1] * bc[0]]);
        let dir = rotate(bc, normal, PI - angle);
        let dir = rotate(dir, bc, t);
        pts.push([0, 1, 2].map(|i| c[i] + BOND * dir[i]));
    }
    pts
}

/// Molecules that share one bond graph per size and differ only in shape.
///
/// Every molecule is a carbon chain of 6 atoms with an oxygen at one end.
/// Labels: `folded` when the end-to-end distance is below 4.3 Å, and
/// `crowded` when two atoms at least four bonds apart come within 3.0 Å.
/// The bond adjacency carries no information about either.
pub fn conformer_set(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let molecules = (0..n)
        .map(|i| {
            let k = 6;
            let torsions: Vec<f64> = (0..k - 3)
                .map(|_| {
                    let base = [PI / 3.0, PI, -PI / 3.0][rng.random_range(0..3)];
                    base + rng.random_range(-0.25..0.25)
                })
                .collect();
            let pts = conformer(&torsions);
            let mut names = Vec::new();
            if dist(pts[0], pts[k - 1]) < 4.3 {
                names.push("folded");
            }
            let crowded = (0..k).any(|a| (a + 4..k).any(|b| dist(pts[a], pts[b]) < 3.0));
            if crowded {
                names.push("crowded");
            }
            let mut atoms: Vec<Atom> = pts.into_iter().map(|position| Atom { atomic_number: 6, position }).collect();
            atoms[0].atomic_number = 8;
            let bonds = (1..k).map(|j| (j - 1, j)).collect();
            Molecule { id: format!("conf{i:04}"), atoms, bonds: Some(bonds), labels: labels(&names) }
        })
        .collect();
    Dataset::new(molecules)
}

/// Correlated multi-label set for split tests: eight descriptors with
/// positive rates between 10% and 50%, some pairs co-occurring more often
/// than chance.
pub fn multilabel_set(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rates = [0.5, 0.4, 0.3, 0.25, 0.2, 0.15, 0.12, 0.1];
    let names = ["d0", "d1", "d2", "d3", "d4", "d5", "d6", "d7"];
    let molecules = (0..n)
        .map(|i| {
            let mut on: Vec<bool> = rates.iter().map(|&r| rng.random_bool(r)).collect();
            if on[0] && rng.random_bool(0.4) {
                on[5] = true;
            }
            if on[1] && rng.random_bool(0.3) {
                on[7] = true;
            }
            let chosen: Vec<&str> = names.iter().zip(&on).filter(|(_, &o)| o).map(|(n, _)| *n).collect();
            let k = rng.random_range(2..6);
            let (positions, bonds) = backbone(k, false, &mut rng);
            let atoms = positions.into_iter().map(|position| Atom { atomic_number: 6, position }).collect();
            Molecule { id: format!("ml{i:04}"), atoms, bonds: Some(bonds), labels: labels(&chosen) }
        })
        .collect();
    Dataset::new(molecules)
}
