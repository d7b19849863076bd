//! Lattice geometry and spin configurations.
//!
//! Site indexing is part of the parameter layout contract:
//!
//! * [`SquareLattice`]: row-major, site `(r, c)` has index `r * L + c`.
//! * [`ToricLattice`]: spins live on edges. Horizontal edge `(r, c)`, joining
//!   vertex `(r, c)` to `(r, c + 1)`, has index `r * L + c`; vertical edge
//!   `(r, c)`, joining vertex `(r, c)` to `(r + 1, c)`, has index
//!   `L² + r * L + c`. Both coordinates wrap around.
//!
//! Plaquette `(r, c)` is the face with corner vertices `(r, c)` and
//! `(r + 1, c + 1)`; vertex `(r, c)` owns the star of four edges touching it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NqsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Boundary::Open => "open",
            Boundary::Periodic => "periodic",
        })
    }
}

impl std::str::FromStr for Boundary {
    type Err = NqsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open" => Ok(Boundary::Open),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(NqsError::Config(format!("unknown boundary `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SquareLattice {
    side: usize,
    boundary: Boundary,
}

impl SquareLattice {
    pub fn new(side: usize, boundary: Boundary) -> Result<Self> {
        if side < 2 {
            return Err(NqsError::Config(format!(
                "square lattice side must be at least 2, got {side}"
            )));
        }
        Ok(SquareLattice { side, boundary })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn n_sites(&self) -> usize {
        self.side * self.side
    }

    pub fn site(&self, row: usize, col: usize) -> usize {
        row * self.side + col
    }

    /// Nearest-neighbour pairs, row-major, the horizontal bond of a site
    /// before its vertical bond.
    ///
    /// With periodic boundaries every site contributes both of its forward
    /// bonds, so `L = 2` lists each neighbouring pair twice (doubled coupling).
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let l = self.side;
        let mut bonds = Vec::with_capacity(2 * l * l);
        for r in 0..l {
            for c in 0..l {
                let s = self.site(r, c);
                if c + 1 < l {
                    bonds.push((s, self.site(r, c + 1)));
                } else if self.boundary == Boundary::Periodic {
                    bonds.push((s, self.site(r, 0)));
                }
                if r + 1 < l {
                    bonds.push((s, self.site(r + 1, c)));
                } else if self.boundary == Boundary::Periodic {
                    bonds.push((s, self.site(0, c)));
                }
            }
        }
        bonds
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ToricLattice {
    side: usize,
}

impl ToricLattice {
    pub fn new(side: usize) -> Result<Self> {
        if side < 2 {
            return Err(NqsError::Config(format!(
                "toric lattice side must be at least 2, got {side}"
            )));
        }
        Ok(ToricLattice { side })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_sites(&self) -> usize {
        2 * self.side * self.side
    }

    pub fn horizontal_edge(&self, row: usize, col: usize) -> usize {
        let l = self.side;
        (row % l) * l + col % l
    }

    pub fn vertical_edge(&self, row: usize, col: usize) -> usize {
        let l = self.side;
        l * l + (row % l) * l + col % l
    }

    /// Edge quadruples of all plaquettes, indexed `r * L + c`.
    pub fn plaquettes(&self) -> Vec<[usize; 4]> {
        let l = self.side;
        let mut out = Vec::with_capacity(l * l);
        for r in 0..l {
            for c in 0..l {
                out.push([
                    self.horizontal_edge(r, c),
                    self.horizontal_edge(r + 1, c),
                    self.vertical_edge(r, c),
                    self.vertical_edge(r, c + 1),
                ]);
            }
        }
        out
    }

    /// Edge quadruples of all vertex stars, indexed `r * L + c`.
    pub fn vertices(&self) -> Vec<[usize; 4]> {
        let l = self.side;
        let mut out = Vec::with_capacity(l * l);
        for r in 0..l {
            for c in 0..l {
                out.push([
                    self.horizontal_edge(r, c),
                    self.horizontal_edge(r, c + l - 1),
                    self.vertical_edge(r, c),
                    self.vertical_edge(r + l - 1, c),
                ]);
            }
        }
        out
    }

    pub fn cells(&self) -> (Vec<[usize; 4]>, Vec<[usize; 4]>) {
        (self.plaquettes(), self.vertices())
    }
}

/// Either lattice; the input geometry seen by samplers and ansätze.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Lattice {
    Square(SquareLattice),
    Toric(ToricLattice),
}

impl Lattice {
    pub fn n_sites(&self) -> usize {
        match self {
            Lattice::Square(l) => l.n_sites(),
            Lattice::Toric(l) => l.n_sites(),
        }
    }

    pub fn side(&self) -> usize {
        match self {
            Lattice::Square(l) => l.side(),
            Lattice::Toric(l) => l.side(),
        }
    }

    /// Number of stacked `L × L` input channels (one per sublattice).
    pub fn channels(&self) -> usize {
        match self {
            Lattice::Square(_) => 1,
            Lattice::Toric(_) => 2,
        }
    }
}

/// A basis label `σ ∈ {+1, −1}^N`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SpinConfig(Vec<i8>);

impl SpinConfig {
    pub fn all_up(n: usize) -> Self {
        SpinConfig(vec![1; n])
    }

    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(bad) = values.iter().position(|&v| v != 1 && v != -1) {
            return Err(NqsError::contract(format!(
                "spin {bad} has value {}, expected ±1",
                values[bad]
            )));
        }
        Ok(SpinConfig(values))
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        SpinConfig((0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect())
    }

    /// Basis state `index`: bit `k` set means `σ_k = −1`.
    pub fn from_index(index: usize, n: usize) -> Self {
        SpinConfig((0..n).map(|k| if index >> k & 1 == 1 { -1 } else { 1 }).collect())
    }

    pub fn to_index(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &s)| s < 0)
            .fold(0, |acc, (k, _)| acc | 1 << k)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<i8> {
        self.0
    }

    /// Copy with the listed sites negated.
    pub fn flip(&self, sites: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        out.try_flip_in_place(sites)?;
        Ok(out)
    }

    pub fn try_flip_in_place(&mut self, sites: &[usize]) -> Result<()> {
        if let Some(&bad) = sites.iter().find(|&&s| s >= self.0.len()) {
            return Err(NqsError::contract(format!(
                "site {bad} out of range for {} spins",
                self.0.len()
            )));
        }
        self.flip_in_place(sites);
        Ok(())
    }

    pub(crate) fn flip_in_place(&mut self, sites: &[usize]) {
        for &s in sites {
            self.0[s] = -self.0[s];
        }
    }

    /// `Σ σ_i / N`.
    pub fn magnetization(&self) -> f64 {
        self.0.iter().map(|&s| s as i64).sum::<i64>() as f64 / self.0.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use std::collections::HashSet;

    #[test]
    fn bond_counts() {
        let open = |l| SquareLattice::new(l, Boundary::Open).unwrap().bonds().len();
        let periodic = |l| SquareLattice::new(l, Boundary::Periodic).unwrap().bonds().len();
        assert_eq!(open(2), 4);
        assert_eq!(open(3), 12);
        assert_eq!(periodic(2), 8);
        for l in 2..=12 {
            assert_eq!(open(l), 2 * l * (l - 1));
            assert_eq!(periodic(l), 2 * l * l);
        }
    }

    #[test]
    fn bond_ordering_is_row_major_horizontal_first() {
        let lat = SquareLattice::new(3, Boundary::Open).unwrap();
        let bonds = lat.bonds();
        assert_eq!(&bonds[..3], &[(0, 1), (0, 3), (1, 2)]);
    }

    #[test]
    fn bonds_have_no_duplicates_or_self_pairs() {
        for l in 2..=12 {
            for boundary in [Boundary::Open, Boundary::Periodic] {
                // L = 2 periodic doubles every pair by construction.
                if l == 2 && boundary == Boundary::Periodic {
                    continue;
                }
                let lat = SquareLattice::new(l, boundary).unwrap();
                let mut seen = HashSet::new();
                for (a, b) in lat.bonds() {
                    assert_ne!(a, b);
                    assert!(a < lat.n_sites() && b < lat.n_sites());
                    assert!(seen.insert((a.min(b), a.max(b))), "duplicate bond {a}-{b}");
                }
            }
        }
    }

    #[test]
    fn toric_incidence() {
        for l in 2..=5 {
            let lat = ToricLattice::new(l).unwrap();
            let (plaq, vert) = lat.cells();
            assert_eq!(plaq.len(), l * l);
            assert_eq!(vert.len(), l * l);
            let mut in_plaq = vec![0; lat.n_sites()];
            let mut in_vert = vec![0; lat.n_sites()];
            for cell in &plaq {
                let distinct: HashSet<_> = cell.iter().collect();
                assert_eq!(distinct.len(), 4);
                cell.iter().for_each(|&e| in_plaq[e] += 1);
            }
            for cell in &vert {
                let distinct: HashSet<_> = cell.iter().collect();
                assert_eq!(distinct.len(), 4);
                cell.iter().for_each(|&e| in_vert[e] += 1);
            }
            assert!(in_plaq.iter().all(|&k| k == 2));
            assert!(in_vert.iter().all(|&k| k == 2));
            // stabilizers commute: a star and a face share 0 or 2 edges
            for p in &plaq {
                for v in &vert {
                    let shared = p.iter().filter(|e| v.contains(e)).count();
                    assert!(shared == 0 || shared == 2);
                }
            }
        }
    }

    #[test]
    fn toric_l3_edge_multiplicity() {
        let lat = ToricLattice::new(3).unwrap();
        assert_eq!(lat.n_sites(), 18);
        let mut count = [0usize; 18];
        for p in lat.plaquettes() {
            p.iter().for_each(|&e| count[e] += 1);
        }
        assert_eq!(count, [2; 18]);
    }

    #[test]
    fn flip_examples() {
        let up = SpinConfig::all_up(4);
        let f = up.flip(&[0]).unwrap();
        assert_eq!(f.as_slice(), &[-1, 1, 1, 1]);
        assert_eq!(up.flip(&[]).unwrap(), up);
        assert!(up.flip(&[4]).is_err());
        assert!(SpinConfig::new(vec![1, 0]).is_err());
    }

    #[test]
    fn index_roundtrip() {
        for idx in 0..16 {
            assert_eq!(SpinConfig::from_index(idx, 4).to_index(), idx);
        }
    }

    proptest! {
        #[test]
        fn flip_is_an_involution(seed in any::<u64>(), sites in proptest::collection::vec(0usize..16, 0..8)) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s = SpinConfig::random(16, &mut rng);
            let once = s.flip(&sites).unwrap();
            prop_assert!(once.as_slice().iter().all(|&v| v == 1 || v == -1));
            prop_assert_eq!(once.flip(&sites).unwrap(), s);
        }

        #[test]
        fn plaquette_product_is_one(l in 2usize..5, seed in any::<u64>()) {
            let lat = ToricLattice::new(l).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s = SpinConfig::random(lat.n_sites(), &mut rng);
            let prod: i64 = lat.plaquettes().iter()
                .map(|p| p.iter().map(|&e| s.as_slice()[e] as i64).product::<i64>())
                .product();
            prop_assert_eq!(prod, 1);
        }
    }
}
