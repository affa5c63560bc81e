//! Node and edge feature graphs for the GNNs.
//!
//! Atom feature layout (width 30):
//!
//! | block         | offset | width | encoding                                      |
//! |---------------|--------|-------|-----------------------------------------------|
//! | element       | 0      | 11    | one-hot over B C N O P S F Cl Br I, other     |
//! | degree        | 11     | 7     | one-hot 0..=6, clamped                        |
//! | formal_charge | 18     | 5     | one-hot -2..=+2, clamped                      |
//! | hydrogens     | 23     | 5     | one-hot 0..=4 implicit/bracket H, clamped     |
//! | aromatic      | 28     | 1     | flag                                          |
//! | in_ring       | 29     | 1     | flag                                          |
//!
//! Bond feature layout (width 5): bond order one-hot (single, double, triple,
//! aromatic) at offset 0, then an in-ring flag at offset 4.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smiles::{implicit_hydrogens, Molecule};
use crate::tensor::Tensor;

const ELEMENT_ORDER: [u8; 10] = [5, 6, 7, 8, 15, 16, 9, 17, 35, 53];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub name: String,
    pub offset: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub atom_width: usize,
    pub bond_width: usize,
    pub atom_blocks: Vec<FeatureBlock>,
    pub bond_blocks: Vec<FeatureBlock>,
}

fn blocks(spec: &[(&str, usize)]) -> Vec<FeatureBlock> {
    let mut offset = 0;
    spec.iter()
        .map(|&(name, width)| {
            let b = FeatureBlock {
                name: name.to_string(),
                offset,
                width,
            };
            offset += width;
            b
        })
        .collect()
}

impl FeatureSchema {
    pub fn standard() -> Self {
        let atom_blocks = blocks(&[
            ("element", ELEMENT_ORDER.len() + 1),
            ("degree", 7),
            ("formal_charge", 5),
            ("hydrogens", 5),
            ("aromatic", 1),
            ("in_ring", 1),
        ]);
        let bond_blocks = blocks(&[("bond_order", 4), ("in_ring", 1)]);
        let width = |b: &[FeatureBlock]| b.last().map(|l| l.offset + l.width).unwrap_or(0);
        FeatureSchema {
            atom_width: width(&atom_blocks),
            bond_width: width(&bond_blocks),
            atom_blocks,
            bond_blocks,
        }
    }

    fn atom_offset(&self, name: &str) -> usize {
        self.atom_blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| b.offset)
            .expect("block exists")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

pub const ATOM_FEATURES: usize = 30;
pub const BOND_FEATURES: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeaturizeError {
    #[error("feature width mismatch: {0:?} vs {1:?}")]
    WidthMismatch((usize, usize), (usize, usize)),
    #[error("graph has no atoms")]
    EmptyGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MolGraph {
    /// `[n_atoms, ATOM_FEATURES]`
    pub node_features: Tensor,
    /// Directed edges; bond `k` yields `(a, b)` at `2k` and `(b, a)` at `2k + 1`.
    pub edge_index: Vec<(usize, usize)>,
    /// `[n_directed_edges, BOND_FEATURES]`
    pub edge_features: Tensor,
    pub component_ids: Vec<u8>,
}

impl MolGraph {
    pub fn num_nodes(&self) -> usize {
        self.component_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_index.len()
    }

    pub fn atom_width(&self) -> usize {
        self.node_features.cols()
    }

    pub fn bond_width(&self) -> usize {
        self.edge_features.cols()
    }
}

pub fn featurize(mol: &Molecule) -> MolGraph {
    let schema = FeatureSchema::standard();
    let n = mol.atoms.len();
    let ring_atoms = mol.ring_atoms();
    let ring_bonds = mol.ring_bonds();
    let mut degree = vec![0usize; n];
    for b in &mol.bonds {
        degree[b.a] += 1;
        degree[b.b] += 1;
    }

    let mut x = vec![0.0; n * ATOM_FEATURES];
    let (o_deg, o_chg, o_h, o_aro, o_ring) = (
        schema.atom_offset("degree"),
        schema.atom_offset("formal_charge"),
        schema.atom_offset("hydrogens"),
        schema.atom_offset("aromatic"),
        schema.atom_offset("in_ring"),
    );
    for (i, atom) in mol.atoms.iter().enumerate() {
        let row = &mut x[i * ATOM_FEATURES..(i + 1) * ATOM_FEATURES];
        let el = ELEMENT_ORDER
            .iter()
            .position(|&z| z == atom.element)
            .unwrap_or(ELEMENT_ORDER.len());
        row[el] = 1.0;
        row[o_deg + degree[i].min(6)] = 1.0;
        row[o_chg + (atom.formal_charge.clamp(-2, 2) + 2) as usize] = 1.0;
        row[o_h + (implicit_hydrogens(mol, i).min(4)) as usize] = 1.0;
        row[o_aro] = if atom.aromatic { 1.0 } else { 0.0 };
        row[o_ring] = if ring_atoms[i] { 1.0 } else { 0.0 };
    }

    let mut edge_index = Vec::with_capacity(2 * mol.bonds.len());
    let mut e = Vec::with_capacity(2 * mol.bonds.len() * BOND_FEATURES);
    for (bond, in_ring) in mol.bonds.iter().zip(ring_bonds) {
        let mut row = [0.0; BOND_FEATURES];
        row[bond.order.index()] = 1.0;
        row[4] = if in_ring { 1.0 } else { 0.0 };
        edge_index.push((bond.a, bond.b));
        edge_index.push((bond.b, bond.a));
        e.extend_from_slice(&row);
        e.extend_from_slice(&row);
    }

    MolGraph {
        node_features: Tensor::from_vec(vec![n, ATOM_FEATURES], x),
        edge_features: Tensor::from_vec(vec![edge_index.len(), BOND_FEATURES], e),
        edge_index,
        component_ids: vec![0; n],
    }
}

/// Disjoint union of two molecule graphs; `g2`'s nodes follow `g1`'s.
pub fn pair_graph(g1: &MolGraph, g2: &MolGraph) -> Result<MolGraph, FeaturizeError> {
    if g1.num_nodes() == 0 || g2.num_nodes() == 0 {
        return Err(FeaturizeError::EmptyGraph);
    }
    let w1 = (g1.atom_width(), g1.bond_width());
    let w2 = (g2.atom_width(), g2.bond_width());
    if w1 != w2 {
        return Err(FeaturizeError::WidthMismatch(w1, w2));
    }
    let n1 = g1.num_nodes();
    let (fa, fb) = w1;

    let mut x = g1.node_features.data().to_vec();
    x.extend_from_slice(g2.node_features.data());
    let mut e = g1.edge_features.data().to_vec();
    e.extend_from_slice(g2.edge_features.data());
    let edge_index: Vec<_> = g1
        .edge_index
        .iter()
        .copied()
        .chain(g2.edge_index.iter().map(|&(a, b)| (a + n1, b + n1)))
        .collect();
    let component_ids = std::iter::repeat_n(0, n1)
        .chain(std::iter::repeat_n(1, g2.num_nodes()))
        .collect();
    Ok(MolGraph {
        node_features: Tensor::from_vec(vec![n1 + g2.num_nodes(), fa], x),
        edge_features: Tensor::from_vec(vec![edge_index.len(), fb], e),
        edge_index,
        component_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    fn graph(s: &str) -> MolGraph {
        featurize(&parse_smiles(s).unwrap())
    }

    fn row(g: &MolGraph, i: usize) -> &[f64] {
        &g.node_features.data()[i * ATOM_FEATURES..(i + 1) * ATOM_FEATURES]
    }

    #[test]
    fn schema_widths_and_round_trip() {
        let s = FeatureSchema::standard();
        assert_eq!(s.atom_width, ATOM_FEATURES);
        assert_eq!(s.bond_width, BOND_FEATURES);
        assert_eq!(FeatureSchema::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn methane_features() {
        let g = graph("C");
        assert_eq!(g.node_features.shape(), &[1, ATOM_FEATURES]);
        let r = row(&g, 0);
        assert_eq!(r[1], 1.0); // carbon
        assert_eq!(r[11], 1.0); // degree 0
        assert_eq!(r[20], 1.0); // charge 0
        assert_eq!(r[23 + 4], 1.0); // four hydrogens
        assert_eq!(r[28], 0.0);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn benzene_symmetric() {
        let g = graph("c1ccccc1");
        for i in 1..6 {
            assert_eq!(row(&g, i), row(&g, 0));
        }
        assert_eq!(g.num_edges(), 12);
        for k in 0..12 {
            assert_eq!(&g.edge_features.data()[k * 5..k * 5 + 5], &[0.0, 0.0, 0.0, 1.0, 1.0]);
        }
    }

    #[test]
    fn ethanol_degrees() {
        let g = graph("CCO");
        let deg: Vec<usize> = (0..3)
            .map(|i| row(&g, i)[11..18].iter().position(|&v| v == 1.0).unwrap())
            .collect();
        assert_eq!(deg, vec![1, 2, 1]);
        for k in 0..g.num_edges() {
            assert_eq!(&g.edge_features.data()[k * 5..k * 5 + 4], &[1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn pair_of_methanes() {
        let m = graph("C");
        let p = pair_graph(&m, &m).unwrap();
        assert_eq!(p.num_nodes(), 2);
        assert_eq!(p.num_edges(), 0);
        assert_eq!(p.component_ids, vec![0, 1]);
    }

    #[test]
    fn pair_benzene_ethanol() {
        let p = pair_graph(&graph("c1ccccc1"), &graph("CCO")).unwrap();
        assert_eq!(p.num_nodes(), 9);
        assert_eq!(p.num_edges(), 16);
        for &(a, b) in &p.edge_index {
            assert_eq!(p.component_ids[a], p.component_ids[b]);
        }
    }

    #[test]
    fn pair_rejects_empty_and_mismatched() {
        let m = graph("C");
        let empty = MolGraph {
            node_features: Tensor::zeros(vec![0, ATOM_FEATURES]),
            edge_index: vec![],
            edge_features: Tensor::zeros(vec![0, BOND_FEATURES]),
            component_ids: vec![],
        };
        assert_eq!(pair_graph(&m, &empty), Err(FeaturizeError::EmptyGraph));
        let mut narrow = m.clone();
        narrow.node_features = Tensor::zeros(vec![1, 3]);
        assert!(matches!(
            pair_graph(&m, &narrow),
            Err(FeaturizeError::WidthMismatch(..))
        ));
    }

    #[test]
    fn relabeling_permutes_rows() {
        let a = graph("OCC");
        let b = graph("CCO");
        // atom i of "OCC" is atom 2 - i of "CCO"
        for i in 0..3 {
            assert_eq!(row(&a, i), row(&b, 2 - i));
        }
    }
}
