//! Circular (Morgan-style) bit fingerprints.
//!
//! Atom identifiers start from a hash of (element, degree, formal charge,
//! hydrogen count, aromatic flag, ring flag). Each iteration `r` rehashes an
//! atom's identifier together with the radius and its sorted list of
//! `(bond order, neighbor identifier)` pairs. Every radius-0 identifier is
//! emitted; from radius 1 on an atom emits only when its bond environment
//! grew and no other atom (at this or an earlier radius) already covered the
//! same bond set. Among atoms sharing a new environment the smallest
//! identifier wins. Each emitted identifier sets bit `id mod nbits`.
//!
//! All hashing goes through [`mix64`] / [`combine`]. Bit positions are not
//! compatible with other cheminformatics toolkits.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smiles::{implicit_hydrogens, Molecule};

pub const DEFAULT_RADIUS: usize = 4;
pub const DEFAULT_NBITS: usize = 2048;

const SEED_ATOM: u64 = 0x243f_6a88_85a3_08d3;
const SEED_LAYER: u64 = 0x1319_8a2e_0370_7344;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-dependent combination of a running hash with one more value.
pub fn combine(seed: u64, value: u64) -> u64 {
    mix64(
        seed ^ value
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(seed << 6)
            .wrapping_add(seed >> 2),
    )
}

/// FNV-1a over the UTF-8 bytes, used to key cache records.
pub fn smiles_hash(smiles: &str) -> u64 {
    smiles.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FingerprintError {
    #[error("fingerprint width {0} must be a power of two and at least 64")]
    InvalidWidth(usize),
    #[error("fingerprint width mismatch: {0} vs {1}")]
    WidthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitFingerprint {
    words: Vec<u64>,
    nbits: usize,
    radius: usize,
}

impl BitFingerprint {
    pub fn zeros(nbits: usize, radius: usize) -> Result<Self, FingerprintError> {
        if nbits < 64 || !nbits.is_power_of_two() {
            return Err(FingerprintError::InvalidWidth(nbits));
        }
        Ok(BitFingerprint {
            words: vec![0; nbits / 64],
            nbits,
            radius,
        })
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Indices of set bits, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words
            .iter()
            .enumerate()
            .flat_map(|(w, &word)| (0..64).filter(move |b| word >> b & 1 == 1).map(move |b| w * 64 + b))
    }
}

fn initial_identifier(mol: &Molecule, atom: usize, degree: usize, in_ring: bool) -> u64 {
    let a = &mol.atoms[atom];
    [
        a.element as u64,
        degree as u64,
        a.formal_charge as i64 as u64,
        implicit_hydrogens(mol, atom) as u64,
        a.aromatic as u64,
        in_ring as u64,
    ]
    .into_iter()
    .fold(SEED_ATOM, combine)
}

/// Pre-fold identifiers with the radius at which each value first appeared.
pub fn identifiers(mol: &Molecule, radius: usize) -> BTreeMap<u64, usize> {
    let adj = mol.adjacency();
    let ring = mol.ring_atoms();
    let n = mol.atoms.len();

    let mut ids: Vec<u64> = (0..n)
        .map(|a| initial_identifier(mol, a, adj[a].len(), ring[a]))
        .collect();
    let mut envs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut out = BTreeMap::new();
    for &id in &ids {
        out.entry(id).or_insert(0);
    }

    let mut seen_envs: BTreeSet<BTreeSet<usize>> = BTreeSet::new();
    for r in 1..=radius {
        let mut next_ids = Vec::with_capacity(n);
        let mut next_envs = Vec::with_capacity(n);
        for a in 0..n {
            let mut nbrs: Vec<(u64, u64)> = adj[a]
                .iter()
                .map(|&(w, k)| (mol.bonds[k].order.index() as u64, ids[w]))
                .collect();
            nbrs.sort_unstable();
            let mut h = combine(combine(SEED_LAYER, r as u64), ids[a]);
            for (bond, nid) in nbrs {
                h = combine(combine(h, bond), nid);
            }
            next_ids.push(h);

            let mut env = envs[a].clone();
            for &(w, k) in &adj[a] {
                env.insert(k);
                env.extend(envs[w].iter().copied());
            }
            next_envs.push(env);
        }

        let mut candidates: Vec<(&BTreeSet<usize>, u64)> = (0..n)
            .filter(|&a| next_envs[a] != envs[a])
            .map(|a| (&next_envs[a], next_ids[a]))
            .collect();
        candidates.sort();
        let mut fresh = Vec::new();
        for (env, id) in candidates {
            if seen_envs.contains(env) || fresh.last().is_some_and(|(e, _)| *e == env) {
                continue;
            }
            fresh.push((env, id));
        }
        for (env, id) in fresh {
            seen_envs.insert(env.clone());
            out.entry(id).or_insert(r);
        }

        ids = next_ids;
        envs = next_envs;
    }
    out
}

pub fn morgan_fingerprint(mol: &Molecule, radius: usize, nbits: usize) -> Result<BitFingerprint, FingerprintError> {
    let mut fp = BitFingerprint::zeros(nbits, radius)?;
    for id in identifiers(mol, radius).into_keys() {
        fp.set((id % nbits as u64) as usize);
    }
    Ok(fp)
}

/// `fp1` in bits `[0, n)`, `fp2` in `[n, 2n)`.
pub fn concat_pair(fp1: &BitFingerprint, fp2: &BitFingerprint) -> Result<BitFingerprint, FingerprintError> {
    if fp1.nbits != fp2.nbits {
        return Err(FingerprintError::WidthMismatch(fp1.nbits, fp2.nbits));
    }
    let mut words = fp1.words.clone();
    words.extend_from_slice(&fp2.words);
    Ok(BitFingerprint {
        words,
        nbits: fp1.nbits * 2,
        radius: fp1.radius,
    })
}

const CACHE_MAGIC: &[u8; 4] = b"ODFP";

/// Fingerprint cache: `magic, nbits u32, radius u32, count u64`, then
/// `count × (smiles_hash u64, nbits/64 × u64 words)`, little-endian.
pub fn write_cache(
    mut w: impl Write,
    nbits: usize,
    radius: usize,
    records: &[(u64, BitFingerprint)],
) -> io::Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&(nbits as u32).to_le_bytes())?;
    w.write_all(&(radius as u32).to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for (hash, fp) in records {
        if fp.nbits != nbits {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "record width differs from header",
            ));
        }
        w.write_all(&hash.to_le_bytes())?;
        for word in &fp.words {
            w.write_all(&word.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_cache(mut r: impl Read) -> io::Result<Vec<(u64, BitFingerprint)>> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut magic = [0; 4];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(bad("not a fingerprint cache"));
    }
    let mut b4 = [0; 4];
    let mut b8 = [0; 8];
    r.read_exact(&mut b4)?;
    let nbits = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let radius = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8);
    let template = BitFingerprint::zeros(nbits, radius).map_err(|e| bad(&e.to_string()))?;
    let mut out = Vec::new();
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        let hash = u64::from_le_bytes(b8);
        let mut fp = template.clone();
        for word in fp.words.iter_mut() {
            r.read_exact(&mut b8)?;
            *word = u64::from_le_bytes(b8);
        }
        out.push((hash, fp));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    fn fp(s: &str) -> BitFingerprint {
        morgan_fingerprint(&parse_smiles(s).unwrap(), DEFAULT_RADIUS, DEFAULT_NBITS).unwrap()
    }

    #[test]
    fn methane_sets_one_bit() {
        assert_eq!(fp("C").popcount(), 1);
    }

    #[test]
    fn deterministic_and_order_free() {
        assert_eq!(fp("CC(=O)OCC"), fp("CC(=O)OCC"));
        assert_eq!(fp("CCO"), fp("OCC"));
        assert_eq!(fp("c1ccccc1O"), fp("Oc1ccccc1"));
        assert_ne!(fp("CCO"), fp("CCN"));
    }

    #[test]
    fn benzene_identifiers() {
        // one atom type at r=0, one at r=1 (3-atom arc), r=2 (5-atom arc),
        // r=3 covers the whole ring once
        let ids = identifiers(&parse_smiles("c1ccccc1").unwrap(), 4);
        assert_eq!(ids.len(), 4);
        let radii: Vec<usize> = {
            let mut v: Vec<usize> = ids.values().copied().collect();
            v.sort();
            v
        };
        assert_eq!(radii, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_bad_width() {
        let m = parse_smiles("C").unwrap();
        assert_eq!(morgan_fingerprint(&m, 2, 100), Err(FingerprintError::InvalidWidth(100)));
        assert!(morgan_fingerprint(&m, 2, 32).is_err());
    }

    #[test]
    fn concat_layout() {
        let a = fp("CCO");
        let b = fp("c1ccccc1");
        let zero = BitFingerprint::zeros(DEFAULT_NBITS, DEFAULT_RADIUS).unwrap();
        let az = concat_pair(&a, &zero).unwrap();
        assert_eq!(az.nbits(), 2 * DEFAULT_NBITS);
        assert!(az.ones().all(|bit| bit < DEFAULT_NBITS));
        let ab = concat_pair(&a, &b).unwrap();
        assert_eq!(ab.popcount(), a.popcount() + b.popcount());
        assert_ne!(ab, concat_pair(&b, &a).unwrap());
        let small = BitFingerprint::zeros(64, 1).unwrap();
        assert_eq!(concat_pair(&a, &small), Err(FingerprintError::WidthMismatch(2048, 64)));
    }

    #[test]
    fn cache_round_trip() {
        let records = vec![(smiles_hash("CCO"), fp("CCO")), (smiles_hash("CCS"), fp("CCS"))];
        let mut buf = Vec::new();
        write_cache(&mut buf, DEFAULT_NBITS, DEFAULT_RADIUS, &records).unwrap();
        assert_eq!(read_cache(buf.as_slice()).unwrap(), records);
        assert!(read_cache(&b"XXXX"[..]).is_err());
    }
}
